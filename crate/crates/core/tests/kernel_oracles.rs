//! Independent oracles for the fractional-kernel machinery: brute-force
//! graded-mesh quadratures cross-check the adaptive substitution
//! quadratures, and the two algebraic routes to the windowed H-norm are
//! compared against each other.

use std::f64::consts::PI;

use fch_core::kernel::{
    fbm_covariance, volterra_kernel, volterra_kernel_dt, white_noise_integrand,
    windowed_convolution_variance, windowed_source_mass, windowed_source_mass_profile,
    HurstParams, KernelTable,
};
use fch_core::quad::{integrate, integrate_power_singular, Grading};
use fch_core::spectral::basis_value;

/// Brute-force oracle for `int_s^t exp(-k^4 (t-r)) dK_H/dr (r, s) dr`: a
/// 4096-cell product rule on a mesh graded cubically toward both ends (the
/// kernel singularity at `r = s` and the exponential layer of high modes at
/// `r = t`). Each cell integrates the power factor `(r-s)^{a-1}` exactly
/// with the smooth factor frozen at the cell midpoint; the mesh lives in
/// the offset `d = r - s` so the singular factor never suffers subtraction
/// cancellation. Entirely independent of the production quadrature path.
fn brute_exp_rate(lam: f64, s: f64, t: f64, p: &HurstParams) -> f64 {
    let half = 2048usize;
    let len = t - s;
    let a = p.h() - 0.5;
    let mut mesh = Vec::with_capacity(2 * half + 1);
    for i in 0..=half {
        mesh.push(0.5 * len * (i as f64 / half as f64).powi(3));
    }
    for i in 1..=half {
        mesh.push(len - 0.5 * len * (1.0 - i as f64 / half as f64).powi(3));
    }
    let mut acc = 0.0;
    for w in mesh.windows(2) {
        let d = 0.5 * (w[0] + w[1]);
        let smooth = p.c1() * ((s + d) / s).powf(a) * (-lam * (len - d)).exp();
        acc += smooth * (w[1].powf(a) - w[0].powf(a)) / a;
    }
    acc
}

#[test]
fn whitened_integrand_matches_brute_force_tensor_mesh() {
    let p = HurstParams::new(0.75).unwrap();
    let (x, t, y, s) = (0.0, 1.0, 0.0, 0.5);
    let n_modes = 32;
    let mut brute = 0.0;
    for k in 0..n_modes {
        let lam = ((k * k) as f64).powi(2);
        brute += basis_value(k, x).unwrap() * basis_value(k, y).unwrap()
            * brute_exp_rate(lam, s, t, &p);
    }
    let fast = white_noise_integrand(x, t, 0.0, y, s, &p, n_modes, 1e-10).unwrap();
    assert!(
        (fast - brute).abs() <= 1e-6,
        "fast {fast:.9e} vs brute {brute:.9e}"
    );
    // 25-digit reference for the same point
    assert!((fast - 0.735_799_445_840_056_9).abs() < 1e-7);
}

#[test]
fn whitened_integrand_off_diagonal_points() {
    let p = HurstParams::new(0.6).unwrap();
    let (x, t, y, s) = (0.9, 0.8, 2.1, 0.3);
    let n_modes = 16;
    let mut brute = 0.0;
    for k in 0..n_modes {
        let lam = ((k * k) as f64).powi(2);
        brute += basis_value(k, x).unwrap() * basis_value(k, y).unwrap()
            * brute_exp_rate(lam, s, t, &p);
    }
    let fast = white_noise_integrand(x, t, 0.0, y, s, &p, n_modes, 1e-10).unwrap();
    assert!(
        (fast - brute).abs() <= 1e-6 * brute.abs().max(1.0),
        "fast {fast:.9e} vs brute {brute:.9e}"
    );
}

#[test]
fn hnorm_equals_whitened_mass_on_the_full_window() {
    // two representations of the same H-norm: the |r - r'|^{2H-2} double
    // integral with the semigroup identity, and the (y, s)-integral of the
    // squared whitened integrand
    for &(h, x, t) in &[(0.75, 0.0, 0.5), (0.6, 1.1, 0.8), (0.9, PI / 2.0, 1.0)] {
        let p = HurstParams::new(h).unwrap();
        let n_modes = 16;
        let hnorm = windowed_convolution_variance(x, t, 0.0, &p, n_modes, 1e-10).unwrap();
        let mass = windowed_source_mass(x, t, t, &p, n_modes, 1e-6).unwrap();
        assert!(
            (hnorm - mass).abs() / hnorm <= 1e-4,
            "H={h}: hnorm {hnorm:.10e} vs mass {mass:.10e}"
        );
    }
}

#[test]
fn windowed_mass_is_dominated_by_the_full_norm() {
    // for zeta > 0 the restriction to s >= zeta drops real mass
    let p = HurstParams::new(0.75).unwrap();
    let (x, t) = (0.7, 1.0);
    let full = windowed_convolution_variance(x, t, 0.0, &p, 16, 1e-10).unwrap();
    let mut prev = full;
    for &eps in &[0.9, 0.5, 0.2, 0.05] {
        let m = windowed_source_mass(x, t, eps, &p, 16, 1e-6).unwrap();
        assert!(m <= prev * (1.0 + 1e-9), "mass not monotone at eps={eps}");
        assert!(m > 0.0);
        prev = m;
    }
    assert!(prev < full);
}

#[test]
fn windowed_mass_profile_is_shared_across_points() {
    let p = HurstParams::new(0.75).unwrap();
    let xs = [0.0, PI / 4.0, PI / 2.0];
    let profile = windowed_source_mass_profile(&xs, 1.0, 0.25, &p, 16, 1e-6).unwrap();
    for (i, &x) in xs.iter().enumerate() {
        let single = windowed_source_mass(x, 1.0, 0.25, &p, 16, 1e-6).unwrap();
        assert!((profile[i] - single).abs() / single < 1e-9);
    }
}

#[test]
fn factorization_identity_by_adaptive_quadrature() {
    // int_0^1 K_H(2, tau) K_H(1, tau) dtau = R_H(2, 1) = sqrt(2); the
    // integrand blows up like tau^{1-2H} at zero and has a fractional kink
    // at tau = 1
    let p = HurstParams::new(0.75).unwrap();
    let ktol = 1e-10;
    let f = |tau: f64| {
        volterra_kernel(2.0, tau, &p, ktol).unwrap() * volterra_kernel(1.0, tau, &p, ktol).unwrap()
    };
    let alpha = 1.0 - 2.0 * p.h();
    let lower = integrate_power_singular(
        alpha,
        0.5,
        |v| f(v) * v.powf(-alpha),
        Grading::TowardLower(2),
        4,
        1e-8,
    )
    .unwrap();
    let upper = integrate(f, 0.5, 1.0, Grading::TowardUpper(3), 4, 1e-8).unwrap();
    let total = lower + upper;
    let target = fbm_covariance(2.0, 1.0, &p).unwrap();
    assert!(
        (total - target).abs() <= 1e-5,
        "factorization {total:.8} vs sqrt(2) = {target:.8}"
    );
}

#[test]
fn riemann_factorization_refines_with_order_at_least_half() {
    let p = HurstParams::new(0.75).unwrap();
    let residual_at = |n: usize| {
        let grid: Vec<f64> = (1..=n).map(|i| 2.0 * i as f64 / n as f64).collect();
        let table = KernelTable::build(grid, &p, 1e-9).unwrap();
        // rows at t = 2 and t = 1
        table
            .factorization_residual(n - 1, n / 2 - 1, &p)
            .unwrap()
    };
    let coarse = residual_at(64);
    let mid = residual_at(128);
    let fine = residual_at(256);
    let order1 = (coarse / mid).log2();
    let order2 = (mid / fine).log2();
    assert!(
        order1 >= 0.5 && order2 >= 0.5,
        "orders {order1:.3}, {order2:.3} (residuals {coarse:.3e}, {mid:.3e}, {fine:.3e})"
    );
}

#[test]
fn kernel_rate_is_the_table_rate() {
    let p = HurstParams::new(0.9).unwrap();
    let grid: Vec<f64> = (1..=16).map(|i| i as f64 / 16.0).collect();
    let table = KernelTable::build(grid, &p, 1e-9).unwrap();
    for i in [4usize, 9, 15] {
        for j in [0usize, 2] {
            if j < i {
                let direct =
                    volterra_kernel_dt(table.time_grid()[i], table.time_grid()[j], &p).unwrap();
                assert!((table.rate_at(i, j) - direct).abs() < 1e-14 * direct.abs());
            }
        }
    }
}
