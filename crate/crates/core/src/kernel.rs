//! Fractional machinery: the constants c1(H), c2(H), the Volterra kernel
//! `K_H` and its time derivative, the covariance `R_H`, the operator that
//! maps a fractional-noise integrand to its white-noise equivalent, and the
//! exact squared `H`-norm of windowed Green integrands by singular
//! quadrature.
//!
//! All singular integrals are reduced by the substitution `z = (r-s)^a`
//! (with `a = H - 1/2`), which absorbs the `(r-s)^{a-1}` factor exactly; the
//! exponential boundary layers of high modes are handled in the rescaled
//! variable `tau = k^4 (t - r)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quad::{self, Grading};
use crate::spectral::basis_value_unchecked;

/// e-folds after which an exponential tail is dropped.
const EFOLDS: f64 = 60.0;

// Lanczos coefficients, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

fn lanczos_gamma(z: f64) -> f64 {
    // valid for z >= 0.5
    let z = z - 1.0;
    let mut x = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        x += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * x
}

/// Gamma function for positive arguments.
pub fn gamma(z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("gamma needs z > 0, got {z}")));
    }
    if z < 0.5 {
        // reflection keeps the Lanczos sum well conditioned near 0
        Ok(PI / ((PI * z).sin() * lanczos_gamma(1.0 - z)))
    } else {
        Ok(lanczos_gamma(z))
    }
}

pub(crate) fn ln_gamma(z: f64) -> f64 {
    if z < 0.5 {
        PI.ln() - (PI * z).sin().ln() - ln_gamma(1.0 - z)
    } else {
        let z = z - 1.0;
        let mut x = LANCZOS[0];
        for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
            x += c / (z + i as f64);
        }
        let t = z + LANCZOS_G + 0.5;
        0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
    }
}

/// Beta function via log-gamma ratios.
pub fn beta(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Domain(format!("beta needs a, b > 0, got ({a}, {b})")));
    }
    Ok((ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp())
}

/// Hurst exponent together with the kernel constants c1(H), c2(H).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurstParams {
    h: f64,
    c1: f64,
    c2: f64,
}

impl HurstParams {
    /// Requires `1/2 < H < 1`.
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.5 && h < 1.0) {
            return Err(Error::Domain(format!(
                "Hurst exponent must lie in (1/2, 1), got {h}"
            )));
        }
        let c1 = (h * (2.0 * h - 1.0) / beta(2.0 - 2.0 * h, h - 0.5)?).sqrt();
        let c2 = (2.0 * h * gamma(1.5 - h)? / (gamma(h + 0.5)? * gamma(2.0 - 2.0 * h)?)).sqrt();
        if !(c1.is_finite() && c1 > 0.0 && c2.is_finite() && c2 > 0.0) {
            return Err(Error::Domain(format!("kernel constants degenerate at H = {h}")));
        }
        Ok(Self { h, c1, c2 })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// The recurring exponent `a = H - 1/2`.
    pub fn a(&self) -> f64 {
        self.h - 0.5
    }
}

/// fBm covariance `R_H(t, s) = (t^{2H} + s^{2H} - |t-s|^{2H}) / 2`.
pub fn fbm_covariance(t: f64, s: f64, p: &HurstParams) -> Result<f64> {
    if t < 0.0 || s < 0.0 {
        return Err(Error::Domain(format!(
            "covariance needs t, s >= 0, got ({t}, {s})"
        )));
    }
    let two_h = 2.0 * p.h;
    Ok(0.5 * (t.powf(two_h) + s.powf(two_h) - (t - s).abs().powf(two_h)))
}

/// `dK_H/dt (t, s) = c1(H) (t/s)^{H-1/2} (t-s)^{H-3/2}` in closed form.
pub fn volterra_kernel_dt(t: f64, s: f64, p: &HurstParams) -> Result<f64> {
    if !(s > 0.0 && s < t) {
        return Err(Error::Domain(format!(
            "kernel rate needs 0 < s < t, got (t, s) = ({t}, {s})"
        )));
    }
    Ok(p.c1 * (t / s).powf(p.a()) * (t - s).powf(p.h - 1.5))
}

fn check_kernel_args(t: f64, s: f64, t_max_label: &str) -> Result<()> {
    if !(s > 0.0 && s < t) {
        return Err(Error::Domain(format!(
            "kernel needs 0 < s < {t_max_label}, got (t, s) = ({t}, {s})"
        )));
    }
    Ok(())
}

/// `int_{r_lo}^{r_hi} exp(-lam (t_ref - r)) dK_H/dr (r, s) dr` with
/// `0 < s <= r_lo < r_hi <= t_ref`. The `r = s` endpoint singularity (when
/// `r_lo == s`) is removed by the substitution `z = (r-s)^a`; the
/// exponential layer near `t_ref` is integrated in `tau = lam (t_ref - r)`.
pub(crate) fn exp_rate_integral(
    lam: f64,
    s: f64,
    r_lo: f64,
    r_hi: f64,
    t_ref: f64,
    p: &HurstParams,
    tol: f64,
) -> Result<f64> {
    debug_assert!(s > 0.0 && r_lo >= s && r_hi <= t_ref + 1e-15);
    if r_hi <= r_lo {
        return Ok(0.0);
    }
    if lam > 0.0 && lam * (t_ref - r_hi) > EFOLDS {
        // the whole range sits 60 e-folds below the exponential's scale
        return Ok(0.0);
    }
    let a = p.a();
    let c1 = p.c1;
    let singular = r_lo <= s;

    let mut total = 0.0;
    let mut smooth_lo = r_lo;
    if singular {
        let m = if lam > 0.0 {
            r_hi.min(s + EFOLDS / lam)
        } else {
            r_hi
        };
        // skip the singular piece when it is exponentially negligible
        // relative to the mass near r_hi
        if lam * (r_hi - m) <= EFOLDS {
            let upper = (m - s).powf(a);
            let inv_a = 1.0 / a;
            let val = quad::integrate(
                |z: f64| {
                    let d = z.powf(inv_a); // r - s
                    (-lam * (t_ref - s - d)).exp() * (1.0 + d / s).powf(a)
                },
                0.0,
                upper,
                Grading::BothEnds(3),
                8,
                tol,
            )?;
            total += c1 * inv_a * val;
        }
        smooth_lo = m;
    }
    if smooth_lo < r_hi {
        total += exp_rate_smooth_piece(lam, s, smooth_lo, r_hi, t_ref, p, tol)?;
    }
    Ok(total)
}

/// Same integrand as [`exp_rate_integral`] on a range strictly above `s`.
fn exp_rate_smooth_piece(
    lam: f64,
    s: f64,
    lo: f64,
    hi: f64,
    t_ref: f64,
    p: &HurstParams,
    tol: f64,
) -> Result<f64> {
    let a = p.a();
    let c1 = p.c1;
    let rate = |r: f64| c1 * (r / s).powf(a) * (r - s).powf(a - 1.0);
    // lo may sit just above s, leaving a steep algebraic profile at the
    // lower end; high modes add an exponential layer at the upper end
    if lam <= 0.0 || lam * (hi - lo) <= 3.0 {
        quad::integrate(
            |r: f64| (-lam * (t_ref - r)).exp() * rate(r),
            lo,
            hi,
            Grading::BothEnds(2),
            4,
            tol,
        )
    } else {
        let tau_lo = lam * (t_ref - hi);
        let tau_hi = (lam * (t_ref - lo)).min(tau_lo + EFOLDS);
        let val = quad::integrate(
            |tau: f64| (-tau).exp() * rate(t_ref - tau / lam),
            tau_lo,
            tau_hi,
            Grading::BothEnds(2),
            8,
            tol,
        )?;
        Ok(val / lam)
    }
}

/// `K_H(t, s)` by adaptive quadrature of the defining (c1-form) integral.
pub(crate) fn volterra_kernel_c1(t: f64, s: f64, p: &HurstParams, tol: f64) -> Result<f64> {
    check_kernel_args(t, s, "t")?;
    exp_rate_integral(0.0, s, s, t, t, p, tol)
}

/// `K_H(t, s)` by the equivalent c2-form.
pub(crate) fn volterra_kernel_c2(t: f64, s: f64, p: &HurstParams, tol: f64) -> Result<f64> {
    check_kernel_args(t, s, "t")?;
    let a = p.a();
    let inv_a = 1.0 / a;
    // a * int (u-s)^{a-1} ((u/s)^a - 1) du  ->  int ((1 + z^{1/a}/s)^a - 1) dz
    let tail = quad::integrate(
        |z: f64| (1.0 + z.powf(inv_a) / s).powf(a) - 1.0,
        0.0,
        (t - s).powf(a),
        Grading::BothEnds(2),
        8,
        tol,
    )?;
    Ok(p.c2 * ((t - s).powf(a) + tail))
}

/// `K_H(t, s)`, cross-checked: the two printed forms of the kernel must
/// agree within `10 * tol`, otherwise a numeric error carries the residual.
pub fn volterra_kernel(t: f64, s: f64, p: &HurstParams, tol: f64) -> Result<f64> {
    let v1 = volterra_kernel_c1(t, s, p, tol)?;
    let v2 = volterra_kernel_c2(t, s, p, tol)?;
    let scale = v1.abs().max(v2.abs()).max(1e-300);
    let residual = (v1 - v2).abs() / scale;
    if residual > 10.0 * tol {
        return Err(Error::Quadrature {
            residual,
            tol: 10.0 * tol,
        });
    }
    Ok(v1)
}

/// Whitened windowed Green integrand
/// `[K*_H (G(x, ., t - .) 1_[zeta, t])](y, s)`, as the per-mode sum
/// `sum_k a_k(x) a_k(y) int_s^t exp(-k^4 (t-r)) dK_H/dr (r, s) dr`.
///
/// Returns 0 for `s >= t` (the integrand vanishes there); `s < zeta` is a
/// domain error.
pub fn white_noise_integrand(
    x: f64,
    t: f64,
    zeta: f64,
    y: f64,
    s: f64,
    p: &HurstParams,
    n_modes: usize,
    tol: f64,
) -> Result<f64> {
    if s < zeta {
        return Err(Error::Domain(format!(
            "source time s = {s} below window start {zeta}"
        )));
    }
    if s >= t {
        return Ok(0.0);
    }
    check_kernel_args(t, s, "t")?;
    let mut acc = 0.0;
    for k in 0..n_modes {
        let lam = ((k * k) as f64).powi(2);
        let ik = exp_rate_integral(lam, s, s, t, t, p, tol)?;
        acc += basis_value_unchecked(k, x) * basis_value_unchecked(k, y) * ik;
    }
    Ok(acc)
}

/// Variance contributed by mode `k` to the stochastic convolution over a
/// window of length `delta`:
/// `H(2H-1) int int_[0,delta]^2 |r - r'|^{2H-2} exp(-k^4 (r + r')) dr dr'`
/// reduced to a single singular integral (exactly `delta^{2H}` for k = 0).
pub fn mode_window_variance(k: usize, delta: f64, p: &HurstParams, tol: f64) -> Result<f64> {
    if delta < 0.0 {
        return Err(Error::Domain(format!("window length {delta} < 0")));
    }
    if delta == 0.0 {
        return Ok(0.0);
    }
    let two_h = 2.0 * p.h;
    if k == 0 {
        return Ok(delta.powf(two_h));
    }
    let lam = ((k * k) as f64).powi(2);
    let val = quad::integrate_power_singular(
        two_h - 2.0,
        delta,
        |v| (-lam * v).exp() - (-lam * (2.0 * delta - v)).exp(),
        Grading::TowardLower(3),
        8,
        tol,
    )?;
    Ok(p.h * (two_h - 1.0) * val / lam)
}

/// Squared `H`-norm of the windowed Green integrand,
/// `|| G(x, ., t - .) 1_[zeta, t] ||^2_H = sum_k a_k(x)^2 J_k(t - zeta)`.
/// This equals the variance of the stochastic convolution over the window.
pub fn windowed_convolution_variance(
    x: f64,
    t: f64,
    zeta: f64,
    p: &HurstParams,
    n_modes: usize,
    tol: f64,
) -> Result<f64> {
    if !(zeta >= 0.0 && zeta < t) {
        return Err(Error::Domain(format!(
            "window needs 0 <= zeta < t, got ({zeta}, {t})"
        )));
    }
    let delta = t - zeta;
    let mut acc = 0.0;
    for k in 0..n_modes {
        let b = basis_value_unchecked(k, x);
        acc += b * b * mode_window_variance(k, delta, p, tol)?;
    }
    Ok(acc)
}

/// Closed-form lower-bound factor for the windowed source mass,
/// `Lambda(H, t, eps)`: prefactor `(t-eps)^{2H-1} / eps^{3-2H}` times the
/// bracketed three-term expression. Vanishes at `eps = t`.
pub fn window_mass_lower_bound(h: f64, t: f64, eps: f64) -> Result<f64> {
    HurstParams::new(h)?;
    if !(eps > 0.0 && eps <= t) {
        return Err(Error::Domain(format!(
            "window needs 0 < eps <= t, got ({eps}, {t})"
        )));
    }
    let c2 = 2.0 - 2.0 * h;
    let c3 = 3.0 - 2.0 * h;
    let c4 = 4.0 - 2.0 * h;
    let g = t - eps;
    let bracket = (t.powf(c4) - g.powf(c4)) / (c4 * c3) - g.powf(c2) * (t * t - g * g) / 2.0
        + c2 * g.powf(c3) * eps / c3;
    Ok(g.powf(2.0 * h - 1.0) / eps.powf(c3) * bracket)
}

/// Sigma-free windowed source mass
/// `int_{t-eps}^t int_D |[K*_H (G(x, ., t - .) 1_[0,t])](y, s)|^2 dy ds`
/// evaluated for every `x` in `xs`, sharing the per-mode time integrals.
/// Multiply by `sigma^2` for the physical quantity.
pub fn windowed_source_mass_profile(
    xs: &[f64],
    t: f64,
    eps: f64,
    p: &HurstParams,
    n_modes: usize,
    tol: f64,
) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps <= t) {
        return Err(Error::Domain(format!(
            "window needs 0 < eps <= t, got ({eps}, {t})"
        )));
    }
    let weights: Vec<Vec<f64>> = xs
        .iter()
        .map(|&x| {
            (0..n_modes)
                .map(|k| {
                    let b = basis_value_unchecked(k, x);
                    b * b
                })
                .collect()
        })
        .collect();

    // density of the s-integral for all xs at once
    let dens = |s: f64| -> Result<Vec<f64>> {
        let mut per_x = vec![0.0; xs.len()];
        for k in 0..n_modes {
            let lam = ((k * k) as f64).powi(2);
            let ik = exp_rate_integral(lam, s, s, t, t, p, tol)?;
            let ik2 = ik * ik;
            for (acc, w) in per_x.iter_mut().zip(weights.iter()) {
                *acc += w[k] * ik2;
            }
        }
        Ok(per_x)
    };

    let lo = t - eps;
    if lo > 1e-12 * t {
        integrate_profile(dens, lo, t, Grading::TowardUpper(3), xs.len(), tol.max(1e-6))
    } else {
        // full window: the integrand blows up like s^{1-2H} at s = 0;
        // absorb the power on the lower half, grade toward t on the upper
        let alpha = 1.0 - 2.0 * p.h;
        let beta_ = 1.0 + alpha;
        let lower = integrate_profile(
            |w: f64| {
                let s = w.powf(1.0 / beta_);
                let scaled = dens(s)?;
                Ok(scaled.iter().map(|v| v * s.powf(-alpha) / beta_).collect())
            },
            0.0,
            (0.5 * t).powf(beta_),
            Grading::TowardLower(2),
            xs.len(),
            tol.max(1e-6),
        )?;
        let upper = integrate_profile(
            dens,
            0.5 * t,
            t,
            Grading::TowardUpper(3),
            xs.len(),
            tol.max(1e-6),
        )?;
        Ok(lower.iter().zip(upper.iter()).map(|(a, b)| a + b).collect())
    }
}

/// Single-point variant of [`windowed_source_mass_profile`].
pub fn windowed_source_mass(
    x: f64,
    t: f64,
    eps: f64,
    p: &HurstParams,
    n_modes: usize,
    tol: f64,
) -> Result<f64> {
    Ok(windowed_source_mass_profile(&[x], t, eps, p, n_modes, tol)?[0])
}

// Vector-valued adaptive composite Gauss-Legendre: doubles the mesh until
// every component's relative change is within tol.
pub(crate) fn integrate_profile<F>(
    mut f: F,
    a: f64,
    b: f64,
    grading: Grading,
    dim: usize,
    tol: f64,
) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    const GL_X: [f64; 4] = [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ];
    const GL_W: [f64; 4] = [
        0.347_854_845_137_453_9,
        0.652_145_154_862_546_1,
        0.652_145_154_862_546_1,
        0.347_854_845_137_453_9,
    ];
    let mesh = |n: usize| -> Vec<f64> {
        (0..=n)
            .map(|i| {
                let u = i as f64 / n as f64;
                match grading {
                    Grading::Uniform => a + (b - a) * u,
                    Grading::TowardLower(q) => a + (b - a) * u.powi(q as i32),
                    Grading::TowardUpper(q) => b - (b - a) * (1.0 - u).powi(q as i32),
                    Grading::BothEnds(_) => unreachable!("not used here"),
                }
            })
            .collect()
    };
    let eval = |f: &mut F, pts: &[f64]| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; dim];
        for w in pts.windows(2) {
            let c = 0.5 * (w[0] + w[1]);
            let h = 0.5 * (w[1] - w[0]);
            for (&x, &wt) in GL_X.iter().zip(GL_W.iter()) {
                let vals = f(c + h * x)?;
                for (a_i, v) in acc.iter_mut().zip(vals.iter()) {
                    *a_i += wt * h * v;
                }
            }
        }
        Ok(acc)
    };
    let mut n = 8;
    let mut prev = eval(&mut f, &mesh(n))?;
    loop {
        n *= 2;
        let cur = eval(&mut f, &mesh(n))?;
        let residual = prev
            .iter()
            .zip(cur.iter())
            .map(|(p, c)| (p - c).abs() / c.abs().max(1e-300))
            .fold(0.0f64, f64::max);
        if residual <= tol {
            return Ok(cur);
        }
        if n >= quad::MAX_PANELS {
            return Err(Error::Quadrature { residual, tol });
        }
        prev = cur;
    }
}

/// Precomputed `K_H(t_i, s_j)` and `dK_H/dt (t_i, s_j)` on a time grid.
/// Strictly lower triangular: entries with `s_j >= t_i` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    time_grid: Vec<f64>,
    k_values: Vec<f64>,
    dk_values: Vec<f64>,
    quad_tol: f64,
}

impl KernelTable {
    /// Build on an increasing grid of strictly positive times. Kernel values
    /// accumulate column-wise from the rate integral, so each column costs a
    /// single pass regardless of the number of rows.
    pub fn build(time_grid: Vec<f64>, p: &HurstParams, quad_tol: f64) -> Result<Self> {
        if time_grid.is_empty() || time_grid[0] <= 0.0 {
            return Err(Error::Domain(
                "kernel table grid must start above 0 (K_H diverges at s = 0)".into(),
            ));
        }
        if time_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("kernel table grid must be increasing".into()));
        }
        let n = time_grid.len();
        let mut k_values = vec![0.0; n * n];
        let mut dk_values = vec![0.0; n * n];
        for j in 0..n {
            let s = time_grid[j];
            let mut acc = 0.0;
            let mut prev = s;
            for i in (j + 1)..n {
                let t = time_grid[i];
                acc += exp_rate_integral(0.0, s, prev, t, t, p, quad_tol)?;
                prev = t;
                k_values[i * n + j] = acc;
                dk_values[i * n + j] = volterra_kernel_dt(t, s, p)?;
            }
        }
        Ok(Self {
            time_grid,
            k_values,
            dk_values,
            quad_tol,
        })
    }

    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    pub fn kernel_at(&self, i: usize, j: usize) -> f64 {
        self.k_values[i * self.time_grid.len() + j]
    }

    pub fn rate_at(&self, i: usize, j: usize) -> f64 {
        self.dk_values[i * self.time_grid.len() + j]
    }

    /// Riemann factorization residual
    /// `| sum_j K(t_i, s_j) K(t_l, s_j) ds_j  -  R_H(t_i, t_l) |`.
    pub fn factorization_residual(&self, i: usize, l: usize, p: &HurstParams) -> Result<f64> {
        let n = self.time_grid.len();
        let mut acc = 0.0;
        for j in 0..i.min(l) {
            let ds = if j == 0 {
                self.time_grid[0]
            } else {
                self.time_grid[j] - self.time_grid[j - 1]
            };
            acc += self.kernel_at(i, j) * self.kernel_at(l, j) * ds;
        }
        let _ = n;
        let r = fbm_covariance(self.time_grid[i], self.time_grid[l], p)?;
        Ok((acc - r).abs())
    }

    /// CSV export with header `t,s,K,dKdt`; one row per strict lower-triangle
    /// entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,s,K,dKdt\n");
        let n = self.time_grid.len();
        for i in 0..n {
            for j in 0..i {
                out.push_str(&format!(
                    "{:.16e},{:.16e},{:.16e},{:.16e}\n",
                    self.time_grid[i],
                    self.time_grid[j],
                    self.kernel_at(i, j),
                    self.rate_at(i, j)
                ));
            }
        }
        out
    }

    /// Parse the CSV produced by [`KernelTable::to_csv`].
    pub fn from_csv(text: &str, quad_tol: f64) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "t,s,K,dKdt" => {}
            other => {
                return Err(Error::Domain(format!(
                    "kernel table csv: bad header {other:?}"
                )))
            }
        }
        let mut rows: Vec<(f64, f64, f64, f64)> = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 4 {
                return Err(Error::Domain(format!(
                    "kernel table csv: row {} has {} fields",
                    ln + 2,
                    cells.len()
                )));
            }
            let mut vals = [0.0; 4];
            for (v, c) in vals.iter_mut().zip(cells.iter()) {
                *v = c
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Domain(format!("kernel table csv row {}: {e}", ln + 2)))?;
            }
            rows.push((vals[0], vals[1], vals[2], vals[3]));
        }
        let mut grid: Vec<f64> = Vec::new();
        for &(t, s, _, _) in &rows {
            for v in [s, t] {
                match grid.binary_search_by(|g| g.partial_cmp(&v).unwrap()) {
                    Ok(_) => {}
                    Err(pos) => grid.insert(pos, v),
                }
            }
        }
        let n = grid.len();
        let idx = |v: f64| -> usize {
            grid.binary_search_by(|g| g.partial_cmp(&v).unwrap())
                .expect("grid value")
        };
        let mut k_values = vec![0.0; n * n];
        let mut dk_values = vec![0.0; n * n];
        for (t, s, k, dk) in rows {
            let (i, j) = (idx(t), idx(s));
            k_values[i * n + j] = k;
            dk_values[i * n + j] = dk;
        }
        Ok(Self {
            time_grid: grid,
            k_values,
            dk_values,
            quad_tol,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-10;

    fn p75() -> HurstParams {
        HurstParams::new(0.75).unwrap()
    }

    #[test]
    fn gamma_reference_values() {
        assert!((gamma(1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((gamma(0.5).unwrap() - PI.sqrt()).abs() < 1e-14);
        // high-precision references
        assert!((gamma(0.25).unwrap() - 3.625_609_908_221_908_3).abs() / 3.625 < 1e-12);
        assert!((gamma(7.3).unwrap() - 1_271.423_633_663_909_3).abs() / 1271.4 < 1e-12);
        assert!(gamma(0.0).is_err());
        assert!(gamma(-1.5).is_err());
    }

    #[test]
    fn kernel_constants_reference_values() {
        // frozen from a 25-digit evaluation of the defining expressions
        let cases = [
            (0.6, 0.107_600_518_413_180_72, 1.076_005_184_131_807_2),
            (0.75, 0.267_411_158_757_997_58, 1.069_644_635_031_990_3),
            (0.9, 0.324_488_259_257_341_01, 0.811_220_648_143_352_51),
        ];
        for (h, c1, c2) in cases {
            let p = HurstParams::new(h).unwrap();
            assert!((p.c1() - c1).abs() < 1e-13, "c1({h})");
            assert!((p.c2() - c2).abs() < 1e-13, "c2({h})");
            // the two printed kernel forms force c1 = (H - 1/2) c2
            assert!((p.c1() - p.a() * p.c2()).abs() < 1e-13);
        }
    }

    #[test]
    fn constants_positive_and_boundary_limit() {
        let mut h = 0.51;
        while h < 1.0 {
            let p = HurstParams::new(h).unwrap();
            assert!(p.c1() > 0.0 && p.c1().is_finite());
            assert!(p.c2() > 0.0 && p.c2().is_finite());
            h += 0.02;
        }
        // c2 -> 1 as H -> 1/2
        let p = HurstParams::new(0.501).unwrap();
        assert!((p.c2() - 1.0).abs() <= 1e-3);
        assert!(HurstParams::new(0.5).is_err());
        assert!(HurstParams::new(1.0).is_err());
        assert!(HurstParams::new(0.3).is_err());
    }

    #[test]
    fn covariance_reference_values() {
        let p = p75();
        assert!((fbm_covariance(0.7, 0.7, &p).unwrap() - 0.7f64.powf(1.5)).abs() < 1e-15);
        assert_eq!(fbm_covariance(3.0, 0.0, &p).unwrap(), 0.0);
        assert!((fbm_covariance(2.0, 1.0, &p).unwrap() - 2.0f64.sqrt()).abs() < 1e-14);
        assert!(fbm_covariance(-1.0, 1.0, &p).is_err());
    }

    #[test]
    fn kernel_rate_reference_and_blowup() {
        let p = p75();
        // c1(0.75) * 2^{1/4}
        let expect = 0.318_007_252_626_132_93;
        assert!((volterra_kernel_dt(2.0, 1.0, &p).unwrap() - expect).abs() < 1e-13);
        // log-log slope of delta -> rate(1 + delta, 1) is H - 3/2
        let d1 = 1e-3;
        let d2 = 1e-6;
        let r1 = volterra_kernel_dt(1.0 + d1, 1.0, &p).unwrap();
        let r2 = volterra_kernel_dt(1.0 + d2, 1.0, &p).unwrap();
        let slope = (r1 / r2).ln() / (d1 / d2).ln();
        assert!((slope - (0.75 - 1.5)).abs() < 0.01);
        assert!(volterra_kernel_dt(1.0, 1.0, &p).is_err());
        assert!(volterra_kernel_dt(1.0, 2.0, &p).is_err());
    }

    #[test]
    fn kernel_two_forms_agree_and_match_reference() {
        let p = p75();
        let v = volterra_kernel(1.0, 0.5, &p, 1e-10).unwrap();
        let v2 = volterra_kernel_c2(1.0, 0.5, &p, 1e-10).unwrap();
        assert!((v - v2).abs() < 1e-8);
        // frozen 25-digit quadrature references
        assert!((v - 0.937_591_963_698_057_23).abs() < 1e-9);
        let w = volterra_kernel(2.0, 1.0, &p, 1e-10).unwrap();
        assert!((w - 1.114_991_034_199_102_6).abs() < 1e-9);
        // other Hurst values
        for h in [0.6, 0.9] {
            let p = HurstParams::new(h).unwrap();
            let a = volterra_kernel_c1(1.0, 0.3, &p, 1e-10).unwrap();
            let b = volterra_kernel_c2(1.0, 0.3, &p, 1e-10).unwrap();
            assert!((a - b).abs() / a.abs() < 1e-8, "H = {h}");
        }
    }

    #[test]
    fn kernel_vanishes_toward_the_diagonal() {
        let p = p75();
        let mut prev = f64::INFINITY;
        for &d in &[1e-1, 1e-2, 1e-3, 1e-4] {
            let v = volterra_kernel_c1(1.0, 1.0 - d, &p, TOL).unwrap();
            assert!(v > 0.0 && v < prev);
            prev = v;
        }
        assert!(prev < 2e-1);
        assert!(volterra_kernel(1.0, 1.0, &p, TOL).is_err());
        assert!(volterra_kernel(1.0, -0.5, &p, TOL).is_err());
    }

    #[test]
    fn kernel_rate_consistent_with_kernel_difference() {
        // central finite difference of K in t vs the closed-form rate
        let p = p75();
        let h = 1e-5;
        let fd = (volterra_kernel_c1(2.0 + h, 1.0, &p, 1e-12).unwrap()
            - volterra_kernel_c1(2.0 - h, 1.0, &p, 1e-12).unwrap())
            / (2.0 * h);
        let exact = volterra_kernel_dt(2.0, 1.0, &p).unwrap();
        assert!((fd - exact).abs() / exact < 1e-4);
    }

    #[test]
    fn whitened_integrand_structure() {
        let p = p75();
        // one mode only: (1/pi) K_H(t, s)
        let v = white_noise_integrand(0.3, 1.0, 0.0, 2.0, 0.5, &p, 1, TOL).unwrap();
        let k = volterra_kernel_c1(1.0, 0.5, &p, TOL).unwrap();
        assert!((v - k / PI).abs() < 1e-9);
        // s -> t: vanishes
        let near = white_noise_integrand(0.3, 1.0, 0.0, 2.0, 1.0 - 1e-6, &p, 8, TOL).unwrap();
        assert!(near.abs() < 1e-2);
        // s >= t: exactly zero; s < zeta: domain error
        assert_eq!(
            white_noise_integrand(0.3, 1.0, 0.0, 2.0, 1.0, &p, 8, TOL).unwrap(),
            0.0
        );
        assert!(white_noise_integrand(0.3, 1.0, 0.4, 2.0, 0.2, &p, 8, TOL).is_err());
        // frozen full-mode reference at (x=0, t=1, zeta=0, y=0, s=0.5), K=32
        let full = white_noise_integrand(0.0, 1.0, 0.0, 0.0, 0.5, &p, 32, TOL).unwrap();
        assert!((full - 0.735_799_445_840_056_9).abs() < 1e-7);
    }

    #[test]
    fn mode_variance_reference_values() {
        let p = p75();
        assert!((mode_window_variance(0, 0.5, &p, TOL).unwrap() - 0.5f64.powf(1.5)).abs() < 1e-14);
        let refs = [
            (1, 0.5, 0.220_630_062_216_511_78),
            (2, 0.5, 0.010_384_062_298_839_539),
            (1, 1.0, 0.411_656_808_377_664_41),
        ];
        for (k, d, expect) in refs {
            let v = mode_window_variance(k, d, &p, TOL).unwrap();
            assert!((v - expect).abs() / expect < 1e-8, "J_{k}({d})");
        }
        // high modes approach the closed-form asymptote
        // H(2H-1) Gamma(2H-1) / k^{8H} once k^4 delta >> 1
        let hi = mode_window_variance(64, 0.5, &p, TOL).unwrap();
        let asymptote = 0.375 * PI.sqrt() / 64f64.powi(6);
        assert!((hi - asymptote).abs() / asymptote < 1e-6, "J_64 = {hi:.6e}");
    }

    #[test]
    fn window_variance_single_mode_and_monotonicity() {
        let p = p75();
        // k = 0 only: (1/pi) (t - zeta)^{2H}
        let v = windowed_convolution_variance(1.2, 0.9, 0.4, &p, 1, TOL).unwrap();
        assert!((v - 0.5f64.powf(1.5) / PI).abs() < 1e-14);
        // monotone in the window
        let a = windowed_convolution_variance(0.7, 1.0, 0.0, &p, 16, TOL).unwrap();
        let b = windowed_convolution_variance(0.7, 1.0, 0.3, &p, 16, TOL).unwrap();
        let c = windowed_convolution_variance(0.7, 1.0, 0.8, &p, 16, TOL).unwrap();
        assert!(a > b && b > c && c > 0.0);
        // frozen reference: x = 0, t = 0.5, 64 modes
        let f = windowed_convolution_variance(0.0, 0.5, 0.0, &p, 64, TOL).unwrap();
        assert!((f - 0.260_334_683_306_990_77).abs() < 1e-8);
    }

    #[test]
    fn lower_bound_factor_reference_values() {
        let refs = [
            (0.75, 1.0, 0.5, 0.026_573_473_482_974_274),
            (0.6, 1.0, 0.5, 0.055_653_443_056_556_326),
            (0.9, 1.0, 0.25, 0.002_584_797_614_571_376_3),
        ];
        for (h, t, e, expect) in refs {
            let v = window_mass_lower_bound(h, t, e).unwrap();
            assert!((v - expect).abs() < 1e-12, "Lambda({h},{t},{e})");
        }
        assert!(window_mass_lower_bound(0.75, 1.0, 0.0).is_err());
        assert!(window_mass_lower_bound(0.75, 1.0, 1.5).is_err());
    }

    #[test]
    fn lower_bound_factor_positive_inside_window() {
        // grid scan: strictly positive for eps/t in (0, 1); zero at eps = t
        for h in [0.6, 0.75, 0.9] {
            for j in 1..100 {
                let eps = j as f64 / 100.0;
                assert!(
                    window_mass_lower_bound(h, 1.0, eps).unwrap() > 0.0,
                    "Lambda({h}, 1, {eps})"
                );
            }
            assert_eq!(window_mass_lower_bound(h, 1.0, 1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn lower_bound_ratio_decays_like_quarter_power() {
        // eps^{2H + 1/4} / Lambda ~ eps^{1/4} as eps -> 0
        let h = 0.75;
        let ratio = |e: f64| e.powf(2.0 * h + 0.25) / window_mass_lower_bound(h, 1.0, e).unwrap();
        let slope = (ratio(1e-2) / ratio(1e-5)).ln() / (1e-2f64 / 1e-5).ln();
        assert!((slope - 0.25).abs() < 0.02, "slope {slope}");
    }

    #[test]
    fn kernel_table_shape_and_roundtrip() {
        let p = p75();
        let grid: Vec<f64> = (1..=8).map(|i| i as f64 / 8.0).collect();
        let table = KernelTable::build(grid, &p, 1e-9).unwrap();
        let n = table.time_grid().len();
        for i in 0..n {
            for j in i..n {
                assert_eq!(table.kernel_at(i, j), 0.0);
                assert_eq!(table.rate_at(i, j), 0.0);
            }
        }
        // entries match the one-shot kernel
        let direct = volterra_kernel_c1(table.time_grid()[5], table.time_grid()[2], &p, 1e-11)
            .unwrap();
        assert!((table.kernel_at(5, 2) - direct).abs() < 1e-8);
        let csv = table.to_csv();
        let back = KernelTable::from_csv(&csv, 1e-9).unwrap();
        assert_eq!(back.time_grid().len(), n);
        for i in 0..n {
            for j in 0..n {
                assert!((back.kernel_at(i, j) - table.kernel_at(i, j)).abs() < 1e-15);
            }
        }
        assert!(KernelTable::build(vec![0.0, 0.5], &p, 1e-9).is_err());
        assert!(KernelTable::from_csv("nope\n", 1e-9).is_err());
    }
}
