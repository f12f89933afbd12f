//! Mild-equation solvers: an exponential time stepper for the cutoff (or
//! raw) equation and the Picard iteration on the full space-time grid, plus
//! sup-norm tracking for membership in the localization event.
//!
//! Per mode the drift reads `du_k = (-k^4 u_k - k^2 [f_n(u)]_k) dt` with the
//! nonlinearity evaluated pseudo-spectrally on the collocation grid; the
//! stochastic convolution increment uses the midpoint-exponent rule shared
//! with the sampler, so every solver consumes identical discrete noise.

use crate::config::{ModelConfig, SolverKind};
use crate::error::{Error, Result};
use crate::noise::NoiseBundle;
use crate::spectral::{CosineTransform, SpectralField};

/// C1 cutoff ramp: 1 on `[0, n]`, 0 on `[n+1, inf)`, the cubic
/// `1 - 3 rho^2 + 2 rho^3` between. Returns `(value, derivative)`; the
/// derivative magnitude never exceeds 3/2.
pub fn cutoff_ramp(n: u32, r: f64) -> (f64, f64) {
    debug_assert!(r >= 0.0);
    let n = n as f64;
    if r <= n {
        (1.0, 0.0)
    } else if r >= n + 1.0 {
        (0.0, 0.0)
    } else {
        let rho = r - n;
        (
            1.0 - rho * rho * (3.0 - 2.0 * rho),
            -6.0 * rho * (1.0 - rho),
        )
    }
}

fn cubic(coeffs: &[f64; 4], u: f64) -> (f64, f64) {
    let [c3, c2, c1, c0] = *coeffs;
    let f = ((c3 * u + c2) * u + c1) * u + c0;
    let df = (3.0 * c3 * u + 2.0 * c2) * u + c1;
    (f, df)
}

/// Cutoff nonlinearity `f_n(u) = H_n(|u|) f(u)` and its exact derivative;
/// with `cutoff_n = None` this is the raw cubic.
pub fn nonlinearity(cfg: &ModelConfig, u: f64) -> (f64, f64) {
    let (f, df) = cubic(&cfg.f_coeffs, u);
    match cfg.cutoff_n {
        None => (f, df),
        Some(n) => {
            let (h, dh) = cutoff_ramp(n, u.abs());
            (h * f, h * df + dh * u.signum() * f)
        }
    }
}

/// `(e^z - 1)/z`, stable near zero.
pub(crate) fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0))
    } else {
        z.exp_m1() / z
    }
}

/// `(e^z - 1 - z)/z^2`, stable near zero.
pub(crate) fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z / 120.0))
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

/// A solved path with sup-norm statistics and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub states: Vec<SpectralField>,
    pub times: Vec<f64>,
    /// Sup over the collocation grid and the time grid of `|u|`.
    pub sup_norm: f64,
    /// `sup_norm < n` for the configured cutoff, when one is set.
    pub omega_flag: Option<bool>,
    pub cutoff_n: Option<u32>,
    pub seed: u64,
    pub index: u64,
    pub method: SolverKind,
    pub n_steps: usize,
    /// Picard sup-distances `d_k`, when solved by iteration.
    pub picard_distances: Option<Vec<f64>>,
}

impl TrajectoryRecord {
    /// Discrete-grid membership in the localization event at level `n`.
    pub fn in_omega(&self, n: u32) -> bool {
        self.sup_norm < n as f64
    }

    pub fn value_at(&self, x: f64, t_idx: usize) -> f64 {
        self.states[t_idx].eval(x)
    }
}

/// One exponential-integrator step from grid index `step` to `step + 1`.
pub fn advance_step(
    state: &SpectralField,
    bundle: &NoiseBundle,
    step: usize,
    cfg: &ModelConfig,
    tf: &CosineTransform,
) -> Result<SpectralField> {
    let grid = tf.synthesize(state);
    let next = advance_from_values(state, &grid, bundle, step, cfg, tf)?;
    Ok(next)
}

fn advance_from_values(
    state: &SpectralField,
    grid_values: &[f64],
    bundle: &NoiseBundle,
    step: usize,
    cfg: &ModelConfig,
    tf: &CosineTransform,
) -> Result<SpectralField> {
    if step >= cfg.n_time {
        return Err(Error::Domain(format!(
            "step index {step} beyond grid of {} steps",
            cfg.n_time
        )));
    }
    let dt = cfg.dt();
    let f_vals: Vec<f64> = grid_values.iter().map(|&u| nonlinearity(cfg, u).0).collect();
    let f_coeffs = tf.analyze(&f_vals);
    let mut next = SpectralField::zeros(cfg.n_modes);
    for k in 0..cfg.n_modes {
        let kf = k as f64;
        let lam = kf.powi(4);
        let z = -lam * dt;
        let drift = -kf * kf * dt * phi1(z) * f_coeffs.coeffs()[k];
        let noise = cfg.sigma * (-lam * 0.5 * dt).exp() * bundle.increment(k, step);
        let v = z.exp() * state.coeffs()[k] + drift + noise;
        if !v.is_finite() {
            return Err(Error::BlowUp { step });
        }
        next.coeffs_mut()[k] = v;
    }
    Ok(next)
}

/// March the exponential integrator across the whole grid.
pub fn solve_trajectory(cfg: &ModelConfig, bundle: &NoiseBundle) -> Result<TrajectoryRecord> {
    let tf = cfg.transform()?;
    solve_trajectory_with(cfg, bundle, &tf)
}

/// Same as [`solve_trajectory`], reusing a prebuilt transform.
pub fn solve_trajectory_with(
    cfg: &ModelConfig,
    bundle: &NoiseBundle,
    tf: &CosineTransform,
) -> Result<TrajectoryRecord> {
    if bundle.n_modes < cfg.n_modes || bundle.n_steps() != cfg.n_time {
        return Err(Error::Domain(format!(
            "bundle grid ({} modes, {} steps) does not match config ({}, {})",
            bundle.n_modes,
            bundle.n_steps(),
            cfg.n_modes,
            cfg.n_time
        )));
    }
    let mut states = Vec::with_capacity(cfg.n_time + 1);
    let mut sup = 0.0f64;
    let mut state = cfg.u0_field(tf);
    for step in 0..=cfg.n_time {
        let grid = tf.synthesize(&state);
        for &v in &grid {
            sup = sup.max(v.abs());
        }
        states.push(state.clone());
        if step == cfg.n_time {
            break;
        }
        state = advance_from_values(&state, &grid, bundle, step, cfg, tf)?;
    }
    Ok(TrajectoryRecord {
        states,
        times: cfg.time_grid(),
        sup_norm: sup,
        omega_flag: cfg.cutoff_n.map(|n| sup < n as f64),
        cutoff_n: cfg.cutoff_n,
        seed: bundle.seed,
        index: bundle.index,
        method: SolverKind::Exponential,
        n_steps: cfg.n_time,
        picard_distances: None,
    })
}

/// Picard iteration on the full space-time grid: iterate
/// `u -> u_0-term + drift-integral(f_n(u)) + sigma * convolution`, where the
/// drift integral is a product-trapezoid with the mode exponential
/// integrated analytically on each panel. Returns the fixed point and the
/// sup-distance sequence `d_k`.
pub fn picard_solve(
    cfg: &ModelConfig,
    bundle: &NoiseBundle,
) -> Result<(TrajectoryRecord, Vec<f64>)> {
    if cfg.cutoff_n.is_none() && !cfg.allow_nonconforming_f {
        return Err(Error::Domain(
            "picard iteration requires the Lipschitz cutoff nonlinearity".into(),
        ));
    }
    let tf = cfg.transform()?;
    let n_t = cfg.n_time;
    let n_k = cfg.n_modes;
    let dt = cfg.dt();

    // fixed parts: evolved initial data and the noise convolution
    let u0 = cfg.u0_field(&tf);
    let mut base = vec![0.0; (n_t + 1) * n_k];
    let mut conv = vec![0.0; (n_t + 1) * n_k];
    for k in 0..n_k {
        let lam = (k as f64).powi(4);
        let decay = (-lam * dt).exp();
        let half = (-lam * 0.5 * dt).exp();
        let mut b = u0.coeffs()[k];
        let mut c = 0.0;
        base[k] = b;
        for i in 0..n_t {
            b *= decay;
            c = decay * c + half * bundle.increment(k, i);
            base[(i + 1) * n_k + k] = b;
            conv[(i + 1) * n_k + k] = cfg.sigma * c;
        }
    }

    // panel weights for the analytically integrated exponential trapezoid
    let mut w_prev = vec![0.0; n_k];
    let mut w_new = vec![0.0; n_k];
    let mut decay_k = vec![0.0; n_k];
    for k in 0..n_k {
        let z = -(k as f64).powi(4) * dt;
        let p2 = phi2(z);
        w_prev[k] = dt * (phi1(z) - p2);
        w_new[k] = dt * p2;
        decay_k[k] = z.exp();
    }

    let eval_grid = |coeffs: &[f64]| -> Vec<Vec<f64>> {
        (0..=n_t)
            .map(|i| tf.synthesize_coeffs(&coeffs[i * n_k..(i + 1) * n_k]))
            .collect()
    };

    let mut cur = base.clone();
    for (i, row) in conv.iter().enumerate() {
        cur[i] += row;
    }
    let mut cur_grid = eval_grid(&cur);
    let mut distances: Vec<f64> = Vec::new();
    let mut non_decreasing = 0usize;

    for iterate in 1..=cfg.picard_kmax {
        // [f_n(u(t_i))]_k for every grid time
        let f_coef: Vec<SpectralField> = cur_grid
            .iter()
            .map(|vals| {
                let fv: Vec<f64> = vals.iter().map(|&u| nonlinearity(cfg, u).0).collect();
                tf.analyze(&fv)
            })
            .collect();
        let mut next = vec![0.0; (n_t + 1) * n_k];
        for k in 0..n_k {
            let kf = k as f64;
            let ksq = kf * kf;
            let mut drift = 0.0;
            next[k] = base[k] + conv[k];
            for i in 0..n_t {
                drift = decay_k[k] * drift
                    - ksq * (w_prev[k] * f_coef[i].coeffs()[k] + w_new[k] * f_coef[i + 1].coeffs()[k]);
                next[(i + 1) * n_k + k] = base[(i + 1) * n_k + k] + drift + conv[(i + 1) * n_k + k];
            }
        }
        let next_grid = eval_grid(&next);
        let mut d = 0.0f64;
        for (a, b) in next_grid.iter().zip(cur_grid.iter()) {
            for (&x, &y) in a.iter().zip(b.iter()) {
                d = d.max((x - y).abs());
            }
        }
        if !d.is_finite() {
            return Err(Error::BlowUp { step: iterate });
        }
        if let Some(&last) = distances.last() {
            if d >= last {
                non_decreasing += 1;
                if non_decreasing >= 3 {
                    return Err(Error::PicardDiverged { iterate });
                }
            } else {
                non_decreasing = 0;
            }
        }
        distances.push(d);
        cur = next;
        cur_grid = next_grid;
        if d < cfg.picard_tol {
            break;
        }
    }

    let mut sup = 0.0f64;
    for row in &cur_grid {
        for &v in row {
            sup = sup.max(v.abs());
        }
    }
    let states = (0..=n_t)
        .map(|i| SpectralField::from_coeffs(cur[i * n_k..(i + 1) * n_k].to_vec()))
        .collect();
    let record = TrajectoryRecord {
        states,
        times: cfg.time_grid(),
        sup_norm: sup,
        omega_flag: cfg.cutoff_n.map(|n| sup < n as f64),
        cutoff_n: cfg.cutoff_n,
        seed: bundle.seed,
        index: bundle.index,
        method: SolverKind::Picard,
        n_steps: n_t,
        picard_distances: Some(distances.clone()),
    };
    Ok((record, distances))
}

/// CSV of grid values: header `t,x0..x{M-1}`, one row per grid time.
pub fn trajectory_values_csv(record: &TrajectoryRecord, tf: &CosineTransform) -> String {
    let mut out = String::from("t");
    for j in 0..tf.grid_size() {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for (t, state) in record.times.iter().zip(record.states.iter()) {
        out.push_str(&format!("{t:.16e}"));
        for v in tf.synthesize(state) {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

/// CSV of coefficients: header `t,k0..k{K-1}`.
pub fn trajectory_coeffs_csv(record: &TrajectoryRecord) -> String {
    let n_k = record.states[0].n_modes();
    let mut out = String::from("t");
    for k in 0..n_k {
        out.push_str(&format!(",k{k}"));
    }
    out.push('\n');
    for (t, state) in record.times.iter().zip(record.states.iter()) {
        out.push_str(&format!("{t:.16e}"));
        for &c in state.coeffs() {
            out.push_str(&format!(",{c:.16e}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::sample_bundle;

    #[test]
    fn cutoff_ramp_reference_values() {
        assert_eq!(cutoff_ramp(2, 1.0), (1.0, 0.0));
        assert_eq!(cutoff_ramp(2, 3.5), (0.0, 0.0));
        let (v, _) = cutoff_ramp(2, 2.5);
        assert!((v - 0.5).abs() < 1e-15);
        // derivative bound |H_n'| <= 3/2 < 2
        let mut r = 0.0;
        while r < 4.0 {
            let (h, dh) = cutoff_ramp(2, r);
            assert!((0.0..=1.0).contains(&h));
            assert!(dh.abs() <= 1.5 + 1e-12);
            r += 1e-3;
        }
    }

    #[test]
    fn nonlinearity_plateau_and_tail() {
        let cfg = ModelConfig {
            cutoff_n: Some(2),
            ..ModelConfig::default()
        };
        // inside the plateau f_n = f = u^3 - u
        let (f, df) = nonlinearity(&cfg, 1.5);
        assert!((f - 1.875).abs() < 1e-15);
        assert!((df - (3.0 * 2.25 - 1.0)).abs() < 1e-15);
        // beyond n + 1 everything vanishes
        assert_eq!(nonlinearity(&cfg, 3.5), (0.0, 0.0));
        assert_eq!(nonlinearity(&cfg, -3.5), (0.0, 0.0));
        // the derivative stays bounded on a dense grid (Lipschitz witness)
        let bound = |step: f64| {
            let mut m: f64 = 0.0;
            let mut u = -5.0;
            while u <= 5.0 {
                m = m.max(nonlinearity(&cfg, u).1.abs());
                u += step;
            }
            m
        };
        let coarse = bound(1e-3);
        let fine = bound(2.5e-4);
        assert!(fine.is_finite() && (fine - coarse).abs() < 0.05 * coarse);
    }

    #[test]
    fn phi_functions_stable_near_zero() {
        for &z in &[-1e-9, 1e-9, -1e-3, -2.0, -50.0] {
            let p1 = phi1(z);
            let p2 = phi2(z);
            if z.abs() > 1e-6 {
                assert!((p1 - (z.exp() - 1.0) / z).abs() < 1e-12);
            } else {
                assert!((p1 - 1.0).abs() < 1e-8);
                assert!((p2 - 0.5).abs() < 1e-8);
            }
        }
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            n_modes: 8,
            grid_size: 16,
            n_time: 32,
            substep: 1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn linear_flow_decays_exactly() {
        // sigma = 0 and f = 0: coefficients decay by exp(-k^4 dt) per step
        let cfg = ModelConfig {
            sigma: 0.0,
            f_coeffs: [0.0; 4],
            allow_nonconforming_f: true,
            cutoff_n: None,
            u0_cos_amp: 1.0,
            u0_cos_mode: 2,
            ..tiny_cfg()
        };
        let bundle = sample_bundle(&cfg, 0, 0).unwrap();
        let rec = solve_trajectory(&cfg, &bundle).unwrap();
        let c0 = rec.states[0].coeffs()[2];
        for (i, state) in rec.states.iter().enumerate() {
            let expect = c0 * (-16.0 * cfg.dt() * i as f64).exp();
            assert!((state.coeffs()[2] - expect).abs() < 1e-12 * c0.abs().max(1.0));
        }
    }

    #[test]
    fn constants_are_invariant_under_the_flow() {
        // sigma = 0, constant initial data: (f(u))_xx kills constants
        let cfg = ModelConfig {
            sigma: 0.0,
            u0_const: 0.7,
            ..tiny_cfg()
        };
        let bundle = sample_bundle(&cfg, 0, 0).unwrap();
        let rec = solve_trajectory(&cfg, &bundle).unwrap();
        for state in &rec.states {
            assert!((state.mean() - 0.7).abs() < 1e-12);
            for &c in &state.coeffs()[1..] {
                assert!(c.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_data_zero_noise_stays_zero() {
        let cfg = ModelConfig {
            sigma: 0.0,
            ..tiny_cfg()
        };
        let bundle = sample_bundle(&cfg, 0, 0).unwrap();
        let rec = solve_trajectory(&cfg, &bundle).unwrap();
        assert_eq!(rec.sup_norm, 0.0);
        assert_eq!(rec.omega_flag, Some(true));
    }

    #[test]
    fn mean_mode_tracks_the_noise_path_exactly() {
        let cfg = ModelConfig {
            u0_const: 0.3,
            ..tiny_cfg()
        };
        let bundle = sample_bundle(&cfg, 17, 5).unwrap();
        let rec = solve_trajectory(&cfg, &bundle).unwrap();
        let mean0 = rec.states[0].coeffs()[0];
        for i in 0..=cfg.n_time {
            let expect = mean0 + cfg.sigma * bundle.path_value(0, i);
            assert!((rec.states[i].coeffs()[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn one_step_vs_two_half_steps_is_second_order() {
        // local self-convergence of the exponential step, sigma = 0
        let base = ModelConfig {
            sigma: 0.0,
            u0_cos_amp: 0.5,
            u0_cos_mode: 1,
            n_modes: 8,
            grid_size: 16,
            substep: 1,
            ..ModelConfig::default()
        };
        let mut diffs = Vec::new();
        let mut dts = Vec::new();
        for &n in &[64usize, 128, 256, 512] {
            let coarse = ModelConfig {
                n_time: n,
                t_final: 0.125,
                ..base.clone()
            };
            let fine = ModelConfig {
                n_time: 2 * n,
                t_final: 0.125,
                ..base.clone()
            };
            let bc = sample_bundle(&coarse, 0, 0).unwrap();
            let bf = sample_bundle(&fine, 0, 0).unwrap();
            let tfm = coarse.transform().unwrap();
            let s0 = coarse.u0_field(&tfm);
            let one = advance_step(&s0, &bc, 0, &coarse, &tfm).unwrap();
            let half = advance_step(&s0, &bf, 0, &fine, &tfm).unwrap();
            let two = advance_step(&half, &bf, 1, &fine, &tfm).unwrap();
            let d: f64 = one
                .coeffs()
                .iter()
                .zip(two.coeffs().iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            diffs.push(d);
            dts.push(coarse.dt());
        }
        let slope = ((diffs[0] / diffs[3]).ln()) / ((dts[0] / dts[3]).ln());
        assert!(slope >= 1.9, "local order {slope}, diffs {diffs:?}");
    }

    #[test]
    fn localization_is_exact_in_discretization() {
        // a path whose raw sup stays under n solves bit-identically with the
        // cutoff in place
        let raw = ModelConfig {
            cutoff_n: None,
            sigma: 0.5,
            ..tiny_cfg()
        };
        let bundle = sample_bundle(&raw, 33, 1).unwrap();
        let rec_raw = solve_trajectory(&raw, &bundle).unwrap();
        let n = rec_raw.sup_norm.ceil() as u32 + 1;
        let cut = ModelConfig {
            cutoff_n: Some(n),
            ..raw.clone()
        };
        let rec_cut = solve_trajectory(&cut, &bundle).unwrap();
        assert_eq!(rec_cut.omega_flag, Some(true));
        for (a, b) in rec_raw.states.iter().zip(rec_cut.states.iter()) {
            for (&x, &y) in a.coeffs().iter().zip(b.coeffs().iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn picard_with_zero_nonlinearity_converges_immediately() {
        let cfg = ModelConfig {
            f_coeffs: [0.0; 4],
            allow_nonconforming_f: true,
            cutoff_n: Some(2),
            ..tiny_cfg()
        };
        let bundle = sample_bundle(&cfg, 3, 0).unwrap();
        let (_, distances) = picard_solve(&cfg, &bundle).unwrap();
        assert_eq!(distances.len(), 1);
        assert_eq!(distances[0], 0.0);
    }

    #[test]
    fn picard_requires_cutoff() {
        let cfg = ModelConfig {
            cutoff_n: None,
            ..tiny_cfg()
        };
        let bundle = sample_bundle(&cfg, 3, 0).unwrap();
        assert!(picard_solve(&cfg, &bundle).is_err());
    }

    #[test]
    fn picard_agrees_with_exponential_integrator() {
        let cfg = ModelConfig {
            n_modes: 16,
            grid_size: 32,
            n_time: 128,
            substep: 1,
            cutoff_n: Some(5),
            sigma: 0.1,
            u0_cos_amp: 0.5,
            ..ModelConfig::default()
        };
        let bundle = sample_bundle(&cfg, 7, 0).unwrap();
        let exp_rec = solve_trajectory(&cfg, &bundle).unwrap();
        let (pic_rec, distances) = picard_solve(&cfg, &bundle).unwrap();
        assert!(distances.last().unwrap() < &cfg.picard_tol);
        let tf = cfg.transform().unwrap();
        let mut sup = 0.0f64;
        for (a, b) in exp_rec.states.iter().zip(pic_rec.states.iter()) {
            for (&x, &y) in tf.synthesize(a).iter().zip(tf.synthesize(b).iter()) {
                sup = sup.max((x - y).abs());
            }
        }
        assert!(sup <= 5e-3, "sup difference {sup}");
    }

    #[test]
    fn csv_exports_have_expected_shape() {
        let cfg = tiny_cfg();
        let bundle = sample_bundle(&cfg, 1, 0).unwrap();
        let rec = solve_trajectory(&cfg, &bundle).unwrap();
        let tf = cfg.transform().unwrap();
        let values = trajectory_values_csv(&rec, &tf);
        let coeffs = trajectory_coeffs_csv(&rec);
        assert_eq!(values.lines().count(), cfg.n_time + 2);
        assert!(values.starts_with("t,x0,"));
        assert_eq!(coeffs.lines().count(), cfg.n_time + 2);
        assert!(coeffs.starts_with("t,k0,"));
    }
}
