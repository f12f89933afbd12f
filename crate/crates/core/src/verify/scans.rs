//! Exponent scans and the lower-bound chain: deterministic quadrature scans
//! of the whitened window mass, Monte-Carlo sup-moment scans of the
//! stochastic convolution, restricted Malliavin-norm scans, and the
//! windowed source mass against its closed-form lower bound.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::kernel::{
    exp_rate_integral, integrate_profile, window_mass_lower_bound,
    windowed_convolution_variance, windowed_source_mass_profile,
};
use crate::malliavin::DerivativeSolver;
use crate::noise::NoiseGenerator;
use crate::quad::Grading;
use crate::solver::solve_trajectory_with;
use crate::spectral::basis_value_unchecked;

use super::{fit_power_law, mean_se, par_indexed, ScanReport};

/// Deterministic scan of
/// `Q(delta) = int_0^t int_D sup_x |[K*_H(G 1_[t-delta,t])](y,s)|^2 dy ds`
/// against window size; the fitted slope must land in
/// `[(4H-1)/2 - 0.1, (4H-1)/2 + 0.25]`.
pub fn scan_window_mass(cfg: &ModelConfig, t: f64, deltas: &[f64]) -> Result<ScanReport> {
    cfg.validate()?;
    let p = cfg.params()?;
    let tf = cfg.transform()?;
    let n_k = cfg.n_modes;
    let ktol = cfg.quad_tol.max(1e-9);
    let stol = 1e-4;

    // sup_x of the squared whitened integrand, integrated over y, at source
    // time s for window start zeta
    let q_at = |s: f64, zeta: f64| -> Result<f64> {
        let r_lo = s.max(zeta);
        let mut coeffs = vec![0.0; n_k];
        for (k, c) in coeffs.iter_mut().enumerate() {
            let lam = ((k * k) as f64).powi(2);
            *c = exp_rate_integral(lam, s, r_lo, t, t, &p, ktol)?;
        }
        let profile: Vec<f64> = tf
            .nodes()
            .iter()
            .map(|&y| {
                let cy: Vec<f64> = coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, &ik)| ik * basis_value_unchecked(k, y))
                    .collect();
                let sup = tf
                    .synthesize_coeffs(&cy)
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                sup * sup
            })
            .collect();
        Ok(tf.quadrature(&profile))
    };

    let mut values = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        if !(delta > 0.0 && delta <= t) {
            return Err(Error::Domain(format!("window {delta} outside (0, {t}]")));
        }
        let zeta = t - delta;
        // inside the window: integrand vanishes like a fractional power at
        // s = t
        let mut total = integrate_profile(
            |s| Ok(vec![q_at(s, zeta)?]),
            zeta,
            t,
            Grading::TowardUpper(3),
            1,
            stol,
        )?[0];
        if zeta > 1e-12 * t {
            // below the window: smooth except for the s^{1-2H} blow-up at 0
            let alpha = 1.0 - 2.0 * p.h();
            let beta = 1.0 + alpha;
            total += integrate_profile(
                |w: f64| {
                    let s = w.powf(1.0 / beta);
                    Ok(vec![q_at(s, zeta)? * s.powf(-alpha) / beta])
                },
                0.0,
                (0.5 * zeta).powf(beta),
                Grading::TowardLower(2),
                1,
                stol,
            )?[0];
            total += integrate_profile(
                |s| Ok(vec![q_at(s, zeta)?]),
                0.5 * zeta,
                zeta,
                Grading::TowardUpper(2),
                1,
                stol,
            )?[0];
        }
        values.push(total);
    }

    let fit = fit_power_law(deltas, &values, None)?;
    let reference = (4.0 * p.h() - 1.0) / 2.0;
    let band = (reference - 0.1, reference + 0.25);
    let increasing = {
        let mut idx: Vec<usize> = (0..deltas.len()).collect();
        idx.sort_by(|&a, &b| deltas[a].partial_cmp(&deltas[b]).unwrap());
        idx.windows(2).all(|w| values[w[0]] <= values[w[1]])
    };
    let pass = fit.slope >= band.0 && fit.slope <= band.1 && increasing;
    Ok(ScanReport {
        name: format!("window-mass H={}", p.h()),
        abscissae: deltas.to_vec(),
        values,
        std_errors: vec![0.0; deltas.len()],
        fit: Some(fit),
        reference_exponent: Some(reference),
        reference_tag: "bound".into(),
        band: Some(band),
        samples: 0,
        pass,
        notes: if increasing {
            vec![]
        } else {
            vec!["window mass not monotone in the window size".into()]
        },
    })
}

/// Monte-Carlo scan of the sup-norm moments of the windowed stochastic
/// convolution.
#[derive(Debug, Clone)]
pub struct SupMomentReport {
    /// second-moment scan (values are `E || . ||^2_{L^inf}`)
    pub scan: ScanReport,
    pub p4_values: Vec<f64>,
    pub p4_slope: Option<f64>,
    /// pointwise variance from the `H`-norm quadrature at x = 0
    pub quad_values: Vec<f64>,
    pub quad_slope: f64,
    /// `(5H-1)/2`, the bound exponent for p = 2 (reported, not asserted)
    pub bound_exponent_p2: f64,
    pub bound_exponent_p4: f64,
    pub max_point_var: Vec<f64>,
    pub max_point_var_se: Vec<f64>,
    pub dominance_pass: bool,
    pub slope_match_pass: bool,
    pub pass: bool,
}

struct MomentPartial {
    sum2: Vec<f64>,
    sumsq2: Vec<f64>,
    sum4: Vec<f64>,
    point_sum: Vec<f64>,
    point_sumsq: Vec<f64>,
}

/// Sample `E || sigma int_window G dW_H ||^p` over nested dyadic windows
/// ending at `t`; asserts only internal consistency (the measured slope must
/// match the quadrature-derived pointwise-variance slope within 0.15, and
/// the sup moment must dominate every pointwise variance within MC error).
/// The comparison with the bound exponent `p(5H-1)/4` is reported only.
pub fn scan_sup_moment(
    cfg: &ModelConfig,
    t: f64,
    deltas: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<SupMomentReport> {
    cfg.validate()?;
    if cfg.sigma == 0.0 {
        return Err(Error::ScanRefused(
            "sup-moment scan with sigma = 0: all values vanish".into(),
        ));
    }
    let p = cfg.params()?;
    let tf = cfg.transform()?;
    let t_idx = cfg.grid_index(t)?;
    let grid = cfg.time_grid();
    // window boundaries must be grid times; accumulate steps right-to-left,
    // so the smallest window is snapshot first
    let mut order: Vec<usize> = (0..deltas.len()).collect();
    order.sort_by(|&a, &b| deltas[a].partial_cmp(&deltas[b]).unwrap());
    let lo_idx: Vec<usize> = order
        .iter()
        .map(|&i| cfg.grid_index(t - deltas[i]))
        .collect::<Result<_>>()?;
    let n_k = cfg.n_modes;
    let n_x = tf.grid_size();
    let n_d = deltas.len();
    let generator = NoiseGenerator::new(cfg, seed)?;

    let chunk = 256usize;
    let n_chunks = n_samples.div_ceil(chunk);
    let partials: Vec<MomentPartial> = par_indexed(n_chunks as u64, |c| {
        let start = c as usize * chunk;
        let stop = (start + chunk).min(n_samples);
        let mut part = MomentPartial {
            sum2: vec![0.0; n_d],
            sumsq2: vec![0.0; n_d],
            sum4: vec![0.0; n_d],
            point_sum: vec![0.0; n_d * n_x],
            point_sumsq: vec![0.0; n_d * n_x],
        };
        let mut coeffs = vec![0.0; n_k];
        for i in start..stop {
            let bundle = generator.bundle(i as u64);
            coeffs.iter_mut().for_each(|c| *c = 0.0);
            let mut next_window = 0usize;
            // accumulate steps right-to-left; snapshot at each window start
            // (lo_idx descends as deltas ascend)
            for j in (lo_idx[n_d - 1]..t_idx).rev() {
                let sbar = 0.5 * (grid[j] + grid[j + 1]);
                for (k, c) in coeffs.iter_mut().enumerate() {
                    let lam = ((k * k) as f64).powi(2);
                    *c += (-lam * (t - sbar)).exp() * bundle.increment(k, j);
                }
                while next_window < n_d && j == lo_idx[next_window] {
                    let scaled: Vec<f64> = coeffs.iter().map(|c| cfg.sigma * c).collect();
                    let vals = tf.synthesize_coeffs(&scaled);
                    let sup = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    let di = order[next_window];
                    part.sum2[di] += sup * sup;
                    part.sumsq2[di] += sup.powi(4);
                    part.sum4[di] += sup.powi(4);
                    for (q, &v) in vals.iter().enumerate() {
                        part.point_sum[di * n_x + q] += v;
                        part.point_sumsq[di * n_x + q] += v * v;
                    }
                    next_window += 1;
                }
            }
        }
        part
    });

    let mut sum2 = vec![0.0; n_d];
    let mut sumsq2 = vec![0.0; n_d];
    let mut sum4 = vec![0.0; n_d];
    let mut point_sum = vec![0.0; n_d * n_x];
    let mut point_sumsq = vec![0.0; n_d * n_x];
    for part in &partials {
        for i in 0..n_d {
            sum2[i] += part.sum2[i];
            sumsq2[i] += part.sumsq2[i];
            sum4[i] += part.sum4[i];
        }
        for i in 0..n_d * n_x {
            point_sum[i] += part.point_sum[i];
            point_sumsq[i] += part.point_sumsq[i];
        }
    }
    let n = n_samples as f64;
    let e2: Vec<f64> = sum2.iter().map(|s| s / n).collect();
    let se2: Vec<f64> = (0..n_d)
        .map(|i| {
            let var = (sumsq2[i] - sum2[i] * sum2[i] / n) / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    let e4: Vec<f64> = sum4.iter().map(|s| s / n).collect();
    let mut max_var = vec![0.0f64; n_d];
    for i in 0..n_d {
        for q in 0..n_x {
            let s1 = point_sum[i * n_x + q];
            let s2 = point_sumsq[i * n_x + q];
            let var = (s2 - s1 * s1 / n) / (n - 1.0);
            max_var[i] = max_var[i].max(var);
        }
    }
    let max_var_se: Vec<f64> = max_var.iter().map(|v| v * (2.0 / (n - 1.0)).sqrt()).collect();

    let sigma2 = cfg.sigma * cfg.sigma;
    let quad_values: Vec<f64> = deltas
        .iter()
        .map(|&d| {
            windowed_convolution_variance(0.0, t, t - d, &p, n_k, cfg.quad_tol)
                .map(|v| sigma2 * v)
        })
        .collect::<Result<_>>()?;

    let mc_fit = fit_power_law(deltas, &e2, None)?;
    let quad_fit = fit_power_law(deltas, &quad_values, None)?;
    let p4_fit = fit_power_law(deltas, &e4, None).ok();

    let slope_match_pass = (mc_fit.slope - quad_fit.slope).abs() <= 0.15;
    let dominance_pass = (0..n_d)
        .all(|i| e2[i] - max_var[i] >= -3.0 * (se2[i] + max_var_se[i]));

    let bound_p2 = (5.0 * p.h() - 1.0) / 2.0;
    let bound_p4 = 5.0 * p.h() - 1.0;
    let notes = vec![
        format!(
            "measured p=2 slope {:.4} vs bound exponent {:.4} (reported, not asserted)",
            mc_fit.slope, bound_p2
        ),
        format!(
            "quadrature-derived pointwise-variance slope {:.4}",
            quad_fit.slope
        ),
    ];
    let pass = slope_match_pass && dominance_pass;
    let scan = ScanReport {
        name: format!("sup-moment H={}", p.h()),
        abscissae: deltas.to_vec(),
        values: e2,
        std_errors: se2,
        fit: Some(mc_fit),
        reference_exponent: Some(quad_fit.slope),
        reference_tag: "quadrature-derived".into(),
        band: Some((quad_fit.slope - 0.15, quad_fit.slope + 0.15)),
        samples: n_samples,
        pass,
        notes,
    };
    Ok(SupMomentReport {
        scan,
        p4_values: e4,
        p4_slope: p4_fit.map(|f| f.slope),
        quad_values,
        quad_slope: quad_fit.slope,
        bound_exponent_p2: bound_p2,
        bound_exponent_p4: bound_p4,
        max_point_var: max_var,
        max_point_var_se: max_var_se,
        dominance_pass,
        slope_match_pass,
        pass,
    })
}

/// Monte-Carlo mean over trajectories of the sup (over the collocation
/// grid) of the restricted squared Malliavin norm over `[t_hat - eps,
/// t_hat]`; passes when the values stay under the envelope
/// `c eps^{(4H-1)/2} exp(4/3 eps^{3/4})` with the constant fitted at the
/// largest window.
pub fn scan_restricted_derivative(
    cfg: &ModelConfig,
    t_hat: f64,
    eps_grid: &[f64],
    n_traj: usize,
    seed: u64,
) -> Result<ScanReport> {
    cfg.validate()?;
    if cfg.cutoff_n.is_none() {
        return Err(Error::Domain(
            "restricted-derivative scan requires a cutoff level".into(),
        ));
    }
    let p = cfg.params()?;
    let engine = DerivativeSolver::new(cfg, t_hat)?;
    let generator = NoiseGenerator::new(cfg, seed)?;
    let tf = cfg.transform()?;

    let rows: Vec<Result<Vec<f64>>> = par_indexed(n_traj as u64, |i| {
        let bundle = generator.bundle(i);
        let traj = solve_trajectory_with(cfg, &bundle, &tf)?;
        let norms = engine.window_norms_over_nodes(&traj, cfg.sigma, eps_grid)?;
        Ok(norms
            .iter()
            .map(|row| row.iter().fold(0.0f64, |m, &v| m.max(v)))
            .collect())
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;

    let mut values = Vec::with_capacity(eps_grid.len());
    let mut ses = Vec::with_capacity(eps_grid.len());
    for e in 0..eps_grid.len() {
        let col: Vec<f64> = rows.iter().map(|r| r[e]).collect();
        let (m, se) = mean_se(&col);
        values.push(m);
        ses.push(se);
    }

    let reference = (4.0 * p.h() - 1.0) / 2.0;
    let envelope = |c: f64, eps: f64| c * eps.powf(reference) * (4.0 / 3.0 * eps.powf(0.75)).exp();
    let imax = (0..eps_grid.len())
        .max_by(|&a, &b| eps_grid[a].partial_cmp(&eps_grid[b]).unwrap())
        .unwrap();
    let fitted = values[imax] / envelope(1.0, eps_grid[imax]);
    let envelope_pass = (0..eps_grid.len())
        .all(|i| values[i] <= envelope(fitted, eps_grid[i]) * (1.0 + 1e-9));
    let monotone = {
        let mut idx: Vec<usize> = (0..eps_grid.len()).collect();
        idx.sort_by(|&a, &b| eps_grid[a].partial_cmp(&eps_grid[b]).unwrap());
        idx.windows(2).all(|w| values[w[0]] <= values[w[1]] * (1.0 + 1e-12))
    };
    let fit = fit_power_law(eps_grid, &values, None)?;
    let pass = envelope_pass && monotone;
    Ok(ScanReport {
        name: format!("restricted-derivative H={}", p.h()),
        abscissae: eps_grid.to_vec(),
        values,
        std_errors: ses,
        fit: Some(fit),
        reference_exponent: Some(reference),
        reference_tag: "bound".into(),
        band: None,
        samples: n_traj,
        pass,
        notes: vec![format!(
            "envelope constant fitted at eps = {:.4e}: {:.6e}; monotone: {}",
            eps_grid[imax], fitted, monotone
        )],
    })
}

/// Windowed source mass against the closed-form lower bound.
#[derive(Debug, Clone)]
pub struct LowerBoundReport {
    pub h: f64,
    pub t: f64,
    pub sigma: f64,
    pub eps_grid: Vec<f64>,
    pub xs: Vec<f64>,
    /// `[x][eps]`, sigma included
    pub mass: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub fitted_constant: f64,
    pub grid_pass: bool,
    pub positive_pass: bool,
    /// `eps^{2H+1/4} / Lambda` at eps = t/10 and eps = t/10^4
    pub ratio_large: f64,
    pub ratio_small: f64,
    pub ratio_decrease: f64,
    /// required decrease factor over the stated 10^3 shrink
    pub ratio_requirement: f64,
    pub ratio_pass: bool,
    /// fitted slope of the ratio over the scan grid (analytically 1/4)
    pub ratio_slope: f64,
    /// decrease over a 10^4 shrink, for reference
    pub ratio_decrease_4dec: f64,
    pub pass: bool,
}

impl LowerBoundReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("eps,lambda");
        for &x in &self.xs {
            out.push_str(&format!(",mass_x{x:.4}"));
        }
        out.push('\n');
        for (e, &eps) in self.eps_grid.iter().enumerate() {
            out.push_str(&format!("{:.16e},{:.16e}", eps, self.lambda[e]));
            for xrow in &self.mass {
                out.push_str(&format!(",{:.16e}", xrow[e]));
            }
            out.push('\n');
        }
        out
    }
}

/// Deterministic check of
/// `L(eps) = sigma^2 int_{t-eps}^t int_D |[K*_H(G 1_[0,t])](y,s)|^2 dy ds
///  >= c Lambda(H, t, eps)`
/// with a single constant fitted at the largest window, plus the
/// ratio-to-zero surrogate for `eps^{2H+1/4} / Lambda`.
pub fn check_lower_bound(
    cfg: &ModelConfig,
    t: f64,
    eps_grid: &[f64],
    xs: &[f64],
) -> Result<LowerBoundReport> {
    cfg.validate()?;
    let p = cfg.params()?;
    let sigma2 = cfg.sigma * cfg.sigma;
    if sigma2 == 0.0 {
        return Err(Error::ScanRefused(
            "lower-bound check with sigma = 0: the source vanishes".into(),
        ));
    }
    let mut mass = vec![vec![0.0; eps_grid.len()]; xs.len()];
    let mut lambda = Vec::with_capacity(eps_grid.len());
    for (e, &eps) in eps_grid.iter().enumerate() {
        let profile = windowed_source_mass_profile(xs, t, eps, &p, cfg.n_modes, 1e-5)?;
        for (xi, &v) in profile.iter().enumerate() {
            mass[xi][e] = sigma2 * v;
        }
        lambda.push(window_mass_lower_bound(p.h(), t, eps)?);
    }
    let imax = (0..eps_grid.len())
        .max_by(|&a, &b| eps_grid[a].partial_cmp(&eps_grid[b]).unwrap())
        .unwrap();
    let fitted_constant = xs
        .iter()
        .enumerate()
        .map(|(xi, _)| mass[xi][imax] / lambda[imax])
        .fold(f64::INFINITY, f64::min);
    let grid_pass = mass.iter().all(|row| {
        row.iter()
            .zip(lambda.iter())
            .all(|(&m, &l)| m >= fitted_constant * l * (1.0 - 1e-9))
    });
    let positive_pass = mass.iter().all(|row| row.iter().all(|&m| m > 0.0));

    let ratio = |eps: f64| -> Result<f64> {
        Ok(eps.powf(2.0 * p.h() + 0.25) / window_mass_lower_bound(p.h(), t, eps)?)
    };
    let ratio_large = ratio(0.1 * t)?;
    let ratio_small = ratio(1e-4 * t)?;
    let ratio_decrease = ratio_large / ratio_small;
    let ratio_requirement = 10.0;
    let ratio_pass = ratio_decrease >= ratio_requirement;
    let ratio_decrease_4dec = ratio_large / ratio(1e-5 * t)?;
    let ratios: Vec<f64> = eps_grid
        .iter()
        .map(|&e| ratio(e))
        .collect::<Result<_>>()?;
    let ratio_slope = fit_power_law(eps_grid, &ratios, None)?.slope;

    let pass = grid_pass && positive_pass && ratio_pass;
    Ok(LowerBoundReport {
        h: p.h(),
        t,
        sigma: cfg.sigma,
        eps_grid: eps_grid.to_vec(),
        xs: xs.to_vec(),
        mass,
        lambda,
        fitted_constant,
        grid_pass,
        positive_pass,
        ratio_large,
        ratio_small,
        ratio_decrease,
        ratio_requirement,
        ratio_pass,
        ratio_slope,
        ratio_decrease_4dec,
        pass,
    })
}
