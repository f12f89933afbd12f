//! Ensemble statistics: almost-sure positivity of the Malliavin norm and
//! the empirical density surrogate (atoms, CDF jumps, kernel density
//! estimate).

use crate::config::ModelConfig;
use crate::error::Result;
use crate::malliavin::DerivativeSolver;
use crate::noise::NoiseGenerator;
use crate::solver::solve_trajectory_with;

use super::par_indexed;

#[derive(Debug, Clone)]
pub struct PositivityReport {
    pub n_traj: usize,
    pub threshold: f64,
    pub fraction_positive: f64,
    /// fractions at nearby thresholds, for sensitivity inspection
    pub sensitivity: Vec<(f64, f64)>,
    pub min_norm: f64,
    pub max_norm: f64,
    pub pass: bool,
}

/// Fraction of trajectories whose squared Malliavin norm at `(x*, t*)`
/// exceeds the threshold; passes only at fraction 1.
pub fn check_positivity(
    cfg: &ModelConfig,
    x_star: f64,
    t_star: f64,
    n_traj: usize,
    threshold: f64,
    seed: u64,
) -> Result<PositivityReport> {
    cfg.validate()?;
    let engine = DerivativeSolver::new(cfg, t_star)?;
    let generator = NoiseGenerator::new(cfg, seed)?;
    let tf = cfg.transform()?;
    let norms: Vec<Result<f64>> = par_indexed(n_traj as u64, |i| {
        let bundle = generator.bundle(i);
        let traj = solve_trajectory_with(cfg, &bundle, &tf)?;
        Ok(engine.norm_at(&traj, x_star, cfg.sigma)?.squared_norm)
    });
    let norms: Vec<f64> = norms.into_iter().collect::<Result<_>>()?;
    let frac = |thr: f64| norms.iter().filter(|&&v| v > thr).count() as f64 / n_traj as f64;
    let fraction_positive = frac(threshold);
    let sensitivity = [1e-14, 1e-12, 1e-10, 1e-8]
        .iter()
        .map(|&thr| (thr, frac(thr)))
        .collect();
    let min_norm = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let max_norm = norms.iter().copied().fold(0.0f64, f64::max);
    Ok(PositivityReport {
        n_traj,
        threshold,
        fraction_positive,
        sensitivity,
        min_norm,
        max_norm,
        pass: fraction_positive == 1.0,
    })
}

#[derive(Debug, Clone)]
pub struct DensityReport {
    pub n_samples: usize,
    pub mean: f64,
    pub std: f64,
    /// largest sample multiplicity within a window of width `resolution`
    pub atom_weight: f64,
    pub resolution: f64,
    /// largest exact-tie jump of the empirical CDF
    pub cdf_jump: f64,
    /// pass threshold `3 / sqrt(N)` for both atom weight and CDF jump
    pub threshold: f64,
    pub bandwidth: f64,
    /// kernel density estimate curve `(u, density)`
    pub kde: Vec<(f64, f64)>,
    /// trapezoid mass of the KDE over its own grid
    pub kde_mass: f64,
    pub degenerate: bool,
    pub pass: bool,
}

impl DensityReport {
    pub fn kde_csv(&self) -> String {
        let mut out = String::from("u,density\n");
        for &(u, d) in &self.kde {
            out.push_str(&format!("{u:.16e},{d:.16e}\n"));
        }
        out
    }
}

/// Sample `u(x*, t*)` across an ensemble and test the law for atoms: the
/// largest multiplicity at resolution 1e-9 and the largest CDF jump must
/// both stay under `3 / sqrt(N)`. Also returns a Gaussian KDE with
/// Silverman bandwidth `0.9 min(std, IQR/1.34) N^{-1/5}`.
pub fn density_report(
    cfg: &ModelConfig,
    x_star: f64,
    t_star: f64,
    n_samples: usize,
    seed: u64,
) -> Result<DensityReport> {
    cfg.validate()?;
    let t_idx = cfg.grid_index(t_star)?;
    let generator = NoiseGenerator::new(cfg, seed)?;
    let tf = cfg.transform()?;
    let samples: Vec<Result<f64>> = par_indexed(n_samples as u64, |i| {
        let bundle = generator.bundle(i);
        let traj = solve_trajectory_with(cfg, &bundle, &tf)?;
        Ok(traj.value_at(x_star, t_idx))
    });
    let mut samples: Vec<f64> = samples.into_iter().collect::<Result<_>>()?;
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let n = n_samples as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std = (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();

    let resolution = 1e-9;
    let mut atom_count = 1usize;
    {
        let mut lo = 0usize;
        for hi in 0..samples.len() {
            while samples[hi] - samples[lo] > resolution {
                lo += 1;
            }
            atom_count = atom_count.max(hi - lo + 1);
        }
    }
    let mut jump_count = 1usize;
    {
        let mut run = 1usize;
        for i in 1..samples.len() {
            if samples[i] == samples[i - 1] {
                run += 1;
                jump_count = jump_count.max(run);
            } else {
                run = 1;
            }
        }
    }
    let atom_weight = atom_count as f64 / n;
    let cdf_jump = jump_count as f64 / n;
    let threshold = 3.0 / n.sqrt();

    let q = |f: f64| samples[((f * (n - 1.0)).round() as usize).min(n_samples - 1)];
    let iqr = q(0.75) - q(0.25);
    let bandwidth = 0.9 * std.min(iqr / 1.34) * n.powf(-0.2);
    let degenerate = !(bandwidth > 0.0);
    let (kde, kde_mass) = if degenerate {
        (Vec::new(), 0.0)
    } else {
        let lo = samples[0] - 5.0 * bandwidth;
        let hi = samples[n_samples - 1] + 5.0 * bandwidth;
        let m = 512usize;
        let norm = 1.0 / (n * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
        let curve: Vec<(f64, f64)> = (0..m)
            .map(|i| {
                let u = lo + (hi - lo) * i as f64 / (m - 1) as f64;
                // sorted samples: only the window within 8 bandwidths matters
                let a = samples.partition_point(|&v| v < u - 8.0 * bandwidth);
                let b = samples.partition_point(|&v| v <= u + 8.0 * bandwidth);
                let d: f64 = samples[a..b]
                    .iter()
                    .map(|&v| {
                        let z = (u - v) / bandwidth;
                        (-0.5 * z * z).exp()
                    })
                    .sum::<f64>()
                    * norm;
                (u, d)
            })
            .collect();
        let mass: f64 = curve
            .windows(2)
            .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
            .sum();
        (curve, mass)
    };

    let pass = atom_weight <= threshold && cdf_jump <= threshold;
    Ok(DensityReport {
        n_samples,
        mean,
        std,
        atom_weight,
        resolution,
        cdf_jump,
        threshold,
        bandwidth,
        kde,
        kde_mass,
        degenerate,
        pass,
    })
}
