//! Wiener-isometry check: the Monte-Carlo variance of the stochastic
//! convolution must match the quadrature of the windowed `H`-norm.

use crate::config::ModelConfig;
use crate::error::Result;
use crate::kernel::windowed_convolution_variance;
use crate::noise::NoiseGenerator;

use super::{par_indexed, var_se};

#[derive(Debug, Clone)]
pub struct IsometryPoint {
    pub x: f64,
    pub t: f64,
    pub mc_var: f64,
    pub se: f64,
    pub quad_var: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct IsometryReport {
    pub points: Vec<IsometryPoint>,
    pub n_samples: usize,
    pub pass_fraction: f64,
    pub pass: bool,
}

impl IsometryReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("x,t,mc_var,se,quad_var,pass\n");
        for p in &self.points {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
                p.x, p.t, p.mc_var, p.se, p.quad_var, p.pass as u8
            ));
        }
        out
    }
}

/// Monte-Carlo variance of the stochastic convolution at each `(x, t)`
/// against the `H`-norm quadrature; a point passes inside 3 standard
/// errors, the report passes at >= 90 percent of points.
pub fn verify_isometry(
    cfg: &ModelConfig,
    points: &[(f64, f64)],
    n_samples: usize,
    seed: u64,
) -> Result<IsometryReport> {
    cfg.validate()?;
    let params = cfg.params()?;
    let indices: Vec<usize> = points
        .iter()
        .map(|&(_, t)| cfg.grid_index(t))
        .collect::<Result<_>>()?;
    let generator = NoiseGenerator::new(cfg, seed)?;
    let samples: Vec<Vec<f64>> = par_indexed(n_samples as u64, |i| {
        let bundle = generator.bundle(i);
        points
            .iter()
            .zip(indices.iter())
            .map(|(&(x, _), &ti)| bundle.convolution(ti).eval(x))
            .collect()
    });
    let mut report_points = Vec::with_capacity(points.len());
    let mut passed = 0usize;
    for (pi, &(x, t)) in points.iter().enumerate() {
        let vals: Vec<f64> = samples.iter().map(|row| row[pi]).collect();
        let (mc_var, se) = var_se(&vals);
        let quad_var = windowed_convolution_variance(x, t, 0.0, &params, cfg.n_modes, cfg.quad_tol)?;
        let pass = (mc_var - quad_var).abs() <= 3.0 * se;
        passed += pass as usize;
        report_points.push(IsometryPoint {
            x,
            t,
            mc_var,
            se,
            quad_var,
            pass,
        });
    }
    let pass_fraction = passed as f64 / points.len() as f64;
    Ok(IsometryReport {
        points: report_points,
        n_samples,
        pass_fraction,
        pass: pass_fraction >= 0.9,
    })
}
