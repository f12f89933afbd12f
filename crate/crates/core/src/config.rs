//! Model configuration shared by the sampler, solvers, and verifier.

use crate::error::{Error, Result};
use crate::kernel::HurstParams;
use crate::spectral::{CosineTransform, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Exponential,
    Picard,
}

impl SolverKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverKind::Exponential => "exponential",
            SolverKind::Picard => "picard",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exponential" => Some(SolverKind::Exponential),
            "picard" => Some(SolverKind::Picard),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Volterra,
    Cholesky,
}

impl SamplerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplerKind::Volterra => "volterra",
            SamplerKind::Cholesky => "cholesky",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "volterra" => Some(SamplerKind::Volterra),
            "cholesky" => Some(SamplerKind::Cholesky),
            _ => None,
        }
    }
}

/// Full model description: equation parameters, discretization sizes, and
/// solver knobs. The initial condition is the continuous function
/// `u0(x) = u0_const + u0_cos_amp * cos(u0_cos_mode * x)`, supplied to the
/// solver as grid samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub h: f64,
    pub t_final: f64,
    pub sigma: f64,
    /// Cubic coefficients `(c3, c2, c1, c0)` of `f(u) = c3 u^3 + c2 u^2 + c1 u + c0`.
    pub f_coeffs: [f64; 4],
    /// Cutoff level `n`; `None` solves with the raw nonlinearity.
    pub cutoff_n: Option<u32>,
    pub n_modes: usize,
    pub grid_size: usize,
    pub n_time: usize,
    /// Substep refinement factor of the white-noise cells under the Volterra
    /// sampler.
    pub substep: usize,
    pub sampler: SamplerKind,
    pub solver: SolverKind,
    pub picard_kmax: usize,
    pub picard_tol: f64,
    pub quad_tol: f64,
    pub u0_const: f64,
    pub u0_cos_amp: f64,
    pub u0_cos_mode: usize,
    /// Permits degenerate cubics (c3 <= 0) for structural tests.
    pub allow_nonconforming_f: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            h: 0.75,
            t_final: 1.0,
            sigma: 0.1,
            f_coeffs: [1.0, 0.0, -1.0, 0.0],
            cutoff_n: Some(10),
            n_modes: 64,
            grid_size: 128,
            n_time: 256,
            substep: 8,
            sampler: SamplerKind::Cholesky,
            solver: SolverKind::Exponential,
            picard_kmax: 40,
            // the fixed point only approximates the mild solution to the
            // time-discretization error, orders above this residual
            picard_tol: 1e-6,
            quad_tol: 1e-9,
            u0_const: 0.0,
            u0_cos_amp: 0.0,
            u0_cos_mode: 1,
            allow_nonconforming_f: false,
        }
    }
}

impl ModelConfig {
    /// Collects every violated constraint into one error.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(Error::Domain(msg)) = HurstParams::new(self.h) {
            problems.push(format!("H: {msg}"));
        }
        if !(self.t_final > 0.0) {
            problems.push(format!("T: must be positive, got {}", self.t_final));
        }
        if self.f_coeffs[0] <= 0.0 && !self.allow_nonconforming_f {
            problems.push(format!(
                "f_coeffs: dominant coefficient must be positive, got {} \
                 (set allow_nonconforming_f to override)",
                self.f_coeffs[0]
            ));
        }
        if let Some(n) = self.cutoff_n {
            if n < 1 {
                problems.push("cutoff_n: must be >= 1".into());
            }
        }
        if self.n_modes < 1 {
            problems.push("n_modes: must be >= 1".into());
        }
        if self.grid_size < self.n_modes {
            problems.push(format!(
                "grid_size: {} cannot resolve {} modes",
                self.grid_size, self.n_modes
            ));
        }
        if self.n_time < 2 {
            problems.push("n_time: must be >= 2".into());
        }
        if self.substep < 1 {
            problems.push("substep: must be >= 1".into());
        }
        if !(self.picard_tol > 0.0) {
            problems.push("picard_tol: must be positive".into());
        }
        if self.picard_kmax < 1 {
            problems.push("picard_kmax: must be >= 1".into());
        }
        if !(self.quad_tol > 0.0 && self.quad_tol < 1e-2) {
            problems.push(format!(
                "quad_tol: must lie in (0, 1e-2), got {}",
                self.quad_tol
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn params(&self) -> Result<HurstParams> {
        HurstParams::new(self.h)
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_time as f64
    }

    /// The uniform time grid `0, dt, ..., T` (`n_time + 1` points).
    pub fn time_grid(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.n_time).map(|i| i as f64 * dt).collect()
    }

    /// Index of grid time `t`, refusing off-grid values.
    pub fn grid_index(&self, t: f64) -> Result<usize> {
        let dt = self.dt();
        let i = (t / dt).round() as i64;
        if i < 0 || i > self.n_time as i64 || (t - i as f64 * dt).abs() > 1e-9 * self.t_final {
            return Err(Error::OffGrid { t });
        }
        Ok(i as usize)
    }

    pub fn transform(&self) -> Result<CosineTransform> {
        CosineTransform::new(self.n_modes, self.grid_size)
    }

    pub fn u0_value(&self, x: f64) -> f64 {
        self.u0_const + self.u0_cos_amp * (self.u0_cos_mode as f64 * x).cos()
    }

    /// Initial condition as a spectral field (analysis of the grid samples).
    pub fn u0_field(&self, tf: &CosineTransform) -> SpectralField {
        let samples: Vec<f64> = tf.nodes().iter().map(|&x| self.u0_value(x)).collect();
        tf.analyze(&samples)
    }
}
