//! Neumann cosine eigenbasis on `D = [0, pi]`, the Green's function of
//! `d/dt + d^4/dx^4`, semigroup action, and grid <-> coefficient transforms.
//!
//! The eigenfunctions are `a_0(x) = 1/sqrt(pi)` and
//! `a_k(x) = sqrt(2/pi) cos(k x)` with eigenvalues `k^4`, so the Green's
//! function is the series `sum_k exp(-k^4 t) a_k(x) a_k(y)`. Everything here
//! works on truncations of that series; the only approximation is the mode
//! cutoff, whose tail is controlled by [`green_tail_bound`].

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Length of the spatial domain.
pub const DOMAIN_LEN: f64 = PI;

/// Default spectral truncation.
pub const DEFAULT_MODES: usize = 64;

/// Below this time, `green_value` demands `exp(-K^4 t) < 1e-14`.
const SHORT_TIME: f64 = 1e-4;
const TAIL_TOL: f64 = 1e-14;

fn check_point(x: f64) -> Result<()> {
    if !(0.0..=DOMAIN_LEN).contains(&x) {
        return Err(Error::Domain(format!("x = {x} outside [0, pi]")));
    }
    Ok(())
}

/// Value of the k-th Neumann eigenfunction at `x`.
pub fn basis_value(k: usize, x: f64) -> Result<f64> {
    check_point(x)?;
    Ok(basis_value_unchecked(k, x))
}

#[inline]
pub(crate) fn basis_value_unchecked(k: usize, x: f64) -> f64 {
    if k == 0 {
        1.0 / PI.sqrt()
    } else {
        (2.0 / PI).sqrt() * (k as f64 * x).cos()
    }
}

/// Integral of the k-th eigenfunction over `[0, x]`.
pub(crate) fn basis_antiderivative(k: usize, x: f64) -> f64 {
    if k == 0 {
        x / PI.sqrt()
    } else {
        (2.0 / PI).sqrt() * (k as f64 * x).sin() / k as f64
    }
}

/// Tail bound `(2/pi) sum_{k >= n_modes} exp(-k^4 t)` of the truncated
/// Green's series.
pub fn green_tail_bound(n_modes: usize, t: f64) -> f64 {
    let mut tail = 0.0;
    let mut k = n_modes.max(1);
    loop {
        let term = (-((k * k) as f64).powi(2) * t).exp();
        tail += term;
        if term < 1e-300 || term < 1e-18 * tail || k > n_modes + 10_000 {
            break;
        }
        k += 1;
    }
    2.0 / PI * tail
}

fn check_green_time(t: f64, n_modes: usize) -> Result<()> {
    if t <= 0.0 {
        return Err(Error::Domain(format!("green kernel needs t > 0, got {t}")));
    }
    if t < SHORT_TIME {
        let k4 = ((n_modes * n_modes) as f64).powi(2);
        if (-k4 * t).exp() >= TAIL_TOL {
            return Err(Error::Truncation {
                tail: green_tail_bound(n_modes, t),
                t,
                n_modes,
            });
        }
    }
    Ok(())
}

/// Truncated Green's function `sum_{k < n_modes} exp(-k^4 t) a_k(x) a_k(y)`.
pub fn green_value(x: f64, y: f64, t: f64, n_modes: usize) -> Result<f64> {
    check_point(x)?;
    check_point(y)?;
    check_green_time(t, n_modes)?;
    let mut acc = 1.0 / PI;
    for k in 1..n_modes {
        let kf = k as f64;
        let decay = (-kf.powi(4) * t).exp();
        if decay == 0.0 {
            break;
        }
        acc += 2.0 / PI * decay * (kf * x).cos() * (kf * y).cos();
    }
    Ok(acc)
}

/// Term-wise second y-derivative of the truncated Green's function,
/// `sum_{k < n_modes} (-k^2) exp(-k^4 t) a_k(x) a_k(y)`.
pub fn green_yy_value(x: f64, y: f64, t: f64, n_modes: usize) -> Result<f64> {
    check_point(x)?;
    check_point(y)?;
    check_green_time(t, n_modes)?;
    let mut acc = 0.0;
    for k in 1..n_modes {
        let kf = k as f64;
        let decay = (-kf.powi(4) * t).exp();
        if decay == 0.0 {
            break;
        }
        acc -= 2.0 / PI * kf * kf * decay * (kf * x).cos() * (kf * y).cos();
    }
    Ok(acc)
}

/// A function on `D` stored as truncated cosine coefficients: the field is
/// `sum_k coeffs[k] a_k(x)`. Coefficient 0 is the mean mode,
/// `(1/sqrt(pi)) int field dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(n_modes: usize) -> Self {
        Self {
            coeffs: vec![0.0; n_modes],
        }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// Pointwise evaluation of the truncated series.
    pub fn eval(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (k, &c) in self.coeffs.iter().enumerate() {
            acc += c * basis_value_unchecked(k, x);
        }
        acc
    }

    /// Mean value of the field over the domain.
    pub fn mean(&self) -> f64 {
        self.coeffs[0] / PI.sqrt()
    }

    /// Semigroup action: coefficient k is multiplied by `exp(-k^4 t)`.
    /// `t = 0` is the identity.
    pub fn evolve(&self, t: f64) -> Result<Self> {
        if t < 0.0 {
            return Err(Error::Domain(format!("semigroup needs t >= 0, got {t}")));
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, &c)| c * (-(k as f64).powi(4) * t).exp())
            .collect();
        Ok(Self { coeffs })
    }
}

/// Exact analysis/synthesis pair on the midpoint cosine collocation grid
/// `x_j = pi (j + 1/2) / grid_size`.
///
/// For `grid_size >= n_modes` the pair is an exact round trip on the span
/// of the retained modes, and the associated quadrature
/// `(pi/grid_size) sum_j` integrates products of two retained basis
/// functions exactly.
#[derive(Debug, Clone)]
pub struct CosineTransform {
    n_modes: usize,
    nodes: Vec<f64>,
    // basis[k * grid_size + j] = a_k(x_j)
    basis: Vec<f64>,
}

impl CosineTransform {
    pub fn new(n_modes: usize, grid_size: usize) -> Result<Self> {
        if grid_size < n_modes {
            return Err(Error::Domain(format!(
                "collocation grid of {grid_size} points cannot resolve {n_modes} modes"
            )));
        }
        let nodes: Vec<f64> = (0..grid_size)
            .map(|j| PI * (j as f64 + 0.5) / grid_size as f64)
            .collect();
        let mut basis = vec![0.0; n_modes * grid_size];
        for k in 0..n_modes {
            for (j, &x) in nodes.iter().enumerate() {
                basis[k * grid_size + j] = basis_value_unchecked(k, x);
            }
        }
        Ok(Self {
            n_modes,
            nodes,
            basis,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn grid_size(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Discrete quadrature `(pi/M) sum_j values[j]`.
    pub fn quadrature(&self, values: &[f64]) -> f64 {
        let w = PI / self.grid_size() as f64;
        values.iter().sum::<f64>() * w
    }

    /// Grid values -> coefficients.
    pub fn analyze(&self, values: &[f64]) -> SpectralField {
        assert_eq!(values.len(), self.grid_size());
        let m = self.grid_size();
        let w = PI / m as f64;
        let coeffs = (0..self.n_modes)
            .map(|k| {
                let row = &self.basis[k * m..(k + 1) * m];
                w * row
                    .iter()
                    .zip(values.iter())
                    .map(|(&b, &v)| b * v)
                    .sum::<f64>()
            })
            .collect();
        SpectralField { coeffs }
    }

    /// Coefficients -> grid values.
    pub fn synthesize(&self, field: &SpectralField) -> Vec<f64> {
        self.synthesize_coeffs(field.coeffs())
    }

    pub(crate) fn synthesize_coeffs(&self, coeffs: &[f64]) -> Vec<f64> {
        assert!(coeffs.len() <= self.n_modes);
        let m = self.grid_size();
        let mut out = vec![0.0; m];
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let row = &self.basis[k * m..(k + 1) * m];
            for (o, &b) in out.iter_mut().zip(row.iter()) {
                *o += c * b;
            }
        }
        out
    }
}
