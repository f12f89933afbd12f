//! Sampling the fractional white noise: per-mode fBm paths via the Volterra
//! representation or exact Cholesky draws, assembled into reproducible
//! [`NoiseBundle`]s, plus field evaluation and the stochastic convolution.
//!
//! Every sampled object is a pure function of `(seed, trajectory_index,
//! scheme)`: each mode of each trajectory draws from its own counter-derived
//! ChaCha stream, so parallel and serial ensembles coincide bit for bit.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{ModelConfig, SamplerKind};
use crate::error::{Error, Result};
use crate::kernel::{exp_rate_integral, fbm_covariance, HurstParams};
use crate::spectral::{basis_antiderivative, SpectralField};

/// Precomputed linear map from i.i.d. standard normal cells to fBm path
/// values on the time grid.
#[derive(Debug, Clone)]
pub struct NoiseScheme {
    params: HurstParams,
    grid: Vec<f64>,
    substep: usize,
    kind: SamplerKind,
    n_cells: usize,
    // row-major (grid.len() x n_cells); row 0 is zero (beta(0) = 0)
    weights: Vec<f64>,
}

impl NoiseScheme {
    pub fn new(
        params: HurstParams,
        grid: Vec<f64>,
        substep: usize,
        kind: SamplerKind,
        quad_tol: f64,
    ) -> Result<Self> {
        if grid.len() < 2 || grid[0] != 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain(
                "noise grid must be increasing and start at 0".into(),
            ));
        }
        let n_steps = grid.len() - 1;
        match kind {
            SamplerKind::Volterra => {
                if substep < 1 {
                    return Err(Error::Domain("substep factor must be >= 1".into()));
                }
                let n_cells = n_steps * substep;
                let t_final = grid[n_steps];
                let d_sub = t_final / n_cells as f64;
                let sqrt_d = d_sub.sqrt();
                let mut weights = vec![0.0; grid.len() * n_cells];
                // beta(t_i) = sum_j K_H(t_i, sbar_j) sqrt(d_sub) xi_j; kernel
                // values accumulate column-wise from the rate integral
                for j in 0..n_cells {
                    let sbar = (j as f64 + 0.5) * d_sub;
                    let mut acc = 0.0;
                    let mut prev = sbar;
                    for (i, &t) in grid.iter().enumerate().skip(1) {
                        if t <= sbar {
                            continue;
                        }
                        acc += exp_rate_integral(0.0, sbar, prev, t, t, &params, quad_tol)?;
                        prev = t;
                        weights[i * n_cells + j] = acc * sqrt_d;
                    }
                }
                Ok(Self {
                    params,
                    grid,
                    substep,
                    kind,
                    n_cells,
                    weights,
                })
            }
            SamplerKind::Cholesky => {
                let n_cells = n_steps;
                // covariance of (beta(t_1), ..., beta(t_N))
                let mut cov = vec![0.0; n_cells * n_cells];
                for i in 0..n_cells {
                    for j in 0..n_cells {
                        cov[i * n_cells + j] =
                            fbm_covariance(grid[i + 1], grid[j + 1], &params)?;
                    }
                }
                let chol = cholesky_with_jitter(cov, n_cells)?;
                let mut weights = vec![0.0; grid.len() * n_cells];
                for i in 0..n_cells {
                    for j in 0..=i {
                        weights[(i + 1) * n_cells + j] = chol[i * n_cells + j];
                    }
                }
                Ok(Self {
                    params,
                    grid,
                    substep: 1,
                    kind,
                    n_cells,
                    weights,
                })
            }
        }
    }

    /// Scheme matching a model configuration's grids.
    pub fn for_config(cfg: &ModelConfig) -> Result<Self> {
        Self::new(
            cfg.params()?,
            cfg.time_grid(),
            cfg.substep,
            cfg.sampler,
            cfg.quad_tol,
        )
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn h(&self) -> f64 {
        self.params.h()
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn substep(&self) -> usize {
        self.substep
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Midpoint time of a white-noise cell (Volterra sampling).
    pub fn cell_time(&self, cell: usize) -> f64 {
        let t_final = *self.grid.last().unwrap();
        (cell as f64 + 0.5) * t_final / self.n_cells as f64
    }

    /// Weight multiplying a unit perturbation of one cell in the path map;
    /// for the Volterra scheme this is `sqrt(d_sub)` at every cell.
    pub fn cell_weight(&self) -> f64 {
        let t_final = *self.grid.last().unwrap();
        (t_final / self.n_cells as f64).sqrt()
    }

    /// Path values on the grid from a cell vector.
    pub fn path_from_cells(&self, cells: &[f64]) -> Vec<f64> {
        assert_eq!(cells.len(), self.n_cells);
        let mut path = vec![0.0; self.grid.len()];
        for (i, pv) in path.iter_mut().enumerate().skip(1) {
            let row = &self.weights[i * self.n_cells..(i + 1) * self.n_cells];
            *pv = row
                .iter()
                .zip(cells.iter())
                .map(|(&w, &c)| w * c)
                .sum::<f64>();
        }
        path
    }
}

fn cholesky_with_jitter(mut cov: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    const ATTEMPTS: usize = 4;
    let base_diag: Vec<f64> = (0..n).map(|i| cov[i * n + i]).collect();
    for attempt in 0..ATTEMPTS {
        if attempt > 0 {
            let jitter = 1e-14 * 10f64.powi(attempt as i32 - 1);
            for i in 0..n {
                cov[i * n + i] = base_diag[i] * (1.0 + jitter);
            }
        }
        if let Some(l) = try_cholesky(&cov, n) {
            return Ok(l);
        }
    }
    Err(Error::Cholesky { attempts: ATTEMPTS })
}

fn try_cholesky(cov: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = cov[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// ChaCha stream for `(seed, trajectory index, mode)`; streams are disjoint
/// by construction.
pub fn mode_rng(seed: u64, index: u64, mode: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((index << 16) | mode as u64);
    rng
}

/// Draw one scalar fBm path: unit-normal cells and the mapped path values.
pub fn sample_path(scheme: &NoiseScheme, rng: &mut ChaCha12Rng) -> (Vec<f64>, Vec<f64>) {
    let cells: Vec<f64> = (0..scheme.n_cells())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let path = scheme.path_from_cells(&cells);
    (cells, path)
}

/// One realization of the driving noise: per-mode fBm paths plus the
/// underlying white-noise cells.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    pub h: f64,
    pub grid: Vec<f64>,
    pub n_modes: usize,
    pub substep: usize,
    pub kind: SamplerKind,
    pub seed: u64,
    pub index: u64,
    // mode-major
    cells: Vec<f64>,
    paths: Vec<f64>,
}

impl NoiseBundle {
    /// Deterministic function of `(scheme, n_modes, seed, index)`.
    pub fn sample(scheme: &NoiseScheme, n_modes: usize, seed: u64, index: u64) -> Self {
        let n_cells = scheme.n_cells();
        let n_grid = scheme.grid().len();
        let mut cells = vec![0.0; n_modes * n_cells];
        let mut paths = vec![0.0; n_modes * n_grid];
        for k in 0..n_modes {
            let mut rng = mode_rng(seed, index, k);
            let (c, p) = sample_path(scheme, &mut rng);
            cells[k * n_cells..(k + 1) * n_cells].copy_from_slice(&c);
            paths[k * n_grid..(k + 1) * n_grid].copy_from_slice(&p);
        }
        Self {
            h: scheme.h(),
            grid: scheme.grid().to_vec(),
            n_modes,
            substep: scheme.substep(),
            kind: scheme.kind(),
            seed,
            index,
            cells,
            paths,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len() / self.n_modes
    }

    /// `beta_k(t_i)`.
    pub fn path_value(&self, mode: usize, t_idx: usize) -> f64 {
        self.paths[mode * self.grid.len() + t_idx]
    }

    pub fn path(&self, mode: usize) -> &[f64] {
        &self.paths[mode * self.grid.len()..(mode + 1) * self.grid.len()]
    }

    pub fn cells(&self, mode: usize) -> &[f64] {
        let n = self.n_cells();
        &self.cells[mode * n..(mode + 1) * n]
    }

    /// Grid increment `beta_k(t_{i+1}) - beta_k(t_i)`.
    pub fn increment(&self, mode: usize, step: usize) -> f64 {
        self.path_value(mode, step + 1) - self.path_value(mode, step)
    }

    /// Copy with one white-noise cell shifted by `delta`; the affected
    /// mode's path is rebuilt through the scheme.
    pub fn perturb_cell(
        &self,
        scheme: &NoiseScheme,
        mode: usize,
        cell: usize,
        delta: f64,
    ) -> Self {
        let mut out = self.clone();
        let n = self.n_cells();
        out.cells[mode * n + cell] += delta;
        let path = scheme.path_from_cells(out.cells(mode));
        out.paths[mode * self.grid.len()..(mode + 1) * self.grid.len()].copy_from_slice(&path);
        out
    }

    /// Partial-sum field value `W_H([0,x] x [0,t]) = sum_k beta_k(t) int_0^x a_k`.
    /// `t` must lie on the grid.
    pub fn field_value(&self, x: f64, t: f64) -> Result<f64> {
        if !(0.0..=crate::spectral::DOMAIN_LEN).contains(&x) {
            return Err(Error::Domain(format!("x = {x} outside [0, pi]")));
        }
        let i = self.grid_index(t)?;
        Ok((0..self.n_modes)
            .map(|k| self.path_value(k, i) * basis_antiderivative(k, x))
            .sum())
    }

    fn grid_index(&self, t: f64) -> Result<usize> {
        let t_final = *self.grid.last().unwrap();
        let dt = t_final / self.n_steps() as f64;
        let i = (t / dt).round() as i64;
        if i < 0 || i > self.n_steps() as i64 || (t - i as f64 * dt).abs() > 1e-9 * t_final {
            return Err(Error::OffGrid { t });
        }
        Ok(i as usize)
    }

    /// Mode-k coefficient of the stochastic convolution at grid index `i`:
    /// the midpoint-exponent discrete sum
    /// `sum_{j < i} exp(-k^4 (t_i - sbar_j)) (beta_k(t_{j+1}) - beta_k(t_j))`.
    pub fn convolution_coeff(&self, mode: usize, t_idx: usize) -> f64 {
        let lam = ((mode * mode) as f64).powi(2);
        let t = self.grid[t_idx];
        let mut acc = 0.0;
        for j in 0..t_idx {
            let sbar = 0.5 * (self.grid[j] + self.grid[j + 1]);
            acc += (-lam * (t - sbar)).exp() * self.increment(mode, j);
        }
        acc
    }

    /// Stochastic convolution field at grid index `i` (all modes).
    pub fn convolution(&self, t_idx: usize) -> SpectralField {
        let coeffs = (0..self.n_modes)
            .map(|k| self.convolution_coeff(k, t_idx))
            .collect();
        SpectralField::from_coeffs(coeffs)
    }

    /// Binary dump: header `{magic, version, H, K, N_t, seed}` plus sampler
    /// metadata, then row-major path and cell doubles (little endian).
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(b"FCHB")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&self.h.to_le_bytes())?;
        w.write_all(&(self.n_modes as u64).to_le_bytes())?;
        w.write_all(&(self.n_steps() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.substep as u64).to_le_bytes())?;
        let kind = match self.kind {
            SamplerKind::Volterra => 0u8,
            SamplerKind::Cholesky => 1u8,
        };
        w.write_all(&[kind])?;
        w.write_all(&self.index.to_le_bytes())?;
        w.write_all(&self.grid.last().unwrap().to_le_bytes())?;
        for &v in self.paths.iter().chain(self.cells.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
            r.read_exact(buf)
                .map_err(|e| Error::Domain(format!("bundle read: {e}")))
        }
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != b"FCHB" {
            return Err(Error::Domain("bundle read: bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        read_exact(r, &mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(Error::Domain("bundle read: unsupported version".into()));
        }
        read_exact(r, &mut b8)?;
        let h = f64::from_le_bytes(b8);
        read_exact(r, &mut b8)?;
        let n_modes = u64::from_le_bytes(b8) as usize;
        read_exact(r, &mut b8)?;
        let n_steps = u64::from_le_bytes(b8) as usize;
        read_exact(r, &mut b8)?;
        let seed = u64::from_le_bytes(b8);
        read_exact(r, &mut b8)?;
        let substep = u64::from_le_bytes(b8) as usize;
        let mut kb = [0u8; 1];
        read_exact(r, &mut kb)?;
        let kind = match kb[0] {
            0 => SamplerKind::Volterra,
            1 => SamplerKind::Cholesky,
            other => return Err(Error::Domain(format!("bundle read: bad sampler {other}"))),
        };
        read_exact(r, &mut b8)?;
        let index = u64::from_le_bytes(b8);
        read_exact(r, &mut b8)?;
        let t_final = f64::from_le_bytes(b8);
        let grid: Vec<f64> = (0..=n_steps)
            .map(|i| i as f64 * t_final / n_steps as f64)
            .collect();
        let n_cells = match kind {
            SamplerKind::Volterra => n_steps * substep,
            SamplerKind::Cholesky => n_steps,
        };
        let mut paths = vec![0.0; n_modes * (n_steps + 1)];
        for v in paths.iter_mut() {
            read_exact(r, &mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        let mut cells = vec![0.0; n_modes * n_cells];
        for v in cells.iter_mut() {
            read_exact(r, &mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        Ok(Self {
            h,
            grid,
            n_modes,
            substep,
            kind,
            seed,
            index,
            cells,
            paths,
        })
    }
}

/// Scheme plus identity; hands out bundles per trajectory index.
#[derive(Debug, Clone)]
pub struct NoiseGenerator {
    scheme: NoiseScheme,
    n_modes: usize,
    seed: u64,
}

impl NoiseGenerator {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            scheme: NoiseScheme::for_config(cfg)?,
            n_modes: cfg.n_modes,
            seed,
        })
    }

    pub fn scheme(&self) -> &NoiseScheme {
        &self.scheme
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bundle(&self, index: u64) -> NoiseBundle {
        NoiseBundle::sample(&self.scheme, self.n_modes, self.seed, index)
    }
}

/// Convenience one-shot assembly of a bundle from a configuration. Builds
/// the scheme each call; ensembles should hold a [`NoiseGenerator`].
pub fn sample_bundle(cfg: &ModelConfig, seed: u64, index: u64) -> Result<NoiseBundle> {
    Ok(NoiseGenerator::new(cfg, seed)?.bundle(index))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(kind: SamplerKind) -> ModelConfig {
        ModelConfig {
            n_modes: 4,
            grid_size: 8,
            n_time: 16,
            substep: 2,
            sampler: kind,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn bundles_are_reproducible() {
        for kind in [SamplerKind::Volterra, SamplerKind::Cholesky] {
            let cfg = small_cfg(kind);
            let a = sample_bundle(&cfg, 42, 7).unwrap();
            let b = sample_bundle(&cfg, 42, 7).unwrap();
            assert_eq!(a, b);
            let c = sample_bundle(&cfg, 42, 8).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn paths_start_at_zero() {
        let cfg = small_cfg(SamplerKind::Cholesky);
        let bundle = sample_bundle(&cfg, 1, 0).unwrap();
        for k in 0..cfg.n_modes {
            assert_eq!(bundle.path_value(k, 0), 0.0);
        }
    }

    #[test]
    fn single_mode_bundle_is_one_path() {
        let cfg = ModelConfig {
            n_modes: 1,
            grid_size: 2,
            ..small_cfg(SamplerKind::Volterra)
        };
        let scheme = NoiseScheme::for_config(&cfg).unwrap();
        let bundle = NoiseBundle::sample(&scheme, 1, 3, 11);
        let mut rng = mode_rng(3, 11, 0);
        let (_, path) = sample_path(&scheme, &mut rng);
        assert_eq!(bundle.path(0), &path[..]);
    }

    #[test]
    fn field_value_edges() {
        let cfg = small_cfg(SamplerKind::Cholesky);
        let bundle = sample_bundle(&cfg, 5, 0).unwrap();
        assert_eq!(bundle.field_value(0.0, 0.5).unwrap(), 0.0);
        assert_eq!(bundle.field_value(1.0, 0.0).unwrap(), 0.0);
        assert!(matches!(
            bundle.field_value(1.0, 0.5 * cfg.dt()),
            Err(Error::OffGrid { .. })
        ));
        assert!(bundle.field_value(-0.3, 0.5).is_err());
    }

    #[test]
    fn convolution_mode_zero_telescopes_to_the_path() {
        let cfg = small_cfg(SamplerKind::Cholesky);
        let bundle = sample_bundle(&cfg, 9, 2).unwrap();
        let i = cfg.n_time / 2;
        let conv = bundle.convolution(i);
        assert!((conv.coeffs()[0] - bundle.path_value(0, i)).abs() < 1e-13);
        // t = 0: zero field
        let z = bundle.convolution(0);
        assert!(z.coeffs().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn binary_roundtrip() {
        for kind in [SamplerKind::Volterra, SamplerKind::Cholesky] {
            let cfg = small_cfg(kind);
            let bundle = sample_bundle(&cfg, 13, 4).unwrap();
            let mut buf = Vec::new();
            bundle.write_to(&mut buf).unwrap();
            let back = NoiseBundle::read_from(&mut buf.as_slice()).unwrap();
            assert_eq!(bundle, back);
        }
        assert!(NoiseBundle::read_from(&mut &b"junk"[..]).is_err());
    }

    #[test]
    fn perturbation_shifts_one_mode_linearly() {
        let cfg = small_cfg(SamplerKind::Volterra);
        let scheme = NoiseScheme::for_config(&cfg).unwrap();
        let bundle = NoiseBundle::sample(&scheme, cfg.n_modes, 21, 0);
        let eps = 0.5;
        let pert = bundle.perturb_cell(&scheme, 1, 3, eps);
        // untouched modes identical
        assert_eq!(bundle.path(0), pert.path(0));
        assert_eq!(bundle.path(2), pert.path(2));
        // touched mode shifts by eps * weight column
        for i in 0..=cfg.n_time {
            let expect = bundle.path_value(1, i)
                + eps * scheme.weights[i * scheme.n_cells() + 3];
            assert!((pert.path_value(1, i) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn volterra_marginal_variance_close_to_exact() {
        // deterministic check: sum of squared weights at the final time vs
        // R_H(T, T) = T^{2H}; the Volterra discretization bias at substep 8
        // stays below 2 percent
        let cfg = ModelConfig {
            n_modes: 1,
            grid_size: 2,
            n_time: 64,
            substep: 8,
            sampler: SamplerKind::Volterra,
            ..ModelConfig::default()
        };
        let scheme = NoiseScheme::for_config(&cfg).unwrap();
        let n = scheme.n_cells();
        let row = &scheme.weights[cfg.n_time * n..(cfg.n_time + 1) * n];
        let var: f64 = row.iter().map(|w| w * w).sum();
        assert!((var - 1.0).abs() < 0.02, "volterra variance {var}");
    }
}
