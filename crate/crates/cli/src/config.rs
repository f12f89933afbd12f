//! Flat `key = value` configuration files: parsing with exhaustive error
//! reporting, the effective-config echo, and the config hash.

use fch_core::config::{ModelConfig, SamplerKind, SolverKind};
use fch_core::error::Error;

use sha2::{Digest, Sha256};
use std::collections::BTreeSet;

/// Runner-level settings that ride alongside the model configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub seed: u64,
    pub samples: usize,
    pub n_traj: usize,
    /// dyadic scan window levels: windows `2^-a .. 2^-b` times the horizon
    pub scan_levels: (u32, u32),
    pub x_star: f64,
    pub t_star: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            seed: 1,
            samples: 10_000,
            n_traj: 500,
            scan_levels: (2, 9),
            x_star: std::f64::consts::FRAC_PI_2,
            t_star: 0.5,
        }
    }
}

/// Parsed file plus the set of keys that were explicitly present (commands
/// with their own defaults only override unset keys).
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub model: ModelConfig,
    pub settings: RunSettings,
    pub explicit: BTreeSet<String>,
}

const KNOWN_KEYS: &[&str] = &[
    "H",
    "T",
    "sigma",
    "f_coeffs",
    "cutoff_n",
    "n_modes",
    "grid_size",
    "n_time",
    "substep",
    "sampler",
    "solver",
    "picard_kmax",
    "picard_tol",
    "quad_tol",
    "u0_const",
    "u0_cos_amp",
    "u0_cos_mode",
    "allow_nonconforming_f",
    "seed",
    "samples",
    "n_traj",
    "scan_levels",
    "x_star",
    "t_star",
];

/// Parse a configuration file body. Every unknown key, malformed value, and
/// violated model constraint is listed in one error.
pub fn parse_config(text: &str) -> Result<LoadedConfig, Error> {
    let mut model = ModelConfig::default();
    let mut settings = RunSettings::default();
    let mut explicit = BTreeSet::new();
    let mut problems: Vec<String> = Vec::new();

    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            problems.push(format!("line {}: expected `key = value`", ln + 1));
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        if !KNOWN_KEYS.contains(&key) {
            problems.push(format!("line {}: unknown key `{key}`", ln + 1));
            continue;
        }
        explicit.insert(key.to_string());
        let mut bad = |what: &str| problems.push(format!("line {}: {key}: {what}", ln + 1));
        macro_rules! num {
            ($target:expr, $ty:ty) => {
                match value.parse::<$ty>() {
                    Ok(v) => $target = v,
                    Err(e) => bad(&format!("{e}")),
                }
            };
        }
        match key {
            "H" => num!(model.h, f64),
            "T" => num!(model.t_final, f64),
            "sigma" => num!(model.sigma, f64),
            "f_coeffs" => {
                let parts: Vec<_> = value.split(',').map(str::trim).collect();
                if parts.len() != 4 {
                    bad("expected four comma-separated coefficients c3,c2,c1,c0");
                } else {
                    for (slot, part) in model.f_coeffs.iter_mut().zip(parts.iter()) {
                        match part.parse::<f64>() {
                            Ok(v) => *slot = v,
                            Err(e) => problems
                                .push(format!("line {}: f_coeffs: {e} in `{part}`", ln + 1)),
                        }
                    }
                }
            }
            "cutoff_n" => {
                if value == "none" {
                    model.cutoff_n = None;
                } else {
                    match value.parse::<u32>() {
                        Ok(v) => model.cutoff_n = Some(v),
                        Err(e) => bad(&format!("{e} (use an integer or `none`)")),
                    }
                }
            }
            "n_modes" => num!(model.n_modes, usize),
            "grid_size" => num!(model.grid_size, usize),
            "n_time" => num!(model.n_time, usize),
            "substep" => num!(model.substep, usize),
            "sampler" => match SamplerKind::parse(value) {
                Some(v) => model.sampler = v,
                None => bad("expected `volterra` or `cholesky`"),
            },
            "solver" => match SolverKind::parse(value) {
                Some(v) => model.solver = v,
                None => bad("expected `exponential` or `picard`"),
            },
            "picard_kmax" => num!(model.picard_kmax, usize),
            "picard_tol" => num!(model.picard_tol, f64),
            "quad_tol" => num!(model.quad_tol, f64),
            "u0_const" => num!(model.u0_const, f64),
            "u0_cos_amp" => num!(model.u0_cos_amp, f64),
            "u0_cos_mode" => num!(model.u0_cos_mode, usize),
            "allow_nonconforming_f" => match value {
                "true" => model.allow_nonconforming_f = true,
                "false" => model.allow_nonconforming_f = false,
                _ => bad("expected `true` or `false`"),
            },
            "seed" => num!(settings.seed, u64),
            "samples" => num!(settings.samples, usize),
            "n_traj" => num!(settings.n_traj, usize),
            "scan_levels" => {
                let parts: Vec<_> = value.split(',').map(str::trim).collect();
                let parsed: Option<(u32, u32)> = match parts.as_slice() {
                    [a, b] => a.parse().ok().zip(b.parse().ok()),
                    _ => None,
                };
                match parsed {
                    Some((a, b)) if a < b => settings.scan_levels = (a, b),
                    _ => bad("expected `a,b` with a < b"),
                }
            }
            "x_star" => num!(settings.x_star, f64),
            "t_star" => num!(settings.t_star, f64),
            _ => unreachable!(),
        }
    }

    // default grid size tracks the mode count when not set explicitly
    if !explicit.contains("grid_size") && explicit.contains("n_modes") {
        model.grid_size = 2 * model.n_modes;
    }
    if let Err(Error::Config(more)) = model.validate() {
        problems.extend(more);
    }
    if !(settings.x_star >= 0.0 && settings.x_star <= std::f64::consts::PI) {
        problems.push(format!("x_star: {} outside [0, pi]", settings.x_star));
    }
    if !(settings.t_star > 0.0 && settings.t_star <= model.t_final) {
        problems.push(format!("t_star: {} outside (0, T]", settings.t_star));
    }
    if problems.is_empty() {
        Ok(LoadedConfig {
            model,
            settings,
            explicit,
        })
    } else {
        Err(Error::Config(problems))
    }
}

/// Canonical `key = value` text for a configuration; reparsing it yields an
/// identical configuration.
pub fn effective_config(model: &ModelConfig, settings: &RunSettings) -> String {
    let mut out = String::new();
    let f = |v: f64| format!("{v:.17e}");
    out.push_str(&format!("H = {}\n", f(model.h)));
    out.push_str(&format!("T = {}\n", f(model.t_final)));
    out.push_str(&format!("sigma = {}\n", f(model.sigma)));
    out.push_str(&format!(
        "f_coeffs = {},{},{},{}\n",
        f(model.f_coeffs[0]),
        f(model.f_coeffs[1]),
        f(model.f_coeffs[2]),
        f(model.f_coeffs[3])
    ));
    match model.cutoff_n {
        Some(n) => out.push_str(&format!("cutoff_n = {n}\n")),
        None => out.push_str("cutoff_n = none\n"),
    }
    out.push_str(&format!("n_modes = {}\n", model.n_modes));
    out.push_str(&format!("grid_size = {}\n", model.grid_size));
    out.push_str(&format!("n_time = {}\n", model.n_time));
    out.push_str(&format!("substep = {}\n", model.substep));
    out.push_str(&format!("sampler = {}\n", model.sampler.as_str()));
    out.push_str(&format!("solver = {}\n", model.solver.as_str()));
    out.push_str(&format!("picard_kmax = {}\n", model.picard_kmax));
    out.push_str(&format!("picard_tol = {}\n", f(model.picard_tol)));
    out.push_str(&format!("quad_tol = {}\n", f(model.quad_tol)));
    out.push_str(&format!("u0_const = {}\n", f(model.u0_const)));
    out.push_str(&format!("u0_cos_amp = {}\n", f(model.u0_cos_amp)));
    out.push_str(&format!("u0_cos_mode = {}\n", model.u0_cos_mode));
    out.push_str(&format!(
        "allow_nonconforming_f = {}\n",
        model.allow_nonconforming_f
    ));
    out.push_str(&format!("seed = {}\n", settings.seed));
    out.push_str(&format!("samples = {}\n", settings.samples));
    out.push_str(&format!("n_traj = {}\n", settings.n_traj));
    out.push_str(&format!(
        "scan_levels = {},{}\n",
        settings.scan_levels.0, settings.scan_levels.1
    ));
    out.push_str(&format!("x_star = {}\n", f(settings.x_star)));
    out.push_str(&format!("t_star = {}\n", f(settings.t_star)));
    out
}

/// Hex SHA-256 of the effective configuration text.
pub fn config_hash(model: &ModelConfig, settings: &RunSettings) -> String {
    let mut hasher = Sha256::new();
    hasher.update(effective_config(model, settings).as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
