//! Command implementations: each run writes its CSV/SVG artifacts and a
//! manifest into a per-run directory named by config hash and seed, and
//! reports whether every asserted criterion passed.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;

use fch_core::config::ModelConfig;
use fch_core::malliavin::DerivativeSolver;
use fch_core::noise::NoiseGenerator;
use fch_core::solver::{
    solve_trajectory_with, trajectory_coeffs_csv, trajectory_values_csv,
};
use fch_core::verify::{
    check_localization, check_lower_bound, check_picard_decay, check_positivity, density_report,
    scan_restricted_derivative, scan_sup_moment, scan_window_mass, verify_isometry,
};
use serde_json::json;

use crate::config::{config_hash, effective_config, RunSettings};
use crate::manifest::ManifestBuilder;
use crate::svg::{line_chart, Series};

#[derive(Debug)]
pub enum CliError {
    Core(fch_core::Error),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl From<fch_core::Error> for CliError {
    fn from(e: fch_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

type RunResult = Result<bool, CliError>;

pub struct Ctx {
    pub model: ModelConfig,
    pub settings: RunSettings,
    pub explicit: BTreeSet<String>,
    pub out_dir: PathBuf,
}

impl Ctx {
    fn manifest(&self, command: &str) -> Result<ManifestBuilder, CliError> {
        let hash = config_hash(&self.model, &self.settings);
        let dir = self
            .out_dir
            .join(format!("{command}-{}-s{}", &hash[..12], self.settings.seed));
        std::fs::create_dir_all(&dir)?;
        let mut mb = ManifestBuilder::new(&dir, hash, self.settings.seed, command);
        mb.write_file(
            "effective_config.cfg",
            effective_config(&self.model, &self.settings).as_bytes(),
        )?;
        Ok(mb)
    }

    /// Derivative studies default to a lighter discretization unless the
    /// sizes were set explicitly.
    fn malliavin_model(&self) -> ModelConfig {
        let mut m = self.model.clone();
        if !self.explicit.contains("n_modes") {
            m.n_modes = 32;
        }
        if !self.explicit.contains("grid_size") {
            m.grid_size = 2 * m.n_modes;
        }
        if !self.explicit.contains("n_time") {
            m.n_time = 128;
        }
        m
    }

    fn window_grid(&self, horizon: f64, max_level: u32) -> Vec<f64> {
        let (a, b) = self.settings.scan_levels;
        (a..=b.min(max_level))
            .map(|k| horizon / (1u64 << k) as f64)
            .collect()
    }
}

pub fn noise_sample(ctx: &Ctx) -> RunResult {
    let mut mb = ctx.manifest("noise-sample")?;
    let generator = NoiseGenerator::new(&ctx.model, ctx.settings.seed)?;
    let bundle = generator.bundle(0);
    let mut bin = Vec::new();
    bundle
        .write_to(&mut bin)
        .map_err(CliError::Io)?;
    mb.write_file("bundle.bin", &bin)?;
    let mut csv = String::from("t");
    for k in 0..bundle.n_modes {
        csv.push_str(&format!(",mode{k}"));
    }
    csv.push('\n');
    for (i, &t) in bundle.grid.iter().enumerate() {
        csv.push_str(&format!("{t:.16e}"));
        for k in 0..bundle.n_modes {
            csv.push_str(&format!(",{:.16e}", bundle.path_value(k, i)));
        }
        csv.push('\n');
    }
    mb.write_file("fbm_paths.csv", csv.as_bytes())?;
    mb.finish(true)?;
    Ok(true)
}

pub fn solve(ctx: &Ctx) -> RunResult {
    let mut mb = ctx.manifest("solve")?;
    let generator = NoiseGenerator::new(&ctx.model, ctx.settings.seed)?;
    let bundle = generator.bundle(0);
    let tf = ctx.model.transform()?;
    let record = match ctx.model.solver {
        fch_core::SolverKind::Exponential => solve_trajectory_with(&ctx.model, &bundle, &tf)?,
        fch_core::SolverKind::Picard => fch_core::solver::picard_solve(&ctx.model, &bundle)?.0,
    };
    mb.write_file(
        "trajectory.csv",
        trajectory_values_csv(&record, &tf).as_bytes(),
    )?;
    mb.write_file("coefficients.csv", trajectory_coeffs_csv(&record).as_bytes())?;
    let summary = json!({
        "sup_norm": record.sup_norm,
        "omega_flag": record.omega_flag,
        "cutoff_n": record.cutoff_n,
        "method": format!("{:?}", record.method),
        "n_steps": record.n_steps,
    });
    mb.write_file("summary.json", serde_json::to_string_pretty(&summary).unwrap().as_bytes())?;
    mb.finish(true)?;
    Ok(true)
}

pub fn picard(ctx: &Ctx) -> RunResult {
    let mut mb = ctx.manifest("picard")?;
    let mut model = ctx.model.clone();
    if model.cutoff_n.is_none() {
        model.cutoff_n = Some(10);
    }
    let report = check_picard_decay(&model, ctx.settings.seed, 0)?;
    let mut csv = String::from("k,distance\n");
    for (i, d) in report.distances.iter().enumerate() {
        csv.push_str(&format!("{},{d:.16e}\n", i + 1));
    }
    mb.write_file("picard_distances.csv", csv.as_bytes())?;
    let summary = json!({
        "monotone_from_second": report.monotone_from_second,
        "geometric_ssr": report.geometric_ssr,
        "factorial_ssr": report.factorial_ssr,
        "sqrt_factorial_ssr": report.sqrt_factorial_ssr,
        "factorial_wins": report.factorial_wins,
        "fitted_rho": report.fitted_rho,
        "fixed_point_residual": report.fixed_point_residual,
        "solver_agreement_sup": report.solver_agreement,
        "pass": report.pass,
    });
    mb.write_file("summary.json", serde_json::to_string_pretty(&summary).unwrap().as_bytes())?;
    let pass = report.pass;
    mb.finish(pass)?;
    Ok(pass)
}

pub fn malliavin(ctx: &Ctx) -> RunResult {
    let mut mb = ctx.manifest("malliavin")?;
    let model = ctx.malliavin_model();
    let generator = NoiseGenerator::new(&model, ctx.settings.seed)?;
    let bundle = generator.bundle(0);
    let tf = model.transform()?;
    let traj = solve_trajectory_with(&model, &bundle, &tf)?;
    let engine = DerivativeSolver::new(&model, ctx.settings.t_star)?;
    let grid = engine.norm_at(&traj, ctx.settings.x_star, model.sigma)?;
    let windows: Vec<f64> = ctx.window_grid(ctx.settings.t_star, 9);
    mb.write_file("malliavin_grid.csv", grid.to_csv(&tf, &windows).as_bytes())?;
    let summary = json!({
        "x_star": grid.target_x,
        "t_star": grid.target_time,
        "squared_norm": grid.squared_norm,
        "restricted_norms": windows
            .iter()
            .map(|&e| json!({"eps": e, "norm": grid.restricted_norm(e)}))
            .collect::<Vec<_>>(),
    });
    mb.write_file("summary.json", serde_json::to_string_pretty(&summary).unwrap().as_bytes())?;
    mb.finish(true)?;
    Ok(true)
}

fn isometry_points(model: &ModelConfig) -> Vec<(f64, f64)> {
    let t = model.t_final;
    vec![
        (0.0, 0.5 * t),
        (PI / 2.0, 0.5 * t),
        (PI, 0.5 * t),
        (0.0, t),
        (PI / 2.0, t),
        (PI, t),
    ]
}

pub fn run_isometry(ctx: &Ctx) -> RunResult {
    let mut mb = ctx.manifest("verify-isometry")?;
    let report = verify_isometry(
        &ctx.model,
        &isometry_points(&ctx.model),
        ctx.settings.samples,
        ctx.settings.seed,
    )?;
    mb.write_file("isometry.csv", report.csv().as_bytes())?;
    let summary = json!({
        "name": "wiener-isometry",
        "n_samples": report.n_samples,
        "pass_fraction": report.pass_fraction,
        "pass": report.pass,
    });
    mb.write_file("summary.json", serde_json::to_string_pretty(&summary).unwrap().as_bytes())?;
    let pass = report.pass;
    mb.finish(pass)?;
    println!("verify-isometry: {} ({}/{} points within 3 SE)",
        verdict(pass), (report.pass_fraction * report.points.len() as f64).round() as usize,
        report.points.len());
    Ok(pass)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn run_exponents(ctx: &Ctx) -> RunResult {
    let mut mb = ctx.manifest("verify-exponents")?;
    let t = ctx.model.t_final;
    let deltas = ctx.window_grid(t, 9);
    let mut pass = true;
    let mut summaries = Vec::new();
    let mut curves: Vec<(String, Vec<(f64, f64)>)> = Vec::new();

    // deterministic window-mass scan at three Hurst values
    for h in [0.6, 0.75, 0.9] {
        let model = ModelConfig { h, ..ctx.model.clone() };
        let scan = scan_window_mass(&model, t, &deltas)?;
        mb.write_file(&format!("window_mass_H{h}.csv"), scan.csv().as_bytes())?;
        println!(
            "verify-exponents window-mass H={h}: {} (slope {:.4} in [{:.3}, {:.3}])",
            verdict(scan.pass),
            scan.fit.as_ref().map(|f| f.slope).unwrap_or(f64::NAN),
            scan.band.unwrap().0,
            scan.band.unwrap().1
        );
        pass &= scan.pass;
        curves.push((
            format!("H={h}"),
            deltas.iter().copied().zip(scan.values.iter().copied()).collect(),
        ));
        summaries.push(json!({
            "name": scan.name,
            "slope": scan.fit.as_ref().map(|f| f.slope),
            "half_width": scan.fit.as_ref().map(|f| f.half_width),
            "reference": scan.reference_exponent,
            "band": scan.band,
            "pass": scan.pass,
        }));
    }
    let chart_series: Vec<Series> = curves
        .iter()
        .map(|(label, pts)| Series { label, points: pts })
        .collect();
    mb.write_file(
        "window_mass.svg",
        line_chart("whitened window mass vs window size", &chart_series, true).as_bytes(),
    )?;

    // Monte-Carlo sup-moment scan (window boundaries must be grid times)
    let mc_max_level = (ctx.model.n_time as f64).log2().floor() as u32 - 1;
    let mc_deltas = ctx.window_grid(t, mc_max_level);
    let sup = scan_sup_moment(&ctx.model, t, &mc_deltas, ctx.settings.samples, ctx.settings.seed)?;
    mb.write_file("sup_moment.csv", sup.scan.csv().as_bytes())?;
    println!(
        "verify-exponents sup-moment: {} (mc slope {:.4} vs quadrature slope {:.4}; \
         bound exponent {:.4} reported, not asserted)",
        verdict(sup.pass),
        sup.scan.fit.as_ref().map(|f| f.slope).unwrap_or(f64::NAN),
        sup.quad_slope,
        sup.bound_exponent_p2
    );
    pass &= sup.pass;
    summaries.push(json!({
        "name": sup.scan.name,
        "mc_slope": sup.scan.fit.as_ref().map(|f| f.slope),
        "quad_slope": sup.quad_slope,
        "bound_exponent_p2": sup.bound_exponent_p2,
        "bound_exponent_p4": sup.bound_exponent_p4,
        "p4_slope": sup.p4_slope,
        "dominance_pass": sup.dominance_pass,
        "slope_match_pass": sup.slope_match_pass,
        "notes": sup.scan.notes,
        "pass": sup.pass,
    }));

    // restricted Malliavin-norm scan on the lighter derivative model;
    // slope fits need >= 5 windows spanning >= 1.5 decades
    let model = ctx.malliavin_model();
    let t_hat = ctx.settings.t_star;
    let eps_grid = ctx.window_grid(t_hat, 7);
    let n_traj = ctx.settings.n_traj.min(500);
    let restricted =
        scan_restricted_derivative(&model, t_hat, &eps_grid, n_traj, ctx.settings.seed)?;
    mb.write_file("restricted_derivative.csv", restricted.csv().as_bytes())?;
    println!(
        "verify-exponents restricted-derivative: {} (slope {:.4}, reference {:.4})",
        verdict(restricted.pass),
        restricted.fit.as_ref().map(|f| f.slope).unwrap_or(f64::NAN),
        restricted.reference_exponent.unwrap_or(f64::NAN)
    );
    pass &= restricted.pass;
    summaries.push(json!({
        "name": restricted.name,
        "slope": restricted.fit.as_ref().map(|f| f.slope),
        "reference": restricted.reference_exponent,
        "notes": restricted.notes,
        "pass": restricted.pass,
    }));

    mb.write_file(
        "summary.json",
        serde_json::to_string_pretty(&json!({"scans": summaries, "pass": pass}))
            .unwrap()
            .as_bytes(),
    )?;
    mb.finish(pass)?;
    Ok(pass)
}

pub fn run_lower_bound(ctx: &Ctx) -> RunResult {
    let mut mb = ctx.manifest("verify-lower-bound")?;
    let t = ctx.model.t_final;
    let eps_grid = ctx.window_grid(t, 9);
    let xs = [0.0, PI / 4.0, PI / 2.0];
    let mut pass = true;
    let mut summaries = Vec::new();
    for h in [0.6, 0.75, 0.9] {
        let model = ModelConfig { h, ..ctx.model.clone() };
        let report = check_lower_bound(&model, t, &eps_grid, &xs)?;
        mb.write_file(&format!("lower_bound_H{h}.csv"), report.csv().as_bytes())?;
        println!(
            "verify-lower-bound H={h}: grid {} | ratio-decrease {} \
             ({:.3}x over 1e3 shrink, required {:.0}x; {:.3}x over 1e4; ratio slope {:.4})",
            verdict(report.grid_pass),
            verdict(report.ratio_pass),
            report.ratio_decrease,
            report.ratio_requirement,
            report.ratio_decrease_4dec,
            report.ratio_slope
        );
        pass &= report.pass;
        summaries.push(json!({
            "H": h,
            "fitted_constant": report.fitted_constant,
            "grid_pass": report.grid_pass,
            "positive_pass": report.positive_pass,
            "ratio_decrease_1e3": report.ratio_decrease,
            "ratio_required": report.ratio_requirement,
            "ratio_pass": report.ratio_pass,
            "ratio_decrease_1e4": report.ratio_decrease_4dec,
            "ratio_slope": report.ratio_slope,
            "pass": report.pass,
        }));
    }
    mb.write_file(
        "summary.json",
        serde_json::to_string_pretty(&json!({"checks": summaries, "pass": pass}))
            .unwrap()
            .as_bytes(),
    )?;
    mb.finish(pass)?;
    Ok(pass)
}

pub fn run_positivity(ctx: &Ctx) -> RunResult {
    let mut mb = ctx.manifest("verify-positivity")?;
    let model = ctx.malliavin_model();
    let report = check_positivity(
        &model,
        ctx.settings.x_star,
        ctx.settings.t_star,
        ctx.settings.n_traj,
        1e-12,
        ctx.settings.seed,
    )?;
    let summary = json!({
        "n_traj": report.n_traj,
        "threshold": report.threshold,
        "fraction_positive": report.fraction_positive,
        "sensitivity": report.sensitivity,
        "min_norm": report.min_norm,
        "max_norm": report.max_norm,
        "pass": report.pass,
    });
    mb.write_file("positivity.json", serde_json::to_string_pretty(&summary).unwrap().as_bytes())?;
    println!(
        "verify-positivity: {} (fraction {:.4}, min norm {:.3e})",
        verdict(report.pass),
        report.fraction_positive,
        report.min_norm
    );
    let pass = report.pass;
    mb.finish(pass)?;
    Ok(pass)
}

pub fn run_density(ctx: &Ctx) -> RunResult {
    let mut mb = ctx.manifest("density")?;
    let report = density_report(
        &ctx.model,
        ctx.settings.x_star,
        ctx.settings.t_star,
        ctx.settings.samples.max(1000),
        ctx.settings.seed,
    )?;
    mb.write_file("density_kde.csv", report.kde_csv().as_bytes())?;
    if !report.kde.is_empty() {
        let series = [Series {
            label: "kde",
            points: &report.kde,
        }];
        mb.write_file(
            "density.svg",
            line_chart("empirical density of u(x*, t*)", &series, false).as_bytes(),
        )?;
    }
    let summary = json!({
        "n_samples": report.n_samples,
        "mean": report.mean,
        "std": report.std,
        "atom_weight": report.atom_weight,
        "cdf_jump": report.cdf_jump,
        "threshold": report.threshold,
        "bandwidth": report.bandwidth,
        "kde_mass": report.kde_mass,
        "degenerate": report.degenerate,
        "pass": report.pass,
    });
    mb.write_file("summary.json", serde_json::to_string_pretty(&summary).unwrap().as_bytes())?;
    println!(
        "density: {} (atom weight {:.2e}, cdf jump {:.2e}, threshold {:.2e})",
        verdict(report.pass),
        report.atom_weight,
        report.cdf_jump,
        report.threshold
    );
    let pass = report.pass;
    mb.finish(pass)?;
    Ok(pass)
}

pub fn run_all(ctx: &Ctx) -> RunResult {
    let mut pass = true;
    pass &= run_isometry(ctx)?;
    pass &= run_exponents(ctx)?;
    pass &= run_lower_bound(ctx)?;
    pass &= run_positivity(ctx)?;
    pass &= run_density(ctx)?;
    pass &= picard(ctx)?;

    // localization sweep, reported under its own manifest
    let mut mb = ctx.manifest("localization")?;
    let levels = [2u32, 4, 8, 16];
    let report = check_localization(
        &ctx.model,
        ctx.settings.n_traj,
        &levels,
        2,
        ctx.settings.seed,
    )?;
    let summary = json!({
        "levels": report.levels,
        "fractions": report.fractions,
        "equality_level": report.equality_level,
        "flagged": report.flagged,
        "flagged_equal": report.flagged_equal,
        "unflagged_differ": report.unflagged_differ,
        "unflagged_equal_terminal": report.unflagged_equal_terminal,
        "pass": report.pass,
    });
    mb.write_file("localization.json", serde_json::to_string_pretty(&summary).unwrap().as_bytes())?;
    println!(
        "localization: {} ({} flagged, all bit-identical: {})",
        verdict(report.pass),
        report.flagged,
        report.flagged_equal == report.flagged
    );
    mb.finish(report.pass)?;
    pass &= report.pass;

    println!("verify-all: {}", verdict(pass));
    Ok(pass)
}
