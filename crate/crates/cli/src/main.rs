//! `fch`: spectral simulation and verification of the 1-D stochastic
//! Cahn-Hilliard equation driven by fractional-in-time, white-in-space
//! noise. Every command writes CSV artifacts plus a manifest into a per-run
//! directory and exits nonzero when an asserted criterion fails.

mod config;
mod manifest;
mod runs;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{parse_config, LoadedConfig};
use runs::Ctx;

#[derive(Parser)]
#[command(name = "fch", version, about = "fractional Cahn-Hilliard simulation and verification")]
struct Cli {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// master 64-bit seed (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// worker threads (results are independent of this)
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// output directory for run artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Hurst exponent override
    #[arg(long = "H", global = true)]
    hurst: Option<f64>,

    /// noise amplitude override
    #[arg(long, global = true)]
    sigma: Option<f64>,

    /// spectral truncation override
    #[arg(long, global = true)]
    n_modes: Option<usize>,

    /// time-step count override
    #[arg(long, global = true)]
    n_time: Option<usize>,

    /// Monte-Carlo sample count override
    #[arg(long, global = true)]
    samples: Option<usize>,

    /// trajectory-ensemble size override
    #[arg(long, global = true)]
    n_traj: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Sample one noise bundle and dump paths plus the binary layout
    NoiseSample,
    /// Solve one trajectory and export values and coefficients
    Solve,
    /// Run the Picard iteration and test its decay
    Picard,
    /// Propagate the Malliavin derivative at the target point
    Malliavin,
    /// Monte-Carlo variance of the stochastic convolution vs quadrature
    VerifyIsometry,
    /// Window-norm exponent scans (deterministic and Monte-Carlo)
    VerifyExponents,
    /// Windowed source mass against its closed-form lower bound
    VerifyLowerBound,
    /// Almost-sure positivity of the squared Malliavin norm
    VerifyPositivity,
    /// Ensemble density of u(x*, t*): atoms, CDF jumps, KDE
    Density,
    /// Every verification in sequence
    VerifyAll,
}

fn load(cli: &Cli) -> Result<LoadedConfig, fch_core::Error> {
    let mut loaded = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                fch_core::Error::Config(vec![format!("cannot read {}: {e}", path.display())])
            })?;
            parse_config(&text)?
        }
        None => parse_config("")?,
    };
    let mut revalidate = false;
    if let Some(h) = cli.hurst {
        loaded.model.h = h;
        loaded.explicit.insert("H".into());
        revalidate = true;
    }
    if let Some(s) = cli.sigma {
        loaded.model.sigma = s;
        loaded.explicit.insert("sigma".into());
    }
    if let Some(k) = cli.n_modes {
        loaded.model.n_modes = k;
        loaded.model.grid_size = loaded.model.grid_size.max(2 * k);
        loaded.explicit.insert("n_modes".into());
        revalidate = true;
    }
    if let Some(n) = cli.n_time {
        loaded.model.n_time = n;
        loaded.explicit.insert("n_time".into());
        revalidate = true;
    }
    if let Some(s) = cli.samples {
        loaded.settings.samples = s;
        loaded.explicit.insert("samples".into());
    }
    if let Some(n) = cli.n_traj {
        loaded.settings.n_traj = n;
        loaded.explicit.insert("n_traj".into());
    }
    if let Some(seed) = cli.seed {
        loaded.settings.seed = seed;
        loaded.explicit.insert("seed".into());
    }
    if revalidate {
        loaded.model.validate()?;
    }
    Ok(loaded)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let loaded = match load(&cli) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::FAILURE;
        }
    };
    let ctx = Ctx {
        model: loaded.model,
        settings: loaded.settings,
        explicit: loaded.explicit,
        out_dir: cli.out.clone(),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        builder = builder.num_threads(w);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot build worker pool: {e}");
            return ExitCode::FAILURE;
        }
    };
    let outcome = pool.install(|| match cli.command {
        Command::NoiseSample => runs::noise_sample(&ctx),
        Command::Solve => runs::solve(&ctx),
        Command::Picard => runs::picard(&ctx),
        Command::Malliavin => runs::malliavin(&ctx),
        Command::VerifyIsometry => runs::run_isometry(&ctx),
        Command::VerifyExponents => runs::run_exponents(&ctx),
        Command::VerifyLowerBound => runs::run_lower_bound(&ctx),
        Command::VerifyPositivity => runs::run_positivity(&ctx),
        Command::Density => runs::run_density(&ctx),
        Command::VerifyAll => runs::run_all(&ctx),
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
