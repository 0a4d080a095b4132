use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use lowdose_core::experiments::{
    run_diag_propositions, run_eps_sensitivity, run_mse_vs_counts, run_resolution_scaling,
    run_tau_curve, CtSetup, ExperimentConfig, ExperimentKind,
};
use lowdose_core::solvers::{reference_tau, solve};
use lowdose_core::tomo::io::{write_matrix_csv, write_pslb};
use lowdose_core::tomo::forward;
use lowdose_core::{Error, ObjectiveSpec};

#[derive(Parser)]
#[command(name = "lowdose", version, about = "Poisson vs Gaussian-surrogate reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed mixed into every noise draw.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (or file, where the command writes a single file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Tuned test-set MSE per method and count level.
    MseVsCounts(Common),
    /// MSE across the epsilon grid for floor-dependent methods.
    EpsSensitivity(Common),
    /// Tuning-set MSE over the tau grid.
    TauCurve(Common),
    /// Exact per-mode ratios against their low-dose constants.
    DiagProps(Common),
    /// MSE-optimal resolution against dose.
    ResolutionScaling(Common),
    /// Dump the phantom, and optionally its expected sinogram.
    Phantom {
        #[command(flatten)]
        common: Common,
        /// Also write the expected sinogram at this count level.
        #[arg(long)]
        c: Option<f64>,
    },
    /// Single reconstruction written as an image file (.csv or PSLB).
    Recon {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "poisson-map")]
        method: String,
        #[arg(long, default_value_t = 10.0)]
        c: f64,
        /// Noise realization index.
        #[arg(long, default_value_t = 0)]
        realization: u64,
        /// Variance floor; defaults to the config's `epsilon`.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Absolute regularization weight; overrides `--tau-scale`.
        #[arg(long)]
        tau: Option<f64>,
        /// Multiplier on the data-scaled reference weight.
        #[arg(long, default_value_t = 1.0)]
        tau_scale: f64,
    },
}

/// Errors split by exit code.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    let e = e.into();
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => Failure::Config(e),
        _ => Failure::Runtime(e),
    }
}

fn load_config(common: &Common, kind: Option<ExperimentKind>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path).map_err(|e| Failure::Config(e.into()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(kind) = kind {
        cfg.experiment = kind;
    }
    if let Some(seed) = common.seed {
        cfg.base_seed = seed;
    }
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Config(anyhow!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| Failure::Config(e.into()))?;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate().map_err(|e| Failure::Config(e.into()))?;
    Ok(cfg)
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn write_image(path: &Path, n: usize, pixels: &[f64]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    if is_csv(path) {
        write_matrix_csv(path, n, n, pixels)?;
    } else {
        write_pslb(path, n, n, pixels)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::MseVsCounts(common) => {
            let cfg = load_config(&common, Some(ExperimentKind::MseVsCounts))?;
            let out = run_mse_vs_counts(&cfg).map_err(runtime)?;
            report(&out.write(&cfg.output_dir).map_err(runtime)?);
        }
        Command::EpsSensitivity(common) => {
            let cfg = load_config(&common, Some(ExperimentKind::EpsSensitivity))?;
            let out = run_eps_sensitivity(&cfg).map_err(runtime)?;
            report(&out.write(&cfg.output_dir).map_err(runtime)?);
        }
        Command::TauCurve(common) => {
            let cfg = load_config(&common, Some(ExperimentKind::TauCurve))?;
            let out = run_tau_curve(&cfg).map_err(runtime)?;
            report(&out.write(&cfg.output_dir).map_err(runtime)?);
        }
        Command::DiagProps(common) => {
            let cfg = load_config(&common, Some(ExperimentKind::DiagPropositions))?;
            let path = if is_csv(&cfg.output_dir) {
                cfg.output_dir.clone()
            } else {
                cfg.output_dir.join("diag_propositions.csv")
            };
            let out = run_diag_propositions(&cfg).map_err(runtime)?;
            report(&[out.write(&path).map_err(runtime)?]);
        }
        Command::ResolutionScaling(common) => {
            let cfg = load_config(&common, Some(ExperimentKind::ResolutionScaling))?;
            let out = run_resolution_scaling(&cfg).map_err(runtime)?;
            report(&out.write(&cfg.output_dir).map_err(runtime)?);
        }
        Command::Phantom { common, c } => {
            let cfg = load_config(&common, None)?;
            let setup = CtSetup::from_config(&cfg).map_err(runtime)?;
            let n = cfg.n_side;
            let dir = &cfg.output_dir;
            let img = dir.join("phantom.csv");
            write_image(&img, n, setup.truth.pixels()).map_err(runtime)?;
            let mut written = vec![img];
            if let Some(c) = c {
                let s = setup.dose(c).map_err(runtime)?;
                let sino = forward(&setup.projector, &setup.truth).map_err(runtime)?.scaled(s);
                let path = dir.join(format!("sinogram_c{c}.csv"));
                let g = &setup.geometry;
                write_matrix_csv(&path, g.num_angles, g.num_bins, &sino.values).map_err(runtime)?;
                written.push(path);
            }
            report(&written);
        }
        Command::Recon {
            common,
            method,
            c,
            realization,
            epsilon,
            tau,
            tau_scale,
        } => {
            let cfg = load_config(&common, None)?;
            let objective = ObjectiveSpec::from_name(&method, epsilon.unwrap_or(cfg.epsilon))
                .map_err(|e| Failure::Config(e.into()))?;
            let path = common.out.clone().unwrap_or_else(|| PathBuf::from("recon.pslb"));
            let setup = CtSetup::from_config(&cfg).map_err(runtime)?;
            let inst = setup.instance(c, realization, cfg.base_seed).map_err(runtime)?;
            let tau = match tau {
                Some(t) => t,
                None => tau_scale * reference_tau(&objective, &inst).map_err(runtime)?,
            };
            let result = solve(&objective, &inst, tau, &cfg.solver)
                .with_context(|| format!("{method} at c = {c}"))
                .map_err(runtime)?;
            write_image(&path, cfg.n_side, &result.image).map_err(runtime)?;
            println!(
                "{method} c={c} tau={tau:e} iterations={} converged={} mse_fov={:e}",
                result.iterations,
                result.converged,
                result.fov_mse.unwrap_or(f64::NAN)
            );
            report(&[path]);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
