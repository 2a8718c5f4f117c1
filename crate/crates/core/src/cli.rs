//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data or
//! runtime error, 3 non-identifiable specification.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::diagnose::{diagnose_with, Thresholds};
use crate::error::{Error, Result};
use crate::fit::{assemble_design, fit_model, surface_rows, FitSpec, LambdaGrid};
use crate::fpc::{center_curvewise, empirical_fpc, truncate_fpc, FunctionalSample};
use crate::funbasis::{bspline_basis, quadrature_weights, QuadratureWeights};
use crate::harness::io::{read_functional_csv, write_plot_data, write_results_csv, write_surface_csv};
use crate::harness::{run_study, SimConfig};
use crate::penalize::{FitPenalty, PenaltyRecipe};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NON_IDENTIFIABLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fofr", version, about = "Penalized function-on-function regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation study described by a JSON config.
    Simulate(SimulateArgs),
    /// Fit a coefficient surface to curves stored in wide CSV files.
    Fit(FitArgs),
    /// Report conditioning and kernel overlap for a covariate sample.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for long-format CSVs used by external plotting.
    #[arg(long)]
    plot_data: Option<PathBuf>,
    /// Record wall-clock time per fit (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct Preprocess {
    /// Replace X by its reconstruction from this many principal components.
    #[arg(long)]
    presmooth: Option<usize>,
    /// Subtract each curve's own mean.
    #[arg(long)]
    center_curves: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    ks: usize,
    #[arg(long)]
    kt: usize,
    #[arg(long)]
    penalty: FitPenalty,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-10)]
    fame_floor: f64,
    /// `min,max,n`: n log-spaced values for both smoothing parameters.
    #[arg(long, value_parser = parse_lambda_grid)]
    lambda_grid: Option<LambdaGrid>,
    #[arg(long, default_value_t = 1)]
    t_order: usize,
    #[arg(long)]
    out: PathBuf,
    /// Long-format `s,t,beta` CSV of the estimated surface.
    #[arg(long)]
    surface: Option<PathBuf>,
    /// Include the coefficient vector in the JSON output.
    #[arg(long)]
    full: bool,
    #[command(flatten)]
    pre: Preprocess,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    ks: usize,
    #[arg(long)]
    penalty: FitPenalty,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pre: Preprocess,
}

fn parse_lambda_grid(s: &str) -> std::result::Result<LambdaGrid, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err("expected min,max,n".into());
    }
    let min: f64 = parts[0].parse().map_err(|_| format!("bad minimum '{}'", parts[0]))?;
    let max: f64 = parts[1].parse().map_err(|_| format!("bad maximum '{}'", parts[1]))?;
    let n: usize = parts[2].parse().map_err(|_| format!("bad count '{}'", parts[2]))?;
    LambdaGrid::log_spaced(min, max, n).map_err(|e| e.to_string())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Diagnose(a) => diagnose_cmd(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonIdentifiable { .. } => EXIT_NON_IDENTIFIABLE,
                _ => EXIT_DATA,
            }
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<i32> {
    let mut cfg = SimConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if a.jobs.is_some() {
        cfg.jobs = a.jobs;
    }
    cfg.timing |= a.timing;
    let results = run_study(&cfg)?;
    write_results_csv(&a.out, &results)?;
    if let Some(dir) = &a.plot_data {
        fs::create_dir_all(dir)?;
        write_plot_data(dir, &results)?;
    }
    log::info!("wrote {} rows to {}", results.len(), a.out.display());
    Ok(EXIT_OK)
}

fn load_covariate(path: &Path, pre: &Preprocess) -> Result<(FunctionalSample, QuadratureWeights)> {
    let mut x = read_functional_csv(path, "X")?.sample;
    let w = quadrature_weights(x.grid());
    if let Some(k) = pre.presmooth {
        x = truncate_fpc(&empirical_fpc(&x, &w)?, k)?;
    }
    if pre.center_curves {
        x = center_curvewise(&x, &w)?.0;
    }
    Ok((x, w))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn fit(a: FitArgs) -> Result<i32> {
    let (x, w_s) = load_covariate(&a.x, &a.pre)?;
    let y = read_functional_csv(&a.y, "Y")?.sample;
    if y.n_curves() != x.n_curves() {
        return Err(Error::Data(format!(
            "X has {} curves but Y has {}",
            x.n_curves(),
            y.n_curves()
        )));
    }
    let b_s = bspline_basis(x.grid(), a.ks, 3)?;
    let b_t = bspline_basis(y.grid(), a.kt, 3)?;
    let design = assemble_design(&x, &w_s, &b_s, &b_t)?;
    let recipe = PenaltyRecipe {
        kind: a.penalty,
        epsilon: a.epsilon,
        fame_floor: a.fame_floor,
    };
    let spec = FitSpec {
        recipe,
        t_order: a.t_order,
        grid: a.lambda_grid.unwrap_or_default(),
        thresholds: Thresholds::default(),
    };
    match fit_model(&design, y.values(), &spec) {
        Ok(fit) => {
            if let Some(d) = fit.diagnostics.as_ref().filter(|d| d.flagged && !fit.constrained) {
                log::warn!(
                    "specification is flagged (kappa {}, overlap {:.3}); the surface may be poorly identified",
                    crate::diagnose::format_float(d.kappa),
                    d.overlap
                );
            }
            write_json(&a.out, &fit.to_json(a.full)?)?;
            if let Some(path) = &a.surface {
                write_surface_csv(path, &surface_rows(&fit, x.grid().points(), y.grid().points())?)?;
            }
            Ok(EXIT_OK)
        }
        Err(Error::NonIdentifiable { message, report }) => {
            eprintln!(
                "warning: coefficient surface is not identifiable under penalty {}: {message}; \
                 consider a constrained, full-rank or ridge penalty",
                a.penalty
            );
            write_json(
                &a.out,
                &json!({
                    "error": "non-identifiable",
                    "message": message,
                    "penalty": a.penalty,
                    "diagnostics": report,
                }),
            )?;
            Ok(EXIT_NON_IDENTIFIABLE)
        }
        Err(e) => Err(e),
    }
}

fn diagnose_cmd(a: DiagnoseArgs) -> Result<i32> {
    let (x, w) = load_covariate(&a.x, &a.pre)?;
    let b_s = bspline_basis(x.grid(), a.ks, 3)?;
    let recipe = PenaltyRecipe {
        epsilon: a.epsilon,
        ..PenaltyRecipe::new(a.penalty)
    };
    let p = recipe.diagnostic_penalty(&x, &w, &b_s)?;
    let report = diagnose_with(&x, &w, &b_s, &p, Thresholds::default())?;
    let mut value = serde_json::to_value(&report)?;
    value["penalty"] = json!(a.penalty);
    value["k_s"] = json!(a.ks);
    write_json(&a.out, &value)?;
    if report.flagged {
        log::warn!("specification is flagged; a constrained or full-rank penalty is advised");
    }
    Ok(EXIT_OK)
}
