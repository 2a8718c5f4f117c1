use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::dgp::{eigen_system_with, gen_response, sample_coef_surface, sample_covariate, EigenOptions, ProcessKind, SimScenario};
use crate::error::{Error, Result};
use crate::fit::{assemble_design, fit_model, FitSpec, TensorDesign};
use crate::funbasis::{bspline_basis, make_equidistant_grid, quadrature_weights, Grid, QuadratureWeights};
use crate::penalize::{FitPenalty, PenaltyRecipe};

use super::config::SimConfig;
use super::metrics::{rimse_beta, rimse_y};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    /// The penalized problem had no unique solution.
    Singular,
    /// Any other failure (data generation, numerics).
    Error,
}

impl Status {
    pub fn is_ok(self) -> bool {
        self == Status::Ok
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Ok => "ok",
            Status::Singular => "singular",
            Status::Error => "error",
        })
    }
}

impl FromStr for Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(Status::Ok),
            "singular" => Ok(Status::Singular),
            "error" => Ok(Status::Error),
            _ => Err(Error::Data(format!("unknown status '{s}'"))),
        }
    }
}

/// One fitted replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub process: ProcessKind,
    pub m: usize,
    pub k_s: usize,
    pub penalty: FitPenalty,
    pub snr: f64,
    pub gen_k: usize,
    pub gen_lambda: f64,
    pub rep: usize,
    pub rimse_beta: f64,
    pub rimse_y: f64,
    pub kappa: f64,
    pub overlap: f64,
    pub flagged: bool,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub status: Status,
    pub runtime_ms: u64,
}

/// Grids and weights shared by every replicate of a run.
struct Setting {
    grid_s: Grid,
    grid_t: Grid,
    w_s: QuadratureWeights,
    w_t: QuadratureWeights,
}

impl Setting {
    fn new(cfg: &SimConfig) -> Result<Self> {
        let grid_s = make_equidistant_grid(cfg.s, (0.0, 1.0))?;
        let grid_t = make_equidistant_grid(cfg.t, (0.0, 1.0))?;
        let w_s = quadrature_weights(&grid_s);
        let w_t = quadrature_weights(&grid_t);
        Ok(Setting {
            grid_s,
            grid_t,
            w_s,
            w_t,
        })
    }
}

/// One simulated data set: covariate, true surface, response and signal.
pub struct SimData {
    pub x: crate::fpc::FunctionalSample,
    pub beta: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub signal: DMatrix<f64>,
}

/// Draws the data of replicate `rep`. The stream depends only on the
/// data-generating factors, so every penalty and basis size sees the same
/// data.
pub fn simulate_data(cfg: &SimConfig, scenario: &SimScenario, rep: usize) -> Result<SimData> {
    let st = Setting::new(cfg)?;
    simulate_in(cfg, &st, scenario, rep)
}

fn simulate_in(cfg: &SimConfig, st: &Setting, scenario: &SimScenario, rep: usize) -> Result<SimData> {
    let mut rng = scenario.data_rng(rep);
    let opts = EigenOptions {
        fourier_constant: cfg.fourier_constant,
    };
    let sys = eigen_system_with(scenario.process_kind, scenario.m, &st.grid_s, &st.w_s, opts)?;
    let x = sample_covariate(&sys, cfg.n, &mut rng)?;
    let beta = sample_coef_surface(scenario.gen_basis_size, scenario.gen_lambda, &st.grid_s, &st.grid_t, &mut rng)?;
    let (y, signal) = gen_response(&x, &beta, &st.w_s, scenario.snr, &mut rng)?;
    Ok(SimData {
        x,
        beta: beta.values,
        y: y.values().clone(),
        signal: signal.values().clone(),
    })
}

fn blank_result(scenario: &SimScenario, rep: usize) -> SimResult {
    SimResult {
        process: scenario.process_kind,
        m: scenario.m,
        k_s: scenario.k_s,
        penalty: scenario.penalty_kind,
        snr: scenario.snr,
        gen_k: scenario.gen_basis_size,
        gen_lambda: scenario.gen_lambda,
        rep,
        rimse_beta: f64::INFINITY,
        rimse_y: f64::INFINITY,
        kappa: f64::NAN,
        overlap: f64::NAN,
        flagged: false,
        lambda_s: f64::NAN,
        lambda_t: f64::NAN,
        status: Status::Error,
        runtime_ms: 0,
    }
}

fn fit_one(cfg: &SimConfig, st: &Setting, design: &TensorDesign, data: &SimData, scenario: &SimScenario, rep: usize) -> SimResult {
    let start = Instant::now();
    let mut out = blank_result(scenario, rep);
    let spec = FitSpec {
        recipe: PenaltyRecipe {
            kind: scenario.penalty_kind,
            epsilon: cfg.epsilon,
            fame_floor: cfg.fame_floor,
        },
        t_order: 1,
        grid: cfg.lambda_grid.clone(),
        thresholds: cfg.thresholds,
    };
    match fit_model(design, &data.y, &spec) {
        Ok(fit) => {
            if let Some(d) = &fit.diagnostics {
                out.kappa = d.kappa;
                out.overlap = d.overlap;
                out.flagged = d.flagged;
            }
            out.lambda_s = fit.lambda_s;
            out.lambda_t = fit.lambda_t;
            let metrics = rimse_beta(&fit.surface, &data.beta, &st.w_s, &st.w_t)
                .and_then(|rb| rimse_y(&fit.fitted, &data.signal, &data.y, &st.w_t).map(|ry| (rb, ry)));
            match metrics {
                Ok((rb, ry)) => {
                    out.rimse_beta = rb;
                    out.rimse_y = ry;
                    out.status = Status::Ok;
                }
                Err(e) => log::warn!("metrics failed for {scenario:?} rep {rep}: {e}"),
            }
        }
        Err(Error::NonIdentifiable { report, .. }) => {
            out.status = Status::Singular;
            if let Some(r) = report {
                out.kappa = r.kappa;
                out.overlap = r.overlap;
                out.flagged = r.flagged;
            }
        }
        Err(e) => log::warn!("fit failed for {scenario:?} rep {rep}: {e}"),
    }
    if cfg.timing {
        out.runtime_ms = start.elapsed().as_millis() as u64;
    }
    out
}

/// Fits every listed (K_s, penalty) pair on one data set.
fn fit_data_set(cfg: &SimConfig, st: &Setting, cells: &[&SimScenario], rep: usize) -> Vec<SimResult> {
    let first = cells[0];
    let data = match simulate_in(cfg, st, first, rep) {
        Ok(d) => d,
        Err(e) => {
            log::warn!("data generation failed for {first:?} rep {rep}: {e}");
            return cells.iter().map(|c| blank_result(c, rep)).collect();
        }
    };
    let mut designs: Vec<(usize, Result<TensorDesign>)> = Vec::new();
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        if !designs.iter().any(|(k, _)| *k == cell.k_s) {
            let d = bspline_basis(&st.grid_s, cell.k_s, 3)
                .and_then(|b_s| Ok((b_s, bspline_basis(&st.grid_t, cfg.k_t, 3)?)))
                .and_then(|(b_s, b_t)| assemble_design(&data.x, &st.w_s, &b_s, &b_t));
            designs.push((cell.k_s, d));
        }
        let design = &designs.iter().find(|(k, _)| *k == cell.k_s).expect("inserted above").1;
        out.push(match design {
            Ok(design) => fit_one(cfg, st, design, &data, cell, rep),
            Err(e) => {
                log::warn!("design assembly failed for {cell:?}: {e}");
                blank_result(cell, rep)
            }
        });
    }
    out
}

/// All replicates of a single cell.
pub fn run_scenario(cfg: &SimConfig, scenario: &SimScenario, n_replicates: usize) -> Result<Vec<SimResult>> {
    scenario.validate()?;
    let st = Setting::new(cfg)?;
    let results = with_pool(cfg.jobs, || {
        (0..n_replicates)
            .into_par_iter()
            .map(|rep| fit_data_set(cfg, &st, &[scenario], rep).pop().expect("one cell"))
            .collect::<Vec<_>>()
    })?;
    Ok(results)
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Runs the whole factorial design. Each data set is generated once and
/// fitted with every basis size and penalty; rows come back in the order of
/// [`SimConfig::scenarios`], then replicate.
pub fn run_study(cfg: &SimConfig) -> Result<Vec<SimResult>> {
    cfg.validate()?;
    let st = Setting::new(cfg)?;
    let scenarios = cfg.scenarios();
    let skipped = cfg.skipped_cells();
    if skipped > 0 {
        log::info!("skipping {skipped} cells whose generator basis exceeds K_s");
    }

    // Group cells by the factors that determine the data.
    type DataKey = (ProcessKind, usize, u64, usize, u64);
    let data_key = |c: &SimScenario| -> DataKey {
        (c.process_kind, c.m, c.snr.to_bits(), c.gen_basis_size, c.gen_lambda.to_bits())
    };
    let mut groups: Vec<(DataKey, Vec<usize>)> = Vec::new();
    for (i, c) in scenarios.iter().enumerate() {
        let key = data_key(c);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    let jobs: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|g| (0..cfg.replicates).map(move |rep| (g, rep)))
        .collect();

    let per_job = with_pool(cfg.jobs, || {
        jobs.par_iter()
            .map(|&(g, rep)| {
                let members = &groups[g].1;
                let cells: Vec<&SimScenario> = members.iter().map(|&i| &scenarios[i]).collect();
                let rows = fit_data_set(cfg, &st, &cells, rep);
                members.iter().copied().zip(rows).map(|(i, r)| (i, rep, r)).collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    })?;

    let mut rows: Vec<(usize, usize, SimResult)> = per_job.into_iter().flatten().collect();
    rows.sort_by_key(|(i, rep, _)| (*i, *rep));
    Ok(rows.into_iter().map(|(_, _, r)| r).collect())
}
