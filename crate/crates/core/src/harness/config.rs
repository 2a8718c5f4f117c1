use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dgp::{ProcessKind, SimScenario};
use crate::diagnose::Thresholds;
use crate::error::{Error, Result};
use crate::fit::LambdaGrid;
use crate::penalize::FitPenalty;

/// Factorial design of a simulation run. Every field has a desk-scale
/// default, so a config file only needs to list what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Curves per replicate.
    pub n: usize,
    /// Grid sizes in s and t.
    pub s: usize,
    pub t: usize,
    pub k_t: usize,
    pub k_s: Vec<usize>,
    pub m: Vec<usize>,
    pub processes: Vec<ProcessKind>,
    pub penalties: Vec<FitPenalty>,
    pub snr: Vec<f64>,
    pub gen_basis: Vec<usize>,
    pub gen_lambda: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    /// Worker threads; all available cores when unset.
    pub jobs: Option<usize>,
    pub lambda_grid: LambdaGrid,
    pub epsilon: f64,
    pub fame_floor: f64,
    pub thresholds: Thresholds,
    /// Whether the Fourier systems include the constant function.
    pub fourier_constant: bool,
    /// Record wall-clock time per fit. Off by default so that output files
    /// are byte-for-byte reproducible.
    pub timing: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 50,
            s: 100,
            t: 50,
            k_t: 10,
            k_s: vec![5, 12],
            m: vec![3, 5, 8],
            processes: ProcessKind::ALL.to_vec(),
            penalties: FitPenalty::ALL.to_vec(),
            snr: vec![10.0, 1000.0],
            gen_basis: vec![4, 8],
            gen_lambda: vec![0.1, 1.0],
            replicates: 10,
            seed: 1,
            jobs: None,
            lambda_grid: LambdaGrid::default(),
            epsilon: 0.1,
            fame_floor: 1e-10,
            thresholds: Thresholds::default(),
            fourier_constant: true,
            timing: false,
        }
    }
}

impl SimConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.s < 4 || self.t < 4 {
            return Err(Error::invalid("need n >= 1 curves and grids of at least 4 points"));
        }
        if self.k_t < 4 || self.k_t > self.t {
            return Err(Error::invalid("k_t must lie in 4..=t"));
        }
        if self.k_s.iter().any(|&k| k < 4 || k > self.s) {
            return Err(Error::invalid("every k_s must lie in 4..=s"));
        }
        if self.m.iter().any(|&m| m == 0 || m + 2 > self.s) {
            return Err(Error::invalid("every M must lie in 1..=s-2"));
        }
        if self.snr.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::invalid("SNR levels must be positive"));
        }
        if self.gen_basis.iter().any(|&k| k < 4) || self.gen_lambda.iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::invalid("generator basis sizes must be >= 4 and lambdas >= 0"));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("need at least one replicate"));
        }
        if !(self.epsilon > 0.0) || !(self.fame_floor > 0.0) {
            return Err(Error::invalid("epsilon and fame_floor must be positive"));
        }
        if self.jobs == Some(0) {
            return Err(Error::invalid("jobs must be positive"));
        }
        let empty = [
            self.k_s.is_empty(),
            self.m.is_empty(),
            self.processes.is_empty(),
            self.penalties.is_empty(),
            self.snr.is_empty(),
            self.gen_basis.is_empty(),
            self.gen_lambda.is_empty(),
        ];
        if empty.iter().any(|&e| e) {
            return Err(Error::invalid("every factor needs at least one level"));
        }
        self.lambda_grid.validate()
    }

    /// All factorial cells in output order: process, M, K_s, penalty, SNR,
    /// generator basis, generator lambda. Cells whose generator basis is
    /// larger than the fitting basis are left out.
    pub fn scenarios(&self) -> Vec<SimScenario> {
        let mut out = Vec::new();
        for &process_kind in &self.processes {
            for &m in &self.m {
                for &k_s in &self.k_s {
                    for &penalty_kind in &self.penalties {
                        for &snr in &self.snr {
                            for &gen_basis_size in &self.gen_basis {
                                if gen_basis_size > k_s {
                                    continue;
                                }
                                for &gen_lambda in &self.gen_lambda {
                                    out.push(SimScenario {
                                        penalty_kind,
                                        k_s,
                                        m,
                                        process_kind,
                                        snr,
                                        gen_basis_size,
                                        gen_lambda,
                                        replicate_seed: self.seed,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Number of cells dropped because the generator basis exceeds `K_s`.
    pub fn skipped_cells(&self) -> usize {
        let per_k = self.processes.len() * self.m.len() * self.penalties.len() * self.snr.len() * self.gen_lambda.len();
        self.k_s
            .iter()
            .map(|&k| self.gen_basis.iter().filter(|&&g| g > k).count() * per_k)
            .sum()
    }
}
