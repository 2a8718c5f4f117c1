//! Data-generating processes for the simulation study: eigenfunction
//! systems, Karhunen–Loève covariates, random coefficient surfaces and noisy
//! responses.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fpc::FunctionalSample;
use crate::funbasis::{
    assemble_tensor_penalty, bspline_basis, difference_penalty, BasisMatrix, Grid,
    QuadratureWeights,
};
use crate::penalize::FitPenalty;

/// Eigenfunction systems of the covariate process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProcessKind {
    PolyLin,
    PolyExp,
    FourierConst,
    FourierExp,
    Wiener,
    BrownBridge,
    Poly1Plus,
    Poly2Plus,
    PolyMinus1,
}

impl ProcessKind {
    pub const ALL: [ProcessKind; 9] = [
        ProcessKind::PolyLin,
        ProcessKind::PolyExp,
        ProcessKind::FourierConst,
        ProcessKind::FourierExp,
        ProcessKind::Wiener,
        ProcessKind::BrownBridge,
        ProcessKind::Poly1Plus,
        ProcessKind::Poly2Plus,
        ProcessKind::PolyMinus1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProcessKind::PolyLin => "PolyLin",
            ProcessKind::PolyExp => "PolyExp",
            ProcessKind::FourierConst => "FourierConst",
            ProcessKind::FourierExp => "FourierExp",
            ProcessKind::Wiener => "Wiener",
            ProcessKind::BrownBridge => "BrownBridge",
            ProcessKind::Poly1Plus => "Poly1Plus",
            ProcessKind::Poly2Plus => "Poly2Plus",
            ProcessKind::PolyMinus1 => "PolyMinus1",
        }
    }

    /// Processes whose covariance kernel is constructed to contain (part of)
    /// a difference-penalty null-space.
    pub fn is_antagonistic(self) -> bool {
        matches!(
            self,
            ProcessKind::Poly1Plus | ProcessKind::Poly2Plus | ProcessKind::PolyMinus1
        )
    }

    /// Polynomial degrees of the eigenfunctions, `None` for trigonometric
    /// systems.
    fn poly_degrees(self, m: usize) -> Option<Vec<usize>> {
        match self {
            ProcessKind::PolyLin | ProcessKind::PolyExp => Some((0..m).collect()),
            ProcessKind::Poly1Plus => Some((1..=m).collect()),
            ProcessKind::Poly2Plus => Some((2..=m + 1).collect()),
            ProcessKind::PolyMinus1 => Some(std::iter::once(0).chain(2..=m).collect()),
            _ => None,
        }
    }

    /// Eigenvalue `ν_m` for `m = 1..=M`.
    pub fn eigenvalue(self, m: usize, big_m: usize) -> f64 {
        let mf = m as f64;
        match self {
            ProcessKind::PolyLin
            | ProcessKind::Poly1Plus
            | ProcessKind::Poly2Plus
            | ProcessKind::PolyMinus1 => (big_m as f64 + 1.0 - mf) / big_m as f64,
            ProcessKind::PolyExp | ProcessKind::FourierExp => (-(mf - 1.0) / 2.0).exp(),
            ProcessKind::FourierConst => 1.0,
            ProcessKind::Wiener => (PI / 2.0 * (2.0 * mf + 1.0)).powi(-2),
            ProcessKind::BrownBridge => 1.0 / (PI * mf),
        }
    }
}

impl fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProcessKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProcessKind::ALL
            .iter()
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown process kind '{s}'")))
    }
}

/// Trigonometric eigenfunction `m` (1-based) at `u ∈ [0, 1]` before grid
/// orthonormalization. Polynomial systems have no closed form here.
pub fn trig_eigenfunction(kind: ProcessKind, m: usize, u: f64, fourier_constant: bool) -> Option<f64> {
    let sqrt2 = std::f64::consts::SQRT_2;
    match kind {
        ProcessKind::Wiener => Some(sqrt2 * (PI * (m as f64 - 0.5) * u).sin()),
        ProcessKind::BrownBridge => Some(sqrt2 * (PI * m as f64 * u).sin()),
        ProcessKind::FourierConst | ProcessKind::FourierExp => {
            let idx = if fourier_constant {
                if m == 1 {
                    return Some(1.0);
                }
                m - 1
            } else {
                m
            };
            // idx = 1, 2 -> sin, cos at frequency 1; 3, 4 -> frequency 2; ...
            let freq = idx.div_ceil(2) as f64;
            let arg = 2.0 * PI * freq * u;
            Some(if idx % 2 == 1 { sqrt2 * arg.sin() } else { sqrt2 * arg.cos() })
        }
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub kind: ProcessKind,
    pub m: usize,
    /// `M x S`, rows orthonormal under the quadrature weights.
    pub functions: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub grid: Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EigenOptions {
    /// Whether the Fourier systems start with the constant function.
    pub fourier_constant: bool,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            fourier_constant: true,
        }
    }
}

pub fn eigen_system(
    kind: ProcessKind,
    m: usize,
    grid: &Grid,
    weights: &QuadratureWeights,
) -> Result<EigenSystem> {
    eigen_system_with(kind, m, grid, weights, EigenOptions::default())
}

pub fn eigen_system_with(
    kind: ProcessKind,
    m: usize,
    grid: &Grid,
    weights: &QuadratureWeights,
    opts: EigenOptions,
) -> Result<EigenSystem> {
    if m == 0 {
        return Err(Error::invalid("an eigen system needs M >= 1"));
    }
    if weights.len() != grid.len() {
        return Err(Error::invalid("weights do not match the grid"));
    }
    let s = grid.len();
    let (a, b) = grid.interval();
    let u: Vec<f64> = grid.points().iter().map(|x| (x - a) / (b - a)).collect();

    let functions = if let Some(degrees) = kind.poly_degrees(m) {
        let max_deg = *degrees.iter().max().expect("non-empty degree set");
        if max_deg + 1 > s {
            return Err(Error::invalid(format!(
                "grid of {s} points cannot carry polynomials up to degree {max_deg}"
            )));
        }
        // Legendre columns span the same nested spaces as the monomials
        // but are far better conditioned.
        let raw = DMatrix::from_fn(max_deg + 1, s, |d, j| shifted_legendre(d, u[j]));
        let ortho = weighted_gram_schmidt(&raw, weights)?;
        DMatrix::from_fn(m, s, |i, j| ortho[(degrees[i], j)])
    } else {
        let raw = DMatrix::from_fn(m, s, |i, j| {
            trig_eigenfunction(kind, i + 1, u[j], opts.fourier_constant)
                .expect("trigonometric kind")
        });
        weighted_gram_schmidt(&raw, weights)?
    };
    let eigenvalues = DVector::from_fn(m, |i, _| kind.eigenvalue(i + 1, m));
    Ok(EigenSystem {
        kind,
        m,
        functions,
        eigenvalues,
        grid: grid.clone(),
    })
}

fn shifted_legendre(d: usize, u: f64) -> f64 {
    let x = 2.0 * u - 1.0;
    let (mut p0, mut p1) = (1.0, x);
    match d {
        0 => p0,
        1 => p1,
        _ => {
            for k in 1..d {
                let kf = k as f64;
                let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

/// Orthonormalizes the rows of `raw` in order under `<f, g> = Σ w f g`
/// (modified Gram–Schmidt with one re-orthogonalization pass).
fn weighted_gram_schmidt(raw: &DMatrix<f64>, weights: &QuadratureWeights) -> Result<DMatrix<f64>> {
    let w = weights.values();
    let ip = |a: &DVector<f64>, b: &DVector<f64>| a.component_mul(w).dot(b);
    let mut out = DMatrix::zeros(raw.nrows(), raw.ncols());
    for i in 0..raw.nrows() {
        let mut v: DVector<f64> = raw.row(i).transpose();
        let original_norm = ip(&v, &v).sqrt();
        for _ in 0..2 {
            for k in 0..i {
                let q: DVector<f64> = out.row(k).transpose();
                let c = ip(&q, &v);
                v -= q * c;
            }
        }
        let norm = ip(&v, &v).sqrt();
        if !(norm > 1e-10 * original_norm.max(f64::MIN_POSITIVE)) {
            return Err(Error::invalid(format!(
                "eigenfunction {} is linearly dependent on the previous ones on this grid",
                i + 1
            )));
        }
        out.set_row(i, &(v / norm).transpose());
    }
    Ok(out)
}

/// Independent `N(0, ν_m)` scores, `N x M`.
pub fn sample_scores<R: Rng + ?Sized>(eigenvalues: &DVector<f64>, n: usize, rng: &mut R) -> DMatrix<f64> {
    let m = eigenvalues.len();
    let mut scores = DMatrix::zeros(n, m);
    for i in 0..n {
        for k in 0..m {
            let z: f64 = rng.sample(StandardNormal);
            scores[(i, k)] = z * eigenvalues[k].max(0.0).sqrt();
        }
    }
    scores
}

/// `X = Ξ Φ` for given scores.
pub fn covariate_from_scores(system: &EigenSystem, scores: &DMatrix<f64>) -> Result<FunctionalSample> {
    if scores.ncols() != system.m {
        return Err(Error::invalid("score matrix must have M columns"));
    }
    FunctionalSample::new(scores * &system.functions, system.grid.clone(), "X")
}

pub fn sample_covariate<R: Rng + ?Sized>(
    system: &EigenSystem,
    n: usize,
    rng: &mut R,
) -> Result<FunctionalSample> {
    if n == 0 {
        return Err(Error::invalid("need at least one curve"));
    }
    let scores = sample_scores(&system.eigenvalues, n, rng);
    covariate_from_scores(system, &scores)
}

/// Random coefficient surface `β(s, t) = B_s Θ B_t^T`.
#[derive(Debug, Clone)]
pub struct CoefSurface {
    /// `K_gen x K_gen`.
    pub theta: DMatrix<f64>,
    /// `S x T`.
    pub values: DMatrix<f64>,
    pub basis_s: BasisMatrix,
    pub basis_t: BasisMatrix,
    pub grid_s: Grid,
    pub grid_t: Grid,
}

impl CoefSurface {
    pub fn from_theta(theta: DMatrix<f64>, basis_s: BasisMatrix, basis_t: BasisMatrix, grid_s: Grid, grid_t: Grid) -> Self {
        let values = basis_s.values() * &theta * basis_t.values().transpose();
        CoefSurface {
            theta,
            values,
            basis_s,
            basis_t,
            grid_s,
            grid_t,
        }
    }
}

/// Precision `0.1 I + P(λ, λ)` of `vec(Θ)` with first-difference marginals.
pub fn coef_precision(k_gen: usize, lambda: f64) -> Result<DMatrix<f64>> {
    let p = difference_penalty(k_gen, 1)?;
    let tp = assemble_tensor_penalty(p.clone(), p, lambda, lambda)?;
    let n = k_gen * k_gen;
    Ok(DMatrix::identity(n, n) * 0.1 + tp.assembled())
}

pub fn sample_coef_surface<R: Rng + ?Sized>(
    k_gen: usize,
    lambda: f64,
    grid_s: &Grid,
    grid_t: &Grid,
    rng: &mut R,
) -> Result<CoefSurface> {
    if k_gen < 4 {
        return Err(Error::invalid("generator basis needs at least 4 cubic B-splines"));
    }
    let precision = coef_precision(k_gen, lambda)?;
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("coefficient precision is not positive definite".into()))?;
    let n = k_gen * k_gen;
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    // Cov(L^{-T} z) = (L L^T)^{-1}.
    let theta_vec = chol
        .l()
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let theta = DMatrix::from_column_slice(k_gen, k_gen, theta_vec.as_slice());
    let basis_s = bspline_basis(grid_s, k_gen, 3)?;
    let basis_t = bspline_basis(grid_t, k_gen, 3)?;
    Ok(CoefSurface::from_theta(theta, basis_s, basis_t, grid_s.clone(), grid_t.clone()))
}

/// Sample standard deviation over all entries.
pub(crate) fn sd_all(m: &DMatrix<f64>) -> f64 {
    let n = m.len();
    if n < 2 {
        return 0.0;
    }
    let mean = m.mean();
    (m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Noise-free signal `f_i(t_k) = Σ_j w_j X_i(s_j) β(s_j, t_k)`.
pub fn signal_of(x: &FunctionalSample, beta: &CoefSurface, weights: &QuadratureWeights) -> Result<FunctionalSample> {
    if x.n_points() != beta.values.nrows() || weights.len() != x.n_points() {
        return Err(Error::invalid("covariate grid and coefficient surface do not match"));
    }
    let f = weights.scale_cols(x.values()) * &beta.values;
    FunctionalSample::new(f, beta.grid_t.clone(), "signal")
}

/// Response `Y = signal + ε` with `sd(ε) = sd(signal) / snr`.
pub fn gen_response<R: Rng + ?Sized>(
    x: &FunctionalSample,
    beta: &CoefSurface,
    weights: &QuadratureWeights,
    snr: f64,
    rng: &mut R,
) -> Result<(FunctionalSample, FunctionalSample)> {
    if !(snr > 0.0) {
        return Err(Error::invalid("SNR must be positive"));
    }
    let signal = signal_of(x, beta, weights)?;
    let sd = sd_all(signal.values());
    if !(sd > 0.0) {
        return Err(Error::invalid("signal is identically constant; noise level undefined"));
    }
    let sigma = sd / snr;
    let y = signal
        .values()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal));
    let y = FunctionalSample::new(y, beta.grid_t.clone(), "Y")?;
    Ok((y, signal))
}

/// One cell of the factorial design together with its replicate seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub penalty_kind: FitPenalty,
    pub k_s: usize,
    pub m: usize,
    pub process_kind: ProcessKind,
    pub snr: f64,
    pub gen_basis_size: usize,
    pub gen_lambda: f64,
    pub replicate_seed: u64,
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.snr > 0.0) {
            return Err(Error::invalid("SNR must be positive"));
        }
        if self.m == 0 || self.k_s < 4 {
            return Err(Error::invalid("need M >= 1 and K_s >= 4"));
        }
        if self.gen_basis_size < 4 || !(self.gen_lambda >= 0.0) {
            return Err(Error::invalid("generator basis must have >= 4 functions and lambda >= 0"));
        }
        Ok(())
    }

    /// RNG for the data of replicate `rep`. Depends only on the fields that
    /// determine the simulated data (not on the fitting penalty or `K_s`), so
    /// every penalty and basis size sees the same draws.
    pub fn data_rng(&self, rep: usize) -> ChaCha8Rng {
        let key = format!(
            "{}|M={}|snr={:e}|genK={}|genLambda={:e}|seed={}|rep={}",
            self.process_kind,
            self.m,
            self.snr,
            self.gen_basis_size,
            self.gen_lambda,
            self.replicate_seed,
            rep
        );
        let digest = Sha256::digest(key.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }
}
