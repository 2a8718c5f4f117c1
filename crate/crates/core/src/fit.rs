//! Penalized least squares for `vec(Y) = (B_t ⊗ D_s) vec(Θ) + ε`, with
//! kernel-overlap constraints, GCV grid search and the smoothest
//! representative of a rank-deficient fit.

use std::cell::OnceCell;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnose::{diagnose_with, DiagnosticReport, Thresholds};
use crate::error::{Error, Result};
use crate::fpc::FunctionalSample;
use crate::funbasis::{
    difference_penalty, BasisMatrix, Grid, MarginalPenalty, PenaltyKind, QuadratureWeights, TensorPenalty,
};
use crate::linalg::{kron, null_space, orthogonal_complement, unvec, vec_of, PivotedCholesky, SplitSvd, RANK_TOL};
use crate::penalize::{symmetrize, PenaltyRecipe};

/// Largest dense design (in matrix entries) this module will materialize.
pub const DENSE_CAP: usize = 10_000_000;

/// Factorized design `D = B_t ⊗ D_s` with `D_s = X W B_s`.
#[derive(Debug, Clone)]
pub struct TensorDesign {
    x: FunctionalSample,
    weights: QuadratureWeights,
    b_s: BasisMatrix,
    b_t: BasisMatrix,
    d_s: DMatrix<f64>,
    svd_s: SplitSvd,
    svd_t: SplitSvd,
    gram_s: DMatrix<f64>,
    gram_t: DMatrix<f64>,
}

pub fn assemble_design(
    x: &FunctionalSample,
    w: &QuadratureWeights,
    b_s: &BasisMatrix,
    b_t: &BasisMatrix,
) -> Result<TensorDesign> {
    if w.len() != x.n_points() || b_s.n_points() != x.n_points() {
        return Err(Error::invalid(format!(
            "design dimensions disagree: X has {} grid points, weights {}, B_s {} rows",
            x.n_points(),
            w.len(),
            b_s.n_points()
        )));
    }
    if b_s.k() == 0 || b_t.k() == 0 {
        return Err(Error::invalid("empty basis"));
    }
    let d_s = x.values() * w.scale_rows(b_s.values());
    let svd_s = SplitSvd::new(&d_s);
    let svd_t = SplitSvd::new(b_t.values());
    let gram_s = d_s.transpose() * &d_s;
    let gram_t = b_t.values().transpose() * b_t.values();
    Ok(TensorDesign {
        x: x.clone(),
        weights: w.clone(),
        b_s: b_s.clone(),
        b_t: b_t.clone(),
        d_s,
        svd_s,
        svd_t,
        gram_s,
        gram_t,
    })
}

impl TensorDesign {
    pub fn n(&self) -> usize {
        self.d_s.nrows()
    }

    pub fn s(&self) -> usize {
        self.b_s.n_points()
    }

    pub fn t(&self) -> usize {
        self.b_t.n_points()
    }

    pub fn k_s(&self) -> usize {
        self.b_s.k()
    }

    pub fn k_t(&self) -> usize {
        self.b_t.k()
    }

    pub fn x(&self) -> &FunctionalSample {
        &self.x
    }

    pub fn weights(&self) -> &QuadratureWeights {
        &self.weights
    }

    pub fn b_s(&self) -> &BasisMatrix {
        &self.b_s
    }

    pub fn b_t(&self) -> &BasisMatrix {
        &self.b_t
    }

    pub fn d_s(&self) -> &DMatrix<f64> {
        &self.d_s
    }

    pub fn svd_s(&self) -> &SplitSvd {
        &self.svd_s
    }

    pub fn svd_t(&self) -> &SplitSvd {
        &self.svd_t
    }

    /// `rank(D) = rank(B_t) · rank(D_s)`.
    pub fn rank(&self) -> usize {
        self.svd_t.rank() * self.svd_s.rank()
    }

    /// `D θ` reshaped to `N x T`, i.e. `D_s Θ B_t^T`.
    pub fn apply(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        &self.d_s * theta * self.b_t.values().transpose()
    }

    pub fn matvec(&self, theta: &DVector<f64>) -> DVector<f64> {
        vec_of(&self.apply(&unvec(theta, self.k_s(), self.k_t())))
    }

    /// `D^T D = (B_t^T B_t) ⊗ (D_s^T D_s)`.
    pub fn normal_matrix(&self) -> DMatrix<f64> {
        kron(&self.gram_t, &self.gram_s)
    }

    /// `D^T vec(Y) = vec(D_s^T Y B_t)`.
    pub fn rhs(&self, y: &DMatrix<f64>) -> DVector<f64> {
        vec_of(&(self.d_s.transpose() * y * self.b_t.values()))
    }

    /// `R` with `D^T D = R R^T`, built from the positive parts of both SVDs.
    fn gram_root(&self) -> DMatrix<f64> {
        let scale = |svd: &SplitSvd| {
            let mut r = svd.right.clone();
            for (k, mut col) in r.column_iter_mut().enumerate() {
                col *= svd.sigma[k];
            }
            r
        };
        kron(&scale(&self.svd_t), &scale(&self.svd_s))
    }

    /// Orthonormal basis `U_0` of `ke(D)`.
    pub fn kernel_basis(&self) -> DMatrix<f64> {
        orthogonal_complement(&kron(&self.svd_t.right, &self.svd_s.right))
    }

    /// The dense `NT x K_s K_t` design; refused above [`DENSE_CAP`] entries.
    pub fn dense(&self) -> Result<DMatrix<f64>> {
        let entries = self.n() * self.t() * self.k_s() * self.k_t();
        if entries > DENSE_CAP {
            return Err(Error::invalid(format!(
                "dense design would have {entries} entries (cap {DENSE_CAP})"
            )));
        }
        Ok(kron(self.b_t.values(), &self.d_s))
    }

    fn check_response(&self, y: &DMatrix<f64>) -> Result<()> {
        if y.nrows() != self.n() || y.ncols() != self.t() {
            return Err(Error::invalid(format!(
                "response is {}x{}, design expects {}x{}",
                y.nrows(),
                y.ncols(),
                self.n(),
                self.t()
            )));
        }
        Ok(())
    }
}

/// `D^T D + P(λ_s, λ_t)`.
pub fn normal_matrix(design: &TensorDesign, penalty: &TensorPenalty) -> Result<DMatrix<f64>> {
    check_penalty_dims(design, &penalty.p_s, &penalty.p_t)?;
    Ok(design.normal_matrix() + penalty.assembled())
}

fn check_penalty_dims(design: &TensorDesign, p_s: &MarginalPenalty, p_t: &MarginalPenalty) -> Result<()> {
    if p_s.k() != design.k_s() || p_t.k() != design.k_t() {
        return Err(Error::invalid(format!(
            "penalties are {}x{} and {}x{}, basis dimensions are {} and {}",
            p_s.k(),
            p_s.k(),
            p_t.k(),
            p_t.k(),
            design.k_s(),
            design.k_t()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// `K_s x K_t`.
    pub theta: DMatrix<f64>,
    /// `β̂` on the `S x T` grid.
    pub surface: DMatrix<f64>,
    /// `N x T`.
    pub fitted: DMatrix<f64>,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub gcv: f64,
    pub edf: f64,
    pub rss: f64,
    pub penalty_s: PenaltyKind,
    pub penalty_t: PenaltyKind,
    pub constrained: bool,
    pub n_constraints: usize,
    /// Smallest pivot of the normal-matrix factorization relative to its
    /// largest diagonal entry.
    pub min_pivot_ratio: f64,
    /// Smoothing-parameter pairs skipped because the system was singular.
    pub singular_grid_points: usize,
    pub diagnostics: Option<DiagnosticReport>,
    b_s: BasisMatrix,
}

#[derive(Serialize)]
struct FitSummary<'a> {
    lambda_s: f64,
    lambda_t: f64,
    gcv: f64,
    edf: f64,
    rss: f64,
    penalty_s: PenaltyKind,
    penalty_t: PenaltyKind,
    constrained: bool,
    n_constraints: usize,
    min_pivot_ratio: f64,
    singular_grid_points: usize,
    smoother: &'static str,
    diagnostics: Option<&'a DiagnosticReport>,
    k_s: usize,
    k_t: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<Vec<f64>>,
}

impl FitResult {
    pub fn theta_vec(&self) -> DVector<f64> {
        vec_of(&self.theta)
    }

    pub fn b_s(&self) -> &BasisMatrix {
        &self.b_s
    }

    /// JSON summary; `vec(Θ̂)` is included only when `full` is set.
    pub fn to_json(&self, full: bool) -> Result<serde_json::Value> {
        let summary = FitSummary {
            lambda_s: self.lambda_s,
            lambda_t: self.lambda_t,
            gcv: self.gcv,
            edf: self.edf,
            rss: self.rss,
            penalty_s: self.penalty_s,
            penalty_t: self.penalty_t,
            constrained: self.constrained,
            n_constraints: self.n_constraints,
            min_pivot_ratio: self.min_pivot_ratio,
            singular_grid_points: self.singular_grid_points,
            smoother: "gcv-grid",
            diagnostics: self.diagnostics.as_ref(),
            k_s: self.theta.nrows(),
            k_t: self.theta.ncols(),
            theta: full.then(|| self.theta.as_slice().to_vec()),
        };
        Ok(serde_json::to_value(summary)?)
    }
}

/// Everything that stays fixed while the smoothing parameters vary.
struct Workspace<'a> {
    design: &'a TensorDesign,
    gram: DMatrix<f64>,
    pen_s: DMatrix<f64>,
    pen_t: DMatrix<f64>,
    rhs: DVector<f64>,
    root: DMatrix<f64>,
    y: &'a DMatrix<f64>,
    /// Factors applied to the smoothing parameters before solving.
    scale: (f64, f64),
    /// Kernel checks per pattern of active smoothing parameters.
    structure: [OnceCell<Option<(usize, usize)>>; 4],
}

struct Solved {
    theta: DMatrix<f64>,
    fitted: DMatrix<f64>,
    rss: f64,
    edf: f64,
    gcv: f64,
    min_pivot_ratio: f64,
}

enum Outcome {
    Solved(Solved),
    Singular { rank: usize, dim: usize },
}

impl<'a> Workspace<'a> {
    fn new(design: &'a TensorDesign, p_s: &MarginalPenalty, p_t: &MarginalPenalty, y: &'a DMatrix<f64>) -> Result<Self> {
        check_penalty_dims(design, p_s, p_t)?;
        design.check_response(y)?;
        let (ks, kt) = (design.k_s(), design.k_t());
        Ok(Workspace {
            design,
            gram: design.normal_matrix(),
            pen_s: kron(&DMatrix::identity(kt, kt), p_s.matrix()),
            pen_t: kron(p_t.matrix(), &DMatrix::identity(ks, ks)),
            rhs: design.rhs(y),
            root: design.gram_root(),
            y,
            scale: (1.0, 1.0),
            structure: Default::default(),
        })
    }

    /// Measures smoothing parameters relative to the data: each penalty is
    /// scaled to the trace of `D^T D`, so one grid suits penalties of any
    /// magnitude.
    fn relative_to_data(mut self) -> Self {
        let g = self.gram.trace();
        let ratio = |p: &DMatrix<f64>| {
            let tr = p.trace();
            if tr > 0.0 && g > 0.0 { g / tr } else { 1.0 }
        };
        self.scale = (ratio(&self.pen_s), ratio(&self.pen_t));
        self
    }

    fn effective(&self, lambda_s: f64, lambda_t: f64) -> (f64, f64) {
        (lambda_s * self.scale.0, lambda_t * self.scale.1)
    }

    /// `Some((rank, dim))` when `ke(D^T D) ∩ ke(P)` is non-trivial for the
    /// given set of active penalties. Each part is scaled to unit maximal
    /// diagonal first, so the verdict does not depend on the magnitude of
    /// the smoothing parameters.
    fn kernel_overlap(&self, s_active: bool, t_active: bool) -> Option<(usize, usize)> {
        let idx = usize::from(s_active) + 2 * usize::from(t_active);
        *self.structure[idx].get_or_init(|| {
            let unit = |m: &DMatrix<f64>| {
                let d = m.diagonal().max();
                if d > 0.0 { m / d } else { m.clone() }
            };
            let mut sum = unit(&self.gram);
            if s_active {
                sum += unit(&self.pen_s);
            }
            if t_active {
                sum += unit(&self.pen_t);
            }
            let chol = PivotedCholesky::new(&sum, RANK_TOL);
            (!chol.is_full_rank()).then(|| (chol.rank, chol.dim()))
        })
    }

    fn solve(&self, lambda_s: f64, lambda_t: f64) -> Outcome {
        let (lambda_s, lambda_t) = self.effective(lambda_s, lambda_t);
        if let Some((rank, dim)) = self.kernel_overlap(lambda_s > 0.0, lambda_t > 0.0) {
            return Outcome::Singular { rank, dim };
        }
        let a = &self.gram + &self.pen_s * lambda_s + &self.pen_t * lambda_t;
        // Structurally non-singular; only a breakdown of the factorization
        // itself counts as failure here.
        let chol = PivotedCholesky::new(&a, 0.0);
        if !chol.is_full_rank() {
            return Outcome::Singular {
                rank: chol.rank,
                dim: chol.dim(),
            };
        }
        let theta_vec = chol.solve_vec(&self.rhs);
        let theta = unvec(&theta_vec, self.design.k_s(), self.design.k_t());
        let fitted = self.design.apply(&theta);
        let rss = (self.y - &fitted).norm_squared();
        // edf = tr((D^T D + P)^{-1} R R^T) = ‖L^{-1} Π R‖_F².
        let edf = if self.root.ncols() == 0 {
            0.0
        } else {
            chol.forward(&self.root).norm_squared()
        };
        let nt = (self.y.nrows() * self.y.ncols()) as f64;
        let denom = nt - edf;
        let gcv = if denom > 0.0 { nt * rss / (denom * denom) } else { f64::INFINITY };
        Outcome::Solved(Solved {
            theta,
            fitted,
            rss,
            edf,
            gcv,
            min_pivot_ratio: chol.min_pivot_ratio,
        })
    }
}

fn result_from(
    design: &TensorDesign,
    solved: Solved,
    p_s: &MarginalPenalty,
    p_t: &MarginalPenalty,
    lambdas: (f64, f64),
) -> FitResult {
    let surface = design.b_s().values() * &solved.theta * design.b_t().values().transpose();
    FitResult {
        theta: solved.theta,
        surface,
        fitted: solved.fitted,
        lambda_s: lambdas.0,
        lambda_t: lambdas.1,
        gcv: solved.gcv,
        edf: solved.edf,
        rss: solved.rss,
        penalty_s: p_s.kind(),
        penalty_t: p_t.kind(),
        constrained: false,
        n_constraints: 0,
        min_pivot_ratio: solved.min_pivot_ratio,
        singular_grid_points: 0,
        diagnostics: None,
        b_s: design.b_s().clone(),
    }
}

fn singular_error(rank: usize, dim: usize) -> Error {
    Error::non_identifiable(format!(
        "penalized normal matrix is singular (numerical rank {rank} of {dim}); \
         the design kernel overlaps the penalty null-space"
    ))
}

fn report_for(design: &TensorDesign, p_s: &MarginalPenalty) -> Option<DiagnosticReport> {
    diagnose_with(design.x(), design.weights(), design.b_s(), p_s, Thresholds::default()).ok()
}

fn attach_report(err: Error, report: Option<DiagnosticReport>) -> Error {
    match report {
        Some(r) => err.with_report(r),
        None => err,
    }
}

/// Solves `(D^T D + P) θ = D^T vec(Y)` at the penalty's fixed smoothing
/// parameters.
pub fn penalized_solve(design: &TensorDesign, penalty: &TensorPenalty, y: &DMatrix<f64>) -> Result<FitResult> {
    let ws = Workspace::new(design, &penalty.p_s, &penalty.p_t, y)?;
    match ws.solve(penalty.lambda_s, penalty.lambda_t) {
        Outcome::Solved(s) => {
            let mut fit = result_from(design, s, &penalty.p_s, &penalty.p_t, (penalty.lambda_s, penalty.lambda_t));
            fit.diagnostics = report_for(design, &penalty.p_s);
            Ok(fit)
        }
        Outcome::Singular { rank, dim } => Err(attach_report(singular_error(rank, dim), report_for(design, &penalty.p_s))),
    }
}

/// Problem restricted to `Θ = Z Γ` where the columns of `Z` span the null
/// space of `C_s = V^T diag(w) B_s`.
struct Reduced {
    design: TensorDesign,
    z: DMatrix<f64>,
    p_s: MarginalPenalty,
}

fn reduce(design: &TensorDesign, p_s: &MarginalPenalty, v: &DMatrix<f64>) -> Result<Reduced> {
    let q = v.ncols();
    if v.nrows() != design.s() {
        return Err(Error::invalid("constraint basis must have one row per s-grid point"));
    }
    if q >= design.k_s() {
        return Err(Error::invalid(format!(
            "{q} constraints leave no freedom for a basis of size {}",
            design.k_s()
        )));
    }
    let c_s = v.transpose() * design.weights().scale_rows(design.b_s().values());
    let z = null_space(&c_s);
    let b_red = BasisMatrix::from_values(design.b_s().values() * &z);
    let reduced_design = assemble_design(design.x(), design.weights(), &b_red, design.b_t())?;
    let p_red = MarginalPenalty::new(symmetrize(z.transpose() * p_s.matrix() * &z), p_s.kind())?;
    Ok(Reduced {
        design: reduced_design,
        z,
        p_s: p_red,
    })
}

impl Reduced {
    fn lift(&self, design: &TensorDesign, mut fit: FitResult, q: usize) -> FitResult {
        fit.theta = &self.z * &fit.theta;
        fit.surface = design.b_s().values() * &fit.theta * design.b_t().values().transpose();
        fit.b_s = design.b_s().clone();
        fit.constrained = true;
        fit.n_constraints = q;
        fit
    }
}

/// Penalized fit subject to `V^T diag(w) B_s Θ = 0`.
pub fn constrained_solve(
    design: &TensorDesign,
    penalty: &TensorPenalty,
    y: &DMatrix<f64>,
    constraint_basis: &DMatrix<f64>,
) -> Result<FitResult> {
    check_penalty_dims(design, &penalty.p_s, &penalty.p_t)?;
    let red = reduce(design, &penalty.p_s, constraint_basis)?;
    let ws = Workspace::new(&red.design, &red.p_s, &penalty.p_t, y)?;
    match ws.solve(penalty.lambda_s, penalty.lambda_t) {
        Outcome::Solved(s) => {
            let fit = result_from(&red.design, s, &penalty.p_s, &penalty.p_t, (penalty.lambda_s, penalty.lambda_t));
            let mut fit = red.lift(design, fit, constraint_basis.ncols());
            fit.diagnostics = report_for(design, &penalty.p_s);
            Ok(fit)
        }
        Outcome::Singular { rank, dim } => Err(attach_report(singular_error(rank, dim), report_for(design, &penalty.p_s))),
    }
}

/// Cartesian grid of smoothing parameters. Grid values are relative: each
/// marginal penalty is first scaled so its trace matches that of `D^T D`.
/// Fits report the effective values on the unscaled penalties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub lambda_s: Vec<f64>,
    pub lambda_t: Vec<f64>,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::log_spaced(1e-4, 1e4, 7).expect("valid default grid")
    }
}

impl LambdaGrid {
    /// `n` log-spaced values from `min` to `max` in both directions.
    pub fn log_spaced(min: f64, max: f64, n: usize) -> Result<Self> {
        let values = log_space(min, max, n)?;
        Ok(LambdaGrid {
            lambda_s: values.clone(),
            lambda_t: values,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_s.is_empty() || self.lambda_t.is_empty() {
            return Err(Error::invalid("empty smoothing-parameter grid"));
        }
        if self
            .lambda_s
            .iter()
            .chain(&self.lambda_t)
            .any(|&l| !(l >= 0.0) || !l.is_finite())
        {
            return Err(Error::invalid("smoothing parameters must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lambda_s.len() * self.lambda_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.lambda_s
            .iter()
            .flat_map(move |&s| self.lambda_t.iter().map(move |&t| (s, t)))
    }
}

fn log_space(min: f64, max: f64, n: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min && max.is_finite()) || n == 0 {
        return Err(Error::invalid(format!("invalid log grid {min}..{max} with {n} points")));
    }
    if n == 1 {
        return Ok(vec![min]);
    }
    let (a, b) = (min.log10(), max.log10());
    Ok((0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect())
}

/// True when `(gcv, λ)` should replace the current best: strictly smaller
/// GCV, or a tie (relative 1e-12) with heavier smoothing.
fn better(gcv: f64, lambdas: (f64, f64), best: &Option<(f64, (f64, f64))>) -> bool {
    let Some((best_gcv, best_l)) = best else {
        return gcv.is_finite();
    };
    let tol = 1e-12 * best_gcv.abs();
    if gcv < best_gcv - tol {
        return true;
    }
    if (gcv - best_gcv).abs() <= tol {
        return lambdas.0 > best_l.0 || (lambdas.0 == best_l.0 && lambdas.1 > best_l.1);
    }
    false
}

fn grid_search(
    design: &TensorDesign,
    p_s: &MarginalPenalty,
    p_t: &MarginalPenalty,
    y: &DMatrix<f64>,
    grid: &LambdaGrid,
) -> Result<FitResult> {
    grid.validate()?;
    let ws = Workspace::new(design, p_s, p_t, y)?.relative_to_data();
    let mut best: Option<(f64, (f64, f64))> = None;
    let mut best_solved = None;
    let mut singular = 0;
    let mut last_singular = (0, 0);
    for (ls, lt) in grid.pairs() {
        match ws.solve(ls, lt) {
            Outcome::Solved(s) => {
                if better(s.gcv, (ls, lt), &best) {
                    best = Some((s.gcv, (ls, lt)));
                    best_solved = Some(s);
                }
            }
            Outcome::Singular { rank, dim } => {
                singular += 1;
                last_singular = (rank, dim);
            }
        }
    }
    match (best, best_solved) {
        (Some((_, lambdas)), Some(s)) => {
            if singular > 0 {
                log::info!("{singular} of {} grid points were singular and skipped", grid.len());
            }
            let mut fit = result_from(design, s, p_s, p_t, ws.effective(lambdas.0, lambdas.1));
            fit.singular_grid_points = singular;
            Ok(fit)
        }
        _ if singular == grid.len() => Err(singular_error(last_singular.0, last_singular.1)),
        _ => Err(Error::Numerical("no grid point produced a finite GCV score".into())),
    }
}

/// GCV grid search over `(λ_s, λ_t)`.
pub fn select_smoothing(
    design: &TensorDesign,
    p_s: &MarginalPenalty,
    p_t: &MarginalPenalty,
    y: &DMatrix<f64>,
    grid: &LambdaGrid,
) -> Result<FitResult> {
    grid_search(design, p_s, p_t, y, grid).map_err(|e| attach_report(e, report_for(design, p_s)))
}

/// GCV grid search under `V^T diag(w) B_s Θ = 0`.
pub fn select_smoothing_constrained(
    design: &TensorDesign,
    p_s: &MarginalPenalty,
    p_t: &MarginalPenalty,
    y: &DMatrix<f64>,
    grid: &LambdaGrid,
    constraint_basis: &DMatrix<f64>,
) -> Result<FitResult> {
    check_penalty_dims(design, p_s, p_t)?;
    let red = reduce(design, p_s, constraint_basis)?;
    let fit = grid_search(&red.design, &red.p_s, p_t, y, grid).map_err(|e| attach_report(e, report_for(design, p_s)))?;
    Ok(red.lift(design, fit, constraint_basis.ncols()))
}

/// `θ_f = H θ` with `H = I − U_0 (U_0^T P U_0)^{-1} U_0^T P`: the point with
/// the smallest penalty among all coefficient vectors with the same fit.
pub fn smoothest_representative(
    theta: &DVector<f64>,
    design: &TensorDesign,
    penalty: &TensorPenalty,
) -> Result<DVector<f64>> {
    check_penalty_dims(design, &penalty.p_s, &penalty.p_t)?;
    if theta.len() != design.k_s() * design.k_t() {
        return Err(Error::invalid("coefficient vector has the wrong length"));
    }
    let u0 = design.kernel_basis();
    if u0.ncols() == 0 {
        return Ok(theta.clone());
    }
    let p = penalty.assembled();
    let m = u0.transpose() * p * &u0;
    let chol = PivotedCholesky::new(&m, RANK_TOL);
    // The relative pivot test cannot see a penalty that vanishes on the
    // whole kernel, so compare against the scale of P as well.
    let p_scale = p.diagonal().max();
    let vanishes = m.diagonal().max() <= RANK_TOL * p_scale;
    if vanishes || !chol.is_full_rank() {
        return Err(Error::non_identifiable(format!(
            "penalty is singular on the design kernel (rank {} of {}); no unique smoothest representative",
            if vanishes { 0 } else { chol.rank },
            chol.dim()
        )));
    }
    let correction = &u0 * chol.solve_vec(&(u0.transpose() * (p * theta)));
    Ok(theta - correction)
}

/// `Ŷ = X_new W B_s Θ̂ B_t^T`.
pub fn predict(
    fit: &FitResult,
    x_new: &FunctionalSample,
    w: &QuadratureWeights,
    b_t: &BasisMatrix,
    grid_t: &Grid,
) -> Result<FunctionalSample> {
    let b_s = fit.b_s();
    if x_new.n_points() != b_s.n_points() || w.len() != b_s.n_points() {
        return Err(Error::invalid(format!(
            "new covariate has {} grid points, the fit was made on {}",
            x_new.n_points(),
            b_s.n_points()
        )));
    }
    if b_t.k() != fit.theta.ncols() {
        return Err(Error::invalid("t-basis dimension does not match the fit"));
    }
    let values = x_new.values() * w.scale_rows(&(b_s.values() * &fit.theta)) * b_t.values().transpose();
    if grid_t.len() != b_t.n_points() {
        return Err(Error::invalid("t-grid does not match the t-basis"));
    }
    FunctionalSample::new(values, grid_t.clone(), "Yhat")
}

/// End-to-end settings for fitting one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    pub recipe: PenaltyRecipe,
    /// Order of the t-direction difference penalty.
    pub t_order: usize,
    pub grid: LambdaGrid,
    pub thresholds: Thresholds,
}

impl FitSpec {
    pub fn new(recipe: PenaltyRecipe) -> Self {
        FitSpec {
            recipe,
            t_order: 1,
            grid: LambdaGrid::default(),
            thresholds: Thresholds::default(),
        }
    }
}

/// Diagnoses the specification, fits it by GCV and, for the constrained
/// penalty kinds, adds the kernel-overlap constraints when the diagnosis
/// flags. The diagnostic report is attached to the result or to the
/// non-identifiability error.
pub fn fit_model(design: &TensorDesign, y: &DMatrix<f64>, spec: &FitSpec) -> Result<FitResult> {
    let x = design.x();
    let w = design.weights();
    let b_s = design.b_s();
    let p_s = spec.recipe.marginal_s(x, w, b_s)?;
    let p_t = difference_penalty(design.k_t(), spec.t_order)?;
    let report = diagnose_with(x, w, b_s, &spec.recipe.diagnostic_penalty(x, w, b_s)?, spec.thresholds)?;
    let result = if spec.recipe.kind.is_constrained() && report.flagged && report.n_constraints > 0 {
        let red = reduce(design, &p_s, &report.constraint_basis)?;
        grid_search(&red.design, &red.p_s, &p_t, y, &spec.grid).map(|f| red.lift(design, f, report.n_constraints))
    } else {
        grid_search(design, &p_s, &p_t, y, &spec.grid)
    };
    match result {
        Ok(mut fit) => {
            fit.diagnostics = Some(report);
            Ok(fit)
        }
        Err(e) => Err(e.with_report(report)),
    }
}

/// Long-format rows `(s, t, β̂(s, t))`.
pub fn surface_rows(fit: &FitResult, grid_s: &[f64], grid_t: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    if grid_s.len() != fit.surface.nrows() || grid_t.len() != fit.surface.ncols() {
        return Err(Error::invalid("grids do not match the fitted surface"));
    }
    let mut rows = Vec::with_capacity(grid_s.len() * grid_t.len());
    for (j, &s) in grid_s.iter().enumerate() {
        for (k, &t) in grid_t.iter().enumerate() {
            rows.push((s, t, fit.surface[(j, k)]));
        }
    }
    Ok(rows)
}
