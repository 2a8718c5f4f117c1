//! Observation grids, quadrature weights, B-spline bases and difference
//! penalties, plus assembly of the tensor-product penalty.
//!
//! Coefficient surfaces are stored as `Θ` of shape `K_s x K_t` and vectorized
//! column-major, so `θ[k_s + K_s * k_t] = Θ[k_s, k_t]`. With that ordering the
//! design is `B_t ⊗ (X W B_s)` and the penalty is
//! `λ_s (I_{K_t} ⊗ P_s) + λ_t (P_t ⊗ I_{K_s})`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron, sym_eigen_desc, RANK_TOL};

/// Strictly increasing evaluation points inside a closed interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
    interval: (f64, f64),
}

impl Grid {
    pub fn new(points: Vec<f64>, interval: (f64, f64)) -> Result<Self> {
        let (a, b) = interval;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::invalid(format!("degenerate interval [{a}, {b}]")));
        }
        if points.len() < 2 {
            return Err(Error::invalid("a grid needs at least two points"));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("grid points must be strictly increasing"));
        }
        if points[0] < a || points[points.len() - 1] > b {
            return Err(Error::invalid("grid points must lie inside the interval"));
        }
        Ok(Grid { points, interval })
    }

    /// Grid whose interval is spanned by its first and last point.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        let interval = match (points.first(), points.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::invalid("a grid needs at least two points")),
        };
        Grid::new(points, interval)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same points and interval up to `tol`.
    pub fn approx_eq(&self, other: &Grid, tol: f64) -> bool {
        self.len() == other.len()
            && (self.interval.0 - other.interval.0).abs() <= tol
            && (self.interval.1 - other.interval.1).abs() <= tol
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

pub fn make_equidistant_grid(n: usize, interval: (f64, f64)) -> Result<Grid> {
    if n < 2 {
        return Err(Error::invalid("equidistant grid needs n >= 2"));
    }
    let (a, b) = interval;
    if !(a < b) {
        return Err(Error::invalid(format!("degenerate interval [{a}, {b}]")));
    }
    let h = (b - a) / (n - 1) as f64;
    let mut points: Vec<f64> = (0..n).map(|i| a + i as f64 * h).collect();
    points[n - 1] = b;
    Grid::new(points, interval)
}

/// Positive integration weights, one per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureWeights {
    w: DVector<f64>,
}

impl QuadratureWeights {
    pub fn from_vec(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("quadrature weights must be positive and finite"));
        }
        Ok(QuadratureWeights {
            w: DVector::from_vec(w),
        })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.w.sum()
    }

    pub fn as_diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.w)
    }

    /// `diag(w) * m` without forming the diagonal matrix.
    pub fn scale_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.len());
        let mut out = m.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.w[i];
        }
        out
    }

    /// `m * diag(w)`.
    pub fn scale_cols(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.ncols(), self.len());
        let mut out = m.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col *= self.w[j];
        }
        out
    }
}

/// Trapezoid-style weights; the outermost cells extend to the interval ends.
pub fn quadrature_weights(grid: &Grid) -> QuadratureWeights {
    let s = grid.points();
    let (a, b) = grid.interval();
    let n = s.len();
    let mut w = vec![0.0; n];
    w[0] = (s[1] - s[0]) / 2.0 + (s[0] - a);
    w[n - 1] = (s[n - 1] - s[n - 2]) / 2.0 + (b - s[n - 1]);
    for j in 1..n - 1 {
        w[j] = (s[j + 1] - s[j - 1]) / 2.0;
    }
    QuadratureWeights {
        w: DVector::from_vec(w),
    }
}

/// Basis functions evaluated on a grid, one column per function.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    values: DMatrix<f64>,
    degree: usize,
    knots: Vec<f64>,
}

impl BasisMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_points(&self) -> usize {
        self.values.nrows()
    }

    /// Wraps an arbitrary evaluation matrix (e.g. an identity "basis").
    pub fn from_values(values: DMatrix<f64>) -> Self {
        BasisMatrix {
            values,
            degree: 0,
            knots: Vec::new(),
        }
    }
}

/// Equally spaced knots with `degree + 1` coincident knots at each end.
fn clamped_knots(interval: (f64, f64), k: usize, degree: usize) -> Vec<f64> {
    let (a, b) = interval;
    let n_inner = k - degree - 1;
    let mut knots = Vec::with_capacity(k + degree + 1);
    knots.extend(std::iter::repeat_n(a, degree + 1));
    let h = (b - a) / (n_inner + 1) as f64;
    knots.extend((1..=n_inner).map(|i| a + i as f64 * h));
    knots.extend(std::iter::repeat_n(b, degree + 1));
    knots
}

/// Index `i` of the knot span with `knots[i] <= x < knots[i+1]`; the right
/// end of the interval belongs to the last non-degenerate span.
fn find_span(knots: &[f64], k: usize, degree: usize, x: f64) -> usize {
    if x >= knots[k] {
        return k - 1;
    }
    if x <= knots[degree] {
        return degree;
    }
    let (mut lo, mut hi) = (degree, k);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Cox–de Boor recursion for the `degree + 1` non-zero functions at `x`.
fn nonzero_basis(knots: &[f64], span: usize, degree: usize, x: f64) -> Vec<f64> {
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let tmp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        n[j] = saved;
    }
    n
}

pub fn bspline_basis(grid: &Grid, k: usize, degree: usize) -> Result<BasisMatrix> {
    if k < degree + 1 {
        return Err(Error::invalid(format!(
            "K = {k} is too small for degree {degree} (need K >= degree + 1)"
        )));
    }
    if grid.len() < k {
        return Err(Error::invalid(format!(
            "grid of length {} cannot support {k} basis functions",
            grid.len()
        )));
    }
    let knots = clamped_knots(grid.interval(), k, degree);
    let mut values = DMatrix::zeros(grid.len(), k);
    for (row, &x) in grid.points().iter().enumerate() {
        let span = find_span(&knots, k, degree, x);
        let nz = nonzero_basis(&knots, span, degree, x);
        for (r, v) in nz.into_iter().enumerate() {
            values[(row, span - degree + r)] = v;
        }
    }
    Ok(BasisMatrix {
        values,
        degree,
        knots,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    DifferenceOrder1,
    DifferenceOrder2,
    Ridge,
    FullrankShrinkage,
    Fame,
}

/// Symmetric positive semi-definite marginal penalty `P_s` or `P_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalPenalty {
    matrix: DMatrix<f64>,
    kind: PenaltyKind,
    nullspace_dim: usize,
}

impl MarginalPenalty {
    /// Validates symmetry and semi-definiteness and counts the null-space.
    pub fn new(matrix: DMatrix<f64>, kind: PenaltyKind) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::invalid("penalty matrix must be square and non-empty"));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::invalid(format!(
                "penalty matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let (vals, _) = sym_eigen_desc(&matrix);
        let max = vals[0].max(0.0);
        if vals[vals.len() - 1] < -1e-10 * max {
            return Err(Error::invalid("penalty matrix is not positive semi-definite"));
        }
        let nullspace_dim = vals.iter().filter(|&&v| v <= RANK_TOL * max).count();
        Ok(MarginalPenalty {
            matrix,
            kind,
            nullspace_dim,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn nullspace_dim(&self) -> usize {
        self.nullspace_dim
    }

    pub fn k(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `d`-th order forward-difference operator of shape `(K - d) x K`.
pub fn difference_operator(k: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..order {
        let rows = d.nrows();
        d = DMatrix::from_fn(rows - 1, k, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    d
}

pub fn difference_penalty(k: usize, order: usize) -> Result<MarginalPenalty> {
    let kind = match order {
        1 => PenaltyKind::DifferenceOrder1,
        2 => PenaltyKind::DifferenceOrder2,
        _ => return Err(Error::invalid(format!("unsupported difference order {order}"))),
    };
    if k <= order {
        return Err(Error::invalid(format!(
            "difference penalty of order {order} needs K > {order}, got {k}"
        )));
    }
    let d = difference_operator(k, order);
    MarginalPenalty::new(d.transpose() * d, kind)
}

/// `λ_s (I_{K_t} ⊗ P_s) + λ_t (P_t ⊗ I_{K_s})` together with its factors.
#[derive(Debug, Clone)]
pub struct TensorPenalty {
    pub p_s: MarginalPenalty,
    pub p_t: MarginalPenalty,
    pub lambda_s: f64,
    pub lambda_t: f64,
    assembled: DMatrix<f64>,
}

impl TensorPenalty {
    pub fn assembled(&self) -> &DMatrix<f64> {
        &self.assembled
    }

    /// Same marginals with new smoothing parameters.
    pub fn with_lambdas(&self, lambda_s: f64, lambda_t: f64) -> Result<Self> {
        assemble_tensor_penalty(self.p_s.clone(), self.p_t.clone(), lambda_s, lambda_t)
    }
}

pub fn assemble_tensor_penalty(
    p_s: MarginalPenalty,
    p_t: MarginalPenalty,
    lambda_s: f64,
    lambda_t: f64,
) -> Result<TensorPenalty> {
    if !(lambda_s >= 0.0 && lambda_t >= 0.0) || !lambda_s.is_finite() || !lambda_t.is_finite() {
        return Err(Error::invalid(format!(
            "smoothing parameters must be finite and non-negative, got ({lambda_s}, {lambda_t})"
        )));
    }
    let assembled = tensor_penalty_matrix(p_s.matrix(), p_t.matrix(), lambda_s, lambda_t);
    Ok(TensorPenalty {
        p_s,
        p_t,
        lambda_s,
        lambda_t,
        assembled,
    })
}

pub(crate) fn tensor_penalty_matrix(
    p_s: &DMatrix<f64>,
    p_t: &DMatrix<f64>,
    lambda_s: f64,
    lambda_t: f64,
) -> DMatrix<f64> {
    let ks = p_s.nrows();
    let kt = p_t.nrows();
    kron(&DMatrix::identity(kt, kt), p_s) * lambda_s + kron(p_t, &DMatrix::identity(ks, ks)) * lambda_t
}
