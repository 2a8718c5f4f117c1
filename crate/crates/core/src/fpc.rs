//! Functional samples, centering, and the empirical Karhunen–Loève
//! decomposition `X = Ξ Φ` used for presmoothing and the FAME penalty.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::funbasis::{Grid, QuadratureWeights};
use crate::linalg::RANK_TOL;

/// `N` curves evaluated on a shared grid; one curve per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    values: DMatrix<f64>,
    grid: Grid,
    label: String,
}

impl FunctionalSample {
    pub fn new(values: DMatrix<f64>, grid: Grid, label: impl Into<String>) -> Result<Self> {
        if values.ncols() != grid.len() {
            return Err(Error::invalid(format!(
                "sample has {} columns but the grid has {} points",
                values.ncols(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("functional sample contains non-finite values".into()));
        }
        Ok(FunctionalSample {
            values,
            grid,
            label: label.into(),
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n_curves(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.values.ncols()
    }

    pub(crate) fn with_values(&self, values: DMatrix<f64>) -> Self {
        FunctionalSample {
            values,
            grid: self.grid.clone(),
            label: self.label.clone(),
        }
    }

    /// Rows `idx` of the sample, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let values = DMatrix::from_fn(idx.len(), self.n_points(), |i, j| self.values[(idx[i], j)]);
        self.with_values(values)
    }
}

/// Subtracts the pointwise mean curve so every column has mean zero.
pub fn center_mean_function(sample: &FunctionalSample) -> Result<FunctionalSample> {
    let n = sample.n_curves();
    if n < 2 {
        return Err(Error::invalid("mean centering needs at least two curves"));
    }
    let mut values = sample.values().clone();
    for mut col in values.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    Ok(sample.with_values(values))
}

/// Removes each curve's quadrature-weighted mean so that
/// `Σ_l w_l X_i(s_l) = 0`; returns the removed means.
pub fn center_curvewise(
    sample: &FunctionalSample,
    weights: &QuadratureWeights,
) -> Result<(FunctionalSample, Vec<f64>)> {
    if weights.len() != sample.n_points() {
        return Err(Error::invalid("weights do not match the sample grid"));
    }
    let w = weights.values();
    let total = weights.sum();
    let mut values = sample.values().clone();
    let mut means = Vec::with_capacity(values.nrows());
    for mut row in values.row_iter_mut() {
        let m = row.dot(&w.transpose()) / total;
        row.add_scalar_mut(-m);
        means.push(m);
    }
    Ok((sample.with_values(values), means))
}

/// Which inner product the eigenfunctions are orthonormal under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FpcInnerProduct {
    /// `Φ W Φ^T = I`, via the SVD of `X W^{1/2}`.
    #[default]
    Weighted,
    /// `Φ Φ^T = I`, via the SVD of `X`.
    Euclidean,
}

#[derive(Debug, Clone)]
pub struct FpcDecomposition {
    /// `M x G`, rows are the eigenfunctions on the grid.
    pub eigenvectors: DMatrix<f64>,
    /// Strictly positive, descending.
    pub eigenvalues: DVector<f64>,
    /// `N x M`.
    pub scores: DMatrix<f64>,
    /// Remaining right singular directions of the thin SVD (zero eigenvalue),
    /// `(min(N, G) - M) x G`, on the same scale as `eigenvectors`.
    pub trailing_eigenvectors: DMatrix<f64>,
    pub weights: QuadratureWeights,
    pub inner_product: FpcInnerProduct,
    pub n_curves: usize,
    grid: Grid,
    label: String,
}

impl FpcDecomposition {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `ΞΦ` restricted to the first `k` components.
    fn reconstruct(&self, k: usize) -> DMatrix<f64> {
        let g = self.grid.len();
        if k == 0 {
            return DMatrix::zeros(self.n_curves, g);
        }
        self.scores.columns(0, k) * self.eigenvectors.rows(0, k)
    }
}

pub fn empirical_fpc(sample: &FunctionalSample, weights: &QuadratureWeights) -> Result<FpcDecomposition> {
    empirical_fpc_with(sample, weights, FpcInnerProduct::Weighted)
}

pub fn empirical_fpc_with(
    sample: &FunctionalSample,
    weights: &QuadratureWeights,
    inner_product: FpcInnerProduct,
) -> Result<FpcDecomposition> {
    let n = sample.n_curves();
    let g = sample.n_points();
    if n == 0 {
        return Err(Error::invalid("FPC decomposition needs at least one curve"));
    }
    if weights.len() != g {
        return Err(Error::invalid("weights do not match the sample grid"));
    }
    let sqrt_w: DVector<f64> = weights.values().map(f64::sqrt);
    let x = sample.values();
    let a = match inner_product {
        FpcInnerProduct::Weighted => {
            let mut a = x.clone();
            for (j, mut col) in a.column_iter_mut().enumerate() {
                col *= sqrt_w[j];
            }
            a
        }
        FpcInnerProduct::Euclidean => x.clone(),
    };

    let svd = SVD::new(a, true, true);
    let sv = &svd.singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let m = if max > 0.0 {
        sv.iter().filter(|&&s| s > RANK_TOL * max).count()
    } else {
        0
    };
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let back = |rows: DMatrix<f64>| -> DMatrix<f64> {
        match inner_product {
            FpcInnerProduct::Weighted => {
                let mut r = rows;
                for (j, mut col) in r.column_iter_mut().enumerate() {
                    col /= sqrt_w[j];
                }
                r
            }
            FpcInnerProduct::Euclidean => rows,
        }
    };
    let eigenvectors = back(vt.rows(0, m).into_owned());
    let trailing_eigenvectors = back(vt.rows(m, vt.nrows() - m).into_owned());
    let mut scores = u.columns(0, m).into_owned();
    for (k, mut col) in scores.column_iter_mut().enumerate() {
        col *= sv[k];
    }
    let eigenvalues = DVector::from_iterator(m, sv.iter().take(m).map(|s| s * s / n as f64));
    Ok(FpcDecomposition {
        eigenvectors,
        eigenvalues,
        scores,
        trailing_eigenvectors,
        weights: weights.clone(),
        inner_product,
        n_curves: n,
        grid: sample.grid().clone(),
        label: sample.label().to_string(),
    })
}

/// Presmoothing: reconstruction from the leading `k` components.
pub fn truncate_fpc(decomp: &FpcDecomposition, k: usize) -> Result<FunctionalSample> {
    if k == 0 || k > decomp.rank() {
        return Err(Error::invalid(format!(
            "truncation level {k} outside 1..={}",
            decomp.rank()
        )));
    }
    FunctionalSample::new(decomp.reconstruct(k), decomp.grid.clone(), decomp.label.clone())
}
