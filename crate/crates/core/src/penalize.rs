//! Remedial penalties: ridge, full-rank shrinkage of a difference penalty and
//! the FPC-based FAME penalty, plus the penalty menu used by the CLI and the
//! simulation harness.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpc::{empirical_fpc, FpcDecomposition, FunctionalSample};
use crate::funbasis::{difference_penalty, BasisMatrix, MarginalPenalty, PenaltyKind, QuadratureWeights};
use crate::linalg::{sym_eigen_desc, RANK_TOL};

pub fn ridge_penalty(k: usize) -> Result<MarginalPenalty> {
    if k == 0 {
        return Err(Error::invalid("ridge penalty needs K >= 1"));
    }
    MarginalPenalty::new(DMatrix::identity(k, k), PenaltyKind::Ridge)
}

/// Replaces the zero eigenvalues of `p` by `epsilon` times its smallest
/// positive eigenvalue. A penalty that is already full rank is returned
/// unchanged.
pub fn fullrank_shrinkage(p: &MarginalPenalty, epsilon: f64) -> Result<MarginalPenalty> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid(format!("shrinkage epsilon must be positive, got {epsilon}")));
    }
    let (vals, vecs) = sym_eigen_desc(p.matrix());
    let max = vals[0];
    if !(max > 0.0) {
        return Err(Error::invalid("cannot shrink a zero penalty"));
    }
    let r = vals.iter().filter(|&&v| v > RANK_TOL * max).count();
    if r == vals.len() {
        log::warn!("penalty is already full rank; shrinkage leaves it unchanged");
        return Ok(p.clone());
    }
    let fill = epsilon * vals[r - 1];
    let new_vals = DVector::from_fn(vals.len(), |i, _| if i < r { vals[i] } else { fill });
    let m = &vecs * DMatrix::from_diagonal(&new_vals) * vecs.transpose();
    MarginalPenalty::new(symmetrize(m), PenaltyKind::FullrankShrinkage)
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `Σ_m ν̃_m^{-1} B_s^T diag(w φ̂_m²) B_s` over all components of the thin SVD,
/// with `ν̃_m = max(ν̂_m, floor · ν̂_1)`.
pub fn fame_penalty(
    decomp: &FpcDecomposition,
    b_s: &BasisMatrix,
    w: &QuadratureWeights,
    floor: f64,
) -> Result<MarginalPenalty> {
    if decomp.rank() == 0 {
        return Err(Error::invalid("FAME penalty needs at least one non-zero FPC"));
    }
    if !(floor > 0.0) {
        return Err(Error::invalid("FAME eigenvalue floor must be positive"));
    }
    let g = b_s.n_points();
    if decomp.eigenvectors.ncols() != g || w.len() != g {
        return Err(Error::invalid("FPC grid, basis and weights do not match"));
    }
    let nu1 = decomp.eigenvalues[0];
    let min_nu = floor * nu1;
    let mut pointwise = DVector::<f64>::zeros(g);
    let mut add = |phi: nalgebra::DVectorView<f64>, nu: f64| {
        let inv = 1.0 / nu.max(min_nu);
        for j in 0..g {
            pointwise[j] += inv * phi[j] * phi[j];
        }
    };
    for (m, row) in decomp.eigenvectors.row_iter().enumerate() {
        add(row.transpose().as_view(), decomp.eigenvalues[m]);
    }
    for row in decomp.trailing_eigenvectors.row_iter() {
        add(row.transpose().as_view(), 0.0);
    }
    let weight = pointwise.component_mul(w.values());
    let bw = DMatrix::from_fn(g, b_s.k(), |j, k| b_s.values()[(j, k)] * weight[j]);
    MarginalPenalty::new(symmetrize(b_s.values().transpose() * bw), PenaltyKind::Fame)
}

/// Penalty choices offered for the s-direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FitPenalty {
    #[serde(rename = "d1")]
    D1,
    #[serde(rename = "d2")]
    D2,
    #[serde(rename = "ridge")]
    Ridge,
    #[serde(rename = "d1c")]
    D1C,
    #[serde(rename = "d2c")]
    D2C,
    #[serde(rename = "fullrank-d1")]
    FullrankD1,
    #[serde(rename = "fullrank-d2")]
    FullrankD2,
    #[serde(rename = "fame")]
    Fame,
}

impl FitPenalty {
    pub const ALL: [FitPenalty; 8] = [
        FitPenalty::D1,
        FitPenalty::D2,
        FitPenalty::Ridge,
        FitPenalty::D1C,
        FitPenalty::D2C,
        FitPenalty::FullrankD1,
        FitPenalty::FullrankD2,
        FitPenalty::Fame,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FitPenalty::D1 => "d1",
            FitPenalty::D2 => "d2",
            FitPenalty::Ridge => "ridge",
            FitPenalty::D1C => "d1c",
            FitPenalty::D2C => "d2c",
            FitPenalty::FullrankD1 => "fullrank-d1",
            FitPenalty::FullrankD2 => "fullrank-d2",
            FitPenalty::Fame => "fame",
        }
    }

    /// Order of the underlying difference penalty, if any.
    pub fn difference_order(self) -> Option<usize> {
        match self {
            FitPenalty::D1 | FitPenalty::D1C | FitPenalty::FullrankD1 => Some(1),
            FitPenalty::D2 | FitPenalty::D2C | FitPenalty::FullrankD2 => Some(2),
            FitPenalty::Ridge | FitPenalty::Fame => None,
        }
    }

    /// Whether kernel-overlap constraints are added when the diagnosis flags.
    pub fn is_constrained(self) -> bool {
        matches!(self, FitPenalty::D1C | FitPenalty::D2C)
    }

    /// Plain difference penalties, the ones the flag rule is meant for.
    pub fn is_plain_difference(self) -> bool {
        matches!(self, FitPenalty::D1 | FitPenalty::D2)
    }
}

impl fmt::Display for FitPenalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FitPenalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FitPenalty::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown penalty '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyRecipe {
    pub kind: FitPenalty,
    /// Shrinkage factor for the full-rank variants.
    pub epsilon: f64,
    /// FAME eigenvalue floor, relative to the leading eigenvalue.
    pub fame_floor: f64,
}

impl PenaltyRecipe {
    pub fn new(kind: FitPenalty) -> Self {
        PenaltyRecipe {
            kind,
            epsilon: 0.1,
            fame_floor: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.fame_floor > 0.0) {
            return Err(Error::invalid("epsilon and FAME floor must be positive"));
        }
        Ok(())
    }

    /// The penalty whose null-space the flag rule inspects: the plain
    /// difference penalty for the difference-based kinds and the actual
    /// penalty otherwise.
    pub fn diagnostic_penalty(&self, x: &FunctionalSample, w: &QuadratureWeights, b_s: &BasisMatrix) -> Result<MarginalPenalty> {
        match self.kind.difference_order() {
            Some(order) if !matches!(self.kind, FitPenalty::FullrankD1 | FitPenalty::FullrankD2) => {
                difference_penalty(b_s.k(), order)
            }
            _ => self.marginal_s(x, w, b_s),
        }
    }

    /// Marginal s-penalty used in the fit. FAME decomposes `x` itself.
    pub fn marginal_s(&self, x: &FunctionalSample, w: &QuadratureWeights, b_s: &BasisMatrix) -> Result<MarginalPenalty> {
        self.validate()?;
        let k = b_s.k();
        match self.kind {
            FitPenalty::D1 | FitPenalty::D1C => difference_penalty(k, 1),
            FitPenalty::D2 | FitPenalty::D2C => difference_penalty(k, 2),
            FitPenalty::Ridge => ridge_penalty(k),
            FitPenalty::FullrankD1 => fullrank_shrinkage(&difference_penalty(k, 1)?, self.epsilon),
            FitPenalty::FullrankD2 => fullrank_shrinkage(&difference_penalty(k, 2)?, self.epsilon),
            FitPenalty::Fame => {
                let decomp = empirical_fpc(x, w)?;
                fame_penalty(&decomp, b_s, w, self.fame_floor)
            }
        }
    }
}
