use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::funbasis::QuadratureWeights;

use super::runner::SimResult;

/// `∫∫(β − β̂)² / ∫∫β²` with product quadrature.
pub fn rimse_beta(
    beta_hat: &DMatrix<f64>,
    beta_true: &DMatrix<f64>,
    w_s: &QuadratureWeights,
    w_t: &QuadratureWeights,
) -> Result<f64> {
    if beta_hat.shape() != beta_true.shape() || beta_true.nrows() != w_s.len() || beta_true.ncols() != w_t.len() {
        return Err(Error::invalid("surface shapes and quadrature weights disagree"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..beta_true.ncols() {
        for j in 0..beta_true.nrows() {
            let w = w_s.values()[j] * w_t.values()[k];
            num += w * (beta_true[(j, k)] - beta_hat[(j, k)]).powi(2);
            den += w * beta_true[(j, k)].powi(2);
        }
    }
    if !(den > 0.0) {
        return Err(Error::invalid("true coefficient surface is identically zero"));
    }
    Ok(num / den)
}

/// Mean over curves of `∫(Ŷ_i − E Y_i)² / ∫(Y_i − Ȳ_i)²`, where `Ȳ_i` is the
/// weighted t-mean of the observed curve.
pub fn rimse_y(
    y_hat: &DMatrix<f64>,
    signal: &DMatrix<f64>,
    y_obs: &DMatrix<f64>,
    w_t: &QuadratureWeights,
) -> Result<f64> {
    if y_hat.shape() != signal.shape() || y_obs.shape() != signal.shape() || signal.ncols() != w_t.len() {
        return Err(Error::invalid("response shapes and quadrature weights disagree"));
    }
    let n = signal.nrows();
    if n == 0 {
        return Err(Error::invalid("no curves"));
    }
    let w = w_t.values();
    let total_w = w_t.sum();
    let mut acc = 0.0;
    for i in 0..n {
        let mean = (0..w.len()).map(|k| w[k] * y_obs[(i, k)]).sum::<f64>() / total_w;
        let den: f64 = (0..w.len()).map(|k| w[k] * (y_obs[(i, k)] - mean).powi(2)).sum();
        if !(den > 0.0) {
            return Err(Error::invalid(format!("observed curve {i} is constant")));
        }
        let num: f64 = (0..w.len()).map(|k| w[k] * (y_hat[(i, k)] - signal[(i, k)]).powi(2)).sum();
        acc += num / den;
    }
    Ok(acc / n as f64)
}

/// 2x2 table of the flag verdict against `rIMSE_β > threshold`. Rates whose
/// denominator is empty are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlagScore {
    pub threshold: f64,
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

impl FlagScore {
    pub fn from_counts(threshold: f64, tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        FlagScore {
            threshold,
            true_positive: tp,
            false_positive: fp,
            true_negative: tn,
            false_negative: fn_,
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            ppv: ratio(tp, tp + fp),
            npv: ratio(tn, tn + fn_),
        }
    }
}

/// Scores the flag rule. A failed fit counts as flagged and as extreme.
pub fn score_flags(results: &[SimResult], threshold: f64) -> Result<FlagScore> {
    if results.is_empty() {
        return Err(Error::invalid("no results to score"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for r in results {
        let failed = !r.status.is_ok();
        let flagged = r.flagged || failed;
        let extreme = failed || !(r.rimse_beta <= threshold);
        match (flagged, extreme) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(FlagScore::from_counts(threshold, tp, fp, tn, fn_))
}

/// Empirical quantile with linear interpolation; infinite values sort last.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || v[lo] == v[hi] {
        return Some(v[lo]);
    }
    if v[hi].is_infinite() {
        return Some(if pos - lo as f64 > 0.0 { v[hi] } else { v[lo] });
    }
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}
