//! Identifiability diagnostics: condition numbers, subspace overlap,
//! the flag rule and the kernel-overlap constraint basis.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpc::FunctionalSample;
use crate::funbasis::{BasisMatrix, MarginalPenalty, QuadratureWeights};
use crate::linalg::{self, column_space_basis, column_space_basis_with_tol, singular_values, sym_eigen_desc, RANK_TOL};

/// Subspace overlap `‖V_A^T V_B‖_F²` of the column spaces of `a` and
/// `b`. Zero when either matrix has no columns or is numerically zero.
pub fn lv_overlap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::invalid(format!(
            "overlap needs equal row counts, got {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let va = column_space_basis(a);
    let vb = column_space_basis(b);
    Ok(overlap_of_bases(&va, &vb))
}

/// Overlap of two matrices that already have orthonormal columns.
pub(crate) fn overlap_of_bases(va: &DMatrix<f64>, vb: &DMatrix<f64>) -> f64 {
    if va.ncols() == 0 || vb.ncols() == 0 {
        return 0.0;
    }
    (va.transpose() * vb).norm_squared()
}

/// Orthonormal basis of the orthogonal complement of the column space of `a`.
pub fn orthogonal_complement(a: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::orthogonal_complement(a)
}

/// Orthonormal eigenvectors of `p` whose eigenvalues are numerically zero.
pub fn penalty_nullspace_basis(p: &MarginalPenalty) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(p.matrix());
    let max = vals[0].max(0.0);
    let k = p.k();
    let r = vals.iter().filter(|&&v| v > RANK_TOL * max).count();
    vecs.columns(r, k - r).into_owned()
}

fn check_dims(x: &FunctionalSample, w: &QuadratureWeights, b_s: &BasisMatrix) -> Result<()> {
    if w.len() != x.n_points() || b_s.n_points() != x.n_points() {
        return Err(Error::invalid(format!(
            "dimension mismatch: X has {} grid points, weights {}, basis {}",
            x.n_points(),
            w.len(),
            b_s.n_points()
        )));
    }
    Ok(())
}

/// `W B_s P_{s⊥}`: the unpenalized functions, as seen through the quadrature.
fn weighted_null_functions(w: &QuadratureWeights, b_s: &BasisMatrix, null_basis: &DMatrix<f64>) -> DMatrix<f64> {
    w.scale_rows(&(b_s.values() * null_basis))
}

/// `∩_LV((X^T)_⊥, W B_s P_{s⊥})`: how much of the unpenalized function space
/// lies in directions the covariate never visits.
pub fn kernel_overlap_measure(
    x: &FunctionalSample,
    w: &QuadratureWeights,
    b_s: &BasisMatrix,
    p_s: &MarginalPenalty,
) -> Result<f64> {
    check_dims(x, w, b_s)?;
    if p_s.k() != b_s.k() {
        return Err(Error::invalid("penalty and basis dimensions differ"));
    }
    let null = penalty_nullspace_basis(p_s);
    if null.ncols() == 0 {
        return Ok(0.0);
    }
    let x_perp = orthogonal_complement(&x.values().transpose());
    let b = weighted_null_functions(w, b_s, &null);
    Ok(overlap_of_bases(&x_perp, &column_space_basis(&b)))
}

/// `κ(D_s^T D_s) = (σ_max / σ_min)²`, infinite when `D_s` is numerically
/// column-rank deficient.
pub fn condition_number(d_s: &DMatrix<f64>) -> f64 {
    let sv = singular_values(d_s);
    if sv.is_empty() || sv.len() < d_s.ncols() {
        return f64::INFINITY;
    }
    let max = sv[0];
    let min = sv[sv.len() - 1];
    if !(max > 0.0) || min < RANK_TOL * max {
        return f64::INFINITY;
    }
    (max / min).powi(2)
}

/// Basis `V_{Cs+}` of the part of `W B_s P_{s⊥}` that falls into the
/// complement of the curve space.
pub fn overlap_constraint_basis(
    x: &FunctionalSample,
    w: &QuadratureWeights,
    b_s: &BasisMatrix,
    null_basis: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_dims(x, w, b_s)?;
    let s = x.n_points();
    if null_basis.ncols() == 0 {
        return Ok(DMatrix::zeros(s, 0));
    }
    if null_basis.nrows() != b_s.k() {
        return Err(Error::invalid("null-space basis does not match the basis dimension"));
    }
    let x_perp = orthogonal_complement(&x.values().transpose());
    if x_perp.ncols() == 0 {
        return Ok(DMatrix::zeros(s, 0));
    }
    let b = weighted_null_functions(w, b_s, &null_basis.clone_owned());
    let scale = singular_values(&b).first().copied().unwrap_or(0.0);
    if !(scale > 0.0) {
        return Ok(DMatrix::zeros(s, 0));
    }
    // Projector onto span(X_⊥) from the thin QR of X_⊥.
    let q = x_perp.qr().q();
    let projected = &q * (q.transpose() * &b);
    Ok(column_space_basis_with_tol(&projected, RANK_TOL, Some(scale)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub kappa: f64,
    pub overlap: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            kappa: 1e6,
            overlap: 0.95,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticReport {
    #[serde(with = "inf_as_string")]
    pub kappa: f64,
    pub overlap: f64,
    pub flagged: bool,
    pub n_constraints: usize,
    pub thresholds: Thresholds,
    /// `S x q`; only filled when the report is flagged.
    #[serde(skip)]
    pub constraint_basis: DMatrix<f64>,
}

impl DiagnosticReport {
    pub fn is_flagged(kappa: f64, overlap: f64, thresholds: &Thresholds) -> bool {
        kappa >= thresholds.kappa && overlap >= thresholds.overlap
    }
}

pub fn diagnose(
    x: &FunctionalSample,
    w: &QuadratureWeights,
    b_s: &BasisMatrix,
    p_s: &MarginalPenalty,
) -> Result<DiagnosticReport> {
    diagnose_with(x, w, b_s, p_s, Thresholds::default())
}

pub fn diagnose_with(
    x: &FunctionalSample,
    w: &QuadratureWeights,
    b_s: &BasisMatrix,
    p_s: &MarginalPenalty,
    thresholds: Thresholds,
) -> Result<DiagnosticReport> {
    check_dims(x, w, b_s)?;
    let d_s = x.values() * w.scale_rows(b_s.values());
    let kappa = condition_number(&d_s);
    let overlap = kernel_overlap_measure(x, w, b_s, p_s)?;
    let flagged = DiagnosticReport::is_flagged(kappa, overlap, &thresholds);
    let constraint_basis = if flagged {
        overlap_constraint_basis(x, w, b_s, &penalty_nullspace_basis(p_s))?
    } else {
        DMatrix::zeros(x.n_points(), 0)
    };
    Ok(DiagnosticReport {
        kappa,
        overlap,
        flagged,
        n_constraints: constraint_basis.ncols(),
        thresholds,
        constraint_basis,
    })
}

/// Writes non-finite floats as `"inf"`, `"-inf"` or `"nan"`.
pub(crate) mod inf_as_string {
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::format_float(*v))
        }
    }
}

/// Display form used in reports and CSV output.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{eigen_system, sample_covariate, ProcessKind};
    use crate::fpc::center_curvewise;
    use crate::funbasis::{bspline_basis, difference_penalty, make_equidistant_grid, quadrature_weights, PenaltyKind};
    use crate::linalg::numerical_rank;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e(n: usize, i: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, 1);
        m[(i, 0)] = 1.0;
        m
    }

    #[test]
    fn overlap_small_cases() {
        assert!(lv_overlap(&e(3, 0), &e(3, 1)).unwrap().abs() < 1e-15);
        let ab = DMatrix::from_columns(&[e(3, 0).column(0), e(3, 1).column(0)]);
        assert!((lv_overlap(&ab, &e(3, 0)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(lv_overlap(&DMatrix::zeros(3, 0), &ab).unwrap(), 0.0);
        assert!(lv_overlap(&e(3, 0), &e(4, 0)).is_err());
    }

    #[test]
    fn complement_examples() {
        let c = orthogonal_complement(&e(2, 0));
        assert_eq!(c.ncols(), 1);
        assert!((c[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert_eq!(orthogonal_complement(&DMatrix::identity(3, 3)).ncols(), 0);
    }

    #[test]
    fn condition_numbers() {
        assert!((condition_number(&DMatrix::identity(3, 3)) - 1.0).abs() < 1e-12);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0]));
        assert!((condition_number(&d) - 4.0).abs() < 1e-12);
        assert_eq!(condition_number(&DMatrix::zeros(3, 2)), f64::INFINITY);
        assert_eq!(condition_number(&DMatrix::from_element(2, 3, 1.0)), f64::INFINITY);
    }

    #[test]
    fn penalty_null_spaces() {
        let n1 = penalty_nullspace_basis(&difference_penalty(5, 1).unwrap());
        assert_eq!(n1.ncols(), 1);
        let c = n1.column(0);
        assert!(c.iter().all(|v| (v.abs() - 1.0 / 5f64.sqrt()).abs() < 1e-12));

        let n2 = penalty_nullspace_basis(&difference_penalty(5, 2).unwrap());
        assert_eq!(n2.ncols(), 2);
        let lin = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        assert!(lv_overlap(&n2, &lin).unwrap() > 2.0 - 1e-10);

        let ridge = MarginalPenalty::new(DMatrix::identity(5, 5), PenaltyKind::Ridge).unwrap();
        assert_eq!(penalty_nullspace_basis(&ridge).ncols(), 0);
    }

    struct Setup {
        grid: crate::funbasis::Grid,
        w: QuadratureWeights,
    }

    fn setup() -> Setup {
        let grid = make_equidistant_grid(100, (0.0, 1.0)).unwrap();
        let w = quadrature_weights(&grid);
        Setup { grid, w }
    }

    fn draw(kind: ProcessKind, m: usize, seed: u64) -> (FunctionalSample, Setup) {
        let st = setup();
        let sys = eigen_system(kind, m, &st.grid, &st.w).unwrap();
        let x = sample_covariate(&sys, 50, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (x, st)
    }

    #[test]
    fn curvewise_centering_overlaps_constants() {
        let (x, st) = draw(ProcessKind::Wiener, 8, 1);
        let b = bspline_basis(&st.grid, 12, 3).unwrap();
        let p1 = difference_penalty(12, 1).unwrap();
        let before = kernel_overlap_measure(&x, &st.w, &b, &p1).unwrap();
        let (xc, _) = center_curvewise(&x, &st.w).unwrap();
        let after = kernel_overlap_measure(&xc, &st.w, &b, &p1).unwrap();
        assert!(after >= 0.95, "{after}");
        assert!(after > before);

        let v = overlap_constraint_basis(&xc, &st.w, &b, &penalty_nullspace_basis(&p1)).unwrap();
        assert_eq!(v.ncols(), 1);
        let ones = nalgebra::DVector::from_element(100, 0.1);
        let cos = v.column(0).dot(&ones).abs() / ones.norm();
        assert!(cos > 0.99, "{cos}");

        let ridge = MarginalPenalty::new(DMatrix::identity(12, 12), PenaltyKind::Ridge).unwrap();
        assert_eq!(kernel_overlap_measure(&xc, &st.w, &b, &ridge).unwrap(), 0.0);
        assert!(!diagnose(&xc, &st.w, &b, &ridge).unwrap().flagged);
    }

    #[test]
    fn poly_processes() {
        let (x, st) = draw(ProcessKind::PolyLin, 5, 2);
        let b8 = bspline_basis(&st.grid, 8, 3).unwrap();
        let m = kernel_overlap_measure(&x, &st.w, &b8, &difference_penalty(8, 1).unwrap()).unwrap();
        assert!(m < 0.95, "{m}");

        let (x, st) = draw(ProcessKind::PolyLin, 8, 3);
        let b5 = bspline_basis(&st.grid, 5, 3).unwrap();
        let r = diagnose(&x, &st.w, &b5, &difference_penalty(5, 1).unwrap()).unwrap();
        assert!(r.kappa.is_finite() && !r.flagged);

        let (x, st) = draw(ProcessKind::Poly1Plus, 5, 4);
        let b12 = bspline_basis(&st.grid, 12, 3).unwrap();
        let r = diagnose(&x, &st.w, &b12, &difference_penalty(12, 1).unwrap()).unwrap();
        assert!(r.flagged);
        assert_eq!(r.kappa, f64::INFINITY);
        assert!(r.n_constraints >= 1);

        let (x, st) = draw(ProcessKind::Poly2Plus, 5, 5);
        let p2 = difference_penalty(12, 2).unwrap();
        let v = overlap_constraint_basis(&x, &st.w, &b12, &penalty_nullspace_basis(&p2)).unwrap();
        assert_eq!(v.ncols(), 2);
    }

    #[test]
    fn antagonism_ordering() {
        for ks in [5usize, 8, 12] {
            for m in [3usize, 5, 8] {
                let st = setup();
                let b = bspline_basis(&st.grid, ks, 3).unwrap();
                let p1 = difference_penalty(ks, 1).unwrap();
                let p2 = difference_penalty(ks, 2).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64((ks * 100 + m) as u64);
                let measure = |kind: ProcessKind, p: &MarginalPenalty, rng: &mut ChaCha8Rng| {
                    let sys = eigen_system(kind, m, &st.grid, &st.w).unwrap();
                    let x = sample_covariate(&sys, 50, rng).unwrap();
                    kernel_overlap_measure(&x, &st.w, &b, p).unwrap()
                };
                assert!(measure(ProcessKind::Poly1Plus, &p1, &mut rng) >= 0.95);
                assert!(measure(ProcessKind::PolyLin, &p1, &mut rng) < 0.95);
                assert!(measure(ProcessKind::PolyMinus1, &p2, &mut rng) >= 0.95);
                assert!(measure(ProcessKind::PolyMinus1, &p1, &mut rng) < 0.95);
            }
        }
    }

    #[test]
    fn full_rank_covariate_has_no_constraints() {
        let st = setup();
        let x = FunctionalSample::new(DMatrix::identity(100, 100), st.grid.clone(), "X").unwrap();
        let b = bspline_basis(&st.grid, 8, 3).unwrap();
        let p1 = difference_penalty(8, 1).unwrap();
        let v = overlap_constraint_basis(&x, &st.w, &b, &penalty_nullspace_basis(&p1)).unwrap();
        assert_eq!(v.ncols(), 0);
    }

    #[test]
    fn report_json_writes_infinite_kappa_as_string() {
        let (x, st) = draw(ProcessKind::Poly1Plus, 3, 6);
        let b = bspline_basis(&st.grid, 12, 3).unwrap();
        let r = diagnose(&x, &st.w, &b, &difference_penalty(12, 1).unwrap()).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["kappa"], "inf");
        assert_eq!(json["flagged"], true);
        assert_eq!(json["thresholds"]["overlap"], 0.95);
        assert!(json.get("n_constraints").is_some());
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        use rand::Rng;
        DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn overlap_is_symmetric_and_bounded(seed in 0u64..10_000, n in 4usize..12, pa in 1usize..4, pb in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, n, pa);
            let b = random_matrix(&mut rng, n, pb);
            let ab = lv_overlap(&a, &b).unwrap();
            let ba = lv_overlap(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-10);
            prop_assert!(ab >= -1e-10);
            prop_assert!(ab <= numerical_rank(&a).min(numerical_rank(&b)) as f64 + 1e-10);
        }

        #[test]
        fn constraint_basis_lies_in_curve_complement(seed in 0u64..10_000, m in 1usize..6) {
            let st = setup();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = FunctionalSample::new(random_matrix(&mut rng, m, 100), st.grid.clone(), "X").unwrap();
            let (xc, _) = center_curvewise(&x, &st.w).unwrap();
            let b = bspline_basis(&st.grid, 8, 3).unwrap();
            let null = penalty_nullspace_basis(&difference_penalty(8, 2).unwrap());
            let v = overlap_constraint_basis(&xc, &st.w, &b, &null).unwrap();
            // Columns of V are orthogonal to every curve.
            let resid = xc.values() * &v;
            prop_assert!(resid.amax() < 1e-10 * xc.values().amax().max(1.0));
        }

        #[test]
        fn complement_completes_the_space(seed in 0u64..10_000, n in 2usize..10, p in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, n, p);
            let c = orthogonal_complement(&a);
            let gram = c.transpose() * &c;
            prop_assert!((gram - DMatrix::identity(c.ncols(), c.ncols())).amax() < 1e-12);
            let mut joined = DMatrix::zeros(n, p + c.ncols());
            joined.view_mut((0, 0), (n, p)).copy_from(&a);
            joined.view_mut((0, p), (n, c.ncols())).copy_from(&c);
            prop_assert_eq!(numerical_rank(&joined), n);
        }
    }
}
