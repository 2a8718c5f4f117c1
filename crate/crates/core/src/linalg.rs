//! Dense linear-algebra helpers shared by the diagnostic and fitting code.
//!
//! Every rank decision in the crate goes through [`RANK_TOL`]: a singular value
//! (or eigenvalue of a PSD matrix) below `RANK_TOL` times the largest one is
//! treated as zero.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

/// Relative tolerance for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            out.view_mut((i * br, j * bc), (br, bc))
                .zip_apply(b, |o, v| *o = aij * v);
        }
    }
    out
}

/// Column-major vectorization of a matrix.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &DVector<f64>, nrows: usize, ncols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), nrows * ncols);
    DMatrix::from_column_slice(nrows, ncols, v.as_slice())
}

/// Singular values of `a`, sorted descending.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    SVD::new(a.clone(), false, false).singular_values.iter().copied().collect()
}

/// Number of singular values above `RANK_TOL * sigma_max`.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let sv = singular_values(a);
    count_above(&sv, RANK_TOL)
}

fn count_above(sorted_desc: &[f64], rel: f64) -> usize {
    match sorted_desc.first() {
        Some(&max) if max > 0.0 => sorted_desc.iter().filter(|&&s| s > rel * max).count(),
        _ => 0,
    }
}

/// Thin SVD split into the parts belonging to positive and to (numerically)
/// zero singular values.
///
/// For `a = left * diag(sigma) * right^T`, `right_null` spans the right null
/// space of `a` (it is always completed to a full basis of the column space of
/// `a^T`'s complement, also when `a` has fewer rows than columns).
#[derive(Debug, Clone)]
pub struct SplitSvd {
    pub left: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub right: DMatrix<f64>,
    pub right_null: DMatrix<f64>,
}

impl SplitSvd {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (n, p) = a.shape();
        if n == 0 || p == 0 || a.iter().all(|&v| v == 0.0) {
            return SplitSvd {
                left: DMatrix::zeros(n, 0),
                sigma: DVector::zeros(0),
                right: DMatrix::zeros(p, 0),
                right_null: DMatrix::identity(p, p),
            };
        }
        let svd = SVD::new(a.clone(), true, true);
        let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        let r = count_above(&sv, RANK_TOL);
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested V^T");
        let left = u.columns(0, r).into_owned();
        let right = vt.rows(0, r).transpose();
        let right_null = orthogonal_complement(&right);
        SplitSvd {
            left,
            sigma: DVector::from_iterator(r, sv.into_iter().take(r)),
            right,
            right_null,
        }
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }
}

/// Orthonormal basis of the column space of `a` built from its left singular
/// vectors with positive singular values.
pub fn column_space_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    column_space_basis_with_tol(a, RANK_TOL, None)
}

/// Like [`column_space_basis`], but singular values are compared against
/// `rel * scale` when `scale` is given and against `rel * sigma_max` otherwise.
pub fn column_space_basis_with_tol(
    a: &DMatrix<f64>,
    rel: f64,
    scale: Option<f64>,
) -> DMatrix<f64> {
    let n = a.nrows();
    if a.ncols() == 0 || n == 0 || a.iter().all(|&v| v == 0.0) {
        return DMatrix::zeros(n, 0);
    }
    let svd = SVD::new(a.clone(), true, false);
    let sv = &svd.singular_values;
    let reference = scale.unwrap_or(sv[0]);
    let r = sv.iter().filter(|&&s| s > rel * reference).count();
    svd.u.expect("requested U").columns(0, r).into_owned()
}

/// Orthonormal basis (as columns) of the orthogonal complement of the column
/// space of `a`. Returns an `n x 0` matrix when `a` has full row rank.
pub fn orthogonal_complement(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = a.shape();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if p == 0 || a.iter().all(|&v| v == 0.0) {
        return DMatrix::identity(n, n);
    }
    // Pad to at least square so the SVD returns a full n x n set of left
    // singular vectors.
    let padded = if p < n {
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (n, p)).copy_from(a);
        m
    } else {
        a.clone()
    };
    let svd = SVD::new(padded, true, false);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let r = count_above(&sv, RANK_TOL);
    let u = svd.u.expect("requested U");
    u.columns(r, n - r).into_owned()
}

/// Orthonormal basis of the right null space of `a` (columns).
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    orthogonal_complement(&a.transpose())
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (eigenvectors permuted accordingly).
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Cholesky factorization with complete diagonal pivoting,
/// `P A P^T = L L^T`, stopping as soon as the largest remaining pivot drops
/// below `rel_tol` times the largest diagonal entry of `A`.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    /// `n x rank` lower-trapezoidal factor in pivoted order.
    pub l: DMatrix<f64>,
    /// `perm[k]` is the original index placed at position `k`.
    pub perm: Vec<usize>,
    pub rank: usize,
    /// Ratio of the pivot at which the factorization stopped (or the last
    /// pivot) to the largest diagonal entry.
    pub min_pivot_ratio: f64,
}

impl PivotedCholesky {
    pub fn new(a: &DMatrix<f64>, rel_tol: f64) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "pivoted Cholesky needs a square matrix");
        let mut work = (a + a.transpose()) * 0.5;
        let mut perm: Vec<usize> = (0..n).collect();
        let max_diag = (0..n).map(|i| work[(i, i)]).fold(0.0_f64, f64::max);
        let mut rank = n;
        let mut min_ratio = f64::INFINITY;
        if max_diag <= 0.0 {
            return PivotedCholesky {
                l: DMatrix::zeros(n, 0),
                perm,
                rank: 0,
                min_pivot_ratio: 0.0,
            };
        }
        for k in 0..n {
            let (piv, &pval) = (k..n)
                .map(|i| (i, &work[(i, i)]))
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("non-empty trailing block");
            let ratio = pval / max_diag;
            min_ratio = min_ratio.min(ratio);
            if !(pval > rel_tol * max_diag) {
                rank = k;
                break;
            }
            if piv != k {
                work.swap_rows(k, piv);
                work.swap_columns(k, piv);
                perm.swap(k, piv);
            }
            let lkk = pval.sqrt();
            work[(k, k)] = lkk;
            let m = n - k - 1;
            if m == 0 {
                continue;
            }
            let col = work.view((k + 1, k), (m, 1)).clone_owned() / lkk;
            work.view_mut((k + 1, k), (m, 1)).copy_from(&col);
            let mut trailing = work.view_mut((k + 1, k + 1), (m, m));
            trailing.ger(-1.0, &col.column(0), &col.column(0), 1.0);
        }
        let mut l = DMatrix::zeros(n, rank);
        for j in 0..rank {
            for i in j..n {
                l[(i, j)] = work[(i, j)];
            }
        }
        PivotedCholesky {
            l,
            perm,
            rank,
            min_pivot_ratio: min_ratio,
        }
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.dim()
    }

    fn permute_rows(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for (k, &src) in self.perm.iter().enumerate() {
            out.set_row(k, &b.row(src));
        }
        out
    }

    /// `L^{-1} P b` for a full-rank factorization.
    pub fn forward(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert!(self.is_full_rank());
        let pb = self.permute_rows(b);
        self.l
            .solve_lower_triangular(&pb)
            .expect("non-zero pivots in full-rank factor")
    }

    /// Solves `A x = b` for every column of `b`. Requires full rank.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let z = self.forward(b);
        let y = self
            .l
            .tr_solve_lower_triangular(&z)
            .expect("non-zero pivots in full-rank factor");
        let mut x = DMatrix::zeros(b.nrows(), b.ncols());
        for (k, &dst) in self.perm.iter().enumerate() {
            x.set_row(dst, &y.row(k));
        }
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        let x = self.solve(&m);
        DVector::from_column_slice(x.as_slice())
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eig_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let (vals, _) = sym_eigen_desc(a);
    (vals[vals.len() - 1], vals[0])
}

/// True when the symmetric matrix has all eigenvalues above
/// `RANK_TOL * lambda_max`.
pub fn is_positive_definite(a: &DMatrix<f64>) -> bool {
    if a.nrows() == 0 {
        return true;
    }
    let (lo, hi) = eig_extremes(a);
    hi > 0.0 && lo > RANK_TOL * hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kron_small() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let k = kron(&a, &b);
        let expected =
            DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0]);
        assert_eq!(k, expected);
    }

    #[test]
    fn vec_kron_identity() {
        // vec(A C B) = (B^T ⊗ A) vec(C)
        let a = DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 + 0.5);
        let c = DMatrix::from_fn(2, 4, |i, j| (i as f64 - j as f64).sin());
        let b = DMatrix::from_fn(4, 2, |i, j| (i * j) as f64 - 1.0);
        let lhs = vec_of(&(&a * &c * &b));
        let rhs = kron(&b.transpose(), &a) * vec_of(&c);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn complement_of_e1() {
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let c = orthogonal_complement(&a);
        assert_eq!(c.shape(), (2, 1));
        assert_relative_eq!(c[(0, 0)].abs(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(c[(1, 0)].abs(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn complement_of_full_rank_is_empty() {
        let a = DMatrix::from_fn(3, 4, |i, j| if i == j { 1.0 } else { 0.1 * (i + j) as f64 });
        assert_eq!(orthogonal_complement(&a).ncols(), 0);
    }

    #[test]
    fn pivoted_cholesky_detects_rank() {
        let v = DMatrix::from_fn(5, 3, |i, j| ((i + 1) as f64).powi(j as i32));
        let a = &v * v.transpose();
        let f = PivotedCholesky::new(&a, RANK_TOL);
        assert_eq!(f.rank, 3);

        let spd = &a + DMatrix::identity(5, 5);
        let f = PivotedCholesky::new(&spd, RANK_TOL);
        assert!(f.is_full_rank());
        let b = DVector::from_fn(5, |i, _| i as f64 - 2.0);
        let x = f.solve_vec(&b);
        assert_relative_eq!(&spd * x, b, epsilon = 1e-9);
    }

    #[test]
    fn split_svd_wide_matrix_has_full_null_space() {
        let a = DMatrix::from_fn(2, 5, |i, j| (i + j) as f64 + 1.0);
        let s = SplitSvd::new(&a);
        assert_eq!(s.rank(), 2);
        assert_eq!(s.right_null.shape(), (5, 3));
        assert!((&a * &s.right_null).norm() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn kron_vec_identity(r in 1usize..5, c in 1usize..5, p in 1usize..5, q in 1usize..5, seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut m = |a, b| DMatrix::from_fn(a, b, |_, _| rng.random_range(-1.0..1.0));
            let a = m(r, c);
            let x = m(c, p);
            let b = m(p, q);
            let lhs = vec_of(&(&a * &x * &b));
            let rhs = kron(&b.transpose(), &a) * vec_of(&x);
            proptest::prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn null_space_is_annihilated(r in 1usize..6, c in 1usize..8, seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
            let n = null_space(&a);
            proptest::prop_assert_eq!(n.ncols() + numerical_rank(&a), c);
            proptest::prop_assert!((&a * &n).amax() < 1e-10);
        }
    }
}
