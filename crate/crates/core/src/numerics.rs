//! Dense complex linear algebra substrate.
//!
//! Everything downstream funnels through [`CMatrix`]: finite compressions of
//! operators, pseudo-inverses, projections, kernel extraction. All reductions
//! run in a fixed order so results are bit-reproducible across runs.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{Error, Result};

/// Dense complex matrix with finite entries and nonzero dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub(crate) inner: DMatrix<Complex64>,
}

impl CMatrix {
    /// Builds a matrix from row-major entries. Rejects degenerate shapes and
    /// non-finite entries at construction.
    pub fn from_rows(rows: usize, cols: usize, entries: &[Complex64]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::DegenerateShape { rows, cols });
        }
        assert_eq!(entries.len(), rows * cols, "entry count mismatch");
        let inner = DMatrix::from_fn(rows, cols, |i, j| entries[i * cols + j]);
        Self::from_dmatrix(inner)
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> Complex64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::DegenerateShape { rows, cols });
        }
        Self::from_dmatrix(DMatrix::from_fn(rows, cols, f))
    }

    pub(crate) fn from_dmatrix(inner: DMatrix<Complex64>) -> Result<Self> {
        if inner.nrows() == 0 || inner.ncols() == 0 {
            return Err(Error::DegenerateShape { rows: inner.nrows(), cols: inner.ncols() });
        }
        for j in 0..inner.ncols() {
            for i in 0..inner.nrows() {
                let z = inner[(i, j)];
                if !z.re.is_finite() || !z.im.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self { inner })
    }

    pub fn identity(n: usize) -> Self {
        Self { inner: DMatrix::identity(n, n) }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { inner: DMatrix::zeros(rows, cols) }
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.inner[(i, j)]
    }

    pub fn adjoint(&self) -> Self {
        Self { inner: self.inner.adjoint() }
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self { inner: &self.inner * &other.inner }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { inner: &self.inner + &other.inner }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { inner: &self.inner - &other.inner }
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self { inner: self.inner.map(|z| z * c) }
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.cols());
        let v = nalgebra::DVector::from_column_slice(x);
        (&self.inner * v).iter().copied().collect()
    }

    /// Leading `rows` x `cols` block.
    pub fn block(&self, rows: usize, cols: usize) -> Self {
        assert!(rows <= self.rows() && cols <= self.cols());
        Self { inner: self.inner.view((0, 0), (rows, cols)).into_owned() }
    }

    /// Spectral norm (largest singular value), via the Hermitian Gram
    /// matrix, which is robust where the plain SVD iteration may stall.
    pub fn op_norm(&self) -> f64 {
        // normalize by the Frobenius norm first: the Gram squares the scale,
        // and the eigensolver loses accuracy on severely under- or
        // over-scaled input
        let scale = self.inner.norm();
        if scale == 0.0 || !scale.is_finite() {
            return scale;
        }
        let scaled = self.inner.map(|z| z / scale);
        let gram = scaled.adjoint() * &scaled;
        let eigs = gram.symmetric_eigenvalues();
        let top = eigs.iter().fold(0.0, |m: f64, &e| m.max(e.max(0.0))).sqrt();
        if top.is_finite() {
            top * scale
        } else {
            // sigma_max <= fro_norm always holds; fall back to the bound
            scale
        }
    }

    pub fn fro_norm(&self) -> f64 {
        self.inner.norm()
    }

    /// Spectral norm of the leading `w` x `w` block (certified-window norm).
    pub fn window_norm(&self, w: usize) -> f64 {
        let w = w.min(self.rows()).min(self.cols());
        self.block(w, w).op_norm()
    }
}

/// Thin singular value decomposition A = U diag(sigma) V^*.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub left_vectors: CMatrix,
    pub singular_values: Vec<f64>,
    pub right_vectors: CMatrix,
}

/// Relative rank cutoff: singular values below `relative_cutoff * sigma_max`
/// are treated as zero.
#[derive(Debug, Clone, Copy)]
pub struct RankTolerance {
    pub relative_cutoff: f64,
}

impl RankTolerance {
    pub fn new(relative_cutoff: f64) -> Result<Self> {
        if !(relative_cutoff > 0.0 && relative_cutoff < 1.0) {
            return Err(Error::SpecInvalid(format!(
                "rank cutoff must lie in (0,1), got {relative_cutoff}"
            )));
        }
        Ok(Self { relative_cutoff })
    }

    /// Default cutoff, overridable through the `LEFTINV_TOL` environment
    /// variable.
    pub fn from_env() -> Self {
        if let Ok(s) = std::env::var("LEFTINV_TOL") {
            if let Ok(v) = s.parse::<f64>() {
                if let Ok(t) = Self::new(v) {
                    return t;
                }
            }
        }
        Self::default()
    }
}

impl Default for RankTolerance {
    fn default() -> Self {
        Self { relative_cutoff: 1e-10 }
    }
}

/// Thin SVD with singular values sorted nonincreasing.
pub fn svd_factor(a: &CMatrix) -> SvdFactors {
    let (rows, cols) = (a.rows(), a.cols());
    let m = faer::Mat::from_fn(rows, cols, |i, j| {
        let z = a.inner[(i, j)];
        faer::c64::new(z.re, z.im)
    });
    let svd = m.svd().expect("svd convergence");
    let k = rows.min(cols);
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| s[y].re.total_cmp(&s[x].re));
    let left = DMatrix::from_fn(rows, k, |i, j| {
        let z = u[(i, order[j])];
        Complex64::new(z.re, z.im)
    });
    let right = DMatrix::from_fn(cols, k, |i, j| {
        let z = v[(i, order[j])];
        Complex64::new(z.re, z.im)
    });
    SvdFactors {
        left_vectors: CMatrix { inner: left },
        singular_values: order.iter().map(|&i| s[i].re.max(0.0)).collect(),
        right_vectors: CMatrix { inner: right },
    }
}

/// Number of singular values above the relative cutoff.
pub fn numerical_rank(a: &CMatrix, tol: RankTolerance) -> usize {
    let sigma = svd_factor(a).singular_values;
    let smax = sigma.iter().fold(0.0, |m: f64, &s| m.max(s));
    if smax == 0.0 {
        return 0;
    }
    sigma.iter().filter(|&&s| s >= tol.relative_cutoff * smax).count()
}

/// Moore-Penrose pseudo-inverse via the SVD, with the relative rank cutoff.
pub fn pinv(a: &CMatrix, tol: RankTolerance) -> CMatrix {
    let f = svd_factor(a);
    let smax = f.singular_values.iter().fold(0.0, |m: f64, &s| m.max(s));
    let r = f.singular_values.len();
    let mut inv = DMatrix::<Complex64>::zeros(r, r);
    for i in 0..r {
        let s = f.singular_values[i];
        if smax > 0.0 && s >= tol.relative_cutoff * smax {
            inv[(i, i)] = Complex64::new(1.0 / s, 0.0);
        }
    }
    let x = &f.right_vectors.inner * inv * f.left_vectors.inner.adjoint();
    CMatrix { inner: x }
}

/// Orthonormal basis of the numerical kernel of `a`.
///
/// Each returned vector v satisfies ||A v|| <= cutoff * sigma_max. When the
/// matrix is wide, zero rows are appended first so the full right factor is
/// available.
pub fn kernel_basis(a: &CMatrix, tol: RankTolerance) -> Vec<Vec<Complex64>> {
    let (rows, cols) = (a.rows(), a.cols());
    let padded = if rows < cols {
        let mut m = DMatrix::<Complex64>::zeros(cols, cols);
        m.view_mut((0, 0), (rows, cols)).copy_from(&a.inner);
        CMatrix { inner: m }
    } else {
        a.clone()
    };
    let f = svd_factor(&padded);
    let smax = f.singular_values.iter().fold(0.0, |m: f64, &s| m.max(s));
    let mut out = Vec::new();
    for (i, &s) in f.singular_values.iter().enumerate() {
        if smax == 0.0 || s < tol.relative_cutoff * smax {
            let col: Vec<Complex64> =
                (0..cols).map(|k| f.right_vectors.get(k, i)).collect();
            out.push(col);
        }
    }
    out
}

/// Orthonormal basis for the span of the given vectors, with rank decided by
/// the relative cutoff.
pub fn orthonormalize(vectors: &[Vec<Complex64>], tol: RankTolerance) -> Vec<Vec<Complex64>> {
    if vectors.is_empty() {
        return Vec::new();
    }
    let dim = vectors[0].len();
    let m = DMatrix::from_fn(dim, vectors.len(), |i, j| vectors[j][i]);
    let a = CMatrix { inner: m };
    let f = svd_factor(&a);
    let smax = f.singular_values.iter().fold(0.0, |mx: f64, &s| mx.max(s));
    let mut out = Vec::new();
    for (i, &s) in f.singular_values.iter().enumerate() {
        if smax > 0.0 && s >= tol.relative_cutoff * smax {
            out.push((0..dim).map(|k| f.left_vectors.get(k, i)).collect());
        }
    }
    out
}

/// Largest principal angle (radians) between the spans of two orthonormal
/// families of equal dimension in a common ambient space.
pub fn max_principal_angle(u: &[Vec<Complex64>], v: &[Vec<Complex64>]) -> f64 {
    assert_eq!(u.len(), v.len(), "subspace dimensions differ");
    if u.is_empty() {
        return 0.0;
    }
    let dim = u[0].len();
    let mu = DMatrix::from_fn(dim, u.len(), |i, j| u[j][i]);
    let mv = DMatrix::from_fn(dim, v.len(), |i, j| v[j][i]);
    // sine formulation: accurate for tiny angles, unlike acos of an overlap
    // singular value
    let residual = &mu - &mv * (mv.adjoint() * &mu);
    // spectral norm through the Hermitian Gram matrix: nalgebra's SVD can
    // fail to converge on nearly-zero complex matrices
    let gram = residual.adjoint() * &residual;
    let eigs = gram.symmetric_eigenvalues();
    let sin_max = eigs.iter().fold(0.0, |m: f64, &e| m.max(e.max(0.0))).sqrt();
    sin_max.clamp(-1.0, 1.0).asin()
}

pub fn inner(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    assert_eq!(x.len(), y.len());
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..x.len() {
        acc += x[i] * y[i].conj();
    }
    acc
}

pub fn norm2(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn svd_identity_singular_values() {
        let a = CMatrix::identity(3);
        let f = svd_factor(&a);
        for &s in &f.singular_values {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn svd_zero_matrix() {
        let a = CMatrix::zeros(2, 2);
        let f = svd_factor(&a);
        assert!(f.singular_values.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn svd_column_vector_norm() {
        // sigma of the column (3,4)^T is its Euclidean norm, computed directly
        let expected = (3.0f64 * 3.0 + 4.0 * 4.0).sqrt();
        let a = CMatrix::from_rows(2, 1, &[c(3.0, 0.0), c(4.0, 0.0)]).unwrap();
        let f = svd_factor(&a);
        assert!((f.singular_values[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn pinv_diagonal_projection() {
        let a = CMatrix::from_rows(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)])
            .unwrap();
        let x = pinv(&a, RankTolerance::default());
        assert!((x.sub(&a)).fro_norm() < 1e-12);
    }

    #[test]
    fn pinv_column_vector() {
        let a = CMatrix::from_rows(2, 1, &[c(3.0, 0.0), c(4.0, 0.0)]).unwrap();
        let x = pinv(&a, RankTolerance::default());
        assert!((x.get(0, 0) - c(3.0 / 25.0, 0.0)).norm() < 1e-12);
        assert!((x.get(0, 1) - c(4.0 / 25.0, 0.0)).norm() < 1e-12);
        let axa = a.mul(&x).mul(&a);
        assert!(axa.sub(&a).fro_norm() < 1e-12);
    }

    #[test]
    fn pinv_unitary_is_adjoint() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let u = CMatrix::from_rows(
            2,
            2,
            &[c(s, 0.0), c(0.0, s), c(0.0, s), c(s, 0.0)],
        )
        .unwrap();
        let x = pinv(&u, RankTolerance::default());
        assert!(x.sub(&u.adjoint()).fro_norm() < 1e-12);
    }

    #[test]
    fn kernel_of_identity_empty() {
        let a = CMatrix::identity(4);
        assert!(kernel_basis(&a, RankTolerance::default()).is_empty());
    }

    #[test]
    fn kernel_of_zero_full() {
        let a = CMatrix::zeros(2, 2);
        let k = kernel_basis(&a, RankTolerance::default());
        assert_eq!(k.len(), 2);
        assert!((inner(&k[0], &k[1])).norm() < 1e-10);
        assert!((norm2(&k[0]) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn kernel_of_shift_adjoint_truncation() {
        // 4x3 unilateral shift truncation, conjugate-transposed: kernel e0
        let mut entries = vec![c(0.0, 0.0); 12];
        for j in 0..3 {
            entries[(j + 1) * 3 + j] = c(1.0, 0.0);
        }
        let t = CMatrix::from_rows(4, 3, &entries).unwrap();
        let k = kernel_basis(&t.adjoint(), RankTolerance::default());
        assert_eq!(k.len(), 1);
        assert!((k[0][0].norm() - 1.0).abs() < 1e-10);
        for i in 1..4 {
            assert!(k[0][i].norm() < 1e-10);
        }
    }

    #[test]
    fn nonfinite_rejected() {
        let err = CMatrix::from_rows(1, 2, &[c(f64::NAN, 0.0), c(0.0, 0.0)]);
        assert!(matches!(err, Err(Error::NonFinite { .. })));
        assert!(matches!(CMatrix::from_rows(0, 3, &[]), Err(Error::DegenerateShape { .. })));
    }

    fn arb_matrix() -> impl Strategy<Value = CMatrix> {
        ((1usize..=20, 1usize..=20)).prop_flat_map(|(r, cdim)| {
            proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), r * cdim)
                .prop_map(move |vals| {
                    let entries: Vec<Complex64> =
                        vals.into_iter().map(|(re, im)| c(re, im)).collect();
                    CMatrix::from_rows(r, cdim, &entries).unwrap()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn penrose_identities(a in arb_matrix()) {
            let tol = RankTolerance::default();
            let x = pinv(&a, tol);
            let smax = svd_factor(&a).singular_values.iter().fold(0.0, |m: f64, &s| m.max(s));
            let bound = 1e-8 * smax.max(1e-300);
            prop_assert!(a.mul(&x).mul(&a).sub(&a).fro_norm() <= bound);
            prop_assert!(x.mul(&a).mul(&x).sub(&x).fro_norm() <= bound.max(1e-8 / smax.max(1e-8)));
            let ax = a.mul(&x);
            prop_assert!(ax.sub(&ax.adjoint()).fro_norm() <= 1e-8);
            let xa = x.mul(&a);
            prop_assert!(xa.sub(&xa.adjoint()).fro_norm() <= 1e-8);
        }

        #[test]
        fn rank_nullity(a in arb_matrix()) {
            let tol = RankTolerance::default();
            let r = numerical_rank(&a, tol);
            let k = kernel_basis(&a, tol).len();
            prop_assert_eq!(r + k, a.cols());
        }

        #[test]
        fn svd_reconstruction(a in arb_matrix()) {
            let f = svd_factor(&a);
            let smax = f.singular_values.iter().fold(0.0, |m: f64, &s| m.max(s));
            let r = f.singular_values.len();
            let mut sig = DMatrix::<Complex64>::zeros(r, r);
            for i in 0..r {
                sig[(i, i)] = c(f.singular_values[i], 0.0);
            }
            let recon = &f.left_vectors.inner * sig * f.right_vectors.inner.adjoint();
            let diff = CMatrix::from_dmatrix(&a.inner - recon).unwrap();
            prop_assert!(diff.op_norm() <= 1e-12 * smax.max(1.0));
        }
    }
}
