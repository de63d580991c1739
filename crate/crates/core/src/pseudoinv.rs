//! Moore-Penrose inverse, Cauchy dual, left-inverse family, and the
//! telescoping kernel identities.
//!
//! The pseudo-inverse is computed by the closed formula (T*T)^{-1} T* through
//! a Hermitian positive definite solve; the SVD pseudo-inverse of the same
//! truncation serves as an independent cross-check, never as the primary
//! path.

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex64;

use crate::numerics::{kernel_basis, max_principal_angle, pinv, CMatrix, RankTolerance};
use crate::opmodel::{left_invertibility_certificate, fredholm_index, OperatorSpec, Truncation};
use crate::{Error, Result};

/// T, its Moore-Penrose inverse, and the two canonical projections at a
/// working truncation.
#[derive(Debug, Clone)]
pub struct MpPackage {
    pub t: Truncation,
    /// n x rows matrix, (T*T)^{-1} T*.
    pub t_dagger: CMatrix,
    /// TT-dagger, the projection onto ran(T).
    pub range_proj: CMatrix,
    /// P = I - TT-dagger, the projection onto ker(T*).
    pub defect_proj: CMatrix,
    /// 1 / sigma_min(T), stabilized across truncation sizes.
    pub dagger_norm: f64,
}

fn solve_hpd(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let chol = Cholesky::new(a.inner.clone())
        .ok_or_else(|| Error::NotLeftInvertible)?;
    // one step of iterative refinement keeps the solve accurate even for
    // moderately conditioned Gram matrices
    let x = chol.solve(&b.inner);
    let residual = &b.inner - &a.inner * &x;
    let x = x + chol.solve(&residual);
    Ok(CMatrix::from_dmatrix(x)?)
}

/// Builds the Moore-Penrose package by the closed formula, cross-checked
/// against the SVD pseudo-inverse to 1e-8.
pub fn moore_penrose(spec: &OperatorSpec, n: usize) -> Result<MpPackage> {
    let cert = left_invertibility_certificate(spec, n)?;
    if !cert.is_left_invertible {
        return Err(Error::NotLeftInvertible);
    }
    let t = spec.truncate(n)?;
    let tstar = t.matrix.adjoint();
    let gram = tstar.mul(&t.matrix);
    let t_dagger = solve_hpd(&gram, &tstar)?;

    let svd_route = pinv(&t.matrix, RankTolerance::from_env());
    let drift = t_dagger.sub(&svd_route).op_norm();
    if drift > 1e-8 {
        return Err(Error::CrossCheckFailed(format!(
            "closed-formula pseudo-inverse deviates from SVD route by {drift:.3e}"
        )));
    }

    let range_proj = t.matrix.mul(&t_dagger);
    let defect_proj = CMatrix::identity(range_proj.rows()).sub(&range_proj);
    Ok(MpPackage {
        t,
        t_dagger,
        range_proj,
        defect_proj,
        dagger_norm: 1.0 / cert.sigma_min,
    })
}

impl MpPackage {
    pub fn domain_dim(&self) -> usize {
        self.t.domain_dim
    }

    pub fn codomain_dim(&self) -> usize {
        self.t.matrix.rows()
    }

    /// Largest deviation among the four Penrose identities for (T, T-dagger).
    pub fn penrose_deviation(&self) -> f64 {
        let a = &self.t.matrix;
        let x = &self.t_dagger;
        let axa = a.mul(x).mul(a).sub(a).op_norm();
        let xax = x.mul(a).mul(x).sub(x).op_norm();
        let ax = a.mul(x);
        let sym1 = ax.sub(&ax.adjoint()).op_norm();
        let xa = x.mul(a);
        let sym2 = xa.sub(&xa.adjoint()).op_norm();
        axa.max(xax).max(sym1).max(sym2)
    }

    /// || T-dagger T - I ||.
    pub fn left_identity_deviation(&self) -> f64 {
        let n = self.domain_dim();
        self.t_dagger.mul(&self.t.matrix).sub(&CMatrix::identity(n)).op_norm()
    }
}

/// The Cauchy dual T' = T (T*T)^{-1}, with its defining identities verified:
/// pinv(T') = T* and ker(T'*) = ker(T*).
pub fn cauchy_dual(spec: &OperatorSpec, n: usize) -> Result<CMatrix> {
    let pkg = moore_penrose(spec, n)?;
    // T (T*T)^{-1} = (T-dagger)*
    let dual = pkg.t_dagger.adjoint();
    let dual_dagger = pinv(&dual, RankTolerance::from_env());
    let drift = dual_dagger.sub(&pkg.t.matrix.adjoint()).op_norm();
    if drift > 1e-8 {
        return Err(Error::CrossCheckFailed(format!(
            "pinv of the Cauchy dual deviates from T* by {drift:.3e}"
        )));
    }
    let tol = RankTolerance::from_env();
    let k_dual = kernel_basis(&dual.adjoint(), tol);
    let k_t = kernel_basis(&pkg.t.matrix.adjoint(), tol);
    if k_dual.len() != k_t.len() || max_principal_angle(&k_dual, &k_t) > 1e-8 {
        return Err(Error::CrossCheckFailed(
            "ker(T'*) does not match ker(T*)".into(),
        ));
    }
    Ok(dual)
}

/// L = T-dagger + A (I - T T-dagger), the general left inverse.
pub fn left_inverse_family(pkg: &MpPackage, a: &CMatrix) -> CMatrix {
    pkg.t_dagger.add(&a.mul(&pkg.defect_proj))
}

/// Recovers a coefficient A' with L = T-dagger + A'(I - TT-dagger) from any
/// left inverse L, and the residual ||L - (T-dagger + A'(I - TT-dagger))||.
pub fn recover_family_coefficient(pkg: &MpPackage, l: &CMatrix) -> (CMatrix, f64) {
    let a = l.sub(&pkg.t_dagger);
    let rebuilt = left_inverse_family(pkg, &a);
    let residual = l.sub(&rebuilt).op_norm();
    (a, residual)
}

/// Result of inverting a small perturbation of a left invertible operator.
#[derive(Debug, Clone)]
pub struct PerturbationResult {
    pub left_inverse: CMatrix,
    pub index_match: bool,
}

/// Left inverse (T-dagger S)^{-1} T-dagger of S for ||T - S|| < 1/||T-dagger||.
pub fn perturbation_left_inverse(
    spec_t: &OperatorSpec,
    spec_s: &OperatorSpec,
    n: usize,
) -> Result<PerturbationResult> {
    let pkg = moore_penrose(spec_t, n)?;
    let s = spec_s.truncate(n)?;
    let rows = pkg.codomain_dim().max(s.matrix.rows());
    let pad = |m: &CMatrix| -> CMatrix {
        let mut out = DMatrix::<Complex64>::zeros(rows, n);
        out.view_mut((0, 0), (m.rows(), n)).copy_from(&m.inner);
        CMatrix::from_dmatrix(out).expect("padded matrix")
    };
    let t_m = pad(&pkg.t.matrix);
    let s_m = pad(&s.matrix);
    let gap = t_m.sub(&s_m).op_norm();
    let bound = 1.0 / pkg.dagger_norm;
    if gap >= bound {
        return Err(Error::PerturbationTooLarge { gap, bound });
    }
    let mut dagger = DMatrix::<Complex64>::zeros(n, rows);
    dagger
        .view_mut((0, 0), (n, pkg.t_dagger.cols()))
        .copy_from(&pkg.t_dagger.inner);
    let dagger = CMatrix::from_dmatrix(dagger)?;
    let ds = dagger.mul(&s_m);
    let inv = ds
        .inner
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::CrossCheckFailed("T-dagger S not invertible".into()))?;
    let left = CMatrix::from_dmatrix(inv)?.mul(&dagger);
    let check = left.mul(&s_m).sub(&CMatrix::identity(n)).op_norm();
    if check > 1e-8 {
        return Err(Error::CrossCheckFailed(format!(
            "perturbation left inverse misses identity by {check:.3e}"
        )));
    }
    let index_match = fredholm_index(spec_s, n)? == fredholm_index(spec_t, n)?;
    Ok(PerturbationResult { left_inverse: left, index_match })
}

/// Square chops of T, T-dagger, and P at a common size, with the guard-band
/// arithmetic needed to certify windows of operator products.
#[derive(Debug, Clone)]
pub struct SquareModel {
    pub t: CMatrix,
    pub d: CMatrix,
    pub p: CMatrix,
    pub dim: usize,
    /// Largest index spread of a single factor under the enumeration.
    pub guard: usize,
}

impl SquareModel {
    pub fn from_package(pkg: &MpPackage) -> Self {
        let n = pkg.domain_dim();
        let t = pkg.t.matrix.block(n, n);
        let d = CMatrix::from_dmatrix(
            pkg.t_dagger.inner.view((0, 0), (n, n.min(pkg.t_dagger.cols()))).into_owned(),
        )
        .expect("square chop");
        let p = pkg.defect_proj.block(n, n);
        let mut guard = 1usize;
        for j in 0..n {
            for (i, _) in pkg.t.spec.column(j) {
                guard = guard.max(i.saturating_sub(j));
            }
            for (jj, _) in pkg.t.spec.row(j) {
                guard = guard.max(jj.saturating_sub(j));
            }
        }
        SquareModel { t, d, p, dim: n, guard }
    }

    /// Certified window size for a product of `factors` chopped factors.
    pub fn window(&self, factors: usize) -> Result<usize> {
        let needed = factors * self.guard;
        if needed + 4 > self.dim {
            return Err(Error::WindowTooSmall(format!(
                "{factors} factors with guard {} exceed dimension {}",
                self.guard, self.dim
            )));
        }
        Ok(self.dim - needed)
    }

    pub fn pow(&self, m: &CMatrix, k: usize) -> CMatrix {
        let mut acc = CMatrix::identity(self.dim);
        for _ in 0..k {
            acc = acc.mul(m);
        }
        acc
    }
}

/// Per-power deviations of the telescoping identity and the kernel-span
/// comparison for T-dagger powers.
#[derive(Debug, Clone)]
pub struct TelescopeReport {
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
    pub max_kernel_angle: f64,
}

/// Checks I - T^m T-dagger^m = sum_{k<m} T^k P T-dagger^k for m <= n_max on
/// the certified window, and ker(T-dagger^m) = span{T^k ker(T*)}.
pub fn telescope_check(pkg: &MpPackage, n_max: usize) -> Result<TelescopeReport> {
    let model = SquareModel::from_package(pkg);
    let n = model.dim;
    let tol = RankTolerance::from_env();
    let defect = kernel_basis(&pkg.t.spec.truncate_adjoint(n)?.matrix, tol);
    let mut deviations = Vec::new();
    let mut max_angle = 0.0f64;
    for m in 1..=n_max {
        let w = model.window(2 * (m + 1))?;
        let tm = model.pow(&model.t, m);
        let dm = model.pow(&model.d, m);
        let lhs = CMatrix::identity(n).sub(&tm.mul(&dm));
        let mut rhs = CMatrix::zeros(n, n);
        for k in 0..m {
            let tk = model.pow(&model.t, k);
            let dk = model.pow(&model.d, k);
            rhs = rhs.add(&tk.mul(&model.p).mul(&dk));
        }
        deviations.push(lhs.sub(&rhs).window_norm(w));

        // kernel of T-dagger^m on the window vs the orbit span of ker(T*)
        let dm_window = dm.block(w, w);
        let mut kernel = kernel_basis(&dm_window, tol);
        let mut orbit: Vec<Vec<Complex64>> = Vec::new();
        for e in &defect {
            let mut v = e.clone();
            for _ in 0..m {
                if orbit.len() < m * defect.len() {
                    let mut tv = v.clone();
                    tv.truncate(w);
                    tv.resize(w, Complex64::default());
                    orbit.push(tv);
                    v = pkg.t.spec.apply_exact(&v);
                }
            }
        }
        if kernel.len() != orbit.len() {
            return Err(Error::CrossCheckFailed(format!(
                "ker(T-dagger^{m}) dimension {} differs from orbit span {}",
                kernel.len(),
                orbit.len()
            )));
        }
        let orbit = crate::numerics::orthonormalize(&orbit, tol);
        kernel.truncate(orbit.len());
        max_angle = max_angle.max(max_principal_angle(&kernel, &orbit));
    }
    let max_deviation = deviations.iter().fold(0.0, |a: f64, &b| a.max(b));
    Ok(TelescopeReport { deviations, max_deviation, max_kernel_angle: max_angle })
}
