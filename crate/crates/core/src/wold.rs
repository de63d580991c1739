//! Wold-type subspaces, the analyticity test, and the block composition
//! where the classical Wold decomposition fails.
//!
//! Analyticity is decided through the density of the union of ker(T*^k):
//! range intersections of injective operators are numerically
//! indistinguishable at truncation, kernel spans are not.

use num_complex::Complex64;

use crate::numerics::{
    inner, kernel_basis, norm2, orthonormalize, CMatrix, RankTolerance,
};
use crate::opmodel::{int_coord, nat_coord, OperatorSpec};
use crate::pseudoinv::cauchy_dual;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticVerdict {
    Analytic,
    NotAnalytic,
    Inconclusive,
}

impl std::fmt::Display for AnalyticVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AnalyticVerdict::Analytic => "Analytic",
            AnalyticVerdict::NotAnalytic => "NotAnalytic",
            AnalyticVerdict::Inconclusive => "Inconclusive",
        };
        f.write_str(s)
    }
}

/// Truncated estimates of the Wold subspaces and the analyticity verdict.
#[derive(Debug, Clone)]
pub struct WoldReport {
    pub h_i_basis: Vec<Vec<Complex64>>,
    pub h_a_basis: Vec<Vec<Complex64>>,
    pub h_a_prime_basis: Vec<Vec<Complex64>>,
    pub min_principal_angle_i_a: f64,
    pub density_defect: f64,
    pub analytic_verdict: AnalyticVerdict,
}

#[derive(Debug, Clone, Copy)]
pub struct DualDecomposition {
    pub orthogonality_gap: f64,
    pub completeness_gap: f64,
}

/// Exact truncation of a power, built column by column through repeated
/// sparse application; the row count stays proportional to the actual
/// support of the power orbit.
fn power_columns(
    spec: &OperatorSpec,
    n: usize,
    k: usize,
    apply: impl Fn(&OperatorSpec, &[Complex64]) -> Vec<Complex64>,
) -> Result<CMatrix> {
    spec.validate()?;
    let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    let mut rows = 1usize;
    for j in 0..n {
        let mut v = vec![Complex64::default(); j + 1];
        v[j] = Complex64::new(1.0, 0.0);
        for _ in 0..k {
            v = apply(spec, &v);
        }
        rows = rows.max(v.len());
        cols.push(v);
    }
    let mut m = CMatrix::zeros(rows, n);
    for (j, col) in cols.iter().enumerate() {
        for (i, &z) in col.iter().enumerate() {
            m.inner[(i, j)] = z;
        }
    }
    Ok(m)
}

fn adjoint_power(spec: &OperatorSpec, n: usize, k: usize) -> Result<CMatrix> {
    power_columns(spec, n, k, |s, v| s.apply_adjoint_exact(v))
}

fn forward_power(spec: &OperatorSpec, n: usize, k: usize) -> Result<CMatrix> {
    power_columns(spec, n, k, |s, v| s.apply_exact(v))
}

fn kernel_dim_at_depth(spec: &OperatorSpec, n: usize, depth: usize) -> Result<usize> {
    let m = adjoint_power(spec, n, depth)?;
    Ok(kernel_basis(&m, RankTolerance::from_env()).len())
}

fn window_vec(v: &[Complex64], w: usize) -> Vec<Complex64> {
    let mut out = v.to_vec();
    out.resize(w, Complex64::default());
    out.truncate(w);
    out
}

fn normalize(v: &mut [Complex64]) -> bool {
    let nrm = norm2(v);
    if nrm < 1e-14 {
        return false;
    }
    for z in v.iter_mut() {
        *z /= nrm;
    }
    true
}

/// Orthonormal basis of ran(T^depth) restricted to the leading `w`
/// coordinates: kernel of the tail rows of the exact power matrix, pushed
/// through the power.
fn h_i_window(spec: &OperatorSpec, n: usize, depth: usize, w: usize) -> Result<Vec<Vec<Complex64>>> {
    let power = forward_power(spec, n, depth)?;
    let rows = power.rows();
    if w >= rows {
        return Err(Error::WindowTooSmall(format!(
            "range window {w} does not leave tail rows at size {rows}"
        )));
    }
    let tail = CMatrix::from_dmatrix(power.inner.view((w, 0), (rows - w, n)).into_owned())?;
    let tol = RankTolerance::from_env();
    let coeffs = kernel_basis(&tail, tol);
    let mut images = Vec::new();
    for a in &coeffs {
        let mut img = power.apply(a);
        img.truncate(w);
        img.resize(w, Complex64::default());
        if normalize(&mut img) {
            images.push(img);
        }
    }
    Ok(orthonormalize(&images, tol))
}

/// Defect basis: exact kernel of T* on the first n coordinates.
pub fn defect_basis(spec: &OperatorSpec, n: usize) -> Result<Vec<Vec<Complex64>>> {
    let m = spec.truncate_adjoint(n)?.matrix;
    Ok(kernel_basis(&m, RankTolerance::from_env()))
}

/// Orbit T^k E for k < depth, exact, windowed and orthonormalized.
fn forward_orbit_window(
    spec: &OperatorSpec,
    defect: &[Vec<Complex64>],
    depth: usize,
    w: usize,
) -> Vec<Vec<Complex64>> {
    let mut orbit = Vec::new();
    for e in defect {
        let mut v = e.clone();
        for _ in 0..depth {
            let mut win = window_vec(&v, w);
            if normalize(&mut win) {
                orbit.push(win);
            }
            v = spec.apply_exact(&v);
        }
    }
    orbit
}

/// Numeric orbit of the Cauchy dual T'^k E for k < depth, windowed.
fn dual_orbit_window(
    spec: &OperatorSpec,
    n: usize,
    defect: &[Vec<Complex64>],
    depth: usize,
    w: usize,
) -> Result<Vec<Vec<Complex64>>> {
    let dual = cauchy_dual(spec, n)?;
    let square = dual.block(n, n);
    let mut orbit = Vec::new();
    for e in defect {
        let mut v = window_vec(e, n);
        for _ in 0..depth {
            let mut win = window_vec(&v, w);
            if normalize(&mut win) {
                orbit.push(win);
            }
            v = square.apply(&v);
        }
    }
    Ok(orbit)
}

/// Estimates the Wold subspaces at truncation size n and decides the
/// analyticity verdict from the density of the kernel union at two depths.
pub fn wold_subspaces(spec: &OperatorSpec, n: usize, depth: usize) -> Result<WoldReport> {
    if depth < 2 || depth >= n {
        return Err(Error::WindowTooSmall(format!(
            "depth {depth} incompatible with truncation size {n}"
        )));
    }
    let defect = defect_basis(spec, n)?;
    if defect.is_empty() {
        return Err(Error::NotNatural("ker(T*) is trivial at the truncation".into()));
    }

    let dim_half = kernel_dim_at_depth(spec, n, 3 * depth / 4)?;
    let dim_full = kernel_dim_at_depth(spec, n, depth)?;
    let defect_half = 1.0 - dim_half as f64 / n as f64;
    let defect_full = 1.0 - dim_full as f64 / n as f64;
    let analytic_verdict = if defect_full < 0.05 && defect_full <= defect_half {
        AnalyticVerdict::Analytic
    } else if defect_full > 0.1 && (defect_half - defect_full).abs() < 0.05 {
        AnalyticVerdict::NotAnalytic
    } else {
        AnalyticVerdict::Inconclusive
    };

    // the intersection estimate needs every window coordinate to have a
    // depth-step preimage inside the truncated domain; n/6 leaves room for
    // the slowest-reached enumeration labels
    let d_hi = depth.min(n / 6).max(2);
    let w = (2 * d_hi).min(n);
    let h_i_basis = h_i_window(spec, n, d_hi, w)?;
    let tol = RankTolerance::from_env();
    let h_a_raw = forward_orbit_window(spec, &defect, w / 2, w);
    let h_a_basis = orthonormalize(&h_a_raw, tol);
    let h_a_prime_raw = dual_orbit_window(spec, n, &defect, w / 2, w)?;
    let h_a_prime_basis = orthonormalize(&h_a_prime_raw, tol);

    // smallest principal angle = largest overlap direction
    let min_principal_angle_i_a = if h_i_basis.is_empty() || h_a_basis.is_empty() {
        std::f64::consts::FRAC_PI_2
    } else {
        let mut max_cos = 0.0f64;
        for u in &h_i_basis {
            for v in &h_a_basis {
                max_cos = max_cos.max(inner(u, v).norm());
            }
        }
        max_cos.clamp(0.0, 1.0).acos()
    };

    Ok(WoldReport {
        h_i_basis,
        h_a_basis,
        h_a_prime_basis,
        min_principal_angle_i_a,
        density_defect: defect_full,
        analytic_verdict,
    })
}

/// Orthogonality and completeness of the decomposition into the range
/// intersection and the dual analytic part, measured on the common window.
pub fn dual_decomposition_check(
    spec: &OperatorSpec,
    n: usize,
    depth: usize,
) -> Result<DualDecomposition> {
    let report = wold_subspaces(spec, n, depth)?;
    let w = report
        .h_i_basis
        .first()
        .or_else(|| report.h_a_prime_basis.first())
        .map(|v| v.len())
        .unwrap_or(0);
    if w == 0 {
        return Err(Error::WindowTooSmall("no subspace directions at this window".into()));
    }
    let mut orthogonality_gap = 0.0f64;
    for u in &report.h_i_basis {
        for v in &report.h_a_prime_basis {
            orthogonality_gap = orthogonality_gap.max(inner(u, v).norm());
        }
    }
    let mut union = report.h_i_basis.clone();
    union.extend(report.h_a_prime_basis.iter().cloned());
    let dim = orthonormalize(&union, RankTolerance::from_env()).len();
    let completeness_gap = 1.0 - dim as f64 / w as f64;
    Ok(DualDecomposition { orthogonality_gap, completeness_gap })
}

/// Exact numerical checks for the block composition whose analytic and
/// unitary parts fail to split orthogonally.
#[derive(Debug, Clone)]
pub struct FailedWoldChecks {
    /// max deviation of T^k(e1 (+) 0) from e_{k+1} (+) k f_k, k <= 30.
    pub orbit_error: f64,
    pub kernel_dim: usize,
    /// distance of the computed ker(T*) vector from e1 (+) 0.
    pub kernel_alignment: f64,
    /// max deviation of the orbit Gram matrix from diag(1 + k^2).
    pub gram_error: f64,
    /// largest first-summand component in the range-intersection estimate.
    pub h_i_leakage: f64,
    /// |<T^2 x0, 0 (+) f_2>|, expected 2.
    pub nonorthogonality_witness: f64,
    /// max normalized overlap between the intersection and analytic parts.
    pub overlap: f64,
    pub verdict: AnalyticVerdict,
}

pub fn failed_wold_report(n: usize) -> Result<FailedWoldChecks> {
    if n < 16 {
        return Err(Error::WindowTooSmall("failed-Wold report needs n >= 16".into()));
    }
    let spec = OperatorSpec::failed_wold();
    let k_max = 30usize;

    // exact orbit of x0 = e1 (+) 0
    let mut x = vec![Complex64::default(); 1];
    x[nat_coord(1)] = Complex64::new(1.0, 0.0);
    let mut orbit = vec![x.clone()];
    let mut orbit_error = 0.0f64;
    for k in 1..=k_max {
        x = spec.apply_exact(&x);
        orbit.push(x.clone());
        let top = nat_coord(k + 1).max(int_coord(k as i64)) + 1;
        for i in 0..x.len().max(top) {
            let got = x.get(i).copied().unwrap_or_default();
            let expect = if i == nat_coord(k + 1) {
                Complex64::new(1.0, 0.0)
            } else if i == int_coord(k as i64) {
                Complex64::new(k as f64, 0.0)
            } else {
                Complex64::default()
            };
            orbit_error = orbit_error.max((got - expect).norm());
        }
    }

    let defect = defect_basis(&spec, n)?;
    let kernel_dim = defect.len();
    let kernel_alignment = defect
        .first()
        .map(|v| {
            let mut e = vec![Complex64::default(); v.len()];
            e[nat_coord(1)] = Complex64::new(1.0, 0.0);
            // compare up to phase
            let phase = v[nat_coord(1)];
            let scaled: Vec<Complex64> = if phase.norm() > 0.0 {
                v.iter().map(|z| z * phase.conj() / phase.norm()).collect()
            } else {
                v.clone()
            };
            scaled
                .iter()
                .zip(e.iter())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .unwrap_or(f64::INFINITY);

    let mut gram_error = 0.0f64;
    for a in 0..=k_max {
        for b in 0..=k_max {
            let la = orbit[a].len().max(orbit[b].len());
            let va = window_vec(&orbit[a], la);
            let vb = window_vec(&orbit[b], la);
            let g = inner(&va, &vb);
            let expect = if a == b {
                Complex64::new(1.0 + (a * a) as f64, 0.0)
            } else {
                Complex64::default()
            };
            gram_error = gram_error.max((g - expect).norm());
        }
    }

    let d_hi = (n / 6).max(4);
    let w = 2 * d_hi;
    let h_i = h_i_window(&spec, n, d_hi, w)?;
    let mut h_i_leakage = 0.0f64;
    for v in &h_i {
        for (i, z) in v.iter().enumerate() {
            if i % 2 == 0 {
                h_i_leakage = h_i_leakage.max(z.norm());
            }
        }
    }

    // <T^2 x0, 0 (+) f_2> = 2
    let t2 = &orbit[2];
    let nonorthogonality_witness = t2
        .get(int_coord(2))
        .copied()
        .unwrap_or_default()
        .norm();

    let mut overlap = 0.0f64;
    for u in &h_i {
        for v in &orbit[..=k_max.min(w / 4)] {
            let mut vb = window_vec(v, u.len());
            if normalize(&mut vb) {
                overlap = overlap.max(inner(u, &vb).norm());
            }
        }
    }

    let depth = (9 * n / 10).max(8).min(n - 1);
    let verdict = wold_subspaces(&spec, n, depth)?.analytic_verdict;

    Ok(FailedWoldChecks {
        orbit_error,
        kernel_dim,
        kernel_alignment,
        gram_error,
        h_i_leakage,
        nonorthogonality_witness,
        overlap,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::max_principal_angle;
    use crate::pseudoinv::{left_inverse_family, moore_penrose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shift_is_analytic() {
        let spec = OperatorSpec::unilateral_shift();
        let report = wold_subspaces(&spec, 100, 96).unwrap();
        assert_eq!(report.analytic_verdict, AnalyticVerdict::Analytic);
        assert!(report.density_defect <= 0.05);
        // the intersection estimate is orthogonal to the analytic part here
        assert!(report.min_principal_angle_i_a > 1.0);
    }

    #[test]
    fn weighted_shift_is_analytic() {
        let spec = OperatorSpec::weighted_shift_tail2();
        let report = wold_subspaces(&spec, 100, 96).unwrap();
        assert_eq!(report.analytic_verdict, AnalyticVerdict::Analytic);
    }

    #[test]
    fn bilateral_shift_not_natural() {
        let err = wold_subspaces(&OperatorSpec::BilateralShift, 64, 32);
        assert!(matches!(err, Err(Error::NotNatural(_))));
    }

    #[test]
    fn failed_wold_not_analytic() {
        let spec = OperatorSpec::failed_wold();
        let report = wold_subspaces(&spec, 64, 56).unwrap();
        assert_eq!(report.analytic_verdict, AnalyticVerdict::NotAnalytic);
        assert!(report.density_defect > 0.4 && report.density_defect < 0.6);
        // the intersection and analytic parts are far from orthogonal
        assert!(report.min_principal_angle_i_a < 1.2);
    }

    #[test]
    fn failed_wold_kernel_chain() {
        let spec = OperatorSpec::failed_wold();
        for k in 1..=8 {
            assert_eq!(kernel_dim_at_depth(&spec, 64, k).unwrap(), k);
        }
    }

    #[test]
    fn dual_decomposition_shift() {
        let d = dual_decomposition_check(&OperatorSpec::unilateral_shift(), 100, 96).unwrap();
        assert!(d.completeness_gap < 0.05, "{d:?}");
    }

    #[test]
    fn dual_decomposition_weighted() {
        let d = dual_decomposition_check(&OperatorSpec::weighted_shift_tail2(), 100, 96).unwrap();
        assert!(d.completeness_gap < 0.05, "{d:?}");
    }

    #[test]
    fn dual_decomposition_failed_wold() {
        let d = dual_decomposition_check(&OperatorSpec::failed_wold(), 96, 88).unwrap();
        assert!(d.orthogonality_gap < 1e-8, "{d:?}");
        assert!(d.completeness_gap < 0.05, "{d:?}");
    }

    #[test]
    fn failed_wold_full_report() {
        let checks = failed_wold_report(64).unwrap();
        assert_eq!(checks.orbit_error, 0.0);
        assert_eq!(checks.kernel_dim, 1);
        assert!(checks.kernel_alignment < 1e-12);
        assert!(checks.gram_error < 1e-12);
        assert!(checks.h_i_leakage < 1e-10);
        assert!((checks.nonorthogonality_witness - 2.0).abs() < 1e-12);
        assert!(checks.overlap > 0.1);
        assert_eq!(checks.verdict, AnalyticVerdict::NotAnalytic);
    }

    #[test]
    fn analytic_orbit_has_full_dimension() {
        // Schauder independence: the orbit of x0 under T is independent
        let spec = OperatorSpec::weighted_shift_tail2();
        let defect = defect_basis(&spec, 64).unwrap();
        let orbit = forward_orbit_window(&spec, &defect, 32, 64);
        let dim = orthonormalize(&orbit, RankTolerance::default()).len();
        assert_eq!(dim, 32);
    }

    #[test]
    fn any_left_inverse_spans_same_analytic_part() {
        // the dual orbit span does not depend on the choice of left inverse
        let spec = OperatorSpec::weighted_shift_tail2();
        let n = 48;
        let pkg = moore_penrose(&spec, n).unwrap();
        let defect = defect_basis(&spec, n).unwrap();
        let depth = 10;
        let w = 24;
        let tol = RankTolerance::default();

        let orbit_with = |l: &CMatrix| -> Vec<Vec<Complex64>> {
            // dual orbit (L*)^k x0
            let lstar = l.adjoint();
            let mut out = Vec::new();
            for e in &defect {
                let mut v = window_vec(e, lstar.cols());
                for _ in 0..depth {
                    let mut win = window_vec(&v, w);
                    if normalize(&mut win) {
                        out.push(win);
                    }
                    let img = lstar.apply(&v);
                    v = window_vec(&img, lstar.cols());
                }
            }
            orthonormalize(&out, tol)
        };

        let mut dagger_padded = CMatrix::zeros(n, pkg.codomain_dim());
        dagger_padded
            .inner
            .view_mut((0, 0), (n, pkg.t_dagger.cols()))
            .copy_from(&pkg.t_dagger.inner);
        let base = orbit_with(&dagger_padded);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let a = CMatrix::from_fn(n, pkg.codomain_dim(), |_, _| {
                Complex64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))
            })
            .unwrap();
            let l = left_inverse_family(&pkg, &a);
            let other = orbit_with(&l);
            assert_eq!(base.len(), other.len());
            assert!(max_principal_angle(&base, &other) < 1e-6);
        }
    }
}
