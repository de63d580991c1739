//! Schauder basis x_j = T^j x0 and its biorthogonal dual built from a left
//! inverse, expansion coefficients, and frame bounds for the image of the
//! coordinate basis.
//!
//! The forward orbit is computed by exact sparse application; the dual orbit
//! goes through the truncated left inverse, which is why every pair carries
//! an a-posteriori biorthogonality certificate instead of a purely symbolic
//! one.

use std::io::Write;

use num_complex::Complex64;

use crate::numerics::{inner, norm2, svd_factor, CMatrix};
use crate::opmodel::{fredholm_index, OperatorSpec};
use crate::pseudoinv::{left_inverse_family, moore_penrose, MpPackage};
use crate::wold::{wold_subspaces, AnalyticVerdict};
use crate::{Error, Result};

/// Which left inverse generates the dual orbit.
#[derive(Debug, Clone)]
pub enum LeftInverse {
    /// The Moore-Penrose inverse.
    Dagger,
    /// L = T-dagger + A (I - T T-dagger) for a user coefficient A (n x rows).
    Custom(CMatrix),
}

/// Orbit basis x_j = T^j x0 together with the dual orbit x'_j = (L*)^j x0.
#[derive(Debug, Clone)]
pub struct BasisPair {
    pub x: Vec<Vec<Complex64>>,
    pub x_dual: Vec<Vec<Complex64>>,
    pub x0: Vec<Complex64>,
    pub count: usize,
    pub left_inverse: LeftInverse,
    /// Common coordinate length of all stored vectors.
    pub dim: usize,
}

/// Unit kernel vector of T* with the first significant coordinate rotated to
/// the positive real axis. Deterministic phase convention.
pub fn kernel_anchor(spec: &OperatorSpec, n: usize) -> Result<Vec<Complex64>> {
    let vectors = crate::wold::defect_basis(spec, n)?;
    let mut v = match vectors.into_iter().next() {
        Some(v) => v,
        None => return Err(Error::NotNatural("ker(T*) is trivial at the truncation".into())),
    };
    let nrm = norm2(&v);
    if nrm < 1e-14 {
        return Err(Error::NotNatural("kernel vector has negligible norm".into()));
    }
    for z in v.iter_mut() {
        *z /= nrm;
    }
    let lead = v.iter().find(|z| z.norm() > 1e-10).copied().unwrap_or(Complex64::new(1.0, 0.0));
    let phase = lead.conj() / lead.norm();
    for z in v.iter_mut() {
        *z *= phase;
    }
    // membership certificate: the exact adjoint must annihilate the anchor
    let residual = norm2(&spec.apply_adjoint_exact(&v));
    if residual > 1e-10 {
        return Err(Error::CrossCheckFailed(format!(
            "kernel anchor misses ker(T*) by {residual:.3e}"
        )));
    }
    Ok(v)
}

fn pad(v: &[Complex64], len: usize) -> Vec<Complex64> {
    let mut out = v.to_vec();
    out.resize(len, Complex64::default());
    out
}

fn chop_certified(mut v: Vec<Complex64>, len: usize, what: &str) -> Result<Vec<Complex64>> {
    if v.len() > len {
        let dropped: f64 = v[len..].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let total = norm2(&v).max(1e-300);
        if dropped / total > 1e-12 {
            return Err(Error::WindowTooSmall(format!(
                "{what} leaks relative mass {:.3e} past the certified window",
                dropped / total
            )));
        }
        v.truncate(len);
    }
    Ok(pad(&v, len))
}

/// Builds the orbit basis and its dual. Requires index -1 and an analyticity
/// verdict that is not NotAnalytic; the forward orbit must stay inside the
/// codomain truncation.
pub fn schauder_basis(
    spec: &OperatorSpec,
    left_inverse: LeftInverse,
    j_max: usize,
    n: usize,
) -> Result<BasisPair> {
    let found = fredholm_index(spec, n)?;
    if found != -1 {
        return Err(Error::IndexNotMinusOne { found });
    }
    let depth = ((9 * n) / 10).clamp(2, n - 1);
    let report = wold_subspaces(spec, n, depth)?;
    if report.analytic_verdict == AnalyticVerdict::NotAnalytic {
        return Err(Error::NotAnalytic { defect: report.density_defect });
    }

    let pkg = moore_penrose(spec, n)?;
    let rows = pkg.codomain_dim();
    let x0 = chop_certified(kernel_anchor(spec, n)?, rows, "kernel anchor")?;

    let l = match &left_inverse {
        LeftInverse::Dagger => pkg.t_dagger.clone(),
        LeftInverse::Custom(a) => left_inverse_family(&pkg, a),
    };
    let l_star = l.adjoint();

    let mut x = Vec::with_capacity(j_max);
    let mut x_dual = Vec::with_capacity(j_max);
    let mut fwd = x0.clone();
    let mut dual = x0.clone();
    for j in 0..j_max {
        x.push(fwd.clone());
        x_dual.push(dual.clone());
        if j + 1 < j_max {
            fwd = chop_certified(spec.apply_exact(&fwd), rows, "forward orbit")?;
            dual = l_star.apply(&dual[..n]);
        }
    }
    Ok(BasisPair { x, x_dual, x0, count: j_max, left_inverse, dim: rows })
}

/// max |<x_m, x'_j> - delta_mj| over all pairs.
pub fn biorthogonality_check(pair: &BasisPair) -> f64 {
    let mut worst = 0.0f64;
    for (m, xm) in pair.x.iter().enumerate() {
        for (j, xd) in pair.x_dual.iter().enumerate() {
            let target = if m == j { Complex64::new(1.0, 0.0) } else { Complex64::default() };
            worst = worst.max((inner(xm, xd) - target).norm());
        }
    }
    worst
}

/// Same deviation, but measured relative to max(1, |x_m| |x'_j|). For
/// conditional bases whose biorthogonal norms grow geometrically (the entire
/// Toeplitz symbol reaches |x_m||x'_m| ~ 1e18 by m = 11) the absolute
/// deviation is dominated by unavoidable roundoff of the pairing; this is
/// the backward-stable certificate. Coincides with the absolute deviation
/// whenever the norm product is at most one.
pub fn biorthogonality_check_scaled(pair: &BasisPair) -> f64 {
    let xn: Vec<f64> = pair.x.iter().map(|v| norm2(v)).collect();
    let dn: Vec<f64> = pair.x_dual.iter().map(|v| norm2(v)).collect();
    let mut worst = 0.0f64;
    for (m, xm) in pair.x.iter().enumerate() {
        for (j, xd) in pair.x_dual.iter().enumerate() {
            let target = if m == j { Complex64::new(1.0, 0.0) } else { Complex64::default() };
            let scale = (xn[m] * dn[j]).max(1.0);
            worst = worst.max((inner(xm, xd) - target).norm() / scale);
        }
    }
    worst
}

/// Projects a coefficient matrix so that the resulting left inverse
/// L = T-dagger + A (I - T T-dagger) annihilates the kernel anchor. The dual
/// functionals of a Schauder basis are unique, so biorthogonality of the
/// custom dual orbit holds exactly when L^k x0 is orthogonal to x0 for all
/// k >= 1; killing A x0 is the clean sufficient condition (then L x0 = 0).
pub fn biorthogonal_coefficient(a_raw: &CMatrix, x0: &[Complex64]) -> CMatrix {
    let cols = a_raw.cols();
    let x0 = pad(x0, cols);
    let ax0 = a_raw.apply(&x0);
    CMatrix::from_fn(a_raw.rows(), cols, |i, j| a_raw.get(i, j) - ax0[i] * x0[j].conj())
        .expect("projected coefficient")
}

/// Expansion of f through the dual basis, with the partial-sum reconstruction
/// error after each term in the natural increasing order.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub coeffs: Vec<Complex64>,
    pub reconstruction_error: Vec<f64>,
}

pub fn expand(f: &[Complex64], pair: &BasisPair) -> Expansion {
    let f = pad(f, pair.dim);
    let coeffs: Vec<Complex64> = pair.x_dual.iter().map(|xd| inner(&f, xd)).collect();
    let mut partial = vec![Complex64::default(); pair.dim];
    let mut reconstruction_error = Vec::with_capacity(pair.count);
    for (c, xj) in coeffs.iter().zip(&pair.x) {
        for (p, v) in partial.iter_mut().zip(xj) {
            *p += c * v;
        }
        let err: f64 = partial
            .iter()
            .zip(&f)
            .map(|(p, v)| (p - v).norm_sqr())
            .sum::<f64>()
            .sqrt();
        reconstruction_error.push(err);
    }
    Expansion { coeffs, reconstruction_error }
}

/// Frame bounds of {T e_k} estimated as the extreme squared singular values
/// of the truncation.
pub fn frame_image_bounds(spec: &OperatorSpec, n: usize) -> Result<(f64, f64)> {
    let cert = crate::opmodel::left_invertibility_certificate(spec, n)?;
    if !cert.is_left_invertible {
        return Err(Error::NotLeftInvertible);
    }
    let t = spec.truncate(n)?;
    let sv = svd_factor(&t.matrix).singular_values;
    let top = sv.first().copied().unwrap_or(0.0);
    let bottom = sv.last().copied().unwrap_or(0.0);
    Ok((bottom * bottom, top * top))
}

/// Writes the orbit basis as CSV: one row per coordinate, one (re, im)
/// column pair per basis vector.
pub fn export_basis_csv(pair: &BasisPair, path: &std::path::Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "coord")?;
    for j in 0..pair.count {
        write!(out, ",re_x{j},im_x{j}")?;
    }
    writeln!(out)?;
    for i in 0..pair.dim {
        write!(out, "{i}")?;
        for xj in &pair.x {
            write!(out, ",{},{}", xj[i].re, xj[i].im)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Convenience: the pair plus its package, for callers that need both.
pub fn basis_with_package(
    spec: &OperatorSpec,
    j_max: usize,
    n: usize,
) -> Result<(BasisPair, MpPackage)> {
    let pair = schauder_basis(spec, LeftInverse::Dagger, j_max, n)?;
    let pkg = moore_penrose(spec, n)?;
    Ok((pair, pkg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn shift_orbit_is_coordinate_basis() {
        let pair =
            schauder_basis(&OperatorSpec::unilateral_shift(), LeftInverse::Dagger, 10, 64).unwrap();
        for (j, (xj, xdj)) in pair.x.iter().zip(&pair.x_dual).enumerate() {
            for i in 0..pair.dim {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((xj[i] - c(want, 0.0)).norm() < 1e-12);
                assert!((xdj[i] - c(want, 0.0)).norm() < 1e-12);
            }
        }
        assert!(biorthogonality_check(&pair) < 1e-12);
    }

    #[test]
    fn weighted_tail2_orbit_scaling() {
        let pair =
            schauder_basis(&OperatorSpec::weighted_shift_tail2(), LeftInverse::Dagger, 12, 96)
                .unwrap();
        for j in 0..12 {
            let scale = 2f64.powi(j as i32);
            assert!((pair.x[j][j] - c(scale, 0.0)).norm() < 1e-10 * scale);
            assert!((pair.x_dual[j][j] - c(1.0 / scale, 0.0)).norm() < 1e-10);
        }
        assert!(biorthogonality_check(&pair) < 1e-10);
    }

    #[test]
    fn phi_toeplitz_biorthogonality() {
        let pair =
            schauder_basis(&OperatorSpec::toeplitz_phi(), LeftInverse::Dagger, 12, 200).unwrap();
        assert!(biorthogonality_check_scaled(&pair) < 1e-8);
    }

    #[test]
    fn index_zero_family_is_rejected() {
        let err =
            schauder_basis(&OperatorSpec::toeplitz_z_minus_2(), LeftInverse::Dagger, 5, 96)
                .unwrap_err();
        assert!(matches!(err, Error::IndexNotMinusOne { found: 0 }));
    }

    #[test]
    fn non_analytic_family_is_rejected() {
        let err = schauder_basis(&OperatorSpec::failed_wold(), LeftInverse::Dagger, 5, 96)
            .unwrap_err();
        assert!(matches!(err, Error::NotAnalytic { .. }));
    }

    #[test]
    fn perturbed_shift_biorthogonality() {
        let base = Box::new(OperatorSpec::unilateral_shift());
        let mut left = vec![Complex64::default(); 3];
        left[0] = c(0.1, 0.0);
        let mut right = vec![Complex64::default(); 3];
        right[2] = c(1.0, 0.0);
        let spec = OperatorSpec::FiniteRankPerturbation { base, terms: vec![(left, right)] };
        let pair = schauder_basis(&spec, LeftInverse::Dagger, 10, 96).unwrap();
        assert!(biorthogonality_check(&pair) < 1e-8);
    }

    #[test]
    fn custom_left_inverse_stays_biorthogonal() {
        let spec = OperatorSpec::weighted_shift_tail2();
        let pkg = moore_penrose(&spec, 96).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a_raw = CMatrix::from_fn(pkg.domain_dim(), pkg.codomain_dim(), |_, _| {
            c(0.1 * (rng.gen::<f64>() - 0.5), 0.1 * (rng.gen::<f64>() - 0.5))
        })
        .unwrap();
        let x0 = kernel_anchor(&spec, 96).unwrap();
        let a = biorthogonal_coefficient(&a_raw, &x0);
        let pair = schauder_basis(&spec, LeftInverse::Custom(a), 10, 96).unwrap();
        assert!(biorthogonality_check(&pair) < 1e-8);
    }

    #[test]
    fn unconstrained_custom_left_inverse_is_triangular_only() {
        // without the A x0 = 0 projection the pairing Gram is unit lower
        // triangular but genuinely non-biorthogonal above the diagonal
        let spec = OperatorSpec::weighted_shift_tail2();
        let pkg = moore_penrose(&spec, 96).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = CMatrix::from_fn(pkg.domain_dim(), pkg.codomain_dim(), |_, _| {
            c(0.1 * (rng.gen::<f64>() - 0.5), 0.1 * (rng.gen::<f64>() - 0.5))
        })
        .unwrap();
        let pair = schauder_basis(&spec, LeftInverse::Custom(a), 10, 96).unwrap();
        assert!(biorthogonality_check(&pair) > 1e-4);
        for m in 0..pair.count {
            for j in 0..=m {
                let target = if m == j { c(1.0, 0.0) } else { Complex64::default() };
                assert!((inner(&pair.x[m], &pair.x_dual[j]) - target).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn expanding_a_basis_vector_gives_unit_coordinates() {
        let pair =
            schauder_basis(&OperatorSpec::weighted_shift_tail2(), LeftInverse::Dagger, 8, 96)
                .unwrap();
        let f = pair.x[3].clone();
        let exp = expand(&f, &pair);
        for (j, cj) in exp.coeffs.iter().enumerate() {
            let want = if j == 3 { 1.0 } else { 0.0 };
            assert!((cj - c(want, 0.0)).norm() < 1e-8);
        }
        assert!(exp.reconstruction_error[3] < 1e-8);
        assert!(exp.reconstruction_error[7] < 1e-8);
    }

    #[test]
    fn expansion_of_simple_vector_on_weighted_shift() {
        let pair =
            schauder_basis(&OperatorSpec::weighted_shift_tail2(), LeftInverse::Dagger, 6, 96)
                .unwrap();
        let mut f = vec![Complex64::default(); pair.dim];
        f[0] = c(1.0, 0.0);
        f[1] = c(1.0, 0.0);
        let exp = expand(&f, &pair);
        assert!((exp.coeffs[0] - c(1.0, 0.0)).norm() < 1e-10);
        assert!((exp.coeffs[1] - c(0.5, 0.0)).norm() < 1e-10);
        assert!(exp.reconstruction_error[1] < 1e-10);
    }

    #[test]
    fn random_span_reconstructs() {
        let pair =
            schauder_basis(&OperatorSpec::alternating_shift(), LeftInverse::Dagger, 9, 96)
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut f = vec![Complex64::default(); pair.dim];
            for xj in &pair.x {
                let coeff = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                for (fi, v) in f.iter_mut().zip(xj) {
                    *fi += coeff * v;
                }
            }
            let exp = expand(&f, &pair);
            assert!(exp.reconstruction_error[8] < 1e-8 * norm2(&f).max(1.0));
        }
    }

    #[test]
    fn reconstruction_error_is_nonincreasing() {
        let pair =
            schauder_basis(&OperatorSpec::alternating_shift(), LeftInverse::Dagger, 10, 160)
                .unwrap();
        let f = pair.x[5].clone();
        let exp = expand(&f, &pair);
        for w in exp.reconstruction_error.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn frame_bounds_match_weights() {
        let (a, b) = frame_image_bounds(&OperatorSpec::unilateral_shift(), 128).unwrap();
        assert!((a - 1.0).abs() < 1e-8 && (b - 1.0).abs() < 1e-8);
        let (a, b) = frame_image_bounds(&OperatorSpec::alternating_shift(), 128).unwrap();
        assert!((a - 1.0).abs() < 1e-8);
        assert!((b - 4.0).abs() < 1e-8);
    }

    #[test]
    fn frame_lower_bound_survives_perturbation() {
        let base = Box::new(OperatorSpec::unilateral_shift());
        let mut left = vec![Complex64::default(); 3];
        left[0] = c(0.1, 0.0);
        let mut right = vec![Complex64::default(); 3];
        right[2] = c(1.0, 0.0);
        let spec = OperatorSpec::FiniteRankPerturbation { base, terms: vec![(left, right)] };
        let (a, _) = frame_image_bounds(&spec, 128).unwrap();
        assert!(a >= 0.81 - 1e-10);
    }

    #[test]
    fn csv_export_round_trips_coordinates() {
        let pair =
            schauder_basis(&OperatorSpec::unilateral_shift(), LeftInverse::Dagger, 4, 32).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("basis.csv");
        export_basis_csv(&pair, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "coord,re_x0,im_x0,re_x1,im_x1,re_x2,im_x2,re_x3,im_x3");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "0");
        assert_eq!(first[1], "1");
    }
}
