//! Symbolic operator families and their certified rectangular truncations.
//!
//! An [`OperatorSpec`] describes an infinite banded operator exactly; columns
//! and rows are produced as sparse vectors under a fixed enumeration of the
//! index set, so finite compressions act exactly on finitely supported
//! vectors (no truncation error inside the guard window).

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::numerics::{kernel_basis, svd_factor, CMatrix, RankTolerance};
use crate::{Error, Result};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Index set of the underlying sequence space, with a fixed enumeration
/// bijection onto the naturals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexSpace {
    Naturals,
    Integers,
    DisjointSum(Box<IndexSpace>, Box<IndexSpace>),
}

/// Position of the integer label m in the enumeration 0, 1, -1, 2, -2, ...
pub fn int_enum(m: i64) -> usize {
    if m == 0 {
        0
    } else if m > 0 {
        (2 * m - 1) as usize
    } else {
        (-2 * m) as usize
    }
}

/// Inverse of [`int_enum`].
pub fn int_label(n: usize) -> i64 {
    if n == 0 {
        0
    } else if n % 2 == 1 {
        ((n + 1) / 2) as i64
    } else {
        -((n / 2) as i64)
    }
}

/// Enumeration of a disjoint sum: first summand at even positions, second at
/// odd positions.
pub fn sum_enum(side: usize, inner: usize) -> usize {
    debug_assert!(side < 2);
    2 * inner + side
}

pub fn sum_split(n: usize) -> (usize, usize) {
    (n % 2, n / 2)
}

/// Sparse column or row: (enumerated index, coefficient) pairs.
pub type SparseVec = Vec<(usize, Complex64)>;

/// Coordinate of e_m (+) 0 (m >= 1) in the composite enumeration of
/// naturals (+) integers.
pub fn nat_coord(m: usize) -> usize {
    assert!(m >= 1);
    sum_enum(0, m - 1)
}

/// Coordinate of 0 (+) f_m in the composite enumeration.
pub fn int_coord(m: i64) -> usize {
    sum_enum(1, int_enum(m))
}

/// Exact description of a banded operator between sequence spaces.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec {
    /// T e_n = w_n e_{n+1} on the naturals; weights are head_weights followed
    /// by the constant tail_weight.
    WeightedShift {
        head_weights: Vec<Complex64>,
        tail_weight: Complex64,
    },
    /// Toeplitz operator on the Hardy basis: entry(i, j) = c_{i-j}.
    ToeplitzSymbol {
        laurent_coeffs: BTreeMap<i64, Complex64>,
    },
    /// T f_m = f_{m+1} on the integers.
    BilateralShift,
    /// Block operator [[a, b], [c, d]] on the disjoint sum of the child
    /// spaces; missing blocks are zero.
    Block2x2 {
        a: Option<Box<OperatorSpec>>,
        b: Option<Box<OperatorSpec>>,
        c: Option<Box<OperatorSpec>>,
        d: Option<Box<OperatorSpec>>,
    },
    /// B(a_1, a_2, ...) = (..., 0, 0hat, a_1, a_2, ...): the k-th natural
    /// basis vector is sent to the integer label k+1.
    InclusionNatToInt,
    /// base + sum of rank-one terms theta_{u,v} x = <x, v> u; u, v finitely
    /// supported, given densely in enumerated coordinates.
    FiniteRankPerturbation {
        base: Box<OperatorSpec>,
        terms: Vec<(Vec<Complex64>, Vec<Complex64>)>,
    },
    /// base + lambda I.
    ScalarShiftOf {
        base: Box<OperatorSpec>,
        lambda: Complex64,
    },
    /// Block composition with a = unilateral shift, b = 0,
    /// c = InclusionNatToInt, d = bilateral shift.
    FailedWoldComposite,
}

impl OperatorSpec {
    pub fn unilateral_shift() -> Self {
        OperatorSpec::WeightedShift { head_weights: vec![], tail_weight: c(1.0, 0.0) }
    }

    pub fn weighted_shift_tail2() -> Self {
        OperatorSpec::WeightedShift { head_weights: vec![], tail_weight: c(2.0, 0.0) }
    }

    /// Alternating weights 1, 2, 1, 2, ... for the first eight steps, then 1.
    pub fn alternating_shift() -> Self {
        let head = (0..8).map(|k| c(if k % 2 == 0 { 1.0 } else { 2.0 }, 0.0)).collect();
        OperatorSpec::WeightedShift { head_weights: head, tail_weight: c(1.0, 0.0) }
    }

    /// Toeplitz operator with symbol z - 2 (invertible on the circle, winding 0).
    pub fn toeplitz_z_minus_2() -> Self {
        let mut m = BTreeMap::new();
        m.insert(1, c(1.0, 0.0));
        m.insert(0, c(-2.0, 0.0));
        OperatorSpec::ToeplitzSymbol { laurent_coeffs: m }
    }

    /// Toeplitz operator with the entire symbol phi(z) = z exp(pi i/2 (z-1)z),
    /// truncated where the Fourier coefficients drop below 1e-14.
    pub fn toeplitz_phi() -> Self {
        OperatorSpec::ToeplitzSymbol { laurent_coeffs: phi_coeffs() }
    }

    pub fn failed_wold() -> Self {
        OperatorSpec::FailedWoldComposite
    }

    /// The expansion of [`OperatorSpec::FailedWoldComposite`] into its blocks.
    pub fn failed_wold_blocks() -> Self {
        OperatorSpec::Block2x2 {
            a: Some(Box::new(Self::unilateral_shift())),
            b: None,
            c: Some(Box::new(OperatorSpec::InclusionNatToInt)),
            d: Some(Box::new(OperatorSpec::BilateralShift)),
        }
    }

    /// The six operator families exercised throughout the test suites.
    pub fn builtin_families() -> Vec<(&'static str, OperatorSpec)> {
        vec![
            ("unilateral_shift", Self::unilateral_shift()),
            ("weighted_shift_tail2", Self::weighted_shift_tail2()),
            ("alternating_shift", Self::alternating_shift()),
            ("toeplitz_z_minus_2", Self::toeplitz_z_minus_2()),
            ("toeplitz_phi", Self::toeplitz_phi()),
            ("failed_wold", Self::failed_wold()),
        ]
    }

    pub fn domain_space(&self) -> IndexSpace {
        match self {
            OperatorSpec::WeightedShift { .. } | OperatorSpec::ToeplitzSymbol { .. } => {
                IndexSpace::Naturals
            }
            OperatorSpec::BilateralShift => IndexSpace::Integers,
            OperatorSpec::InclusionNatToInt => IndexSpace::Naturals,
            OperatorSpec::Block2x2 { a, b, c, d } => {
                let first = a
                    .as_deref()
                    .map(|s| s.domain_space())
                    .or_else(|| c.as_deref().map(|s| s.domain_space()))
                    .unwrap_or(IndexSpace::Naturals);
                let second = b
                    .as_deref()
                    .map(|s| s.domain_space())
                    .or_else(|| d.as_deref().map(|s| s.domain_space()))
                    .unwrap_or(IndexSpace::Naturals);
                IndexSpace::DisjointSum(Box::new(first), Box::new(second))
            }
            OperatorSpec::FiniteRankPerturbation { base, .. } => base.domain_space(),
            OperatorSpec::ScalarShiftOf { base, .. } => base.domain_space(),
            OperatorSpec::FailedWoldComposite => {
                IndexSpace::DisjointSum(Box::new(IndexSpace::Naturals), Box::new(IndexSpace::Integers))
            }
        }
    }

    pub fn codomain_space(&self) -> IndexSpace {
        match self {
            OperatorSpec::InclusionNatToInt => IndexSpace::Integers,
            OperatorSpec::Block2x2 { a, b, c, d } => {
                let first = a
                    .as_deref()
                    .map(|s| s.codomain_space())
                    .or_else(|| b.as_deref().map(|s| s.codomain_space()))
                    .unwrap_or(IndexSpace::Naturals);
                let second = c
                    .as_deref()
                    .map(|s| s.codomain_space())
                    .or_else(|| d.as_deref().map(|s| s.codomain_space()))
                    .unwrap_or(IndexSpace::Naturals);
                IndexSpace::DisjointSum(Box::new(first), Box::new(second))
            }
            OperatorSpec::FiniteRankPerturbation { base, .. } => base.codomain_space(),
            OperatorSpec::ScalarShiftOf { base, .. } => base.codomain_space(),
            _ => self.domain_space(),
        }
    }

    /// Structural validity: bounded-below weights, finite coefficient support,
    /// consistent block shapes.
    pub fn validate(&self) -> Result<()> {
        match self {
            OperatorSpec::WeightedShift { head_weights, tail_weight } => {
                if tail_weight.norm() == 0.0 || head_weights.iter().any(|w| w.norm() == 0.0) {
                    return Err(Error::SpecInvalid(
                        "weighted shift is not bounded below: a weight vanishes".into(),
                    ));
                }
                Ok(())
            }
            OperatorSpec::ToeplitzSymbol { laurent_coeffs } => {
                if laurent_coeffs.is_empty() {
                    return Err(Error::SpecInvalid("empty Toeplitz symbol".into()));
                }
                Ok(())
            }
            OperatorSpec::BilateralShift | OperatorSpec::InclusionNatToInt => Ok(()),
            OperatorSpec::Block2x2 { a, b, c, d } => {
                for blk in [a, b, c, d].into_iter().flatten() {
                    blk.validate()?;
                }
                let pairs = [
                    (a, c, "a", "c", true),
                    (b, d, "b", "d", true),
                    (a, b, "a", "b", false),
                    (c, d, "c", "d", false),
                ];
                for (x, y, nx, ny, by_domain) in pairs {
                    if let (Some(x), Some(y)) = (x.as_deref(), y.as_deref()) {
                        let (sx, sy) = if by_domain {
                            (x.domain_space(), y.domain_space())
                        } else {
                            (x.codomain_space(), y.codomain_space())
                        };
                        if sx != sy {
                            return Err(Error::SpecInvalid(format!(
                                "block2x2: incompatible index spaces between blocks {nx} and {ny}"
                            )));
                        }
                    }
                }
                Ok(())
            }
            OperatorSpec::FiniteRankPerturbation { base, .. } => base.validate(),
            OperatorSpec::ScalarShiftOf { base, .. } => {
                base.validate()?;
                if base.domain_space() != base.codomain_space() {
                    return Err(Error::SpecInvalid(
                        "scalar shift requires matching domain and codomain".into(),
                    ));
                }
                Ok(())
            }
            OperatorSpec::FailedWoldComposite => Ok(()),
        }
    }

    /// Nonzero entries of column j: the coefficients of T e_j in the
    /// enumerated codomain basis.
    pub fn column(&self, j: usize) -> SparseVec {
        match self {
            OperatorSpec::WeightedShift { head_weights, tail_weight } => {
                let w = head_weights.get(j).copied().unwrap_or(*tail_weight);
                vec![(j + 1, w)]
            }
            OperatorSpec::ToeplitzSymbol { laurent_coeffs } => {
                let mut out = Vec::new();
                for (&k, &ck) in laurent_coeffs {
                    let i = j as i64 + k;
                    if i >= 0 {
                        out.push((i as usize, ck));
                    }
                }
                out.sort_by_key(|e| e.0);
                out
            }
            OperatorSpec::BilateralShift => {
                vec![(int_enum(int_label(j) + 1), c(1.0, 0.0))]
            }
            OperatorSpec::InclusionNatToInt => {
                vec![(int_enum(j as i64 + 1), c(1.0, 0.0))]
            }
            OperatorSpec::Block2x2 { a, b, c: cc, d } => {
                let (side, inner) = sum_split(j);
                let (top, bottom) = if side == 0 { (a, cc) } else { (b, d) };
                let mut out = Vec::new();
                if let Some(s) = top.as_deref() {
                    for (i, v) in s.column(inner) {
                        out.push((sum_enum(0, i), v));
                    }
                }
                if let Some(s) = bottom.as_deref() {
                    for (i, v) in s.column(inner) {
                        out.push((sum_enum(1, i), v));
                    }
                }
                out.sort_by_key(|e| e.0);
                out
            }
            OperatorSpec::FiniteRankPerturbation { base, terms } => {
                let mut out = base.column(j);
                for (u, v) in terms {
                    let vj = v.get(j).copied().unwrap_or_default();
                    if vj.norm() > 0.0 {
                        for (i, &ui) in u.iter().enumerate() {
                            if ui.norm() > 0.0 {
                                out.push((i, ui * vj.conj()));
                            }
                        }
                    }
                }
                merge_sparse(out)
            }
            OperatorSpec::ScalarShiftOf { base, lambda } => {
                let mut out = base.column(j);
                out.push((j, *lambda));
                merge_sparse(out)
            }
            OperatorSpec::FailedWoldComposite => Self::failed_wold_blocks().column(j),
        }
    }

    /// Nonzero entries of row i: the coefficients <T e_j, e_i> over j.
    pub fn row(&self, i: usize) -> SparseVec {
        match self {
            OperatorSpec::WeightedShift { head_weights, tail_weight } => {
                if i == 0 {
                    vec![]
                } else {
                    let w = head_weights.get(i - 1).copied().unwrap_or(*tail_weight);
                    vec![(i - 1, w)]
                }
            }
            OperatorSpec::ToeplitzSymbol { laurent_coeffs } => {
                let mut out = Vec::new();
                for (&k, &ck) in laurent_coeffs {
                    let j = i as i64 - k;
                    if j >= 0 {
                        out.push((j as usize, ck));
                    }
                }
                out.sort_by_key(|e| e.0);
                out
            }
            OperatorSpec::BilateralShift => {
                vec![(int_enum(int_label(i) - 1), c(1.0, 0.0))]
            }
            OperatorSpec::InclusionNatToInt => {
                let m = int_label(i);
                if m >= 1 {
                    vec![((m - 1) as usize, c(1.0, 0.0))]
                } else {
                    vec![]
                }
            }
            OperatorSpec::Block2x2 { a, b, c: cc, d } => {
                let (side, inner) = sum_split(i);
                let (left, right) = if side == 0 { (a, b) } else { (cc, d) };
                let mut out = Vec::new();
                if let Some(s) = left.as_deref() {
                    for (j, v) in s.row(inner) {
                        out.push((sum_enum(0, j), v));
                    }
                }
                if let Some(s) = right.as_deref() {
                    for (j, v) in s.row(inner) {
                        out.push((sum_enum(1, j), v));
                    }
                }
                out.sort_by_key(|e| e.0);
                out
            }
            OperatorSpec::FiniteRankPerturbation { base, terms } => {
                let mut out = base.row(i);
                for (u, v) in terms {
                    let ui = u.get(i).copied().unwrap_or_default();
                    if ui.norm() > 0.0 {
                        for (j, &vj) in v.iter().enumerate() {
                            if vj.norm() > 0.0 {
                                out.push((j, ui * vj.conj()));
                            }
                        }
                    }
                }
                merge_sparse(out)
            }
            OperatorSpec::ScalarShiftOf { base, lambda } => {
                let mut out = base.row(i);
                out.push((i, *lambda));
                merge_sparse(out)
            }
            OperatorSpec::FailedWoldComposite => Self::failed_wold_blocks().row(i),
        }
    }

    /// Matrix coefficient <T e_j, e_i> under the canonical enumeration.
    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.column(j)
            .into_iter()
            .find(|&(k, _)| k == i)
            .map(|(_, v)| v)
            .unwrap_or_default()
    }

    /// Smallest row count capturing every nonzero of the first n columns.
    pub fn rows_needed(&self, n: usize) -> usize {
        let mut rows = 1;
        for j in 0..n {
            for (i, _) in self.column(j) {
                rows = rows.max(i + 1);
            }
        }
        rows
    }

    fn adjoint_rows_needed(&self, n: usize) -> usize {
        let mut rows = 1;
        for i in 0..n {
            for (j, _) in self.row(i) {
                rows = rows.max(j + 1);
            }
        }
        rows
    }

    /// Rectangular truncation acting exactly on vectors supported in the
    /// first n enumerated coordinates.
    pub fn truncate(&self, n: usize) -> Result<Truncation> {
        self.validate()?;
        if n == 0 {
            return Err(Error::SpecInvalid("truncation size must be positive".into()));
        }
        let rows = self.rows_needed(n).max(n);
        let mut m = CMatrix::zeros(rows, n);
        for j in 0..n {
            for (i, v) in self.column(j) {
                m.inner[(i, j)] = v;
            }
        }
        Ok(Truncation { matrix: m, domain_dim: n, spec: self.clone() })
    }

    /// Truncation of the adjoint, exact on the same finite-support domain.
    pub fn truncate_adjoint(&self, n: usize) -> Result<Truncation> {
        self.validate()?;
        if n == 0 {
            return Err(Error::SpecInvalid("truncation size must be positive".into()));
        }
        let rows = self.adjoint_rows_needed(n).max(1);
        let mut m = CMatrix::zeros(rows, n);
        for i in 0..n {
            for (j, v) in self.row(i) {
                m.inner[(j, i)] = v.conj();
            }
        }
        Ok(Truncation { matrix: m, domain_dim: n, spec: self.clone() })
    }

    /// Applies the infinite operator to a finitely supported vector, exactly.
    pub fn apply_exact(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = Vec::new();
        for (j, &xj) in x.iter().enumerate() {
            if xj.norm() == 0.0 {
                continue;
            }
            for (i, v) in self.column(j) {
                if i >= out.len() {
                    out.resize(i + 1, Complex64::default());
                }
                out[i] += v * xj;
            }
        }
        out
    }

    /// Applies the adjoint to a finitely supported vector, exactly.
    pub fn apply_adjoint_exact(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = Vec::new();
        for (i, &xi) in x.iter().enumerate() {
            if xi.norm() == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                if j >= out.len() {
                    out.resize(j + 1, Complex64::default());
                }
                out[j] += v.conj() * xi;
            }
        }
        out
    }
}

fn merge_sparse(mut entries: SparseVec) -> SparseVec {
    entries.sort_by_key(|e| e.0);
    let mut out: SparseVec = Vec::with_capacity(entries.len());
    for (i, v) in entries {
        match out.last_mut() {
            Some(last) if last.0 == i => last.1 += v,
            _ => out.push((i, v)),
        }
    }
    out.retain(|e| e.1.norm() > 0.0);
    out
}

/// Rectangular compression P_M T P_N with guard rows, exact on finitely
/// supported inputs.
#[derive(Debug, Clone)]
pub struct Truncation {
    pub matrix: CMatrix,
    pub domain_dim: usize,
    pub spec: OperatorSpec,
}

/// Outcome of the bounded-below test at a working truncation size.
#[derive(Debug, Clone)]
pub struct LeftInvertibilityCertificate {
    pub sigma_min: f64,
    pub is_left_invertible: bool,
}

fn sigma_min_at(spec: &OperatorSpec, n: usize) -> Result<f64> {
    let t = spec.truncate(n)?;
    let f = svd_factor(&t.matrix);
    Ok(f.singular_values.iter().fold(f64::INFINITY, |m, &s| m.min(s)))
}

/// Bounded-below certificate with stabilization across sizes n/4, n/2, n.
///
/// The estimate is accepted when consecutive differences either fall below
/// 1e-6 or are clearly contracting while already below 1e-3; a final jump
/// above 1e-3 is reported as Unstable rather than guessed at.
pub fn left_invertibility_certificate(
    spec: &OperatorSpec,
    n: usize,
) -> Result<LeftInvertibilityCertificate> {
    if n < 2 {
        return Err(Error::SpecInvalid("certificate needs n >= 2".into()));
    }
    let s_full = sigma_min_at(spec, n)?;
    let s_half = sigma_min_at(spec, (n / 2).max(1))?;
    let d_last = (s_full - s_half).abs();
    let stabilized = if d_last < 1e-6 {
        true
    } else if n >= 8 {
        let s_quarter = sigma_min_at(spec, n / 4)?;
        let d_prev = (s_half - s_quarter).abs();
        d_last <= 0.9 * d_prev
    } else {
        false
    };
    if !stabilized && d_last > 1e-3 {
        return Err(Error::Unstable {
            context: format!("sigma_min estimate at sizes {} and {}", n / 2, n),
            delta: d_last,
        });
    }
    let smax = spec.truncate(n)?.matrix.op_norm();
    Ok(LeftInvertibilityCertificate {
        sigma_min: s_full,
        is_left_invertible: stabilized && s_full > 1e-8 * smax.max(1.0),
    })
}

fn kernel_dims(spec: &OperatorSpec, n: usize, tol: RankTolerance) -> Result<(usize, usize)> {
    let t = spec.truncate(n)?;
    let ts = spec.truncate_adjoint(n)?;
    Ok((kernel_basis(&t.matrix, tol).len(), kernel_basis(&ts.matrix, tol).len()))
}

/// Fredholm index dim ker(T) - dim ker(T*), with agreement required between
/// sizes n and 2n, and a winding-number cross-check for Toeplitz symbols.
pub fn fredholm_index(spec: &OperatorSpec, n: usize) -> Result<i64> {
    let tol = RankTolerance::from_env();
    let (k1, k1s) = kernel_dims(spec, n, tol)?;
    let (k2, k2s) = kernel_dims(spec, 2 * n, tol)?;
    if (k1, k1s) != (k2, k2s) {
        return Err(Error::Unstable {
            context: format!(
                "kernel dimensions at sizes {n} and {}: ({k1},{k1s}) vs ({k2},{k2s})",
                2 * n
            ),
            delta: ((k1 as f64 - k2 as f64).abs()).max((k1s as f64 - k2s as f64).abs()),
        });
    }
    let index = k1 as i64 - k1s as i64;
    if let OperatorSpec::ToeplitzSymbol { laurent_coeffs } = spec {
        let w = winding_number(laurent_coeffs, 4096)?;
        if index != -w {
            return Err(Error::CrossCheckFailed(format!(
                "Toeplitz index {index} disagrees with winding number {w}"
            )));
        }
    }
    Ok(index)
}

/// Evaluates the Laurent symbol at a point on the unit circle.
pub fn symbol_value(coeffs: &BTreeMap<i64, Complex64>, z: Complex64) -> Complex64 {
    let mut acc = Complex64::default();
    for (&k, &ck) in coeffs {
        acc += ck * z.powi(k as i32);
    }
    acc
}

/// Winding number of the symbol around 0, by cumulative argument change over
/// a uniform grid on the circle.
pub fn winding_number(coeffs: &BTreeMap<i64, Complex64>, grid_points: usize) -> Result<i64> {
    if grid_points < 8 {
        return Err(Error::BadGrid(format!("{grid_points} grid points")));
    }
    let mut min_mod = f64::INFINITY;
    let mut total = 0.0f64;
    let mut prev = symbol_value(coeffs, c(1.0, 0.0));
    min_mod = min_mod.min(prev.norm());
    for k in 1..=grid_points {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / grid_points as f64;
        let z = Complex64::from_polar(1.0, theta);
        let val = symbol_value(coeffs, z);
        min_mod = min_mod.min(val.norm());
        total += (val / prev).arg();
        prev = val;
    }
    if min_mod <= 1e-6 {
        return Err(Error::SymbolVanishes { min_modulus: min_mod });
    }
    let turns = total / (2.0 * std::f64::consts::PI);
    let rounded = turns.round();
    if (turns - rounded).abs() >= 0.01 {
        return Err(Error::BadGrid(format!(
            "winding residual {:.3e} too large; refine the grid",
            (turns - rounded).abs()
        )));
    }
    Ok(rounded as i64)
}

/// Fourier coefficients of phi(z) = z exp(pi i/2 (z-1)z).
///
/// The exponent is a z + b z^2 with a = -pi i/2, b = pi i/2, so the
/// coefficients of the exponential obey
/// (n+1) c_{n+1} = a c_n + 2 b c_{n-1}; the leading factor z shifts every
/// index up by one. Coefficients below 1e-14 in modulus are dropped.
pub fn phi_coeffs() -> BTreeMap<i64, Complex64> {
    let a = c(0.0, -std::f64::consts::FRAC_PI_2);
    let b = c(0.0, std::f64::consts::FRAC_PI_2);
    let mut cs: Vec<Complex64> = vec![c(1.0, 0.0)];
    loop {
        let n = cs.len() - 1;
        let prev2 = if n == 0 { Complex64::default() } else { cs[n - 1] };
        let next = (a * cs[n] + 2.0 * b * prev2) / (n as f64 + 1.0);
        cs.push(next);
        if cs.len() > 4 && cs[cs.len() - 1].norm() < 1e-14 && cs[cs.len() - 2].norm() < 1e-14 {
            break;
        }
        if cs.len() > 200 {
            break;
        }
    }
    let mut out = BTreeMap::new();
    for (k, &ck) in cs.iter().enumerate() {
        if ck.norm() >= 1e-14 {
            out.insert(k as i64 + 1, ck);
        }
    }
    out
}

// Serde DTO layer: complex scalars as [re, im] pairs, variants tagged by
// "type" in snake_case.

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SpecDto {
    WeightedShift { head_weights: Vec<[f64; 2]>, tail_weight: [f64; 2] },
    ToeplitzSymbol { laurent_coeffs: BTreeMap<String, [f64; 2]> },
    BilateralShift {},
    Block2x2 {
        a: Option<Box<SpecDto>>,
        b: Option<Box<SpecDto>>,
        c: Option<Box<SpecDto>>,
        d: Option<Box<SpecDto>>,
    },
    InclusionNatToInt {},
    FiniteRankPerturbation {
        base: Box<SpecDto>,
        terms: Vec<(Vec<[f64; 2]>, Vec<[f64; 2]>)>,
    },
    ScalarShiftOf { base: Box<SpecDto>, lambda: [f64; 2] },
    FailedWoldComposite {},
}

fn to_pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

fn from_pair(p: [f64; 2]) -> Complex64 {
    c(p[0], p[1])
}

impl From<&OperatorSpec> for SpecDto {
    fn from(s: &OperatorSpec) -> Self {
        match s {
            OperatorSpec::WeightedShift { head_weights, tail_weight } => SpecDto::WeightedShift {
                head_weights: head_weights.iter().copied().map(to_pair).collect(),
                tail_weight: to_pair(*tail_weight),
            },
            OperatorSpec::ToeplitzSymbol { laurent_coeffs } => SpecDto::ToeplitzSymbol {
                laurent_coeffs: laurent_coeffs
                    .iter()
                    .map(|(k, v)| (k.to_string(), to_pair(*v)))
                    .collect(),
            },
            OperatorSpec::BilateralShift => SpecDto::BilateralShift {},
            OperatorSpec::Block2x2 { a, b, c, d } => SpecDto::Block2x2 {
                a: a.as_deref().map(|x| Box::new(x.into())),
                b: b.as_deref().map(|x| Box::new(x.into())),
                c: c.as_deref().map(|x| Box::new(x.into())),
                d: d.as_deref().map(|x| Box::new(x.into())),
            },
            OperatorSpec::InclusionNatToInt => SpecDto::InclusionNatToInt {},
            OperatorSpec::FiniteRankPerturbation { base, terms } => {
                SpecDto::FiniteRankPerturbation {
                    base: Box::new(base.as_ref().into()),
                    terms: terms
                        .iter()
                        .map(|(u, v)| {
                            (
                                u.iter().copied().map(to_pair).collect(),
                                v.iter().copied().map(to_pair).collect(),
                            )
                        })
                        .collect(),
                }
            }
            OperatorSpec::ScalarShiftOf { base, lambda } => SpecDto::ScalarShiftOf {
                base: Box::new(base.as_ref().into()),
                lambda: to_pair(*lambda),
            },
            OperatorSpec::FailedWoldComposite => SpecDto::FailedWoldComposite {},
        }
    }
}

impl TryFrom<SpecDto> for OperatorSpec {
    type Error = Error;

    fn try_from(d: SpecDto) -> Result<Self> {
        Ok(match d {
            SpecDto::WeightedShift { head_weights, tail_weight } => OperatorSpec::WeightedShift {
                head_weights: head_weights.into_iter().map(from_pair).collect(),
                tail_weight: from_pair(tail_weight),
            },
            SpecDto::ToeplitzSymbol { laurent_coeffs } => {
                let mut m = BTreeMap::new();
                for (k, v) in laurent_coeffs {
                    let key: i64 = k.parse().map_err(|_| {
                        Error::SpecInvalid(format!("bad Laurent coefficient key {k:?}"))
                    })?;
                    m.insert(key, from_pair(v));
                }
                OperatorSpec::ToeplitzSymbol { laurent_coeffs: m }
            }
            SpecDto::BilateralShift {} => OperatorSpec::BilateralShift,
            SpecDto::Block2x2 { a, b, c, d } => {
                let conv = |o: Option<Box<SpecDto>>| -> Result<Option<Box<OperatorSpec>>> {
                    o.map(|x| OperatorSpec::try_from(*x).map(Box::new)).transpose()
                };
                OperatorSpec::Block2x2 { a: conv(a)?, b: conv(b)?, c: conv(c)?, d: conv(d)? }
            }
            SpecDto::InclusionNatToInt {} => OperatorSpec::InclusionNatToInt,
            SpecDto::FiniteRankPerturbation { base, terms } => {
                OperatorSpec::FiniteRankPerturbation {
                    base: Box::new(OperatorSpec::try_from(*base)?),
                    terms: terms
                        .into_iter()
                        .map(|(u, v)| {
                            (
                                u.into_iter().map(from_pair).collect(),
                                v.into_iter().map(from_pair).collect(),
                            )
                        })
                        .collect(),
                }
            }
            SpecDto::ScalarShiftOf { base, lambda } => OperatorSpec::ScalarShiftOf {
                base: Box::new(OperatorSpec::try_from(*base)?),
                lambda: from_pair(lambda),
            },
            SpecDto::FailedWoldComposite {} => OperatorSpec::FailedWoldComposite,
        })
    }
}

impl OperatorSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SpecDto::from(self)).expect("spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dto: SpecDto = serde_json::from_str(text)?;
        let spec = OperatorSpec::try_from(dto)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}
