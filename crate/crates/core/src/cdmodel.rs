//! Analytic model on the disc Omega_T: eigenvector sections built from the
//! dual basis, the reproducing kernel, the hat transform, intertwining with
//! multiplication by z, and two-section spanning combinations.
//!
//! Every section carries a geometric tail bound, so series-vs-resolvent
//! agreement and eigenvector residuals are certified rather than eyeballed.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::basis::{schauder_basis, BasisPair, LeftInverse};
use crate::numerics::{inner, norm2, numerical_rank, CMatrix, RankTolerance};
use crate::opmodel::OperatorSpec;
use crate::pseudoinv::{cauchy_dual, moore_penrose, MpPackage};
use crate::{Error, Result};

/// The disc of eigenvalues |z| < 1/||T-dagger||, sampled with a safety
/// margin because the tail bounds blow up at the boundary.
#[derive(Debug, Clone, Copy)]
pub struct DiscParams {
    pub radius: f64,
    pub safety: f64,
}

impl DiscParams {
    pub fn contains(&self, lambda: Complex64) -> bool {
        lambda.norm() <= self.safety * self.radius + 1e-14
    }
}

/// Estimates the disc radius 1/||T-dagger|| at the truncation.
pub fn omega_radius(spec: &OperatorSpec, n: usize) -> Result<DiscParams> {
    let pkg = moore_penrose(spec, n)?;
    Ok(DiscParams { radius: 1.0 / pkg.dagger_norm, safety: 0.9 })
}

/// Everything the per-lambda computations share: the package, the dual
/// orbit, the square Cauchy dual for the resolvent route, and the disc.
pub struct CdModel {
    pub spec: OperatorSpec,
    pub n: usize,
    pub pkg: MpPackage,
    pub pair: BasisPair,
    /// Dual orbit continued past the pair, for deep series tails.
    dual_ext: Vec<Vec<Complex64>>,
    pub disc: DiscParams,
    pub t_norm: f64,
    dual_square: CMatrix,
}

impl CdModel {
    /// Builds the model with `j_forward` forward orbit vectors and a dual
    /// orbit long enough for tails below 1e-10 anywhere in the safety disc.
    pub fn build(spec: &OperatorSpec, n: usize, j_forward: usize) -> Result<Self> {
        let pair = schauder_basis(spec, LeftInverse::Dagger, j_forward, n)?;
        let pkg = moore_penrose(spec, n)?;
        let disc = DiscParams { radius: 1.0 / pkg.dagger_norm, safety: 0.9 };
        let t_norm = pkg.t.matrix.op_norm();
        let dual_square = cauchy_dual(spec, n)?.block(n, n);

        // q <= safety^2 on the default grids; this length certifies
        // tails < 1e-10 up to q = 0.9
        let j_dual = tail_terms(0.9, 1e-10).max(pair.count);
        let l_star = pkg.t_dagger.adjoint();
        let mut dual_ext = Vec::with_capacity(j_dual);
        let mut v = pair.x0.clone();
        for _ in 0..j_dual {
            dual_ext.push(v.clone());
            v = l_star.apply(&v[..n]);
        }
        Ok(CdModel { spec: spec.clone(), n, pkg, pair, dual_ext, disc, t_norm, dual_square })
    }

    pub fn dual_vector(&self, j: usize) -> &[Complex64] {
        &self.dual_ext[j]
    }

    pub fn max_terms(&self) -> usize {
        self.dual_ext.len()
    }
}

/// Smallest J with q^(J+1)/(1-q) below the target.
fn tail_terms(q: f64, target: f64) -> usize {
    if q <= 0.0 {
        return 1;
    }
    let j = ((target * (1.0 - q)).ln() / q.ln()).ceil() as usize;
    j.max(1)
}

fn geometric_tail(q: f64, j: usize) -> f64 {
    if q >= 1.0 {
        return f64::INFINITY;
    }
    q.powi(j as i32 + 1) / (1.0 - q)
}

/// A section gamma(lambda) with its certified tail bound and the
/// independent resolvent route.
#[derive(Debug, Clone)]
pub struct Section {
    pub lambda: Complex64,
    pub gamma: Vec<Complex64>,
    pub tail_bound: f64,
    pub resolvent_gamma: Vec<Complex64>,
    pub series_terms: usize,
}

impl CdModel {
    /// Series section with an explicit term count.
    pub fn section(&self, lambda: Complex64, j_terms: usize) -> Result<Section> {
        if !self.disc.contains(lambda) {
            return Err(Error::OutsideDisc { lambda, radius: self.disc.safety * self.disc.radius });
        }
        if j_terms > self.dual_ext.len() {
            return Err(Error::WindowTooSmall(format!(
                "{j_terms} series terms requested, {} dual vectors certified",
                self.dual_ext.len()
            )));
        }
        let dim = self.pair.dim;
        let mut gamma = vec![Complex64::default(); dim];
        let mut power = Complex64::new(1.0, 0.0);
        for xd in self.dual_ext.iter().take(j_terms) {
            for (g, v) in gamma.iter_mut().zip(xd) {
                *g += power * v;
            }
            power *= lambda;
        }
        let q = lambda.norm() * self.pkg.dagger_norm;
        let tail_bound = geometric_tail(q, j_terms.saturating_sub(1));

        // resolvent route: (I - lambda T') g = x0 on the square truncation
        let mut a = DMatrix::<Complex64>::identity(self.n, self.n);
        a -= self.dual_square.inner.map(|z| z * lambda);
        let rhs = DMatrix::from_fn(self.n, 1, |i, _| self.pair.x0[i]);
        let lu = a.lu();
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::CrossCheckFailed("resolvent system is singular".into()))?;
        let mut resolvent_gamma: Vec<Complex64> = sol.iter().copied().collect();
        resolvent_gamma.resize(dim, Complex64::default());

        let diff: f64 = gamma
            .iter()
            .zip(&resolvent_gamma)
            .take(self.n)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if diff > tail_bound + 1e-8 {
            return Err(Error::CrossCheckFailed(format!(
                "series and resolvent sections differ by {diff:.3e} (tail bound {tail_bound:.3e})"
            )));
        }
        Ok(Section { lambda, gamma, tail_bound, resolvent_gamma, series_terms: j_terms })
    }

    /// Series section with the term count chosen so the tail bound is
    /// below 1e-10.
    pub fn section_auto(&self, lambda: Complex64) -> Result<Section> {
        let q = lambda.norm() * self.pkg.dagger_norm;
        let j = tail_terms(q, 1e-10).min(self.dual_ext.len());
        self.section(lambda, j)
    }

    /// Relative eigenvector residual ||T* gamma - conj? .. lambda gamma|| / ||gamma||.
    pub fn eigen_residual(&self, sample: &Section) -> f64 {
        let t_star_gamma = self.spec.apply_adjoint_exact(&sample.gamma);
        let mut num = 0.0f64;
        for i in 0..sample.gamma.len().max(t_star_gamma.len()) {
            let a = t_star_gamma.get(i).copied().unwrap_or_default();
            let b = sample.lambda * sample.gamma.get(i).copied().unwrap_or_default();
            num += (a - b).norm_sqr();
        }
        num.sqrt() / norm2(&sample.gamma)
    }

    /// Certified bound for the eigen residual of this sample.
    pub fn eigen_residual_bound(&self, sample: &Section) -> f64 {
        sample.tail_bound * (self.t_norm + sample.lambda.norm()) / norm2(&sample.gamma) + 1e-8
    }

    /// hat(f)(lambda) = <f, gamma(conj lambda)>.
    pub fn hat_transform(&self, f: &[Complex64], grid: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut out = Vec::with_capacity(grid.len());
        for &lambda in grid {
            let s = self.section_auto(lambda.conj())?;
            let mut fp = f.to_vec();
            fp.resize(self.pair.dim, Complex64::default());
            out.push(inner(&fp, &s.gamma));
        }
        Ok(out)
    }

    /// Max deviation of the multiplication law and the T-dagger division law
    /// over random finitely supported f.
    pub fn intertwining_check(&self, grid: &[Complex64], trials: usize, seed: u64) -> Result<f64> {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let support = (self.n / 4).max(4);
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut f = vec![Complex64::default(); self.pair.dim];
            for x in f.iter_mut().take(support) {
                *x = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
            let nrm = norm2(&f);
            for x in f.iter_mut() {
                *x /= nrm;
            }
            let tf = {
                let mut v = self.spec.apply_exact(&f);
                v.resize(self.pair.dim, Complex64::default());
                v
            };
            let df = {
                let mut v = self.pkg.t_dagger.apply(&f[..self.pkg.codomain_dim()]);
                v.resize(self.pair.dim, Complex64::default());
                v
            };
            let f0 = inner(&f, &self.pair.x0);
            for &lambda in grid {
                let s = self.section_auto(lambda.conj())?;
                let fhat = inner(&f, &s.gamma);
                let tfhat = inner(&tf, &s.gamma);
                worst = worst.max((tfhat - lambda * fhat).norm());
                if lambda.norm() > 1e-8 {
                    let dfhat = inner(&df, &s.gamma);
                    worst = worst.max((dfhat - (fhat - f0) / lambda).norm());
                }
            }
        }
        Ok(worst)
    }
}

/// Kernel values on a grid, K(lambda, mu) = <gamma(conj mu), gamma(conj lambda)>.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub grid: Vec<Complex64>,
    pub values: CMatrix,
}

pub fn kernel(model: &CdModel, grid: &[Complex64]) -> Result<KernelMatrix> {
    let mut sections = Vec::with_capacity(grid.len());
    for &lambda in grid {
        sections.push(model.section_auto(lambda.conj())?.gamma);
    }
    let m = grid.len();
    let values = CMatrix::from_fn(m, m, |a, b| inner(&sections[b], &sections[a]))?;

    // Hermitian symmetry and positive semidefiniteness certificates
    let herm_dev = values.sub(&values.adjoint()).op_norm();
    if herm_dev > 1e-9 {
        return Err(Error::CrossCheckFailed(format!(
            "kernel matrix fails Hermitian symmetry by {herm_dev:.3e}"
        )));
    }
    let sym = values.inner.map(|z| z) * Complex64::new(0.5, 0.0)
        + values.inner.adjoint() * Complex64::new(0.5, 0.0);
    let trace: f64 = (0..m).map(|i| sym[(i, i)].re).sum();
    let eigs = sym.symmetric_eigenvalues();
    let min_eig = eigs.iter().fold(f64::INFINITY, |acc, e| acc.min(*e));
    if min_eig < -1e-8 * trace.max(1.0) {
        return Err(Error::CrossCheckFailed(format!(
            "kernel matrix has negative eigenvalue {min_eig:.3e}"
        )));
    }
    Ok(KernelMatrix { grid: grid.to_vec(), values })
}

/// Default sampling grid: `count` points split over two concentric circles
/// at 0.5 and 0.8 of the disc radius.
pub fn default_grid(disc: &DiscParams, count: usize) -> Vec<Complex64> {
    let mut grid = Vec::with_capacity(count);
    let half = count / 2;
    for (points, factor) in [(half, 0.5), (count - half, 0.8)] {
        for k in 0..points {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / points.max(1) as f64;
            let r = factor * disc.radius;
            grid.push(Complex64::new(r * theta.cos(), r * theta.sin()));
        }
    }
    grid
}

/// Writes kernel values as CSV rows (re lambda, im lambda, re mu, im mu, re K, im K).
pub fn export_kernel_csv(km: &KernelMatrix, path: &std::path::Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "re_lambda,im_lambda,re_mu,im_mu,re_k,im_k")?;
    for (a, &la) in km.grid.iter().enumerate() {
        for (b, &mu) in km.grid.iter().enumerate() {
            let v = km.values.get(a, b);
            writeln!(out, "{},{},{},{},{},{}", la.re, la.im, mu.re, mu.im, v.re, v.im)?;
        }
    }
    Ok(())
}

/// Ranks of the section Gram families for a two-summand direct sum: single
/// section versus the combination gamma_1 + phi2 * gamma_2.
#[derive(Debug, Clone)]
pub struct CombineReport {
    pub gram_rank_single: usize,
    pub gram_rank_combined: usize,
    pub window: usize,
}

/// Direct-sum spanning check of the combined section. `phi2` holds the
/// scalar samples phi2(lambda) aligned with the grid; `window` is the total
/// truncated dimension the sections are compared on.
pub fn combine_sections(
    spec: &OperatorSpec,
    phi2: &[Complex64],
    grid: &[Complex64],
    window: usize,
    n: usize,
) -> Result<CombineReport> {
    if grid.len() < 2 * window {
        return Err(Error::BadGrid(format!(
            "{} grid points cannot certify a window of {window}",
            grid.len()
        )));
    }
    if phi2.len() != grid.len() {
        return Err(Error::BadGrid("phi2 samples must align with the grid".into()));
    }
    let (first, second) = match spec {
        OperatorSpec::Block2x2 { a: Some(a), b: None, c: None, d: Some(d) } => (a, d),
        _ => {
            return Err(Error::SpecInvalid(
                "combine_sections expects a diagonal two-summand direct sum".into(),
            ))
        }
    };
    let m1 = CdModel::build(first, n, 4)?;
    let m2 = CdModel::build(second, n, 4)?;
    let half = window / 2;

    let mut single = Vec::with_capacity(grid.len());
    let mut combined = Vec::with_capacity(grid.len());
    for (&lambda, &phi) in grid.iter().zip(phi2) {
        let g1 = m1.section_auto(lambda)?.gamma;
        let g2 = m2.section_auto(lambda)?.gamma;
        let mut s = vec![Complex64::default(); window];
        let mut c = vec![Complex64::default(); window];
        for k in 0..half {
            let a = g1.get(k).copied().unwrap_or_default();
            let b = g2.get(k).copied().unwrap_or_default();
            s[2 * k] = a;
            c[2 * k] = a;
            c[2 * k + 1] = phi * b;
        }
        single.push(s);
        combined.push(c);
    }
    let tol = RankTolerance::from_env();
    let to_matrix = |cols: &[Vec<Complex64>]| {
        CMatrix::from_fn(window, cols.len(), |i, j| cols[j][i]).expect("gram columns")
    };
    Ok(CombineReport {
        gram_rank_single: numerical_rank(&to_matrix(&single), tol),
        gram_rank_combined: numerical_rank(&to_matrix(&combined), tol),
        window,
    })
}
