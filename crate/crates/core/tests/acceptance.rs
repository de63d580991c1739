//! End-to-end acceptance gate. Each test covers one release criterion and
//! prints a single pass line; tolerances are pinned here and nowhere else.

use std::collections::BTreeMap;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use leftinv::basis::{
    biorthogonal_coefficient, biorthogonality_check_scaled, frame_image_bounds, kernel_anchor,
    schauder_basis, LeftInverse,
};
use leftinv::cdmodel::{default_grid, kernel, CdModel};
use leftinv::cli::{run, Cli, Command};
use leftinv::numerics::{pinv, CMatrix, RankTolerance};
use leftinv::opmodel::{
    fredholm_index, phi_coeffs, winding_number, OperatorSpec,
};
use leftinv::pseudoinv::{moore_penrose, telescope_check, SquareModel};
use leftinv::symalg::{d_k_matrix, dilation, normalize, random_expr, EvalModel};
use leftinv::wold::{failed_wold_report, wold_subspaces, AnalyticVerdict};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn shift_families() -> Vec<(&'static str, OperatorSpec)> {
    vec![
        ("unilateral_shift", OperatorSpec::unilateral_shift()),
        ("weighted_shift_tail2", OperatorSpec::weighted_shift_tail2()),
        ("alternating_shift", OperatorSpec::alternating_shift()),
    ]
}

/// Families passing the index -1 / analyticity gate that the basis and
/// section machinery requires.
fn gated_families() -> Vec<(&'static str, OperatorSpec, usize)> {
    vec![
        ("unilateral_shift", OperatorSpec::unilateral_shift(), 128),
        ("weighted_shift_tail2", OperatorSpec::weighted_shift_tail2(), 128),
        ("alternating_shift", OperatorSpec::alternating_shift(), 128),
        ("toeplitz_phi", OperatorSpec::toeplitz_phi(), 200),
    ]
}

#[test]
fn criterion_01_pseudoinverse_routes_agree() {
    let tol = RankTolerance::new(1e-12).unwrap();
    for (name, spec) in OperatorSpec::builtin_families() {
        let start = Instant::now();
        let pkg = moore_penrose(&spec, 256).unwrap();
        let a = &pkg.t.matrix;
        let astar = a.adjoint();
        let gram = astar.mul(a);
        let normal_route = pinv(&gram, tol).mul(&astar);
        let svd_route = pinv(a, tol);
        let gap = normal_route.sub(&svd_route).op_norm();
        assert!(gap < 1e-8, "{name}: route gap {gap:.3e}");
        assert!(
            pkg.left_identity_deviation() < 1e-9,
            "{name}: left identity {:.3e}",
            pkg.left_identity_deviation()
        );
        let elapsed = start.elapsed().as_secs_f64();
        assert!(elapsed < 5.0, "{name}: {elapsed:.2}s");
    }
    println!("criterion 1 (pseudoinverse dual-route, n=256, all families): pass");
}

#[test]
fn criterion_02_telescoping_identity() {
    for (name, spec) in shift_families() {
        let pkg = moore_penrose(&spec, 128).unwrap();
        let rep = telescope_check(&pkg, 10).unwrap();
        assert!(rep.max_deviation < 1e-10, "{name}: {:.3e}", rep.max_deviation);
        assert!(rep.max_kernel_angle < 1e-8, "{name}: {:.3e}", rep.max_kernel_angle);
    }
    println!("criterion 2 (telescoping identity, n <= 10): pass");
}

#[test]
fn criterion_03_biorthogonality() {
    for (name, spec, n) in gated_families() {
        let pair = schauder_basis(&spec, LeftInverse::Dagger, 20, n).unwrap();
        let dev = biorthogonality_check_scaled(&pair);
        assert!(dev < 1e-8, "{name}: {dev:.3e}");
    }

    // one random non-dagger left inverse, drawn from the subfamily that
    // annihilates the kernel anchor
    let spec = OperatorSpec::unilateral_shift();
    let n = 128;
    let pkg = moore_penrose(&spec, n).unwrap();
    let x0 = kernel_anchor(&spec, n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let a_raw = CMatrix::from_fn(n, pkg.codomain_dim(), |_, _| {
        c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    })
    .unwrap();
    let a = biorthogonal_coefficient(&a_raw, &x0);
    let pair = schauder_basis(&spec, LeftInverse::Custom(a), 20, n).unwrap();
    let dev = biorthogonality_check_scaled(&pair);
    assert!(dev < 1e-8, "custom left inverse: {dev:.3e}");
    println!("criterion 3 (biorthogonality to J=20, incl. non-dagger left inverse): pass");
}

#[test]
fn criterion_04_eigen_residuals_certified() {
    for (name, spec, n) in gated_families() {
        let model = CdModel::build(&spec, n, 8).unwrap();
        let grid = default_grid(&model.disc, 64);
        assert_eq!(grid.len(), 64);
        for lambda in grid {
            let s = model.section_auto(lambda).unwrap();
            let res = model.eigen_residual(&s);
            let bound = model.eigen_residual_bound(&s);
            assert!(res <= bound, "{name} at {lambda}: {res:.3e} > {bound:.3e}");
        }
    }
    println!("criterion 4 (eigen residuals within certified tails, 64-pt grid): pass");
}

#[test]
fn criterion_05_kernel_szego_and_psd() {
    let model = CdModel::build(&OperatorSpec::unilateral_shift(), 128, 8).unwrap();
    let grid = default_grid(&model.disc, 16);
    let km = kernel(&model, &grid).unwrap();
    for (a, &la) in grid.iter().enumerate() {
        for (b, &mu) in grid.iter().enumerate() {
            let want = c(1.0, 0.0) / (c(1.0, 0.0) - la * mu.conj());
            let got = km.values.get(a, b);
            assert!((got - want).norm() < 1e-8, "K({la},{mu}) = {got}, want {want}");
        }
    }
    // kernel() certifies Hermitian symmetry and positive semidefiniteness
    // internally; run it for every gated family.
    for (name, spec, n) in gated_families() {
        let model = CdModel::build(&spec, n, 8).unwrap();
        let grid = default_grid(&model.disc, 16);
        kernel(&model, &grid).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    println!("criterion 5 (Szego kernel on the shift; Hermitian PSD everywhere): pass");
}

#[test]
fn criterion_06_intertwining_and_division() {
    for (name, spec, n) in gated_families() {
        let model = CdModel::build(&spec, n, 8).unwrap();
        let grid = default_grid(&model.disc, 8);
        let dev = model.intertwining_check(&grid, 20, 17).unwrap();
        assert!(dev < 1e-7, "{name}: {dev:.3e}");
    }
    println!("criterion 6 (hat-transform intertwining + division law, 20 random f): pass");
}

#[test]
fn criterion_07_dilation_powers() {
    for (name, spec) in shift_families() {
        let dil = dilation(&spec, 128, 5).unwrap();
        // the 2x2 block structure puts the second summand at offset n, so the
        // identity is checked per block on the certified window
        let n = dil.w.rows() / 2;
        let prod = dil.w.mul(&dil.w_inv);
        let mut identity_gap = 0.0f64;
        for i in 0..dil.window {
            for j in 0..dil.window {
                let delta = if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) };
                identity_gap = identity_gap
                    .max((prod.get(i, j) - delta).norm())
                    .max((prod.get(n + i, n + j) - delta).norm())
                    .max(prod.get(i, n + j).norm())
                    .max(prod.get(n + i, j).norm());
            }
        }
        assert!(identity_gap < 1e-9, "{name}: W W^-1 gap {identity_gap:.3e}");
        assert!(
            dil.max_power_deviation < 1e-9,
            "{name}: power blocks {:.3e}",
            dil.max_power_deviation
        );
    }
    println!("criterion 7 (invertible dilation, powers k <= 5): pass");
}

#[test]
fn criterion_08_rewriter_oracles() {
    // closed-form product of the defect sums, verified first
    let pkg = moore_penrose(&OperatorSpec::unilateral_shift(), 96).unwrap();
    let model = SquareModel::from_package(&pkg);
    for m in 0..=6usize {
        for n in 0..=6usize {
            let w = model.window(2 * (m + n).max(1)).unwrap();
            let lhs = d_k_matrix(&model, m).mul(&d_k_matrix(&model, n));
            let mut rhs = CMatrix::zeros(model.dim, model.dim);
            let lo = m.saturating_sub(n);
            for k in lo..m {
                let term = model
                    .pow(&model.t, k)
                    .mul(&model.p)
                    .mul(&model.pow(&model.d, k + n - m));
                rhs = rhs.add(&term);
            }
            let dev = lhs.sub(&rhs).window_norm(w);
            assert!(dev < 1e-10, "D_{m} D_{n}: {dev:.3e}");
        }
    }

    // 200 random expressions checked against the numeric model on two families
    let evs = [
        EvalModel::build(&OperatorSpec::unilateral_shift(), 96).unwrap(),
        EvalModel::build(&OperatorSpec::weighted_shift_tail2(), 96).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..200 {
        let e = random_expr(&mut rng);
        let nf = normalize(&e);
        let factors = e
            .max_factors()
            .max(nf.finite_rank.keys().map(|&(i, j)| (i + j + 1) as usize).max().unwrap_or(0))
            .max(nf.laurent.keys().map(|&k| k.unsigned_abs() as usize).max().unwrap_or(0));
        for ev in &evs {
            let w = ev.window(factors).unwrap();
            let dev = ev.evaluate_expr(&e).sub(&ev.evaluate_nf(&nf)).window_norm(w);
            assert!(dev < 1e-8, "trial {trial}: deviation {dev:.3e} for {e}");
        }
    }
    println!("criterion 8 (defect-sum products to 1e-10; 200 random reductions): pass");
}

#[test]
fn criterion_09_failed_wold_regression() {
    let checks = failed_wold_report(96).unwrap();
    assert!(checks.orbit_error < 1e-12, "orbit {:.3e}", checks.orbit_error);
    assert!(checks.gram_error < 1e-12, "gram {:.3e}", checks.gram_error);
    assert!(
        (checks.nonorthogonality_witness - 2.0).abs() < 1e-9,
        "witness {:.12}",
        checks.nonorthogonality_witness
    );
    assert_eq!(checks.verdict, AnalyticVerdict::NotAnalytic);

    let spec = OperatorSpec::failed_wold();
    assert_eq!(fredholm_index(&spec, 96).unwrap(), -1);
    let wold = wold_subspaces(&spec, 96, 86).unwrap();
    assert_eq!(wold.analytic_verdict, AnalyticVerdict::NotAnalytic);
    println!("criterion 9 (failed-Wold composite: exact orbit, Gram 1+k^2, witness 2): pass");
}

#[test]
fn criterion_10_winding_and_index() {
    let wind = winding_number(&phi_coeffs(), 4096).unwrap();
    assert_eq!(wind, 1);
    assert_eq!(fredholm_index(&OperatorSpec::toeplitz_phi(), 200).unwrap(), -1);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        // dominant z^w plus a small random Laurent perturbation keeps the
        // winding at w and the operator left invertible
        let w: i64 = rng.gen_range(1..=3);
        let mut coeffs = BTreeMap::new();
        coeffs.insert(w, c(1.0, 0.0));
        for k in -2..=2i64 {
            if k == w {
                continue;
            }
            let scale = 0.08;
            coeffs.insert(
                k,
                c(scale * (rng.gen::<f64>() - 0.5), scale * (rng.gen::<f64>() - 0.5)),
            );
        }
        let found = winding_number(&coeffs, 4096).unwrap();
        assert_eq!(found, w, "trial {trial}");
        // fredholm_index cross-checks the kernel count against the winding
        // number internally for Toeplitz symbols
        let spec = OperatorSpec::ToeplitzSymbol { laurent_coeffs: coeffs };
        let index = fredholm_index(&spec, 96).unwrap();
        assert_eq!(index, -w, "trial {trial}");
    }
    println!("criterion 10 (winding numbers match Fredholm indices, 20 random symbols): pass");
}

#[test]
fn criterion_11_frame_bounds_alternating() {
    let (a, b) = frame_image_bounds(&OperatorSpec::alternating_shift(), 256).unwrap();
    assert!((a - 1.0).abs() < 1e-8, "lower {a:.12}");
    assert!((b - 4.0).abs() < 1e-8, "upper {b:.12}");
    println!("criterion 11 (alternating shift frame bounds (1, 4)): pass");
}

#[test]
fn criterion_12_verify_reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, OperatorSpec::weighted_shift_tail2().to_json()).unwrap();
    let mut outputs = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let code = run(Cli {
            command: Command::Verify {
                spec: spec_path.clone(),
                size: 64,
                depth: 8,
                grid: 8,
                seed: 99,
                out: Some(out.clone()),
            },
        });
        assert_eq!(code, 0);
        outputs.push(std::fs::read(out.join("verify_report.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "verify reports differ between runs");
    println!("criterion 12 (fixed-seed verify runs are byte-identical): pass");
}
