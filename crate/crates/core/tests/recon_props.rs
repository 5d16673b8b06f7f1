//! Reconstruction building blocks against brute-force oracles, and the
//! analytic behaviors each solver must show on small problems.

mod common;

use common::{dense_operator_sigma_max, jacobi_svd, svt_oracle, Cf};
use ndarray::{Array2, Array3};
use ossi_core::encode::{
    synthetic_sensitivities, variable_density_pattern, EncodingOp, FrameSampling, KSpaceData,
    SamplingPattern, SensitivityMaps,
};
use ossi_core::linalg::singular_value_threshold;
use ossi_core::manifold::{build_dictionary, Dictionary, DictionaryGrid};
use ossi_core::physics::SequenceParams;
use ossi_core::recon::{
    auto_alpha, auto_beta, conjugate_gradient, data_shared_init, nrmse, reconstruct_cgsense,
    reconstruct_lowrank, reconstruct_ossimm, LowRankConfig, OssimmConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<Cf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| {
        Cf::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

fn small_dict(n_warmup: usize) -> Dictionary {
    let seq = SequenceParams { n_warmup_tr: n_warmup, ..SequenceParams::default() };
    let grid = DictionaryGrid {
        t2_values_s: vec![92.6e-3],
        r2star_values_hz: (0..11).map(|i| 16.0 + i as f64 * 0.8).collect(),
        f0_values_hz: vec![-1.0, 0.0, 1.0],
        fixed_t1_s: 1.4,
        reference_t2_s: 92.6e-3,
    };
    build_dictionary(&seq, &grid, 32, 200.0).unwrap()
}

/// Tiny on-manifold image: every voxel a scaled dictionary atom.
fn manifold_image(dict: &Dictionary, n: usize, seed: u64) -> Array2<Cf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::<Cf>::zeros((n, dict.n_c()));
    for v in 0..n {
        let row = rng.gen_range(0..dict.n_atoms());
        let amp = Cf::new(rng.gen_range(0.5..1.5), rng.gen_range(-0.5..0.5));
        for c in 0..dict.n_c() {
            x[[v, c]] = dict.atoms[[row, c]] * dict.norms[row] * amp;
        }
    }
    x
}

#[test]
fn svt_matches_full_svd_oracle_on_100_matrices() {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let x = random_matrix(20, 10, seed);
        let tau = 0.2 + 0.04 * (seed % 40) as f64; // spans no-op to full kill
        let fast = singular_value_threshold(&x.view(), tau).unwrap();
        let brute = svt_oracle(&x.view(), tau);
        let scale = x.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        let err = (&fast - &brute).iter().map(|v| v.norm()).fold(0.0f64, f64::max) / scale;
        worst = worst.max(err);
    }
    assert!(worst <= 1e-10, "worst SVT deviation {worst:e}");
}

#[test]
fn cg_solves_small_hermitian_system() {
    // H = B'B + I on a 12-dim space, dense, via closure
    let b = random_matrix(16, 12, 3);
    let apply = |x: &Array2<Cf>| -> Array2<Cf> {
        let bx = b.dot(x);
        let mut out = b.t().mapv(|v| v.conj()).dot(&bx);
        out.zip_mut_with(x, |o, xi| *o += xi);
        out
    };
    let rhs = random_matrix(12, 1, 4);
    let (x, trace) = conjugate_gradient(&apply, &rhs, Array2::zeros((12, 1)), 60);
    let res = &rhs - &apply(&x);
    let rn: f64 = res.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let rhs_n: f64 = rhs.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    assert!(rn <= 1e-10 * rhs_n, "CG residual {rn:e}");
    // the quadratic objective is monotone up to rounding (it may be negative)
    assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)));
}

fn tiny_problem(
    n_frames: usize,
    accel: f64,
    seed: u64,
) -> (EncodingOp, Array2<Cf>, KSpaceData) {
    let (ny, nx) = (8, 8);
    let sens = synthetic_sensitivities(ny, nx, 2);
    let pattern = variable_density_pattern(ny, nx, n_frames, accel, seed, 0);
    let op = EncodingOp::new(sens, pattern).unwrap();
    let x = random_matrix(ny * nx, n_frames, seed + 1);
    let y = op.forward(&x.view()).unwrap();
    (op, x, y)
}

#[test]
fn cgsense_unitary_case_recovers_adjoint() {
    let (ny, nx) = (8, 8);
    let sens = SensitivityMaps { maps: Array3::from_elem((1, ny, nx), Cf::new(1.0, 0.0)) };
    let op = EncodingOp::new(sens, SamplingPattern::full(ny, nx, 2)).unwrap();
    let x = random_matrix(ny * nx, 2, 9);
    let y = op.forward(&x.view()).unwrap();
    let res = reconstruct_cgsense(&op, &y, 0.0, 5, Array2::zeros((ny * nx, 2))).unwrap();
    let adj = op.adjoint(&y).unwrap();
    assert!(nrmse(&res.x_hat, &adj) < 1e-12);
}

#[test]
fn cgsense_cost_decreases_and_large_lambda_shrinks() {
    let (op, _x, y) = tiny_problem(3, 3.0, 11);
    let res = reconstruct_cgsense(&op, &y, 1e-3, 19, Array2::zeros((64, 3))).unwrap();
    for w in res.cost_trace.windows(2) {
        assert!(w[1] < w[0], "regularized LS cost rose: {} -> {}", w[0], w[1]);
    }
    assert!(res.cost_trace.iter().all(|&c| c >= 0.0));
    let strong = reconstruct_cgsense(&op, &y, 1e6, 19, Array2::zeros((64, 3))).unwrap();
    let norm: f64 = strong.x_hat.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    assert!(norm < 1e-3, "large lambda did not shrink the solution: {norm}");
}

#[test]
fn pogm_alpha_zero_matches_cg_least_squares() {
    // overdetermined (2 coils, full sampling) with noisy data so the
    // least-squares optimum is strictly positive and well conditioned
    let (ny, nx) = (8, 8);
    let sens = synthetic_sensitivities(ny, nx, 2);
    let op = EncodingOp::new(sens, SamplingPattern::full(ny, nx, 2)).unwrap();
    let x_true = random_matrix(ny * nx, 2, 24);
    let mut y = op.forward(&x_true.view()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for f in &mut y.samples {
        f.mapv_inplace(|v| v + Cf::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)));
    }
    let x0 = Array2::zeros((64, 2));
    let lr = reconstruct_lowrank(
        &op,
        &y,
        &LowRankConfig { alpha: 0.0, n_pogm: 120, ..Default::default() },
        x0.clone(),
    )
    .unwrap();
    // CG oracle on the same normal equations
    let rhs = op.adjoint(&y).unwrap();
    let apply =
        |v: &Array2<Cf>| op.adjoint(&op.forward(&v.view()).unwrap()).unwrap();
    let (x_cg, _) = conjugate_gradient(&apply, &rhs, x0, 200);
    let cost = |x: &Array2<Cf>| -> f64 {
        let ax = op.forward(&x.view()).unwrap();
        let mut acc = 0.0;
        for (t, f) in ax.samples.iter().enumerate() {
            acc += f.iter().zip(y.samples[t].iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        }
        0.5 * acc
    };
    let (c_lr, c_cg) = (cost(&lr.x_hat), cost(&x_cg));
    assert!(
        (c_lr - c_cg).abs() <= 1e-6 * c_cg.max(1e-12) + 1e-9,
        "POGM LS cost {c_lr} vs CG {c_cg}"
    );
}

#[test]
fn pogm_cost_trace_never_increases() {
    let (op, _x, y) = tiny_problem(4, 3.0, 31);
    let res = reconstruct_lowrank(
        &op,
        &y,
        &LowRankConfig { alpha: 0.05, n_pogm: 25, ..Default::default() },
        Array2::zeros((64, 4)),
    )
    .unwrap();
    for w in res.cost_trace.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "cost rose: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn auto_beta_formula_and_condition_number() {
    assert!((auto_beta(1.0, 11.0).unwrap() - 0.05).abs() < 1e-15);
    assert!((auto_beta(2.0, 2.0).unwrap() - 2.0).abs() < 1e-15);
    assert!(auto_beta(1.0, 1.0).is_err());
    assert!(auto_beta(0.0, 5.0).is_err());

    // measured condition number of A'A + 2 beta I on the dense oracle
    let (ny, nx) = (8, 8);
    let sens = synthetic_sensitivities(ny, nx, 2);
    let pattern = variable_density_pattern(ny, nx, 1, 3.0, 2, 1);
    let op = EncodingOp::new(SensitivityMaps { maps: sens.maps.clone() }, pattern.clone()).unwrap();
    let sigma = op.spectral_norm(60, 0x0551).unwrap();
    let kappa_target = 15.0;
    let beta = auto_beta(sigma, kappa_target).unwrap();
    // undersampled, so the smallest eigenvalue of A'A is 0 and the dense
    // oracle only needs sigma_max
    let mut coords = Vec::new();
    if let FrameSampling::Mask(m) = &pattern.frames[0] {
        for y in 0..ny {
            for x in 0..nx {
                if m[[y, x]] {
                    coords.push([x as f64, y as f64]);
                }
            }
        }
    }
    assert!(coords.len() < ny * nx, "test problem must be undersampled");
    let scale = 1.0 / ((ny * nx) as f64).sqrt();
    let mut dense = Array2::<Cf>::zeros((2 * coords.len(), ny * nx));
    for c in 0..2 {
        for (s, k) in coords.iter().enumerate() {
            for iy in 0..ny {
                for ix in 0..nx {
                    let phase = -2.0
                        * std::f64::consts::PI
                        * (k[0] * ix as f64 / nx as f64 + k[1] * iy as f64 / ny as f64);
                    dense[[c * coords.len() + s, iy * nx + ix]] =
                        sens.maps[[c, iy, ix]] * Cf::from_polar(scale, phase);
                }
            }
        }
    }
    let sigma_true = dense_operator_sigma_max(&[dense]);
    let cond = (sigma_true * sigma_true + 2.0 * beta) / (2.0 * beta);
    assert!(
        (cond - kappa_target).abs() <= 0.05 * kappa_target,
        "surrogate condition number {cond} vs target {kappa_target}"
    );
}

#[test]
fn ossimm_beta_zero_full_sampling_gives_least_squares() {
    let (ny, nx) = (8, 8);
    let dict = small_dict(100);
    let sens = SensitivityMaps { maps: Array3::from_elem((1, ny, nx), Cf::new(1.0, 0.0)) };
    let op = EncodingOp::new(sens, SamplingPattern::full(ny, nx, dict.n_c())).unwrap();
    let x_true = manifold_image(&dict, ny * nx, 5);
    let y = op.forward(&x_true.view()).unwrap();
    let cfg = OssimmConfig { beta: 0.0, n_outer: 2, n_cg: 8, kappa_target: 15.0 };
    let res = reconstruct_ossimm(&op, &y, &dict, &cfg, Array2::zeros((ny * nx, dict.n_c()))).unwrap();
    // unitary A, beta = 0: the solution is A'y = x_true
    assert!(nrmse(&res.x_hat, &x_true) < 1e-10);
    assert!(res.maps.is_some());
}

#[test]
fn ossimm_consistent_on_manifold_data_drives_cost_down() {
    let (ny, nx) = (8, 8);
    let dict = small_dict(100);
    let sens = SensitivityMaps { maps: Array3::from_elem((1, ny, nx), Cf::new(1.0, 0.0)) };
    let op = EncodingOp::new(sens, SamplingPattern::full(ny, nx, dict.n_c())).unwrap();
    let x_true = manifold_image(&dict, ny * nx, 6);
    let y = op.forward(&x_true.view()).unwrap();
    let sigma = op.spectral_norm(30, 0x0551).unwrap();
    let cfg = OssimmConfig {
        beta: auto_beta(sigma, 15.0).unwrap(),
        n_outer: 4,
        n_cg: 4,
        kappa_target: 15.0,
    };
    let res = reconstruct_ossimm(&op, &y, &dict, &cfg, op.adjoint(&y).unwrap()).unwrap();
    let y_norm_sq = y.l2_norm().powi(2);
    let final_cost = *res.cost_trace.last().unwrap();
    assert!(
        final_cost < 1e-8 * y_norm_sq,
        "cost {final_cost} vs 1e-8 * ||y||^2 = {:e}",
        1e-8 * y_norm_sq
    );
    let initial = res.cost_trace.first().unwrap();
    assert!(final_cost <= initial + 1e-12 * y_norm_sq, "cost rose: {initial} -> {final_cost}");
}

#[test]
fn all_reconstructors_commute_with_global_phase() {
    let dict = small_dict(100);
    let (ny, nx) = (8, 8);
    let sens = synthetic_sensitivities(ny, nx, 2);
    let pattern = variable_density_pattern(ny, nx, dict.n_c(), 3.0, 41, 0);
    let op = EncodingOp::new(sens, pattern).unwrap();
    let x_true = manifold_image(&dict, ny * nx, 7);
    let y = op.forward(&x_true.view()).unwrap();
    let phase = Cf::from_polar(1.0, 1.1);
    let mut y_rot = y.clone();
    for f in &mut y_rot.samples {
        f.mapv_inplace(|v| v * phase);
    }
    let x0 = Array2::zeros((ny * nx, dict.n_c()));

    let sigma = op.spectral_norm(30, 0x0551).unwrap();
    let beta = auto_beta(sigma, 15.0).unwrap();
    let cfg = OssimmConfig { beta, n_outer: 2, n_cg: 2, kappa_target: 15.0 };
    let a = reconstruct_ossimm(&op, &y, &dict, &cfg, x0.clone()).unwrap();
    let b = reconstruct_ossimm(&op, &y_rot, &dict, &cfg, x0.clone()).unwrap();
    let rotated = a.x_hat.mapv(|v| v * phase);
    assert!(nrmse(&b.x_hat, &rotated) < 1e-8);
    // theta maps unchanged
    assert_eq!(
        a.maps.as_ref().unwrap().atom_index,
        b.maps.as_ref().unwrap().atom_index
    );

    let lr_cfg = LowRankConfig { alpha: 0.03, n_pogm: 10, ..Default::default() };
    let a = reconstruct_lowrank(&op, &y, &lr_cfg, x0.clone()).unwrap();
    let b = reconstruct_lowrank(&op, &y_rot, &lr_cfg, x0.clone()).unwrap();
    assert!(nrmse(&b.x_hat, &a.x_hat.mapv(|v| v * phase)) < 1e-8);

    let a = reconstruct_cgsense(&op, &y, 1e-3, 10, x0.clone()).unwrap();
    let b = reconstruct_cgsense(&op, &y_rot, 1e-3, 10, x0).unwrap();
    assert!(nrmse(&b.x_hat, &a.x_hat.mapv(|v| v * phase)) < 1e-10);
}

#[test]
fn auto_alpha_finds_requested_rank() {
    let dict = small_dict(100);
    let (ny, nx) = (8, 8);
    let sens = synthetic_sensitivities(ny, nx, 2);
    let pattern = variable_density_pattern(ny, nx, dict.n_c(), 2.0, 51, 0);
    let op = EncodingOp::new(sens, pattern).unwrap();
    // rank-2 truth: two distinct atoms tile the image
    let mut x_true = Array2::<Cf>::zeros((ny * nx, dict.n_c()));
    for v in 0..ny * nx {
        let row = if v % 2 == 0 { 3 } else { 20 };
        for c in 0..dict.n_c() {
            x_true[[v, c]] = dict.atoms[[row, c]] * dict.norms[row];
        }
    }
    let y = op.forward(&x_true.view()).unwrap();
    let x0 = op.adjoint(&y).unwrap();

    let cfg = LowRankConfig { alpha: 0.0, n_pogm: 15, rank_target: 2, sigma_a: None };
    let alpha = auto_alpha(&op, &y, &cfg, &x0).unwrap();
    let res =
        reconstruct_lowrank(&op, &y, &LowRankConfig { alpha, ..cfg }, x0.clone()).unwrap();
    let rank = ossi_core::linalg::numerical_rank(&res.x_hat.view(), 1e-3).unwrap();
    assert!(
        (1..=3).contains(&rank),
        "auto alpha {alpha} produced rank {rank}, wanted 2 +- 1"
    );

    // shrink-everything alpha: rank 0
    let sv = jacobi_svd(&x0.view()).1;
    let huge = LowRankConfig { alpha: sv[0] * 100.0, n_pogm: 10, rank_target: 2, sigma_a: None };
    let res = reconstruct_lowrank(&op, &y, &huge, x0.clone()).unwrap();
    assert_eq!(ossi_core::linalg::numerical_rank(&res.x_hat.view(), 1e-3).unwrap(), 0);

    // alpha = 0 keeps full rank on this noiseless consistent problem
    let res = reconstruct_lowrank(
        &op,
        &y,
        &LowRankConfig { alpha: 0.0, n_pogm: 30, rank_target: 2, sigma_a: None },
        x0,
    )
    .unwrap();
    let full = ossi_core::linalg::numerical_rank(&res.x_hat.view(), 1e-6).unwrap();
    assert!(full >= dict.n_c() - 1, "least-squares solution lost rank: {full}");
}

#[test]
fn data_sharing_pools_disjoint_masks_into_full_coverage() {
    let (ny, nx) = (6, 6);
    let n = ny * nx;
    let sens = SensitivityMaps { maps: Array3::from_elem((1, ny, nx), Cf::new(1.0, 0.0)) };
    // 4 disjoint masks, each one quarter of k-space
    let x_true = random_matrix(n, 2, 61);
    let mut window_data = Vec::new();
    for part in 0..4 {
        let mut mask = Array2::from_elem((ny, nx), false);
        for v in 0..n {
            if v % 4 == part {
                mask[[v / nx, v % nx]] = true;
            }
        }
        let pattern = SamplingPattern {
            ny,
            nx,
            frames: vec![FrameSampling::Mask(mask.clone()), FrameSampling::Mask(mask)],
        };
        let op = EncodingOp::new(SensitivityMaps { maps: sens.maps.clone() }, pattern).unwrap();
        window_data.push(op.forward(&x_true.view()).unwrap());
    }
    let refs: Vec<&KSpaceData> = window_data.iter().collect();
    let init = data_shared_init(&refs, &sens).unwrap();
    // disjoint union covers everything: unitary single-coil recon is exact
    assert!(nrmse(&init, &x_true) < 1e-12);

    // identical window: pooling averages duplicates back to one set
    let pattern = variable_density_pattern(ny, nx, 2, 3.0, 71, 0);
    let op = EncodingOp::new(SensitivityMaps { maps: sens.maps.clone() }, pattern).unwrap();
    let y = op.forward(&x_true.view()).unwrap();
    let single = op.adjoint(&y).unwrap();
    let pooled = data_shared_init(&[&y, &y, &y], &sens).unwrap();
    assert!(nrmse(&pooled, &single) < 1e-12);

    assert!(data_shared_init(&[&y], &sens).is_err());
}
