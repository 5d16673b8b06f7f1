//! Dense-matrix equivalence of the encoding operator on a tiny problem and
//! the power-iteration spectral norm against a full SVD.

mod common;

use common::{dense_operator_sigma_max, Cf};
use ndarray::{Array2, Array3};
use ossi_core::encode::{
    synthetic_sensitivities, variable_density_pattern, EncodingOp, FrameSampling, SamplingPattern,
    SensitivityMaps,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Entry-by-entry dense matrix of one frame's encoding: rows are (coil,
/// sample) pairs, columns voxels, built straight from the formula
/// `sens_c(r) exp(-i 2 pi k.r) / sqrt(N)`.
fn dense_frame_matrix(
    sens: &SensitivityMaps,
    ny: usize,
    nx: usize,
    frame: &FrameSampling,
) -> Array2<Cf> {
    let coords: Vec<[f64; 2]> = match frame {
        FrameSampling::Mask(m) => {
            let mut c = Vec::new();
            for y in 0..ny {
                for x in 0..nx {
                    if m[[y, x]] {
                        c.push([x as f64, y as f64]);
                    }
                }
            }
            c
        }
        FrameSampling::Coords(c) => c.clone(),
    };
    let nc = sens.n_coils();
    let n = ny * nx;
    let scale = 1.0 / (n as f64).sqrt();
    let mut a = Array2::<Cf>::zeros((nc * coords.len(), n));
    for c in 0..nc {
        for (s, k) in coords.iter().enumerate() {
            for iy in 0..ny {
                for ix in 0..nx {
                    let phase = -2.0
                        * std::f64::consts::PI
                        * (k[0] * ix as f64 / nx as f64 + k[1] * iy as f64 / ny as f64);
                    a[[c * coords.len() + s, iy * nx + ix]] =
                        sens.maps[[c, iy, ix]] * Cf::from_polar(scale, phase);
                }
            }
        }
    }
    a
}

fn random_image(n: usize, frames: usize, seed: u64) -> Array2<Cf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, frames), |_| {
        Cf::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

#[test]
fn forward_matches_dense_matrix_construction() {
    let (ny, nx) = (8, 8);
    let sens = synthetic_sensitivities(ny, nx, 2);
    let pattern = variable_density_pattern(ny, nx, 2, 4.0, 21, 0);
    let op = EncodingOp::new(SensitivityMaps { maps: sens.maps.clone() }, pattern.clone()).unwrap();
    let x = random_image(ny * nx, 2, 5);
    let y = op.forward(&x.view()).unwrap();
    for (t, frame) in pattern.frames.iter().enumerate() {
        let a = dense_frame_matrix(&sens, ny, nx, frame);
        let n_samp = frame.n_samples();
        for c in 0..2 {
            for s in 0..n_samp {
                let mut expect = Cf::new(0.0, 0.0);
                for v in 0..ny * nx {
                    expect += a[[c * n_samp + s, v]] * x[[v, t]];
                }
                let got = y.samples[t][[c, s]];
                assert!(
                    (got - expect).norm() <= 1e-12 * expect.norm().max(1.0),
                    "frame {t} coil {c} sample {s}: {got} vs {expect}"
                );
            }
        }
    }
}

#[test]
fn power_iteration_matches_dense_svd() {
    let (ny, nx) = (8, 8);
    let sens = synthetic_sensitivities(ny, nx, 2);
    let pattern = variable_density_pattern(ny, nx, 1, 3.0, 2, 1);
    let op = EncodingOp::new(SensitivityMaps { maps: sens.maps.clone() }, pattern.clone()).unwrap();
    let sigma_pi = op.spectral_norm(50, 0x0551).unwrap();
    let blocks: Vec<Array2<Cf>> = pattern
        .frames
        .iter()
        .map(|f| dense_frame_matrix(&sens, ny, nx, f))
        .collect();
    let sigma_svd = dense_operator_sigma_max(&blocks);
    let rel = (sigma_pi - sigma_svd).abs() / sigma_svd;
    assert!(rel <= 1e-4, "power iteration {sigma_pi} vs dense SVD {sigma_svd} (rel {rel:e})");
}

#[test]
fn adjoint_matches_dense_conjugate_transpose() {
    let (ny, nx) = (6, 5);
    let sens = synthetic_sensitivities(ny, nx, 2);
    let mut pattern = variable_density_pattern(ny, nx, 2, 3.0, 4, 0);
    pattern.frames[1] =
        FrameSampling::Coords(vec![[0.0, 0.0], [1.5, -2.0], [2.0, 1.0], [-1.25, 0.75]]);
    let op = EncodingOp::new(SensitivityMaps { maps: sens.maps.clone() }, pattern.clone()).unwrap();
    let x = random_image(ny * nx, 2, 10);
    let y = op.forward(&x.view()).unwrap();
    let back = op.adjoint(&y).unwrap();
    for (t, frame) in pattern.frames.iter().enumerate() {
        let a = dense_frame_matrix(&sens, ny, nx, frame);
        let n_samp = frame.n_samples();
        for v in 0..ny * nx {
            let mut expect = Cf::new(0.0, 0.0);
            for c in 0..2 {
                for s in 0..n_samp {
                    expect += a[[c * n_samp + s, v]].conj() * y.samples[t][[c, s]];
                }
            }
            assert!(
                (back[[v, t]] - expect).norm() <= 1e-12 * expect.norm().max(1.0),
                "voxel {v} frame {t}"
            );
        }
    }
}

#[test]
fn unit_sensitivity_full_mask_adjoint_is_inverse_dft() {
    let (ny, nx) = (8, 8);
    let sens = SensitivityMaps { maps: Array3::from_elem((1, ny, nx), Cf::new(1.0, 0.0)) };
    let op = EncodingOp::new(sens, SamplingPattern::full(ny, nx, 1)).unwrap();
    let x = random_image(ny * nx, 1, 3);
    let y = op.forward(&x.view()).unwrap();
    let back = op.adjoint(&y).unwrap();
    let err: f64 = (&back - &x).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let norm: f64 = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    assert!(err <= 1e-12 * norm);
}
