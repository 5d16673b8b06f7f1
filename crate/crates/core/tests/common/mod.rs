//! Independent oracles shared by the integration suites. Everything here
//! deliberately avoids the library's computational paths: the Bloch stepper
//! works through explicit 3x3 matrix products, and the SVD is a one-sided
//! Jacobi on the full matrix rather than the library's Gram-eigen shortcut.

#![allow(dead_code)]

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use ossi_core::physics::{IsochromatParams, SequenceParams};

pub type Cf = Complex64;

type Mat3 = [[f64; 3]; 3];

fn matmul3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn matvec3(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        for k in 0..3 {
            out[i] += a[i][k] * v[k];
        }
    }
    out
}

fn rot_z(phi: f64) -> Mat3 {
    let (s, c) = phi.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn quad_phase(n: u64, n_c: u64) -> f64 {
    let m = 2 * n_c as u128;
    std::f64::consts::PI * ((((n as u128) % m) * ((n as u128) % m) % m) as f64) / n_c as f64
}

/// Step-by-step matrix-product Bloch stepper: per TR, an explicit
/// `Rz(phi) Rx(alpha) Rz(-phi)` rotation matrix followed by precession and
/// relaxation matrices for the TE and TR-TE segments. Precession uses the
/// clockwise `exp(-i 2 pi f0 t)` convention.
pub fn bloch_matrix_oracle(
    seq: &SequenceParams,
    iso: &IsochromatParams,
    n_record: usize,
) -> Vec<Cf> {
    let m0_abs = iso.m0.norm();
    let m0_phase =
        if m0_abs > 0.0 { iso.m0 / m0_abs } else { Cf::new(1.0, 0.0) };

    let free = |dt: f64| -> (Mat3, [f64; 3]) {
        let e2 = (-dt / iso.t2_s).exp();
        let e1 = (-dt / iso.t1_s).exp();
        let theta = -2.0 * std::f64::consts::PI * iso.f0_hz * dt;
        let (s, c) = theta.sin_cos();
        (
            [[e2 * c, -e2 * s, 0.0], [e2 * s, e2 * c, 0.0], [0.0, 0.0, e1]],
            [0.0, 0.0, m0_abs * (1.0 - e1)],
        )
    };
    let (p_te, b_te) = free(seq.te_s);
    let (p_rest, b_rest) = free(seq.tr_s - seq.te_s);

    let mut m = [0.0, 0.0, m0_abs];
    let mut out = Vec::with_capacity(n_record);
    for n in 0..(seq.n_warmup_tr + n_record) {
        let phi = quad_phase(n as u64, seq.n_c as u64);
        let r = matmul3(&rot_z(phi), &matmul3(&rot_x(seq.flip_rad), &rot_z(-phi)));
        m = matvec3(&r, &m);
        let mt = matvec3(&p_te, &m);
        m = [mt[0] + b_te[0], mt[1] + b_te[1], mt[2] + b_te[2]];
        if n >= seq.n_warmup_tr {
            out.push(Cf::new(m[0], m[1]) * Cf::from_polar(1.0, -phi) * m0_phase);
        }
        let mr = matvec3(&p_rest, &m);
        m = [mr[0] + b_rest[0], mr[1] + b_rest[1], mr[2] + b_rest[2]];
    }
    out
}

/// Full SVD by one-sided Jacobi on the columns: returns `(u, sigma, v)`
/// with `a = u diag(sigma) v^H`, singular values descending.
pub fn jacobi_svd(a: &ArrayView2<Cf>) -> (Array2<Cf>, Vec<f64>, Array2<Cf>) {
    let (m, n) = a.dim();
    assert!(m >= n, "one-sided Jacobi oracle expects tall matrices");
    let mut w = a.to_owned();
    let mut v = Array2::<Cf>::eye(n);

    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0f64;
                let mut aqq = 0.0f64;
                let mut apq = Cf::new(0.0, 0.0);
                for r in 0..m {
                    app += w[[r, p]].norm_sqr();
                    aqq += w[[r, q]].norm_sqr();
                    apq += w[[r, p]].conj() * w[[r, q]];
                }
                if apq.norm_sqr() <= 1e-30 * app * aqq {
                    continue;
                }
                rotated = true;
                let abs = apq.norm();
                let phase = apq / abs;
                let tau = (aqq - app) / (2.0 * abs);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for r in 0..m {
                    let wp = w[[r, p]];
                    let wq = w[[r, q]] * phase.conj();
                    w[[r, p]] = wp * c - wq * s;
                    w[[r, q]] = (wp * s + wq * c) * phase;
                }
                for r in 0..n {
                    let vp = v[[r, p]];
                    let vq = v[[r, q]] * phase.conj();
                    v[[r, p]] = vp * c - vq * s;
                    v[[r, q]] = (vp * s + vq * c) * phase;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> =
        (0..n).map(|j| (0..m).map(|r| w[[r, j]].norm_sqr()).sum::<f64>().sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());
    let mut u = Array2::<Cf>::zeros((m, n));
    let mut vv = Array2::<Cf>::zeros((n, n));
    let mut sigma = Vec::with_capacity(n);
    for (col, &j) in order.iter().enumerate() {
        sigma.push(norms[j]);
        if norms[j] > 0.0 {
            for r in 0..m {
                u[[r, col]] = w[[r, j]] / norms[j];
            }
        }
        for r in 0..n {
            vv[[r, col]] = v[[r, j]];
        }
    }
    (u, sigma, vv)
}

/// Brute-force SVT oracle: full Jacobi SVD, shrink, multiply back.
pub fn svt_oracle(a: &ArrayView2<Cf>, tau: f64) -> Array2<Cf> {
    let (u, sigma, v) = jacobi_svd(a);
    let (m, n) = a.dim();
    let mut out = Array2::<Cf>::zeros((m, n));
    for (k, &s) in sigma.iter().enumerate() {
        let shrunk = (s - tau).max(0.0);
        if shrunk == 0.0 {
            continue;
        }
        for r in 0..m {
            for c in 0..n {
                out[[r, c]] += u[[r, k]] * shrunk * v[[c, k]].conj();
            }
        }
    }
    out
}

/// Largest singular value of the whole (block-diagonal over frames) dense
/// encoding operator: the max over per-frame dense blocks.
pub fn dense_operator_sigma_max(blocks: &[Array2<Cf>]) -> f64 {
    blocks
        .iter()
        .map(|b| {
            // jacobi_svd wants tall input
            if b.nrows() >= b.ncols() {
                jacobi_svd(&b.view()).1[0]
            } else {
                let bh = b.t().mapv(|x| x.conj());
                jacobi_svd(&bh.view()).1[0]
            }
        })
        .fold(0.0, f64::max)
}
