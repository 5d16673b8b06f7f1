//! Dense helpers for small complex matrices: a cyclic Jacobi eigensolver for
//! Hermitian matrices and the singular-value shrinkage built on it.
//!
//! Image frame sets are tall [N x n_c] matrices with tiny `n_c`, so singular
//! values come from the `n_c x n_c` Gram matrix rather than a full SVD.

use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;

use crate::error::{OssiError, Result};

type Cf = Complex64;

/// Frobenius norm.
pub fn frob_norm(x: &ArrayView2<Cf>) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Standard complex inner product `sum conj(a_i) b_i` over all entries.
pub fn inner(a: &ArrayView2<Cf>, b: &ArrayView2<Cf>) -> Cf {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching unitary
/// eigenvector matrix (columns). Intended for small matrices (n <= 64).
pub fn hermitian_eig(a: &ArrayView2<Cf>) -> Result<(Array1<f64>, Array2<Cf>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(OssiError::shape(format!("hermitian_eig: {}x{} not square", n, a.ncols())));
    }
    let mut m = a.to_owned();
    let mut v = Array2::<Cf>::eye(n);

    let scale = frob_norm(&m.view()).max(f64::MIN_POSITIVE);
    let tol = 1e-15 * scale;

    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let beta = m[[p, q]];
                let b_abs = beta.norm();
                if b_abs <= 1e-300 {
                    continue;
                }
                let u = beta / b_abs; // e^{i phase}
                let alpha = m[[p, p]].re;
                let gamma = m[[q, q]].re;
                let theta = (gamma - alpha) / (2.0 * b_abs);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // rows/cols r outside the (p, q) plane
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = m[[r, p]];
                    let arq = m[[r, q]];
                    let new_rp = arp * c - arq * u.conj() * s;
                    let new_rq = arp * (u * s) + arq * c;
                    m[[r, p]] = new_rp;
                    m[[p, r]] = new_rp.conj();
                    m[[r, q]] = new_rq;
                    m[[q, r]] = new_rq.conj();
                }
                let new_pp = c * c * alpha - 2.0 * c * s * b_abs + s * s * gamma;
                let new_qq = s * s * alpha + 2.0 * c * s * b_abs + c * c * gamma;
                m[[p, p]] = Cf::new(new_pp, 0.0);
                m[[q, q]] = Cf::new(new_qq, 0.0);
                m[[p, q]] = Cf::new(0.0, 0.0);
                m[[q, p]] = Cf::new(0.0, 0.0);

                for r in 0..n {
                    let vrp = v[[r, p]];
                    let vrq = v[[r, q]];
                    v[[r, p]] = vrp * c - vrq * u.conj() * s;
                    v[[r, q]] = vrp * (u * s) + vrq * c;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let eig: Vec<f64> = (0..n).map(|i| m[[i, i]].re).collect();
    order.sort_by(|&i, &j| eig[i].partial_cmp(&eig[j]).unwrap());
    let vals = Array1::from_iter(order.iter().map(|&i| eig[i]));
    let mut vecs = Array2::<Cf>::zeros((n, n));
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vecs[[r, new_col]] = v[[r, old_col]];
        }
    }
    Ok((vals, vecs))
}

/// Singular values of a tall matrix in descending order, computed from the
/// eigenvalues of the small Gram matrix `X^H X`.
pub fn singular_values(x: &ArrayView2<Cf>) -> Result<Vec<f64>> {
    let g = gram(x);
    let (vals, _) = hermitian_eig(&g.view())?;
    let mut sv: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    sv.reverse();
    Ok(sv)
}

pub fn nuclear_norm(x: &ArrayView2<Cf>) -> Result<f64> {
    Ok(singular_values(x)?.iter().sum())
}

/// Count of singular values above `rel_cutoff` times the largest.
pub fn numerical_rank(x: &ArrayView2<Cf>, rel_cutoff: f64) -> Result<usize> {
    let sv = singular_values(x)?;
    let s1 = sv.first().copied().unwrap_or(0.0);
    if s1 == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > rel_cutoff * s1).count())
}

/// Proximal operator of `tau * ||.||_*`: soft-threshold the singular values.
///
/// Uses `X V f(S) V^H` with `(S^2, V)` from the Gram eigendecomposition, so
/// the left singular vectors are never formed explicitly.
pub fn singular_value_threshold(x: &ArrayView2<Cf>, tau: f64) -> Result<Array2<Cf>> {
    if tau <= 0.0 {
        return Ok(x.to_owned());
    }
    let g = gram(x);
    let (vals, v) = hermitian_eig(&g.view())?;
    let n = vals.len();
    // W = V diag(shrink(s)/s) V^H; entries with s <= tau vanish
    let mut w = Array2::<Cf>::zeros((n, n));
    for k in 0..n {
        let s = vals[k].max(0.0).sqrt();
        if s <= tau {
            continue;
        }
        let f = (s - tau) / s;
        for i in 0..n {
            let vik = v[[i, k]];
            for j in 0..n {
                w[[i, j]] += vik * v[[j, k]].conj() * f;
            }
        }
    }
    Ok(x.dot(&w))
}

fn gram(x: &ArrayView2<Cf>) -> Array2<Cf> {
    let n = x.ncols();
    let mut g = Array2::<Cf>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let mut acc = Cf::new(0.0, 0.0);
            for r in 0..x.nrows() {
                acc += x[[r, i]].conj() * x[[r, j]];
            }
            g[[i, j]] = acc;
            if i != j {
                g[[j, i]] = acc.conj();
            }
        }
    }
    g
}
