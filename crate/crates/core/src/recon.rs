//! Reconstruction of one slow-time set of fast-time images from
//! undersampled k-space: alternating minimization with the near-manifold
//! regularizer, nuclear-norm POGM, and regularized conjugate-gradient SENSE,
//! plus data-shared initialization and regularization-weight selection.

use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64;

use crate::encode::{EncodingOp, FrameSampling, KSpaceData, SamplingPattern, SensitivityMaps};
use crate::error::{OssiError, Result};
use crate::linalg::{frob_norm, nuclear_norm, numerical_rank, singular_value_threshold};
use crate::manifold::Dictionary;
use crate::quantify::{project_to_manifold, QuantMaps};

type Cf = Complex64;

/// Settings for the near-manifold alternating minimization.
#[derive(Debug, Clone, Copy)]
pub struct OssimmConfig {
    /// Regularization weight on the squared manifold distance.
    pub beta: f64,
    pub n_outer: usize,
    pub n_cg: usize,
    /// Condition-number target used when `beta` is chosen automatically.
    pub kappa_target: f64,
}

impl Default for OssimmConfig {
    fn default() -> Self {
        OssimmConfig { beta: 0.0, n_outer: 4, n_cg: 2, kappa_target: 15.0 }
    }
}

/// Settings for the nuclear-norm comparison reconstruction.
#[derive(Debug, Clone, Copy)]
pub struct LowRankConfig {
    pub alpha: f64,
    pub n_pogm: usize,
    /// Target numerical rank used by the automatic alpha sweep.
    pub rank_target: usize,
    /// Spectral norm of the encoding operator; estimated internally when
    /// absent.
    pub sigma_a: Option<f64>,
}

impl Default for LowRankConfig {
    fn default() -> Self {
        LowRankConfig { alpha: 0.0, n_pogm: 15, rank_target: 4, sigma_a: None }
    }
}

/// Output of any reconstructor.
#[derive(Debug, Clone)]
pub struct ReconResult {
    pub x_hat: Array2<Cf>,
    /// Objective (or solver residual, for cgSENSE) per iteration.
    pub cost_trace: Vec<f64>,
    /// Parameter maps of the final manifold projection (OSSIMM only).
    pub maps: Option<QuantMaps>,
}

/// `beta = sigma^2 / (2 (kappa - 1))`, which makes the data-fidelity
/// subproblem's Hessian `A'A + 2 beta I` have condition number about
/// `kappa` when the smallest singular value of `A` is near zero.
pub fn auto_beta(sigma_a: f64, kappa_target: f64) -> Result<f64> {
    if !(sigma_a > 0.0) {
        return Err(OssiError::invalid(format!("sigma(A) must be positive, got {sigma_a}")));
    }
    if !(kappa_target > 1.0) {
        return Err(OssiError::invalid(format!(
            "condition-number target must exceed 1, got {kappa_target}"
        )));
    }
    Ok(sigma_a * sigma_a / (2.0 * (kappa_target - 1.0)))
}

/// Conjugate gradient on a Hermitian positive definite operator.
///
/// Returns the iterate after `n_iters` steps (or an early exact solve) and
/// the quadratic objective `0.5 <x, Hx> - Re<rhs, x>` at the start plus
/// after every step. CG decreases this quantity monotonically (it is the
/// squared H-norm of the error up to a constant), unlike the residual
/// 2-norm, which may oscillate.
pub fn conjugate_gradient<H>(
    apply: H,
    rhs: &Array2<Cf>,
    x0: Array2<Cf>,
    n_iters: usize,
) -> (Array2<Cf>, Vec<f64>)
where
    H: Fn(&Array2<Cf>) -> Array2<Cf>,
{
    let mut x = x0;
    let mut r = rhs - &apply(&x);
    let mut p = r.clone();
    let mut rs_old: f64 = r.iter().map(|v| v.norm_sqr()).sum();
    // phi(x) = 0.5 <x, Hx> - Re<rhs, x> = -0.5 Re<x, rhs + r>
    let quad = |x: &Array2<Cf>, r: &Array2<Cf>| -> f64 {
        -0.5 * x
            .iter()
            .zip(rhs.iter().zip(r.iter()))
            .map(|(xi, (bi, ri))| (xi.conj() * (bi + ri)).re)
            .sum::<f64>()
    };
    let mut trace = vec![quad(&x, &r)];
    for _ in 0..n_iters {
        if rs_old == 0.0 {
            break;
        }
        let hp = apply(&p);
        let p_hp: f64 = p.iter().zip(hp.iter()).map(|(a, b)| (a.conj() * b).re).sum();
        if p_hp <= 0.0 {
            break; // loss of positive definiteness in finite precision
        }
        let alpha = rs_old / p_hp;
        x.zip_mut_with(&p, |xi, pi| *xi += alpha * pi);
        r.zip_mut_with(&hp, |ri, hi| *ri -= alpha * hi);
        let rs_new: f64 = r.iter().map(|v| v.norm_sqr()).sum();
        trace.push(quad(&x, &r));
        let beta = rs_new / rs_old;
        p.zip_mut_with(&r, |pi, ri| *pi = ri + beta * *pi);
        rs_old = rs_new;
    }
    (x, trace)
}

/// Regularized SENSE: CG on `(A'A + lambda I) X = A'y`, warm-started at x0.
pub fn reconstruct_cgsense(
    op: &EncodingOp,
    y: &KSpaceData,
    lambda: f64,
    n_iters: usize,
    x0: Array2<Cf>,
) -> Result<ReconResult> {
    if lambda < 0.0 {
        return Err(OssiError::invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    if n_iters < 1 {
        return Err(OssiError::invalid("n_iters must be >= 1"));
    }
    let rhs = op.adjoint(y)?;
    let apply = |x: &Array2<Cf>| -> Array2<Cf> {
        let mut out = op.adjoint(&op.forward(&x.view()).expect("shape checked")).expect("shape");
        if lambda > 0.0 {
            out.zip_mut_with(x, |o, xi| *o += lambda * xi);
        }
        out
    };
    let (x_hat, quad_trace) = conjugate_gradient(apply, &rhs, x0, n_iters);
    // shift the quadratic objective so the trace reads as the actual cost
    // 0.5 ||A x - y||^2 + (lambda / 2) ||x||^2
    let offset = 0.5 * y.l2_norm().powi(2);
    let cost_trace = quad_trace.into_iter().map(|q| q + offset).collect();
    Ok(ReconResult { x_hat, cost_trace, maps: None })
}

/// Near-manifold alternating minimization.
///
/// Each outer iteration projects the current iterate onto the manifold
/// voxel-by-voxel (VARPRO grid search), then takes `n_cg` warm-started CG
/// steps on `(A'A + 2 beta I) X = A'y + 2 beta M`. The cost trace holds the
/// full objective `0.5 ||A X - y||^2 + beta sum_n R(X[n,:])` at the initial
/// point and after every outer iteration; the returned maps belong to the
/// final iterate's projection.
pub fn reconstruct_ossimm(
    op: &EncodingOp,
    y: &KSpaceData,
    dict: &Dictionary,
    cfg: &OssimmConfig,
    x0: Array2<Cf>,
) -> Result<ReconResult> {
    if cfg.beta < 0.0 {
        return Err(OssiError::invalid(format!("beta must be nonnegative, got {}", cfg.beta)));
    }
    if cfg.n_outer < 1 || cfg.n_cg < 1 {
        return Err(OssiError::invalid("n_outer and n_cg must be >= 1"));
    }
    if dict.n_c() != op.n_frames() {
        return Err(OssiError::shape(format!(
            "dictionary n_c {} vs operator frames {}",
            dict.n_c(),
            op.n_frames()
        )));
    }

    let beta2 = 2.0 * cfg.beta;
    let a_adj_y = op.adjoint(y)?;
    let mut x = x0;

    let data_cost = |x: &Array2<Cf>| -> Result<f64> {
        let ax = op.forward(&x.view())?;
        let mut acc = 0.0;
        for (t, frame) in ax.samples.iter().enumerate() {
            acc += frame
                .iter()
                .zip(y.samples[t].iter())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>();
        }
        Ok(0.5 * acc)
    };
    let reg_cost =
        |maps: &QuantMaps| -> f64 { maps.residual.iter().map(|r| r * r).sum::<f64>() * cfg.beta };

    let (mut proj, mut maps) = project_to_manifold(&x.view(), dict)?;
    let mut trace = vec![data_cost(&x)? + reg_cost(&maps)];

    for _ in 0..cfg.n_outer {
        let mut rhs = a_adj_y.clone();
        rhs.zip_mut_with(&proj, |r, m| *r += beta2 * m);
        let apply = |v: &Array2<Cf>| -> Array2<Cf> {
            let mut out =
                op.adjoint(&op.forward(&v.view()).expect("shape checked")).expect("shape");
            out.zip_mut_with(v, |o, vi| *o += beta2 * vi);
            out
        };
        let (x_new, _) = conjugate_gradient(apply, &rhs, x, cfg.n_cg);
        x = x_new;
        let (p, m) = project_to_manifold(&x.view(), dict)?;
        proj = p;
        maps = m;
        trace.push(data_cost(&x)? + reg_cost(&maps));
    }

    Ok(ReconResult { x_hat: x, cost_trace: trace, maps: Some(maps) })
}

/// Nuclear-norm regularized reconstruction by the proximal optimized
/// gradient method with function-value adaptive restart.
///
/// On a restart the momentum state is rebuilt from a plain proximal
/// gradient step, which keeps the recorded composite cost non-increasing.
pub fn reconstruct_lowrank(
    op: &EncodingOp,
    y: &KSpaceData,
    cfg: &LowRankConfig,
    x0: Array2<Cf>,
) -> Result<ReconResult> {
    if cfg.alpha < 0.0 {
        return Err(OssiError::invalid(format!("alpha must be nonnegative, got {}", cfg.alpha)));
    }
    if cfg.n_pogm < 1 {
        return Err(OssiError::invalid("n_pogm must be >= 1"));
    }
    let sigma = match cfg.sigma_a {
        Some(s) => s,
        None => op.spectral_norm(30, 0x0551)?,
    };
    // power iteration approaches sigma from below; pad so the gradient step
    // stays a true majorizer
    let lip = (1.02 * sigma).powi(2).max(f64::MIN_POSITIVE);
    let alpha = cfg.alpha;

    let residual = |x: &Array2<Cf>| -> Result<KSpaceData> {
        let mut ax = op.forward(&x.view())?;
        for (t, frame) in ax.samples.iter_mut().enumerate() {
            frame.zip_mut_with(&y.samples[t], |a, b| *a -= b);
        }
        Ok(ax)
    };
    let cost_of = |x: &Array2<Cf>, r: &KSpaceData| -> Result<f64> {
        let f = 0.5 * r.l2_norm().powi(2);
        let g = if alpha > 0.0 { alpha * nuclear_norm(&x.view())? } else { 0.0 };
        Ok(f + g)
    };
    let prox = |z: &Array2<Cf>, t: f64| -> Result<Array2<Cf>> {
        if alpha > 0.0 {
            singular_value_threshold(&z.view(), alpha * t)
        } else {
            Ok(z.clone())
        }
    };

    let mut x = x0;
    let mut r = residual(&x)?;
    let mut cost_prev = cost_of(&x, &r)?;
    let mut trace = vec![cost_prev];

    let mut w = x.clone();
    let mut z = x.clone();
    let mut theta = 1.0f64;
    let mut zeta = 1.0 / lip;

    for k in 1..=cfg.n_pogm {
        let x_old = x.clone();
        let w_old = w.clone();
        let z_old = z.clone();
        let theta_old = theta;
        let zeta_old = zeta;

        let grad = op.adjoint(&r)?;

        let c = if k < cfg.n_pogm { 4.0 } else { 8.0 };
        theta = 0.5 * (1.0 + (c * theta_old * theta_old + 1.0).sqrt());
        let beta = (theta_old - 1.0) / theta;
        let gamma = theta_old / theta;
        let c3 = beta / (lip * zeta_old);
        zeta = (2.0 * theta_old + theta - 1.0) / (lip * theta);

        // w_k = x_{k-1} - grad / L
        w = &x_old - &(&grad / Cf::new(lip, 0.0));
        // z_k = w_k + beta (w_k - w_{k-1}) + gamma (w_k - x_{k-1})
        //       + c3 (z_{k-1} - x_{k-1})
        z = &w
            + &((&w - &w_old) * Cf::new(beta, 0.0))
            + &((&w - &x_old) * Cf::new(gamma, 0.0))
            + &((&z_old - &x_old) * Cf::new(c3, 0.0));
        x = prox(&z, zeta)?;

        r = residual(&x)?;
        let mut cost = cost_of(&x, &r)?;
        if cost > cost_prev {
            // restart: momentum reset plus a monotone proximal gradient step
            theta = 1.0;
            x = prox(&(&x_old - &(&grad / Cf::new(lip, 0.0))), 1.0 / lip)?;
            r = residual(&x)?;
            cost = cost_of(&x, &r)?;
            if cost > cost_prev {
                // rounding can defeat even the plain step; keep the iterate
                x = x_old;
                r = residual(&x)?;
                cost = cost_prev;
            }
            w = x.clone();
            z = x.clone();
            zeta = 1.0 / lip;
        }
        trace.push(cost);
        cost_prev = cost;
    }

    Ok(ReconResult { x_hat: x, cost_trace: trace, maps: None })
}

/// Bisect the nuclear-norm weight until the reconstruction's numerical rank
/// (singular values above `1e-3 sigma_1`) lands within one of the target.
pub fn auto_alpha(
    op: &EncodingOp,
    y: &KSpaceData,
    cfg: &LowRankConfig,
    x0: &Array2<Cf>,
) -> Result<f64> {
    let n_c = op.n_frames();
    if cfg.rank_target < 1 || cfg.rank_target > n_c {
        return Err(OssiError::invalid(format!(
            "rank target {} outside [1, {n_c}]",
            cfg.rank_target
        )));
    }
    let rank_at = |alpha: f64| -> Result<usize> {
        let res = reconstruct_lowrank(op, y, &LowRankConfig { alpha, ..*cfg }, x0.clone())?;
        numerical_rank(&res.x_hat.view(), 1e-3)
    };

    // bracket: alpha = 0 gives the fullest rank, large alpha shrinks to zero
    let mut lo = 0.0f64;
    let adj = op.adjoint(y)?;
    let mut hi = crate::linalg::singular_values(&adj.view())?
        .first()
        .copied()
        .unwrap_or(1.0)
        .max(f64::MIN_POSITIVE)
        * 4.0;
    let mut trace: Vec<(f64, usize)> = Vec::new();
    let r_lo = rank_at(lo)?;
    trace.push((lo, r_lo));
    if r_lo.abs_diff(cfg.rank_target) <= 1 {
        return Ok(lo);
    }
    if r_lo < cfg.rank_target {
        return Err(OssiError::Numerical(format!(
            "rank target {} unreachable: alpha=0 already gives rank {r_lo}; sweep {trace:?}",
            cfg.rank_target
        )));
    }
    let mut r_hi = rank_at(hi)?;
    trace.push((hi, r_hi));
    let mut grow = 0;
    while r_hi > cfg.rank_target && grow < 10 {
        hi *= 4.0;
        r_hi = rank_at(hi)?;
        trace.push((hi, r_hi));
        grow += 1;
    }
    if r_hi > cfg.rank_target {
        return Err(OssiError::Numerical(format!(
            "could not bracket rank target {}; sweep {trace:?}",
            cfg.rank_target
        )));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let r = rank_at(mid)?;
        trace.push((mid, r));
        if r.abs_diff(cfg.rank_target) <= 1 {
            return Ok(mid);
        }
        if r > cfg.rank_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(OssiError::Numerical(format!(
        "alpha bisection did not settle on rank {} +- 1; sweep {trace:?}",
        cfg.rank_target
    )))
}

/// Pool k-space across a window of slow-time sets at matching fast-time
/// indices, average repeated locations (density compensation `1/count`),
/// and reconstruct the densified frames by the adjoint.
pub fn data_shared_init(
    window: &[&KSpaceData],
    sens: &SensitivityMaps,
) -> Result<Array2<Cf>> {
    if window.len() < 2 {
        return Err(OssiError::invalid(format!(
            "data sharing needs at least 2 slow-time sets, got {}",
            window.len()
        )));
    }
    let first = &window[0].pattern;
    let (ny, nx) = (first.ny, first.nx);
    let n_frames = first.n_frames();
    for k in window {
        if k.pattern.ny != ny || k.pattern.nx != nx || k.pattern.n_frames() != n_frames {
            return Err(OssiError::shape("inconsistent patterns in data-sharing window"));
        }
    }
    let n_coils = window[0].samples[0].nrows();

    let cartesian = window
        .iter()
        .all(|k| k.pattern.frames.iter().all(|f| matches!(f, FrameSampling::Mask(_))));

    let (pool_pattern, pool_samples) = if cartesian {
        pool_cartesian(window, ny, nx, n_frames, n_coils)?
    } else {
        pool_coords(window, ny, nx, n_frames, n_coils)?
    };

    let pooled = KSpaceData { samples: pool_samples, pattern: pool_pattern.clone(), noise_sigma: 0.0 };
    let op = EncodingOp::new(SensitivityMaps { maps: sens.maps.clone() }, pool_pattern)?;
    op.adjoint(&pooled)
}

fn pool_cartesian(
    window: &[&KSpaceData],
    ny: usize,
    nx: usize,
    n_frames: usize,
    n_coils: usize,
) -> Result<(SamplingPattern, Vec<Array2<Cf>>)> {
    let n = ny * nx;
    let mut frames = Vec::with_capacity(n_frames);
    let mut samples = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let mut count = vec![0u32; n];
        let mut acc = Array2::<Cf>::zeros((n_coils, n));
        for k in window {
            let FrameSampling::Mask(mask) = &k.pattern.frames[t] else { unreachable!() };
            let mask = mask.as_slice().expect("contiguous mask");
            let mut s = 0;
            for v in 0..n {
                if mask[v] {
                    for c in 0..n_coils {
                        acc[[c, v]] += k.samples[t][[c, s]];
                    }
                    count[v] += 1;
                    s += 1;
                }
            }
        }
        if count.iter().all(|&c| c == 0) {
            return Err(OssiError::invalid(format!("pooled frame {t} is empty")));
        }
        let pooled_mask = Array2::from_shape_fn((ny, nx), |(y, x)| count[y * nx + x] > 0);
        let n_pooled = count.iter().filter(|&&c| c > 0).count();
        let mut frame_samples = Array2::<Cf>::zeros((n_coils, n_pooled));
        let mut s = 0;
        for v in 0..n {
            if count[v] > 0 {
                let w = 1.0 / count[v] as f64;
                for c in 0..n_coils {
                    frame_samples[[c, s]] = acc[[c, v]] * w;
                }
                s += 1;
            }
        }
        frames.push(FrameSampling::Mask(pooled_mask));
        samples.push(frame_samples);
    }
    Ok((SamplingPattern { ny, nx, frames }, samples))
}

fn pool_coords(
    window: &[&KSpaceData],
    ny: usize,
    nx: usize,
    n_frames: usize,
    n_coils: usize,
) -> Result<(SamplingPattern, Vec<Array2<Cf>>)> {
    let mut frames = Vec::with_capacity(n_frames);
    let mut samples = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        // exact-duplicate coordinates pool togther; BTreeMap keeps the
        // output ordering deterministic
        let mut acc: BTreeMap<(u64, u64), (Vec<Cf>, u32)> = BTreeMap::new();
        for k in window {
            let coords: Vec<[f64; 2]> = match &k.pattern.frames[t] {
                FrameSampling::Coords(c) => c.clone(),
                FrameSampling::Mask(m) => mask_to_coords(m),
            };
            for (s, kxy) in coords.iter().enumerate() {
                let key = (kxy[0].to_bits(), kxy[1].to_bits());
                let entry =
                    acc.entry(key).or_insert_with(|| (vec![Cf::new(0.0, 0.0); n_coils], 0));
                for c in 0..n_coils {
                    entry.0[c] += k.samples[t][[c, s]];
                }
                entry.1 += 1;
            }
        }
        if acc.is_empty() {
            return Err(OssiError::invalid(format!("pooled frame {t} is empty")));
        }
        let mut coords = Vec::with_capacity(acc.len());
        let mut frame_samples = Array2::<Cf>::zeros((n_coils, acc.len()));
        for (s, (key, (vals, cnt))) in acc.iter().enumerate() {
            coords.push([f64::from_bits(key.0), f64::from_bits(key.1)]);
            for c in 0..n_coils {
                frame_samples[[c, s]] = vals[c] / *cnt as f64;
            }
        }
        frames.push(FrameSampling::Coords(coords));
        samples.push(frame_samples);
    }
    Ok((SamplingPattern { ny, nx, frames }, samples))
}

fn mask_to_coords(mask: &Array2<bool>) -> Vec<[f64; 2]> {
    let (ny, nx) = mask.dim();
    let mut out = Vec::new();
    for y in 0..ny {
        for x in 0..nx {
            if mask[[y, x]] {
                out.push([x as f64, y as f64]);
            }
        }
    }
    out
}

/// Phase invariance helper used by tests and the report stage: the relative
/// Frobenius distance between two frame sets.
pub fn nrmse(x: &Array2<Cf>, reference: &Array2<Cf>) -> f64 {
    let num = (x - reference).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    num / frob_norm(&reference.view()).max(f64::MIN_POSITIVE)
}
