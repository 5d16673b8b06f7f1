//! Functional and quantitative evaluation: fast-time combination, DCT
//! detrending, correlation activation maps, temporal SNR, activation from
//! dynamic parameter estimates, and masked RMSE.

use ndarray::ArrayView2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{OssiError, Result};

type Cf = Complex64;

/// Thresholds and masks shared by the evaluation stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub corr_threshold: f64,
    pub n_dct: usize,
    pub te_eff_s: f64,
    pub signal_mask_frac: f64,
    pub r2s_mask_max_hz: f64,
    pub r2s_range_hz: (f64, f64),
    pub discard_first_block: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            corr_threshold: 0.45,
            n_dct: 4,
            te_eff_s: 17.5e-3,
            signal_mask_frac: 0.10,
            r2s_mask_max_hz: 50.0,
            r2s_range_hz: (12.0, 38.0),
            discard_first_block: true,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.corr_threshold > 0.0 && self.corr_threshold < 1.0) {
            return Err(OssiError::invalid("correlation threshold must lie in (0, 1)"));
        }
        if self.n_dct < 1 {
            return Err(OssiError::invalid("need at least one DCT basis function"));
        }
        Ok(())
    }
}

/// Per-voxel l2 norm across the fast-time dimension of an [N x n_c] set.
pub fn combine_fast_time(x: &ArrayView2<Cf>) -> Vec<f64> {
    x.rows().into_iter().map(|r| r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()).collect()
}

/// DCT-II basis vector k over T samples.
fn dct_basis(k: usize, t_len: usize) -> Vec<f64> {
    (0..t_len)
        .map(|t| (std::f64::consts::PI * k as f64 * (2 * t + 1) as f64 / (2 * t_len) as f64).cos())
        .collect()
}

/// Detrending result: the residual with all fitted bases removed and the
/// variant with the constant (mean) component restored.
#[derive(Debug, Clone)]
pub struct Detrended {
    pub residual: Vec<f64>,
    pub mean_restored: Vec<f64>,
}

/// Remove the least-squares projection onto the first `n_dct` DCT-II basis
/// functions (k = 0 is the constant term).
pub fn detrend_dct(tc: &[f64], n_dct: usize) -> Result<Detrended> {
    let t_len = tc.len();
    if t_len <= n_dct {
        return Err(OssiError::invalid(format!(
            "series length {t_len} must exceed the {n_dct} DCT bases"
        )));
    }
    let mut residual = tc.to_vec();
    let mut mean_component = vec![0.0f64; t_len];
    for k in 0..n_dct {
        let b = dct_basis(k, t_len);
        let bb: f64 = b.iter().map(|x| x * x).sum();
        let coeff: f64 = b.iter().zip(tc).map(|(x, y)| x * y).sum::<f64>() / bb;
        for (r, &bi) in residual.iter_mut().zip(&b) {
            *r -= coeff * bi;
        }
        if k == 0 {
            for (m, &bi) in mean_component.iter_mut().zip(&b) {
                *m = coeff * bi;
            }
        }
    }
    let mean_restored = residual.iter().zip(&mean_component).map(|(r, m)| r + m).collect();
    Ok(Detrended { residual, mean_restored })
}

/// Sign convention for calling a voxel activated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationSign {
    /// `r > threshold`
    Positive,
    /// `r < -threshold`
    Negative,
}

#[derive(Debug, Clone)]
pub struct ActivationMap {
    pub correlation: Vec<f64>,
    pub active: Vec<bool>,
    /// Activated voxels inside the supplied ROI (all voxels when no ROI).
    pub n_active_roi: usize,
}

/// Pearson correlation of every voxel's time course with the reference
/// waveform, thresholded with the requested sign. Constant voxels get r = 0.
pub fn activation_map(
    series: &[Vec<f64>],
    reference: &[f64],
    threshold: f64,
    sign: ActivationSign,
    roi: Option<&[bool]>,
) -> Result<ActivationMap> {
    let t_len = reference.len();
    if t_len < 3 {
        return Err(OssiError::invalid("need at least 3 time points"));
    }
    let ref_mean = reference.iter().sum::<f64>() / t_len as f64;
    let ref_centered: Vec<f64> = reference.iter().map(|x| x - ref_mean).collect();
    let ref_ss: f64 = ref_centered.iter().map(|x| x * x).sum();
    if ref_ss == 0.0 {
        return Err(OssiError::invalid("reference waveform is constant"));
    }

    let mut correlation = Vec::with_capacity(series.len());
    let mut active = Vec::with_capacity(series.len());
    for tc in series {
        if tc.len() != t_len {
            return Err(OssiError::shape(format!(
                "voxel series length {} vs reference {t_len}",
                tc.len()
            )));
        }
        let mean = tc.iter().sum::<f64>() / t_len as f64;
        let mut cov = 0.0;
        let mut ss = 0.0;
        for (x, rc) in tc.iter().zip(&ref_centered) {
            let xc = x - mean;
            cov += xc * rc;
            ss += xc * xc;
        }
        let r = if ss == 0.0 { 0.0 } else { cov / (ss * ref_ss).sqrt() };
        correlation.push(r);
        active.push(match sign {
            ActivationSign::Positive => r > threshold,
            ActivationSign::Negative => r < -threshold,
        });
    }
    let n_active_roi = active
        .iter()
        .enumerate()
        .filter(|(v, &a)| a && roi.map_or(true, |m| m[*v]))
        .count();
    Ok(ActivationMap { correlation, active, n_active_roi })
}

/// Temporal SNR per voxel: time-course mean over the standard deviation of
/// the residual after removing the mean, DCT trends, and the task regressor.
/// Voxels with zero residual variance get an infinite sentinel.
pub fn tsnr_map(series: &[Vec<f64>], task_regressor: &[f64], n_dct: usize) -> Result<Vec<f64>> {
    let t_len = task_regressor.len();
    if t_len < 3 {
        return Err(OssiError::invalid("need at least 3 time points"));
    }
    // design: DCT trends (k = 0 is the constant/mean) plus the task
    let mut design: Vec<Vec<f64>> = (0..n_dct).map(|k| dct_basis(k, t_len)).collect();
    design.push(task_regressor.to_vec());
    let p = design.len();
    // normal equations, shared across voxels
    let mut gram = vec![0.0f64; p * p];
    for i in 0..p {
        for j in 0..p {
            gram[i * p + j] = design[i].iter().zip(&design[j]).map(|(a, b)| a * b).sum();
        }
    }

    let mut out = Vec::with_capacity(series.len());
    for tc in series {
        if tc.len() != t_len {
            return Err(OssiError::shape("voxel series length mismatch"));
        }
        let rhs: Vec<f64> =
            design.iter().map(|b| b.iter().zip(tc).map(|(a, x)| a * x).sum()).collect();
        let coef = solve_spd(&gram, &rhs, p)?;
        let mut rss = 0.0;
        let mut energy = 0.0;
        for t in 0..t_len {
            let fit: f64 = (0..p).map(|i| coef[i] * design[i][t]).sum();
            rss += (tc[t] - fit).powi(2);
            energy += tc[t] * tc[t];
        }
        let mean = tc.iter().sum::<f64>() / t_len as f64;
        let dof = (t_len - p).max(1) as f64;
        let sd = (rss / dof).sqrt();
        // zero residual up to rounding: report the infinite sentinel
        if sd * sd <= 1e-24 * energy.max(f64::MIN_POSITIVE) {
            out.push(f64::INFINITY);
        } else {
            out.push(mean / sd);
        }
    }
    Ok(out)
}

/// Gaussian elimination with partial pivoting on a small SPD system stored
/// row-major.
fn solve_spd(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().partial_cmp(&m[j * n + col].abs()).unwrap())
            .unwrap();
        if m[pivot * n + col].abs() < 1e-300 {
            return Err(OssiError::Numerical("singular design matrix".into()));
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            x.swap(col, pivot);
        }
        for row in (col + 1)..n {
            let f = m[row * n + col] / m[col * n + col];
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for k in (col + 1)..n {
            acc -= m[col * n + k] * x[k];
        }
        x[col] = acc / m[col * n + col];
    }
    Ok(x)
}

/// Activation maps from dynamic parameter estimates: the synthesized
/// magnitude series `|m0| exp(-R2* TE_eff)` thresholds positively and the
/// raw R2* series negatively (higher R2* means lower signal).
pub fn dynamic_quant_activation(
    m0_series: &[Vec<Cf>],
    r2s_series: &[Vec<f64>],
    te_eff_s: f64,
    threshold: f64,
    reference: &[f64],
    roi: Option<&[bool]>,
) -> Result<(ActivationMap, ActivationMap)> {
    let n_frames = m0_series.len();
    if n_frames != r2s_series.len() || n_frames != reference.len() {
        return Err(OssiError::shape("map series and reference lengths differ"));
    }
    if n_frames == 0 {
        return Err(OssiError::invalid("empty map series"));
    }
    let n = m0_series[0].len();
    let mut synth: Vec<Vec<f64>> = vec![Vec::with_capacity(n_frames); n];
    let mut r2s: Vec<Vec<f64>> = vec![Vec::with_capacity(n_frames); n];
    for t in 0..n_frames {
        for v in 0..n {
            synth[v].push(m0_series[t][v].norm() * (-r2s_series[t][v] * te_eff_s).exp());
            r2s[v].push(r2s_series[t][v]);
        }
    }
    let a = activation_map(&synth, reference, threshold, ActivationSign::Positive, roi)?;
    let b = activation_map(&r2s, reference, threshold, ActivationSign::Negative, roi)?;
    Ok((a, b))
}

/// RMSE between two maps over the voxels where `mask` is true.
pub fn r2s_rmse(est: &[f64], reference: &[f64], mask: &[bool]) -> Result<f64> {
    if est.len() != reference.len() || est.len() != mask.len() {
        return Err(OssiError::shape("map/mask lengths differ"));
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for v in 0..est.len() {
        if mask[v] {
            acc += (est[v] - reference[v]).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(OssiError::invalid("empty evaluation mask"));
    }
    Ok((acc / n as f64).sqrt())
}

/// Elementwise AND of masks.
pub fn intersect_masks(masks: &[&[bool]]) -> Vec<bool> {
    let n = masks[0].len();
    (0..n).map(|v| masks.iter().all(|m| m[v])).collect()
}

/// Support mask: combined signal above `frac` of the image maximum.
pub fn signal_mask(mean_combined: &[f64], frac: f64) -> Vec<bool> {
    let peak = mean_combined.iter().cloned().fold(0.0f64, f64::max);
    mean_combined.iter().map(|&c| c > frac * peak).collect()
}

/// Mask of reference R2* values below `max_hz`.
pub fn r2s_below(reference: &[f64], max_hz: f64) -> Vec<bool> {
    reference.iter().map(|&r| r < max_hz).collect()
}

/// Mask of reference R2* values inside the open interval `(lo, hi)`.
pub fn r2s_in_range(reference: &[f64], lo: f64, hi: f64) -> Vec<bool> {
    reference.iter().map(|&r| r > lo && r < hi).collect()
}

/// Dice overlap of two voxel sets.
pub fn dice(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|&&x| x).count() + b.iter().filter(|&&x| x).count();
    if total == 0 {
        return 1.0;
    }
    2.0 * inter as f64 / total as f64
}
