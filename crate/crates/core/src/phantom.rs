//! Synthetic ground truth: parameter maps, task-driven T2' dynamics,
//! drift/respiration f0 dynamics, the resulting image time series, and
//! calibrated complex noise.

use std::collections::HashMap;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encode::{EncodingOp, KSpaceData, SamplingPattern, SensitivityMaps};
use crate::error::{OssiError, Result};
use crate::manifold::{cauchy_grid, voxel_signal, CauchyGrid, VoxelParams};
use crate::physics::SequenceParams;

type Cf = Complex64;

/// Simple region geometry on the image grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Shape {
    Full,
    Disk { cy: f64, cx: f64, r: f64 },
    Rect { y0: usize, x0: usize, y1: usize, x1: usize },
}

impl Shape {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Shape::Full => true,
            Shape::Disk { cy, cx, r } => {
                (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r
            }
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
        }
    }

    pub fn voxels(&self, ny: usize, nx: usize) -> Vec<usize> {
        let mut v = Vec::new();
        for y in 0..ny {
            for x in 0..nx {
                if self.contains(y, x) {
                    v.push(y * nx + x);
                }
            }
        }
        v
    }
}

/// Block task timing; the first `rest_s` seconds are rest, then `n_cycles`
/// repeats of ON/OFF blocks of `block_s` seconds each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub rest_s: f64,
    pub block_s: f64,
    pub n_cycles: usize,
    /// Slow-frame period, normally `n_c * TR`.
    pub frame_period_s: f64,
}

impl TaskSpec {
    pub fn duration_s(&self) -> f64 {
        self.rest_s + 2.0 * self.block_s * self.n_cycles as f64
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s() / self.frame_period_s).round() as usize
    }

    pub fn frame_times(&self) -> Vec<f64> {
        (0..self.n_frames()).map(|t| t as f64 * self.frame_period_s).collect()
    }

    /// 0/1 task indicator per slow frame.
    pub fn boxcar(&self) -> Vec<f64> {
        self.frame_times()
            .iter()
            .map(|&t| {
                if t < self.rest_s {
                    0.0
                } else {
                    let phase = ((t - self.rest_s) / self.block_s).floor() as usize;
                    if phase % 2 == 0 && phase / 2 < self.n_cycles {
                        1.0
                    } else {
                        0.0
                    }
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rest_s > 0.0 && self.block_s > 0.0 && self.frame_period_s > 0.0)
            || self.n_cycles == 0
        {
            return Err(OssiError::invalid("task timings must all be positive"));
        }
        Ok(())
    }
}

/// Double-gamma hemodynamic response parameters, peak-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrfSpec {
    pub peak_delay_s: f64,
    pub undershoot_delay_s: f64,
    pub dispersion_s: f64,
    pub undershoot_ratio: f64,
    pub length_s: f64,
}

impl Default for HrfSpec {
    fn default() -> Self {
        HrfSpec {
            peak_delay_s: 6.0,
            undershoot_delay_s: 16.0,
            dispersion_s: 1.0,
            undershoot_ratio: 1.0 / 6.0,
            length_s: 32.0,
        }
    }
}

/// Sampled double-gamma kernel with unit peak: a positive lobe peaking at
/// `peak_delay_s` minus a late undershoot lobe scaled by `undershoot_ratio`.
pub fn hrf_kernel(spec: &HrfSpec, dt_s: f64) -> Vec<f64> {
    assert!(dt_s > 0.0);
    let gamma_shape = |t: f64, peak: f64, disp: f64| -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        // t^{p/d} e^{-t/d}, normalized to 1 at its mode t = p
        let a = peak / disp;
        (a * (t / peak).ln() + (peak - t) / disp).exp()
    };
    let n = (spec.length_s / dt_s).floor() as usize + 1;
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 * dt_s;
            gamma_shape(t, spec.peak_delay_s, spec.dispersion_s)
                - spec.undershoot_ratio * gamma_shape(t, spec.undershoot_delay_s, spec.dispersion_s)
        })
        .collect();
    let peak = h.iter().cloned().fold(0.0f64, f64::max);
    if peak > 0.0 {
        for v in &mut h {
            *v /= peak;
        }
    }
    h
}

/// Task boxcar convolved with the HRF, normalized to unit maximum so the
/// plateau of a sustained block carries the full parameter change.
pub fn activation_waveform(task: &TaskSpec, hrf: &HrfSpec) -> Vec<f64> {
    let boxcar = task.boxcar();
    let kernel = hrf_kernel(hrf, task.frame_period_s);
    let mut w = vec![0.0f64; boxcar.len()];
    for (t, out) in w.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &hk) in kernel.iter().enumerate() {
            if k > t {
                break;
            }
            acc += hk * boxcar[t - k];
        }
        *out = acc;
    }
    let peak = w.iter().cloned().fold(0.0f64, f64::max);
    if peak > 0.0 {
        for v in &mut w {
            *v /= peak;
        }
    }
    w
}

/// Nuisance center-frequency trajectory: linear scanner drift plus a
/// respiratory sinusoid.
pub fn f0_timecourse(
    base_f0_hz: f64,
    drift_hz_per_min: f64,
    resp_amp_hz: f64,
    resp_period_s: f64,
    times_s: &[f64],
) -> Vec<f64> {
    times_s
        .iter()
        .map(|&t| {
            let resp = if resp_period_s > 0.0 {
                resp_amp_hz * (2.0 * std::f64::consts::PI * t / resp_period_s).sin()
            } else {
                0.0
            };
            base_f0_hz + drift_hz_per_min / 60.0 * t + resp
        })
        .collect()
}

/// T2' trajectory of activated voxels: baseline plus the HRF-shaped change.
pub fn t2p_timecourse(
    baseline_t2p_s: f64,
    delta_t2p_s: f64,
    task: &TaskSpec,
    hrf: &HrfSpec,
) -> Vec<f64> {
    activation_waveform(task, hrf)
        .iter()
        .map(|&w| baseline_t2p_s + delta_t2p_s * w)
        .collect()
}

/// Full phantom description.
#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub ny: usize,
    pub nx: usize,
    /// Later regions overwrite earlier ones where they overlap.
    pub regions: Vec<(Shape, VoxelParams)>,
    pub activation_roi: Vec<usize>,
    pub delta_t2p_s: f64,
    pub task: TaskSpec,
    pub hrf: HrfSpec,
    pub drift_hz_per_min: f64,
    pub resp_amp_hz: f64,
    pub resp_period_s: f64,
    pub tsnr_db: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn n_voxels(&self) -> usize {
        self.ny * self.nx
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.regions.is_empty() {
            return Err(OssiError::invalid("phantom needs at least one region"));
        }
        for (_, p) in &self.regions {
            p.validate()?;
        }
        if self.activation_roi.iter().any(|&v| v >= self.n_voxels()) {
            return Err(OssiError::invalid("activation ROI outside the image"));
        }
        if !self.tsnr_db.is_finite() {
            return Err(OssiError::invalid("tSNR must be finite"));
        }
        Ok(())
    }

    /// Region assignment per voxel; None where no region covers the voxel.
    pub fn region_index_map(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.n_voxels()];
        for (ri, (shape, _)) in self.regions.iter().enumerate() {
            for y in 0..self.ny {
                for x in 0..self.nx {
                    if shape.contains(y, x) {
                        map[y * self.nx + x] = Some(ri);
                    }
                }
            }
        }
        map
    }

    pub fn roi_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_voxels()];
        for &v in &self.activation_roi {
            m[v] = true;
        }
        m
    }
}

/// Ground truth produced by the generator: the image series and the
/// per-frame true parameter maps.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// One [N x n_c] frame set per slow-time point.
    pub series: Vec<Array2<Cf>>,
    pub m0: Vec<Cf>,
    /// [n_slow][N]
    pub t2p_s: Vec<Vec<f64>>,
    pub f0_hz: Vec<Vec<f64>>,
    pub r2star_hz: Vec<Vec<f64>>,
    pub t2_s: Vec<f64>,
    pub times_s: Vec<f64>,
}

/// Evaluate the voxel model for every voxel and slow frame.
///
/// Activated voxels follow the HRF-shaped T2' trajectory; every voxel sees
/// the global drift/respiration f0 offset on top of its region's center
/// frequency. Voxels sharing parameters within a frame are simulated once.
pub fn generate_series(
    spec: &PhantomSpec,
    seq: &SequenceParams,
    cauchy_k: usize,
    f_max_hz: f64,
) -> Result<GroundTruth> {
    spec.validate()?;
    seq.validate()?;

    let n = spec.n_voxels();
    let region_map = spec.region_index_map();
    let roi = spec.roi_mask();
    let times = spec.task.frame_times();
    let waveform = activation_waveform(&spec.task, &spec.hrf);
    let nuisance = f0_timecourse(
        0.0,
        spec.drift_hz_per_min,
        spec.resp_amp_hz,
        spec.resp_period_s,
        &times,
    );

    let m0: Vec<Cf> = (0..n)
        .map(|v| region_map[v].map(|r| spec.regions[r].1.m0).unwrap_or(Cf::new(0.0, 0.0)))
        .collect();
    let t2_map: Vec<f64> =
        (0..n).map(|v| region_map[v].map(|r| spec.regions[r].1.t2_s).unwrap_or(0.0)).collect();

    let frames: Result<Vec<(Array2<Cf>, Vec<f64>, Vec<f64>, Vec<f64>)>> = (0..times.len())
        .into_par_iter()
        .map(|ti| {
            let mut frame = Array2::<Cf>::zeros((n, seq.n_c));
            let mut t2p = vec![0.0f64; n];
            let mut f0 = vec![0.0f64; n];
            let mut r2s = vec![0.0f64; n];
            // unit-m0 signals per distinct parameter tuple within the frame
            let mut cache: HashMap<(u64, u64, u64, u64), (Vec<Cf>, CauchyGrid)> = HashMap::new();
            for v in 0..n {
                let Some(ri) = region_map[v] else { continue };
                let base = spec.regions[ri].1;
                let t2p_v = if roi[v] {
                    base.t2p_s + spec.delta_t2p_s * waveform[ti]
                } else {
                    base.t2p_s
                };
                let f0_v = base.f0_hz + nuisance[ti];
                t2p[v] = t2p_v;
                f0[v] = f0_v;
                r2s[v] = 1.0 / base.t2_s + 1.0 / t2p_v;
                let key =
                    (base.t1_s.to_bits(), base.t2_s.to_bits(), t2p_v.to_bits(), f0_v.to_bits());
                if !cache.contains_key(&key) {
                    let grid = cauchy_grid(t2p_v, cauchy_k, f_max_hz)?;
                    let vox = VoxelParams { m0: Cf::new(1.0, 0.0), t2p_s: t2p_v, f0_hz: f0_v, ..base };
                    let s = voxel_signal(seq, &vox, &grid)?;
                    cache.insert(key, (s.values, grid));
                }
                let (unit, _) = &cache[&key];
                for (c, &s) in unit.iter().enumerate() {
                    frame[[v, c]] = s * base.m0;
                }
            }
            Ok((frame, t2p, f0, r2s))
        })
        .collect();

    let mut series = Vec::with_capacity(times.len());
    let mut t2p_all = Vec::with_capacity(times.len());
    let mut f0_all = Vec::with_capacity(times.len());
    let mut r2s_all = Vec::with_capacity(times.len());
    for (frame, t2p, f0, r2s) in frames? {
        series.push(frame);
        t2p_all.push(t2p);
        f0_all.push(f0);
        r2s_all.push(r2s);
    }
    Ok(GroundTruth {
        series,
        m0,
        t2p_s: t2p_all,
        f0_hz: f0_all,
        r2star_hz: r2s_all,
        t2_s: t2_map,
        times_s: times,
    })
}

/// Per-sample complex noise level that realizes the target temporal SNR.
///
/// With independent complex noise of variance `sigma^2` per fast-time
/// sample, the l2-combined voxel value fluctuates with standard deviation
/// `sigma / sqrt(2)` to first order, so the voxel tSNR in dB is
/// `20 log10(mean combined magnitude * sqrt(2) / sigma)`. The returned
/// sigma makes the mean over in-support voxels hit `tsnr_db`.
pub fn noise_sigma_for_tsnr(series: &[Array2<Cf>], tsnr_db: f64, support_frac: f64) -> f64 {
    let n = series[0].nrows();
    let mut mean_combined = vec![0.0f64; n];
    for frame in series {
        for v in 0..n {
            let c: f64 = frame.row(v).iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            mean_combined[v] += c;
        }
    }
    for m in &mut mean_combined {
        *m /= series.len() as f64;
    }
    let peak = mean_combined.iter().cloned().fold(0.0f64, f64::max);
    let support: Vec<f64> =
        mean_combined.iter().cloned().filter(|&c| c > support_frac * peak).collect();
    if support.is_empty() || peak == 0.0 {
        return 0.0;
    }
    let mean_db: f64 =
        support.iter().map(|&c| 20.0 * c.log10()).sum::<f64>() / support.len() as f64;
    2.0f64.sqrt() * 10f64.powf((mean_db - tsnr_db) / 20.0)
}

fn frame_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    let mut z = seed ^ (frame as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn complex_noise(rng: &mut ChaCha8Rng, sigma: f64) -> Cf {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Cf::new(re, im) * (sigma / 2.0f64.sqrt())
}

/// Add complex Gaussian noise to an image series in place; the per-frame
/// RNG stream depends only on `(seed, slow frame index)`.
pub fn add_image_noise(series: &mut [Array2<Cf>], sigma: f64, seed: u64) {
    if sigma == 0.0 {
        return;
    }
    series.par_iter_mut().enumerate().for_each(|(t, frame)| {
        let mut rng = frame_rng(seed, t);
        for v in frame.iter_mut() {
            *v += complex_noise(&mut rng, sigma);
        }
    });
}

/// Encode every slow frame and add per-coil complex Gaussian k-space noise.
///
/// The per-sample variance equals the image-domain value because the DFT
/// convention is orthonormal. One sampling pattern (and encoding operator)
/// per slow frame; noise streams derive from `(seed, slow frame)`.
pub fn acquire(
    series: &[Array2<Cf>],
    sens: &SensitivityMaps,
    patterns: &[SamplingPattern],
    sigma: f64,
    seed: u64,
) -> Result<Vec<KSpaceData>> {
    if series.len() != patterns.len() {
        return Err(OssiError::shape(format!(
            "{} frames vs {} sampling patterns",
            series.len(),
            patterns.len()
        )));
    }
    series
        .par_iter()
        .zip(patterns.par_iter())
        .enumerate()
        .map(|(t, (frame, pattern))| {
            let op = EncodingOp::new(SensitivityMaps { maps: sens.maps.clone() }, pattern.clone())?;
            let mut y = op.forward(&frame.view())?;
            if sigma > 0.0 {
                let mut rng = frame_rng(seed, t);
                for fs in &mut y.samples {
                    for v in fs.iter_mut() {
                        *v += complex_noise(&mut rng, sigma);
                    }
                }
            }
            y.noise_sigma = sigma;
            Ok(y)
        })
        .collect()
}
