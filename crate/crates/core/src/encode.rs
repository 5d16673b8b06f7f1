//! The forward encoding operator: coil sensitivities, an orthonormal 2D
//! Fourier transform, and per-frame undersampling; plus its exact adjoint
//! and a power-iteration spectral norm estimate.
//!
//! Cartesian frames use an FFT; explicit coordinate lists use the exact
//! nonuniform DFT sum, which is affordable at the image sizes handled here.

use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{OssiError, Result};

type Cf = Complex64;

/// Complex coil profiles, `[n_coils, ny, nx]`.
#[derive(Debug, Clone)]
pub struct SensitivityMaps {
    pub maps: Array3<Cf>,
}

impl SensitivityMaps {
    pub fn n_coils(&self) -> usize {
        self.maps.shape()[0]
    }

    pub fn ny(&self) -> usize {
        self.maps.shape()[1]
    }

    pub fn nx(&self) -> usize {
        self.maps.shape()[2]
    }

    /// Root-sum-of-squares magnitude across coils per voxel.
    pub fn rss(&self) -> Array2<f64> {
        let (nc, ny, nx) = (self.n_coils(), self.ny(), self.nx());
        Array2::from_shape_fn((ny, nx), |(y, x)| {
            (0..nc).map(|c| self.maps[[c, y, x]].norm_sqr()).sum::<f64>().sqrt()
        })
    }
}

/// Sampling of a single fast-time frame.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameSampling {
    /// Boolean Cartesian k-space mask, `[ny, nx]`; samples are taken in
    /// row-major scan order.
    Mask(Array2<bool>),
    /// Explicit (kx, ky) coordinates in cycles/FOV.
    Coords(Vec<[f64; 2]>),
}

impl FrameSampling {
    pub fn n_samples(&self) -> usize {
        match self {
            FrameSampling::Mask(m) => m.iter().filter(|&&b| b).count(),
            FrameSampling::Coords(c) => c.len(),
        }
    }
}

/// Per-frame sampling for one slow-time set of `n_c` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPattern {
    pub ny: usize,
    pub nx: usize,
    pub frames: Vec<FrameSampling>,
}

impl SamplingPattern {
    pub fn full(ny: usize, nx: usize, n_frames: usize) -> Self {
        let mask = Array2::from_elem((ny, nx), true);
        SamplingPattern {
            ny,
            nx,
            frames: (0..n_frames).map(|_| FrameSampling::Mask(mask.clone())).collect(),
        }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (t, f) in self.frames.iter().enumerate() {
            if f.n_samples() == 0 {
                return Err(OssiError::invalid(format!("frame {t} has no samples")));
            }
            if let FrameSampling::Mask(m) = f {
                if m.dim() != (self.ny, self.nx) {
                    return Err(OssiError::shape(format!(
                        "frame {t} mask {:?} does not match image {}x{}",
                        m.dim(),
                        self.ny,
                        self.nx
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Acquired k-space for one slow-time set: per frame, a `[n_coils,
/// n_samples]` block.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceData {
    pub samples: Vec<Array2<Cf>>,
    pub pattern: SamplingPattern,
    pub noise_sigma: f64,
}

impl KSpaceData {
    pub fn l2_norm(&self) -> f64 {
        self.samples
            .iter()
            .map(|f| f.iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn inner(&self, other: &KSpaceData) -> Cf {
        self.samples
            .iter()
            .zip(&other.samples)
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(x, y)| x.conj() * y)
            .sum()
    }
}

/// Bundled sensitivities + sampling with FFT plans; the linear operator `A`.
pub struct EncodingOp {
    pub sens: SensitivityMaps,
    pub pattern: SamplingPattern,
    fft_row: Arc<dyn Fft<f64>>,
    fft_col: Arc<dyn Fft<f64>>,
    ifft_row: Arc<dyn Fft<f64>>,
    ifft_col: Arc<dyn Fft<f64>>,
}

impl EncodingOp {
    pub fn new(sens: SensitivityMaps, pattern: SamplingPattern) -> Result<Self> {
        if sens.ny() != pattern.ny || sens.nx() != pattern.nx {
            return Err(OssiError::shape(format!(
                "sensitivities {}x{} vs pattern {}x{}",
                sens.ny(),
                sens.nx(),
                pattern.ny,
                pattern.nx
            )));
        }
        pattern.validate()?;
        let mut planner = FftPlanner::new();
        let fft_row = planner.plan_fft_forward(pattern.nx);
        let fft_col = planner.plan_fft_forward(pattern.ny);
        let ifft_row = planner.plan_fft_inverse(pattern.nx);
        let ifft_col = planner.plan_fft_inverse(pattern.ny);
        Ok(EncodingOp { sens, pattern, fft_row, fft_col, ifft_row, ifft_col })
    }

    pub fn ny(&self) -> usize {
        self.pattern.ny
    }

    pub fn nx(&self) -> usize {
        self.pattern.nx
    }

    pub fn n_voxels(&self) -> usize {
        self.pattern.ny * self.pattern.nx
    }

    pub fn n_frames(&self) -> usize {
        self.pattern.frames.len()
    }

    pub fn n_coils(&self) -> usize {
        self.sens.n_coils()
    }

    /// Apply `A`: per frame and coil, sample the unitary 2D DFT of the
    /// sensitivity-weighted image.
    pub fn forward(&self, x: &ArrayView2<Cf>) -> Result<KSpaceData> {
        let (n, n_frames) = (self.n_voxels(), self.n_frames());
        if x.nrows() != n || x.ncols() != n_frames {
            return Err(OssiError::shape(format!(
                "image {}x{} vs expected {}x{}",
                x.nrows(),
                x.ncols(),
                n,
                n_frames
            )));
        }
        let samples: Result<Vec<Array2<Cf>>> = (0..n_frames)
            .into_par_iter()
            .map(|t| self.forward_frame(x, t))
            .collect();
        Ok(KSpaceData { samples: samples?, pattern: self.pattern.clone(), noise_sigma: 0.0 })
    }

    fn forward_frame(&self, x: &ArrayView2<Cf>, t: usize) -> Result<Array2<Cf>> {
        let (ny, nx, nc) = (self.ny(), self.nx(), self.n_coils());
        let n = ny * nx;
        let frame = &self.pattern.frames[t];
        let mut out = Array2::<Cf>::zeros((nc, frame.n_samples()));
        let mut weighted = vec![Cf::new(0.0, 0.0); n];
        let mut scratch = self.scratch();
        for c in 0..nc {
            let sens = self.sens.maps.index_axis(ndarray::Axis(0), c);
            let sens = sens.as_slice().expect("contiguous sens");
            for v in 0..n {
                weighted[v] = x[[v, t]] * sens[v];
            }
            match frame {
                FrameSampling::Mask(mask) => {
                    self.fft2_unitary(&mut weighted, true, &mut scratch);
                    let mask = mask.as_slice().expect("contiguous mask");
                    let mut s = 0;
                    for v in 0..n {
                        if mask[v] {
                            out[[c, s]] = weighted[v];
                            s += 1;
                        }
                    }
                }
                FrameSampling::Coords(coords) => {
                    nudft_forward(&weighted, ny, nx, coords, out.row_mut(c).as_slice_mut().unwrap());
                }
            }
        }
        Ok(out)
    }

    /// Apply the exact adjoint `A'` under the standard complex inner product.
    pub fn adjoint(&self, y: &KSpaceData) -> Result<Array2<Cf>> {
        let (n, n_frames) = (self.n_voxels(), self.n_frames());
        if y.samples.len() != n_frames {
            return Err(OssiError::shape(format!(
                "k-space has {} frames, operator expects {n_frames}",
                y.samples.len()
            )));
        }
        let cols: Result<Vec<Vec<Cf>>> = (0..n_frames)
            .into_par_iter()
            .map(|t| self.adjoint_frame(&y.samples[t], t))
            .collect();
        let cols = cols?;
        let mut x = Array2::<Cf>::zeros((n, n_frames));
        for (t, col) in cols.into_iter().enumerate() {
            for v in 0..n {
                x[[v, t]] = col[v];
            }
        }
        Ok(x)
    }

    fn adjoint_frame(&self, frame_samples: &Array2<Cf>, t: usize) -> Result<Vec<Cf>> {
        let (ny, nx, nc) = (self.ny(), self.nx(), self.n_coils());
        let n = ny * nx;
        let frame = &self.pattern.frames[t];
        if frame_samples.dim() != (nc, frame.n_samples()) {
            return Err(OssiError::shape(format!(
                "frame {t}: samples {:?} vs expected ({nc}, {})",
                frame_samples.dim(),
                frame.n_samples()
            )));
        }
        let mut acc = vec![Cf::new(0.0, 0.0); n];
        let mut grid = vec![Cf::new(0.0, 0.0); n];
        let mut scratch = self.scratch();
        for c in 0..nc {
            let sens = self.sens.maps.index_axis(ndarray::Axis(0), c);
            let sens = sens.as_slice().expect("contiguous sens");
            match frame {
                FrameSampling::Mask(mask) => {
                    grid.fill(Cf::new(0.0, 0.0));
                    let mask = mask.as_slice().expect("contiguous mask");
                    let mut s = 0;
                    for v in 0..n {
                        if mask[v] {
                            grid[v] = frame_samples[[c, s]];
                            s += 1;
                        }
                    }
                    self.fft2_unitary(&mut grid, false, &mut scratch);
                }
                FrameSampling::Coords(coords) => {
                    nudft_adjoint(
                        frame_samples.row(c).as_slice().unwrap(),
                        ny,
                        nx,
                        coords,
                        &mut grid,
                    );
                }
            }
            for v in 0..n {
                acc[v] += sens[v].conj() * grid[v];
            }
        }
        Ok(acc)
    }

    fn scratch(&self) -> Vec<Cf> {
        let len = self
            .fft_row
            .get_inplace_scratch_len()
            .max(self.fft_col.get_inplace_scratch_len())
            .max(self.ifft_row.get_inplace_scratch_len())
            .max(self.ifft_col.get_inplace_scratch_len());
        vec![Cf::new(0.0, 0.0); len.max(self.ny())]
    }

    /// In-place unitary 2D DFT (`1/sqrt(ny nx)` both directions).
    fn fft2_unitary(&self, buf: &mut [Cf], forward: bool, scratch: &mut Vec<Cf>) {
        let (ny, nx) = (self.ny(), self.nx());
        let (row, col) =
            if forward { (&self.fft_row, &self.fft_col) } else { (&self.ifft_row, &self.ifft_col) };
        for r in 0..ny {
            row.process_with_scratch(&mut buf[r * nx..(r + 1) * nx], scratch);
        }
        let mut column = vec![Cf::new(0.0, 0.0); ny];
        for cidx in 0..nx {
            for r in 0..ny {
                column[r] = buf[r * nx + cidx];
            }
            col.process_with_scratch(&mut column, scratch);
            for r in 0..ny {
                buf[r * nx + cidx] = column[r];
            }
        }
        let scale = 1.0 / ((ny * nx) as f64).sqrt();
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    /// Power iteration on `A'A` from a fixed-seed random start; returns the
    /// spectral norm estimate `sigma(A)`.
    pub fn spectral_norm(&self, n_iters: usize, seed: u64) -> Result<f64> {
        assert!(n_iters >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Array2::from_shape_fn((self.n_voxels(), self.n_frames()), |_| {
            Cf::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let norm = frob(&v);
        if norm == 0.0 {
            return Ok(0.0);
        }
        v.mapv_inplace(|x| x / norm);
        let mut lambda = 0.0;
        for _ in 0..n_iters {
            let w = self.adjoint(&self.forward(&v.view())?)?;
            lambda = frob(&w);
            if lambda == 0.0 {
                return Ok(0.0);
            }
            v = w / lambda;
        }
        Ok(lambda.sqrt())
    }
}

fn frob(x: &Array2<Cf>) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Exact nonuniform DFT: `y_k = (1/sqrt(N)) sum_r x(r) exp(-i 2 pi k.r)`
/// with `r` in fractional image coordinates.
fn nudft_forward(img: &[Cf], ny: usize, nx: usize, coords: &[[f64; 2]], out: &mut [Cf]) {
    let scale = 1.0 / ((ny * nx) as f64).sqrt();
    for (s, k) in coords.iter().enumerate() {
        let mut acc = Cf::new(0.0, 0.0);
        for iy in 0..ny {
            let py = k[1] * iy as f64 / ny as f64;
            for ix in 0..nx {
                let phase =
                    -2.0 * std::f64::consts::PI * (k[0] * ix as f64 / nx as f64 + py);
                acc += img[iy * nx + ix] * Cf::from_polar(1.0, phase);
            }
        }
        out[s] = acc * scale;
    }
}

fn nudft_adjoint(samples: &[Cf], ny: usize, nx: usize, coords: &[[f64; 2]], out: &mut [Cf]) {
    let scale = 1.0 / ((ny * nx) as f64).sqrt();
    out.fill(Cf::new(0.0, 0.0));
    for (s, k) in coords.iter().enumerate() {
        let y = samples[s] * scale;
        for iy in 0..ny {
            let py = k[1] * iy as f64 / ny as f64;
            for ix in 0..nx {
                let phase = 2.0 * std::f64::consts::PI * (k[0] * ix as f64 / nx as f64 + py);
                out[iy * nx + ix] += y * Cf::from_polar(1.0, phase);
            }
        }
    }
}

/// Smooth synthetic coil profiles: per coil, a complex Gaussian bump
/// centered on a ring around the FOV with a mild linear phase ramp toward
/// the coil, jointly normalized so the peak root-sum-of-squares is 1.
pub fn synthetic_sensitivities(ny: usize, nx: usize, n_coils: usize) -> SensitivityMaps {
    let mut maps = Array3::<Cf>::zeros((n_coils, ny, nx));
    let (cy, cx) = ((ny as f64 - 1.0) / 2.0, (nx as f64 - 1.0) / 2.0);
    let ring = 0.55 * (ny.min(nx) as f64) / 2.0;
    let width = 0.75 * ny.min(nx) as f64;
    for c in 0..n_coils {
        let ang = 2.0 * std::f64::consts::PI * c as f64 / n_coils as f64;
        let (gy, gx) = (cy + ring * ang.sin(), cx + ring * ang.cos());
        for y in 0..ny {
            for x in 0..nx {
                let d2 = (y as f64 - gy).powi(2) + (x as f64 - gx).powi(2);
                let mag = (-d2 / (2.0 * width * width) * 4.0).exp();
                let ramp = 0.35 * ((x as f64 - cx) * ang.cos() + (y as f64 - cy) * ang.sin())
                    / ny.max(nx) as f64;
                maps[[c, y, x]] = Cf::from_polar(mag, std::f64::consts::PI * ramp);
            }
        }
    }
    let sens = SensitivityMaps { maps };
    let peak = sens.rss().iter().fold(0.0f64, |a, &b| a.max(b));
    SensitivityMaps { maps: sens.maps / Cf::new(peak, 0.0) }
}

/// Variable-density pseudo-random Cartesian masks, one per fast-time frame,
/// reseeded from `(seed, slow_index, frame)` so each slow-time set samples
/// differently. Cell weights fall off with k-space radius as
/// `1/(1 + (r/0.3)^4)`; the DC cell is always included and the remaining
/// budget (`ceil(ny nx / accel) - 1` cells) is drawn by weighted sampling
/// without replacement.
pub fn variable_density_pattern(
    ny: usize,
    nx: usize,
    n_frames: usize,
    accel: f64,
    seed: u64,
    slow_index: usize,
) -> SamplingPattern {
    let budget = (((ny * nx) as f64) / accel).ceil() as usize;
    let budget = budget.clamp(1, ny * nx);
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, slow_index as u64, t as u64));
        let mut mask = Array2::from_elem((ny, nx), false);
        mask[[0, 0]] = true; // DC
        // weighted sampling without replacement via exponential keys
        let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(ny * nx - 1);
        for v in 1..ny * nx {
            let (iy, ix) = (v / nx, v % nx);
            let dy = iy.min(ny - iy) as f64 / (ny as f64 / 2.0);
            let dx = ix.min(nx - ix) as f64 / (nx as f64 / 2.0);
            let r = (dy * dy + dx * dx).sqrt();
            let w = 1.0 / (1.0 + (r / 0.3).powi(4));
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            keyed.push((-u.ln() / w, v));
        }
        keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, v) in keyed.iter().take(budget.saturating_sub(1)) {
            mask[[v / nx, v % nx]] = true;
        }
        frames.push(FrameSampling::Mask(mask));
    }
    SamplingPattern { ny, nx, frames }
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
