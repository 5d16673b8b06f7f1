//! Voxel-level signal model and the discrete signal dictionary.
//!
//! A voxel's fast-time signal is a Cauchy-weighted Riemann sum of isochromat
//! signals spread around the voxel's center frequency; the spread width is
//! set by the reversible dephasing time T2'. The dictionary discretizes this
//! model over a (T2, R2*, f0) grid, one unit-normalized atom per triple.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{OssiError, Result};
use crate::physics::{simulate_isochromat, FastTimeSignal, IsochromatParams, SequenceParams};

type Cf = Complex64;

/// Tissue parameters of one voxel, including the dephasing time T2'.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelParams {
    pub t1_s: f64,
    pub t2_s: f64,
    pub t2p_s: f64,
    pub f0_hz: f64,
    pub m0: Cf,
}

impl VoxelParams {
    pub fn r2star_hz(&self) -> f64 {
        1.0 / self.t2_s + 1.0 / self.t2p_s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t2p_s > 0.0 && self.t2p_s.is_finite()) {
            return Err(OssiError::invalid(format!("T2' must be positive, got {}", self.t2p_s)));
        }
        if !self.r2star_hz().is_finite() {
            return Err(OssiError::invalid("derived R2* is not finite"));
        }
        self.isochromat_at(self.f0_hz).validate()
    }

    fn isochromat_at(&self, f0_hz: f64) -> IsochromatParams {
        IsochromatParams { t1_s: self.t1_s, t2_s: self.t2_s, f0_hz, m0: Cf::new(1.0, 0.0) }
    }
}

/// Cauchy scale parameter `gamma = 1 / (2 pi T2')` in Hz.
pub fn cauchy_gamma(t2p_s: f64) -> f64 {
    1.0 / (2.0 * std::f64::consts::PI * t2p_s)
}

/// Cauchy probability density `gamma / (pi (gamma^2 + f^2))`.
pub fn cauchy_pdf(f_hz: f64, gamma_hz: f64) -> f64 {
    gamma_hz / (std::f64::consts::PI * (gamma_hz * gamma_hz + f_hz * f_hz))
}

/// Discretized frequency spread: uniform offsets with normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyGrid {
    pub f_offsets_hz: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Build a `k`-point truncated Cauchy quadrature on `[-f_max, f_max]`.
///
/// Weights are the density values renormalized to unit sum, which restores
/// the tail mass lost to truncation.
pub fn cauchy_grid(t2p_s: f64, k: usize, f_max_hz: f64) -> Result<CauchyGrid> {
    if !(t2p_s > 0.0) {
        return Err(OssiError::invalid(format!("T2' must be positive, got {t2p_s}")));
    }
    if k < 2 {
        return Err(OssiError::invalid(format!("need k >= 2 offsets, got {k}")));
    }
    if !(f_max_hz > 0.0) {
        return Err(OssiError::invalid(format!("f_max must be positive, got {f_max_hz}")));
    }
    let gamma = cauchy_gamma(t2p_s);
    let step = 2.0 * f_max_hz / (k - 1) as f64;
    let f_offsets_hz: Vec<f64> = (0..k).map(|i| -f_max_hz + step * i as f64).collect();
    let weights = normalized_cauchy_weights(&f_offsets_hz, gamma);
    Ok(CauchyGrid { f_offsets_hz, weights })
}

fn normalized_cauchy_weights(offsets: &[f64], gamma: f64) -> Vec<f64> {
    let mut w: Vec<f64> = offsets.iter().map(|&f| cauchy_pdf(f, gamma)).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    // push the straggling rounding error onto the largest weight
    let sum: f64 = w.iter().sum();
    let imax = (0..w.len()).max_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap()).unwrap();
    w[imax] += 1.0 - sum;
    w
}

/// Fast-time signal of one voxel: weighted sum of isochromat signals at the
/// voxel's center frequency plus each grid offset, scaled by the voxel m0.
pub fn voxel_signal(
    seq: &SequenceParams,
    vox: &VoxelParams,
    grid: &CauchyGrid,
) -> Result<FastTimeSignal> {
    vox.validate()?;
    if grid.f_offsets_hz.len() != grid.weights.len() {
        return Err(OssiError::shape("offset/weight length mismatch"));
    }
    let mut acc = vec![Cf::new(0.0, 0.0); seq.n_c];
    for (&f, &w) in grid.f_offsets_hz.iter().zip(&grid.weights) {
        let iso = vox.isochromat_at(vox.f0_hz + f);
        let s = simulate_isochromat(seq, &iso)?;
        for (a, v) in acc.iter_mut().zip(&s.values) {
            *a += w * v;
        }
    }
    for a in &mut acc {
        *a *= vox.m0;
    }
    Ok(FastTimeSignal { values: acc })
}

/// Uniform grid `start, start + step, ...` up to `stop`. The stop value is
/// included exactly when the step lands on it (within a 1e-9 count slack);
/// otherwise the grid stays below it, matching arange conventions.
pub fn arange_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0 && stop >= start);
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    let mut v: Vec<f64> = (0..=n).map(|i| start + step * i as f64).collect();
    if let Some(last) = v.last_mut() {
        if (*last - stop).abs() < 1e-9 * step {
            *last = stop; // snap accumulated rounding onto the endpoint
        }
    }
    v
}

/// Parameter grids spanned by the dictionary.
///
/// The dephasing axis is labeled by R2* values converted to T2' at a fixed
/// reference T2 (`t2p = 1/(r2star - 1/reference_t2)`), so the same T2' grid
/// combines with every T2 value and all (T2, T2', f0) triples stay valid.
/// An atom's own R2* is `1/T2 + 1/T2'`; at the reference T2 it coincides
/// with the axis label.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryGrid {
    pub t2_values_s: Vec<f64>,
    pub r2star_values_hz: Vec<f64>,
    pub f0_values_hz: Vec<f64>,
    pub fixed_t1_s: f64,
    /// T2 at which the R2* labels translate to T2' values.
    pub reference_t2_s: f64,
}

impl Default for DictionaryGrid {
    /// T2 40..150 ms in 1 ms steps, R2* 12..38 Hz in 0.1 Hz steps at a
    /// 92.6 ms reference T2, f0 -33.3..33.3 Hz in 0.22 Hz steps, T1 fixed
    /// at 1400 ms.
    fn default() -> Self {
        DictionaryGrid {
            t2_values_s: arange_grid(40e-3, 150e-3, 1e-3),
            r2star_values_hz: arange_grid(12.0, 38.0, 0.1),
            f0_values_hz: arange_grid(-33.3, 33.3, 0.22),
            fixed_t1_s: 1.4,
            reference_t2_s: 92.6e-3,
        }
    }
}

impl DictionaryGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t2_values_s", &self.t2_values_s),
            ("r2star_values_hz", &self.r2star_values_hz),
            ("f0_values_hz", &self.f0_values_hz),
        ] {
            if v.is_empty() {
                return Err(OssiError::invalid(format!("{name} is empty")));
            }
            if v.windows(2).any(|w| w[1] <= w[0]) {
                return Err(OssiError::invalid(format!("{name} is not strictly increasing")));
            }
        }
        if !(self.fixed_t1_s > 0.0) {
            return Err(OssiError::invalid("fixed T1 must be positive"));
        }
        if !(self.reference_t2_s > 0.0) {
            return Err(OssiError::invalid("reference T2 must be positive"));
        }
        for &r2s in &self.r2star_values_hz {
            if r2s <= 1.0 / self.reference_t2_s {
                return Err(OssiError::invalid(format!(
                    "R2*={r2s} Hz <= 1/T2 for reference T2={} s: implied T2' is not positive",
                    self.reference_t2_s
                )));
            }
        }
        Ok(())
    }

    /// T2' values implied by the R2* axis at the reference T2.
    pub fn t2p_values_s(&self) -> Vec<f64> {
        self.r2star_values_hz.iter().map(|&r| t2p_from(self.reference_t2_s, r)).collect()
    }

    pub fn n_atoms(&self) -> usize {
        self.t2_values_s.len() * self.r2star_values_hz.len() * self.f0_values_hz.len()
    }
}

/// Grid coordinates of one atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaIndex {
    pub t2: usize,
    pub r2s: usize,
    pub f0: usize,
}

/// Unit-normalized signal dictionary over the (T2, R2*, f0) grid.
///
/// Atom rows are ordered T2-major, then f0, then R2*, so both a fixed-T2
/// slice and a (T2, f0) group are contiguous row ranges.
#[derive(Debug, Clone)]
pub struct Dictionary {
    pub seq: SequenceParams,
    pub grid: DictionaryGrid,
    /// T2' value of each R2* axis point, precomputed from the grid.
    pub t2p_values_s: Vec<f64>,
    /// [n_atoms x n_c], each row unit l2 norm.
    pub atoms: Array2<Cf>,
    /// Pre-normalization l2 norms, one per atom.
    pub norms: Vec<f64>,
    pub cauchy_k: usize,
    pub f_max_hz: f64,
}

impl Dictionary {
    pub fn n_atoms(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn n_c(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn row_of(&self, theta: ThetaIndex) -> usize {
        let n_f0 = self.grid.f0_values_hz.len();
        let n_r2s = self.grid.r2star_values_hz.len();
        (theta.t2 * n_f0 + theta.f0) * n_r2s + theta.r2s
    }

    pub fn theta_of(&self, row: usize) -> ThetaIndex {
        let n_f0 = self.grid.f0_values_hz.len();
        let n_r2s = self.grid.r2star_values_hz.len();
        let r2s = row % n_r2s;
        let rest = row / n_r2s;
        ThetaIndex { t2: rest / n_f0, f0: rest % n_f0, r2s }
    }

    pub fn t2_of(&self, row: usize) -> f64 {
        self.grid.t2_values_s[self.theta_of(row).t2]
    }

    /// The atom's own effective relaxation rate `1/T2 + 1/T2'`.
    pub fn r2star_of(&self, row: usize) -> f64 {
        let th = self.theta_of(row);
        1.0 / self.grid.t2_values_s[th.t2] + 1.0 / self.t2p_values_s[th.r2s]
    }

    pub fn f0_of(&self, row: usize) -> f64 {
        self.grid.f0_values_hz[self.theta_of(row).f0]
    }

    pub fn t2p_of(&self, row: usize) -> f64 {
        self.t2p_values_s[self.theta_of(row).r2s]
    }

    /// Contiguous row range of the 3D sub-dictionary at one T2 grid point.
    pub fn fixed_t2_rows(&self, i_t2: usize) -> std::ops::Range<usize> {
        let block = self.grid.f0_values_hz.len() * self.grid.r2star_values_hz.len();
        i_t2 * block..(i_t2 + 1) * block
    }

    pub fn nearest_t2_index(&self, t2_s: f64) -> usize {
        nearest_index(&self.grid.t2_values_s, t2_s)
    }

    /// Rows forming the 3D sub-dictionary with T2' pinned at the axis point
    /// nearest `t2p_s`: every (T2, f0) pair at that single T2' value.
    pub fn fixed_t2p_row_indices(&self, t2p_s: f64) -> Vec<usize> {
        let i_r2s = nearest_index(&self.t2p_values_s, t2p_s);
        let mut rows =
            Vec::with_capacity(self.grid.t2_values_s.len() * self.grid.f0_values_hz.len());
        for i_t2 in 0..self.grid.t2_values_s.len() {
            for i_f0 in 0..self.grid.f0_values_hz.len() {
                rows.push(self.row_of(ThetaIndex { t2: i_t2, f0: i_f0, r2s: i_r2s }));
            }
        }
        rows
    }
}

pub fn t2p_from(t2_s: f64, r2star_hz: f64) -> f64 {
    1.0 / (r2star_hz - 1.0 / t2_s)
}

pub fn nearest_index(values: &[f64], x: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &v) in values.iter().enumerate() {
        let d = (v - x).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Build the dictionary: one atom per (T2, R2*, f0) triple, each the
/// unit-normalized voxel signal at the triple's T2' with unit m0.
///
/// Atoms sharing (T2, f0) reuse the same isochromat simulations and differ
/// only in their Cauchy weights, which keeps the build tractable; the result
/// is bit-identical to calling [`voxel_signal`] per atom.
pub fn build_dictionary(
    seq: &SequenceParams,
    grid: &DictionaryGrid,
    cauchy_k: usize,
    f_max_hz: f64,
) -> Result<Dictionary> {
    seq.validate()?;
    grid.validate()?;
    if cauchy_k < 2 {
        return Err(OssiError::invalid(format!("cauchy_k must be >= 2, got {cauchy_k}")));
    }

    let n_c = seq.n_c;
    let n_t2 = grid.t2_values_s.len();
    let n_r2s = grid.r2star_values_hz.len();
    let n_f0 = grid.f0_values_hz.len();
    let n_atoms = n_t2 * n_r2s * n_f0;

    let step = 2.0 * f_max_hz / (cauchy_k - 1) as f64;
    let offsets: Vec<f64> = (0..cauchy_k).map(|i| -f_max_hz + step * i as f64).collect();

    let t2p_values = grid.t2p_values_s();
    // weights depend on T2' only, shared across every (T2, f0) group
    let weights: Vec<Vec<f64>> = t2p_values
        .iter()
        .map(|&t2p| normalized_cauchy_weights(&offsets, cauchy_gamma(t2p)))
        .collect();

    let mut atoms = Array2::<Cf>::zeros((n_atoms, n_c));
    let mut norms = vec![0.0f64; n_atoms];

    let group_rows = n_r2s; // one (T2, f0) group
    let atoms_slice = atoms.as_slice_mut().expect("row-major atoms");

    for (i_t2, &t2) in grid.t2_values_s.iter().enumerate() {
        let t2_block = i_t2 * n_f0 * n_r2s * n_c;
        let atom_block = &mut atoms_slice[t2_block..t2_block + n_f0 * n_r2s * n_c];
        let norm_block = &mut norms[i_t2 * n_f0 * n_r2s..(i_t2 + 1) * n_f0 * n_r2s];

        let result: Result<Vec<()>> = atom_block
            .par_chunks_mut(group_rows * n_c)
            .zip(norm_block.par_chunks_mut(group_rows))
            .enumerate()
            .map(|(i_f0, (chunk, norm_chunk))| {
                let f0 = grid.f0_values_hz[i_f0];
                // simulate each isochromat of this (T2, f0) group once
                let mut sims: Vec<Cf> = Vec::with_capacity(cauchy_k * n_c);
                for &f in &offsets {
                    let iso = IsochromatParams {
                        t1_s: grid.fixed_t1_s,
                        t2_s: t2,
                        f0_hz: f0 + f,
                        m0: Cf::new(1.0, 0.0),
                    };
                    let s = simulate_isochromat(seq, &iso)?;
                    sims.extend_from_slice(&s.values);
                }
                for (i_r2s, w) in weights.iter().enumerate() {
                    let row = &mut chunk[i_r2s * n_c..(i_r2s + 1) * n_c];
                    row.fill(Cf::new(0.0, 0.0));
                    for (i, &wi) in w.iter().enumerate() {
                        let s = &sims[i * n_c..(i + 1) * n_c];
                        for (r, &v) in row.iter_mut().zip(s) {
                            *r += wi * v;
                        }
                    }
                    let norm = row.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        for r in row.iter_mut() {
                            *r /= norm;
                        }
                    }
                    norm_chunk[i_r2s] = norm;
                }
                Ok(())
            })
            .collect();
        result?;
    }

    Ok(Dictionary {
        seq: *seq,
        grid: grid.clone(),
        t2p_values_s: t2p_values,
        atoms,
        norms,
        cauchy_k,
        f_max_hz,
    })
}
