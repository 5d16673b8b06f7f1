//! Voxel-wise parameter estimation by variable projection: grid search over
//! dictionary atoms for the nonlinear parameters, closed-form amplitude.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{OssiError, Result};
use crate::manifold::Dictionary;

type Cf = Complex64;

/// Parameter estimate for one voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelEstimate {
    pub m0_hat: Cf,
    /// Matched T2; populated only when T2 was part of the search.
    pub t2_hat_s: Option<f64>,
    pub t2p_hat_s: f64,
    pub f0_hat_hz: f64,
    pub r2star_hat_hz: f64,
    /// `||v - m0 Phi||_2` at the matched atom.
    pub residual: f64,
    pub atom_index: usize,
    pub degenerate: bool,
}

/// Which dictionary rows a match scans, and whether T2 counts as searched.
#[derive(Debug, Clone)]
pub struct AtomSearch<'a> {
    dict: &'a Dictionary,
    rows: RowSet,
    multi_t2: bool,
}

#[derive(Debug, Clone)]
enum RowSet {
    Range(std::ops::Range<usize>),
    Sparse(Vec<usize>),
}

impl<'a> AtomSearch<'a> {
    /// Search the whole grid (joint T2 search when the grid has several T2s).
    pub fn full(dict: &'a Dictionary) -> Self {
        AtomSearch {
            dict,
            rows: RowSet::Range(0..dict.n_atoms()),
            multi_t2: dict.grid.t2_values_s.len() > 1,
        }
    }

    /// 3D search over (R2*, f0) at the T2 grid point nearest `t2_s`.
    pub fn fixed_t2(dict: &'a Dictionary, t2_s: f64) -> Self {
        let i = dict.nearest_t2_index(t2_s);
        AtomSearch { dict, rows: RowSet::Range(dict.fixed_t2_rows(i)), multi_t2: false }
    }

    /// 3D search over (T2, f0) with T2' pinned near `t2p_s`.
    pub fn fixed_t2p(dict: &'a Dictionary, t2p_s: f64) -> Self {
        AtomSearch {
            dict,
            rows: RowSet::Sparse(dict.fixed_t2p_row_indices(t2p_s)),
            multi_t2: dict.grid.t2_values_s.len() > 1,
        }
    }

    pub fn dictionary(&self) -> &Dictionary {
        self.dict
    }

    /// Match one fast-time vector against the selected rows.
    pub fn match_voxel(&self, v: &[Cf]) -> Result<VoxelEstimate> {
        let n_c = self.dict.n_c();
        if v.len() != n_c {
            return Err(OssiError::shape(format!(
                "signal length {} does not match dictionary n_c {}",
                v.len(),
                n_c
            )));
        }
        if v.iter().all(|x| x.re == 0.0 && x.im == 0.0) {
            return Ok(self.estimate_for(0, Cf::new(0.0, 0.0), 0.0, true));
        }

        let atoms = self.dict.atoms.as_slice().expect("row-major atoms");
        let mut best_row = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        let mut best_ip = Cf::new(0.0, 0.0);
        let mut scan = |row: usize| {
            let a = &atoms[row * n_c..(row + 1) * n_c];
            let mut ip = Cf::new(0.0, 0.0);
            for (x, y) in a.iter().zip(v) {
                ip += x.conj() * y;
            }
            let score = ip.norm_sqr();
            if score > best_score {
                best_score = score;
                best_row = row;
                best_ip = ip;
            }
        };
        match &self.rows {
            RowSet::Range(r) => r.clone().for_each(&mut scan),
            RowSet::Sparse(rows) => rows.iter().copied().for_each(&mut scan),
        }

        // residual by direct subtraction of the projection ip * atom
        let a = &atoms[best_row * n_c..(best_row + 1) * n_c];
        let res_sq: f64 = a.iter().zip(v).map(|(x, y)| (y - best_ip * x).norm_sqr()).sum();
        let m0 = best_ip / self.dict.norms[best_row];
        Ok(self.estimate_for(best_row, m0, res_sq.sqrt(), false))
    }

    fn estimate_for(&self, row: usize, m0: Cf, residual: f64, degenerate: bool) -> VoxelEstimate {
        VoxelEstimate {
            m0_hat: m0,
            t2_hat_s: if self.multi_t2 { Some(self.dict.t2_of(row)) } else { None },
            t2p_hat_s: self.dict.t2p_of(row),
            f0_hat_hz: self.dict.f0_of(row),
            r2star_hat_hz: self.dict.r2star_of(row),
            residual,
            atom_index: row,
            degenerate,
        }
    }
}

/// Grid-search VARPRO match over the full dictionary.
pub fn varpro_match(v: &[Cf], dict: &Dictionary) -> Result<VoxelEstimate> {
    AtomSearch::full(dict).match_voxel(v)
}

/// Squared distance from `v` to the manifold: the minimum over atoms and
/// amplitudes of `||v - m0 Phi||^2`.
pub fn regularizer_value(v: &[Cf], dict: &Dictionary) -> Result<f64> {
    let est = varpro_match(v, dict)?;
    Ok(est.residual * est.residual)
}

/// Per-voxel parameter maps over an image.
#[derive(Debug, Clone, Default)]
pub struct QuantMaps {
    pub m0: Vec<Cf>,
    pub t2p_s: Vec<f64>,
    pub f0_hz: Vec<f64>,
    pub r2star_hz: Vec<f64>,
    pub residual: Vec<f64>,
    pub t2_s: Vec<f64>,
    pub atom_index: Vec<usize>,
    pub degenerate: Vec<bool>,
}

impl QuantMaps {
    fn from_estimates(ests: Vec<VoxelEstimate>, fallback_t2: f64) -> Self {
        let mut maps = QuantMaps::default();
        for e in ests {
            maps.m0.push(e.m0_hat);
            maps.t2p_s.push(e.t2p_hat_s);
            maps.f0_hz.push(e.f0_hat_hz);
            maps.r2star_hz.push(e.r2star_hat_hz);
            maps.residual.push(e.residual);
            maps.t2_s.push(e.t2_hat_s.unwrap_or(fallback_t2));
            maps.atom_index.push(e.atom_index);
            maps.degenerate.push(e.degenerate);
        }
        maps
    }

    pub fn len(&self) -> usize {
        self.m0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m0.is_empty()
    }
}

/// Voxel-by-voxel VARPRO over an [N x n_c] image; rows are independent so
/// the parallel schedule cannot change the result.
pub fn quantify_image(x: &ArrayView2<Cf>, dict: &Dictionary) -> Result<QuantMaps> {
    let search = AtomSearch::full(dict);
    let rows: Vec<&[Cf]> = x.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
    let ests: Result<Vec<VoxelEstimate>> =
        rows.par_iter().map(|v| search.match_voxel(v)).collect();
    let fallback = dict.grid.t2_values_s[0];
    Ok(QuantMaps::from_estimates(ests?, fallback))
}

/// Project every voxel of `x` onto its best manifold fit `m0 Phi(theta)`,
/// returning the projected image alongside the maps.
pub fn project_to_manifold(
    x: &ArrayView2<Cf>,
    dict: &Dictionary,
) -> Result<(Array2<Cf>, QuantMaps)> {
    let maps = quantify_image(x, dict)?;
    let n_c = dict.n_c();
    let mut proj = Array2::<Cf>::zeros((x.nrows(), n_c));
    let atoms = dict.atoms.as_slice().expect("row-major atoms");
    for (i, mut row) in proj.rows_mut().into_iter().enumerate() {
        let a = &atoms[maps.atom_index[i] * n_c..(maps.atom_index[i] + 1) * n_c];
        // m0 * unnormalized atom = (ip / norm) * (norm * unit) = ip * unit
        let scale = maps.m0[i] * dict.norms[maps.atom_index[i]];
        for (dst, &src) in row.iter_mut().zip(a) {
            *dst = scale * src;
        }
    }
    Ok((proj, maps))
}
