//! The JSON run configuration shared by every subcommand. Unknown keys are
//! rejected; every section has workable defaults, so `{}` is a valid
//! configuration. Times are given in the units the field names carry
//! (`_ms`, `_s`) and converted to seconds at the core boundary.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use ossi_core::analysis::AnalysisConfig;
use ossi_core::manifold::{arange_grid, DictionaryGrid, VoxelParams};
use ossi_core::phantom::{HrfSpec, PhantomSpec, Shape, TaskSpec};
use ossi_core::physics::SequenceParams;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sequence: SequenceSection,
    pub phantom: PhantomSection,
    pub sampling: SamplingSection,
    pub dictionary: DictionarySection,
    pub recon: ReconSection,
    pub analysis: AnalysisSection,
    pub study: StudySection,
    pub signal_sweep: SweepSection,
    pub seeds: Seeds,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sequence: Default::default(),
            phantom: Default::default(),
            sampling: Default::default(),
            dictionary: Default::default(),
            recon: Default::default(),
            analysis: Default::default(),
            study: Default::default(),
            signal_sweep: Default::default(),
            seeds: Default::default(),
            output_dir: "out".to_string(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<(Self, Vec<u8>)> {
        let raw = fs::read(path).map_err(|e| {
            CliError::config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = serde_json::from_slice(&raw)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok((cfg, raw))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.sequence.to_core().map_err(CliError::from_core_config)?;
        self.analysis.to_core().validate().map_err(CliError::from_core_config)?;
        if self.output_dir.is_empty() {
            return Err(CliError::config("output_dir must not be empty"));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.output_dir)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceSection {
    pub tr_ms: f64,
    pub te_ms: f64,
    pub flip_deg: f64,
    pub n_c: usize,
    /// Warm-up TRs; when absent, covers 10 s rounded up to a whole cycle.
    pub n_warmup_tr: Option<usize>,
}

impl Default for SequenceSection {
    fn default() -> Self {
        SequenceSection { tr_ms: 15.0, te_ms: 2.7, flip_deg: 10.0, n_c: 10, n_warmup_tr: None }
    }
}

impl SequenceSection {
    pub fn to_core(&self) -> ossi_core::Result<SequenceParams> {
        let tr_s = self.tr_ms * 1e-3;
        let seq = SequenceParams {
            tr_s,
            te_s: self.te_ms * 1e-3,
            flip_rad: self.flip_deg.to_radians(),
            n_c: self.n_c,
            n_warmup_tr: self
                .n_warmup_tr
                .unwrap_or_else(|| SequenceParams::warmup_trs(tr_s, self.n_c, 10.0)),
        };
        seq.validate()?;
        Ok(seq)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    pub shape: Shape,
    pub t1_ms: f64,
    pub t2_ms: f64,
    pub t2p_ms: f64,
    pub f0_hz: f64,
    pub m0_re: f64,
    pub m0_im: f64,
}

impl RegionSection {
    fn to_core(&self) -> (Shape, VoxelParams) {
        (
            self.shape,
            VoxelParams {
                t1_s: self.t1_ms * 1e-3,
                t2_s: self.t2_ms * 1e-3,
                t2p_s: self.t2p_ms * 1e-3,
                f0_hz: self.f0_hz,
                m0: Complex64::new(self.m0_re, self.m0_im),
            },
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub rest_s: f64,
    pub block_s: f64,
    pub n_cycles: usize,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection { rest_s: 10.0, block_s: 10.0, n_cycles: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub ny: usize,
    pub nx: usize,
    pub regions: Vec<RegionSection>,
    pub activation_roi: Shape,
    pub delta_t2p_ms: f64,
    pub task: TaskSection,
    pub drift_hz_per_min: f64,
    pub resp_amp_hz: f64,
    pub resp_period_s: f64,
    pub tsnr_db: f64,
    pub cauchy_k: usize,
    pub f_max_hz: f64,
}

impl Default for PhantomSection {
    /// Desk-scale default: a 40x40 disk with three embedded contrast
    /// structures spanning the 12-38 Hz rate range and an activation disk.
    fn default() -> Self {
        let gm = |shape, t2p_ms: f64, f0: f64, m0: f64| RegionSection {
            shape,
            t1_ms: 1400.0,
            t2_ms: 92.6,
            t2p_ms,
            f0_hz: f0,
            m0_re: m0,
            m0_im: 0.0,
        };
        // T2' values giving R2* of about 20, 26, 15, and 32 Hz at
        // T2 = 92.6 ms
        PhantomSection {
            ny: 40,
            nx: 40,
            regions: vec![
                gm(Shape::Disk { cy: 19.5, cx: 19.5, r: 18.0 }, 108.68, 0.0, 1.0),
                gm(Shape::Disk { cy: 12.0, cx: 11.0, r: 5.0 }, 65.79, -1.5, 0.9),
                gm(Shape::Disk { cy: 12.0, cx: 28.0, r: 5.0 }, 238.04, 1.5, 1.1),
                gm(Shape::Rect { y0: 26, x0: 14, y1: 32, x1: 26 }, 47.17, 0.8, 0.95),
            ],
            activation_roi: Shape::Disk { cy: 27.0, cx: 20.0, r: 4.0 },
            delta_t2p_ms: 15.4,
            task: TaskSection::default(),
            drift_hz_per_min: 1.0,
            resp_amp_hz: 0.5,
            resp_period_s: 4.2,
            tsnr_db: 38.0,
            cauchy_k: 500,
            f_max_hz: 200.0,
        }
    }
}

impl PhantomSection {
    pub fn to_core(&self, seq: &SequenceParams, seed: u64) -> PhantomSpec {
        PhantomSpec {
            ny: self.ny,
            nx: self.nx,
            regions: self.regions.iter().map(|r| r.to_core()).collect(),
            activation_roi: self.activation_roi.voxels(self.ny, self.nx),
            delta_t2p_s: self.delta_t2p_ms * 1e-3,
            task: TaskSpec {
                rest_s: self.task.rest_s,
                block_s: self.task.block_s,
                n_cycles: self.task.n_cycles,
                frame_period_s: seq.tr_s * seq.n_c as f64,
            },
            hrf: HrfSpec::default(),
            drift_hz_per_min: self.drift_hz_per_min,
            resp_amp_hz: self.resp_amp_hz,
            resp_period_s: self.resp_period_s,
            tsnr_db: self.tsnr_db,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingKind {
    Full,
    RandomCartesian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub kind: SamplingKind,
    pub acceleration: f64,
    pub n_coils: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection { kind: SamplingKind::RandomCartesian, acceleration: 12.0, n_coils: 4 }
    }
}

/// `start:step:stop` arithmetic grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        arange_grid(self.start, self.stop, self.step)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictionarySection {
    /// T2 grid; a single-point grid gives the fixed-T2 3D dictionary.
    pub t2_ms: GridSpec,
    pub r2star_hz: GridSpec,
    pub f0_hz: GridSpec,
    pub t1_ms: f64,
    pub reference_t2_ms: f64,
    pub cauchy_k: usize,
    pub f_max_hz: f64,
}

impl Default for DictionarySection {
    fn default() -> Self {
        DictionarySection {
            t2_ms: GridSpec { start: 40.0, stop: 150.0, step: 1.0 },
            r2star_hz: GridSpec { start: 12.0, stop: 38.0, step: 0.1 },
            f0_hz: GridSpec { start: -33.3, stop: 33.3, step: 0.22 },
            t1_ms: 1400.0,
            reference_t2_ms: 92.6,
            cauchy_k: 4000,
            f_max_hz: 200.0,
        }
    }
}

impl DictionarySection {
    pub fn to_core(&self) -> DictionaryGrid {
        DictionaryGrid {
            t2_values_s: self.t2_ms.values().iter().map(|v| v * 1e-3).collect(),
            r2star_values_hz: self.r2star_hz.values(),
            f0_values_hz: self.f0_hz.values(),
            fixed_t1_s: self.t1_ms * 1e-3,
            reference_t2_s: self.reference_t2_ms * 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum ReconMethod {
    Ossimm,
    Lr,
    Cgsense,
}

impl ReconMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ReconMethod::Ossimm => "ossimm",
            ReconMethod::Lr => "lr",
            ReconMethod::Cgsense => "cgsense",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum InitKind {
    Zero,
    Adjoint,
    Datashared,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconSection {
    pub method: ReconMethod,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    /// Pick beta from the condition-number target / alpha from the rank
    /// target / lambda from the spectral norm.
    pub auto: bool,
    pub n_outer: usize,
    pub n_cg: usize,
    pub n_pogm: usize,
    pub n_cgsense: usize,
    pub kappa_target: f64,
    pub rank_target: usize,
    pub init: InitKind,
    /// Slow-time sets pooled per data-shared initialization window.
    pub datashare_window: usize,
}

impl Default for ReconSection {
    fn default() -> Self {
        ReconSection {
            method: ReconMethod::Ossimm,
            beta: None,
            alpha: None,
            lambda: None,
            auto: true,
            n_outer: 4,
            n_cg: 2,
            n_pogm: 15,
            n_cgsense: 19,
            kappa_target: 15.0,
            rank_target: 4,
            init: InitKind::Datashared,
            datashare_window: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub corr_threshold: f64,
    pub n_dct: usize,
    pub te_eff_ms: f64,
    pub signal_mask_frac: f64,
    pub r2s_mask_max_hz: f64,
    pub r2s_range_hz: (f64, f64),
    pub discard_first_block: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            corr_threshold: 0.45,
            n_dct: 4,
            te_eff_ms: 17.5,
            signal_mask_frac: 0.10,
            r2s_mask_max_hz: 50.0,
            r2s_range_hz: (12.0, 38.0),
            discard_first_block: true,
        }
    }
}

impl AnalysisSection {
    pub fn to_core(&self) -> AnalysisConfig {
        AnalysisConfig {
            corr_threshold: self.corr_threshold,
            n_dct: self.n_dct,
            te_eff_s: self.te_eff_ms * 1e-3,
            signal_mask_frac: self.signal_mask_frac,
            r2s_mask_max_hz: self.r2s_mask_max_hz,
            r2s_range_hz: self.r2s_range_hz,
            discard_first_block: self.discard_first_block,
        }
    }
}

/// Single-voxel estimation-mode study settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    pub t1_ms: f64,
    pub t2_ms: f64,
    /// Baseline effective rate; the baseline T2' follows from it at t2_ms.
    pub r2star_hz: f64,
    pub f0_hz: f64,
    pub delta_t2p_ms: f64,
    /// Mode (b): the fixed, deliberately wrong T2' assumption.
    pub assumed_t2p_ms: f64,
    /// Mode (d): the fixed, deliberately wrong T2 assumption.
    pub biased_t2_ms: f64,
    pub task: TaskSection,
    pub drift_hz_per_min: f64,
    pub resp_amp_hz: f64,
    pub resp_period_s: f64,
    pub tsnr_db: f64,
    pub cauchy_k: usize,
    pub f_max_hz: f64,
    pub dict_t2_ms: GridSpec,
    pub dict_r2star_hz: GridSpec,
    pub dict_f0_hz: GridSpec,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            t1_ms: 1400.0,
            t2_ms: 92.6,
            r2star_hz: 20.0,
            f0_hz: 0.0,
            delta_t2p_ms: 15.4,
            assumed_t2p_ms: 80.0,
            biased_t2_ms: 110.0,
            task: TaskSection::default(),
            drift_hz_per_min: 1.0,
            resp_amp_hz: 0.5,
            resp_period_s: 4.2,
            tsnr_db: 38.0,
            cauchy_k: 500,
            f_max_hz: 200.0,
            dict_t2_ms: GridSpec { start: 40.0, stop: 150.0, step: 2.0 },
            dict_r2star_hz: GridSpec { start: 12.0, stop: 38.0, step: 0.1 },
            dict_f0_hz: GridSpec { start: -3.08, stop: 3.08, step: 0.22 },
        }
    }
}

/// Fig.-1-style fast-time signal sweeps for `simulate-signal`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub t1_ms: f64,
    pub t2_ms: f64,
    /// With a T2' the sweep runs the spread voxel model; without it, the
    /// single isochromat.
    pub t2p_ms: Option<f64>,
    pub f0_values_hz: Vec<f64>,
    pub cauchy_k: usize,
    pub f_max_hz: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            t1_ms: 1400.0,
            t2_ms: 92.6,
            t2p_ms: None,
            f0_values_hz: vec![0.0, 2.0, 5.0],
            cauchy_k: 1000,
            f_max_hz: 200.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub phantom: u64,
    pub noise: u64,
    pub sampling: u64,
    pub power_iter: u64,
    pub study_noise: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { phantom: 1, noise: 2, sampling: 3, power_iter: 4, study_noise: 5 }
    }
}

impl Default for SamplingKindDefaultHack {
    fn default() -> Self {
        SamplingKindDefaultHack
    }
}
struct SamplingKindDefaultHack;
