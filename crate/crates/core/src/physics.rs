//! Bloch simulation of the oscillating steady-state transverse magnetization
//! of a single isochromat under quadratic RF phase cycling.
//!
//! One oscillation period spans `n_c` TRs. The simulator evolves a real
//! 3-vector magnetization from thermal equilibrium through a warm-up stretch
//! long enough to reach the oscillating steady state, then records the
//! demodulated transverse signal at the echo time of each subsequent TR.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{OssiError, Result};

/// Pulse-sequence timing and excitation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceParams {
    /// Repetition time in seconds.
    pub tr_s: f64,
    /// Echo time in seconds, measured from the (instantaneous) pulse.
    pub te_s: f64,
    /// Flip angle in radians.
    pub flip_rad: f64,
    /// RF phase-cycle length; the signal oscillates with period `n_c * TR`.
    pub n_c: usize,
    /// TRs simulated before recording starts; must be a multiple of `n_c`.
    pub n_warmup_tr: usize,
}

impl SequenceParams {
    /// Warm-up length covering at least `settle_s` seconds, rounded up to a
    /// multiple of `n_c` TRs.
    pub fn warmup_trs(tr_s: f64, n_c: usize, settle_s: f64) -> usize {
        let raw = (settle_s / tr_s).ceil() as usize;
        raw.div_ceil(n_c) * n_c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tr_s.is_finite() && self.te_s.is_finite() && self.flip_rad.is_finite()) {
            return Err(OssiError::invalid("sequence parameters must be finite"));
        }
        if !(self.te_s > 0.0 && self.te_s < self.tr_s) {
            return Err(OssiError::invalid(format!(
                "require 0 < TE < TR, got TE={} TR={}",
                self.te_s, self.tr_s
            )));
        }
        if !(self.flip_rad >= 0.0 && self.flip_rad < std::f64::consts::PI) {
            return Err(OssiError::invalid(format!(
                "flip angle {} rad outside [0, pi)",
                self.flip_rad
            )));
        }
        if self.n_c < 2 {
            return Err(OssiError::invalid(format!("n_c must be >= 2, got {}", self.n_c)));
        }
        if self.n_warmup_tr % self.n_c != 0 {
            return Err(OssiError::invalid(format!(
                "n_warmup_tr={} is not a multiple of n_c={}",
                self.n_warmup_tr, self.n_c
            )));
        }
        Ok(())
    }
}

impl Default for SequenceParams {
    /// TR 15 ms, TE 2.7 ms, 10 degree flip, n_c = 10, and a 10 s warm-up.
    fn default() -> Self {
        let tr_s = 15e-3;
        let n_c = 10;
        SequenceParams {
            tr_s,
            te_s: 2.7e-3,
            flip_rad: 10f64.to_radians(),
            n_c,
            n_warmup_tr: Self::warmup_trs(tr_s, n_c, 10.0),
        }
    }
}

/// Relaxation and off-resonance parameters of one isochromat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsochromatParams {
    pub t1_s: f64,
    pub t2_s: f64,
    pub f0_hz: f64,
    /// Complex equilibrium magnetization, arbitrary units.
    pub m0: Complex64,
}

impl IsochromatParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t1_s > 0.0 && self.t2_s > 0.0 && self.t1_s.is_finite() && self.t2_s.is_finite())
        {
            return Err(OssiError::invalid("T1 and T2 must be positive and finite"));
        }
        if self.t2_s > self.t1_s {
            return Err(OssiError::invalid(format!(
                "T2={} exceeds T1={}",
                self.t2_s, self.t1_s
            )));
        }
        if !self.f0_hz.is_finite() || !self.m0.re.is_finite() || !self.m0.im.is_finite() {
            return Err(OssiError::invalid("f0 and m0 must be finite"));
        }
        Ok(())
    }
}

/// One oscillation period of recorded signal: `n_c` complex samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FastTimeSignal {
    pub values: Vec<Complex64>,
}

impl FastTimeSignal {
    pub fn zeros(n_c: usize) -> Self {
        FastTimeSignal { values: vec![Complex64::new(0.0, 0.0); n_c] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// RF phase period of the quadratic cycling pattern in TRs.
///
/// `pi n^2 / n_c mod 2 pi` repeats every `n_c` TRs when `n_c` is even and
/// every `2 n_c` TRs when odd.
pub fn phase_period(n_c: usize) -> usize {
    if n_c % 2 == 0 {
        n_c
    } else {
        2 * n_c
    }
}

/// Quadratic RF phase `pi * n^2 / n_c`, reduced modulo `2 pi`.
///
/// The reduction is done in integer arithmetic (`n^2 mod 2 n_c`) so the
/// result stays exact for arbitrarily large pulse indices.
pub fn quadratic_phase(n: u64, n_c: u64) -> Result<f64> {
    if n_c < 2 {
        return Err(OssiError::invalid(format!("n_c must be >= 2, got {n_c}")));
    }
    Ok(quadratic_phase_unchecked(n, n_c))
}

fn quadratic_phase_unchecked(n: u64, n_c: u64) -> f64 {
    let modulus = 2 * n_c as u128;
    let m = (n as u128) % modulus;
    let sq = (m * m) % modulus;
    std::f64::consts::PI * (sq as f64) / (n_c as f64)
}

/// Simulate the steady-state signal over one oscillation period.
///
/// Evolution starts at equilibrium `(0, 0, |m0|)` and each TR applies an
/// instantaneous rotation by the flip angle about the transverse axis at the
/// quadratic-cycling phase, free precession/relaxation to TE, a readout, and
/// precession/relaxation over the remainder of the TR. The recorded sample is
/// demodulated by the exciting pulse's phase and carries the phase of `m0`.
/// Off-resonance precession follows the clockwise `exp(-i 2 pi f0 t)`
/// convention.
pub fn simulate_isochromat(seq: &SequenceParams, iso: &IsochromatParams) -> Result<FastTimeSignal> {
    let values = simulate_isochromat_trace(seq, iso, seq.n_c)?;
    Ok(FastTimeSignal { values })
}

/// Same evolution as [`simulate_isochromat`] but recording `n_record`
/// consecutive TRs after warm-up; used to probe steady-state periodicity.
pub fn simulate_isochromat_trace(
    seq: &SequenceParams,
    iso: &IsochromatParams,
    n_record: usize,
) -> Result<Vec<Complex64>> {
    seq.validate()?;
    iso.validate()?;

    let period = phase_period(seq.n_c);
    let trig: Vec<(f64, f64)> = (0..period)
        .map(|j| {
            let p = quadratic_phase_unchecked(j as u64, seq.n_c as u64);
            p.sin_cos()
        })
        .collect();

    let (sin_a, cos_a) = seq.flip_rad.sin_cos();
    let seg_te = SegmentFactors::new(seq.te_s, iso);
    let seg_rest = SegmentFactors::new(seq.tr_s - seq.te_s, iso);

    let m0_abs = iso.m0.norm();
    let m0_phase = if m0_abs > 0.0 {
        iso.m0 / m0_abs
    } else {
        Complex64::new(1.0, 0.0)
    };

    let mut m = [0.0f64, 0.0, m0_abs];
    let mut out = Vec::with_capacity(n_record);
    let total = seq.n_warmup_tr + n_record;
    for j in 0..total {
        let (sin_p, cos_p) = trig[j % period];
        rotate_rf(&mut m, sin_p, cos_p, sin_a, cos_a);
        seg_te.evolve(&mut m, m0_abs);
        if j >= seq.n_warmup_tr {
            let demod = Complex64::new(cos_p, -sin_p);
            out.push(Complex64::new(m[0], m[1]) * demod * m0_phase);
        }
        seg_rest.evolve(&mut m, m0_abs);
    }
    Ok(out)
}

/// Precession/relaxation factors for a fixed evolution interval.
struct SegmentFactors {
    e2: f64,
    e1: f64,
    sin_th: f64,
    cos_th: f64,
}

impl SegmentFactors {
    fn new(dt_s: f64, iso: &IsochromatParams) -> Self {
        let theta = -2.0 * std::f64::consts::PI * iso.f0_hz * dt_s;
        let (sin_th, cos_th) = theta.sin_cos();
        SegmentFactors {
            e2: (-dt_s / iso.t2_s).exp(),
            e1: (-dt_s / iso.t1_s).exp(),
            sin_th,
            cos_th,
        }
    }

    #[inline]
    fn evolve(&self, m: &mut [f64; 3], m0_abs: f64) {
        let mx = m[0] * self.cos_th - m[1] * self.sin_th;
        let my = m[0] * self.sin_th + m[1] * self.cos_th;
        m[0] = mx * self.e2;
        m[1] = my * self.e2;
        m[2] = m0_abs + (m[2] - m0_abs) * self.e1;
    }
}

/// Rotation by the flip angle about the transverse axis at azimuth `phi`:
/// `Rz(phi) Rx(alpha) Rz(-phi)`.
#[inline]
fn rotate_rf(m: &mut [f64; 3], sin_p: f64, cos_p: f64, sin_a: f64, cos_a: f64) {
    let x1 = m[0] * cos_p + m[1] * sin_p;
    let y1 = -m[0] * sin_p + m[1] * cos_p;
    let y2 = y1 * cos_a - m[2] * sin_a;
    let z2 = y1 * sin_a + m[2] * cos_a;
    m[0] = x1 * cos_p - y2 * sin_p;
    m[1] = x1 * sin_p + y2 * cos_p;
    m[2] = z2;
}
