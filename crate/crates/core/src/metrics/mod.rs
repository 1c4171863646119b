//! Reference-based measures: ERLE, TSOS, SI-SDR and mixing ratios.

mod report;

use serde::{Deserialize, Serialize};

use crate::dsp::frame_count;
use crate::error::{Error, Result};

pub use report::{evaluate, Enhancer, MetricsReport, ModelEnhancer, SampleMetrics};

/// Values in dB are clamped to this magnitude.
pub const DB_CAP: f64 = 80.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsParams {
    pub tsos_threshold_db: f64,
    pub activity_threshold_dbfs: f64,
    pub win: usize,
    pub hop: usize,
}

impl Default for MetricsParams {
    fn default() -> Self {
        Self {
            tsos_threshold_db: 10.0,
            activity_threshold_dbfs: -60.0,
            win: 320,
            hop: 160,
        }
    }
}

impl MetricsParams {
    pub fn validate(&self) -> Result<()> {
        if !self.tsos_threshold_db.is_finite() || !self.activity_threshold_dbfs.is_finite() {
            return Err(Error::Config("metric thresholds must be finite".into()));
        }
        if self.win == 0 || self.hop == 0 || self.hop > self.win {
            return Err(Error::Config(format!("invalid metric frame {}/{}", self.win, self.hop)));
        }
        Ok(())
    }

    /// Amplitude corresponding to the activity threshold.
    pub fn activity_amplitude(&self) -> f64 {
        10f64.powf(self.activity_threshold_dbfs / 20.0)
    }
}

fn db(ratio: f64) -> f64 {
    if ratio.is_nan() {
        return f64::NAN;
    }
    (10.0 * ratio.log10()).clamp(-DB_CAP, DB_CAP)
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Mean square of each frame on the metric grid.
pub fn frame_powers(x: &[f64], win: usize, hop: usize) -> Vec<f64> {
    (0..frame_count(x.len(), win, hop))
        .map(|t| x[t * hop..t * hop + win].iter().map(|v| v * v).sum::<f64>() / win as f64)
        .collect()
}

/// Echo return loss enhancement over the flagged frames.
pub fn erle(mic: &[f64], enhanced: &[f64], fst_mask: &[bool], params: &MetricsParams) -> Result<f64> {
    check_len(mic, enhanced)?;
    let frames = frame_count(mic.len(), params.win, params.hop);
    if fst_mask.len() != frames {
        return Err(Error::LengthMismatch(frames, fst_mask.len()));
    }
    if !fst_mask.iter().any(|&f| f) {
        return Err(Error::InvalidArgument("no far-end single-talk frames".into()));
    }
    let mut covered = vec![false; mic.len()];
    for (t, _) in fst_mask.iter().enumerate().filter(|(_, &f)| f) {
        covered[t * params.hop..t * params.hop + params.win].fill(true);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for ((m, e), _) in mic.iter().zip(enhanced).zip(&covered).filter(|(_, &c)| c) {
        num += m * m;
        den += e * e;
    }
    if num == 0.0 {
        return Err(Error::ZeroEnergy("microphone on far-end single-talk frames"));
    }
    Ok(if den == 0.0 { DB_CAP } else { db(num / den) })
}

/// Fraction of target-active frames attenuated by at least the TSOS
/// threshold.
pub fn tsos(target_ref: &[f64], enhanced: &[f64], params: &MetricsParams) -> Result<f64> {
    check_len(target_ref, enhanced)?;
    let floor = params.activity_amplitude().powi(2);
    let limit = 10f64.powf(params.tsos_threshold_db / 10.0);
    let reference = frame_powers(target_ref, params.win, params.hop);
    let output = frame_powers(enhanced, params.win, params.hop);
    let mut active = 0usize;
    let mut suppressed = 0usize;
    for (r, e) in reference.iter().zip(&output) {
        if *r > floor {
            active += 1;
            if *e == 0.0 || r / e >= limit {
                suppressed += 1;
            }
        }
    }
    if active == 0 {
        return Err(Error::InvalidArgument("reference has no active frames".into()));
    }
    Ok(suppressed as f64 / active as f64)
}

/// Scale-invariant signal-to-distortion ratio, clamped to `±DB_CAP`.
pub fn si_sdr(reference: &[f64], est: &[f64]) -> Result<f64> {
    check_len(reference, est)?;
    let rr: f64 = reference.iter().map(|r| r * r).sum();
    if rr == 0.0 {
        return Err(Error::ZeroEnergy("reference"));
    }
    let alpha = reference.iter().zip(est).map(|(r, e)| r * e).sum::<f64>() / rr;
    let (mut target, mut residual) = (0.0, 0.0);
    for (r, e) in reference.iter().zip(est) {
        let t = alpha * r;
        target += t * t;
        residual += (e - t) * (e - t);
    }
    Ok(match (target == 0.0, residual == 0.0) {
        (_, true) => DB_CAP,
        (true, false) => -DB_CAP,
        _ => db(target / residual),
    })
}

/// Samples where `|x|` reaches the activity amplitude.
pub fn active_samples(x: &[f64], amplitude: f64) -> Vec<bool> {
    x.iter().map(|v| v.abs() >= amplitude).collect()
}

/// Energy ratio in dB of `reference` to `distractor`, both summed over the
/// samples where the reference is active.
pub fn achieved_ratio(reference: &[f64], distractor: &[f64], activity_threshold_dbfs: f64) -> Result<f64> {
    check_len(reference, distractor)?;
    let (r, d) = active_energies(reference, distractor, activity_threshold_dbfs);
    if r == 0.0 {
        return Err(Error::ZeroEnergy("reference"));
    }
    if d == 0.0 {
        return Err(Error::ZeroEnergy("distractor"));
    }
    Ok(10.0 * (r / d).log10())
}

pub(crate) fn active_energies(reference: &[f64], distractor: &[f64], activity_threshold_dbfs: f64) -> (f64, f64) {
    let amp = 10f64.powf(activity_threshold_dbfs / 20.0);
    let (mut r, mut d) = (0.0, 0.0);
    for (x, y) in reference.iter().zip(distractor) {
        if x.abs() >= amp {
            r += x * x;
            d += y * y;
        }
    }
    (r, d)
}

/// Frames where the echo stem is active and the target stem is silent.
pub fn fst_frames(target: &[f64], echo: &[f64], params: &MetricsParams) -> Result<Vec<bool>> {
    check_len(target, echo)?;
    let floor = params.activity_amplitude().powi(2);
    let t = frame_powers(target, params.win, params.hop);
    let e = frame_powers(echo, params.win, params.hop);
    Ok(t.iter().zip(&e).map(|(t, e)| *t <= floor && *e > floor).collect())
}
