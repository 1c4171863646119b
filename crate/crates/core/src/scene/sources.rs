use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::embed::derive_seed;
use crate::error::{Error, Result};

pub const SOURCE_RMS: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceRole {
    Target,
    Interferer,
    Farend,
    Noise,
}

impl SourceRole {
    fn name(self) -> &'static str {
        match self {
            SourceRole::Target => "target",
            SourceRole::Interferer => "interferer",
            SourceRole::Farend => "farend",
            SourceRole::Noise => "noise",
        }
    }
}

/// Supplies dry source signals to the scene renderer.
pub trait SourceProvider {
    fn source(&self, role: SourceRole, id: &str, len: usize, seed: u64) -> Result<Waveform>;
}

/// Synthetic speech-like and noise sources; see [`surrogate_source`].
#[derive(Clone, Copy, Debug, Default)]
pub struct SurrogateSources;

impl SourceProvider for SurrogateSources {
    fn source(&self, role: SourceRole, id: &str, len: usize, seed: u64) -> Result<Waveform> {
        if len == 0 {
            return Err(Error::InvalidArgument("source length must be positive".into()));
        }
        Ok(surrogate(role, id, len, seed))
    }
}

/// Fundamental frequency in Hz assigned to a speaker id, in [80, 300).
pub fn fundamental_for(id: &str) -> f64 {
    let h = derive_seed(&format!("f0/{id}"), 0);
    80.0 + 220.0 * (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic stand-in audio. Speech roles produce a harmonic complex at
/// the speaker's fundamental, shaped into raised-cosine syllables at 2 to 8
/// per second and grouped into words separated by silence. The noise role
/// produces low-pass shaped Gaussian noise. Output RMS is 0.1.
pub fn surrogate_source(role: SourceRole, id: &str, duration_secs: f64, seed: u64) -> Result<Waveform> {
    if !(duration_secs > 0.0 && duration_secs.is_finite()) {
        return Err(Error::InvalidArgument(format!("duration {duration_secs} s must be positive")));
    }
    let len = (duration_secs * SAMPLE_RATE as f64).round() as usize;
    SurrogateSources.source(role, id, len.max(1), seed)
}

fn surrogate(role: SourceRole, id: &str, len: usize, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&format!("source/{}/{id}", role.name()), seed));
    let mut x = match role {
        SourceRole::Noise => shaped_noise(id, len, &mut rng),
        _ => speech(id, len, &mut rng),
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= SOURCE_RMS / rms);
    }
    Waveform::from_vec_unchecked(x)
}

fn speech(id: &str, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let f0 = fundamental_for(id);
    let harmonics = ((3800.0 / f0) as usize).max(1);
    let mut out = vec![0.0; len];
    let mut phase = vec![0.0; harmonics];
    let mut pos = rng.gen_range(0..(0.3 * fs) as usize);
    while pos < len {
        let syllables = rng.gen_range(1..=3);
        let word_start = pos;
        for _ in 0..syllables {
            let rate: f64 = rng.gen_range(2.0..8.0);
            let syl = (fs / rate) as usize;
            // two formant-like emphasis regions per syllable
            let f1: f64 = rng.gen_range(300.0..900.0);
            let f2: f64 = rng.gen_range(900.0..2500.0);
            let gains: Vec<f64> = (1..=harmonics)
                .map(|k| {
                    let f = k as f64 * f0;
                    let bump = |c: f64| (-((f - c) / 150.0).powi(2)).exp();
                    (1.0 + 3.0 * bump(f1) + 2.0 * bump(f2)) / k as f64
                })
                .collect();
            let glide: f64 = rng.gen_range(-0.08..0.08);
            for i in 0..syl {
                let n = pos + i;
                if n >= len {
                    break;
                }
                let u = i as f64 / syl as f64;
                let env = 0.5 * (1.0 - (2.0 * PI * u).cos());
                let f = f0 * (1.0 + glide * (u - 0.5));
                let mut s = 0.0;
                for (k, (ph, g)) in phase.iter_mut().zip(&gains).enumerate() {
                    *ph += 2.0 * PI * f * (k + 1) as f64 / fs;
                    if *ph > 2.0 * PI {
                        *ph -= 2.0 * PI;
                    }
                    s += g * ph.sin();
                }
                out[n] = env * s;
            }
            pos += syl;
        }
        let word = pos - word_start;
        let pause = (rng.gen_range(0.35..0.8) * word as f64) as usize + (0.05 * fs) as usize;
        pos += pause;
    }
    out
}

fn shaped_noise(id: &str, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let h = derive_seed(&format!("noise-color/{id}"), 0);
    let pole = 0.5 + 0.45 * (h >> 11) as f64 / (1u64 << 53) as f64;
    let mut y = 0.0;
    (0..len)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            y = pole * y + w;
            y
        })
        .collect()
}
