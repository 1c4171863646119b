use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::SAMPLE_RATE;
use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Probability that a tail tap is nonzero.
const TAIL_DENSITY: f64 = 0.1;
/// Largest tail magnitude relative to the unit direct path.
const TAIL_GAIN: f64 = 0.3;

/// Synthetic room impulse response: a unit direct path followed by a sparse
/// noise tail whose amplitude falls by 60 dB over `rt60`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub direct_delay: usize,
    pub rt60: f64,
}

impl Rir {
    /// The first `ms` milliseconds after (and including) the direct path.
    pub fn early(&self, ms: f64) -> Vec<f64> {
        let keep = self.direct_delay + (ms * 1e-3 * SAMPLE_RATE as f64).round() as usize;
        self.taps[..keep.min(self.taps.len())].to_vec()
    }
}

pub fn direct_delay(distance: f64) -> usize {
    (distance / SPEED_OF_SOUND * SAMPLE_RATE as f64).round() as usize
}

pub fn synth_rir(seed: u64, rt60: f64, distance: f64) -> Result<Rir> {
    if !(0.1..=1.0).contains(&rt60) {
        return Err(Error::InvalidArgument(format!("rt60 {rt60} s outside [0.1, 1.0]")));
    }
    if !(distance >= 0.0 && distance.is_finite()) {
        return Err(Error::InvalidArgument(format!("distance {distance} m must be >= 0")));
    }
    let fs = SAMPLE_RATE as f64;
    let delay = direct_delay(distance);
    let tail = (rt60 * fs).ceil() as usize;
    let mut taps = vec![0.0; delay + tail];
    taps[delay] = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = 1000f64.ln() / (rt60 * fs);
    for (i, tap) in taps[delay + 1..].iter_mut().enumerate() {
        let on = rng.gen_bool(TAIL_DENSITY);
        let v: f64 = rng.gen_range(-1.0..1.0);
        if on {
            *tap = TAIL_GAIN * v * (-rate * (i + 1) as f64).exp();
        }
    }
    Ok(Rir {
        taps,
        direct_delay: delay,
        rt60,
    })
}
