//! Framing, STFT/ISTFT and the other signal primitives shared by the
//! simulator, the models, the loss and the metrics.
//!
//! Framing is strictly causal: the first frame starts at sample 0, there is
//! no left padding and a trailing partial frame is dropped. Frame `t` covers
//! samples `[t * hop, t * hop + win)`.

mod fft;
pub mod wav;

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

pub use fft::{fft_convolve, RealDft};
pub use wav::{read_wav, write_wav, WavFormat};

/// The only sample rate used anywhere in the system.
pub const SAMPLE_RATE: u32 = 16_000;

/// A mono signal at [`SAMPLE_RATE`].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    /// Wraps `samples`, rejecting NaN and infinities.
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform samples".into()));
        }
        Ok(Self { samples })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub(crate) fn from_vec_unchecked(samples: Vec<f64>) -> Self {
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self { samples }
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.energy() / self.samples.len() as f64).sqrt()
    }

    pub fn is_silent(&self) -> bool {
        self.samples.iter().all(|&s| s == 0.0)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self::from_vec_unchecked(self.samples.iter().map(|s| s * gain).collect())
    }
}

impl AsRef<[f64]> for Waveform {
    fn as_ref(&self) -> &[f64] {
        &self.samples
    }
}

/// STFT geometry. The analysis and synthesis windows are both periodic
/// square-root Hann, so their product is a Hann window which overlap-adds to
/// a constant at `hop = win / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StftParams {
    pub win_length: usize,
    pub hop_length: usize,
    pub fft_size: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            win_length: 320,
            hop_length: 160,
            fft_size: 320,
        }
    }
}

impl StftParams {
    pub fn new(win_length: usize, hop_length: usize, fft_size: usize) -> Result<Self> {
        let params = Self {
            win_length,
            hop_length,
            fft_size,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.win_length == 0 || self.hop_length == 0 {
            return Err(Error::InvalidArgument("window and hop must be positive".into()));
        }
        if self.hop_length > self.win_length {
            return Err(Error::InvalidArgument(format!(
                "hop {} exceeds window {}",
                self.hop_length, self.win_length
            )));
        }
        if self.fft_size < self.win_length {
            return Err(Error::InvalidArgument(format!(
                "fft size {} smaller than window {}",
                self.fft_size, self.win_length
            )));
        }
        let gain = self.cola_gain();
        let w = self.window();
        for n in 0..self.hop_length {
            let s: f64 = (n..self.win_length)
                .step_by(self.hop_length)
                .map(|i| w[i] * w[i])
                .sum();
            if ((s - gain) / gain).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "window/hop pair {}/{} violates constant overlap-add",
                    self.win_length, self.hop_length
                )));
            }
        }
        Ok(())
    }

    /// Periodic square-root Hann window of length `win_length`.
    pub fn window(&self) -> Vec<f64> {
        let n = self.win_length as f64;
        (0..self.win_length)
            .map(|i| (std::f64::consts::PI * i as f64 / n).sin())
            .collect()
    }

    /// Overlap-added value of the squared window; 1 for `hop = win / 2`.
    pub(crate) fn cola_gain(&self) -> f64 {
        let w = self.window();
        (0..self.win_length)
            .step_by(self.hop_length)
            .map(|i| w[i] * w[i])
            .sum()
    }

    /// Number of complete frames in a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        frame_count(len, self.win_length, self.hop_length)
    }
}

pub fn frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len < win {
        0
    } else {
        (len - win) / hop + 1
    }
}

/// Complex STFT, `frames x bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub values: Array2<Complex64>,
    pub params: StftParams,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.values.mapv(|c| c.norm())
    }
}

/// Splits `samples` into overlapping rows `[t * hop, t * hop + win)`.
pub fn frame_signal(samples: &[f64], win: usize, hop: usize) -> Result<Array2<f64>> {
    if win == 0 || hop == 0 {
        return Err(Error::InvalidArgument("window and hop must be positive".into()));
    }
    if samples.len() < win {
        return Err(Error::TooShort {
            len: samples.len(),
            min: win,
        });
    }
    let frames = frame_count(samples.len(), win, hop);
    Ok(Array2::from_shape_fn((frames, win), |(t, n)| {
        samples[t * hop + n]
    }))
}

/// Overlap-adds rows of `frames` at stride `hop` into a buffer of `len`
/// samples. Samples beyond the last frame stay zero.
pub fn overlap_add(frames: &Array2<f64>, hop: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (t, row) in frames.rows().into_iter().enumerate() {
        let start = t * hop;
        for (n, &v) in row.iter().enumerate() {
            if let Some(o) = out.get_mut(start + n) {
                *o += v;
            }
        }
    }
    out
}

pub fn stft(wave: &Waveform, params: &StftParams) -> Result<ComplexSpectrogram> {
    params.validate()?;
    let frames = frame_signal(wave.samples(), params.win_length, params.hop_length)?;
    let dft = RealDft::new(params.fft_size);
    let window = params.window();
    let mut values = Array2::zeros((frames.nrows(), params.bins()));
    let mut buf = vec![0.0; params.fft_size];
    for (t, frame) in frames.rows().into_iter().enumerate() {
        buf.fill(0.0);
        for (n, (&x, &w)) in frame.iter().zip(&window).enumerate() {
            buf[n] = x * w;
        }
        let spec = dft.forward(&buf);
        values.row_mut(t).iter_mut().zip(spec).for_each(|(v, s)| *v = s);
    }
    Ok(ComplexSpectrogram {
        values,
        params: *params,
    })
}

/// Inverse STFT by windowed overlap-add. The output has
/// `(frames - 1) * hop + win` samples.
pub fn istft(spec: &ComplexSpectrogram, params: &StftParams) -> Result<Waveform> {
    params.validate()?;
    if spec.params != *params || spec.bins() != params.bins() {
        return Err(Error::InvalidArgument(format!(
            "spectrogram was built with {:?}, asked to invert with {:?}",
            spec.params, params
        )));
    }
    let frames = spec.frames();
    if frames == 0 {
        return Ok(Waveform::zeros(0));
    }
    let dft = RealDft::new(params.fft_size);
    let window = params.window();
    let norm = 1.0 / params.cola_gain();
    let len = (frames - 1) * params.hop_length + params.win_length;
    let mut out = vec![0.0; len];
    for (t, row) in spec.values.rows().into_iter().enumerate() {
        let bins: Vec<Complex64> = row.to_vec();
        let frame = dft.inverse(&bins);
        let start = t * params.hop_length;
        for n in 0..params.win_length {
            out[start + n] += frame[n] * window[n] * norm;
        }
    }
    Waveform::new(out)
}

/// Elementwise `magnitude^p`.
pub fn power_law_compress(magnitude: &Array2<f64>, p: f64) -> Result<Array2<f64>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!("exponent {p} outside (0, 1]")));
    }
    if magnitude.iter().any(|&m| m < 0.0 || m.is_nan()) {
        return Err(Error::InvalidArgument("negative magnitude".into()));
    }
    Ok(magnitude.mapv(|m| m.powf(p)))
}
