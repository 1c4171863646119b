use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{frame_signal, RealDft, StftParams};
use crate::error::{Error, Result};

/// Keeps `|X|` differentiable at zero.
const MAG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Power-law exponent.
    pub p: f64,
    /// Weight of the magnitude term; the complex term gets `1 - alpha`.
    pub alpha: f64,
    pub stft: StftParams,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            p: 0.3,
            alpha: 0.5,
            stft: StftParams::default(),
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::Config(format!("loss exponent {} outside (0, 1]", self.p)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("loss alpha {} outside [0, 1]", self.alpha)));
        }
        self.stft.validate()
    }
}

/// Power-law compressed phase-aware loss between an estimate and a
/// reference.
pub fn plcpa_loss(est: &[f64], reference: &[f64], lp: &LossParams) -> Result<f64> {
    Ok(plcpa(est, reference, lp, false)?.0)
}

/// Loss and its gradient with respect to `est`.
pub fn plcpa_loss_grad(est: &[f64], reference: &[f64], lp: &LossParams) -> Result<(f64, Vec<f64>)> {
    plcpa(est, reference, lp, true)
}

fn plcpa(est: &[f64], reference: &[f64], lp: &LossParams, want_grad: bool) -> Result<(f64, Vec<f64>)> {
    lp.validate()?;
    if est.len() != reference.len() {
        return Err(Error::LengthMismatch(est.len(), reference.len()));
    }
    let StftParams {
        win_length: win,
        hop_length: hop,
        fft_size,
    } = lp.stft;
    let est_frames = frame_signal(est, win, hop)?;
    let ref_frames = frame_signal(reference, win, hop)?;
    let dft = RealDft::new(fft_size);
    let window = lp.stft.window();
    let frames = est_frames.nrows();
    let count = (frames * dft.bins()) as f64;
    let (p, alpha) = (lp.p, lp.alpha);

    let spectrum = |row: ndarray::ArrayView1<f64>| {
        let buf: Vec<f64> = row.iter().zip(&window).map(|(x, w)| x * w).collect();
        dft.forward(&buf)
    };

    let mut loss = 0.0;
    let mut grad = if want_grad { vec![0.0; est.len()] } else { Vec::new() };
    let mut gbins = vec![Complex64::new(0.0, 0.0); dft.bins()];
    for t in 0..frames {
        let s = spectrum(ref_frames.row(t));
        let e = spectrum(est_frames.row(t));
        for (k, (s, e)) in s.iter().zip(&e).enumerate() {
            let rs = (s.norm_sqr() + MAG_EPS).sqrt();
            let re = (e.norm_sqr() + MAG_EPS).sqrt();
            let (ms, me) = (rs.powf(p), re.powf(p));
            let cs = s * rs.powf(p - 1.0);
            let ce = e * re.powf(p - 1.0);
            let dm = me - ms;
            let dc = ce - cs;
            loss += alpha * dm * dm + (1.0 - alpha) * dc.norm_sqr();
            if want_grad {
                // magnitude term
                let gm = alpha * 2.0 * dm / count * p * re.powf(p - 2.0);
                // complex term: J^T g with J = r^(p-1) I + (p-1) r^(p-3) x x^T
                let gc = dc * ((1.0 - alpha) * 2.0 / count);
                let xg = e.re * gc.re + e.im * gc.im;
                let a = re.powf(p - 1.0);
                let b = (p - 1.0) * re.powf(p - 3.0) * xg;
                gbins[k] = Complex64::new(
                    gm * e.re + a * gc.re + b * e.re,
                    gm * e.im + a * gc.im + b * e.im,
                );
            }
        }
        if want_grad {
            let gframe = dft.forward_adjoint(&gbins);
            for n in 0..win {
                grad[t * hop + n] += gframe[n] * window[n];
            }
        }
    }
    Ok((loss / count, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identical_signals_have_zero_loss() {
        let x = noise(800, 1);
        assert_eq!(plcpa_loss(&x, &x, &LossParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn sign_flip_only_costs_phase() {
        let x = noise(800, 2);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let mag_only = LossParams {
            alpha: 1.0,
            ..LossParams::default()
        };
        let cplx_only = LossParams {
            alpha: 0.0,
            ..LossParams::default()
        };
        assert!(plcpa_loss(&neg, &x, &mag_only).unwrap() < 1e-20);
        assert!(plcpa_loss(&neg, &x, &cplx_only).unwrap() > 0.1);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let lp = LossParams::default();
        assert!(plcpa_loss(&noise(480, 1), &noise(640, 1), &lp).is_err());
    }
}
