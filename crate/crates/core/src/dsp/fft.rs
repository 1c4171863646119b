use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Real-input DFT of a fixed size together with the adjoints needed to
/// backpropagate through `forward` and `inverse`.
///
/// `forward` returns the `n / 2 + 1` non-negative-frequency bins of
/// `X_k = sum_n x_n e^{-2 pi i k n / N}`; `inverse` is its normalized inverse
/// that ignores the imaginary parts of the DC and Nyquist bins.
#[derive(Clone)]
pub struct RealDft {
    size: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RealDft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealDft").field("size", &self.size).finish()
    }
}

impl RealDft {
    pub fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            size,
            fwd: planner.plan_fft_forward(size),
            inv: planner.plan_fft_inverse(size),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bins(&self) -> usize {
        self.size / 2 + 1
    }

    /// `frame` shorter than the transform size is zero-padded.
    pub fn forward(&self, frame: &[f64]) -> Vec<Complex64> {
        debug_assert!(frame.len() <= self.size);
        let mut buf: Vec<Complex64> = (0..self.size)
            .map(|n| Complex64::new(frame.get(n).copied().unwrap_or(0.0), 0.0))
            .collect();
        self.fwd.process(&mut buf);
        buf.truncate(self.bins());
        buf
    }

    pub fn inverse(&self, bins: &[Complex64]) -> Vec<f64> {
        let n = self.size;
        let mut buf = self.hermitian(bins);
        self.inv.process(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    }

    /// Gradient of a scalar with respect to the input of `forward`, given its
    /// gradient with respect to the real and imaginary parts of every bin
    /// (packed as `re + i im`).
    pub fn forward_adjoint(&self, grad_bins: &[Complex64]) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.size];
        buf[..grad_bins.len()].copy_from_slice(grad_bins);
        self.inv.process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    /// Gradient with respect to the bins passed to `inverse`, given the
    /// gradient with respect to its output samples.
    pub fn inverse_adjoint(&self, grad_frame: &[f64]) -> Vec<Complex64> {
        let n = self.size;
        let mut out = self.forward(grad_frame);
        let last = out.len() - 1;
        for (k, v) in out.iter_mut().enumerate() {
            let edge = k == 0 || (n.is_multiple_of(2) && k == last);
            let scale = if edge { 1.0 } else { 2.0 } / n as f64;
            *v *= scale;
            if edge {
                v.im = 0.0;
            }
        }
        out
    }

    fn hermitian(&self, bins: &[Complex64]) -> Vec<Complex64> {
        let n = self.size;
        let half = self.bins();
        debug_assert_eq!(bins.len(), half);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..half {
            let mut v = bins[k];
            if k == 0 || (n.is_multiple_of(2) && k == half - 1) {
                v.im = 0.0;
            }
            buf[k] = v;
            if k > 0 && k < n - k {
                buf[n - k] = v.conj();
            }
        }
        buf
    }
}

/// Full linear convolution of `x` with `h`, truncated to `x.len()` samples.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let full = x.len() + h.len() - 1;
    let size = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |v: &[f64]| -> Vec<Complex64> {
        let mut b = vec![Complex64::new(0.0, 0.0); size];
        for (d, &s) in b.iter_mut().zip(v) {
            d.re = s;
        }
        b
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a.iter().take(x.len()).map(|c| c.re / size as f64).collect()
}
