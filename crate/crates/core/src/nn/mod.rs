//! Differentiable layers with hand-written backward passes.
//!
//! Every layer works on `frames x features` matrices. `forward` returns the
//! output together with whatever the backward pass needs; `backward` takes
//! the upstream gradient, accumulates parameter gradients into a
//! zero-initialized twin of the layer and returns the input gradient.

mod align;
mod block;
mod linear;
mod lstm;
mod norm;

use ndarray::{Array1, Array2};
use rand::Rng;

pub use align::{AlignBlock, AlignCache, AlignState};
pub use block::{BlockCache, ResidualBlock, ResidualCache, TemporalBlock};
pub use linear::{Decoder, Encoder, EncoderCache, Linear, MaskHead, MaskCache};
pub use lstm::{Lstm, LstmCache, LstmState};
pub use norm::{LayerNorm, NormCache, PRelu};

/// Walks every named parameter array of a layer or network.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, v| n += v.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, v| out.extend_from_slice(v));
        out
    }

    /// Inverse of [`Params::flatten`]. Panics if `values` has the wrong length.
    fn assign(&mut self, values: &[f64]) {
        let mut offset = 0;
        self.visit_mut("", &mut |_, _, v| {
            v.copy_from_slice(&values[offset..offset + v.len()]);
            offset += v.len();
        });
        assert_eq!(offset, values.len(), "parameter vector length");
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, _, v| v.fill(0.0));
        z
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit2(
    name: &str,
    a: &Array2<f64>,
    f: &mut dyn FnMut(&str, &[usize], &[f64]),
) {
    f(name, a.shape(), a.as_slice().expect("standard layout"));
}

pub(crate) fn visit2_mut(
    name: &str,
    a: &mut Array2<f64>,
    f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
) {
    let shape = a.shape().to_vec();
    f(name, &shape, a.as_slice_mut().expect("standard layout"));
}

pub(crate) fn visit1(
    name: &str,
    a: &Array1<f64>,
    f: &mut dyn FnMut(&str, &[usize], &[f64]),
) {
    f(name, a.shape(), a.as_slice().expect("standard layout"));
}

pub(crate) fn visit1_mut(
    name: &str,
    a: &mut Array1<f64>,
    f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
) {
    let shape = a.shape().to_vec();
    f(name, &shape, a.as_slice_mut().expect("standard layout"));
}

/// Parameters are kept exactly representable in 32 bits so that checkpoints
/// round-trip bit-exactly.
#[inline]
pub fn round32(x: f64) -> f64 {
    x as f32 as f64
}

pub(crate) fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || round32(rng.gen_range(-bound..bound)))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Horizontal concatenation of row-aligned blocks.
pub fn hcat(parts: &[ndarray::ArrayView2<f64>]) -> Array2<f64> {
    ndarray::concatenate(ndarray::Axis(1), parts).expect("row counts agree")
}

/// Splits the columns of `m` into consecutive blocks of the given widths.
pub fn hsplit(m: &Array2<f64>, widths: &[usize]) -> Vec<Array2<f64>> {
    let mut start = 0;
    widths
        .iter()
        .map(|&w| {
            let block = m.slice(ndarray::s![.., start..start + w]).to_owned();
            start += w;
            block
        })
        .collect()
}
