use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{join, round32, sigmoid, uniform, visit1, visit1_mut, visit2, visit2_mut, Params};

/// Affine map `y = x W^T + b` applied to every row.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weight = uniform(outputs, inputs, bound, rng);
        let bias = bias.then(|| Array1::from_shape_simple_fn(outputs, || round32(rng.gen_range(-bound..bound))));
        Self { weight, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        if let Some(b) = &self.bias {
            y += b;
        }
        y
    }

    /// Accumulates parameter gradients only.
    pub fn accumulate(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Linear) {
        grad.weight += &dy.t().dot(&x);
        if let Some(gb) = &mut grad.bias {
            *gb += &dy.sum_axis(Axis(0));
        }
    }

    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Linear) -> Array2<f64> {
        self.accumulate(x, dy, grad);
        dy.dot(&self.weight)
    }
}

impl Params for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit2(&join(prefix, "weight"), &self.weight, f);
        if let Some(b) = &self.bias {
            visit1(&join(prefix, "bias"), b, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit2_mut(&join(prefix, "weight"), &mut self.weight, f);
        if let Some(b) = &mut self.bias {
            visit1_mut(&join(prefix, "bias"), b, f);
        }
    }
}

/// Learnable analysis filterbank: bias-free affine map from raw frames to
/// nonnegative features. Zero input therefore maps to zero features.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub linear: Linear,
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    pub frames: Array2<f64>,
    pub features: Array2<f64>,
}

impl Encoder {
    pub fn new(win: usize, filters: usize, rng: &mut impl Rng) -> Self {
        Self {
            linear: Linear::new(win, filters, false, rng),
        }
    }

    /// Filters in sign-paired order `+b0, -b0, +b1, -b1, ...` over the
    /// orthonormal real Fourier basis of the frame, lowest frequency first.
    /// Each pair passes `b·x` through the rectifier without loss. Filters
    /// beyond `2 * win` are random.
    pub fn paired_fourier(win: usize, filters: usize, rng: &mut impl Rng) -> Self {
        let mut linear = Linear::new(win, filters, false, rng);
        let basis = fourier_basis(win, (filters / 2).min(win));
        for (j, b) in basis.iter().enumerate() {
            for n in 0..win {
                linear.weight[[2 * j, n]] = round32(b[n]);
                linear.weight[[2 * j + 1, n]] = -round32(b[n]);
            }
        }
        Self { linear }
    }

    pub fn filters(&self) -> usize {
        self.linear.outputs()
    }

    pub fn forward(&self, frames: Array2<f64>) -> (Array2<f64>, EncoderCache) {
        let features = self.linear.forward(frames.view()).mapv_into(|v| v.max(0.0));
        let cache = EncoderCache {
            frames,
            features: features.clone(),
        };
        (features, cache)
    }

    /// Frames are never trainable, so only the filter gradient is produced.
    pub fn backward(&self, cache: &EncoderCache, dfeat: ArrayView2<f64>, grad: &mut Encoder) {
        let mut dpre = dfeat.to_owned();
        dpre.zip_mut_with(&cache.features, |d, &f| {
            if f <= 0.0 {
                *d = 0.0
            }
        });
        self.linear.accumulate(cache.frames.view(), dpre.view(), &mut grad.linear);
    }
}

impl Params for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.linear.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.linear.visit_mut(prefix, f)
    }
}

/// Learnable synthesis filterbank, bias-free. Its output frames are
/// overlap-added by the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub linear: Linear,
}

impl Decoder {
    pub fn new(filters: usize, win: usize, rng: &mut impl Rng) -> Self {
        Self {
            linear: Linear::new(filters, win, false, rng),
        }
    }

    /// Inverse of [`Encoder::paired_fourier`] followed by a synthesis window
    /// whose overlap-add at `hop` is one, so that a unit mask reproduces the
    /// input projected onto the encoder's span. Columns of unpaired filters
    /// are zero.
    pub fn paired_fourier(filters: usize, win: usize, hop: usize) -> Self {
        let mut weight = Array2::zeros((win, filters));
        let window: Vec<f64> = if hop == win {
            vec![1.0; win]
        } else {
            let gain = 2.0 * hop as f64 / win as f64;
            (0..win)
                .map(|n| gain * 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / win as f64).cos()))
                .collect()
        };
        let basis = fourier_basis(win, (filters / 2).min(win));
        for (j, b) in basis.iter().enumerate() {
            for n in 0..win {
                let v = round32(window[n] * b[n]);
                weight[[n, 2 * j]] = v;
                weight[[n, 2 * j + 1]] = -v;
            }
        }
        Self {
            linear: Linear { weight, bias: None },
        }
    }

    pub fn forward(&self, features: ArrayView2<f64>) -> Array2<f64> {
        self.linear.forward(features)
    }

    pub fn backward(
        &self,
        features: ArrayView2<f64>,
        dframes: ArrayView2<f64>,
        grad: &mut Decoder,
    ) -> Array2<f64> {
        self.linear.backward(features, dframes, &mut grad.linear)
    }
}

impl Params for Decoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.linear.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.linear.visit_mut(prefix, f)
    }
}

/// The first `count` vectors of the orthonormal real Fourier basis of
/// length `win`: DC, then cosine and sine of each bin in turn.
fn fourier_basis(win: usize, count: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut k = 0;
    while out.len() < count {
        let w = 2.0 * std::f64::consts::PI * k as f64 / win as f64;
        let edge = k == 0 || 2 * k == win;
        let norm = if edge { (1.0 / win as f64).sqrt() } else { (2.0 / win as f64).sqrt() };
        out.push((0..win).map(|n| norm * (w * n as f64).cos()).collect());
        if !edge && out.len() < count {
            out.push((0..win).map(|n| norm * (w * n as f64).sin()).collect());
        }
        k += 1;
    }
    out
}

/// Affine layer followed by a sigmoid: a mask in (0, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct MaskHead {
    pub linear: Linear,
}

#[derive(Clone, Debug)]
pub struct MaskCache {
    pub input: Array2<f64>,
    pub mask: Array2<f64>,
}

impl MaskHead {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            linear: Linear::new(inputs, outputs, true, rng),
        }
    }

    pub fn forward(&self, x: Array2<f64>) -> (Array2<f64>, MaskCache) {
        let mask = self.linear.forward(x.view()).mapv_into(sigmoid);
        let cache = MaskCache {
            input: x,
            mask: mask.clone(),
        };
        (mask, cache)
    }

    pub fn backward(&self, cache: &MaskCache, dmask: ArrayView2<f64>, grad: &mut MaskHead) -> Array2<f64> {
        let mut dpre = dmask.to_owned();
        dpre.zip_mut_with(&cache.mask, |d, &m| *d *= m * (1.0 - m));
        self.linear.backward(cache.input.view(), dpre.view(), &mut grad.linear)
    }
}

impl Params for MaskHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.linear.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.linear.visit_mut(prefix, f)
    }
}
