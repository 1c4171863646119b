use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{join, visit1, visit1_mut, Params};

const LN_EPS: f64 = 1e-5;

/// Row-wise layer normalization with learned gain and offset.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, NormCache) {
        let width = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, istd) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / width;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / width;
            *istd = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * *istd);
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &NormCache, dy: ArrayView2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(&dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let dxhat = &dy * &self.gamma;
        let width = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.raw_dim());
        for t in 0..dy.nrows() {
            let g = dxhat.row(t);
            let xh = cache.xhat.row(t);
            let sum_g = g.sum();
            let sum_gx = g.dot(&xh);
            let istd = cache.inv_std[t];
            for k in 0..g.len() {
                dx[[t, k]] = istd / width * (width * g[k] - sum_g - xh[k] * sum_gx);
            }
        }
        dx
    }
}

impl Params for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit1(&join(prefix, "gamma"), &self.gamma, f);
        visit1(&join(prefix, "beta"), &self.beta, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit1_mut(&join(prefix, "gamma"), &mut self.gamma, f);
        visit1_mut(&join(prefix, "beta"), &mut self.beta, f);
    }
}

/// Parametric rectifier with a single shared slope.
#[derive(Clone, Debug, PartialEq)]
pub struct PRelu {
    pub slope: Array1<f64>,
}

impl PRelu {
    pub fn new() -> Self {
        Self {
            slope: Array1::from_elem(1, 0.25),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let a = self.slope[0];
        x.mapv(|v| if v > 0.0 { v } else { a * v })
    }

    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut PRelu) -> Array2<f64> {
        let a = self.slope[0];
        let mut da = 0.0;
        let mut dx = dy.to_owned();
        ndarray::Zip::from(&mut dx).and(&x).for_each(|d, &v| {
            if v <= 0.0 {
                da += *d * v;
                *d *= a;
            }
        });
        grad.slope[0] += da;
        dx
    }
}

impl Default for PRelu {
    fn default() -> Self {
        Self::new()
    }
}

impl Params for PRelu {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit1(&join(prefix, "slope"), &self.slope, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit1_mut(&join(prefix, "slope"), &mut self.slope, f);
    }
}
