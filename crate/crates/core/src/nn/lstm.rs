use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{join, round32, sigmoid, uniform, visit1, visit1_mut, visit2, visit2_mut, Params};

/// Single-layer LSTM. Gate rows are ordered input, forget, cell, output.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Array1::zeros(hidden),
            c: Array1::zeros(hidden),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LstmCache {
    x: Array2<f64>,
    gates: Array2<f64>,
    cells: Array2<f64>,
    hidden: Array2<f64>,
    h0: Array1<f64>,
    c0: Array1<f64>,
}

impl Lstm {
    pub fn new(inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: uniform(4 * hidden, inputs, bound, rng),
            w_hh: uniform(4 * hidden, hidden, bound, rng),
            bias: Array1::from_shape_simple_fn(4 * hidden, || round32(rng.gen_range(-bound..bound))),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w_ih.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>, state: &mut LstmState) -> (Array2<f64>, LstmCache) {
        let hsz = self.hidden();
        let steps = x.nrows();
        let mut pre = x.dot(&self.w_ih.t());
        pre += &self.bias;
        let mut gates = Array2::zeros((steps, 4 * hsz));
        let mut cells = Array2::zeros((steps, hsz));
        let mut hidden = Array2::zeros((steps, hsz));
        let (h0, c0) = (state.h.clone(), state.c.clone());
        for t in 0..steps {
            let mut g = pre.row(t).to_owned();
            g += &self.w_hh.dot(&state.h);
            for k in 0..hsz {
                let i = sigmoid(g[k]);
                let f = sigmoid(g[hsz + k]);
                let c_in = g[2 * hsz + k].tanh();
                let o = sigmoid(g[3 * hsz + k]);
                let c = f * state.c[k] + i * c_in;
                let h = o * c.tanh();
                state.c[k] = c;
                state.h[k] = h;
                gates[[t, k]] = i;
                gates[[t, hsz + k]] = f;
                gates[[t, 2 * hsz + k]] = c_in;
                gates[[t, 3 * hsz + k]] = o;
                cells[[t, k]] = c;
                hidden[[t, k]] = h;
            }
        }
        let cache = LstmCache {
            x: x.to_owned(),
            gates,
            cells,
            hidden: hidden.clone(),
            h0,
            c0,
        };
        (hidden, cache)
    }

    /// Backpropagation through time over the cached sequence.
    pub fn backward(&self, cache: &LstmCache, dh: ArrayView2<f64>, grad: &mut Lstm) -> Array2<f64> {
        let hsz = self.hidden();
        let steps = dh.nrows();
        let mut dgates = Array2::zeros((steps, 4 * hsz));
        let mut dh_next = Array1::<f64>::zeros(hsz);
        let mut dc_next = Array1::<f64>::zeros(hsz);
        for t in (0..steps).rev() {
            let gates = cache.gates.row(t);
            let c_prev = if t > 0 { cache.cells.row(t - 1) } else { cache.c0.view() };
            for k in 0..hsz {
                let (i, f, c_in, o) = (gates[k], gates[hsz + k], gates[2 * hsz + k], gates[3 * hsz + k]);
                let tc = cache.cells[[t, k]].tanh();
                let dht = dh[[t, k]] + dh_next[k];
                let dc = dc_next[k] + dht * o * (1.0 - tc * tc);
                dgates[[t, k]] = dc * c_in * i * (1.0 - i);
                dgates[[t, hsz + k]] = dc * c_prev[k] * f * (1.0 - f);
                dgates[[t, 2 * hsz + k]] = dc * i * (1.0 - c_in * c_in);
                dgates[[t, 3 * hsz + k]] = dht * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            dh_next = self.w_hh.t().dot(&dgates.row(t));
        }
        let mut h_prev = Array2::zeros((steps, hsz));
        if steps > 0 {
            h_prev.row_mut(0).assign(&cache.h0);
            h_prev
                .slice_mut(s![1.., ..])
                .assign(&cache.hidden.slice(s![..steps - 1, ..]));
        }
        grad.w_hh += &dgates.t().dot(&h_prev);
        grad.w_ih += &dgates.t().dot(&cache.x);
        grad.bias += &dgates.sum_axis(Axis(0));
        dgates.dot(&self.w_ih)
    }
}

impl Params for Lstm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit2(&join(prefix, "w_ih"), &self.w_ih, f);
        visit2(&join(prefix, "w_hh"), &self.w_hh, f);
        visit1(&join(prefix, "bias"), &self.bias, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit2_mut(&join(prefix, "w_ih"), &mut self.w_ih, f);
        visit2_mut(&join(prefix, "w_hh"), &mut self.w_hh, f);
        visit1_mut(&join(prefix, "bias"), &mut self.bias, f);
    }
}
