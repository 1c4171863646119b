use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{join, uniform, visit2, visit2_mut, Params};

/// Causal source-target attention over the most recent `window` far-end
/// frames. Slot `j` holds the far-end frame `j` hops in the past, so slot 0 is
/// the current frame. Frames before the start of the stream are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignBlock {
    pub w_query: Array2<f64>,
    pub w_key: Array2<f64>,
    pub window: usize,
}

/// Far-end history carried between chunks: the last `window - 1` feature
/// frames and their keys, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignState {
    pub feats: Array2<f64>,
    pub keys: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct AlignCache {
    mic: Array2<f64>,
    far: Array2<f64>,
    query: Array2<f64>,
    feats: Array2<f64>,
    keys: Array2<f64>,
    pub weights: Array2<f64>,
}

impl AlignBlock {
    pub fn new(mic_dim: usize, far_dim: usize, att_dim: usize, window: usize, rng: &mut impl Rng) -> Self {
        assert!(window >= 1, "alignment window must hold at least one frame");
        Self {
            w_query: uniform(att_dim, mic_dim, 1.0 / (mic_dim as f64).sqrt(), rng),
            w_key: uniform(att_dim, far_dim, 1.0 / (far_dim as f64).sqrt(), rng),
            window,
        }
    }

    pub fn att_dim(&self) -> usize {
        self.w_query.nrows()
    }

    pub fn far_dim(&self) -> usize {
        self.w_key.ncols()
    }

    pub fn fresh_state(&self) -> AlignState {
        AlignState {
            feats: Array2::zeros((self.window - 1, self.far_dim())),
            keys: Array2::zeros((self.window - 1, self.att_dim())),
        }
    }

    /// Returns the aligned far-end features (`frames x far_dim`) and the
    /// attention weights (`frames x window`).
    pub fn forward(
        &self,
        mic: ArrayView2<f64>,
        far: ArrayView2<f64>,
        state: &mut AlignState,
    ) -> (Array2<f64>, Array2<f64>, AlignCache) {
        let steps = mic.nrows();
        let d = self.window;
        let scale = 1.0 / (self.att_dim() as f64).sqrt();
        let query = mic.dot(&self.w_query.t());
        let keys_new = far.dot(&self.w_key.t());
        let feats = ndarray::concatenate(Axis(0), &[state.feats.view(), far.view()]).expect("widths");
        let keys = ndarray::concatenate(Axis(0), &[state.keys.view(), keys_new.view()]).expect("widths");

        let mut weights = Array2::zeros((steps, d));
        let mut aligned = Array2::zeros((steps, self.far_dim()));
        let mut scores = vec![0.0; d];
        for t in 0..steps {
            let q = query.row(t);
            for (j, s) in scores.iter_mut().enumerate() {
                *s = q.dot(&keys.row(d - 1 + t - j)) * scale;
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in &mut scores {
                *s = (*s - max).exp();
                total += *s;
            }
            let mut out = aligned.row_mut(t);
            for j in 0..d {
                let w = scores[j] / total;
                weights[[t, j]] = w;
                out.scaled_add(w, &feats.row(d - 1 + t - j));
            }
        }

        let keep = feats.nrows() - (d - 1);
        state.feats = feats.slice(s![keep.., ..]).to_owned();
        state.keys = keys.slice(s![keep.., ..]).to_owned();
        let cache = AlignCache {
            mic: mic.to_owned(),
            far: far.to_owned(),
            query,
            feats,
            keys,
            weights: weights.clone(),
        };
        (aligned, weights, cache)
    }

    /// One streaming step: push the current far-end frame and attend with
    /// the current microphone frame.
    pub fn step(
        &self,
        mic_feat: ArrayView1<f64>,
        far_feat: ArrayView1<f64>,
        state: &mut AlignState,
    ) -> (Array1<f64>, Array1<f64>) {
        let mic = mic_feat.insert_axis(Axis(0));
        let far = far_feat.insert_axis(Axis(0));
        let (aligned, weights, _) = self.forward(mic, far, state);
        (aligned.row(0).to_owned(), weights.row(0).to_owned())
    }

    /// Returns gradients with respect to the microphone and far-end inputs.
    /// `dweights` is the gradient reaching the attention weights directly
    /// (through the skip connection), if any.
    pub fn backward(
        &self,
        cache: &AlignCache,
        daligned: ArrayView2<f64>,
        dweights: Option<ArrayView2<f64>>,
        grad: &mut AlignBlock,
    ) -> (Array2<f64>, Array2<f64>) {
        let steps = daligned.nrows();
        let d = self.window;
        let scale = 1.0 / (self.att_dim() as f64).sqrt();
        let mut dquery = Array2::zeros(cache.query.raw_dim());
        let mut dkeys = Array2::<f64>::zeros(cache.keys.raw_dim());
        let mut dfeats = Array2::<f64>::zeros(cache.feats.raw_dim());
        let mut dw = vec![0.0; d];
        for t in 0..steps {
            let da = daligned.row(t);
            let w = cache.weights.row(t);
            for j in 0..d {
                let row = d - 1 + t - j;
                dw[j] = da.dot(&cache.feats.row(row)) + dweights.map_or(0.0, |g| g[[t, j]]);
                dfeats.row_mut(row).scaled_add(w[j], &da);
            }
            let mean: f64 = (0..d).map(|j| w[j] * dw[j]).sum();
            let q = cache.query.row(t);
            for j in 0..d {
                let ds = w[j] * (dw[j] - mean) * scale;
                if ds == 0.0 {
                    continue;
                }
                let row = d - 1 + t - j;
                dquery.row_mut(t).scaled_add(ds, &cache.keys.row(row));
                dkeys.row_mut(row).scaled_add(ds, &q);
            }
        }
        let dkeys_new = dkeys.slice(s![d - 1.., ..]);
        grad.w_key += &dkeys_new.t().dot(&cache.far);
        grad.w_query += &dquery.t().dot(&cache.mic);
        let dmic = dquery.dot(&self.w_query);
        let dfar = &dfeats.slice(s![d - 1.., ..]) + &dkeys_new.dot(&self.w_key);
        (dmic, dfar)
    }
}

impl Params for AlignBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit2(&join(prefix, "w_query"), &self.w_query, f);
        visit2(&join(prefix, "w_key"), &self.w_key, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit2_mut(&join(prefix, "w_query"), &mut self.w_query, f);
        visit2_mut(&join(prefix, "w_key"), &mut self.w_key, f);
    }
}
