use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{join, LayerNorm, Linear, Lstm, LstmCache, LstmState, NormCache, PRelu, Params};

/// Residual LSTM block of the time-domain model: LSTM at the block width,
/// a feed-forward expansion to the hidden width with a parametric rectifier,
/// a projection back, layer normalization and a residual add.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub lstm: Lstm,
    pub expand: Linear,
    pub act: PRelu,
    pub contract: Linear,
    pub norm: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct ResidualCache {
    lstm: LstmCache,
    h: Array2<f64>,
    u: Array2<f64>,
    a: Array2<f64>,
    norm: NormCache,
}

impl ResidualBlock {
    pub fn new(width: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            lstm: Lstm::new(width, width, rng),
            expand: Linear::new(width, hidden, true, rng),
            act: PRelu::new(),
            contract: Linear::new(hidden, width, true, rng),
            norm: LayerNorm::new(width),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>, state: &mut LstmState) -> (Array2<f64>, ResidualCache) {
        let (h, lstm) = self.lstm.forward(x, state);
        let u = self.expand.forward(h.view());
        let a = self.act.forward(u.view());
        let v = self.contract.forward(a.view());
        let (n, norm) = self.norm.forward(v.view());
        let y = &x + &n;
        (y, ResidualCache { lstm, h, u, a, norm })
    }

    pub fn backward(&self, cache: &ResidualCache, dy: ArrayView2<f64>, grad: &mut ResidualBlock) -> Array2<f64> {
        let dv = self.norm.backward(&cache.norm, dy, &mut grad.norm);
        let da = self.contract.backward(cache.a.view(), dv.view(), &mut grad.contract);
        let du = self.act.backward(cache.u.view(), da.view(), &mut grad.act);
        let dh = self.expand.backward(cache.h.view(), du.view(), &mut grad.expand);
        let dx = self.lstm.backward(&cache.lstm, dh.view(), &mut grad.lstm);
        dx + dy
    }
}

impl Params for ResidualBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.lstm.visit(&join(prefix, "lstm"), f);
        self.expand.visit(&join(prefix, "expand"), f);
        self.act.visit(&join(prefix, "act"), f);
        self.contract.visit(&join(prefix, "contract"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.lstm.visit_mut(&join(prefix, "lstm"), f);
        self.expand.visit_mut(&join(prefix, "expand"), f);
        self.act.visit_mut(&join(prefix, "act"), f);
        self.contract.visit_mut(&join(prefix, "contract"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

/// One temporal layer. The time-domain model stacks residual blocks; the
/// STFT-domain model stacks plain recurrent layers.
#[derive(Clone, Debug, PartialEq)]
pub enum TemporalBlock {
    Residual(ResidualBlock),
    Recurrent(Lstm),
}

#[derive(Clone, Debug)]
pub enum BlockCache {
    Residual(ResidualCache),
    Recurrent(LstmCache),
}

impl TemporalBlock {
    pub fn state_width(&self) -> usize {
        match self {
            TemporalBlock::Residual(b) => b.lstm.hidden(),
            TemporalBlock::Recurrent(l) => l.hidden(),
        }
    }

    pub fn output_width(&self) -> usize {
        self.state_width()
    }

    pub fn fresh_state(&self) -> LstmState {
        LstmState::zeros(self.state_width())
    }

    pub fn forward(&self, x: ArrayView2<f64>, state: &mut LstmState) -> (Array2<f64>, BlockCache) {
        match self {
            TemporalBlock::Residual(b) => {
                let (y, c) = b.forward(x, state);
                (y, BlockCache::Residual(c))
            }
            TemporalBlock::Recurrent(l) => {
                let (y, c) = l.forward(x, state);
                (y, BlockCache::Recurrent(c))
            }
        }
    }

    pub fn backward(&self, cache: &BlockCache, dy: ArrayView2<f64>, grad: &mut TemporalBlock) -> Array2<f64> {
        match (self, cache, grad) {
            (TemporalBlock::Residual(b), BlockCache::Residual(c), TemporalBlock::Residual(g)) => {
                b.backward(c, dy, g)
            }
            (TemporalBlock::Recurrent(l), BlockCache::Recurrent(c), TemporalBlock::Recurrent(g)) => {
                l.backward(c, dy, g)
            }
            _ => panic!("temporal block, cache and gradient kinds disagree"),
        }
    }
}

impl Params for TemporalBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        match self {
            TemporalBlock::Residual(b) => b.visit(prefix, f),
            TemporalBlock::Recurrent(l) => l.visit(&join(prefix, "lstm"), f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        match self {
            TemporalBlock::Residual(b) => b.visit_mut(prefix, f),
            TemporalBlock::Recurrent(l) => l.visit_mut(&join(prefix, "lstm"), f),
        }
    }
}
