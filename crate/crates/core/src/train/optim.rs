use crate::model::Network;
use crate::nn::{round32, Params};

/// Adam with constant step size. Parameters and moments are rounded to
/// 32-bit values after every update so that checkpoints restore the exact
/// training state.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates taken so far.
    pub t: u64,
    pub m: Network,
    pub v: Network,
}

impl Adam {
    pub fn new(net: &Network, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: net.zeros_like(),
            v: net.zeros_like(),
        }
    }

    pub fn step(&mut self, net: &mut Network, grad: &Network) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let g = grad.flatten();
        let mut m = self.m.flatten();
        let mut v = self.v.flatten();
        let mut p = net.flatten();
        for i in 0..p.len() {
            m[i] = round32(self.beta1 * m[i] + (1.0 - self.beta1) * g[i]);
            v[i] = round32(self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i]);
            let update = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            p[i] = round32(p[i] - update);
        }
        self.m.assign(&m);
        self.v.assign(&v);
        net.assign(&p);
    }
}
