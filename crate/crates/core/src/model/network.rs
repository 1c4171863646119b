use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::config::{Layout, ModelConfig, Variant};
use crate::dsp::{RealDft, StftParams};
use crate::error::Result;
use crate::nn::{
    hcat, hsplit, join, AlignBlock, AlignCache, AlignState, BlockCache, Decoder, Encoder, EncoderCache,
    Linear, LstmState, MaskCache, MaskHead, Params, ResidualBlock, TemporalBlock,
};

/// Which output path to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Path {
    /// Every temporal block.
    Full,
    /// Mask head applied directly to the output of the first `n1` blocks.
    Bypass,
}

/// Feature extraction and reconstruction.
#[derive(Clone, Debug)]
pub enum FrontEnd {
    Learned {
        mic_encoder: Encoder,
        far_encoder: Option<Encoder>,
        decoder: Decoder,
    },
    Spectral {
        params: StftParams,
        dft: RealDft,
        window: Vec<f64>,
        compression: f64,
    },
}

/// The trainable part of a model.
#[derive(Clone, Debug)]
pub struct Network {
    pub front: FrontEnd,
    pub align: Option<AlignBlock>,
    pub proj1: Option<Linear>,
    pub blocks1: Vec<TemporalBlock>,
    pub proj2: Option<Linear>,
    pub blocks2: Vec<TemporalBlock>,
    pub mask_head: MaskHead,
    pub layout: Layout,
    pub emb_dim: usize,
    pub win: usize,
    pub hop: usize,
}

/// Recurrent and alignment state carried across streaming chunks.
#[derive(Clone, Debug)]
pub struct NetState {
    align: Option<AlignState>,
    blocks1: Vec<LstmState>,
    blocks2: Vec<LstmState>,
}

enum FrontTrace {
    Learned {
        mic: EncoderCache,
        far: Option<EncoderCache>,
    },
    Spectral {
        spec: Array2<Complex64>,
    },
}

/// Everything the backward pass needs from one forward pass.
pub struct Trace {
    path: Path,
    front: FrontTrace,
    mic_feat: Array2<f64>,
    align: Option<AlignCache>,
    in1: Array2<f64>,
    in1_widths: Vec<usize>,
    blocks1: Vec<BlockCache>,
    mid: Option<Array2<f64>>,
    mid_widths: Vec<usize>,
    blocks2: Vec<BlockCache>,
    mask: MaskCache,
    masked: Option<Array2<f64>>,
}

impl Trace {
    /// Attention weights (`frames x window`) if the model has an align-block.
    pub fn attention_weights(&self) -> Option<&Array2<f64>> {
        self.align.as_ref().map(|c| &c.weights)
    }

    pub fn mask(&self) -> &Array2<f64> {
        &self.mask.mask
    }

    pub fn frames(&self) -> usize {
        self.mask.mask.nrows()
    }
}

impl Network {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = config.emb_dim;
        let window = config.align_window;

        let (front, mic_dim, far_dim) = match config.variant {
            Variant::E3net => {
                let mic_encoder = Encoder::paired_fourier(config.win, config.f_mic, &mut rng);
                let far_encoder = layout
                    .far_branch
                    .then(|| Encoder::paired_fourier(config.win, config.f_far, &mut rng));
                let decoder = Decoder::paired_fourier(config.f_mic, config.win, config.hop);
                (
                    FrontEnd::Learned {
                        mic_encoder,
                        far_encoder,
                        decoder,
                    },
                    config.f_mic,
                    config.f_far,
                )
            }
            Variant::Vfl => {
                let params = config.stft_params();
                let bins = params.bins();
                (
                    FrontEnd::Spectral {
                        params,
                        dft: RealDft::new(params.fft_size),
                        window: params.window(),
                        compression: config.compression,
                    },
                    bins,
                    bins,
                )
            }
        };

        let align = layout
            .align
            .then(|| AlignBlock::new(mic_dim, far_dim, config.align_dim, window, &mut rng));

        let in1 = mic_dim
            + if layout.far_branch { far_dim } else { 0 }
            + if layout.emb_at_input { emb } else { 0 };
        let mid_extra = if layout.mid_concat {
            (if layout.emb_at_mid { emb } else { 0 }) + (if layout.weights_at_mid { window } else { 0 })
        } else {
            0
        };

        let (proj1, blocks1, proj2, blocks2, head_in) = match config.variant {
            Variant::E3net => {
                let width = config.f_emb;
                let proj1 = Linear::new(in1, width, true, &mut rng);
                let blocks1 = (0..config.n1)
                    .map(|_| TemporalBlock::Residual(ResidualBlock::new(width, config.f_emb_hid, &mut rng)))
                    .collect();
                let proj2 = layout
                    .mid_concat
                    .then(|| Linear::new(width + mid_extra, width, true, &mut rng));
                let blocks2 = (0..config.n2)
                    .map(|_| TemporalBlock::Residual(ResidualBlock::new(width, config.f_emb_hid, &mut rng)))
                    .collect();
                (Some(proj1), blocks1, proj2, blocks2, width)
            }
            Variant::Vfl => {
                let hidden = config.vfl_hidden;
                let blocks1 = (0..config.n1)
                    .map(|i| {
                        let inputs = if i == 0 { in1 } else { hidden };
                        TemporalBlock::Recurrent(crate::nn::Lstm::new(inputs, hidden, &mut rng))
                    })
                    .collect();
                let blocks2 = (0..config.n2)
                    .map(|i| {
                        let inputs = if i == 0 { hidden + mid_extra } else { hidden };
                        TemporalBlock::Recurrent(crate::nn::Lstm::new(inputs, hidden, &mut rng))
                    })
                    .collect();
                (None, blocks1, None, blocks2, hidden)
            }
        };
        let mask_head = MaskHead::new(head_in, mic_dim, &mut rng);

        Ok(Self {
            front,
            align,
            proj1,
            blocks1,
            proj2,
            blocks2,
            mask_head,
            layout,
            emb_dim: emb,
            win: config.win,
            hop: config.hop,
        })
    }

    pub fn fresh_state(&self) -> NetState {
        NetState {
            align: self.align.as_ref().map(AlignBlock::fresh_state),
            blocks1: self.blocks1.iter().map(TemporalBlock::fresh_state).collect(),
            blocks2: self.blocks2.iter().map(TemporalBlock::fresh_state).collect(),
        }
    }

    /// Runs a chunk of raw (unwindowed) frames through the network and
    /// returns synthesis frames ready for overlap-add at stride `hop`.
    ///
    /// `emb` must be given when the layout uses an embedding; `far_frames`
    /// when it has a far-end branch.
    pub fn forward_frames(
        &self,
        mic_frames: Array2<f64>,
        far_frames: Option<Array2<f64>>,
        emb: Option<&[f64]>,
        path: Path,
        state: &mut NetState,
    ) -> (Array2<f64>, Trace) {
        let steps = mic_frames.nrows();
        let layout = self.layout;
        let emb_rows = emb.map(|e| {
            Array2::from_shape_fn((steps, e.len()), |(_, j)| e[j])
        });

        // features
        let (front, mic_feat, far_feat) = match &self.front {
            FrontEnd::Learned {
                mic_encoder,
                far_encoder,
                ..
            } => {
                let (mic_feat, mic) = mic_encoder.forward(mic_frames);
                let (far_feat, far) = match (far_encoder, far_frames) {
                    (Some(enc), Some(frames)) => {
                        let (f, c) = enc.forward(frames);
                        (Some(f), Some(c))
                    }
                    _ => (None, None),
                };
                (FrontTrace::Learned { mic, far }, mic_feat, far_feat)
            }
            FrontEnd::Spectral {
                dft,
                window,
                compression,
                ..
            } => {
                let spec = spectral_frames(dft, window, &mic_frames);
                let mic_feat = spec.mapv(|c| c.norm().powf(*compression));
                let far_feat = far_frames.filter(|_| layout.far_branch).map(|f| {
                    spectral_frames(dft, window, &f).mapv(|c| c.norm().powf(*compression))
                });
                (FrontTrace::Spectral { spec }, mic_feat, far_feat)
            }
        };

        // alignment
        let (far_part, weights, align) = match (&self.align, &far_feat) {
            (Some(block), Some(far)) => {
                let st = state.align.as_mut().expect("align state");
                let (aligned, w, cache) = block.forward(mic_feat.view(), far.view(), st);
                (Some(aligned), Some(w), Some(cache))
            }
            _ => (far_feat.clone(), None, None),
        };

        let mut parts: Vec<ArrayView2<f64>> = vec![mic_feat.view()];
        if let Some(f) = &far_part {
            parts.push(f.view());
        }
        if layout.emb_at_input {
            parts.push(emb_rows.as_ref().expect("embedding required").view());
        }
        let in1_widths: Vec<usize> = parts.iter().map(|p| p.ncols()).collect();
        let in1 = hcat(&parts);

        let mut x = match &self.proj1 {
            Some(p) => p.forward(in1.view()),
            None => in1.clone(),
        };
        let mut blocks1 = Vec::with_capacity(self.blocks1.len());
        for (block, st) in self.blocks1.iter().zip(&mut state.blocks1) {
            let (y, cache) = block.forward(x.view(), st);
            blocks1.push(cache);
            x = y;
        }

        let mut mid = None;
        let mut mid_widths = Vec::new();
        let mut blocks2 = Vec::new();
        if path == Path::Full {
            if layout.mid_concat {
                let mut parts: Vec<ArrayView2<f64>> = vec![x.view()];
                if layout.emb_at_mid {
                    parts.push(emb_rows.as_ref().expect("embedding required").view());
                }
                if layout.weights_at_mid {
                    parts.push(weights.as_ref().expect("attention weights").view());
                }
                mid_widths = parts.iter().map(|p| p.ncols()).collect();
                let m = hcat(&parts);
                x = match &self.proj2 {
                    Some(p) => p.forward(m.view()),
                    None => m.clone(),
                };
                mid = Some(m);
            }
            for (block, st) in self.blocks2.iter().zip(&mut state.blocks2) {
                let (y, cache) = block.forward(x.view(), st);
                blocks2.push(cache);
                x = y;
            }
        }

        let (mask, mask_cache) = self.mask_head.forward(x);

        let (out, masked) = match (&self.front, &front) {
            (FrontEnd::Learned { decoder, .. }, _) => {
                let masked = &mask * &mic_feat;
                (decoder.forward(masked.view()), Some(masked))
            }
            (
                FrontEnd::Spectral {
                    params, dft, window, ..
                },
                FrontTrace::Spectral { spec },
            ) => {
                let norm = 1.0 / params.cola_gain();
                let mut out = Array2::zeros((steps, self.win));
                for t in 0..steps {
                    let bins: Vec<Complex64> = spec
                        .row(t)
                        .iter()
                        .zip(mask.row(t))
                        .map(|(c, &m)| c * m)
                        .collect();
                    let frame = dft.inverse(&bins);
                    for n in 0..self.win {
                        out[[t, n]] = frame[n] * window[n] * norm;
                    }
                }
                (out, None)
            }
            _ => unreachable!("front-end and trace kinds agree"),
        };

        let trace = Trace {
            path,
            front,
            mic_feat,
            align,
            in1,
            in1_widths,
            blocks1,
            mid,
            mid_widths,
            blocks2,
            mask: mask_cache,
            masked,
        };
        (out, trace)
    }

    /// Accumulates parameter gradients into `grad` (a zeroed twin of
    /// `self`) given the gradient with respect to the synthesis frames.
    pub fn backward(&self, trace: &Trace, dframes: ArrayView2<f64>, grad: &mut Network) {
        let layout = self.layout;

        let (dmask, mut dmic_feat) = match (&self.front, &trace.front, &mut grad.front) {
            (FrontEnd::Learned { decoder, .. }, _, FrontEnd::Learned { decoder: gdec, .. }) => {
                let masked = trace.masked.as_ref().expect("masked features");
                let dmasked = decoder.backward(masked.view(), dframes, gdec);
                let dmask = &dmasked * &trace.mic_feat;
                let dmic = &dmasked * &trace.mask.mask;
                (dmask, Some(dmic))
            }
            (
                FrontEnd::Spectral {
                    params, dft, window, ..
                },
                FrontTrace::Spectral { spec },
                _,
            ) => {
                let norm = 1.0 / params.cola_gain();
                let mut dmask = Array2::zeros(trace.mask.mask.raw_dim());
                let mut g = vec![0.0; dft.size()];
                for t in 0..dframes.nrows() {
                    for n in 0..self.win {
                        g[n] = dframes[[t, n]] * window[n] * norm;
                    }
                    let dbins = dft.inverse_adjoint(&g);
                    for (k, (db, x)) in dbins.iter().zip(spec.row(t)).enumerate() {
                        dmask[[t, k]] = db.re * x.re + db.im * x.im;
                    }
                }
                (dmask, None)
            }
            _ => unreachable!("front-end and gradient kinds agree"),
        };

        let dhead = self
            .mask_head
            .backward(&trace.mask, dmask.view(), &mut grad.mask_head);

        let mut dweights = None;
        let dh1 = match trace.path {
            Path::Bypass => dhead,
            Path::Full => {
                let mut dx = dhead;
                for ((block, cache), g) in self
                    .blocks2
                    .iter()
                    .zip(&trace.blocks2)
                    .zip(&mut grad.blocks2)
                    .rev()
                {
                    dx = block.backward(cache, dx.view(), g);
                }
                match &trace.mid {
                    Some(mid) => {
                        let dmid = match (&self.proj2, &mut grad.proj2) {
                            (Some(p), Some(gp)) => p.backward(mid.view(), dx.view(), gp),
                            _ => dx,
                        };
                        let mut pieces = hsplit(&dmid, &trace.mid_widths).into_iter();
                        let dh1 = pieces.next().expect("block output slice");
                        if layout.emb_at_mid {
                            pieces.next();
                        }
                        if layout.weights_at_mid {
                            dweights = pieces.next();
                        }
                        dh1
                    }
                    None => dx,
                }
            }
        };

        let mut dx = dh1;
        for ((block, cache), g) in self
            .blocks1
            .iter()
            .zip(&trace.blocks1)
            .zip(&mut grad.blocks1)
            .rev()
        {
            dx = block.backward(cache, dx.view(), g);
        }
        let din1 = match (&self.proj1, &mut grad.proj1) {
            (Some(p), Some(gp)) => p.backward(trace.in1.view(), dx.view(), gp),
            _ => dx,
        };
        let mut pieces = hsplit(&din1, &trace.in1_widths).into_iter();
        let dmic_part = pieces.next().expect("mic slice");
        let dfar_part = if trace.in1_widths.len() > 1 && layout.far_branch {
            pieces.next()
        } else {
            None
        };

        let dfar_feat = match (&self.align, &trace.align, &mut grad.align) {
            (Some(block), Some(cache), Some(g)) => {
                let dal = dfar_part.expect("aligned slice");
                let (dmic_q, dfar) = block.backward(cache, dal.view(), dweights.as_ref().map(|w| w.view()), g);
                if let Some(d) = &mut dmic_feat {
                    *d += &dmic_q;
                }
                Some(dfar)
            }
            _ => dfar_part,
        };

        if let (
            FrontEnd::Learned {
                mic_encoder,
                far_encoder,
                ..
            },
            FrontTrace::Learned { mic, far },
            FrontEnd::Learned {
                mic_encoder: gmic,
                far_encoder: gfar,
                ..
            },
        ) = (&self.front, &trace.front, &mut grad.front)
        {
            let mut d = dmic_feat.expect("mic feature gradient");
            d += &dmic_part;
            mic_encoder.backward(mic, d.view(), gmic);
            if let (Some(enc), Some(cache), Some(g), Some(df)) = (far_encoder, far, gfar, dfar_feat) {
                enc.backward(cache, df.view(), g);
            }
        }
    }

    /// Named parameter groups and their sizes, in build order.
    pub fn breakdown(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        let mut push = |name: &str, n: usize| {
            if n > 0 {
                out.push((name.to_string(), n));
            }
        };
        if let FrontEnd::Learned {
            mic_encoder,
            far_encoder,
            decoder,
        } = &self.front
        {
            push("mic_encoder", mic_encoder.param_count());
            push("far_encoder", far_encoder.as_ref().map_or(0, |e| e.param_count()));
            push("decoder", decoder.param_count());
        }
        push("align", self.align.as_ref().map_or(0, |a| a.param_count()));
        push("proj1", self.proj1.as_ref().map_or(0, |p| p.param_count()));
        push("blocks1", self.blocks1.iter().map(|b| b.param_count()).sum());
        push("proj2", self.proj2.as_ref().map_or(0, |p| p.param_count()));
        push("blocks2", self.blocks2.iter().map(|b| b.param_count()).sum());
        push("mask_head", self.mask_head.param_count());
        out
    }
}

fn spectral_frames(dft: &RealDft, window: &[f64], frames: &Array2<f64>) -> Array2<Complex64> {
    let mut out = Array2::from_elem((frames.nrows(), dft.bins()), Complex64::new(0.0, 0.0));
    let mut buf = vec![0.0; dft.size()];
    for (t, frame) in frames.rows().into_iter().enumerate() {
        buf.fill(0.0);
        for (n, (&x, &w)) in frame.iter().zip(window).enumerate() {
            buf[n] = x * w;
        }
        for (o, v) in out.row_mut(t).iter_mut().zip(dft.forward(&buf)) {
            *o = v;
        }
    }
    out
}

impl Params for Network {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        if let FrontEnd::Learned {
            mic_encoder,
            far_encoder,
            decoder,
        } = &self.front
        {
            mic_encoder.visit(&join(prefix, "mic_encoder"), f);
            if let Some(e) = far_encoder {
                e.visit(&join(prefix, "far_encoder"), f);
            }
            decoder.visit(&join(prefix, "decoder"), f);
        }
        if let Some(a) = &self.align {
            a.visit(&join(prefix, "align"), f);
        }
        if let Some(p) = &self.proj1 {
            p.visit(&join(prefix, "proj1"), f);
        }
        for (i, b) in self.blocks1.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks1.{i}")), f);
        }
        if let Some(p) = &self.proj2 {
            p.visit(&join(prefix, "proj2"), f);
        }
        for (i, b) in self.blocks2.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks2.{i}")), f);
        }
        self.mask_head.visit(&join(prefix, "mask_head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        if let FrontEnd::Learned {
            mic_encoder,
            far_encoder,
            decoder,
        } = &mut self.front
        {
            mic_encoder.visit_mut(&join(prefix, "mic_encoder"), f);
            if let Some(e) = far_encoder {
                e.visit_mut(&join(prefix, "far_encoder"), f);
            }
            decoder.visit_mut(&join(prefix, "decoder"), f);
        }
        if let Some(a) = &mut self.align {
            a.visit_mut(&join(prefix, "align"), f);
        }
        if let Some(p) = &mut self.proj1 {
            p.visit_mut(&join(prefix, "proj1"), f);
        }
        for (i, b) in self.blocks1.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks1.{i}")), f);
        }
        if let Some(p) = &mut self.proj2 {
            p.visit_mut(&join(prefix, "proj2"), f);
        }
        for (i, b) in self.blocks2.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks2.{i}")), f);
        }
        self.mask_head.visit_mut(&join(prefix, "mask_head"), f);
    }
}

/// Frames of a gradient signal: the adjoint of overlap-add.
pub(crate) fn frames_of(signal: &[f64], win: usize, hop: usize, frames: usize) -> Array2<f64> {
    Array2::from_shape_fn((frames, win), |(t, n)| {
        signal.get(t * hop + n).copied().unwrap_or(0.0)
    })
}

