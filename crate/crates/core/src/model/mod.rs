//! Model construction and offline inference for both model families.

mod checkpoint;
mod config;
mod network;
mod stream;

use crate::dsp::{frame_signal, overlap_add, Waveform};
use crate::embed::SpeakerEmbedding;
use crate::error::{Error, Result};
use crate::nn::Params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub(crate) use checkpoint::write_atomic;
pub use config::{Ablation, Layout, ModelConfig, Task, Variant};
pub use network::{FrontEnd, NetState, Network, Path, Trace};
pub use stream::{enhance_streaming, StreamSession};

pub(crate) use network::frames_of;

/// A configuration together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub net: Network,
}

pub fn build_model(config: ModelConfig, seed: u64) -> Result<Model> {
    let net = Network::build(&config, seed)?;
    Ok(Model { config, net })
}

impl Model {
    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn layout(&self) -> Layout {
        self.net.layout
    }

    /// Enhances a whole signal through every temporal block.
    pub fn forward_full(
        &self,
        mic: &Waveform,
        farend: Option<&Waveform>,
        emb: Option<&SpeakerEmbedding>,
    ) -> Result<Waveform> {
        self.forward(mic, farend, emb, Path::Full)
    }

    /// Enhances through the bypass path. Only joint models with an
    /// align-block have one.
    pub fn forward_bypass(&self, mic: &Waveform, farend: Option<&Waveform>) -> Result<Waveform> {
        self.forward(mic, farend, None, Path::Bypass)
    }

    pub fn forward(
        &self,
        mic: &Waveform,
        farend: Option<&Waveform>,
        emb: Option<&SpeakerEmbedding>,
        path: Path,
    ) -> Result<Waveform> {
        let (out, _) = self.forward_traced(
            mic.samples(),
            farend.map(|f| f.samples()),
            emb.map(|e| e.vector()),
            path,
        )?;
        Ok(Waveform::from_vec_unchecked(out))
    }

    /// Checks path and inputs and returns the embedding to feed, if any.
    pub(crate) fn resolve_inputs<'a>(&self, emb: Option<&'a [f64]>, path: Path) -> Result<Option<&'a [f64]>> {
        let layout = self.layout();
        if path == Path::Bypass && !layout.bypass {
            return Err(Error::Unsupported(format!(
                "{} has no bypass path",
                self.config.label()
            )));
        }
        let needs_emb = layout.emb_at_input || (path == Path::Full && layout.emb_at_mid);
        if !needs_emb {
            return Ok(None);
        }
        match emb {
            Some(e) if e.len() == self.config.emb_dim => Ok(Some(e)),
            Some(e) => Err(Error::InvalidArgument(format!(
                "embedding has {} dimensions, model expects {}",
                e.len(),
                self.config.emb_dim
            ))),
            None => Err(Error::MissingEmbedding),
        }
    }

    /// Offline forward that keeps the trace for [`Model::backward`].
    /// A missing far-end signal is treated as silence.
    pub fn forward_traced(
        &self,
        mic: &[f64],
        farend: Option<&[f64]>,
        emb: Option<&[f64]>,
        path: Path,
    ) -> Result<(Vec<f64>, Trace)> {
        let emb = self.resolve_inputs(emb, path)?;
        if let Some(f) = farend {
            if f.len() != mic.len() {
                return Err(Error::LengthMismatch(mic.len(), f.len()));
            }
        }
        let (win, hop) = (self.config.win, self.config.hop);
        let mic_frames = frame_signal(mic, win, hop)?;
        let far_frames = if self.layout().far_branch {
            Some(match farend {
                Some(f) => frame_signal(f, win, hop)?,
                None => ndarray::Array2::zeros(mic_frames.raw_dim()),
            })
        } else {
            None
        };
        let mut state = self.net.fresh_state();
        let (frames, trace) = self.net.forward_frames(mic_frames, far_frames, emb, path, &mut state);
        Ok((overlap_add(&frames, hop, mic.len()), trace))
    }

    /// Accumulates parameter gradients given the gradient of the loss with
    /// respect to the output waveform of [`Model::forward_traced`].
    pub fn backward(&self, trace: &Trace, dout: &[f64], grad: &mut Network) {
        let frames = frames_of(dout, self.config.win, self.config.hop, trace.frames());
        self.net.backward(trace, frames.view(), grad);
    }

    /// Parameter count per top-level component.
    pub fn breakdown(&self) -> Vec<(String, usize)> {
        self.net.breakdown()
    }
}
