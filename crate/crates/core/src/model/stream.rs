use ndarray::Array2;

use super::{Model, NetState, Path};
use crate::dsp::Waveform;
use crate::embed::SpeakerEmbedding;
use crate::error::{Error, Result};

/// Chunked causal inference. Each session owns its own recurrent and
/// alignment state; the concatenated output of all [`StreamSession::push`]
/// calls plus [`StreamSession::finish`] equals the offline forward.
pub struct StreamSession<'a> {
    model: &'a Model,
    emb: Option<Vec<f64>>,
    path: Path,
    state: NetState,
    mic: Vec<f64>,
    far: Vec<f64>,
    ola: Vec<f64>,
    received: usize,
    emitted: usize,
}

impl<'a> StreamSession<'a> {
    pub fn new(model: &'a Model, emb: Option<&SpeakerEmbedding>, path: Path) -> Result<Self> {
        let emb = model.resolve_inputs(emb.map(|e| e.vector()), path)?.map(<[f64]>::to_vec);
        Ok(Self {
            model,
            emb,
            path,
            state: model.net.fresh_state(),
            mic: Vec::new(),
            far: Vec::new(),
            ola: Vec::new(),
            received: 0,
            emitted: 0,
        })
    }

    /// Feeds one chunk and returns every output sample that no later input
    /// can change. `farend` of `None` means silence.
    pub fn push(&mut self, mic: &[f64], farend: Option<&[f64]>) -> Result<Vec<f64>> {
        let hop = self.model.config.hop;
        let win = self.model.config.win;
        if !mic.len().is_multiple_of(hop) {
            return Err(Error::InvalidArgument(format!(
                "chunk of {} samples is not a multiple of the hop ({hop})",
                mic.len()
            )));
        }
        if let Some(f) = farend {
            if f.len() != mic.len() {
                return Err(Error::LengthMismatch(mic.len(), f.len()));
            }
        }
        if mic.iter().chain(farend.into_iter().flatten()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("stream input".into()));
        }
        self.mic.extend_from_slice(mic);
        match farend {
            Some(f) => self.far.extend_from_slice(f),
            None => self.far.resize(self.far.len() + mic.len(), 0.0),
        }
        self.received += mic.len();

        let count = if self.mic.len() >= win {
            (self.mic.len() - win) / hop + 1
        } else {
            0
        };
        if count == 0 {
            return Ok(Vec::new());
        }
        let take = |buf: &[f64]| Array2::from_shape_fn((count, win), |(t, n)| buf[t * hop + n]);
        let mic_frames = take(&self.mic);
        let far_frames = self.model.layout().far_branch.then(|| take(&self.far));
        let (frames, _) = self.model.net.forward_frames(
            mic_frames,
            far_frames,
            self.emb.as_deref(),
            self.path,
            &mut self.state,
        );
        self.mic.drain(..count * hop);
        self.far.drain(..count * hop);

        // `ola[0]` is output sample `emitted`, which is where the first new
        // frame starts.
        let needed = (count - 1) * hop + win;
        if self.ola.len() < needed {
            self.ola.resize(needed, 0.0);
        }
        for (t, frame) in frames.rows().into_iter().enumerate() {
            for (o, x) in self.ola[t * hop..].iter_mut().zip(frame) {
                *o += x;
            }
        }
        let ready: Vec<f64> = self.ola.drain(..count * hop).collect();
        self.emitted += ready.len();
        Ok(ready)
    }

    /// Flushes the overlap-add tail. Samples after the last complete frame
    /// are zero.
    pub fn finish(mut self) -> Vec<f64> {
        let rest = self.received - self.emitted;
        self.ola.resize(rest, 0.0);
        self.ola
    }
}

/// Runs [`StreamSession`] over a whole signal in chunks of `chunk` samples
/// (the last chunk may be shorter if the length is not a multiple of the
/// chunk, but it must still be a multiple of the hop).
pub fn enhance_streaming(
    model: &Model,
    mic: &Waveform,
    farend: Option<&Waveform>,
    emb: Option<&SpeakerEmbedding>,
    path: Path,
    chunk: usize,
) -> Result<Waveform> {
    let hop = model.config.hop;
    if chunk == 0 || !chunk.is_multiple_of(hop) {
        return Err(Error::InvalidArgument(format!(
            "chunk size {chunk} is not a positive multiple of the hop ({hop})"
        )));
    }
    if let Some(f) = farend {
        if f.len() != mic.len() {
            return Err(Error::LengthMismatch(mic.len(), f.len()));
        }
    }
    let mut session = StreamSession::new(model, emb, path)?;
    let len = mic.len();
    let body = len - len % hop;
    let mut out = Vec::with_capacity(len);
    let mut start = 0;
    while start < body {
        let end = (start + chunk).min(body);
        let far = farend.map(|f| &f.samples()[start..end]);
        out.extend(session.push(&mic.samples()[start..end], far)?);
        start = end;
    }
    out.extend(session.finish());
    out.resize(len, 0.0);
    Ok(Waveform::from_vec_unchecked(out))
}
