//! Acoustic scene simulation: reverberant target, interfering talker,
//! noise and delayed far-end echo mixed at exact energy ratios.

mod manifest;
mod rir;
mod sets;
mod sources;

use serde::{Deserialize, Serialize};

use crate::dsp::{fft_convolve, Waveform, SAMPLE_RATE};
use crate::embed::derive_seed;
use crate::error::{Error, Result};
use crate::metrics::active_energies;

pub use manifest::{load_sample, read_manifest, write_dataset, write_samples, Dataset, ManifestRecord};
pub use rir::{direct_delay, synth_rir, Rir, SPEED_OF_SOUND};
pub use sets::{
    make_long_sample, make_scenario_set, make_scenario_set_with, make_training_pool, make_training_pool_with,
    render_all, Ranges, ScenarioKind,
};
pub use sources::{fundamental_for, surrogate_source, SourceProvider, SourceRole, SurrogateSources, SOURCE_RMS};

/// Activity threshold used for every mixing ratio.
pub const RATIO_ACTIVITY_DBFS: f64 = -60.0;
/// Length of the early part of the target RIR kept in the training target.
pub const EARLY_RIR_MS: f64 = 50.0;

/// Declarative description of one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub duration: f64,
    /// `None` means no noise.
    pub snr_db: Option<f64>,
    pub ser_db: f64,
    pub sir_db: f64,
    pub target_distance: f64,
    pub interferer_distance: f64,
    /// Loudspeaker to microphone distance.
    pub echo_distance: f64,
    pub has_interferer: bool,
    pub has_echo: bool,
    /// Samples between the far-end reference and its arrival at the
    /// loudspeaker.
    pub echo_delay: usize,
    pub rt60: f64,
    pub seed: u64,
    pub speaker_id: String,
    pub interferer_id: Option<String>,
    pub farend_id: Option<String>,
}

impl SceneSpec {
    /// A clean single-talker scene: no interferer, no noise, no echo.
    pub fn clean(speaker_id: impl Into<String>, duration: f64, seed: u64) -> Self {
        Self {
            duration,
            snr_db: None,
            ser_db: 0.0,
            sir_db: 0.0,
            target_distance: 0.5,
            interferer_distance: 3.0,
            echo_distance: 0.2,
            has_interferer: false,
            has_echo: false,
            echo_delay: 0,
            rt60: 0.3,
            seed,
            speaker_id: speaker_id.into(),
            interferer_id: None,
            farend_id: None,
        }
    }

    pub fn samples(&self) -> usize {
        (self.duration * SAMPLE_RATE as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let role = |m: String| Err(Error::SceneRole(m));
        let arg = |m: String| Err(Error::InvalidArgument(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return arg(format!("duration {} s must be positive", self.duration));
        }
        if !(0.0..=1.3).contains(&self.target_distance) {
            return arg(format!("target distance {} m outside [0, 1.3]", self.target_distance));
        }
        if self.has_interferer && !(self.interferer_distance > 2.0 && self.interferer_distance.is_finite()) {
            return arg(format!("interferer distance {} m must exceed 2", self.interferer_distance));
        }
        if !(self.echo_distance >= 0.0 && self.echo_distance.is_finite()) {
            return arg(format!("echo distance {} m must be >= 0", self.echo_distance));
        }
        if !(0.1..=1.0).contains(&self.rt60) {
            return arg(format!("rt60 {} s outside [0.1, 1.0]", self.rt60));
        }
        for (name, v) in [("ser", self.ser_db), ("sir", self.sir_db), ("snr", self.snr_db.unwrap_or(0.0))] {
            if !v.is_finite() {
                return arg(format!("{name} must be finite"));
            }
        }
        if self.speaker_id.is_empty() {
            return role("missing speaker id".into());
        }
        if self.has_interferer && self.interferer_id.as_deref().is_none_or(str::is_empty) {
            return role("interferer requested without interferer id".into());
        }
        if self.has_echo && self.farend_id.as_deref().is_none_or(str::is_empty) {
            return role("echo requested without far-end id".into());
        }
        if self.has_echo && self.echo_delay >= self.samples() {
            return arg(format!("echo delay {} exceeds the scene length", self.echo_delay));
        }
        Ok(())
    }
}

/// Individual components of a mixture, each already scaled. Absent
/// components are all-zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Stems {
    pub target_reverb: Waveform,
    pub interferer: Waveform,
    pub noise: Waveform,
    pub echo: Waveform,
}

/// A span of a (possibly stitched) sample and the spec that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub spec: SceneSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSample {
    pub id: String,
    pub mic: Waveform,
    /// Far-end reference as given to the model (all-zero without echo).
    pub farend: Waveform,
    pub target_ref: Waveform,
    pub stems: Stems,
    /// Spec of the first segment; see `segments` for stitched samples.
    pub spec: SceneSpec,
    pub segments: Vec<Segment>,
}

impl MixtureSample {
    pub fn len(&self) -> usize {
        self.mic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mic.is_empty()
    }

    pub fn has_echo(&self) -> bool {
        self.segments.iter().any(|s| s.spec.has_echo)
    }

    pub fn has_interferer(&self) -> bool {
        self.segments.iter().any(|s| s.spec.has_interferer)
    }
}

/// Scales `distractor` so that the reference-to-distractor energy ratio over
/// the reference's active samples equals `ratio_db`.
pub fn scale_to_ratio(reference: &Waveform, distractor: &Waveform, ratio_db: f64) -> Result<Waveform> {
    if reference.len() != distractor.len() {
        return Err(Error::LengthMismatch(reference.len(), distractor.len()));
    }
    let (r, d) = active_energies(reference.samples(), distractor.samples(), RATIO_ACTIVITY_DBFS);
    if r == 0.0 {
        return Err(Error::ZeroEnergy("reference"));
    }
    if d == 0.0 {
        return Err(Error::ZeroEnergy("distractor"));
    }
    let gain = (r / (d * 10f64.powf(ratio_db / 10.0))).sqrt();
    Ok(distractor.scaled(gain))
}

fn convolve(x: &Waveform, h: &[f64]) -> Waveform {
    Waveform::from_vec_unchecked(fft_convolve(x.samples(), h))
}

pub fn render_scene(spec: &SceneSpec, sources: &dyn SourceProvider) -> Result<MixtureSample> {
    spec.validate()?;
    let n = spec.samples();
    let seed = |label: &str| derive_seed(label, spec.seed);

    let dry = sources.source(SourceRole::Target, &spec.speaker_id, n, seed("target"))?;
    let rir_t = synth_rir(seed("rir/target"), spec.rt60, spec.target_distance)?;
    let target_reverb = convolve(&dry, &rir_t.taps);
    let target_ref = convolve(&dry, &rir_t.early(EARLY_RIR_MS));

    let interferer = if spec.has_interferer {
        let id = spec.interferer_id.as_deref().expect("validated");
        let x = sources.source(SourceRole::Interferer, id, n, seed("interferer"))?;
        let rir = synth_rir(seed("rir/interferer"), spec.rt60, spec.interferer_distance)?;
        scale_to_ratio(&target_reverb, &convolve(&x, &rir.taps), spec.sir_db)?
    } else {
        Waveform::zeros(n)
    };

    let noise = match spec.snr_db {
        Some(snr) => {
            let x = sources.source(SourceRole::Noise, "noise", n, seed("noise"))?;
            scale_to_ratio(&target_reverb, &x, snr)?
        }
        None => Waveform::zeros(n),
    };

    let (farend, echo) = if spec.has_echo {
        let id = spec.farend_id.as_deref().expect("validated");
        let far = sources.source(SourceRole::Farend, id, n, seed("farend"))?;
        let mut delayed = vec![0.0; n];
        delayed[spec.echo_delay..].copy_from_slice(&far.samples()[..n - spec.echo_delay]);
        let rir = synth_rir(seed("rir/echo"), spec.rt60, spec.echo_distance)?;
        let echo = convolve(&Waveform::from_vec_unchecked(delayed), &rir.taps);
        (far, scale_to_ratio(&target_reverb, &echo, spec.ser_db)?)
    } else {
        (Waveform::zeros(n), Waveform::zeros(n))
    };

    let mut mic = target_reverb.samples().to_vec();
    for stem in [&interferer, &noise, &echo] {
        for (m, s) in mic.iter_mut().zip(stem.samples()) {
            *m += s;
        }
    }

    Ok(MixtureSample {
        id: format!("scene-{:016x}", spec.seed),
        mic: Waveform::new(mic)?,
        farend,
        target_ref,
        stems: Stems {
            target_reverb,
            interferer,
            noise,
            echo,
        },
        spec: spec.clone(),
        segments: vec![Segment {
            start: 0,
            len: n,
            spec: spec.clone(),
        }],
    })
}

/// Concatenates samples of the same target speaker, keeping each
/// segment's spec and position.
pub fn stitch_long(samples: &[MixtureSample]) -> Result<MixtureSample> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to stitch".into()))?;
    if let Some(other) = samples.iter().find(|s| s.spec.speaker_id != first.spec.speaker_id) {
        return Err(Error::SceneRole(format!(
            "cannot stitch speaker {} with speaker {}",
            first.spec.speaker_id, other.spec.speaker_id
        )));
    }
    if samples.len() == 1 {
        return Ok(first.clone());
    }
    let cat = |f: &dyn Fn(&MixtureSample) -> &Waveform| {
        Waveform::from_vec_unchecked(samples.iter().flat_map(|s| f(s).samples().iter().copied()).collect())
    };
    let mut segments = Vec::new();
    let mut offset = 0;
    for s in samples {
        for seg in &s.segments {
            segments.push(Segment {
                start: offset + seg.start,
                len: seg.len,
                spec: seg.spec.clone(),
            });
        }
        offset += s.len();
    }
    Ok(MixtureSample {
        id: format!("{}-long{}", first.id, samples.len()),
        mic: cat(&|s| &s.mic),
        farend: cat(&|s| &s.farend),
        target_ref: cat(&|s| &s.target_ref),
        stems: Stems {
            target_reverb: cat(&|s| &s.stems.target_reverb),
            interferer: cat(&|s| &s.stems.interferer),
            noise: cat(&|s| &s.stems.noise),
            echo: cat(&|s| &s.stems.echo),
        },
        spec: first.spec.clone(),
        segments,
    })
}
