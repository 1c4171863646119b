use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{render_scene, stitch_long, MixtureSample, SceneSpec, SourceProvider};
use crate::embed::derive_seed;
use crate::error::{Error, Result};

/// Evaluation scenarios. TS1 has target, interferer and noise; TS2 target
/// and noise; TS3 the target alone. The `-echo` kinds add far-end echo.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    #[serde(rename = "ts1")]
    Ts1,
    #[serde(rename = "ts1-echo")]
    Ts1Echo,
    #[serde(rename = "ts2")]
    Ts2,
    #[serde(rename = "ts2-echo")]
    Ts2Echo,
    #[serde(rename = "ts3")]
    Ts3,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Ts1,
        ScenarioKind::Ts1Echo,
        ScenarioKind::Ts2,
        ScenarioKind::Ts2Echo,
        ScenarioKind::Ts3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Ts1 => "ts1",
            ScenarioKind::Ts1Echo => "ts1-echo",
            ScenarioKind::Ts2 => "ts2",
            ScenarioKind::Ts2Echo => "ts2-echo",
            ScenarioKind::Ts3 => "ts3",
        }
    }

    pub fn has_interferer(self) -> bool {
        matches!(self, ScenarioKind::Ts1 | ScenarioKind::Ts1Echo)
    }

    pub fn has_noise(self) -> bool {
        self != ScenarioKind::Ts3
    }

    pub fn has_echo(self) -> bool {
        matches!(self, ScenarioKind::Ts1Echo | ScenarioKind::Ts2Echo)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase().replace('_', "-"))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario {s:?} (ts1, ts1-echo, ts2, ts2-echo, ts3)")))
    }
}

/// Sampling ranges for scene parameters. Pairs are inclusive `(low, high)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranges {
    pub duration: f64,
    pub snr_db: (f64, f64),
    pub ser_db: (f64, f64),
    pub sir_db: (f64, f64),
    pub rt60: (f64, f64),
    pub target_distance: (f64, f64),
    pub interferer_distance: (f64, f64),
    pub echo_distance: (f64, f64),
    /// Echo delay in samples.
    pub echo_delay: (usize, usize),
    /// Speaker ids are drawn from `spk000` up to this count.
    pub speakers: usize,
}

impl Ranges {
    pub fn training() -> Self {
        Self {
            duration: 20.0,
            snr_db: (0.0, 15.0),
            ser_db: (-20.0, 40.0),
            sir_db: (0.0, 10.0),
            rt60: (0.2, 0.6),
            target_distance: (0.0, 1.3),
            interferer_distance: (2.5, 5.0),
            echo_distance: (0.1, 0.5),
            echo_delay: (0, 8000),
            speakers: 40,
        }
    }

    pub fn evaluation() -> Self {
        Self {
            duration: 10.0,
            ser_db: (0.0, 15.0),
            ..Self::training()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.speakers < 3 {
            return Err(Error::Config("scene ranges need at least 3 speakers".into()));
        }
        Ok(())
    }
}

fn pick(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo >= hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn draw_spec(ranges: &Ranges, seed: u64, interferer: bool, noise: bool, echo: bool) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..ranges.speakers).collect();
    ids.shuffle(&mut rng);
    let id = |i: usize| format!("spk{i:03}");
    let delay = if ranges.echo_delay.0 >= ranges.echo_delay.1 {
        ranges.echo_delay.0
    } else {
        rng.gen_range(ranges.echo_delay.0..=ranges.echo_delay.1)
    };
    SceneSpec {
        duration: ranges.duration,
        snr_db: Some(pick(&mut rng, ranges.snr_db)).filter(|_| noise),
        ser_db: pick(&mut rng, ranges.ser_db),
        sir_db: pick(&mut rng, ranges.sir_db),
        target_distance: pick(&mut rng, ranges.target_distance),
        interferer_distance: pick(&mut rng, ranges.interferer_distance),
        echo_distance: pick(&mut rng, ranges.echo_distance),
        has_interferer: interferer,
        has_echo: echo,
        echo_delay: delay,
        rt60: pick(&mut rng, ranges.rt60),
        seed,
        speaker_id: id(ids[0]),
        interferer_id: Some(id(ids[1])).filter(|_| interferer),
        farend_id: Some(id(ids[2])).filter(|_| echo),
    }
}

pub fn make_scenario_set(kind: ScenarioKind, count: usize, seed: u64) -> Result<Vec<SceneSpec>> {
    make_scenario_set_with(kind, count, seed, &Ranges::evaluation())
}

pub fn make_scenario_set_with(kind: ScenarioKind, count: usize, seed: u64, ranges: &Ranges) -> Result<Vec<SceneSpec>> {
    if count == 0 {
        return Err(Error::InvalidArgument("scenario set count must be at least 1".into()));
    }
    ranges.validate()?;
    Ok((0..count)
        .map(|i| {
            let s = derive_seed(&format!("set/{kind}/{i}"), seed);
            draw_spec(ranges, s, kind.has_interferer(), kind.has_noise(), kind.has_echo())
        })
        .collect())
}

/// Training scenes. Exactly half (rounded up) contain an interfering
/// talker; an independent half contain echo; all contain noise.
pub fn make_training_pool(count: usize, seed: u64) -> Result<Vec<SceneSpec>> {
    make_training_pool_with(count, seed, &Ranges::training())
}

pub fn make_training_pool_with(count: usize, seed: u64, ranges: &Ranges) -> Result<Vec<SceneSpec>> {
    if count < 2 {
        return Err(Error::InvalidArgument("training pool count must be at least 2".into()));
    }
    ranges.validate()?;
    let half = count.div_ceil(2);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("pool/layout", seed));
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);
    let mut interferer = vec![false; count];
    order[..half].iter().for_each(|&i| interferer[i] = true);
    order.shuffle(&mut rng);
    let mut echo = vec![false; count];
    order[..half].iter().for_each(|&i| echo[i] = true);
    Ok((0..count)
        .map(|i| draw_spec(ranges, derive_seed(&format!("pool/{i}"), seed), interferer[i], true, echo[i]))
        .collect())
}

pub fn render_all(specs: &[SceneSpec], sources: &dyn SourceProvider) -> Result<Vec<MixtureSample>> {
    specs.iter().map(|s| render_scene(s, sources)).collect()
}

/// A long sample of one target speaker whose acoustic conditions change
/// every `segment_secs` seconds.
pub fn make_long_sample(
    kind: ScenarioKind,
    segments: usize,
    segment_secs: f64,
    seed: u64,
    sources: &dyn SourceProvider,
) -> Result<MixtureSample> {
    let ranges = Ranges {
        duration: segment_secs,
        ..Ranges::evaluation()
    };
    let mut specs = make_scenario_set_with(kind, segments, seed, &ranges)?;
    let speaker = specs[0].speaker_id.clone();
    for s in &mut specs {
        if s.interferer_id.as_deref() == Some(speaker.as_str()) || s.farend_id.as_deref() == Some(speaker.as_str()) {
            // keep roles distinct after forcing the shared target
            let swap = std::mem::replace(&mut s.speaker_id, speaker.clone());
            if s.interferer_id.as_deref() == Some(speaker.as_str()) {
                s.interferer_id = Some(swap);
            } else {
                s.farend_id = Some(swap);
            }
        } else {
            s.speaker_id = speaker.clone();
        }
    }
    stitch_long(&render_all(&specs, sources)?)
}
