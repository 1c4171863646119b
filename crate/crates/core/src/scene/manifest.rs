use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{render_scene, MixtureSample, ScenarioKind, SceneSpec, Segment, SourceProvider, Stems};
use crate::dsp::{read_wav, write_wav, WavFormat};
use crate::error::{Error, IoContext, Result};
use crate::model::write_atomic;

/// One line of a JSONL manifest. Paths are relative to the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub scenario: Option<ScenarioKind>,
    pub mic: String,
    pub farend: String,
    pub target_ref: String,
    pub target_reverb: String,
    pub interferer: String,
    pub noise: String,
    pub echo: String,
    pub spec: SceneSpec,
    pub segments: Vec<Segment>,
}

impl ManifestRecord {
    pub fn has_echo(&self) -> bool {
        self.segments.iter().any(|s| s.spec.has_echo)
    }

    pub fn has_interferer(&self) -> bool {
        self.segments.iter().any(|s| s.spec.has_interferer)
    }
}

const STEMS: [&str; 7] = ["mic", "farend", "target_ref", "target_reverb", "interferer", "noise", "echo"];

fn write_sample(dir: &Path, name: &str, sample: &MixtureSample, scenario: Option<ScenarioKind>) -> Result<ManifestRecord> {
    let waves = [
        &sample.mic,
        &sample.farend,
        &sample.target_ref,
        &sample.stems.target_reverb,
        &sample.stems.interferer,
        &sample.stems.noise,
        &sample.stems.echo,
    ];
    let mut paths = Vec::new();
    for (stem, wave) in STEMS.iter().zip(waves) {
        let rel = format!("{name}/{}.{stem}.wav", sample.id);
        let path = dir.join(&rel);
        let tmp = dir.join(format!("{rel}.tmp"));
        write_wav(&tmp, wave, WavFormat::Float32)?;
        fs::rename(&tmp, &path).at(&path)?;
        paths.push(rel);
    }
    let mut p = paths.into_iter();
    let mut next = || p.next().expect("seven stems");
    Ok(ManifestRecord {
        id: sample.id.clone(),
        scenario,
        mic: next(),
        farend: next(),
        target_ref: next(),
        target_reverb: next(),
        interferer: next(),
        noise: next(),
        echo: next(),
        spec: sample.spec.clone(),
        segments: sample.segments.clone(),
    })
}

fn finish_manifest(dir: &Path, name: &str, records: &[ManifestRecord]) -> Result<PathBuf> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    let path = dir.join(format!("{name}.jsonl"));
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Renders every spec and writes its stems as float WAV files under
/// `dir/name/`, then the manifest `dir/name.jsonl`. Samples are named
/// `name-0000`, `name-0001`, ...
pub fn write_dataset(
    dir: impl AsRef<Path>,
    name: &str,
    specs: &[SceneSpec],
    scenario: Option<ScenarioKind>,
    sources: &dyn SourceProvider,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join(name)).at(dir.join(name))?;
    let mut records = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let mut sample = render_scene(spec, sources)?;
        sample.id = format!("{name}-{i:04}");
        records.push(write_sample(dir, name, &sample, scenario)?);
    }
    finish_manifest(dir, name, &records)
}

/// Writes already rendered samples; see [`write_dataset`].
pub fn write_samples(
    dir: impl AsRef<Path>,
    name: &str,
    samples: &[MixtureSample],
    scenario: Option<ScenarioKind>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join(name)).at(dir.join(name))?;
    let records = samples
        .iter()
        .map(|s| write_sample(dir, name, s, scenario))
        .collect::<Result<Vec<_>>>()?;
    finish_manifest(dir, name, &records)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).at(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Reads a sample's audio; `base` is the manifest's directory.
pub fn load_sample(record: &ManifestRecord, base: impl AsRef<Path>) -> Result<MixtureSample> {
    let base = base.as_ref();
    let read = |rel: &str| read_wav(base.join(rel));
    let mic = read(&record.mic)?;
    let sample = MixtureSample {
        id: record.id.clone(),
        farend: read(&record.farend)?,
        target_ref: read(&record.target_ref)?,
        stems: Stems {
            target_reverb: read(&record.target_reverb)?,
            interferer: read(&record.interferer)?,
            noise: read(&record.noise)?,
            echo: read(&record.echo)?,
        },
        spec: record.spec.clone(),
        segments: record.segments.clone(),
        mic,
    };
    let n = sample.mic.len();
    for w in [&sample.farend, &sample.target_ref, &sample.stems.echo] {
        if w.len() != n {
            return Err(Error::LengthMismatch(n, w.len()));
        }
    }
    Ok(sample)
}

#[derive(Clone, Debug)]
enum Item {
    Memory(MixtureSample),
    Disk { record: ManifestRecord, base: PathBuf },
}

/// Samples held in memory or read from disk on demand.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    items: Vec<Item>,
}

impl Dataset {
    pub fn from_samples(samples: Vec<MixtureSample>) -> Self {
        Self {
            items: samples.into_iter().map(Item::Memory).collect(),
        }
    }

    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(Self {
            items: read_manifest(path)?
                .into_iter()
                .map(|record| Item::Disk {
                    record,
                    base: base.clone(),
                })
                .collect(),
        })
    }

    pub fn extend(&mut self, other: Dataset) {
        self.items.extend(other.items);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn has_echo(&self, i: usize) -> bool {
        match &self.items[i] {
            Item::Memory(s) => s.has_echo(),
            Item::Disk { record, .. } => record.has_echo(),
        }
    }

    pub fn has_interferer(&self, i: usize) -> bool {
        match &self.items[i] {
            Item::Memory(s) => s.has_interferer(),
            Item::Disk { record, .. } => record.has_interferer(),
        }
    }

    pub fn speaker_id(&self, i: usize) -> &str {
        match &self.items[i] {
            Item::Memory(s) => &s.spec.speaker_id,
            Item::Disk { record, .. } => &record.spec.speaker_id,
        }
    }

    pub fn get(&self, i: usize) -> Result<Cow<'_, MixtureSample>> {
        match &self.items[i] {
            Item::Memory(s) => Ok(Cow::Borrowed(s)),
            Item::Disk { record, base } => load_sample(record, base).map(Cow::Owned),
        }
    }
}

