use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{erle, fst_frames, si_sdr, tsos, MetricsParams};
use crate::dsp::Waveform;
use crate::embed::{embedding_for, SpeakerEmbedding};
use crate::error::Result;
use crate::model::{enhance_streaming, Model, Path};
use crate::scene::{Dataset, MixtureSample, ScenarioKind};

/// Anything that maps a mixture to an enhanced signal.
pub trait Enhancer {
    fn enhance(&self, sample: &MixtureSample) -> Result<Waveform>;
}

impl<F> Enhancer for F
where
    F: Fn(&MixtureSample) -> Result<Waveform>,
{
    fn enhance(&self, sample: &MixtureSample) -> Result<Waveform> {
        self(sample)
    }
}

/// Runs a model through the streaming path. Speaker embeddings come from
/// `embeddings` when present, otherwise from [`embedding_for`].
pub struct ModelEnhancer<'a> {
    pub model: &'a Model,
    pub path: Path,
    pub embedding_seed: u64,
    pub embeddings: Option<&'a BTreeMap<String, SpeakerEmbedding>>,
    pub chunk: usize,
}

impl<'a> ModelEnhancer<'a> {
    pub fn new(model: &'a Model, path: Path, embedding_seed: u64) -> Self {
        Self {
            model,
            path,
            embedding_seed,
            embeddings: None,
            chunk: model.config.hop,
        }
    }
}

impl Enhancer for ModelEnhancer<'_> {
    fn enhance(&self, sample: &MixtureSample) -> Result<Waveform> {
        let id = &sample.spec.speaker_id;
        let emb = if self.model.layout().uses_embedding() {
            Some(match self.embeddings.and_then(|m| m.get(id)) {
                Some(e) => e.clone(),
                None => embedding_for(id, self.embedding_seed)?,
            })
        } else {
            None
        };
        enhance_streaming(
            self.model,
            &sample.mic,
            Some(&sample.farend),
            emb.as_ref(),
            self.path,
            self.chunk,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub erle_db: Option<f64>,
    pub tsos_rate: Option<f64>,
    pub si_sdr_db: f64,
    /// SI-SDR of the unprocessed microphone signal, for reference.
    pub mic_si_sdr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: Option<ScenarioKind>,
    pub count: usize,
    pub erle_db: Option<f64>,
    pub tsos_rate: Option<f64>,
    pub si_sdr_db: f64,
    pub mic_si_sdr_db: f64,
    pub samples: Vec<SampleMetrics>,
    pub notes: Vec<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn evaluate(
    enhancer: &dyn Enhancer,
    dataset: &Dataset,
    scenario: Option<ScenarioKind>,
    params: &MetricsParams,
) -> Result<MetricsReport> {
    params.validate()?;
    let mut samples = Vec::with_capacity(dataset.len());
    let mut notes = Vec::new();
    let mut note = |msg: String| {
        if !notes.contains(&msg) {
            notes.push(msg);
        }
    };
    for i in 0..dataset.len() {
        let sample = dataset.get(i)?;
        let out = enhancer.enhance(&sample)?;
        let erle_db = if sample.has_echo() {
            let mask = fst_frames(sample.stems.target_reverb.samples(), sample.stems.echo.samples(), params)?;
            if mask.iter().any(|&m| m) {
                Some(erle(sample.mic.samples(), out.samples(), &mask, params)?)
            } else {
                note(format!("{}: no far-end single-talk frames, erle skipped", sample.id));
                None
            }
        } else {
            note("erle skipped: samples without echo".to_string());
            None
        };
        let tsos_rate = match tsos(sample.target_ref.samples(), out.samples(), params) {
            Ok(r) => Some(r),
            Err(_) => {
                note(format!("{}: target never active, tsos skipped", sample.id));
                None
            }
        };
        samples.push(SampleMetrics {
            id: sample.id.clone(),
            erle_db,
            tsos_rate,
            si_sdr_db: si_sdr(sample.target_ref.samples(), out.samples())?,
            mic_si_sdr_db: si_sdr(sample.target_ref.samples(), sample.mic.samples())?,
        });
    }
    Ok(MetricsReport {
        scenario,
        count: samples.len(),
        erle_db: mean(samples.iter().filter_map(|s| s.erle_db)),
        tsos_rate: mean(samples.iter().filter_map(|s| s.tsos_rate)),
        si_sdr_db: mean(samples.iter().map(|s| s.si_sdr_db)).unwrap_or(f64::NAN),
        mic_si_sdr_db: mean(samples.iter().map(|s| s.mic_si_sdr_db)).unwrap_or(f64::NAN),
        samples,
        notes,
    })
}

impl MetricsReport {
    /// Aligned plain-text table: one row per sample and a mean row.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |v| format!("{v:.digits$}"));
        let mut rows = vec![[
            "sample".to_string(),
            "erle_db".to_string(),
            "tsos".to_string(),
            "si_sdr_db".to_string(),
            "mic_si_sdr_db".to_string(),
        ]];
        for s in &self.samples {
            rows.push([
                s.id.clone(),
                opt(s.erle_db, 2),
                opt(s.tsos_rate, 4),
                format!("{:.2}", s.si_sdr_db),
                format!("{:.2}", s.mic_si_sdr_db),
            ]);
        }
        rows.push([
            "mean".to_string(),
            opt(self.erle_db, 2),
            opt(self.tsos_rate, 4),
            format!("{:.2}", self.si_sdr_db),
            format!("{:.2}", self.mic_si_sdr_db),
        ]);
        let widths: Vec<usize> = (0..5).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        if let Some(k) = self.scenario {
            let _ = writeln!(out, "scenario {k}, {} samples", self.count);
        }
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}
