//! Speaker embeddings: a deterministic synthetic stand-in for a d-vector
//! extractor, plus a plain-text file format for externally computed ones.
//!
//! File format: one speaker per line, `id<TAB>v0 v1 ... v127`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

pub const EMBEDDING_DIM: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbedding {
    pub speaker_id: String,
    vector: Vec<f64>,
}

impl SpeakerEmbedding {
    /// Normalizes `vector` to unit length.
    pub fn new(speaker_id: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        let speaker_id = speaker_id.into();
        if vector.len() != EMBEDDING_DIM {
            return Err(Error::Embedding(format!(
                "speaker {speaker_id}: dimension {} (expected {EMBEDDING_DIM})",
                vector.len()
            )));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Embedding(format!("speaker {speaker_id}: zero or non-finite vector")));
        }
        Ok(Self {
            speaker_id,
            vector: vector.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> f64 {
        self.vector.iter().zip(&other.vector).map(|(a, b)| a * b).sum()
    }
}

/// Derives a 64-bit seed from a string label and an integer seed.
pub(crate) fn derive_seed(label: &str, seed: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    hasher.update(seed.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Seeded random unit vector for `speaker_id`.
pub fn embedding_for(speaker_id: &str, seed: u64) -> Result<SpeakerEmbedding> {
    if speaker_id.is_empty() {
        return Err(Error::Embedding("empty speaker id".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&format!("embedding/{speaker_id}"), seed));
    let vector = (0..EMBEDDING_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    SpeakerEmbedding::new(speaker_id, vector)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<BTreeMap<String, SpeakerEmbedding>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).at(path)?;
    parse_embeddings(&text)
}

pub fn parse_embeddings(text: &str) -> Result<BTreeMap<String, SpeakerEmbedding>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::Embedding(format!("line {}: missing TAB after id", lineno + 1)))?;
        let vector = values
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::Embedding(format!("line {}: {e}", lineno + 1)))?;
        let emb = SpeakerEmbedding::new(id, vector)?;
        if out.insert(id.to_string(), emb).is_some() {
            return Err(Error::Embedding(format!("duplicate speaker id {id}")));
        }
    }
    Ok(out)
}

pub fn format_embeddings<'a>(embeddings: impl IntoIterator<Item = &'a SpeakerEmbedding>) -> String {
    let mut out = String::new();
    for emb in embeddings {
        out.push_str(&emb.speaker_id);
        out.push('\t');
        for (i, v) in emb.vector.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{v:e}").expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn save_embeddings<'a>(
    path: impl AsRef<Path>,
    embeddings: impl IntoIterator<Item = &'a SpeakerEmbedding>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_embeddings(embeddings)).at(path)
}
