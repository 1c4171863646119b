use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::{embedding_for, SpeakerEmbedding};
use crate::error::{Error, Result};
use crate::model::Task;
use crate::scene::Dataset;

/// Task of the mini-batch at `step`: AEC, PSE, PSE-AEC, repeating.
pub fn next_task(step: u64) -> Task {
    match step % 3 {
        0 => Task::Aec,
        1 => Task::Pse,
        _ => Task::PseAec,
    }
}

pub fn task_name(task: Task) -> &'static str {
    match task {
        Task::Aec => "aec",
        Task::Pse => "pse",
        Task::PseAec => "pse_aec",
    }
}

/// Whether a sample with the given components may appear in a batch of
/// `task`.
pub fn eligible(task: Task, has_echo: bool, has_interferer: bool) -> bool {
    match task {
        Task::Aec => has_echo && !has_interferer,
        Task::Pse => !has_echo,
        Task::PseAec => has_echo,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub id: String,
    pub speaker_id: String,
    pub mic: Vec<f64>,
    pub farend: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiniBatch {
    pub task: Task,
    pub items: Vec<BatchItem>,
    /// Absent for AEC batches.
    pub embeddings: Option<Vec<SpeakerEmbedding>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[derive(Default)]
pub struct BatchOptions {
    /// Random excerpt length in samples; `None` uses whole samples.
    pub crop: Option<usize>,
    pub embedding_seed: u64,
}


pub fn make_minibatch(task: Task, pool: &Dataset, batch_size: usize, seed: u64) -> Result<MiniBatch> {
    make_minibatch_with(task, pool, batch_size, seed, &BatchOptions::default())
}

/// Draws `batch_size` distinct eligible samples.
pub fn make_minibatch_with(
    task: Task,
    pool: &Dataset,
    batch_size: usize,
    seed: u64,
    options: &BatchOptions,
) -> Result<MiniBatch> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let candidates: Vec<usize> = (0..pool.len())
        .filter(|&i| eligible(task, pool.has_echo(i), pool.has_interferer(i)))
        .collect();
    if candidates.len() < batch_size {
        return Err(Error::InsufficientSamples {
            task: task_name(task).to_string(),
            available: candidates.len(),
            needed: batch_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = candidates.choose_multiple(&mut rng, batch_size).copied().collect();
    let mut items = Vec::with_capacity(batch_size);
    for i in chosen {
        let s = pool.get(i)?;
        let len = s.len();
        let (start, n) = match options.crop {
            Some(c) if c < len => (rng.gen_range(0..=len - c), c),
            _ => (0, len),
        };
        let cut = |w: &[f64]| w[start..start + n].to_vec();
        items.push(BatchItem {
            id: s.id.clone(),
            speaker_id: s.spec.speaker_id.clone(),
            mic: cut(s.mic.samples()),
            farend: if task == Task::Pse {
                vec![0.0; n]
            } else {
                cut(s.farend.samples())
            },
            target: cut(s.target_ref.samples()),
        });
    }
    let embeddings = match task {
        Task::Aec => None,
        _ => Some(
            items
                .iter()
                .map(|it| embedding_for(&it.speaker_id, options.embedding_seed))
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    Ok(MiniBatch {
        task,
        items,
        embeddings,
    })
}
