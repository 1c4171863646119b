use std::fs;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use super::batch::{make_minibatch_with, next_task, task_name, BatchOptions, MiniBatch};
use super::loss::{plcpa_loss_grad, LossParams};
use super::optim::Adam;
use crate::embed::{derive_seed, EMBEDDING_DIM};
use crate::error::{Error, IoContext, Result};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, Model, Network, Path, Task};
use crate::nn::Params;
use crate::scene::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Save a checkpoint every this many steps (0 saves only at the end).
    pub checkpoint_every: u64,
    /// Excerpt length in samples; `None` trains on whole samples.
    pub crop: Option<usize>,
    pub embedding_seed: u64,
    pub loss: LossParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 4,
            lr: 1e-3,
            seed: 0,
            checkpoint_every: 500,
            crop: Some(32000),
            embedding_seed: 0,
            loss: LossParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        self.loss.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub task: String,
    pub loss: f64,
}

/// Training data for each task. A single pool may serve all three.
#[derive(Clone, Debug, Default)]
pub struct TaskPools {
    pub aec: Dataset,
    pub pse: Dataset,
    pub pse_aec: Dataset,
}

impl TaskPools {
    pub fn shared(pool: Dataset) -> Self {
        Self {
            aec: pool.clone(),
            pse: pool.clone(),
            pse_aec: pool,
        }
    }

    pub fn for_task(&self, task: Task) -> &Dataset {
        match task {
            Task::Aec => &self.aec,
            Task::Pse => &self.pse,
            Task::PseAec => &self.pse_aec,
        }
    }
}

/// The task trained at `step` for a model built for `model_task`. Joint
/// models cycle through all three; single-task models only see their own.
pub fn scheduled_task(model_task: Task, step: u64) -> Task {
    match model_task {
        Task::PseAec => next_task(step),
        t => t,
    }
}

/// Gradients of the mean batch loss, without updating anything.
pub fn batch_gradients(model: &Model, batch: &MiniBatch, lp: &LossParams) -> Result<(f64, Network)> {
    let layout = model.layout();
    let path = if batch.task == Task::Aec && layout.bypass {
        Path::Bypass
    } else {
        Path::Full
    };
    let zero_emb = vec![0.0; EMBEDDING_DIM];
    let mut grad = model.net.zeros_like();
    let scale = 1.0 / batch.items.len() as f64;
    let mut total = 0.0;
    for (i, item) in batch.items.iter().enumerate() {
        // an embedding-free batch on a model that needs one gets zeros
        let emb = match &batch.embeddings {
            Some(e) => Some(e[i].vector()),
            None => Some(zero_emb.as_slice()),
        };
        let (out, trace) = model.forward_traced(&item.mic, Some(&item.farend), emb, path)?;
        let (loss, mut g) = plcpa_loss_grad(&out, &item.target, lp)?;
        g.iter_mut().for_each(|v| *v *= scale);
        model.backward(&trace, &g, &mut grad);
        total += loss;
    }
    Ok((total * scale, grad))
}

/// One optimizer update on one mini-batch. Returns the mean loss.
pub fn train_step(model: &mut Model, batch: &MiniBatch, adam: &mut Adam, lp: &LossParams, step: u64) -> Result<f64> {
    let (loss, grad) = batch_gradients(model, batch, lp)?;
    let task = task_name(batch.task).to_string();
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            task,
            detail: format!("loss {loss} over {} samples", batch.items.len()),
        });
    }
    if let Some(bad) = first_non_finite(&grad) {
        return Err(Error::NonFiniteLoss {
            step,
            task,
            detail: format!("non-finite gradient in {bad}"),
        });
    }
    adam.step(&mut model.net, &grad);
    Ok(loss)
}

fn first_non_finite(net: &Network) -> Option<String> {
    let mut bad = None;
    net.visit("", &mut |name, _, v| {
        if bad.is_none() && v.iter().any(|x| !x.is_finite()) {
            bad = Some(name.to_string());
        }
    });
    bad
}

pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    /// Number of steps completed.
    pub step: u64,
    pub config: TrainConfig,
    pub log: Vec<LossRecord>,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(&model.net, config.lr);
        Ok(Self {
            model,
            adam,
            step: 0,
            config,
            log: Vec::new(),
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = match ckpt.optimizer {
            Some(a) => a,
            None => Adam::new(&ckpt.model.net, config.lr),
        };
        Ok(Self {
            model: ckpt.model,
            adam,
            step: ckpt.step,
            config,
            log: Vec::new(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            step: self.step,
            optimizer: Some(self.adam.clone()),
        }
    }

    pub fn batch_for(&self, pools: &TaskPools, step: u64) -> Result<MiniBatch> {
        let task = scheduled_task(self.model.config.task, step);
        let options = BatchOptions {
            crop: self.config.crop,
            embedding_seed: self.config.embedding_seed,
        };
        make_minibatch_with(
            task,
            pools.for_task(task),
            self.config.batch_size,
            derive_seed(&format!("batch/{step}"), self.config.seed),
            &options,
        )
    }

    /// Runs one step and records its loss.
    pub fn step_once(&mut self, pools: &TaskPools) -> Result<LossRecord> {
        let batch = self.batch_for(pools, self.step)?;
        let loss = train_step(&mut self.model, &batch, &mut self.adam, &self.config.loss, self.step)?;
        let record = LossRecord {
            step: self.step,
            task: task_name(batch.task).to_string(),
            loss,
        };
        self.step += 1;
        self.log.push(record.clone());
        Ok(record)
    }

    /// Trains until `config.steps` steps are done.
    pub fn run(&mut self, pools: &TaskPools, mut on_step: impl FnMut(&LossRecord)) -> Result<()> {
        while self.step < self.config.steps {
            let r = self.step_once(pools)?;
            on_step(&r);
        }
        Ok(())
    }
}

pub fn latest_checkpoint_path(run_dir: &FsPath) -> PathBuf {
    run_dir.join("checkpoints").join("latest.ckpt")
}

pub fn loss_log_path(run_dir: &FsPath) -> PathBuf {
    run_dir.join("logs").join("loss.jsonl")
}

pub fn read_loss_log(path: impl AsRef<FsPath>) -> Result<Vec<LossRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).at(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Trains `model` inside `run_dir`, writing `logs/loss.jsonl` and
/// checkpoints under `checkpoints/`. With `resume`, training continues from
/// `checkpoints/latest.ckpt` and the loss log is cut back to that step.
/// Returns the path of the final checkpoint.
pub fn train(model: Model, config: &TrainConfig, pools: &TaskPools, run_dir: &FsPath, resume: bool) -> Result<PathBuf> {
    let latest = latest_checkpoint_path(run_dir);
    let log_path = loss_log_path(run_dir);
    let mut trainer = if resume && latest.exists() {
        let ckpt = load_checkpoint(&latest)?;
        if ckpt.model.config != model.config {
            return Err(Error::Config("checkpoint was trained with a different model configuration".into()));
        }
        Trainer::from_checkpoint(ckpt, config.clone())?
    } else {
        Trainer::new(model, config.clone())?
    };

    let mut kept = if trainer.step > 0 && log_path.exists() {
        read_loss_log(&log_path)?
    } else {
        Vec::new()
    };
    kept.retain(|r| r.step < trainer.step);
    let dir = log_path.parent().expect("log directory");
    fs::create_dir_all(dir).at(dir)?;
    let mut text = String::new();
    for r in &kept {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(&log_path, text).at(&log_path)?;
    let mut log = fs::OpenOptions::new().append(true).open(&log_path).at(&log_path)?;

    while trainer.step < config.steps {
        let r = trainer.step_once(pools)?;
        writeln!(log, "{}", serde_json::to_string(&r)?).at(&log_path)?;
        let every = config.checkpoint_every;
        if every > 0 && trainer.step % every == 0 && trainer.step < config.steps {
            let ckpt = trainer.checkpoint();
            save_checkpoint(&ckpt, run_dir.join("checkpoints").join(format!("step-{:08}.ckpt", trainer.step)))?;
            save_checkpoint(&ckpt, &latest)?;
        }
    }
    log.flush().at(&log_path)?;
    let ckpt = trainer.checkpoint();
    let last = run_dir.join("checkpoints").join(format!("step-{:08}.ckpt", trainer.step));
    save_checkpoint(&ckpt, &last)?;
    save_checkpoint(&ckpt, &latest)?;
    Ok(last)
}
