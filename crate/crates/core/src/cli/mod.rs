//! Command-line front end: data generation, training, evaluation,
//! single-file enhancement and model inspection.
//!
//! Every command resolves a [`RunConfig`] from defaults, `--config` and
//! flags, and writes it next to its outputs.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path as FsPath, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{Loaded, RunConfig};

use crate::dsp::{read_wav, write_wav, WavFormat, Waveform};
use crate::embed::{embedding_for, load_embeddings};
use crate::error::{Error, IoContext, Result};
use crate::metrics::{evaluate, ModelEnhancer};
use crate::model::{
    build_model, enhance_streaming, load_checkpoint, Ablation, Model, ModelConfig, Path, Task, Variant,
};
use crate::scene::{
    make_scenario_set_with, make_training_pool_with, write_dataset, Dataset, ScenarioKind, SurrogateSources,
};
use crate::train::{eligible, latest_checkpoint_path, task_name, train, TaskPools};

#[derive(Parser, Debug)]
#[command(name = "pseaec", version, about = "Joint personalized speech enhancement and echo cancellation")]
pub struct Cli {
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output (data or run) directory.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a training pool or an evaluation set to WAV files plus a manifest.
    GenData(GenDataArgs),
    /// Train a model on one or more manifests.
    Train(TrainArgs),
    /// Score a checkpoint on evaluation manifests.
    Eval(EvalArgs),
    /// Enhance one recording through the streaming path.
    Enhance(EnhanceArgs),
    /// Print parameter counts and run a causality self-test.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SetKind {
    Train,
    Ts1,
    #[value(name = "ts1-echo")]
    Ts1Echo,
    Ts2,
    #[value(name = "ts2-echo")]
    Ts2Echo,
    Ts3,
}

impl SetKind {
    fn scenario(self) -> Option<ScenarioKind> {
        match self {
            SetKind::Train => None,
            SetKind::Ts1 => Some(ScenarioKind::Ts1),
            SetKind::Ts1Echo => Some(ScenarioKind::Ts1Echo),
            SetKind::Ts2 => Some(ScenarioKind::Ts2),
            SetKind::Ts2Echo => Some(ScenarioKind::Ts2Echo),
            SetKind::Ts3 => Some(ScenarioKind::Ts3),
        }
    }
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Training pool or evaluation scenario.
    #[arg(long, value_enum, default_value = "train")]
    pub scenario: SetKind,
    #[arg(long)]
    pub count: usize,
    /// Scene length in seconds (default from the ranges).
    #[arg(long)]
    pub duration: Option<f64>,
    /// Manifest name (default: the scenario name).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    E3net,
    Vfl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Aec,
    Pse,
    #[value(name = "pse_aec", alias = "pse-aec")]
    PseAec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AblationArg {
    Naive,
    #[value(name = "no_sc", alias = "no-sc")]
    NoSc,
    Sc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PathArg {
    Full,
    Bypass,
}

impl From<PathArg> for Path {
    fn from(p: PathArg) -> Self {
        match p {
            PathArg::Full => Path::Full,
            PathArg::Bypass => Path::Bypass,
        }
    }
}

/// Flags that select or resize a model.
#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Joint-model ablation; implies --task pse_aec.
    #[arg(long, value_enum)]
    pub ablation: Option<AblationArg>,
    /// Use the desk-scale sizes instead of the full ones.
    #[arg(long)]
    pub tiny: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training manifest (repeatable); replaces the configured list.
    #[arg(long = "manifest")]
    pub manifests: Vec<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Excerpt length in samples; 0 trains on whole samples.
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Continue from checkpoints/latest.ckpt in the run directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint (default: the run directory's latest).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluation manifest (repeatable); replaces the configured list.
    #[arg(long = "manifest")]
    pub manifests: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    pub path: PathArg,
}

#[derive(Args, Debug)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub mic: PathBuf,
    #[arg(long)]
    pub farend: Option<PathBuf>,
    /// Target speaker id, looked up in the embedding file or turned into a
    /// seeded surrogate embedding.
    #[arg(long)]
    pub speaker: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    pub path: PathArg,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Inspect a saved model instead of a configuration.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command,
/// writing human-readable output to `out`.
pub fn run_from<I, T>(args: I, out: &mut dyn std::io::Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::InvalidArgument(first_line(&e.to_string())))?;
    run(cli, out)
}

fn first_line(s: &str) -> String {
    s.lines()
        .next()
        .unwrap_or("")
        .trim_start_matches("error: ")
        .to_string()
}

pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<()> {
    let loaded = RunConfig::load(cli.config.as_deref())?;
    let mut config = loaded.config;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.train.seed = config.seed;
    let out_dir = cli.out_dir;
    let mut text = String::new();
    match cli.command {
        Command::GenData(a) => gen_data(&mut config, &a, &out_dir, &mut text)?,
        Command::Train(a) => cmd_train(&mut config, &a, &out_dir, &mut text)?,
        Command::Eval(a) => cmd_eval(&mut config, loaded.model_given, &a, &out_dir, &mut text)?,
        Command::Enhance(a) => cmd_enhance(&config, &a, &mut text)?,
        Command::Inspect(a) => cmd_inspect(&mut config, &a, &mut text)?,
    }
    out.write_all(text.as_bytes()).at("<stdout>")?;
    Ok(())
}

fn apply_model_args(config: &mut ModelConfig, a: &ModelArgs) {
    let variant = match a.variant {
        Some(VariantArg::E3net) => Variant::E3net,
        Some(VariantArg::Vfl) => Variant::Vfl,
        None => config.variant,
    };
    let ablation = match a.ablation {
        Some(AblationArg::Naive) => Some(Ablation::Naive),
        Some(AblationArg::NoSc) => Some(Ablation::NoSc),
        Some(AblationArg::Sc) => Some(Ablation::Sc),
        None => config.ablation,
    };
    let task = match (a.task, a.ablation) {
        (Some(TaskArg::Aec), _) => Task::Aec,
        (Some(TaskArg::Pse), _) => Task::Pse,
        (Some(TaskArg::PseAec), _) | (None, Some(_)) => Task::PseAec,
        (None, None) => config.task,
    };
    let ablation = if task == Task::PseAec {
        ablation.or(Some(Ablation::Sc))
    } else {
        None
    };
    if a.tiny {
        *config = ModelConfig::tiny(variant, task, ablation);
    } else if a.variant.is_some() || a.task.is_some() || a.ablation.is_some() {
        config.variant = variant;
        config.task = task;
        config.ablation = ablation;
    }
}

fn gen_data(config: &mut RunConfig, a: &GenDataArgs, out_dir: &FsPath, text: &mut String) -> Result<()> {
    if a.count == 0 {
        return Err(Error::InvalidArgument("--count must be at least 1".into()));
    }
    let scenario = a.scenario.scenario();
    let ranges = match scenario {
        Some(_) => &mut config.evaluation_ranges,
        None => &mut config.training_ranges,
    };
    if let Some(d) = a.duration {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidArgument(format!("--duration {d} must be positive")));
        }
        ranges.duration = d;
    }
    let specs = match scenario {
        Some(kind) => make_scenario_set_with(kind, a.count, config.seed, ranges)?,
        None => make_training_pool_with(a.count, config.seed, ranges)?,
    };
    let name = a
        .name
        .clone()
        .unwrap_or_else(|| scenario.map_or("train".to_string(), |k| k.name().to_string()));
    let manifest = write_dataset(out_dir, &name, &specs, scenario, &SurrogateSources)?;
    config.save(&out_dir.join(format!("{name}.config.json")))?;
    let _ = writeln!(text, "{}", manifest.display());
    Ok(())
}

fn load_pool(paths: &[PathBuf]) -> Result<Dataset> {
    let mut pool: Option<Dataset> = None;
    for p in paths {
        let d = Dataset::from_manifest(p)?;
        match &mut pool {
            Some(all) => all.extend(d),
            None => pool = Some(d),
        }
    }
    pool.ok_or_else(|| Error::InvalidArgument("no training manifest given (--manifest)".into()))
}

fn tasks_of(task: Task) -> Vec<Task> {
    match task {
        Task::PseAec => vec![Task::Aec, Task::Pse, Task::PseAec],
        t => vec![t],
    }
}

fn cmd_train(config: &mut RunConfig, a: &TrainArgs, run_dir: &FsPath, text: &mut String) -> Result<()> {
    apply_model_args(&mut config.model, &a.model);
    if !a.manifests.is_empty() {
        config.manifests = a.manifests.clone();
    }
    let t = &mut config.train;
    if let Some(v) = a.steps {
        t.steps = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.crop {
        t.crop = (v > 0).then_some(v);
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    config.validate()?;

    let pool = load_pool(&config.manifests)?;
    for task in tasks_of(config.model.task) {
        let available = (0..pool.len())
            .filter(|&i| eligible(task, pool.has_echo(i), pool.has_interferer(i)))
            .count();
        if available < config.train.batch_size {
            let need = match task {
                Task::Aec => "scenes with echo and no interferer",
                Task::Pse => "scenes without echo",
                Task::PseAec => "scenes with echo",
            };
            return Err(Error::InsufficientSamples {
                task: format!("{} (needs {need})", task_name(task)),
                available,
                needed: config.train.batch_size,
            });
        }
    }

    let config_path = run_dir.join("config.json");
    if a.resume && config_path.exists() {
        let previous = RunConfig::load(Some(&config_path))?.config;
        if previous.model != config.model {
            return Err(Error::Config("--resume with a different model configuration".into()));
        }
    }
    fs::create_dir_all(run_dir.join("reports")).at(run_dir.join("reports"))?;
    config.save(&config_path)?;
    let model = build_model(config.model.clone(), config.seed)?;
    let last = train(model, &config.train, &TaskPools::shared(pool), run_dir, a.resume)?;
    let log = crate::train::read_loss_log(crate::train::loss_log_path(run_dir))?;
    if let Some(r) = log.last() {
        let _ = writeln!(text, "step {} {} loss {:.6}", r.step, r.task, r.loss);
    }
    let _ = writeln!(text, "{}", last.display());
    Ok(())
}

fn cmd_eval(
    config: &mut RunConfig,
    model_given: bool,
    a: &EvalArgs,
    run_dir: &FsPath,
    text: &mut String,
) -> Result<()> {
    let ckpt_path = a.checkpoint.clone().unwrap_or_else(|| latest_checkpoint_path(run_dir));
    let model = load_checkpoint(&ckpt_path)?.model;
    if model_given && config.model != model.config {
        return Err(Error::Config(format!(
            "checkpoint {} holds {}, configuration asks for {}",
            ckpt_path.display(),
            model.config.label(),
            config.model.label()
        )));
    }
    config.model = model.config.clone();
    if !a.manifests.is_empty() {
        config.eval_manifests = a.manifests.clone();
    }
    if config.eval_manifests.is_empty() {
        return Err(Error::InvalidArgument("no evaluation manifest given (--manifest)".into()));
    }
    let path: Path = a.path.into();
    if path == Path::Bypass && !model.layout().bypass {
        return Err(Error::Unsupported(format!("{} has no bypass path", model.config.label())));
    }
    config.validate()?;
    let embeddings = config.embeddings.as_ref().map(load_embeddings).transpose()?;
    let mut enhancer = ModelEnhancer::new(&model, path, config.train.embedding_seed);
    enhancer.embeddings = embeddings.as_ref();

    let reports = run_dir.join("reports");
    for manifest in &config.eval_manifests {
        let dataset = Dataset::from_manifest(manifest)?;
        let scenario = crate::scene::read_manifest(manifest)?.first().and_then(|r| r.scenario);
        let report = evaluate(&enhancer, &dataset, scenario, &config.metrics)?;
        let stem = manifest
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "report".into());
        let json = reports.join(format!("{stem}.json"));
        crate::model::write_atomic(&json, (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
        crate::model::write_atomic(&reports.join(format!("{stem}.txt")), report.to_table().as_bytes())?;
        let _ = write!(text, "{}", report.to_table());
        let _ = writeln!(text, "{}", json.display());
    }
    config.save(&reports.join("eval.config.json"))
}

fn cmd_enhance(config: &RunConfig, a: &EnhanceArgs, text: &mut String) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?.model;
    let mic = read_wav(&a.mic)?;
    let emb = if model.layout().uses_embedding() {
        let id = a.speaker.as_deref().ok_or(Error::MissingEmbedding)?;
        let from_file = match &config.embeddings {
            Some(p) => load_embeddings(p)?.remove(id),
            None => None,
        };
        Some(match from_file {
            Some(e) => e,
            None => embedding_for(id, config.train.embedding_seed)?,
        })
    } else {
        None
    };
    let farend = match &a.farend {
        Some(p) => {
            let f = read_wav(p)?;
            if f.len() != mic.len() {
                return Err(Error::LengthMismatch(mic.len(), f.len()));
            }
            Some(f)
        }
        None => {
            if model.layout().far_branch {
                eprintln!("warning: no --farend given; treating the far-end signal as silence");
            }
            None
        }
    };
    let zeros = Waveform::zeros(mic.len());
    let far = farend.as_ref().unwrap_or(&zeros);
    let out = enhance_streaming(&model, &mic, Some(far), emb.as_ref(), a.path.into(), model.config.hop)?;
    write_wav(&a.out, &out, WavFormat::Float32)?;
    let _ = writeln!(text, "{} ({} samples)", a.out.display(), out.len());
    Ok(())
}

/// Paired forwards with everything after a hop-aligned cut replaced; the
/// outputs must agree up to `cut - (win - hop)`.
pub fn causality_self_test(model: &Model, trials: usize, seed: u64) -> Result<f64> {
    let (win, hop) = (model.config.win, model.config.hop);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = embedding_for("self-test", seed)?;
    let paths: &[Path] = if model.layout().bypass {
        &[Path::Full, Path::Bypass]
    } else {
        &[Path::Full]
    };
    let mut worst: f64 = 0.0;
    for &path in paths {
        for _ in 0..trials {
            let len = hop * rng.gen_range(win / hop + 4..win / hop + 24);
            let cut = hop * rng.gen_range(win / hop + 1..len / hop);
            let a: Vec<f64> = (0..2 * len).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let mut b = a.clone();
            for i in (cut..len).chain(len + cut..2 * len) {
                b[i] = rng.gen_range(-0.5..0.5);
            }
            let run = |x: &[f64]| model.forward_traced(&x[..len], Some(&x[len..]), Some(emb.vector()), path);
            let (ya, _) = run(&a)?;
            let (yb, _) = run(&b)?;
            for i in 0..cut - (win - hop) {
                worst = worst.max((ya[i] - yb[i]).abs());
            }
        }
    }
    Ok(worst)
}

fn cmd_inspect(config: &mut RunConfig, a: &InspectArgs, text: &mut String) -> Result<()> {
    let model = match &a.checkpoint {
        Some(p) => load_checkpoint(p)?.model,
        None => {
            apply_model_args(&mut config.model, &a.model);
            build_model(config.model.clone(), config.seed)?
        }
    };
    let c = &model.config;
    let n = model.param_count();
    let _ = writeln!(text, "model {}", c.label());
    let _ = writeln!(text, "parameters {n} ({:.2} M)", n as f64 / 1e6);
    for (name, count) in model.breakdown() {
        let _ = writeln!(text, "  {name:<12} {count:>10}");
    }
    if model.layout().align {
        let ms = c.align_window as f64 * c.hop as f64 / 16.0;
        let _ = writeln!(text, "align window {} frames ({ms:.0} ms)", c.align_window);
    } else {
        let _ = writeln!(text, "align window none");
    }
    let worst = causality_self_test(&model, 3, config.seed)?;
    let verdict = if worst < 1e-6 { "pass" } else { "fail" };
    let _ = writeln!(text, "causality self-test {verdict} (max diff {worst:.1e})");
    Ok(())
}

/// Entry point for the binary: runs and maps errors to a single line on
/// stderr plus a nonzero status.
pub fn main_with_args(args: Vec<std::ffi::OsString>) -> i32 {
    match Cli::try_parse_from(&args) {
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            0
        }
        Err(e) => {
            eprintln!("error[usage]: {}", first_line(&e.to_string()));
            2
        }
        Ok(cli) => match run(cli, &mut std::io::stdout()) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
                1
            }
        },
    }
}
