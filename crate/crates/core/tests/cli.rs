use std::fs;
use std::path::{Path, PathBuf};

use pseaec::cli::run_from;
use pseaec::dsp::{read_wav, write_wav, WavFormat};
use pseaec::embed::embedding_for;
use pseaec::model::load_checkpoint;
use pseaec::scene::{read_manifest, Dataset};
use pseaec::train::{loss_log_path, read_loss_log};
use pseaec::Error;

fn cli(args: &[&str]) -> pseaec::Result<String> {
    let mut out = Vec::new();
    let mut full = vec!["pseaec"];
    full.extend_from_slice(args);
    run_from(full, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Training pool (1 s scenes) plus small ts1, ts2-echo and ts3 sets.
/// Echo scenes are longer so some frames hold far-end single talk.
fn data(dir: &Path) -> PathBuf {
    let d = dir.join("data");
    cli(&["--out-dir", s(&d), "--seed", "4", "gen-data", "--count", "12", "--duration", "1"]).unwrap();
    for (sc, secs) in [("ts1", "1"), ("ts2-echo", "4"), ("ts3", "1")] {
        cli(&["--out-dir", s(&d), "--seed", "4", "gen-data", "--scenario", sc, "--count", "2", "--duration", secs]).unwrap();
    }
    d
}

fn train_args<'a>(run: &'a Path, manifest: &'a Path, steps: &'a str) -> Vec<&'a str> {
    vec![
        "--out-dir",
        s(run),
        "train",
        "--tiny",
        "--manifest",
        s(manifest),
        "--steps",
        steps,
        "--batch-size",
        "2",
        "--crop",
        "0",
    ]
}

#[test]
fn gen_data_ts3_has_only_the_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["--out-dir", s(dir.path()), "gen-data", "--scenario", "ts3", "--count", "4", "--duration", "1"]).unwrap();
    let manifest = PathBuf::from(out.trim());
    let records = read_manifest(&manifest).unwrap();
    assert_eq!(records.len(), 4);
    let ds = Dataset::from_manifest(&manifest).unwrap();
    for i in 0..ds.len() {
        let x = ds.get(i).unwrap();
        assert!(x.stems.echo.is_silent() && x.stems.noise.is_silent() && x.stems.interferer.is_silent());
        assert!(!x.stems.target_reverb.is_silent());
    }
    assert!(dir.path().join("ts3.config.json").exists());
}

#[test]
fn gen_data_is_reproducible_and_rejects_zero_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        cli(&["--out-dir", s(d.path()), "--seed", "8", "gen-data", "--scenario", "ts1-echo", "--count", "2", "--duration", "1"])
            .unwrap();
    }
    let read = |d: &Path| fs::read(d.join("ts1-echo.jsonl")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let err = cli(&["--out-dir", s(a.path()), "gen-data", "--count", "0"]).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
    assert!(cli(&["gen-data", "--scenario", "ts9", "--count", "1"]).is_err());
}

#[test]
fn train_eval_enhance_round() {
    let dir = tempfile::tempdir().unwrap();
    let d = data(dir.path());
    let run = dir.path().join("run");
    cli(&train_args(&run, &d.join("train.jsonl"), "3")).unwrap();
    let log = read_loss_log(loss_log_path(&run)).unwrap();
    let tasks: Vec<&str> = log.iter().map(|r| r.task.as_str()).collect();
    assert_eq!(tasks, ["aec", "pse", "pse_aec"]);
    assert!(run.join("config.json").exists() && run.join("reports").is_dir());

    // reports: erle only where there is echo; identical on rerun
    let eval = |sc: &str| {
        cli(&["--out-dir", s(&run), "eval", "--manifest", s(&d.join(format!("{sc}.jsonl")))]).unwrap();
        fs::read_to_string(run.join("reports").join(format!("{sc}.json"))).unwrap()
    };
    let echo: pseaec::metrics::MetricsReport = serde_json::from_str(&eval("ts2-echo")).unwrap();
    let plain: pseaec::metrics::MetricsReport = serde_json::from_str(&eval("ts1")).unwrap();
    assert!(echo.samples.iter().any(|x| x.erle_db.is_some()));
    assert!(plain.erle_db.is_none() && plain.samples.iter().all(|x| x.erle_db.is_none()));
    let first = eval("ts1");
    assert_eq!(first, eval("ts1"));
    assert!(run.join("reports/ts1.txt").exists());

    // enhance without a far-end: zeros, same length, matches offline forward
    let mic = d.join("ts1/ts1-0000.mic.wav");
    let out = dir.path().join("enhanced.wav");
    cli(&["enhance", "--checkpoint", s(&run.join("checkpoints/latest.ckpt")), "--mic", s(&mic), "--speaker", "spk001", "--out", s(&out)])
        .unwrap();
    let y = read_wav(&out).unwrap();
    let x = read_wav(&mic).unwrap();
    assert_eq!(y.len(), x.len());
    let model = load_checkpoint(run.join("checkpoints/latest.ckpt")).unwrap().model;
    let emb = embedding_for("spk001", 0).unwrap();
    let offline = model.forward_full(&x, None, Some(&emb)).unwrap();
    let rms = (y.samples().iter().zip(offline.samples()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    assert!(rms < 1e-5, "rms {rms}");

    let err = cli(&["enhance", "--checkpoint", s(&run.join("checkpoints/latest.ckpt")), "--mic", s(&mic), "--out", s(&out)]).unwrap_err();
    assert!(matches!(err, Error::MissingEmbedding));
}

#[test]
fn resume_after_interruption_matches_unbroken_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = data(dir.path());
    let manifest = d.join("train.jsonl");
    let whole = dir.path().join("whole");
    cli(&train_args(&whole, &manifest, "6")).unwrap();

    let cut = dir.path().join("cut");
    cli(&train_args(&cut, &manifest, "4")).unwrap();
    let mut args = train_args(&cut, &manifest, "6");
    args.push("--resume");
    cli(&args).unwrap();

    assert_eq!(
        read_loss_log(loss_log_path(&cut)).unwrap(),
        read_loss_log(loss_log_path(&whole)).unwrap()
    );
    assert_eq!(
        fs::read(cut.join("checkpoints/latest.ckpt")).unwrap(),
        fs::read(whole.join("checkpoints/latest.ckpt")).unwrap()
    );
}

#[test]
fn naive_ablation_has_no_align_block() {
    let dir = tempfile::tempdir().unwrap();
    let d = data(dir.path());
    let run = dir.path().join("naive");
    let manifest = d.join("train.jsonl");
    let mut args = train_args(&run, &manifest, "1");
    args.extend(["--variant", "e3net", "--ablation", "naive"]);
    cli(&args).unwrap();
    let model = load_checkpoint(run.join("checkpoints/latest.ckpt")).unwrap().model;
    assert!(model.net.align.is_none());
    assert_eq!(model.config.label(), "e3net/pse_aec/naive");
}

#[test]
fn missing_task_data_names_the_task() {
    let dir = tempfile::tempdir().unwrap();
    let d = data(dir.path());
    let err = cli(&train_args(&dir.path().join("r"), &d.join("ts3.jsonl"), "3")).unwrap_err();
    match err {
        Error::InsufficientSamples { task, .. } => assert!(task.starts_with("aec"), "{task}"),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn eval_refuses_bypass_without_one_and_mismatched_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = data(dir.path());
    let run = dir.path().join("pse");
    let manifest = d.join("train.jsonl");
    let mut args = train_args(&run, &manifest, "1");
    args.extend(["--task", "pse"]);
    cli(&args).unwrap();
    let m = d.join("ts1.jsonl");
    let err = cli(&["--out-dir", s(&run), "eval", "--manifest", s(&m), "--path", "bypass"]).unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)));

    let cfg = dir.path().join("other.json");
    fs::write(&cfg, r#"{"model": {"variant": "vfl"}}"#).unwrap();
    let err = cli(&["--config", s(&cfg), "--out-dir", s(&run), "eval", "--manifest", s(&m)]).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn enhance_rejects_wrong_rate() {
    let dir = tempfile::tempdir().unwrap();
    let d = data(dir.path());
    let run = dir.path().join("run");
    cli(&train_args(&run, &d.join("train.jsonl"), "1")).unwrap();
    let bad = dir.path().join("bad.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 8000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&bad, spec).unwrap();
    for _ in 0..800 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
    let out = dir.path().join("o.wav");
    let ckpt = run.join("checkpoints/latest.ckpt");
    let err = cli(&["enhance", "--checkpoint", s(&ckpt), "--mic", s(&bad), "--speaker", "a", "--out", s(&out)]).unwrap_err();
    assert!(matches!(err, Error::SampleRate(8000)));

    let mic = read_wav(d.join("ts1/ts1-0000.mic.wav")).unwrap();
    let short = dir.path().join("short.wav");
    write_wav(&short, &pseaec::dsp::Waveform::zeros(mic.len() - 160), WavFormat::Pcm16).unwrap();
    let err = cli(&[
        "enhance",
        "--checkpoint",
        s(&ckpt),
        "--mic",
        s(&d.join("ts1/ts1-0000.mic.wav")),
        "--farend",
        s(&short),
        "--speaker",
        "a",
        "--out",
        s(&out),
    ])
    .unwrap_err();
    assert!(matches!(err, Error::LengthMismatch(..)));
}

#[test]
fn inspect_reports_counts_and_causality() {
    let text = cli(&["inspect"]).unwrap();
    assert!(text.contains("model e3net/pse_aec/sc"));
    assert!(text.contains("(3.46 M)"), "{text}");
    assert!(text.contains("causality self-test pass"));
    assert!(text.contains("align window 100 frames"));
    let text = cli(&["inspect", "--variant", "vfl", "--task", "aec"]).unwrap();
    assert!(text.contains("(8.32 M)"), "{text}");
    let text = cli(&["inspect", "--task", "pse", "--tiny"]).unwrap();
    assert!(text.contains("align window none"));
}
