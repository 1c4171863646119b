//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use ndarray::Array2;
use pseaec::embed::embedding_for;
use pseaec::model::{build_model, Ablation, Model, ModelConfig, Path, Task, Variant};
use pseaec::nn::{AlignBlock, Decoder, Encoder, Lstm, MaskHead, Params, ResidualBlock, TemporalBlock};
use pseaec::scene::{render_all, MixtureSample, SceneSpec, SurrogateSources};
use pseaec::train::{plcpa_loss, plcpa_loss_grad, LossParams, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn noise(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn noise2(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a * b).sum()
}

/// Central differences over (a sample of) the parameters of `layer`.
/// `loss` evaluates the scalar objective for a perturbed copy and `analytic`
/// holds the hand-written gradient. `limit` caps the number of coordinates.
pub fn check_params<P: Params + Clone>(
    layer: &P,
    analytic: &P,
    limit: Option<usize>,
    seed: u64,
    mut loss: impl FnMut(&P) -> f64,
) -> f64 {
    let theta = layer.flatten();
    let grad = analytic.flatten();
    let coords: Vec<usize> = match limit {
        Some(k) if k < theta.len() => {
            let mut r = rng(seed);
            (0..k).map(|_| r.gen_range(0..theta.len())).collect()
        }
        _ => (0..theta.len()).collect(),
    };
    let mut probe = layer.clone();
    let mut worst: f64 = 0.0;
    for i in coords {
        let mut t = theta.clone();
        t[i] = theta[i] + FD_STEP;
        probe.assign(&t);
        let up = loss(&probe);
        t[i] = theta[i] - FD_STEP;
        probe.assign(&t);
        let down = loss(&probe);
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Central differences over every entry of an input vector.
pub fn check_input(x: &[f64], analytic: &[f64], loss: impl Fn(&[f64]) -> f64) -> f64 {
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = loss(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = loss(&probe);
        probe[i] = x[i];
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

fn as_matrix(v: &[f64], like: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_vec(like.raw_dim(), v.to_vec()).unwrap()
}

pub fn gradcheck_plcpa() -> f64 {
    let mut r = rng(11);
    let reference = noise(&mut r, 960, 0.5);
    let est = noise(&mut r, 960, 0.5);
    let mut worst: f64 = 0.0;
    for (p, alpha) in [(0.3, 0.5), (0.5, 0.2), (1.0, 0.8)] {
        let lp = LossParams {
            p,
            alpha,
            ..LossParams::default()
        };
        let (_, g) = plcpa_loss_grad(&est, &reference, &lp).unwrap();
        worst = worst.max(check_input(&est, &g, |e| plcpa_loss(e, &reference, &lp).unwrap()));
    }
    worst
}

fn check_block(block: &TemporalBlock, seed: u64) -> f64 {
    let mut r = rng(seed);
    let width = match block {
        TemporalBlock::Residual(b) => b.lstm.inputs(),
        TemporalBlock::Recurrent(l) => l.inputs(),
    };
    let x = noise2(&mut r, 6, width);
    let w = noise2(&mut r, 6, block.output_width());
    let run = |b: &TemporalBlock, x: &Array2<f64>| {
        let (y, _) = b.forward(x.view(), &mut b.fresh_state());
        dot(&y, &w)
    };
    let (_, cache) = block.forward(x.view(), &mut block.fresh_state());
    let mut grad = block.zeros_like();
    let dx = block.backward(&cache, w.view(), &mut grad);
    let p = check_params(block, &grad, None, seed, |b| run(b, &x));
    let i = check_input(x.as_slice().unwrap(), dx.as_slice().unwrap(), |v| run(block, &as_matrix(v, &x)));
    p.max(i)
}

pub fn gradcheck_temporal_block() -> f64 {
    let mut r = rng(12);
    let residual = TemporalBlock::Residual(ResidualBlock::new(5, 4, &mut r));
    let recurrent = TemporalBlock::Recurrent(Lstm::new(5, 4, &mut r));
    check_block(&residual, 1).max(check_block(&recurrent, 2))
}

pub fn gradcheck_align() -> f64 {
    let mut r = rng(13);
    let block = AlignBlock::new(6, 4, 3, 5, &mut r);
    let mic = noise2(&mut r, 8, 6);
    let far = noise2(&mut r, 8, 4);
    let wa = noise2(&mut r, 8, 4);
    let ww = noise2(&mut r, 8, 5);
    let run = |b: &AlignBlock, mic: &Array2<f64>, far: &Array2<f64>| {
        let (a, w, _) = b.forward(mic.view(), far.view(), &mut b.fresh_state());
        dot(&a, &wa) + dot(&w, &ww)
    };
    let (_, _, cache) = block.forward(mic.view(), far.view(), &mut block.fresh_state());
    let mut grad = block.zeros_like();
    let (dmic, dfar) = block.backward(&cache, wa.view(), Some(ww.view()), &mut grad);
    let p = check_params(&block, &grad, None, 3, |b| run(b, &mic, &far));
    let m = check_input(mic.as_slice().unwrap(), dmic.as_slice().unwrap(), |v| {
        run(&block, &as_matrix(v, &mic), &far)
    });
    let f = check_input(far.as_slice().unwrap(), dfar.as_slice().unwrap(), |v| {
        run(&block, &mic, &as_matrix(v, &far))
    });
    p.max(m).max(f)
}

pub fn gradcheck_mask_head() -> f64 {
    let mut r = rng(14);
    let head = MaskHead::new(7, 5, &mut r);
    let x = noise2(&mut r, 4, 7);
    let w = noise2(&mut r, 4, 5);
    let run = |h: &MaskHead, x: &Array2<f64>| dot(&h.forward(x.clone()).0, &w);
    let (_, cache) = head.forward(x.clone());
    let mut grad = head.zeros_like();
    let dx = head.backward(&cache, w.view(), &mut grad);
    let p = check_params(&head, &grad, None, 4, |h| run(h, &x));
    let i = check_input(x.as_slice().unwrap(), dx.as_slice().unwrap(), |v| run(&head, &as_matrix(v, &x)));
    p.max(i)
}

pub fn gradcheck_encoder_decoder() -> f64 {
    let mut r = rng(15);
    let enc = Encoder::new(8, 6, &mut r);
    let dec = Decoder::new(6, 8, &mut r);
    let frames = noise2(&mut r, 5, 8);
    let w = noise2(&mut r, 5, 8);
    let run = |e: &Encoder, d: &Decoder| {
        let (feat, _) = e.forward(frames.clone());
        dot(&d.forward(feat.view()), &w)
    };
    let (feat, cache) = enc.forward(frames.clone());
    let mut gdec = dec.zeros_like();
    let dfeat = dec.backward(feat.view(), w.view(), &mut gdec);
    let mut genc = enc.zeros_like();
    enc.backward(&cache, dfeat.view(), &mut genc);
    let e = check_params(&enc, &genc, None, 5, |e| run(e, &dec));
    let d = check_params(&dec, &gdec, None, 6, |d| run(&enc, d));
    e.max(d)
}

/// Whole-network check on a tiny model: a random sample of parameters
/// against `sum(w * output)`.
pub fn gradcheck_network(variant: Variant, ablation: Ablation, path: Path, coords: usize) -> f64 {
    let mut config = ModelConfig::tiny(variant, Task::PseAec, Some(ablation));
    config.f_mic = 24;
    config.f_far = 8;
    config.f_emb = 8;
    config.f_emb_hid = 12;
    config.vfl_hidden = 12;
    config.align_window = 4;
    config.align_dim = 6;
    config.win = 32;
    config.hop = 16;
    let model = build_model(config, 21).unwrap();
    let mut r = rng(22);
    let mic = noise(&mut r, 160, 0.5);
    let far = noise(&mut r, 160, 0.5);
    let w = noise(&mut r, 160, 1.0);
    let emb = embedding_for("spk001", 0).unwrap();
    let run = |m: &Model| {
        let (out, _) = m.forward_traced(&mic, Some(&far), Some(emb.vector()), path).unwrap();
        out.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
    };
    let (_, trace) = model.forward_traced(&mic, Some(&far), Some(emb.vector()), path).unwrap();
    let mut grad = model.net.zeros_like();
    model.backward(&trace, &w, &mut grad);
    let mut probe = model.clone();
    check_params(&model.net, &grad, Some(coords), 23, |net| {
        probe.net = net.clone();
        run(&probe)
    })
}

/// Max abs difference over the prefix that must agree when everything from
/// sample `n` on is replaced, for `trials` random draws. With `aligned`
/// the cut is a multiple of the hop and the prefix is `n - (win - hop)`;
/// otherwise the prefix is `floor(n / hop) * hop - (win - hop)`.
pub fn causality_max_diff(model: &Model, path: Path, trials: usize, aligned: bool, seed: u64) -> f64 {
    let (win, hop) = (model.config.win, model.config.hop);
    let mut r = rng(seed);
    let emb = embedding_for("spk007", 0).unwrap();
    let emb = model.layout().uses_embedding().then(|| emb.vector().to_vec());
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let len = hop * r.gen_range(12..30);
        let n = if aligned {
            hop * r.gen_range(win / hop + 1..len / hop)
        } else {
            r.gen_range(win + hop..len)
        };
        let mic = noise(&mut r, len, 0.3);
        let far = noise(&mut r, len, 0.3);
        let mut mic2 = mic.clone();
        let mut far2 = far.clone();
        for i in n..len {
            mic2[i] = r.gen_range(-1.0..1.0);
            far2[i] = r.gen_range(-1.0..1.0);
        }
        let run = |m: &[f64], f: &[f64]| model.forward_traced(m, Some(f), emb.as_deref(), path).unwrap().0;
        let a = run(&mic, &far);
        let b = run(&mic2, &far2);
        let keep = (n / hop) * hop - (win - hop);
        for i in 0..keep {
            worst = worst.max((a[i] - b[i]).abs());
        }
    }
    worst
}

/// Fixed echo delay for the overfit pool: 17 frames at a 160-sample hop.
pub const OVERFIT_ECHO_DELAY: usize = 17 * 160;
pub const OVERFIT_STEPS: u64 = 2000;

fn overfit_spec(i: u64, interferer: bool, noise: bool, echo: bool) -> SceneSpec {
    SceneSpec {
        snr_db: noise.then_some(15.0),
        ser_db: 0.0,
        sir_db: 5.0,
        has_interferer: interferer,
        has_echo: echo,
        echo_delay: OVERFIT_ECHO_DELAY,
        interferer_id: Some(format!("spk{:03}", 10 + i)),
        farend_id: Some(format!("spk{:03}", 20 + i)),
        ..SceneSpec::clean(format!("spk{i:03}"), 3.0, 100 + i)
    }
}

/// Eight 3 s scenes: 0-1 echo + noise, 2-3 echo + interferer + noise,
/// 4 interferer + noise, 5 noise only, 6-7 target only.
pub fn overfit_pool() -> Vec<MixtureSample> {
    let specs = vec![
        overfit_spec(0, false, true, true),
        overfit_spec(1, false, true, true),
        overfit_spec(2, true, true, true),
        overfit_spec(3, true, true, true),
        overfit_spec(4, true, true, false),
        overfit_spec(5, false, true, false),
        overfit_spec(6, false, false, false),
        overfit_spec(7, false, false, false),
    ];
    render_all(&specs, &SurrogateSources).unwrap()
}

pub fn overfit_model_config() -> ModelConfig {
    ModelConfig::tiny(Variant::E3net, Task::PseAec, Some(Ablation::Sc))
}

pub fn overfit_train_config(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 2,
        lr: 1e-3,
        seed: 0,
        checkpoint_every: 0,
        crop: None,
        embedding_seed: 0,
        loss: LossParams {
            p: 1.0,
            alpha: 0.5,
            ..LossParams::default()
        },
    }
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Reference parameter counts in millions, built at default sizes.
pub const PARAM_TARGETS: [(Variant, Task, Option<Ablation>, f64); 10] = [
    (Variant::E3net, Task::Aec, None, 3.28),
    (Variant::E3net, Task::Pse, None, 3.17),
    (Variant::E3net, Task::PseAec, Some(Ablation::Naive), 3.23),
    (Variant::E3net, Task::PseAec, Some(Ablation::NoSc), 3.27),
    (Variant::E3net, Task::PseAec, Some(Ablation::Sc), 3.28),
    (Variant::Vfl, Task::Aec, None, 8.56),
    (Variant::Vfl, Task::Pse, None, 8.03),
    (Variant::Vfl, Task::PseAec, Some(Ablation::Naive), 8.36),
    (Variant::Vfl, Task::PseAec, Some(Ablation::NoSc), 8.36),
    (Variant::Vfl, Task::PseAec, Some(Ablation::Sc), 8.56),
];
pub const PARAM_TOL: f64 = 0.15;

/// Every layout of both variants at the tiny size.
pub fn tiny_configs() -> Vec<ModelConfig> {
    PARAM_TARGETS
        .iter()
        .map(|&(v, t, a, _)| ModelConfig::tiny(v, t, a))
        .collect()
}

pub fn paths_of(model: &Model) -> Vec<Path> {
    if model.layout().bypass {
        vec![Path::Full, Path::Bypass]
    } else {
        vec![Path::Full]
    }
}

/// Names of parameter arrays under any of `prefixes` holding a nonzero value.
pub fn nonzero_under(grad: &pseaec::model::Network, prefixes: &[&str]) -> Vec<String> {
    let mut out = Vec::new();
    grad.visit("", &mut |name, _, v| {
        if prefixes.iter().any(|p| name.starts_with(p)) && v.iter().any(|&x| x != 0.0) {
            out.push(name.to_string());
        }
    });
    out
}

/// Names of parameter arrays under `prefixes`, whatever their values.
pub fn names_under(net: &pseaec::model::Network, prefixes: &[&str]) -> Vec<String> {
    let mut out = Vec::new();
    net.visit("", &mut |name, _, _| {
        if prefixes.iter().any(|p| name.starts_with(p)) {
            out.push(name.to_string());
        }
    });
    out
}

/// Overwrites the post-embedding stage with fresh random values.
pub fn randomize_second_stage(model: &mut Model, seed: u64) {
    let mut r = rng(seed);
    model.net.visit_mut("", &mut |name, _, v| {
        if name.starts_with("blocks2") || name.starts_with("proj2") {
            v.iter_mut().for_each(|x| *x = r.gen_range(-1.0..1.0));
        }
    });
}

pub const RATIO_TOL_DB: f64 = 0.05;

/// Largest gap between requested and re-measured SNR/SER/SIR over `count`
/// random training-pool scenes, and the number of ratios checked.
pub fn ratio_fidelity(count: usize, seed: u64) -> (f64, usize) {
    use pseaec::metrics::achieved_ratio;
    use pseaec::scene::{make_training_pool_with, render_scene, Ranges, RATIO_ACTIVITY_DBFS};
    let ranges = Ranges {
        duration: 2.0,
        ..Ranges::training()
    };
    let specs = make_training_pool_with(count, seed, &ranges).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for spec in &specs {
        let s = render_scene(spec, &SurrogateSources).unwrap();
        let reference = s.stems.target_reverb.samples();
        let mut check = |stem: &pseaec::dsp::Waveform, want: f64| {
            let got = achieved_ratio(reference, stem.samples(), RATIO_ACTIVITY_DBFS).unwrap();
            worst = worst.max((got - want).abs());
            checked += 1;
        };
        if let Some(snr) = spec.snr_db {
            check(&s.stems.noise, snr);
        }
        if spec.has_echo {
            check(&s.stems.echo, spec.ser_db);
        }
        if spec.has_interferer {
            check(&s.stems.interferer, spec.sir_db);
        }
    }
    (worst, checked)
}

/// Scenario presence rows: (name, interferer, noise, echo, far-end) as rendered.
pub fn presence_matrix(count: usize, seed: u64) -> Vec<(String, bool, bool, bool, bool)> {
    use pseaec::scene::{make_scenario_set_with, Ranges, ScenarioKind};
    let ranges = Ranges {
        duration: 1.0,
        ..Ranges::evaluation()
    };
    let mut rows = Vec::new();
    for kind in ScenarioKind::ALL {
        let specs = make_scenario_set_with(kind, count, seed, &ranges).unwrap();
        let samples = render_all(&specs, &SurrogateSources).unwrap();
        let any = |f: &dyn Fn(&MixtureSample) -> &pseaec::dsp::Waveform| {
            let flags: Vec<bool> = samples.iter().map(|s| !f(s).is_silent()).collect();
            assert!(flags.iter().all(|&b| b == flags[0]), "{kind}: presence differs across samples");
            flags[0]
        };
        rows.push((
            kind.name().to_string(),
            any(&|s| &s.stems.interferer),
            any(&|s| &s.stems.noise),
            any(&|s| &s.stems.echo),
            any(&|s| &s.farend),
        ));
    }
    rows
}

/// Expected presence: ts1 interferer + noise, ts2 noise, ts3 target only;
/// the -echo sets add echo and far-end.
pub fn expected_presence(name: &str) -> (bool, bool, bool, bool) {
    match name {
        "ts1" => (true, true, false, false),
        "ts1-echo" => (true, true, true, true),
        "ts2" => (false, true, false, false),
        "ts2-echo" => (false, true, true, true),
        "ts3" => (false, false, false, false),
        _ => panic!("unknown scenario {name}"),
    }
}

/// Worst relative STFT round-trip error over a few window settings,
/// away from the partially covered edges.
pub fn stft_roundtrip_error() -> f64 {
    use pseaec::dsp::{istft, stft, StftParams};
    let mut r = rng(31);
    let mut worst: f64 = 0.0;
    for (win, hop, fft) in [(320, 160, 320), (512, 128, 512), (400, 100, 512)] {
        let p = StftParams::new(win, hop, fft).unwrap();
        let x = pseaec::dsp::Waveform::new(noise(&mut r, 16000, 0.5)).unwrap();
        let y = istft(&stft(&x, &p).unwrap(), &p).unwrap();
        // samples covered by a full set of overlapping frames
        let (lo, hi) = (win - hop, p.frame_count(x.len()) * hop);
        let (x, y) = (&x.samples()[lo..hi], &y.samples()[lo..hi]);
        let err: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
        let energy: f64 = x.iter().map(|a| a * a).sum();
        worst = worst.max((err / energy).sqrt());
    }
    worst
}

/// Each metric identity with a pass flag and the observed value.
pub fn metric_identities() -> Vec<(&'static str, bool, String)> {
    use pseaec::dsp::frame_count;
    use pseaec::metrics::{erle, si_sdr, tsos, MetricsParams};
    let p = MetricsParams::default();
    let mut r = rng(41);
    let speech = overfit_pool().swap_remove(6);
    let reference = speech.target_ref.samples().to_vec();
    let mic = speech.mic.samples().to_vec();
    let est: Vec<f64> = reference.iter().map(|x| x + r.gen_range(-0.02..0.02)).collect();
    let mut out = Vec::new();

    let mask = vec![true; frame_count(mic.len(), p.win, p.hop)];
    let e = erle(&mic, &mic, &mask, &p).unwrap();
    out.push(("erle(mic, mic) = 0 dB", e == 0.0, format!("{e}")));

    let t = tsos(&reference, &reference, &p).unwrap();
    out.push(("tsos(ref, ref) = 0", t == 0.0, format!("{t}")));
    let t = tsos(&reference, &vec![0.0; reference.len()], &p).unwrap();
    out.push(("tsos(ref, 0) = 1", t == 1.0, format!("{t}")));

    let base = si_sdr(&reference, &est).unwrap();
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for g in [0.25, 2.0, 8.0, -0.5] {
        let s: Vec<f64> = est.iter().map(|x| x * g).collect();
        exact &= si_sdr(&reference, &s).unwrap() == base;
    }
    for g in [0.1, 0.37, 3.3, 1234.5] {
        let s: Vec<f64> = est.iter().map(|x| x * g).collect();
        worst = worst.max((si_sdr(&reference, &s).unwrap() - base).abs());
    }
    out.push((
        "si_sdr scale invariance",
        exact && worst < 1e-9,
        format!("power-of-two gains exact: {exact}, other gains max |d| {worst:.1e} dB"),
    ));

    let mut prev = 0.0;
    let mut monotone = true;
    let mut trail = Vec::new();
    for k in 0..=40 {
        let g = 10f64.powf(-k as f64 / 20.0);
        let s: Vec<f64> = reference.iter().map(|x| x * g).collect();
        let t = tsos(&reference, &s, &p).unwrap();
        monotone &= t >= prev;
        prev = t;
        if k % 10 == 0 {
            trail.push(format!("{:.2}", t));
        }
    }
    out.push((
        "tsos monotone under uniform attenuation",
        monotone && prev == 1.0,
        format!("0/10/20/30/40 dB: {}", trail.join(" ")),
    ));
    out
}

/// Align-block with identity projections fed a microphone stream that
/// repeats the far-end features `lag` frames later. Returns the fraction of
/// frames (from `lag` on) whose attention argmax is `lag`.
pub fn constructed_key_hit_rate(lag: usize, window: usize, seed: u64) -> f64 {
    let dim = 16;
    let mut r = rng(seed);
    let mut block = AlignBlock::new(dim, dim, dim, window, &mut r);
    block.w_query = Array2::eye(dim) * 4.0;
    block.w_key = Array2::eye(dim) * 4.0;
    let steps = 120;
    let far = noise2(&mut r, steps, dim);
    let mic = Array2::from_shape_fn((steps, dim), |(t, j)| if t >= lag { far[[t - lag, j]] } else { 0.0 });
    let (_, weights, _) = block.forward(mic.view(), far.view(), &mut block.fresh_state());
    let hits = (lag..steps)
        .filter(|&t| argmax(weights.row(t).iter().copied()) == lag)
        .count();
    hits as f64 / (steps - lag) as f64
}

pub fn argmax(xs: impl IntoIterator<Item = f64>) -> usize {
    xs.into_iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, x)| if x > best.1 { (i, x) } else { best })
        .0
}
