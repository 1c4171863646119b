mod common;

use common::*;
use pseaec::dsp::Waveform;
use pseaec::embed::embedding_for;
use pseaec::model::{
    build_model, decode_checkpoint, enhance_streaming, encode_checkpoint, Ablation, ModelConfig, Task, Variant,
};
use pseaec::nn::Params;
use pseaec::scene::Dataset;
use pseaec::train::{batch_gradients, make_minibatch, scheduled_task, LossParams, TaskPools, Trainer};
use pseaec::Error;

#[test]
fn default_parameter_counts_are_near_reference() {
    for (v, t, a, millions) in PARAM_TARGETS {
        let m = build_model(ModelConfig::new(v, t, a), 0).unwrap();
        let got = m.param_count() as f64 / 1e6;
        assert!(
            (got / millions - 1.0).abs() <= PARAM_TOL,
            "{}: {got:.3} M vs {millions} M",
            m.config.label()
        );
    }
}

#[test]
fn skip_connection_adds_parameters_and_pse_is_smaller() {
    for v in [Variant::E3net, Variant::Vfl] {
        let count = |t, a| build_model(ModelConfig::new(v, t, a), 0).unwrap().param_count();
        let sc = count(Task::PseAec, Some(Ablation::Sc));
        assert!(sc > count(Task::PseAec, Some(Ablation::NoSc)));
        assert!(count(Task::Pse, None) < sc);
    }
}

#[test]
fn outputs_ignore_inputs_after_hop_aligned_cut() {
    for (i, config) in tiny_configs().into_iter().enumerate() {
        let m = build_model(config, i as u64).unwrap();
        for path in paths_of(&m) {
            let d = causality_max_diff(&m, path, 5, true, 100 + i as u64);
            assert!(d < 1e-6, "{} {path:?}: {d:e}", m.config.label());
        }
    }
}

#[test]
fn outputs_ignore_inputs_after_arbitrary_cut() {
    for (i, config) in tiny_configs().into_iter().enumerate() {
        let m = build_model(config, i as u64).unwrap();
        for path in paths_of(&m) {
            let d = causality_max_diff(&m, path, 5, false, 200 + i as u64);
            assert!(d < 1e-6, "{} {path:?}: {d:e}", m.config.label());
        }
    }
}

#[test]
fn streaming_matches_offline_forward() {
    let mut r = rng(5);
    let mic = Waveform::new(noise(&mut r, 160 * 37 + 55, 0.3)).unwrap();
    let far = Waveform::new(noise(&mut r, mic.len(), 0.3)).unwrap();
    let emb = embedding_for("spk003", 0).unwrap();
    for (i, config) in tiny_configs().into_iter().enumerate() {
        let m = build_model(config, i as u64).unwrap();
        for path in paths_of(&m) {
            let offline = m.forward(&mic, Some(&far), Some(&emb), path).unwrap();
            for chunk in [160, 480, 1600] {
                let online = enhance_streaming(&m, &mic, Some(&far), Some(&emb), path, chunk).unwrap();
                assert_eq!(online.len(), mic.len());
                let d = online
                    .samples()
                    .iter()
                    .zip(offline.samples())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(d < 1e-9, "{} {path:?} chunk {chunk}: {d:e}", m.config.label());
            }
        }
    }
}

#[test]
fn bypass_output_does_not_depend_on_second_stage() {
    let mut r = rng(6);
    let mic = Waveform::new(noise(&mut r, 4800, 0.3)).unwrap();
    let far = Waveform::new(noise(&mut r, 4800, 0.3)).unwrap();
    for v in [Variant::E3net, Variant::Vfl] {
        for a in [Ablation::Sc, Ablation::NoSc] {
            let mut m = build_model(ModelConfig::tiny(v, Task::PseAec, Some(a)), 3).unwrap();
            let before = m.forward_bypass(&mic, Some(&far)).unwrap();
            randomize_second_stage(&mut m, 9);
            let after = m.forward_bypass(&mic, Some(&far)).unwrap();
            assert_eq!(before.samples(), after.samples());
        }
    }
}

#[test]
fn bypass_is_refused_without_one() {
    let m = build_model(ModelConfig::tiny(Variant::E3net, Task::Pse, None), 0).unwrap();
    let mic = Waveform::zeros(3200);
    assert!(matches!(m.forward_bypass(&mic, None), Err(Error::Unsupported(_))));
    let m = build_model(ModelConfig::tiny(Variant::Vfl, Task::PseAec, Some(Ablation::Naive)), 0).unwrap();
    assert!(matches!(m.forward_bypass(&mic, Some(&mic)), Err(Error::Unsupported(_))));
}

#[test]
fn full_path_needs_an_embedding() {
    let m = build_model(ModelConfig::tiny(Variant::E3net, Task::PseAec, Some(Ablation::Sc)), 0).unwrap();
    let mic = Waveform::zeros(3200);
    assert!(matches!(m.forward_full(&mic, None, None), Err(Error::MissingEmbedding)));
}

fn pool() -> TaskPools {
    TaskPools::shared(Dataset::from_samples(overfit_pool()))
}

#[test]
fn aec_batches_leave_second_stage_gradients_at_zero() {
    let pools = pool();
    let lp = LossParams::default();
    for v in [Variant::E3net, Variant::Vfl] {
        for a in [Ablation::Sc, Ablation::NoSc] {
            let m = build_model(ModelConfig::tiny(v, Task::PseAec, Some(a)), 4).unwrap();
            let batch = make_minibatch(Task::Aec, pools.for_task(Task::Aec), 2, 1).unwrap();
            assert!(batch.embeddings.is_none());
            let (_, grad) = batch_gradients(&m, &batch, &lp).unwrap();
            assert!(!names_under(&grad, &["blocks2", "proj2"]).is_empty());
            assert_eq!(nonzero_under(&grad, &["blocks2", "proj2"]), Vec::<String>::new());
            assert!(!nonzero_under(&grad, &["blocks1", "align"]).is_empty());
        }
    }
}

#[test]
fn pse_batches_leave_far_end_branch_at_zero() {
    let pools = pool();
    let lp = LossParams::default();
    let m = build_model(ModelConfig::tiny(Variant::E3net, Task::PseAec, Some(Ablation::Sc)), 4).unwrap();
    let batch = make_minibatch(Task::Pse, pools.for_task(Task::Pse), 2, 1).unwrap();
    assert!(batch.items.iter().all(|i| i.farend.iter().all(|&x| x == 0.0)));
    let (_, grad) = batch_gradients(&m, &batch, &lp).unwrap();
    assert_eq!(nonzero_under(&grad, &["far_encoder", "align"]), Vec::<String>::new());
    assert!(!nonzero_under(&grad, &["blocks2"]).is_empty());
}

#[test]
fn joint_schedule_is_balanced() {
    let mut counts = [0usize; 3];
    for step in 0..3000 {
        let i = match scheduled_task(Task::PseAec, step) {
            Task::Aec => 0,
            Task::Pse => 1,
            Task::PseAec => 2,
        };
        counts[i] += 1;
    }
    assert_eq!(counts, [1000, 1000, 1000]);
    assert_eq!(scheduled_task(Task::PseAec, 0), Task::Aec);
    assert_eq!(scheduled_task(Task::PseAec, 1), Task::Pse);
    assert_eq!(scheduled_task(Task::PseAec, 2), Task::PseAec);
    assert!((0..30).all(|s| scheduled_task(Task::Pse, s) == Task::Pse));
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let pools = pool();
    let m = build_model(overfit_model_config(), 2).unwrap();
    let mut tr = Trainer::new(m, overfit_train_config(3)).unwrap();
    tr.run(&pools, |_| {}).unwrap();
    let bytes = encode_checkpoint(&tr.checkpoint()).unwrap();
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back.step, 3);
    assert_eq!(back.model.config, tr.model.config);
    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(back.model.net.flatten()), bits(tr.model.net.flatten()));
    let opt = back.optimizer.unwrap();
    assert_eq!(bits(opt.m.flatten()), bits(tr.adam.m.flatten()));
    assert_eq!(bits(opt.v.flatten()), bits(tr.adam.v.flatten()));
    assert_eq!(opt.t, tr.adam.t);
    assert_eq!(encode_checkpoint(&tr.checkpoint()).unwrap(), bytes);
}

#[test]
fn checkpoint_from_a_newer_version_is_refused() {
    let m = build_model(ModelConfig::tiny(Variant::Vfl, Task::Pse, None), 0).unwrap();
    let ckpt = pseaec::model::Checkpoint {
        model: m,
        step: 0,
        optimizer: None,
    };
    let bytes = encode_checkpoint(&ckpt).unwrap();
    let text = String::from_utf8_lossy(&bytes[..40]).into_owned();
    assert!(text.contains("version 1"));
    let patched: Vec<u8> = {
        let at = bytes.windows(9).position(|w| w == b"version 1").unwrap();
        let mut b = bytes.clone();
        b[at + 8] = b'7';
        b
    };
    assert!(matches!(
        decode_checkpoint(&patched),
        Err(Error::Version { found: 7, expected: 1 })
    ));
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Corrupt(_))));
}

#[test]
fn resumed_training_matches_unbroken_training() {
    let pools = pool();
    let config = overfit_train_config(6);
    let mut whole = Trainer::new(build_model(overfit_model_config(), 8).unwrap(), config.clone()).unwrap();
    whole.run(&pools, |_| {}).unwrap();

    let mut first = Trainer::new(build_model(overfit_model_config(), 8).unwrap(), config.clone()).unwrap();
    for _ in 0..4 {
        first.step_once(&pools).unwrap();
    }
    let ckpt = decode_checkpoint(&encode_checkpoint(&first.checkpoint()).unwrap()).unwrap();
    let mut second = Trainer::from_checkpoint(ckpt, config).unwrap();
    second.run(&pools, |_| {}).unwrap();

    let joined: Vec<_> = first.log.iter().chain(&second.log).cloned().collect();
    assert_eq!(joined, whole.log);
    assert_eq!(second.model.net.flatten(), whole.model.net.flatten());
}

#[test]
fn attention_peaks_at_the_constructed_lag() {
    for (lag, seed) in [(0, 1), (5, 2), (17, 3), (31, 4)] {
        assert_eq!(constructed_key_hit_rate(lag, 32, seed), 1.0, "lag {lag}");
    }
}
