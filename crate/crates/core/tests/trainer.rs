use std::collections::BTreeSet;
use std::fs;

use messfn_core::checkpoint::Checkpoint;
use messfn_core::metrics::Metric;
use messfn_core::net::{MessfnConfig, MessfnWeights};
use messfn_core::synthetic::synthetic_scene;
use messfn_core::trainer::*;
use messfn_core::wald::{make_dataset, DatasetManifest, WaldConfig};
use messfn_core::CoreError;

fn small_dataset() -> DatasetManifest {
    let scene = synthetic_scene(64, 64, 4, 5).unwrap();
    let cfg = WaldConfig { patch: 16, stride: 16, seed: 2, ..Default::default() };
    make_dataset(&scene.ms, &scene.pan, &cfg).unwrap()
}

fn small_model() -> MessfnConfig {
    MessfnConfig::new(1, 4)
}

fn short_run(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        lr0: 1e-3,
        decay_epoch: epochs - 1,
        seed: 7,
        ..Default::default()
    }
}

#[test]
fn learning_rate_schedule_decays_once() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(0), 1e-4);
    assert_eq!(cfg.lr_at(149), 1e-4);
    assert!((cfg.lr_at(150) - 1e-5).abs() < 1e-20);
    assert_eq!(cfg.lr_at(349), cfg.lr_at(150));
    let events = (1..cfg.epochs).filter(|&e| cfg.lr_at(e) != cfg.lr_at(e - 1)).count();
    assert_eq!(events, 1);
    assert_eq!((cfg.batch_size, cfg.beta1, cfg.beta2), (64, 0.7, 0.99));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig { decay_epoch: 350, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
    let m = small_dataset();
    let err = train(&m, &small_model(), &TrainConfig { batch_size: 64, ..short_run(2) }, TrainOptions::default());
    assert!(err.unwrap_err().to_string().contains("batch size"));
}

#[test]
fn epoch_order_is_a_seeded_permutation() {
    let a = epoch_order(20, 3, 0);
    let mut sorted = a.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    assert_eq!(a, epoch_order(20, 3, 0));
    assert_ne!(a, epoch_order(20, 3, 1));
    assert_ne!(a, epoch_order(20, 4, 0));
}

#[test]
fn zero_output_layer_gives_mean_absolute_target() {
    let full = small_dataset();
    let m = DatasetManifest { train: full.train[..1].to_vec(), val: Vec::new(), ..full };
    let cfg = small_model();
    let mut w = MessfnWeights::<f32>::init(&cfg, 0).unwrap();
    for name in ["reconstruct.weight", "reconstruct.bias"] {
        let id = w.params.id(name).unwrap();
        w.params.get_mut(id).value.data_mut().fill(0.0);
    }
    let tc = TrainConfig { epochs: 1, batch_size: 1, decay_epoch: 0, ..Default::default() };
    let out = train(&m, &cfg, &tc, TrainOptions { initial: Some(w), ..Default::default() }).unwrap();
    let target = &m.train[0].ms_ref.data;
    let expect = target.iter().map(|v| (*v as f32).abs() as f64).sum::<f64>() / target.len() as f64;
    assert_eq!(out.step_losses.len(), 1);
    assert!((out.step_losses[0] - expect).abs() < 1e-5, "{} vs {expect}", out.step_losses[0]);
    assert_eq!(out.reports[0].val_l1, None);
}

#[test]
fn short_training_reduces_loss_and_writes_artifacts() {
    let m = small_dataset();
    assert_eq!((m.train.len(), m.val.len()), (14, 2));
    let dir = tempfile::tempdir().unwrap();
    let tc = short_run(6);
    let out = train(&m, &small_model(), &tc, TrainOptions { out_dir: Some(dir.path().into()), ..Default::default() }).unwrap();
    assert_eq!(out.step_losses.len(), 6 * 7);
    assert_eq!(out.global_step, 42);
    let first = out.reports.first().unwrap().train_l1;
    let last = out.reports.last().unwrap().train_l1;
    assert!(last < first, "{first} -> {last}");
    assert!(out.reports.iter().all(|r| r.val_l1.is_some() && r.val_psnr.unwrap() > 0.0));
    assert_eq!(out.reports[5].lr_in_effect, tc.lr0 * tc.decay_factor);
    let log = fs::read_to_string(dir.path().join(LOSS_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert!(log.lines().next().unwrap().starts_with("epoch=0 train_l1="));
    let ck = Checkpoint::load(dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.epochs_completed, 6);
    assert_eq!(ck.weights, out.weights);
    assert_eq!(ck.train_echo, tc.echo());
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let m = small_dataset();
    let tc = short_run(2);
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        train(&m, &small_model(), &tc, TrainOptions { out_dir: Some(dir.path().into()), ..Default::default() }).unwrap();
        fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let m = small_dataset();
    let tc = TrainConfig { checkpoint_every: 2, ..short_run(4) };
    let full_dir = tempfile::tempdir().unwrap();
    let full = train(&m, &small_model(), &tc, TrainOptions { out_dir: Some(full_dir.path().into()), ..Default::default() }).unwrap();

    let split_dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions { out_dir: Some(split_dir.path().into()), stop_after_epoch: Some(2), ..Default::default() };
    let first = train(&m, &small_model(), &tc, opts).unwrap();
    assert_eq!(first.epochs_completed, 2);
    let ck = Checkpoint::load(split_dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.epochs_completed, 2);
    let opts = TrainOptions { out_dir: Some(split_dir.path().into()), resume: Some(ck), ..Default::default() };
    let second = train(&m, &small_model(), &tc, opts).unwrap();

    assert_eq!(
        fs::read(full_dir.path().join(CHECKPOINT_FILE)).unwrap(),
        fs::read(split_dir.path().join(CHECKPOINT_FILE)).unwrap()
    );
    assert_eq!(second.weights, full.weights);
    let resumed: Vec<_> = first.reports.iter().chain(&second.reports).collect();
    assert_eq!(resumed.len(), full.reports.len());
    assert!(resumed.iter().zip(&full.reports).all(|(a, b)| a.same_numbers(b)));
}

#[test]
fn resume_rejects_changed_configuration() {
    let m = small_dataset();
    let tc = short_run(2);
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions { out_dir: Some(dir.path().into()), stop_after_epoch: Some(1), ..Default::default() };
    train(&m, &small_model(), &tc, opts).unwrap();
    let path = dir.path().join(CHECKPOINT_FILE);

    let ck = Checkpoint::load(&path).unwrap();
    let other = TrainConfig { lr0: 5e-4, ..tc.clone() };
    let err = train(&m, &small_model(), &other, TrainOptions { resume: Some(ck), ..Default::default() }).unwrap_err();
    assert!(matches!(err, CoreError::Incompatible(_)));

    let err = Checkpoint::load_for(&path, &MessfnConfig::new(2, 4)).unwrap_err();
    assert!(matches!(err, CoreError::Incompatible(_)));
    assert!(err.to_string().contains("B = 1") && err.to_string().contains("B = 2"), "{err}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let m = small_dataset();
    let out = train(&m, &small_model(), &short_run(2), TrainOptions::default()).unwrap();
    let ck = Checkpoint { weights: out.weights, train_echo: short_run(2).echo(), epochs_completed: 2, global_step: out.global_step };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ck");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    for (a, b) in back.weights.params.iter().zip(ck.weights.params.iter()) {
        assert_eq!(a.step_count, b.step_count);
        assert!(a.adam_m.iter().zip(&b.adam_m).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.adam_v.iter().zip(&b.adam_v).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert!(back.weights.params.iter().all(|p| p.step_count == 14));

    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&path, &bytes).unwrap();
    assert!(Checkpoint::load(&path).unwrap_err().to_string().contains("checksum"));
    fs::write(&path, b"NOTACKPT").unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn non_finite_weights_abort_training() {
    let m = small_dataset();
    let cfg = small_model();
    let mut w = MessfnWeights::<f32>::init(&cfg, 0).unwrap();
    let id = w.params.id("aggregate.bias").unwrap();
    w.params.get_mut(id).value.data_mut()[0] = f32::NAN;
    let err = train(&m, &cfg, &short_run(2), TrainOptions { initial: Some(w), ..Default::default() }).unwrap_err();
    assert!(matches!(err, CoreError::NonFinite(_)), "{err}");
}

#[test]
fn evaluate_selection_and_determinism() {
    let m = small_dataset();
    let w = MessfnWeights::<f32>::init(&small_model(), 3).unwrap();
    let only: BTreeSet<Metric> = [Metric::Psnr].into_iter().collect();
    let rep = evaluate(&w, &m.val, &only).unwrap();
    assert_eq!(rep.present(), vec!["psnr_db"]);
    let sel: BTreeSet<Metric> = [Metric::Psnr, Metric::Sam, Metric::Ergas, Metric::Cc].into_iter().collect();
    let a = evaluate(&w, &m.val, &sel).unwrap();
    let b = evaluate(&w, &m.val, &sel).unwrap();
    assert_eq!(a, b);
    assert!(evaluate(&w, &[], &only).is_err());
}
