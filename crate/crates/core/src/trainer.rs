//! Seeded training loop: L1 loss, Adam, single step decay, checkpointing.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use messfn_tensor::{Adam, Scalar, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{CoreError, Result};
use crate::metrics::{reference_report, Metric, MetricReport, PSNR_CAP_DB};
use crate::net::{forward, raster_batch, tensor_rasters, MessfnConfig, MessfnWeights};
use crate::wald::{DatasetManifest, SamplePair};

pub const CHECKPOINT_FILE: &str = "checkpoint.ck";
pub const LOSS_LOG_FILE: &str = "loss_log.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Cap on the number of training patches used (first `n` of the split).
    pub max_patches: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 350,
            batch_size: 64,
            lr0: 1e-4,
            decay_epoch: 150,
            decay_factor: 0.1,
            beta1: 0.7,
            beta2: 0.99,
            epsilon: 1e-8,
            seed: 0,
            checkpoint_every: 1,
            max_patches: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(CoreError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch size must be at least 1".into()));
        }
        if self.decay_epoch >= self.epochs {
            return Err(CoreError::Config(format!(
                "decay epoch {} must be smaller than the epoch count {}",
                self.decay_epoch, self.epochs
            )));
        }
        if !(self.lr0 > 0.0) || !(self.decay_factor > 0.0) {
            return Err(CoreError::Config("learning rate and decay factor must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(CoreError::Config("checkpoint interval must be at least 1 epoch".into()));
        }
        Adam::new(self.beta1, self.beta2, self.epsilon)?;
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch {
            self.lr0 * self.decay_factor
        } else {
            self.lr0
        }
    }

    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "lr0 = {:e}", self.lr0);
        let _ = writeln!(s, "decay_epoch = {}", self.decay_epoch);
        let _ = writeln!(s, "decay_factor = {}", self.decay_factor);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "epsilon = {:e}", self.epsilon);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        if let Some(n) = self.max_patches {
            let _ = writeln!(s, "max_patches = {n}");
        }
        s
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub epoch: usize,
    pub train_l1: f64,
    pub val_l1: Option<f64>,
    pub val_psnr: Option<f64>,
    pub lr_in_effect: f64,
    pub wall_time: f64,
}

impl LossReport {
    pub fn to_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        format!(
            "epoch={} train_l1={:.6} val_l1={} val_psnr={} lr={:e} wall_time_s={:.3}",
            self.epoch,
            self.train_l1,
            opt(self.val_l1),
            opt(self.val_psnr),
            self.lr_in_effect,
            self.wall_time
        )
    }

    /// Equality ignoring wall-clock time.
    pub fn same_numbers(&self, other: &LossReport) -> bool {
        self.epoch == other.epoch
            && self.train_l1.to_bits() == other.train_l1.to_bits()
            && self.val_l1.map(f64::to_bits) == other.val_l1.map(f64::to_bits)
            && self.val_psnr.map(f64::to_bits) == other.val_psnr.map(f64::to_bits)
            && self.lr_in_effect.to_bits() == other.lr_in_effect.to_bits()
    }
}

/// Where training starts from and where it stops.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory receiving checkpoints and the loss log.
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh initialization.
    pub resume: Option<Checkpoint>,
    /// Start from these weights instead of the seeded initialization.
    pub initial: Option<MessfnWeights<f32>>,
    /// Stop once this many epochs are complete.
    pub stop_after_epoch: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: MessfnWeights<f32>,
    pub reports: Vec<LossReport>,
    /// Loss of every optimizer step run in this call.
    pub step_losses: Vec<f64>,
    pub epochs_completed: usize,
    pub global_step: u64,
}

struct Sample {
    ms: Tensor<f32>,
    pan: Tensor<f32>,
    target: Tensor<f32>,
}

fn to_samples(pairs: &[SamplePair]) -> Result<Vec<Sample>> {
    pairs
        .iter()
        .map(|s| {
            Ok(Sample {
                ms: raster_batch(&[&s.ms_lr])?,
                pan: raster_batch(&[&s.pan_lr])?,
                target: raster_batch(&[&s.ms_ref])?,
            })
        })
        .collect()
}

fn stack(parts: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let mut shape = parts[0].shape().to_vec();
    shape[0] = parts.iter().map(|t| t.shape()[0]).sum();
    let data = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Ok(Tensor::new(shape, data)?)
}

/// Deterministic visiting order of the training set for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn check_sample_geometry(cfg: &MessfnConfig, s: &SamplePair) -> Result<()> {
    if s.pan_lr.height != cfg.r * s.ms_lr.height || s.pan_lr.width != cfg.r * s.ms_lr.width {
        return Err(CoreError::Incompatible(format!(
            "sample {} has PAN {}x{} and MS {}x{}, not a ratio of r = {}",
            s.source_id, s.pan_lr.height, s.pan_lr.width, s.ms_lr.height, s.ms_lr.width, cfg.r
        )));
    }
    Ok(())
}

/// L1 loss and PSNR (dB, on `[0, 1]`-shifted data) over a sample set.
fn validate_set(weights: &MessfnWeights<f32>, samples: &[Sample], batch: usize) -> Result<(f64, f64)> {
    let (mut abs, mut psnr_sum, mut count, mut n) = (0.0, 0.0, 0usize, 0usize);
    for chunk in samples.chunks(batch) {
        let ms = stack(&chunk.iter().map(|s| &s.ms).collect::<Vec<_>>())?;
        let pan = stack(&chunk.iter().map(|s| &s.pan).collect::<Vec<_>>())?;
        let pred = weights.predict(&ms, &pan)?;
        let per = pred.numel() / chunk.len();
        for (i, s) in chunk.iter().enumerate() {
            let p = &pred.data()[i * per..(i + 1) * per];
            let mut se = 0.0;
            for (&a, &b) in p.iter().zip(s.target.data()) {
                let d = a.as_f64() - b.as_f64();
                abs += d.abs();
                se += d * d;
            }
            let mse01 = se / per as f64 / 4.0;
            psnr_sum += if mse01 == 0.0 { PSNR_CAP_DB } else { (-10.0 * mse01.log10()).min(PSNR_CAP_DB) };
            count += per;
            n += 1;
        }
    }
    Ok((abs / count as f64, psnr_sum / n as f64))
}

fn append_log(dir: &Path, line: &str) -> Result<()> {
    let path = dir.join(LOSS_LOG_FILE);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CoreError::io(&path, e))?;
    writeln!(f, "{line}").map_err(|e| CoreError::io(&path, e))
}

/// Trains the network on `manifest.train`, validating on `manifest.val`.
pub fn train(manifest: &DatasetManifest, mcfg: &MessfnConfig, tcfg: &TrainConfig, opts: TrainOptions) -> Result<TrainOutcome> {
    mcfg.validate()?;
    tcfg.validate()?;
    let mut pairs = manifest.train.as_slice();
    if let Some(cap) = tcfg.max_patches {
        pairs = &pairs[..cap.min(pairs.len())];
    }
    if pairs.is_empty() {
        return Err(CoreError::Config("training set is empty".into()));
    }
    for s in pairs.iter().chain(&manifest.val) {
        check_sample_geometry(mcfg, s)?;
    }
    let train_set = to_samples(pairs)?;
    let val_set = to_samples(&manifest.val)?;
    if train_set.len() < tcfg.batch_size {
        return Err(CoreError::Config(format!(
            "batch size {} exceeds the {} training samples (partial batches are dropped)",
            tcfg.batch_size,
            train_set.len()
        )));
    }

    let (mut weights, start_epoch, mut global_step) = match (opts.resume, opts.initial) {
        (Some(ck), _) => {
            ck.ensure_config(mcfg)?;
            if ck.train_echo != tcfg.echo() {
                return Err(CoreError::Incompatible(
                    "resume requires the training configuration stored in the checkpoint".into(),
                ));
            }
            (ck.weights, ck.epochs_completed as usize, ck.global_step)
        }
        (None, Some(w)) => {
            if &w.config != mcfg {
                return Err(CoreError::Incompatible("initial weights do not match the model configuration".into()));
            }
            (w, 0, 0)
        }
        (None, None) => (MessfnWeights::init(mcfg, tcfg.seed)?, 0, 0),
    };
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }

    let adam = Adam::new(tcfg.beta1, tcfg.beta2, tcfg.epsilon)?;
    let end_epoch = opts.stop_after_epoch.map_or(tcfg.epochs, |s| s.min(tcfg.epochs));
    let batches = train_set.len() / tcfg.batch_size;
    let mut reports = Vec::new();
    let mut step_losses = Vec::new();
    let save = |weights: &MessfnWeights<f32>, epochs: usize, step: u64| -> Result<()> {
        if let Some(dir) = &opts.out_dir {
            Checkpoint {
                weights: weights.clone(),
                train_echo: tcfg.echo(),
                epochs_completed: epochs as u64,
                global_step: step,
            }
            .save(dir.join(CHECKPOINT_FILE))?;
        }
        Ok(())
    };

    for epoch in start_epoch..end_epoch {
        let started = Instant::now();
        let lr = tcfg.lr_at(epoch);
        let order = epoch_order(train_set.len(), tcfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for b in 0..batches {
            let idx = &order[b * tcfg.batch_size..(b + 1) * tcfg.batch_size];
            let pick = |f: fn(&Sample) -> &Tensor<f32>| stack(&idx.iter().map(|&i| f(&train_set[i])).collect::<Vec<_>>());
            let mut tape = Tape::new();
            let ms = tape.constant(pick(|s| &s.ms)?)?;
            let pan = tape.constant(pick(|s| &s.pan)?)?;
            let target = tape.constant(pick(|s| &s.target)?)?;
            let out = forward(&mut tape, mcfg, &weights.params, ms, pan)?;
            let loss = tape.l1_loss(out, target)?;
            let value = tape.value(loss).data()[0].as_f64();
            if !value.is_finite() {
                return Err(CoreError::NonFinite(format!(
                    "loss became {value} at epoch {epoch}, step {global_step}; last good checkpoint kept"
                )));
            }
            tape.backward_into(loss, &mut weights.params)?;
            adam.step(&mut weights.params, lr)?;
            global_step += 1;
            epoch_loss += value;
            step_losses.push(value);
        }
        let (val_l1, val_psnr) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l1, p) = validate_set(&weights, &val_set, tcfg.batch_size)?;
            (Some(l1), Some(p))
        };
        let report = LossReport {
            epoch,
            train_l1: epoch_loss / batches as f64,
            val_l1,
            val_psnr,
            lr_in_effect: lr,
            wall_time: started.elapsed().as_secs_f64(),
        };
        log::info!("{}", report.to_line());
        if let Some(dir) = &opts.out_dir {
            append_log(dir, &report.to_line())?;
        }
        reports.push(report);
        let done = epoch + 1;
        if done % tcfg.checkpoint_every == 0 || done == end_epoch {
            save(&weights, done, global_step)?;
        }
    }
    Ok(TrainOutcome {
        weights,
        reports,
        step_losses,
        epochs_completed: end_epoch.max(start_epoch),
        global_step,
    })
}

/// Mean metrics of the network over a sample set.
pub fn evaluate(weights: &MessfnWeights<f32>, samples: &[SamplePair], selection: &BTreeSet<Metric>) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(CoreError::Config("evaluation set is empty".into()));
    }
    let mut reports = Vec::with_capacity(samples.len());
    for s in samples {
        check_sample_geometry(&weights.config, s)?;
        let pred = weights.predict(&raster_batch(&[&s.ms_lr])?, &raster_batch(&[&s.pan_lr])?)?;
        let fused = tensor_rasters(&pred, s.ms_ref.bit_depth)?.remove(0);
        reports.push(reference_report(&fused, &s.ms_ref, weights.config.r, selection)?);
    }
    MetricReport::mean(&reports)
}
