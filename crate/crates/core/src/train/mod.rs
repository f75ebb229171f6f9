//! Supervised training with Adam, plus the gradient verification harness.

mod adam;
mod gradcheck;
mod loss;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, GroupError, Precision};
pub use loss::cross_entropy;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::model::{argmax, Cspmnet, IqBatch, ModelConfig};
use crate::nn::Mode;
use crate::signal::{derive_seed, Dataset};

pub const DEFAULT_BUDGET: usize = 300_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Global gradient-norm clip; off by default.
    pub clip_norm: Option<f64>,
    /// Largest admissible trainable-parameter count.
    pub budget: Option<usize>,
    /// Batch size for validation passes.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 512,
            adam: AdamConfig::default(),
            seed: 42,
            clip_norm: None,
            budget: Some(DEFAULT_BUDGET),
            eval_batch: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        if self.eval_batch == 0 {
            return Err(Error::Config("evaluation batch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the highest validation accuracy, earliest on ties.
    pub best_epoch: usize,
    pub optimizer_steps: u64,
}

impl TrainHistory {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.epochs {
            w.serialize(r).map_err(|e| Error::Input(format!("history CSV: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(format!("history CSV: {e}")))?;
        Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
    }

    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Cspmnet<f32>,
    pub last: Cspmnet<f32>,
    pub history: TrainHistory,
}

/// Mean cross-entropy and accuracy of `model` in eval mode.
pub fn loss_and_accuracy(model: &Cspmnet<f32>, ds: &Dataset, batch: usize) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::Input("cannot score an empty dataset".into()));
    }
    let classes = model.config().num_classes;
    let (mut loss, mut correct) = (0.0f64, 0usize);
    for chunk in ds.examples().chunks(batch.max(1)) {
        let pass = model.forward(IqBatch::from_sequences(chunk.iter().map(|e| &e.signal))?, Mode::Eval)?;
        let labels: Vec<u32> = chunk.iter().map(|e| e.label).collect();
        let (l, _) = cross_entropy(&pass.logits, &labels, classes)?;
        loss += l as f64 * chunk.len() as f64;
        correct += pass
            .logits
            .chunks_exact(classes)
            .zip(&labels)
            .filter(|(row, &y)| argmax(row) == y as usize)
            .count();
    }
    Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

fn check_budget(model: &Cspmnet<f32>, budget: Option<usize>) -> Result<()> {
    let p = model.num_trainable();
    match budget {
        Some(b) if p > b => Err(Error::Config(format!(
            "model has P(θ) = {p} trainable parameters, above the budget of {b}"
        ))),
        _ => Ok(()),
    }
}

fn check_dataset(cfg: &ModelConfig, ds: &Dataset, role: &str) -> Result<()> {
    if ds.num_classes() != cfg.num_classes {
        return Err(Error::Config(format!(
            "{role} set has {} classes, model has {}",
            ds.num_classes(),
            cfg.num_classes
        )));
    }
    if ds.seq_len() != cfg.seq_len {
        return Err(Error::Config(format!(
            "{role} set has length {}, model expects {}",
            ds.seq_len(),
            cfg.seq_len
        )));
    }
    if ds.is_empty() {
        return Err(Error::Input(format!("{role} set is empty")));
    }
    Ok(())
}

/// Trains a freshly initialised model. When `out_dir` is given, writes
/// `best.ckpt`, `last.ckpt` and `history.csv` there. `on_epoch` sees each
/// epoch's record as soon as it is complete.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(model_cfg, train_set, "training")?;
    check_dataset(model_cfg, val_set, "validation")?;
    let mut model = Cspmnet::<f32>::new(model_cfg.clone(), cfg.seed)?;
    check_budget(&model, cfg.budget)?;
    let mut opt = Adam::new(cfg.adam, &model);
    let classes = model_cfg.num_classes;

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Cspmnet<f32>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &[0x5eed, epoch as u64],
        )));
        let mut total = 0.0f64;
        for idx in order.chunks(cfg.batch_size) {
            let examples: Vec<_> = idx.iter().map(|&i| &train_set.examples()[i]).collect();
            let labels: Vec<u32> = examples.iter().map(|e| e.label).collect();
            let pass = model.forward(
                IqBatch::from_sequences(examples.iter().map(|e| &e.signal))?,
                Mode::Train,
            )?;
            let (loss, dlogits) = cross_entropy(&pass.logits, &labels, classes)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss in epoch {epoch}")));
            }
            total += loss as f64 * idx.len() as f64;
            let mut grads = model.backward(&pass.tape, &dlogits)?;
            drop(pass.tape);
            if let Some(c) = cfg.clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            opt.step(&mut model, &grads)?;
            if let Some(stats) = pass.stats {
                model.update_running_stats(&stats);
            }
        }
        let (val_loss, val_acc) = loss_and_accuracy(&model, val_set, cfg.eval_batch)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_loss,
            val_acc,
            seconds: started.elapsed().as_secs_f64(),
        };
        if best.as_ref().is_none_or(|(_, acc, _)| val_acc > *acc) {
            best = Some((epoch, val_acc, model.clone()));
        }
        on_epoch(&record);
        records.push(record);
    }
    let (best_epoch, _, best_model) = best.expect("at least one epoch");
    let history = TrainHistory {
        epochs: records,
        best_epoch,
        optimizer_steps: opt.steps(),
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(&best_model, dir.join("best.ckpt"))?;
        save_checkpoint(&model, dir.join("last.ckpt"))?;
        write_atomic(dir.join("history.csv"), history.to_csv()?.as_bytes())?;
    }
    Ok(TrainOutcome {
        best: best_model,
        last: model,
        history,
    })
}
