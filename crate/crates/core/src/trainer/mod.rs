//! Training loop.
//!
//! An epoch draws `|train|` triplets in `⌈|train| / batch_size⌉` batches and
//! reads neighbour set `epoch mod num_presample_sets`. After every
//! `eval_every` epochs the model is scored on validation Recall@20 and the
//! best model so far is kept; training stops once `early_stop_patience`
//! evaluations in a row fail to beat the best value.

use std::fmt::Write as _;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_triplets, InteractionDataset};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_embeddings, inference_embeddings, EvalConfig, EvalReport, Target};
use crate::graphs::GraphBundle;
use crate::model::{Bprmf, EncodeContext, Model, MultiGccf};
use crate::numerics::{AdamConfig, Tape};

/// Cutoff used for model selection.
pub const SELECTION_K: usize = 20;

pub const EPOCH_LOG_HEADER: &str = "epoch,mean_loss,val_recall@20,val_ndcg@20,seconds";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub num_presample_sets: usize,
    pub eval_every: usize,
    /// Users scored by the per-epoch validation pass.
    pub validation_users: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 1024,
            max_epochs: 50,
            early_stop_patience: 5,
            seed: 0,
            num_presample_sets: 30,
            eval_every: 1,
            validation_users: 2000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::Config("early_stop_patience must be at least 1".into()));
        }
        if self.eval_every == 0 || self.num_presample_sets == 0 || self.validation_users == 0 {
            return Err(Error::Config(
                "eval_every, num_presample_sets and validation_users must be at least 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// `None` for epochs without a validation pass.
    pub val_recall: Option<f64>,
    pub val_ndcg: Option<f64>,
    pub seconds: f64,
}

impl EpochRecord {
    /// One CSV row matching [`EPOCH_LOG_HEADER`]. Skipped evaluations are
    /// left empty.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{:.3}",
            self.epoch,
            self.mean_loss,
            opt(self.val_recall),
            opt(self.val_ndcg),
            self.seconds
        )
    }
}

/// Writes the whole history as CSV, header included.
pub fn epoch_log_csv(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{EPOCH_LOG_HEADER}");
    for r in history {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub best_validation_recall: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub evaluations: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    fn new() -> Self {
        TrainState {
            epoch: 0,
            best_validation_recall: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
            evaluations: 0,
            stopped_early: false,
            history: Vec::new(),
        }
    }

    pub fn loss_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.mean_loss).collect()
    }

    /// Records a validation score; returns whether it is a new best.
    fn observe(&mut self, recall: f64) -> bool {
        self.evaluations += 1;
        if recall > self.best_validation_recall {
            self.best_validation_recall = recall;
            self.best_epoch = self.epoch;
            self.epochs_since_improvement = 0;
            true
        } else {
            self.epochs_since_improvement += 1;
            false
        }
    }
}

pub struct TrainOutcome {
    /// The best model by validation Recall@20.
    pub model: Model,
    pub state: TrainState,
    /// Validation metrics of `model` over all users.
    pub report: EvalReport,
}

/// Users scored during training: those with validation items, subsampled
/// to at most `limit` with a seeded shuffle.
pub fn validation_subset(ds: &InteractionDataset, limit: usize, seed: u64) -> Vec<usize> {
    let mut users: Vec<usize> = (0..ds.num_users())
        .filter(|&u| !ds.validation_items(u).is_empty())
        .collect();
    if users.len() > limit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        users.shuffle(&mut rng);
        users.truncate(limit);
        users.sort_unstable();
    }
    users
}

/// Copies BPRMF tables into `model` and freezes them.
pub fn warm_start_from_bprmf(model: &mut MultiGccf, bprmf: &Bprmf) -> Result<()> {
    if bprmf.dim() != model.config().input_dim {
        return Err(Error::Config(format!(
            "BPRMF dimension {} differs from input_dim {}",
            bprmf.dim(),
            model.config().input_dim
        )));
    }
    if bprmf.num_users() != model.num_users() || bprmf.num_items() != model.num_items() {
        return Err(Error::Config("BPRMF tables were trained on a different dataset".into()));
    }
    model.warm_start(bprmf.user_table(), bprmf.item_table())
}

/// Trains `model`, calling `on_epoch` after each epoch.
pub fn train(
    mut model: Model,
    ds: &InteractionDataset,
    bundle: Option<&GraphBundle>,
    cfg: &TrainConfig,
    eval: &EvalConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    eval.validate()?;
    if model.num_users() != ds.num_users() || model.num_items() != ds.num_items() {
        return Err(Error::Config(format!(
            "model has {}x{} users x items, dataset {}x{}",
            model.num_users(),
            model.num_items(),
            ds.num_users(),
            ds.num_items()
        )));
    }
    if model.needs_graphs() {
        let b = bundle
            .ok_or_else(|| Error::Config("graph bundle required to train this model".into()))?;
        b.check_matches(ds)?;
    }
    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sample_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);
    let val_users = validation_subset(ds, cfg.validation_users, cfg.seed);
    let n = ds.train().len();
    let num_batches = n.div_ceil(cfg.batch_size);

    let mut state = TrainState::new();
    let mut best = model.clone();
    while state.epoch < cfg.max_epochs {
        let start = Instant::now();
        let epoch = state.epoch;
        let ctx = bundle
            .filter(|_| model.needs_graphs())
            .map(|b| EncodeContext::training(b, epoch % cfg.num_presample_sets));
        let mut loss_sum = 0.0;
        for b in 0..num_batches {
            let size = cfg.batch_size.min(n - b * cfg.batch_size);
            let batch = sample_triplets(ds, size, &mut sample_rng)?;
            let mut tape = Tape::new(model.params());
            let terms = model.batch_loss(&mut tape, &batch, ctx.as_ref(), &mut dropout_rng)?;
            let loss = tape.scalar(terms.total);
            if !loss.is_finite() {
                let culprit = model.params().first_non_finite().unwrap_or("none");
                return Err(Error::NonFinite(format!(
                    "loss {loss} at epoch {} batch {}/{num_batches} (non-finite parameter: {culprit})",
                    epoch + 1,
                    b + 1
                )));
            }
            loss_sum += loss;
            let grads = tape.backward(terms.total)?;
            drop(tape);
            grads.accumulate_into(model.params_mut())?;
            model.params_mut().adam_step(&adam)?;
            if cfg!(debug_assertions) {
                model.params().check_finite()?;
            }
        }
        model.params().check_finite()?;
        state.epoch += 1;
        let mean_loss = if num_batches == 0 { 0.0 } else { loss_sum / num_batches as f64 };

        let due = state.epoch.is_multiple_of(cfg.eval_every) || state.epoch == cfg.max_epochs;
        let (val_recall, val_ndcg) = if due {
            let emb = inference_embeddings(&model, bundle, eval)?;
            let rep = evaluate_embeddings(&emb, ds, Target::Validation, &[SELECTION_K], Some(&val_users))?;
            (Some(rep.recall(SELECTION_K)), Some(rep.ndcg(SELECTION_K)))
        } else {
            (None, None)
        };
        let record = EpochRecord {
            epoch: state.epoch,
            mean_loss,
            val_recall,
            val_ndcg,
            seconds: start.elapsed().as_secs_f64(),
        };
        debug!("epoch {}: {}", state.epoch, record.csv_row());
        on_epoch(&record);
        state.history.push(record);
        if let Some(r) = val_recall {
            if state.observe(r) {
                best = model.clone();
            } else if state.epochs_since_improvement >= cfg.early_stop_patience {
                info!(
                    "early stop after epoch {} (best {:.5} at epoch {})",
                    state.epoch, state.best_validation_recall, state.best_epoch
                );
                state.stopped_early = true;
                break;
            }
        }
    }
    let emb = inference_embeddings(&best, bundle, eval)?;
    let report = evaluate_embeddings(&emb, ds, Target::Validation, &eval.cutoffs, None)?;
    Ok(TrainOutcome {
        model: best,
        state,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_bookkeeping() {
        let mut s = TrainState::new();
        assert!(s.observe(0.0));
        assert!(!s.observe(0.0));
        assert_eq!(s.epochs_since_improvement, 1);
        assert!(s.observe(0.1));
        assert_eq!(s.epochs_since_improvement, 0);
        assert!(!s.observe(0.05));
        assert_eq!(s.evaluations, 4);
        assert_eq!(s.best_validation_recall, 0.1);
    }

    #[test]
    fn csv_rows() {
        let r = EpochRecord {
            epoch: 3,
            mean_loss: 1.5,
            val_recall: Some(0.25),
            val_ndcg: None,
            seconds: 0.5,
        };
        assert_eq!(r.csv_row(), "3,1.5,0.25,,0.500");
        assert!(epoch_log_csv(&[r]).starts_with(EPOCH_LOG_HEADER));
    }

    #[test]
    fn invalid_configs() {
        for c in [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { early_stop_patience: 0, ..Default::default() },
            TrainConfig { learning_rate: f64::NAN, ..Default::default() },
        ] {
            assert!(c.validate().is_err());
        }
        TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().unwrap();
    }
}
