//! Mini-batch Adam training, evaluation and the cross-validation protocol.

mod adam;
mod metrics;
mod split;

pub use adam::{adam_step, AdamState};
pub use metrics::{accuracy, macro_f1, Summary};
pub use split::{holdout_split, kfold, Split};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::Pass;
use crate::data::LabeledSequenceSet;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::Matrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub folds: usize,
    /// Independent repetitions of the whole protocol, each fully re-seeded.
    pub runs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 90,
            batch_size: 256,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            folds: 5,
            runs: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.runs == 0 {
            return Err(Error::InvalidConfig("runs must be >= 1".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::InvalidConfig("adam_eps must be > 0".into()));
        }
        Ok(())
    }

    /// Additionally requires `folds >= 2`.
    pub fn validate_for_cv(&self) -> Result<()> {
        self.validate()?;
        if self.folds < 2 {
            return Err(Error::InvalidConfig(format!("folds must be >= 2, got {}", self.folds)));
        }
        Ok(())
    }
}

/// Mean training loss per epoch.
pub type LossTrace = Vec<f64>;

/// Trains `model` in place. Shuffling streams from `seed`, dropout masks
/// from a per-item seed derived from it.
pub fn train(model: &mut Model, data: &LabeledSequenceSet, cfg: &TrainConfig, seed: u64) -> Result<LossTrace> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptySequence("training set"));
    }
    if data.classes > model.config().classes {
        return Err(Error::InvalidArgument(format!(
            "data has {} classes, model predicts {}",
            data.classes,
            model.config().classes
        )));
    }
    let mut shuffle_rng = rng::seeded(rng::derive(seed, 1));
    let dropout_seed = rng::derive(seed, 2);
    let n = data.len();
    let mut params = model.parameter_values();
    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0u64;
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let base = (epoch * n + batch * cfg.batch_size) as u64;
            let results: Vec<Result<(f64, Vec<Matrix>)>> = chunk
                .par_iter()
                .enumerate()
                .map(|(pos, &i)| {
                    let item = &data.items[i];
                    let pass = Pass::Train {
                        seed: rng::derive(dropout_seed, base + pos as u64),
                    };
                    model.loss_and_grad(&item.features, item.label, pass)
                })
                .collect();
            let scale = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            let mut grads: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            for r in results {
                let (l, g) = r?;
                loss += l;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    acc.axpy(scale, gi);
                }
            }
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            epoch_loss += loss;
            step += 1;
            adam_step(&mut params, &grads, &mut state, step, cfg)?;
            model.set_parameters(&params)?;
            model.enforce_constraints();
            params = model.parameter_values();
        }
        trace.push(epoch_loss / n as f64);
    }
    Ok(trace)
}

/// Builds a model initialized from `data` (init seed derived from `seed`)
/// and trains it.
pub fn fit(
    model_cfg: &ModelConfig,
    data: &LabeledSequenceSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Model, LossTrace)> {
    let mut mc = model_cfg.clone();
    mc.seed = rng::derive(seed, 0);
    let mut model = Model::new(mc, &data.features())?;
    let trace = train(&mut model, data, cfg, seed)?;
    Ok((model, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub predictions: Vec<usize>,
}

pub fn predict(model: &Model, data: &LabeledSequenceSet) -> Result<Vec<usize>> {
    data.items.par_iter().map(|i| model.predict(&i.features)).collect()
}

pub fn evaluate(model: &Model, data: &LabeledSequenceSet) -> Result<Evaluation> {
    let predictions = predict(model, data)?;
    let labels = data.labels();
    Ok(Evaluation {
        accuracy: accuracy(&predictions, &labels)?,
        macro_f1: macro_f1(&predictions, &labels)?,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub run: usize,
    pub fold: usize,
    pub train_items: usize,
    pub val_items: usize,
    pub loss_trace: LossTrace,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub attention: String,
    pub protocol: String,
    pub folds: Vec<FoldReport>,
    pub accuracy: Summary,
    pub macro_f1: Summary,
}

impl TrainReport {
    pub fn from_folds(model_cfg: &ModelConfig, protocol: String, folds: Vec<FoldReport>) -> Self {
        let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let f1: Vec<f64> = folds.iter().map(|f| f.macro_f1).collect();
        TrainReport {
            attention: model_cfg.attention.to_string(),
            protocol,
            accuracy: Summary::of(&acc),
            macro_f1: Summary::of(&f1),
            folds,
        }
    }

    /// Per-fold rows followed by a `mean ± std` row, in percent.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| {} ({}) | run | fold | final loss | accuracy | macro-F1 |", self.attention, self.protocol);
        let _ = writeln!(s, "|---|---:|---:|---:|---:|---:|");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "| | {} | {} | {:.4} | {:.2} | {:.2} |",
                f.run,
                f.fold,
                f.loss_trace.last().copied().unwrap_or(f64::NAN),
                100.0 * f.accuracy,
                100.0 * f.macro_f1
            );
        }
        let _ = writeln!(
            s,
            "| **mean ± std** | | | | {:.2} ± {:.2} | {:.2} ± {:.2} |",
            100.0 * self.accuracy.mean,
            100.0 * self.accuracy.std,
            100.0 * self.macro_f1.mean,
            100.0 * self.macro_f1.std
        );
        s
    }
}

fn run_splits(
    model_cfg: &ModelConfig,
    data: &LabeledSequenceSet,
    cfg: &TrainConfig,
    splits_for_run: impl Fn(u64) -> Result<Vec<Split>>,
) -> Result<Vec<FoldReport>> {
    let mut jobs = Vec::new();
    for run in 0..cfg.runs {
        let run_seed = rng::derive(cfg.seed, run as u64);
        for (fold, split) in splits_for_run(run_seed)?.into_iter().enumerate() {
            jobs.push((run, fold, rng::derive(run_seed, 1 + fold as u64), split));
        }
    }
    jobs.into_par_iter()
        .map(|(run, fold, seed, (train_idx, val_idx))| {
            let train_set = data.subset(&train_idx);
            let val_set = data.subset(&val_idx);
            let (model, loss_trace) = fit(model_cfg, &train_set, cfg, seed)?;
            let eval = evaluate(&model, &val_set)?;
            Ok(FoldReport {
                run,
                fold,
                train_items: train_idx.len(),
                val_items: val_idx.len(),
                loss_trace,
                accuracy: eval.accuracy,
                macro_f1: eval.macro_f1,
            })
        })
        .collect()
}

/// `cfg.folds`-fold cross-validation, repeated `cfg.runs` times.
pub fn cross_validate(model_cfg: &ModelConfig, data: &LabeledSequenceSet, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate_for_cv()?;
    model_cfg.validate()?;
    let folds = run_splits(model_cfg, data, cfg, |seed| kfold(data, cfg.folds, seed))?;
    Ok(TrainReport::from_folds(model_cfg, format!("{}-fold", cfg.folds), folds))
}

/// Single train/test split per run.
pub fn holdout(
    model_cfg: &ModelConfig,
    data: &LabeledSequenceSet,
    cfg: &TrainConfig,
    test_fraction: f64,
) -> Result<TrainReport> {
    cfg.validate()?;
    model_cfg.validate()?;
    let folds = run_splits(model_cfg, data, cfg, |seed| Ok(vec![holdout_split(data, test_fraction, seed)?]))?;
    Ok(TrainReport::from_folds(model_cfg, format!("holdout {test_fraction}"), folds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_noisy_timestamps, NoisyTaskParams};
    use crate::model::AttentionKind;

    fn separable() -> LabeledSequenceSet {
        gen_noisy_timestamps(
            NoisyTaskParams {
                classes: 3,
                dim: 4,
                seq_len: 6,
                signal_fraction: 1.0,
                snr: 3.0,
                count: 60,
            },
            5,
        )
        .unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.05,
            ..TrainConfig::default()
        }
    }

    fn small_model(attention: AttentionKind) -> ModelConfig {
        ModelConfig {
            codewords: 8,
            latent_dim: 4,
            ..ModelConfig::desk(4, 6, 3, attention)
        }
    }

    #[test]
    fn zero_epochs_is_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        assert!(TrainConfig { folds: 1, ..TrainConfig::default() }.validate_for_cv().is_err());
    }

    #[test]
    fn separable_task_is_learned() {
        let data = separable();
        let (model, trace) = fit(&small_model(AttentionKind::None), &data, &quick(), 3).unwrap();
        assert_eq!(trace.len(), 30);
        assert!(trace.iter().all(|l| l.is_finite()));
        assert!(evaluate(&model, &data).unwrap().accuracy >= 0.99);
    }

    #[test]
    fn same_seed_same_trace() {
        let data = separable();
        let mc = ModelConfig {
            dropout: 0.2,
            ..small_model("ctsa".parse().unwrap())
        };
        let cfg = TrainConfig { epochs: 3, ..quick() };
        let (m1, t1) = fit(&mc, &data, &cfg, 9).unwrap();
        let (m2, t2) = fit(&mc, &data, &cfg, 9).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(m1, m2);
        let (_, t3) = fit(&mc, &data, &cfg, 10).unwrap();
        assert_ne!(t1, t3);
    }

    #[test]
    fn non_finite_loss_names_the_batch() {
        let mut data = separable();
        data.items[0].features.set(0, 0, f64::NAN);
        let err = fit(&small_model(AttentionKind::None), &data, &quick(), 3).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, .. }), "{err}");
    }

    #[test]
    fn diagonal_survives_training() {
        let data = separable();
        let (model, _) = fit(&small_model("2da-temporal".parse().unwrap()), &data, &TrainConfig { epochs: 2, ..quick() }, 1).unwrap();
        let w = &model.parameters().into_iter().find(|(n, _)| n == "att.W").unwrap().1;
        for i in 0..6 {
            assert_eq!(w.get(i, i), 1.0 / 6.0);
        }
    }

    #[test]
    fn cross_validation_report() {
        let data = separable();
        let cfg = TrainConfig {
            epochs: 5,
            folds: 3,
            runs: 2,
            ..quick()
        };
        let report = cross_validate(&small_model(AttentionKind::None), &data, &cfg).unwrap();
        assert_eq!(report.folds.len(), 6);
        assert_eq!(report.accuracy.n, 6);
        assert!(report.folds.iter().all(|f| f.loss_trace.len() == 5 && f.val_items == 20));
        let md = report.to_markdown();
        assert!(md.contains("mean ± std"));
        let json = serde_json::to_string(&report).unwrap();
        let back: TrainReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
