//! Supervised warm-up and iterative self-training of the Q&A classifier.
//!
//! Generation 0 trains on the labeled set with the label and quality terms.
//! Each later generation predicts on the unlabeled samples not yet admitted,
//! admits those with at least one confident class (their pseudo targets are
//! frozen from then on) and retrains on labeled ∪ admitted with all three
//! terms. The loop ends when validation micro-F1 stops moving, when a
//! generation admits nothing, or at the generation cap; the parameters with
//! the best validation micro-F1 are returned.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{split_holdout, Annotation, Dataset, DatasetKind, Origin, Provenance, Sample};
use crate::encoder::EncodedSample;
use crate::error::{Error, Result};
use crate::eval::{confusion, micro_prf, threshold_labels};
use crate::losses::{clamp_prob, pseudo_targets, validate_tau, LossWeights};
use crate::optim::{Adam, AdamConfig, LinearSchedule, ParamSet};
use crate::qa_model::{batch_objective, predict_probs, QaConfig, QaParams, Target};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub schedule: LinearSchedule,
    /// Inner epoch cap per generation.
    pub max_epochs: usize,
    /// Epochs run before the loss-change rule may stop training.
    pub min_epochs: usize,
    /// Stop an inner loop when the epoch-over-epoch mean loss change is below this.
    pub loss_epsilon: f64,
    /// Stop self-training when validation micro-F1 changes by less than this.
    pub generation_epsilon: f64,
    pub max_generations: usize,
    /// Fraction of the labeled set held out for validation.
    pub validation_fraction: f64,
    pub tau: f64,
    pub prob_clamp: f64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            adam: AdamConfig::default(),
            schedule: LinearSchedule::default(),
            max_epochs: 50,
            min_epochs: 3,
            loss_epsilon: 1e-3,
            generation_epsilon: 1e-3,
            max_generations: 5,
            validation_fraction: 0.1,
            tau: 0.7,
            prob_clamp: crate::losses::DEFAULT_PROB_CLAMP,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, m: String| Err(Error::config(f, m));
        if self.batch_size == 0 {
            return err("trainer.batch_size", "must be at least 1".into());
        }
        validate_tau(self.tau)?;
        self.weights.validate()?;
        for (name, v) in [
            ("trainer.loss_epsilon", self.loss_epsilon),
            ("trainer.generation_epsilon", self.generation_epsilon),
            ("trainer.adam.learning_rate", self.adam.learning_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return err(name, format!("must be finite and > 0, got {v}"));
            }
        }
        if self.max_epochs == 0 {
            return err("trainer.max_epochs", "must be at least 1".into());
        }
        if self.min_epochs > self.max_epochs {
            return err("trainer.min_epochs", "exceeds trainer.max_epochs".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return err("trainer.validation_fraction", "must lie in [0, 1)".into());
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return err("loss.prob_clamp", "must lie in (0, 0.5)".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr_factor: f64,
    pub total: f64,
    pub label: f64,
    pub unlabel: f64,
    pub quality: f64,
}

/// Minibatch Adam on a fixed set of targets until the mean epoch loss
/// settles or the epoch cap is hit.
pub fn fit(
    params: &mut QaParams,
    qa: &QaConfig,
    tc: &TrainConfig,
    items: &[(&EncodedSample, &Target)],
    rng: &mut Rng,
) -> Result<Vec<EpochStats>> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut opt = Adam::new(tc.adam, params);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut history: Vec<EpochStats> = Vec::new();
    for epoch in 0..tc.max_epochs {
        order.shuffle(rng);
        let lr_factor = tc.schedule.factor(epoch);
        let mut sums = [0.0; 4];
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| items[i]).collect();
            let mut grads = params.zeros_like();
            let b = batch_objective(
                params,
                qa,
                &batch,
                &tc.weights,
                tc.prob_clamp,
                Some(rng),
                Some(&mut grads),
            )
            .map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}: {m}")),
                other => other,
            })?;
            opt.step(params, &grads, lr_factor);
            if !params.all_finite() {
                return Err(Error::Numerical(format!("epoch {epoch}: parameters became non-finite")));
            }
            let w = chunk.len() as f64;
            sums[0] += b.total * w;
            sums[1] += b.label_term * w;
            sums[2] += b.unlabel_term * w;
            sums[3] += b.quality_term * w;
        }
        let n = items.len() as f64;
        let stats = EpochStats {
            epoch,
            lr_factor,
            total: sums[0] / n,
            label: sums[1] / n,
            unlabel: sums[2] / n,
            quality: sums[3] / n,
        };
        log::debug!("epoch {epoch}: loss {:.5}", stats.total);
        let settled = history
            .last()
            .is_some_and(|prev| (prev.total - stats.total).abs() < tc.loss_epsilon);
        history.push(stats);
        if settled && epoch + 1 >= tc.min_epochs {
            break;
        }
    }
    Ok(history)
}

fn labeled_targets(d: &Dataset) -> Result<Vec<Target>> {
    d.iter()
        .map(|s| match &s.annotation {
            Annotation::Labeled(l) => Ok(Target::Labeled(l.clone())),
            _ => Err(Error::InvalidInput(format!("sample {} has no label", s.id))),
        })
        .collect()
}

/// Supervised warm-up on labeled data (label + quality terms).
pub fn warmup_train(
    d_l: &Dataset,
    encoded: &[EncodedSample],
    qa: &QaConfig,
    tc: &TrainConfig,
    seed: u64,
) -> Result<(QaParams, Vec<EpochStats>)> {
    if d_l.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_aligned(d_l, encoded)?;
    let targets = labeled_targets(d_l)?;
    let items: Vec<_> = encoded.iter().zip(&targets).collect();
    let mut params = QaParams::init(qa, &mut rng::stream(seed, "qa-init"));
    let history = fit(&mut params, qa, tc, &items, &mut rng::stream(seed, "qa-warmup"))?;
    Ok((params, history))
}

fn check_aligned(d: &Dataset, encoded: &[EncodedSample]) -> Result<()> {
    if d.len() != encoded.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} encodings",
            d.len(),
            encoded.len()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PseudoOutcome {
    /// Admitted samples (kind pseudo), answers kept.
    pub dataset: Dataset,
    /// Index into the input unlabeled set of each admitted sample.
    pub source_index: Vec<usize>,
    /// Whether every class of the admitted sample passed the threshold.
    pub all_confident: Vec<bool>,
    /// Probabilities for every input sample.
    pub probs: Vec<Vec<f64>>,
}

/// Applies the confidence rule per class and keeps samples with at least one
/// confident class. The rule sees probabilities clamped to `[eps, 1 - eps]`,
/// as the loss does, so a saturated output never clears `tau = 1`.
pub fn pseudo_from_probs(d_u: &Dataset, probs: Vec<Vec<f64>>, tau: f64, eps: f64) -> Result<PseudoOutcome> {
    validate_tau(tau)?;
    if probs.len() != d_u.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} predictions",
            d_u.len(),
            probs.len()
        )));
    }
    let mut samples = Vec::new();
    let mut source_index = Vec::new();
    let mut all_confident = Vec::new();
    for (i, (s, p)) in d_u.iter().zip(&probs).enumerate() {
        let clamped: Vec<f64> = p.iter().map(|&v| clamp_prob(v, eps)).collect();
        let (label, mask) = pseudo_targets(&clamped, tau);
        if !mask.any() {
            continue;
        }
        all_confident.push(mask.is_full());
        source_index.push(i);
        samples.push(Sample {
            annotation: Annotation::Pseudo { label, mask },
            provenance: Some(Provenance::origin(Origin::Pseudo)),
            ..s.clone()
        });
    }
    Ok(PseudoOutcome {
        dataset: Dataset::new(DatasetKind::Pseudo, d_u.classes().clone(), samples)?,
        source_index,
        all_confident,
        probs,
    })
}

pub fn predict_pseudo(
    params: &QaParams,
    qa: &QaConfig,
    d_u: &Dataset,
    encoded: &[EncodedSample],
    tau: f64,
    eps: f64,
) -> Result<PseudoOutcome> {
    check_aligned(d_u, encoded)?;
    let probs = predict_probs(params, qa, encoded)?;
    pseudo_from_probs(d_u, probs, tau, eps)
}

/// Micro-F1 at threshold 0.5.
pub fn validation_f1(params: &QaParams, qa: &QaConfig, d: &Dataset, encoded: &[EncodedSample]) -> Result<f64> {
    let probs = predict_probs(params, qa, encoded)?;
    let counts = confusion(&d.labels(), &threshold_labels(&probs, 0.5))?;
    Ok(micro_prf(&counts).f1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Newly admitted this generation.
    pub admitted: usize,
    pub total_admitted: usize,
    pub epochs: usize,
    pub final_loss: Option<EpochStats>,
    pub validation_f1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub generation: usize,
    /// Admitted samples with frozen pseudo targets, in admission order.
    pub admitted: Vec<Sample>,
    /// Index into the unlabeled set of each admitted sample.
    pub admitted_index: Vec<usize>,
    pub history: Vec<GenerationRecord>,
    pub snapshots: Vec<QaParams>,
    pub best_generation: usize,
}

impl TrainState {
    pub fn pseudo_dataset(&self, d_u: &Dataset) -> Result<Dataset> {
        Dataset::new(DatasetKind::Pseudo, d_u.classes().clone(), self.admitted.clone())
    }
}

pub struct SelfTrainOutcome {
    pub params: QaParams,
    pub state: TrainState,
}

/// Called after each generation with its record and parameters.
pub type GenerationHook<'a> = dyn FnMut(&GenerationRecord, &QaParams) -> Result<()> + 'a;

#[allow(clippy::too_many_arguments)]
pub fn self_train(
    d_l: &Dataset,
    enc_l: &[EncodedSample],
    d_u: &Dataset,
    enc_u: &[EncodedSample],
    qa: &QaConfig,
    tc: &TrainConfig,
    seed: u64,
    hook: &mut GenerationHook<'_>,
) -> Result<SelfTrainOutcome> {
    tc.validate()?;
    qa.validate()?;
    check_aligned(d_l, enc_l)?;
    check_aligned(d_u, enc_u)?;
    if d_l.is_empty() {
        return Err(Error::EmptyDataset);
    }

    // Validation split by index so encodings can be reused.
    let indexed = Dataset::new(
        d_l.kind(),
        d_l.classes().clone(),
        d_l.iter()
            .enumerate()
            .map(|(i, s)| Sample {
                id: i.to_string(),
                ..s.clone()
            })
            .collect(),
    )?;
    let (train_part, val_part) = split_holdout(&indexed, tc.validation_fraction, rng::derive_seed(seed, "validation"));
    let index_of = |s: &Sample| s.id.parse::<usize>().expect("index ids");
    let train_idx: Vec<usize> = train_part.iter().map(index_of).collect();
    let mut val_idx: Vec<usize> = val_part.iter().map(index_of).collect();
    if val_idx.is_empty() {
        log::warn!("labeled set too small for a validation split; validating on the training samples");
        val_idx = train_idx.clone();
    }
    let val_set = d_l.select(&val_idx);
    let val_enc: Vec<EncodedSample> = val_idx.iter().map(|&i| enc_l[i].clone()).collect();
    let train_targets: Vec<Target> = labeled_targets(&d_l.select(&train_idx))?;

    let mut params = QaParams::init(qa, &mut rng::stream(seed, "qa-init"));
    let mut state = TrainState {
        generation: 0,
        admitted: Vec::new(),
        admitted_index: Vec::new(),
        history: Vec::new(),
        snapshots: Vec::new(),
        best_generation: 0,
    };
    let mut pseudo_targets_frozen: Vec<Target> = Vec::new();
    let mut is_admitted = vec![false; d_u.len()];

    for generation in 0..=tc.max_generations {
        let mut admitted_now = 0;
        if generation > 0 {
            let remaining: Vec<usize> = (0..d_u.len()).filter(|&i| !is_admitted[i]).collect();
            if !remaining.is_empty() {
                let rem_enc: Vec<EncodedSample> = remaining.iter().map(|&i| enc_u[i].clone()).collect();
                let outcome = predict_pseudo(&params, qa, &d_u.select(&remaining), &rem_enc, tc.tau, tc.prob_clamp)?;
                for (s, &local) in outcome.dataset.iter().zip(&outcome.source_index) {
                    let global = remaining[local];
                    is_admitted[global] = true;
                    if let Annotation::Pseudo { label, mask } = &s.annotation {
                        pseudo_targets_frozen.push(Target::Pseudo {
                            label: label.clone(),
                            mask: mask.clone(),
                        });
                    }
                    state.admitted.push(s.clone());
                    state.admitted_index.push(global);
                    admitted_now += 1;
                }
            }
            if admitted_now == 0 {
                log::info!("generation {generation}: no new confident samples, stopping");
                break;
            }
        }

        let mut items: Vec<(&EncodedSample, &Target)> =
            train_idx.iter().map(|&i| &enc_l[i]).zip(&train_targets).collect();
        items.extend(
            state
                .admitted_index
                .iter()
                .map(|&i| &enc_u[i])
                .zip(&pseudo_targets_frozen),
        );
        let mut fit_rng = rng::stream(seed, &format!("qa-generation-{generation}"));
        let epochs = fit(&mut params, qa, tc, &items, &mut fit_rng)?;
        let f1 = validation_f1(&params, qa, &val_set, &val_enc)?;
        let record = GenerationRecord {
            generation,
            admitted: admitted_now,
            total_admitted: state.admitted.len(),
            epochs: epochs.len(),
            final_loss: epochs.last().cloned(),
            validation_f1: f1,
        };
        log::info!(
            "generation {generation}: admitted {admitted_now} (total {}), {} epochs, validation micro-F1 {f1:.4}",
            record.total_admitted,
            record.epochs
        );
        hook(&record, &params)?;
        let previous = state.history.last().map(|r| r.validation_f1);
        if state.history.is_empty() || f1 > state.history[state.best_generation].validation_f1 {
            state.best_generation = generation;
        }
        state.history.push(record);
        state.snapshots.push(params.clone());
        state.generation = generation;
        if previous.is_some_and(|p| (f1 - p).abs() < tc.generation_epsilon) {
            break;
        }
    }
    let params = state.snapshots[state.best_generation].clone();
    Ok(SelfTrainOutcome { params, state })
}
