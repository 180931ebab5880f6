//! Multitask training loop: minibatch AdamW over the joint clue and relation
//! objective, dev-F1 model selection and early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{GraspError, Result};
use crate::evaluation::evaluate;
use crate::model::{
    joint_loss, rcd_loss, rcd_loss_grad, rel_loss_for_word, rel_loss_grad, AdamConfig, AdamW,
    Logits, LossWeights, Model, ModelParams, Reduction,
};
use crate::pipeline::{Grasp, TrainExample};
use crate::prompting::PromptExample;
use crate::rcd::{build_clue_labels, mark_predicted_triggers, ClueLabelSeq};
use crate::scalar::Scalar;

/// Where the trigger markers of the training input come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerSource {
    /// Gold trigger spans (teacher forcing).
    #[default]
    Gold,
    /// The model's own pass-1 predictions, as at inference time.
    Predicted,
}

/// Which input the clue loss is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClueInput {
    /// The trigger-marked input that also carries the relation loss (one pass).
    #[default]
    Marked,
    /// The un-marked pass-1 input, as seen at inference; the relation loss
    /// stays on the trigger-marked input (two passes).
    Unmarked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_seq_len: usize,
    pub seed: u64,
    /// Epochs without a dev-F1 improvement before stopping; 0 disables early stopping.
    pub early_stop_patience: usize,
    pub rcd_reduction: Reduction,
    pub dropout: f64,
    pub trigger_source: TriggerSource,
    pub clue_input: ClueInput,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 0.7,
            lambda2: 0.3,
            epochs: 30,
            batch_size: 8,
            learning_rate: 5e-5,
            max_seq_len: 512,
            seed: 13,
            early_stop_patience: 5,
            rcd_reduction: Reduction::Mean,
            dropout: 0.1,
            trigger_source: TriggerSource::Gold,
            clue_input: ClueInput::Marked,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    // Negated comparisons so that NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GraspError::Contract(m.to_string()));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub rcd_loss: f64,
    pub rel_loss: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub steps: u64,
}

impl TrainLog {
    /// One JSON object per epoch.
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("plain struct") + "\n")
            .collect()
    }
}

/// Per-example loss values of one forward/backward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub joint: f64,
    pub rcd: f64,
    pub rel: f64,
}

/// Joint loss of one input and its gradient accumulated into `grads` with
/// weights scaled by `scale`.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_example<T: Scalar>(
    model: &Model<T>,
    input: &PromptExample,
    clues: &ClueLabelSeq,
    target_word: u32,
    weights: LossWeights,
    reduction: Reduction,
    scale: f64,
    dropout: f64,
    rng: Option<&mut ChaCha8Rng>,
    grads: &mut ModelParams<T>,
) -> Result<StepLoss> {
    let (rcd, rel) = accumulate_pass(
        model,
        input,
        Some(clues),
        Some(target_word),
        weights,
        reduction,
        scale,
        dropout,
        rng,
        grads,
    )?;
    Ok(StepLoss::new(weights, rcd, rel))
}

impl StepLoss {
    fn new(w: LossWeights, rcd: f64, rel: f64) -> Self {
        StepLoss {
            joint: joint_loss(w, rcd, rel),
            rcd,
            rel,
        }
    }
}

/// One forward/backward carrying the clue loss, the relation loss, or both.
#[allow(clippy::too_many_arguments)]
fn accumulate_pass<T: Scalar>(
    model: &Model<T>,
    input: &PromptExample,
    clues: Option<&ClueLabelSeq>,
    target_word: Option<u32>,
    weights: LossWeights,
    reduction: Reduction,
    scale: f64,
    dropout: f64,
    rng: Option<&mut ChaCha8Rng>,
    grads: &mut ModelParams<T>,
) -> Result<(f64, f64)> {
    let (logits, cache) = model.forward_train(&input.token_ids, dropout, rng)?;
    let mut dlogits = Logits::zeros(logits.positions, logits.vocab);
    let w1 = T::of(weights.lambda1 * scale);
    let w2 = T::of(weights.lambda2 * scale);
    let mut rcd = T::zero();
    let mut rel = T::zero();
    if let Some(clues) = clues {
        rcd = rcd_loss(&logits, clues, reduction)?.value;
        rcd_loss_grad(&logits, clues, reduction, w1, &mut dlogits);
    }
    if let Some(word) = target_word {
        rel = rel_loss_for_word(&logits, input.mask_index, word);
        rel_loss_grad(&logits, input.mask_index, word, w2, &mut dlogits);
    }
    if w1 != T::zero() || w2 != T::zero() {
        model.backward(&cache, &dlogits, grads);
    }
    Ok((rcd.as_f64(), rel.as_f64()))
}

/// Trigger-marked input for the relation loss.
fn training_input<T: Scalar>(
    g: &Grasp<T>,
    ex: &TrainExample,
    source: TriggerSource,
    max_seq_len: usize,
) -> Result<(PromptExample, ClueLabelSeq)> {
    match source {
        TriggerSource::Gold => Ok((ex.forced.clone(), ex.forced_clues.clone())),
        TriggerSource::Predicted => {
            let predicted = g.predict_clues(&ex.base)?;
            let marked = mark_predicted_triggers(&ex.base, &predicted, &g.pipeline.vocab, max_seq_len);
            let clues = build_clue_labels(&marked, &g.pipeline.vocab);
            Ok((marked, clues))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn train_step<T: Scalar>(
    g: &Grasp<T>,
    ex: &TrainExample,
    cfg: &TrainConfig,
    weights: LossWeights,
    max_len: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
    grads: &mut ModelParams<T>,
) -> Result<StepLoss> {
    let (input, clues) = training_input(g, ex, cfg.trigger_source, max_len)?;
    match cfg.clue_input {
        ClueInput::Marked => accumulate_example(
            &g.model,
            &input,
            &clues,
            ex.target_word,
            weights,
            cfg.rcd_reduction,
            scale,
            cfg.dropout,
            Some(rng),
            grads,
        ),
        ClueInput::Unmarked => {
            let (rcd, _) = accumulate_pass(
                &g.model,
                &ex.base,
                Some(&ex.base_clues),
                None,
                weights,
                cfg.rcd_reduction,
                scale,
                cfg.dropout,
                Some(&mut *rng),
                grads,
            )?;
            let (_, rel) = accumulate_pass(
                &g.model,
                &input,
                None,
                Some(ex.target_word),
                weights,
                cfg.rcd_reduction,
                scale,
                cfg.dropout,
                Some(rng),
                grads,
            )?;
            Ok(StepLoss::new(weights, rcd, rel))
        }
    }
}

/// Trains `init` on `train`, selecting the checkpoint with the best dev F1
/// (ties broken by lower training loss).
pub fn train<T: Scalar>(
    init: Grasp<T>,
    train: &Corpus,
    dev: &Corpus,
    cfg: &TrainConfig,
) -> Result<(Grasp<T>, TrainLog)> {
    cfg.validate()?;
    let mut g = init;
    let max_len = cfg
        .max_seq_len
        .min(g.model.config.max_seq_len)
        .min(g.pipeline.config.max_seq_len);
    let examples = g.pipeline.training_examples(train)?;
    if examples.is_empty() {
        return Err(GraspError::Contract("no training examples".into()));
    }
    let weights = cfg.weights();
    let mut opt = AdamW::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &g.model.params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, f64, ModelParams<T>)> = None;
    let mut since_best = 0;
    let mut grads = g.model.params.zeros_like();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut sum_joint, mut sum_rcd, mut sum_rel) = (0.0, 0.0, 0.0);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.scale(T::zero());
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &examples[i];
                let l = train_step(&g, ex, cfg, weights, max_len, scale, &mut rng, &mut grads)?;
                if !l.joint.is_finite() {
                    return Err(GraspError::Divergence {
                        epoch,
                        step,
                        message: format!("non-finite loss on instance {}", ex.base.instance_id),
                    });
                }
                sum_joint += l.joint;
                sum_rcd += l.rcd;
                sum_rel += l.rel;
            }
            opt.step(&mut g.model.params, &grads);
            if !g.model.params.all_finite() {
                return Err(GraspError::Divergence {
                    epoch,
                    step,
                    message: "non-finite parameters after update".into(),
                });
            }
        }
        let n = examples.len() as f64;
        let dev_f1 = if dev.is_empty() { 0.0 } else { evaluate(&g, dev)?.f1 };
        let entry = EpochLog {
            epoch,
            train_loss: sum_joint / n,
            rcd_loss: sum_rcd / n,
            rel_loss: sum_rel / n,
            dev_f1,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (rcd {:.5}, rel {:.5}) dev F1 {:.4} in {:.2?}",
            entry.train_loss,
            entry.rcd_loss,
            entry.rel_loss,
            dev_f1,
            started.elapsed()
        );
        let (f1_improved, selected) = match &best {
            None => (true, true),
            Some((f1, loss, _)) => (
                dev_f1 > *f1,
                dev_f1 > *f1 || (dev_f1 == *f1 && entry.train_loss < *loss),
            ),
        };
        if selected {
            best = Some((dev_f1, entry.train_loss, g.model.params.clone()));
            log.best_epoch = Some(epoch);
        }
        if f1_improved {
            since_best = 0;
        } else {
            since_best += 1;
        }
        log.epochs.push(entry);
        if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
            log.stopped_early = true;
            break;
        }
    }
    log.steps = opt.steps();
    if let Some((_, _, params)) = best {
        g.model.params = params;
    }
    Ok((g, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{Pipeline, PipelineConfig};

    const TINY: &str = r#"[
      [["S1: Ann married Bob .", "S2: nice"],
       [{"x": "Ann", "y": "Bob", "x_type": "PER", "y_type": "PER", "r": ["per:spouse"], "t": ["married"]}]],
      [["S1: Cal works at Acme ."],
       [{"x": "Cal", "y": "Acme", "x_type": "PER", "y_type": "ORG", "r": ["per:employee_of"], "t": ["works at"]}]]
    ]"#;

    fn tiny() -> (Corpus, Grasp<f64>) {
        let c = Corpus::from_dialogre_str(TINY, crate::corpus::Split::Train).unwrap();
        let p = Pipeline::fit(&c, PipelineConfig { max_seq_len: 64, ..Default::default() }).unwrap();
        let cfg = p.model_config(8, 1, 2);
        (c.clone(), Grasp::init(p, cfg, 3).unwrap())
    }

    #[test]
    fn zero_weights_leave_parameters_unchanged() {
        let (c, g) = tiny();
        let before = g.model.params.clone();
        let cfg = TrainConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            epochs: 3,
            batch_size: 1,
            learning_rate: 1e-2,
            early_stop_patience: 0,
            ..Default::default()
        };
        let (after, log) = train(g, &c, &c, &cfg).unwrap();
        assert_eq!(log.steps, 6);
        assert_eq!(after.model.params, before);
    }

    #[test]
    fn same_seed_same_curve() {
        let (c, g) = tiny();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 2,
            learning_rate: 1e-2,
            early_stop_patience: 0,
            ..Default::default()
        };
        let (_, a) = train(g.clone(), &c, &c, &cfg).unwrap();
        let (_, b) = train(g, &c, &c, &cfg).unwrap();
        assert_eq!(a.to_json_lines(), b.to_json_lines());
        assert!(a.epochs.last().unwrap().train_loss < a.epochs[0].train_loss);
    }

    #[test]
    fn predicted_trigger_mode_runs() {
        let (c, g) = tiny();
        let cfg = TrainConfig {
            epochs: 1,
            trigger_source: TriggerSource::Predicted,
            ..Default::default()
        };
        let (_, log) = train(g, &c, &c, &cfg).unwrap();
        assert_eq!(log.epochs.len(), 1);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (c, g) = tiny();
        let cfg = TrainConfig { lambda1: -1.0, ..Default::default() };
        assert!(train(g, &c, &c, &cfg).is_err());
    }
}
