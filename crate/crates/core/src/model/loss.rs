//! Clue-detection loss, relation (label-word) loss and their weighted sum.
//! Both losses use a softmax over the full vocabulary.

use serde::{Deserialize, Serialize};

use super::network::Logits;
use crate::error::{contract, Result};
use crate::prompting::Verbalizer;
use crate::rcd::ClueLabelSeq;
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcdLoss<T> {
    pub value: T,
    pub scored: usize,
    /// Every position was ignored; the loss is defined as zero.
    pub all_ignored: bool,
}

/// Negative log-likelihood of each scored position's clue label.
pub fn rcd_loss<T: Scalar>(
    logits: &Logits<T>,
    clues: &ClueLabelSeq,
    reduction: Reduction,
) -> Result<RcdLoss<T>> {
    if clues.len() != logits.positions {
        return contract(format!(
            "clue sequence has {} labels for {} positions",
            clues.len(),
            logits.positions
        ));
    }
    let mut total = T::zero();
    let mut scored = 0;
    for i in 0..logits.positions {
        if clues.ignore[i] {
            continue;
        }
        let row = logits.row(i);
        total += log_sum_exp(row) - row[clues.labels[i] as usize];
        scored += 1;
    }
    if scored == 0 {
        return Ok(RcdLoss {
            value: T::zero(),
            scored,
            all_ignored: true,
        });
    }
    let value = match reduction {
        Reduction::Sum => total,
        Reduction::Mean => total / T::of(scored as f64),
    };
    Ok(RcdLoss {
        value,
        scored,
        all_ignored: false,
    })
}

/// Adds `scale * d(rcd_loss)/d(logits)` into `grad`.
pub fn rcd_loss_grad<T: Scalar>(
    logits: &Logits<T>,
    clues: &ClueLabelSeq,
    reduction: Reduction,
    scale: T,
    grad: &mut Logits<T>,
) {
    let scored = clues.scored_positions();
    if scored == 0 || scale == T::zero() {
        return;
    }
    let w = match reduction {
        Reduction::Sum => scale,
        Reduction::Mean => scale / T::of(scored as f64),
    };
    for i in 0..logits.positions {
        if clues.ignore[i] {
            continue;
        }
        let probs = logits.softmax_row(i);
        let g = grad.row_mut(i);
        for (gv, &pv) in g.iter_mut().zip(&probs) {
            *gv += w * pv;
        }
        g[clues.labels[i] as usize] -= w;
    }
}

/// `-log P([MASK] = label word of gold)`.
pub fn rel_loss<T: Scalar>(
    logits: &Logits<T>,
    mask_index: usize,
    gold: &str,
    verbalizer: &Verbalizer,
) -> Result<T> {
    let Some(word) = verbalizer.word(gold) else {
        return contract(format!("relation `{gold}` is not in the verbalizer"));
    };
    if mask_index >= logits.positions {
        return contract("mask index outside the sequence");
    }
    Ok(rel_loss_for_word(logits, mask_index, word))
}

pub fn rel_loss_for_word<T: Scalar>(logits: &Logits<T>, mask_index: usize, word: u32) -> T {
    let row = logits.row(mask_index);
    log_sum_exp(row) - row[word as usize]
}

pub fn rel_loss_grad<T: Scalar>(
    logits: &Logits<T>,
    mask_index: usize,
    word: u32,
    scale: T,
    grad: &mut Logits<T>,
) {
    if scale == T::zero() {
        return;
    }
    let probs = logits.softmax_row(mask_index);
    let g = grad.row_mut(mask_index);
    for (gv, &pv) in g.iter_mut().zip(&probs) {
        *gv += scale * pv;
    }
    g[word as usize] -= scale;
}

/// Loss weights for the clue (`lambda1`) and relation (`lambda2`) objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.7,
            lambda2: 0.3,
        }
    }
}

pub fn joint_loss<T: Scalar>(w: LossWeights, rcd: T, rel: T) -> T {
    T::of(w.lambda1) * rcd + T::of(w.lambda2) * rel
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[&[f64]]) -> Logits<f64> {
        Logits {
            positions: rows.len(),
            vocab: rows[0].len(),
            data: rows.concat(),
        }
    }

    #[test]
    fn saturated_relation_gradient_vanishes() {
        let l = logits(&[&[0.0, 0.0, 0.0], &[-60.0, 60.0, -60.0]]);
        assert!(rel_loss_for_word(&l, 1, 1) < 1e-40);
        let mut g = Logits::zeros(2, 3);
        rel_loss_grad(&l, 1, 1, 1.0, &mut g);
        assert!(g.data.iter().all(|x| x.abs() < 1e-40));
    }

    #[test]
    fn all_ignored_is_flagged_zero() {
        let l = logits(&[&[1.0, 2.0]]);
        let clues = ClueLabelSeq {
            labels: vec![0],
            ignore: vec![true],
        };
        let r = rcd_loss(&l, &clues, Reduction::Mean).unwrap();
        assert!(r.all_ignored);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn misaligned_clues_are_rejected() {
        let l = logits(&[&[1.0, 2.0]]);
        let clues = ClueLabelSeq {
            labels: vec![0, 0],
            ignore: vec![false, false],
        };
        assert!(rcd_loss(&l, &clues, Reduction::Sum).is_err());
    }

    #[test]
    fn zero_weight_isolates_relation_loss() {
        let w = LossWeights {
            lambda1: 0.0,
            lambda2: 0.3,
        };
        assert_eq!(joint_loss(w, 5.0f64, 2.0), 0.3 * 2.0);
    }
}
