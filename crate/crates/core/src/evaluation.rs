//! Micro F1, the prefix-restricted F1c variant and few-shot sampling.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{argument_in_turn, Corpus, Dialogue, RelationInstance, UNANSWERABLE};
use crate::encoding::find_token_matches;
use crate::error::{contract, GraspError, Result};
use crate::pipeline::Grasp;
use crate::scalar::Scalar;
use crate::vocab::tokenize_words;

pub const DEFAULT_FEWSHOT_SEEDS: [u64; 3] = [13, 42, 100];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_relation: BTreeMap<String, Counts>,
    pub n_instances: usize,
}

impl EvalResult {
    pub fn totals(&self) -> Counts {
        self.per_relation.values().fold(Counts::default(), |a, c| Counts {
            tp: a.tp + c.tp,
            fp: a.fp + c.fp,
            fn_: a.fn_ + c.fn_,
        })
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Micro-averaged precision, recall and F1 with `unanswerable` as the null class.
pub fn f1_score(
    predictions: &[String],
    golds: &[BTreeSet<String>],
    inventory: &[String],
) -> Result<EvalResult> {
    if predictions.len() != golds.len() {
        return contract(format!(
            "{} predictions for {} gold sets",
            predictions.len(),
            golds.len()
        ));
    }
    let mut per_relation: BTreeMap<String, Counts> = inventory
        .iter()
        .filter(|l| l.as_str() != UNANSWERABLE)
        .map(|l| (l.clone(), Counts::default()))
        .collect();
    for (pred, gold) in predictions.iter().zip(golds) {
        if pred != UNANSWERABLE && !per_relation.contains_key(pred) {
            return contract(format!("predicted label `{pred}` is not in the inventory"));
        }
        if pred != UNANSWERABLE {
            let c = per_relation.get_mut(pred).expect("checked above");
            if gold.contains(pred) {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        for g in gold {
            if g != UNANSWERABLE && g != pred {
                per_relation.entry(g.clone()).or_default().fn_ += 1;
            }
        }
    }
    let mut out = EvalResult {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        per_relation,
        n_instances: predictions.len(),
    };
    let t = out.totals();
    out.precision = ratio(t.tp, t.tp + t.fp);
    out.recall = ratio(t.tp, t.tp + t.fn_);
    if out.precision + out.recall > 0.0 {
        out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
    }
    Ok(out)
}

/// Shortest dialogue prefix containing both arguments and, when the instance
/// has triggers, one full trigger occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prefix {
    pub turns: usize,
    /// False when no prefix satisfies the condition; `turns` is then the full length.
    pub satisfied: bool,
}

pub fn minimal_prefix(dialogue: &Dialogue, inst: &RelationInstance) -> Prefix {
    let subj_tokens = tokenize_words(&inst.subject.surface);
    let obj_tokens = tokenize_words(&inst.object.surface);
    let triggers: Vec<Vec<String>> = inst
        .trigger_surfaces()
        .map(tokenize_words)
        .filter(|t| !t.is_empty())
        .collect();
    let (mut subj, mut obj, mut trig) = (false, false, triggers.is_empty());
    for (i, turn) in dialogue.turns.iter().enumerate() {
        subj |= argument_in_turn(&inst.subject, &subj_tokens, turn);
        obj |= argument_in_turn(&inst.object, &obj_tokens, turn);
        if !trig {
            let words = tokenize_words(&turn.text);
            trig = triggers
                .iter()
                .any(|t| !find_token_matches(&words, t).is_empty());
        }
        if subj && obj && trig {
            return Prefix {
                turns: i + 1,
                satisfied: true,
            };
        }
    }
    Prefix {
        turns: dialogue.turns.len(),
        satisfied: false,
    }
}

/// F1 of the model over a corpus (two-pass prediction on full dialogues).
pub fn evaluate<T: Scalar>(model: &Grasp<T>, c: &Corpus) -> Result<EvalResult> {
    let preds = model.predict_corpus(c)?;
    f1_score(&preds, &golds_of(c), &c.relation_inventory)
}

/// Like [`evaluate`], but each instance is re-encoded on its minimal prefix.
/// The prefix rule approximates the conversational F1 protocol.
pub fn f1c_score<T: Scalar>(model: &Grasp<T>, c: &Corpus) -> Result<EvalResult> {
    let preds: Vec<String> = c
        .instances
        .par_iter()
        .map(|inst| {
            let d = c.dialogue_of(inst);
            let prefix = minimal_prefix(d, inst);
            model.predict(&d.prefix(prefix.turns), inst).map(|p| p.label)
        })
        .collect::<Result<_>>()?;
    f1_score(&preds, &golds_of(c), &c.relation_inventory)
}

pub fn golds_of(c: &Corpus) -> Vec<BTreeSet<String>> {
    c.instances.iter().map(|i| i.relations.clone()).collect()
}

/// Token accuracy of pass-1 clue tagging over all scored positions.
pub fn clue_accuracy<T: Scalar>(model: &Grasp<T>, c: &Corpus) -> Result<f64> {
    let counts: Vec<(usize, usize)> = c
        .instances
        .par_iter()
        .map(|inst| -> Result<(usize, usize)> {
            let p = model.pipeline.encode(c.dialogue_of(inst), inst)?;
            let gold = crate::rcd::build_clue_labels(&p, &model.pipeline.vocab);
            let pred = model.predict_clues(&p)?;
            let mut hit = 0;
            for i in 0..p.len() {
                if !gold.ignore[i] && gold.labels[i] == pred.labels[i] {
                    hit += 1;
                }
            }
            Ok((hit, gold.scored_positions()))
        })
        .collect::<Result<_>>()?;
    let (hit, total) = counts
        .iter()
        .fold((0, 0), |(h, t), &(a, b)| (h + a, t + b));
    Ok(ratio(hit, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub k: usize,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub dev_ids: Vec<String>,
    /// Labels whose population was smaller than `k` for the given split.
    pub exhausted_train: Vec<String>,
    pub exhausted_dev: Vec<String>,
}

impl FewShotSplit {
    pub fn materialize(&self, c: &Corpus) -> Result<(Corpus, Corpus)> {
        Ok((select_ids(c, &self.train_ids)?, select_ids(c, &self.dev_ids)?))
    }
}

/// Sub-corpus with exactly the given instance ids, in corpus order.
pub fn select_ids(c: &Corpus, ids: &[String]) -> Result<Corpus> {
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let idx: Vec<usize> = c
        .instances
        .iter()
        .enumerate()
        .filter(|(_, i)| wanted.contains(i.id.as_str()))
        .map(|(k, _)| k)
        .collect();
    if idx.len() != wanted.len() {
        return Err(GraspError::Sampling(
            "split references instance ids that are not in the corpus".into(),
        ));
    }
    Ok(c.subset(&idx))
}

fn fewshot_rng(k: usize, seed: u64) -> ChaCha8Rng {
    let mut s = [0u8; 32];
    s[..8].copy_from_slice(&seed.to_le_bytes());
    s[8..16].copy_from_slice(&(k as u64).to_le_bytes());
    ChaCha8Rng::from_seed(s)
}

/// Greedy per-label fill over a shuffled order. An instance is taken only if
/// none of its labels is already at quota.
fn fill(
    c: &Corpus,
    order: &[usize],
    k: usize,
    taken: &mut [bool],
) -> (Vec<usize>, Vec<String>) {
    let mut count: BTreeMap<&str, usize> = BTreeMap::new();
    let mut chosen = Vec::new();
    for label in &c.relation_inventory {
        for &i in order {
            if count.get(label.as_str()).copied().unwrap_or(0) >= k {
                break;
            }
            let inst = &c.instances[i];
            if taken[i] || !inst.relations.contains(label) {
                continue;
            }
            if inst
                .relations
                .iter()
                .any(|r| count.get(r.as_str()).copied().unwrap_or(0) >= k)
            {
                continue;
            }
            taken[i] = true;
            chosen.push(i);
            for r in &inst.relations {
                *count.entry(r.as_str()).or_insert(0) += 1;
            }
        }
    }
    let exhausted = c
        .relation_inventory
        .iter()
        .filter(|l| count.get(l.as_str()).copied().unwrap_or(0) < k)
        .cloned()
        .collect();
    chosen.sort_unstable();
    (chosen, exhausted)
}

/// K instances per relation label for training and, disjointly, for development.
pub fn sample_fewshot(c: &Corpus, k: usize, seed: u64) -> Result<FewShotSplit> {
    if k == 0 {
        return Err(GraspError::Sampling("K must be at least 1".into()));
    }
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for inst in &c.instances {
        for r in &inst.relations {
            *sizes.entry(r.as_str()).or_insert(0) += 1;
        }
    }
    if sizes.values().all(|&n| n < k) {
        return Err(GraspError::Sampling(format!(
            "K = {k} exceeds the population of every relation label"
        )));
    }
    let mut order: Vec<usize> = (0..c.instances.len()).collect();
    order.shuffle(&mut fewshot_rng(k, seed));
    let mut taken = vec![false; c.instances.len()];
    let (train, exhausted_train) = fill(c, &order, k, &mut taken);
    let (dev, exhausted_dev) = fill(c, &order, k, &mut taken);
    let ids = |v: &[usize]| v.iter().map(|&i| c.instances[i].id.clone()).collect();
    Ok(FewShotSplit {
        k,
        seed,
        train_ids: ids(&train),
        dev_ids: ids(&dev),
        exhausted_train,
        exhausted_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    fn s(x: &str) -> String {
        x.to_string()
    }

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|x| s(x)).collect()
    }

    #[test]
    fn hand_counted_confusion() {
        let inv = [s("A"), s("B"), s(UNANSWERABLE)];
        let golds = [set(&["A"]), set(&["A"]), set(&["B"]), set(&[UNANSWERABLE])];
        let preds = [s("A"), s("B"), s("B"), s("A")];
        let r = f1_score(&preds, &golds, &inv).unwrap();
        assert_eq!(r.totals(), Counts { tp: 2, fp: 2, fn_: 1 });
        assert_eq!(r.precision, 0.5);
        assert_eq!(r.recall, 2.0 / 3.0);
        assert!((r.f1 - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty() {
        let inv = [s("A"), s("B")];
        let r = f1_score(&[s("A"), s("B")], &[set(&["A"]), set(&["B"])], &inv).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let e = f1_score(&[], &[], &inv).unwrap();
        assert_eq!((e.f1, e.n_instances), (0.0, 0));
    }

    #[test]
    fn unknown_prediction_is_rejected() {
        assert!(f1_score(&[s("Z")], &[set(&["A"])], &[s("A")]).is_err());
    }

    const TABLE1: &str = r#"[[[
        "S1: Hey guys! Hey!",
        "S2: Hey Pheebs, guess who we saw today.",
        "S3: Ooh, ooh, fun! Okay... um, Liam Neeson.",
        "S1: No.",
        "S2: Nope.",
        "S4: Hmm.",
        "S3: The woman who cuts my hair!",
        "S4: Okay, look, this could be a really long game.",
        "S5: Your sister Ursula.",
        "S3: Oh, really."
      ], [
        {"x": "Pheebs", "y": "Ursula", "x_type": "PER", "y_type": "PER", "r": ["per:siblings"], "t": ["sister"]},
        {"x": "S3", "y": "Pheebs", "x_type": "PER", "y_type": "PER", "r": ["per:alternate_names"], "t": [""]}
      ]]]"#;

    #[test]
    fn conversation_prefixes() {
        let c = Corpus::from_dialogre_str(TABLE1, Split::Dev).unwrap();
        let d = c.dialogue_of(&c.instances[0]);
        assert_eq!(
            minimal_prefix(d, &c.instances[0]),
            Prefix {
                turns: 9,
                satisfied: true
            }
        );
        // S3 speaks turn 3, Pheebs is mentioned in turn 2.
        assert_eq!(minimal_prefix(d, &c.instances[1]).turns, 3);
    }

    #[test]
    fn unsatisfiable_prefix_is_flagged() {
        let json = r#"[[["S1: hello there"],
            [{"x": "Bob", "y": "Ann", "x_type": "PER", "y_type": "PER", "r": ["r"], "t": []}]]]"#;
        let c = Corpus::from_dialogre_str(json, Split::Dev).unwrap();
        let p = minimal_prefix(c.dialogue_of(&c.instances[0]), &c.instances[0]);
        assert_eq!(p, Prefix { turns: 1, satisfied: false });
    }

    fn many(n_per: usize, labels: &[&str]) -> Corpus {
        let mut entries = Vec::new();
        for (li, l) in labels.iter().enumerate() {
            for j in 0..n_per + li {
                entries.push(serde_json::json!([
                    [format!("S1: a{li} b{j}")],
                    [{"x": format!("a{li}"), "y": format!("b{j}"), "x_type": "PER",
                      "y_type": "PER", "r": [l], "t": []}]
                ]));
            }
        }
        Corpus::from_dialogre_str(&serde_json::Value::Array(entries).to_string(), Split::Train)
            .unwrap()
    }

    #[test]
    fn fewshot_is_disjoint_and_deterministic() {
        let c = many(20, &["x", "y", "z"]);
        let a = sample_fewshot(&c, 8, 42).unwrap();
        assert_eq!(a, sample_fewshot(&c, 8, 42).unwrap());
        assert_eq!(a.train_ids.len(), 24);
        assert_eq!(a.dev_ids.len(), 24);
        let t: BTreeSet<_> = a.train_ids.iter().collect();
        assert!(a.dev_ids.iter().all(|i| !t.contains(i)));
        assert_ne!(a.train_ids, sample_fewshot(&c, 8, 13).unwrap().train_ids);
    }

    #[test]
    fn fewshot_exhaustion_and_errors() {
        let c = many(5, &["x", "y"]);
        let a = sample_fewshot(&c, 6, 1).unwrap();
        // x has 5 instances, y has 6.
        assert_eq!(a.exhausted_train, vec![s("x")]);
        assert_eq!(a.train_ids.len(), 11);
        assert!(a.dev_ids.is_empty());
        assert!(sample_fewshot(&c, 7, 1).is_err());
        assert!(sample_fewshot(&c, 0, 1).is_err());
    }
}
