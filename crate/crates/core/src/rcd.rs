//! Relational clue labels and trigger re-marking.

use serde::{Deserialize, Serialize};

use crate::encoding::Role;
use crate::prompting::{FlatSpan, PromptExample};
use crate::vocab::Vocabulary;

/// Per-position clue label ids, aligned with `PromptExample::token_ids`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClueLabelSeq {
    pub labels: Vec<u32>,
    /// True where the position is excluded from the clue loss (the `[MASK]`).
    pub ignore: Vec<bool>,
}

impl ClueLabelSeq {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn scored_positions(&self) -> usize {
        self.ignore.iter().filter(|&&i| !i).count()
    }

    pub fn texts<'v>(&self, vocab: &'v Vocabulary) -> Vec<&'v str> {
        self.labels
            .iter()
            .map(|&id| vocab.token(id).text.as_str())
            .collect()
    }
}

/// Gold clue labels: tokens inside subject, object and trigger spans get the
/// matching label (subject > object > trigger on overlap); everything else,
/// including markers inside spans and the prompt tail, is `[outside]`.
pub fn build_clue_labels(p: &PromptExample, vocab: &Vocabulary) -> ClueLabelSeq {
    let s = vocab.specials();
    let mut labels = vec![s.outside; p.len()];
    let rank = |role: Role| match role {
        Role::Subject => 3,
        Role::Object => 2,
        Role::Trigger => 1,
    };
    let mut best = vec![0u8; p.len()];
    for span in &p.spans {
        let (label, r) = match span.role {
            Role::Subject => (s.subject, rank(Role::Subject)),
            Role::Object => (s.object, rank(Role::Object)),
            Role::Trigger => (s.trigger, rank(Role::Trigger)),
        };
        for i in span.start..span.end.min(p.len()) {
            if p.token_ids[i] != s.marker && r > best[i] {
                best[i] = r;
                labels[i] = label;
            }
        }
    }
    let mut ignore = vec![false; p.len()];
    ignore[p.mask_index] = true;
    labels[p.mask_index] = s.outside;
    ClueLabelSeq { labels, ignore }
}

/// Start positions of maximal runs of `[trigger]` inside the dialogue region.
pub fn trigger_run_starts(p: &PromptExample, clues: &ClueLabelSeq, vocab: &Vocabulary) -> Vec<usize> {
    let trigger = vocab.specials().trigger;
    // The dialogue region ends at the [SEP] before `[subj]`.
    let dialogue_end = p.subj_slot.0.saturating_sub(2);
    let mut starts = Vec::new();
    let mut in_run = false;
    for i in 1..dialogue_end {
        let hit = !clues.ignore[i] && clues.labels[i] == trigger;
        if hit && !in_run {
            starts.push(i);
        }
        in_run = hit;
    }
    starts
}

/// Inserts `[p]` in front of each maximal run of predicted `[trigger]` tokens
/// and re-indexes the example. Insertions that would push the sequence past
/// `max_seq_len` are dropped and counted.
pub fn mark_predicted_triggers(
    p: &PromptExample,
    predicted: &ClueLabelSeq,
    vocab: &Vocabulary,
    max_seq_len: usize,
) -> PromptExample {
    assert_eq!(predicted.len(), p.len(), "clue sequence must align with the example");
    let mut starts = trigger_run_starts(p, predicted, vocab);
    let room = max_seq_len.saturating_sub(p.len());
    let dropped = starts.len().saturating_sub(room);
    starts.truncate(room);
    if starts.is_empty() {
        let mut out = p.clone();
        out.dropped_markers += dropped;
        return out;
    }

    let marker = vocab.specials().marker;
    let shift = |i: usize| i + starts.partition_point(|&q| q <= i);
    let mut ids = Vec::with_capacity(p.len() + starts.len());
    let mut next = 0;
    for (i, &id) in p.token_ids.iter().enumerate() {
        if next < starts.len() && starts[next] == i {
            ids.push(marker);
            next += 1;
        }
        ids.push(id);
    }
    let spans = p
        .spans
        .iter()
        .map(|s| FlatSpan {
            start: shift(s.start),
            end: shift(s.end - 1) + 1,
            role: s.role,
        })
        .collect();
    let slot = |(a, b): (usize, usize)| (shift(a), shift(a) + (b - a));
    PromptExample {
        instance_id: p.instance_id.clone(),
        token_ids: ids,
        mask_index: shift(p.mask_index),
        subj_slot: slot(p.subj_slot),
        obj_slot: slot(p.obj_slot),
        spans,
        gold_relations: p.gold_relations.clone(),
        truncated: p.truncated,
        dropped_spans: p.dropped_spans,
        dropped_markers: p.dropped_markers + dropped,
    }
}

/// Training-time input: gold triggers re-marked, with clue labels recomputed
/// on the re-marked sequence.
pub fn teacher_forced(
    p: &PromptExample,
    vocab: &Vocabulary,
    max_seq_len: usize,
) -> (PromptExample, ClueLabelSeq) {
    let gold = build_clue_labels(p, vocab);
    let marked = mark_predicted_triggers(p, &gold, vocab, max_seq_len);
    let clues = build_clue_labels(&marked, vocab);
    (marked, clues)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Split};
    use crate::encoding::{encode_instance, MarkerPlacement};
    use crate::prompting::build_template;
    use crate::vocab::build_vocabulary;

    fn example(json: &str, max: usize) -> (PromptExample, Vocabulary) {
        let c = Corpus::from_dialogre_str(json, Split::Train).unwrap();
        let v = build_vocabulary(&c, 1);
        let inst = &c.instances[0];
        let e = encode_instance(c.dialogue_of(inst), inst, MarkerPlacement::Front).unwrap();
        (build_template(&inst.id, &e, &inst.relations, &v, max).unwrap(), v)
    }

    const PHEEBS: &str = r#"[[["S1: Pheebs lives in LA"],
        [{"x": "Pheebs", "y": "LA", "x_type": "PER", "y_type": "GPE", "r": ["per:place_of_residence"], "t": ["lives in"]}]]]"#;

    #[test]
    fn pheebs_lives_in_la() {
        let (p, v) = example(PHEEBS, 64);
        let clues = build_clue_labels(&p, &v);
        let words: Vec<(&str, &str)> = p
            .token_ids
            .iter()
            .zip(clues.texts(&v))
            .map(|(&id, l)| (v.token(id).text.as_str(), l))
            .filter(|(t, _)| ["pheebs", "lives", "in", "la"].contains(t))
            .collect();
        // Dialogue copies first, then the prompt-tail copies which stay [outside].
        assert_eq!(
            words,
            [
                ("pheebs", "[subject]"),
                ("lives", "[trigger]"),
                ("in", "[trigger]"),
                ("la", "[object]"),
                ("pheebs", "[outside]"),
                ("la", "[outside]"),
            ]
        );
        assert!(clues.ignore[p.mask_index]);
        assert_eq!(clues.scored_positions(), p.len() - 1);
        assert_eq!(clues.len(), p.len());
    }

    #[test]
    fn markers_are_outside() {
        let (p, v) = example(PHEEBS, 64);
        let clues = build_clue_labels(&p, &v);
        let s = v.specials();
        for (i, &id) in p.token_ids.iter().enumerate() {
            if id == s.marker || id == s.cls || id == s.sep || id == s.subj || id == s.obj {
                assert_eq!(clues.labels[i], s.outside);
            }
        }
    }

    #[test]
    fn no_triggers_means_no_trigger_labels() {
        let json = r#"[[["S1: Pheebs lives in LA"],
            [{"x": "Pheebs", "y": "LA", "x_type": "PER", "y_type": "GPE", "r": ["r"], "t": [""]}]]]"#;
        let (p, v) = example(json, 64);
        let clues = build_clue_labels(&p, &v);
        assert!(!clues.labels.contains(&v.specials().trigger));
    }

    #[test]
    fn trigger_runs_get_one_marker_each() {
        let json = r#"[[["S1: Frank Jr. and Alice got married !"],
            [{"x": "Frank Jr.", "y": "Alice", "x_type": "PER", "y_type": "PER", "r": ["per:spouse"], "t": ["got married"]}]]]"#;
        let (p, v) = example(json, 64);
        let (marked, clues) = teacher_forced(&p, &v, 64);
        assert_eq!(marked.len(), p.len() + 1);
        assert!(marked.decode(&v).contains("[p] got married"));
        assert_eq!(marked.decode(&v).matches("[p] got").count(), 1);
        assert_eq!(marked.token_ids[marked.mask_index], v.specials().mask);
        assert_eq!(clues.len(), marked.len());
        assert_eq!(
            clues.labels.iter().filter(|&&l| l == v.specials().trigger).count(),
            2
        );
    }

    #[test]
    fn no_predicted_trigger_is_identity() {
        let (p, v) = example(PHEEBS, 64);
        let mut clues = build_clue_labels(&p, &v);
        clues.labels.iter_mut().for_each(|l| *l = v.specials().outside);
        assert_eq!(mark_predicted_triggers(&p, &clues, &v, 64), p);
    }

    #[test]
    fn insertions_past_limit_are_counted() {
        let (p, v) = example(PHEEBS, 64);
        let clues = build_clue_labels(&p, &v);
        let out = mark_predicted_triggers(&p, &clues, &v, p.len());
        assert_eq!(out.token_ids, p.token_ids);
        assert_eq!(out.dropped_markers, 1);
    }
}
