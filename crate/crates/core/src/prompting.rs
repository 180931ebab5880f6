//! Prompt template construction, argument-type priors, verbalizer and the
//! embedding initializations applied before training.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{ArgType, Corpus};
use crate::encoding::{EncodedDialogue, Role};
use crate::error::{contract, GraspError, Result};
use crate::scalar::Scalar;
use crate::vocab::{
    relation_token_text, Token, TokenKind, Vocabulary, SPEAKER_1, SPEAKER_2,
};

/// A role-tagged range in the flat prompt sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlatSpan {
    pub start: usize,
    pub end: usize,
    pub role: Role,
}

/// A fully encoded `[CLS] D' [SEP] [subj] a1 [subj] [MASK] [obj] a2 [obj] [SEP]` sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptExample {
    pub instance_id: String,
    pub token_ids: Vec<u32>,
    pub mask_index: usize,
    pub subj_slot: (usize, usize),
    pub obj_slot: (usize, usize),
    pub spans: Vec<FlatSpan>,
    pub gold_relations: BTreeSet<String>,
    pub truncated: bool,
    /// Spans lost to truncation.
    pub dropped_spans: usize,
    /// Trigger markers that did not fit during re-marking.
    pub dropped_markers: usize,
}

impl PromptExample {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn decode(&self, vocab: &Vocabulary) -> String {
        self.token_ids
            .iter()
            .map(|&id| vocab.token(id).text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Vocabulary id for a token appearing in the dialogue or an argument copy.
fn content_id(tok: &Token, vocab: &Vocabulary) -> u32 {
    let s = vocab.specials();
    match tok.kind {
        TokenKind::Word => vocab.word_id(&tok.text),
        TokenKind::Marker => s.marker,
        TokenKind::Speaker if tok.text == SPEAKER_1 => s.speaker_1,
        TokenKind::Speaker if tok.text == SPEAKER_2 => s.speaker_2,
        // Bracketed text that collides with template tokens must not leak into the sequence.
        _ => s.unk,
    }
}

fn speaker_slot_id(label: &str, vocab: &Vocabulary) -> u32 {
    let s = vocab.specials();
    match label {
        SPEAKER_1 => s.speaker_1,
        SPEAKER_2 => s.speaker_2,
        other => vocab.speaker_id(other),
    }
}

/// Builds the flat prompt sequence, truncating the dialogue from the end when
/// the whole sequence would exceed `max_seq_len`.
pub fn build_template(
    instance_id: &str,
    e: &EncodedDialogue,
    gold: &BTreeSet<String>,
    vocab: &Vocabulary,
    max_seq_len: usize,
) -> Result<PromptExample> {
    let s = vocab.specials();
    let colon = vocab.word_id(":");

    // D' flattened as "speaker : utterance" per turn; remember where each utterance starts.
    let mut dialogue_ids = Vec::with_capacity(e.token_count() + 2 * e.turns.len());
    let mut utterance_start = Vec::with_capacity(e.turns.len());
    for (speaker, tokens) in e.speakers.iter().zip(&e.turns) {
        dialogue_ids.push(speaker_slot_id(speaker, vocab));
        dialogue_ids.push(colon);
        utterance_start.push(1 + dialogue_ids.len());
        dialogue_ids.extend(tokens.iter().map(|t| content_id(t, vocab)));
    }

    let a1: Vec<u32> = e.a1_repr.iter().map(|t| content_id(t, vocab)).collect();
    let a2: Vec<u32> = e.a2_repr.iter().map(|t| content_id(t, vocab)).collect();
    let tail_len = 7 + a1.len() + a2.len();
    if 1 + tail_len > max_seq_len {
        return Err(GraspError::Unencodable(format!(
            "{instance_id}: prompt tail needs {} tokens, max_seq_len is {max_seq_len}",
            1 + tail_len
        )));
    }
    let budget = max_seq_len - 1 - tail_len;
    let truncated = dialogue_ids.len() > budget;
    dialogue_ids.truncate(budget);
    let limit = 1 + dialogue_ids.len();

    let mut spans = Vec::with_capacity(e.spans.len());
    let mut dropped_spans = 0;
    for sp in &e.spans {
        let start = utterance_start[sp.turn_index] + sp.start;
        let end = utterance_start[sp.turn_index] + sp.end;
        if end > limit {
            dropped_spans += 1;
        } else {
            spans.push(FlatSpan {
                start,
                end,
                role: sp.role,
            });
        }
    }
    spans.sort();

    let mut ids = Vec::with_capacity(limit + tail_len);
    ids.push(s.cls);
    ids.extend(dialogue_ids);
    ids.push(s.sep);
    ids.push(s.subj);
    let subj_start = ids.len();
    ids.extend(&a1);
    let subj_slot = (subj_start, ids.len());
    ids.push(s.subj);
    let mask_index = ids.len();
    ids.push(s.mask);
    ids.push(s.obj);
    let obj_start = ids.len();
    ids.extend(&a2);
    let obj_slot = (obj_start, ids.len());
    ids.push(s.obj);
    ids.push(s.sep);
    debug_assert!(ids.len() <= max_seq_len);

    Ok(PromptExample {
        instance_id: instance_id.to_string(),
        token_ids: ids,
        mask_index,
        subj_slot,
        obj_slot,
        spans,
        gold_relations: gold.clone(),
        truncated,
        dropped_spans,
        dropped_markers: 0,
    })
}

/// Frequency prior over argument types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorDistribution {
    pub weights: BTreeMap<ArgType, f64>,
}

impl PriorDistribution {
    pub fn uniform() -> Self {
        PriorDistribution {
            weights: ArgType::ALL.into_iter().map(|t| (t, 0.2)).collect(),
        }
    }

    pub fn one_hot(t: ArgType) -> Self {
        PriorDistribution {
            weights: ArgType::ALL
                .into_iter()
                .map(|x| (x, if x == t { 1.0 } else { 0.0 }))
                .collect(),
        }
    }

    pub fn from_counts(counts: &BTreeMap<ArgType, usize>) -> Option<Self> {
        let total: usize = counts.values().sum();
        if total == 0 {
            return None;
        }
        Some(PriorDistribution {
            weights: ArgType::ALL
                .into_iter()
                .map(|t| (t, counts.get(&t).copied().unwrap_or(0) as f64 / total as f64))
                .collect(),
        })
    }

    pub fn weight(&self, t: ArgType) -> f64 {
        self.weights.get(&t).copied().unwrap_or(0.0)
    }

    pub fn is_valid(&self) -> bool {
        let sum: f64 = self.weights.values().sum();
        self.weights.values().all(|&w| w >= 0.0 && w.is_finite()) && (sum - 1.0).abs() <= 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypePriors {
    pub subj: PriorDistribution,
    pub obj: PriorDistribution,
    /// Set when the corpus was empty and uniform priors were substituted.
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub fallback_uniform: bool,
}

/// Subject/object argument-type frequencies of a (training) corpus.
pub fn compute_type_priors(c: &Corpus) -> TypePriors {
    let mut subj = BTreeMap::new();
    let mut obj = BTreeMap::new();
    for inst in &c.instances {
        *subj.entry(inst.subject.arg_type).or_insert(0) += 1;
        *obj.entry(inst.object.arg_type).or_insert(0) += 1;
    }
    match (
        PriorDistribution::from_counts(&subj),
        PriorDistribution::from_counts(&obj),
    ) {
        (Some(subj), Some(obj)) => TypePriors {
            subj,
            obj,
            fallback_uniform: false,
        },
        _ => TypePriors {
            subj: PriorDistribution::uniform(),
            obj: PriorDistribution::uniform(),
            fallback_uniform: true,
        },
    }
}

/// Prior-weighted sum of type embeddings, `sum_t prior[t] * e(t)`.
///
/// Zero-weight types are skipped, so a one-hot prior returns its type vector unchanged.
pub fn init_prompt_embedding<T: Scalar>(
    prior: &PriorDistribution,
    type_embeds: &BTreeMap<ArgType, Vec<T>>,
) -> Result<Vec<T>> {
    let dim = match type_embeds.values().next() {
        Some(v) => v.len(),
        None => return contract("no type embeddings supplied"),
    };
    if type_embeds.values().any(|v| v.len() != dim) {
        return contract("type embeddings differ in dimension");
    }
    let mut acc: Option<Vec<T>> = None;
    for (&t, &w) in &prior.weights {
        if w == 0.0 {
            continue;
        }
        let Some(e) = type_embeds.get(&t) else {
            return contract(format!("no embedding for type {t} in the prior's support"));
        };
        let w = T::of(w);
        match acc.as_mut() {
            None => acc = Some(e.iter().map(|&x| w * x).collect()),
            Some(a) => a.iter_mut().zip(e).for_each(|(a, &x)| *a += w * x),
        }
    }
    Ok(acc.unwrap_or_else(|| vec![T::zero(); dim]))
}

/// Words describing a relation label: `"per:date_of_birth"` gives
/// `person, date, of, birth`.
pub fn label_metadata_words(label: &str) -> Vec<String> {
    label
        .split([':', '_', '/'])
        .filter(|w| !w.is_empty())
        .map(|w| {
            let w = w.to_lowercase();
            match w.as_str() {
                "per" => "person".to_string(),
                "org" => "organization".to_string(),
                "gpe" => "geopolitical".to_string(),
                _ => w,
            }
        })
        .collect()
}

/// Mean embedding of the metadata words; unknown words contribute `[UNK]`'s row.
pub fn init_label_word_embedding<T: Scalar>(
    words: &[String],
    table: &EmbeddingTable<T>,
    vocab: &Vocabulary,
) -> Result<Vec<T>> {
    if words.is_empty() {
        return contract("label metadata has no words");
    }
    let mut acc = vec![T::zero(); table.dim()];
    for w in words {
        let row = table.row(vocab.word_id(w));
        acc.iter_mut().zip(row).for_each(|(a, &x)| *a += x);
    }
    let n = T::of(words.len() as f64);
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Bijection between relation labels and their label-word ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    pub rel_to_word: BTreeMap<String, u32>,
    pub word_to_rel: BTreeMap<u32, String>,
}

impl Verbalizer {
    pub fn word(&self, label: &str) -> Option<u32> {
        self.rel_to_word.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.word_to_rel.get(&id).map(String::as_str)
    }

    /// Label-word ids in ascending id order.
    pub fn word_ids(&self) -> Vec<u32> {
        self.word_to_rel.keys().copied().collect()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.rel_to_word.keys().map(String::as_str)
    }
}

pub fn build_verbalizer(inventory: &[String], vocab: &Vocabulary) -> Result<Verbalizer> {
    let mut rel_to_word = BTreeMap::new();
    let mut word_to_rel = BTreeMap::new();
    for label in inventory {
        let text = relation_token_text(label);
        let id = match vocab.id(&text) {
            Some(id) if vocab.token(id).kind == TokenKind::RelationLabel => id,
            _ => return contract(format!("vocabulary has no label word for `{label}`")),
        };
        rel_to_word.insert(label.clone(), id);
        if word_to_rel.insert(id, label.clone()).is_some() {
            return contract(format!("label word for `{label}` is shared"));
        }
    }
    Ok(Verbalizer {
        rel_to_word,
        word_to_rel,
    })
}

/// Row-major `|V| x d` embedding matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        EmbeddingTable {
            dim,
            data: vec![T::zero(); rows * dim],
        }
    }

    pub fn from_flat(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return contract("embedding data is not a whole number of rows");
        }
        Ok(EmbeddingTable { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, id: u32) -> &[T] {
        let i = id as usize * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn row_mut(&mut self, id: u32) -> &mut [T] {
        let i = id as usize * self.dim;
        &mut self.data[i..i + self.dim]
    }

    pub fn set_row(&mut self, id: u32, values: &[T]) {
        self.row_mut(id).copy_from_slice(values);
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
}

/// How the `[p]` marker row is initialized.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerInit {
    /// Mean of all word-token rows.
    #[default]
    MeanOfWords,
    /// Copy of a named token's row.
    Token(String),
}

/// Applies every deliberate initialization: `[p]`, `[subj]`/`[obj]` from the
/// type priors and each label word from its metadata words.
pub fn initialize_embeddings<T: Scalar>(
    table: &mut EmbeddingTable<T>,
    vocab: &Vocabulary,
    priors: &TypePriors,
    verbalizer: &Verbalizer,
    marker_init: &MarkerInit,
) -> Result<()> {
    let s = vocab.specials();
    let marker_row = match marker_init {
        MarkerInit::MeanOfWords => {
            let words = vocab.ids_of_kind(TokenKind::Word);
            let mut acc = vec![T::zero(); table.dim()];
            for &w in &words {
                acc.iter_mut().zip(table.row(w)).for_each(|(a, &x)| *a += x);
            }
            let n = T::of(words.len().max(1) as f64);
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        }
        MarkerInit::Token(name) => {
            let id = vocab
                .id(name)
                .ok_or_else(|| GraspError::Contract(format!("unknown marker init token `{name}`")))?;
            table.row(id).to_vec()
        }
    };
    table.set_row(s.marker, &marker_row);

    let type_embeds: BTreeMap<ArgType, Vec<T>> = ArgType::ALL
        .into_iter()
        .map(|t| (t, table.row(vocab.type_id(t)).to_vec()))
        .collect();
    let subj = init_prompt_embedding(&priors.subj, &type_embeds)?;
    let obj = init_prompt_embedding(&priors.obj, &type_embeds)?;
    table.set_row(s.subj, &subj);
    table.set_row(s.obj, &obj);

    for (label, &id) in &verbalizer.rel_to_word {
        let row = init_label_word_embedding(&label_metadata_words(label), table, vocab)?;
        table.set_row(id, &row);
    }
    Ok(())
}
