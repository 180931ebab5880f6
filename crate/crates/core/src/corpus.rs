//! DialogRE-style corpus ingestion, validation and corpus statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::encoding::find_token_matches;
use crate::error::{GraspError, Result};
use crate::vocab::tokenize_words;

/// Relation label used by DialogRE for argument pairs without a relation.
pub const UNANSWERABLE: &str = "unanswerable";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "dev")]
    Dev,
    #[serde(rename = "test")]
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, dev or test)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// Argument types pre-defined by the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArgType {
    #[serde(rename = "PER")]
    Per,
    #[serde(rename = "ORG")]
    Org,
    #[serde(rename = "GPE")]
    Gpe,
    #[serde(rename = "VALUE")]
    Value,
    #[serde(rename = "STRING")]
    String,
}

impl ArgType {
    pub const ALL: [ArgType; 5] = [
        ArgType::Per,
        ArgType::Org,
        ArgType::Gpe,
        ArgType::Value,
        ArgType::String,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArgType::Per => "PER",
            ArgType::Org => "ORG",
            ArgType::Gpe => "GPE",
            ArgType::Value => "VALUE",
            ArgType::String => "STRING",
        }
    }
}

impl FromStr for ArgType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ArgType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown argument type `{s}`"))
    }
}

impl fmt::Display for ArgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

impl Turn {
    /// Parses `"Speaker: utterance"`, splitting on the first `": "` only.
    ///
    /// A turn that is only a speaker prefix (`"S1:"`) parses with empty text and
    /// reports itself as degenerate through the second tuple element.
    pub fn parse(raw: &str) -> Option<(Turn, bool)> {
        if let Some((speaker, text)) = raw.split_once(": ") {
            let speaker = speaker.trim();
            if speaker.is_empty() {
                return None;
            }
            let degenerate = text.trim().is_empty();
            return Some((
                Turn {
                    speaker: speaker.to_string(),
                    text: text.to_string(),
                },
                degenerate,
            ));
        }
        let speaker = raw.trim().strip_suffix(':')?.trim();
        if speaker.is_empty() {
            return None;
        }
        Some((
            Turn {
                speaker: speaker.to_string(),
                text: String::new(),
            },
            true,
        ))
    }

    /// Individual speaker names; DialogRE writes joint turns as `"Speaker 1, Speaker 2"`.
    pub fn speaker_names(&self) -> impl Iterator<Item = &str> {
        self.speaker.split(", ").map(str::trim)
    }

    pub fn is_spoken_by(&self, name: &str) -> bool {
        self.speaker == name || self.speaker_names().any(|s| s == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub degenerate: bool,
}

impl Dialogue {
    pub fn speaker_names(&self) -> BTreeSet<&str> {
        self.turns.iter().flat_map(Turn::speaker_names).collect()
    }

    pub fn has_speaker(&self, name: &str) -> bool {
        self.turns.iter().any(|t| t.is_spoken_by(name))
    }

    /// Copy holding only the first `n` turns.
    pub fn prefix(&self, n: usize) -> Dialogue {
        Dialogue {
            id: self.id.clone(),
            turns: self.turns.iter().take(n).cloned().collect(),
            degenerate: self.degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Argument {
    pub surface: String,
    pub arg_type: ArgType,
    pub is_speaker: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub id: String,
    pub dialogue_id: String,
    pub subject: Argument,
    pub object: Argument,
    pub triggers: Vec<String>,
    pub relations: BTreeSet<String>,
}

impl RelationInstance {
    /// Trigger strings with the empty placeholders removed.
    pub fn trigger_surfaces(&self) -> impl Iterator<Item = &str> {
        self.triggers
            .iter()
            .map(|t| t.trim())
            .filter(|t| !t.is_empty())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Corpus {
    pub split: Split,
    pub relation_inventory: Vec<String>,
    pub dialogues: Vec<Dialogue>,
    pub instances: Vec<RelationInstance>,
    #[serde(skip)]
    pub warnings: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct NormalizedCorpus {
    split: Split,
    #[serde(default)]
    relation_inventory: Vec<String>,
    dialogues: Vec<Dialogue>,
    instances: Vec<RelationInstance>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.split == other.split
            && self.relation_inventory == other.relation_inventory
            && self.dialogues == other.dialogues
            && self.instances == other.instances
    }
}

impl Corpus {
    /// Builds a corpus, checking that every instance resolves to a dialogue and
    /// deriving the sorted relation inventory.
    pub fn new(
        split: Split,
        dialogues: Vec<Dialogue>,
        instances: Vec<RelationInstance>,
    ) -> Result<Self> {
        let index: HashMap<String, usize> = dialogues
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i))
            .collect();
        if index.len() != dialogues.len() {
            return Err(GraspError::Contract("duplicate dialogue id".into()));
        }
        for (i, inst) in instances.iter().enumerate() {
            if !index.contains_key(&inst.dialogue_id) {
                return Err(GraspError::Schema {
                    entry: i,
                    key: "dialogue_id".into(),
                    message: format!("dialogue `{}` does not exist", inst.dialogue_id),
                });
            }
            if inst.relations.is_empty() {
                return Err(GraspError::Schema {
                    entry: i,
                    key: "r".into(),
                    message: "relation set is empty".into(),
                });
            }
        }
        let relation_inventory: Vec<String> = instances
            .iter()
            .flat_map(|i| i.relations.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut corpus = Corpus {
            split,
            relation_inventory,
            dialogues,
            instances,
            warnings: Vec::new(),
            index,
        };
        corpus.warnings = corpus.trigger_warnings();
        for w in &corpus.warnings {
            warn!("{w}");
        }
        Ok(corpus)
    }

    pub fn empty(split: Split) -> Self {
        Corpus::new(split, Vec::new(), Vec::new()).expect("empty corpus is valid")
    }

    pub fn dialogue(&self, id: &str) -> Option<&Dialogue> {
        self.index.get(id).map(|&i| &self.dialogues[i])
    }

    pub fn dialogue_of(&self, inst: &RelationInstance) -> &Dialogue {
        self.dialogue(&inst.dialogue_id)
            .expect("instances resolve to dialogues by construction")
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Sub-corpus restricted to the given instances (dialogues are kept only when referenced).
    /// The relation inventory is inherited so label ids stay aligned with the parent.
    pub fn subset(&self, instance_indices: &[usize]) -> Corpus {
        let instances: Vec<RelationInstance> = instance_indices
            .iter()
            .map(|&i| self.instances[i].clone())
            .collect();
        let used: BTreeSet<&str> = instances.iter().map(|i| i.dialogue_id.as_str()).collect();
        let dialogues: Vec<Dialogue> = self
            .dialogues
            .iter()
            .filter(|d| used.contains(d.id.as_str()))
            .cloned()
            .collect();
        let mut sub = Corpus::new(self.split, dialogues, instances)
            .expect("subset of a valid corpus is valid");
        sub.relation_inventory = self.relation_inventory.clone();
        sub
    }

    fn trigger_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for inst in &self.instances {
            let dialogue = self.dialogue_of(inst);
            for trig in inst.trigger_surfaces() {
                if !dialogue.turns.iter().any(|t| t.text.contains(trig)) {
                    out.push(format!(
                        "instance {}: trigger `{trig}` does not occur verbatim in dialogue {}",
                        inst.id, inst.dialogue_id
                    ));
                }
            }
        }
        out
    }

    /// Parses the public DialogRE layout: `[[turns, instances], ...]`.
    pub fn from_dialogre_str(text: &str, split: Split) -> Result<Corpus> {
        let root: Value = serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
        let entries = root.as_array().ok_or_else(|| GraspError::Schema {
            entry: 0,
            key: "$".into(),
            message: "top level must be a list of entries".into(),
        })?;

        let mut dialogues = Vec::with_capacity(entries.len());
        let mut instances = Vec::new();
        for (ei, entry) in entries.iter().enumerate() {
            let schema = |key: &str, message: &str| GraspError::Schema {
                entry: ei,
                key: key.to_string(),
                message: message.to_string(),
            };
            let pair = entry
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or_else(|| schema("$", "entry must be a [turns, instances] pair"))?;
            let raw_turns = pair[0]
                .as_array()
                .ok_or_else(|| schema("turns", "expected a list of turn strings"))?;
            let dialogue_id = format!("d{ei}");
            let mut turns = Vec::with_capacity(raw_turns.len());
            let mut degenerate = false;
            for raw in raw_turns {
                let raw = raw
                    .as_str()
                    .ok_or_else(|| schema("turns", "turn must be a string"))?;
                let (turn, empty) = Turn::parse(raw).ok_or_else(|| {
                    schema("turns", &format!("turn `{raw}` lacks a `Speaker: ` prefix"))
                })?;
                degenerate |= empty;
                turns.push(turn);
            }
            let dialogue = Dialogue {
                id: dialogue_id.clone(),
                turns,
                degenerate,
            };

            let records = pair[1]
                .as_array()
                .ok_or_else(|| schema("instances", "expected a list of instance records"))?;
            for (ri, rec) in records.iter().enumerate() {
                let obj = rec
                    .as_object()
                    .ok_or_else(|| schema("instances", "instance must be an object"))?;
                let field = |key: &str| obj.get(key).ok_or_else(|| schema(key, "missing"));
                let string = |key: &str| -> Result<String> {
                    field(key)?
                        .as_str()
                        .map(str::to_string)
                        .ok_or_else(|| schema(key, "expected a string"))
                };
                let strings = |key: &str| -> Result<Vec<String>> {
                    match field(key)? {
                        Value::String(s) => Ok(vec![s.clone()]),
                        Value::Array(items) => items
                            .iter()
                            .map(|v| {
                                v.as_str()
                                    .map(str::to_string)
                                    .ok_or_else(|| schema(key, "expected a list of strings"))
                            })
                            .collect(),
                        _ => Err(schema(key, "expected a list of strings")),
                    }
                };
                let arg = |surface_key: &str, type_key: &str| -> Result<Argument> {
                    let surface = string(surface_key)?;
                    if surface.trim().is_empty() {
                        return Err(schema(surface_key, "argument surface is empty"));
                    }
                    let arg_type = string(type_key)?
                        .parse::<ArgType>()
                        .map_err(|m| schema(type_key, &m))?;
                    let is_speaker = dialogue.has_speaker(&surface);
                    Ok(Argument {
                        surface,
                        arg_type,
                        is_speaker,
                    })
                };
                let subject = arg("x", "x_type")?;
                let object = arg("y", "y_type")?;
                let relations: BTreeSet<String> = strings("r")?.into_iter().collect();
                if relations.is_empty() {
                    return Err(schema("r", "relation list is empty"));
                }
                let triggers = strings("t")?;
                instances.push(RelationInstance {
                    id: format!("{dialogue_id}-r{ri}"),
                    dialogue_id: dialogue_id.clone(),
                    subject,
                    object,
                    triggers,
                    relations,
                });
            }
            dialogues.push(dialogue);
        }
        Corpus::new(split, dialogues, instances)
    }

    /// Inverse of [`Corpus::from_dialogre_str`].
    pub fn to_dialogre_json(&self) -> Value {
        let entries: Vec<Value> = self
            .dialogues
            .iter()
            .map(|d| {
                let turns: Vec<String> = d
                    .turns
                    .iter()
                    .map(|t| format!("{}: {}", t.speaker, t.text))
                    .collect();
                let records: Vec<Value> = self
                    .instances
                    .iter()
                    .filter(|i| i.dialogue_id == d.id)
                    .map(|i| {
                        json!({
                            "x": i.subject.surface,
                            "y": i.object.surface,
                            "x_type": i.subject.arg_type.as_str(),
                            "y_type": i.object.arg_type.as_str(),
                            "r": i.relations.iter().collect::<Vec<_>>(),
                            "t": i.triggers,
                        })
                    })
                    .collect();
                json!([turns, records])
            })
            .collect();
        Value::Array(entries)
    }

    /// Normalized JSON with a stable field order (the `ingest --out` format).
    pub fn to_normalized_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes")
    }

    pub fn from_normalized_str(text: &str) -> Result<Corpus> {
        let raw: NormalizedCorpus =
            serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
        let mut corpus = Corpus::new(raw.split, raw.dialogues, raw.instances)?;
        // A stored inventory may list labels that no instance of this split uses.
        let derived: BTreeSet<String> = corpus.relation_inventory.iter().cloned().collect();
        if !raw.relation_inventory.is_empty() {
            let stored: BTreeSet<String> = raw.relation_inventory.iter().cloned().collect();
            if !derived.is_subset(&stored) {
                return Err(GraspError::Schema {
                    entry: 0,
                    key: "relation_inventory".into(),
                    message: "inventory does not cover every instance label".into(),
                });
            }
            corpus.relation_inventory = stored.into_iter().collect();
        }
        Ok(corpus)
    }
}

/// Loads a DialogRE-format file.
pub fn load_corpus(path: impl AsRef<Path>, split: Split) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GraspError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Corpus::from_dialogre_str(&text, split)
}

fn parse_error(text: &str, e: &serde_json::Error) -> GraspError {
    // serde_json reports 1-based line and column; convert to a byte offset.
    let line_start: usize = text
        .split_inclusive('\n')
        .take(e.line().saturating_sub(1))
        .map(str::len)
        .sum();
    GraspError::Parse {
        offset: (line_start + e.column().saturating_sub(1)).min(text.len()),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_dialogues: usize,
    pub n_instances: usize,
    pub cross_utterance_pct: f64,
    pub non_speaker_pct: f64,
    pub per_relation_counts: BTreeMap<String, usize>,
    /// Set when the corpus had no instances and the fractions are defined as zero.
    pub empty: bool,
}

/// Whether `arg` occurs in `turn`: as a token-subsequence of the utterance, or,
/// for a speaker argument, by being one of the turn's speakers.
pub fn argument_in_turn(arg: &Argument, arg_tokens: &[String], turn: &Turn) -> bool {
    if arg.is_speaker && turn.is_spoken_by(&arg.surface) {
        return true;
    }
    let turn_tokens = tokenize_words(&turn.text);
    !find_token_matches(&turn_tokens, arg_tokens).is_empty()
}

fn stats_over<'a>(
    items: impl Iterator<Item = (&'a Dialogue, &'a RelationInstance)>,
    n_dialogues: usize,
) -> StatsReport {
    let mut n = 0usize;
    let mut cross = 0usize;
    let mut non_speaker = 0usize;
    let mut per_relation = BTreeMap::new();
    for (dialogue, inst) in items {
        n += 1;
        let subj_tokens = tokenize_words(&inst.subject.surface);
        let obj_tokens = tokenize_words(&inst.object.surface);
        let co_occur = dialogue.turns.iter().any(|t| {
            argument_in_turn(&inst.subject, &subj_tokens, t)
                && argument_in_turn(&inst.object, &obj_tokens, t)
        });
        if !co_occur {
            cross += 1;
        }
        if !inst.subject.is_speaker || !inst.object.is_speaker {
            non_speaker += 1;
        }
        for r in &inst.relations {
            *per_relation.entry(r.clone()).or_insert(0) += 1;
        }
    }
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    StatsReport {
        n_dialogues,
        n_instances: n,
        cross_utterance_pct: frac(cross),
        non_speaker_pct: frac(non_speaker),
        per_relation_counts: per_relation,
        empty: n == 0,
    }
}

/// Cross-utterance and non-speaker fractions plus per-relation counts.
pub fn corpus_stats(c: &Corpus) -> StatsReport {
    stats_over(
        c.instances.iter().map(|i| (c.dialogue_of(i), i)),
        c.dialogues.len(),
    )
}

/// Statistics pooled over several splits.
pub fn pooled_stats(corpora: &[&Corpus]) -> StatsReport {
    stats_over(
        corpora
            .iter()
            .flat_map(|c| c.instances.iter().map(move |i| (c.dialogue_of(i), i))),
        corpora.iter().map(|c| c.dialogues.len()).sum(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = r#"[
      [["S1: Hey guys! Hey!", "S2: Hey Pheebs, guess who we saw today.", "S3: Ooh, fun!"],
       [{"x": "S3", "y": "Pheebs", "x_type": "PER", "y_type": "PER", "r": ["per:alternate_names"], "t": [""]},
        {"x": "Pheebs", "y": "S2", "x_type": "PER", "y_type": "PER", "r": ["per:friends", "per:positive_impression"], "t": ["guess"]}]],
      [["Speaker 1: Frank lives in Montauk.", "Speaker 2: Really? Montauk: nice."],
       [{"x": "Frank", "y": "Montauk", "x_type": "PER", "y_type": "GPE", "r": ["per:place_of_residence"], "t": ["lives in"]}]],
      [["A: B: C", "B: ok"],
       [{"x": "A", "y": "B", "x_type": "PER", "y_type": "PER", "r": ["unanswerable"], "t": []},
        {"x": "C", "y": "ok", "x_type": "STRING", "y_type": "VALUE", "r": ["per:title"], "t": ["missing"]}]]
    ]"#;

    #[test]
    fn parses_speaker_turn() {
        let (turn, degenerate) = Turn::parse("S2: Hey Pheebs, guess who we saw today.").unwrap();
        assert_eq!(turn.speaker, "S2");
        assert_eq!(turn.text, "Hey Pheebs, guess who we saw today.");
        assert!(!degenerate);
    }

    #[test]
    fn splits_on_first_separator_only() {
        let (turn, _) = Turn::parse("A: B: C").unwrap();
        assert_eq!(turn.speaker, "A");
        assert_eq!(turn.text, "B: C");
    }

    #[test]
    fn speaker_only_turn_is_degenerate() {
        let (turn, degenerate) = Turn::parse("S1:").unwrap();
        assert_eq!(turn.text, "");
        assert!(degenerate);
        assert!(Turn::parse("no separator").is_none());
        assert!(Turn::parse(": text").is_none());
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let c = Corpus::from_dialogre_str("[]", Split::Train).unwrap();
        assert_eq!((c.dialogues.len(), c.instances.len()), (0, 0));
        assert!(c.relation_inventory.is_empty());
    }

    #[test]
    fn three_entry_fixture_counts() {
        // Hand count: 3 entries; 2 + 1 + 2 instance records.
        let c = Corpus::from_dialogre_str(THREE, Split::Dev).unwrap();
        assert_eq!((c.dialogues.len(), c.instances.len()), (3, 5));
        assert_eq!(
            c.relation_inventory,
            vec![
                "per:alternate_names",
                "per:friends",
                "per:place_of_residence",
                "per:positive_impression",
                "per:title",
                "unanswerable"
            ]
        );
        assert!(c.instances[0].subject.is_speaker);
        assert!(!c.instances[0].object.is_speaker);
        assert_eq!(c.dialogues[1].turns[1].text, "Really? Montauk: nice.");
        // "missing" never occurs in dialogue d2.
        assert_eq!(c.warnings.len(), 1);
        assert!(c.warnings[0].contains("missing"));
    }

    #[test]
    fn malformed_json_reports_offset() {
        let text = "[\n  [[\"S1: hi\"], [}]\n]";
        match Corpus::from_dialogre_str(text, Split::Train) {
            Err(GraspError::Parse { offset, .. }) => assert_eq!(&text[offset..offset + 1], "}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_key_names_entry_and_key() {
        let text = r#"[[["S1: hi"], []], [["S1: hi"], [{"x": "S1", "y": "hi", "x_type": "PER", "y_type": "STRING", "r": ["a"]}]]]"#;
        match Corpus::from_dialogre_str(text, Split::Train) {
            Err(GraspError::Schema { entry, key, .. }) => {
                assert_eq!(entry, 1);
                assert_eq!(key, "t");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_arg_type_is_schema_error() {
        let text = r#"[[["S1: hi"], [{"x": "S1", "y": "hi", "x_type": "PERSON", "y_type": "STRING", "r": ["a"], "t": []}]]]"#;
        assert!(matches!(
            Corpus::from_dialogre_str(text, Split::Train),
            Err(GraspError::Schema { key, .. }) if key == "x_type"
        ));
    }

    #[test]
    fn dialogre_round_trip_is_identity() {
        let c = Corpus::from_dialogre_str(THREE, Split::Train).unwrap();
        let back = Corpus::from_dialogre_str(&c.to_dialogre_json().to_string(), Split::Train).unwrap();
        assert_eq!(c, back);
        let normalized = Corpus::from_normalized_str(&c.to_normalized_json()).unwrap();
        assert_eq!(c, normalized);
    }

    #[test]
    fn co_occurrence_in_first_turn_is_not_cross_utterance() {
        let text = r#"[[["S1: Frank lives in Montauk", "S2: ok"],
            [{"x": "Frank", "y": "Montauk", "x_type": "PER", "y_type": "GPE", "r": ["per:place_of_residence"], "t": []}]]]"#;
        let c = Corpus::from_dialogre_str(text, Split::Train).unwrap();
        let s = corpus_stats(&c);
        assert_eq!(s.cross_utterance_pct, 0.0);
        assert_eq!(s.non_speaker_pct, 1.0);
        assert!(!s.empty);
    }

    #[test]
    fn empty_corpus_stats_are_flagged_zero() {
        let s = corpus_stats(&Corpus::empty(Split::Test));
        assert!(s.empty);
        assert_eq!((s.cross_utterance_pct, s.non_speaker_pct), (0.0, 0.0));
    }

    #[test]
    fn subset_keeps_inventory() {
        let c = Corpus::from_dialogre_str(THREE, Split::Train).unwrap();
        let sub = c.subset(&[2]);
        assert_eq!(sub.dialogues.len(), 1);
        assert_eq!(sub.relation_inventory, c.relation_inventory);
    }
}
