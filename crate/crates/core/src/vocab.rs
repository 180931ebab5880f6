//! Word-level tokenization and the vocabulary, including every special token
//! the prompt template and the clue-detection task rely on.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ArgType, Corpus};
use crate::error::{contract, GraspError, Result};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";
pub const MARKER: &str = "[p]";
pub const SUBJ: &str = "[subj]";
pub const OBJ: &str = "[obj]";
pub const SPEAKER_1: &str = "[S1]";
pub const SPEAKER_2: &str = "[S2]";
pub const CLUE_SUBJECT: &str = "[subject]";
pub const CLUE_OBJECT: &str = "[object]";
pub const CLUE_TRIGGER: &str = "[trigger]";
pub const CLUE_OUTSIDE: &str = "[outside]";

const PUNCTUATION: [char; 8] = ['.', ',', '!', '?', ';', ':', '\'', '"'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Word,
    Special,
    Speaker,
    ClueLabel,
    RelationLabel,
    Prompt,
    Marker,
    Mask,
    Cls,
    Sep,
}

impl TokenKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenKind::Word => "word",
            TokenKind::Special => "special",
            TokenKind::Speaker => "speaker",
            TokenKind::ClueLabel => "clue_label",
            TokenKind::RelationLabel => "relation_label",
            TokenKind::Prompt => "prompt",
            TokenKind::Marker => "marker",
            TokenKind::Mask => "mask",
            TokenKind::Cls => "cls",
            TokenKind::Sep => "sep",
        }
    }
}

impl FromStr for TokenKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "word" => TokenKind::Word,
            "special" => TokenKind::Special,
            "speaker" => TokenKind::Speaker,
            "clue_label" => TokenKind::ClueLabel,
            "relation_label" => TokenKind::RelationLabel,
            "prompt" => TokenKind::Prompt,
            "marker" => TokenKind::Marker,
            "mask" => TokenKind::Mask,
            "cls" => TokenKind::Cls,
            "sep" => TokenKind::Sep,
            other => return Err(format!("unknown token kind `{other}`")),
        })
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
}

impl Token {
    pub fn new(text: impl Into<String>, kind: TokenKind) -> Self {
        Token {
            text: text.into(),
            kind,
        }
    }

    pub fn word(text: impl Into<String>) -> Self {
        Token::new(text, TokenKind::Word)
    }
}

/// Kind of a bracketed token seen in raw text.
fn bracketed_kind(text: &str) -> TokenKind {
    match text {
        CLS => TokenKind::Cls,
        SEP => TokenKind::Sep,
        MASK => TokenKind::Mask,
        MARKER => TokenKind::Marker,
        SUBJ | OBJ => TokenKind::Prompt,
        SPEAKER_1 | SPEAKER_2 => TokenKind::Speaker,
        CLUE_SUBJECT | CLUE_OBJECT | CLUE_TRIGGER | CLUE_OUTSIDE => TokenKind::ClueLabel,
        _ => TokenKind::Special,
    }
}

fn is_bracketed(chunk: &str) -> bool {
    chunk.len() >= 2 && chunk.starts_with('[') && chunk.ends_with(']')
}

/// Lowercases, splits on whitespace and splits off punctuation; bracketed chunks
/// such as `[MASK]` pass through whole and keep their case.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if is_bracketed(chunk) {
            out.push(Token::new(chunk, bracketed_kind(chunk)));
            continue;
        }
        let mut current = String::new();
        for ch in chunk.chars() {
            if PUNCTUATION.contains(&ch) {
                if !current.is_empty() {
                    out.push(Token::word(std::mem::take(&mut current)));
                }
                out.push(Token::word(ch.to_string()));
            } else {
                current.extend(ch.to_lowercase());
            }
        }
        if !current.is_empty() {
            out.push(Token::word(current));
        }
    }
    out
}

/// Token texts only.
pub fn tokenize_words(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text).collect()
}

/// Speaker-slot token text for a raw speaker label.
pub fn speaker_token_text(label: &str) -> String {
    format!("[spk:{label}]")
}

/// Label-word token text for a relation label.
pub fn relation_token_text(label: &str) -> String {
    format!("[{label}]")
}

/// Embedding-carrying token for an argument type.
pub fn type_token_text(t: ArgType) -> String {
    format!("[{}]", t.as_str())
}

/// Ids of the tokens the pipeline addresses directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
    pub unk: u32,
    pub marker: u32,
    pub subj: u32,
    pub obj: u32,
    pub speaker_1: u32,
    pub speaker_2: u32,
    pub subject: u32,
    pub object: u32,
    pub trigger: u32,
    pub outside: u32,
}

impl SpecialIds {
    /// Clue label words in `[subject, object, trigger, outside]` order.
    pub fn clue_ids(&self) -> [u32; 4] {
        [self.subject, self.object, self.trigger, self.outside]
    }
}

fn fixed_specials() -> Vec<Token> {
    let mut v = vec![
        Token::new(CLS, TokenKind::Cls),
        Token::new(SEP, TokenKind::Sep),
        Token::new(MASK, TokenKind::Mask),
        Token::new(UNK, TokenKind::Word),
        Token::new(MARKER, TokenKind::Marker),
        Token::new(SUBJ, TokenKind::Prompt),
        Token::new(OBJ, TokenKind::Prompt),
        Token::new(SPEAKER_1, TokenKind::Speaker),
        Token::new(SPEAKER_2, TokenKind::Speaker),
        Token::new(CLUE_SUBJECT, TokenKind::ClueLabel),
        Token::new(CLUE_OBJECT, TokenKind::ClueLabel),
        Token::new(CLUE_TRIGGER, TokenKind::ClueLabel),
        Token::new(CLUE_OUTSIDE, TokenKind::ClueLabel),
    ];
    v.extend(
        ArgType::ALL
            .into_iter()
            .map(|t| Token::new(type_token_text(t), TokenKind::Special)),
    );
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    index: HashMap<String, u32>,
    frozen: bool,
    specials: Option<SpecialIds>,
}

impl Vocabulary {
    /// An unfrozen vocabulary holding the fixed special tokens.
    pub fn with_specials() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            frozen: false,
            specials: None,
        };
        for t in fixed_specials() {
            v.push(t).expect("fresh vocabulary accepts specials");
        }
        v
    }

    /// Appends a token, returning its id. Existing texts return their current id.
    pub fn push(&mut self, token: Token) -> Result<u32> {
        if self.frozen {
            return contract(format!("cannot add `{}` to a frozen vocabulary", token.text));
        }
        if let Some(&id) = self.index.get(&token.text) {
            return Ok(id);
        }
        let id = self.tokens.len() as u32;
        self.index.insert(token.text.clone(), id);
        self.tokens.push(token);
        Ok(id)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
        self.specials = Some(self.resolve_specials().expect("vocabulary holds every special token"));
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn resolve_specials(&self) -> Result<SpecialIds> {
        let get = |t: &str| {
            self.id(t)
                .ok_or_else(|| GraspError::Contract(format!("vocabulary lacks `{t}`")))
        };
        Ok(SpecialIds {
            cls: get(CLS)?,
            sep: get(SEP)?,
            mask: get(MASK)?,
            unk: get(UNK)?,
            marker: get(MARKER)?,
            subj: get(SUBJ)?,
            obj: get(OBJ)?,
            speaker_1: get(SPEAKER_1)?,
            speaker_2: get(SPEAKER_2)?,
            subject: get(CLUE_SUBJECT)?,
            object: get(CLUE_OBJECT)?,
            trigger: get(CLUE_TRIGGER)?,
            outside: get(CLUE_OUTSIDE)?,
        })
    }

    /// Special-token ids. Panics on an unfrozen vocabulary.
    pub fn specials(&self) -> SpecialIds {
        self.specials.expect("specials are resolved when the vocabulary is frozen")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token(&self, id: u32) -> &Token {
        &self.tokens[id as usize]
    }

    pub fn id(&self, text: &str) -> Option<u32> {
        self.index.get(text).copied()
    }

    /// Id for a word, falling back to `[UNK]`.
    pub fn word_id(&self, text: &str) -> u32 {
        match self.index.get(text) {
            Some(&id) if self.tokens[id as usize].kind == TokenKind::Word => id,
            _ => self.specials().unk,
        }
    }

    pub fn ids_of_kind(&self, kind: TokenKind) -> Vec<u32> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.kind == kind)
            .map(|(i, _)| i as u32)
            .collect()
    }

    pub fn type_id(&self, t: ArgType) -> u32 {
        self.id(&type_token_text(t)).expect("type tokens are fixed specials")
    }

    pub fn speaker_id(&self, label: &str) -> u32 {
        self.id(&speaker_token_text(label))
            .unwrap_or_else(|| self.specials().unk)
    }

    /// Line-oriented `id<TAB>kind<TAB>text` serialization.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(&format!("{i}\t{}\t{}\n", t.kind, t.text));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            frozen: false,
            specials: None,
        };
        for (line_no, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| GraspError::Schema {
                entry: line_no,
                key: "vocab".into(),
                message: m.to_string(),
            };
            let mut parts = line.splitn(3, '\t');
            let id: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad id"))?;
            let kind: TokenKind = parts
                .next()
                .ok_or_else(|| bad("missing kind"))?
                .parse()
                .map_err(|m: String| bad(&m))?;
            let text = parts.next().ok_or_else(|| bad("missing text"))?;
            if id != v.tokens.len() {
                return Err(bad("ids must be dense and ordered"));
            }
            if v.index.contains_key(text) {
                return Err(bad("duplicate token text"));
            }
            v.push(Token::new(text, kind))?;
        }
        v.resolve_specials()?;
        v.freeze();
        Ok(v)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|source| GraspError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Builds the frozen vocabulary for a corpus.
///
/// Layout: fixed specials, then speaker tokens (sorted), then one label word per
/// relation in inventory order, then words with `count >= min_count` ordered by
/// descending count and then lexicographically.
pub fn build_vocabulary(c: &Corpus, min_count: usize) -> Vocabulary {
    let mut vocab = Vocabulary::with_specials();
    let reserved: BTreeSet<String> = vocab.tokens.iter().map(|t| t.text.clone()).collect();

    let speakers: BTreeSet<&str> = c
        .dialogues
        .iter()
        .flat_map(|d| d.turns.iter().map(|t| t.speaker.as_str()))
        .collect();
    for s in speakers {
        vocab
            .push(Token::new(speaker_token_text(s), TokenKind::Speaker))
            .expect("unfrozen");
    }
    for label in &c.relation_inventory {
        vocab
            .push(Token::new(relation_token_text(label), TokenKind::RelationLabel))
            .expect("unfrozen");
    }

    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut count = |text: &str| {
        for t in tokenize(text) {
            if t.kind == TokenKind::Word && !reserved.contains(&t.text) {
                *counts.entry(t.text).or_insert(0) += 1;
            }
        }
    };
    for d in &c.dialogues {
        for turn in &d.turns {
            // Every template turn carries a ":" separator.
            count(":");
            count(&turn.text);
        }
    }
    for inst in &c.instances {
        for arg in [&inst.subject, &inst.object] {
            if !arg.is_speaker {
                count(&arg.surface);
            }
        }
    }
    let mut words: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(w, n)| *n >= min_count.max(1) && vocab.id(w).is_none())
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for (w, _) in words {
        vocab.push(Token::word(w)).expect("unfrozen");
    }
    vocab.freeze();
    vocab
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    #[test]
    fn tokenizes_example_sentence() {
        assert_eq!(tokenize_words("I am Tom Gordon"), ["i", "am", "tom", "gordon"]);
    }

    #[test]
    fn empty_text_gives_no_tokens() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \t ").is_empty());
    }

    #[test]
    fn splits_punctuation_and_keeps_brackets() {
        let toks = tokenize("Hey Pheebs, it's [MASK] time!");
        let texts: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["hey", "pheebs", ",", "it", "'", "s", "[MASK]", "time", "!"]);
        assert_eq!(toks[6].kind, TokenKind::Mask);
        assert_eq!(tokenize("[p]")[0].kind, TokenKind::Marker);
    }

    #[test]
    fn empty_corpus_vocabulary_is_specials_plus_unk() {
        let v = build_vocabulary(&Corpus::empty(Split::Train), 1);
        assert_eq!(v.len(), fixed_specials().len());
        assert_eq!(v.ids_of_kind(TokenKind::Word), vec![v.specials().unk]);
        assert!(v.is_frozen());
    }

    #[test]
    fn frozen_vocabulary_rejects_push() {
        let mut v = build_vocabulary(&Corpus::empty(Split::Train), 1);
        assert!(matches!(v.push(Token::word("x")), Err(GraspError::Contract(_))));
    }

    #[test]
    fn specials_are_unique() {
        let v = build_vocabulary(&Corpus::empty(Split::Train), 1);
        for text in [CLS, SEP, MASK, MARKER, SUBJ, OBJ, SPEAKER_1, SPEAKER_2] {
            assert_eq!(v.tokens().iter().filter(|t| t.text == text).count(), 1);
        }
        let s = v.specials();
        assert_eq!(v.token(s.marker).kind, TokenKind::Marker);
        assert_eq!(v.token(s.mask).kind, TokenKind::Mask);
    }

    #[test]
    fn tsv_round_trip() {
        let text = r#"[[["S1: Frank lives in Montauk.", "Speaker 2: Frank!"],
            [{"x": "Frank", "y": "Montauk", "x_type": "PER", "y_type": "GPE", "r": ["per:place_of_residence"], "t": ["lives in"]}]]]"#;
        let c = Corpus::from_dialogre_str(text, Split::Train).unwrap();
        let v = build_vocabulary(&c, 1);
        let back = Vocabulary::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(v, back);
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(&t.text), Some(i as u32));
        }
        assert!(v.id("[spk:Speaker 2]").is_some());
        assert!(v.id("[per:place_of_residence]").is_some());
    }
}
