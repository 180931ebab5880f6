//! Speaker replacement and argument-aware marker insertion.
//!
//! A raw `(dialogue, subject, object)` triple becomes a marker-annotated
//! dialogue: speaker slots naming an argument are replaced by `[S1]`/`[S2]`,
//! and a `[p]` token is inserted in front of every argument occurrence inside
//! the utterances.

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, RelationInstance, Turn};
use crate::error::{contract, Result};
use crate::vocab::{tokenize, tokenize_words, Token, TokenKind, MARKER, SPEAKER_1, SPEAKER_2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Subject,
    Object,
    Trigger,
}

/// Token range `[start, end)` inside one turn's utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub turn_index: usize,
    pub start: usize,
    pub end: usize,
    pub role: Role,
}

impl Span {
    pub fn overlaps(&self, other: &Span) -> bool {
        self.turn_index == other.turn_index && self.start < other.end && other.start < self.end
    }
}

/// Where markers go relative to an argument occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerPlacement {
    #[default]
    Front,
    Surrounding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EncodeFlags {
    /// Both arguments named the same speaker.
    pub degenerate_speakers: bool,
    /// A subject and an object occurrence overlapped; the subject kept the marker.
    pub overlapping_arguments: bool,
}

/// Dialogue after speaker replacement, before tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerReplaced {
    pub turns: Vec<Turn>,
    pub subject_repr: String,
    pub object_repr: String,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedDialogue {
    /// Speaker label per turn after replacement (`[S1]`, `[S2]` or the original label).
    pub speakers: Vec<String>,
    pub turns: Vec<Vec<Token>>,
    pub a1_repr: Vec<Token>,
    pub a2_repr: Vec<Token>,
    pub spans: Vec<Span>,
    pub marker_positions: Vec<(usize, usize)>,
    pub flags: EncodeFlags,
}

impl EncodedDialogue {
    pub fn token_count(&self) -> usize {
        self.turns.iter().map(Vec::len).sum()
    }
}

/// Replaces speaker labels equal to an argument by `[S1]`/`[S2]`.
///
/// The argument representation becomes the speaker token when some turn is
/// spoken by exactly that label, and stays the surface string otherwise.
pub fn replace_speakers(turns: &[Turn], a1: &str, a2: &str) -> SpeakerReplaced {
    let names_speaker = |a: &str| turns.iter().any(|t| t.speaker == a);
    let degenerate = a1 == a2 && names_speaker(a1);
    let turns = turns
        .iter()
        .map(|t| {
            let speaker = if t.speaker == a1 {
                SPEAKER_1.to_string()
            } else if t.speaker == a2 {
                SPEAKER_2.to_string()
            } else {
                t.speaker.clone()
            };
            Turn {
                speaker,
                text: t.text.clone(),
            }
        })
        .collect();
    let repr = |a: &str, token: &str| {
        if names_speaker(a) {
            token.to_string()
        } else {
            a.to_string()
        }
    };
    SpeakerReplaced {
        turns,
        subject_repr: repr(a1, SPEAKER_1),
        object_repr: repr(a2, SPEAKER_2),
        degenerate,
    }
}

/// Leftmost-first, non-overlapping, case-insensitive matches of `needle` in `haystack`.
pub fn find_token_matches<S: AsRef<str>, N: AsRef<str>>(
    haystack: &[S],
    needle: &[N],
) -> Vec<(usize, usize)> {
    let n = needle.len();
    let mut out = Vec::new();
    if n == 0 || haystack.len() < n {
        return out;
    }
    let needle: Vec<String> = needle.iter().map(|s| s.as_ref().to_lowercase()).collect();
    let mut i = 0;
    while i + n <= haystack.len() {
        let hit = haystack[i..i + n]
            .iter()
            .zip(&needle)
            .all(|(h, w)| h.as_ref().to_lowercase() == *w);
        if hit {
            out.push((i, i + n));
            i += n;
        } else {
            i += 1;
        }
    }
    out
}

/// All occurrences of `surface` in one tokenized turn.
pub fn find_argument_spans(
    turn_index: usize,
    turn_tokens: &[Token],
    surface: &str,
    role: Role,
) -> Result<Vec<Span>> {
    let needle = tokenize_words(surface);
    if needle.is_empty() {
        return contract("argument surface tokenizes to nothing");
    }
    let hay: Vec<&str> = turn_tokens.iter().map(|t| t.text.as_str()).collect();
    Ok(find_token_matches(&hay, &needle)
        .into_iter()
        .map(|(start, end)| Span {
            turn_index,
            start,
            end,
            role,
        })
        .collect())
}

/// Inserts `[p]` in front of every subject/object occurrence and re-indexes all spans.
///
/// Object occurrences that overlap a subject occurrence are dropped (the subject
/// keeps the marker). Trigger spans never receive markers; they are only shifted.
pub fn apm_mark(
    speakers: Vec<String>,
    turns: Vec<Vec<Token>>,
    a1_repr: Vec<Token>,
    a2_repr: Vec<Token>,
    spans: Vec<Span>,
    placement: MarkerPlacement,
) -> EncodedDialogue {
    let mut flags = EncodeFlags::default();
    let subjects: Vec<Span> = spans
        .iter()
        .filter(|s| s.role == Role::Subject)
        .copied()
        .collect();
    let mut kept: Vec<Span> = Vec::with_capacity(spans.len());
    for s in spans {
        if s.role == Role::Object && subjects.iter().any(|x| x.overlaps(&s)) {
            flags.overlapping_arguments = true;
            continue;
        }
        kept.push(s);
    }

    let mut insertions: Vec<Vec<usize>> = vec![Vec::new(); turns.len()];
    for s in kept.iter().filter(|s| s.role != Role::Trigger) {
        insertions[s.turn_index].push(s.start);
        if placement == MarkerPlacement::Surrounding {
            insertions[s.turn_index].push(s.end);
        }
    }
    for ins in &mut insertions {
        ins.sort_unstable();
        ins.dedup();
    }

    // Original token i moves to i + #{q <= i}.
    let shift = |turn: usize, i: usize| i + insertions[turn].partition_point(|&q| q <= i);

    let mut out_turns = Vec::with_capacity(turns.len());
    let mut marker_positions = Vec::new();
    for (t, tokens) in turns.into_iter().enumerate() {
        let ins = &insertions[t];
        let mut out = Vec::with_capacity(tokens.len() + ins.len());
        let mut next = 0;
        for (i, tok) in tokens.into_iter().enumerate() {
            while next < ins.len() && ins[next] == i {
                marker_positions.push((t, out.len()));
                out.push(Token::new(MARKER, TokenKind::Marker));
                next += 1;
            }
            out.push(tok);
        }
        while next < ins.len() {
            marker_positions.push((t, out.len()));
            out.push(Token::new(MARKER, TokenKind::Marker));
            next += 1;
        }
        out_turns.push(out);
    }

    let spans = kept
        .into_iter()
        .map(|s| Span {
            start: shift(s.turn_index, s.start),
            end: shift(s.turn_index, s.end - 1) + 1,
            ..s
        })
        .collect();

    EncodedDialogue {
        speakers,
        turns: out_turns,
        a1_repr,
        a2_repr,
        spans,
        marker_positions,
        flags,
    }
}

/// Full encoding of one instance against its dialogue (or a prefix of it).
pub fn encode_instance(
    dialogue: &Dialogue,
    inst: &RelationInstance,
    placement: MarkerPlacement,
) -> Result<EncodedDialogue> {
    let replaced = replace_speakers(&dialogue.turns, &inst.subject.surface, &inst.object.surface);
    let triggers: Vec<&str> = inst.trigger_surfaces().collect();
    let mut speakers = Vec::with_capacity(replaced.turns.len());
    let mut turns = Vec::with_capacity(replaced.turns.len());
    let mut spans = Vec::new();
    for (ti, turn) in replaced.turns.iter().enumerate() {
        let tokens = tokenize(&turn.text);
        spans.extend(find_argument_spans(ti, &tokens, &replaced.subject_repr, Role::Subject)?);
        spans.extend(find_argument_spans(ti, &tokens, &replaced.object_repr, Role::Object)?);
        for trig in &triggers {
            if !tokenize_words(trig).is_empty() {
                spans.extend(find_argument_spans(ti, &tokens, trig, Role::Trigger)?);
            }
        }
        speakers.push(turn.speaker.clone());
        turns.push(tokens);
    }
    let mut encoded = apm_mark(
        speakers,
        turns,
        tokenize(&replaced.subject_repr),
        tokenize(&replaced.object_repr),
        spans,
        placement,
    );
    encoded.flags.degenerate_speakers = replaced.degenerate;
    Ok(encoded)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Token> {
        tokenize(s)
    }

    fn texts(ts: &[Token]) -> Vec<&str> {
        ts.iter().map(|t| t.text.as_str()).collect()
    }

    fn turn(s: &str, t: &str) -> Turn {
        Turn {
            speaker: s.into(),
            text: t.into(),
        }
    }

    #[test]
    fn replaces_speaker_argument_only() {
        let turns = vec![
            turn("S2", "Hey Pheebs, guess who we saw today."),
            turn("S3", "Ooh, ooh, fun!"),
            turn("S3", "The woman who cuts my hair!"),
        ];
        let r = replace_speakers(&turns, "S3", "Pheebs");
        assert_eq!(r.turns[0].speaker, "S2");
        assert_eq!(r.turns[1].speaker, SPEAKER_1);
        assert_eq!(r.turns[2].speaker, SPEAKER_1);
        assert_eq!(r.subject_repr, SPEAKER_1);
        assert_eq!(r.object_repr, "Pheebs");
        assert!(!r.degenerate);
    }

    #[test]
    fn no_speaker_arguments_leave_dialogue_unchanged() {
        let turns = vec![turn("S1", "Frank lives in Montauk")];
        let r = replace_speakers(&turns, "Frank", "Montauk");
        assert_eq!(r.turns, turns);
        assert_eq!((r.subject_repr.as_str(), r.object_repr.as_str()), ("Frank", "Montauk"));
    }

    #[test]
    fn identical_speaker_arguments_prefer_subject() {
        let turns = vec![turn("S1", "hi"), turn("S2", "yo")];
        let r = replace_speakers(&turns, "S1", "S1");
        assert!(r.degenerate);
        assert_eq!(r.turns[0].speaker, SPEAKER_1);
    }

    #[test]
    fn replacement_is_idempotent() {
        let turns = vec![turn("S1", "hi S2"), turn("S2", "yo"), turn("S3", "hm")];
        let once = replace_speakers(&turns, "S1", "S2");
        let twice = replace_speakers(&once.turns, &once.subject_repr, &once.object_repr);
        assert_eq!(once, twice);
    }

    #[test]
    fn finds_multi_token_argument() {
        let spans = find_argument_spans(0, &toks("I am Tom Gordon"), "Tom Gordon", Role::Subject).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].start, spans[0].end), (2, 4));
    }

    #[test]
    fn absent_argument_gives_no_spans() {
        assert!(find_argument_spans(0, &toks("I am here"), "Tom", Role::Object)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn empty_surface_is_contract_violation() {
        assert!(find_argument_spans(0, &toks("x"), " ", Role::Object).is_err());
    }

    #[test]
    fn matches_are_non_overlapping() {
        assert_eq!(find_token_matches(&["a", "a", "a"], &["a", "a"]), vec![(0, 2)]);
        assert_eq!(find_token_matches(&["A", "b"], &["a", "B"]), vec![(0, 2)]);
    }

    #[test]
    fn marks_tom_gordon() {
        let tokens = toks("I am Tom Gordon");
        let spans = find_argument_spans(0, &tokens, "Tom Gordon", Role::Subject).unwrap();
        let e = apm_mark(
            vec!["S1".into()],
            vec![tokens],
            toks("Tom Gordon"),
            toks("x"),
            spans,
            MarkerPlacement::Front,
        );
        assert_eq!(texts(&e.turns[0]), ["i", "am", "[p]", "tom", "gordon"]);
        assert_eq!(e.marker_positions, vec![(0, 2)]);
        assert_eq!((e.spans[0].start, e.spans[0].end), (3, 5));
    }

    #[test]
    fn surrounding_placement_brackets_arguments() {
        let tokens = toks("Frank lives in Montauk .");
        let mut spans = find_argument_spans(0, &tokens, "Frank", Role::Subject).unwrap();
        spans.extend(find_argument_spans(0, &tokens, "Montauk", Role::Object).unwrap());
        let e = apm_mark(
            vec!["S1".into()],
            vec![tokens],
            toks("Frank"),
            toks("Montauk"),
            spans,
            MarkerPlacement::Surrounding,
        );
        assert_eq!(
            texts(&e.turns[0]),
            ["[p]", "frank", "[p]", "lives", "in", "[p]", "montauk", "[p]", "."]
        );
    }

    #[test]
    fn overlapping_object_loses_marker() {
        let tokens = toks("frank jr got married");
        let mut spans = find_argument_spans(0, &tokens, "Frank Jr", Role::Subject).unwrap();
        spans.extend(find_argument_spans(0, &tokens, "Jr", Role::Object).unwrap());
        let e = apm_mark(
            vec!["S1".into()],
            vec![tokens],
            toks("Frank Jr"),
            toks("Jr"),
            spans,
            MarkerPlacement::Front,
        );
        assert!(e.flags.overlapping_arguments);
        assert_eq!(e.marker_positions.len(), 1);
        assert_eq!(e.spans.len(), 1);
        assert_eq!(e.spans[0].role, Role::Subject);
    }

    #[test]
    fn speaker_tokens_inside_text_are_occurrences() {
        let d = Dialogue {
            id: "d0".into(),
            turns: vec![turn("S1", "I told [S1] already"), turn("S2", "Pheebs!")],
            degenerate: false,
        };
        let inst = RelationInstance {
            id: "d0-r0".into(),
            dialogue_id: "d0".into(),
            subject: crate::corpus::Argument {
                surface: "S1".into(),
                arg_type: crate::corpus::ArgType::Per,
                is_speaker: true,
            },
            object: crate::corpus::Argument {
                surface: "Pheebs".into(),
                arg_type: crate::corpus::ArgType::Per,
                is_speaker: false,
            },
            triggers: vec![],
            relations: ["per:alternate_names".to_string()].into(),
        };
        let e = encode_instance(&d, &inst, MarkerPlacement::Front).unwrap();
        assert_eq!(e.speakers, vec!["[S1]", "S2"]);
        assert_eq!(texts(&e.turns[0]), ["i", "told", "[p]", "[S1]", "already"]);
        assert_eq!(texts(&e.turns[1]), ["[p]", "pheebs", "!"]);
        assert_eq!(texts(&e.a1_repr), ["[S1]"]);
    }
}
