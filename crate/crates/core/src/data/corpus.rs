//! Corpus files: one record per utterance, records separated by a blank line.
//!
//! ```text
//! play<TAB>O
//! roy<TAB>B-artist
//! orbison<TAB>E-artist
//! #intent<TAB>PlayMusic
//! ```
//!
//! Several intent labels are joined with `#`.

use std::fs;
use std::path::Path;

use super::scheme::{self, Scheme};
use crate::error::{Error, Result};

pub const INTENT_MARKER: &str = "#intent\t";
pub const INTENT_SEPARATOR: char = '#';

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub slots: Vec<String>,
    /// Non-empty; the first label is the training target.
    pub intents: Vec<String>,
}

impl Utterance {
    pub fn new(tokens: Vec<String>, slots: Vec<String>, intents: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::contract("utterance has no tokens"));
        }
        if tokens.len() != slots.len() {
            return Err(Error::contract(format!(
                "{} tokens but {} slot tags",
                tokens.len(),
                slots.len()
            )));
        }
        if intents.is_empty() {
            return Err(Error::contract("utterance has no intent label"));
        }
        Ok(Self { tokens, slots, intents })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn primary_intent(&self) -> &str {
        &self.intents[0]
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Parses a corpus and validates every tag sequence under `scheme`.
pub fn parse_corpus(text: &str, scheme: Scheme) -> Result<Vec<Utterance>> {
    parse(text, Some(scheme))
}

/// Parses a corpus without checking tag-sequence legality (model output).
pub fn parse_corpus_lenient(text: &str) -> Result<Vec<Utterance>> {
    parse(text, None)
}

pub fn read_corpus(path: impl AsRef<Path>, scheme: Scheme) -> Result<Vec<Utterance>> {
    parse_corpus(&fs::read_to_string(path)?, scheme)
}

fn parse(text: &str, scheme: Option<Scheme>) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    // (token, tag, line number) of the record being read
    let mut pending: Vec<(String, String, usize)> = Vec::new();
    let mut closed = false;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            if !pending.is_empty() {
                return Err(parse_err(lineno, "record ends without an #intent line"));
            }
            closed = false;
            continue;
        }
        if closed {
            return Err(parse_err(lineno, "expected a blank line between records"));
        }
        if let Some(labels) = line.strip_prefix(INTENT_MARKER) {
            if pending.is_empty() {
                return Err(parse_err(lineno, "empty utterance"));
            }
            let intents: Vec<String> = labels.split(INTENT_SEPARATOR).map(str::to_owned).collect();
            if intents.iter().any(String::is_empty) {
                return Err(parse_err(lineno, format!("empty intent label in {labels:?}")));
            }
            let (tokens, slots): (Vec<_>, Vec<_>) = pending.iter().map(|(t, s, _)| (t.clone(), s.clone())).unzip();
            if let Some(scheme) = scheme {
                scheme::validate(&slots, scheme).map_err(|(pos, msg)| parse_err(pending[pos].2, msg))?;
            }
            out.push(Utterance::new(tokens, slots, intents)?);
            pending.clear();
            closed = true;
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(tok), Some(tag), None) if !tok.is_empty() && !tag.is_empty() => {
                pending.push((tok.to_owned(), tag.to_owned(), lineno));
            }
            _ => {
                return Err(parse_err(
                    lineno,
                    format!("expected `token<TAB>slot-tag`, got {line:?}"),
                ))
            }
        }
    }
    if !pending.is_empty() {
        return Err(parse_err(last_line, "record ends without an #intent line"));
    }
    if out.is_empty() {
        return Err(parse_err(last_line.max(1), "corpus contains no utterances"));
    }
    Ok(out)
}

/// Inverse of [`parse_corpus`].
pub fn serialize_corpus(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    for (i, u) in utterances.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (tok, tag) in u.tokens.iter().zip(&u.slots) {
            out.push_str(tok);
            out.push('\t');
            out.push_str(tag);
            out.push('\n');
        }
        out.push_str(INTENT_MARKER);
        out.push_str(&u.intents.join("#"));
        out.push('\n');
    }
    out
}
