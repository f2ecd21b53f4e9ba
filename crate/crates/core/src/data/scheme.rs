use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Span-encoding scheme for slot tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Bio2,
    Bioes,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bio2" | "bio" => Ok(Scheme::Bio2),
            "bioes" | "iobes" => Ok(Scheme::Bioes),
            other => Err(Error::config(format!("unknown tagging scheme {other:?}"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Bio2 => "bio2",
            Scheme::Bioes => "bioes",
        })
    }
}

/// Splits `B-artist` into `("B", "artist")`; `O` gives `("O", "")`.
pub fn split_tag(tag: &str) -> (&str, &str) {
    match tag.split_once('-') {
        Some((prefix, label)) => (prefix, label),
        None => (tag, ""),
    }
}

fn parse_tag(tag: &str, scheme: Scheme) -> std::result::Result<(char, &str), String> {
    if tag == "O" {
        return Ok(('O', ""));
    }
    let (prefix, label) = split_tag(tag);
    if label.is_empty() {
        return Err(format!("malformed tag {tag:?}"));
    }
    let allowed: &[&str] = match scheme {
        Scheme::Bio2 => &["B", "I"],
        Scheme::Bioes => &["B", "I", "E", "S"],
    };
    if !allowed.contains(&prefix) {
        return Err(format!("tag {tag:?} is not valid under {scheme}"));
    }
    Ok((prefix.chars().next().unwrap(), label))
}

/// Checks that `tags` is a legal sequence under `scheme`. On failure returns
/// the offending position and a message.
pub fn validate(tags: &[impl AsRef<str>], scheme: Scheme) -> std::result::Result<(), (usize, String)> {
    let mut open: Option<&str> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        let (prefix, label) = parse_tag(tag, scheme).map_err(|m| (i, m))?;
        // BIO2 spans close implicitly; BIOES spans must close with E.
        let legal = match prefix {
            'O' | 'B' | 'S' => scheme == Scheme::Bio2 || open.is_none(),
            _ => open == Some(label),
        };
        if !legal {
            let prev = match open {
                Some(l) => format!("an open {l:?} span"),
                None => "no open span".to_owned(),
            };
            return Err((i, format!("illegal tag {tag:?} after {prev}")));
        }
        open = match prefix {
            'B' => Some(label),
            'I' => open,
            _ => None,
        };
    }
    if scheme == Scheme::Bioes {
        if let Some(l) = open {
            return Err((tags.len().saturating_sub(1), format!("span {l:?} is never closed")));
        }
    }
    Ok(())
}

fn check(tags: &[String], scheme: Scheme) -> Result<()> {
    validate(tags, scheme).map_err(|(i, m)| Error::Conversion(format!("position {i}: {m}")))
}

/// BIO2 to BIOES. Span boundaries are unchanged.
pub fn bio_to_bioes(tags: &[String]) -> Result<Vec<String>> {
    check(tags, Scheme::Bio2)?;
    Ok(tags
        .iter()
        .enumerate()
        .map(|(i, tag)| {
            let (prefix, label) = split_tag(tag);
            let next_inside = tags.get(i + 1).is_some_and(|n| split_tag(n) == ("I", label));
            match (prefix, next_inside) {
                ("B", true) => tag.clone(),
                ("B", false) => format!("S-{label}"),
                ("I", true) => tag.clone(),
                ("I", false) => format!("E-{label}"),
                _ => tag.clone(),
            }
        })
        .collect())
}

/// BIOES to BIO2; inverse of [`bio_to_bioes`] on valid input.
pub fn bioes_to_bio(tags: &[String]) -> Result<Vec<String>> {
    check(tags, Scheme::Bioes)?;
    Ok(tags
        .iter()
        .map(|tag| match split_tag(tag) {
            ("S", label) => format!("B-{label}"),
            ("E", label) => format!("I-{label}"),
            _ => tag.clone(),
        })
        .collect())
}

/// Re-encodes a possibly invalid sequence in `to`, repairing it the way span
/// extraction does. Equals the strict converters on valid input.
pub fn convert_lenient(tags: &[String], from: Scheme, to: Scheme) -> Vec<String> {
    let spans = crate::metrics::extract_spans(tags, from);
    crate::metrics::encode_spans(&spans, tags.len(), to)
}
