//! Exact-span slot F1 following the conlleval chunking rules, and any-match
//! intent accuracy.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::data::scheme::{split_tag, Scheme};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub label: String,
    /// Inclusive token indices.
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            label: label.into(),
            start,
            end,
        }
    }
}

fn conll_parts(tag: &str, scheme: Scheme) -> (&str, &str) {
    let (prefix, label) = split_tag(tag);
    let prefix = match (scheme, prefix) {
        (Scheme::Bioes, "S") => "B",
        (Scheme::Bioes, "E") => "I",
        _ => prefix,
    };
    (prefix, label)
}

fn end_of_chunk(prev_tag: &str, tag: &str, prev_type: &str, ty: &str) -> bool {
    matches!(
        (prev_tag, tag),
        ("B", "B") | ("B", "O") | ("I", "B") | ("I", "O") | ("E", "E") | ("E", "I") | ("E", "O")
    ) || (prev_tag != "O" && prev_tag != "." && prev_type != ty)
        || prev_tag == "]"
        || prev_tag == "["
}

fn start_of_chunk(prev_tag: &str, tag: &str, prev_type: &str, ty: &str) -> bool {
    matches!(
        (prev_tag, tag),
        ("B", "B") | ("I", "B") | ("O", "B") | ("O", "I") | ("E", "E") | ("E", "I") | ("O", "E")
    ) || (tag != "O" && tag != "." && prev_type != ty)
        || tag == "["
        || tag == "]"
}

/// Maximal labeled spans. Invalid sequences are repaired with conlleval's
/// chunk boundary rules (an orphan `I-X` opens a span). BIOES input is read
/// through its BIO2 image.
pub fn extract_spans<S: AsRef<str>>(tags: &[S], scheme: Scheme) -> Vec<Span> {
    let mut spans = Vec::new();
    let (mut prev_tag, mut prev_type) = ("O", "");
    let mut open: Option<usize> = None;
    for (i, tag) in tags.iter().enumerate() {
        let (t, ty) = conll_parts(tag.as_ref(), scheme);
        let ends = end_of_chunk(prev_tag, t, prev_type, ty);
        let starts = start_of_chunk(prev_tag, t, prev_type, ty);
        if let Some(s) = open {
            if ends || starts {
                spans.push(Span::new(prev_type, s, i - 1));
                open = None;
            }
        }
        if starts {
            open = Some(i);
        }
        prev_tag = t;
        prev_type = ty;
    }
    if let Some(s) = open {
        spans.push(Span::new(prev_type, s, tags.len() - 1));
    }
    spans
}

/// Writes spans as a tag sequence of length `len` in `scheme`.
pub fn encode_spans(spans: &[Span], len: usize, scheme: Scheme) -> Vec<String> {
    let mut tags = vec!["O".to_string(); len];
    for s in spans {
        for (i, tag) in tags.iter_mut().enumerate().take(s.end + 1).skip(s.start) {
            let prefix = match scheme {
                Scheme::Bio2 if i == s.start => "B",
                Scheme::Bio2 => "I",
                Scheme::Bioes if s.start == s.end => "S",
                Scheme::Bioes if i == s.start => "B",
                Scheme::Bioes if i == s.end => "E",
                Scheme::Bioes => "I",
            };
            *tag = format!("{prefix}-{}", s.label);
        }
    }
    tags
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ChunkCounts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl ChunkCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Corpus-level chunk statistics in the shape of a conlleval run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConllEval {
    pub tokens: usize,
    pub correct_tags: usize,
    pub total: ChunkCounts,
    pub by_label: BTreeMap<String, ChunkCounts>,
}

impl ConllEval {
    pub fn evaluate<S: AsRef<str>, V: AsRef<[S]>>(gold: &[V], pred: &[V], scheme: Scheme) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::contract(format!(
                "{} gold sequences but {} predicted",
                gold.len(),
                pred.len()
            )));
        }
        let mut out = Self::default();
        for (k, (g, p)) in gold.iter().zip(pred).enumerate() {
            let (g, p) = (g.as_ref(), p.as_ref());
            if g.len() != p.len() {
                return Err(Error::contract(format!(
                    "sequence {k}: {} gold tags but {} predicted",
                    g.len(),
                    p.len()
                )));
            }
            out.tokens += g.len();
            out.correct_tags += g.iter().zip(p).filter(|(a, b)| a.as_ref() == b.as_ref()).count();
            let gs = extract_spans(g, scheme);
            let ps = extract_spans(p, scheme);
            for s in &gs {
                out.total.gold += 1;
                out.by_label.entry(s.label.clone()).or_default().gold += 1;
            }
            for s in &ps {
                out.total.predicted += 1;
                let entry = out.by_label.entry(s.label.clone()).or_default();
                entry.predicted += 1;
                if gs.contains(s) {
                    entry.correct += 1;
                    out.total.correct += 1;
                }
            }
        }
        Ok(out)
    }

    /// Text report with conlleval's column layout.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "processed {} tokens with {} phrases; found: {} phrases; correct: {}.",
            self.tokens, self.total.gold, self.total.predicted, self.total.correct
        );
        if self.tokens > 0 {
            let _ = writeln!(
                out,
                "accuracy: {:6.2}%; precision: {:6.2}%; recall: {:6.2}%; FB1: {:6.2}",
                100.0 * ratio(self.correct_tags, self.tokens),
                100.0 * self.total.precision(),
                100.0 * self.total.recall(),
                100.0 * self.total.f1()
            );
        }
        for (label, c) in &self.by_label {
            let _ = writeln!(
                out,
                "{:>17}: precision: {:6.2}%; recall: {:6.2}%; FB1: {:6.2}  {}",
                label,
                100.0 * c.precision(),
                100.0 * c.recall(),
                100.0 * c.f1(),
                c.predicted
            );
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Exact-span precision, recall and F1 over aligned corpora.
pub fn span_f1<S: AsRef<str>, V: AsRef<[S]>>(gold: &[V], pred: &[V], scheme: Scheme) -> Result<F1Score> {
    let eval = ConllEval::evaluate(gold, pred, scheme)?;
    Ok(F1Score {
        precision: eval.total.precision(),
        recall: eval.total.recall(),
        f1: eval.total.f1(),
    })
}

/// Fraction of utterances whose predicted intent is any of the gold labels.
pub fn intent_accuracy<S: AsRef<str>, V: AsRef<[S]>>(gold: &[V], pred: &[S]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(Error::contract(format!(
            "{} gold intent sets but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let hits = gold
        .iter()
        .zip(pred)
        .filter(|(g, p)| g.as_ref().iter().any(|l| l.as_ref() == p.as_ref()))
        .count();
    Ok(ratio(hits, gold.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(tags: &[&str]) -> Vec<String> {
        tags.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn spans_of_simple_sequences() {
        assert!(extract_spans(&["O", "O", "O"], Scheme::Bio2).is_empty());
        assert_eq!(
            extract_spans(&["B-X", "I-X", "O", "B-Y"], Scheme::Bio2),
            vec![Span::new("X", 0, 1), Span::new("Y", 3, 3)]
        );
    }

    #[test]
    fn orphan_inside_opens_span() {
        assert_eq!(extract_spans(&["I-X", "I-X"], Scheme::Bio2), vec![Span::new("X", 0, 1)]);
        assert_eq!(
            extract_spans(&["B-X", "I-Y", "I-Y"], Scheme::Bio2),
            vec![Span::new("X", 0, 0), Span::new("Y", 1, 2)]
        );
    }

    #[test]
    fn bioes_spans() {
        assert_eq!(
            extract_spans(&["S-X", "S-X", "B-Y", "I-Y", "E-Y"], Scheme::Bioes),
            vec![Span::new("X", 0, 0), Span::new("X", 1, 1), Span::new("Y", 2, 4)]
        );
    }

    #[test]
    fn f1_examples() {
        let gold = vec![v(&["B-X", "O", "B-Y"])];
        let same = span_f1(&gold, &gold, Scheme::Bio2).unwrap();
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));

        let one = vec![v(&["B-X", "O", "O"])];
        let s = span_f1(&gold, &one, Scheme::Bio2).unwrap();
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);

        let none = vec![v(&["O", "O", "O"])];
        let s = span_f1(&gold, &none, Scheme::Bio2).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));

        assert!(span_f1(&gold, &[v(&["O"])], Scheme::Bio2).is_err());
        assert!(span_f1(&gold, &[] as &[Vec<String>], Scheme::Bio2).is_err());
    }

    #[test]
    fn intent_any_match() {
        let gold = vec![v(&["A"]), v(&["A", "B"]), v(&["A", "B"])];
        let pred = v(&["A", "A", "C"]);
        assert!((intent_accuracy(&gold, &pred).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(intent_accuracy(&gold, &pred[..1]).is_err());
    }

    #[test]
    fn report_layout() {
        let gold = vec![v(&["B-artist", "I-artist", "O"])];
        let pred = vec![v(&["B-artist", "I-artist", "O"])];
        let r = ConllEval::evaluate(&gold, &pred, Scheme::Bio2).unwrap().report();
        assert_eq!(
            r,
            "processed 3 tokens with 1 phrases; found: 1 phrases; correct: 1.\n\
             accuracy: 100.00%; precision: 100.00%; recall: 100.00%; FB1: 100.00\n           \
             artist: precision: 100.00%; recall: 100.00%; FB1: 100.00  1\n"
        );
    }
}
