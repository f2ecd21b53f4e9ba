use std::collections::HashSet;

use super::Utterance;

/// Dataset statistics in the layout of a corpus summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub vocab_size: usize,
    pub average_length: f64,
    pub intent_count: usize,
    pub slot_count: usize,
    pub split_sizes: Vec<(String, usize)>,
}

/// Counts distinct tokens, intent labels and slot tags over all splits.
pub fn corpus_stats(splits: &[(&str, &[Utterance])]) -> CorpusStats {
    let mut tokens = HashSet::new();
    let mut intents = HashSet::new();
    let mut slots = HashSet::new();
    let (mut total_tokens, mut total_utts) = (0usize, 0usize);
    for (_, split) in splits {
        for u in *split {
            total_utts += 1;
            total_tokens += u.len();
            tokens.extend(u.tokens.iter().map(String::as_str));
            slots.extend(u.slots.iter().map(String::as_str));
            intents.extend(u.intents.iter().map(String::as_str));
        }
    }
    CorpusStats {
        vocab_size: tokens.len(),
        average_length: if total_utts == 0 {
            0.0
        } else {
            total_tokens as f64 / total_utts as f64
        },
        intent_count: intents.len(),
        slot_count: slots.len(),
        split_sizes: splits.iter().map(|(n, s)| (n.to_string(), s.len())).collect(),
    }
}

impl CorpusStats {
    pub fn report(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<18}{}\n", "Vocab Size", self.vocab_size));
        out.push_str(&format!("{:<18}{:.2}\n", "Average Length", self.average_length));
        out.push_str(&format!("{:<18}{}\n", "# Intents", self.intent_count));
        out.push_str(&format!("{:<18}{}\n", "# Slots", self.slot_count));
        for (name, size) in &self.split_sizes {
            out.push_str(&format!("{:<18}{}\n", format!("# {name} Set"), size));
        }
        out
    }
}
