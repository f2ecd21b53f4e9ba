use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Utterance;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const PAD_SYMBOL: &str = "<pad>";
const UNK_SYMBOL: &str = "<unk>";

/// Dense string-to-id map in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Index {
    items: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Index {
    fn with_reserved() -> Self {
        let mut idx = Self::default();
        idx.insert(PAD_SYMBOL);
        idx.insert(UNK_SYMBOL);
        idx
    }

    fn from_items(items: Vec<String>) -> Self {
        let ids = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { items, ids }
    }

    pub fn insert(&mut self, item: &str) -> usize {
        if let Some(&id) = self.ids.get(item) {
            return id;
        }
        let id = self.items.len();
        self.items.push(item.to_owned());
        self.ids.insert(item.to_owned(), id);
        id
    }

    pub fn get(&self, item: &str) -> Option<usize> {
        self.ids.get(item).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Token, character, slot-tag and intent inventories of a training split.
///
/// Ids follow first occurrence. Tokens and characters reserve id 0 for
/// padding and id 1 for unknowns; tags and intents reserve nothing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pub tokens: Index,
    pub chars: Index,
    pub slots: Index,
    pub intents: Index,
}

#[derive(Serialize, Deserialize)]
struct VocabDoc {
    tokens: Vec<String>,
    chars: Vec<String>,
    slots: Vec<String>,
    intents: Vec<String>,
}

impl Vocabulary {
    pub fn build(train: &[Utterance]) -> Self {
        let mut v = Self {
            tokens: Index::with_reserved(),
            chars: Index::with_reserved(),
            slots: Index::default(),
            intents: Index::default(),
        };
        for u in train {
            for tok in &u.tokens {
                v.tokens.insert(tok);
                for c in tok.chars() {
                    v.chars.insert(c.encode_utf8(&mut [0; 4]));
                }
            }
            for tag in &u.slots {
                v.slots.insert(tag);
            }
            for intent in &u.intents {
                v.intents.insert(intent);
            }
        }
        v
    }

    pub fn token_id(&self, token: &str) -> usize {
        self.tokens.get(token).unwrap_or(UNK)
    }

    pub fn char_ids(&self, token: &str) -> Vec<usize> {
        token
            .chars()
            .map(|c| self.chars.get(c.encode_utf8(&mut [0; 4])).unwrap_or(UNK))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&VocabDoc {
            tokens: self.tokens.items.clone(),
            chars: self.chars.items.clone(),
            slots: self.slots.items.clone(),
            intents: self.intents.items.clone(),
        })
        .expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        let doc: VocabDoc = serde_json::from_str(text)?;
        Ok(Self {
            tokens: Index::from_items(doc.tokens),
            chars: Index::from_items(doc.chars),
            slots: Index::from_items(doc.slots),
            intents: Index::from_items(doc.intents),
        })
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.to_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
