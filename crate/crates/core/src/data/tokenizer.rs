//! Whitespace word-level tokenizer with a frozen vocabulary.
//!
//! Specials occupy fixed ids 0..=8 so the embedding table never resizes
//! mid-curriculum. Out-of-vocabulary words map to UNK at eval time.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Fixed special-token ids.
pub mod specials {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const UNK: usize = 3;
    pub const USER: usize = 4;
    pub const SYSTEM: usize = 5;
    pub const API: usize = 6;
    pub const OUT: usize = 7;
    pub const GEN: usize = 8;

    pub const TOKENS: [&str; 9] = [
        "<pad>", "<bos>", "<eos>", "<unk>", "USER:", "SYSTEM:", "API:", "OUT:", "GEN",
    ];
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tokenizer {
    vocab: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, usize>,
}

impl Tokenizer {
    /// Builds the vocabulary over the full corpus: specials first, then
    /// unique words in sorted order (deterministic).
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let mut words = BTreeSet::new();
        for t in texts {
            for w in t.split_whitespace() {
                if !specials::TOKENS.contains(&w) {
                    words.insert(w.to_string());
                }
            }
        }
        let mut vocab: Vec<String> =
            specials::TOKENS.iter().map(|s| s.to_string()).collect();
        vocab.extend(words);
        let mut tok = Tokenizer {
            vocab,
            ids: HashMap::new(),
        };
        tok.reindex();
        tok
    }

    pub fn reindex(&mut self) {
        self.ids = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn id_of(&self, word: &str) -> usize {
        *self.ids.get(word).unwrap_or(&specials::UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|w| self.id_of(w)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| {
                i != specials::PAD && i != specials::BOS && i != specials::EOS
            })
            .map(|&i| self.vocab.get(i).map(|s| s.as_str()).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Stable digest of the vocabulary; constant across a curriculum.
    pub fn vocab_hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.vocab {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        format!("{:x}", h.finalize())
    }
}
