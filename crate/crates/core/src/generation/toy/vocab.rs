//! Whitespace vocabulary for the toy backend, built from a corpus plus the
//! schema's label and special words. Trailing periods split off as their own
//! token so record-sequence clauses round-trip through generation.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build(corpus: &Corpus) -> Self {
        let schema = &corpus.schema;
        let mut words: BTreeSet<String> = BTreeSet::new();
        for example in &corpus.examples {
            for word in split_words(&example.tokens.join(" ")) {
                words.insert(word);
            }
        }
        for def in &schema.event_types {
            for word in split_words(&def.name) {
                words.insert(word);
            }
            for role in &def.roles {
                for word in split_words(role) {
                    words.insert(word);
                }
            }
        }
        for extra in ["Event", "trigger", "type", "is", "."] {
            words.insert(extra.to_string());
        }
        for special in [
            &schema.special_tokens.pad_word,
            &schema.special_tokens.arg_joiner,
            &schema.special_tokens.sep_token,
            &schema.special_tokens.mask_token,
        ] {
            for word in split_words(special) {
                words.insert(word);
            }
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.into_iter().filter(|w| !RESERVED.contains(&w.as_str())));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    /// Rebuilds the word index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_words(text)
            .into_iter()
            .map(|w| self.index.get(&w).copied().unwrap_or(UNK))
            .collect()
    }

    /// Joins tokens with spaces, attaching "." to the preceding word so the
    /// output matches the record-sequence clause format.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == PAD || id == BOS || id == EOS {
                continue;
            }
            let word = &self.tokens[id];
            if word == "." {
                out.push('.');
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(word);
            }
        }
        out
    }
}

/// Whitespace split with trailing periods separated ("arrived." becomes
/// "arrived", ".").
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for token in text.split_whitespace() {
        if token.len() > 1 && token.ends_with('.') {
            out.push(token[..token.len() - 1].to_string());
            out.push(".".to_string());
        } else {
            out.push(token.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic;
    use crate::schema::{EventSchema, EventTypeDef};

    fn corpus() -> Corpus {
        let schema = EventSchema::new(vec![
            EventTypeDef::new("Travel", &["Origin", "Destination"]),
            EventTypeDef::new("Meet", &["Entity"]),
        ])
        .unwrap();
        generate_synthetic(&schema, 40, 3)
    }

    #[test]
    fn splits_trailing_periods() {
        assert_eq!(
            split_words("Event trigger is arrived. Origin is None."),
            ["Event", "trigger", "is", "arrived", ".", "Origin", "is", "None", "."]
        );
    }

    #[test]
    fn encode_decode_round_trips_clause_text() {
        let corpus = corpus();
        let vocab = Vocab::build(&corpus);
        // Build a clause from words guaranteed to be in the corpus.
        let bearing = corpus
            .examples
            .iter()
            .find(|e| e.records.iter().any(|r| !r.arguments.is_empty()))
            .unwrap();
        let record = bearing.records.iter().find(|r| !r.arguments.is_empty()).unwrap();
        let text = format!(
            "Event trigger is {}. {} is {}. Origin is None.",
            record.trigger.text, record.arguments[0].role, record.arguments[0].span.text
        );
        let ids = vocab.encode(&text);
        assert!(!ids.contains(&UNK), "all clause words must be in vocab: {text}");
        assert_eq!(vocab.decode(&ids), text);
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let vocab = Vocab::build(&corpus());
        let ids = vocab.encode("zzz-unseen-word");
        assert_eq!(ids, vec![UNK]);
    }

    #[test]
    fn special_tokens_present() {
        let vocab = Vocab::build(&corpus());
        for word in ["<SEP>", "<Mask>", "None", "&", ".", "Event", "trigger"] {
            assert!(!vocab.encode(word).contains(&UNK), "missing {word}");
        }
    }
}
