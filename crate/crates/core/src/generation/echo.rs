//! Oracle backend for plumbing tests: answers every (sentence, event type)
//! query with the gold linearization from the corpus it was built over, and
//! the all-pad pseudo-record for anything unannotated. End-to-end extraction
//! through this backend must reproduce the gold records exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::generation::{ComposedInput, EngineError, Seq2SeqBackend, TrainingExample};
use crate::record_codec::linearize;
use crate::schema::EventSchema;

#[derive(Serialize, Deserialize)]
pub struct EchoBackend {
    schema: EventSchema,
    /// (sentence text, event type) -> gold record sequence.
    table: BTreeMap<(String, String), String>,
}

impl EchoBackend {
    pub fn from_corpus(corpus: &Corpus) -> Result<Self, EngineError> {
        let mut table = BTreeMap::new();
        for example in &corpus.examples {
            let sentence = example.tokens.join(" ");
            for ty in example.bearing_types(&corpus.schema) {
                let records: Vec<_> = example.records_of(ty).cloned().collect();
                let seq = linearize(ty, &records, &corpus.schema)?;
                table
                    .entry((sentence.clone(), ty.to_string()))
                    .or_insert(seq.text);
            }
        }
        Ok(Self {
            schema: corpus.schema.clone(),
            table,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let raw = fs::read(path).map_err(|source| EngineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        bincode::deserialize(&raw)
            .map_err(|e| EngineError::Backend(format!("corrupt echo checkpoint: {e}")))
    }

    fn all_pad(&self, event_type: &str) -> String {
        linearize(event_type, &[], &self.schema)
            .map(|seq| seq.text)
            .unwrap_or_else(|_| {
                format!("Event trigger is {}.", self.schema.special_tokens.pad_word)
            })
    }
}

/// The event type named in a schema-based prompt.
pub fn event_type_from_prompt(prompt_text: &str) -> Option<&str> {
    let rest = prompt_text.strip_prefix("Event type is ")?;
    let end = rest.find(". ")?;
    Some(&rest[..end])
}

impl Seq2SeqBackend for EchoBackend {
    fn kind(&self) -> &'static str {
        "echo"
    }

    fn train_step(&mut self, _batch: &[TrainingExample], _lr: f32) -> Result<f32, EngineError> {
        Ok(0.0)
    }

    fn generate(&self, input: &ComposedInput, _max_length: usize) -> Result<String, EngineError> {
        let sentence = input.sentence_text().to_string();
        let Some(event_type) = event_type_from_prompt(input.prompt_text()) else {
            return Ok(String::new());
        };
        Ok(self
            .table
            .get(&(sentence, event_type.to_string()))
            .cloned()
            .unwrap_or_else(|| self.all_pad(event_type)))
    }

    fn parameters_fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for ((sentence, ty), target) in &self.table {
            hasher.update(sentence.as_bytes());
            hasher.update([0u8]);
            hasher.update(ty.as_bytes());
            hasher.update([0u8]);
            hasher.update(target.as_bytes());
            hasher.update([1u8]);
        }
        hex::encode(hasher.finalize())
    }

    fn save_model(&self, path: &Path) -> Result<(), EngineError> {
        let raw = bincode::serialize(self)
            .map_err(|e| EngineError::Backend(format!("serialize echo checkpoint: {e}")))?;
        fs::write(path, raw).map_err(|source| EngineError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
