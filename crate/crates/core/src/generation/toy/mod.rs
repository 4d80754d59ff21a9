//! The bundled trainable backend: a small transformer encoder-decoder
//! (2 encoder and 2 decoder layers, 4 heads, model dim 128, learned
//! positions, max sequence 256) sized to train on a CPU in minutes. The
//! vocabulary is built from the training corpus plus the schema's label and
//! special words.

mod net;
mod vocab;

pub use net::{DropCtx, ToyModel};
pub use vocab::{split_words, Vocab};

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::generation::{ComposedInput, EngineError, Seq2SeqBackend, TrainingExample};

use net::Adam;
use vocab::{BOS, EOS};

/// Architecture knobs. Defaults are the shipped toy size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_dim: usize,
    pub max_seq: usize,
    pub dropout: f32,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            ffn_dim: 256,
            max_seq: 256,
            dropout: 0.15,
        }
    }
}

impl ToyConfig {
    /// Scaled-down shape for fast unit tests.
    pub fn tiny() -> Self {
        Self {
            dim: 32,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            ffn_dim: 48,
            max_seq: 64,
            dropout: 0.0,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SavedToy {
    config: ToyConfig,
    vocab: Vocab,
    model: ToyModel,
}

/// Transformer backend trained from scratch. All math is sequential per
/// sequence and batch gradients are reduced in batch order, so training is
/// bit-reproducible for a fixed seed regardless of thread count.
pub struct ToyBackend {
    config: ToyConfig,
    vocab: Vocab,
    model: ToyModel,
    adam: Adam,
    grad_clip: f32,
    dropout_base: u64,
    step: u64,
}

impl ToyBackend {
    pub fn new(corpus: &Corpus, config: ToyConfig, seed: u64) -> Self {
        let vocab = Vocab::build(corpus);
        let model = ToyModel::new(
            vocab.len(),
            config.dim,
            config.heads,
            config.ffn_dim,
            config.max_seq,
            config.enc_layers,
            config.dec_layers,
            seed,
        );
        let adam = Adam::new(&model);
        Self {
            config,
            vocab,
            model,
            adam,
            grad_clip: 1.0,
            dropout_base: seed,
            step: 0,
        }
    }

    /// Reloads a checkpoint written by `save_model`. Optimizer moments are
    /// not part of the blob; continued training restarts them.
    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let raw = fs::read(path).map_err(|source| EngineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut saved: SavedToy = bincode::deserialize(&raw)
            .map_err(|e| EngineError::Backend(format!("corrupt toy checkpoint: {e}")))?;
        saved.vocab.rebuild_index();
        let adam = Adam::new(&saved.model);
        Ok(Self {
            config: saved.config,
            vocab: saved.vocab,
            model: saved.model,
            adam,
            grad_clip: 1.0,
            dropout_base: 0,
            step: 0,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    fn prepare(&self, example: &TrainingExample) -> PreparedItem {
        let mut src = self.vocab.encode(&example.input.text);
        src.truncate(self.config.max_seq);
        let mut tgt = self.vocab.encode(&example.target);
        tgt.truncate(self.config.max_seq - 1);
        let mut tgt_in = Vec::with_capacity(tgt.len() + 1);
        tgt_in.push(BOS);
        tgt_in.extend_from_slice(&tgt);
        let mut tgt_out = tgt;
        tgt_out.push(EOS);
        PreparedItem { src, tgt_in, tgt_out }
    }

    fn item_loss_grads(&self, item: &PreparedItem, drop_seed: u64) -> (f64, usize, ToyModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(drop_seed);
        let mut drop = DropCtx::train(self.config.dropout, &mut rng);
        let (memory, enc_cache) = self.model.encode(&item.src, &mut drop);
        let (logits, dec_cache) = self.model.decode(&memory, &item.src, &item.tgt_in, &mut drop);
        let (loss, dlogits) = nll_and_dlogits(&logits, &item.tgt_out);
        let mut grads = self.model.zeros_like();
        self.model.backward(
            &dlogits,
            &item.src,
            &item.tgt_in,
            &memory,
            &enc_cache,
            &dec_cache,
            &mut grads,
        );
        (loss, item.tgt_out.len(), grads)
    }

    fn item_loss(&self, item: &PreparedItem) -> (f64, usize) {
        let (memory, _) = self.model.encode(&item.src, &mut DropCtx::eval());
        let (logits, _) = self
            .model
            .decode(&memory, &item.src, &item.tgt_in, &mut DropCtx::eval());
        let (loss, _) = nll_and_dlogits(&logits, &item.tgt_out);
        (loss, item.tgt_out.len())
    }

    /// Mean per-token NLL of the batch without touching the parameters.
    pub fn eval_loss(&self, batch: &[TrainingExample]) -> Result<f32, EngineError> {
        if batch.is_empty() {
            return Err(EngineError::Backend("empty batch".into()));
        }
        let items: Vec<PreparedItem> = batch.iter().map(|e| self.prepare(e)).collect();
        let results: Vec<(f64, usize)> = items.par_iter().map(|i| self.item_loss(i)).collect();
        let (loss_sum, token_sum) = results
            .iter()
            .fold((0.0f64, 0usize), |(l, t), (ls, ts)| (l + ls, t + ts));
        Ok((loss_sum / token_sum.max(1) as f64) as f32)
    }
}

struct PreparedItem {
    src: Vec<usize>,
    tgt_in: Vec<usize>,
    tgt_out: Vec<usize>,
}

fn nll_and_dlogits(logits: &Array2<f32>, targets: &[usize]) -> (f64, Array2<f32>) {
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0f64;
    for (i, &target) in targets.iter().enumerate() {
        let row = logits.row(i);
        let max = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0f32;
        for &v in row {
            sum += (v - max).exp();
        }
        loss -= (row[target] - max - sum.ln()) as f64;
        for (j, &v) in row.iter().enumerate() {
            dlogits[[i, j]] = (v - max).exp() / sum;
        }
        dlogits[[i, target]] -= 1.0;
    }
    (loss, dlogits)
}

impl Seq2SeqBackend for ToyBackend {
    fn kind(&self) -> &'static str {
        "toy"
    }

    fn train_step(&mut self, batch: &[TrainingExample], lr: f32) -> Result<f32, EngineError> {
        if batch.is_empty() {
            return Err(EngineError::Backend("empty batch".into()));
        }
        let items: Vec<PreparedItem> = batch.iter().map(|e| self.prepare(e)).collect();
        // Per-item dropout seeds derive from the construction seed and the
        // step counter, so training is reproducible run to run. Per-item
        // passes are independent; the ordered collect plus the sequential
        // reduce below keep the result identical for any thread count.
        let step = self.step;
        let seed_for = |i: usize| -> u64 {
            self.dropout_base
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(step.wrapping_mul(0x517C_C1B7_2722_0A95))
                .wrapping_add(i as u64)
        };
        let results: Vec<(f64, usize, ToyModel)> = items
            .par_iter()
            .enumerate()
            .map(|(i, item)| self.item_loss_grads(item, seed_for(i)))
            .collect();
        self.step += 1;

        let mut grads = self.model.zeros_like();
        let mut loss_sum = 0.0f64;
        let mut token_sum = 0usize;
        for (loss, tokens, item_grads) in &results {
            loss_sum += loss;
            token_sum += tokens;
            grads.add_assign(item_grads);
        }
        let mean_loss = (loss_sum / token_sum.max(1) as f64) as f32;

        grads.scale(1.0 / token_sum.max(1) as f32);
        let norm = grads.global_norm();
        if norm > self.grad_clip {
            grads.scale(self.grad_clip / norm);
        }
        self.adam.step(&mut self.model, &grads, lr);
        Ok(mean_loss)
    }

    fn generate(&self, input: &ComposedInput, max_length: usize) -> Result<String, EngineError> {
        let mut src = self.vocab.encode(&input.text);
        src.truncate(self.config.max_seq);
        if src.is_empty() {
            return Ok(String::new());
        }
        let (memory, _) = self.model.encode(&src, &mut DropCtx::eval());
        let cap = max_length.min(self.config.max_seq - 1);
        let mut generated: Vec<usize> = Vec::new();
        let mut tgt_in = vec![BOS];
        for _ in 0..cap {
            let (logits, _) = self
                .model
                .decode(&memory, &src, &tgt_in, &mut DropCtx::eval());
            let last = logits.row(logits.nrows() - 1);
            let mut best = 0usize;
            let mut best_value = f32::NEG_INFINITY;
            for (j, &v) in last.iter().enumerate() {
                if v > best_value {
                    best_value = v;
                    best = j;
                }
            }
            if best == EOS {
                break;
            }
            generated.push(best);
            tgt_in.push(best);
        }
        Ok(self.vocab.decode(&generated))
    }

    fn parameters_fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        self.model.visit(&mut |a| {
            for &v in a.iter() {
                hasher.update(v.to_le_bytes());
            }
        });
        hex::encode(hasher.finalize())
    }

    fn save_model(&self, path: &Path) -> Result<(), EngineError> {
        let saved = SavedToy {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            model: self.model.clone(),
        };
        let raw = bincode::serialize(&saved)
            .map_err(|e| EngineError::Backend(format!("serialize toy checkpoint: {e}")))?;
        fs::write(path, raw).map_err(|source| EngineError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic;
    use crate::demo_builder::{DemoProvider, DemoStrategy};
    use crate::generation::{build_training_set, TrainingConfig};
    use crate::schema::{EventSchema, EventTypeDef};

    fn schema() -> EventSchema {
        EventSchema::new(vec![
            EventTypeDef::new("Travel", &["Origin", "Destination"]),
            EventTypeDef::new("Meet", &["Entity"]),
        ])
        .unwrap()
    }

    fn training_examples(n: usize, seed: u64) -> (Corpus, Vec<TrainingExample>) {
        let corpus = generate_synthetic(&schema(), n, seed);
        let demos = DemoProvider::new(&corpus, DemoStrategy::RichRole).unwrap();
        let config = TrainingConfig::default();
        let examples = build_training_set(&corpus, &demos, &config).unwrap();
        (corpus, examples)
    }

    #[test]
    fn train_step_is_bit_deterministic() {
        let (corpus, examples) = training_examples(20, 5);
        let batch: Vec<TrainingExample> = examples.iter().take(8).cloned().collect();
        let mut a = ToyBackend::new(&corpus, ToyConfig::tiny(), 7);
        let mut b = ToyBackend::new(&corpus, ToyConfig::tiny(), 7);
        assert_eq!(a.parameters_fingerprint(), b.parameters_fingerprint());
        for _ in 0..3 {
            let la = a.train_step(&batch, 1e-3).unwrap();
            let lb = b.train_step(&batch, 1e-3).unwrap();
            assert_eq!(la, lb);
        }
        assert_eq!(a.parameters_fingerprint(), b.parameters_fingerprint());
    }

    #[test]
    fn generate_is_deterministic_and_read_only() {
        let (corpus, examples) = training_examples(20, 5);
        let backend = ToyBackend::new(&corpus, ToyConfig::tiny(), 7);
        let before = backend.parameters_fingerprint();
        let g1 = backend.generate(&examples[0].input, 32).unwrap();
        let g2 = backend.generate(&examples[0].input, 32).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(backend.parameters_fingerprint(), before);
    }

    #[test]
    fn loss_matches_hand_computed_teacher_forcing_nll() {
        let (corpus, examples) = training_examples(20, 5);
        let backend = ToyBackend::new(&corpus, ToyConfig::tiny(), 7);
        let example = &examples[0];
        let reported = backend.eval_loss(std::slice::from_ref(example)).unwrap() as f64;

        // Recompute from raw logits with f64 softmax.
        let item = backend.prepare(example);
        let (memory, _) = backend.model.encode(&item.src, &mut DropCtx::eval());
        let (logits, _) =
            backend
                .model
                .decode(&memory, &item.src, &item.tgt_in, &mut DropCtx::eval());
        let mut manual = 0.0f64;
        for (i, &target) in item.tgt_out.iter().enumerate() {
            let row: Vec<f64> = logits.row(i).iter().map(|&v| v as f64).collect();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            manual -= row[target] - max - sum.ln();
        }
        manual /= item.tgt_out.len() as f64;
        assert!(
            (reported - manual).abs() < 1e-4,
            "reported {reported} vs manual {manual}"
        );
    }

    #[test]
    fn two_token_target_loss_by_hand() {
        let (corpus, _) = training_examples(10, 5);
        let backend = ToyBackend::new(&corpus, ToyConfig::tiny(), 3);
        // A target that tokenizes to exactly two words.
        let example = TrainingExample {
            input: ComposedInput {
                text: "<SEP> Kelly <SEP> Event type is Meet. Event trigger is <Mask>.".into(),
                segments: crate::generation::Segments {
                    demo: (0, 0),
                    sentence: (6, 11),
                    prompt: (18, 62),
                },
            },
            target: "Kelly Yoon".into(),
            polarity: crate::generation::Polarity::Positive,
            event_type: "Meet".into(),
            example_id: "t".into(),
        };
        let item = backend.prepare(&example);
        assert_eq!(item.tgt_out.len(), 3); // two words + EOS
        let reported = backend.eval_loss(&[example]).unwrap() as f64;
        let (memory, _) = backend.model.encode(&item.src, &mut DropCtx::eval());
        let (logits, _) =
            backend
                .model
                .decode(&memory, &item.src, &item.tgt_in, &mut DropCtx::eval());
        let mut manual = 0.0f64;
        for (i, &target) in item.tgt_out.iter().enumerate() {
            let row: Vec<f64> = logits.row(i).iter().map(|&v| v as f64).collect();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            manual -= row[target] - max - sum.ln();
        }
        manual /= 3.0;
        assert!((reported - manual).abs() < 1e-4);
    }

    #[test]
    fn short_training_reduces_loss() {
        let (corpus, examples) = training_examples(12, 5);
        let batch: Vec<TrainingExample> = examples.iter().take(6).cloned().collect();
        let mut backend = ToyBackend::new(&corpus, ToyConfig::tiny(), 7);
        let initial = backend.train_step(&batch, 3e-3).unwrap();
        let mut last = initial;
        for _ in 0..59 {
            last = backend.train_step(&batch, 3e-3).unwrap();
        }
        assert!(
            last < initial * 0.5,
            "loss did not halve: {initial} -> {last}"
        );
    }

    #[test]
    fn save_load_round_trip_preserves_parameters_and_output() {
        let (corpus, examples) = training_examples(15, 5);
        let mut backend = ToyBackend::new(&corpus, ToyConfig::tiny(), 7);
        let batch: Vec<TrainingExample> = examples.iter().take(4).cloned().collect();
        backend.train_step(&batch, 1e-3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        backend.save_model(&path).unwrap();
        let reloaded = ToyBackend::load(&path).unwrap();
        assert_eq!(backend.parameters_fingerprint(), reloaded.parameters_fingerprint());
        let g1 = backend.generate(&examples[0].input, 32).unwrap();
        let g2 = reloaded.generate(&examples[0].input, 32).unwrap();
        assert_eq!(g1, g2);
    }
}
