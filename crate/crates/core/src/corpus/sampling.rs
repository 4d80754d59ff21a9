//! Low-resource samplers and the domain-adaptation split builder. All
//! sampling is a pure function of (corpus, parameters, seed); outputs keep
//! the original corpus order.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample as index_sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedExample, Corpus, EventRecord};
use crate::schema::EventSchema;

/// Result of [`sample_k_shot`]: the sampled corpus, the per-type picks
/// before deduplication, and the event types that had no bearing sentence
/// at all.
#[derive(Debug, Clone)]
pub struct KShotSample {
    pub corpus: Corpus,
    pub per_type: BTreeMap<String, Vec<String>>,
    pub empty_types: Vec<String>,
}

/// For each event type, samples up to `k` sentences bearing that type
/// (without replacement, seeded), then unions the picks by sentence id.
/// A sentence may satisfy the quota of several types at once.
pub fn sample_k_shot(corpus: &Corpus, k: usize, seed: u64) -> KShotSample {
    assert!(k >= 1, "k-shot sampling requires k >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected: HashSet<String> = HashSet::new();
    let mut per_type = BTreeMap::new();
    let mut empty_types = Vec::new();
    for def in &corpus.schema.event_types {
        let bearing: Vec<&AnnotatedExample> = corpus
            .examples
            .iter()
            .filter(|e| e.bears(&def.name))
            .collect();
        if bearing.is_empty() {
            empty_types.push(def.name.clone());
            continue;
        }
        let take = k.min(bearing.len());
        let mut picks: Vec<String> = index_sample(&mut rng, bearing.len(), take)
            .into_iter()
            .map(|idx| bearing[idx].id.clone())
            .collect();
        picks.sort();
        selected.extend(picks.iter().cloned());
        per_type.insert(def.name.clone(), picks);
    }
    KShotSample {
        corpus: corpus.subset_by_ids(&selected),
        per_type,
        empty_types,
    }
}

/// Which population a ratio split draws from. The full set is the default;
/// the event-bearing subset is the alternative reading of data-limited
/// sampling protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioPopulation {
    Full,
    EventBearing,
}

/// Uniformly samples `ceil(ratio * population)` sentences without
/// replacement from the full corpus.
pub fn sample_ratio(corpus: &Corpus, ratio: f64, seed: u64) -> Corpus {
    sample_ratio_with(corpus, ratio, seed, RatioPopulation::Full)
}

pub fn sample_ratio_with(
    corpus: &Corpus,
    ratio: f64,
    seed: u64,
    population: RatioPopulation,
) -> Corpus {
    assert!(
        ratio > 0.0 && ratio <= 1.0,
        "ratio must lie in (0, 1], got {ratio}"
    );
    let pool: Vec<&AnnotatedExample> = match population {
        RatioPopulation::Full => corpus.examples.iter().collect(),
        RatioPopulation::EventBearing => corpus
            .examples
            .iter()
            .filter(|e| !e.records.is_empty())
            .collect(),
    };
    let count = (ratio * pool.len() as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: HashSet<String> = index_sample(&mut rng, pool.len(), count.min(pool.len()))
        .into_iter()
        .map(|i| pool[i].id.clone())
        .collect();
    corpus.subset_by_ids(&ids)
}

/// Source/target corpora and schemas produced by [`build_domain_split`].
#[derive(Debug, Clone)]
pub struct DomainSplit {
    pub src_train: Corpus,
    pub src_eval: Corpus,
    pub tgt_train: Corpus,
    pub tgt_eval: Corpus,
    pub src_schema: EventSchema,
    pub tgt_schema: EventSchema,
}

/// Splits the schema at the `top_n` most frequent event types (record
/// frequency; ties broken by schema order) and partitions sentences into
/// source and target sides with annotations filtered to each side's schema.
/// A sentence bearing both sides appears in both, each time with only the
/// matching annotations. Each side is then split train/eval by `train_frac`.
pub fn build_domain_split(
    corpus: &Corpus,
    top_n: usize,
    train_frac: f64,
    seed: u64,
) -> DomainSplit {
    assert!(
        top_n >= 1 && top_n < corpus.schema.len(),
        "top_n must lie in [1, number of schema types)"
    );
    assert!(
        train_frac > 0.0 && train_frac < 1.0,
        "train_frac must lie in (0, 1), got {train_frac}"
    );

    let mut freq = vec![0usize; corpus.schema.len()];
    for example in &corpus.examples {
        for record in &example.records {
            if let Some(idx) = corpus.schema.type_index(&record.event_type) {
                freq[idx] += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..corpus.schema.len()).collect();
    order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    let src_indices: HashSet<usize> = order[..top_n].iter().copied().collect();

    let sub_schema = |keep: &dyn Fn(usize) -> bool| EventSchema {
        event_types: corpus
            .schema
            .event_types
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, d)| d.clone())
            .collect(),
        special_tokens: corpus.schema.special_tokens.clone(),
    };
    let src_schema = sub_schema(&|i| src_indices.contains(&i));
    let tgt_schema = sub_schema(&|i| !src_indices.contains(&i));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (src_train, src_eval) = side_split(corpus, &src_schema, train_frac, &mut rng);
    let (tgt_train, tgt_eval) = side_split(corpus, &tgt_schema, train_frac, &mut rng);

    DomainSplit {
        src_train,
        src_eval,
        tgt_train,
        tgt_eval,
        src_schema,
        tgt_schema,
    }
}

fn side_split(
    corpus: &Corpus,
    side_schema: &EventSchema,
    train_frac: f64,
    rng: &mut ChaCha8Rng,
) -> (Corpus, Corpus) {
    let side_examples: Vec<AnnotatedExample> = corpus
        .examples
        .iter()
        .filter_map(|example| {
            let records: Vec<EventRecord> = example
                .records
                .iter()
                .filter(|r| side_schema.type_index(&r.event_type).is_some())
                .cloned()
                .collect();
            if records.is_empty() {
                None
            } else {
                Some(AnnotatedExample {
                    id: example.id.clone(),
                    tokens: example.tokens.clone(),
                    records,
                })
            }
        })
        .collect();

    let mut indices: Vec<usize> = (0..side_examples.len()).collect();
    indices.shuffle(rng);
    let train_count = (train_frac * side_examples.len() as f64).round() as usize;
    let train_set: HashSet<usize> = indices[..train_count.min(indices.len())].iter().copied().collect();

    let pick = |keep_train: bool| Corpus {
        schema: side_schema.clone(),
        examples: side_examples
            .iter()
            .enumerate()
            .filter(|(i, _)| train_set.contains(i) == keep_train)
            .map(|(_, e)| e.clone())
            .collect(),
    };
    (pick(true), pick(false))
}

/// Reproducibility record for a split: the sampled ids per part plus the
/// parameters and seed the split was built from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub kind: String,
    pub seed: u64,
    pub params: serde_json::Value,
    pub parts: BTreeMap<String, Vec<String>>,
}

impl SplitManifest {
    pub fn new(kind: &str, seed: u64, params: serde_json::Value) -> Self {
        Self {
            kind: kind.to_string(),
            seed,
            params,
            parts: BTreeMap::new(),
        }
    }

    pub fn add_part(&mut self, name: &str, corpus: &Corpus) {
        self.parts.insert(
            name.to_string(),
            corpus.examples.iter().map(|e| e.id.clone()).collect(),
        );
    }
}
