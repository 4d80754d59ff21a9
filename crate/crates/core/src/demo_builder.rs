//! Demonstration construction: selecting a training example per event type
//! (rich-role, rich-context, or similarity retrieval), rendering it as a
//! demonstration, and the perturbation/dropping transforms used for
//! robustness studies.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedExample, Corpus};
use crate::record_codec::linearize;
use crate::schema::EventSchema;

/// A solved example rendered for one event type: the source sentence
/// (context) plus the linearization of that type's records (annotation).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub event_type: String,
    pub context_tokens: Vec<String>,
    pub annotation_text: String,
    pub source_id: String,
}

impl Demonstration {
    /// The empty demonstration used when a type has no training example or
    /// when demonstrations are dropped.
    pub fn empty(event_type: impl Into<String>) -> Self {
        Self {
            event_type: event_type.into(),
            context_tokens: Vec::new(),
            annotation_text: String::new(),
            source_id: String::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.context_tokens.is_empty() && self.annotation_text.is_empty()
    }

    /// Context and annotation joined by a single space.
    pub fn rendered_text(&self) -> String {
        let context = self.context_tokens.join(" ");
        match (context.is_empty(), self.annotation_text.is_empty()) {
            (true, true) => String::new(),
            (true, false) => self.annotation_text.clone(),
            (false, true) => context,
            (false, false) => format!("{context} {}", self.annotation_text),
        }
    }
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("example '{example}' bears no record of event type '{event_type}'")]
    MissingEventType { example: String, event_type: String },
    #[error("embedder adapter failure: {0}")]
    Embedder(String),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Maps a token sequence to a fixed-length vector. Implementations must be
/// deterministic per input and keep the vector length constant.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, tokens: &[String]) -> Vec<f32>;

    fn embed_batch(&self, items: &[Vec<String>]) -> Vec<Vec<f32>> {
        items.iter().map(|t| self.embed(t)).collect()
    }
}

/// Default embedder: a hashed bag-of-tokens vector. Needs no external model
/// and is exactly reproducible across runs and platforms.
#[derive(Debug, Clone)]
pub struct HashedBagEmbedder {
    dim: usize,
}

impl HashedBagEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        Self { dim }
    }
}

impl Default for HashedBagEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl Embedder for HashedBagEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String]) -> Vec<f32> {
        let mut v = vec![0.0f32; self.dim];
        for token in tokens {
            let bucket = (fnv1a(token.as_bytes()) % self.dim as u64) as usize;
            v[bucket] += 1.0;
        }
        v
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Cosine similarity in f64; zero-norm vectors compare as -1.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += *x as f64 * *y as f64;
        na += *x as f64 * *x as f64;
        nb += *y as f64 * *y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return -1.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Configuration for an external embedding adapter: a local program invoked
/// per batch with a JSON request on stdin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedderAdapterConfig {
    pub command: PathBuf,
    pub dim: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_batch_size() -> usize {
    32
}

/// Embedder backed by an external command. Each batch is one process
/// invocation: `{"texts": [...]}` on stdin, `{"embeddings": [[...], ...]}`
/// on stdout. Failures degrade to zero vectors (similarity -1) and are
/// counted, so retrieval stays total.
pub struct CommandEmbedder {
    config: EmbedderAdapterConfig,
    failures: AtomicUsize,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
}

impl CommandEmbedder {
    /// Probes the adapter with an empty batch so configuration errors
    /// surface at construction rather than mid-retrieval.
    pub fn new(config: EmbedderAdapterConfig) -> Result<Self, DemoError> {
        let embedder = Self {
            config,
            failures: AtomicUsize::new(0),
        };
        embedder
            .run_batch(&[])
            .map_err(|e| DemoError::Embedder(format!("adapter probe failed: {e}")))?;
        Ok(embedder)
    }

    pub fn failure_count(&self) -> usize {
        self.failures.load(Ordering::Relaxed)
    }

    fn run_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, String> {
        let mut child = Command::new(&self.config.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("spawn {}: {e}", self.config.command.display()))?;
        let request = EmbedRequest {
            texts: texts.iter().map(String::as_str).collect(),
        };
        let payload = serde_json::to_vec(&request).expect("serializable");
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(&payload)
            .map_err(|e| format!("write request: {e}"))?;
        let output = child
            .wait_with_output()
            .map_err(|e| format!("wait: {e}"))?;
        if !output.status.success() {
            return Err(format!("adapter exited with {}", output.status));
        }
        let response: EmbedResponse =
            serde_json::from_slice(&output.stdout).map_err(|e| format!("bad response: {e}"))?;
        if response.embeddings.len() != texts.len()
            || response.embeddings.iter().any(|v| v.len() != self.config.dim)
        {
            return Err("adapter returned wrong shape".to_string());
        }
        Ok(response.embeddings)
    }
}

impl Embedder for CommandEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, tokens: &[String]) -> Vec<f32> {
        self.embed_batch(std::slice::from_ref(&tokens.to_vec()))
            .pop()
            .unwrap_or_else(|| vec![0.0; self.config.dim])
    }

    fn embed_batch(&self, items: &[Vec<String>]) -> Vec<Vec<f32>> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.config.batch_size.max(1)) {
            let texts: Vec<String> = chunk.iter().map(|t| t.join(" ")).collect();
            match self.run_batch(&texts) {
                Ok(embeddings) => out.extend(embeddings),
                Err(_) => {
                    self.failures.fetch_add(1, Ordering::Relaxed);
                    out.extend(chunk.iter().map(|_| vec![0.0; self.config.dim]));
                }
            }
        }
        out
    }
}

/// Picks the example whose records of `event_type` fill the most distinct
/// roles; ties go to the longer sentence, then to corpus order.
pub fn select_rich_role<'a>(corpus: &'a Corpus, event_type: &str) -> Option<&'a AnnotatedExample> {
    let mut best: Option<(&AnnotatedExample, (usize, usize))> = None;
    for example in &corpus.examples {
        if !example.bears(event_type) {
            continue;
        }
        let key = (distinct_roles(example, event_type), example.tokens.len());
        match &best {
            Some((_, best_key)) if key <= *best_key => {}
            _ => best = Some((example, key)),
        }
    }
    best.map(|(e, _)| e)
}

/// Picks the longest bearing sentence; ties go to the example filling more
/// distinct roles, then to corpus order.
pub fn select_rich_context<'a>(
    corpus: &'a Corpus,
    event_type: &str,
) -> Option<&'a AnnotatedExample> {
    let mut best: Option<(&AnnotatedExample, (usize, usize))> = None;
    for example in &corpus.examples {
        if !example.bears(event_type) {
            continue;
        }
        let key = (example.tokens.len(), distinct_roles(example, event_type));
        match &best {
            Some((_, best_key)) if key <= *best_key => {}
            _ => best = Some((example, key)),
        }
    }
    best.map(|(e, _)| e)
}

fn distinct_roles(example: &AnnotatedExample, event_type: &str) -> usize {
    let mut roles = HashSet::new();
    for record in example.records_of(event_type) {
        for arg in &record.arguments {
            roles.insert(arg.role.as_str());
        }
    }
    roles.len()
}

/// Returns the bearing example most similar to the query under the
/// embedder's cosine similarity; ties go to corpus order. A candidate whose
/// id equals `exclude_id` is never returned.
pub fn retrieve_similar<'a>(
    corpus: &'a Corpus,
    event_type: &str,
    query_tokens: &[String],
    exclude_id: Option<&str>,
    embedder: &dyn Embedder,
) -> Option<&'a AnnotatedExample> {
    let query = embedder.embed(query_tokens);
    let mut best: Option<(&AnnotatedExample, f64)> = None;
    for example in &corpus.examples {
        if !example.bears(event_type) || Some(example.id.as_str()) == exclude_id {
            continue;
        }
        let sim = cosine_similarity(&query, &embedder.embed(&example.tokens));
        match &best {
            Some((_, best_sim)) if sim <= *best_sim => {}
            _ => best = Some((example, sim)),
        }
    }
    best.map(|(e, _)| e)
}

/// Renders `example` as a demonstration for `event_type`: the annotation is
/// the linearization of that type's records only.
pub fn build_demonstration(
    example: &AnnotatedExample,
    event_type: &str,
    schema: &EventSchema,
) -> Result<Demonstration, DemoError> {
    let records: Vec<_> = example.records_of(event_type).cloned().collect();
    if records.is_empty() {
        return Err(DemoError::MissingEventType {
            example: example.id.clone(),
            event_type: event_type.to_string(),
        });
    }
    let seq = linearize(event_type, &records, schema).map_err(|e| DemoError::Embedder(e.to_string()))?;
    Ok(Demonstration {
        event_type: event_type.to_string(),
        context_tokens: example.tokens.clone(),
        annotation_text: seq.text,
        source_id: example.id.clone(),
    })
}

/// The seeded choice of which of `n` positions a robustness transform
/// touches: exactly `round(fraction * n)` of them.
pub(crate) fn select_positions(n: usize, fraction: f64, seed: u64) -> HashSet<usize> {
    assert!((0.0..=1.0).contains(&fraction), "fraction must lie in [0, 1]");
    let count = ((fraction * n as f64).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    index_sample(&mut rng, n, count).into_iter().collect()
}

/// Replaces, in `round(fraction * N)` seeded demos, every trigger and
/// argument string of the annotation with a random 1-3 token span drawn from
/// the demo's own context. Clause structure is preserved.
pub fn perturb_demonstrations(
    demos: &[Demonstration],
    fraction: f64,
    seed: u64,
    schema: &EventSchema,
) -> Vec<Demonstration> {
    let chosen = select_positions(demos.len(), fraction, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    demos
        .iter()
        .enumerate()
        .map(|(i, demo)| {
            if chosen.contains(&i) {
                perturb_one(demo, schema, &mut rng)
            } else {
                demo.clone()
            }
        })
        .collect()
}

fn perturb_one(demo: &Demonstration, schema: &EventSchema, rng: &mut ChaCha8Rng) -> Demonstration {
    if demo.context_tokens.is_empty() || demo.annotation_text.is_empty() {
        return demo.clone();
    }
    let pad = schema.special_tokens.pad_word.as_str();
    let joiner = format!(" {} ", schema.special_tokens.arg_joiner);

    let mut clauses: Vec<String> = Vec::new();
    for raw_clause in split_annotation_clauses(&demo.annotation_text) {
        let clause = raw_clause.trim();
        let Some(split_at) = clause.find(" is ") else {
            clauses.push(clause.to_string());
            continue;
        };
        let head = &clause[..split_at];
        let value = &clause[split_at + 4..];
        let new_value = value
            .split(&joiner)
            .map(|part| {
                let part = part.trim();
                if part == pad || part.is_empty() {
                    part.to_string()
                } else {
                    random_span(&demo.context_tokens, rng)
                }
            })
            .collect::<Vec<_>>()
            .join(&joiner);
        clauses.push(format!("{head} is {new_value}"));
    }
    Demonstration {
        annotation_text: clauses
            .iter()
            .map(|c| format!("{c}."))
            .collect::<Vec<_>>()
            .join(" "),
        ..demo.clone()
    }
}

fn split_annotation_clauses(text: &str) -> Vec<&str> {
    let mut clauses: Vec<&str> = text.split(". ").collect();
    if let Some(last) = clauses.pop() {
        clauses.push(last.strip_suffix('.').unwrap_or(last));
    }
    clauses
}

fn random_span(context: &[String], rng: &mut ChaCha8Rng) -> String {
    let max_len = 3usize.min(context.len());
    let len = rng.gen_range(1..=max_len);
    let start = rng.gen_range(0..=context.len() - len);
    context[start..start + len].join(" ")
}

/// Replaces `round(fraction * N)` seeded positions with the empty
/// demonstration; all other positions are returned unchanged.
pub fn drop_demonstrations(demos: &[Demonstration], fraction: f64, seed: u64) -> Vec<Demonstration> {
    let chosen = select_positions(demos.len(), fraction, seed);
    demos
        .iter()
        .enumerate()
        .map(|(i, demo)| {
            if chosen.contains(&i) {
                Demonstration::empty(demo.event_type.clone())
            } else {
                demo.clone()
            }
        })
        .collect()
}

/// Writes demonstrations as JSONL for inspection.
pub fn dump_demonstrations(demos: &[Demonstration], path: impl AsRef<Path>) -> Result<(), DemoError> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|source| DemoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for demo in demos {
        let line = serde_json::json!({
            "event_type": demo.event_type,
            "source_id": demo.source_id,
            "text": demo.rendered_text(),
        });
        writeln!(file, "{line}").map_err(|source| DemoError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// The three demonstration selection strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemoStrategy {
    RichRole,
    RichContext,
    Similar,
}

impl std::str::FromStr for DemoStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rich-role" | "rich_role" => Ok(Self::RichRole),
            "rich-context" | "rich_context" => Ok(Self::RichContext),
            "similar" => Ok(Self::Similar),
            other => Err(format!(
                "unknown strategy '{other}' (expected rich-role, rich-context, or similar)"
            )),
        }
    }
}

impl std::fmt::Display for DemoStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::RichRole => "rich-role",
            Self::RichContext => "rich-context",
            Self::Similar => "similar",
        };
        write!(f, "{s}")
    }
}

/// How a robustness transform is wired into a provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustnessMode {
    Perturb,
    Drop,
}

#[derive(Debug, Clone)]
struct TypeTransform {
    mode: RobustnessMode,
    seed: u64,
    affected: HashSet<usize>,
}

/// Serves the demonstration for a (type, query) pair under one strategy.
///
/// Demo-oriented strategies (rich-role, rich-context) are computed once per
/// corpus and cached; similarity retrieval runs per query against
/// precomputed candidate embeddings. Types without a bearing example fall
/// back to the empty demonstration and are listed in `warnings`.
pub struct DemoProvider {
    schema: EventSchema,
    strategy: DemoStrategy,
    cached: BTreeMap<String, Demonstration>,
    similar: Option<SimilarIndex>,
    transform: Option<TypeTransform>,
    warnings: Vec<String>,
}

struct SimilarIndex {
    corpus: Corpus,
    embeddings: Vec<Vec<f32>>,
    embedder: Arc<dyn Embedder>,
}

impl DemoProvider {
    pub fn new(corpus: &Corpus, strategy: DemoStrategy) -> Result<Self, DemoError> {
        Self::with_embedder(corpus, strategy, Arc::new(HashedBagEmbedder::default()))
    }

    /// A provider that always serves the empty demonstration, for the
    /// no-demonstration ablation.
    pub fn disabled(schema: &EventSchema) -> Self {
        let cached = schema
            .event_types
            .iter()
            .map(|d| (d.name.clone(), Demonstration::empty(d.name.clone())))
            .collect();
        Self {
            schema: schema.clone(),
            strategy: DemoStrategy::RichRole,
            cached,
            similar: None,
            transform: None,
            warnings: Vec::new(),
        }
    }

    pub fn with_embedder(
        corpus: &Corpus,
        strategy: DemoStrategy,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, DemoError> {
        let schema = corpus.schema.clone();
        let mut warnings = Vec::new();
        let mut cached = BTreeMap::new();
        let mut similar = None;
        match strategy {
            DemoStrategy::RichRole | DemoStrategy::RichContext => {
                for def in &schema.event_types {
                    let pick = match strategy {
                        DemoStrategy::RichRole => select_rich_role(corpus, &def.name),
                        _ => select_rich_context(corpus, &def.name),
                    };
                    match pick {
                        Some(example) => {
                            cached.insert(
                                def.name.clone(),
                                build_demonstration(example, &def.name, &schema)?,
                            );
                        }
                        None => {
                            warnings.push(format!(
                                "no training example bears event type '{}'; using empty demonstration",
                                def.name
                            ));
                            cached.insert(def.name.clone(), Demonstration::empty(def.name.clone()));
                        }
                    }
                }
            }
            DemoStrategy::Similar => {
                for def in &schema.event_types {
                    if !corpus.examples.iter().any(|e| e.bears(&def.name)) {
                        warnings.push(format!(
                            "no training example bears event type '{}'; using empty demonstration",
                            def.name
                        ));
                    }
                }
                let token_lists: Vec<Vec<String>> =
                    corpus.examples.iter().map(|e| e.tokens.clone()).collect();
                let embeddings = embedder.embed_batch(&token_lists);
                similar = Some(SimilarIndex {
                    corpus: corpus.clone(),
                    embeddings,
                    embedder,
                });
            }
        }
        Ok(Self {
            schema,
            strategy,
            cached,
            similar,
            transform: None,
            warnings,
        })
    }

    pub fn strategy(&self) -> DemoStrategy {
        self.strategy
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// The cached per-type demonstrations in schema order (empty for the
    /// similarity strategy, whose demos depend on the query).
    pub fn cached_demos(&self) -> Vec<Demonstration> {
        self.schema
            .event_types
            .iter()
            .filter_map(|d| self.cached.get(&d.name).cloned())
            .collect()
    }

    /// Applies a robustness transform. For cached strategies the per-type
    /// demo list (schema order) is transformed once, exactly like the list
    /// operations. For similarity retrieval the same seeded position choice
    /// marks whole event types, and every demo retrieved for a marked type
    /// is transformed on the way out.
    pub fn apply_robustness(&mut self, mode: RobustnessMode, fraction: f64, seed: u64) {
        match self.strategy {
            DemoStrategy::RichRole | DemoStrategy::RichContext => {
                let demos = self.cached_demos();
                let transformed = match mode {
                    RobustnessMode::Perturb => {
                        perturb_demonstrations(&demos, fraction, seed, &self.schema)
                    }
                    RobustnessMode::Drop => drop_demonstrations(&demos, fraction, seed),
                };
                for demo in transformed {
                    self.cached.insert(demo.event_type.clone(), demo);
                }
            }
            DemoStrategy::Similar => {
                self.transform = Some(TypeTransform {
                    mode,
                    seed,
                    affected: select_positions(self.schema.len(), fraction, seed),
                });
            }
        }
    }

    /// The demonstration for `event_type` given the query sentence.
    /// `exclude_id` prevents label leakage when the query itself is a
    /// training example.
    pub fn demo_for(
        &self,
        event_type: &str,
        query_tokens: &[String],
        exclude_id: Option<&str>,
    ) -> Demonstration {
        match self.strategy {
            DemoStrategy::RichRole | DemoStrategy::RichContext => self
                .cached
                .get(event_type)
                .cloned()
                .unwrap_or_else(|| Demonstration::empty(event_type)),
            DemoStrategy::Similar => {
                let index = self.similar.as_ref().expect("similar index built");
                let demo = self
                    .best_similar(index, event_type, query_tokens, exclude_id)
                    .unwrap_or_else(|| Demonstration::empty(event_type));
                self.apply_type_transform(event_type, demo)
            }
        }
    }

    fn best_similar(
        &self,
        index: &SimilarIndex,
        event_type: &str,
        query_tokens: &[String],
        exclude_id: Option<&str>,
    ) -> Option<Demonstration> {
        let query = index.embedder.embed(query_tokens);
        let mut best: Option<(usize, f64)> = None;
        for (i, example) in index.corpus.examples.iter().enumerate() {
            if !example.bears(event_type) || Some(example.id.as_str()) == exclude_id {
                continue;
            }
            let sim = cosine_similarity(&query, &index.embeddings[i]);
            match &best {
                Some((_, best_sim)) if sim <= *best_sim => {}
                _ => best = Some((i, sim)),
            }
        }
        best.map(|(i, _)| {
            build_demonstration(&index.corpus.examples[i], event_type, &self.schema)
                .expect("bearing example")
        })
    }

    fn apply_type_transform(&self, event_type: &str, demo: Demonstration) -> Demonstration {
        let Some(transform) = &self.transform else {
            return demo;
        };
        let Some(type_index) = self.schema.type_index(event_type) else {
            return demo;
        };
        if !transform.affected.contains(&type_index) {
            return demo;
        }
        match transform.mode {
            RobustnessMode::Drop => Demonstration::empty(event_type),
            RobustnessMode::Perturb => {
                let seed = transform.seed.wrapping_add(type_index as u64 + 1);
                perturb_demonstrations(std::slice::from_ref(&demo), 1.0, seed, &self.schema)
                    .pop()
                    .expect("one demo in, one out")
            }
        }
    }
}
