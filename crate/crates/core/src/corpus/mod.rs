//! Data model for annotated sentences and corpora: token-offset spans,
//! event records, JSONL ingestion, synthetic generation, and the
//! low-resource / domain-adaptation samplers.

mod sampling;
mod synth;

pub use sampling::{
    build_domain_split, sample_k_shot, sample_ratio, sample_ratio_with, DomainSplit, KShotSample,
    RatioPopulation, SplitManifest,
};
pub use synth::{generate_synthetic, generate_synthetic_with, SynthOptions};

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::EventSchema;

/// A token-offset span: `start` inclusive, `end` exclusive. `text` is always
/// the space-joined tokens of the range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl Span {
    /// Builds a span over `tokens[start..end]`, deriving the text.
    pub fn over(tokens: &[String], start: usize, end: usize) -> Result<Self, CorpusError> {
        if start >= end || end > tokens.len() {
            return Err(CorpusError::Validation(format!(
                "span {start}..{end} out of range for sentence of {} tokens",
                tokens.len()
            )));
        }
        Ok(Self {
            start,
            end,
            text: tokens[start..end].join(" "),
        })
    }
}

/// One argument: a role name and the span that fills it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Argument {
    pub role: String,
    pub span: Span,
}

/// One event record: a trigger span plus typed arguments. A role may repeat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_type: String,
    pub trigger: Span,
    pub arguments: Vec<Argument>,
}

/// A tokenized sentence with its gold event records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub id: String,
    pub tokens: Vec<String>,
    pub records: Vec<EventRecord>,
}

impl AnnotatedExample {
    pub fn records_of<'a>(&'a self, event_type: &'a str) -> impl Iterator<Item = &'a EventRecord> {
        self.records.iter().filter(move |r| r.event_type == event_type)
    }

    pub fn bears(&self, event_type: &str) -> bool {
        self.records.iter().any(|r| r.event_type == event_type)
    }

    /// Event types annotated on this sentence, in schema order.
    pub fn bearing_types<'a>(&self, schema: &'a EventSchema) -> Vec<&'a str> {
        schema
            .type_names()
            .filter(|t| self.bears(t))
            .collect()
    }
}

/// An ordered collection of annotated examples governed by one schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub schema: EventSchema,
    pub examples: Vec<AnnotatedExample>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: invalid JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("invalid corpus: {0}")]
    Validation(String),
}

// Wire format: spans carry offsets only; text is derived from the tokens.
#[derive(Serialize, Deserialize)]
struct WireSpan {
    start: usize,
    end: usize,
}

#[derive(Serialize, Deserialize)]
struct WireArgument {
    role: String,
    span: WireSpan,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    event_type: String,
    trigger: WireSpan,
    arguments: Vec<WireArgument>,
}

#[derive(Serialize, Deserialize)]
struct WireExample {
    id: String,
    tokens: Vec<String>,
    records: Vec<WireRecord>,
}

impl Corpus {
    pub fn new(schema: EventSchema, examples: Vec<AnnotatedExample>) -> Result<Self, CorpusError> {
        let corpus = Self { schema, examples };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn example_by_id(&self, id: &str) -> Option<&AnnotatedExample> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// Checks every invariant: unique ids, in-range spans with matching text,
    /// schema-known labels, and argument/trigger texts free of the joiner.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut ids = HashSet::new();
        for example in &self.examples {
            if !ids.insert(example.id.as_str()) {
                return Err(CorpusError::Validation(format!(
                    "duplicate example id '{}'",
                    example.id
                )));
            }
            for record in &example.records {
                validate_record(record, example, &self.schema)
                    .map_err(|msg| CorpusError::Validation(format!("example '{}': {msg}", example.id)))?;
            }
        }
        Ok(())
    }

    /// Reads one example per JSONL line, validating against `schema`.
    pub fn load_jsonl(path: impl AsRef<Path>, schema: &EventSchema) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let reader = BufReader::new(file);
        let mut examples = Vec::new();
        let mut ids = HashSet::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line_number = lineno + 1;
            let line = line.map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let wire: WireExample = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
                line: line_number,
                source,
            })?;
            let example = example_from_wire(wire, schema).map_err(|msg| CorpusError::Line {
                line: line_number,
                msg,
            })?;
            if !ids.insert(example.id.clone()) {
                return Err(CorpusError::Line {
                    line: line_number,
                    msg: format!("duplicate example id '{}'", example.id),
                });
            }
            examples.push(example);
        }
        Ok(Self {
            schema: schema.clone(),
            examples,
        })
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        for example in &self.examples {
            let line = serde_json::to_string(&wire_from_example(example)).expect("serializable");
            writeln!(file, "{line}").map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }

    /// A new corpus containing only the examples whose id is in `ids`,
    /// preserving corpus order.
    pub fn subset_by_ids(&self, ids: &HashSet<String>) -> Corpus {
        Corpus {
            schema: self.schema.clone(),
            examples: self
                .examples
                .iter()
                .filter(|e| ids.contains(&e.id))
                .cloned()
                .collect(),
        }
    }

    /// The corpus re-expressed against the label-blind schema: every event
    /// type and role name replaced by its deterministic placeholder. Tokens
    /// and spans are untouched.
    pub fn blinded(&self) -> Corpus {
        let blinded_schema = self.schema.blinded();
        let examples = self
            .examples
            .iter()
            .map(|example| AnnotatedExample {
                id: example.id.clone(),
                tokens: example.tokens.clone(),
                records: example
                    .records
                    .iter()
                    .map(|record| {
                        let ti = self
                            .schema
                            .type_index(&record.event_type)
                            .expect("validated corpus");
                        let roles = &self.schema.event_types[ti].roles;
                        EventRecord {
                            event_type: EventSchema::blind_type_name(ti),
                            trigger: record.trigger.clone(),
                            arguments: record
                                .arguments
                                .iter()
                                .map(|arg| {
                                    let ri = roles
                                        .iter()
                                        .position(|r| *r == arg.role)
                                        .expect("validated corpus");
                                    Argument {
                                        role: EventSchema::blind_role_name(ti, ri),
                                        span: arg.span.clone(),
                                    }
                                })
                                .collect(),
                        }
                    })
                    .collect(),
            })
            .collect();
        Corpus {
            schema: blinded_schema,
            examples,
        }
    }
}

fn validate_record(
    record: &EventRecord,
    example: &AnnotatedExample,
    schema: &EventSchema,
) -> Result<(), String> {
    let roles = schema
        .roles_of(&record.event_type)
        .map_err(|_| format!("unknown event type '{}'", record.event_type))?;
    validate_span(&record.trigger, &example.tokens)?;
    for arg in &record.arguments {
        if !roles.contains(&arg.role) {
            return Err(format!(
                "role '{}' not defined for event type '{}'",
                arg.role, record.event_type
            ));
        }
        validate_span(&arg.span, &example.tokens)?;
    }
    Ok(())
}

fn validate_span(span: &Span, tokens: &[String]) -> Result<(), String> {
    if span.start >= span.end || span.end > tokens.len() {
        return Err(format!(
            "span {}..{} out of range for sentence of {} tokens",
            span.start,
            span.end,
            tokens.len()
        ));
    }
    let expected = tokens[span.start..span.end].join(" ");
    if span.text != expected {
        return Err(format!(
            "span text '{}' does not match tokens '{expected}'",
            span.text
        ));
    }
    // The record grammar has no escape mechanism for the argument joiner.
    if span.text.contains(" & ") {
        return Err(format!(
            "span text '{}' contains the reserved joiner \" & \"",
            span.text
        ));
    }
    Ok(())
}

fn example_from_wire(wire: WireExample, schema: &EventSchema) -> Result<AnnotatedExample, String> {
    let tokens = wire.tokens;
    let mut records = Vec::with_capacity(wire.records.len());
    for rec in wire.records {
        let trigger = span_from_wire(&rec.trigger, &tokens)?;
        let mut arguments = Vec::with_capacity(rec.arguments.len());
        for arg in rec.arguments {
            arguments.push(Argument {
                role: arg.role,
                span: span_from_wire(&arg.span, &tokens)?,
            });
        }
        records.push(EventRecord {
            event_type: rec.event_type,
            trigger,
            arguments,
        });
    }
    let example = AnnotatedExample {
        id: wire.id,
        tokens,
        records,
    };
    for record in &example.records {
        validate_record(record, &example, schema)?;
    }
    Ok(example)
}

fn span_from_wire(wire: &WireSpan, tokens: &[String]) -> Result<Span, String> {
    if wire.start >= wire.end || wire.end > tokens.len() {
        return Err(format!(
            "span {}..{} out of range for sentence of {} tokens",
            wire.start,
            wire.end,
            tokens.len()
        ));
    }
    Ok(Span {
        start: wire.start,
        end: wire.end,
        text: tokens[wire.start..wire.end].join(" "),
    })
}

fn wire_from_example(example: &AnnotatedExample) -> WireExample {
    WireExample {
        id: example.id.clone(),
        tokens: example.tokens.clone(),
        records: example
            .records
            .iter()
            .map(|r| WireRecord {
                event_type: r.event_type.clone(),
                trigger: WireSpan {
                    start: r.trigger.start,
                    end: r.trigger.end,
                },
                arguments: r
                    .arguments
                    .iter()
                    .map(|a| WireArgument {
                        role: a.role.clone(),
                        span: WireSpan {
                            start: a.span.start,
                            end: a.span.end,
                        },
                    })
                    .collect(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::EventTypeDef;

    fn figure_schema() -> EventSchema {
        EventSchema::new(vec![
            EventTypeDef::new(
                "Transport",
                &["Artifact", "Origin", "Destination", "Vehicle"],
            ),
            EventTypeDef::new("Meet", &["Entity", "Place"]),
        ])
        .unwrap()
    }

    fn figure_line() -> &'static str {
        concat!(
            r#"{"id":"fig1","tokens":["Kelly","arrived","in","Beijing","before","the","brief","with","Yoon","in","Seoul"],"#,
            r#""records":[{"event_type":"Transport","trigger":{"start":1,"end":2},"arguments":["#,
            r#"{"role":"Artifact","span":{"start":0,"end":1}},"#,
            r#"{"role":"Origin","span":{"start":3,"end":4}},"#,
            r#"{"role":"Destination","span":{"start":10,"end":11}}]},"#,
            r#"{"event_type":"Meet","trigger":{"start":6,"end":7},"arguments":["#,
            r#"{"role":"Entity","span":{"start":0,"end":1}},"#,
            r#"{"role":"Entity","span":{"start":8,"end":9}}]}]}"#
        )
    }

    #[test]
    fn loads_figure_sentence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, format!("{}\n", figure_line())).unwrap();
        let corpus = Corpus::load_jsonl(&path, &figure_schema()).unwrap();
        assert_eq!(corpus.len(), 1);
        let example = &corpus.examples[0];
        assert_eq!(example.records.len(), 2);
        assert_eq!(example.records[0].trigger.text, "arrived");
        assert_eq!(example.records[1].arguments[1].span.text, "Yoon");
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "").unwrap();
        let corpus = Corpus::load_jsonl(&path, &figure_schema()).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn inverted_span_is_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            r#"{"id":"x","tokens":["a","b"],"records":[{"event_type":"Meet","trigger":{"start":1,"end":1},"arguments":[]}]}"#,
        )
        .unwrap();
        let err = Corpus::load_jsonl(&path, &figure_schema()).unwrap_err();
        match err {
            CorpusError::Line { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_role_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            r#"{"id":"x","tokens":["a","b"],"records":[{"event_type":"Meet","trigger":{"start":0,"end":1},"arguments":[{"role":"Pilot","span":{"start":1,"end":2}}]}]}"#,
        )
        .unwrap();
        assert!(matches!(
            Corpus::load_jsonl(&path, &figure_schema()),
            Err(CorpusError::Line { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let line = r#"{"id":"x","tokens":["a"],"records":[]}"#;
        std::fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        assert!(matches!(
            Corpus::load_jsonl(&path, &figure_schema()),
            Err(CorpusError::Line { line: 2, .. })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, format!("{}\n", figure_line())).unwrap();
        let schema = figure_schema();
        let corpus = Corpus::load_jsonl(&path, &schema).unwrap();
        let path2 = dir.path().join("c2.jsonl");
        corpus.save_jsonl(&path2).unwrap();
        let reloaded = Corpus::load_jsonl(&path2, &schema).unwrap();
        assert_eq!(corpus, reloaded);
    }

    #[test]
    fn joiner_in_span_text_is_rejected() {
        let tokens: Vec<String> = ["Kelly", "&", "Yoon", "met"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let span = Span::over(&tokens, 0, 3).unwrap();
        let example = AnnotatedExample {
            id: "x".into(),
            tokens,
            records: vec![EventRecord {
                event_type: "Meet".into(),
                trigger: span.clone(),
                arguments: vec![],
            }],
        };
        assert!(Corpus::new(figure_schema(), vec![example]).is_err());
    }

    #[test]
    fn blinded_corpus_renames_labels_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, format!("{}\n", figure_line())).unwrap();
        let corpus = Corpus::load_jsonl(&path, &figure_schema()).unwrap();
        let blinded = corpus.blinded();
        blinded.validate().unwrap();
        assert_eq!(blinded.examples[0].tokens, corpus.examples[0].tokens);
        assert_eq!(blinded.examples[0].records[0].event_type, "T0");
        assert_eq!(blinded.examples[0].records[1].event_type, "T1");
        assert_eq!(blinded.examples[0].records[0].arguments[0].role, "R00");
        assert_eq!(
            blinded.examples[0].records[0].arguments[0].span,
            corpus.examples[0].records[0].arguments[0].span
        );
    }
}
