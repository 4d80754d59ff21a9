//! Bidirectional conversion between event records and their natural-language
//! record sequence ("Event trigger is arrived. Artifact is Kelly. ..."),
//! plus token-offset resolution of parsed strings against the source
//! sentence.
//!
//! `parse` and `resolve_offsets` are total: malformed input degrades to
//! fewer records and a diagnostics tally, never an error.

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Argument, EventRecord, Span};
use crate::schema::EventSchema;

/// The linearized target string for one event type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordSequence {
    pub event_type: String,
    pub text: String,
}

/// Values attached to one role of a parsed record, in schema order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleValues {
    pub role: String,
    pub values: Vec<String>,
}

/// One record recovered from generated text: raw strings, no offsets yet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedRecord {
    pub trigger_text: String,
    /// One entry per schema role of the event type, in schema order.
    /// Values never contain the pad word.
    pub role_values: Vec<RoleValues>,
}

impl ParsedRecord {
    pub fn values_of(&self, role: &str) -> &[String] {
        self.role_values
            .iter()
            .find(|rv| rv.role == role)
            .map(|rv| rv.values.as_slice())
            .unwrap_or(&[])
    }

    fn is_empty(&self, pad_word: &str) -> bool {
        self.trigger_text == pad_word && self.role_values.iter().all(|rv| rv.values.is_empty())
    }
}

/// Counters for everything the decoder had to skip or drop.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CodecDiagnostics {
    pub skipped_clauses: usize,
    pub unmatched_triggers: usize,
    pub unmatched_arguments: usize,
}

impl CodecDiagnostics {
    pub fn merge(&mut self, other: &CodecDiagnostics) {
        self.skipped_clauses += other.skipped_clauses;
        self.unmatched_triggers += other.unmatched_triggers;
        self.unmatched_arguments += other.unmatched_arguments;
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("unknown event type: {0}")]
    UnknownEventType(String),
    #[error("record of type '{found}' passed to linearization of '{expected}'")]
    MixedEventTypes { expected: String, found: String },
}

/// Result of [`parse`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOutcome {
    pub records: Vec<ParsedRecord>,
    pub skipped_clauses: usize,
}

/// Result of [`resolve_offsets`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolveOutcome {
    pub records: Vec<EventRecord>,
    pub unmatched_triggers: usize,
    pub unmatched_arguments: usize,
}

/// Linearizes all records of one event type into the unified sequence
/// representation. Records are ordered by trigger start (ties by end); an
/// empty record list produces the all-pad pseudo-record so negative targets
/// have a consistent shape.
pub fn linearize(
    event_type: &str,
    records: &[EventRecord],
    schema: &EventSchema,
) -> Result<RecordSequence, CodecError> {
    let roles = schema
        .roles_of(event_type)
        .map_err(|_| CodecError::UnknownEventType(event_type.to_string()))?;
    for record in records {
        if record.event_type != event_type {
            return Err(CodecError::MixedEventTypes {
                expected: event_type.to_string(),
                found: record.event_type.clone(),
            });
        }
    }
    let pad = &schema.special_tokens.pad_word;
    let joiner = format!(" {} ", schema.special_tokens.arg_joiner);

    let mut ordered: Vec<&EventRecord> = records.iter().collect();
    ordered.sort_by_key(|r| (r.trigger.start, r.trigger.end));

    let mut clauses: Vec<String> = Vec::new();
    if ordered.is_empty() {
        clauses.push(format!("Event trigger is {pad}."));
        for role in roles {
            clauses.push(format!("{role} is {pad}."));
        }
    } else {
        for record in ordered {
            clauses.push(format!("Event trigger is {}.", record.trigger.text));
            for role in roles {
                let values: Vec<&str> = record
                    .arguments
                    .iter()
                    .filter(|a| a.role == *role)
                    .map(|a| a.span.text.as_str())
                    .collect();
                if values.is_empty() {
                    clauses.push(format!("{role} is {pad}."));
                } else {
                    clauses.push(format!("{role} is {}.", values.join(&joiner)));
                }
            }
        }
    }
    Ok(RecordSequence {
        event_type: event_type.to_string(),
        text: clauses.join(" "),
    })
}

/// Parses generated text back into records of `event_type`. Clauses are
/// split at period+space boundaries; each clause splits at its first " is ".
/// Unknown heads, headless clauses, and role clauses before any trigger are
/// skipped and tallied. Never fails on arbitrary input.
pub fn parse(seq_text: &str, event_type: &str, schema: &EventSchema) -> ParseOutcome {
    let roles: Vec<String> = schema
        .roles_of(event_type)
        .map(|r| r.to_vec())
        .unwrap_or_default();
    let pad = schema.special_tokens.pad_word.as_str();
    let joiner = format!(" {} ", schema.special_tokens.arg_joiner);

    let mut records: Vec<ParsedRecord> = Vec::new();
    let mut skipped = 0usize;
    for raw_clause in split_clauses(seq_text) {
        let clause = raw_clause.trim();
        if clause.is_empty() {
            continue;
        }
        let Some(split_at) = clause.find(" is ") else {
            skipped += 1;
            continue;
        };
        let head = &clause[..split_at];
        let value = &clause[split_at + 4..];
        if head == "Event trigger" {
            records.push(ParsedRecord {
                trigger_text: value.trim().to_string(),
                role_values: roles
                    .iter()
                    .map(|role| RoleValues {
                        role: role.clone(),
                        values: Vec::new(),
                    })
                    .collect(),
            });
        } else if let Some(role_slot) = roles.iter().position(|r| r == head) {
            let Some(current) = records.last_mut() else {
                skipped += 1;
                continue;
            };
            let values = value
                .split(&joiner)
                .map(str::trim)
                .filter(|v| !v.is_empty() && *v != pad)
                .map(str::to_string);
            current.role_values[role_slot].values.extend(values);
        } else {
            skipped += 1;
        }
    }
    records.retain(|r| !r.is_empty(pad));
    ParseOutcome {
        records,
        skipped_clauses: skipped,
    }
}

/// Splits at every ". " boundary and strips one trailing period from the
/// final segment.
fn split_clauses(text: &str) -> Vec<&str> {
    if text.trim().is_empty() {
        return Vec::new();
    }
    let mut clauses: Vec<&str> = text.split(". ").collect();
    if let Some(last) = clauses.pop() {
        clauses.push(last.strip_suffix('.').unwrap_or(last));
    }
    clauses
}

/// Anchors parsed strings in the sentence. Every match of the trigger string
/// yields a predicted trigger mention; each argument is anchored at the
/// single match closest to the record's first trigger match (ties to the
/// earlier match). Arguments are attached to the first mention only, so
/// duplicate trigger mentions do not multiply argument predictions.
/// Records whose trigger never matches are dropped and tallied.
pub fn resolve_offsets(
    parsed: &[ParsedRecord],
    tokens: &[String],
    event_type: &str,
) -> ResolveOutcome {
    let mut records = Vec::new();
    let mut unmatched_triggers = 0usize;
    let mut unmatched_arguments = 0usize;

    for record in parsed {
        let trigger_matches = find_matches(&record.trigger_text, tokens);
        if trigger_matches.is_empty() {
            unmatched_triggers += 1;
            continue;
        }
        let anchor = trigger_matches[0].0;

        let mut arguments = Vec::new();
        for rv in &record.role_values {
            for value in &rv.values {
                let matches = find_matches(value, tokens);
                let Some(&(start, end)) = matches
                    .iter()
                    .min_by_key(|(s, _)| (s.abs_diff(anchor), *s))
                else {
                    unmatched_arguments += 1;
                    continue;
                };
                arguments.push(Argument {
                    role: rv.role.clone(),
                    span: span_at(tokens, start, end),
                });
            }
        }

        for (i, &(start, end)) in trigger_matches.iter().enumerate() {
            records.push(EventRecord {
                event_type: event_type.to_string(),
                trigger: span_at(tokens, start, end),
                arguments: if i == 0 { arguments.clone() } else { Vec::new() },
            });
        }
    }
    ResolveOutcome {
        records,
        unmatched_triggers,
        unmatched_arguments,
    }
}

/// Parse + resolve in one step, with a combined diagnostics tally.
pub fn decode(
    seq_text: &str,
    tokens: &[String],
    event_type: &str,
    schema: &EventSchema,
) -> (Vec<EventRecord>, CodecDiagnostics) {
    let parsed = parse(seq_text, event_type, schema);
    let resolved = resolve_offsets(&parsed.records, tokens, event_type);
    (
        resolved.records,
        CodecDiagnostics {
            skipped_clauses: parsed.skipped_clauses,
            unmatched_triggers: resolved.unmatched_triggers,
            unmatched_arguments: resolved.unmatched_arguments,
        },
    )
}

/// All positions where the whitespace-split words of `text` occur as a
/// contiguous token subsequence.
fn find_matches(text: &str, tokens: &[String]) -> Vec<(usize, usize)> {
    let needle: Vec<&str> = text.split_whitespace().collect();
    if needle.is_empty() || needle.len() > tokens.len() {
        return Vec::new();
    }
    (0..=tokens.len() - needle.len())
        .filter(|&i| {
            tokens[i..i + needle.len()]
                .iter()
                .map(String::as_str)
                .eq(needle.iter().copied())
        })
        .map(|i| (i, i + needle.len()))
        .collect()
}

fn span_at(tokens: &[String], start: usize, end: usize) -> Span {
    Span {
        start,
        end,
        text: tokens[start..end].join(" "),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::EventTypeDef;

    fn schema() -> EventSchema {
        EventSchema::new(vec![
            EventTypeDef::new(
                "Transport",
                &["Artifact", "Origin", "Destination", "Vehicle"],
            ),
            EventTypeDef::new("Meet", &["Entity", "Place"]),
            EventTypeDef::new("Solo", &["A"]),
        ])
        .unwrap()
    }

    fn tokens(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn figure_record(toks: &[String]) -> EventRecord {
        EventRecord {
            event_type: "Transport".into(),
            trigger: Span::over(toks, 1, 2).unwrap(),
            arguments: vec![
                Argument {
                    role: "Artifact".into(),
                    span: Span::over(toks, 0, 1).unwrap(),
                },
                Argument {
                    role: "Origin".into(),
                    span: Span::over(toks, 3, 4).unwrap(),
                },
                Argument {
                    role: "Destination".into(),
                    span: Span::over(toks, 5, 6).unwrap(),
                },
            ],
        }
    }

    #[test]
    fn linearizes_figure_transport_record() {
        let toks = tokens(&["Kelly", "arrived", "in", "Beijing", "then", "Seoul"]);
        let record = figure_record(&toks);
        let seq = linearize("Transport", &[record], &schema()).unwrap();
        assert_eq!(
            seq.text,
            "Event trigger is arrived. Artifact is Kelly. Origin is Beijing. \
             Destination is Seoul. Vehicle is None."
        );
    }

    #[test]
    fn merges_shared_role_values_with_joiner() {
        let toks = tokens(&["Kelly", "met", "Yoon"]);
        let record = EventRecord {
            event_type: "Meet".into(),
            trigger: Span::over(&toks, 1, 2).unwrap(),
            arguments: vec![
                Argument {
                    role: "Entity".into(),
                    span: Span::over(&toks, 0, 1).unwrap(),
                },
                Argument {
                    role: "Entity".into(),
                    span: Span::over(&toks, 2, 3).unwrap(),
                },
            ],
        };
        let seq = linearize("Meet", &[record], &schema()).unwrap();
        assert_eq!(
            seq.text,
            "Event trigger is met. Entity is Kelly & Yoon. Place is None."
        );
    }

    #[test]
    fn empty_record_list_yields_all_pad_pseudo_record() {
        let seq = linearize("Solo", &[], &schema()).unwrap();
        assert_eq!(seq.text, "Event trigger is None. A is None.");
    }

    #[test]
    fn mixed_types_are_a_contract_error() {
        let toks = tokens(&["Kelly", "met"]);
        let record = EventRecord {
            event_type: "Meet".into(),
            trigger: Span::over(&toks, 1, 2).unwrap(),
            arguments: vec![],
        };
        assert!(matches!(
            linearize("Transport", &[record], &schema()),
            Err(CodecError::MixedEventTypes { .. })
        ));
    }

    #[test]
    fn linearize_clause_count_law() {
        let toks = tokens(&["Kelly", "met", "Yoon", "again", "later"]);
        let rec = |s: usize| EventRecord {
            event_type: "Meet".into(),
            trigger: Span::over(&toks, s, s + 1).unwrap(),
            arguments: vec![],
        };
        let seq = linearize("Meet", &[rec(1), rec(3)], &schema()).unwrap();
        let clauses = seq.text.matches(" is ").count();
        assert_eq!(clauses, 2 * (1 + 2));
    }

    #[test]
    fn linearize_orders_by_trigger_start() {
        let toks = tokens(&["Kelly", "met", "Yoon", "again", "greeted"]);
        let rec = |s: usize| EventRecord {
            event_type: "Meet".into(),
            trigger: Span::over(&toks, s, s + 1).unwrap(),
            arguments: vec![],
        };
        let a = linearize("Meet", &[rec(1), rec(4)], &schema()).unwrap();
        let b = linearize("Meet", &[rec(4), rec(1)], &schema()).unwrap();
        assert_eq!(a, b);
        assert!(a.text.starts_with("Event trigger is met."));
    }

    #[test]
    fn parse_round_trips_figure_record() {
        let toks = tokens(&["Kelly", "arrived", "in", "Beijing", "then", "Seoul"]);
        let record = figure_record(&toks);
        let seq = linearize("Transport", std::slice::from_ref(&record), &schema()).unwrap();
        let outcome = parse(&seq.text, "Transport", &schema());
        assert_eq!(outcome.skipped_clauses, 0);
        assert_eq!(outcome.records.len(), 1);
        let parsed = &outcome.records[0];
        assert_eq!(parsed.trigger_text, "arrived");
        assert_eq!(parsed.values_of("Artifact"), ["Kelly"]);
        assert_eq!(parsed.values_of("Origin"), ["Beijing"]);
        assert_eq!(parsed.values_of("Destination"), ["Seoul"]);
        assert!(parsed.values_of("Vehicle").is_empty());
        let nonempty = parsed
            .role_values
            .iter()
            .filter(|rv| !rv.values.is_empty())
            .count();
        assert_eq!(nonempty, 3);
    }

    #[test]
    fn parse_garbage_counts_one_skipped_segment() {
        let outcome = parse("garbage text with no clauses", "Meet", &schema());
        assert!(outcome.records.is_empty());
        assert_eq!(outcome.skipped_clauses, 1);
    }

    #[test]
    fn parse_splits_joined_values() {
        let outcome = parse("Event trigger is met. Entity is A & B.", "Meet", &schema());
        assert_eq!(outcome.records.len(), 1);
        assert_eq!(outcome.records[0].values_of("Entity"), ["A", "B"]);
    }

    #[test]
    fn parse_skips_role_clause_before_any_trigger() {
        let outcome = parse("Entity is A. Event trigger is met.", "Meet", &schema());
        assert_eq!(outcome.skipped_clauses, 1);
        assert_eq!(outcome.records.len(), 1);
        assert!(outcome.records[0].values_of("Entity").is_empty());
    }

    #[test]
    fn parse_skips_unknown_heads_and_drops_all_pad_records() {
        let text = "Event trigger is None. Entity is None. Place is None. Pilot is X.";
        let outcome = parse(text, "Meet", &schema());
        assert!(outcome.records.is_empty());
        assert_eq!(outcome.skipped_clauses, 1);
    }

    #[test]
    fn parse_keeps_value_containing_is() {
        // The first " is " decides the head; later ones belong to the value.
        let outcome = parse(
            "Event trigger is met. Entity is whoever is there.",
            "Meet",
            &schema(),
        );
        assert_eq!(outcome.records[0].values_of("Entity"), ["whoever is there"]);
    }

    #[test]
    fn resolve_single_match() {
        let toks = tokens(&["Kelly", "arrived", "in", "Beijing"]);
        let parsed = parse("Event trigger is arrived. Artifact is Kelly.", "Transport", &schema());
        let out = resolve_offsets(&parsed.records, &toks, "Transport");
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].trigger, Span::over(&toks, 1, 2).unwrap());
        assert_eq!(out.records[0].arguments.len(), 1);
        assert_eq!(out.records[0].arguments[0].span, Span::over(&toks, 0, 1).unwrap());
    }

    #[test]
    fn resolve_keeps_every_trigger_match() {
        let toks = tokens(&["he", "left", "then", "left", "again"]);
        let parsed = parse("Event trigger is left.", "Meet", &schema());
        let out = resolve_offsets(&parsed.records, &toks, "Meet");
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0].trigger.start, 1);
        assert_eq!(out.records[1].trigger.start, 3);
    }

    #[test]
    fn resolve_anchors_argument_at_closest_match() {
        // "Kelly" at 0 and 12, trigger at 9 -> argument anchored at 12.
        let mut words = vec!["Kelly"];
        words.extend(["a"; 8]);
        words.push("met");
        words.extend(["b", "c"]);
        words.push("Kelly");
        let toks = tokens(&words);
        assert_eq!(toks[9], "met");
        assert_eq!(toks[12], "Kelly");
        let parsed = parse("Event trigger is met. Entity is Kelly.", "Meet", &schema());
        let out = resolve_offsets(&parsed.records, &toks, "Meet");
        assert_eq!(out.records[0].arguments[0].span.start, 12);
    }

    #[test]
    fn resolve_tie_breaks_to_earlier_match() {
        let toks = tokens(&["Kelly", "b", "met", "c", "Kelly"]);
        let parsed = parse("Event trigger is met. Entity is Kelly.", "Meet", &schema());
        let out = resolve_offsets(&parsed.records, &toks, "Meet");
        // distances |0-2| and |4-2| tie; earlier wins
        assert_eq!(out.records[0].arguments[0].span.start, 0);
    }

    #[test]
    fn resolve_drops_record_with_unmatched_trigger() {
        let toks = tokens(&["Kelly", "met", "Yoon"]);
        let parsed = parse("Event trigger is vanished. Entity is Kelly.", "Meet", &schema());
        let out = resolve_offsets(&parsed.records, &toks, "Meet");
        assert!(out.records.is_empty());
        assert_eq!(out.unmatched_triggers, 1);
        assert_eq!(out.unmatched_arguments, 0);
    }

    #[test]
    fn resolve_tallies_unmatched_arguments() {
        let toks = tokens(&["Kelly", "met", "Yoon"]);
        let parsed = parse("Event trigger is met. Entity is Bob.", "Meet", &schema());
        let out = resolve_offsets(&parsed.records, &toks, "Meet");
        assert_eq!(out.records.len(), 1);
        assert!(out.records[0].arguments.is_empty());
        assert_eq!(out.unmatched_arguments, 1);
    }

    #[test]
    fn decode_all_pad_sequence_is_empty() {
        let toks = tokens(&["Kelly", "met", "Yoon"]);
        let seq = linearize("Meet", &[], &schema()).unwrap();
        let (records, diag) = decode(&seq.text, &toks, "Meet", &schema());
        assert!(records.is_empty());
        assert_eq!(diag, CodecDiagnostics::default());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn parse_is_total(text in ".{0,200}") {
                let _ = parse(&text, "Meet", &schema());
            }

            #[test]
            fn decode_is_total(text in ".{0,200}") {
                let toks = tokens(&["Kelly", "met", "Yoon"]);
                let _ = decode(&text, &toks, "Meet", &schema());
            }
        }
    }
}
