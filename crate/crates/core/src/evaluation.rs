//! Micro-F1 scoring for trigger classification (offset + event type) and
//! argument classification (offset + event type + role).
//!
//! Matching is one-to-one on exact mention equality: mentions are sorted
//! before matching, so each gold mention is credited at most once and
//! prediction order can never change a count.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EventRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecallF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrecisionRecallF1 {
    fn from_counts(correct: usize, pred: usize, gold: usize) -> Self {
        let precision = if pred == 0 { 0.0 } else { correct as f64 / pred as f64 };
        let recall = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCounts {
    pub gold_trig: usize,
    pub pred_trig: usize,
    pub correct_trig: usize,
    pub gold_arg: usize,
    pub pred_arg: usize,
    pub correct_arg: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub trig_c: PrecisionRecallF1,
    pub arg_c: PrecisionRecallF1,
    pub counts: ScoreCounts,
}

impl ScoreReport {
    fn from_counts(counts: ScoreCounts) -> Self {
        Self {
            trig_c: PrecisionRecallF1::from_counts(
                counts.correct_trig,
                counts.pred_trig,
                counts.gold_trig,
            ),
            arg_c: PrecisionRecallF1::from_counts(
                counts.correct_arg,
                counts.pred_arg,
                counts.gold_arg,
            ),
            counts,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction for unknown example id '{0}'")]
    UnknownPredictionId(String),
}

/// A trigger mention for matching purposes.
pub(crate) type TrigMention = (String, usize, usize);
/// An argument mention: (event type, role, start, end).
pub(crate) type ArgMention = (String, String, usize, usize);

pub(crate) fn trigger_mentions(records: &[EventRecord]) -> Vec<TrigMention> {
    records
        .iter()
        .map(|r| (r.event_type.clone(), r.trigger.start, r.trigger.end))
        .collect()
}

pub(crate) fn argument_mentions(records: &[EventRecord]) -> Vec<ArgMention> {
    records
        .iter()
        .flat_map(|r| {
            r.arguments.iter().map(|a| {
                (
                    r.event_type.clone(),
                    a.role.clone(),
                    a.span.start,
                    a.span.end,
                )
            })
        })
        .collect()
}

/// One-to-one match count between two mention multisets.
pub(crate) fn matched_count<T: Ord + Clone>(gold: &[T], pred: &[T]) -> usize {
    let mut g = gold.to_vec();
    let mut p = pred.to_vec();
    g.sort();
    p.sort();
    let (mut i, mut j, mut matched) = (0usize, 0usize, 0usize);
    while i < g.len() && j < p.len() {
        match g[i].cmp(&p[j]) {
            std::cmp::Ordering::Equal => {
                matched += 1;
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    matched
}

/// Scores predictions against gold annotations, micro-averaged over all
/// examples. Ids missing from `predictions` are scored as empty; ids absent
/// from the gold corpus are an error.
pub fn score(
    gold: &Corpus,
    predictions: &BTreeMap<String, Vec<EventRecord>>,
) -> Result<ScoreReport, EvalError> {
    for id in predictions.keys() {
        if gold.example_by_id(id).is_none() {
            return Err(EvalError::UnknownPredictionId(id.clone()));
        }
    }
    let empty: Vec<EventRecord> = Vec::new();
    let mut counts = ScoreCounts::default();
    for example in &gold.examples {
        let pred = predictions.get(&example.id).unwrap_or(&empty);
        let gold_trig = trigger_mentions(&example.records);
        let pred_trig = trigger_mentions(pred);
        let gold_arg = argument_mentions(&example.records);
        let pred_arg = argument_mentions(pred);
        counts.gold_trig += gold_trig.len();
        counts.pred_trig += pred_trig.len();
        counts.correct_trig += matched_count(&gold_trig, &pred_trig);
        counts.gold_arg += gold_arg.len();
        counts.pred_arg += pred_arg.len();
        counts.correct_arg += matched_count(&gold_arg, &pred_arg);
    }
    Ok(ScoreReport::from_counts(counts))
}

/// Per-event-type score row for the breakdown table.
#[derive(Debug, Clone, Serialize)]
pub struct TypeBreakdownRow {
    pub event_type: String,
    pub trig_c: PrecisionRecallF1,
    pub arg_c: PrecisionRecallF1,
    pub counts: ScoreCounts,
}

/// Scores each event type separately, in schema order.
pub fn per_type_breakdown(
    gold: &Corpus,
    predictions: &BTreeMap<String, Vec<EventRecord>>,
) -> Result<Vec<TypeBreakdownRow>, EvalError> {
    for id in predictions.keys() {
        if gold.example_by_id(id).is_none() {
            return Err(EvalError::UnknownPredictionId(id.clone()));
        }
    }
    let empty: Vec<EventRecord> = Vec::new();
    let mut rows = Vec::new();
    for def in &gold.schema.event_types {
        let mut counts = ScoreCounts::default();
        for example in &gold.examples {
            let pred = predictions.get(&example.id).unwrap_or(&empty);
            let keep = |records: &[EventRecord]| -> Vec<EventRecord> {
                records
                    .iter()
                    .filter(|r| r.event_type == def.name)
                    .cloned()
                    .collect()
            };
            let g = keep(&example.records);
            let p = keep(pred);
            let gold_trig = trigger_mentions(&g);
            let pred_trig = trigger_mentions(&p);
            let gold_arg = argument_mentions(&g);
            let pred_arg = argument_mentions(&p);
            counts.gold_trig += gold_trig.len();
            counts.pred_trig += pred_trig.len();
            counts.correct_trig += matched_count(&gold_trig, &pred_trig);
            counts.gold_arg += gold_arg.len();
            counts.pred_arg += pred_arg.len();
            counts.correct_arg += matched_count(&gold_arg, &pred_arg);
        }
        let report = ScoreReport::from_counts(counts);
        rows.push(TypeBreakdownRow {
            event_type: def.name.clone(),
            trig_c: report.trig_c,
            arg_c: report.arg_c,
            counts,
        });
    }
    Ok(rows)
}
