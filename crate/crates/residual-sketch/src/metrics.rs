//! Evaluation metrics over reported-vs-true HHH sets.
//!
//! Set membership is by key identity (bits + layer); estimates play no role
//! in precision/recall. Conventions for empty sets: both empty counts as a
//! perfect match (1.0), exactly one empty as a total miss (0.0).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::FlowKey;
use crate::sketch::HHHEntry;

/// One evaluation outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean relative error over the query set; `None` when the query set
    /// was empty (e.g. zero-length traces).
    pub are: Option<f64>,
    pub throughput_mpps: f64,
    /// F1 restricted to each layer, index = layer.
    pub per_layer_f1: Vec<f64>,
}

fn key_set(entries: &[HHHEntry]) -> BTreeSet<FlowKey> {
    entries.iter().map(|e| e.key).collect()
}

/// `(precision, recall)` of a reported set against the truth.
pub fn precision_recall(reported: &[HHHEntry], truth: &[HHHEntry]) -> (f64, f64) {
    let reported = key_set(reported);
    let truth = key_set(truth);
    if reported.is_empty() && truth.is_empty() {
        return (1.0, 1.0);
    }
    let overlap = reported.intersection(&truth).count() as f64;
    let pr = if reported.is_empty() {
        0.0
    } else {
        overlap / reported.len() as f64
    };
    let rr = if truth.is_empty() {
        0.0
    } else {
        overlap / truth.len() as f64
    };
    (pr, rr)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(pr: f64, rr: f64) -> f64 {
    if pr + rr == 0.0 {
        0.0
    } else {
        2.0 * pr * rr / (pr + rr)
    }
}

/// Average relative error of reported estimates over the query set.
/// Queried keys missing from the report contribute with an estimate of 0.
pub fn are(
    reported: &[HHHEntry],
    true_counts: &BTreeMap<FlowKey, u64>,
    query: &[FlowKey],
) -> Result<f64> {
    if query.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let estimates: BTreeMap<FlowKey, u64> = reported
        .iter()
        .map(|e| (e.key, e.estimated_count))
        .collect();
    let mut sum = 0.0;
    for key in query {
        let truth = true_counts.get(key).copied().unwrap_or(0);
        if truth == 0 {
            return Err(Error::ZeroTrueCount(format!("{key}")));
        }
        let est = estimates.get(key).copied().unwrap_or(0);
        sum += (truth as f64 - est as f64).abs() / truth as f64;
    }
    Ok(sum / query.len() as f64)
}

/// ARE with the default query set: the true HHH keys themselves.
pub fn are_default(reported: &[HHHEntry], truth: &[HHHEntry]) -> Result<f64> {
    let true_counts: BTreeMap<FlowKey, u64> =
        truth.iter().map(|e| (e.key, e.estimated_count)).collect();
    let query: Vec<FlowKey> = truth.iter().map(|e| e.key).collect();
    are(reported, &true_counts, &query)
}

/// Million packets processed per second.
pub fn throughput_mpps(packets: u64, elapsed_seconds: f64) -> f64 {
    assert!(elapsed_seconds > 0.0, "elapsed time must be positive");
    packets as f64 / elapsed_seconds / 1e6
}

/// Per-layer F1: both sets restricted to each layer, empty-set conventions
/// applied per layer.
pub fn per_layer_f1(reported: &[HHHEntry], truth: &[HHHEntry], depth: u8) -> Vec<f64> {
    (0..=depth)
        .map(|layer| {
            let rep: Vec<HHHEntry> = reported
                .iter()
                .filter(|e| e.layer == layer)
                .copied()
                .collect();
            let tru: Vec<HHHEntry> = truth.iter().filter(|e| e.layer == layer).copied().collect();
            let (pr, rr) = precision_recall(&rep, &tru);
            f1(pr, rr)
        })
        .collect()
}

/// Assemble the full evaluation of one run.
pub fn evaluate(
    reported: &[HHHEntry],
    truth: &[HHHEntry],
    depth: u8,
    packets: u64,
    elapsed_seconds: f64,
) -> EvalResult {
    let (precision, recall) = precision_recall(reported, truth);
    let are = if truth.is_empty() {
        None
    } else {
        are_default(reported, truth).ok()
    };
    EvalResult {
        precision,
        recall,
        f1: f1(precision, recall),
        are,
        throughput_mpps: throughput_mpps(packets, elapsed_seconds),
        per_layer_f1: per_layer_f1(reported, truth, depth),
    }
}
