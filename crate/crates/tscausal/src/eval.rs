//! Scoring predicted graphs against ground truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CausalGraph;

/// Metrics of one predicted graph against one truth graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// TP / (TP + FP); 0 when the denominator is 0.
    pub precision: f64,
    /// TP / (TP + FN); 0 when the denominator is 0.
    pub recall: f64,
    /// 2PR / (P + R); 0 when P + R = 0.
    pub f1: f64,
    /// Fraction of true-positive edges with exactly correct delay,
    /// over the true positives whose true delay is known; `None` when
    /// no such edge exists (undefined, not zero).
    pub pod: Option<f64>,
    /// True positives: predicted edges present in the truth.
    pub tp: usize,
    /// False positives: predicted edges absent from the truth.
    pub fp: usize,
    /// False negatives: truth edges missing from the prediction.
    pub fn_: usize,
    /// The run's seed, when the evaluation came from a seeded pipeline.
    pub seed: Option<u64>,
}

/// Edge-level diff between prediction and truth (all ordered pairs are
/// 0-based `(source, target)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDiff {
    pub true_positives: Vec<(usize, usize)>,
    pub false_positives: Vec<(usize, usize)>,
    pub false_negatives: Vec<(usize, usize)>,
}

fn edge_pairs(graph: &CausalGraph, include_self_loops: bool) -> Vec<(usize, usize)> {
    graph
        .edges()
        .into_iter()
        .filter(|e| include_self_loops || e.source != e.target)
        .map(|e| (e.source, e.target))
        .collect()
}

/// Precision/recall/F1 of `pred` against `truth`, comparing edges as
/// ordered pairs and ignoring delays. Self-loops count as ordinary
/// edges unless `include_self_loops` is false.
pub fn prf1(pred: &CausalGraph, truth: &CausalGraph, include_self_loops: bool) -> Result<EvalResult> {
    if pred.vertex_count() != truth.vertex_count() {
        return Err(Error::arg(format!(
            "vertex counts differ: predicted {}, truth {}",
            pred.vertex_count(),
            truth.vertex_count()
        )));
    }
    let pred_edges = edge_pairs(pred, include_self_loops);
    let truth_edges = edge_pairs(truth, include_self_loops);
    let tp = pred_edges
        .iter()
        .filter(|e| truth_edges.contains(e))
        .count();
    let fp = pred_edges.len() - tp;
    let fn_ = truth_edges.len() - tp;
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvalResult {
        precision,
        recall,
        f1,
        pod: pod(pred, truth, include_self_loops),
        tp,
        fp,
        fn_,
        seed: None,
    })
}

/// Precision of delay: over the true-positive edges whose true delay is
/// known, the fraction whose predicted delay matches exactly. `None`
/// (undefined) when no true positive carries a known true delay.
pub fn pod(pred: &CausalGraph, truth: &CausalGraph, include_self_loops: bool) -> Option<f64> {
    let truth_edges = edge_pairs(truth, include_self_loops);
    let mut eligible = 0usize;
    let mut correct = 0usize;
    for (source, target) in edge_pairs(pred, include_self_loops) {
        if !truth_edges.contains(&(source, target)) {
            continue;
        }
        let Some(true_delay) = truth.delay(source, target) else {
            continue;
        };
        eligible += 1;
        if pred.delay(source, target) == Some(true_delay) {
            correct += 1;
        }
    }
    if eligible == 0 {
        None
    } else {
        Some(correct as f64 / eligible as f64)
    }
}

/// Edge-level diff listing for case studies.
pub fn edge_diff(
    pred: &CausalGraph,
    truth: &CausalGraph,
    include_self_loops: bool,
) -> Result<EdgeDiff> {
    if pred.vertex_count() != truth.vertex_count() {
        return Err(Error::arg(format!(
            "vertex counts differ: predicted {}, truth {}",
            pred.vertex_count(),
            truth.vertex_count()
        )));
    }
    let pred_edges = edge_pairs(pred, include_self_loops);
    let truth_edges = edge_pairs(truth, include_self_loops);
    Ok(EdgeDiff {
        true_positives: pred_edges
            .iter()
            .filter(|e| truth_edges.contains(e))
            .copied()
            .collect(),
        false_positives: pred_edges
            .iter()
            .filter(|e| !truth_edges.contains(e))
            .copied()
            .collect(),
        false_negatives: truth_edges
            .iter()
            .filter(|e| !pred_edges.contains(e))
            .copied()
            .collect(),
    })
}

/// `mean ± sample stddev` of one metric over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation (n−1); 0 with a single value.
    pub stddev: f64,
    /// How many runs contributed (PoD can be undefined for some).
    pub count: usize,
}

fn summarize(values: &[f64]) -> Option<MetricSummary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stddev = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some(MetricSummary {
        mean,
        stddev,
        count: values.len(),
    })
}

/// Aggregated multi-seed outcome for one dataset spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    /// Name of the dataset/spec the seeds ran against.
    pub name: String,
    /// Per-seed results, in seed order, for the seeds that succeeded.
    pub runs: Vec<EvalResult>,
    /// Seeds whose run failed, with the failure message.
    pub failures: Vec<(u64, String)>,
    /// True when at least one seed failed (the table is partial).
    pub partial: bool,
    pub precision: Option<MetricSummary>,
    pub recall: Option<MetricSummary>,
    pub f1: Option<MetricSummary>,
    pub pod: Option<MetricSummary>,
}

impl SeedReport {
    /// Fixed-width text row underlying the plain-text table: name then
    /// `mean±std` per metric (`-` when undefined).
    pub fn text_row(&self) -> String {
        fn cell(s: &Option<MetricSummary>) -> String {
            match s {
                Some(m) => format!("{:.3}±{:.3}", m.mean, m.stddev),
                None => "-".to_string(),
            }
        }
        format!(
            "{:<16} {:>13} {:>13} {:>13} {:>13}  runs {}/{}",
            self.name,
            cell(&self.precision),
            cell(&self.recall),
            cell(&self.f1),
            cell(&self.pod),
            self.runs.len(),
            self.runs.len() + self.failures.len(),
        )
    }

    /// Header aligned with [`SeedReport::text_row`].
    pub fn text_header() -> String {
        format!(
            "{:<16} {:>13} {:>13} {:>13} {:>13}",
            "dataset", "precision", "recall", "f1", "pod"
        )
    }
}

/// Run `runner` once per seed (in parallel) and aggregate the metrics
/// into mean ± sample stddev. Individual seed failures are recorded in
/// the report, not fatal; the report is then flagged partial.
pub fn multi_seed_report<F>(name: &str, seeds: &[u64], runner: F) -> Result<SeedReport>
where
    F: Fn(u64) -> Result<EvalResult> + Sync,
{
    if seeds.len() < 2 {
        return Err(Error::arg(format!(
            "multi-seed reports need at least 2 seeds, got {}",
            seeds.len()
        )));
    }
    let outcomes: Vec<(u64, Result<EvalResult>)> = seeds
        .par_iter()
        .map(|&seed| {
            (
                seed,
                runner(seed).map(|mut r| {
                    r.seed = Some(seed);
                    r
                }),
            )
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(r) => runs.push(r),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    let metric = |f: fn(&EvalResult) -> Option<f64>| -> Option<MetricSummary> {
        let values: Vec<f64> = runs.iter().filter_map(f).collect();
        summarize(&values)
    };
    Ok(SeedReport {
        name: name.to_string(),
        partial: !failures.is_empty(),
        precision: metric(|r| Some(r.precision)),
        recall: metric(|r| Some(r.recall)),
        f1: metric(|r| Some(r.f1)),
        pod: metric(|r| r.pod),
        runs,
        failures,
    })
}
