//! Causal-structure read-out from a trained model.
//!
//! Discovery interprets the model rather than its predictions: each
//! window's predictions for a target series are decomposed into
//! relevance on the attention matrices (who influences the target) and
//! on the convolution kernels (at which lag), the relevance is modulated
//! by the matching gradients, scores are averaged over sampled windows,
//! and a 1-D clustering separates causal sources from background. The
//! kernel-score peak position dates each accepted edge.

mod kmeans;
mod rrp;

pub use kmeans::{delay_of, kmeans_1d, select_edges, Clustering, EdgeSelection};
pub use rrp::{
    init_relevance, propagate, rrp_affine, rrp_matmul, rrp_pointwise, AffineRelevance,
    MatmulRelevance, RelevanceMap, STABILIZER,
};

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, Edge};
use crate::model::{backward, forward, target_sum_seed, BackwardPass, ModelConfig, ModelParams};
use crate::seeds;
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Knobs for the discovery read-out. Fields omitted from a JSON config
/// take their defaults.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DetectorConfig {
    /// Number of k-means classes the scores are split into.
    pub classes: usize,
    /// How many of the highest-centroid classes count as causal.
    pub top_classes: usize,
    /// Windows whose target series has mean absolute value below this
    /// are excluded from that target's aggregation.
    pub theta: f64,
    /// Number of windows scored (evenly spaced over those provided).
    pub samples: usize,
    /// Seed for the clustering restarts.
    pub kmeans_seed: u64,
    /// Iteration cap per clustering restart.
    pub kmeans_max_iters: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            classes: 2,
            top_classes: 1,
            theta: 1e-3,
            samples: 20,
            kmeans_seed: 0,
            kmeans_max_iters: 100,
        }
    }
}

impl DetectorConfig {
    /// All violated invariants, empty when the config is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.classes == 0 {
            v.push("classes must be at least 1".to_string());
        }
        if self.top_classes == 0 || self.top_classes > self.classes {
            v.push(format!(
                "top_classes must satisfy 1 ≤ top_classes ≤ classes, got {} of {}",
                self.top_classes, self.classes
            ));
        }
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            v.push(format!("theta must be positive and finite, got {}", self.theta));
        }
        if self.samples == 0 {
            v.push("samples must be at least 1".to_string());
        }
        if self.kmeans_max_iters == 0 {
            v.push("kmeans_max_iters must be at least 1".to_string());
        }
        v
    }

    /// Error listing every violation, if any.
    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

/// Gradient-modulated relevance scores for one target.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TargetScores {
    /// Attention-level scores `[N, N]`; the causal row is the target's.
    pub attn: Tensor,
    /// Kernel-level scores `[N, N, T]`.
    pub kernel: Tensor,
}

/// Aggregated scores for every target series.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CausalScores {
    /// One score bundle per target, indexed by target series.
    pub per_target: Vec<TargetScores>,
}

impl CausalScores {
    /// Attention score of each candidate source for `target`.
    pub fn attention_row(&self, target: usize) -> &[f64] {
        self.per_target[target].attn.row(target)
    }

    /// Kernel score profile over slots for `source → target`.
    pub fn kernel_profile(&self, target: usize, source: usize) -> Vec<f64> {
        let kernel = &self.per_target[target].kernel;
        let t_len = kernel.shape()[2];
        (0..t_len).map(|t0| kernel.get3(source, target, t0)).collect()
    }
}

/// Combine relevance with gradients: per head, score = |gradient| ⊙
/// relevance with negatives clipped to zero; then mean over heads.
pub fn gradient_modulate(map: &RelevanceMap, pass: &BackwardPass) -> Result<TargetScores> {
    let h = map.attn.len();
    if pass.d_attn.len() != h {
        return Err(Error::shape(format!(
            "gradient modulation got {} attention gradients for {} heads",
            pass.d_attn.len(),
            h
        )));
    }
    let attn_shape = map.attn[0].shape().to_vec();
    let kernel_shape = map.kernel[0].shape().to_vec();
    let mut attn = Tensor::zeros(&attn_shape);
    let mut kernel = Tensor::zeros(&kernel_shape);
    let inv_h = 1.0 / h as f64;
    for k in 0..h {
        let d_attn = &pass.d_attn[k];
        if d_attn.shape() != attn_shape.as_slice() {
            return Err(Error::shape(format!(
                "attention gradient shape {:?} does not match relevance {:?}",
                d_attn.shape(),
                attn_shape
            )));
        }
        let d_kernel = pass
            .grads
            .get(&format!("head{k}.kernel"))
            .ok_or_else(|| Error::arg(format!("missing kernel gradient for head {k}")))?;
        if d_kernel.shape() != kernel_shape.as_slice() {
            return Err(Error::shape(format!(
                "kernel gradient shape {:?} does not match relevance {:?}",
                d_kernel.shape(),
                kernel_shape
            )));
        }
        for (a, (g, r)) in attn
            .data_mut()
            .iter_mut()
            .zip(d_attn.data().iter().zip(map.attn[k].data()))
        {
            *a += (g.abs() * r).max(0.0) * inv_h;
        }
        for (a, (g, r)) in kernel
            .data_mut()
            .iter_mut()
            .zip(d_kernel.data().iter().zip(map.kernel[k].data()))
        {
            *a += (g.abs() * r).max(0.0) * inv_h;
        }
    }
    Ok(TargetScores { attn, kernel })
}

/// Unweighted mean of per-window scores.
pub fn aggregate_scores(windows: &[TargetScores]) -> Result<TargetScores> {
    let first = windows
        .first()
        .ok_or_else(|| Error::arg("cannot aggregate zero score windows".to_string()))?;
    let mut attn = Tensor::zeros(first.attn.shape());
    let mut kernel = Tensor::zeros(first.kernel.shape());
    for w in windows {
        if w.attn.shape() != attn.shape() || w.kernel.shape() != kernel.shape() {
            return Err(Error::shape(
                "aggregation windows disagree on score shapes".to_string(),
            ));
        }
        attn.add_scaled(&w.attn, 1.0)?;
        kernel.add_scaled(&w.kernel, 1.0)?;
    }
    let inv = 1.0 / windows.len() as f64;
    attn.scale_in_place(inv);
    kernel.scale_in_place(inv);
    Ok(TargetScores { attn, kernel })
}

/// Per-target diagnostics from a discovery run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TargetReport {
    /// The target series.
    pub target: usize,
    /// Windows that entered the aggregation.
    pub windows_used: usize,
    /// Windows excluded by the activity threshold.
    pub windows_skipped: usize,
    /// Stabilized divisions encountered while decomposing.
    pub stabilizer_events: usize,
    /// Clusters actually realized by the score clustering.
    pub effective_classes: usize,
    /// True when the scores could not support the requested clustering
    /// or no window survived the activity threshold.
    pub degenerate: bool,
    /// Final attention-level score per candidate source.
    pub scores: Vec<f64>,
    /// Sources selected as causes of this target, ascending.
    pub selected: Vec<usize>,
    /// Estimated delay per selected source (same order as `selected`).
    pub delays: Vec<u32>,
}

/// Everything a discovery run found, alongside the graph.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiscoverReport {
    /// Number of series.
    pub n_series: usize,
    /// Model window length.
    pub window: usize,
    /// Windows handed in.
    pub windows_available: usize,
    /// Windows actually scored (evenly spaced subsample).
    pub windows_sampled: usize,
    /// Per-target outcomes, indexed by target.
    pub targets: Vec<TargetReport>,
    /// Aggregated scores per target.
    pub scores: CausalScores,
}

impl DiscoverReport {
    /// Targets whose read-out was degenerate (threshold removed every
    /// window, or the scores collapsed to fewer classes than requested).
    pub fn degenerate_targets(&self) -> Vec<usize> {
        self.targets
            .iter()
            .filter(|t| t.degenerate)
            .map(|t| t.target)
            .collect()
    }
}

/// Evenly spaced subsample of `0..len` with at most `samples` indices.
fn sample_indices(len: usize, samples: usize) -> Vec<usize> {
    if len <= samples {
        (0..len).collect()
    } else {
        (0..samples).map(|i| i * len / samples).collect()
    }
}

/// Read the causal graph out of a trained model.
///
/// Every sampled window is traced once; for each target the predictions'
/// relevance decomposition and the matching gradients produce one score
/// bundle per (window, target), windows below the activity threshold are
/// dropped, the rest average, and clustering the target's attention row
/// picks its sources. Kernel score peaks date the edges.
pub fn discover(
    params: &ModelParams,
    config: &ModelConfig,
    windows: &[Tensor],
    detector: &DetectorConfig,
) -> Result<(CausalGraph, DiscoverReport)> {
    detector.validate()?;
    params.validate(config)?;
    if windows.is_empty() {
        return Err(Error::arg("discovery needs at least one window".to_string()));
    }
    for w in windows {
        if w.shape() != [config.n_series, config.window] {
            return Err(Error::shape(format!(
                "window shape {:?} does not match configured [{}, {}]",
                w.shape(),
                config.n_series,
                config.window
            )));
        }
    }
    let n = config.n_series;
    let picked = sample_indices(windows.len(), detector.samples);
    let traces = picked
        .par_iter()
        .map(|&w| forward(&windows[w], params, config))
        .collect::<Result<Vec<_>>>()?;

    // Score every (target, surviving window) pair in parallel, keyed so
    // the fold below is order-independent of scheduling.
    struct Scored {
        target: usize,
        scores: TargetScores,
        stabilizer_events: usize,
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|target| (0..traces.len()).map(move |w| (target, w)))
        .collect();
    let kept: Vec<(usize, usize)> = pairs
        .into_iter()
        .filter(|&(target, w)| {
            let row = traces[w].input.row(target);
            let mean_abs = row.iter().map(|v| v.abs()).sum::<f64>() / row.len() as f64;
            mean_abs >= detector.theta
        })
        .collect();
    let scored = kept
        .par_iter()
        .map(|&(target, w)| {
            let trace = &traces[w];
            let seed = target_sum_seed(config, target)?;
            let pass = backward(trace, params, config, &seed)?;
            let map = propagate(trace, params, config, target)?;
            let scores = gradient_modulate(&map, &pass)?;
            Ok(Scored {
                target,
                scores,
                stabilizer_events: map.stabilizer_events,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_target_windows: Vec<Vec<TargetScores>> = vec![Vec::new(); n];
    let mut per_target_events = vec![0usize; n];
    for s in scored {
        per_target_windows[s.target].push(s.scores);
        per_target_events[s.target] += s.stabilizer_events;
    }

    let mut graph = CausalGraph::new(n);
    let mut reports = Vec::with_capacity(n);
    let mut per_target = Vec::with_capacity(n);
    for target in 0..n {
        let bundles = &per_target_windows[target];
        let used = bundles.len();
        let skipped = traces.len() - used;
        if used == 0 {
            let empty = TargetScores {
                attn: Tensor::zeros(&[n, n]),
                kernel: Tensor::zeros(&[n, n, config.window]),
            };
            reports.push(TargetReport {
                target,
                windows_used: 0,
                windows_skipped: skipped,
                stabilizer_events: 0,
                effective_classes: 0,
                degenerate: true,
                scores: vec![0.0; n],
                selected: Vec::new(),
                delays: Vec::new(),
            });
            per_target.push(empty);
            continue;
        }
        let agg = aggregate_scores(bundles)?;
        let row: Vec<f64> = agg.attn.row(target).to_vec();
        let selection = select_edges(
            &row,
            detector.classes,
            detector.top_classes,
            seeds::derive(detector.kmeans_seed, target as u64),
            detector.kmeans_max_iters,
        )?;
        let mut delays = Vec::with_capacity(selection.sources.len());
        for &source in &selection.sources {
            let profile: Vec<f64> = (0..config.window)
                .map(|t0| agg.kernel.get3(source, target, t0))
                .collect();
            let delay = delay_of(&profile)?;
            delays.push(delay);
            graph.add_edge(Edge {
                source,
                target,
                delay: Some(delay),
                score: Some(row[source]),
            })?;
        }
        reports.push(TargetReport {
            target,
            windows_used: used,
            windows_skipped: skipped,
            stabilizer_events: per_target_events[target],
            effective_classes: selection.effective_classes,
            degenerate: selection.degenerate,
            scores: row,
            selected: selection.sources,
            delays,
        });
        per_target.push(agg);
    }

    let report = DiscoverReport {
        n_series: n,
        window: config.window,
        windows_available: windows.len(),
        windows_sampled: traces.len(),
        targets: reports,
        scores: CausalScores { per_target },
    };
    Ok((graph, report))
}
