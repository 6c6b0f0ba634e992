//! Windowing and the full-batch training loop.

use crate::error::{Error, Result};
use crate::model::{forward, loss, loss_gradients, ModelConfig, ModelParams};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

/// Windows per parallel work unit. Fixed (not thread-count dependent) so
/// float accumulation order — and therefore every reported loss — is
/// identical no matter how many threads run.
const CHUNK: usize = 8;

/// Training hyper-parameters. Fields omitted from a JSON config take
/// their defaults.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    /// Step between consecutive window starts.
    pub stride: usize,
    /// Upper bound on update epochs.
    pub max_epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    /// Validation improvement below this does not reset the patience.
    pub min_delta: f64,
    /// Adam step size.
    pub learning_rate: f64,
    /// Trailing fraction of windows held out for validation.
    pub validation_fraction: f64,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            max_epochs: 2000,
            patience: 20,
            min_delta: 1e-5,
            learning_rate: 1e-3,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// All violated invariants, empty when the config is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.stride == 0 {
            v.push("stride must be at least 1".to_string());
        }
        if self.max_epochs == 0 {
            v.push("max_epochs must be at least 1".to_string());
        }
        if self.patience == 0 {
            v.push("patience must be at least 1".to_string());
        }
        if !(self.min_delta >= 0.0) || !self.min_delta.is_finite() {
            v.push(format!(
                "min_delta must be finite and non-negative, got {}",
                self.min_delta
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            v.push(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..0.95).contains(&self.validation_fraction) {
            v.push(format!(
                "validation_fraction must lie in [0, 0.95), got {}",
                self.validation_fraction
            ));
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

/// Cut a `[N, L]` series into overlapping `[N, window]` windows whose
/// starts advance by `stride`; yields `⌊(L − window)/stride⌋ + 1` windows.
pub fn make_windows(series: &Tensor, window: usize, stride: usize) -> Result<Vec<Tensor>> {
    if series.shape().len() != 2 {
        return Err(Error::shape(format!(
            "make_windows needs a [N, L] series, got {:?}",
            series.shape()
        )));
    }
    if window < 2 {
        return Err(Error::arg(format!("window must be at least 2, got {window}")));
    }
    if stride == 0 {
        return Err(Error::arg("stride must be at least 1".to_string()));
    }
    let (n, len) = (series.shape()[0], series.shape()[1]);
    if len < window {
        return Err(Error::InputTooShort {
            length: len,
            window,
        });
    }
    let count = (len - window) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        let mut slice = Tensor::zeros(&[n, window]);
        for i in 0..n {
            for t0 in 0..window {
                slice.set2(i, t0, series.get2(i, start + t0));
            }
        }
        out.push(slice);
    }
    Ok(out)
}

/// Loss curves and stopping information from a training run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainReport {
    /// Mean training objective; index 0 is the untrained model, index
    /// `e` the state after epoch `e`.
    pub train_loss: Vec<f64>,
    /// Mean validation objective on the held-out trailing windows,
    /// aligned with `train_loss`.
    pub val_loss: Vec<f64>,
    /// Update epochs actually performed.
    pub epochs_run: usize,
    /// Index (into the curves) of the best validation loss; the
    /// returned parameters are from this point.
    pub best_epoch: usize,
    /// Whether patience ran out before `max_epochs`.
    pub stopped_early: bool,
    /// Windows used for updates / held out for validation.
    pub train_windows: usize,
    pub validation_windows: usize,
    /// Wall-clock duration. Deliberately absent from serialized
    /// artifacts so outputs are byte-stable across reruns.
    #[serde(skip_serializing, default)]
    pub wall_clock_seconds: f64,
}

/// Per-epoch progress handed to the [`train_with`] callback.
#[derive(Debug, Clone, Copy)]
pub struct EpochSnapshot {
    /// 1-based update epoch.
    pub epoch: usize,
    /// Mean training objective after this epoch.
    pub train_loss: f64,
    /// Mean validation objective after this epoch.
    pub val_loss: f64,
    /// Whether this epoch improved the best validation loss.
    pub improved: bool,
}

fn mean_loss(windows: &[Tensor], params: &ModelParams, config: &ModelConfig) -> Result<f64> {
    let sums: Vec<f64> = windows
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut s = 0.0;
            for x in chunk {
                let trace = forward(x, params, config)?;
                s += loss(&trace.prediction, x, params, config)?;
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok(sums.iter().sum::<f64>() / windows.len() as f64)
}

fn accumulate(
    into: &mut BTreeMap<String, Tensor>,
    from: BTreeMap<String, Tensor>,
) -> Result<()> {
    for (name, grad) in from {
        match into.get_mut(&name) {
            Some(t) => t.add_scaled(&grad, 1.0)?,
            None => {
                into.insert(name, grad);
            }
        }
    }
    Ok(())
}

fn mean_gradients(
    windows: &[Tensor],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<BTreeMap<String, Tensor>> {
    let partials: Vec<BTreeMap<String, Tensor>> = windows
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = BTreeMap::new();
            for x in chunk {
                let trace = forward(x, params, config)?;
                let pass = loss_gradients(&trace, params, config, x)?;
                accumulate(&mut acc, pass.grads)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = BTreeMap::new();
    for p in partials {
        accumulate(&mut total, p)?;
    }
    let inv = 1.0 / windows.len() as f64;
    for t in total.values_mut() {
        t.scale_in_place(inv);
    }
    Ok(total)
}

/// [`train_with`] without progress reporting.
pub fn train(
    windows: &[Tensor],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    train_with(windows, model_config, train_config, |_| {})
}

/// Fit a fresh model to the windows by full-batch gradient descent.
///
/// The trailing `validation_fraction` of the windows (temporal holdout —
/// always at least one window when two or more exist) is never used for
/// updates; it scores each epoch, drives early stopping, and selects the
/// returned parameters (the best-validation state, not the last). Every
/// epoch averages the objective gradient over all training windows and
/// takes one Adam step. A non-finite objective aborts with an error
/// naming the epoch. `on_epoch` observes each epoch.
pub fn train_with<F: FnMut(EpochSnapshot)>(
    windows: &[Tensor],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(ModelParams, TrainReport)> {
    model_config.validate()?;
    train_config.validate()?;
    if windows.is_empty() {
        return Err(Error::arg("training needs at least one window".to_string()));
    }
    let shape = [model_config.n_series, model_config.window];
    for w in windows {
        if w.shape() != shape {
            return Err(Error::shape(format!(
                "training window shape {:?} does not match configured {:?}",
                w.shape(),
                shape
            )));
        }
    }

    let started = Instant::now();
    let count = windows.len();
    let val_count = if count >= 2 {
        ((count as f64 * train_config.validation_fraction).floor() as usize)
            .clamp(1, count - 1)
    } else {
        0
    };
    let train_set = &windows[..count - val_count];
    // With a single window the same window also validates; otherwise the
    // temporally last windows are held out.
    let val_set = if val_count == 0 {
        windows
    } else {
        &windows[count - val_count..]
    };

    let mut params = ModelParams::init(model_config, train_config.seed)?;
    let mut adam = AdamState::new(AdamConfig {
        learning_rate: train_config.learning_rate,
        ..AdamConfig::default()
    });

    let t0 = mean_loss(train_set, &params, model_config)?;
    let v0 = mean_loss(val_set, &params, model_config)?;
    if !t0.is_finite() || !v0.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            loss: if t0.is_finite() { v0 } else { t0 },
        });
    }
    let mut train_curve = vec![t0];
    let mut val_curve = vec![v0];
    let mut best_val = v0;
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();
    let mut since_improvement = 0usize;
    let mut stopped_early = false;
    let mut epochs_run = 0usize;

    for epoch in 1..=train_config.max_epochs {
        let grads = mean_gradients(train_set, &params, model_config)?;
        adam.step(params.named_mut(), &grads)?;
        let t = mean_loss(train_set, &params, model_config)?;
        let v = mean_loss(val_set, &params, model_config)?;
        epochs_run = epoch;
        if !t.is_finite() || !v.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: if t.is_finite() { v } else { t },
            });
        }
        train_curve.push(t);
        val_curve.push(v);
        let improved = best_val - v > train_config.min_delta;
        if improved {
            best_val = v;
            best_epoch = epoch;
            best_params = params.clone();
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        on_epoch(EpochSnapshot {
            epoch,
            train_loss: t,
            val_loss: v,
            improved,
        });
        if since_improvement >= train_config.patience {
            stopped_early = true;
            break;
        }
    }

    let report = TrainReport {
        train_loss: train_curve,
        val_loss: val_curve,
        epochs_run,
        best_epoch,
        stopped_early,
        train_windows: train_set.len(),
        validation_windows: val_set.len(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((best_params, report))
}
