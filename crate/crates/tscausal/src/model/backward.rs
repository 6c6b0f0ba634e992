//! Hand-derived backward pass through every layer.
//!
//! One implementation serves two consumers, parameterized by the seed
//! gradient on the predictions:
//!
//! * the trainer seeds with `∂loss/∂prediction` and adds the L1
//!   subgradients, yielding parameter gradients for the optimizer;
//! * the detector seeds with a target-row indicator (the gradient of
//!   `Σ_t prediction[i,t]`) and reads off `∂/∂attention` and `∂/∂kernel`
//!   for gradient modulation.
//!
//! Correctness is pinned by finite-difference comparison over every
//! parameter (see the acceptance suite).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{ForwardTrace, ModelConfig, ModelParams};
use crate::tensor::Tensor;

/// Result of one backward sweep.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    /// Gradient per parameter, keyed by the canonical parameter names.
    pub grads: BTreeMap<String, Tensor>,
    /// Per-head gradient with respect to the attention matrix `[N, N]` —
    /// an intermediate, not a parameter, needed by gradient modulation.
    pub d_attn: Vec<Tensor>,
}

/// Column sums of a rank-2 tensor (gradient of a broadcast bias).
fn column_sums(x: &Tensor) -> Tensor {
    let (rows, cols) = (x.shape()[0], x.shape()[1]);
    let mut out = Tensor::zeros(&[cols]);
    for r in 0..rows {
        for (o, &v) in out.data_mut().iter_mut().zip(x.row(r)) {
            *o += v;
        }
    }
    out
}

/// Seed gradient of the squared-error term: `2·(prediction − x) / (N·T)`
/// on slots 2..T, zero on the first slot (excluded from the objective).
pub fn loss_seed(prediction: &Tensor, x: &Tensor, config: &ModelConfig) -> Result<Tensor> {
    if prediction.shape() != x.shape() {
        return Err(Error::shape(format!(
            "loss seed needs equal shapes, got {:?} and {:?}",
            prediction.shape(),
            x.shape()
        )));
    }
    let (n, t_len) = (config.n_series, config.window);
    let scale = 2.0 / (n * t_len) as f64;
    let mut seed = Tensor::zeros(&[n, t_len]);
    for i in 0..n {
        for t0 in 1..t_len {
            let d = prediction.get2(i, t0) - x.get2(i, t0);
            seed.set2(i, t0, scale * d);
        }
    }
    Ok(seed)
}

/// Seed gradient of `Σ_t prediction[target, t]`: ones on the target row,
/// zeros elsewhere. This is the scalar the detector differentiates.
pub fn target_sum_seed(config: &ModelConfig, target: usize) -> Result<Tensor> {
    if target >= config.n_series {
        return Err(Error::arg(format!(
            "target index {} out of range for {} series",
            target, config.n_series
        )));
    }
    let mut seed = Tensor::zeros(&[config.n_series, config.window]);
    for t0 in 0..config.window {
        seed.set2(target, t0, 1.0);
    }
    Ok(seed)
}

/// Backpropagate an arbitrary seed `∂f/∂prediction` through the recorded
/// trace, producing `∂f/∂θ` for every parameter θ and `∂f/∂attention` per
/// head.
pub fn backward(
    trace: &ForwardTrace,
    params: &ModelParams,
    config: &ModelConfig,
    d_prediction: &Tensor,
) -> Result<BackwardPass> {
    let (n, t_len) = (config.n_series, config.window);
    if d_prediction.shape() != [n, t_len] {
        return Err(Error::shape(format!(
            "seed gradient shape {:?} does not match [N={n}, T={t_len}]",
            d_prediction.shape()
        )));
    }
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();

    // Output layer: prediction = ffn_out · w_out + b_out.
    grads.insert(
        "out.w".to_string(),
        trace.ffn_out.transpose2()?.matmul(d_prediction)?,
    );
    grads.insert("out.b".to_string(), column_sums(d_prediction));
    let d_ffn_out = d_prediction.matmul(&params.w_out.transpose2()?)?;

    // Second feed-forward linear: ffn_out = hidden · w2 + b2.
    grads.insert(
        "ffn.w2".to_string(),
        trace.ffn_hidden.transpose2()?.matmul(&d_ffn_out)?,
    );
    grads.insert("ffn.b2".to_string(), column_sums(&d_ffn_out));
    let d_hidden = d_ffn_out.matmul(&params.ffn_w2.transpose2()?)?;

    // Leaky rectifier.
    let slope = config.leaky_slope;
    let d_pre = d_hidden.zip_map(&trace.ffn_pre, |g, z| if z > 0.0 { g } else { g * slope })?;

    // First feed-forward linear: ffn_pre = combined · w1 + b1.
    grads.insert(
        "ffn.w1".to_string(),
        trace.combined.transpose2()?.matmul(&d_pre)?,
    );
    grads.insert("ffn.b1".to_string(), column_sums(&d_pre));
    let d_combined = d_pre.matmul(&params.ffn_w1.transpose2()?)?;

    // Head combination: combined = Σ_k output_k · w_combine[k].
    let mut g_combine = Tensor::zeros(&[params.heads.len()]);
    let mut d_x_emb = Tensor::zeros(&[n, config.embed_dim]);
    let mut d_attn_heads = Vec::with_capacity(params.heads.len());

    for (k, (head, htrace)) in params.heads.iter().zip(&trace.heads).enumerate() {
        let wk = params.w_combine.data()[k];
        g_combine.data_mut()[k] = htrace
            .output
            .data()
            .iter()
            .zip(d_combined.data())
            .map(|(&o, &g)| o * g)
            .sum();
        // d output_k = w_combine[k] · d_combined
        let d_out = d_combined.map(|g| g * wk);

        // Head output: out[i,t] = Σ_j attn[i,j] · value[j,i,t].
        let mut d_attn = Tensor::zeros(&[n, n]);
        let mut d_value = Tensor::zeros(&[n, n, t_len]);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                let aij = htrace.attn.get2(i, j);
                for t0 in 0..t_len {
                    let g = d_out.get2(i, t0);
                    acc += g * htrace.value.get3(j, i, t0);
                    let cur = d_value.get3(j, i, t0);
                    d_value.set3(j, i, t0, cur + aij * g);
                }
                d_attn.set2(i, j, acc);
            }
        }

        // Softmax rows: ds[i,j] = a[i,j]·(dA[i,j] − Σ_l dA[i,l]·a[i,l]).
        let mut d_scores = Tensor::zeros(&[n, n]);
        for i in 0..n {
            let arow = htrace.attn.row(i);
            let grow = d_attn.row(i);
            let dot: f64 = arow.iter().zip(grow).map(|(&a, &g)| a * g).sum();
            for j in 0..n {
                d_scores.set2(i, j, arow[j] * (grow[j] - dot));
            }
        }

        // Mask product: scores = scores_raw ⊙ mask.
        let g_mask = d_scores.zip_map(&htrace.scores_raw, |g, s| g * s)?;
        let d_scores_raw = d_scores.zip_map(&head.mask, |g, m| g * m)?;

        // Scaled product: scores_raw = (q · kᵀ) / (τ·√qk_dim).
        let scale = 1.0 / (config.temperature * (config.qk_dim as f64).sqrt());
        let mut d_q = d_scores_raw.matmul(&htrace.k)?;
        d_q.scale_in_place(scale);
        let mut d_k = d_scores_raw.transpose2()?.matmul(&htrace.q)?;
        d_k.scale_in_place(scale);

        // Query/key projections from the shared embedding.
        grads.insert(format!("head{k}.w_q"), trace.x_emb.transpose2()?.matmul(&d_q)?);
        grads.insert(format!("head{k}.b_q"), column_sums(&d_q));
        grads.insert(format!("head{k}.w_k"), trace.x_emb.transpose2()?.matmul(&d_k)?);
        grads.insert(format!("head{k}.b_k"), column_sums(&d_k));
        d_x_emb.add_scaled(&d_q.matmul(&head.w_q.transpose2()?)?, 1.0)?;
        d_x_emb.add_scaled(&d_k.matmul(&head.w_k.transpose2()?)?, 1.0)?;

        // Self shift: value[i,i,t] = conv[i,i,t−1] (zero at t = 1), so the
        // incoming gradient shifts left on the diagonal; the last diagonal
        // slot of conv influences nothing.
        let mut d_conv = d_value;
        for i in 0..n {
            for t0 in 0..t_len - 1 {
                let v = d_conv.get3(i, i, t0 + 1);
                d_conv.set3(i, i, t0, v);
            }
            d_conv.set3(i, i, t_len - 1, 0.0);
        }

        // Convolution: conv[i,j,t] = Σ_{s≤t} kernel[i,j,T−1−t+s]·x[i,s]/(t+1).
        let mut g_kernel = Tensor::zeros(&[n, n, t_len]);
        for i in 0..n {
            let xrow = trace.input.row(i);
            for j in 0..n {
                for t0 in 0..t_len {
                    let g = d_conv.get3(i, j, t0);
                    if g == 0.0 {
                        continue;
                    }
                    let inv = 1.0 / (t0 + 1) as f64;
                    let base = t_len - 1 - t0;
                    for (s0, &xv) in xrow.iter().enumerate().take(t0 + 1) {
                        let off = g_kernel.idx3(i, j, base + s0);
                        g_kernel.data_mut()[off] += g * xv * inv;
                    }
                }
            }
        }
        grads.insert(format!("head{k}.kernel"), g_kernel);
        grads.insert(format!("head{k}.mask"), g_mask);
        d_attn_heads.push(d_attn);
    }
    grads.insert("combine.w".to_string(), g_combine);

    // Embedding: x_emb = x · w_emb + b_emb.
    grads.insert(
        "embed.w".to_string(),
        trace.input.transpose2()?.matmul(&d_x_emb)?,
    );
    grads.insert("embed.b".to_string(), column_sums(&d_x_emb));

    Ok(BackwardPass {
        grads,
        d_attn: d_attn_heads,
    })
}

/// Gradients of the full training objective at the trace: squared-error
/// seed through [`backward`], plus the L1 subgradients on kernels and
/// masks (`sign`, with `sign(0) = 0`).
pub fn loss_gradients(
    trace: &ForwardTrace,
    params: &ModelParams,
    config: &ModelConfig,
    x: &Tensor,
) -> Result<BackwardPass> {
    let seed = loss_seed(&trace.prediction, x, config)?;
    let mut pass = backward(trace, params, config, &seed)?;
    for (k, head) in params.heads.iter().enumerate() {
        if config.lambda_kernel != 0.0 {
            let g = pass
                .grads
                .get_mut(&format!("head{k}.kernel"))
                .expect("kernel gradient present");
            let lk = config.lambda_kernel;
            for (gv, &kv) in g.data_mut().iter_mut().zip(head.kernel.data()) {
                *gv += lk * sign(kv);
            }
        }
        if config.lambda_mask != 0.0 {
            let g = pass
                .grads
                .get_mut(&format!("head{k}.mask"))
                .expect("mask gradient present");
            let lm = config.lambda_mask;
            for (gv, &mv) in g.data_mut().iter_mut().zip(head.mask.data()) {
                *gv += lm * sign(mv);
            }
        }
    }
    Ok(pass)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
