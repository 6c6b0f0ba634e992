//! Forward pass: every stage as a standalone operation plus a fused
//! [`forward`] that caches all intermediates in a [`ForwardTrace`].
//!
//! The trace exists because two downstream consumers need the
//! intermediates: the optimizer (backward pass) and the relevance
//! decomposition (which divides by the recorded layer outputs).

use crate::error::{Error, Result};
use crate::model::{HeadParams, ModelConfig, ModelParams};
use crate::tensor::{leaky_relu, linear_forward, softmax, Tensor};

/// Per-head intermediates.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    /// Query matrix `[N, qk_dim]`.
    pub q: Tensor,
    /// Key matrix `[N, qk_dim]`.
    pub k: Tensor,
    /// Scaled score matrix `Q·Kᵀ / (τ·√qk_dim)` before the mask, `[N, N]`.
    pub scores_raw: Tensor,
    /// Masked scores (elementwise product with the mask), `[N, N]`.
    pub scores: Tensor,
    /// Row-stochastic attention matrix, `[N, N]`.
    pub attn: Tensor,
    /// Convolution output before the self shift, `[N, N, T]` indexed
    /// `(source, target, slot)`.
    pub conv: Tensor,
    /// Value tensor: convolution output with self slices right-shifted,
    /// `[N, N, T]`.
    pub value: Tensor,
    /// Head output `[N, T]`: `out[i,t] = Σ_j attn[i,j] · value[j,i,t]`.
    pub output: Tensor,
}

/// Complete record of one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// The input window `[N, T]`.
    pub input: Tensor,
    /// Embedded input `[N, d]` (feeds only the query/key projections).
    pub x_emb: Tensor,
    /// Per-head intermediates.
    pub heads: Vec<HeadTrace>,
    /// Head outputs combined by the per-head weights, `[N, T]`.
    pub combined: Tensor,
    /// Feed-forward pre-activation `[N, ffn_dim]`.
    pub ffn_pre: Tensor,
    /// Feed-forward hidden activation `[N, ffn_dim]`.
    pub ffn_hidden: Tensor,
    /// Feed-forward output `[N, T]`.
    pub ffn_out: Tensor,
    /// Final prediction `[N, T]`.
    pub prediction: Tensor,
}

/// Project each series row into the embedding space:
/// `X [N,T] · W [T,d] + b`.
pub fn embed(x: &Tensor, w_emb: &Tensor, b_emb: &Tensor) -> Result<Tensor> {
    linear_forward(x, w_emb, b_emb)
}

/// Per-pair causal convolution.
///
/// With 1-indexed slots, `out[i,j,t] = (Σ_{s=1..t} kernel[i,j,T−t+s] ·
/// x[i,s]) / t`: the series is zero-padded on the left so only slots up to
/// `t` contribute, the division by `t` rescales for the shrinking overlap,
/// and the kernel's last slot always multiplies the current observation
/// (slot index encodes the lag: last = lag 0).
pub fn causal_convolve(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (n, t_len) = (x.shape()[0], x.shape()[1]);
    if kernel.shape() != [n, n, t_len] {
        return Err(Error::shape(format!(
            "kernel shape {:?} does not match input [N={n}, T={t_len}]",
            kernel.shape()
        )));
    }
    let mut out = Tensor::zeros(&[n, n, t_len]);
    for i in 0..n {
        let xrow = x.row(i);
        for j in 0..n {
            for t0 in 0..t_len {
                // 0-indexed: sum over s0 in 0..=t0 of
                // kernel[i, j, T-1-t0+s0] * x[i, s0], divided by (t0 + 1).
                let base = t_len - 1 - t0;
                let mut acc = 0.0;
                for (s0, &xv) in xrow.iter().enumerate().take(t0 + 1) {
                    acc += kernel.get3(i, j, base + s0) * xv;
                }
                out.set3(i, j, t0, acc / (t0 + 1) as f64);
            }
        }
    }
    Ok(out)
}

/// Right-shift every self slice one slot: `out[i,i,:] = [0, in[i,i,1..T]]`
/// (1-indexed), hiding each series' current value from its own
/// prediction. Off-diagonal slices pass through unchanged.
pub fn shift_self(conv: &Tensor) -> Result<Tensor> {
    let shape = conv.shape();
    if shape.len() != 3 || shape[0] != shape[1] {
        return Err(Error::shape(format!(
            "shift_self expects [N,N,T], got {shape:?}"
        )));
    }
    let (n, t_len) = (shape[0], shape[2]);
    let mut out = conv.clone();
    for i in 0..n {
        out.set3(i, i, 0, 0.0);
        for t0 in 1..t_len {
            let v = conv.get3(i, i, t0 - 1);
            out.set3(i, i, t0, v);
        }
    }
    Ok(out)
}

/// One attention head over series.
///
/// Queries and keys come from the embedding; scores are scaled by
/// `1/(τ·√qk_dim)`, multiplied by the learnable mask, and row-softmaxed
/// into the attention matrix. The head output aggregates values per
/// target: `A[i,t] = Σ_j 𝒜[i,j] · V[j,i,t]`.
///
/// Returns `(head output [N,T], attention matrix [N,N])`; [`forward`]
/// captures the full [`HeadTrace`].
pub fn attention_head(
    x_emb: &Tensor,
    value: &Tensor,
    head: &HeadParams,
    temperature: f64,
) -> Result<(Tensor, Tensor)> {
    let trace = attention_head_trace(x_emb, value, head, temperature)?;
    Ok((trace.output, trace.attn))
}

/// Full-trace version of [`attention_head`]; `value` is moved into the
/// returned trace.
fn attention_head_trace(
    x_emb: &Tensor,
    value: &Tensor,
    head: &HeadParams,
    temperature: f64,
) -> Result<HeadTrace> {
    let n = x_emb.shape()[0];
    let t_len = value.shape()[2];
    let qk_dim = head.w_q.shape()[1];
    let q = linear_forward(x_emb, &head.w_q, &head.b_q)?;
    let k = linear_forward(x_emb, &head.w_k, &head.b_k)?;
    let scale = 1.0 / (temperature * (qk_dim as f64).sqrt());
    let mut scores_raw = q.matmul(&k.transpose2()?)?;
    scores_raw.scale_in_place(scale);
    let scores = scores_raw.zip_map(&head.mask, |s, m| s * m)?;
    let attn = softmax(&scores, 1)?;
    let mut output = Tensor::zeros(&[n, t_len]);
    for i in 0..n {
        for j in 0..n {
            let w = attn.get2(i, j);
            if w == 0.0 {
                continue;
            }
            for t0 in 0..t_len {
                let cur = output.get2(i, t0);
                output.set2(i, t0, cur + w * value.get3(j, i, t0));
            }
        }
    }
    Ok(HeadTrace {
        q,
        k,
        scores_raw,
        scores,
        attn,
        conv: Tensor::zeros(&[0]), // filled by the caller
        value: value.clone(),
        output,
    })
}

/// Combine head outputs with one scalar weight per head (no bias):
/// `out[n,t] = Σ_k heads[k][n,t] · w[k]`.
pub fn multi_head(head_outputs: &[Tensor], w_combine: &Tensor) -> Result<Tensor> {
    if head_outputs.is_empty() {
        return Err(Error::arg("multi_head needs at least one head".to_string()));
    }
    if w_combine.shape() != [head_outputs.len()] {
        return Err(Error::shape(format!(
            "combination weights {:?} do not match head count {}",
            w_combine.shape(),
            head_outputs.len()
        )));
    }
    let mut out = Tensor::zeros(head_outputs[0].shape());
    for (k, head) in head_outputs.iter().enumerate() {
        out.add_scaled(head, w_combine.data()[k])?;
    }
    Ok(out)
}

/// Feed-forward block along the time axis of each series row:
/// `Linear(leaky_relu(Linear(x)))`, `T → ffn_dim → T`.
pub fn ffn(att: &Tensor, params: &ModelParams, config: &ModelConfig) -> Result<Tensor> {
    let (_, _, out) = ffn_trace(att, params, config)?;
    Ok(out)
}

fn ffn_trace(
    att: &Tensor,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(Tensor, Tensor, Tensor)> {
    let pre = linear_forward(att, &params.ffn_w1, &params.ffn_b1)?;
    let hidden = leaky_relu(&pre, config.leaky_slope);
    let out = linear_forward(&hidden, &params.ffn_w2, &params.ffn_b2)?;
    Ok((pre, hidden, out))
}

/// Full forward pass producing predictions and all intermediates.
pub fn forward(x: &Tensor, params: &ModelParams, config: &ModelConfig) -> Result<ForwardTrace> {
    let (n, t_len) = (config.n_series, config.window);
    if x.shape() != [n, t_len] {
        return Err(Error::shape(format!(
            "input shape {:?} does not match configured [N={n}, T={t_len}]",
            x.shape()
        )));
    }
    if !x.is_finite() {
        return Err(Error::arg("input window contains non-finite values".to_string()));
    }
    let x_emb = embed(x, &params.w_emb, &params.b_emb)?;
    let mut heads = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let conv = causal_convolve(x, &head.kernel)?;
        let value = shift_self(&conv)?;
        let mut trace = attention_head_trace(&x_emb, &value, head, config.temperature)?;
        trace.conv = conv;
        heads.push(trace);
    }
    let head_outputs: Vec<Tensor> = heads.iter().map(|h| h.output.clone()).collect();
    let combined = multi_head(&head_outputs, &params.w_combine)?;
    let (ffn_pre, ffn_hidden, ffn_out) = ffn_trace(&combined, params, config)?;
    let prediction = linear_forward(&ffn_out, &params.w_out, &params.b_out)?;
    Ok(ForwardTrace {
        input: x.clone(),
        x_emb,
        heads,
        combined,
        ffn_pre,
        ffn_hidden,
        ffn_out,
        prediction,
    })
}

/// Additive pieces of the training objective.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    /// Squared-error term: slots 2..T summed, divided by `N·T`.
    pub mse: f64,
    /// Σ over heads of the kernel L1 norms (unweighted).
    pub kernel_l1: f64,
    /// Σ over heads of the mask L1 norms (unweighted).
    pub mask_l1: f64,
    /// `mse + λ_kernel·kernel_l1 + λ_mask·mask_l1`.
    pub total: f64,
}

/// Training objective. The first slot of every series is excluded from
/// the error sum (the self shift leaves slot 1's self path uninformed),
/// but the denominator stays `N·T`; the constant factor does not move the
/// optimum and keeps the objective exactly comparable across
/// implementations.
pub fn loss(
    prediction: &Tensor,
    x: &Tensor,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<f64> {
    Ok(loss_components(prediction, x, params, config)?.total)
}

/// [`loss`] with the individual terms exposed for reporting.
pub fn loss_components(
    prediction: &Tensor,
    x: &Tensor,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<LossBreakdown> {
    if prediction.shape() != x.shape() || prediction.shape().len() != 2 {
        return Err(Error::shape(format!(
            "loss needs equally shaped [N,T] tensors, got {:?} and {:?}",
            prediction.shape(),
            x.shape()
        )));
    }
    let (n, t_len) = (x.shape()[0], x.shape()[1]);
    let mut sq = 0.0;
    for i in 0..n {
        for t0 in 1..t_len {
            let d = prediction.get2(i, t0) - x.get2(i, t0);
            sq += d * d;
        }
    }
    let mse = sq / (n * t_len) as f64;
    let kernel_l1: f64 = params.heads.iter().map(|h| h.kernel.abs_sum()).sum();
    let mask_l1: f64 = params.heads.iter().map(|h| h.mask.abs_sum()).sum();
    let total = mse + config.lambda_kernel * kernel_l1 + config.lambda_mask * mask_l1;
    Ok(LossBreakdown {
        mse,
        kernel_l1,
        mask_l1,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::he_init;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_series: 2,
            window: 4,
            embed_dim: 8,
            qk_dim: 4,
            heads: 2,
            ffn_dim: 8,
            temperature: 1.0,
            lambda_kernel: 0.0,
            lambda_mask: 0.0,
            leaky_slope: 0.01,
        }
    }

    #[test]
    fn embed_constant_cases() {
        // Zero weight: every row is the bias. Zero input: same.
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = Tensor::zeros(&[3, 4]);
        let b = Tensor::filled(&[4], 0.7);
        let e = embed(&x, &w, &b).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.7));

        let w2 = he_init(&[3, 4], 3, 9).unwrap();
        let e2 = embed(&Tensor::zeros(&[2, 3]), &w2, &b).unwrap();
        assert!(e2.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn causal_convolve_hand_example() {
        // One series, two slots, kernel [1,1]:
        // slot 1 sees only x[1] through the kernel's last tap -> 1.0;
        // slot 2 averages (1·1 + 1·2)/2 -> 1.5.
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let kernel = Tensor::from_vec(&[1, 1, 2], vec![1.0, 1.0]).unwrap();
        let out = causal_convolve(&x, &kernel).unwrap();
        assert_eq!(out.data(), &[1.0, 1.5]);
    }

    #[test]
    fn causal_convolve_zero_kernel_gives_zeros() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -1.0, 2.0, 0.5, 0.0, 3.0]).unwrap();
        let out = causal_convolve(&x, &Tensor::zeros(&[2, 2, 3])).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn causal_convolve_ignores_future_slots() {
        // Perturbing x[i, s] must leave conv[.., t] unchanged for t < s.
        let n = 3;
        let t_len = 5;
        let x = he_init(&[n, t_len], 1, 11).unwrap();
        let kernel = he_init(&[n, n, t_len], t_len, 12).unwrap();
        let base = causal_convolve(&x, &kernel).unwrap();
        for i in 0..n {
            for s0 in 0..t_len {
                let mut xp = x.clone();
                let off = xp.idx2(i, s0);
                xp.data_mut()[off] += 1.5;
                let pert = causal_convolve(&xp, &kernel).unwrap();
                for a in 0..n {
                    for b in 0..n {
                        for t0 in 0..s0 {
                            assert_eq!(
                                base.get3(a, b, t0),
                                pert.get3(a, b, t0),
                                "slot {t0} changed by perturbing ({i},{s0})"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn shift_self_moves_diagonal_and_keeps_off_diagonal() {
        let mut conv = Tensor::zeros(&[2, 2, 3]);
        for (idx, v) in conv.data_mut().iter_mut().enumerate() {
            *v = idx as f64 + 1.0;
        }
        let shifted = shift_self(&conv).unwrap();
        // Diagonal slice [a,b,c] becomes [0,a,b].
        assert_eq!(shifted.get3(0, 0, 0), 0.0);
        assert_eq!(shifted.get3(0, 0, 1), conv.get3(0, 0, 0));
        assert_eq!(shifted.get3(0, 0, 2), conv.get3(0, 0, 1));
        assert_eq!(shifted.get3(1, 1, 0), 0.0);
        // Off-diagonal slices bit-identical.
        for t0 in 0..3 {
            assert_eq!(shifted.get3(0, 1, t0), conv.get3(0, 1, t0));
            assert_eq!(shifted.get3(1, 0, t0), conv.get3(1, 0, t0));
        }
    }

    #[test]
    fn attention_collapses_to_self_under_extreme_scores() {
        // A huge positive diagonal mask with large embeddings forces the
        // softmax to one-hot rows, so the head output equals the shifted
        // self slice.
        let n = 3;
        let t_len = 4;
        let d = 5;
        let x_emb = Tensor::filled(&[n, d], 1.0);
        let value = he_init(&[n, n, t_len], 1, 21).unwrap();
        let mut mask = Tensor::filled(&[n, n], -1e3);
        for i in 0..n {
            mask.set2(i, i, 1e3);
        }
        let head = HeadParams {
            w_q: Tensor::filled(&[d, 2], 1.0),
            b_q: Tensor::zeros(&[2]),
            w_k: Tensor::filled(&[d, 2], 1.0),
            b_k: Tensor::zeros(&[2]),
            kernel: Tensor::zeros(&[n, n, t_len]),
            mask,
        };
        let (out, attn) = attention_head(&x_emb, &value, &head, 1.0).unwrap();
        for i in 0..n {
            assert!((attn.get2(i, i) - 1.0).abs() < 1e-12);
            for t0 in 0..t_len {
                assert!((out.get2(i, t0) - value.get3(i, i, t0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_uniform_when_scores_constant() {
        let n = 4;
        let t_len = 3;
        let d = 5;
        // Identical embedding rows make Q·Kᵀ constant; an all-ones mask
        // keeps it constant, so softmax rows are uniform 1/N.
        let x_emb = Tensor::filled(&[n, d], 0.3);
        let value = he_init(&[n, n, t_len], 1, 22).unwrap();
        let head = HeadParams {
            w_q: he_init(&[d, 3], d, 23).unwrap(),
            b_q: Tensor::zeros(&[3]),
            w_k: he_init(&[d, 3], d, 24).unwrap(),
            b_k: Tensor::zeros(&[3]),
            kernel: Tensor::zeros(&[n, n, t_len]),
            mask: Tensor::filled(&[n, n], 1.0),
        };
        let (_, attn) = attention_head(&x_emb, &value, &head, 1.0).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((attn.get2(i, j) - 1.0 / n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn multi_head_trivial_combinations() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        // Single head with weight 1 is the identity.
        let one = multi_head(&[a.clone()], &Tensor::from_vec(&[1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(one, a);
        // Zero weights give zeros.
        let zero = multi_head(
            &[a.clone(), b.clone()],
            &Tensor::zeros(&[2]),
        )
        .unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        // Equal half weights give the elementwise mean.
        let mean = multi_head(&[a, b], &Tensor::from_vec(&[2], vec![0.5, 0.5]).unwrap()).unwrap();
        assert_eq!(mean.data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn ffn_zero_weights_yield_bias_determined_constant() {
        // With W1 = 0 the hidden is leaky_relu(b1) per row; with W2 = 0 the
        // output is exactly b2. With W2 nonzero it is b2 + lrelu(b1)·W2.
        let cfg = tiny_config();
        let mut params = ModelParams::init(&cfg, 31).unwrap();
        params.ffn_w1 = Tensor::zeros(&[cfg.window, cfg.ffn_dim]);
        params.ffn_b1 = he_init(&[cfg.ffn_dim], 1, 32).unwrap();
        params.ffn_b2 = he_init(&[cfg.window], 1, 33).unwrap();
        let att = he_init(&[cfg.n_series, cfg.window], 1, 34).unwrap();
        let out = ffn(&att, &params, &cfg).unwrap();
        let hidden = leaky_relu(&params.ffn_b1, cfg.leaky_slope);
        let expect = linear_forward(
            &Tensor::from_vec(&[1, cfg.ffn_dim], hidden.data().to_vec()).unwrap(),
            &params.ffn_w2,
            &params.ffn_b2,
        )
        .unwrap();
        for i in 0..cfg.n_series {
            for t0 in 0..cfg.window {
                assert!((out.get2(i, t0) - expect.get2(0, t0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 41).unwrap();
        let x = he_init(&[cfg.n_series, cfg.window], 1, 42).unwrap();
        let a = forward(&x, &params, &cfg).unwrap();
        let b = forward(&x, &params, &cfg).unwrap();
        assert_eq!(a.prediction.shape(), &[cfg.n_series, cfg.window]);
        assert_eq!(a.prediction, b.prediction);
        assert_eq!(a.x_emb, b.x_emb);
        for (ha, hb) in a.heads.iter().zip(&b.heads) {
            assert_eq!(ha.attn, hb.attn);
            assert_eq!(ha.value, hb.value);
        }
    }

    #[test]
    fn forward_attention_rows_are_stochastic() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 51).unwrap();
        let x = he_init(&[cfg.n_series, cfg.window], 1, 52).unwrap();
        let trace = forward(&x, &params, &cfg).unwrap();
        for head in &trace.heads {
            for i in 0..cfg.n_series {
                let s: f64 = head.attn.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(head.attn.row(i).iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 61).unwrap();
        assert!(forward(&Tensor::zeros(&[3, 4]), &params, &cfg).is_err());
        let mut x = Tensor::zeros(&[2, 4]);
        x.data_mut()[0] = f64::NAN;
        assert!(forward(&x, &params, &cfg).is_err());
    }

    #[test]
    fn loss_matches_hand_computations() {
        let cfg = tiny_config();
        let mut params = ModelParams::init(&cfg, 71).unwrap();
        let x = he_init(&[2, 4], 1, 72).unwrap();

        // Perfect prediction, no penalties: zero.
        assert_eq!(loss(&x, &x, &params, &cfg).unwrap(), 0.0);

        // Error of exactly 1 on slots 2..T: N·(T−1) unit errors over the
        // N·T denominator = 6/8.
        let mut pred = x.clone();
        for i in 0..2 {
            for t0 in 1..4 {
                let v = pred.get2(i, t0);
                pred.set2(i, t0, v + 1.0);
            }
        }
        // Slot 1 error must not count.
        pred.set2(0, 0, pred.get2(0, 0) + 100.0);
        assert!((loss(&pred, &x, &params, &cfg).unwrap() - 0.75).abs() < 1e-12);

        // With penalties and perfect prediction the loss is exactly the
        // weighted L1 norms summed over heads.
        let cfg_pen = ModelConfig {
            lambda_kernel: 0.5,
            lambda_mask: 2.0,
            ..cfg
        };
        for head in &mut params.heads {
            head.kernel = Tensor::filled(&[2, 2, 4], -0.25);
            head.mask = Tensor::filled(&[2, 2], 1.5);
        }
        let expect = 0.5 * (2.0 * 16.0 * 0.25) + 2.0 * (2.0 * 4.0 * 1.5);
        assert!((loss(&x, &x, &params, &cfg_pen).unwrap() - expect).abs() < 1e-12);
    }
}
