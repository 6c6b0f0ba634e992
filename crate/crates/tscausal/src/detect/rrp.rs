//! Relevance propagation rules and the full backward decomposition of a
//! prediction into attention-level and kernel-level relevance.
//!
//! The rules decompose a layer output's relevance over its inputs in
//! proportion to each input's signed contribution `x_i·∂f_j/∂x_i`, divided
//! by the recorded layer output `f_j`:
//!
//! * affine layers additionally assign `b_j·R_j/f_j` to the bias — mass
//!   deliberately leaves the input path there (the bias explains part of
//!   the output);
//! * elementwise layers use the pointwise derivative, which makes the
//!   leaky rectifier an exact pass-through away from zero;
//! * products of two tensors split the product's relevance into *both*
//!   operands, each receiving the full mass (relevance is counted once
//!   per operand, not divided between them).
//!
//! Denominators smaller than [`STABILIZER`] in magnitude are replaced by
//! a signed `f + ε·sign(f)`; every such intervention on a nonzero
//! relevance is counted and reported.

use crate::error::{Error, Result};
use crate::model::{ForwardTrace, ModelConfig, ModelParams};
use crate::tensor::Tensor;

/// Magnitude below which a relevance denominator is stabilized.
pub const STABILIZER: f64 = 1e-9;

/// Stabilize a denominator: returns the (possibly adjusted) denominator
/// and whether an adjustment happened.
#[inline]
fn stab(f: f64) -> (f64, bool) {
    if f.abs() < STABILIZER {
        let sign = if f < 0.0 || (f == 0.0 && f.is_sign_negative()) {
            -1.0
        } else {
            1.0
        };
        (f + sign * STABILIZER, true)
    } else {
        (f, false)
    }
}

/// Relevance split of an affine layer `y = x·W + b`.
#[derive(Debug, Clone)]
pub struct AffineRelevance {
    /// Relevance assigned to each input coordinate.
    pub lower: Vec<f64>,
    /// Relevance absorbed by the bias (0 for bias-free layers).
    pub bias: f64,
    /// Stabilized divisions that carried nonzero relevance.
    pub stabilizer_events: usize,
}

/// Propagate relevance through an affine layer.
///
/// `x` is the layer input (length `in`), `w` its `[in, out]` weight, `b`
/// the optional bias, `y` the *recorded* layer output (length `out`), and
/// `r_upper` the relevance arriving at each output.
pub fn rrp_affine(
    x: &[f64],
    w: &Tensor,
    b: Option<&[f64]>,
    y: &[f64],
    r_upper: &[f64],
) -> Result<AffineRelevance> {
    if w.shape().len() != 2 {
        return Err(Error::shape(format!(
            "rrp_affine weight must be rank-2, got {:?}",
            w.shape()
        )));
    }
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    if x.len() != din || y.len() != dout || r_upper.len() != dout {
        return Err(Error::shape(format!(
            "rrp_affine got x:{}, y:{}, r:{} for weight [{din},{dout}]",
            x.len(),
            y.len(),
            r_upper.len()
        )));
    }
    if let Some(bias) = b {
        if bias.len() != dout {
            return Err(Error::shape(format!(
                "rrp_affine bias has length {}, expected {dout}",
                bias.len()
            )));
        }
    }
    let mut lower = vec![0.0; din];
    let mut bias_rel = 0.0;
    let mut events = 0;
    for j in 0..dout {
        let r = r_upper[j];
        if r == 0.0 {
            continue;
        }
        let (denom, stabilized) = stab(y[j]);
        if stabilized {
            events += 1;
        }
        let ratio = r / denom;
        for (i, l) in lower.iter_mut().enumerate() {
            *l += x[i] * w.get2(i, j) * ratio;
        }
        if let Some(bias) = b {
            bias_rel += bias[j] * ratio;
        }
    }
    Ok(AffineRelevance {
        lower,
        bias: bias_rel,
        stabilizer_events: events,
    })
}

/// Propagate relevance through an elementwise layer `y_i = g(x_i)` with
/// derivative `deriv_i = g'(x_i)`: `R_i = x_i·deriv_i·R_i/y_i`.
pub fn rrp_pointwise(
    x: &[f64],
    deriv: &[f64],
    y: &[f64],
    r_upper: &[f64],
) -> Result<AffineRelevance> {
    let n = x.len();
    if deriv.len() != n || y.len() != n || r_upper.len() != n {
        return Err(Error::shape(
            "rrp_pointwise needs equal-length slices".to_string(),
        ));
    }
    let mut lower = vec![0.0; n];
    let mut events = 0;
    for i in 0..n {
        let r = r_upper[i];
        if r == 0.0 {
            continue;
        }
        let (denom, stabilized) = stab(y[i]);
        if stabilized {
            events += 1;
        }
        lower[i] = x[i] * deriv[i] * r / denom;
    }
    Ok(AffineRelevance {
        lower,
        bias: 0.0,
        stabilizer_events: events,
    })
}

/// Relevance split of a matrix product.
#[derive(Debug, Clone)]
pub struct MatmulRelevance {
    /// Relevance on the left operand, same shape as `A`.
    pub r_a: Tensor,
    /// Relevance on the right operand, same shape as `B`.
    pub r_b: Tensor,
    /// Stabilized divisions that carried nonzero relevance.
    pub stabilizer_events: usize,
}

/// Split the relevance of a product `P = A·B` into both operands:
/// `R_A[n,k] = Σ_m A[n,k]·B[k,m]·R[n,m]/P[n,m]` and symmetrically for
/// `R_B`. Each operand receives the full incoming mass (the split is a
/// duplication, not a partition).
pub fn rrp_matmul(a: &Tensor, b: &Tensor, r_prod: &Tensor) -> Result<MatmulRelevance> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::shape("rrp_matmul needs rank-2 operands".to_string()));
    }
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let (k2, m) = (b.shape()[0], b.shape()[1]);
    if k != k2 || r_prod.shape() != [n, m] {
        return Err(Error::shape(format!(
            "rrp_matmul shapes: A {:?}, B {:?}, R {:?}",
            a.shape(),
            b.shape(),
            r_prod.shape()
        )));
    }
    let prod = a.matmul(b)?;
    let mut r_a = Tensor::zeros(&[n, k]);
    let mut r_b = Tensor::zeros(&[k, m]);
    let mut events = 0;
    for row in 0..n {
        for col in 0..m {
            let r = r_prod.get2(row, col);
            if r == 0.0 {
                continue;
            }
            let (denom, stabilized) = stab(prod.get2(row, col));
            if stabilized {
                events += 1;
            }
            let ratio = r / denom;
            for l in 0..k {
                let w = a.get2(row, l) * b.get2(l, col) * ratio;
                let ra = r_a.idx2(row, l);
                r_a.data_mut()[ra] += w;
                let rb = r_b.idx2(l, col);
                r_b.data_mut()[rb] += w;
            }
        }
    }
    Ok(MatmulRelevance {
        r_a,
        r_b,
        stabilizer_events: events,
    })
}

/// Relevance landing on the attention matrices and convolution kernels
/// for one target series, plus the mass absorbed by each biased layer.
#[derive(Debug, Clone)]
pub struct RelevanceMap {
    /// The target series this decomposition explains.
    pub target: usize,
    /// Per head: relevance on the attention matrix `[N, N]` (only the
    /// target's row is reachable from the target's predictions).
    pub attn: Vec<Tensor>,
    /// Per head: relevance on the kernels `[N, N, T]` (only the
    /// `[source, target, :]` slices are reachable).
    pub kernel: Vec<Tensor>,
    /// Relevance absorbed by the output-layer bias.
    pub bias_output: f64,
    /// Relevance absorbed by the second feed-forward bias.
    pub bias_ffn2: f64,
    /// Relevance absorbed by the first feed-forward bias.
    pub bias_ffn1: f64,
    /// Total stabilized divisions across all rules.
    pub stabilizer_events: usize,
}

impl RelevanceMap {
    /// Total bias-absorbed relevance.
    pub fn bias_total(&self) -> f64 {
        self.bias_output + self.bias_ffn2 + self.bias_ffn1
    }

    /// Total relevance on attention matrices, summed over heads.
    pub fn attn_total(&self) -> f64 {
        self.attn.iter().map(Tensor::sum).sum()
    }

    /// Total relevance on kernels, summed over heads.
    pub fn kernel_total(&self) -> f64 {
        self.kernel.iter().map(Tensor::sum).sum()
    }
}

/// One-hot initial relevance over series: mass 1 at `target`.
pub fn init_relevance(target: usize, n: usize) -> Result<Tensor> {
    if target >= n {
        return Err(Error::arg(format!(
            "relevance target {target} out of range for {n} series"
        )));
    }
    let mut r = Tensor::zeros(&[n]);
    r.data_mut()[target] = 1.0;
    Ok(r)
}

/// Decompose the predictions of `target` back to the attention matrices
/// and convolution kernels.
///
/// The initial mass is the one-hot [`init_relevance`] over series. The
/// target's predicted slots enter through their bias-free sum
/// `Σ_t prediction[target, t]` (the same scalar the gradient modulation
/// differentiates), so the mass first divides proportionally over slots,
/// then flows through the output layer, both feed-forward linears (bias
/// mass retained per layer), the rectifier (pass-through), the head
/// combination, and per head through the attention-weighted value product
/// and the convolution product. The embedding and query/key projections
/// receive no relevance: attention matrices and kernels are where the
/// causal structure lives, and propagation stops there.
pub fn propagate(
    trace: &ForwardTrace,
    params: &ModelParams,
    config: &ModelConfig,
    target: usize,
) -> Result<RelevanceMap> {
    let (n, t_len) = (config.n_series, config.window);
    let h = params.heads.len();
    init_relevance(target, n)?; // validates the index; mass is implicit 1
    let mut events = 0;

    // Initial split: the target's one-hot mass divides over the predicted
    // slots in proportion to their share of the bias-free sum.
    let pred_row = trace.prediction.row(target);
    let sum_pred: f64 = pred_row.iter().sum();
    let (denom, stabilized) = stab(sum_pred);
    if stabilized {
        events += 1;
    }
    let r_pred: Vec<f64> = pred_row.iter().map(|&p| p / denom).collect();

    // Output layer: prediction row = ffn_out row · w_out + b_out.
    let out_split = rrp_affine(
        trace.ffn_out.row(target),
        &params.w_out,
        Some(params.b_out.data()),
        pred_row,
        &r_pred,
    )?;
    events += out_split.stabilizer_events;

    // Second feed-forward linear.
    let ffn2_split = rrp_affine(
        trace.ffn_hidden.row(target),
        &params.ffn_w2,
        Some(params.ffn_b2.data()),
        trace.ffn_out.row(target),
        &out_split.lower,
    )?;
    events += ffn2_split.stabilizer_events;

    // Rectifier (pass-through away from zero).
    let pre_row = trace.ffn_pre.row(target);
    let deriv: Vec<f64> = pre_row
        .iter()
        .map(|&z| if z > 0.0 { 1.0 } else { config.leaky_slope })
        .collect();
    let relu_split = rrp_pointwise(
        pre_row,
        &deriv,
        trace.ffn_hidden.row(target),
        &ffn2_split.lower,
    )?;
    events += relu_split.stabilizer_events;

    // First feed-forward linear.
    let ffn1_split = rrp_affine(
        trace.combined.row(target),
        &params.ffn_w1,
        Some(params.ffn_b1.data()),
        trace.ffn_pre.row(target),
        &relu_split.lower,
    )?;
    events += ffn1_split.stabilizer_events;
    let r_combined = ffn1_split.lower; // length T

    // Head combination: combined[i,t] = Σ_k head_out_k[i,t]·w_combine[k]
    // — a bias-free affine map per slot.
    let mut r_head_out = vec![vec![0.0; t_len]; h];
    for t0 in 0..t_len {
        let r = r_combined[t0];
        if r == 0.0 {
            continue;
        }
        let y = trace.combined.get2(target, t0);
        let (denom, stabilized) = stab(y);
        if stabilized {
            events += 1;
        }
        let ratio = r / denom;
        for (k, rh) in r_head_out.iter_mut().enumerate() {
            rh[t0] = trace.heads[k].output.get2(target, t0) * params.w_combine.data()[k] * ratio;
        }
    }

    // Per head: attention-weighted value product, self-shift unmapping,
    // and the convolution product.
    let mut attn_maps = Vec::with_capacity(h);
    let mut kernel_maps = Vec::with_capacity(h);
    for (k, htrace) in trace.heads.iter().enumerate() {
        // head_out[target, :] = attn_row [1,N] · V_slice [N,T] where
        // V_slice[j, t] = value[j, target, t].
        let attn_row = Tensor::from_vec(&[1, n], htrace.attn.row(target).to_vec())?;
        let mut v_slice = Tensor::zeros(&[n, t_len]);
        for j in 0..n {
            for t0 in 0..t_len {
                v_slice.set2(j, t0, htrace.value.get3(j, target, t0));
            }
        }
        let r_prod = Tensor::from_vec(&[1, t_len], r_head_out[k].clone())?;
        let split = rrp_matmul(&attn_row, &v_slice, &r_prod)?;
        events += split.stabilizer_events;

        let mut attn_map = Tensor::zeros(&[n, n]);
        for j in 0..n {
            attn_map.set2(target, j, split.r_a.get2(0, j));
        }
        attn_maps.push(attn_map);

        // Un-shift: value[tgt,tgt,t] = conv[tgt,tgt,t−1], so relevance on
        // the self slice moves one slot left; the first value slot is the
        // shifted-in constant zero (its relevance is exactly zero because
        // the numerator vanishes), and the last conv slot fed nothing.
        let mut r_conv = split.r_b; // [N, T], indexed (source, slot)
        for t0 in 0..t_len - 1 {
            let v = r_conv.get2(target, t0 + 1);
            r_conv.set2(target, t0, v);
        }
        r_conv.set2(target, t_len - 1, 0.0);

        // Convolution: conv[j, target, t] is the product of the kernel
        // slice [1,T] with the padded-and-scaled input matrix [T,T] whose
        // (u, t) entry is x[j, u−(T−1−t)]/(t+1) for u ≥ T−1−t.
        let mut kernel_map = Tensor::zeros(&[n, n, t_len]);
        for j in 0..n {
            let mut kappa = Tensor::zeros(&[1, t_len]);
            for u in 0..t_len {
                kappa.set2(0, u, params.heads[k].kernel.get3(j, target, u));
            }
            let mut padded = Tensor::zeros(&[t_len, t_len]);
            let xrow = trace.input.row(j);
            for t0 in 0..t_len {
                let base = t_len - 1 - t0;
                let inv = 1.0 / (t0 + 1) as f64;
                for s0 in 0..=t0 {
                    padded.set2(base + s0, t0, xrow[s0] * inv);
                }
            }
            let r_row = Tensor::from_vec(&[1, t_len], r_conv.row(j).to_vec())?;
            let conv_split = rrp_matmul(&kappa, &padded, &r_row)?;
            events += conv_split.stabilizer_events;
            for u in 0..t_len {
                kernel_map.set3(j, target, u, conv_split.r_a.get2(0, u));
            }
        }
        kernel_maps.push(kernel_map);
    }

    Ok(RelevanceMap {
        target,
        attn: attn_maps,
        kernel: kernel_maps,
        bias_output: out_split.bias,
        bias_ffn2: ffn2_split.bias,
        bias_ffn1: ffn1_split.bias,
        stabilizer_events: events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, ModelParams};
    use crate::tensor::he_init;

    fn tiny_config(heads: usize) -> ModelConfig {
        ModelConfig {
            n_series: 3,
            window: 4,
            embed_dim: 6,
            qk_dim: 4,
            heads,
            ffn_dim: 5,
            temperature: 1.0,
            lambda_kernel: 0.0,
            lambda_mask: 0.0,
            leaky_slope: 0.01,
        }
    }

    #[test]
    fn init_relevance_is_one_hot() {
        let r = init_relevance(1, 4).unwrap();
        assert_eq!(r.data(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(r.sum(), 1.0);
        assert_eq!(init_relevance(0, 1).unwrap().data(), &[1.0]);
        assert!(init_relevance(4, 4).is_err());
    }

    #[test]
    fn affine_rule_hand_examples() {
        // f = 1·2 + 1·2 = 4, no bias, R = 1 → each input gets 2/4.
        let w = Tensor::from_vec(&[2, 1], vec![2.0, 2.0]).unwrap();
        let split = rrp_affine(&[1.0, 1.0], &w, None, &[4.0], &[1.0]).unwrap();
        assert_eq!(split.lower, vec![0.5, 0.5]);
        assert_eq!(split.bias, 0.0);
        assert_eq!(split.stabilizer_events, 0);

        // Same with bias 1: denominator 5 → inputs 0.4 each, bias 0.2.
        let split = rrp_affine(&[1.0, 1.0], &w, Some(&[1.0]), &[5.0], &[1.0]).unwrap();
        for v in &split.lower {
            assert!((v - 0.4).abs() < 1e-15);
        }
        assert!((split.bias - 0.2).abs() < 1e-15);

        // Zero upper relevance propagates zeros.
        let split = rrp_affine(&[1.0, 1.0], &w, Some(&[1.0]), &[5.0], &[0.0]).unwrap();
        assert_eq!(split.lower, vec![0.0, 0.0]);
        assert_eq!(split.bias, 0.0);
    }

    #[test]
    fn affine_rule_conserves_mass_without_bias() {
        let din = 7;
        let dout = 5;
        let w = he_init(&[din, dout], din, 91).unwrap();
        let x = he_init(&[din], 1, 92).unwrap();
        let xr =
            Tensor::from_vec(&[1, din], x.data().to_vec()).unwrap();
        let y = xr.matmul(&w).unwrap();
        let r: Vec<f64> = (0..dout).map(|i| 0.1 * (i as f64 + 1.0)).collect();
        let split = rrp_affine(x.data(), &w, None, y.row(0), &r).unwrap();
        assert_eq!(split.stabilizer_events, 0);
        let total: f64 = split.lower.iter().sum();
        let upper: f64 = r.iter().sum();
        assert!((total - upper).abs() < 1e-10, "{total} vs {upper}");
    }

    #[test]
    fn affine_rule_scale_equivariance_bias_free() {
        // Scaling x by c > 0 scales y equally, leaving relevance
        // fractions (indeed the whole vector) unchanged.
        let w = he_init(&[4, 3], 4, 93).unwrap();
        let x: Vec<f64> = vec![0.5, -1.2, 2.0, 0.3];
        let y = Tensor::from_vec(&[1, 4], x.clone())
            .unwrap()
            .matmul(&w)
            .unwrap();
        let r = vec![0.2, 0.5, 0.3];
        let base = rrp_affine(&x, &w, None, y.row(0), &r).unwrap();
        let c = 7.5;
        let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
        let ys: Vec<f64> = y.row(0).iter().map(|v| v * c).collect();
        let scaled = rrp_affine(&xs, &w, None, &ys, &r).unwrap();
        for (a, b) in base.lower.iter().zip(&scaled.lower) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pointwise_rule_is_pass_through_for_leaky_relu() {
        let x = vec![2.0, -3.0, 0.5, -0.1];
        let slope = 0.01;
        let y: Vec<f64> = x.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let d: Vec<f64> = x.iter().map(|&v| if v > 0.0 { 1.0 } else { slope }).collect();
        let r = vec![0.3, -0.2, 0.5, 0.1];
        let split = rrp_pointwise(&x, &d, &y, &r).unwrap();
        for (a, b) in split.lower.iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_rule_identity_and_scalar_cases() {
        // A = identity: each diagonal entry takes its row's mass and
        // R_B = R_prod.
        let n = 3;
        let mut a = Tensor::zeros(&[n, n]);
        for i in 0..n {
            a.set2(i, i, 1.0);
        }
        let b = he_init(&[n, 2], 1, 94).unwrap();
        let r = Tensor::from_vec(&[n, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let split = rrp_matmul(&a, &b, &r).unwrap();
        for i in 0..n {
            let row_mass: f64 = r.row(i).iter().sum();
            assert!((split.r_a.get2(i, i) - row_mass).abs() < 1e-12);
            for j in 0..n {
                if j != i {
                    assert_eq!(split.r_a.get2(i, j), 0.0);
                }
            }
        }
        for (rb, rp) in split.r_b.data().iter().zip(r.data()) {
            assert!((rb - rp).abs() < 1e-12);
        }

        // 1×1: A=[2], B=[3], R=1 → both operands get the full unit.
        let a = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap();
        let b = Tensor::from_vec(&[1, 1], vec![3.0]).unwrap();
        let r = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let split = rrp_matmul(&a, &b, &r).unwrap();
        assert_eq!(split.r_a.data(), &[1.0]);
        assert_eq!(split.r_b.data(), &[1.0]);
    }

    #[test]
    fn matmul_rule_duplicates_mass_into_both_operands() {
        let a = he_init(&[3, 4], 3, 95).unwrap();
        let b = he_init(&[4, 2], 4, 96).unwrap();
        let r = he_init(&[3, 2], 1, 97).unwrap();
        let split = rrp_matmul(&a, &b, &r).unwrap();
        assert_eq!(split.stabilizer_events, 0);
        let total = r.sum();
        assert!((split.r_a.sum() - total).abs() < 1e-9);
        assert!((split.r_b.sum() - total).abs() < 1e-9);
    }

    #[test]
    fn stabilizer_counts_only_nonzero_relevance() {
        // Denominator exactly zero with nonzero relevance: stabilized.
        let a = Tensor::from_vec(&[1, 1], vec![0.0]).unwrap();
        let b = Tensor::from_vec(&[1, 1], vec![3.0]).unwrap();
        let r = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let split = rrp_matmul(&a, &b, &r).unwrap();
        assert_eq!(split.stabilizer_events, 1);
        // product is 0, numerator 0 → relevance 0 despite stabilization.
        assert_eq!(split.r_a.data(), &[0.0]);

        // Zero relevance: no event recorded.
        let r0 = Tensor::from_vec(&[1, 1], vec![0.0]).unwrap();
        let split = rrp_matmul(&a, &b, &r0).unwrap();
        assert_eq!(split.stabilizer_events, 0);
    }

    #[test]
    fn propagate_conserves_unit_mass_into_attention_and_kernels() {
        // Bias-free model: attention relevance (over heads) alone carries
        // the full unit; kernel relevance carries the same unit again
        // (product splits duplicate mass into each operand).
        for heads in [1usize, 2] {
            let cfg = tiny_config(heads);
            let mut params = ModelParams::init(&cfg, 101 + heads as u64).unwrap();
            params.b_out = Tensor::zeros(&[cfg.window]);
            params.ffn_b1 = Tensor::zeros(&[cfg.ffn_dim]);
            params.ffn_b2 = Tensor::zeros(&[cfg.window]);
            let x = he_init(&[cfg.n_series, cfg.window], 1, 55).unwrap();
            let trace = forward(&x, &params, &cfg).unwrap();
            for target in 0..cfg.n_series {
                let map = propagate(&trace, &params, &cfg, target).unwrap();
                assert_eq!(map.stabilizer_events, 0, "stabilized at h={heads}");
                assert!(
                    (map.attn_total() - 1.0).abs() < 1e-8,
                    "attention mass {} (h={heads}, target {target})",
                    map.attn_total()
                );
                assert!(
                    (map.kernel_total() - 1.0).abs() < 1e-8,
                    "kernel mass {} (h={heads}, target {target})",
                    map.kernel_total()
                );
            }
        }
    }

    #[test]
    fn propagate_with_biases_accounts_for_all_mass() {
        let cfg = tiny_config(2);
        let mut params = ModelParams::init(&cfg, 200).unwrap();
        // Give every bias a definite nonzero value.
        for (name, tensor) in params.named_mut() {
            if name.contains(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
                for (i, v) in tensor.data_mut().iter_mut().enumerate() {
                    *v = 0.05 * (i as f64 + 1.0);
                }
            }
        }
        let x = he_init(&[cfg.n_series, cfg.window], 1, 56).unwrap();
        let trace = forward(&x, &params, &cfg).unwrap();
        let map = propagate(&trace, &params, &cfg, 1).unwrap();
        assert_eq!(map.stabilizer_events, 0);
        let bias = map.bias_total();
        assert!(bias.abs() > 1e-6, "bias path should absorb some mass");
        assert!(((map.attn_total() + bias) - 1.0).abs() < 1e-8);
        assert!(((map.kernel_total() + bias) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn propagate_zero_input_yields_zero_structure_relevance() {
        let cfg = tiny_config(2);
        let params = ModelParams::init(&cfg, 300).unwrap();
        let x = Tensor::zeros(&[cfg.n_series, cfg.window]);
        let trace = forward(&x, &params, &cfg).unwrap();
        let map = propagate(&trace, &params, &cfg, 0).unwrap();
        assert!(map.attn.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(map.kernel.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn propagate_identical_heads_get_identical_relevance() {
        let cfg = tiny_config(2);
        let mut params = ModelParams::init(&cfg, 400).unwrap();
        // Duplicate head 0 into head 1 and equalize the combination.
        params.heads[1] = params.heads[0].clone();
        params.w_combine = Tensor::from_vec(&[2], vec![0.4, 0.4]).unwrap();
        let x = he_init(&[cfg.n_series, cfg.window], 1, 57).unwrap();
        let trace = forward(&x, &params, &cfg).unwrap();
        let map = propagate(&trace, &params, &cfg, 2).unwrap();
        for (a, b) in map.attn[0].data().iter().zip(map.attn[1].data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in map.kernel[0].data().iter().zip(map.kernel[1].data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn propagate_only_touches_target_row_and_slices() {
        let cfg = tiny_config(1);
        let params = ModelParams::init(&cfg, 500).unwrap();
        let x = he_init(&[cfg.n_series, cfg.window], 1, 58).unwrap();
        let trace = forward(&x, &params, &cfg).unwrap();
        let target = 1;
        let map = propagate(&trace, &params, &cfg, target).unwrap();
        for i in 0..cfg.n_series {
            for j in 0..cfg.n_series {
                if i != target {
                    assert_eq!(map.attn[0].get2(i, j), 0.0);
                }
                for t0 in 0..cfg.window {
                    if j != target {
                        assert_eq!(map.kernel[0].get3(i, j, t0), 0.0);
                    }
                }
            }
        }
    }
}
