//! The windowed prediction model whose trained weights are later
//! decomposed into a causal graph.
//!
//! Given a window `X ∈ R^{N×T}` of `N` series over `T` time slots, the
//! model predicts every slot of every series from strictly non-future
//! observations of the causal pathway:
//!
//! 1. an embedding of each series row feeds the query/key projections,
//! 2. per-(source, target) convolution kernels aggregate each source
//!    series over past-and-current slots only (zero left padding),
//! 3. the self pair's convolution is right-shifted one slot so a series
//!    never sees its own current value,
//! 4. per-head attention over series mixes the convolution results,
//! 5. a feed-forward block and a time-axis output map produce predictions.
//!
//! Training minimizes squared prediction error (slots 2..T) plus L1
//! penalties on the convolution kernels and attention masks; both the
//! optimizer and the relevance-based detector consume the hand-derived
//! backward pass in [`backward`].

mod backward;
mod checkpoint;
mod forward;

pub use backward::{backward, loss_gradients, loss_seed, target_sum_seed, BackwardPass};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{
    attention_head, causal_convolve, embed, ffn, forward, loss, loss_components, multi_head,
    shift_self, ForwardTrace, HeadTrace, LossBreakdown,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::{he_init, Tensor};

/// Architecture and objective hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Number of series `N`.
    pub n_series: usize,
    /// Window length `T` (time slots per training example).
    pub window: usize,
    /// Embedding width `d` feeding the query/key projections; must exceed
    /// the window length.
    pub embed_dim: usize,
    /// Query/key projection width.
    pub qk_dim: usize,
    /// Attention head count; each head owns its own kernels and mask.
    pub heads: usize,
    /// Hidden width of the feed-forward block.
    pub ffn_dim: usize,
    /// Softmax temperature on attention scores (larger = flatter).
    pub temperature: f64,
    /// L1 penalty weight on convolution kernels.
    pub lambda_kernel: f64,
    /// L1 penalty weight on attention masks.
    pub lambda_mask: f64,
    /// Negative-side slope of the leaky rectifier.
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
}

fn default_leaky_slope() -> f64 {
    0.01
}

impl ModelConfig {
    /// Collect every violated bound as a human-readable message.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_series < 2 {
            v.push(format!("model n_series must be >= 2, got {}", self.n_series));
        }
        if self.window < 2 {
            v.push(format!("model window must be >= 2, got {}", self.window));
        }
        if self.embed_dim <= self.window {
            v.push(format!(
                "model embed_dim must exceed window ({}), got {}",
                self.window, self.embed_dim
            ));
        }
        if self.qk_dim == 0 {
            v.push("model qk_dim must be >= 1".to_string());
        }
        if self.heads == 0 {
            v.push("model heads must be >= 1".to_string());
        }
        if self.ffn_dim == 0 {
            v.push("model ffn_dim must be >= 1".to_string());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            v.push(format!(
                "model temperature must be positive and finite, got {}",
                self.temperature
            ));
        }
        for (name, lambda) in [
            ("lambda_kernel", self.lambda_kernel),
            ("lambda_mask", self.lambda_mask),
        ] {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                v.push(format!("model {name} must be >= 0 and finite, got {lambda}"));
            }
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            v.push(format!(
                "model leaky_slope must lie in (0, 1), got {}",
                self.leaky_slope
            ));
        }
        v
    }

    /// Validate, returning all violations at once.
    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

/// Per-head parameters: query/key projections, the per-pair convolution
/// kernels, and the attention mask.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// Query projection `[d, qk_dim]`.
    pub w_q: Tensor,
    /// Query bias `[qk_dim]`.
    pub b_q: Tensor,
    /// Key projection `[d, qk_dim]`.
    pub w_k: Tensor,
    /// Key bias `[qk_dim]`.
    pub b_k: Tensor,
    /// Convolution kernels `[N, N, T]`, indexed `(source, target, slot)`;
    /// slot `T` (the last) corresponds to lag 0.
    pub kernel: Tensor,
    /// Attention mask `[N, N]`, multiplied onto pre-softmax scores.
    pub mask: Tensor,
}

/// All learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Embedding weight `[T, d]`.
    pub w_emb: Tensor,
    /// Embedding bias `[d]`.
    pub b_emb: Tensor,
    /// Per-head parameters.
    pub heads: Vec<HeadParams>,
    /// Head-combination weights `[h]` (no bias).
    pub w_combine: Tensor,
    /// First feed-forward weight `[T, ffn_dim]`.
    pub ffn_w1: Tensor,
    /// First feed-forward bias `[ffn_dim]`.
    pub ffn_b1: Tensor,
    /// Second feed-forward weight `[ffn_dim, T]`.
    pub ffn_w2: Tensor,
    /// Second feed-forward bias `[T]`.
    pub ffn_b2: Tensor,
    /// Output map over the time axis `[T, T]`, shared by all series.
    pub w_out: Tensor,
    /// Output bias `[T]`.
    pub b_out: Tensor,
}

impl ModelParams {
    /// Scaled-normal initialization: weights drawn with fan-in scaling
    /// (kernels use fan-in `T`), biases zero, masks all-ones (the neutral
    /// element of the elementwise score product).
    pub fn init(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
        config.validate()?;
        let (n, t, d) = (config.n_series, config.window, config.embed_dim);
        let (dqk, dffn, h) = (config.qk_dim, config.ffn_dim, config.heads);
        let mut stream = 0u64;
        let mut next = |shape: &[usize], fan_in: usize| -> Result<Tensor> {
            stream += 1;
            he_init(shape, fan_in, seeds::derive(seed, stream))
        };
        let w_emb = next(&[t, d], t)?;
        let b_emb = Tensor::zeros(&[d]);
        let mut heads = Vec::with_capacity(h);
        for _ in 0..h {
            heads.push(HeadParams {
                w_q: next(&[d, dqk], d)?,
                b_q: Tensor::zeros(&[dqk]),
                w_k: next(&[d, dqk], d)?,
                b_k: Tensor::zeros(&[dqk]),
                kernel: next(&[n, n, t], t)?,
                mask: Tensor::filled(&[n, n], 1.0),
            });
        }
        Ok(ModelParams {
            w_emb,
            b_emb,
            heads,
            w_combine: next(&[h], h)?,
            ffn_w1: next(&[t, dffn], t)?,
            ffn_b1: Tensor::zeros(&[dffn]),
            ffn_w2: next(&[dffn, t], dffn)?,
            ffn_b2: Tensor::zeros(&[t]),
            w_out: next(&[t, t], t)?,
            b_out: Tensor::zeros(&[t]),
        })
    }

    /// Canonical `(name, tensor)` listing, stable across runs; the
    /// optimizer, checkpoint format, and gradient maps all key on these
    /// names.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("embed.w".to_string(), &self.w_emb),
            ("embed.b".to_string(), &self.b_emb),
        ];
        for (k, head) in self.heads.iter().enumerate() {
            out.push((format!("head{k}.w_q"), &head.w_q));
            out.push((format!("head{k}.b_q"), &head.b_q));
            out.push((format!("head{k}.w_k"), &head.w_k));
            out.push((format!("head{k}.b_k"), &head.b_k));
            out.push((format!("head{k}.kernel"), &head.kernel));
            out.push((format!("head{k}.mask"), &head.mask));
        }
        out.push(("combine.w".to_string(), &self.w_combine));
        out.push(("ffn.w1".to_string(), &self.ffn_w1));
        out.push(("ffn.b1".to_string(), &self.ffn_b1));
        out.push(("ffn.w2".to_string(), &self.ffn_w2));
        out.push(("ffn.b2".to_string(), &self.ffn_b2));
        out.push(("out.w".to_string(), &self.w_out));
        out.push(("out.b".to_string(), &self.b_out));
        out
    }

    /// Mutable variant of [`ModelParams::named`], same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("embed.w".to_string(), &mut self.w_emb),
            ("embed.b".to_string(), &mut self.b_emb),
        ];
        for (k, head) in self.heads.iter_mut().enumerate() {
            out.push((format!("head{k}.w_q"), &mut head.w_q));
            out.push((format!("head{k}.b_q"), &mut head.b_q));
            out.push((format!("head{k}.w_k"), &mut head.w_k));
            out.push((format!("head{k}.b_k"), &mut head.b_k));
            out.push((format!("head{k}.kernel"), &mut head.kernel));
            out.push((format!("head{k}.mask"), &mut head.mask));
        }
        out.push(("combine.w".to_string(), &mut self.w_combine));
        out.push(("ffn.w1".to_string(), &mut self.ffn_w1));
        out.push(("ffn.b1".to_string(), &mut self.ffn_b1));
        out.push(("ffn.w2".to_string(), &mut self.ffn_w2));
        out.push(("ffn.b2".to_string(), &mut self.ffn_b2));
        out.push(("out.w".to_string(), &mut self.w_out));
        out.push(("out.b".to_string(), &mut self.b_out));
        out
    }

    /// Shapes each named parameter must have under `config`.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let (n, t, d) = (config.n_series, config.window, config.embed_dim);
        let (dqk, dffn, h) = (config.qk_dim, config.ffn_dim, config.heads);
        let mut out = vec![
            ("embed.w".to_string(), vec![t, d]),
            ("embed.b".to_string(), vec![d]),
        ];
        for k in 0..h {
            out.push((format!("head{k}.w_q"), vec![d, dqk]));
            out.push((format!("head{k}.b_q"), vec![dqk]));
            out.push((format!("head{k}.w_k"), vec![d, dqk]));
            out.push((format!("head{k}.b_k"), vec![dqk]));
            out.push((format!("head{k}.kernel"), vec![n, n, t]));
            out.push((format!("head{k}.mask"), vec![n, n]));
        }
        out.push(("combine.w".to_string(), vec![h]));
        out.push(("ffn.w1".to_string(), vec![t, dffn]));
        out.push(("ffn.b1".to_string(), vec![dffn]));
        out.push(("ffn.w2".to_string(), vec![dffn, t]));
        out.push(("ffn.b2".to_string(), vec![t]));
        out.push(("out.w".to_string(), vec![t, t]));
        out.push(("out.b".to_string(), vec![t]));
        out
    }

    /// Check that every tensor has the shape `config` dictates and holds
    /// only finite values.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let expected = ModelParams::expected_shapes(config);
        let actual = self.named();
        if expected.len() != actual.len() {
            return Err(Error::shape(format!(
                "parameter count {} does not match configured head count (expected {})",
                actual.len(),
                expected.len()
            )));
        }
        for ((ename, eshape), (aname, tensor)) in expected.iter().zip(&actual) {
            if ename != aname {
                return Err(Error::shape(format!(
                    "parameter order mismatch: expected '{ename}', found '{aname}'"
                )));
            }
            if tensor.shape() != eshape.as_slice() {
                return Err(Error::shape(format!(
                    "parameter '{aname}' has shape {:?}, expected {:?}",
                    tensor.shape(),
                    eshape
                )));
            }
            if !tensor.is_finite() {
                return Err(Error::arg(format!(
                    "parameter '{aname}' contains non-finite values"
                )));
            }
        }
        Ok(())
    }
}
