//! Checkpoint persistence: one self-describing JSON document holding the
//! model configuration plus every parameter tensor.
//!
//! Float data is stored as hex-encoded IEEE-754 bit patterns (16 hex
//! digits per value, big-endian), so a save/load round trip reproduces
//! every parameter bit-for-bit — decimal text would not.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HeadParams, ModelConfig, ModelParams};
use crate::tensor::Tensor;

const FORMAT_TAG: &str = "tscausal.checkpoint.v1";

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    /// 16 hex digits per f64, concatenated in row-major order.
    data_hex: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    config: ModelConfig,
    params: Vec<TensorRecord>,
}

fn encode_tensor(name: &str, tensor: &Tensor) -> TensorRecord {
    let mut hex = String::with_capacity(tensor.len() * 16);
    for &v in tensor.data() {
        use std::fmt::Write;
        write!(hex, "{:016x}", v.to_bits()).expect("write to string");
    }
    TensorRecord {
        name: name.to_string(),
        shape: tensor.shape().to_vec(),
        data_hex: hex,
    }
}

fn decode_tensor(record: &TensorRecord) -> Result<Tensor> {
    let expect: usize = record.shape.iter().product();
    if record.data_hex.len() != expect * 16 {
        return Err(Error::Checkpoint(format!(
            "tensor '{}': {} hex digits cannot encode shape {:?}",
            record.name,
            record.data_hex.len(),
            record.shape
        )));
    }
    let mut data = Vec::with_capacity(expect);
    for i in 0..expect {
        let chunk = &record.data_hex[i * 16..(i + 1) * 16];
        let bits = u64::from_str_radix(chunk, 16).map_err(|e| {
            Error::Checkpoint(format!("tensor '{}': bad hex at value {i}: {e}", record.name))
        })?;
        data.push(f64::from_bits(bits));
    }
    Tensor::from_vec(&record.shape, data)
}

/// Write `params` and `config` to `path` as a checkpoint document.
pub fn save_checkpoint(path: &Path, params: &ModelParams, config: &ModelConfig) -> Result<()> {
    params.validate(config)?;
    let doc = CheckpointDoc {
        format: FORMAT_TAG.to_string(),
        config: config.clone(),
        params: params
            .named()
            .into_iter()
            .map(|(name, tensor)| encode_tensor(&name, tensor))
            .collect(),
    };
    let json = serde_json::to_string(&doc)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Load a checkpoint document, validating the format tag and that every
/// expected parameter is present with the right shape.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig)> {
    let text = std::fs::read_to_string(path)?;
    let doc: CheckpointDoc = serde_json::from_str(&text)?;
    if doc.format != FORMAT_TAG {
        return Err(Error::Checkpoint(format!(
            "unsupported format tag '{}' (expected '{FORMAT_TAG}')",
            doc.format
        )));
    }
    doc.config.validate()?;
    let mut by_name = std::collections::BTreeMap::new();
    for record in &doc.params {
        if by_name.insert(record.name.clone(), decode_tensor(record)?).is_some() {
            return Err(Error::Checkpoint(format!(
                "duplicate tensor '{}' in checkpoint",
                record.name
            )));
        }
    }
    let mut take = |name: &str| -> Result<Tensor> {
        by_name
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))
    };
    let w_emb = take("embed.w")?;
    let b_emb = take("embed.b")?;
    let mut heads = Vec::with_capacity(doc.config.heads);
    for k in 0..doc.config.heads {
        heads.push(HeadParams {
            w_q: take(&format!("head{k}.w_q"))?,
            b_q: take(&format!("head{k}.b_q"))?,
            w_k: take(&format!("head{k}.w_k"))?,
            b_k: take(&format!("head{k}.b_k"))?,
            kernel: take(&format!("head{k}.kernel"))?,
            mask: take(&format!("head{k}.mask"))?,
        });
    }
    let params = ModelParams {
        w_emb,
        b_emb,
        heads,
        w_combine: take("combine.w")?,
        ffn_w1: take("ffn.w1")?,
        ffn_b1: take("ffn.b1")?,
        ffn_w2: take("ffn.w2")?,
        ffn_b2: take("ffn.b2")?,
        w_out: take("out.w")?,
        b_out: take("out.b")?,
    };
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Checkpoint(format!(
            "unexpected tensor '{extra}' in checkpoint"
        )));
    }
    params.validate(&doc.config)?;
    Ok((params, doc.config))
}
