//! Checkpoint container: a JSON header (config, data hashes, parameter
//! manifest) followed by raw little-endian f32 arrays, one per parameter,
//! in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::CodeSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::text::Vocabulary;

use super::{HeadParams, ModelConfig, ModelParams, Variant};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GCNNCKP\x01";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub vocab_sha256: String,
    pub codes_sha256: String,
    pub params: Vec<ParamInfo>,
}

impl CheckpointHeader {
    /// Fails unless the checkpoint was trained against exactly this
    /// vocabulary and code set.
    pub fn verify_hashes(&self, vocab: &Vocabulary, codes: &CodeSet) -> Result<()> {
        let vocab_hash = vocab.content_hash();
        if vocab_hash != self.vocab_sha256 {
            return Err(Error::HashMismatch {
                what: "vocabulary",
                expected: self.vocab_sha256.clone(),
                actual: vocab_hash,
            });
        }
        let codes_hash = codes.content_hash();
        if codes_hash != self.codes_sha256 {
            return Err(Error::HashMismatch {
                what: "code set",
                expected: self.codes_sha256.clone(),
                actual: codes_hash,
            });
        }
        Ok(())
    }
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    params: &ModelParams,
    vocab_sha256: &str,
    codes_sha256: &str,
) -> Result<()> {
    let named = params.named();
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        config: config.clone(),
        vocab_sha256: vocab_sha256.to_string(),
        codes_sha256: codes_sha256.to_string(),
        params: named
            .iter()
            .map(|(name, t)| ParamInfo {
                name: (*name).to_string(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| Error::Json {
        path: path.display().to_string(),
        source: e,
    })?;

    let mut file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    file.write_all(MAGIC)?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    for (_, tensor) in &named {
        let mut buf = Vec::with_capacity(tensor.len() * 4);
        for &v in tensor.values().iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        file.write_all(&buf)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ModelParams)> {
    let path_str = path.display().to_string();
    let bad = |message: String| Error::DataFormat {
        path: path_str.clone(),
        line: 0,
        message,
    };
    let mut file = fs::File::open(path).map_err(|e| Error::file(path, e))?;

    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| bad(format!("malformed header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    header.config.validate()?;

    let mut tensors = Vec::with_capacity(header.params.len());
    for info in &header.params {
        let count = info.rows * info.cols;
        let mut buf = vec![0u8; count * 4];
        file.read_exact(&mut buf)?;
        let values: Vec<f64> = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        tensors.push(Tensor::param(info.rows, info.cols, values)?);
    }

    let params = assemble_params(&header, tensors)
        .ok_or_else(|| bad("parameter manifest does not match the configured variant".into()))?;
    Ok((header, params))
}

fn assemble_params(header: &CheckpointHeader, tensors: Vec<Tensor>) -> Option<ModelParams> {
    let names: Vec<&str> = header.params.iter().map(|p| p.name.as_str()).collect();
    let expected_common = ["embedding", "conv_kernel", "conv_bias", "h0"];
    if names.len() < 4 || names[..4] != expected_common {
        return None;
    }
    let mut it = tensors.into_iter();
    let embedding = it.next()?;
    let conv_kernel = it.next()?;
    let conv_bias = it.next()?;
    let h0 = it.next()?;
    let head = match header.config.variant {
        Variant::NoNci => {
            if names[4..] != ["out_weight", "out_bias"] {
                return None;
            }
            HeadParams::MaxPoolLinear {
                out_weight: it.next()?,
                out_bias: it.next()?,
            }
        }
        _ => {
            if names[4..] != ["code_proj", "code_bias", "out_scale", "out_bias"] {
                return None;
            }
            HeadParams::Interaction {
                code_proj: it.next()?,
                code_bias: it.next()?,
                out_scale: it.next()?,
                out_bias: it.next()?,
            }
        }
    };
    let params = ModelParams {
        embedding,
        conv_kernel,
        conv_bias,
        h0,
        head,
    };
    // Shape check against the configuration.
    let cfg = &header.config;
    let conv_out = cfg.feature_dim();
    let shapes_ok = params.embedding.shape() == (cfg.vocab_size, cfg.embed_dim)
        && params.conv_kernel.shape()
            == (cfg.kernel_size * (cfg.embed_dim + cfg.gate_dim), conv_out)
        && params.conv_bias.shape() == (1, conv_out)
        && params.h0.shape() == (1, cfg.gate_dim);
    if !shapes_ok {
        return None;
    }
    Some(params)
}
