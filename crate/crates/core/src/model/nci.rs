//! Note-code interaction scoring.
//!
//! Code vectors are built from description token embeddings (averaged,
//! then projected); every token feature row interacts with every code
//! vector by dot product; per-code scores are the token-summed
//! interactions, length-normalized and passed through a per-code affine.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// m x embed_dim matrix of averaged description embeddings; a code with
/// an empty description gets the unknown-token embedding. Recomputed on
/// the tape every pass, so the description path trains with the rest of
/// the embedding table.
pub fn description_average(
    tape: &mut Tape,
    embedding: &Tensor,
    code_descs: Rc<Vec<Vec<usize>>>,
    unk_id: usize,
) -> Result<Tensor> {
    tape.embed_mean_rows(embedding, code_descs, unk_id)
}

/// Projects averaged description embeddings into code vectors:
/// `V = desc_avg . code_proj + code_bias`.
pub fn build_code_matrix(
    tape: &mut Tape,
    desc_avg: &Tensor,
    code_proj: &Tensor,
    code_bias: &Tensor,
) -> Result<Tensor> {
    let projected = tape.matmul(desc_avg, code_proj)?;
    tape.add_row_bias(&projected, code_bias)
}

/// Scores one note against every code.
///
/// The interaction matrix is `V . U^T` (m x n); summing it over token
/// positions and dividing by n makes the logits invariant to whole-note
/// token repetition. The per-code affine `out_scale / out_bias` maps the
/// pooled interaction to a logit.
pub fn nci_score(
    tape: &mut Tape,
    features: &Tensor,
    code_matrix: &Tensor,
    out_scale: &Tensor,
    out_bias: &Tensor,
) -> Result<Tensor> {
    let (n, d_u) = features.shape();
    let (_, d_v) = code_matrix.shape();
    if d_u != d_v {
        return Err(Error::dims("nci_score", (n, d_u), code_matrix.shape()));
    }
    let features_t = tape.transpose(features);
    let interaction = tape.matmul(code_matrix, &features_t)?;
    let pooled = tape.row_sums(&interaction);
    let pooled_row = tape.transpose(&pooled);
    let normalized = tape.scale(&pooled_row, 1.0 / n as f64);
    let scaled = tape.mul(&normalized, out_scale)?;
    tape.add(&scaled, out_bias)
}

/// Ablation head: per-feature max over token positions, then a dense
/// affine to the code logits.
pub fn max_pool_score(
    tape: &mut Tape,
    features: &Tensor,
    out_weight: &Tensor,
    out_bias: &Tensor,
) -> Result<Tensor> {
    let pooled = tape.col_max(features)?;
    let projected = tape.matmul(&pooled, out_weight)?;
    tape.add(&projected, out_bias)
}
