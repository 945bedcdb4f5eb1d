//! Stacked gated dilated-convolution note encoder.
//!
//! Every level concatenates the original word embeddings onto the current
//! hidden state (embedding injection), runs one causal dilated
//! convolution, and gates the result:
//!
//! ```text
//! U          = conv(concat[X, H], dilation_l)        (n x 4g)
//! (I,O,G,F)  = split_columns(U)
//! C_next     = sigmoid(F) * sigmoid(C) + sigmoid(I) * tanh(G)
//! H_next     = sigmoid(O) * tanh(F)
//! ```
//!
//! The cell and hidden updates are applied between levels; the last
//! level's pre-split U is the feature matrix handed to the output head.
//! One kernel is shared by all levels unless a caller explicitly supplies
//! per-level kernels.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

use super::{ModelConfig, ModelParams, Variant};

/// Gate update for one level: returns `(h, cell_out)`.
///
/// With `lstm_style_output` the hidden output reads the fresh cell state,
/// `h = sigmoid(O) * tanh(C_next)`, instead of the raw forget block.
pub fn apply_gates(
    tape: &mut Tape,
    features: &Tensor,
    cell_in: &Tensor,
    lstm_style_output: bool,
) -> Result<(Tensor, Tensor)> {
    let (input_block, output_block, write_block, forget_block) = tape.split_columns(features)?;
    let forget_gate = tape.sigmoid(&forget_block);
    let cell_gate = tape.sigmoid(cell_in);
    let kept = tape.mul(&forget_gate, &cell_gate)?;
    let input_gate = tape.sigmoid(&input_block);
    let candidate = tape.tanh(&write_block);
    let written = tape.mul(&input_gate, &candidate)?;
    let cell_out = tape.add(&kept, &written)?;

    let output_gate = tape.sigmoid(&output_block);
    let h = if lstm_style_output {
        let cell_act = tape.tanh(&cell_out);
        tape.mul(&output_gate, &cell_act)?
    } else {
        let forget_act = tape.tanh(&forget_block);
        tape.mul(&output_gate, &forget_act)?
    };
    Ok((h, cell_out))
}

/// One full gated layer: dilated convolution over the injected features,
/// then the gate update. Returns `(h, cell_out)`.
pub fn gated_layer(
    tape: &mut Tape,
    injected: &Tensor,
    cell_in: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    dilation: usize,
    lstm_style_output: bool,
) -> Result<(Tensor, Tensor)> {
    let u = tape.conv1d_dilated(injected, kernel, bias, dilation)?;
    apply_gates(tape, &u, cell_in, lstm_style_output)
}

/// Encoder with explicit per-level kernels, one `(kernel, bias)` pair per
/// level. Passing the same tensor handle for every level reproduces
/// weight sharing exactly; passing distinct tensors unties the levels,
/// which is how the sharing invariant is cross-checked.
#[allow(clippy::too_many_arguments)]
pub fn encode_with_layer_kernels(
    tape: &mut Tape,
    token_ids: &[usize],
    embedding: &Tensor,
    h0: &Tensor,
    layer_kernels: &[(Tensor, Tensor)],
    config: &ModelConfig,
    training: bool,
    dropout_seed: u64,
) -> Result<Tensor> {
    if token_ids.is_empty() {
        return Err(Error::InvalidArgument("note has no tokens".into()));
    }
    if layer_kernels.len() != config.levels {
        return Err(Error::InvalidArgument(format!(
            "{} kernel pairs for {} levels",
            layer_kernels.len(),
            config.levels
        )));
    }
    let n = token_ids.len();

    let mut x = tape.embed_rows(embedding, token_ids)?;
    if training && config.dropout > 0.0 {
        x = tape.dropout(&x, config.dropout, true, dropout_seed)?;
    }
    let mut hidden = tape.broadcast_rows(h0, n)?;
    let mut cell = Tensor::zeros(n, config.gate_dim);

    let mut features = None;
    for (level, &dilation) in config.dilations.iter().enumerate() {
        let injected = tape.concat_features(&x, &hidden)?;
        let (kernel, bias) = &layer_kernels[level];
        let u = tape.conv1d_dilated(&injected, kernel, bias, dilation)?;
        match config.variant {
            Variant::NoGating => {
                let activated = tape.tanh(&u);
                hidden = activated.clone();
                features = Some(activated);
            }
            _ => {
                let last = level + 1 == config.levels;
                if !last {
                    let (h, c) = apply_gates(tape, &u, &cell, config.lstm_style_output)?;
                    hidden = h;
                    cell = c;
                }
                features = Some(u);
            }
        }
    }
    Ok(features.expect("levels >= 1"))
}

/// Encodes a note into its feature matrix using the single shared
/// convolution kernel at every level.
pub fn encode_note_features(
    tape: &mut Tape,
    token_ids: &[usize],
    params: &ModelParams,
    config: &ModelConfig,
    training: bool,
    dropout_seed: u64,
) -> Result<Tensor> {
    let shared: Vec<(Tensor, Tensor)> = (0..config.levels)
        .map(|_| (params.conv_kernel.clone(), params.conv_bias.clone()))
        .collect();
    encode_with_layer_kernels(
        tape,
        token_ids,
        &params.embedding,
        &params.h0,
        &shared,
        config,
        training,
        dropout_seed,
    )
}
