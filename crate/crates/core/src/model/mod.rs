//! The encoder/scorer model: embedding injection, stacked weight-shared
//! gated dilated convolutions, and a note-code interaction head, plus the
//! two ablation variants.

mod checkpoint;
mod encoder;
mod nci;
#[cfg(test)]
mod tests;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
pub use encoder::{encode_note_features, encode_with_layer_kernels, gated_layer};
pub use nci::{build_code_matrix, description_average, max_pool_score, nci_score};

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};
use crate::tensor::{Tape, Tensor};
use crate::text::EmbeddingTable;

/// Which model to build: the full architecture or one of the two
/// ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Gated encoder + note-code interaction head.
    Full,
    /// Interaction head replaced by max-pooling and a linear projection.
    NoNci,
    /// Gating removed: each layer is `tanh(conv(injected))` with width
    /// `gate_dim`; the cell state is unused.
    NoGating,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Variant::Full => "full",
            Variant::NoNci => "no_nci",
            Variant::NoGating => "no_gating",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Word-embedding width.
    pub embed_dim: usize,
    /// Width of each of the four gate blocks.
    pub gate_dim: usize,
    pub kernel_size: usize,
    /// Number of stacked convolution levels.
    pub levels: usize,
    /// Per-level dilation, length `levels`.
    pub dilations: Vec<usize>,
    pub dropout: f64,
    /// Code-vector width; must equal the encoder feature width for the
    /// variants that use the interaction head.
    pub code_dim: usize,
    pub code_count: usize,
    pub max_len: usize,
    pub variant: Variant,
    /// Route the cell state instead of the raw forget block through the
    /// layer output: `h = sigmoid(O) * tanh(C_next)`.
    pub lstm_style_output: bool,
}

impl ModelConfig {
    pub fn with_defaults(vocab_size: usize, code_count: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 100,
            gate_dim: 25,
            kernel_size: 3,
            levels: 2,
            dilations: Self::default_dilations(2),
            dropout: 0.2,
            code_dim: 100,
            code_count,
            max_len: 2500,
            variant: Variant::Full,
            lstm_style_output: false,
        }
    }

    /// Doubling schedule 1, 2, 4, ...
    pub fn default_dilations(levels: usize) -> Vec<usize> {
        (0..levels).map(|i| 1usize << i).collect()
    }

    /// Width of the encoder features entering the output head.
    pub fn feature_dim(&self) -> usize {
        match self.variant {
            Variant::NoGating => self.gate_dim,
            _ => 4 * self.gate_dim,
        }
    }

    /// Tokens of look-back that can influence one output position:
    /// 1 + sum over levels of dilation * (kernel_size - 1).
    pub fn receptive_field(&self) -> usize {
        1 + self
            .dilations
            .iter()
            .map(|d| d * (self.kernel_size - 1))
            .sum::<usize>()
    }

    /// Same architecture re-targeted at another variant, with the code
    /// width re-tied to that variant's feature width.
    pub fn for_variant(&self, variant: Variant) -> Self {
        let mut cfg = self.clone();
        cfg.variant = variant;
        cfg.code_dim = cfg.feature_dim();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.vocab_size == 0 || self.code_count == 0 {
            return fail("vocab_size and code_count must be >= 1".into());
        }
        if self.embed_dim == 0 || self.gate_dim == 0 {
            return fail("embed_dim and gate_dim must be >= 1".into());
        }
        if self.kernel_size == 0 || self.levels == 0 || self.max_len == 0 {
            return fail("kernel_size, levels, and max_len must be >= 1".into());
        }
        if self.dilations.len() != self.levels {
            return fail(format!(
                "dilation schedule has {} entries for {} levels",
                self.dilations.len(),
                self.levels
            ));
        }
        if self.dilations.contains(&0) {
            return fail("all dilations must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.variant != Variant::NoNci && self.code_dim != self.feature_dim() {
            return fail(format!(
                "code_dim {} must equal the encoder feature width {}",
                self.code_dim,
                self.feature_dim()
            ));
        }
        Ok(())
    }

    /// Closed-form trainable-parameter count for this configuration.
    pub fn param_count_formula(&self) -> usize {
        let (e, g, k, m) = (
            self.embed_dim,
            self.gate_dim,
            self.kernel_size,
            self.code_count,
        );
        let conv_out = self.feature_dim();
        let embedding = self.vocab_size * e;
        let conv = k * (e + g) * conv_out + conv_out;
        let state = g;
        let head = match self.variant {
            Variant::NoNci => conv_out * m + m,
            _ => e * self.code_dim + self.code_dim + 2 * m,
        };
        embedding + conv + state + head
    }
}

/// Output-head parameters; which arm exists follows the variant.
#[derive(Clone, Debug)]
pub enum HeadParams {
    Interaction {
        /// embed_dim x code_dim projection of averaged description
        /// embeddings.
        code_proj: Tensor,
        code_bias: Tensor,
        /// Per-code affine over the pooled interaction scores.
        out_scale: Tensor,
        out_bias: Tensor,
    },
    MaxPoolLinear {
        out_weight: Tensor,
        out_bias: Tensor,
    },
}

/// All trainable arrays. One shared convolution kernel exists regardless
/// of depth; gradient accumulation on the tape sums its per-level
/// contributions.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub embedding: Tensor,
    pub conv_kernel: Tensor,
    pub conv_bias: Tensor,
    /// Learned initial hidden state, broadcast over positions.
    pub h0: Tensor,
    pub head: HeadParams,
}

fn xavier(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect()
}

impl ModelParams {
    /// Seeded initialization. The embedding starts from a pretrained
    /// table when one is given; the output head starts at zero so the
    /// initial prediction for every code is 0.5.
    pub fn init(
        config: &ModelConfig,
        pretrained: Option<&EmbeddingTable>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(derive_seed(seed, "params"));

        let embedding = match pretrained {
            Some(table) => {
                if table.rows != config.vocab_size || table.dim != config.embed_dim {
                    return Err(Error::Config(format!(
                        "embedding table is {}x{} but config needs {}x{}",
                        table.rows, table.dim, config.vocab_size, config.embed_dim
                    )));
                }
                Tensor::new(table.rows, table.dim, table.values.clone(), table.trainable)?
            }
            None => {
                let half = 0.5 / config.embed_dim as f64;
                let values = (0..config.vocab_size * config.embed_dim)
                    .map(|_| rng.random_range(-half..half))
                    .collect();
                Tensor::param(config.vocab_size, config.embed_dim, values)?
            }
        };

        let in_width = config.embed_dim + config.gate_dim;
        let conv_out = config.feature_dim();
        let kernel_rows = config.kernel_size * in_width;
        let conv_kernel = Tensor::param(
            kernel_rows,
            conv_out,
            xavier(kernel_rows, conv_out, kernel_rows, conv_out, &mut rng),
        )?;
        let conv_bias = Tensor::param(1, conv_out, vec![0.0; conv_out])?;
        let h0 = Tensor::param(
            1,
            config.gate_dim,
            xavier(1, config.gate_dim, 1, config.gate_dim, &mut rng),
        )?;

        let m = config.code_count;
        let head = match config.variant {
            Variant::NoNci => HeadParams::MaxPoolLinear {
                out_weight: Tensor::param(conv_out, m, vec![0.0; conv_out * m])?,
                out_bias: Tensor::param(1, m, vec![0.0; m])?,
            },
            _ => {
                let (e, v) = (config.embed_dim, config.code_dim);
                let proj_values = if e == v {
                    let mut eye = vec![0.0; e * v];
                    for i in 0..e {
                        eye[i * v + i] = 1.0;
                    }
                    eye
                } else {
                    xavier(e, v, e, v, &mut rng)
                };
                HeadParams::Interaction {
                    code_proj: Tensor::param(e, v, proj_values)?,
                    code_bias: Tensor::param(1, v, vec![0.0; v])?,
                    out_scale: Tensor::param(1, m, vec![0.0; m])?,
                    out_bias: Tensor::param(1, m, vec![0.0; m])?,
                }
            }
        };

        Ok(ModelParams {
            embedding,
            conv_kernel,
            conv_bias,
            h0,
            head,
        })
    }

    /// Trainable tensors in a fixed order; the binding contract for the
    /// optimizer, gradient checking, and checkpoints.
    pub fn named(&self) -> Vec<(&'static str, Tensor)> {
        let mut out = vec![
            ("embedding", self.embedding.clone()),
            ("conv_kernel", self.conv_kernel.clone()),
            ("conv_bias", self.conv_bias.clone()),
            ("h0", self.h0.clone()),
        ];
        match &self.head {
            HeadParams::Interaction {
                code_proj,
                code_bias,
                out_scale,
                out_bias,
            } => {
                out.push(("code_proj", code_proj.clone()));
                out.push(("code_bias", code_bias.clone()));
                out.push(("out_scale", out_scale.clone()));
                out.push(("out_bias", out_bias.clone()));
            }
            HeadParams::MaxPoolLinear {
                out_weight,
                out_bias,
            } => {
                out.push(("out_weight", out_weight.clone()));
                out.push(("out_bias", out_bias.clone()));
            }
        }
        out
    }

    /// Total element count over trainable tensors.
    pub fn param_count(&self) -> usize {
        self.named()
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in self.named() {
            t.zero_grad();
        }
    }

    /// Copies of all parameter values, in `named` order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.named().iter().map(|(_, t)| t.to_vec()).collect()
    }

    pub fn restore(&self, snapshot: &[Vec<f64>]) -> Result<()> {
        let named = self.named();
        if named.len() != snapshot.len() {
            return Err(Error::InvalidArgument(
                "snapshot does not match parameter list".into(),
            ));
        }
        for ((_, t), values) in named.iter().zip(snapshot) {
            t.set_values(values)?;
        }
        Ok(())
    }
}

/// A bound model: configuration, parameters, and the description token
/// ids the interaction head reads.
#[derive(Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub code_descs: Rc<Vec<Vec<usize>>>,
    pub unk_id: usize,
}

impl Model {
    pub fn new(
        config: ModelConfig,
        params: ModelParams,
        code_descs: Rc<Vec<Vec<usize>>>,
        unk_id: usize,
    ) -> Result<Self> {
        config.validate()?;
        if code_descs.len() != config.code_count {
            return Err(Error::Config(format!(
                "{} code descriptions for {} codes",
                code_descs.len(),
                config.code_count
            )));
        }
        Ok(Model {
            config,
            params,
            code_descs,
            unk_id,
        })
    }

    /// Raw 1 x m code logits for one note.
    pub fn forward_logits(
        &self,
        tape: &mut Tape,
        token_ids: &[usize],
        training: bool,
        dropout_seed: u64,
    ) -> Result<Tensor> {
        let features = encode_note_features(
            tape,
            token_ids,
            &self.params,
            &self.config,
            training,
            dropout_seed,
        )?;
        match &self.params.head {
            HeadParams::Interaction {
                code_proj,
                code_bias,
                out_scale,
                out_bias,
            } => {
                let desc_avg = description_average(
                    tape,
                    &self.params.embedding,
                    Rc::clone(&self.code_descs),
                    self.unk_id,
                )?;
                let code_matrix = build_code_matrix(tape, &desc_avg, code_proj, code_bias)?;
                nci_score(tape, &features, &code_matrix, out_scale, out_bias)
            }
            HeadParams::MaxPoolLinear {
                out_weight,
                out_bias,
            } => max_pool_score(tape, &features, out_weight, out_bias),
        }
    }

    /// Per-code probabilities in (0, 1).
    pub fn forward(
        &self,
        tape: &mut Tape,
        token_ids: &[usize],
        training: bool,
        dropout_seed: u64,
    ) -> Result<Tensor> {
        let logits = self.forward_logits(tape, token_ids, training, dropout_seed)?;
        Ok(tape.sigmoid(&logits))
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }
}
