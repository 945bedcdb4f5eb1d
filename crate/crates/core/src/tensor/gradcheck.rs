//! Central finite-difference verification of tape gradients.

use super::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Guard against division by a vanishing gradient magnitude: differences
/// below finite-difference noise should not register as large relative
/// errors.
const REL_ERR_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Elements checked per tensor; larger tensors are subsampled.
    pub max_samples: usize,
    /// Seed of the subsampling stream.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            max_samples: 100,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Worst relative error across all per-parameter reports.
pub fn worst_rel_err(reports: &[GradCheckReport]) -> f64 {
    reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
}

fn eval_scalar<F>(forward: &F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Tensor>,
{
    let mut tape = Tape::new();
    let out = forward(&mut tape)?;
    let (rows, cols) = out.shape();
    if (rows, cols) != (1, 1) {
        return Err(Error::LossNotScalar { rows, cols });
    }
    Ok(out.get_flat(0))
}

/// Compares tape gradients of a scalar-valued forward function against
/// central finite differences `(f(t+eps) - f(t-eps)) / 2 eps` for every
/// named parameter, element by element (subsampled for large tensors).
///
/// The forward function must be deterministic — dropout disabled or run
/// with a fixed seed; two initial evaluations that disagree bit-for-bit
/// are rejected.
pub fn grad_check<F>(
    forward: F,
    params: &[(&str, Tensor)],
    cfg: &GradCheckConfig,
) -> Result<Vec<GradCheckReport>>
where
    F: Fn(&mut Tape) -> Result<Tensor>,
{
    let first = eval_scalar(&forward)?;
    let second = eval_scalar(&forward)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministicForward { first, second });
    }

    for (_, p) in params {
        p.zero_grad();
    }
    let mut tape = Tape::new();
    let loss = forward(&mut tape)?;
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|(_, p)| p.grad_to_vec()).collect();

    let mut rng = seeded_rng(cfg.seed);
    let mut reports = Vec::with_capacity(params.len());
    for ((name, p), grads) in params.iter().zip(&analytic) {
        let n = p.len();
        let indices: Vec<usize> = if n <= cfg.max_samples {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, cfg.max_samples).into_vec()
        };
        let mut max_rel = 0.0f64;
        for &idx in &indices {
            let original = p.get_flat(idx);
            p.set_flat(idx, original + cfg.eps);
            let f_plus = eval_scalar(&forward)?;
            p.set_flat(idx, original - cfg.eps);
            let f_minus = eval_scalar(&forward)?;
            p.set_flat(idx, original);

            let fd = (f_plus - f_minus) / (2.0 * cfg.eps);
            let g = grads[idx];
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(REL_ERR_FLOOR);
            max_rel = max_rel.max(rel);
        }
        reports.push(GradCheckReport {
            name: (*name).to_string(),
            max_rel_err: max_rel,
            checked: indices.len(),
        });
    }
    Ok(reports)
}
