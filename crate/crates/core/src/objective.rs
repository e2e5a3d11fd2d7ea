//! Training objective: symmetric code alignment plus coding-rate diversity.
//!
//! `total = align + lambda * div`, where
//!
//! - `align = ½ [BCE(y_text, p_obs) + BCE(y_obs, p_text)]` with the codes
//!   `y` held constant (no gradient through binarization),
//! - `div = ½ [R(z_text) + R(z_obs)]`, and
//! - `R(z) = -½ logdet(I + (b/B) C)`, `C = (1/B) Σ v_i v_iᵀ`, `v_i = z_i / ‖z_i‖`.
//!
//! BCE uses mean reduction over all `B·b` entries.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{CodeBatch, LogitBatch, Matrix, PairedBatch, ProbBatch};
use crate::error::{Error, Result};
use crate::head::{binarize, squash, HashHead};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside BCE.
pub const PROB_EPS: f64 = 1e-7;
/// Lower bound on row norms before normalization.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub align: f64,
    pub div: f64,
    pub total: f64,
}

/// Parameter gradients for the (text, observation) heads.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub text: Vec<f64>,
    pub obs: Vec<f64>,
}

fn check_codes(targets: &CodeBatch, probs: &ProbBatch) -> Result<()> {
    let p = &probs.0;
    if targets.len() != p.rows() || targets.bits() != p.cols() {
        return Err(Error::ShapeMismatch {
            left_rows: targets.len(),
            left_cols: targets.bits(),
            right_rows: p.rows(),
            right_cols: p.cols(),
        });
    }
    Ok(())
}

pub fn bce(targets: &CodeBatch, probs: &ProbBatch) -> Result<f64> {
    check_codes(targets, probs)?;
    let n = probs.0.as_slice().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = targets
        .values()
        .iter()
        .zip(probs.0.as_slice())
        .map(|(&y, &p)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / n as f64)
}

/// `d bce / d z` for `p = σ(z)`, scaled by `scale`. Zero where the clamp is
/// active.
fn bce_logit_grad(targets: &CodeBatch, probs: &ProbBatch, scale: f64, out: &mut Matrix) {
    let n = probs.0.as_slice().len() as f64;
    for ((g, &y), &p) in out
        .as_mut_slice()
        .iter_mut()
        .zip(targets.values())
        .zip(probs.0.as_slice())
    {
        if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
            *g += scale * (p - f64::from(y)) / n;
        }
    }
}

pub fn align_loss(p_text: &ProbBatch, p_obs: &ProbBatch) -> Result<f64> {
    p_text.0.same_shape(&p_obs.0)?;
    let y_text = binarize(p_text);
    let y_obs = binarize(p_obs);
    Ok(0.5 * (bce(&y_text, p_obs)? + bce(&y_obs, p_text)?))
}

fn check_bits(z: &LogitBatch, bits: usize) -> Result<()> {
    if z.0.cols() != bits {
        return Err(Error::DimensionMismatch {
            field: "logit columns",
            expected: bits,
            found: z.0.cols(),
        });
    }
    if z.0.rows() == 0 {
        return Err(Error::InvalidConfig(
            "coding rate needs at least one row".into(),
        ));
    }
    Ok(())
}

/// `-½ logdet(I + (b/B) C)` over the rows of `z`.
pub fn coding_rate(z: &LogitBatch, bits: usize) -> Result<f64> {
    coding_rate_impl(z, bits, false).map(|(v, _)| v)
}

/// Coding rate together with its gradient with respect to `z`.
pub fn coding_rate_with_grad(z: &LogitBatch, bits: usize) -> Result<(f64, Matrix)> {
    coding_rate_impl(z, bits, true).map(|(v, g)| (v, g.expect("gradient requested")))
}

fn coding_rate_impl(z: &LogitBatch, bits: usize, want_grad: bool) -> Result<(f64, Option<Matrix>)> {
    check_bits(z, bits)?;
    let rows = z.0.rows();
    let norms: Vec<f64> = (0..rows)
        .map(|i| {
            z.0.row(i)
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(NORM_FLOOR)
        })
        .collect();
    let v = DMatrix::from_fn(rows, bits, |i, j| z.0.get(i, j) / norms[i]);

    // A = I + (b/B) * (1/B) VᵀV
    let scale = bits as f64 / (rows as f64 * rows as f64);
    let mut a = v.tr_mul(&v) * scale;
    for k in 0..bits {
        a[(k, k)] += 1.0;
    }
    let chol = a.cholesky().ok_or(Error::FactorizationFailure(bits))?;
    let logdet = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>();
    let value = -0.5 * logdet;
    if !want_grad {
        return Ok((value, None));
    }

    // dR/dV = -scale * V A⁻¹; A⁻¹Vᵀ solved through the factor.
    let ainv_vt = chol.solve(&v.transpose());
    let mut grad = Matrix::zeros(rows, bits);
    for i in 0..rows {
        let gv: Vec<f64> = (0..bits).map(|j| -scale * ainv_vt[(j, i)]).collect();
        // Through v = z / ‖z‖: (gv - (gv·v) v) / ‖z‖, unless the norm was floored.
        let raw_norm = norms[i];
        let out = grad.row_mut(i);
        let zi_norm = z.0.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        if zi_norm < NORM_FLOOR {
            for (o, g) in out.iter_mut().zip(&gv) {
                *o = g / raw_norm;
            }
        } else {
            let proj: f64 = (0..bits).map(|j| gv[j] * v[(i, j)]).sum();
            for j in 0..bits {
                out[j] = (gv[j] - proj * v[(i, j)]) / raw_norm;
            }
        }
    }
    Ok((value, Some(grad)))
}

pub fn div_loss(z_text: &LogitBatch, z_obs: &LogitBatch, bits: usize) -> Result<f64> {
    Ok(0.5 * (coding_rate(z_text, bits)? + coding_rate(z_obs, bits)?))
}

/// Loss report and exact parameter gradients of `align + lambda * div`.
pub fn total_loss_and_grads(
    text_head: &HashHead,
    obs_head: &HashHead,
    batch: &PairedBatch,
    lambda: f64,
) -> Result<(LossReport, HeadGrads)> {
    if text_head.bits() != obs_head.bits() {
        return Err(Error::DimensionMismatch {
            field: "head bits",
            expected: text_head.bits(),
            found: obs_head.bits(),
        });
    }
    let bits = text_head.bits();
    let (z_text, cache_text) = text_head.forward_cached(&batch.text)?;
    let (z_obs, cache_obs) = obs_head.forward_cached(&batch.obs)?;
    let p_text = squash(&z_text);
    let p_obs = squash(&z_obs);
    let y_text = binarize(&p_text);
    let y_obs = binarize(&p_obs);

    let align = 0.5 * (bce(&y_text, &p_obs)? + bce(&y_obs, &p_text)?);
    let (cr_text, g_cr_text) = coding_rate_with_grad(&z_text, bits)?;
    let (cr_obs, g_cr_obs) = coding_rate_with_grad(&z_obs, bits)?;
    let div = 0.5 * (cr_text + cr_obs);
    let total = align + lambda * div;

    let rows = batch.len();
    let mut gz_text = Matrix::zeros(rows, bits);
    let mut gz_obs = Matrix::zeros(rows, bits);
    bce_logit_grad(&y_obs, &p_text, 0.5, &mut gz_text);
    bce_logit_grad(&y_text, &p_obs, 0.5, &mut gz_obs);
    let w = 0.5 * lambda;
    for (g, c) in gz_text.as_mut_slice().iter_mut().zip(g_cr_text.as_slice()) {
        *g += w * c;
    }
    for (g, c) in gz_obs.as_mut_slice().iter_mut().zip(g_cr_obs.as_slice()) {
        *g += w * c;
    }

    let grads = HeadGrads {
        text: text_head.backward(&batch.text, &cache_text, &gz_text),
        obs: obs_head.backward(&batch.obs, &cache_obs, &gz_obs),
    };
    Ok((LossReport { align, div, total }, grads))
}
