//! Base and identity codes, and the single-query cross-attention that turns
//! an encoded pose into the pose feature `P_nr`.

use diffcore::{softmax_in_place, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{gaussian, Bound, Params};
use crate::skeleton::EncodedPose;

pub const CODE_WIDTH: usize = 64;
pub const CODE_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub model_width: usize,
    pub encoding_width: usize,
    /// Divide logits by `√d`.
    pub scaled: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            model_width: 64,
            encoding_width: 63,
            scaled: false,
        }
    }
}

/// Adds `codes` (`subjects × 64`) and the four projection matrices.
pub fn init_params<R: Rng>(params: &mut Params, cfg: &AttentionConfig, subjects: usize, rng: &mut R) {
    let d = cfg.model_width;
    params.insert("codes", gaussian(subjects, CODE_WIDTH, CODE_STD, rng));
    params.insert("attn.w_p", gaussian(cfg.encoding_width, d, (1.0 / cfg.encoding_width as f64).sqrt(), rng));
    params.insert("attn.w_q", gaussian(CODE_WIDTH, d, (1.0 / CODE_WIDTH as f64).sqrt(), rng));
    params.insert("attn.w_k", gaussian(d, d, (1.0 / d as f64).sqrt(), rng));
    params.insert("attn.w_v", gaussian(d, d, (1.0 / d as f64).sqrt(), rng));
}

fn matmul(a: &[f64], rows: usize, inner: usize, b: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for k in 0..inner {
            let av = a[r * inner + k];
            for c in 0..cols {
                out[r * cols + c] += av * b[k * cols + c];
            }
        }
    }
    out
}

/// `P_raw = γ(J) W_p`, one row per joint.
pub fn raw_pose_code(encoded: &EncodedPose, w_p: &Tensor) -> Result<Tensor> {
    let (wi, d) = w_p.dims2("raw_pose_code")?;
    if encoded.width() != wi {
        return Err(Error::InvalidArgument(format!(
            "encoded pose width {} does not match projection input {wi}",
            encoded.width()
        )));
    }
    let j = encoded.joint_count();
    Ok(Tensor::matrix(j, d, matmul(encoded.0.data(), j, wi, w_p.data(), d))?)
}

/// Attention output and the attention row.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub p_nr: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `softmax(P_q P_kᵀ) P_v` with `P_q = S W_Q`, `P_k = P_raw W_K`,
/// `P_v = P_raw W_V`.
pub fn pose_attention(
    code: &[f64],
    p_raw: &Tensor,
    w_q: &Tensor,
    w_k: &Tensor,
    w_v: &Tensor,
    scaled: bool,
) -> Result<Attention> {
    let (j, d) = p_raw.dims2("pose_attention")?;
    let (qi, qd) = w_q.dims2("pose_attention")?;
    if qi != code.len() || qd != d || w_k.shape() != [d, d] || w_v.shape() != [d, d] {
        return Err(Error::InvalidArgument(format!(
            "attention shapes inconsistent: code {}, W_Q {:?}, W_K {:?}, W_V {:?}, P_raw {:?}",
            code.len(),
            w_q.shape(),
            w_k.shape(),
            w_v.shape(),
            p_raw.shape()
        )));
    }
    let q = matmul(code, 1, qi, w_q.data(), d);
    let k = matmul(p_raw.data(), j, d, w_k.data(), d);
    let v = matmul(p_raw.data(), j, d, w_v.data(), d);
    let s = if scaled { 1.0 / (d as f64).sqrt() } else { 1.0 };
    let mut weights: Vec<f64> = (0..j)
        .map(|r| s * (0..d).map(|c| q[c] * k[r * d + c]).sum::<f64>())
        .collect();
    softmax_in_place(&mut weights);
    let p_nr = matmul(&weights, 1, j, &v, d);
    Ok(Attention { p_nr, weights })
}

/// Tape version: `code` is `1 × 64`, `gamma` is `J × 63`. Returns `1 × d`.
pub fn pose_feature_on_tape(tape: &mut Tape, bound: &Bound, cfg: &AttentionConfig, code: Var, gamma: Var) -> Result<Var> {
    let p_raw = tape.matmul(gamma, bound.var("attn.w_p")?)?;
    let q = tape.matmul(code, bound.var("attn.w_q")?)?;
    let k = tape.matmul(p_raw, bound.var("attn.w_k")?)?;
    let v = tape.matmul(p_raw, bound.var("attn.w_v")?)?;
    let kt = tape.transpose(k)?;
    let mut logits = tape.matmul(q, kt)?;
    if cfg.scaled {
        logits = tape.scale(logits, 1.0 / (cfg.model_width as f64).sqrt());
    }
    let attn = tape.softmax_rows(logits)?;
    Ok(tape.matmul(attn, v)?)
}

/// Row `subject` of the codebook as a `1 × 64` tape value.
pub fn code_on_tape(tape: &mut Tape, codes: Var, subject: usize) -> Result<Var> {
    let rows = tape.shape(codes)[0];
    if subject >= rows {
        return Err(Error::InvalidArgument(format!("subject {subject} out of range for {rows} codes")));
    }
    Ok(tape.gather_rows(codes, &[subject])?)
}
