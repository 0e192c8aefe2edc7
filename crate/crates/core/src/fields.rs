//! Rigid canonical decoder and pose-conditioned residual decoder.
//!
//! Extra per-ray inputs (ID code, pose feature) are concatenated to every
//! sample. Since they are constant across the batch, the concatenation is
//! evaluated as a separate weight block whose product is broadcast as a row.

use diffcore::{Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{he, Bound, Params};
use crate::posecode::CODE_WIDTH;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub hidden: usize,
    /// Feed the pose feature through the first nonlinearity instead of
    /// joining after it.
    pub pose_pre_activation: bool,
    /// Also give the residual decoder the subject's ID code.
    pub nonrigid_id_code: bool,
    /// Initial bias of the rigid density logit; negative starts the scene
    /// nearly transparent.
    #[serde(default = "default_density_bias")]
    pub density_bias: f64,
}

fn default_density_bias() -> f64 {
    -4.0
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            pose_pre_activation: false,
            nonrigid_id_code: false,
            density_bias: default_density_bias(),
        }
    }
}

/// Input widths and optional inputs of the two decoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderShape {
    pub rigid_in: usize,
    pub nonrigid_in: usize,
    pub rigid_code: bool,
    pub nonrigid_code: bool,
    pub pose_width: Option<usize>,
    pub residual: bool,
}

fn dense<R: Rng>(params: &mut Params, name: &str, rows: usize, cols: usize, rng: &mut R) {
    params.insert(format!("{name}.w"), he(rows, cols, rng));
    params.insert(format!("{name}.b"), Tensor::zeros(&[1, cols]));
}

pub fn init_params<R: Rng>(params: &mut Params, cfg: &DecoderConfig, shape: &DecoderShape, rng: &mut R) {
    let h = cfg.hidden;
    dense(params, "rigid.l1", shape.rigid_in, h, rng);
    if shape.rigid_code {
        params.insert("rigid.code.w", he(CODE_WIDTH, h, rng));
    }
    dense(params, "rigid.l2", h, h, rng);
    params.insert("rigid.out.w", he(h, 4, rng).scaled(0.5));
    params.insert("rigid.out.b", Tensor::matrix(1, 4, vec![0.0, 0.0, 0.0, cfg.density_bias]).expect("1×4"));
    if !shape.residual {
        return;
    }
    dense(params, "nonrigid.l1", shape.nonrigid_in, h, rng);
    if shape.nonrigid_code {
        params.insert("nonrigid.code.w", he(CODE_WIDTH, h, rng));
    }
    dense(params, "nonrigid.l2", h, h, rng);
    if let Some(d) = shape.pose_width {
        params.insert("nonrigid.pose.w", he(d, h, rng));
    }
    // Zero output layer: residuals start at exactly zero.
    params.insert("nonrigid.out.w", Tensor::zeros(&[h, 4]));
    params.insert("nonrigid.out.b", Tensor::zeros(&[1, 4]));
}

trait Scaled {
    fn scaled(self, s: f64) -> Self;
}

impl Scaled for Tensor {
    fn scaled(mut self, s: f64) -> Self {
        self.data_mut().iter_mut().for_each(|v| *v *= s);
        self
    }
}

fn check_input(tape: &Tape, input: Var, w: Var, what: &str) -> Result<()> {
    let got = tape.shape(input)[1];
    let want = tape.shape(w)[0];
    if got != want {
        return Err(Error::Config(format!("{what} decoder expects input width {want}, got {got}")));
    }
    Ok(())
}

fn linear(tape: &mut Tape, bound: &Bound, name: &str, x: Var) -> Result<Var> {
    let y = tape.matmul(x, bound.var(&format!("{name}.w"))?)?;
    Ok(tape.add_row(y, bound.var(&format!("{name}.b"))?)?)
}

/// Rigid decoder: `(c, σ)` with `c = sigmoid(·)` (`n × 3`) and
/// `σ = softplus(·)` (`n × 1`).
pub fn eval_rigid(tape: &mut Tape, bound: &Bound, input: Var, code: Option<Var>) -> Result<(Var, Var)> {
    check_input(tape, input, bound.var("rigid.l1.w")?, "rigid")?;
    let mut z = linear(tape, bound, "rigid.l1", input)?;
    if let Some(w) = bound.try_var("rigid.code.w") {
        let code = code.ok_or_else(|| Error::Config("rigid decoder requires an ID code".into()))?;
        let row = tape.matmul(code, w)?;
        z = tape.add_row(z, row)?;
    }
    let h = tape.relu(z);
    let z = linear(tape, bound, "rigid.l2", h)?;
    let h = tape.relu(z);
    let out = linear(tape, bound, "rigid.out", h)?;
    let c = tape.slice_cols(out, 0, 3)?;
    let s = tape.slice_cols(out, 3, 1)?;
    Ok((tape.sigmoid(c), tape.softplus(s)))
}

/// Residual decoder: raw `[Δc, Δσ]`, `n × 4`.
pub fn eval_nonrigid(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &DecoderConfig,
    input: Var,
    p_nr: Option<Var>,
    code: Option<Var>,
) -> Result<Var> {
    check_input(tape, input, bound.var("nonrigid.l1.w")?, "residual")?;
    let mut z = linear(tape, bound, "nonrigid.l1", input)?;
    if let Some(w) = bound.try_var("nonrigid.code.w") {
        let code = code.ok_or_else(|| Error::Config("residual decoder requires an ID code".into()))?;
        let row = tape.matmul(code, w)?;
        z = tape.add_row(z, row)?;
    }
    let h = tape.relu(z);
    let mut z = linear(tape, bound, "nonrigid.l2", h)?;
    if let Some(w) = bound.try_var("nonrigid.pose.w") {
        let p = p_nr.ok_or_else(|| Error::Config("residual decoder requires a pose feature".into()))?;
        let p = if cfg.pose_pre_activation { tape.relu(p) } else { p };
        let row = tape.matmul(p, w)?;
        z = tape.add_row(z, row)?;
    }
    let h = tape.relu(z);
    linear(tape, bound, "nonrigid.out", h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape() -> DecoderShape {
        DecoderShape {
            rigid_in: 5,
            nonrigid_in: 7,
            rigid_code: false,
            nonrigid_code: false,
            pose_width: Some(3),
            residual: true,
        }
    }

    #[test]
    fn zero_rigid_net_gives_half_grey_and_log_two() {
        let mut p = Params::new();
        init_params(&mut p, &DecoderConfig::default(), &shape(), &mut ChaCha8Rng::seed_from_u64(0));
        let names: Vec<String> = p.names().cloned().collect();
        for n in names.iter().filter(|n| n.starts_with("rigid.")) {
            let z = Tensor::zeros(p.get(n).unwrap().shape());
            p.insert(n.clone(), z);
        }
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let x = tape.constant(Tensor::filled(&[2, 5], 0.3));
        let (c, s) = eval_rigid(&mut tape, &b, x, None).unwrap();
        assert!(tape.value(c).data().iter().all(|&v| v == 0.5));
        for &v in tape.value(s).data() {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn fresh_residual_decoder_outputs_zero() {
        let mut p = Params::new();
        init_params(&mut p, &DecoderConfig::default(), &shape(), &mut ChaCha8Rng::seed_from_u64(1));
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let x = tape.constant(Tensor::filled(&[3, 7], -0.2));
        let pn = tape.constant(Tensor::filled(&[1, 3], 1.0));
        let r = eval_nonrigid(&mut tape, &b, &DecoderConfig::default(), x, Some(pn), None).unwrap();
        assert!(tape.value(r).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn width_mismatch_is_config_error() {
        let mut p = Params::new();
        init_params(&mut p, &DecoderConfig::default(), &shape(), &mut ChaCha8Rng::seed_from_u64(2));
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros(&[1, 4]));
        assert!(matches!(eval_rigid(&mut tape, &b, x, None), Err(Error::Config(_))));
    }
}
