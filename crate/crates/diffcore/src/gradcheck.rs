//! Central finite-difference checks against [`Tape::backward`].

use crate::error::{DiffError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Per-input comparison of analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheck {
    /// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, floor)` for input `i`.
    pub fn relative_error(&self, i: usize) -> f64 {
        relative_error(&self.analytic[i], &self.numeric[i])
    }

    pub fn max_relative_error(&self) -> f64 {
        (0..self.analytic.len())
            .map(|i| self.relative_error(i))
            .fold(0.0, f64::max)
    }
}

pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / norm(a).max(norm(n)).max(1e-8)
}

fn scalar_of(tape: &Tape, out: Var) -> Result<f64> {
    let t = tape.value(out);
    if !t.is_scalar() {
        return Err(DiffError::NonScalarLoss(t.shape().to_vec()));
    }
    Ok(t.data()[0])
}

/// Differentiates `f` with respect to every input both ways.
///
/// `f` receives one trainable [`Var`] per tensor in `inputs` and must return a
/// scalar.
pub fn check<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let run = |values: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = run(inputs)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut gi = vec![0.0; inputs[i].len()];
        for (j, slot) in gi.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let (t, _, o) = run(&work)?;
            let plus = scalar_of(&t, o)?;
            work[i].data_mut()[j] = orig - step;
            let (t, _, o) = run(&work)?;
            let minus = scalar_of(&t, o)?;
            work[i].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        numeric.push(gi);
    }
    Ok(GradCheck { analytic, numeric })
}
