use std::collections::BTreeMap;

use crate::error::{DiffError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-15,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }
}

/// Fails with [`DiffError::Divergence`] if any gradient entry is NaN or infinite.
pub fn check_finite(name: &str, grads: &[f64]) -> Result<()> {
    if grads.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(DiffError::Divergence { param: name.to_string() })
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    name: &str,
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    learning_rate: f64,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.first_moment.len() != params.len() {
        return Err(DiffError::ShapeMismatch {
            op: "adam_step",
            left: vec![params.len()],
            right: vec![grads.len(), state.first_moment.len()],
        });
    }
    check_finite(name, grads)?;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

/// Adam over a set of named parameters, each with its own moment state.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub config: AdamConfig,
    states: BTreeMap<String, AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            states: BTreeMap::new(),
        }
    }

    pub fn state(&self, name: &str) -> Option<&AdamState> {
        self.states.get(name)
    }

    pub fn step(&mut self, name: &str, params: &mut [f64], grads: &[f64], learning_rate: f64) -> Result<()> {
        let state = self
            .states
            .entry(name.to_string())
            .or_insert_with(|| AdamState::new(params.len()));
        adam_step(name, params, grads, state, learning_rate, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![1.5, -2.0, 0.25];
        let mut s = AdamState::new(3);
        for _ in 0..5 {
            adam_step("p", &mut p, &[0.0; 3], &mut s, 0.1, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, vec![1.5, -2.0, 0.25]);
        assert_eq!(s.step_count, 5);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2);
        let lr = 0.01;
        let mut prev = p.clone();
        for _ in 0..200 {
            adam_step("p", &mut p, &[3.0, -0.5], &mut s, lr, &AdamConfig::default()).unwrap();
            let d0 = p[0] - prev[0];
            let d1 = p[1] - prev[1];
            assert!((d0 + lr).abs() < 1e-12);
            assert!((d1 - lr).abs() < 1e-12);
            prev = p.clone();
        }
    }

    #[test]
    fn one_step_on_square_matches_hand_computation() {
        // f(w) = w², w = 1 → g = 2; m = 0.2, v = 0.04; m̂ = 2, v̂ = 4.
        let mut w = vec![1.0];
        let mut s = AdamState::new(1);
        let cfg = AdamConfig::default();
        adam_step("w", &mut w, &[2.0], &mut s, 0.1, &cfg).unwrap();
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + cfg.epsilon);
        assert!((w[0] - expected).abs() < 1e-15);
        assert!(w[0] < 1.0);
        assert!((s.first_moment[0] - 0.2).abs() < 1e-15);
        assert!((s.second_moment[0] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = vec![1.0, 2.0];
        let mut s = AdamState::new(2);
        let err = adam_step("grid.entries", &mut p, &[0.0, f64::NAN], &mut s, 0.1, &AdamConfig::default())
            .unwrap_err();
        assert_eq!(err, DiffError::Divergence { param: "grid.entries".into() });
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn named_optimizer_keeps_separate_states() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut a = vec![0.0];
        let mut b = vec![0.0; 2];
        adam.step("a", &mut a, &[1.0], 0.1).unwrap();
        adam.step("a", &mut a, &[1.0], 0.1).unwrap();
        adam.step("b", &mut b, &[1.0, 1.0], 0.1).unwrap();
        assert_eq!(adam.state("a").unwrap().step_count, 2);
        assert_eq!(adam.state("b").unwrap().step_count, 1);
    }
}
