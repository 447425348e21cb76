//! Adam optimizer over a flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place. Rejects non-finite gradients so
/// divergence surfaces with context instead of silently poisoning parameters.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(bad) = grads.iter().find(|g| !g.is_finite()) {
        return Err(Error::Domain(format!("non-finite gradient entry {bad}")));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let cfg = AdamConfig::default();
        let mut params = vec![1.0, -2.0];
        let mut state = AdamState::new(2);
        state.m = vec![0.5, 0.5];
        state.v = vec![0.25, 0.25];
        adam_step(&mut params, &[0.0, 0.0], &mut state, &cfg).unwrap();
        assert!((params[0] - 1.0).abs() < 2e-3, "near-unchanged params");
        assert!(state.m[0] < 0.5 && state.v[0] < 0.25, "moments decay");

        // with zero moments too, params are exactly unchanged
        let mut params = vec![1.0];
        let mut state = AdamState::new(1);
        adam_step(&mut params, &[0.0], &mut state, &cfg).unwrap();
        assert_eq!(params, vec![1.0]);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        // t = 1, constant gradient g: step = -lr * g / (|g| + eps) ~ -lr sign(g)
        let cfg = AdamConfig::default();
        for g in [3.0, -0.02, 1e-4] {
            let mut params = vec![0.0];
            let mut state = AdamState::new(1);
            adam_step(&mut params, &[g], &mut state, &cfg).unwrap();
            let expected = -cfg.learning_rate * g / (g.abs() + cfg.epsilon);
            assert_relative_eq!(params[0], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn converges_on_quadratic() {
        // minimize x^2 from x=1: 500 steps at lr 1e-2 gets |x| < 1e-2
        let cfg = AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        };
        let mut params = vec![1.0];
        let mut state = AdamState::new(1);
        for _ in 0..500 {
            let g = 2.0 * params[0];
            adam_step(&mut params, &[g], &mut state, &cfg).unwrap();
        }
        assert!(params[0].abs() < 1e-2, "x = {}", params[0]);
        assert!(params[0].is_finite());
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let cfg = AdamConfig::default();
        let mut params = vec![0.0];
        let mut state = AdamState::new(1);
        assert!(matches!(
            adam_step(&mut params, &[f64::NAN], &mut state, &cfg),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let cfg = AdamConfig::default();
        let mut params = vec![0.0, 1.0];
        let mut state = AdamState::new(2);
        assert!(matches!(
            adam_step(&mut params, &[1.0], &mut state, &cfg),
            Err(Error::Shape(_))
        ));
    }
}
