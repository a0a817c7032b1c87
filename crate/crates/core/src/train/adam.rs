use crate::error::{Error, Result};
use crate::nn::NetworkParams;

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;

/// Adam moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &NetworkParams, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams) -> Result<()> {
        let grads = grads.tensors();
        let mut tensors = params.tensors_mut();
        let shapes_ok = tensors.len() == grads.len()
            && tensors.len() == self.first_moment.len()
            && tensors
                .iter()
                .zip(&grads)
                .zip(&self.first_moment)
                .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
        if !shapes_ok {
            return Err(Error::arg("parameter, gradient and moment shapes differ"));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let correction1 = 1.0 - b1.powi(t);
        let correction2 = 1.0 - b2.powi(t);
        for (((p, g), m), v) in tensors
            .iter_mut()
            .zip(&grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for k in 0..p.len() {
                let gk = g[k];
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                let m_hat = m[k] / correction1;
                let v_hat = v[k] / correction2;
                p[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, ModelConfig};

    fn tiny() -> ModelConfig {
        ModelConfig {
            num_layers: 1,
            hidden_size: 2,
            input_len: 3,
            output_len: 2,
            ..Default::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let cfg = tiny();
        let mut params = init_params(&cfg, 3).unwrap();
        let before = params.clone();
        let grads = NetworkParams::zeros(&cfg);
        let mut adam = AdamState::new(&params, DEFAULT_LEARNING_RATE);
        for _ in 0..50 {
            adam.step(&mut params, &grads).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(adam.step_count, 50);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_learning_rate() {
        let cfg = tiny();
        let mut params = NetworkParams::zeros(&cfg);
        let mut grads = NetworkParams::zeros(&cfg);
        grads.fill(1.0);
        let mut adam = AdamState::new(&params, DEFAULT_LEARNING_RATE);
        adam.step(&mut params, &grads).unwrap();
        // m_hat = v_hat = 1 after bias correction
        let expected = -DEFAULT_LEARNING_RATE / (1.0 + 1e-8);
        for t in params.tensors() {
            for &p in t {
                assert!((p - expected).abs() < 1e-18);
            }
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let cfg = tiny();
        let run = || {
            let mut params = init_params(&cfg, 8).unwrap();
            let mut grads = init_params(&cfg, 9).unwrap();
            let mut adam = AdamState::new(&params, DEFAULT_LEARNING_RATE);
            for i in 0..20 {
                grads.scale(if i % 2 == 0 { -0.5 } else { 1.5 });
                adam.step(&mut params, &grads).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let params = NetworkParams::zeros(&tiny());
        let other = NetworkParams::zeros(&ModelConfig { hidden_size: 3, ..tiny() });
        let mut adam = AdamState::new(&params, DEFAULT_LEARNING_RATE);
        let mut p = params.clone();
        assert!(adam.step(&mut p, &other).is_err());
    }
}
