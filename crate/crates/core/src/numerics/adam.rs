use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Adam optimizer state: one pair of moment accumulators per parameter
/// tensor, in the same order the parameters are passed to [`AdamState::update`].
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state with standard defaults (beta1 0.9, beta2 0.999, eps 1e-8).
    pub fn new(param_shapes: &[Vec<usize>]) -> Self {
        AdamState {
            first_moment: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            second_moment: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_params(params: &[&Tensor]) -> Self {
        Self::new(&params.iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>())
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam step over all parameters, in place.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], lr: f64) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::contract("learning rate must be positive"));
        }
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::contract(format!(
                "parameter/gradient/state count mismatch: {} / {} / {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::contract(format!(
                    "shape mismatch: param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::TrainingDiverged {
                    iteration: self.step_count as usize,
                    detail: "non-finite gradient".to_string(),
                });
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for i in 0..params.len() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let g = grads[i].data();
            let p = params[i].data_mut();
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::zeros(vec![3]);
        let mut state = AdamState::for_params(&[&p]);
        state.update(&mut [&mut p], &[&g], 0.1).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0, 0.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // With constant gradient g, bias correction makes the first step
        // exactly -lr * g / (|g| + eps) ≈ -lr * sign(g).
        let mut p = Tensor::from_vec(vec![2], vec![0.0, 0.0]).unwrap();
        let g = Tensor::from_vec(vec![2], vec![3.0, -0.25]).unwrap();
        let mut state = AdamState::for_params(&[&p]);
        state.update(&mut [&mut p], &[&g], 0.01).unwrap();
        assert!((p.data()[0] - (-0.01)).abs() < 1e-6);
        assert!((p.data()[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = Tensor::zeros(vec![1]);
        let mut g = Tensor::zeros(vec![1]);
        g.data_mut()[0] = f64::NAN;
        let mut state = AdamState::for_params(&[&p]);
        let err = state.update(&mut [&mut p], &[&g], 0.1).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { .. }));
    }

    /// Scalar Adam reference used as the oracle for the vectorized update.
    struct ScalarAdam {
        m: f64,
        v: f64,
        t: i32,
    }

    impl ScalarAdam {
        fn new() -> Self {
            ScalarAdam { m: 0.0, v: 0.0, t: 0 }
        }

        fn step(&mut self, w: f64, g: f64, lr: f64) -> f64 {
            let (b1, b2, eps) = (0.9, 0.999, 1e-8);
            self.t += 1;
            self.m = b1 * self.m + (1.0 - b1) * g;
            self.v = b2 * self.v + (1.0 - b2) * g * g;
            let m_hat = self.m / (1.0 - b1.powi(self.t));
            let v_hat = self.v / (1.0 - b2.powi(self.t));
            w - lr * m_hat / (v_hat.sqrt() + eps)
        }
    }

    #[test]
    fn ten_steps_on_quadratic_match_scalar_reference() {
        let mut p = Tensor::from_vec(vec![1], vec![1.0]).unwrap();
        let mut state = AdamState::for_params(&[&p]);
        let mut reference = ScalarAdam::new();
        let mut w_ref = 1.0;
        let mut prev_abs = 1.0;
        for _ in 0..10 {
            // f(w) = w^2, f'(w) = 2w
            let g = Tensor::from_vec(vec![1], vec![2.0 * p.data()[0]]).unwrap();
            state.update(&mut [&mut p], &[&g], 0.1).unwrap();
            w_ref = reference.step(w_ref, 2.0 * w_ref, 0.1);
            let now = p.data()[0].abs();
            assert!(now < prev_abs, "|w| must strictly decrease");
            prev_abs = now;
        }
        assert!((p.data()[0] - w_ref).abs() < 1e-12);
        assert_eq!(state.step_count(), 10);
    }
}
