use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamStore, Tensor};

/// Hyperparameters of the decoupled-weight-decay Adam optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient norm ceiling; gradients are rescaled when above it.
    pub max_grad_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

/// What a step did, for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    pub clip_scale: f64,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::new(t.shape().to_vec(), vec![0.0; t.len()]).unwrap())
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    /// Clips `grads` to the configured global norm, then applies one AdamW
    /// update to `params`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &mut [Tensor]) -> Result<StepInfo, NumericsError> {
        if grads.len() != params.len() || grads.len() != self.first_moment.len() {
            return Err(NumericsError::Shape(format!(
                "{} gradients for {} parameters ({} moment slots)",
                grads.len(),
                params.len(),
                self.first_moment.len()
            )));
        }
        for (g, p) in grads.iter().zip(params.tensors()) {
            if g.shape() != p.shape() {
                return Err(NumericsError::Shape(format!("gradient {:?} vs parameter {:?}", g.shape(), p.shape())));
            }
        }
        let norm = clip_grad_norm(grads, self.config.max_grad_norm)?;
        let clip_scale = if norm > self.config.max_grad_norm { self.config.max_grad_norm / norm } else { 1.0 };

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let decay = 1.0 - c.learning_rate * c.weight_decay;

        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.iter())
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((pi, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *pi *= decay;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let mhat = *mi / bias1;
                let vhat = *vi / bias2;
                *pi -= c.learning_rate * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(StepInfo {
            grad_norm: norm,
            clip_scale,
        })
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> Result<f64, NumericsError> {
    let norm = grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(NumericsError::Divergence(format!("gradient norm is {norm}")));
    }
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("p", Tensor::scalar(value));
        store
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut grads = vec![Tensor::row(&[6.0, 8.0])];
        let norm = clip_grad_norm(&mut grads, 0.1).unwrap();
        assert_eq!(norm, 10.0);
        assert!((grads[0].data()[0] - 0.06).abs() < 1e-15);
        assert!((grads[0].data()[1] - 0.08).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut store = single(1.25);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut state = OptimizerState::new(cfg, &store);
        let mut grads = vec![Tensor::scalar(0.0)];
        state.step(&mut store, &mut grads).unwrap();
        assert_eq!(store.tensors()[0].item(), 1.25);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn one_step_matches_hand_computation() {
        let cfg = AdamWConfig {
            learning_rate: 0.01,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            max_grad_norm: 10.0,
        };
        let mut store = single(2.0);
        let mut state = OptimizerState::new(cfg, &store);
        let mut grads = vec![Tensor::scalar(0.5)];
        state.step(&mut store, &mut grads).unwrap();
        // decay: 2 * (1 - 0.001) = 1.998
        // m = 0.05, v = 0.0025; mhat = 0.5, vhat = 0.25 -> update 0.01 * 0.5 / (0.5 + 1e-8)
        let expected = 1.998 - 0.01 * 0.5 / (0.5 + 1e-8);
        assert!((store.tensors()[0].item() - expected).abs() < 1e-15);

        // second step, gradient -1.0
        let mut grads = vec![Tensor::scalar(-1.0)];
        state.step(&mut store, &mut grads).unwrap();
        let m: f64 = 0.9 * 0.05 + 0.1 * -1.0;
        let v: f64 = 0.99 * 0.0025 + 0.01 * 1.0;
        let mhat = m / (1.0 - 0.81);
        let vhat = v / (1.0 - 0.9801);
        let expected = expected * (1.0 - 0.001) - 0.01 * mhat / (vhat.sqrt() + 1e-8);
        assert!((store.tensors()[0].item() - expected).abs() < 1e-14);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut store = single(0.0);
        let mut state = OptimizerState::new(AdamWConfig::default(), &store);
        let mut grads = vec![Tensor::scalar(f64::NAN)];
        assert!(matches!(
            state.step(&mut store, &mut grads),
            Err(NumericsError::Divergence(_))
        ));
    }
}
