//! Differentiable dense-matrix layer: tensors, a recording tape with a
//! reverse sweep, network blocks and the optimizer.

mod nn;
mod optim;
mod params;
mod tape;
mod tensor;

pub use nn::{mlp_block, xavier_uniform, Activation, AttentionOutput, LayerNorm, Linear, Mlp, MultiHeadAttention};
pub use optim::{clip_grad_norm, AdamWConfig, OptimizerState, StepInfo};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Graph, Var};
pub use tensor::Tensor;

pub(crate) use tape::log_sum_exp;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("every key is masked for query row {row}")]
    DegenerateMask { row: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training diverged: {0}")]
    Divergence(String),
}

/// Reverse sweep from `output`; the spelled-out name for [`Graph::backward`].
pub fn compute_gradients(tape: &Graph<'_>, output: Var) -> Result<Gradients, NumericsError> {
    tape.backward(output)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn softmax_of(values: &[f64]) -> Vec<f64> {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::row(values)).unwrap();
        let y = g.softmax(x).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_of(&[0.0, 0.0, 0.0]);
        for v in u {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        // exp-normalize by hand: e^1/(e^1+e^2) = 1/(1+e)
        let p = softmax_of(&[1.0, 2.0]);
        let e = std::f64::consts::E;
        assert!((p[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((p[0] - 0.26894).abs() < 1e-5);
        assert!((p[1] - 0.73106).abs() < 1e-5);

        let a = softmax_of(&[0.3, -1.2, 4.0]);
        let b = softmax_of(&[1000.3, 998.8, 1004.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        // constants are checked at the boundary as well
        assert!(g.constant(Tensor::row(&[f64::NAN])).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let gain = g.constant(Tensor::row(&[1.0, 1.0, 1.0])).unwrap();
        let off = g.constant(Tensor::row(&[0.0, 0.0, 0.0])).unwrap();
        let x = g.constant(Tensor::row(&[1.0, 1.0, 1.0])).unwrap();
        let y = g.layer_norm(x, gain, off, 1e-12).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);

        let gain2 = g.constant(Tensor::row(&[1.0, 1.0])).unwrap();
        let off2 = g.constant(Tensor::row(&[0.0, 0.0])).unwrap();
        let x2 = g.constant(Tensor::row(&[-1.0, 1.0])).unwrap();
        let y2 = g.layer_norm(x2, gain2, off2, 1e-12).unwrap();
        for (a, b) in g.value(y2).data().iter().zip([-1.0, 1.0]) {
            assert!((a - b).abs() < 1e-11);
        }

        let row = [0.3, 2.5, -1.7, 0.05, 4.2, -0.9];
        let gain6 = g.constant(Tensor::row(&[1.0; 6])).unwrap();
        let off6 = g.constant(Tensor::row(&[0.0; 6])).unwrap();
        let x6 = g.constant(Tensor::row(&row)).unwrap();
        let y6 = g.layer_norm(x6, gain6, off6, 1e-12).unwrap();
        let out = g.value(y6).data();
        let mean = out.iter().sum::<f64>() / 6.0;
        let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()).unwrap();
        let s = g.sum(x).unwrap();
        let grads = compute_gradients(&g, s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn huber_gradient_zero_at_target() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let target = std::rc::Rc::new(Tensor::row(&[0.5, -3.0]));
        let x = g.input(Tensor::row(&[0.5, -3.0])).unwrap();
        let h = g.huber(x, target, 1.0).unwrap();
        let s = g.sum(h).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_output_is_contract_error() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::row(&[1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(x), Err(NumericsError::Contract(_))));
    }

    #[test]
    fn unused_params_get_zero_gradient() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::row(&[2.0]));
        store.add("unused", Tensor::row(&[5.0, 6.0]));
        let mut g = Graph::new(&store);
        let p = g.param(used);
        let y = g.mul(p, p).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap().param_grads(&store);
        assert_eq!(grads[0].data(), &[4.0]);
        assert_eq!(grads[1].data(), &[0.0, 0.0]);
    }
}
