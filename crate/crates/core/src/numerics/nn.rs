//! Network building blocks on top of the tape: affine layers, MLPs,
//! layer normalization and multi-head attention.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, NumericsError, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
}

/// Xavier/Glorot uniform matrix with `fan_in` rows and `fan_out` columns.
pub fn xavier_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("sizes agree")
}

/// `x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(rng, fan_in, fan_out));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, fan_out));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var, NumericsError> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Sequential affine layers, each followed by its activation.
pub fn mlp_block(g: &mut Graph<'_>, input: Var, layers: &[(Var, Var, Activation)]) -> Result<Var, NumericsError> {
    let mut x = input;
    for (w, b, act) in layers {
        let y = g.matmul(x, *w)?;
        x = g.add_row(y, *b)?;
        if *act == Activation::Relu {
            x = g.relu(x)?;
        }
    }
    Ok(x)
}

/// Stored MLP: ReLU between layers, no activation after the last one.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes` lists every width including input and output.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var, NumericsError> {
        let n = self.layers.len();
        let bound: Vec<(Var, Var, Activation)> = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let act = if i + 1 < n { Activation::Relu } else { Activation::Identity };
                (g.param(l.weight), g.param(l.bias), act)
            })
            .collect();
        mlp_block(g, x, &bound)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, eps: f64) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::filled(1, dim, 1.0));
        let offset = store.add(format!("{name}.offset"), Tensor::zeros(1, dim));
        Self { gain, offset, eps }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var, NumericsError> {
        let gain = g.param(self.gain);
        let offset = g.param(self.offset);
        g.layer_norm(x, gain, offset, self.eps)
    }
}

/// Projection weights of one multi-head attention block.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

/// Attention result plus the per-head weight matrices (queries x keys).
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self, NumericsError> {
        if heads == 0 || dim % heads != 0 {
            return Err(NumericsError::Shape(format!("dim {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
            dim,
        })
    }

    /// Scaled dot-product attention per head, concatenated and projected.
    ///
    /// `key_valid[j] == false` removes key `j` from every query's distribution.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        queries: Var,
        keys: Var,
        values: Var,
        key_valid: Option<&[bool]>,
    ) -> Result<AttentionOutput, NumericsError> {
        let (qd, kd, vd) = (g.value(queries).cols(), g.value(keys).cols(), g.value(values).cols());
        if qd != self.dim || kd != self.dim || vd != self.dim {
            return Err(NumericsError::Shape(format!(
                "attention dims q={qd} k={kd} v={vd}, expected {}",
                self.dim
            )));
        }
        if g.value(keys).rows() != g.value(values).rows() {
            return Err(NumericsError::Shape("key and value lengths differ".into()));
        }
        if let Some(m) = key_valid {
            if m.len() != g.value(keys).rows() {
                return Err(NumericsError::Shape("mask length differs from key count".into()));
            }
        }
        let q = self.query.forward(g, queries)?;
        let k = self.key.forward(g, keys)?;
        let v = self.value.forward(g, values)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut head_outputs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh)?,
                    g.slice_cols(k, h * dh, dh)?,
                    g.slice_cols(v, h * dh, dh)?,
                )
            };
            let scores = g.matmul_t(qh, kh)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.masked_softmax(scores, key_valid)?;
            head_outputs.push(g.matmul(attn, vh)?);
            weights.push(attn);
        }
        let merged = if self.heads == 1 { head_outputs[0] } else { g.concat_cols(&head_outputs)? };
        let output = self.output.forward(g, merged)?;
        Ok(AttentionOutput { output, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set_identity(store: &mut ParamStore, l: &Linear, dim: usize) {
        let t = store.get_mut(l.weight);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = if i / dim == i % dim { 1.0 } else { 0.0 };
        }
    }

    fn identity_attention(dim: usize, heads: usize) -> (ParamStore, MultiHeadAttention) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mha = MultiHeadAttention::new(&mut store, "att", dim, heads, &mut rng).unwrap();
        for l in [mha.query, mha.key, mha.value, mha.output] {
            set_identity(&mut store, &l, dim);
        }
        (store, mha)
    }

    #[test]
    fn single_key_returns_value() {
        let (store, mha) = identity_attention(4, 2);
        let mut g = Graph::new(&store);
        let q = g.constant(Tensor::from_rows(&[vec![1.0, -2.0, 0.5, 3.0], vec![0.0; 4]]).unwrap()).unwrap();
        let k = g.constant(Tensor::row(&[0.3, 0.1, -0.2, 0.9])).unwrap();
        let v = g.constant(Tensor::row(&[5.0, 6.0, 7.0, 8.0])).unwrap();
        let out = mha.forward(&mut g, q, k, v, None).unwrap();
        let o = g.value(out.output);
        for r in 0..2 {
            assert_eq!(o.row_slice(r), &[5.0, 6.0, 7.0, 8.0]);
        }
    }

    #[test]
    fn identical_keys_give_uniform_weights_over_unmasked() {
        let (store, mha) = identity_attention(4, 2);
        let mut g = Graph::new(&store);
        let q = g.constant(Tensor::row(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        let k = g.constant(Tensor::from_rows(&vec![vec![0.5, -1.0, 2.0, 0.0]; 4]).unwrap()).unwrap();
        let v = g.constant(Tensor::from_rows(&[vec![1.0; 4], vec![2.0; 4], vec![3.0; 4], vec![4.0; 4]]).unwrap()).unwrap();
        let mask = [true, false, true, true];
        let out = mha.forward(&mut g, q, k, v, Some(&mask)).unwrap();
        for w in &out.weights {
            let row = g.value(*w).row_slice(0);
            assert_eq!(row[1], 0.0);
            for j in [0, 2, 3] {
                assert!((row[j] - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_by_two_matches_hand_oracle() {
        // one head, identity projections: weights = softmax(q k^T / sqrt(d)).
        let (store, mha) = identity_attention(2, 1);
        let qv = [[1.0, 0.0], [0.5, 2.0]];
        let kv = [[1.0, 1.0], [-1.0, 0.5]];
        let vv = [[1.0, 2.0], [3.0, -1.0]];
        let mut g = Graph::new(&store);
        let q = g.constant(Tensor::from_rows(&qv.map(|r| r.to_vec())).unwrap()).unwrap();
        let k = g.constant(Tensor::from_rows(&kv.map(|r| r.to_vec())).unwrap()).unwrap();
        let v = g.constant(Tensor::from_rows(&vv.map(|r| r.to_vec())).unwrap()).unwrap();
        let out = mha.forward(&mut g, q, k, v, None).unwrap();
        let o = g.value(out.output).clone();
        for i in 0..2 {
            let s: Vec<f64> = (0..2)
                .map(|j| (qv[i][0] * kv[j][0] + qv[i][1] * kv[j][1]) / 2f64.sqrt())
                .collect();
            let z = s[0].exp() + s[1].exp();
            let w = [s[0].exp() / z, s[1].exp() / z];
            for c in 0..2 {
                let expected = w[0] * vv[0][c] + w[1] * vv[1][c];
                assert!((o.get(i, c) - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let (store, mha) = identity_attention(2, 1);
        let mut g = Graph::new(&store);
        let q = g.constant(Tensor::row(&[1.0, 0.0])).unwrap();
        let k = g.constant(Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap()).unwrap();
        let err = mha.forward(&mut g, q, k, k, Some(&[false, false])).unwrap_err();
        assert!(matches!(err, NumericsError::DegenerateMask { .. }));
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let (store, mha) = identity_attention(4, 2);
        let mut g = Graph::new(&store);
        let q = g.constant(Tensor::row(&[1.0, 0.0, 0.0])).unwrap();
        let k = g.constant(Tensor::row(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(matches!(mha.forward(&mut g, q, k, k, None), Err(NumericsError::Shape(_))));
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(MultiHeadAttention::new(&mut store, "x", 5, 2, &mut rng).is_err());
    }

    #[test]
    fn mlp_identity_and_relu_cases() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::from_rows(&[vec![1.0, -2.0], vec![3.0, 4.0]]).unwrap()).unwrap();
        let eye = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()).unwrap();
        let zero = g.constant(Tensor::zeros(1, 2)).unwrap();
        let y = mlp_block(&mut g, x, &[(eye, zero, Activation::Identity)]).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let neg = g.constant(Tensor::from_rows(&[vec![-1.0, -2.0]]).unwrap()).unwrap();
        let w = g.constant(Tensor::from_rows(&[vec![1.0, 0.5, 2.0], vec![0.0, 1.0, 3.0]]).unwrap()).unwrap();
        let b = g.constant(Tensor::row(&[-0.1, 0.0, -1.0])).unwrap();
        let y = mlp_block(&mut g, neg, &[(w, b, Activation::Relu)]).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));

        let bad = g.constant(Tensor::zeros(3, 3)).unwrap();
        assert!(mlp_block(&mut g, x, &[(bad, zero, Activation::Relu)]).is_err());
    }

    #[test]
    fn mlp_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..3 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w1: Vec<f64> = (0..4 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b1: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut expected = vec![0.0; 3 * 2];
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = b1[j];
                for p in 0..4 {
                    acc += x[i * 4 + p] * w1[p * 2 + j];
                }
                expected[i * 2 + j] = acc;
            }
        }

        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let xv = g.constant(Tensor::matrix(3, 4, x).unwrap()).unwrap();
        let wv = g.constant(Tensor::matrix(4, 2, w1).unwrap()).unwrap();
        let bv = g.constant(Tensor::row(&b1)).unwrap();
        let y = mlp_block(&mut g, xv, &[(wv, bv, Activation::Identity)]).unwrap();
        for (a, b) in g.value(y).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
