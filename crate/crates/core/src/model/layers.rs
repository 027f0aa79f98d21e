//! Post-norm transformer encoder and decoder layers.

use rand::Rng;

use crate::numerics::{Graph, LayerNorm, Mlp, MultiHeadAttention, NumericsError, ParamStore, Var};

fn with_pos(g: &mut Graph<'_>, x: Var, pos: Option<Var>) -> Result<Var, NumericsError> {
    match pos {
        Some(p) => g.add(x, p),
        None => Ok(x),
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ffn: Mlp,
    norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        eps: f64,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        Ok(Self {
            attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), dim, heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim, eps),
            ffn: Mlp::new(store, &format!("{name}.ffn"), &[dim, ffn_dim, dim], rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim, eps),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, pos: Option<Var>, valid: Option<&[bool]>) -> Result<Var, NumericsError> {
        let qk = with_pos(g, x, pos)?;
        let a = self.attn.forward(g, qk, qk, x, valid)?.output;
        let x = g.add(x, a)?;
        let x = self.norm1.forward(g, x)?;
        let f = self.ffn.forward(g, x)?;
        let x = g.add(x, f)?;
        self.norm2.forward(g, x)
    }
}

/// Memory the decoder cross-attends to.
#[derive(Debug, Clone, Copy)]
pub struct Memory<'a> {
    pub features: Var,
    pub pos: Option<Var>,
    pub valid: Option<&'a [bool]>,
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    self_attn: Option<(MultiHeadAttention, LayerNorm)>,
    cross_attn: MultiHeadAttention,
    norm1: LayerNorm,
    ffn: Mlp,
    norm2: LayerNorm,
}

impl DecoderLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        eps: f64,
        with_self_attention: bool,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        let self_attn = if with_self_attention {
            Some((
                MultiHeadAttention::new(store, &format!("{name}.self_attn"), dim, heads, rng)?,
                LayerNorm::new(store, &format!("{name}.norm0"), dim, eps),
            ))
        } else {
            None
        };
        Ok(Self {
            self_attn,
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), dim, heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim, eps),
            ffn: Mlp::new(store, &format!("{name}.ffn"), &[dim, ffn_dim, dim], rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim, eps),
        })
    }

    /// `query_pos` is added to the queries (and self-attention keys) before
    /// every attention.
    pub fn forward(&self, g: &mut Graph<'_>, tgt: Var, query_pos: Var, memory: Memory<'_>) -> Result<Var, NumericsError> {
        // the proposal encoding enters the residual stream, not only the queries
        let mut x = g.add(tgt, query_pos)?;
        if let Some((attn, norm)) = &self.self_attn {
            let a = attn.forward(g, x, x, x, None)?.output;
            let y = g.add(x, a)?;
            x = norm.forward(g, y)?;
        }
        let q = x;
        let k = with_pos(g, memory.features, memory.pos)?;
        let a = self.cross_attn.forward(g, q, k, memory.features, memory.valid)?.output;
        let y = g.add(x, a)?;
        x = self.norm1.forward(g, y)?;
        let f = self.ffn.forward(g, x)?;
        let y = g.add(x, f)?;
        self.norm2.forward(g, y)
    }
}
