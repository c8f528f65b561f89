//! Transformer building blocks shared by the text encoder, the SD map
//! encoder and the toy map decoder. All blocks are pre-norm.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Source of dropout masks. `Off` is used for evaluation and oracles.
pub enum Dropout<'a> {
    Off,
    On { p: f64, rng: &'a mut Rng },
}

impl Dropout<'_> {
    pub fn is_on(&self) -> bool {
        matches!(self, Dropout::On { p, .. } if *p > 0.0)
    }

    /// Draws an inverted-dropout mask: entries are 0 or 1/(1-p).
    pub fn mask(&mut self, shape: &[usize]) -> Option<Tensor> {
        match self {
            Dropout::On { p, rng } if *p > 0.0 => {
                let keep = 1.0 - *p;
                let n = shape.iter().product();
                let data = (0..n)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                Some(Tensor::new(shape.to_vec(), data).expect("shape from graph"))
            }
            _ => None,
        }
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        match self.mask(&shape) {
            Some(m) => g.dropout(x, &m),
            None => Ok(x),
        }
    }
}

fn normal_tensor(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive dims")
}

/// Registers a `rows × cols` table drawn from N(0, std²).
pub fn normal_param(
    store: &mut ParamStore,
    name: &str,
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut Rng,
) -> Result<ParamId> {
    store.register(name, normal_tensor(&[rows, cols], std, rng))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Xavier-normal weights, zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let std = (2.0 / (d_in + d_out) as f64).sqrt();
        let w = store.register(format!("{name}.w"), normal_tensor(&[d_in, d_out], std, rng))?;
        let b = if bias {
            Some(store.register(format!("{name}.b"), Tensor::zeros(&[d_out]))?)
        } else {
            None
        };
        Ok(Linear { w, b, d_in, d_out })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        let gamma = store.register(format!("{name}.gamma"), Tensor::vector(vec![1.0; d])?)?;
        let beta = store.register(format!("{name}.beta"), Tensor::zeros(&[d]))?;
        Ok(LayerNorm { gamma, beta })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let n = g.layer_norm(x);
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let y = g.mul_row(n, gamma)?;
        g.add_row(y, beta)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        Ok(MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), d, d, true, rng)?,
            // A key bias shifts every score of a query by the same amount,
            // which softmax cancels; it would only ever receive zero gradient.
            k: Linear::new(store, &format!("{name}.k"), d, d, false, rng)?,
            v: Linear::new(store, &format!("{name}.v"), d, d, true, rng)?,
            o: Linear::new(store, &format!("{name}.o"), d, d, true, rng)?,
            heads,
        })
    }

    /// Attention of `xq` rows over `xkv` rows within matching segments.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        xq: Var,
        xkv: Var,
        q_seg: &[usize],
        kv_seg: &[usize],
    ) -> Result<Var> {
        let q = self.q.forward(g, store, xq)?;
        let k = self.k.forward(g, store, xkv)?;
        let v = self.v.forward(g, store, xkv)?;
        let a = g.attention(q, k, v, self.heads, q_seg, kv_seg)?;
        self.o.forward(g, store, a)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, d_ff: usize, rng: &mut Rng) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(store, &format!("{name}.up"), d, d_ff, true, rng)?,
            down: Linear::new(store, &format!("{name}.down"), d_ff, d, true, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.up.forward(g, store, x)?;
        let h = g.gelu(h);
        self.down.forward(g, store, h)
    }
}

/// Pre-norm self-attention block: `x + attn(ln(x))`, then `h + ff(ln(h))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

impl EncoderBlock {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, d_ff: usize, rng: &mut Rng) -> Result<Self> {
        Ok(EncoderBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), d, d_ff, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, seg: &[usize], drop: &mut Dropout) -> Result<Var> {
        let n = self.ln1.forward(g, store, x)?;
        let a = self.attn.forward(g, store, n, n, seg, seg)?;
        let a = drop.apply(g, a)?;
        let h = g.add(x, a)?;
        let n = self.ln2.forward(g, store, h)?;
        let f = self.ff.forward(g, store, n)?;
        let f = drop.apply(g, f)?;
        g.add(h, f)
    }
}

/// Pre-norm decoder block: self-attention over queries, cross-attention to a
/// memory, then feed-forward, each with a residual.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub ln1: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln3: LayerNorm,
    pub ff: FeedForward,
}

impl DecoderBlock {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, d_ff: usize, rng: &mut Rng) -> Result<Self> {
        Ok(DecoderBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d)?,
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d)?,
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d, heads, rng)?,
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), d)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), d, d_ff, rng)?,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        q_seg: &[usize],
        memory: Var,
        mem_seg: &[usize],
        drop: &mut Dropout,
    ) -> Result<Var> {
        let n = self.ln1.forward(g, store, x)?;
        let a = self.self_attn.forward(g, store, n, n, q_seg, q_seg)?;
        let a = drop.apply(g, a)?;
        let h = g.add(x, a)?;
        let n = self.ln2.forward(g, store, h)?;
        let c = self.cross_attn.forward(g, store, n, memory, q_seg, mem_seg)?;
        let c = drop.apply(g, c)?;
        let h = g.add(h, c)?;
        let n = self.ln3.forward(g, store, h)?;
        let f = self.ff.forward(g, store, n)?;
        let f = drop.apply(g, f)?;
        g.add(h, f)
    }
}
