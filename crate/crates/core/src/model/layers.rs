//! Unbatched building blocks over `(L, features)` tensors.

use candle_core::{DType, Device, Tensor, D};

use super::params::{join, ParamStore};
use crate::error::Result;

/// Affine map with the weight stored `(in, out)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub(crate) w: Tensor,
    pub(crate) b: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, prefix: &str, input: usize, output: usize) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        Ok(Self {
            w: ps.uniform(&join(prefix, "weight"), &[input, output], bound)?,
            b: ps.uniform(&join(prefix, "bias"), &[output], bound)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.w)?.broadcast_add(&self.b)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: Tensor,
    bias: Tensor,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: ps.ones(&join(prefix, "gain"), &[dim])?,
            bias: ps.zeros(&join(prefix, "bias"), &[dim])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let centered = x.broadcast_sub(&x.mean_keepdim(D::Minus1)?)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gain)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(ps: &mut ParamStore, prefix: &str, d: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(ps, &join(prefix, "q"), d, d)?,
            k: Linear::new(ps, &join(prefix, "k"), d, d)?,
            v: Linear::new(ps, &join(prefix, "v"), d, d)?,
            o: Linear::new(ps, &join(prefix, "o"), d, d)?,
            heads,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (l, d) = x.dims2()?;
        Ok(x.reshape((l, self.heads, d / self.heads))?
            .transpose(0, 1)?
            .contiguous()?)
    }

    /// Queries from `x`, keys and values from `memory`.
    pub fn forward(&self, x: &Tensor, memory: &Tensor) -> Result<Tensor> {
        let (l, d) = x.dims2()?;
        let q = self.split(&self.q.forward(x)?)?;
        let k = self.split(&self.k.forward(memory)?)?;
        let v = self.split(&self.v.forward(memory)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let scores = (q.matmul(&k.transpose(1, 2)?.contiguous()?)? * scale)?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = attn.matmul(&v)?.transpose(0, 1)?.contiguous()?.reshape((l, d))?;
        self.o.forward(&out)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(ps: &mut ParamStore, prefix: &str, d: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(ps, &join(prefix, "up"), d, hidden)?,
            down: Linear::new(ps, &join(prefix, "down"), hidden, d)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.silu()?)
    }
}

/// Pre-norm self-attention block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    ff: FeedForward,
}

impl EncoderLayer {
    pub fn new(ps: &mut ParamStore, prefix: &str, d: usize, heads: usize, ff: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(ps, &join(prefix, "norm1"), d)?,
            attn: Attention::new(ps, &join(prefix, "attn"), d, heads)?,
            norm2: LayerNorm::new(ps, &join(prefix, "norm2"), d)?,
            ff: FeedForward::new(ps, &join(prefix, "ff"), d, ff)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h)?)?;
        let h = self.norm2.forward(&x)?;
        Ok((&x + self.ff.forward(&h)?)?)
    }
}

/// Pre-norm block with self-attention, cross-attention over `memory`, and
/// a feed-forward stage.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    norm1: LayerNorm,
    self_attn: Attention,
    norm2: LayerNorm,
    cross_attn: Attention,
    norm3: LayerNorm,
    ff: FeedForward,
}

impl DecoderLayer {
    pub fn new(ps: &mut ParamStore, prefix: &str, d: usize, heads: usize, ff: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(ps, &join(prefix, "norm1"), d)?,
            self_attn: Attention::new(ps, &join(prefix, "self_attn"), d, heads)?,
            norm2: LayerNorm::new(ps, &join(prefix, "norm2"), d)?,
            cross_attn: Attention::new(ps, &join(prefix, "cross_attn"), d, heads)?,
            norm3: LayerNorm::new(ps, &join(prefix, "norm3"), d)?,
            ff: FeedForward::new(ps, &join(prefix, "ff"), d, ff)?,
        })
    }

    pub fn forward(&self, x: &Tensor, memory: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(x)?;
        let x = (x + self.self_attn.forward(&h, &h)?)?;
        let h = self.norm2.forward(&x)?;
        let x = (&x + self.cross_attn.forward(&h, memory)?)?;
        let h = self.norm3.forward(&x)?;
        Ok((&x + self.ff.forward(&h)?)?)
    }
}

/// 1D convolution over time with edge-replicated "same" padding,
/// implemented as a linear map over `kernel` stacked time shifts.
#[derive(Clone, Debug)]
pub struct TemporalConv {
    pub(crate) lin: Linear,
    kernel: usize,
}

impl TemporalConv {
    pub fn new(ps: &mut ParamStore, prefix: &str, input: usize, output: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            lin: Linear::new(ps, prefix, kernel * input, output)?,
            kernel,
        })
    }

    /// Weight `(kernel·in, out)` set to pass the centre tap through, plus
    /// Gaussian noise of standard deviation `noise`; bias zero.
    pub fn identity(ps: &mut ParamStore, prefix: &str, dim: usize, kernel: usize, noise: f64) -> Result<Self> {
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, noise.max(0.0)).map_err(|e| crate::Error::ModelConfig(e.to_string()))?;
        let centre = kernel / 2;
        let w = ps.from_fn(&join(prefix, "weight"), &[kernel * dim, dim], |idx, rng| {
            let eye = if idx[0] == centre * dim + idx[1] { 1.0 } else { 0.0 };
            eye + if noise > 0.0 { normal.sample(rng) } else { 0.0 }
        })?;
        let b = ps.zeros(&join(prefix, "bias"), &[dim])?;
        Ok(Self {
            lin: Linear { w, b },
            kernel,
        })
    }

    pub fn half_width(&self) -> usize {
        self.kernel / 2
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let l = x.dim(0)?;
        let half = self.kernel / 2;
        let padded = x.pad_with_same(0, half, half)?;
        let shifts: Vec<Tensor> = (0..self.kernel)
            .map(|o| padded.narrow(0, o, l))
            .collect::<candle_core::Result<_>>()?;
        self.lin.forward(&Tensor::cat(&shifts, 1)?)
    }
}

/// Sinusoidal position codes `(len, d)`.
pub fn sinusoidal(len: usize, d: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * rate;
            data.push(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Ok(Tensor::from_vec(data, (len, d), device)?.to_dtype(dtype)?)
}
