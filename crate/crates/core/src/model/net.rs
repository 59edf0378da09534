//! Encoder, decoder and prior networks shared by the MACVAE and the
//! initializer.

use candle_core::{Tensor, D};

use super::layers::{DecoderLayer, EncoderLayer, Linear, TemporalConv};
use super::losses::GaussianParams;
use super::params::{join, ParamStore};
use crate::corpus::TRANSITION_ID;
use crate::error::{Error, Result};

/// Transformer encoder over per-frame `[pose embedding ; action embedding]`
/// rows, followed by a temporal convolution, a time mean and linear heads.
pub struct Encoder {
    pose_proj: Linear,
    action_emb: Tensor,
    layers: Vec<EncoderLayer>,
    conv: TemporalConv,
    pub(crate) heads: Vec<Linear>,
    labels: usize,
}

pub struct Dims {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub kernel: usize,
    pub pose_dim: usize,
    pub labels: usize,
}

impl Encoder {
    pub fn new(ps: &mut ParamStore, prefix: &str, dims: &Dims, n_heads_out: usize) -> Result<Self> {
        let half = dims.d / 2;
        Ok(Self {
            pose_proj: Linear::new(ps, &join(prefix, "pose_proj"), dims.pose_dim, half)?,
            action_emb: ps.normal(&join(prefix, "action_emb"), &[dims.labels, half], 1.0)?,
            layers: (0..dims.layers)
                .map(|i| EncoderLayer::new(ps, &join(prefix, &format!("layer{i}")), dims.d, dims.heads, dims.ff))
                .collect::<Result<_>>()?,
            conv: TemporalConv::new(ps, &join(prefix, "conv"), dims.d, dims.d, dims.kernel)?,
            heads: (0..n_heads_out)
                .map(|i| Linear::new(ps, &join(prefix, &format!("head{i}")), dims.d, dims.d))
                .collect::<Result<_>>()?,
            labels: dims.labels,
        })
    }

    pub fn action_embedding(&self, label: usize) -> Result<Tensor> {
        if label >= self.labels {
            return Err(Error::UnknownLabel(format!("label id {label}")));
        }
        Ok(self.action_emb.narrow(0, label, 1)?.squeeze(0)?)
    }

    /// `(L, D)` poses and per-frame labels to `(L, d)` rows.
    pub fn embed(&self, poses: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let l = poses.dim(0)?;
        if labels.len() != l {
            return Err(Error::LengthMismatch(labels.len(), l));
        }
        if let Some(&bad) = labels.iter().find(|&&x| x >= self.labels) {
            return Err(Error::UnknownLabel(format!("label id {bad}")));
        }
        let ids = Tensor::from_vec(labels.iter().map(|&x| x as u32).collect::<Vec<_>>(), l, poses.device())?;
        let actions = self.action_emb.index_select(&ids, 0)?;
        Ok(Tensor::cat(&[self.pose_proj.forward(poses)?, actions], 1)?)
    }

    /// Output of the temporal convolution, `(L, d)`.
    pub fn features(&self, poses: &Tensor, labels: &[usize], pe: &Tensor) -> Result<Tensor> {
        let mut h = (self.embed(poses, labels)? + pe)?;
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        self.conv.forward(&h)
    }

    /// Each head applied to the time mean of the features, each `(d,)`.
    pub fn forward(&self, poses: &Tensor, labels: &[usize], pe: &Tensor) -> Result<Vec<Tensor>> {
        let pooled = self.features(poses, labels, pe)?.mean_keepdim(0)?;
        self.heads.iter().map(|h| Ok(h.forward(&pooled)?.squeeze(0)?)).collect()
    }
}

/// Transformer decoder: sinusoidal queries attend to stacked latents.
pub struct Decoder {
    layers: Vec<DecoderLayer>,
    conv: TemporalConv,
    out: Linear,
}

impl Decoder {
    pub fn new(ps: &mut ParamStore, prefix: &str, dims: &Dims) -> Result<Self> {
        Ok(Self {
            layers: (0..dims.layers)
                .map(|i| DecoderLayer::new(ps, &join(prefix, &format!("layer{i}")), dims.d, dims.heads, dims.ff))
                .collect::<Result<_>>()?,
            conv: TemporalConv::new(ps, &join(prefix, "conv"), dims.d, dims.d, dims.kernel)?,
            out: Linear::new(ps, &join(prefix, "out"), dims.d, dims.pose_dim)?,
        })
    }

    /// `memory` and `queries` are both `(L, d)`; returns `(L, D)` poses.
    pub fn forward(&self, memory: &Tensor, queries: &Tensor) -> Result<Tensor> {
        let mut h = queries.clone();
        for layer in &self.layers {
            h = layer.forward(&h, memory)?;
        }
        self.out.forward(&self.conv.forward(&h)?)
    }
}

/// Rows `[z_p × l_t ; z_c × l_c]` as a `(l_t + l_c, d)` tensor.
pub fn stack_latents(z_p: &Tensor, l_t: usize, z_c: &Tensor, l_c: usize) -> Result<Tensor> {
    let d = z_p.dim(0)?;
    let p = z_p.unsqueeze(0)?.broadcast_as((l_t, d))?;
    let c = z_c.unsqueeze(0)?.broadcast_as((l_c, d))?;
    Ok(Tensor::cat(&[p, c], 0)?.contiguous()?)
}

/// One linear layer over the tail of S_p, plus a learned transition token
/// added to both outputs.
pub struct PrevNet {
    pub(crate) lin: Linear,
    pub(crate) token: Tensor,
    frames: usize,
    whole: bool,
    d: usize,
}

impl PrevNet {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        dims: &Dims,
        frames: usize,
        whole: bool,
        sees_action: bool,
    ) -> Result<Self> {
        let mut input = if whole { dims.pose_dim } else { frames * dims.pose_dim };
        if sees_action {
            input += dims.d / 2;
        }
        Ok(Self {
            lin: Linear::new(ps, &join(prefix, "lin"), input, 2 * dims.d)?,
            token: ps.normal(&join(prefix, "transition_token"), &[dims.d], 0.1)?,
            frames,
            whole,
            d: dims.d,
        })
    }

    /// `s_p` is `(l_p, D)`; `action` is the embedding of a_c when PrevNet
    /// is configured to see it.
    pub fn forward(&self, s_p: &Tensor, action: Option<&Tensor>) -> Result<GaussianParams> {
        let l = s_p.dim(0)?;
        if l == 0 {
            return Err(Error::EmptyMotion);
        }
        let flat = if self.whole {
            s_p.mean(0)?
        } else {
            let tail = if l >= self.frames {
                s_p.narrow(0, l - self.frames, self.frames)?
            } else {
                s_p.pad_with_same(0, self.frames - l, 0)?
            };
            tail.flatten_all()?
        };
        let input = match action {
            Some(a) => Tensor::cat(&[flat, a.clone()], 0)?,
            None => flat,
        };
        let out = self.lin.forward(&input.unsqueeze(0)?)?.squeeze(0)?;
        let mu = out.narrow(D::Minus1, 0, self.d)?.add(&self.token)?;
        let log_sigma = out.narrow(D::Minus1, self.d, self.d)?.add(&self.token)?;
        GaussianParams::new(mu, log_sigma)
    }
}

/// Per-action learned prior tokens.
pub struct CurrNet {
    pub(crate) mu: Tensor,
    pub(crate) log_sigma: Tensor,
    labels: usize,
}

impl CurrNet {
    pub fn new(ps: &mut ParamStore, prefix: &str, dims: &Dims) -> Result<Self> {
        Ok(Self {
            mu: ps.normal(&join(prefix, "mu"), &[dims.labels, dims.d], 1.0)?,
            log_sigma: ps.zeros(&join(prefix, "log_sigma"), &[dims.labels, dims.d])?,
            labels: dims.labels,
        })
    }

    pub fn forward(&self, label: usize) -> Result<GaussianParams> {
        if label == TRANSITION_ID {
            return Err(Error::TransitionLabelRejected);
        }
        if label >= self.labels {
            return Err(Error::UnknownLabel(format!("label id {label}")));
        }
        GaussianParams::new(
            self.mu.narrow(0, label, 1)?.squeeze(0)?,
            self.log_sigma.narrow(0, label, 1)?.squeeze(0)?,
        )
    }

    /// Rows of the mean table for action labels, as plain vectors.
    pub fn means(&self) -> Result<Vec<Vec<f64>>> {
        let all: Vec<Vec<f64>> = self.mu.to_dtype(candle_core::DType::F64)?.to_vec2()?;
        Ok(all.into_iter().skip(1).collect())
    }
}
