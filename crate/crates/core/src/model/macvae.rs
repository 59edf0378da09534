use candle_core::{DType, Device, Tensor};
use rand::Rng;

use super::checkpoint::Checkpoint;
use super::config::{ModelConfig, PrevNetInput};
use super::layers::{sinusoidal, TemporalConv};
use super::losses::{loss_kl, recon_from_points, sample_latent, GaussianParams, LatentPair, ReconLoss};
use super::net::{stack_latents, CurrNet, Decoder, Dims, Encoder, PrevNet};
use super::params::ParamStore;
use super::{motion_to_tensor, tensor_to_motion};
use crate::canonicalization::{canonicalize_with_fallback, Axes};
use crate::corpus::{LabelSet, TrainingItem, TRANSITION_ID};
use crate::error::{Error, Result};
use crate::kinematics::tensor::{forward_kinematics, TensorSkeleton};
use crate::kinematics::{Motion, Skeleton};

pub const MACVAE_KIND: &str = "macvae";

/// Posterior or prior over the latent(s).
#[derive(Clone, Debug)]
pub enum Gaussians {
    /// Separate previous-motion and current-action latents.
    Pair { p: GaussianParams, c: GaussianParams },
    /// A single latent (`separate_latent = false`).
    Single(GaussianParams),
}

/// Latent draw matching [`Gaussians`].
#[derive(Clone, Debug)]
pub enum Latent {
    Pair(LatentPair),
    Single(Tensor),
}

impl Gaussians {
    /// KL(self ‖ prior), summed over branches and dimensions.
    pub fn kl(&self, prior: &Gaussians) -> Result<Tensor> {
        match (self, prior) {
            (Gaussians::Pair { p, c }, Gaussians::Pair { p: pp, c: pc }) => Ok((loss_kl(p, pp)? + loss_kl(c, pc)?)?),
            (Gaussians::Single(a), Gaussians::Single(b)) => loss_kl(a, b),
            _ => Err(Error::ShapeMismatch("posterior and prior latent layouts differ".into())),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Latent> {
        Ok(match self {
            Gaussians::Pair { p, c } => Latent::Pair(LatentPair {
                z_p: sample_latent(p, rng)?,
                z_c: sample_latent(c, rng)?,
            }),
            Gaussians::Single(g) => Latent::Single(sample_latent(g, rng)?),
        })
    }
}

/// A training window in the model's canonical frame, ready for the network.
pub struct PreparedItem {
    /// `[S_p ; T ; S_c]` poses, `(L, D)`.
    pub input: Tensor,
    pub labels: Vec<usize>,
    pub prev_label: usize,
    pub curr_label: usize,
    pub prev_len: usize,
    pub transition_len: usize,
    pub curr_len: usize,
    /// FK surface points of `[T ; S_c]`, `(l_t + l_c, P, 3)`.
    pub target_points: Tensor,
}

impl PreparedItem {
    pub fn previous(&self) -> Result<Tensor> {
        Ok(self.input.narrow(0, 0, self.prev_len)?)
    }

    pub fn target(&self) -> Result<Tensor> {
        Ok(self
            .input
            .narrow(0, self.prev_len, self.transition_len + self.curr_len)?)
    }
}

/// One forward pass through the training graph.
pub struct ForwardOutput {
    /// Postprocessed `[T̂ ; Ŝ_c]`.
    pub pred: Tensor,
    pub posterior: Gaussians,
    pub prior: Gaussians,
}

/// Per-item loss terms.
pub struct ItemLoss {
    pub recon: ReconLoss,
    pub kl: Tensor,
    pub total: Tensor,
}

pub struct Macvae {
    pub config: ModelConfig,
    pub labels: LabelSet,
    pub skeleton: Skeleton,
    params: ParamStore,
    pub(crate) encoder: Encoder,
    decoder: Decoder,
    pub(crate) prevnet: PrevNet,
    pub(crate) currnet: CurrNet,
    pub(crate) post: TemporalConv,
    pe: Tensor,
    tskel: TensorSkeleton,
}

impl Macvae {
    pub fn new(config: ModelConfig, labels: LabelSet, skeleton: Skeleton, seed: u64) -> Result<Self> {
        Self::with_dtype(config, labels, skeleton, seed, DType::F32)
    }

    pub fn with_dtype(
        config: ModelConfig,
        labels: LabelSet,
        skeleton: Skeleton,
        seed: u64,
        dtype: DType,
    ) -> Result<Self> {
        config.validate()?;
        skeleton.validate()?;
        let device = Device::Cpu;
        let mut ps = ParamStore::new(seed, dtype, &device);
        let dims = Dims {
            d: config.d,
            layers: config.layers,
            heads: config.heads,
            ff: config.ff_dim,
            kernel: config.temporal_conv_kernel,
            pose_dim: skeleton.pose_dim(),
            labels: labels.len(),
        };
        let heads = if config.separate_latent { 4 } else { 2 };
        let encoder = Encoder::new(&mut ps, "encoder", &dims, heads)?;
        let decoder = Decoder::new(&mut ps, "decoder", &dims)?;
        let prevnet = PrevNet::new(
            &mut ps,
            "prevnet",
            &dims,
            config.prevnet_frames,
            config.prevnet_input == PrevNetInput::WholeMotion,
            config.prevnet_sees_action,
        )?;
        let currnet = CurrNet::new(&mut ps, "currnet", &dims)?;
        let post = TemporalConv::identity(
            &mut ps,
            "postprocess",
            dims.pose_dim,
            config.temporal_conv_kernel,
            config.postprocess_init_noise,
        )?;
        let pe = sinusoidal(config.max_len, config.d, dtype, &device)?;
        let tskel = TensorSkeleton::new(&skeleton, dtype, &device)?;
        Ok(Self {
            config,
            labels,
            skeleton,
            params: ps,
            encoder,
            decoder,
            prevnet,
            currnet,
            post,
            pe,
            tskel,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn tensor_skeleton(&self) -> &TensorSkeleton {
        &self.tskel
    }

    fn positions(&self, len: usize) -> Result<Tensor> {
        if len > self.config.max_len {
            return Err(Error::LengthOverflow {
                requested: len,
                max: self.config.max_len,
            });
        }
        Ok(self.pe.narrow(0, 0, len)?)
    }

    /// Per-frame `[linear(pose) ; action_embedding[label]]`, `(L, d)`.
    pub fn embed_inputs(&self, motion: &Motion) -> Result<Tensor> {
        let labels = motion
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("motion has no per-frame labels".into()))?;
        let poses = motion_to_tensor(motion, self.skeleton.pose_dim(), self.dtype())?;
        self.encoder.embed(&poses, labels)
    }

    /// Canonicalizes a window at the last frame of S_p and relabels it
    /// `(a_p, transition, a_c)`.
    pub fn prepare(&self, item: &TrainingItem) -> Result<PreparedItem> {
        if item.prev_len == 0 || item.transition_len == 0 || item.curr_len == 0 {
            return Err(Error::InvalidArgument("window segments must be non-empty".into()));
        }
        self.labels.check_action(item.prev_label)?;
        self.labels.check_action(item.curr_label)?;
        let (local, _) = canonicalize_with_fallback(
            &item.motion,
            item.prev_len - 1,
            self.config.canon_mode,
            &Axes::of(&self.skeleton),
        )?;
        let input = motion_to_tensor(&local, self.skeleton.pose_dim(), self.dtype())?;
        let mut labels = vec![item.prev_label; item.prev_len];
        labels.extend(std::iter::repeat_n(TRANSITION_ID, item.transition_len));
        labels.extend(std::iter::repeat_n(item.curr_label, item.curr_len));
        let target = input.narrow(0, item.prev_len, item.transition_len + item.curr_len)?;
        let (_, target_points) = forward_kinematics(&target, &self.tskel)?;
        Ok(PreparedItem {
            input,
            labels,
            prev_label: item.prev_label,
            curr_label: item.curr_label,
            prev_len: item.prev_len,
            transition_len: item.transition_len,
            curr_len: item.curr_len,
            target_points: target_points.detach(),
        })
    }

    fn gaussians_from_heads(&self, heads: Vec<Tensor>) -> Result<Gaussians> {
        let mut it = heads.into_iter();
        let mut next = || {
            it.next()
                .ok_or_else(|| Error::ShapeMismatch("missing encoder head".into()))
        };
        if self.config.separate_latent {
            let p = GaussianParams::new(next()?, next()?)?;
            let c = GaussianParams::new(next()?, next()?)?;
            Ok(Gaussians::Pair { p, c })
        } else {
            Ok(Gaussians::Single(GaussianParams::new(next()?, next()?)?))
        }
    }

    pub fn encode_prepared(&self, item: &PreparedItem) -> Result<Gaussians> {
        let pe = self.positions(item.input.dim(0)?)?;
        let heads = self.encoder.forward(&item.input, &item.labels, &pe)?;
        self.gaussians_from_heads(heads)
    }

    /// Posterior over the latent(s) of a window.
    pub fn encode(&self, item: &TrainingItem) -> Result<Gaussians> {
        self.encode_prepared(&self.prepare(item)?)
    }

    /// PrevNet prior from a canonical `(l_p, D)` previous motion.
    pub fn prevnet(&self, s_p: &Tensor, a_c: usize) -> Result<GaussianParams> {
        let action = if self.config.prevnet_sees_action {
            self.labels.check_action(a_c)?;
            Some(self.encoder.action_embedding(a_c)?)
        } else {
            None
        };
        self.prevnet.forward(s_p, action.as_ref())
    }

    pub fn currnet(&self, a_c: usize) -> Result<GaussianParams> {
        self.labels.check_action(a_c)?;
        self.currnet.forward(a_c)
    }

    /// Prior used at generation time. With a single latent, the PrevNet and
    /// CurrNet parameters are summed.
    pub fn prior(&self, s_p: &Tensor, a_c: usize) -> Result<Gaussians> {
        let p = self.prevnet(s_p, a_c)?;
        let c = self.currnet(a_c)?;
        if self.config.separate_latent {
            Ok(Gaussians::Pair { p, c })
        } else {
            Ok(Gaussians::Single(GaussianParams::new(
                (&p.mu + &c.mu)?,
                (&p.log_sigma + &c.log_sigma)?,
            )?))
        }
    }

    /// The decoder's key/value rows for a latent draw.
    pub fn memory(&self, z: &Latent, l_t: usize, l_c: usize) -> Result<Tensor> {
        match z {
            Latent::Pair(LatentPair { z_p, z_c }) => stack_latents(z_p, l_t, z_c, l_c),
            Latent::Single(z) => stack_latents(z, l_t, z, l_c),
        }
    }

    /// `(l_t + l_c, D)` raw decoder output `[T̃ ; S̃_c]`.
    pub fn decode(&self, z: &Latent, l_t: usize, l_c: usize) -> Result<Tensor> {
        if l_t == 0 || l_c == 0 {
            return Err(Error::InvalidArgument("l_t and l_c must be at least 1".into()));
        }
        let queries = self.positions(l_t + l_c)?;
        self.decoder.forward(&self.memory(z, l_t, l_c)?, &queries)
    }

    /// Temporal convolution over `[S_p ; generated]`, dropping the S_p part.
    /// Only the S_p frames inside the kernel's reach are fed through; the
    /// result is identical to convolving the whole concatenation.
    pub fn postprocess(&self, s_p: &Tensor, generated: &Tensor) -> Result<Tensor> {
        let (lp, dp) = s_p.dims2()?;
        let (lg, dg) = generated.dims2()?;
        if dp != dg {
            return Err(Error::ShapeMismatch(format!("pose dims {dp} and {dg}")));
        }
        let keep = lp.min(self.post.half_width());
        let context = s_p.narrow(0, lp - keep, keep)?;
        let out = self.post.forward(&Tensor::cat(&[&context, generated], 0)?)?;
        Ok(out.narrow(0, keep, lg)?)
    }

    pub fn forward<R: Rng>(&self, item: &PreparedItem, rng: &mut R) -> Result<ForwardOutput> {
        let posterior = self.encode_prepared(item)?;
        let s_p = item.previous()?;
        let prior = self.prior(&s_p, item.curr_label)?;
        let z = posterior.sample(rng)?;
        let raw = self.decode(&z, item.transition_len, item.curr_len)?;
        let pred = self.postprocess(&s_p, &raw)?;
        Ok(ForwardOutput { pred, posterior, prior })
    }

    /// Losses of several items with one batched FK call.
    pub fn batch_losses<R: Rng>(&self, items: &[&PreparedItem], rng: &mut R) -> Result<Vec<ItemLoss>> {
        let outs: Vec<ForwardOutput> = items.iter().map(|it| self.forward(it, rng)).collect::<Result<_>>()?;
        let preds: Vec<&Tensor> = outs.iter().map(|o| &o.pred).collect();
        let (_, points) = forward_kinematics(&Tensor::cat(&preds, 0)?, &self.tskel)?;
        let mut offset = 0;
        let mut losses = Vec::with_capacity(items.len());
        for (item, out) in items.iter().zip(&outs) {
            let len = out.pred.dim(0)?;
            let recon = recon_from_points(
                &out.pred,
                &item.target()?,
                &points.narrow(0, offset, len)?,
                &item.target_points,
                self.config.lambda_acc,
            )?;
            offset += len;
            let kl = out.posterior.kl(&out.prior)?;
            let total = (&recon.total + (&kl * self.config.lambda_kl)?)?;
            losses.push(ItemLoss { recon, kl, total });
        }
        Ok(losses)
    }

    /// Samples `(T̂, Ŝ_c)` after a canonical previous motion.
    pub fn generate<R: Rng>(
        &self,
        s_p: &Motion,
        a_c: usize,
        l_t: usize,
        l_c: usize,
        rng: &mut R,
    ) -> Result<(Motion, Motion)> {
        self.labels.check_action(a_c)?;
        let prev = motion_to_tensor(s_p, self.skeleton.pose_dim(), self.dtype())?;
        let z = self.prior(&prev, a_c)?.sample(rng)?;
        let raw = self.decode(&z, l_t, l_c)?;
        let out = self.postprocess(&prev, &raw)?.detach();
        let joints = self.skeleton.joint_count();
        let transition = tensor_to_motion(&out.narrow(0, 0, l_t)?, joints, s_p.fps, Some(TRANSITION_ID))?;
        let action = tensor_to_motion(&out.narrow(0, l_t, l_c)?, joints, s_p.fps, Some(a_c))?;
        Ok((transition, action))
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        Checkpoint::from_store(
            MACVAE_KIND,
            serde_json::to_value(&self.config)?,
            &self.labels,
            &self.skeleton,
            meta,
            &self.params,
        )
    }

    /// Rebuilds from a checkpoint; with `expected` set, refuses a checkpoint
    /// trained on a different label set.
    pub fn from_checkpoint(ck: &Checkpoint, expected: Option<&LabelSet>) -> Result<Self> {
        ck.expect_kind(MACVAE_KIND)?;
        let labels = ck.label_set(expected)?;
        let config: ModelConfig = serde_json::from_value(ck.config.clone())?;
        let model = Self::new(config, labels, ck.skeleton.clone(), 0)?;
        ck.restore(&model.params)?;
        Ok(model)
    }
}
