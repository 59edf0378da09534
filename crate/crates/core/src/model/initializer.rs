use candle_core::{DType, Device, Tensor};
use rand::Rng;

use super::checkpoint::Checkpoint;
use super::config::ModelConfig;
use super::layers::sinusoidal;
use super::losses::{loss_kl, recon_from_points, sample_latent, GaussianParams};
use super::macvae::ItemLoss;
use super::net::{CurrNet, Decoder, Dims, Encoder};
use super::params::ParamStore;
use super::{motion_to_tensor, tensor_to_motion};
use crate::canonicalization::{canonicalize_with_fallback, Axes};
use crate::corpus::LabelSet;
use crate::error::{Error, Result};
use crate::kinematics::tensor::{forward_kinematics, TensorSkeleton};
use crate::kinematics::{Motion, Skeleton};

pub const INITIALIZER_KIND: &str = "initializer";

/// A single action motion in the initializer's canonical frame.
pub struct PreparedAction {
    pub input: Tensor,
    pub label: usize,
    pub points: Tensor,
}

/// Action-only conditional VAE: one latent per motion, per-action prior
/// tokens, the same decoder style with the latent repeated over time.
pub struct Initializer {
    pub config: ModelConfig,
    pub labels: LabelSet,
    pub skeleton: Skeleton,
    params: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
    pub(crate) prior: CurrNet,
    pe: Tensor,
    tskel: TensorSkeleton,
}

impl Initializer {
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
        let encoder = Encoder::new(&mut ps, "encoder", &dims, 2)?;
        let decoder = Decoder::new(&mut ps, "decoder", &dims)?;
        let prior = CurrNet::new(&mut ps, "prior", &dims)?;
        let pe = sinusoidal(config.max_len, config.d, dtype, &device)?;
        let tskel = TensorSkeleton::new(&skeleton, dtype, &device)?;
        Ok(Self {
            config,
            labels,
            skeleton,
            params: ps,
            encoder,
            decoder,
            prior,
            pe,
            tskel,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
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

    /// Canonicalizes at the first frame.
    pub fn prepare(&self, motion: &Motion, label: usize) -> Result<PreparedAction> {
        self.labels.check_action(label)?;
        let (local, _) = canonicalize_with_fallback(motion, 0, self.config.canon_mode, &Axes::of(&self.skeleton))?;
        let input = motion_to_tensor(&local, self.skeleton.pose_dim(), self.params.dtype())?;
        let (_, points) = forward_kinematics(&input, &self.tskel)?;
        Ok(PreparedAction {
            input,
            label,
            points: points.detach(),
        })
    }

    pub fn encode(&self, item: &PreparedAction) -> Result<GaussianParams> {
        let l = item.input.dim(0)?;
        let labels = vec![item.label; l];
        let mut heads = self
            .encoder
            .forward(&item.input, &labels, &self.positions(l)?)?
            .into_iter();
        let mu = heads
            .next()
            .ok_or_else(|| Error::ShapeMismatch("missing head".into()))?;
        let ls = heads
            .next()
            .ok_or_else(|| Error::ShapeMismatch("missing head".into()))?;
        GaussianParams::new(mu, ls)
    }

    pub fn prior(&self, label: usize) -> Result<GaussianParams> {
        self.labels.check_action(label)?;
        self.prior.forward(label)
    }

    pub fn decode(&self, z: &Tensor, len: usize) -> Result<Tensor> {
        if len == 0 {
            return Err(Error::InvalidArgument("length must be at least 1".into()));
        }
        let queries = self.positions(len)?;
        let memory = z.unsqueeze(0)?.broadcast_as((len, z.dim(0)?))?.contiguous()?;
        self.decoder.forward(&memory, &queries)
    }

    pub fn batch_losses<R: Rng>(&self, items: &[&PreparedAction], rng: &mut R) -> Result<Vec<ItemLoss>> {
        let mut preds = Vec::with_capacity(items.len());
        let mut kls = Vec::with_capacity(items.len());
        for item in items {
            let post = self.encode(item)?;
            let prior = self.prior(item.label)?;
            let z = sample_latent(&post, rng)?;
            preds.push(self.decode(&z, item.input.dim(0)?)?);
            kls.push(loss_kl(&post, &prior)?);
        }
        let (_, points) = forward_kinematics(&Tensor::cat(&preds, 0)?, &self.tskel)?;
        let mut offset = 0;
        let mut out = Vec::with_capacity(items.len());
        for ((item, pred), kl) in items.iter().zip(&preds).zip(kls) {
            let len = pred.dim(0)?;
            let recon = recon_from_points(
                pred,
                &item.input,
                &points.narrow(0, offset, len)?,
                &item.points,
                self.config.lambda_acc,
            )?;
            offset += len;
            let total = (&recon.total + (&kl * self.config.lambda_kl)?)?;
            out.push(ItemLoss { recon, kl, total });
        }
        Ok(out)
    }

    /// Samples an `l`-frame motion of action `label`, starting face-front
    /// at the origin.
    pub fn generate<R: Rng>(&self, label: usize, l: usize, fps: f64, rng: &mut R) -> Result<Motion> {
        let z = sample_latent(&self.prior(label)?, rng)?;
        let out = self.decode(&z, l)?.detach();
        tensor_to_motion(&out, self.skeleton.joint_count(), fps, Some(label))
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        Checkpoint::from_store(
            INITIALIZER_KIND,
            serde_json::to_value(&self.config)?,
            &self.labels,
            &self.skeleton,
            meta,
            &self.params,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint, expected: Option<&LabelSet>) -> Result<Self> {
        ck.expect_kind(INITIALIZER_KIND)?;
        let labels = ck.label_set(expected)?;
        let config: ModelConfig = serde_json::from_value(ck.config.clone())?;
        let model = Self::new(config, labels, ck.skeleton.clone(), 0)?;
        ck.restore(&model.params)?;
        Ok(model)
    }
}
