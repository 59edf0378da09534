//! Dual-latent conditional VAE (MACVAE), the action-only initializer, their
//! losses, training loop and checkpoint format.

mod checkpoint;
mod config;
mod initializer;
pub mod layers;
mod losses;
mod macvae;
pub mod net;
mod optim;
mod params;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{Backbone, ModelConfig, PrevNetInput};
pub use initializer::{Initializer, PreparedAction, INITIALIZER_KIND};
pub use losses::{
    loss_kl, loss_recon, recon_from_points, reparameterize, sample_latent, standard_noise, GaussianParams, LatentPair,
    ReconLoss, LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};
pub use macvae::{ForwardOutput, Gaussians, ItemLoss, Latent, Macvae, PreparedItem, MACVAE_KIND};
pub use optim::AdamW;
pub use params::ParamStore;
pub use train::{fit, train, train_initializer, EpochStats, TrainOptions, TrainReport, Trainable};

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::kinematics::{Motion, Pose};

/// `(L, D)` tensor of flattened poses.
pub fn motion_to_tensor(motion: &Motion, pose_dim: usize, dtype: DType) -> Result<Tensor> {
    if motion.is_empty() {
        return Err(Error::EmptyMotion);
    }
    let flat = motion.flatten();
    if flat.len() != motion.len() * pose_dim {
        return Err(Error::DimensionMismatch {
            expected: pose_dim,
            actual: flat.len() / motion.len(),
        });
    }
    Ok(Tensor::from_vec(flat, (motion.len(), pose_dim), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Inverse of [`motion_to_tensor`]; optionally labels every frame.
pub fn tensor_to_motion(t: &Tensor, joints: usize, fps: f64, label: Option<usize>) -> Result<Motion> {
    let rows: Vec<Vec<f64>> = t.to_dtype(DType::F64)?.to_vec2()?;
    let frames = rows
        .iter()
        .map(|r| Pose::unflatten(r, joints))
        .collect::<Result<Vec<_>>>()?;
    let n = frames.len();
    let m = Motion::new(frames, fps);
    Ok(match label {
        Some(l) => m.with_labels(vec![l; n]),
        None => m,
    })
}
