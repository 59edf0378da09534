use candle_core::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kinematics::tensor::{forward_kinematics, TensorSkeleton};

pub const LOG_SIGMA_MIN: f64 = -8.0;
pub const LOG_SIGMA_MAX: f64 = 4.0;

/// Diagonal Gaussian over the latent space, as mean and log-std vectors.
#[derive(Clone, Debug)]
pub struct GaussianParams {
    pub mu: Tensor,
    pub log_sigma: Tensor,
}

impl GaussianParams {
    /// Clamps `log_sigma` into `[LOG_SIGMA_MIN, LOG_SIGMA_MAX]`.
    pub fn new(mu: Tensor, log_sigma: Tensor) -> Result<Self> {
        if mu.dims() != log_sigma.dims() {
            return Err(Error::ShapeMismatch(format!(
                "mu {:?} vs log_sigma {:?}",
                mu.dims(),
                log_sigma.dims()
            )));
        }
        let log_sigma = log_sigma.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)?;
        Ok(Self { mu, log_sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.elem_count()
    }

    pub fn detach(&self) -> Self {
        Self {
            mu: self.mu.detach(),
            log_sigma: self.log_sigma.detach(),
        }
    }
}

/// Latent vectors for the previous-motion and current-action branches.
#[derive(Clone, Debug)]
pub struct LatentPair {
    pub z_p: Tensor,
    pub z_c: Tensor,
}

/// Standard-normal noise shaped like `g.mu`.
pub fn standard_noise<R: Rng>(g: &GaussianParams, rng: &mut R) -> Result<Tensor> {
    let eps: Vec<f64> = (0..g.dim()).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(eps, g.mu.shape(), g.mu.device())?.to_dtype(g.mu.dtype())?)
}

/// Reparameterized draw `μ + exp(logσ) ⊙ ε` for a given `ε`.
pub fn reparameterize(g: &GaussianParams, eps: &Tensor) -> Result<Tensor> {
    Ok((&g.mu + (g.log_sigma.exp()? * eps)?)?)
}

pub fn sample_latent<R: Rng>(g: &GaussianParams, rng: &mut R) -> Result<Tensor> {
    reparameterize(g, &standard_noise(g, rng)?)
}

/// Closed-form KL(posterior ‖ prior) for diagonal Gaussians, summed over
/// dimensions.
pub fn loss_kl(posterior: &GaussianParams, prior: &GaussianParams) -> Result<Tensor> {
    if posterior.mu.dims() != prior.mu.dims() {
        return Err(Error::ShapeMismatch(format!(
            "posterior {:?} vs prior {:?}",
            posterior.mu.dims(),
            prior.mu.dims()
        )));
    }
    let var_ratio = ((&posterior.log_sigma - &prior.log_sigma)? * 2.0)?.exp()?;
    let mean_term = ((&posterior.mu - &prior.mu)?.sqr()? / (&prior.log_sigma * 2.0)?.exp()?)?;
    let kl = (((&prior.log_sigma - &posterior.log_sigma)? + ((var_ratio + mean_term)? * 0.5)?)? - 0.5)?;
    Ok(kl.sum_all()?)
}

/// Reconstruction loss components (scalar tensors).
#[derive(Clone, Debug)]
pub struct ReconLoss {
    pub total: Tensor,
    /// Mean absolute error over FK surface point coordinates.
    pub vertices: Tensor,
    /// Mean absolute error over flattened pose vectors.
    pub pose: Tensor,
    /// Mean absolute error over second temporal differences of surface points.
    pub accel: Tensor,
}

fn second_difference(points: &Tensor) -> Result<Tensor> {
    let l = points.dim(0)?;
    let a = points.narrow(0, 0, l - 2)?;
    let b = points.narrow(0, 1, l - 2)?;
    let c = points.narrow(0, 2, l - 2)?;
    Ok(((a + c)? - (b * 2.0)?)?)
}

/// Loss from poses `(L, D)` and their surface points `(L, P, 3)`.
pub fn recon_from_points(
    pred: &Tensor,
    gt: &Tensor,
    pred_points: &Tensor,
    gt_points: &Tensor,
    lambda_acc: f64,
) -> Result<ReconLoss> {
    let (lp, lg) = (pred.dim(0)?, gt.dim(0)?);
    if lp != lg {
        return Err(Error::LengthMismatch(lp, lg));
    }
    let vertices = (pred_points - gt_points)?.abs()?.mean_all()?;
    let pose = (pred - gt)?.abs()?.mean_all()?;
    let accel = if lp < 3 {
        vertices.zeros_like()?
    } else {
        (second_difference(pred_points)? - second_difference(gt_points)?)?
            .abs()?
            .mean_all()?
    };
    let total = ((&vertices + &pose)? + (&accel * lambda_acc)?)?;
    Ok(ReconLoss {
        total,
        vertices,
        pose,
        accel,
    })
}

/// `L_V + L_P + λ_acc·L_acc` between two `(L, D)` pose tensors.
pub fn loss_recon(pred: &Tensor, gt: &Tensor, skeleton: &TensorSkeleton, lambda_acc: f64) -> Result<ReconLoss> {
    let (lp, lg) = (pred.dim(0)?, gt.dim(0)?);
    if lp != lg {
        return Err(Error::LengthMismatch(lp, lg));
    }
    let (_, pp) = forward_kinematics(pred, skeleton)?;
    let (_, gp) = forward_kinematics(gt, skeleton)?;
    recon_from_points(pred, gt, &pp, &gp, lambda_acc)
}
