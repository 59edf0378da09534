use serde::{Deserialize, Serialize};

use crate::canonicalization::CanonMode;
use crate::error::{Error, Result};

/// What PrevNet sees of the previous action motion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrevNetInput {
    /// The last `prevnet_frames` frames, flattened frame-major.
    #[default]
    LastFrames,
    /// The mean over all frames of S_p.
    WholeMotion,
}

/// Sequence backbone. Only the transformer is implemented; the recurrent
/// and MLP variants exist as configuration values so ablation configs parse,
/// and are rejected by [`ModelConfig::validate`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[default]
    Transformer,
    Lstm,
    Gru,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Latent and transformer width; poses and actions each get `d / 2`.
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    /// Hidden width of the transformer feed-forward blocks.
    pub ff_dim: usize,
    pub prevnet_frames: usize,
    pub prevnet_input: PrevNetInput,
    pub prevnet_sees_action: bool,
    pub temporal_conv_kernel: usize,
    pub separate_latent: bool,
    pub canon_mode: CanonMode,
    pub backbone: Backbone,
    pub lambda_acc: f64,
    pub lambda_kl: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Caps the number of batches per epoch; `None` is a full pass.
    pub batches_per_epoch: Option<usize>,
    pub max_len: usize,
    /// Standard deviation of the noise added to the postprocessor's
    /// identity initialization.
    pub postprocess_init_noise: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            layers: 2,
            heads: 4,
            ff_dim: 128,
            prevnet_frames: 4,
            prevnet_input: PrevNetInput::LastFrames,
            prevnet_sees_action: false,
            temporal_conv_kernel: 5,
            separate_latent: true,
            canon_mode: CanonMode::FaceFront,
            backbone: Backbone::Transformer,
            lambda_acc: 1.0,
            lambda_kl: 1e-5,
            lr: 5e-5,
            weight_decay: 0.01,
            batch_size: 16,
            epochs: 300,
            batches_per_epoch: None,
            max_len: 512,
            postprocess_init_noise: 1e-3,
        }
    }
}

impl ModelConfig {
    /// Full-size settings: width 512, 8 layers, 1300 epochs.
    pub fn paper() -> Self {
        Self {
            d: 512,
            layers: 8,
            ff_dim: 1024,
            epochs: 1300,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::ModelConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::ModelConfig(m.into()));
        if self.d == 0 || self.d % 2 != 0 {
            return fail("d must be positive and even");
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return fail("heads must divide d");
        }
        if self.prevnet_frames == 0 {
            return fail("prevnet_frames must be at least 1");
        }
        if self.temporal_conv_kernel == 0 || self.temporal_conv_kernel % 2 == 0 {
            return fail("temporal_conv_kernel must be odd");
        }
        if self.batch_size == 0 || self.max_len < 3 || self.ff_dim == 0 {
            return fail("batch_size, ff_dim must be positive and max_len at least 3");
        }
        if !(self.lr > 0.0) || self.lambda_kl < 0.0 || self.lambda_acc < 0.0 {
            return fail("lr must be positive and loss weights non-negative");
        }
        if self.backbone != Backbone::Transformer {
            return Err(Error::ModelConfig(format!(
                "backbone {:?} is not implemented; only transformer is available",
                self.backbone
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ModelConfig::default();
        assert_eq!(c.lambda_kl, 1e-5);
        assert_eq!(c.lr, 5e-5);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.prevnet_frames, 4);
        assert_eq!(c.temporal_conv_kernel, 5);
        assert!(c.separate_latent);
        assert!(!c.prevnet_sees_action);
        c.validate().unwrap();
        let p = ModelConfig::paper();
        assert_eq!((p.d, p.layers, p.heads, p.epochs), (512, 8, 4, 1300));
    }

    #[test]
    fn rejects_bad_values() {
        for c in [
            ModelConfig {
                d: 63,
                ..Default::default()
            },
            ModelConfig {
                heads: 5,
                ..Default::default()
            },
            ModelConfig {
                prevnet_frames: 0,
                ..Default::default()
            },
            ModelConfig {
                backbone: Backbone::Gru,
                ..Default::default()
            },
        ] {
            assert!(matches!(c.validate(), Err(Error::ModelConfig(_))));
        }
    }

    #[test]
    fn parses_toml() {
        let c = ModelConfig::from_toml("d = 32\nseparate_latent = false\ncanon_mode = \"zero\"").unwrap();
        assert_eq!(c.d, 32);
        assert!(!c.separate_latent);
        assert_eq!(c.canon_mode, CanonMode::Zero);
        assert!(ModelConfig::from_toml("bogus = 1").is_err());
    }
}
