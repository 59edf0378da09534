//! Trained model sets on disk: the MACVAE, initializer and classifier
//! checkpoints plus a manifest with the corpus statistics they were
//! trained against.

use std::fs;
use std::path::{Path, PathBuf};

use multiact::corpus::{corpus_digest, Corpus, LabelSet, LengthStats};
use multiact::evaluation::{train_classifier, ClassifierConfig, ClassifierReport, RecognitionModel};
use multiact::kinematics::Skeleton;
use multiact::model::{
    train, train_initializer, Checkpoint, Initializer, Macvae, ModelConfig, TrainOptions, TrainReport,
};
use multiact::pipeline::Models;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MACVAE_FILE: &str = "macvae.ckpt";
pub const INITIALIZER_FILE: &str = "initializer.ckpt";
pub const CLASSIFIER_FILE: &str = "classifier.ckpt";
pub const MANIFEST_FILE: &str = "models.json";

/// Everything `train` needs besides the corpus and seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub macvae: ModelConfig,
    /// Falls back to the MACVAE settings.
    pub initializer: Option<ModelConfig>,
    pub classifier: ClassifierConfig,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let c: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid training config: {e}")))?;
        c.macvae.validate()?;
        c.initializer_config().validate()?;
        Ok(c)
    }

    pub fn initializer_config(&self) -> ModelConfig {
        self.initializer.clone().unwrap_or_else(|| self.macvae.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub fps: f64,
    pub labels: Vec<String>,
    pub seed: u64,
    pub corpus_digest: String,
    /// Length statistics of the training split; the defaults for
    /// unspecified segment lengths.
    pub lengths: LengthStats,
    pub config: TrainConfig,
}

impl ArtifactManifest {
    pub fn describe(corpus: &Corpus, config: &TrainConfig, seed: u64) -> CliResult<Self> {
        Ok(Self {
            fps: corpus.fps,
            labels: corpus.labels.names().to_vec(),
            seed,
            corpus_digest: corpus_digest(corpus)?,
            lengths: LengthStats::from_sequences(corpus.train(), corpus.labels.len()),
            config: config.clone(),
        })
    }
}

/// Which models a `train` run (re)builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stages {
    pub macvae: bool,
    pub initializer: bool,
    pub classifier: bool,
}

impl Stages {
    pub const ALL: Stages = Stages {
        macvae: true,
        initializer: true,
        classifier: true,
    };
}

#[derive(Debug, Default)]
pub struct TrainSummary {
    pub macvae: Option<TrainReport>,
    pub initializer: Option<TrainReport>,
    pub classifier: Option<ClassifierReport>,
}

/// Trains the requested stages into `out`, writing the manifest first.
pub fn train_all(
    corpus: &Corpus,
    config: &TrainConfig,
    seed: u64,
    out: &Path,
    stages: Stages,
    resume: bool,
) -> CliResult<TrainSummary> {
    fs::create_dir_all(out)?;
    let manifest = ArtifactManifest::describe(corpus, config, seed)?;
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    let opts = |file: &str| TrainOptions {
        checkpoint: Some(out.join(file)),
        checkpoint_every: 1,
        resume,
    };
    let mut summary = TrainSummary::default();
    if stages.macvae {
        tracing::info!("training MACVAE");
        summary.macvae = Some(train(corpus, &config.macvae, seed, &opts(MACVAE_FILE))?.1);
    }
    if stages.initializer {
        tracing::info!("training initializer");
        let init_seed = seed.wrapping_add(1);
        summary.initializer =
            Some(train_initializer(corpus, &config.initializer_config(), init_seed, &opts(INITIALIZER_FILE))?.1);
    }
    if stages.classifier {
        tracing::info!("training classifier");
        let (model, report) = train_classifier(corpus, &config.classifier, seed.wrapping_add(2))?;
        model
            .to_checkpoint(serde_json::to_value(&report)?)?
            .save(&out.join(CLASSIFIER_FILE))?;
        summary.classifier = Some(report);
    }
    Ok(summary)
}

/// A loaded model set, shared read-only by the CLI and the service.
pub struct ModelSet {
    pub models: Models,
    pub classifier: Option<RecognitionModel>,
    pub manifest: ArtifactManifest,
    /// Digest of the checkpoint files.
    pub model_id: String,
}

fn short_hex(hasher: Sha256) -> String {
    hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn read_checkpoint(path: &Path, hasher: &mut Sha256) -> CliResult<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    hasher.update(&bytes);
    Ok(Checkpoint::from_bytes(&bytes)?)
}

impl ModelSet {
    /// Wraps in-memory models; the id digests their parameters.
    pub fn new(models: Models, classifier: Option<RecognitionModel>, manifest: ArtifactManifest) -> CliResult<Self> {
        let mut hasher = Sha256::new();
        hasher.update(models.macvae.to_checkpoint(serde_json::Value::Null)?.to_bytes()?);
        hasher.update(models.initializer.to_checkpoint(serde_json::Value::Null)?.to_bytes()?);
        if let Some(c) = &classifier {
            hasher.update(c.to_checkpoint(serde_json::Value::Null)?.to_bytes()?);
        }
        Ok(Self {
            models,
            classifier,
            manifest,
            model_id: short_hex(hasher),
        })
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", manifest_path.display())))?;
        let manifest: ArtifactManifest = serde_json::from_str(&text)?;
        let labels = LabelSet::from_names(manifest.labels.clone())?;
        let mut hasher = Sha256::new();
        let macvae = Macvae::from_checkpoint(&read_checkpoint(&dir.join(MACVAE_FILE), &mut hasher)?, Some(&labels))?;
        let initializer = Initializer::from_checkpoint(
            &read_checkpoint(&dir.join(INITIALIZER_FILE), &mut hasher)?,
            Some(&labels),
        )?;
        let classifier_path = dir.join(CLASSIFIER_FILE);
        let classifier = if classifier_path.exists() {
            let ck = read_checkpoint(&classifier_path, &mut hasher)?;
            Some(RecognitionModel::from_checkpoint(&ck, Some(&labels))?)
        } else {
            None
        };
        Ok(Self {
            models: Models::new(macvae, initializer, manifest.fps)?,
            classifier,
            manifest,
            model_id: short_hex(hasher),
        })
    }

    pub fn labels(&self) -> &LabelSet {
        &self.models.macvae.labels
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.models.macvae.skeleton
    }

    pub fn classifier(&self) -> CliResult<&RecognitionModel> {
        self.classifier
            .as_ref()
            .ok_or_else(|| CliError::Usage(format!("no {CLASSIFIER_FILE} in the checkpoint directory")))
    }
}

/// Resolves the checkpoint directory from a flag or the environment.
pub fn checkpoint_dir(flag: Option<PathBuf>) -> CliResult<PathBuf> {
    flag.or_else(|| std::env::var_os("MULTIACT_CHECKPOINT_DIR").map(PathBuf::from))
        .ok_or_else(|| {
            CliError::Usage("no checkpoint directory: pass --checkpoints or set MULTIACT_CHECKPOINT_DIR".into())
        })
}
