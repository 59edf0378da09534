use std::path::PathBuf;
use std::time::Instant;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::ModelConfig;
use super::initializer::{Initializer, PreparedAction};
use super::macvae::{ItemLoss, Macvae, PreparedItem};
use super::optim::AdamW;
use super::params::ParamStore;
use crate::corpus::{Corpus, Window};
use crate::error::{Error, Result};
use crate::kinematics::Motion;

/// Mean per-item loss terms over one epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub vertices: f64,
    pub pose: f64,
    pub accel: f64,
    pub kl: f64,
    pub batches: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn first(&self) -> Option<&EpochStats> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where to write checkpoints; also the resume source.
    pub checkpoint: Option<PathBuf>,
    /// Save every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    /// Continue from `checkpoint` if it exists.
    pub resume: bool,
}

#[derive(Serialize, Deserialize)]
struct Progress {
    seed: u64,
    epoch: usize,
    step: usize,
    history: Vec<EpochStats>,
}

/// A model the generic loop can optimize.
pub trait Trainable {
    type Item;
    fn params(&self) -> &ParamStore;
    fn config(&self) -> &ModelConfig;
    fn losses(&self, items: &[&Self::Item], rng: &mut ChaCha8Rng) -> Result<Vec<ItemLoss>>;
    fn checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint>;
}

impl Trainable for Macvae {
    type Item = PreparedItem;
    fn params(&self) -> &ParamStore {
        Macvae::params(self)
    }
    fn config(&self) -> &ModelConfig {
        &self.config
    }
    fn losses(&self, items: &[&PreparedItem], rng: &mut ChaCha8Rng) -> Result<Vec<ItemLoss>> {
        self.batch_losses(items, rng)
    }
    fn checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        self.to_checkpoint(meta)
    }
}

impl Trainable for Initializer {
    type Item = PreparedAction;
    fn params(&self) -> &ParamStore {
        Initializer::params(self)
    }
    fn config(&self) -> &ModelConfig {
        &self.config
    }
    fn losses(&self, items: &[&PreparedAction], rng: &mut ChaCha8Rng) -> Result<Vec<ItemLoss>> {
        self.batch_losses(items, rng)
    }
    fn checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        self.to_checkpoint(meta)
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Runs the configured number of epochs over `n` items, preparing each
/// batch on demand. Batch order and sampling noise are derived from `seed`
/// and the epoch index, so resuming from an epoch checkpoint reproduces an
/// uninterrupted run.
pub fn fit<M: Trainable>(
    model: &M,
    n: usize,
    prepare: impl Fn(&M, usize) -> Result<M::Item>,
    seed: u64,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if n == 0 {
        return Err(Error::CorpusEmpty("no training items".into()));
    }
    let config = model.config().clone();
    let mut opt = AdamW::new(model.params(), config.lr, config.weight_decay);
    let mut report = TrainReport::default();
    let mut start = 0;
    if let (true, Some(path)) = (opts.resume, &opts.checkpoint) {
        if path.exists() {
            let ck = Checkpoint::load(path)?;
            let progress: Progress = serde_json::from_value(ck.meta.clone())?;
            if progress.seed != seed {
                return Err(Error::Checkpoint(format!(
                    "checkpoint was trained with seed {}, not {seed}",
                    progress.seed
                )));
            }
            ck.restore(model.params())?;
            opt.restore_from(&ck, progress.step)?;
            start = progress.epoch;
            report.epochs = progress.history;
            tracing::info!(epoch = start, "resumed from checkpoint");
        }
    }
    let save = |report: &TrainReport, opt: &AdamW, epoch: usize| -> Result<()> {
        if let Some(path) = &opts.checkpoint {
            let meta = serde_json::to_value(Progress {
                seed,
                epoch,
                step: opt.step,
                history: report.epochs.clone(),
            })?;
            let mut ck = model.checkpoint(meta)?;
            opt.save_into(&mut ck)?;
            ck.save(path)?;
        }
        Ok(())
    };

    for epoch in start..config.epochs {
        let clock = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut stats = EpochStats {
            epoch,
            ..Default::default()
        };
        let mut count = 0usize;
        let batches = order
            .chunks(config.batch_size)
            .take(config.batches_per_epoch.unwrap_or(usize::MAX));
        for (b, chunk) in batches.enumerate() {
            let items: Vec<M::Item> = chunk.iter().map(|&i| prepare(model, i)).collect::<Result<_>>()?;
            let refs: Vec<&M::Item> = items.iter().collect();
            let losses = model.losses(&refs, &mut rng)?;
            let totals: Vec<&Tensor> = losses.iter().map(|l| &l.total).collect();
            let loss = (Tensor::stack(&totals, 0)?.sum_all()? / losses.len() as f64)?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::NaNLoss { epoch, batch: b });
            }
            let grads = loss.backward()?;
            opt.apply(&grads)?;
            for l in &losses {
                stats.total += scalar(&l.total)?;
                stats.recon += scalar(&l.recon.total)?;
                stats.vertices += scalar(&l.recon.vertices)?;
                stats.pose += scalar(&l.recon.pose)?;
                stats.accel += scalar(&l.recon.accel)?;
                stats.kl += scalar(&l.kl)?;
            }
            count += losses.len();
            stats.batches += 1;
        }
        let c = count.max(1) as f64;
        for v in [
            &mut stats.total,
            &mut stats.recon,
            &mut stats.vertices,
            &mut stats.pose,
            &mut stats.accel,
            &mut stats.kl,
        ] {
            *v /= c;
        }
        stats.seconds = clock.elapsed().as_secs_f64();
        tracing::info!(
            epoch,
            total = stats.total,
            kl = stats.kl,
            seconds = stats.seconds,
            "epoch"
        );
        report.epochs.push(stats);
        if opts.checkpoint_every > 0 && (epoch + 1) % opts.checkpoint_every == 0 {
            save(&report, &opt, epoch + 1)?;
        }
    }
    save(&report, &opt, config.epochs)?;
    Ok(report)
}

/// Trains a MACVAE on every `[S_p, T, S_c]` window of the training split.
pub fn train(corpus: &Corpus, config: &ModelConfig, seed: u64, opts: &TrainOptions) -> Result<(Macvae, TrainReport)> {
    let model = Macvae::new(config.clone(), corpus.labels.clone(), corpus.skeleton.clone(), seed)?;
    let windows: Vec<Window> = corpus
        .train_windows()
        .into_iter()
        .filter(|&w| corpus.item(w).len() <= config.max_len)
        .collect();
    let report = fit(
        &model,
        windows.len(),
        |m, i| m.prepare(&corpus.item(windows[i])),
        seed,
        opts,
    )?;
    Ok((model, report))
}

/// Trains the initializer on every action segment of the training split.
pub fn train_initializer(
    corpus: &Corpus,
    config: &ModelConfig,
    seed: u64,
    opts: &TrainOptions,
) -> Result<(Initializer, TrainReport)> {
    let model = Initializer::new(config.clone(), corpus.labels.clone(), corpus.skeleton.clone(), seed)?;
    let actions: Vec<(Motion, usize)> = corpus
        .action_motions(&corpus.split.train)
        .into_iter()
        .filter(|(m, _)| m.len() <= config.max_len)
        .collect();
    let report = fit(
        &model,
        actions.len(),
        |m, i| m.prepare(&actions[i].0, actions[i].1),
        seed,
        opts,
    )?;
    Ok((model, report))
}
