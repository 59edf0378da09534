use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canonicalization::{canonicalize_with_fallback, Axes, CanonMode, CanonTransform};
use crate::corpus::{Corpus, LabelSet};
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, Motion, Skeleton};
use crate::model::{AdamW, Checkpoint, ParamStore};

pub const CLASSIFIER_KIND: &str = "classifier";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Recurrent state width, which is also the feature dimension.
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 12,
            batch_size: 32,
            lr: 2e-3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// GRU over per-frame FK joint coordinates. Each motion is first moved so
/// its first frame sits at the origin facing front; the final hidden state
/// is the feature vector and a linear layer maps it to per-label logits.
pub struct RecognitionModel {
    pub config: ClassifierConfig,
    pub labels: LabelSet,
    pub skeleton: Skeleton,
    params: ParamStore,
    wx: Tensor,
    wh: Tensor,
    bx: Tensor,
    bh: Tensor,
    out_w: Tensor,
    out_b: Tensor,
}

/// Joint positions `(T, 3·nodes)` of `motion` relative to its first frame.
pub fn joint_sequence(motion: &Motion, skeleton: &Skeleton) -> Result<Vec<f32>> {
    if motion.is_empty() {
        return Err(Error::EmptyMotion);
    }
    if motion.joint_count() != Some(skeleton.joint_count()) {
        return Err(Error::SkeletonMismatch {
            expected: skeleton.joint_count(),
            actual: motion.joint_count().unwrap_or(0),
        });
    }
    let local = match canonicalize_with_fallback(motion, 0, CanonMode::FaceFront, &Axes::of(skeleton)) {
        Ok((m, _)) => m,
        Err(Error::GimbalDegenerate { .. }) => {
            let t = CanonTransform {
                anchor_translation: motion.frames[0].x,
                ..CanonTransform::identity(CanonMode::FaceFront)
            };
            Motion::new(motion.frames.iter().map(|p| t.apply(p)).collect(), motion.fps)
        }
        Err(e) => return Err(e),
    };
    let mut out = Vec::with_capacity(motion.len() * 3 * skeleton.node_count());
    for pose in &local.frames {
        for j in forward_kinematics(pose, skeleton)?.joints {
            out.extend([j.x as f32, j.y as f32, j.z as f32]);
        }
    }
    Ok(out)
}

impl RecognitionModel {
    pub fn new(config: ClassifierConfig, labels: LabelSet, skeleton: Skeleton, seed: u64) -> Result<Self> {
        if config.hidden == 0 || config.batch_size == 0 {
            return Err(Error::ModelConfig(
                "classifier hidden size and batch size must be positive".into(),
            ));
        }
        let mut ps = ParamStore::new(seed, DType::F32, &Device::Cpu);
        let input = 3 * skeleton.node_count();
        let h = config.hidden;
        let bound = 1.0 / (h as f64).sqrt();
        let wx = ps.uniform("gru.wx", &[input, 3 * h], bound)?;
        let wh = ps.uniform("gru.wh", &[h, 3 * h], bound)?;
        let bx = ps.uniform("gru.bx", &[3 * h], bound)?;
        let bh = ps.uniform("gru.bh", &[3 * h], bound)?;
        let out_w = ps.uniform("out.weight", &[h, labels.len()], bound)?;
        let out_b = ps.zeros("out.bias", &[labels.len()])?;
        Ok(Self {
            config,
            labels,
            skeleton,
            params: ps,
            wx,
            wh,
            bx,
            bh,
            out_w,
            out_b,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn feature_dim(&self) -> usize {
        self.config.hidden
    }

    /// Final hidden states `(B, H)` of padded joint sequences.
    fn encode(&self, seqs: &[&[f32]]) -> Result<Tensor> {
        let dev = Device::Cpu;
        let input = 3 * self.skeleton.node_count();
        let h = self.config.hidden;
        let b = seqs.len();
        let lens: Vec<usize> = seqs.iter().map(|s| s.len() / input).collect();
        let t_max = lens.iter().copied().max().unwrap_or(0);
        // time-major padded input and validity mask
        let mut x = vec![0f32; t_max * b * input];
        let mut mask = vec![0f32; t_max * b];
        for (i, s) in seqs.iter().enumerate() {
            for t in 0..lens[i] {
                let dst = (t * b + i) * input;
                x[dst..dst + input].copy_from_slice(&s[t * input..(t + 1) * input]);
                mask[t * b + i] = 1.0;
            }
        }
        let x = Tensor::from_vec(x, (t_max * b, input), &dev)?;
        let gx = x
            .matmul(&self.wx)?
            .broadcast_add(&self.bx)?
            .reshape((t_max, b, 3 * h))?;
        let mask = Tensor::from_vec(mask, (t_max, b, 1), &dev)?;
        let mut state = Tensor::zeros((b, h), DType::F32, &dev)?;
        for t in 0..t_max {
            let g = gx.get(t)?;
            let gh = state.matmul(&self.wh)?.broadcast_add(&self.bh)?;
            let r = candle_nn::ops::sigmoid(&(g.narrow(1, 0, h)? + gh.narrow(1, 0, h)?)?)?;
            let z = candle_nn::ops::sigmoid(&(g.narrow(1, h, h)? + gh.narrow(1, h, h)?)?)?;
            let n = (g.narrow(1, 2 * h, h)? + (r * gh.narrow(1, 2 * h, h)?)?)?.tanh()?;
            let next = (&state + ((1.0 - z)? * (n - &state)?)?)?;
            let m = mask.get(t)?;
            state = (&state + (m.broadcast_mul(&(next - &state)?))?)?;
        }
        Ok(state)
    }

    fn logits_of(&self, features: &Tensor) -> Result<Tensor> {
        Ok(features.matmul(&self.out_w)?.broadcast_add(&self.out_b)?)
    }

    /// Features and logits of each motion.
    pub fn classify(&self, motions: &[Motion]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let seqs = motions
            .iter()
            .map(|m| joint_sequence(m, &self.skeleton))
            .collect::<Result<Vec<_>>>()?;
        let mut features = Vec::with_capacity(motions.len());
        let mut logits = Vec::with_capacity(motions.len());
        for chunk in seqs.chunks(256) {
            let refs: Vec<&[f32]> = chunk.iter().map(Vec::as_slice).collect();
            let f = self.encode(&refs)?;
            let l = self.logits_of(&f)?;
            features.extend(f.to_dtype(DType::F64)?.to_vec2::<f64>()?);
            logits.extend(l.to_dtype(DType::F64)?.to_vec2::<f64>()?);
        }
        Ok((features, logits))
    }

    /// Feature vector of one motion; its length is `feature_dim()` for any
    /// motion length.
    pub fn extract_features(&self, motion: &Motion) -> Result<Vec<f64>> {
        let (mut f, _) = self.classify(std::slice::from_ref(motion))?;
        Ok(f.remove(0))
    }

    pub fn extract_features_batch(&self, motions: &[Motion]) -> Result<Vec<Vec<f64>>> {
        Ok(self.classify(motions)?.0)
    }

    pub fn predict(&self, motions: &[Motion]) -> Result<Vec<usize>> {
        Ok(self.classify(motions)?.1.iter().map(|l| argmax(l)).collect())
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        Checkpoint::from_store(
            CLASSIFIER_KIND,
            serde_json::to_value(&self.config)?,
            &self.labels,
            &self.skeleton,
            meta,
            &self.params,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint, expected: Option<&LabelSet>) -> Result<Self> {
        ck.expect_kind(CLASSIFIER_KIND)?;
        let labels = ck.label_set(expected)?;
        let config: ClassifierConfig = serde_json::from_value(ck.config.clone())?;
        let model = Self::new(config, labels, ck.skeleton.clone(), 0)?;
        ck.restore(&model.params)?;
        Ok(model)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &x)| if x > best.1 { (i, x) } else { best },
        )
        .0
}

/// Trains on the action segments of the training split and reports
/// accuracy on those of the test split.
pub fn train_classifier(
    corpus: &Corpus,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<(RecognitionModel, ClassifierReport)> {
    if corpus.labels.num_actions() < 2 {
        return Err(Error::CorpusEmpty("classifier needs at least two action labels".into()));
    }
    let train = corpus.action_motions(&corpus.split.train);
    let distinct = train.iter().map(|(_, l)| *l).collect::<std::collections::BTreeSet<_>>();
    if distinct.len() < 2 {
        return Err(Error::CorpusEmpty(
            "training split has fewer than two action labels".into(),
        ));
    }
    let model = RecognitionModel::new(config.clone(), corpus.labels.clone(), corpus.skeleton.clone(), seed)?;
    let seqs = train
        .iter()
        .map(|(m, _)| joint_sequence(m, &corpus.skeleton))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<u32> = train.iter().map(|(_, l)| *l as u32).collect();
    let mut opt = AdamW::new(&model.params, config.lr, 0.0);
    let mut report = ClassifierReport::default();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let refs: Vec<&[f32]> = chunk.iter().map(|&i| seqs[i].as_slice()).collect();
            let y = Tensor::from_vec(
                chunk.iter().map(|&i| targets[i]).collect::<Vec<_>>(),
                chunk.len(),
                &Device::Cpu,
            )?;
            let logits = model.logits_of(&model.encode(&refs)?)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &y)?;
            let value = loss.to_scalar::<f32>()? as f64;
            if !value.is_finite() {
                return Err(Error::NaNLoss { epoch, batch });
            }
            total += value * chunk.len() as f64;
            opt.apply(&loss.backward()?)?;
        }
        report.epoch_losses.push(total / seqs.len() as f64);
        tracing::info!(epoch, loss = total / seqs.len() as f64, "classifier epoch");
    }
    let acc = |items: &[(Motion, usize)]| -> Result<f64> {
        if items.is_empty() {
            return Ok(0.0);
        }
        let motions: Vec<Motion> = items.iter().map(|(m, _)| m.clone()).collect();
        let pred = model.predict(&motions)?;
        Ok(pred.iter().zip(items).filter(|(p, (_, l))| **p == *l).count() as f64 / items.len() as f64)
    };
    report.train_accuracy = acc(&train)?;
    report.test_accuracy = acc(&corpus.action_motions(&corpus.split.test))?;
    Ok((model, report))
}
