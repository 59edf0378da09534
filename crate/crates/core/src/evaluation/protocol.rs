use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::RecognitionModel;
use super::metrics::{
    accuracy, diversity, fid, interpolation_baseline, multimodality, resample, EquivalenceMap, GaussianFit, MetricCi,
};
use crate::canonicalization::{canonicalize_with_fallback, tilt_angle, Axes};
use crate::corpus::{sample_test_script, Corpus, LengthStats};
use crate::error::{Error, Result};
use crate::kinematics::{rot6d_to_matrix, Motion, Skeleton};
use crate::pipeline::{run_traced, step_rng, LoggedSegment, Models, SegmentKind};

/// Common length transitions are resampled to before feature extraction.
pub const TRANSITION_FRAMES: usize = 16;

/// How generated features are compared with real ones.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidMode {
    /// One Gaussian over all actions.
    #[default]
    Pooled,
    /// One Gaussian per action, distances averaged over actions.
    PerAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleStepConfig {
    pub n_samples: usize,
    pub repeats: usize,
    pub n_pairs: usize,
    pub fid_mode: FidMode,
}

impl Default for SingleStepConfig {
    fn default() -> Self {
        Self {
            n_samples: 20,
            repeats: 20,
            n_pairs: 200,
            fid_mode: FidMode::Pooled,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub fid_train: MetricCi,
    pub fid_test: MetricCi,
    pub top1: MetricCi,
    pub top5: MetricCi,
    pub diversity: MetricCi,
    pub multimodality: MetricCi,
    /// Absent for methods that produce no transitions.
    pub transition_fid_test: Option<MetricCi>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleStepReport {
    pub repeats: usize,
    pub n_samples: usize,
    pub rows: Vec<MethodReport>,
}

impl SingleStepReport {
    pub fn row(&self, method: &str) -> Option<&MethodReport> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Real feature sets generated motions are compared against.
struct Reference {
    train: Vec<(Vec<f64>, usize)>,
    test: Vec<(Vec<f64>, usize)>,
    transitions: GaussianFit,
}

impl Reference {
    fn new(classifier: &RecognitionModel, corpus: &Corpus) -> Result<Self> {
        let labelled = |ids: &[usize]| -> Result<Vec<(Vec<f64>, usize)>> {
            let items = corpus.action_motions(ids);
            let motions: Vec<Motion> = items.iter().map(|(m, _)| m.clone()).collect();
            let feats = classifier.extract_features_batch(&motions)?;
            Ok(feats.into_iter().zip(items.iter().map(|(_, l)| *l)).collect())
        };
        let transitions = corpus
            .transition_motions(&corpus.split.test)
            .iter()
            .map(|m| resample(m, TRANSITION_FRAMES))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            train: labelled(&corpus.split.train)?,
            test: labelled(&corpus.split.test)?,
            transitions: GaussianFit::fit(&classifier.extract_features_batch(&transitions)?)?,
        })
    }
}

/// Distance between generated and real features under `mode`.
pub fn feature_fid(generated: &[(Vec<f64>, usize)], real: &[(Vec<f64>, usize)], mode: FidMode) -> Result<f64> {
    let strip = |v: &[(Vec<f64>, usize)]| v.iter().map(|(f, _)| f.clone()).collect::<Vec<_>>();
    match mode {
        FidMode::Pooled => fid(&GaussianFit::fit(&strip(generated))?, &GaussianFit::fit(&strip(real))?),
        FidMode::PerAction => {
            let mut labels: Vec<usize> = generated.iter().map(|(_, l)| *l).collect();
            labels.sort_unstable();
            labels.dedup();
            let mut total = 0.0;
            for &l in &labels {
                let of = |v: &[(Vec<f64>, usize)]| {
                    v.iter()
                        .filter(|(_, k)| *k == l)
                        .map(|(f, _)| f.clone())
                        .collect::<Vec<_>>()
                };
                total += fid(&GaussianFit::fit(&of(generated))?, &GaussianFit::fit(&of(real))?)?;
            }
            Ok(total / labels.len() as f64)
        }
    }
}

/// Metrics of one repeat for one method.
#[derive(Default)]
struct Samples {
    fid_train: Vec<f64>,
    fid_test: Vec<f64>,
    top1: Vec<f64>,
    top5: Vec<f64>,
    diversity: Vec<f64>,
    multimodality: Vec<f64>,
    transition_fid: Vec<f64>,
}

impl Samples {
    fn report(&self, method: &str) -> MethodReport {
        MethodReport {
            method: method.into(),
            fid_train: MetricCi::from_samples(&self.fid_train),
            fid_test: MetricCi::from_samples(&self.fid_test),
            top1: MetricCi::from_samples(&self.top1),
            top5: MetricCi::from_samples(&self.top5),
            diversity: MetricCi::from_samples(&self.diversity),
            multimodality: MetricCi::from_samples(&self.multimodality),
            transition_fid_test: (!self.transition_fid.is_empty())
                .then(|| MetricCi::from_samples(&self.transition_fid)),
        }
    }
}

struct Scorer<'a> {
    classifier: &'a RecognitionModel,
    reference: &'a Reference,
    eq: &'a EquivalenceMap,
    config: &'a SingleStepConfig,
}

impl Scorer<'_> {
    fn score<R: Rng>(
        &self,
        out: &mut Samples,
        actions: &[(Motion, usize)],
        transitions: Option<&[Motion]>,
        rng: &mut R,
    ) -> Result<()> {
        let motions: Vec<Motion> = actions.iter().map(|(m, _)| m.clone()).collect();
        let labels: Vec<usize> = actions.iter().map(|(_, l)| *l).collect();
        let (features, logits) = self.classifier.classify(&motions)?;
        let labelled: Vec<(Vec<f64>, usize)> = features.iter().cloned().zip(labels.iter().copied()).collect();
        out.fid_train
            .push(feature_fid(&labelled, &self.reference.train, self.config.fid_mode)?);
        out.fid_test
            .push(feature_fid(&labelled, &self.reference.test, self.config.fid_mode)?);
        out.top1.push(accuracy(&logits, &labels, self.eq, 1)?);
        out.top5.push(accuracy(&logits, &labels, self.eq, 5)?);
        out.diversity.push(diversity(&features, self.config.n_pairs, rng)?);
        let mut present = labels.clone();
        present.sort_unstable();
        present.dedup();
        let groups: Vec<Vec<Vec<f64>>> = present
            .iter()
            .map(|&l| {
                labelled
                    .iter()
                    .filter(|(_, k)| *k == l)
                    .map(|(f, _)| f.clone())
                    .collect()
            })
            .collect();
        out.multimodality
            .push(multimodality(&groups, self.config.n_pairs, rng)?);
        if let Some(t) = transitions {
            let resampled = t
                .iter()
                .map(|m| resample(m, TRANSITION_FRAMES))
                .collect::<Result<Vec<_>>>()?;
            let fit = GaussianFit::fit(&self.classifier.extract_features_batch(&resampled)?)?;
            out.transition_fid.push(fid(&fit, &self.reference.transitions)?);
        }
        Ok(())
    }
}

pub const METHOD_REAL: &str = "real";
pub const METHOD_MACVAE: &str = "macvae";
pub const METHOD_INITIALIZER: &str = "initializer";
pub const METHOD_INTERPOLATION: &str = "initializer+interpolation";

/// Single-step protocol over unseen previous motions from the test split.
///
/// Every repeat draws `n_samples` previous motions per action label,
/// canonicalizes each at its last frame and scores four methods: real test
/// segments, MACVAE, the initializer alone, and initializer actions joined
/// by interpolated transitions. Lengths are test-split means per label.
pub fn evaluate_single_step(
    models: &Models,
    classifier: &RecognitionModel,
    corpus: &Corpus,
    eq: &EquivalenceMap,
    config: &SingleStepConfig,
    seed: u64,
) -> Result<SingleStepReport> {
    if config.n_samples < 2 || config.repeats == 0 {
        return Err(Error::InvalidArgument("need at least 2 samples and 1 repeat".into()));
    }
    let reference = Reference::new(classifier, corpus)?;
    let stats = LengthStats::from_sequences(corpus.test(), corpus.labels.len());
    let labels = stats.present();
    let windows = corpus.test_windows();
    if windows.is_empty() || labels.is_empty() {
        return Err(Error::CorpusEmpty(
            "test split has no (action, transition, action) windows".into(),
        ));
    }
    let items: Vec<_> = windows.iter().map(|&w| corpus.item(w)).collect();
    let real_actions = corpus.action_motions(&corpus.split.test);
    let real_transitions = corpus.transition_motions(&corpus.split.test);
    let axes = Axes::of(&corpus.skeleton);
    let mode = models.macvae.config.canon_mode;
    let scorer = Scorer {
        classifier,
        reference: &reference,
        eq,
        config,
    };
    let mut rows: [Samples; 4] = Default::default();

    for repeat in 0..config.repeats {
        let mut rng = step_rng(seed, repeat + 1);
        let mut real = (Vec::new(), Vec::new());
        let mut macvae = (Vec::new(), Vec::new());
        let mut init = (Vec::new(), Vec::new());
        for &label in &labels {
            let (l_t, l_c) = stats.default_lengths(label);
            let matching: Vec<_> = items.iter().filter(|i| i.curr_label == label).collect();
            let reals: Vec<_> = real_actions.iter().filter(|(_, l)| *l == label).collect();
            for _ in 0..config.n_samples {
                let item = if matching.is_empty() {
                    &items[rng.random_range(0..items.len())]
                } else {
                    matching[rng.random_range(0..matching.len())]
                };
                let prev = item.previous();
                let (local, _) = canonicalize_with_fallback(&prev, prev.len() - 1, mode, &axes)?;
                let (t, s) = models.macvae.generate(&local, label, l_t, l_c, &mut rng)?;
                macvae.0.push((s, label));
                macvae.1.push(t);

                let s = models.initializer.generate(label, l_c, corpus.fps, &mut rng)?;
                let end = local.frames.last().expect("previous motion is non-empty");
                init.1.push(interpolation_baseline(end, &s.frames[0], l_t)?);
                init.0.push((s, label));

                if !reals.is_empty() {
                    real.0.push(reals[rng.random_range(0..reals.len())].clone());
                }
                real.1
                    .push(real_transitions[rng.random_range(0..real_transitions.len())].clone());
            }
        }
        scorer.score(&mut rows[0], &real.0, Some(&real.1), &mut rng)?;
        scorer.score(&mut rows[1], &macvae.0, Some(&macvae.1), &mut rng)?;
        scorer.score(&mut rows[2], &init.0, None, &mut rng)?;
        scorer.score(&mut rows[3], &init.0, Some(&init.1), &mut rng)?;
        tracing::info!(repeat, "single-step repeat done");
    }
    let names = [METHOD_REAL, METHOD_MACVAE, METHOD_INITIALIZER, METHOD_INTERPOLATION];
    Ok(SingleStepReport {
        repeats: config.repeats,
        n_samples: config.n_samples,
        rows: rows.iter().zip(names).map(|(s, n)| s.report(n)).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LongTermConfig {
    pub n_scripts: usize,
    pub max_steps: usize,
}

impl Default for LongTermConfig {
    fn default() -> Self {
        Self {
            n_scripts: 50,
            max_steps: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub top1: f64,
    pub top5: f64,
    /// Absent at step 1, which has no transition.
    pub transition_fid_test: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongTermReport {
    pub n_scripts: usize,
    pub steps: Vec<StepMetrics>,
}

impl LongTermReport {
    /// One row per step.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "top1", "top5", "transition_fid_test"])
            .map_err(csv_error)?;
        for s in &self.steps {
            let fid = s.transition_fid_test.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([s.step.to_string(), s.top1.to_string(), s.top5.to_string(), fid])
                .map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

/// Seed of the `index`-th evaluation script's pipeline run.
pub fn script_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Per-step recognition accuracy and transition distance over scripts
/// sampled from the test split.
pub fn evaluate_long_term(
    models: &Models,
    classifier: &RecognitionModel,
    corpus: &Corpus,
    eq: &EquivalenceMap,
    config: &LongTermConfig,
    seed: u64,
) -> Result<LongTermReport> {
    if config.n_scripts < 2 || config.max_steps == 0 {
        return Err(Error::InvalidArgument("need at least 2 scripts and 1 step".into()));
    }
    let reference = Reference::new(classifier, corpus)?;
    let mut script_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actions: Vec<Vec<(Motion, usize)>> = vec![Vec::new(); config.max_steps];
    let mut transitions: Vec<Vec<Motion>> = vec![Vec::new(); config.max_steps];
    for index in 0..config.n_scripts {
        let script = sample_test_script(corpus, &mut script_rng, config.max_steps)?;
        let (state, _) = run_traced(&script, models, script_seed(seed, index))?;
        let segments = step_segments(&state.segment_log);
        for (k, (t, a)) in segments.iter().enumerate() {
            actions[k].push((state.global_motion.slice(a.start, a.end), a.label));
            if let Some(t) = t {
                transitions[k].push(resample(&state.global_motion.slice(t.start, t.end), TRANSITION_FRAMES)?);
            }
        }
        tracing::info!(script = index, "long-term script done");
    }
    let mut steps = Vec::with_capacity(config.max_steps);
    for k in 0..config.max_steps {
        let motions: Vec<Motion> = actions[k].iter().map(|(m, _)| m.clone()).collect();
        let labels: Vec<usize> = actions[k].iter().map(|(_, l)| *l).collect();
        let (_, logits) = classifier.classify(&motions)?;
        let transition_fid_test = if transitions[k].is_empty() {
            None
        } else {
            let fit = GaussianFit::fit(&classifier.extract_features_batch(&transitions[k])?)?;
            Some(fid(&fit, &reference.transitions)?)
        };
        steps.push(StepMetrics {
            step: k + 1,
            top1: accuracy(&logits, &labels, eq, 1)?,
            top5: accuracy(&logits, &labels, eq, 5)?,
            transition_fid_test,
        });
    }
    Ok(LongTermReport {
        n_scripts: config.n_scripts,
        steps,
    })
}

/// Pairs each step's action segment with the transition before it.
pub fn step_segments(log: &[LoggedSegment]) -> Vec<(Option<LoggedSegment>, LoggedSegment)> {
    let mut out = Vec::new();
    let mut pending = None;
    for seg in log {
        match seg.kind {
            SegmentKind::Transition => pending = Some(*seg),
            SegmentKind::Action => out.push((pending.take(), *seg)),
        }
    }
    out
}

fn root_tilt(motion: &Motion, skeleton: &Skeleton) -> Result<f64> {
    let axes = Axes::of(skeleton);
    let mut total = 0.0;
    for f in &motion.frames {
        total += tilt_angle(&rot6d_to_matrix(&f.r)?, &axes);
    }
    Ok(total / motion.len() as f64)
}

/// Mean root tilt of the training split's action segments, per label id.
pub fn label_tilt_means(corpus: &Corpus) -> Result<Vec<Option<f64>>> {
    let axes = Axes::of(&corpus.skeleton);
    let mut sums = vec![(0.0, 0usize); corpus.labels.len()];
    for (m, l) in corpus.action_motions(&corpus.split.train) {
        for f in &m.frames {
            sums[l].0 += tilt_angle(&rot6d_to_matrix(&f.r)?, &axes);
            sums[l].1 += 1;
        }
    }
    Ok(sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect())
}

/// Per step, how far the action segment's mean root tilt is from the
/// training mean of its label.
pub fn step_tilt_errors(
    motion: &Motion,
    log: &[LoggedSegment],
    means: &[Option<f64>],
    skeleton: &Skeleton,
) -> Result<Vec<f64>> {
    step_segments(log)
        .iter()
        .enumerate()
        .map(|(k, (_, a))| {
            let expect = means.get(a.label).copied().flatten().ok_or_else(|| {
                Error::UnknownLabel(format!("no tilt statistics for label {} at step {}", a.label, k + 1))
            })?;
            Ok((root_tilt(&motion.slice(a.start, a.end), skeleton)? - expect).abs())
        })
        .collect()
}
