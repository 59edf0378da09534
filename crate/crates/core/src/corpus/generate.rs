use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::primitives::{PoseParams, Primitive, SegmentParams, Style, JOINTS, STANDING_HEIGHT};
use super::{Corpus, LabelSet, Segment, SegmentedSequence, Split, TRANSITION_ID};
use crate::error::{Error, Result};
use crate::kinematics::{axis_angle, Motion, Pose, Rot6D, Skeleton};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub name: String,
    pub primitive: Primitive,
    /// Amplitude multiplier range.
    #[serde(default = "default_amplitude")]
    pub amplitude: [f64; 2],
}

fn default_amplitude() -> [f64; 2] {
    [0.75, 1.25]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub fps: f64,
    pub sequences: usize,
    /// Inclusive range of action segments per sequence.
    pub actions_per_sequence: [usize; 2],
    pub action_length: [usize; 2],
    pub transition_length: [usize; 2],
    pub test_fraction: f64,
    /// Every action must occur in at least this many training sequences.
    pub min_per_label: usize,
    pub actions: Vec<ActionSpec>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            sequences: 2000,
            actions_per_sequence: [2, 6],
            action_length: [20, 60],
            transition_length: [8, 20],
            test_fraction: 0.2,
            min_per_label: 20,
            actions: Primitive::all()
                .iter()
                .map(|p| ActionSpec {
                    name: p.default_name().to_string(),
                    primitive: *p,
                    amplitude: default_amplitude(),
                })
                .collect(),
        }
    }
}

impl CorpusConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.actions.len() < 4 {
            return bad("at least 4 action primitives are required");
        }
        if !(self.fps > 0.0) {
            return bad("fps must be positive");
        }
        let ranges = [self.actions_per_sequence, self.action_length, self.transition_length];
        if ranges.iter().any(|r| r[0] == 0 || r[0] > r[1]) {
            return bad("ranges must be non-empty with a positive lower bound");
        }
        if self.actions_per_sequence[0] < 2 {
            return bad("sequences need at least two actions");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must lie in [0, 1)");
        }
        if self.sequences < 2 {
            return bad("need at least two sequences");
        }
        if self
            .actions
            .iter()
            .any(|a| !(a.amplitude[0] > 0.0 && a.amplitude[0] <= a.amplitude[1]))
        {
            return bad("amplitude ranges must be positive and ordered");
        }
        Ok(())
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        LabelSet::new(&self.actions.iter().map(|a| a.name.as_str()).collect::<Vec<_>>())
    }
}

/// Integrates per-frame kinematic states into poses.
struct Integrator {
    heading: f64,
    ground: Vector3<f64>,
    skeleton: Skeleton,
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

fn quantized_rot(m: &nalgebra::Matrix3<f64>) -> Rot6D {
    let r = Rot6D::from_matrix(m).expect("axis-angle yields rotations");
    Rot6D::new(r.a.map(quantize), r.b.map(quantize))
}

impl Integrator {
    fn step(&mut self, s: &PoseParams) -> Pose {
        let up = self.skeleton.up_axis;
        let fwd = self.skeleton.forward_axis;
        let lat = self.skeleton.lateral_axis();
        self.heading += s.yaw_rate;
        let yaw = axis_angle(&up, self.heading);
        self.ground += yaw * (lat * s.velocity[0] + fwd * s.velocity[1]);
        let root = yaw * axis_angle(&lat, -s.lean) * axis_angle(&fwd, s.roll);
        let x = self.ground + up * (STANDING_HEIGHT + s.height);
        Pose {
            r: quantized_rot(&root),
            theta: s
                .joints
                .iter()
                .map(|aa| {
                    let angle = aa.norm();
                    if angle < 1e-12 {
                        Rot6D::IDENTITY
                    } else {
                        quantized_rot(&axis_angle(aa, angle))
                    }
                })
                .collect(),
            x: x.map(quantize),
        }
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn generate_sequence(config: &CorpusConfig, rng: &mut ChaCha8Rng, skeleton: &Skeleton) -> SegmentedSequence {
    let n_actions = rng.random_range(config.actions_per_sequence[0]..=config.actions_per_sequence[1]);
    let style = Style::sample(rng);
    let mut integ = Integrator {
        heading: rng.random_range(-PI..PI),
        ground: Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0),
        skeleton: skeleton.clone(),
    };
    let mut frames = Vec::new();
    let mut segments = Vec::new();
    let mut previous: Option<(Primitive, usize, SegmentParams)> = None;
    for _ in 0..n_actions {
        let label = rng.random_range(0..config.actions.len());
        let spec = &config.actions[label];
        let len = rng.random_range(config.action_length[0]..=config.action_length[1]);
        let params = SegmentParams::sample(
            rng,
            (spec.amplitude[0], spec.amplitude[1]),
            len,
            spec.primitive,
            config.fps,
        );
        let states: Vec<PoseParams> = (0..len)
            .map(|i| spec.primitive.evaluate(i as isize, len, &params, &style))
            .collect();
        if let Some((prim, prev_len, prev_params)) = previous.take() {
            let lt = rng.random_range(config.transition_length[0]..=config.transition_length[1]);
            let start = frames.len();
            for i in 0..lt {
                let w = smoothstep((i + 1) as f64 / (lt + 1) as f64);
                let out = prim.evaluate((prev_len + i) as isize, prev_len, &prev_params, &style);
                let into = spec.primitive.evaluate(i as isize - lt as isize, len, &params, &style);
                frames.push(integ.step(&PoseParams::blend(&out, &into, w)));
            }
            segments.push(Segment {
                start,
                end: frames.len(),
                label: TRANSITION_ID,
            });
        }
        let start = frames.len();
        frames.extend(states.iter().map(|s| integ.step(s)));
        segments.push(Segment {
            start,
            end: frames.len(),
            label: label + 1,
        });
        previous = Some((spec.primitive, len, params));
    }
    debug_assert!(frames.iter().all(|f| f.theta.len() == JOINTS));
    let labels = segments
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.label, s.len()))
        .collect();
    SegmentedSequence {
        motion: Motion::new(frames, config.fps).with_labels(labels),
        segments,
    }
}

/// Deterministic corpus generation: a pure function of `(config, seed)`.
pub fn generate_corpus(config: &CorpusConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let labels = config.label_set()?;
    let skeleton = Skeleton::toy();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences: Vec<SegmentedSequence> = (0..config.sequences)
        .map(|_| generate_sequence(config, &mut rng, &skeleton))
        .collect();

    let mut order: Vec<usize> = (0..sequences.len()).collect();
    order.shuffle(&mut rng);
    let n_test = ((sequences.len() as f64) * config.test_fraction).round() as usize;
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();

    let corpus = Corpus {
        labels,
        skeleton,
        fps: config.fps,
        sequences,
        split: Split { train, test },
    };
    let counts = corpus.label_counts(&corpus.split.train);
    for id in corpus.labels.action_ids() {
        if counts[id] < config.min_per_label {
            return Err(Error::ConfigInvalid(format!(
                "label '{}' occurs in {} training sequences, need {}",
                corpus.labels.name(id).unwrap_or("?"),
                counts[id],
                config.min_per_label
            )));
        }
    }
    Ok(corpus)
}
