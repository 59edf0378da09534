//! The recurrent long-term generator: an initial action from the
//! initializer, then per step canonicalize the previous action, sample a
//! transition and the next action, and stitch both back into world space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canonicalization::{
    canonicalize_with_fallback, heading_decompose, tilt_angle, uncanonicalize, Axes, CanonMode, CanonTransform,
};
use crate::corpus::{ActionScript, ScriptEntry, TRANSITION_ID};
use crate::error::{Error, Result};
use crate::kinematics::{rot6d_to_matrix, Motion};
use crate::model::{Initializer, Macvae};

/// Largest heading or anchor offset accepted as zero before a MACVAE call.
pub const CANONICAL_TOL: f64 = 1e-9;

/// The trained networks a pipeline runs on; shared read-only.
pub struct Models {
    pub macvae: Macvae,
    pub initializer: Initializer,
    pub fps: f64,
}

impl Models {
    pub fn new(macvae: Macvae, initializer: Initializer, fps: f64) -> Result<Self> {
        if macvae.labels != initializer.labels {
            return Err(Error::LabelSetMismatch {
                checkpoint: initializer.labels.hash(),
                expected: macvae.labels.hash(),
            });
        }
        if macvae.skeleton != initializer.skeleton {
            return Err(Error::InvalidArgument(
                "models were trained on different skeletons".into(),
            ));
        }
        Ok(Self {
            macvae,
            initializer,
            fps,
        })
    }

    fn axes(&self) -> Axes {
        Axes::of(&self.macvae.skeleton)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Action,
    Transition,
}

/// One generated segment of the global motion, frames `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedSegment {
    pub kind: SegmentKind,
    pub label: usize,
    pub start: usize,
    pub end: usize,
}

impl LoggedSegment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineState {
    /// Number of completed steps; the initial action is step 1.
    pub step: usize,
    pub seed: u64,
    pub global_motion: Motion,
    pub segment_log: Vec<LoggedSegment>,
    /// The most recent action segment in world coordinates.
    pub last_action: Motion,
}

/// What one recurrent step saw and produced.
#[derive(Clone, Debug)]
pub struct StepTrace {
    pub step: usize,
    pub label: usize,
    pub transform: CanonTransform,
    /// The anchor had no heading and borrowed an earlier frame's.
    pub fallback: bool,
    /// Heading of the canonical anchor root (`None` when undefined).
    pub canonical_heading: Option<f64>,
    /// Distance of the canonical anchor root from the origin.
    pub canonical_offset: f64,
    /// Tilt of the anchor root in world and in the model's input frame.
    pub world_tilt: f64,
    pub canonical_tilt: f64,
    /// Model outputs before stitching.
    pub transition_local: Motion,
    pub action_local: Motion,
}

/// Deterministic per-step generator: stream `step` of the master seed, so
/// each step's randomness is independent of how many steps precede it.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

/// Generates S₁ with the initializer.
pub fn init(entry: &ScriptEntry, models: &Models, seed: u64) -> Result<PipelineState> {
    if entry.action_length == 0 {
        return Err(Error::InvalidArgument("action length must be at least 1".into()));
    }
    let mut rng = step_rng(seed, 1);
    let s1 = models
        .initializer
        .generate(entry.label, entry.action_length, models.fps, &mut rng)?;
    Ok(PipelineState {
        step: 1,
        seed,
        segment_log: vec![LoggedSegment {
            kind: SegmentKind::Action,
            label: entry.label,
            start: 0,
            end: s1.len(),
        }],
        last_action: s1.clone(),
        global_motion: s1,
    })
}

/// One recurrence: canonicalize the previous action at its last frame,
/// sample `[T'; S']`, map both back with the inverse transform and append.
pub fn step(state: &mut PipelineState, entry: &ScriptEntry, models: &Models) -> Result<StepTrace> {
    models.macvae.labels.check_action(entry.label)?;
    if entry.transition_length == 0 || entry.action_length == 0 {
        return Err(Error::InvalidArgument(
            "transition and action lengths must be at least 1".into(),
        ));
    }
    let number = state.step + 1;
    let axes = models.axes();
    let mode = models.macvae.config.canon_mode;
    let anchor = state.last_action.len() - 1;
    let (local, transform) = canonicalize_with_fallback(&state.last_action, anchor, mode, &axes)?;

    let world_r = rot6d_to_matrix(&state.last_action.frames[anchor].r)?;
    let local_r = rot6d_to_matrix(&local.frames[anchor].r)?;
    let fallback = mode == CanonMode::FaceFront && heading_decompose(&world_r, &axes).is_none();
    let canonical_heading = heading_decompose(&local_r, &axes).map(|d| d.heading);
    let canonical_offset = local.frames[anchor].x.norm();
    if mode != CanonMode::None {
        let violated = |message: String| Err(Error::Invariant { step: number, message });
        if canonical_offset > CANONICAL_TOL {
            return violated(format!("anchor is {canonical_offset:e} from the origin"));
        }
        if let (false, Some(h)) = (fallback, canonical_heading) {
            if h.abs() > CANONICAL_TOL {
                return violated(format!("anchor heading is {h:e}"));
            }
        }
    }

    let mut rng = step_rng(state.seed, number);
    let (t_local, s_local) = models.macvae.generate(
        &local,
        entry.label,
        entry.transition_length,
        entry.action_length,
        &mut rng,
    )?;
    let t_world = uncanonicalize(&t_local, &transform);
    let s_world = uncanonicalize(&s_local, &transform);

    let start = state.global_motion.len();
    state.global_motion.extend(&t_world);
    state.global_motion.extend(&s_world);
    state.segment_log.push(LoggedSegment {
        kind: SegmentKind::Transition,
        label: TRANSITION_ID,
        start,
        end: start + t_world.len(),
    });
    state.segment_log.push(LoggedSegment {
        kind: SegmentKind::Action,
        label: entry.label,
        start: start + t_world.len(),
        end: state.global_motion.len(),
    });
    state.last_action = s_world;
    state.step = number;
    Ok(StepTrace {
        step: number,
        label: entry.label,
        transform,
        fallback,
        canonical_heading,
        canonical_offset,
        world_tilt: tilt_angle(&world_r, &axes),
        canonical_tilt: tilt_angle(&local_r, &axes),
        transition_local: t_local,
        action_local: s_local,
    })
}

/// Runs a whole script, keeping every step's trace.
pub fn run_traced(script: &ActionScript, models: &Models, seed: u64) -> Result<(PipelineState, Vec<StepTrace>)> {
    script.validate(&models.macvae.labels)?;
    let mut state = init(&script.entries[0], models, seed)?;
    let traces = script.entries[1..]
        .iter()
        .map(|e| step(&mut state, e, models))
        .collect::<Result<Vec<_>>>()?;
    Ok((state, traces))
}

/// `init` followed by `step` over the remaining entries.
pub fn run(script: &ActionScript, models: &Models, seed: u64) -> Result<(Motion, Vec<LoggedSegment>)> {
    let (state, _) = run_traced(script, models, seed)?;
    Ok((state.global_motion, state.segment_log))
}
