//! Parameterized joint-trajectory primitives for the toy humanoid.
//!
//! Angles are axis-angle vectors in the joint's local frame. The skeleton is
//! +Z up, +Y forward, +X to the body's right; a positive rotation about +X
//! swings a downward-pointing limb forward.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub(crate) const JOINTS: usize = 21;

// theta indices of the toy skeleton (node index - 1)
pub(crate) const SPINE1: usize = 0;
pub(crate) const SPINE2: usize = 1;
pub(crate) const SPINE3: usize = 2;
pub(crate) const NECK: usize = 3;
pub(crate) const L_SHOULDER: usize = 6;
pub(crate) const L_ELBOW: usize = 7;
pub(crate) const R_SHOULDER: usize = 10;
pub(crate) const R_ELBOW: usize = 11;
pub(crate) const L_HIP: usize = 13;
pub(crate) const L_KNEE: usize = 14;
pub(crate) const L_ANKLE: usize = 15;
pub(crate) const R_HIP: usize = 17;
pub(crate) const R_KNEE: usize = 18;
pub(crate) const R_ANKLE: usize = 19;

/// Standing pelvis height of the toy skeleton, meters.
pub(crate) const STANDING_HEIGHT: f64 = 0.94;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    StepCycle,
    Squat,
    ArmRaise,
    Wave,
    Bend,
    Turn,
    Kick,
    JumpingJacks,
}

/// Kinematic state the sequence integrator consumes every frame.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct PoseParams {
    pub joints: Vec<Vector3<f64>>,
    /// Forward lean of the pelvis, radians.
    pub lean: f64,
    /// Sideways roll of the pelvis, radians.
    pub roll: f64,
    /// Pelvis height offset from standing, meters.
    pub height: f64,
    /// Root velocity in the heading frame, meters/frame (lateral, forward).
    pub velocity: [f64; 2],
    pub yaw_rate: f64,
}

impl PoseParams {
    pub fn rest(style: &Style) -> Self {
        let mut joints = vec![Vector3::zeros(); JOINTS];
        // arms hang at the sides
        joints[L_SHOULDER] = Vector3::new(0.0, -1.35 + style.arm, 0.0);
        joints[R_SHOULDER] = Vector3::new(0.0, 1.35 - style.arm, 0.0);
        joints[L_ELBOW] = Vector3::new(0.15, 0.0, 0.0);
        joints[R_ELBOW] = Vector3::new(0.15, 0.0, 0.0);
        joints[SPINE2] = Vector3::new(style.posture, 0.0, 0.0);
        Self {
            joints,
            lean: style.lean,
            roll: 0.0,
            height: 0.0,
            velocity: [0.0, 0.0],
            yaw_rate: 0.0,
        }
    }

    /// Linear blend `(1 - w) a + w b`.
    pub fn blend(a: &Self, b: &Self, w: f64) -> Self {
        let l = |x: f64, y: f64| (1.0 - w) * x + w * y;
        Self {
            joints: a.joints.iter().zip(&b.joints).map(|(x, y)| x.lerp(y, w)).collect(),
            lean: l(a.lean, b.lean),
            roll: l(a.roll, b.roll),
            height: l(a.height, b.height),
            velocity: [l(a.velocity[0], b.velocity[0]), l(a.velocity[1], b.velocity[1])],
            yaw_rate: l(a.yaw_rate, b.yaw_rate),
        }
    }
}

/// Per-sequence performer idiosyncrasies.
#[derive(Clone, Debug)]
pub(crate) struct Style {
    pub arm: f64,
    pub posture: f64,
    pub lean: f64,
}

impl Style {
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        Self {
            arm: rng.random_range(-0.1..0.1),
            posture: rng.random_range(-0.05..0.08),
            lean: rng.random_range(-0.03..0.05),
        }
    }
}

/// Randomized parameters of one action segment.
#[derive(Clone, Debug)]
pub(crate) struct SegmentParams {
    pub amplitude: f64,
    pub cycles: f64,
    pub phase: f64,
    /// +1 or -1: which side performs one-sided actions.
    pub side: f64,
    /// Total heading change for turning actions, radians.
    pub turn: f64,
    /// Fraction of pelvis lean compensated at the hips.
    pub hip_compensation: f64,
}

impl SegmentParams {
    pub fn sample<R: Rng>(rng: &mut R, amplitude: (f64, f64), len: usize, primitive: Primitive, fps: f64) -> Self {
        let seconds = len as f64 / fps;
        let cycles = match primitive {
            Primitive::StepCycle => seconds * rng.random_range(0.8..1.2),
            Primitive::Wave => seconds * rng.random_range(1.5..2.5),
            Primitive::JumpingJacks => seconds * rng.random_range(0.9..1.3),
            Primitive::Bend => rng.random_range(0.5..1.25),
            Primitive::Turn => 1.0,
            _ => rng.random_range(0.6..1.4),
        };
        Self {
            amplitude: rng.random_range(amplitude.0..=amplitude.1),
            cycles,
            phase: rng.random_range(0.0..0.25),
            side: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            turn: rng.random_range(FRAC_PI_2..PI) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            hip_compensation: rng.random_range(0.5..0.95),
        }
    }
}

/// Raised-cosine pulse train in [0, 1].
fn pulse(u: f64, cycles: f64, phase: f64) -> f64 {
    0.5 * (1.0 - (TAU * (cycles * u + phase)).cos())
}

fn x(a: f64) -> Vector3<f64> {
    Vector3::new(a, 0.0, 0.0)
}

fn y(a: f64) -> Vector3<f64> {
    Vector3::new(0.0, a, 0.0)
}

impl Primitive {
    pub fn default_name(&self) -> &'static str {
        match self {
            Primitive::StepCycle => "walk",
            Primitive::Squat => "squat",
            Primitive::ArmRaise => "raise_arms",
            Primitive::Wave => "wave",
            Primitive::Bend => "bend",
            Primitive::Turn => "turn",
            Primitive::Kick => "kick",
            Primitive::JumpingJacks => "jumping_jacks",
        }
    }

    pub fn all() -> [Primitive; 8] {
        [
            Primitive::StepCycle,
            Primitive::Squat,
            Primitive::ArmRaise,
            Primitive::Wave,
            Primitive::Bend,
            Primitive::Turn,
            Primitive::Kick,
            Primitive::JumpingJacks,
        ]
    }

    /// State at frame `i` of an `n`-frame segment.
    /// Frame `i` of an `n`-frame segment. Indices outside `0..n` extrapolate
    /// the trajectory so transitions can crossfade moving signals.
    pub(crate) fn evaluate(&self, i: isize, n: usize, p: &SegmentParams, style: &Style) -> PoseParams {
        let u = i as f64 / n.max(1) as f64;
        let a = p.amplitude;
        let mut s = PoseParams::rest(style);
        match self {
            Primitive::StepCycle => {
                let w = TAU * (p.cycles * u + p.phase);
                let swing = 0.45 * a * w.sin();
                s.joints[L_HIP] = x(swing);
                s.joints[R_HIP] = x(-swing);
                s.joints[L_KNEE] = x(-0.7 * a * (w + 0.6).sin().max(0.0));
                s.joints[R_KNEE] = x(-0.7 * a * (w + 0.6 + PI).sin().max(0.0));
                s.joints[L_SHOULDER] += x(-0.4 * a * w.sin());
                s.joints[R_SHOULDER] += x(0.4 * a * w.sin());
                s.height = -0.02 * a * (2.0 * w).cos().abs();
                s.lean += 0.06 * a;
                s.velocity = [0.0, 0.04 * a];
                s.yaw_rate = 0.004 * p.side;
            }
            Primitive::Squat => {
                let d = pulse(u, p.cycles, p.phase);
                s.height = -0.32 * a * d;
                s.lean += 0.35 * a * d;
                s.joints[L_HIP] = x(1.3 * a * d);
                s.joints[R_HIP] = x(1.3 * a * d);
                s.joints[L_KNEE] = x(-1.9 * a * d);
                s.joints[R_KNEE] = x(-1.9 * a * d);
                s.joints[L_ANKLE] = x(0.6 * a * d);
                s.joints[R_ANKLE] = x(0.6 * a * d);
                // arms reach forward for balance
                s.joints[L_SHOULDER] = s.joints[L_SHOULDER].lerp(&Vector3::new(1.2, -1.35, 0.0), d);
                s.joints[R_SHOULDER] = s.joints[R_SHOULDER].lerp(&Vector3::new(1.2, 1.35, 0.0), d);
            }
            Primitive::ArmRaise => {
                let d = pulse(u, p.cycles, p.phase);
                s.joints[L_SHOULDER] = Vector3::new(0.0, -1.35 + (2.6 * a) * d + style.arm, 0.0);
                s.joints[R_SHOULDER] = Vector3::new(0.0, 1.35 - (2.6 * a) * d - style.arm, 0.0);
                s.joints[SPINE3] = x(-0.15 * d);
                s.joints[NECK] = x(-0.2 * d);
            }
            Primitive::Wave => {
                let (sh, el) = if p.side > 0.0 {
                    (R_SHOULDER, R_ELBOW)
                } else {
                    (L_SHOULDER, L_ELBOW)
                };
                let ramp = (4.0 * u).clamp(0.0, 1.0);
                s.joints[sh] = y(p.side * (1.35 - 1.2 * ramp));
                let osc = (TAU * (p.cycles * u + p.phase)).sin();
                s.joints[el] = Vector3::new(0.0, 0.0, p.side * ramp * (1.2 + 0.6 * a * osc));
                s.joints[NECK] = Vector3::new(0.0, 0.0, -0.2 * p.side * ramp);
            }
            Primitive::Bend => {
                let d = pulse(u, p.cycles, p.phase);
                let lean = 0.95 * a * d;
                s.lean += lean;
                s.joints[SPINE1] = x(-0.25 * a * d);
                s.joints[SPINE2] += x(-0.25 * a * d);
                s.joints[NECK] = x(0.3 * d);
                s.joints[L_HIP] = x(p.hip_compensation * lean);
                s.joints[R_HIP] = x(p.hip_compensation * lean);
                s.joints[L_KNEE] = x(-0.3 * d);
                s.joints[R_KNEE] = x(-0.3 * d);
                // arms hang toward the ground
                s.joints[L_SHOULDER] = s.joints[L_SHOULDER].lerp(&Vector3::new(0.9 * a, -1.35, 0.0), d);
                s.joints[R_SHOULDER] = s.joints[R_SHOULDER].lerp(&Vector3::new(0.9 * a, 1.35, 0.0), d);
            }
            Primitive::Turn => {
                let u = u.clamp(0.0, 1.0);
                let w = TAU * (2.0 * u + p.phase);
                s.yaw_rate = p.turn / n.max(1) as f64 * (PI * u).sin() * FRAC_PI_2;
                s.joints[L_HIP] = x(0.15 * a * w.sin());
                s.joints[R_HIP] = x(-0.15 * a * w.sin());
                s.joints[SPINE3] = Vector3::new(0.0, 0.0, 0.25 * p.turn.signum() * (PI * u).sin());
                s.joints[NECK] = Vector3::new(0.0, 0.0, 0.3 * p.turn.signum() * (PI * u).sin());
            }
            Primitive::Kick => {
                let d = pulse(u, p.cycles, p.phase);
                let (hip, knee) = if p.side > 0.0 { (R_HIP, R_KNEE) } else { (L_HIP, L_KNEE) };
                s.joints[hip] = x(1.25 * a * d);
                s.joints[knee] = x(-0.9 * a * d * (1.0 - d));
                s.lean -= 0.2 * a * d;
                s.roll = 0.06 * p.side * d;
                s.joints[L_SHOULDER] += Vector3::new(0.0, 0.5 * d, 0.0);
                s.joints[R_SHOULDER] += Vector3::new(0.0, -0.5 * d, 0.0);
            }
            Primitive::JumpingJacks => {
                let d = pulse(u, p.cycles, p.phase);
                s.joints[L_SHOULDER] = Vector3::new(0.0, -1.35 + 2.4 * a * d, 0.0);
                s.joints[R_SHOULDER] = Vector3::new(0.0, 1.35 - 2.4 * a * d, 0.0);
                s.joints[L_HIP] = y(-0.35 * a * d);
                s.joints[R_HIP] = y(0.35 * a * d);
                s.joints[L_ANKLE] = y(0.35 * a * d);
                s.joints[R_ANKLE] = y(-0.35 * a * d);
                s.height = 0.06 * a * (TAU * (p.cycles * u + p.phase)).sin().abs();
            }
        }
        s
    }
}
