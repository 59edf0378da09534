//! Face-front and zero canonicalization of motions, and the inverse used to
//! stitch generated segments back into one global motion.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{axis_angle, rot6d_to_matrix, Motion, Pose, Skeleton};

/// Minimum ground-plane projection length of the rotated forward axis.
pub const HEADING_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CanonMode {
    #[default]
    FaceFront,
    Zero,
    None,
}

/// World vertical and rest facing direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axes {
    pub up: Vector3<f64>,
    pub forward: Vector3<f64>,
}

impl Axes {
    pub fn of(skeleton: &Skeleton) -> Self {
        Self {
            up: skeleton.up_axis,
            forward: skeleton.forward_axis,
        }
    }
}

impl Default for Axes {
    fn default() -> Self {
        Self {
            up: Vector3::z(),
            forward: Vector3::y(),
        }
    }
}

/// `R = R_up(heading) · tilt`, where `tilt` has zero heading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadingDecomposition {
    pub heading: f64,
    pub tilt: Matrix3<f64>,
}

pub fn heading_rotation(axes: &Axes, heading: f64) -> Matrix3<f64> {
    axis_angle(&axes.up, heading)
}

/// Splits a rotation into heading about the up axis and residual tilt.
///
/// The heading is the signed angle from the forward axis to the
/// ground-plane projection of `R · forward`.
pub fn heading_decompose(r: &Matrix3<f64>, axes: &Axes) -> Option<HeadingDecomposition> {
    let f = r * axes.forward;
    let proj = f - axes.up * f.dot(&axes.up);
    if proj.norm() <= HEADING_EPS {
        return None;
    }
    let heading = axes.forward.cross(&proj).dot(&axes.up).atan2(axes.forward.dot(&proj));
    let tilt = heading_rotation(axes, -heading) * r;
    Some(HeadingDecomposition { heading, tilt })
}

/// Angle between the body's up direction under `r` and the world up axis.
pub fn tilt_angle(r: &Matrix3<f64>, axes: &Axes) -> f64 {
    (r * axes.up).dot(&axes.up).clamp(-1.0, 1.0).acos()
}

/// The rigid map into a local coordinate system anchored at one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CanonTransform {
    /// Rotation applied to every frame.
    pub rotation: Matrix3<f64>,
    /// World position of the anchor root, subtracted before rotating.
    pub anchor_translation: Vector3<f64>,
    pub mode: CanonMode,
}

impl CanonTransform {
    pub fn identity(mode: CanonMode) -> Self {
        Self {
            rotation: Matrix3::identity(),
            anchor_translation: Vector3::zeros(),
            mode,
        }
    }

    pub fn apply(&self, pose: &Pose) -> Pose {
        Pose {
            r: pose.r.rotated_by(&self.rotation),
            theta: pose.theta.clone(),
            x: self.rotation * (pose.x - self.anchor_translation),
        }
    }

    pub fn invert(&self, pose: &Pose) -> Pose {
        let inv = self.rotation.transpose();
        Pose {
            r: pose.r.rotated_by(&inv),
            theta: pose.theta.clone(),
            x: inv * pose.x + self.anchor_translation,
        }
    }
}

fn map_frames(motion: &Motion, f: impl Fn(&Pose) -> Pose) -> Motion {
    Motion {
        frames: motion.frames.iter().map(f).collect(),
        fps: motion.fps,
        labels: motion.labels.clone(),
    }
}

/// Face-front transform anchored at `anchor`; no fallback.
fn face_front_at(motion: &Motion, anchor: usize, axes: &Axes) -> Result<CanonTransform> {
    let pose = &motion.frames[anchor];
    let r = rot6d_to_matrix(&pose.r)?;
    let dec = heading_decompose(&r, axes).ok_or(Error::GimbalDegenerate { frame: anchor })?;
    Ok(CanonTransform {
        rotation: heading_rotation(axes, -dec.heading),
        anchor_translation: pose.x,
        mode: CanonMode::FaceFront,
    })
}

/// Builds the transform that `canonicalize` would apply.
pub fn canon_transform(motion: &Motion, anchor: usize, mode: CanonMode, axes: &Axes) -> Result<CanonTransform> {
    if motion.is_empty() {
        return Err(Error::EmptyMotion);
    }
    if anchor >= motion.len() {
        return Err(Error::AnchorOutOfRange {
            anchor,
            len: motion.len(),
        });
    }
    match mode {
        CanonMode::None => Ok(CanonTransform::identity(CanonMode::None)),
        CanonMode::FaceFront => face_front_at(motion, anchor, axes),
        CanonMode::Zero => {
            let pose = &motion.frames[anchor];
            Ok(CanonTransform {
                rotation: rot6d_to_matrix(&pose.r)?.transpose(),
                anchor_translation: pose.x,
                mode: CanonMode::Zero,
            })
        }
    }
}

/// Remaps `motion` into the local system anchored at frame `anchor`
/// (0-based). Joint-local rotations are never touched.
pub fn canonicalize(motion: &Motion, anchor: usize, mode: CanonMode, axes: &Axes) -> Result<(Motion, CanonTransform)> {
    let t = canon_transform(motion, anchor, mode, axes)?;
    if mode == CanonMode::None {
        return Ok((motion.clone(), t));
    }
    Ok((map_frames(motion, |p| t.apply(p)), t))
}

/// Like [`canonicalize`], but in face-front mode a degenerate anchor borrows
/// the heading of the nearest earlier frame that has one. The anchor's own
/// translation is still used.
pub fn canonicalize_with_fallback(
    motion: &Motion,
    anchor: usize,
    mode: CanonMode,
    axes: &Axes,
) -> Result<(Motion, CanonTransform)> {
    match canonicalize(motion, anchor, mode, axes) {
        Err(Error::GimbalDegenerate { .. }) => {
            let rotation = (0..anchor)
                .rev()
                .find_map(|i| face_front_at(motion, i, axes).ok())
                .map(|t| t.rotation)
                .ok_or(Error::GimbalDegenerate { frame: anchor })?;
            let t = CanonTransform {
                rotation,
                anchor_translation: motion.frames[anchor].x,
                mode: CanonMode::FaceFront,
            };
            Ok((map_frames(motion, |p| t.apply(p)), t))
        }
        other => other,
    }
}

/// Maps a local motion back to world coordinates; inverse of [`canonicalize`].
pub fn uncanonicalize(motion_local: &Motion, t: &CanonTransform) -> Motion {
    if t.mode == CanonMode::None {
        return motion_local.clone();
    }
    map_frames(motion_local, |p| t.invert(p))
}

/// Face-front transform anchored at the last frame of `previous`; its
/// inverse places a local motion so that its origin and heading coincide
/// with where `previous` ends.
pub fn stitch_transform(previous: &Motion, axes: &Axes) -> Result<CanonTransform> {
    if previous.is_empty() {
        return Err(Error::EmptyMotion);
    }
    face_front_at(previous, previous.len() - 1, axes)
}
