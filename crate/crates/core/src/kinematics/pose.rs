use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::rotation::Rot6D;
use crate::error::{Error, Result};

/// Flattened pose width for `joints` articulated joints: global rotation,
/// joint rotations, root translation.
pub const fn pose_dim(joints: usize) -> usize {
    6 + 6 * joints + 3
}

/// One frame of a motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Global (root) rotation.
    pub r: Rot6D,
    /// Joint-local rotations, in skeleton joint order.
    pub theta: Vec<Rot6D>,
    /// Root translation in meters.
    pub x: Vector3<f64>,
}

impl Pose {
    pub fn identity(joints: usize) -> Self {
        Self {
            r: Rot6D::IDENTITY,
            theta: vec![Rot6D::IDENTITY; joints],
            x: Vector3::zeros(),
        }
    }

    pub fn joint_count(&self) -> usize {
        self.theta.len()
    }

    pub fn dim(&self) -> usize {
        pose_dim(self.theta.len())
    }

    /// Layout: `r`, then `theta` in joint order, then `x`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        self.flatten_into(&mut v);
        v
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.r.to_array());
        for t in &self.theta {
            out.extend_from_slice(&t.to_array());
        }
        out.extend_from_slice(self.x.as_slice());
    }

    pub fn unflatten(v: &[f64], joints: usize) -> Result<Self> {
        let expected = pose_dim(joints);
        if v.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: v.len(),
            });
        }
        let r = Rot6D::from_slice(&v[0..6]);
        let theta = (0..joints)
            .map(|j| Rot6D::from_slice(&v[6 + 6 * j..12 + 6 * j]))
            .collect();
        let x = Vector3::new(v[expected - 3], v[expected - 2], v[expected - 1]);
        Ok(Self { r, theta, x })
    }
}

/// A time-ordered pose sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub frames: Vec<Pose>,
    pub fps: f64,
    /// Optional per-frame label ids.
    pub labels: Option<Vec<usize>>,
}

impl Motion {
    pub fn new(frames: Vec<Pose>, fps: f64) -> Self {
        Self {
            frames,
            fps,
            labels: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Self {
        debug_assert_eq!(labels.len(), self.frames.len());
        self.labels = Some(labels);
        self
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> Option<usize> {
        self.frames.first().map(Pose::joint_count)
    }

    /// Frames `[start, end)`, keeping per-frame labels.
    pub fn slice(&self, start: usize, end: usize) -> Motion {
        Motion {
            frames: self.frames[start..end].to_vec(),
            fps: self.fps,
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
        }
    }

    /// Appends `other`; labels are kept only when both sides carry them.
    pub fn extend(&mut self, other: &Motion) {
        self.labels = match (self.labels.take(), &other.labels) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, _) if self.frames.is_empty() => other.labels.clone(),
            _ => None,
        };
        self.frames.extend(other.frames.iter().cloned());
    }

    /// Row-major `len × D` matrix of flattened poses.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.frames.len() * self.frames.first().map_or(0, Pose::dim));
        for f in &self.frames {
            f.flatten_into(&mut out);
        }
        out
    }

    pub fn from_flat(data: &[f64], joints: usize, fps: f64) -> Result<Self> {
        let d = pose_dim(joints);
        if data.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d * (data.len() / d + 1),
                actual: data.len(),
            });
        }
        let frames = data
            .chunks(d)
            .map(|c| Pose::unflatten(c, joints))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(frames, fps))
    }
}
