use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kinematic tree with attached surface points.
///
/// Node 0 is the root and is driven by the pose's global rotation and
/// translation. Nodes `1..=J` are the articulated joints, driven by
/// `pose.theta[node - 1]`. Nodes are stored in depth-first order, so every
/// parent index is smaller than its child's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    /// Rest offset of each node from its parent, meters.
    pub offsets: Vec<Vector3<f64>>,
    /// Surface points in each node's local frame.
    pub surface_points: Vec<Vec<Vector3<f64>>>,
    pub up_axis: Vector3<f64>,
    pub forward_axis: Vector3<f64>,
}

impl Skeleton {
    pub fn new(
        names: Vec<String>,
        parents: Vec<Option<usize>>,
        offsets: Vec<Vector3<f64>>,
        surface_points: Vec<Vec<Vector3<f64>>>,
        up_axis: Vector3<f64>,
        forward_axis: Vector3<f64>,
    ) -> Result<Self> {
        let s = Self {
            names,
            parents,
            offsets,
            surface_points,
            up_axis,
            forward_axis,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.parents.len();
        if n < 2 {
            return Err(Error::InvalidSkeleton("need a root and at least one joint".into()));
        }
        if self.names.len() != n || self.offsets.len() != n || self.surface_points.len() != n {
            return Err(Error::InvalidSkeleton("per-node arrays differ in length".into()));
        }
        if self.parents[0].is_some() {
            return Err(Error::InvalidSkeleton("node 0 must be the root".into()));
        }
        for (i, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < i => {}
                _ => {
                    return Err(Error::InvalidSkeleton(format!(
                        "node {i} must have a parent that precedes it"
                    )))
                }
            }
        }
        if (self.up_axis.norm() - 1.0).abs() > 1e-9 || (self.forward_axis.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSkeleton("axes must be unit vectors".into()));
        }
        if self.up_axis.dot(&self.forward_axis).abs() > 1e-9 {
            return Err(Error::InvalidSkeleton("up and forward axes must be orthogonal".into()));
        }
        Ok(())
    }

    /// Number of articulated joints `J` (excludes the root).
    pub fn joint_count(&self) -> usize {
        self.parents.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.parents.len()
    }

    pub fn pose_dim(&self) -> usize {
        super::pose::pose_dim(self.joint_count())
    }

    pub fn surface_point_count(&self) -> usize {
        self.surface_points.iter().map(Vec::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Right-hand lateral axis, `forward × up`.
    pub fn lateral_axis(&self) -> Vector3<f64> {
        self.forward_axis.cross(&self.up_axis)
    }

    /// 21-joint humanoid, +Z up, +Y forward, four surface points per node.
    pub fn toy() -> Self {
        let v = Vector3::new;
        #[rustfmt::skip]
        let nodes: [(&str, Option<usize>, Vector3<f64>); 22] = [
            ("pelvis", None, v(0.0, 0.0, 0.0)),
            ("spine1", Some(0), v(0.0, 0.0, 0.10)),
            ("spine2", Some(1), v(0.0, 0.0, 0.12)),
            ("spine3", Some(2), v(0.0, 0.0, 0.12)),
            ("neck", Some(3), v(0.0, 0.0, 0.15)),
            ("head", Some(4), v(0.0, 0.0, 0.10)),
            ("left_collar", Some(3), v(-0.07, 0.0, 0.10)),
            ("left_shoulder", Some(6), v(-0.12, 0.0, 0.0)),
            ("left_elbow", Some(7), v(-0.26, 0.0, 0.0)),
            ("left_wrist", Some(8), v(-0.25, 0.0, 0.0)),
            ("right_collar", Some(3), v(0.07, 0.0, 0.10)),
            ("right_shoulder", Some(10), v(0.12, 0.0, 0.0)),
            ("right_elbow", Some(11), v(0.26, 0.0, 0.0)),
            ("right_wrist", Some(12), v(0.25, 0.0, 0.0)),
            ("left_hip", Some(0), v(-0.09, 0.0, -0.08)),
            ("left_knee", Some(14), v(0.0, 0.0, -0.40)),
            ("left_ankle", Some(15), v(0.0, 0.0, -0.40)),
            ("left_foot", Some(16), v(0.0, 0.12, -0.06)),
            ("right_hip", Some(0), v(0.09, 0.0, -0.08)),
            ("right_knee", Some(18), v(0.0, 0.0, -0.40)),
            ("right_ankle", Some(19), v(0.0, 0.0, -0.40)),
            ("right_foot", Some(20), v(0.0, 0.12, -0.06)),
        ];
        let ring = vec![
            v(0.05, 0.0, 0.02),
            v(-0.05, 0.0, 0.02),
            v(0.0, 0.05, -0.02),
            v(0.0, -0.05, -0.02),
        ];
        Self::new(
            nodes.iter().map(|n| n.0.to_string()).collect(),
            nodes.iter().map(|n| n.1).collect(),
            nodes.iter().map(|n| n.2).collect(),
            vec![ring; nodes.len()],
            Vector3::z(),
            Vector3::y(),
        )
        .expect("toy skeleton is valid")
    }
}
