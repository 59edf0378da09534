use nalgebra::{Matrix3, Vector3};

use super::pose::Pose;
use super::rotation::rot6d_to_matrix;
use super::skeleton::Skeleton;
use crate::error::{Error, Result};

/// World-space positions produced by forward kinematics.
#[derive(Clone, Debug, PartialEq)]
pub struct FkResult {
    /// One position per skeleton node, root first.
    pub joints: Vec<Vector3<f64>>,
    /// Surface points, grouped by node in node order.
    pub points: Vec<Vector3<f64>>,
}

/// World rotation and position of every node.
pub fn node_transforms(pose: &Pose, skeleton: &Skeleton) -> Result<Vec<(Matrix3<f64>, Vector3<f64>)>> {
    if pose.joint_count() != skeleton.joint_count() {
        return Err(Error::SkeletonMismatch {
            expected: skeleton.joint_count(),
            actual: pose.joint_count(),
        });
    }
    let mut world: Vec<(Matrix3<f64>, Vector3<f64>)> = Vec::with_capacity(skeleton.node_count());
    world.push((rot6d_to_matrix(&pose.r)?, pose.x));
    for node in 1..skeleton.node_count() {
        let parent = skeleton.parents[node].expect("validated skeleton");
        let (prot, ppos) = world[parent];
        let local = rot6d_to_matrix(&pose.theta[node - 1])?;
        world.push((prot * local, ppos + prot * skeleton.offsets[node]));
    }
    Ok(world)
}

pub fn forward_kinematics(pose: &Pose, skeleton: &Skeleton) -> Result<FkResult> {
    let world = node_transforms(pose, skeleton)?;
    let joints = world.iter().map(|(_, p)| *p).collect();
    let points = world
        .iter()
        .zip(&skeleton.surface_points)
        .flat_map(|((rot, pos), pts)| pts.iter().map(move |p| pos + rot * p))
        .collect();
    Ok(FkResult { joints, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::rotation::{axis_angle, Rot6D};
    use nalgebra::Matrix4;
    use std::f64::consts::FRAC_PI_2;

    fn chain() -> Skeleton {
        Skeleton::new(
            vec!["root".into(), "shoulder".into(), "elbow".into(), "wrist".into()],
            vec![None, Some(0), Some(1), Some(2)],
            vec![
                Vector3::zeros(),
                Vector3::new(0.0, 0.0, 1.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.5, 0.0, 0.0),
            ],
            vec![vec![], vec![], vec![], vec![Vector3::new(0.1, 0.0, 0.0)]],
            Vector3::z(),
            Vector3::y(),
        )
        .unwrap()
    }

    fn homogeneous(rot: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(rot);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
        m
    }

    #[test]
    fn rest_pose_accumulates_offsets() {
        let skel = Skeleton::toy();
        let fk = forward_kinematics(&Pose::identity(21), &skel).unwrap();
        let mut expected = vec![Vector3::zeros(); skel.node_count()];
        for n in 1..skel.node_count() {
            expected[n] = expected[skel.parents[n].unwrap()] + skel.offsets[n];
        }
        assert_eq!(fk.joints, expected);
        assert_eq!(fk.points.len(), skel.surface_point_count());
    }

    #[test]
    fn translation_shifts_everything() {
        let skel = Skeleton::toy();
        let base = forward_kinematics(&Pose::identity(21), &skel).unwrap();
        let mut pose = Pose::identity(21);
        pose.theta[7] = Rot6D::from_matrix(&axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.7)).unwrap();
        let t = Vector3::new(0.3, -1.2, 2.5);
        let bent = forward_kinematics(&pose, &skel).unwrap();
        pose.x = t;
        let moved = forward_kinematics(&pose, &skel).unwrap();
        for (a, b) in bent.joints.iter().zip(&moved.joints) {
            assert!((b - a - t).norm() < 1e-14);
        }
        for (a, b) in bent.points.iter().zip(&moved.points) {
            assert!((b - a - t).norm() < 1e-14);
        }
        assert_eq!(base.joints[0], Vector3::zeros());
        assert_eq!(moved.joints[0], t);
    }

    #[test]
    fn elbow_quarter_turn_matches_homogeneous_chain() {
        let skel = chain();
        let elbow = axis_angle(&Vector3::z(), FRAC_PI_2);
        let mut pose = Pose::identity(3);
        pose.theta[1] = Rot6D::from_matrix(&elbow).unwrap();
        pose.x = Vector3::new(0.0, 0.0, 0.5);
        let fk = forward_kinematics(&pose, &skel).unwrap();

        // explicit 4x4 products, written out independently of the FK loop
        let i3 = Matrix3::identity();
        let t_root = homogeneous(&i3, &Vector3::new(0.0, 0.0, 0.5));
        let t_shoulder = t_root * homogeneous(&i3, &Vector3::new(0.0, 0.0, 1.0));
        let t_elbow = t_shoulder * homogeneous(&elbow, &Vector3::new(1.0, 0.0, 0.0));
        let t_wrist = t_elbow * homogeneous(&i3, &Vector3::new(0.5, 0.0, 0.0));
        let tip = t_wrist * nalgebra::Vector4::new(0.1, 0.0, 0.0, 1.0);

        assert!((fk.joints[1] - Vector3::new(0.0, 0.0, 1.5)).norm() < 1e-15);
        assert!((fk.joints[2] - Vector3::new(1.0, 0.0, 1.5)).norm() < 1e-15);
        assert!((fk.joints[3] - t_wrist.fixed_view::<3, 1>(0, 3)).norm() < 1e-15);
        assert!((fk.joints[3] - Vector3::new(1.0, 0.5, 1.5)).norm() < 1e-15);
        assert!((fk.points[0] - tip.xyz()).norm() < 1e-15);
    }

    #[test]
    fn mismatched_joint_count_is_an_error() {
        let err = forward_kinematics(&Pose::identity(5), &Skeleton::toy()).unwrap_err();
        assert!(matches!(
            err,
            Error::SkeletonMismatch {
                expected: 21,
                actual: 5
            }
        ));
    }
}
