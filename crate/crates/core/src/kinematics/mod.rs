//! Rotation encodings, pose containers, and forward kinematics.

mod fk;
mod pose;
pub mod rotation;
mod skeleton;
pub mod tensor;

pub use fk::{forward_kinematics, node_transforms, FkResult};
pub use pose::{pose_dim, Motion, Pose};
pub use rotation::{axis_angle, matrix_to_rot6d, rot6d_to_matrix, Rot6D};
pub use skeleton::Skeleton;
