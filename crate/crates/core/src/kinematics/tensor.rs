//! Differentiable forward kinematics over candle tensors.

use candle_core::{DType, Device, Tensor, D};

use super::skeleton::Skeleton;
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-12;

/// Batched Gram-Schmidt decoding: `(..., 6)` to `(..., 3, 3)`, columns last.
pub fn rot6d_to_matrix(x: &Tensor) -> Result<Tensor> {
    let a = x.narrow(D::Minus1, 0, 3)?;
    let b = x.narrow(D::Minus1, 3, 3)?;
    let a = normalize(&a)?;
    let proj = (&a).broadcast_mul(&(&b * &a)?.sum_keepdim(D::Minus1)?)?;
    let c = normalize(&(b - proj)?)?;
    let d = cross(&a, &c)?;
    Ok(Tensor::stack(&[a, c, d], D::Minus1)?)
}

fn normalize(v: &Tensor) -> Result<Tensor> {
    let n = (v.sqr()?.sum_keepdim(D::Minus1)? + NORM_EPS)?.sqrt()?;
    Ok(v.broadcast_div(&n)?)
}

fn cross(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let c = |t: &Tensor, i| t.narrow(D::Minus1, i, 1);
    let (a0, a1, a2) = (c(a, 0)?, c(a, 1)?, c(a, 2)?);
    let (b0, b1, b2) = (c(b, 0)?, c(b, 1)?, c(b, 2)?);
    let x = ((&a1 * &b2)? - (&a2 * &b1)?)?;
    let y = ((&a2 * &b0)? - (&a0 * &b2)?)?;
    let z = ((&a0 * &b1)? - (&a1 * &b0)?)?;
    Ok(Tensor::cat(&[x, y, z], D::Minus1)?)
}

/// Skeleton constants materialized as tensors of one dtype/device.
pub struct TensorSkeleton {
    parents: Vec<Option<usize>>,
    /// Per node, its rest offset as a `(1, 1, 3)` row.
    offsets: Vec<Tensor>,
    /// Owning node of every surface point.
    point_nodes: Tensor,
    /// Local surface-point offsets, `(1, P, 1, 3)`.
    point_offsets: Tensor,
    joints: usize,
}

impl TensorSkeleton {
    pub fn new(skeleton: &Skeleton, dtype: DType, device: &Device) -> Result<Self> {
        let offsets = skeleton
            .offsets
            .iter()
            .map(|o| Tensor::from_slice(o.as_slice(), (1, 1, 3), device)?.to_dtype(dtype))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let mut nodes = Vec::new();
        let mut flat = Vec::new();
        for (node, pts) in skeleton.surface_points.iter().enumerate() {
            for p in pts {
                nodes.push(node as u32);
                flat.extend_from_slice(&[p.x, p.y, p.z]);
            }
        }
        let count = nodes.len();
        Ok(Self {
            parents: skeleton.parents.clone(),
            offsets,
            point_nodes: Tensor::from_vec(nodes, count, device)?,
            point_offsets: Tensor::from_vec(flat, (1, count, 1, 3), device)?.to_dtype(dtype)?,
            joints: skeleton.joint_count(),
        })
    }

    pub fn pose_dim(&self) -> usize {
        super::pose::pose_dim(self.joints)
    }
}

/// Batched 3×3 products `(T, 3, 3) · (T, 3, 3)` as broadcast multiply-sum,
/// which beats many tiny matmuls on CPU.
fn mat_mul3(a: &Tensor, b: &Tensor) -> candle_core::Result<Tensor> {
    a.unsqueeze(3)?.broadcast_mul(&b.unsqueeze(1)?)?.sum(2)
}

/// Forward kinematics of `(T, D)` flattened poses. Returns node positions
/// `(T, nodes, 3)` and surface points `(T, P, 3)`.
pub fn forward_kinematics(poses: &Tensor, skel: &TensorSkeleton) -> Result<(Tensor, Tensor)> {
    let (frames, dim) = poses.dims2()?;
    if dim != skel.pose_dim() {
        return Err(Error::DimensionMismatch {
            expected: skel.pose_dim(),
            actual: dim,
        });
    }
    let root_rot = rot6d_to_matrix(&poses.narrow(1, 0, 6)?)?;
    let root_pos = poses.narrow(1, dim - 3, 3)?;
    let local = rot6d_to_matrix(&poses.narrow(1, 6, 6 * skel.joints)?.reshape((frames, skel.joints, 6))?)?;

    let mut rots: Vec<Tensor> = Vec::with_capacity(skel.parents.len());
    let mut pos: Vec<Tensor> = Vec::with_capacity(skel.parents.len());
    rots.push(root_rot);
    pos.push(root_pos);
    for node in 1..skel.parents.len() {
        let p = skel.parents[node].expect("validated skeleton");
        let r_local = local.narrow(1, node - 1, 1)?.squeeze(1)?;
        // R_p · offset as a row-wise dot product
        let offset = rots[p].broadcast_mul(&skel.offsets[node])?.sum(2)?;
        pos.push((&pos[p] + offset)?);
        rots.push(mat_mul3(&rots[p], &r_local)?);
    }

    let joints = Tensor::stack(&pos, 1)?.contiguous()?;
    let all_rots = Tensor::stack(&rots, 1)?.contiguous()?;
    let point_rots = all_rots.index_select(&skel.point_nodes, 1)?;
    let point_pos = joints.index_select(&skel.point_nodes, 1)?;
    let points = (point_rots.broadcast_mul(&skel.point_offsets)?.sum(3)? + point_pos)?;
    Ok((joints, points))
}
