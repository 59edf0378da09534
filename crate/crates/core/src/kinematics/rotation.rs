use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm floor for the Gram-Schmidt inputs.
pub const DEGENERATE_EPS: f64 = 1e-8;

/// Tolerance used when checking that a matrix is a rotation.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Continuous 6D rotation encoding: the first two columns of a rotation
/// matrix, stored unnormalized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rot6D {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D {
        a: Vector3::new(1.0, 0.0, 0.0),
        b: Vector3::new(0.0, 1.0, 0.0),
    };

    pub fn new(a: Vector3<f64>, b: Vector3<f64>) -> Self {
        Self { a, b }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            a: Vector3::new(v[0], v[1], v[2]),
            b: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a.x, self.a.y, self.a.z, self.b.x, self.b.y, self.b.z]
    }

    pub fn to_matrix(&self) -> Result<Matrix3<f64>> {
        rot6d_to_matrix(self)
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        matrix_to_rot6d(m)
    }

    /// Left-multiplies both basis columns by `g`. Because Gram-Schmidt
    /// commutes with rotations, the decoded matrix becomes `g * R`.
    pub fn rotated_by(&self, g: &Matrix3<f64>) -> Self {
        Self {
            a: g * self.a,
            b: g * self.b,
        }
    }
}

impl Default for Rot6D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Gram-Schmidt decoding of a 6D rotation into a proper rotation matrix.
pub fn rot6d_to_matrix(r: &Rot6D) -> Result<Matrix3<f64>> {
    let na = r.a.norm();
    if !(na > DEGENERATE_EPS) {
        return Err(Error::DegenerateRotation(format!("|a| = {na:.3e}")));
    }
    let a = r.a / na;
    let c = r.b - a * r.b.dot(&a);
    let nc = c.norm();
    if !(nc > DEGENERATE_EPS) {
        return Err(Error::DegenerateRotation(format!(
            "b is parallel to a (|b_perp| = {nc:.3e})"
        )));
    }
    let c = c / nc;
    Ok(Matrix3::from_columns(&[a, c, a.cross(&c)]))
}

pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> Result<Rot6D> {
    let err = orthonormality_error(m);
    if !(err <= ORTHONORMAL_TOL) || m.determinant() <= 0.0 {
        return Err(Error::NotARotation(err));
    }
    Ok(Rot6D {
        a: m.column(0).into_owned(),
        b: m.column(1).into_owned(),
    })
}

/// Max-abs entry of `RᵀR − I`.
pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).amax()
}

pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
}

/// Angle of the rotation `a⁻¹ b`, in radians.
pub fn geodesic_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Spherical interpolation between two rotations, `t ∈ [0, 1]`.
pub fn slerp(a: &Matrix3<f64>, b: &Matrix3<f64>, t: f64) -> Matrix3<f64> {
    let ra = Rotation3::from_matrix_unchecked(*a);
    let rb = Rotation3::from_matrix_unchecked(*b);
    match ra.try_slerp(&rb, t, 1e-12) {
        Some(r) => r.into_inner(),
        // antipodal: any geodesic is valid, nalgebra refuses to pick one
        None => {
            let rel = ra.inverse() * rb;
            let axis = rel.axis().map(|u| u.into_inner()).unwrap_or_else(Vector3::x);
            (ra * Rotation3::from_axis_angle(&Unit::new_normalize(axis), std::f64::consts::PI * t)).into_inner()
        }
    }
}
