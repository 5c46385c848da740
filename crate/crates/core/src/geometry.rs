//! Vector and rotation algebra shared by the projection chain.
//!
//! Units: positions and translations are millimetres, angles are radians.
//! Nothing in the crate converts either implicitly.
//!
//! [`Mat3`] is `nalgebra::Matrix3<f64>`; `m[(i, j)]` is row `i`, column `j`
//! regardless of nalgebra's column-major storage. Matrices act on column
//! vectors from the left.

use std::ops::Deref;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this norm a vector has no usable direction.
pub const MIN_NORM: f64 = 1e-12;

/// Below this angle the Rodrigues coefficients switch to their Taylor series.
const SMALL_ANGLE: f64 = 1e-8;

/// Below this angle the Jacobian coefficients switch to their Taylor series.
const SMALL_ANGLE_JACOBIAN: f64 = 1e-2;

/// A direction with unit Euclidean norm (within 1e-9).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 3]", try_from = "[f64; 3]")]
pub struct UnitVec3(Vec3);

impl UnitVec3 {
    /// Tolerance accepted when reading directions from external files.
    pub const LOAD_TOLERANCE: f64 = 1e-6;

    pub fn new_normalize(v: Vec3) -> Result<Self> {
        normalize(&v)
    }

    /// Wraps `v` without checking its norm. Callers guarantee `|v| = 1`.
    pub fn new_unchecked(v: Vec3) -> Self {
        UnitVec3(v)
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn into_inner(self) -> Vec3 {
        self.0
    }

    pub fn as_vec(&self) -> &Vec3 {
        &self.0
    }
}

impl Deref for UnitVec3 {
    type Target = Vec3;

    fn deref(&self) -> &Vec3 {
        &self.0
    }
}

impl From<UnitVec3> for [f64; 3] {
    fn from(u: UnitVec3) -> Self {
        [u.0.x, u.0.y, u.0.z]
    }
}

impl TryFrom<[f64; 3]> for UnitVec3 {
    type Error = String;

    fn try_from(a: [f64; 3]) -> std::result::Result<Self, String> {
        let v = Vec3::new(a[0], a[1], a[2]);
        let n = v.norm();
        if !n.is_finite() || (n - 1.0).abs() > UnitVec3::LOAD_TOLERANCE {
            return Err(format!("direction {a:?} is not unit length (norm {n})"));
        }
        normalize(&v).map_err(|e| e.to_string())
    }
}

/// Unit vector parallel to `v`.
pub fn normalize(v: &Vec3) -> Result<UnitVec3> {
    let norm = v.norm();
    if !(norm > MIN_NORM) || !norm.is_finite() {
        return Err(Error::DegenerateVector { norm });
    }
    if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
        return Ok(UnitVec3(*v));
    }
    Ok(UnitVec3(v / norm))
}

/// Cross-product matrix: `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `sin(θ)/θ` and `(1 - cos θ)/θ²`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let half = 0.5 * theta;
        let s = half.sin() / half;
        (theta.sin() / theta, 0.5 * s * s)
    }
}

/// Rotation matrix for the rotation vector `r` (angle `|r|` about `r/|r|`).
pub fn rodrigues(r: &Vec3) -> Mat3 {
    let theta = r.norm();
    let (a, b) = rodrigues_coefficients(theta);
    let k = skew(r);
    Mat3::identity() + k * a + k * k * b
}

/// `∂R/∂r_k` for k = 0, 1, 2, where `R = rodrigues(r)`.
pub type RotationJacobian = [Mat3; 3];

/// Partial derivatives of [`rodrigues`] with respect to each component of `r`.
///
/// Differentiates `R = I + a(θ)K + b(θ)K²` term by term; `c` and `d` below are
/// `a'(θ)/θ` and `b'(θ)/θ`, which stay finite as `θ → 0`.
pub fn rodrigues_jacobian(r: &Vec3) -> RotationJacobian {
    let theta = r.norm();
    let (a, b) = rodrigues_coefficients(theta);
    let (c, d) = if theta < SMALL_ANGLE_JACOBIAN {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        (
            -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0 + t6 / 45360.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0 + t6 / 453600.0,
        )
    } else {
        let (s, co) = theta.sin_cos();
        let t2 = theta * theta;
        (
            (theta * co - s) / (t2 * theta),
            (theta * s - 2.0 * (1.0 - co)) / (t2 * t2),
        )
    };
    let k = skew(r);
    let k2 = k * k;
    std::array::from_fn(|i| {
        let e = skew(&Vec3::ith(i, 1.0));
        e * a + (e * k + k * e) * b + k * (c * r[i]) + k2 * (d * r[i])
    })
}

/// Frobenius norm of `MᵀM − I`.
pub fn orthogonality_error(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).norm()
}

/// Rotation angle of a proper rotation matrix, in radians.
pub fn rotation_angle(m: &Mat3) -> f64 {
    ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}
