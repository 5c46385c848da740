//! Rotation that maps the adapted (drifted) prediction frame back onto the
//! frozen network's frame, fitted from paired predictions on the same inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, UnitVec3, Vec3};

/// Relative singular-value floor below which the cross-covariance counts as
/// rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// A proper rotation `T` (`TᵀT = I`, `det T = +1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlignmentTransform(Mat3);

impl Default for AlignmentTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AlignmentTransform {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Wraps a matrix the caller knows to be in SO(3).
    pub fn from_rotation_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    /// `T·g`: drifted frame → reference frame.
    pub fn apply(&self, g: &UnitVec3) -> UnitVec3 {
        UnitVec3::new_unchecked(self.0 * g.as_vec())
    }

    /// `Tᵀ·g`: reference frame → drifted frame.
    pub fn apply_inverse(&self, g: &UnitVec3) -> UnitVec3 {
        UnitVec3::new_unchecked(self.0.tr_mul(g.as_vec()))
    }
}

/// Paired predictions `(drifted, reference)`, one per training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pairs: Vec<(UnitVec3, UnitVec3)>,
}

impl AnchorSet {
    pub fn new(pairs: Vec<(UnitVec3, UnitVec3)>) -> Result<Self> {
        if pairs.len() < 3 {
            return Err(Error::DegenerateAnchors(format!(
                "need at least 3 anchor pairs, got {}",
                pairs.len()
            )));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(UnitVec3, UnitVec3)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `Σ drifted · referenceᵀ`.
    pub fn cross_covariance(&self) -> Mat3 {
        self.pairs
            .iter()
            .fold(Mat3::zeros(), |acc, (d, r)| acc + d.as_vec() * r.transpose())
    }
}

/// Rotation minimising `Σ‖T·drifted − reference‖` over SO(3).
///
/// With `H = U S Vᵀ` the SVD of the cross-covariance, `T = V·diag(1, 1, det(VUᵀ))·Uᵀ`;
/// the sign flip keeps `T` a rotation when the bare `VUᵀ` would reflect.
pub fn solve_alignment(anchors: &AnchorSet) -> Result<AlignmentTransform> {
    let h = anchors.cross_covariance();
    if !h.iter().all(|x| x.is_finite()) {
        return Err(Error::DegenerateAnchors("non-finite anchor directions".into()));
    }
    let svd = h.svd(true, true);
    let mut sv = svd.singular_values;
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if !(sv[1] > RANK_TOLERANCE * sv[0]) {
        return Err(Error::DegenerateAnchors(format!(
            "cross-covariance has rank < 2 (singular values {:.3e}, {:.3e}, {:.3e})",
            sv[0], sv[1], sv[2]
        )));
    }
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateAnchors("SVD did not converge".into())),
    };
    let v = v_t.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let correction = Mat3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, sign));
    Ok(AlignmentTransform(v * correction * u.transpose()))
}

/// First-order response of [`solve_alignment`] to a change of the
/// cross-covariance: `H → H + dH` moves `T` to `(I + [ω]×)·T`.
///
/// At the optimum `S = T·H` is symmetric. Keeping it symmetric under the
/// perturbation gives `((tr S)·I − S)·ω = −vex(T·dH − (T·dH)ᵀ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentSensitivity {
    t: Mat3,
    inv: Mat3,
}

impl AlignmentSensitivity {
    pub fn new(cross_covariance: &Mat3, t: &AlignmentTransform) -> Result<Self> {
        let s = t.0 * cross_covariance;
        let s = (s + s.transpose()) * 0.5;
        let m = Mat3::identity() * s.trace() - s;
        let inv = m
            .try_inverse()
            .filter(|inv| inv.iter().all(|x| x.is_finite()))
            .ok_or_else(|| Error::DegenerateAnchors("alignment is not locally unique".into()))?;
        Ok(Self { t: t.0, inv })
    }

    pub fn omega(&self, d_cross_covariance: &Mat3) -> Vec3 {
        let x = self.t * d_cross_covariance;
        let a = x - x.transpose();
        -(self.inv * Vec3::new(a[(2, 1)], a[(0, 2)], a[(1, 0)]))
    }
}
