//! Six-parameter stand-in for fine-tuning the frozen 3D gaze network.
//!
//! The adapter rotates a base prediction by `delta` and adds `bias` before
//! renormalising. Its rotation is the coordinate drift the alignment step
//! later has to undo.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{normalize, rodrigues, rodrigues_jacobian, Mat3, RotationJacobian, UnitVec3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeAdapter {
    /// Rotation vector (radians), kept inside the ball `|delta| < π`.
    pub delta: Vec3,
    /// Additive offset applied before renormalisation (dimensionless).
    pub bias: Vec3,
}

impl Default for GazeAdapter {
    fn default() -> Self {
        Self::identity()
    }
}

impl GazeAdapter {
    /// The pre-trained network itself.
    pub fn identity() -> Self {
        Self {
            delta: Vec3::zeros(),
            bias: Vec3::zeros(),
        }
    }

    pub fn new(delta: Vec3, bias: Vec3) -> Self {
        let mut a = Self { delta, bias };
        a.wrap_rotation();
        a
    }

    /// Maps `delta` back into the principal ball without changing the rotation.
    pub fn wrap_rotation(&mut self) {
        let angle = self.delta.norm();
        if angle >= PI && angle.is_finite() {
            let wrapped = angle.rem_euclid(2.0 * PI);
            let wrapped = if wrapped > PI { wrapped - 2.0 * PI } else { wrapped };
            self.delta *= wrapped / angle;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.delta.iter().chain(self.bias.iter()).all(|x| x.is_finite())
    }
}

/// One calibration sample's predictions from the frozen network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasePrediction {
    pub sample_id: u64,
    /// Prediction on the original image.
    pub g_base: UnitVec3,
    /// Predictions on `K ≥ 1` colour-jittered variants.
    pub jitter_variants: Vec<UnitVec3>,
    /// Prediction on the horizontally flipped image.
    pub g_base_flipped: UnitVec3,
}

/// Derivatives of the adapted direction with respect to the adapter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdapterJacobian {
    pub output: UnitVec3,
    pub d_delta: Mat3,
    pub d_bias: Mat3,
}

/// Adapter with its rotation evaluated once.
#[derive(Debug, Clone)]
pub struct AdapterFrame {
    adapter: GazeAdapter,
    rot: Mat3,
    rot_jacobian: Option<RotationJacobian>,
}

impl AdapterFrame {
    pub fn new(adapter: &GazeAdapter) -> Self {
        Self {
            adapter: *adapter,
            rot: rodrigues(&adapter.delta),
            rot_jacobian: None,
        }
    }

    pub fn with_jacobian(adapter: &GazeAdapter) -> Self {
        let mut f = Self::new(adapter);
        f.rot_jacobian = Some(rodrigues_jacobian(&adapter.delta));
        f
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rot
    }

    pub fn adapt(&self, base: &UnitVec3) -> Result<UnitVec3> {
        normalize(&(self.rot * base.as_vec() + self.adapter.bias))
    }

    pub fn jacobian(&self, base: &UnitVec3) -> Result<AdapterJacobian> {
        let sum = self.rot * base.as_vec() + self.adapter.bias;
        let output = normalize(&sum)?;
        let norm = sum.norm();
        // d(x/|x|)/dx = (I − x̂x̂ᵀ)/|x|
        let d_norm = (Mat3::identity() - output.as_vec() * output.transpose()) / norm;
        let owned;
        let dr = match &self.rot_jacobian {
            Some(j) => j,
            None => {
                owned = rodrigues_jacobian(&self.adapter.delta);
                &owned
            }
        };
        let mut d_rot = Mat3::zeros();
        for k in 0..3 {
            d_rot.set_column(k, &(dr[k] * base.as_vec()));
        }
        Ok(AdapterJacobian {
            output,
            d_delta: d_norm * d_rot,
            d_bias: d_norm,
        })
    }
}

/// `normalize(R(delta)·base + bias)`.
pub fn adapt(base: &UnitVec3, adapter: &GazeAdapter) -> Result<UnitVec3> {
    AdapterFrame::new(adapter).adapt(base)
}

pub fn adapt_jacobian(base: &UnitVec3, adapter: &GazeAdapter) -> Result<AdapterJacobian> {
    AdapterFrame::new(adapter).jacobian(base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn unit(x: f64, y: f64, z: f64) -> UnitVec3 {
        normalize(&Vec3::new(x, y, z)).unwrap()
    }

    fn fd_jacobian(base: &UnitVec3, a: &GazeAdapter) -> (Mat3, Mat3) {
        let h = 1e-6;
        let mut d_delta = Mat3::zeros();
        let mut d_bias = Mat3::zeros();
        for k in 0..3 {
            let eval = |dd: f64, db: f64| {
                let mut b = *a;
                b.delta[k] += dd;
                b.bias[k] += db;
                adapt(base, &b).unwrap().into_inner()
            };
            d_delta.set_column(k, &((eval(h, 0.0) - eval(-h, 0.0)) / (2.0 * h)));
            d_bias.set_column(k, &((eval(0.0, h) - eval(0.0, -h)) / (2.0 * h)));
        }
        (d_delta, d_bias)
    }

    fn rel_err(a: &Mat3, f: &Mat3) -> f64 {
        a.iter()
            .zip(f.iter())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_adapter_is_bitwise_identity() {
        let g = unit(0.3, -0.2, -0.9);
        assert_eq!(adapt(&g, &GazeAdapter::identity()).unwrap(), g);
    }

    #[test]
    fn quarter_turn() {
        let a = GazeAdapter::new(Vec3::new(0.0, 0.0, FRAC_PI_2), Vec3::zeros());
        let out = adapt(&unit(1.0, 0.0, 0.0), &a).unwrap();
        assert_abs_diff_eq!(out.into_inner(), Vec3::y(), epsilon = 1e-15);
    }

    #[test]
    fn random_adapters_give_unit_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let mut draw = || Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let a = GazeAdapter::new(draw(), draw() * 0.3);
            let g = match normalize(&draw()) {
                Ok(g) => g,
                Err(_) => continue,
            };
            if let Ok(out) = adapt(&g, &a) {
                assert!((out.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bias_derivative_at_identity_is_tangent_projector() {
        let g = unit(0.2, 0.1, -1.0);
        let j = adapt_jacobian(&g, &GazeAdapter::identity()).unwrap();
        let projector = Mat3::identity() - g.as_vec() * g.transpose();
        assert!((j.d_bias - projector).amax() < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let g = unit(0.3, -0.4, -0.85);
        for a in [
            GazeAdapter::new(Vec3::new(0.1, 0.0, 0.0), Vec3::zeros()),
            GazeAdapter::new(Vec3::new(0.05, -0.2, 0.3), Vec3::new(0.01, 0.02, -0.03)),
        ] {
            let j = adapt_jacobian(&g, &a).unwrap();
            let (fd_delta, fd_bias) = fd_jacobian(&g, &a);
            assert!(rel_err(&j.d_delta, &fd_delta) < 1e-4);
            assert!(rel_err(&j.d_bias, &fd_bias) < 1e-4);
        }
    }

    #[test]
    fn wraps_large_rotations() {
        let mut a = GazeAdapter::identity();
        a.delta = Vec3::new(0.0, 0.0, 1.5 * PI);
        a.wrap_rotation();
        assert!(a.delta.norm() < PI);
        let g = unit(1.0, 0.5, -0.2);
        let expected = rodrigues(&Vec3::new(0.0, 0.0, 1.5 * PI)) * g.as_vec();
        assert_abs_diff_eq!(adapt(&g, &a).unwrap().into_inner(), expected, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn pure_rotation_preserves_angles(
            dx in -1.0..1.0f64, dy in -1.0..1.0f64, dz in -1.0..1.0f64,
            a in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
            b in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
        ) {
            let ga = Vec3::new(a.0, a.1, a.2);
            let gb = Vec3::new(b.0, b.1, b.2);
            prop_assume!(ga.norm() > 1e-3 && gb.norm() > 1e-3);
            let (ga, gb) = (normalize(&ga).unwrap(), normalize(&gb).unwrap());
            let ad = GazeAdapter::new(Vec3::new(dx, dy, dz), Vec3::zeros());
            let (oa, ob) = (adapt(&ga, &ad).unwrap(), adapt(&gb, &ad).unwrap());
            prop_assert!((oa.dot(&ob) - ga.dot(&gb)).abs() < 1e-12);
        }

        #[test]
        fn jacobian_agrees_with_finite_differences(
            dx in -1.0..1.0f64, dy in -1.0..1.0f64, dz in -1.0..1.0f64,
            bx in -0.2..0.2f64, by in -0.2..0.2f64, bz in -0.2..0.2f64,
        ) {
            let g = unit(0.1, 0.2, -0.97);
            let a = GazeAdapter::new(Vec3::new(dx, dy, dz), Vec3::new(bx, by, bz));
            let j = adapt_jacobian(&g, &a).unwrap();
            let (fd_delta, fd_bias) = fd_jacobian(&g, &a);
            prop_assert!(rel_err(&j.d_delta, &fd_delta) < 1e-4);
            prop_assert!(rel_err(&j.d_bias, &fd_bias) < 1e-4);
        }
    }
}
