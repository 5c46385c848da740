//! Learnable-screen projection between 3D gaze rays and 2D screen points.
//!
//! A [`ScreenPose`] `(r, t)` maps screen coordinates to camera coordinates:
//! `x_cam = R(r) · (u, v, 0)ᵀ + t`. The screen normal is the third column of
//! `R`, and the screen's +z axis points out of the screen toward the viewer.
//! Screen points are millimetres in that frame; pixels are a separate,
//! optional output stage ([`to_pixels`]).

use nalgebra::{Matrix2x3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize, rodrigues, rodrigues_jacobian, Mat3, RotationJacobian, UnitVec3, Vec3};

/// `|g·n|` at or below this is treated as a ray parallel to the screen.
pub const EPS_PARALLEL: f64 = 1e-6;

const MM_PER_INCH: f64 = 25.4;

/// Six learnable screen parameters: rotation vector `r` (radians) and
/// translation `t` (mm), taking screen coordinates into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenPose {
    pub r: Vec3,
    pub t: Vec3,
}

impl Default for ScreenPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl ScreenPose {
    pub fn new(r: Vec3, t: Vec3) -> Self {
        Self { r, t }
    }

    pub fn identity() -> Self {
        Self {
            r: Vec3::zeros(),
            t: Vec3::zeros(),
        }
    }

    pub fn rotation(&self) -> Mat3 {
        rodrigues(&self.r)
    }

    pub fn normal(&self) -> UnitVec3 {
        UnitVec3::new_unchecked(self.rotation().column(2).into_owned())
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(self.t.iter()).all(|x| x.is_finite())
    }
}

/// A point in the screen frame, in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScreenPoint {
    pub u: f64,
    pub v: f64,
}

impl ScreenPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    pub fn distance(&self, other: &ScreenPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn l1_distance(&self, other: &ScreenPoint) -> f64 {
        (self.u - other.u).abs() + (self.v - other.v).abs()
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

impl From<Vector2<f64>> for ScreenPoint {
    fn from(v: Vector2<f64>) -> Self {
        Self { u: v.x, v: v.y }
    }
}

/// Device constant for mm → pixel conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelSpec {
    pub ppi: f64,
    /// Pixel position of the screen-frame origin.
    #[serde(default)]
    pub origin_px: (f64, f64),
}

impl PixelSpec {
    pub fn new(ppi: f64) -> Result<Self> {
        Self::with_origin(ppi, (0.0, 0.0))
    }

    pub fn with_origin(ppi: f64, origin_px: (f64, f64)) -> Result<Self> {
        if !(ppi > 0.0 && ppi.is_finite()) {
            return Err(Error::InvalidConfig(format!("ppi must be positive, got {ppi}")));
        }
        Ok(Self { ppi, origin_px })
    }
}

/// Screen millimetres to pixels.
pub fn to_pixels(p: &ScreenPoint, spec: &PixelSpec) -> (f64, f64) {
    let scale = spec.ppi / MM_PER_INCH;
    (p.u * scale + spec.origin_px.0, p.v * scale + spec.origin_px.1)
}

/// Result of a ray–plane intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intersection {
    /// Intersection point in camera coordinates (mm).
    pub point: Vec3,
    /// Ray parameter `s` in `o + s·g`.
    pub ray_param: f64,
}

impl Intersection {
    /// The plane lies behind the gaze origin along `g`. Still a valid
    /// intersection; evaluation reports count these.
    pub fn behind_origin(&self) -> bool {
        self.ray_param < 0.0
    }
}

/// Projected screen point together with the ray parameter that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: ScreenPoint,
    pub ray_param: f64,
}

impl Projection {
    pub fn behind_origin(&self) -> bool {
        self.ray_param < 0.0
    }
}

/// Partial derivatives of the projected screen point `(u, v)`.
///
/// Row 0 is `u`, row 1 is `v`; columns index the three components of the
/// respective input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionJacobian {
    pub d_r: Matrix2x3<f64>,
    pub d_t: Matrix2x3<f64>,
    pub d_g: Matrix2x3<f64>,
}

/// A [`ScreenPose`] with its rotation matrix (and optionally the rotation
/// Jacobian) evaluated once, for repeated projections under the same pose.
#[derive(Debug, Clone)]
pub struct Projector {
    pose: ScreenPose,
    rot: Mat3,
    normal: Vec3,
    rot_jacobian: Option<RotationJacobian>,
}

impl Projector {
    pub fn new(pose: &ScreenPose) -> Self {
        let rot = pose.rotation();
        Self {
            pose: *pose,
            normal: rot.column(2).into_owned(),
            rot,
            rot_jacobian: None,
        }
    }

    /// Like [`Projector::new`], also caching `∂R/∂r` for [`Projector::jacobian`].
    pub fn with_jacobian(pose: &ScreenPose) -> Self {
        let mut p = Self::new(pose);
        p.rot_jacobian = Some(rodrigues_jacobian(&pose.r));
        p
    }

    pub fn pose(&self) -> &ScreenPose {
        &self.pose
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rot
    }

    pub fn normal(&self) -> &Vec3 {
        &self.normal
    }

    /// Intersects the ray `o + s·g` with the screen plane. `g` need not be
    /// unit length; the parallel test is scale-free.
    pub fn intersect(&self, o: &Vec3, g: &Vec3) -> Result<Intersection> {
        let dot = g.dot(&self.normal);
        let scale = g.norm();
        if !(dot.abs() > EPS_PARALLEL * scale) {
            return Err(Error::RayParallelToScreen {
                dot: if scale > 0.0 { dot / scale } else { dot },
            });
        }
        let s = (self.pose.t - o).dot(&self.normal) / dot;
        if !s.is_finite() {
            return Err(Error::RayParallelToScreen { dot });
        }
        Ok(Intersection {
            point: o + g * s,
            ray_param: s,
        })
    }

    /// Full screen-frame coordinates `Rᵀ(p − t)`; z is the offset from the plane.
    pub fn camera_to_screen_full(&self, p3d: &Vec3) -> Vec3 {
        self.rot.tr_mul(&(p3d - self.pose.t))
    }

    pub fn camera_to_screen(&self, p3d: &Vec3) -> ScreenPoint {
        let q = self.camera_to_screen_full(p3d);
        ScreenPoint::new(q.x, q.y)
    }

    pub fn screen_to_camera(&self, p: &ScreenPoint) -> Vec3 {
        self.rot * Vec3::new(p.u, p.v, 0.0) + self.pose.t
    }

    pub fn project_raw(&self, g: &Vec3, o: &Vec3) -> Result<Projection> {
        let hit = self.intersect(o, g)?;
        Ok(Projection {
            point: self.camera_to_screen(&hit.point),
            ray_param: hit.ray_param,
        })
    }

    pub fn project(&self, g: &UnitVec3, o: &Vec3) -> Result<ScreenPoint> {
        self.project_raw(g, o).map(|p| p.point)
    }

    pub fn inverse_project(&self, p: &ScreenPoint, o: &Vec3) -> Result<UnitVec3> {
        normalize(&(self.screen_to_camera(p) - o))
    }

    /// Projected point and its derivatives with respect to `r`, `t`, and the
    /// (unnormalised) direction `g`.
    ///
    /// With `n = R e₃`, `s = ((t − o)·n)/(g·n)` and `q = Rᵀ(o + s g − t)`:
    /// `∂q/∂g = s Rᵀ (I − g nᵀ/(g·n))`, `∂q/∂t = Rᵀ (g nᵀ/(g·n) − I)`, and
    /// `∂q/∂r_k = (∂R/∂r_k)ᵀ (p − t) + Rᵀ g ∂s/∂r_k`.
    pub fn jacobian(&self, g: &Vec3, o: &Vec3) -> Result<(Projection, ProjectionJacobian)> {
        let hit = self.intersect(o, g)?;
        let n = &self.normal;
        let gn = g.dot(n);
        let s = hit.ray_param;
        let rt = self.rot.transpose();
        let rel = hit.point - self.pose.t;
        let q = rt * rel;

        let d_g = rt * (Mat3::identity() - g * n.transpose() / gn) * s;
        let d_t = rt * (g * n.transpose() / gn - Mat3::identity());

        let owned;
        let dr = match &self.rot_jacobian {
            Some(j) => j,
            None => {
                owned = rodrigues_jacobian(&self.pose.r);
                &owned
            }
        };
        let to_o = self.pose.t - o;
        let mut d_r = Mat3::zeros();
        for k in 0..3 {
            let dn = dr[k].column(2);
            let ds = (to_o.dot(&dn) - s * g.dot(&dn)) / gn;
            let col = dr[k].tr_mul(&rel) + rt * g * ds;
            d_r.set_column(k, &col);
        }

        let top = |m: Mat3| m.fixed_rows::<2>(0).into_owned();
        Ok((
            Projection {
                point: ScreenPoint::new(q.x, q.y),
                ray_param: s,
            },
            ProjectionJacobian {
                d_r: top(d_r),
                d_t: top(d_t),
                d_g: top(d_g),
            },
        ))
    }
}

pub fn intersect_ray_plane(o: &Vec3, g: &UnitVec3, pose: &ScreenPose) -> Result<Intersection> {
    Projector::new(pose).intersect(o, g)
}

pub fn camera_to_screen(p3d: &Vec3, pose: &ScreenPose) -> ScreenPoint {
    Projector::new(pose).camera_to_screen(p3d)
}

pub fn screen_to_camera(p: &ScreenPoint, pose: &ScreenPose) -> Vec3 {
    Projector::new(pose).screen_to_camera(p)
}

/// Gaze direction `g` from origin `o` onto the screen `pose`.
pub fn project(g: &UnitVec3, o: &Vec3, pose: &ScreenPose) -> Result<ScreenPoint> {
    Projector::new(pose).project(g, o)
}

/// Unit direction from `o` toward the screen point `p`.
pub fn inverse_project(p: &ScreenPoint, o: &Vec3, pose: &ScreenPose) -> Result<UnitVec3> {
    Projector::new(pose).inverse_project(p, o)
}

pub fn projection_jacobian(
    g: &UnitVec3,
    o: &Vec3,
    pose: &ScreenPose,
) -> Result<(ScreenPoint, ProjectionJacobian)> {
    let (p, j) = Projector::new(pose).jacobian(g, o)?;
    Ok((p.point, j))
}
