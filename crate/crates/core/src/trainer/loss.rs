//! The three training losses and their gradients with respect to the
//! learnable vector `θ = (r, t / scale, delta, bias)`.

use nalgebra::{Matrix2x3, SMatrix, SVector, Vector2};

use crate::adapter::{AdapterFrame, GazeAdapter};
use crate::alignment::{solve_alignment, AlignmentSensitivity, AlignmentTransform, AnchorSet};
use crate::dataset::GazeSample;
use crate::error::{Error, Result};
use crate::geometry::{rodrigues_jacobian, skew, Mat3, RotationJacobian, UnitVec3, Vec3};
use crate::projection::{Projector, ScreenPoint, ScreenPose};
use crate::pseudolabel::{pseudo_label_point, OriginMode};

use super::config::LossWeights;

pub const N_PARAMS: usize = 12;
pub type ParamVec = SVector<f64, N_PARAMS>;
pub type PointJacobian = SMatrix<f64, 2, N_PARAMS>;

/// Residuals at or below this magnitude get a zero subgradient.
pub const DEAD_ZONE: f64 = 1e-9;

pub fn pack(pose: &ScreenPose, adapter: &GazeAdapter, translation_scale: f64) -> ParamVec {
    let mut theta = ParamVec::zeros();
    theta.fixed_rows_mut::<3>(0).copy_from(&pose.r);
    theta.fixed_rows_mut::<3>(3).copy_from(&(pose.t / translation_scale));
    theta.fixed_rows_mut::<3>(6).copy_from(&adapter.delta);
    theta.fixed_rows_mut::<3>(9).copy_from(&adapter.bias);
    theta
}

pub fn unpack(theta: &ParamVec, translation_scale: f64) -> (ScreenPose, GazeAdapter) {
    let v = |i: usize| Vec3::new(theta[i], theta[i + 1], theta[i + 2]);
    (
        ScreenPose::new(v(0), v(3) * translation_scale),
        GazeAdapter {
            delta: v(6),
            bias: v(9),
        },
    )
}

/// Pose and adapter evaluated once for a batch of projections.
#[derive(Debug, Clone)]
pub struct Model {
    projector: Projector,
    frame: AdapterFrame,
    pose_jacobian: RotationJacobian,
    translation_scale: f64,
}

impl Model {
    pub fn new(pose: &ScreenPose, adapter: &GazeAdapter, translation_scale: f64) -> Self {
        Self {
            projector: Projector::with_jacobian(pose),
            frame: AdapterFrame::with_jacobian(adapter),
            pose_jacobian: rodrigues_jacobian(&pose.r),
            translation_scale,
        }
    }

    pub fn from_params(theta: &ParamVec, translation_scale: f64) -> Self {
        let (pose, adapter) = unpack(theta, translation_scale);
        Self::new(&pose, &adapter, translation_scale)
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn frame(&self) -> &AdapterFrame {
        &self.frame
    }

    /// `P(adapt(g), o)`.
    pub fn predict(&self, g: &UnitVec3, o: &Vec3) -> Result<ScreenPoint> {
        let out = self.frame.adapt(g)?;
        Ok(self.projector.project_raw(&out, o)?.point)
    }

    pub fn predict_with_jacobian(&self, g: &UnitVec3, o: &Vec3) -> Result<(ScreenPoint, PointJacobian)> {
        let aj = self.frame.jacobian(g)?;
        let (proj, pj) = self.projector.jacobian(&aj.output, o)?;
        let mut j = PointJacobian::zeros();
        j.fixed_columns_mut::<3>(0).copy_from(&pj.d_r);
        j.fixed_columns_mut::<3>(3).copy_from(&(pj.d_t * self.translation_scale));
        let d_delta: Matrix2x3<f64> = pj.d_g * aj.d_delta;
        let d_bias: Matrix2x3<f64> = pj.d_g * aj.d_bias;
        j.fixed_columns_mut::<3>(6).copy_from(&d_delta);
        j.fixed_columns_mut::<3>(9).copy_from(&d_bias);
        Ok((proj.point, j))
    }
}

/// Value and gradient of one loss term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grad: ParamVec,
    pub n_valid: usize,
    pub n_invalid: usize,
}

impl LossTerm {
    fn zero() -> Self {
        Self {
            value: 0.0,
            grad: ParamVec::zeros(),
            n_valid: 0,
            n_invalid: 0,
        }
    }
}

fn residual(p: &ScreenPoint, target: &ScreenPoint) -> Vector2<f64> {
    Vector2::new(p.u - target.u, p.v - target.v)
}

fn l1_subgradient(res: &Vector2<f64>) -> Vector2<f64> {
    res.map(|x| if x.abs() <= DEAD_ZONE { 0.0 } else { x.signum() })
}

fn add_l1(term: &mut LossTerm, p: &ScreenPoint, j: &PointJacobian, target: &ScreenPoint) {
    let res = residual(p, target);
    term.value += res.abs().sum();
    term.grad += j.tr_mul(&l1_subgradient(&res));
}

/// A flipped-sample target. Without a Jacobian it is a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipTarget {
    pub point: ScreenPoint,
    pub jacobian: Option<PointJacobian>,
}

impl FlipTarget {
    pub fn constant(point: ScreenPoint) -> Self {
        Self { point, jacobian: None }
    }
}

/// `Σᵢ |P(adapt(g_base,i), oᵢ) − pᵢ|₁`; samples whose projection fails are
/// skipped and counted.
pub fn loss_main(batch: &[&GazeSample], model: &Model) -> Result<LossTerm> {
    let mut term = LossTerm::zero();
    for s in batch {
        match model.predict_with_jacobian(&s.prediction.g_base, &s.origin) {
            Ok((p, j)) => {
                add_l1(&mut term, &p, &j, &s.label);
                term.n_valid += 1;
            }
            Err(_) => term.n_invalid += 1,
        }
    }
    if term.n_valid == 0 && !batch.is_empty() {
        return Err(Error::AllSamplesInvalid { count: batch.len() });
    }
    Ok(term)
}

/// `Σᵢ |P(adapt(g_flipped,i), oᵢ) − Qᵢ|₁`. Samples with an invalid label
/// (`None`) or a failed projection are skipped.
pub fn loss_flip(
    batch: &[&GazeSample],
    model: &Model,
    labels: &[Option<FlipTarget>],
    origin_mode: OriginMode,
) -> Result<LossTerm> {
    if labels.len() != batch.len() {
        return Err(Error::Mismatch(format!(
            "{} pseudo-labels for {} samples",
            labels.len(),
            batch.len()
        )));
    }
    let mut term = LossTerm::zero();
    let mut attempted = 0;
    for (s, label) in batch.iter().zip(labels) {
        let Some(target) = label else {
            term.n_invalid += 1;
            continue;
        };
        attempted += 1;
        let o = origin_mode.flipped_origin(&s.origin);
        match model.predict_with_jacobian(&s.prediction.g_base_flipped, &o) {
            Ok((p, j)) => {
                let j = match &target.jacobian {
                    Some(jq) => j - jq,
                    None => j,
                };
                add_l1(&mut term, &p, &j, &target.point);
                term.n_valid += 1;
            }
            Err(_) => term.n_invalid += 1,
        }
    }
    if attempted > 0 && term.n_valid == 0 {
        return Err(Error::AllSamplesInvalid { count: attempted });
    }
    Ok(term)
}

/// `(1/NK) Σᵢ Σₖ [ |q_ik − pᵢ|₁ + τ |q_ik − cᵢ|₂ ]` over the first `k` jitter
/// variants, with `cᵢ` the mean of sample `i`'s projected variants. A sample
/// counts only when all of its variants project.
pub fn loss_uncertainty(batch: &[&GazeSample], model: &Model, k: usize, tau: f64) -> Result<LossTerm> {
    let mut term = LossTerm::zero();
    let mut points = Vec::with_capacity(k);
    'samples: for s in batch {
        if s.n_jitter() < k {
            return Err(Error::InsufficientData(format!(
                "sample {} has {} jitter variants, {} requested",
                s.sample_id(),
                s.n_jitter(),
                k
            )));
        }
        points.clear();
        for g in &s.prediction.jitter_variants[..k] {
            match model.predict_with_jacobian(g, &s.origin) {
                Ok(pj) => points.push(pj),
                Err(_) => {
                    term.n_invalid += 1;
                    continue 'samples;
                }
            }
        }
        term.n_valid += 1;
        let kf = k as f64;
        let centroid = points.iter().fold(Vector2::zeros(), |acc, (p, _)| acc + p.to_vector()) / kf;
        let centroid_j = points.iter().fold(PointJacobian::zeros(), |acc, (_, j)| acc + j) / kf;
        let mut dir_sum = Vector2::zeros();
        for (p, j) in &points {
            add_l1(&mut term, p, j, &s.label);
            let d = p.to_vector() - centroid;
            let dist = d.norm();
            term.value += tau * dist;
            if dist > DEAD_ZONE && tau != 0.0 {
                let u = d / dist;
                term.grad += j.tr_mul(&u) * tau;
                dir_sum += u;
            }
        }
        term.grad -= centroid_j.tr_mul(&dir_sum) * tau;
    }
    if term.n_valid == 0 && !batch.is_empty() {
        return Err(Error::AllSamplesInvalid { count: batch.len() });
    }
    let norm = (term.n_valid * k) as f64;
    if norm > 0.0 {
        term.value /= norm;
        term.grad /= norm;
    }
    Ok(term)
}

/// Alignment fitted from `{adapt(g_base)}` against `{g_base}`, with the
/// rotation's first-order response to each adapter parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiveAlignment {
    pub transform: AlignmentTransform,
    /// `ω` per adapter parameter (delta then bias); `None` when `T` is held fixed.
    pub omegas: Option<[Vec3; 6]>,
}

impl LiveAlignment {
    pub fn fixed(transform: AlignmentTransform) -> Self {
        Self { transform, omegas: None }
    }
}

/// Solves `T` for the current adapter. Fails on degenerate anchors.
pub fn fit_alignment(batch: &[&GazeSample], model: &Model) -> Result<LiveAlignment> {
    let mut pairs = Vec::with_capacity(batch.len());
    let mut jacobians = Vec::with_capacity(batch.len());
    for s in batch {
        let g = &s.prediction.g_base;
        if let Ok(aj) = model.frame.jacobian(g) {
            pairs.push((aj.output, *g));
            jacobians.push(aj);
        }
    }
    let anchors = AnchorSet::new(pairs)?;
    let transform = solve_alignment(&anchors)?;
    let omegas = AlignmentSensitivity::new(&anchors.cross_covariance(), &transform)
        .ok()
        .map(|sens| {
            std::array::from_fn(|j| {
                let dh = anchors
                    .pairs()
                    .iter()
                    .zip(&jacobians)
                    .fold(Mat3::zeros(), |acc, ((_, reference), aj)| {
                        let da = if j < 3 { aj.d_delta.column(j) } else { aj.d_bias.column(j - 3) };
                        acc + da * reference.transpose()
                    });
                sens.omega(&dh)
            })
        });
    Ok(LiveAlignment { transform, omegas })
}

/// `Q(p)` and its derivative with respect to `θ` through the lift, the
/// alignment, the mirror, and the re-projection.
pub fn pseudo_label_with_jacobian(
    sample: &GazeSample,
    model: &Model,
    alignment: Option<&LiveAlignment>,
    origin_mode: OriginMode,
) -> Result<FlipTarget> {
    let p = &sample.label;
    let point = pseudo_label_point(p, &sample.origin, &model.projector, alignment.map(|a| &a.transform), origin_mode)?;

    let x = model.projector.screen_to_camera(p) - sample.origin;
    let norm = x.norm();
    let d = x / norm;
    let d_norm = (Mat3::identity() - d * d.transpose()) / norm;
    let on_screen = Vec3::new(p.u, p.v, 0.0);
    let mut dd = SMatrix::<f64, 3, N_PARAMS>::zeros();
    for k in 0..3 {
        dd.set_column(k, &(d_norm * (model.pose_jacobian[k] * on_screen)));
    }
    dd.fixed_columns_mut::<3>(3).copy_from(&(d_norm * model.translation_scale));

    let flip = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
    let (h, dh) = match alignment {
        Some(a) => {
            let t = a.transform.matrix();
            let m = t * d;
            let conj = t.transpose() * flip * t;
            let mut dh = conj * dd;
            if let Some(omegas) = &a.omegas {
                for (j, w) in omegas.iter().enumerate() {
                    let k = skew(w);
                    dh.set_column(6 + j, &(t.transpose() * (flip * k - k * flip) * m));
                }
            }
            (conj * d, dh)
        }
        None => (flip * d, flip * dd),
    };
    let o = origin_mode.flipped_origin(&sample.origin);
    let (_, pj) = model.projector.jacobian(&h, &o)?;
    let mut jq: PointJacobian = pj.d_g * dh;
    let d_r = jq.fixed_columns::<3>(0) + pj.d_r;
    let d_t = jq.fixed_columns::<3>(3) + pj.d_t * model.translation_scale;
    jq.fixed_columns_mut::<3>(0).copy_from(&d_r);
    jq.fixed_columns_mut::<3>(3).copy_from(&d_t);
    Ok(FlipTarget {
        point,
        jacobian: Some(jq),
    })
}

/// How flipped-sample targets are produced during an evaluation.
#[derive(Debug, Clone, Copy)]
pub enum FlipTargets<'a> {
    /// Precomputed labels held constant.
    Detached(&'a [Option<ScreenPoint>]),
    /// Labels regenerated from the evaluated model and differentiated through.
    /// `fallback` stands in for `T` when the anchors are degenerate; `None`
    /// disables the alignment.
    Live { fallback: Option<&'a AlignmentTransform> },
}

/// Everything the weighted objective needs besides the parameters.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub batch: &'a [&'a GazeSample],
    pub flip_targets: FlipTargets<'a>,
    pub n_jitter: usize,
    pub tau: f64,
    pub weights: LossWeights,
    pub origin_mode: OriginMode,
}

#[derive(Debug)]
pub struct Evaluation {
    pub total: f64,
    pub main: f64,
    pub flip: f64,
    pub unc: f64,
    pub grad: ParamVec,
    pub n_invalid_main: usize,
    pub n_invalid_flip: usize,
    /// Pseudo-labels generated by a live evaluation.
    pub labels: Vec<Result<ScreenPoint>>,
    /// `T` used by a live evaluation with alignment enabled.
    pub alignment: Option<AlignmentTransform>,
}

impl Objective<'_> {
    /// Weighted total and its gradient. Zero-weight flip and uncertainty terms
    /// are skipped; live pseudo-labels are still generated.
    pub fn evaluate(&self, model: &Model) -> Result<Evaluation> {
        let w = self.weights;
        let main = loss_main(self.batch, model)?;
        let mut labels = Vec::new();
        let mut alignment = None;
        let targets: Vec<Option<FlipTarget>> = match self.flip_targets {
            FlipTargets::Detached(points) => points.iter().map(|p| p.map(FlipTarget::constant)).collect(),
            FlipTargets::Live { fallback } => {
                let live = fallback.map(|fb| fit_alignment(self.batch, model).unwrap_or(LiveAlignment::fixed(*fb)));
                alignment = live.map(|a| a.transform);
                self.batch
                    .iter()
                    .map(|s| {
                        let res = pseudo_label_with_jacobian(s, model, live.as_ref(), self.origin_mode);
                        let target = res.as_ref().ok().copied();
                        labels.push(res.map(|t| t.point));
                        target
                    })
                    .collect()
            }
        };
        let flip = if w.flip != 0.0 {
            loss_flip(self.batch, model, &targets, self.origin_mode)?
        } else {
            LossTerm::zero()
        };
        let unc = if w.unc != 0.0 {
            loss_uncertainty(self.batch, model, self.n_jitter, self.tau)?
        } else {
            LossTerm::zero()
        };
        Ok(Evaluation {
            total: w.main * main.value + w.flip * flip.value + w.unc * unc.value,
            main: main.value,
            flip: flip.value,
            unc: unc.value,
            grad: main.grad * w.main + flip.grad * w.flip + unc.grad * w.unc,
            n_invalid_main: main.n_invalid,
            n_invalid_flip: flip.n_invalid,
            labels,
            alignment,
        })
    }

    pub fn value_at(&self, theta: &ParamVec, translation_scale: f64) -> Result<f64> {
        Ok(self.evaluate(&Model::from_params(theta, translation_scale))?.total)
    }
}
