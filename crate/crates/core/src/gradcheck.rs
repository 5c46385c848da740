//! Central finite-difference checks of every analytic derivative the
//! optimiser relies on.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterFrame, GazeAdapter};
use crate::alignment::AlignmentTransform;
use crate::dataset::{Dataset, GazeSample, Split};
use crate::error::Result;
use crate::geometry::{normalize, Vec3};
use crate::projection::{Projector, ScreenPoint, ScreenPose};
use crate::pseudolabel::OriginMode;
use crate::simulator::{generate, SceneSpec};
use crate::trainer::{pack, select_subset, Evaluation, FlipTargets, LossWeights, Model, Objective, ParamVec};

pub const PER_OP_TOLERANCE: f64 = 1e-4;
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;

/// Entries smaller than this fraction of the largest analytic entry are
/// compared on the largest entry's scale; finite differences cannot resolve
/// them relative to their own size.
const RELATIVE_FLOOR: f64 = 1e-3;

/// L1 residuals closer to zero than this make the loss non-smooth within
/// the difference stencil, so such states are redrawn.
const KINK_MARGIN: f64 = 1e-6;

/// Deliberate damage to one analytic derivative, for testing the checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    Projection,
    Adapter,
    Composite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub n_states: usize,
    pub step: f64,
    pub corrupt: Option<Corruption>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_states: 1000,
            step: 1e-6,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub n_states: usize,
    /// States drawn and discarded (invalid geometry or an L1 kink in range).
    pub n_redrawn: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub suites: Vec<SuiteResult>,
    pub passed: bool,
}

/// Largest entrywise `|a − f| / max(|a|, |f|, floor)` between two flattened
/// Jacobians.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let floor = (RELATIVE_FLOOR * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn central<F: FnMut(f64) -> Result<Vec<f64>>>(mut f: F, h: f64) -> Result<Vec<f64>> {
    let plus = f(h)?;
    let minus = f(-h)?;
    Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect())
}

fn uniform_vec(rng: &mut ChaCha8Rng, half: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(-half..half),
    )
}

fn perturbed(v: &Vec3, k: usize, h: f64) -> Vec3 {
    let mut out = *v;
    out[k] += h;
    out
}

fn point_vec(p: ScreenPoint) -> Vec<f64> {
    vec![p.u, p.v]
}

/// One random projection state: a tilted screen, a face in front of it, and
/// a raw (unnormalised) gaze toward a point on it.
fn projection_state(rng: &mut ChaCha8Rng) -> Option<(ScreenPose, Vec3, Vec3)> {
    let pose = ScreenPose::new(uniform_vec(rng, 0.35), uniform_vec(rng, 100.0));
    let projector = Projector::new(&pose);
    let o = Vec3::new(
        rng.random_range(-150.0..150.0),
        rng.random_range(-100.0..100.0),
        rng.random_range(400.0..700.0),
    );
    let target = projector.screen_to_camera(&ScreenPoint::new(
        rng.random_range(-250.0..250.0),
        rng.random_range(-200.0..200.0),
    ));
    let g = (target - o) * rng.random_range(0.5..2.0);
    let gn = g.normalize().dot(projector.normal()).abs();
    (gn > 0.2 && (target - o).dot(projector.normal()) * (pose.t - o).dot(projector.normal()) > 0.0)
        .then_some((pose, o, g))
}

fn projection_suite(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let h = cfg.step;
    let mut worst = 0.0f64;
    let mut redrawn = 0;
    let mut done = 0;
    while done < cfg.n_states {
        let Some((pose, o, g)) = projection_state(rng) else {
            redrawn += 1;
            continue;
        };
        let Ok((_, mut j)) = Projector::new(&pose).jacobian(&g, &o) else {
            redrawn += 1;
            continue;
        };
        if cfg.corrupt == Some(Corruption::Projection) {
            j.d_r[(0, 1)] *= 1.01;
        }
        let mut analytic = Vec::with_capacity(18);
        let mut numeric = Vec::with_capacity(18);
        for k in 0..3 {
            let fd_r = central(
                |e| {
                    let p = ScreenPose::new(perturbed(&pose.r, k, e), pose.t);
                    Ok(point_vec(Projector::new(&p).project_raw(&g, &o)?.point))
                },
                h,
            )?;
            let fd_t = central(
                |e| {
                    let p = ScreenPose::new(pose.r, perturbed(&pose.t, k, e));
                    Ok(point_vec(Projector::new(&p).project_raw(&g, &o)?.point))
                },
                h,
            )?;
            let projector = Projector::new(&pose);
            let fd_g = central(
                |e| Ok(point_vec(projector.project_raw(&perturbed(&g, k, e), &o)?.point)),
                h,
            )?;
            for row in 0..2 {
                analytic.extend([j.d_r[(row, k)], j.d_t[(row, k)], j.d_g[(row, k)]]);
                numeric.extend([fd_r[row], fd_t[row], fd_g[row]]);
            }
        }
        worst = worst.max(max_relative_error(&analytic, &numeric));
        done += 1;
    }
    Ok(suite("projection", cfg.n_states, redrawn, worst, PER_OP_TOLERANCE))
}

fn adapter_suite(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let h = cfg.step;
    let mut worst = 0.0f64;
    let mut redrawn = 0;
    let mut done = 0;
    while done < cfg.n_states {
        let adapter = GazeAdapter::new(uniform_vec(rng, 0.5), uniform_vec(rng, 0.2));
        let Ok(base) = normalize(&Vec3::new(
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.6..0.6),
            -1.0,
        )) else {
            redrawn += 1;
            continue;
        };
        let Ok(mut j) = AdapterFrame::new(&adapter).jacobian(&base) else {
            redrawn += 1;
            continue;
        };
        if cfg.corrupt == Some(Corruption::Adapter) {
            j.d_bias[(2, 0)] += 0.01 * j.d_bias.amax();
        }
        let out = |a: &GazeAdapter| -> Result<Vec<f64>> {
            Ok(AdapterFrame::new(a).adapt(&base)?.as_slice().to_vec())
        };
        let mut analytic = Vec::with_capacity(18);
        let mut numeric = Vec::with_capacity(18);
        for k in 0..3 {
            let fd_d = central(
                |e| out(&GazeAdapter::new(perturbed(&adapter.delta, k, e), adapter.bias)),
                h,
            )?;
            let fd_b = central(
                |e| out(&GazeAdapter::new(adapter.delta, perturbed(&adapter.bias, k, e))),
                h,
            )?;
            for row in 0..3 {
                analytic.extend([j.d_delta[(row, k)], j.d_bias[(row, k)]]);
                numeric.extend([fd_d[row], fd_b[row]]);
            }
        }
        worst = worst.max(max_relative_error(&analytic, &numeric));
        done += 1;
    }
    Ok(suite("adapter", cfg.n_states, redrawn, worst, PER_OP_TOLERANCE))
}

/// Smallest absolute L1 residual component the objective sums over.
fn min_residual(obj: &Objective, model: &Model, ev: &Evaluation) -> Result<f64> {
    let mut m = f64::INFINITY;
    let mut take = |a: ScreenPoint, b: ScreenPoint| m = m.min((a.u - b.u).abs()).min((a.v - b.v).abs());
    for (i, s) in obj.batch.iter().enumerate() {
        take(model.predict(&s.prediction.g_base, &s.origin)?, s.label);
        if let Some(Ok(q)) = ev.labels.get(i) {
            let o = obj.origin_mode.flipped_origin(&s.origin);
            take(model.predict(&s.prediction.g_base_flipped, &o)?, *q);
        }
        if obj.weights.unc != 0.0 {
            let variants = s.prediction.jitter_variants[..obj.n_jitter]
                .iter()
                .map(|g| model.predict(g, &s.origin))
                .collect::<Result<Vec<_>>>()?;
            let n = variants.len() as f64;
            let centroid = ScreenPoint::new(
                variants.iter().map(|p| p.u).sum::<f64>() / n,
                variants.iter().map(|p| p.v).sum::<f64>() / n,
            );
            for p in variants {
                take(p, s.label);
                if obj.tau != 0.0 {
                    take(p, centroid);
                }
            }
        }
    }
    Ok(m)
}

fn composite_suite(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let spec = SceneSpec::randomized(cfg.seed);
    let data: Dataset = generate(&spec)?.dataset();
    let subjects = data.subjects();
    let pools: Vec<Vec<&GazeSample>> = subjects.iter().map(|&s| data.subject_split(s, Split::Train)).collect();
    let identity = AlignmentTransform::identity();
    let h = cfg.step;
    let mut worst = 0.0f64;
    let mut redrawn = 0;
    let mut done = 0;
    while done < cfg.n_states {
        let pool = &pools[rng.random_range(0..pools.len())];
        let n = rng.random_range(3..=12usize);
        let batch = select_subset(pool, n, rng.random())?;
        let scale = [1.0, 100.0, 300.0][rng.random_range(0..3usize)];
        let pose = ScreenPose::new(
            spec.true_pose.r + uniform_vec(rng, 0.1),
            spec.true_pose.t + uniform_vec(rng, 40.0),
        );
        let adapter = GazeAdapter::new(uniform_vec(rng, 0.1), uniform_vec(rng, 0.05));
        let obj = Objective {
            batch: &batch,
            flip_targets: FlipTargets::Live {
                fallback: rng.random_bool(0.75).then_some(&identity),
            },
            n_jitter: spec.n_jitter as usize,
            tau: rng.random_range(0.0..1.0),
            weights: LossWeights::default(),
            origin_mode: if rng.random_bool(0.5) {
                OriginMode::Keep
            } else {
                OriginMode::Mirror
            },
        };
        let model = Model::new(&pose, &adapter, scale);
        let ev = match obj.evaluate(&model) {
            Ok(ev) if ev.n_invalid_main == 0 && ev.n_invalid_flip == 0 => ev,
            _ => {
                redrawn += 1;
                continue;
            }
        };
        if min_residual(&obj, &model, &ev)? < KINK_MARGIN {
            redrawn += 1;
            continue;
        }
        let theta: ParamVec = pack(&pose, &adapter, scale);
        let mut grad = ev.grad;
        if cfg.corrupt == Some(Corruption::Composite) {
            grad[4] *= 1.01;
        }
        let mut numeric = Vec::with_capacity(theta.len());
        let mut ok = true;
        for k in 0..theta.len() {
            let fd = central(
                |e| {
                    let mut th = theta;
                    th[k] += e;
                    Ok(vec![obj.value_at(&th, scale)?])
                },
                h,
            );
            match fd {
                Ok(v) => numeric.push(v[0]),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            redrawn += 1;
            continue;
        }
        worst = worst.max(max_relative_error(grad.as_slice(), &numeric));
        done += 1;
    }
    Ok(suite("composite_loss", cfg.n_states, redrawn, worst, COMPOSITE_TOLERANCE))
}

fn suite(name: &str, n_states: usize, n_redrawn: usize, worst: f64, tolerance: f64) -> SuiteResult {
    SuiteResult {
        name: name.to_string(),
        n_states,
        n_redrawn,
        max_relative_error: worst,
        tolerance,
        passed: worst < tolerance,
    }
}

pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let suites = vec![
        projection_suite(cfg, &mut rng)?,
        adapter_suite(cfg, &mut rng)?,
        composite_suite(cfg, &mut rng)?,
    ];
    Ok(GradcheckReport {
        seed: cfg.seed,
        step: cfg.step,
        passed: suites.iter().all(|s| s.passed),
        suites,
    })
}
