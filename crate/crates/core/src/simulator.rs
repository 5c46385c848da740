//! Synthetic desk scenes with known screen pose and a controllable
//! "pre-trained network": base predictions are the true gaze rotated by a
//! fixed drift plus Gaussian noise, jittered copies stand in for colour
//! augmentation, and the flipped-image prediction applies the same drift to
//! the mirrored true gaze.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adapter::{BasePrediction, GazeAdapter};
use crate::dataset::{Dataset, GazeSample, Split};
use crate::error::{Error, Result};
use crate::geometry::{normalize, rodrigues, UnitVec3, Vec3};
use crate::metrics::{evaluate_subject, MetricsReport};
use crate::projection::{Projector, ScreenPoint, ScreenPose};
use crate::pseudolabel::flip_gaze;

/// Axis-aligned box of face-centre positions (camera frame, mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OriginBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl OriginBox {
    pub fn corners(&self) -> [Vec3; 8] {
        std::array::from_fn(|i| {
            Vec3::new(
                if i & 1 == 0 { self.min.x } else { self.max.x },
                if i & 2 == 0 { self.min.y } else { self.max.y },
                if i & 4 == 0 { self.min.z } else { self.max.z },
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub true_pose: ScreenPose,
    /// Screen width and height (mm); labels are uniform on
    /// `[-w/2, w/2] × [-h/2, h/2]` in the screen frame.
    pub screen_size_mm: [f64; 2],
    pub n_subjects: u32,
    pub samples_per_subject: u32,
    /// The first `train_per_subject` samples of each subject form the train split.
    pub train_per_subject: u32,
    pub origin_box: OriginBox,
    /// Rotation vector applied to the true gaze to form base predictions.
    pub drift: Vec3,
    pub noise_sigma: f64,
    pub jitter_sigma: f64,
    pub n_jitter: u32,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            true_pose: ScreenPose::new(Vec3::new(0.20, 0.12, -0.06), Vec3::new(40.0, 90.0, 30.0)),
            screen_size_mm: [400.0, 300.0],
            n_subjects: 3,
            samples_per_subject: 200,
            train_per_subject: 100,
            origin_box: OriginBox {
                min: Vec3::new(-100.0, -80.0, 450.0),
                max: Vec3::new(100.0, 80.0, 650.0),
            },
            drift: Vec3::new(5f64.to_radians(), 0.0, 0.0),
            noise_sigma: 0.005,
            jitter_sigma: 0.02,
            n_jitter: 4,
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// Noise- and drift-free variant of `self`.
    pub fn noiseless(mut self) -> Self {
        self.drift = Vec3::zeros();
        self.noise_sigma = 0.0;
        self.jitter_sigma = 0.0;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Default scene with a screen pose drawn from the desk-scale range:
    /// rotation up to 20° about a random axis, `t` within `(±100, ±100, 0..100)` mm.
    pub fn randomized(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let axis = loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                break v / n;
            }
        };
        let angle = rng.random_range(0.0..20f64.to_radians());
        let t = Vec3::new(
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
            rng.random_range(0.0..100.0),
        );
        Self {
            true_pose: ScreenPose::new(axis * angle, t),
            seed,
            ..Self::default()
        }
    }

    pub fn screen_diagonal_mm(&self) -> f64 {
        self.screen_size_mm[0].hypot(self.screen_size_mm[1])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !self.true_pose.is_finite() {
            return bad("true_pose must be finite".into());
        }
        let [w, h] = self.screen_size_mm;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return bad(format!("screen size must be positive, got {w} x {h}"));
        }
        if self.n_subjects == 0 || self.samples_per_subject == 0 {
            return bad("need at least one subject and one sample per subject".into());
        }
        if self.train_per_subject > self.samples_per_subject {
            return bad("train_per_subject exceeds samples_per_subject".into());
        }
        if self.n_jitter == 0 {
            return bad("n_jitter must be at least 1".into());
        }
        for (name, s) in [("noise_sigma", self.noise_sigma), ("jitter_sigma", self.jitter_sigma)] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {s}"));
            }
        }
        if !self.drift.iter().all(|x| x.is_finite()) {
            return bad("drift must be finite".into());
        }
        let b = &self.origin_box;
        if (0..3).any(|i| !(b.min[i] <= b.max[i]) || !b.min[i].is_finite() || !b.max[i].is_finite()) {
            return bad("origin_box min must not exceed max".into());
        }
        let n = self.true_pose.normal();
        for c in b.corners() {
            if !((c - self.true_pose.t).dot(&n) > 0.0) {
                return bad(format!(
                    "origin_box corner ({}, {}, {}) is not in front of the screen plane",
                    c.x, c.y, c.z
                ));
            }
        }
        Ok(())
    }

    pub fn truth(&self) -> SceneTruth {
        SceneTruth {
            true_pose: self.true_pose,
            drift: self.drift,
            screen_size_mm: self.screen_size_mm,
            seed: self.seed,
        }
    }
}

/// Ground truth written next to a simulated dataset. Calibration never reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub true_pose: ScreenPose,
    pub drift: Vec3,
    pub screen_size_mm: [f64; 2],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub sample: GazeSample,
    pub g_true: UnitVec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SceneSpec,
    pub samples: Vec<SyntheticSample>,
}

impl SyntheticDataset {
    pub fn dataset(&self) -> Dataset {
        Dataset::new(self.samples.iter().map(|s| s.sample.clone()).collect())
    }
}

fn gaussian(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated as finite and non-negative")
}

/// Generates the scene. Each subject draws from its own ChaCha stream, so the
/// output is a pure function of the spec.
pub fn generate(spec: &SceneSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let projector = Projector::new(&spec.true_pose);
    let drift = rodrigues(&spec.drift);
    let noise = gaussian(spec.noise_sigma);
    let jitter = gaussian(spec.jitter_sigma);
    let [w, h] = spec.screen_size_mm;
    let b = spec.origin_box;
    let mut samples = Vec::with_capacity((spec.n_subjects * spec.samples_per_subject) as usize);

    for subject in 0..spec.n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(subject as u64);
        let mut uniform = |lo: f64, hi: f64| if lo < hi { rng.random_range(lo..hi) } else { lo };
        let mut draws = Vec::with_capacity(spec.samples_per_subject as usize);
        for _ in 0..spec.samples_per_subject {
            let label = ScreenPoint::new(uniform(-0.5 * w, 0.5 * w), uniform(-0.5 * h, 0.5 * h));
            let origin = Vec3::new(
                uniform(b.min.x, b.max.x),
                uniform(b.min.y, b.max.y),
                uniform(b.min.z, b.max.z),
            );
            draws.push((label, origin));
        }
        for (i, (label, origin)) in draws.into_iter().enumerate() {
            let mut gauss = |d: &Normal<f64>| Vec3::new(d.sample(&mut rng), d.sample(&mut rng), d.sample(&mut rng));
            let g_true = projector.inverse_project(&label, &origin)?;
            let eps = gauss(&noise);
            let eps_flip = gauss(&noise);
            let g_base = normalize(&(drift * (g_true.as_vec() + eps)))?;
            let g_base_flipped = normalize(&(drift * (flip_gaze(&g_true).as_vec() + eps_flip)))?;
            let jitter_variants = (0..spec.n_jitter)
                .map(|_| normalize(&(g_base.as_vec() + gauss(&jitter))))
                .collect::<Result<Vec<_>>>()?;
            let sample_id = subject as u64 * spec.samples_per_subject as u64 + i as u64;
            samples.push(SyntheticSample {
                sample: GazeSample {
                    subject_id: subject,
                    split: if (i as u32) < spec.train_per_subject {
                        Split::Train
                    } else {
                        Split::Test
                    },
                    origin,
                    prediction: BasePrediction {
                        sample_id,
                        g_base,
                        jitter_variants,
                        g_base_flipped,
                    },
                    label,
                },
                g_true,
            });
        }
    }
    Ok(SyntheticDataset {
        spec: spec.clone(),
        samples,
    })
}

/// Mirrored-image target computed with the true screen pose and no alignment.
pub fn oracle_flipped_label(p: &ScreenPoint, o: &Vec3, true_pose: &ScreenPose) -> Result<ScreenPoint> {
    let projector = Projector::new(true_pose);
    let g = projector.inverse_project(p, o)?;
    projector.project(&flip_gaze(&g), o)
}

/// Test-split error of the frozen predictions projected through the known
/// screen pose, with no learning.
pub fn direct_projection_baseline(dataset: &Dataset, pose: &ScreenPose) -> MetricsReport {
    let subjects = dataset
        .subjects()
        .into_iter()
        .map(|s| evaluate_subject(s, &dataset.subject_split(s, Split::Test), pose, &GazeAdapter::identity()))
        .collect();
    MetricsReport::from_subjects(subjects)
}
