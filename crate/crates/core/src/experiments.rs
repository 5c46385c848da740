//! Per-subject calibration and the experiment battery built on it:
//! ablations, sample-count sweeps, repeatability and trajectory analysis.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, GazeSample, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_subject, MetricsReport};
use crate::projection::ScreenPose;
use crate::pseudolabel::TrajectoryLog;
use crate::simulator::{generate, oracle_flipped_label, SceneSpec};
use crate::trainer::{train, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectCalibration {
    pub subject_id: u32,
    #[serde(flatten)]
    pub report: TrainReport,
}

/// One independent calibration per subject, all with the same config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub subjects: Vec<SubjectCalibration>,
}

impl CalibrationReport {
    /// Pseudo-label histories of every subject; sample ids are dataset-wide.
    pub fn trajectory(&self) -> TrajectoryLog {
        let mut log = TrajectoryLog::new();
        for s in &self.subjects {
            log.merge(s.report.trajectory.clone());
        }
        log
    }

    /// Per-epoch losses of every subject, `subject_id` first.
    pub fn write_loss_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record([
            "subject_id",
            "epoch",
            "lr",
            "tau",
            "loss_total",
            "loss_main",
            "loss_flip",
            "loss_unc",
            "n_invalid",
        ])?;
        for s in &self.subjects {
            for e in &s.report.epochs {
                w.write_record([
                    s.subject_id.to_string(),
                    e.epoch.to_string(),
                    e.lr.to_string(),
                    e.tau.to_string(),
                    e.loss_total.to_string(),
                    e.loss_main.to_string(),
                    e.loss_flip.to_string(),
                    e.loss_unc.to_string(),
                    e.n_invalid.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn calibrate(data: &Dataset, config: &TrainConfig) -> Result<CalibrationReport> {
    let subjects = data.subjects();
    if subjects.is_empty() {
        return Err(Error::InsufficientData("dataset has no samples".into()));
    }
    let mut out = Vec::with_capacity(subjects.len());
    for subject_id in subjects {
        let pool = data.subject_split(subject_id, Split::Train);
        let report = train(&pool, config).map_err(|e| match e {
            Error::InsufficientData(m) => Error::InsufficientData(format!("subject {subject_id}: {m}")),
            other => other,
        })?;
        log::info!(
            "subject {subject_id}: final loss {:.4}, r {:?}, t {:?}",
            report.final_losses.total,
            report.pose.r.as_slice(),
            report.pose.t.as_slice()
        );
        out.push(SubjectCalibration { subject_id, report });
    }
    Ok(CalibrationReport { subjects: out })
}

/// Test-split error of every calibrated subject. `ppi` adds a pixel mean.
pub fn evaluate(data: &Dataset, report: &CalibrationReport, ppi: Option<f64>) -> Result<MetricsReport> {
    let mut subjects = Vec::with_capacity(report.subjects.len());
    for s in &report.subjects {
        let test = data.subject_split(s.subject_id, Split::Test);
        if test.is_empty() {
            return Err(Error::Mismatch(format!(
                "subject {} has no test samples in the dataset",
                s.subject_id
            )));
        }
        subjects.push(evaluate_subject(s.subject_id, &test, &s.report.pose, &s.report.adapter));
    }
    let mut metrics = MetricsReport::from_subjects(subjects);
    if let Some(ppi) = ppi {
        if !(ppi > 0.0 && ppi.is_finite()) {
            return Err(Error::InvalidConfig(format!("ppi must be positive, got {ppi}")));
        }
        metrics.overall_mean_px = Some(metrics.overall_mean_mm * ppi / 25.4);
    }
    Ok(metrics)
}

pub fn calibrate_and_evaluate(data: &Dataset, config: &TrainConfig) -> Result<f64> {
    Ok(evaluate(data, &calibrate(data, config)?, None)?.overall_mean_mm)
}

/// The three rows of the component ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Learnable projection with the supervised loss only.
    Proj,
    /// Plus flipped-sample pseudo-labels.
    ProjPseudoLabel,
    /// Plus the uncertainty loss.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Proj, Variant::ProjPseudoLabel, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Proj => "proj",
            Variant::ProjPseudoLabel => "proj+ps_label",
            Variant::Full => "proj+ps_label+unc",
        }
    }

    pub fn apply(self, config: &TrainConfig) -> TrainConfig {
        let mut c = config.clone();
        match self {
            Variant::Proj => {
                c.w_flip = 0.0;
                c.w_unc = 0.0;
            }
            Variant::ProjPseudoLabel => c.w_unc = 0.0,
            Variant::Full => {}
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub name: String,
    /// Mean over seeds of the subject-averaged test error.
    pub mean_error_mm: f64,
    pub per_seed_mm: Vec<f64>,
}

/// Runs every variant on scenes regenerated from `scene` with each seed; the
/// training subset is drawn with the same seed.
pub fn ablation(scene: &SceneSpec, config: &TrainConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    let datasets = seeds
        .iter()
        .map(|&s| Ok((s, generate(&scene.clone().with_seed(s))?.dataset())))
        .collect::<Result<Vec<_>>>()?;
    Variant::ALL
        .iter()
        .map(|&v| {
            let per_seed = datasets
                .iter()
                .map(|(seed, data)| {
                    let c = TrainConfig {
                        seed: *seed,
                        ..v.apply(config)
                    };
                    calibrate_and_evaluate(data, &c)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(AblationRow {
                variant: v,
                name: v.name().to_string(),
                mean_error_mm: mean(&per_seed),
                per_seed_mm: per_seed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_train: usize,
    pub trial: u64,
    pub mean_error_mm: f64,
    /// Only measured on request; timing makes the output machine-dependent.
    pub wall_seconds: Option<f64>,
}

/// For every `N` and trial, calibrates all subjects on a fresh subset drawn
/// with seed `config.seed + trial` and records the test error.
pub fn sweep(
    data: &Dataset,
    config: &TrainConfig,
    n_list: &[usize],
    trials: u64,
    timing: bool,
) -> Result<Vec<SweepRow>> {
    let available = data
        .subjects()
        .iter()
        .map(|&s| data.subject_split(s, Split::Train).len())
        .min()
        .unwrap_or(0);
    if let Some(&n) = n_list.iter().find(|&&n| n > available) {
        return Err(Error::InsufficientData(format!(
            "N = {n} requested, the smallest subject has {available} training samples"
        )));
    }
    let mut rows = Vec::with_capacity(n_list.len() * trials as usize);
    for &n in n_list {
        for trial in 0..trials {
            let c = TrainConfig {
                n_samples: n,
                seed: config.seed.wrapping_add(trial),
                ..config.clone()
            };
            let start = Instant::now();
            let err = calibrate_and_evaluate(data, &c)?;
            let wall = start.elapsed().as_secs_f64();
            log::info!("N = {n}, trial {trial}: {err:.3} mm");
            rows.push(SweepRow {
                n_train: n,
                trial,
                mean_error_mm: err,
                wall_seconds: timing.then_some(wall),
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let timing = rows.iter().any(|r| r.wall_seconds.is_some());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header = vec!["n_train", "trial", "mean_error_mm"];
    if timing {
        header.push("wall_seconds");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.n_train.to_string(), r.trial.to_string(), r.mean_error_mm.to_string()];
        if timing {
            rec.push(r.wall_seconds.map(|s| s.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean error per `N`, in ascending `N`.
pub fn sweep_means(rows: &[SweepRow]) -> Vec<(usize, f64)> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_n.entry(r.n_train).or_default().push(r.mean_error_mm);
    }
    by_n.into_iter().map(|(n, v)| (n, mean(&v))).collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation over the mean.
pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
    var.sqrt() / m
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// First- and last-epoch distance of one sample's pseudo-label to the label
/// derived from the true screen pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDistance {
    pub sample_id: u64,
    pub first_epoch: u32,
    pub last_epoch: u32,
    pub first_mm: f64,
    pub last_mm: f64,
}

impl TrajectoryDistance {
    pub fn ratio(&self) -> f64 {
        self.last_mm / self.first_mm
    }
}

/// Compares every logged track against the oracle. Invalid first or last
/// labels count as infinitely far.
pub fn trajectory_distances(
    log: &TrajectoryLog,
    data: &Dataset,
    true_pose: &ScreenPose,
) -> Result<Vec<TrajectoryDistance>> {
    let by_id: BTreeMap<u64, &GazeSample> = data.samples.iter().map(|s| (s.sample_id(), s)).collect();
    log.sample_ids()
        .map(|id| {
            let s = by_id
                .get(&id)
                .ok_or_else(|| Error::Mismatch(format!("trajectory sample {id} is not in the dataset")))?;
            let oracle = oracle_flipped_label(&s.label, &s.origin, true_pose)?;
            let track = log.track(id).unwrap_or_default();
            let (Some(first), Some(last)) = (track.first(), track.last()) else {
                return Err(Error::Mismatch(format!("sample {id} has an empty trajectory")));
            };
            let dist = |p: &crate::pseudolabel::TrajectoryPoint| {
                if p.valid {
                    p.point.distance(&oracle)
                } else {
                    f64::INFINITY
                }
            };
            Ok(TrajectoryDistance {
                sample_id: id,
                first_epoch: first.epoch,
                last_epoch: last.epoch,
                first_mm: dist(first),
                last_mm: dist(last),
            })
        })
        .collect()
}

pub fn write_trajectory_distances_csv<W: Write>(rows: &[TrajectoryDistance], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["sample_id", "first_epoch", "last_epoch", "first_mm", "last_mm", "ratio"])?;
    for r in rows {
        w.write_record([
            r.sample_id.to_string(),
            r.first_epoch.to_string(),
            r.last_epoch.to_string(),
            r.first_mm.to_string(),
            r.last_mm.to_string(),
            r.ratio().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
