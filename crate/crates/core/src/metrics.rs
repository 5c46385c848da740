//! Person-specific screen-space error metrics.

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterFrame, GazeAdapter};
use crate::dataset::GazeSample;
use crate::projection::{Projector, ScreenPose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub subject_id: u32,
    pub n_samples: usize,
    /// Samples whose prediction chain failed; excluded from the mean.
    pub n_invalid: usize,
    /// Valid projections whose screen plane lies behind the face.
    pub n_behind_origin: usize,
    /// Mean Euclidean error (mm) over valid samples; NaN when none are valid.
    pub mean_error_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub n_train: usize,
    pub trial: usize,
    pub mean_error_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub subjects: Vec<SubjectMetrics>,
    /// Unweighted mean of the per-subject means.
    pub overall_mean_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall_mean_px: Option<f64>,
    pub n_invalid: usize,
    pub invalid_rate: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trials: Vec<TrialMetrics>,
}

impl MetricsReport {
    pub fn from_subjects(subjects: Vec<SubjectMetrics>) -> Self {
        let means: Vec<f64> = subjects
            .iter()
            .map(|s| s.mean_error_mm)
            .filter(|m| m.is_finite())
            .collect();
        let overall = if means.is_empty() {
            f64::NAN
        } else {
            means.iter().sum::<f64>() / means.len() as f64
        };
        let n_invalid = subjects.iter().map(|s| s.n_invalid).sum();
        let n_total: usize = subjects.iter().map(|s| s.n_samples).sum();
        Self {
            subjects,
            overall_mean_mm: overall,
            overall_mean_px: None,
            n_invalid,
            invalid_rate: if n_total == 0 {
                0.0
            } else {
                n_invalid as f64 / n_total as f64
            },
            trials: Vec::new(),
        }
    }
}

/// Error of `P(adapt(g_base), o; pose)` against the labels of `samples`.
pub fn evaluate_subject(
    subject_id: u32,
    samples: &[&GazeSample],
    pose: &ScreenPose,
    adapter: &GazeAdapter,
) -> SubjectMetrics {
    let projector = Projector::new(pose);
    let frame = AdapterFrame::new(adapter);
    let mut sum = 0.0;
    let mut n_valid = 0usize;
    let mut n_behind = 0usize;
    for s in samples {
        let projected = frame
            .adapt(&s.prediction.g_base)
            .and_then(|g| projector.project_raw(&g, &s.origin));
        match projected {
            Ok(p) if p.point.is_finite() => {
                if p.behind_origin() {
                    n_behind += 1;
                }
                sum += p.point.distance(&s.label);
                n_valid += 1;
            }
            _ => {}
        }
    }
    SubjectMetrics {
        subject_id,
        n_samples: samples.len(),
        n_invalid: samples.len() - n_valid,
        n_behind_origin: n_behind,
        mean_error_mm: if n_valid == 0 {
            f64::NAN
        } else {
            sum / n_valid as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: u32, mean: f64) -> SubjectMetrics {
        SubjectMetrics {
            subject_id: id,
            n_samples: 10 * (id as usize + 1),
            n_invalid: 0,
            n_behind_origin: 0,
            mean_error_mm: mean,
        }
    }

    #[test]
    fn overall_is_unweighted_mean_of_subjects() {
        let r = MetricsReport::from_subjects(vec![subject(0, 10.0), subject(1, 20.0), subject(2, 30.0)]);
        assert_eq!(r.overall_mean_mm, 20.0);
    }

    #[test]
    fn invalid_rate_counts_all_samples() {
        let mut a = subject(0, 5.0);
        a.n_invalid = 2;
        let r = MetricsReport::from_subjects(vec![a, subject(1, 7.0)]);
        assert_eq!(r.n_invalid, 2);
        assert!((r.invalid_rate - 2.0 / 30.0).abs() < 1e-15);
    }
}
