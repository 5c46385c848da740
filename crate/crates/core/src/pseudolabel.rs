//! Screen-space labels for horizontally flipped samples.
//!
//! A 2D label cannot be mirrored directly because the screen pose is unknown.
//! Instead it is lifted back to a 3D direction through the current learnable
//! screen, mapped into the reference frame with the alignment `T`, mirrored
//! there, mapped back, and re-projected:
//! `Q(p) = P(T⁻¹ · F(T · P⁻¹(p)))`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentTransform;
use crate::error::{Error, Result};
use crate::geometry::{UnitVec3, Vec3};
use crate::projection::{Projector, ScreenPoint, ScreenPose};

/// Negates the x component: the label-space counterpart of a horizontal
/// image flip.
pub fn flip_gaze(g: &UnitVec3) -> UnitVec3 {
    UnitVec3::new_unchecked(Vec3::new(-g.x(), g.y(), g.z()))
}

/// Which gaze origin the flipped sample uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginMode {
    /// Same face centre as the original sample.
    #[default]
    Keep,
    /// Face centre mirrored across the camera's x = 0 plane.
    Mirror,
}

impl OriginMode {
    pub fn flipped_origin(self, o: &Vec3) -> Vec3 {
        match self {
            OriginMode::Keep => *o,
            OriginMode::Mirror => Vec3::new(-o.x, o.y, o.z),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub sample_id: u64,
    pub point: ScreenPoint,
    pub epoch: u32,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// The label chain for one sample. `alignment = None` skips `T` entirely.
pub fn pseudo_label_point(
    p: &ScreenPoint,
    o: &Vec3,
    projector: &Projector,
    alignment: Option<&AlignmentTransform>,
    origin_mode: OriginMode,
) -> Result<ScreenPoint> {
    let lifted = projector.inverse_project(p, o)?;
    let mirrored = match alignment {
        Some(t) => t.apply_inverse(&flip_gaze(&t.apply(&lifted))),
        None => flip_gaze(&lifted),
    };
    let point = projector.project(&mirrored, &origin_mode.flipped_origin(o))?;
    if !point.is_finite() {
        return Err(Error::RayParallelToScreen { dot: 0.0 });
    }
    Ok(point)
}

/// [`pseudo_label_point`] wrapped as a (possibly invalid) label record.
pub fn pseudo_label(
    sample_id: u64,
    epoch: u32,
    p: &ScreenPoint,
    o: &Vec3,
    pose: &ScreenPose,
    alignment: Option<&AlignmentTransform>,
) -> PseudoLabel {
    let projector = Projector::new(pose);
    label_record(sample_id, epoch, &pseudo_label_point(p, o, &projector, alignment, OriginMode::Keep))
}

pub(crate) fn label_record(sample_id: u64, epoch: u32, res: &Result<ScreenPoint>) -> PseudoLabel {
    match res {
        Ok(point) => PseudoLabel {
            sample_id,
            point: *point,
            epoch,
            valid: true,
            reason: None,
        },
        Err(e) => PseudoLabel {
            sample_id,
            point: ScreenPoint::new(f64::NAN, f64::NAN),
            epoch,
            valid: false,
            reason: Some(e.to_string()),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub epoch: u32,
    pub point: ScreenPoint,
    pub valid: bool,
}

/// Per-sample history of pseudo-labels, epochs strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    entries: BTreeMap<u64, Vec<TrajectoryPoint>>,
}

impl TrajectoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, label: &PseudoLabel) -> Result<()> {
        let track = self.entries.entry(label.sample_id).or_default();
        if let Some(last) = track.last() {
            if label.epoch <= last.epoch {
                return Err(Error::OutOfOrderEpoch {
                    sample_id: label.sample_id,
                    epoch: label.epoch,
                    last: last.epoch,
                });
            }
        }
        track.push(TrajectoryPoint {
            epoch: label.epoch,
            point: label.point,
            valid: label.valid,
        });
        Ok(())
    }

    pub fn track(&self, sample_id: u64) -> Option<&[TrajectoryPoint]> {
        self.entries.get(&sample_id).map(Vec::as_slice)
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn merge(&mut self, other: TrajectoryLog) {
        for (id, track) in other.entries {
            self.entries.entry(id).or_default().extend(track);
        }
    }

    /// Columns `sample_id,epoch,u_mm,v_mm,valid`, ordered by sample then epoch.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["sample_id", "epoch", "u_mm", "v_mm", "valid"])?;
        for (id, track) in &self.entries {
            for tp in track {
                w.write_record([
                    id.to_string(),
                    tp.epoch.to_string(),
                    tp.point.u.to_string(),
                    tp.point.v.to_string(),
                    tp.valid.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`TrajectoryLog::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["sample_id", "epoch", "u_mm", "v_mm", "valid"] {
            return Err(Error::Schema {
                line: 1,
                message: "expected header sample_id,epoch,u_mm,v_mm,valid".into(),
            });
        }
        let mut log = Self::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |col: &str| Error::Schema {
                line,
                message: format!("column '{col}' has an invalid value"),
            };
            let sample_id = rec[0].parse().map_err(|_| bad("sample_id"))?;
            let epoch = rec[1].parse().map_err(|_| bad("epoch"))?;
            let u: f64 = rec[2].parse().map_err(|_| bad("u_mm"))?;
            let v: f64 = rec[3].parse().map_err(|_| bad("v_mm"))?;
            let valid = rec[4].parse().map_err(|_| bad("valid"))?;
            log.record(&PseudoLabel {
                sample_id,
                point: ScreenPoint::new(u, v),
                epoch,
                valid,
                reason: None,
            })?;
        }
        Ok(log)
    }
}
