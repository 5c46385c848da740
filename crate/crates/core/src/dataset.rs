//! Calibration samples and the sample CSV format.
//!
//! Header (K jitter triples, K ≥ 1, inferred from the header):
//!
//! ```text
//! sample_id,subject_id,split,ox_mm,oy_mm,oz_mm,gbx,gby,gbz,gfx,gfy,gfz,
//! j1_x,j1_y,j1_z,...,jK_x,jK_y,jK_z,pu_mm,pv_mm
//! ```
//!
//! Directions must be unit length within 1e-6. Floats use `.` as decimal
//! point with no grouping; files are UTF-8 with LF line endings.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapter::BasePrediction;
use crate::error::{Error, Result};
use crate::geometry::{UnitVec3, Vec3};
use crate::projection::ScreenPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("split must be 'train' or 'test', got '{other}'")),
        }
    }
}

/// One labelled sample: face centre, frozen-network predictions, screen label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub subject_id: u32,
    pub split: Split,
    /// Face centre in camera coordinates (mm).
    pub origin: Vec3,
    pub prediction: BasePrediction,
    /// On-screen gaze target (mm).
    pub label: ScreenPoint,
}

impl GazeSample {
    pub fn sample_id(&self) -> u64 {
        self.prediction.sample_id
    }

    pub fn n_jitter(&self) -> usize {
        self.prediction.jitter_variants.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<GazeSample>,
}

impl Dataset {
    pub fn new(samples: Vec<GazeSample>) -> Self {
        Self { samples }
    }

    pub fn subjects(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.samples.iter().map(|s| s.subject_id).collect();
        set.into_iter().collect()
    }

    pub fn subject_split(&self, subject: u32, split: Split) -> Vec<&GazeSample> {
        self.samples
            .iter()
            .filter(|s| s.subject_id == subject && s.split == split)
            .collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &GazeSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Smallest jitter count over all samples (0 for an empty dataset).
    pub fn n_jitter(&self) -> usize {
        self.samples.iter().map(GazeSample::n_jitter).min().unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let k = self.n_jitter();
        if self.samples.iter().any(|s| s.n_jitter() != k) {
            return Err(Error::Mismatch("samples disagree on jitter count".into()));
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(header(k))?;
        let mut row: Vec<String> = Vec::with_capacity(14 + 3 * k);
        for s in &self.samples {
            row.clear();
            row.push(s.sample_id().to_string());
            row.push(s.subject_id.to_string());
            row.push(s.split.to_string());
            row.extend(s.origin.iter().map(f64::to_string));
            row.extend(s.prediction.g_base.iter().map(f64::to_string));
            row.extend(s.prediction.g_base_flipped.iter().map(f64::to_string));
            for j in &s.prediction.jitter_variants {
                row.extend(j.iter().map(f64::to_string));
            }
            row.push(s.label.u.to_string());
            row.push(s.label.v.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses and validates a sample CSV. Errors carry the 1-based file line.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
        let headers = rdr.headers()?.clone();
        let names: Vec<&str> = headers.iter().collect();
        let k = validate_header(&names)?;
        let mut samples = Vec::new();
        let mut seen = BTreeSet::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let schema = |message: String| Error::Schema { line, message };
            if rec.len() != names.len() {
                return Err(schema(format!("expected {} fields, found {}", names.len(), rec.len())));
            }
            let num = |i: usize| -> Result<f64> {
                let raw = &rec[i];
                let x: f64 = raw
                    .trim()
                    .parse()
                    .map_err(|_| schema(format!("column '{}': '{}' is not a number", names[i], raw)))?;
                if !x.is_finite() {
                    return Err(schema(format!("column '{}' is not finite", names[i])));
                }
                Ok(x)
            };
            let dir = |i: usize| -> Result<UnitVec3> {
                let a = [num(i)?, num(i + 1)?, num(i + 2)?];
                UnitVec3::try_from(a).map_err(|m| schema(format!("columns '{}'..: {m}", names[i])))
            };
            let sample_id: u64 = rec[0]
                .trim()
                .parse()
                .map_err(|_| schema(format!("sample_id '{}' is not an unsigned integer", &rec[0])))?;
            if !seen.insert(sample_id) {
                return Err(schema(format!("duplicate sample_id {sample_id}")));
            }
            let subject_id: u32 = rec[1]
                .trim()
                .parse()
                .map_err(|_| schema(format!("subject_id '{}' is not an unsigned integer", &rec[1])))?;
            let split: Split = rec[2].trim().parse().map_err(schema)?;
            let origin = Vec3::new(num(3)?, num(4)?, num(5)?);
            let g_base = dir(6)?;
            let g_base_flipped = dir(9)?;
            let jitter_variants = (0..k).map(|j| dir(12 + 3 * j)).collect::<Result<Vec<_>>>()?;
            let label = ScreenPoint::new(num(12 + 3 * k)?, num(13 + 3 * k)?);
            samples.push(GazeSample {
                subject_id,
                split,
                origin,
                prediction: BasePrediction {
                    sample_id,
                    g_base,
                    jitter_variants,
                    g_base_flipped,
                },
                label,
            });
        }
        Ok(Self { samples })
    }
}

fn header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "sample_id", "subject_id", "split", "ox_mm", "oy_mm", "oz_mm", "gbx", "gby", "gbz", "gfx", "gfy", "gfz",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for j in 1..=k {
        for axis in ["x", "y", "z"] {
            h.push(format!("j{j}_{axis}"));
        }
    }
    h.push("pu_mm".into());
    h.push("pv_mm".into());
    h
}

fn validate_header(names: &[&str]) -> Result<usize> {
    let err = |message: String| Error::Schema { line: 1, message };
    if names.len() < 17 || (names.len() - 14) % 3 != 0 {
        return Err(err(format!(
            "header has {} columns; expected 14 + 3K with K >= 1",
            names.len()
        )));
    }
    let k = (names.len() - 14) / 3;
    let expected = header(k);
    for (i, (got, want)) in names.iter().zip(&expected).enumerate() {
        if got.trim() != want {
            return Err(err(format!("column {} is '{}', expected '{}'", i + 1, got, want)));
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalize;

    fn sample(id: u64, k: usize) -> GazeSample {
        let g = normalize(&Vec3::new(0.1, 0.2, -1.0)).unwrap();
        GazeSample {
            subject_id: 2,
            split: if id % 2 == 0 { Split::Train } else { Split::Test },
            origin: Vec3::new(1.5, -2.25, 600.0),
            prediction: BasePrediction {
                sample_id: id,
                g_base: g,
                jitter_variants: vec![g; k],
                g_base_flipped: normalize(&Vec3::new(-0.1, 0.2, -1.0)).unwrap(),
            },
            label: ScreenPoint::new(10.125, -3.5),
        }
    }

    #[test]
    fn round_trip_preserves_every_field() {
        let ds = Dataset::new((0..5).map(|i| sample(i, 3)).collect());
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sample_id,subject_id,split,ox_mm"));
        assert!(text.lines().next().unwrap().ends_with("j3_z,pu_mm,pv_mm"));
        assert!(!text.contains('\r'));
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    fn corrupt(ds: &Dataset, line: usize, field: usize, value: &str) -> String {
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut fields: Vec<String> = lines[line - 1].split(',').map(String::from).collect();
        fields[field] = value.into();
        lines[line - 1] = fields.join(",");
        lines.join("\n") + "\n"
    }

    #[test]
    fn malformed_number_reports_line() {
        let ds = Dataset::new((0..3).map(|i| sample(i, 1)).collect());
        let bad = corrupt(&ds, 4, 5, "6o0");
        match Dataset::read_csv(bad.as_bytes()) {
            Err(Error::Schema { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("oz_mm"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn non_unit_direction_rejected() {
        let ds = Dataset::new(vec![sample(0, 1)]);
        let bad = corrupt(&ds, 2, 6, "0.5");
        assert!(matches!(Dataset::read_csv(bad.as_bytes()), Err(Error::Schema { line: 2, .. })));
    }

    #[test]
    fn bad_header_rejected() {
        let bad = "sample_id,subject,split\n";
        assert!(matches!(Dataset::read_csv(bad.as_bytes()), Err(Error::Schema { line: 1, .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let ds = Dataset::new(vec![sample(4, 1), sample(4, 1)]);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert!(matches!(Dataset::read_csv(buf.as_slice()), Err(Error::Schema { line: 3, .. })));
    }
}
