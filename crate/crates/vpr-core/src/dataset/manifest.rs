//! Manifest schema: one CSV row per image with pose and split.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar pose: coordinates in meters, heading in degrees within `[0, 360)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub easting: f64,
    pub northing: f64,
    pub heading: f64,
}

impl Pose {
    /// Normalizes the heading into `[0, 360)`. Coordinates must be finite.
    pub fn new(easting: f64, northing: f64, heading: f64) -> Result<Self> {
        if !easting.is_finite() || !northing.is_finite() || !heading.is_finite() {
            return Err(Error::Schema(format!(
                "pose has non-finite components ({easting}, {northing}, {heading})"
            )));
        }
        Ok(Self {
            easting,
            northing,
            heading: heading.rem_euclid(360.0),
        })
    }

    pub fn planar_distance(&self, other: &Pose) -> f64 {
        let de = self.easting - other.easting;
        let dn = self.northing - other.northing;
        (de * de + dn * dn).sqrt()
    }

    /// Absolute angular difference wrapped into `[0, 180]`.
    pub fn heading_difference(&self, other: &Pose) -> f64 {
        let d = (self.heading - other.heading).abs() % 360.0;
        if d > 180.0 {
            360.0 - d
        } else {
            d
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Database,
    Query,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Database => write!(f, "database"),
            Split::Query => write!(f, "query"),
        }
    }
}

/// One image with its file references, optional pose and frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceRecord {
    pub id: String,
    pub rgb_path: PathBuf,
    /// Label-map file; may be absent for query-only evaluation.
    pub seg_path: Option<PathBuf>,
    pub pose: Option<Pose>,
    pub split: Split,
    /// Frame position within a sequence, for frame-window ground truth.
    pub seq_index: Option<u32>,
}

/// A (query, positive) pair — the unit rankings, groups and distillation
/// weights are defined over.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SamplePair {
    pub query_id: String,
    pub positive_id: String,
}

const HEADER: [&str; 8] = [
    "id",
    "rgb_path",
    "seg_path",
    "easting",
    "northing",
    "heading",
    "split",
    "seq_index",
];

/// Loads a manifest CSV. Duplicate ids are rejected; referenced image files
/// are not touched here — missing files surface when first read.
pub fn load_manifest(path: &Path) -> Result<Vec<PlaceRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;

    {
        let headers = reader.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != HEADER {
            return Err(Error::Schema(format!(
                "manifest header mismatch: expected {HEADER:?}, got {got:?}"
            )));
        }
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let row = row?;
        let field = |idx: usize, name: &str| -> Result<String> {
            row.get(idx)
                .map(|s| s.trim().to_string())
                .ok_or_else(|| Error::Schema(format!("line {line}: missing field '{name}'")))
        };

        let id = field(0, "id")?;
        if id.is_empty() {
            return Err(Error::Schema(format!("line {line}: empty id")));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Schema(format!("line {line}: duplicate id '{id}'")));
        }

        let rgb_path = field(1, "rgb_path")?;
        if rgb_path.is_empty() {
            return Err(Error::Schema(format!("line {line}: empty rgb_path")));
        }
        let seg_path = field(2, "seg_path")?;
        let easting = field(3, "easting")?;
        let northing = field(4, "northing")?;
        let heading = field(5, "heading")?;
        let split = field(6, "split")?;
        let seq_index = field(7, "seq_index")?;

        let pose = match (easting.is_empty(), northing.is_empty(), heading.is_empty()) {
            (true, true, true) => None,
            (false, false, false) => {
                let parse = |s: &str, name: &str| -> Result<f64> {
                    s.parse::<f64>().map_err(|_| {
                        Error::Schema(format!("line {line}: field '{name}' is not a number: '{s}'"))
                    })
                };
                Some(Pose::new(
                    parse(&easting, "easting")?,
                    parse(&northing, "northing")?,
                    parse(&heading, "heading")?,
                )?)
            }
            _ => {
                return Err(Error::Schema(format!(
                    "line {line}: pose fields must be all present or all empty"
                )))
            }
        };

        let split = match split.as_str() {
            "database" => Split::Database,
            "query" => Split::Query,
            other => {
                return Err(Error::Schema(format!(
                    "line {line}: field 'split' must be 'database' or 'query', got '{other}'"
                )))
            }
        };

        let seq_index = if seq_index.is_empty() {
            None
        } else {
            Some(seq_index.parse::<u32>().map_err(|_| {
                Error::Schema(format!(
                    "line {line}: field 'seq_index' is not a non-negative integer: '{seq_index}'"
                ))
            })?)
        };

        records.push(PlaceRecord {
            id,
            rgb_path: PathBuf::from(rgb_path),
            seg_path: if seg_path.is_empty() {
                None
            } else {
                Some(PathBuf::from(seg_path))
            },
            pose,
            split,
            seq_index,
        });
    }

    Ok(records)
}

/// Writes records in the manifest schema; inverse of [`load_manifest`].
pub fn save_manifest(records: &[PlaceRecord], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(HEADER)?;
    for r in records {
        let (e, n, h) = match &r.pose {
            Some(p) => (
                format_float(p.easting),
                format_float(p.northing),
                format_float(p.heading),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        writer.write_record([
            r.id.as_str(),
            &r.rgb_path.to_string_lossy(),
            &r.seg_path
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_default(),
            &e,
            &n,
            &h,
            &r.split.to_string(),
            &r.seq_index.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

// Shortest round-trippable decimal form.
fn format_float(v: f64) -> String {
    let s = format!("{v}");
    debug_assert_eq!(s.parse::<f64>().ok(), Some(v));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_manifest(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("manifest.csv");
        let header = "id,rgb_path,seg_path,easting,northing,heading,split,seq_index\n";
        std::fs::write(&path, format!("{header}{body}")).unwrap();
        path
    }

    #[test]
    fn parses_three_rows_with_poses() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(
            dir.path(),
            "q1,a.png,a_seg.png,10.0,20.0,90.0,query,\n\
             d1,b.png,b_seg.png,11.0,21.0,95.0,database,\n\
             d2,c.png,,12.5,19.0,350.0,database,3\n",
        );
        let records = load_manifest(&path).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].id, "q1");
        assert_eq!(records[0].pose.unwrap().heading, 90.0);
        assert_eq!(records[2].seg_path, None);
        assert_eq!(records[2].seq_index, Some(3));
        assert_eq!(records[1].split, Split::Database);
    }

    #[test]
    fn duplicate_id_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(
            dir.path(),
            "q1,a.png,,,,,query,\n\
             q1,b.png,,,,,query,\n",
        );
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        assert!(err.to_string().contains("q1"));
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn partial_pose_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), "q1,a.png,,1.0,,,query,\n");
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("pose fields"));
    }

    #[test]
    fn bad_number_names_field_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), "q1,a.png,,1.0,2.0,north,query,\n");
        let err = load_manifest(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("heading") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn heading_is_normalized() {
        let p = Pose::new(0.0, 0.0, 370.0).unwrap();
        assert!((p.heading - 10.0).abs() < 1e-12);
        let p = Pose::new(0.0, 0.0, -30.0).unwrap();
        assert!((p.heading - 330.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_pose_rejected() {
        assert!(Pose::new(f64::NAN, 0.0, 0.0).is_err());
        assert!(Pose::new(0.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            PlaceRecord {
                id: "q1".into(),
                rgb_path: "imgs/q1.png".into(),
                seg_path: Some("segs/q1.png".into()),
                pose: Some(Pose::new(1.25, -3.5, 123.456).unwrap()),
                split: Split::Query,
                seq_index: None,
            },
            PlaceRecord {
                id: "d1".into(),
                rgb_path: "imgs/d1.png".into(),
                seg_path: None,
                pose: None,
                split: Split::Database,
                seq_index: Some(7),
            },
        ];
        let path = dir.path().join("m.csv");
        save_manifest(&records, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back, records);
    }
}
