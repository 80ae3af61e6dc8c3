//! Field-of-view overlap distance and ground-truth set construction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::manifest::{PlaceRecord, Pose, Split};
use super::GroundTruth;
use crate::error::{Error, Result};

/// How a query's correct database references are determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtMode {
    /// Planar distance within `radius_m`.
    Radius,
    /// Planar distance within `radius_m` and heading within `angle_deg`.
    RadiusAngle,
    /// Frame index within `frame_tol` of the query's frame.
    FrameWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthConfig {
    pub mode: GtMode,
    pub radius_m: f64,
    pub angle_deg: f64,
    pub frame_tol: u32,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        Self {
            mode: GtMode::Radius,
            radius_m: 25.0,
            angle_deg: 40.0,
            frame_tol: 2,
        }
    }
}

impl GroundTruthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_m > 0.0) {
            return Err(Error::Config(format!("radius_m must be > 0, got {}", self.radius_m)));
        }
        if !(self.angle_deg > 0.0) {
            return Err(Error::Config(format!("angle_deg must be > 0, got {}", self.angle_deg)));
        }
        Ok(())
    }

    /// Digest of the canonical JSON form, stamped into recall reports.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("ground-truth config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

/// FOV overlap distance: `‖Δx‖₂ / 25 + Δθ / 40`, with Δθ the absolute
/// heading difference wrapped into `[0, 180]`. A pair qualifies as
/// FOV-positive iff the value is strictly below 1.
///
/// The 25 m and 40° scales are the constants of the overlap rule, not the
/// (configurable) ground-truth tolerance.
pub fn fov_overlap_distance(q: &Pose, p: &Pose) -> f64 {
    q.planar_distance(p) / 25.0 + q.heading_difference(p) / 40.0
}

pub fn fov_qualifies(q: &Pose, p: &Pose) -> bool {
    fov_overlap_distance(q, p) < 1.0
}

/// Computes per-query ground-truth sets over the database split.
///
/// Radius comparisons are inclusive (≤). Frame windows clip at manifest
/// boundaries. Output is keyed and ordered by id, so it is independent of
/// record ordering.
pub fn ground_truth_sets(records: &[PlaceRecord], cfg: &GroundTruthConfig) -> Result<GroundTruth> {
    cfg.validate()?;

    let queries: Vec<&PlaceRecord> = records.iter().filter(|r| r.split == Split::Query).collect();
    let database: Vec<&PlaceRecord> = records.iter().filter(|r| r.split == Split::Database).collect();
    if queries.is_empty() {
        return Err(Error::Config("no query records in manifest".into()));
    }
    if database.is_empty() {
        return Err(Error::Config("no database records in manifest".into()));
    }

    let need_pose = |r: &PlaceRecord| -> Result<Pose> {
        r.pose
            .ok_or_else(|| Error::Config(format!("record '{}' lacks a pose required by {:?} mode", r.id, cfg.mode)))
    };
    let need_seq = |r: &PlaceRecord| -> Result<u32> {
        r.seq_index
            .ok_or_else(|| Error::Config(format!("record '{}' lacks a seq_index required by frame_window mode", r.id)))
    };

    let mut out = BTreeMap::new();
    for q in &queries {
        let mut refs = BTreeSet::new();
        match cfg.mode {
            GtMode::Radius => {
                let qp = need_pose(q)?;
                for d in &database {
                    let dp = need_pose(d)?;
                    if qp.planar_distance(&dp) <= cfg.radius_m {
                        refs.insert(d.id.clone());
                    }
                }
            }
            GtMode::RadiusAngle => {
                let qp = need_pose(q)?;
                for d in &database {
                    let dp = need_pose(d)?;
                    if qp.planar_distance(&dp) <= cfg.radius_m
                        && qp.heading_difference(&dp) <= cfg.angle_deg
                    {
                        refs.insert(d.id.clone());
                    }
                }
            }
            GtMode::FrameWindow => {
                let qs = need_seq(q)? as i64;
                for d in &database {
                    let ds = need_seq(d)? as i64;
                    if (qs - ds).abs() <= cfg.frame_tol as i64 {
                        refs.insert(d.id.clone());
                    }
                }
            }
        }
        out.insert(q.id.clone(), refs);
    }
    Ok(out)
}
