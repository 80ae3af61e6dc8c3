//! Recall-ranking computation and the D1–D4 sample partition.
//!
//! For every (query, positive) pair, the rank of the positive in each
//! branch's retrieval list (seg rank `x`, rgb rank `y`) decides which
//! group the pair falls into:
//!
//! - D1: `x ≤ N_t < y` — seg succeeds where rgb fails
//! - D2: `x ≤ y ≤ N_t` — both succeed, seg no worse
//! - D3: `y < x ≤ N_t` — both succeed, rgb better
//! - D4: `x > N_t` — seg fails
//!
//! S1 = D1 ∪ D2 ∪ D3 and S2 = D4 partition by the seg branch alone;
//! R1/R2 partition by the rgb branch alone.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{PlaceRecord, SamplePair, Split};
use crate::error::{Error, Result};
use crate::tensor::l2_distance;

/// Rank thresholds: `N_t` splits success from failure, `N_m` caps the
/// rgb rank inside the D1 weighting kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub n_t: u32,
    pub n_m: u32,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { n_t: 10, n_m: 20 }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_t < 1 || self.n_t > self.n_m {
            return Err(Error::Config(format!(
                "partition thresholds need 1 ≤ N_t ≤ N_m, got N_t={}, N_m={}",
                self.n_t, self.n_m
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    D1,
    D2,
    D3,
    D4,
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Group::D1 => write!(f, "D1"),
            Group::D2 => write!(f, "D2"),
            Group::D3 => write!(f, "D3"),
            Group::D4 => write!(f, "D4"),
        }
    }
}

impl std::str::FromStr for Group {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "D1" => Ok(Group::D1),
            "D2" => Ok(Group::D2),
            "D3" => Ok(Group::D3),
            "D4" => Ok(Group::D4),
            other => Err(Error::Format(format!("unknown group '{other}'"))),
        }
    }
}

/// Assigns the group for seg rank `x` and rgb rank `y` (both ≥ 1).
pub fn assign_group(x: u32, y: u32, cfg: &PartitionConfig) -> Group {
    debug_assert!(x >= 1 && y >= 1, "ranks start at 1");
    let n_t = cfg.n_t;
    if x > n_t {
        Group::D4
    } else if y > n_t {
        Group::D1
    } else if x <= y {
        Group::D2
    } else {
        Group::D3
    }
}

/// Which branch produced a ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankBranch {
    Seg,
    Rgb,
}

/// Rank of each pair's positive in its query's recall list.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallRanking {
    pub branch: RankBranch,
    pub entries: BTreeMap<SamplePair, u32>,
}

/// Ranks every pair's positive against the full database split.
///
/// Rank r means exactly r−1 database records score strictly closer to the
/// query; ties break by ascending id, so the result is independent of
/// record order.
pub fn compute_rankings(
    records: &[PlaceRecord],
    pairs: &[SamplePair],
    branch: RankBranch,
    provider: &dyn Fn(&PlaceRecord) -> Result<Vec<f64>>,
) -> Result<RecallRanking> {
    let mut database: Vec<&PlaceRecord> = records.iter().filter(|r| r.split == Split::Database).collect();
    database.sort_by(|a, b| a.id.cmp(&b.id));
    let by_id: HashMap<&str, &PlaceRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();

    let mut db_descs: Vec<(String, Vec<f64>)> = Vec::with_capacity(database.len());
    for r in &database {
        db_descs.push((r.id.clone(), provider(r)?));
    }
    let db_index: HashMap<&str, usize> = db_descs.iter().enumerate().map(|(i, (id, _))| (id.as_str(), i)).collect();

    let mut query_cache: HashMap<String, Vec<f64>> = HashMap::new();
    let mut entries = BTreeMap::new();
    for pair in pairs {
        if !db_index.contains_key(pair.positive_id.as_str()) {
            return Err(Error::Data(format!(
                "positive '{}' of pair ({}, {}) is not in the database split",
                pair.positive_id, pair.query_id, pair.positive_id
            )));
        }
        let query = by_id.get(pair.query_id.as_str()).ok_or_else(|| {
            Error::Data(format!("query '{}' not found in records", pair.query_id))
        })?;
        if !query_cache.contains_key(&pair.query_id) {
            query_cache.insert(pair.query_id.clone(), provider(query)?);
        }
        let qd = &query_cache[&pair.query_id];

        let pos_idx = db_index[pair.positive_id.as_str()];
        let pos_dist = l2_distance(qd, &db_descs[pos_idx].1);
        let mut closer = 0u32;
        for (id, desc) in &db_descs {
            if id == &pair.positive_id {
                continue;
            }
            let d = l2_distance(qd, desc);
            if d < pos_dist || (d == pos_dist && id.as_str() < pair.positive_id.as_str()) {
                closer += 1;
            }
        }
        entries.insert(pair.clone(), closer + 1);
    }
    Ok(RecallRanking { branch, entries })
}

/// One row of the partition table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRow {
    pub pair: SamplePair,
    pub x: u32,
    pub y: u32,
    pub group: Group,
}

/// Per-pair ranks and groups plus the thresholds they were built with.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTable {
    pub config: PartitionConfig,
    pub rows: Vec<PartitionRow>,
}

impl PartitionTable {
    pub fn row(&self, pair: &SamplePair) -> Option<&PartitionRow> {
        self.rows.iter().find(|r| &r.pair == pair)
    }

    pub fn group_counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for r in &self.rows {
            counts[match r.group {
                Group::D1 => 0,
                Group::D2 => 1,
                Group::D3 => 2,
                Group::D4 => 3,
            }] += 1;
        }
        counts
    }

    /// GP-D selective set {D1, D2, D3}.
    pub fn gp_d_pairs(&self) -> Vec<&SamplePair> {
        self.rows
            .iter()
            .filter(|r| r.group != Group::D4)
            .map(|r| &r.pair)
            .collect()
    }

    /// GP-S selective set S1 = {x ≤ N_t} (equals D1 ∪ D2 ∪ D3).
    pub fn gp_s_pairs(&self) -> Vec<&SamplePair> {
        self.rows
            .iter()
            .filter(|r| r.x <= self.config.n_t)
            .map(|r| &r.pair)
            .collect()
    }

    /// GP-R selective set R1 = {y ≤ N_t}.
    pub fn gp_r_pairs(&self) -> Vec<&SamplePair> {
        self.rows
            .iter()
            .filter(|r| r.y <= self.config.n_t)
            .map(|r| &r.pair)
            .collect()
    }
}

/// Joins the two branch rankings into a partition table. Both rankings
/// must cover exactly the same pair set.
pub fn partition(
    seg: &RecallRanking,
    rgb: &RecallRanking,
    cfg: &PartitionConfig,
) -> Result<PartitionTable> {
    cfg.validate()?;
    let seg_pairs: BTreeSet<&SamplePair> = seg.entries.keys().collect();
    let rgb_pairs: BTreeSet<&SamplePair> = rgb.entries.keys().collect();
    if seg_pairs != rgb_pairs {
        let only_seg: Vec<String> = seg_pairs
            .difference(&rgb_pairs)
            .map(|p| format!("({}, {})", p.query_id, p.positive_id))
            .collect();
        let only_rgb: Vec<String> = rgb_pairs
            .difference(&seg_pairs)
            .map(|p| format!("({}, {})", p.query_id, p.positive_id))
            .collect();
        return Err(Error::Data(format!(
            "ranking pair sets differ; only in seg: [{}], only in rgb: [{}]",
            only_seg.join(", "),
            only_rgb.join(", ")
        )));
    }

    let rows = seg
        .entries
        .iter()
        .map(|(pair, &x)| {
            let y = rgb.entries[pair];
            PartitionRow {
                pair: pair.clone(),
                x,
                y,
                group: assign_group(x, y, cfg),
            }
        })
        .collect();
    Ok(PartitionTable {
        config: *cfg,
        rows,
    })
}

/// Provenance sidecar stored next to the partition CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSidecar {
    pub n_t: u32,
    pub n_m: u32,
    pub seg_ckpt_digest: String,
    pub rgb_ckpt_digest: String,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

/// Writes `query_id,positive_id,x,y,group` rows plus the JSON sidecar.
/// Both files are written atomically (temp file + rename).
pub fn save_partition(
    table: &PartitionTable,
    seg_ckpt_digest: &str,
    rgb_ckpt_digest: &str,
    path: &Path,
) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut writer = csv::Writer::from_path(&tmp)?;
        writer.write_record(["query_id", "positive_id", "x", "y", "group"])?;
        for row in &table.rows {
            writer.write_record([
                row.pair.query_id.as_str(),
                row.pair.positive_id.as_str(),
                &row.x.to_string(),
                &row.y.to_string(),
                &row.group.to_string(),
            ])?;
        }
        writer.flush()?;
    }
    std::fs::rename(&tmp, path)?;

    let sidecar = PartitionSidecar {
        n_t: table.config.n_t,
        n_m: table.config.n_m,
        seg_ckpt_digest: seg_ckpt_digest.to_string(),
        rgb_ckpt_digest: rgb_ckpt_digest.to_string(),
    };
    let sc_path = sidecar_path(path);
    let sc_tmp = sc_path.with_extension("json.tmp");
    std::fs::write(&sc_tmp, serde_json::to_string_pretty(&sidecar)?)?;
    std::fs::rename(&sc_tmp, &sc_path)?;
    Ok(())
}

/// A partition loaded from disk, with the provenance check outcome.
#[derive(Debug, Clone)]
pub struct LoadedPartition {
    pub table: PartitionTable,
    pub sidecar: PartitionSidecar,
    /// False when expected digests were supplied and did not match.
    pub digests_match: bool,
}

/// Loads a table and its sidecar. When `expected` digests are given and
/// differ, strict mode fails; otherwise a warning is logged and the
/// mismatch is reported in the result.
pub fn load_partition(
    path: &Path,
    expected: Option<(&str, &str)>,
    strict: bool,
) -> Result<LoadedPartition> {
    let sidecar: PartitionSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let config = PartitionConfig {
        n_t: sidecar.n_t,
        n_m: sidecar.n_m,
    };
    config.validate()?;

    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let get = |idx: usize, name: &str| -> Result<&str> {
            row.get(idx)
                .ok_or_else(|| Error::Format(format!("partition line {line}: missing {name}")))
        };
        let x: u32 = get(2, "x")?
            .parse()
            .map_err(|_| Error::Format(format!("partition line {line}: bad x")))?;
        let y: u32 = get(3, "y")?
            .parse()
            .map_err(|_| Error::Format(format!("partition line {line}: bad y")))?;
        let group: Group = get(4, "group")?.parse()?;
        if group != assign_group(x, y, &config) {
            return Err(Error::Format(format!(
                "partition line {line}: group {group} inconsistent with ranks ({x}, {y})"
            )));
        }
        rows.push(PartitionRow {
            pair: SamplePair {
                query_id: get(0, "query_id")?.to_string(),
                positive_id: get(1, "positive_id")?.to_string(),
            },
            x,
            y,
            group,
        });
    }

    let digests_match = match expected {
        Some((seg, rgb)) => sidecar.seg_ckpt_digest == seg && sidecar.rgb_ckpt_digest == rgb,
        None => true,
    };
    if !digests_match {
        if strict {
            return Err(Error::Provenance(format!(
                "partition '{}' was built from different checkpoints",
                path.display()
            )));
        }
        log::warn!(
            "partition '{}' digests do not match current checkpoints",
            path.display()
        );
    }

    Ok(LoadedPartition {
        table: PartitionTable { config, rows },
        sidecar,
        digests_match,
    })
}
