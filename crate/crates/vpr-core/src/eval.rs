//! Retrieval index, Recall@N evaluation, descriptor persistence and
//! extraction-latency measurement.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ImageStore;
use crate::dataset::{GroundTruth, GroundTruthConfig, PlaceRecord, Split};
use crate::error::{Error, Result};
use crate::extract::{descriptor_for, descriptors_for};
use crate::model::CheckpointModel;
use crate::tensor::l2_distance;

/// Database descriptors in id order, ready for exact L2 search.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    pub ids: Vec<String>,
    pub dim: usize,
    /// Row-major `ids.len() × dim`, unit-norm rows.
    pub matrix: Vec<f64>,
    pub model_digest: String,
}

impl RetrievalIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }
}

/// Extracts descriptors for every database record, ordered by id.
pub fn build_index(
    model: &CheckpointModel,
    store: &ImageStore,
    records: &[PlaceRecord],
    model_digest: &str,
) -> Result<RetrievalIndex> {
    let mut ids: Vec<String> = records
        .iter()
        .filter(|r| r.split == Split::Database)
        .map(|r| r.id.clone())
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Data("no database records to index".into()));
    }
    let rows = descriptors_for(model, store, &ids)?;
    let dim = rows[0].len();
    let mut matrix = Vec::with_capacity(ids.len() * dim);
    for row in &rows {
        matrix.extend_from_slice(row);
    }
    Ok(RetrievalIndex {
        ids,
        dim,
        matrix,
        model_digest: model_digest.to_string(),
    })
}

/// Top-k ids by ascending L2 distance, ties broken by id. `k` larger than
/// the database is clamped.
pub fn retrieve(index: &RetrievalIndex, query: &[f64], k: usize) -> Result<Vec<String>> {
    if query.len() != index.dim {
        return Err(Error::Query(format!(
            "query dim {} does not match index dim {}",
            query.len(),
            index.dim
        )));
    }
    let mut scored: Vec<(f64, usize)> = (0..index.len())
        .map(|i| (l2_distance(query, index.row(i)), i))
        .collect();
    scored.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then_with(|| index.ids[a.1].cmp(&index.ids[b.1]))
    });
    Ok(scored
        .into_iter()
        .take(k.min(index.len()))
        .map(|(_, i)| index.ids[i].clone())
        .collect())
}

/// Recall@N over a query set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    /// N → fraction of evaluated queries with a ground-truth hit in the top N.
    pub recalls: BTreeMap<usize, f64>,
    /// Queries with non-empty ground truth (the denominator).
    pub query_count: usize,
    /// Queries skipped for having no ground-truth references.
    pub excluded_queries: usize,
    pub gt_config_digest: String,
    /// True when some requested N exceeded the database size.
    pub clamped: bool,
}

/// Evaluates Recall@N for each requested N. Queries with empty ground
/// truth are excluded from the denominator and counted separately.
pub fn recall_at_n(
    index: &RetrievalIndex,
    queries: &[(String, Vec<f64>)],
    gt: &GroundTruth,
    gt_cfg: &GroundTruthConfig,
    ns: &[usize],
) -> Result<RecallReport> {
    if ns.is_empty() {
        return Err(Error::Config("recall evaluation needs at least one N".into()));
    }
    let mut ns_sorted: Vec<usize> = ns.to_vec();
    ns_sorted.sort_unstable();
    ns_sorted.dedup();
    let clamped = ns_sorted.iter().any(|&n| n > index.len());
    if clamped {
        log::warn!(
            "recall N exceeds database size {}; clamping",
            index.len()
        );
    }
    let max_n = ns_sorted.last().copied().unwrap().min(index.len());

    let per_query: Vec<Option<usize>> = queries
        .par_iter()
        .map(|(id, desc)| {
            let positives = match gt.get(id) {
                Some(set) if !set.is_empty() => set,
                _ => return Ok(None),
            };
            let ranked = retrieve(index, desc, max_n)?;
            // first hit position (1-based), if any
            Ok(Some(
                ranked
                    .iter()
                    .position(|r| positives.contains(r))
                    .map(|p| p + 1)
                    .unwrap_or(usize::MAX),
            ))
        })
        .collect::<Result<_>>()?;

    let evaluated: Vec<usize> = per_query.iter().flatten().copied().collect();
    let excluded = per_query.len() - evaluated.len();
    let mut recalls = BTreeMap::new();
    for &n in &ns_sorted {
        let hits = evaluated.iter().filter(|&&first| first <= n).count();
        let recall = if evaluated.is_empty() {
            0.0
        } else {
            hits as f64 / evaluated.len() as f64
        };
        recalls.insert(n, recall);
    }
    Ok(RecallReport {
        recalls,
        query_count: evaluated.len(),
        excluded_queries: excluded,
        gt_config_digest: gt_cfg.digest(),
        clamped,
    })
}

impl RecallReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["n", "recall"])?;
        for (n, r) in &self.recalls {
            w.write_record([n.to_string(), format!("{r}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// descriptor files

const DESC_MAGIC: &[u8; 8] = b"VPRDESC\0";
const DESC_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DescHeader {
    version: u32,
    dim: usize,
    count: usize,
    model_digest: String,
    ids: Vec<String>,
}

/// Writes ids + rows as a header JSON plus little-endian f32 rows.
pub fn save_descriptors(index: &RetrievalIndex, path: &Path) -> Result<()> {
    let header = DescHeader {
        version: DESC_VERSION,
        dim: index.dim,
        count: index.len(),
        model_digest: index.model_digest.clone(),
        ids: index.ids.clone(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DESC_MAGIC)?;
    w.write_all(&(header_json.len() as u32).to_le_bytes())?;
    w.write_all(&header_json)?;
    for &v in &index.matrix {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a descriptor file. With `expected_digest` set and mismatched,
/// strict mode fails; otherwise the mismatch is logged.
pub fn load_descriptors(
    path: &Path,
    expected_digest: Option<&str>,
    strict: bool,
) -> Result<RetrievalIndex> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    if &magic != DESC_MAGIC {
        return Err(Error::Format(format!("{}: not a descriptor file", path.display())));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let mut header_bytes = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
    r.read_exact(&mut header_bytes)?;
    let header: DescHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("{}: corrupt header: {e}", path.display())))?;
    if header.version != DESC_VERSION {
        return Err(Error::Format(format!(
            "descriptor file version {} unsupported",
            header.version
        )));
    }
    if header.ids.len() != header.count {
        return Err(Error::Format("descriptor header count mismatch".into()));
    }

    if let Some(expected) = expected_digest {
        if header.model_digest != expected {
            if strict {
                return Err(Error::Provenance(format!(
                    "descriptor file '{}' was produced by a different model",
                    path.display()
                )));
            }
            log::warn!("descriptor file '{}' digest mismatch", path.display());
        }
    }

    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != header.count * header.dim * 4 {
        return Err(Error::Format(format!(
            "descriptor body has {} bytes, expected {}",
            body.len(),
            header.count * header.dim * 4
        )));
    }
    let matrix = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(RetrievalIndex {
        ids: header.ids,
        dim: header.dim,
        matrix,
        model_digest: header.model_digest,
    })
}

// ---------------------------------------------------------------------------
// latency

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub extraction_ms_mean: f64,
    pub extraction_ms_p50: f64,
    pub extraction_ms_p95: f64,
    /// Exact search against the index, seconds per query.
    pub matching_s_per_query: f64,
    pub reps: usize,
    pub warmup: usize,
    /// Hardware/environment stamp; never comparable across machines.
    pub environment: String,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let idx = ((sorted.len() as f64 - 1.0) * p).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Measures single-image extraction latency (after warmup) and per-query
/// matching time against the given index.
pub fn bench_latency(
    model: &CheckpointModel,
    store: &ImageStore,
    ids: &[String],
    index: &RetrievalIndex,
    warmup: usize,
    reps: usize,
) -> Result<LatencyReport> {
    if reps < 1 {
        return Err(Error::Config("latency benchmark needs reps ≥ 1".into()));
    }
    if ids.is_empty() {
        return Err(Error::Config("latency benchmark needs at least one image".into()));
    }
    for i in 0..warmup {
        let _ = descriptor_for(model, store, &ids[i % ids.len()])?;
    }
    let mut samples = Vec::with_capacity(reps);
    let mut last_desc = Vec::new();
    for i in 0..reps {
        let id = &ids[i % ids.len()];
        let start = Instant::now();
        last_desc = descriptor_for(model, store, id)?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut sorted = samples;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let match_reps = reps.max(1);
    let start = Instant::now();
    for _ in 0..match_reps {
        let _ = retrieve(index, &last_desc, 1.min(index.len()))?;
    }
    let matching = start.elapsed().as_secs_f64() / match_reps as f64;

    let environment = format!(
        "os={} arch={} threads={}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    );
    Ok(LatencyReport {
        extraction_ms_mean: mean,
        extraction_ms_p50: percentile(&sorted, 0.50),
        extraction_ms_p95: percentile(&sorted, 0.95),
        matching_s_per_query: matching,
        reps,
        warmup,
        environment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn toy_index(rows: &[(&str, Vec<f64>)]) -> RetrievalIndex {
        let dim = rows[0].1.len();
        let mut sorted: Vec<&(&str, Vec<f64>)> = rows.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(b.0));
        let ids = sorted.iter().map(|(id, _)| id.to_string()).collect();
        let mut matrix = Vec::new();
        for (_, row) in sorted {
            matrix.extend_from_slice(row);
        }
        RetrievalIndex {
            ids,
            dim,
            matrix,
            model_digest: "test".into(),
        }
    }

    fn gt_of(entries: &[(&str, &[&str])]) -> GroundTruth {
        entries
            .iter()
            .map(|(q, refs)| {
                (
                    q.to_string(),
                    refs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
                )
            })
            .collect()
    }

    #[test]
    fn identical_row_retrieved_first() {
        let index = toy_index(&[("a", vec![0.0, 1.0]), ("b", vec![1.0, 0.0])]);
        let out = retrieve(&index, &[1.0, 0.0], 2).unwrap();
        assert_eq!(out, vec!["b".to_string(), "a".to_string()]);
    }

    #[test]
    fn full_k_returns_permutation() {
        let index = toy_index(&[
            ("a", vec![0.0, 1.0]),
            ("b", vec![1.0, 0.0]),
            ("c", vec![0.5, 0.5]),
        ]);
        let mut out = retrieve(&index, &[0.3, 0.3], 3).unwrap();
        out.sort();
        assert_eq!(out, vec!["a".to_string(), "b".to_string(), "c".to_string()]);
    }

    #[test]
    fn dim_mismatch_is_query_error() {
        let index = toy_index(&[("a", vec![0.0, 1.0])]);
        assert!(matches!(retrieve(&index, &[1.0], 1), Err(Error::Query(_))));
    }

    #[test]
    fn retrieve_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let rows: Vec<(String, Vec<f64>)> = (0..40)
            .map(|i| (format!("d{i:02}"), (0..6).map(|_| rng.gen::<f64>()).collect()))
            .collect();
        let refs: Vec<(&str, Vec<f64>)> = rows.iter().map(|(id, v)| (id.as_str(), v.clone())).collect();
        let index = toy_index(&refs);
        for _ in 0..100 {
            let q: Vec<f64> = (0..6).map(|_| rng.gen::<f64>()).collect();
            let got = retrieve(&index, &q, 7).unwrap();
            let mut expect: Vec<(f64, String)> = rows
                .iter()
                .map(|(id, v)| (l2_distance(&q, v), id.clone()))
                .collect();
            expect.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
            let expect: Vec<String> = expect.into_iter().take(7).map(|(_, id)| id).collect();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn recall_counts_first_hit_position() {
        // ranked list for the query: [n1, p, n2, n3]
        let index = toy_index(&[
            ("n1", vec![0.1, 0.0]),
            ("p", vec![0.2, 0.0]),
            ("n2", vec![0.3, 0.0]),
            ("n3", vec![0.4, 0.0]),
        ]);
        let queries = vec![("q".to_string(), vec![0.0, 0.0])];
        let gt = gt_of(&[("q", &["p"])]);
        let report = recall_at_n(&index, &queries, &gt, &GroundTruthConfig::default(), &[1, 5]).unwrap();
        assert_eq!(report.recalls[&1], 0.0);
        assert_eq!(report.recalls[&5], 1.0);
        assert!(report.clamped);
    }

    #[test]
    fn two_query_hand_count() {
        let index = toy_index(&[
            ("n1", vec![0.1, 0.0]),
            ("p", vec![0.2, 0.0]),
            ("n2", vec![0.3, 0.0]),
            ("n3", vec![0.4, 0.0]),
        ]);
        let queries = vec![
            ("q1".to_string(), vec![0.0, 0.0]),   // p at rank 2
            ("q2".to_string(), vec![0.21, 0.0]), // p at rank 1
        ];
        let gt = gt_of(&[("q1", &["p"]), ("q2", &["p"])]);
        let report = recall_at_n(&index, &queries, &gt, &GroundTruthConfig::default(), &[1, 5]).unwrap();
        assert_eq!(report.recalls[&1], 0.5);
        assert_eq!(report.recalls[&5], 1.0);
    }

    #[test]
    fn recall_is_monotone_in_n() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        let rows: Vec<(String, Vec<f64>)> = (0..30)
            .map(|i| (format!("d{i:02}"), (0..4).map(|_| rng.gen::<f64>()).collect()))
            .collect();
        let refs: Vec<(&str, Vec<f64>)> = rows.iter().map(|(id, v)| (id.as_str(), v.clone())).collect();
        let index = toy_index(&refs);
        let queries: Vec<(String, Vec<f64>)> = (0..10)
            .map(|i| (format!("q{i}"), (0..4).map(|_| rng.gen::<f64>()).collect()))
            .collect();
        let gt: GroundTruth = queries
            .iter()
            .enumerate()
            .map(|(i, (q, _))| {
                let refs: BTreeSet<String> = (0..3).map(|j| format!("d{:02}", (i * 3 + j) % 30)).collect();
                (q.clone(), refs)
            })
            .collect();
        let report =
            recall_at_n(&index, &queries, &gt, &GroundTruthConfig::default(), &[1, 2, 5, 10, 20]).unwrap();
        let values: Vec<f64> = report.recalls.values().copied().collect();
        for pair in values.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        // full-database N gives recall 1.0 when every query has ground truth
        let full = recall_at_n(&index, &queries, &gt, &GroundTruthConfig::default(), &[30]).unwrap();
        assert_eq!(full.recalls[&30], 1.0);
    }

    #[test]
    fn empty_gt_queries_are_excluded() {
        let index = toy_index(&[("a", vec![0.0]), ("b", vec![1.0])]);
        let queries = vec![
            ("q1".to_string(), vec![0.0]),
            ("q2".to_string(), vec![0.9]),
        ];
        let gt = gt_of(&[("q1", &["a"]), ("q2", &[])]);
        let report = recall_at_n(&index, &queries, &gt, &GroundTruthConfig::default(), &[1]).unwrap();
        assert_eq!(report.query_count, 1);
        assert_eq!(report.excluded_queries, 1);
        assert_eq!(report.recalls[&1], 1.0);
    }

    #[test]
    fn descriptor_file_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        // f32-representable values so the round trip is lossless
        let rows: Vec<(String, Vec<f64>)> = (0..1000)
            .map(|i| {
                (
                    format!("d{i:04}"),
                    (0..16).map(|_| rng.gen::<f32>() as f64).collect(),
                )
            })
            .collect();
        let refs: Vec<(&str, Vec<f64>)> = rows.iter().map(|(id, v)| (id.as_str(), v.clone())).collect();
        let index = toy_index(&refs);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.desc");
        save_descriptors(&index, &path).unwrap();
        let back = load_descriptors(&path, Some("test"), true).unwrap();
        assert_eq!(back, index);

        let err = load_descriptors(&path, Some("other"), true).unwrap_err();
        assert!(matches!(err, Error::Provenance(_)));
        let lenient = load_descriptors(&path, Some("other"), false).unwrap();
        assert_eq!(lenient, index);
    }

    #[test]
    fn corrupt_descriptor_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.desc");
        std::fs::write(&path, b"VPRDESC\0\xff\x00\x00\x00not json").unwrap();
        assert!(matches!(
            load_descriptors(&path, None, false),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn percentile_ordering() {
        let sorted = vec![1.0, 2.0, 3.0, 4.0, 100.0];
        assert!(percentile(&sorted, 0.95) >= percentile(&sorted, 0.5));
        assert_eq!(percentile(&sorted, 0.5), 3.0);
    }
}
