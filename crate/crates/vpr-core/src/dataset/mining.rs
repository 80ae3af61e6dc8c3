//! Positive selection and hard-negative sampling for triplet training.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::geo::{fov_overlap_distance, ground_truth_sets, GroundTruthConfig};
use super::manifest::{PlaceRecord, SamplePair};
use super::GroundTruth;
use crate::error::{Error, Result};
use crate::tensor::l2_distance;

/// Callback yielding a global descriptor for a record.
pub type DescriptorFn<'a> = &'a dyn Fn(&PlaceRecord) -> Result<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiningMode {
    /// Ground-truth reference with the smallest FOV overlap distance.
    FovBest,
    /// Ground-truth reference nearest in descriptor space under the
    /// current model (weakly supervised mining).
    Weak,
}

/// Selects one positive per query. Queries with empty ground truth are
/// skipped. Ties break toward the smaller id.
pub fn mine_positives(
    records: &[PlaceRecord],
    cfg: &GroundTruthConfig,
    mode: MiningMode,
    provider: Option<DescriptorFn>,
) -> Result<Vec<SamplePair>> {
    if mode == MiningMode::Weak && provider.is_none() {
        return Err(Error::Config(
            "weak positive mining requires a descriptor provider".into(),
        ));
    }
    let gt = ground_truth_sets(records, cfg)?;
    let by_id: HashMap<&str, &PlaceRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();

    let mut pairs = Vec::new();
    let mut desc_cache: HashMap<String, Vec<f64>> = HashMap::new();
    for (query_id, refs) in &gt {
        if refs.is_empty() {
            continue;
        }
        let query = by_id[query_id.as_str()];
        let mut best: Option<(f64, &str)> = None;
        match mode {
            MiningMode::FovBest => {
                let qp = query.pose.ok_or_else(|| {
                    Error::Config(format!("query '{query_id}' lacks a pose required by fov_best mining"))
                })?;
                for ref_id in refs {
                    let r = by_id[ref_id.as_str()];
                    let rp = r.pose.ok_or_else(|| {
                        Error::Config(format!("record '{ref_id}' lacks a pose required by fov_best mining"))
                    })?;
                    let d = fov_overlap_distance(&qp, &rp);
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, ref_id));
                    }
                }
            }
            MiningMode::Weak => {
                let provider = provider.unwrap();
                let qd = provider(query)?;
                for ref_id in refs {
                    let r = by_id[ref_id.as_str()];
                    if !desc_cache.contains_key(ref_id) {
                        desc_cache.insert(ref_id.clone(), provider(r)?);
                    }
                    let d = l2_distance(&qd, &desc_cache[ref_id]);
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, ref_id));
                    }
                }
            }
        }
        let (_, positive_id) = best.expect("non-empty ground truth");
        pairs.push(SamplePair {
            query_id: query_id.clone(),
            positive_id: positive_id.to_string(),
        });
    }
    Ok(pairs)
}

/// Negatives for one query, with a flag set when fewer than `k` were available.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSample {
    pub ids: Vec<String>,
    /// True when the database ran out of valid negatives before `k`.
    pub exhausted: bool,
}

/// Picks the `k` hardest negatives for a query: database records outside
/// the query's ground truth, restricted to a random pool of `pool`
/// candidates, ordered by ascending descriptor distance (ties by id).
pub fn sample_negatives(
    query_id: &str,
    records: &[PlaceRecord],
    gt: &GroundTruth,
    k: usize,
    provider: DescriptorFn,
    pool: usize,
    rng: &mut impl Rng,
) -> Result<NegativeSample> {
    if k < 1 {
        return Err(Error::Config("negative count k must be at least 1".into()));
    }
    if pool < k {
        return Err(Error::Config(format!("negative pool ({pool}) must be at least k ({k})")));
    }
    let query = records
        .iter()
        .find(|r| r.id == query_id)
        .ok_or_else(|| Error::Data(format!("query '{query_id}' not found in records")))?;
    let positives = gt.get(query_id).cloned().unwrap_or_default();

    let mut candidates: Vec<&PlaceRecord> = records
        .iter()
        .filter(|r| r.split == super::Split::Database && !positives.contains(&r.id))
        .collect();
    candidates.sort_by(|a, b| a.id.cmp(&b.id));

    let sampled: Vec<&PlaceRecord> = candidates
        .choose_multiple(rng, pool)
        .copied()
        .collect();

    let qd = provider(query)?;
    let mut scored: Vec<(f64, &str)> = Vec::with_capacity(sampled.len());
    for r in sampled {
        scored.push((l2_distance(&qd, &provider(r)?), r.id.as_str()));
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(b.1)));

    let exhausted = scored.len() < k;
    let ids = scored
        .into_iter()
        .take(k)
        .map(|(_, id)| id.to_string())
        .collect();
    Ok(NegativeSample { ids, exhausted })
}
