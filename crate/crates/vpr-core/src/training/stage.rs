//! The two training stages and the fusion baselines.
//!
//! One loop drives all of them: mine a positive per training query,
//! draw hard negatives from a seeded pool against per-epoch descriptor
//! caches, take AdamW steps under a cosine schedule, and track validation
//! Recall@5 for model selection. Stage II adds the frozen seg teacher and
//! the per-pair weighted feature-mimic terms.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ImageStore, InputKind};
use crate::dataset::{
    ground_truth_sets, mine_positives, sample_negatives, GroundTruth, GroundTruthConfig,
    MiningMode, PlaceRecord, SamplePair, Split,
};
use crate::error::{Error, Result};
use crate::extract::descriptor_for;
use crate::model::{
    forward, mc_aggregate, BackboneConfig, BackboneGrads, BackboneParams, CheckpointModel,
    ModelKind, Transformation, DEFAULT_LEVELS,
};
use crate::tensor::{l2_distance, l2_normalize};
use crate::training::optim::{cosine_lr, AdamW};
use crate::training::step::{triplet_total_backward, KdTargets, LossParts, Triplet, TripletInputs};
use crate::training::weights::WeightTable;

// RNG stream ids; rgb-family streams are shared between stage I rgb and
// the stage II student so the two runs consume identical randomness.
const STREAM_INIT_RGB: u64 = 10;
const STREAM_INIT_SEG: u64 = 11;
const STREAM_INIT_TRANSFORM: u64 = 12;
const STREAM_INIT_BASELINE: u64 = 13;
const STREAM_INIT_BASELINE2: u64 = 14;
const STREAM_DATA_RGB: u64 = 20;
const STREAM_DATA_SEG: u64 = 21;
const STREAM_DATA_BASELINE: u64 = 22;
const STREAM_VAL_SPLIT: u64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSelection {
    /// Keep the epoch checkpoint with the best validation Recall@5.
    BestValRecall5,
    /// Keep the final epoch.
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_triplets: usize,
    pub negatives_per_triplet: usize,
    pub negative_pool: usize,
    pub margin: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub model_selection: ModelSelection,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: 8,
            batch_triplets: 8,
            negatives_per_triplet: 1,
            negative_pool: 20,
            margin: 0.1,
            seed: 0,
            val_fraction: 0.0,
            model_selection: ModelSelection::Last,
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_triplets < 1 || self.negatives_per_triplet < 1 {
            return Err(Error::Config("batch composition must be at least 1×1".into()));
        }
        if self.negative_pool < self.negatives_per_triplet {
            return Err(Error::Config("negative pool smaller than negatives per triplet".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config(format!("margin must be ≥ 0, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Which stage-I branch to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Rgb,
    Seg,
}

/// Fusion baseline flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    ConcatInput,
    ConcatFeat,
}

/// Dataset hooks shared by every training entry point.
pub struct TrainContext<'a> {
    pub records: &'a [PlaceRecord],
    pub store: &'a ImageStore,
    pub gt_cfg: &'a GroundTruthConfig,
    pub mining: MiningMode,
}

/// One metrics-log row; validation recall appears on epoch-final rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    pub epoch: usize,
    pub loss_vpr: f64,
    pub loss_kd: f64,
    pub loss_total: f64,
    pub lr: f64,
    pub val_recall5: Option<f64>,
}

pub struct TrainOutcome {
    pub model: CheckpointModel,
    pub metrics: Vec<MetricsRow>,
    /// Mean total loss per optimization step, in order.
    pub step_losses: Vec<f64>,
    /// Number of teacher forward passes performed (stage II only).
    pub teacher_forward_count: usize,
    pub best_val_recall5: Option<f64>,
}

trait TrainableModel {
    /// Retrieval descriptors under the current parameters, keyed by id.
    fn descriptor_map(&self, store: &ImageStore, ids: &[String]) -> Result<HashMap<String, Vec<f64>>>;
    /// One AdamW step over a batch of triplets; returns the mean loss.
    fn batch_step(&mut self, store: &ImageStore, triplets: &[Triplet], margin: f64, lr: f64) -> Result<LossParts>;
    fn snapshot(&self) -> CheckpointModel;
}

// ---------------------------------------------------------------------------
// single-tower models (stage I branches, concat-input baseline)

struct SingleTower {
    kind: ModelKind,
    input: InputKind,
    params: BackboneParams,
    opt: AdamW,
}

impl SingleTower {
    fn new(kind: ModelKind, input: InputKind, params: BackboneParams, weight_decay: f64) -> Self {
        let opt = AdamW::new(params.num_params(), weight_decay);
        Self {
            kind,
            input,
            params,
            opt,
        }
    }
}

fn tower_descriptors(
    params: &BackboneParams,
    input: InputKind,
    store: &ImageStore,
    ids: &[String],
) -> Result<HashMap<String, Vec<f64>>> {
    let descs: Vec<(String, Vec<f64>)> = ids
        .par_iter()
        .map(|id| {
            let tensor = store.input_for(input, id)?;
            let (desc, _) = mc_aggregate(&forward(params, &tensor)?, &DEFAULT_LEVELS)?;
            Ok((id.clone(), desc))
        })
        .collect::<Result<_>>()?;
    Ok(descs.into_iter().collect())
}

fn apply_adamw(params: &mut BackboneParams, grads: &BackboneGrads, opt: &mut AdamW, lr: f64) {
    let mut flat = params.flatten();
    opt.step(&mut flat, &grads.flatten(), lr);
    params.set_from_flat(&flat);
}

impl TrainableModel for SingleTower {
    fn descriptor_map(&self, store: &ImageStore, ids: &[String]) -> Result<HashMap<String, Vec<f64>>> {
        tower_descriptors(&self.params, self.input, store, ids)
    }

    fn batch_step(&mut self, store: &ImageStore, triplets: &[Triplet], margin: f64, lr: f64) -> Result<LossParts> {
        let results: Vec<(LossParts, BackboneGrads)> = triplets
            .par_iter()
            .map(|t| {
                let q = store.input_for(self.input, &t.pair.query_id)?;
                let p = store.input_for(self.input, &t.pair.positive_id)?;
                let n = store.input_for(self.input, &t.negative_id)?;
                let inputs = TripletInputs { q: &q, p: &p, n: &n };
                let (parts, grads, _) = triplet_total_backward(&self.params, &inputs, margin, None)?;
                Ok((parts, grads))
            })
            .collect::<Result<_>>()?;

        let scale = 1.0 / triplets.len() as f64;
        let mut parts = LossParts::default();
        let mut grads = self.params.zeros_like();
        for (p, g) in &results {
            parts.add(p);
            grads.add_assign(g);
        }
        parts.scale(scale);
        grads.scale(scale);
        apply_adamw(&mut self.params, &grads, &mut self.opt, lr);
        Ok(parts)
    }

    fn snapshot(&self) -> CheckpointModel {
        CheckpointModel {
            kind: self.kind,
            backbone: self.params.clone(),
            second: None,
            transform: None,
        }
    }
}

// ---------------------------------------------------------------------------
// stage II student

struct StudentModel {
    params: BackboneParams,
    transform: Transformation,
    opt_backbone: AdamW,
    opt_transform: AdamW,
    teacher_descs: HashMap<String, Vec<f64>>,
    weights: WeightTable,
}

impl StudentModel {
    fn teacher_desc(&self, id: &str) -> Result<&[f64]> {
        self.teacher_descs
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Training(format!("no teacher descriptor for record '{id}'")))
    }
}

impl TrainableModel for StudentModel {
    fn descriptor_map(&self, store: &ImageStore, ids: &[String]) -> Result<HashMap<String, Vec<f64>>> {
        tower_descriptors(&self.params, InputKind::Rgb, store, ids)
    }

    fn batch_step(&mut self, store: &ImageStore, triplets: &[Triplet], margin: f64, lr: f64) -> Result<LossParts> {
        let results: Vec<(LossParts, BackboneGrads, Option<Transformation>)> = triplets
            .par_iter()
            .map(|t| {
                let phi = self.weights.get(&t.pair)?;
                let q = store.rgb(&t.pair.query_id)?;
                let p = store.rgb(&t.pair.positive_id)?;
                let n = store.rgb(&t.negative_id)?;
                let inputs = TripletInputs { q, p, n };
                if phi > 0.0 {
                    let targets = KdTargets {
                        q: self.teacher_desc(&t.pair.query_id)?,
                        p: self.teacher_desc(&t.pair.positive_id)?,
                        n: self.teacher_desc(&t.negative_id)?,
                        phi,
                    };
                    triplet_total_backward(&self.params, &inputs, margin, Some((&self.transform, &targets)))
                } else {
                    triplet_total_backward(&self.params, &inputs, margin, None)
                }
            })
            .collect::<Result<_>>()?;

        let scale = 1.0 / triplets.len() as f64;
        let mut parts = LossParts::default();
        let mut grads = self.params.zeros_like();
        let mut t_grads = Transformation::zeros(
            self.transform.in_dim,
            self.transform.out_dim,
            self.transform.bias.is_some(),
        );
        for (p, g, tg) in &results {
            parts.add(p);
            grads.add_assign(g);
            if let Some(tg) = tg {
                t_grads.add_assign(tg);
            }
        }
        parts.scale(scale);
        grads.scale(scale);
        t_grads.scale(scale);

        apply_adamw(&mut self.params, &grads, &mut self.opt_backbone, lr);
        let mut flat = self.transform.flatten();
        self.opt_transform.step(&mut flat, &t_grads.flatten(), lr);
        self.transform.set_from_flat(&flat);
        Ok(parts)
    }

    fn snapshot(&self) -> CheckpointModel {
        CheckpointModel {
            kind: ModelKind::Student,
            backbone: self.params.clone(),
            second: None,
            transform: Some(self.transform.clone()),
        }
    }
}

// ---------------------------------------------------------------------------
// concat-feat baseline: two towers, summed losses, fused descriptor

struct TwoTower {
    rgb: BackboneParams,
    seg: BackboneParams,
    opt_rgb: AdamW,
    opt_seg: AdamW,
}

impl TrainableModel for TwoTower {
    fn descriptor_map(&self, store: &ImageStore, ids: &[String]) -> Result<HashMap<String, Vec<f64>>> {
        let descs: Vec<(String, Vec<f64>)> = ids
            .par_iter()
            .map(|id| {
                let rgb_in = store.input_for(InputKind::Rgb, id)?;
                let seg_in = store.input_for(InputKind::Seg, id)?;
                let (mut d, _) = mc_aggregate(&forward(&self.rgb, &rgb_in)?, &DEFAULT_LEVELS)?;
                let (d2, _) = mc_aggregate(&forward(&self.seg, &seg_in)?, &DEFAULT_LEVELS)?;
                d.extend_from_slice(&d2);
                Ok((id.clone(), l2_normalize(&d)))
            })
            .collect::<Result<_>>()?;
        Ok(descs.into_iter().collect())
    }

    fn batch_step(&mut self, store: &ImageStore, triplets: &[Triplet], margin: f64, lr: f64) -> Result<LossParts> {
        // the joint loss is the direct sum of the two towers' triplet losses
        let results: Vec<(LossParts, BackboneGrads, BackboneGrads)> = triplets
            .par_iter()
            .map(|t| {
                let ids = [&t.pair.query_id, &t.pair.positive_id, &t.negative_id];
                let rgb_in: Vec<_> = ids
                    .iter()
                    .map(|id| store.input_for(InputKind::Rgb, id))
                    .collect::<Result<_>>()?;
                let seg_in: Vec<_> = ids
                    .iter()
                    .map(|id| store.input_for(InputKind::Seg, id))
                    .collect::<Result<_>>()?;
                let (rgb_parts, rgb_grads, _) = triplet_total_backward(
                    &self.rgb,
                    &TripletInputs { q: &rgb_in[0], p: &rgb_in[1], n: &rgb_in[2] },
                    margin,
                    None,
                )?;
                let (seg_parts, seg_grads, _) = triplet_total_backward(
                    &self.seg,
                    &TripletInputs { q: &seg_in[0], p: &seg_in[1], n: &seg_in[2] },
                    margin,
                    None,
                )?;
                let parts = LossParts {
                    total: rgb_parts.total + seg_parts.total,
                    vpr: rgb_parts.vpr + seg_parts.vpr,
                    kd: 0.0,
                };
                Ok((parts, rgb_grads, seg_grads))
            })
            .collect::<Result<_>>()?;

        let scale = 1.0 / triplets.len() as f64;
        let mut parts = LossParts::default();
        let mut rgb_grads = self.rgb.zeros_like();
        let mut seg_grads = self.seg.zeros_like();
        for (p, rg, sg) in &results {
            parts.add(p);
            rgb_grads.add_assign(rg);
            seg_grads.add_assign(sg);
        }
        parts.scale(scale);
        rgb_grads.scale(scale);
        seg_grads.scale(scale);
        apply_adamw(&mut self.rgb, &rgb_grads, &mut self.opt_rgb, lr);
        apply_adamw(&mut self.seg, &seg_grads, &mut self.opt_seg, lr);
        Ok(parts)
    }

    fn snapshot(&self) -> CheckpointModel {
        CheckpointModel {
            kind: ModelKind::ConcatFeat,
            backbone: self.rgb.clone(),
            second: Some(self.seg.clone()),
            transform: None,
        }
    }
}

// ---------------------------------------------------------------------------
// the shared loop

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sorted_ids(records: &[PlaceRecord], split: Split) -> Vec<String> {
    let mut ids: Vec<String> = records
        .iter()
        .filter(|r| r.split == split)
        .map(|r| r.id.clone())
        .collect();
    ids.sort();
    ids
}

/// Validation Recall@5 from a descriptor map.
fn recall5(
    descs: &HashMap<String, Vec<f64>>,
    db_ids: &[String],
    query_ids: &[String],
    gt: &GroundTruth,
) -> f64 {
    let mut hits = 0usize;
    let mut evaluated = 0usize;
    for q in query_ids {
        let positives = match gt.get(q) {
            Some(set) if !set.is_empty() => set,
            _ => continue,
        };
        evaluated += 1;
        let qd = &descs[q];
        let mut scored: Vec<(f64, &str)> = db_ids
            .iter()
            .map(|id| (l2_distance(qd, &descs[id]), id.as_str()))
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(b.1)));
        if scored.iter().take(5).any(|(_, id)| positives.contains(*id)) {
            hits += 1;
        }
    }
    if evaluated == 0 {
        0.0
    } else {
        hits as f64 / evaluated as f64
    }
}

/// Deterministic train/validation split over the query ids: shuffle by
/// seed, take the validation fraction, return both sorted.
pub fn train_val_split(records: &[PlaceRecord], seed: u64, val_fraction: f64) -> (Vec<String>, Vec<String>) {
    let mut query_ids = sorted_ids(records, Split::Query);
    let mut split_rng = seeded(seed, STREAM_VAL_SPLIT);
    query_ids.shuffle(&mut split_rng);
    let n_val = (val_fraction * query_ids.len() as f64).round() as usize;
    let mut val_ids: Vec<String> = query_ids[..n_val].to_vec();
    let mut train_ids: Vec<String> = query_ids[n_val..].to_vec();
    val_ids.sort();
    train_ids.sort();
    (train_ids, val_ids)
}

/// The records a training run sees: the database plus train-split queries.
pub fn training_records(records: &[PlaceRecord], train_ids: &[String]) -> Vec<PlaceRecord> {
    let train_set: BTreeSet<&str> = train_ids.iter().map(String::as_str).collect();
    records
        .iter()
        .filter(|r| r.split == Split::Database || train_set.contains(r.id.as_str()))
        .cloned()
        .collect()
}

/// The exact pair set a fov-mined training run optimizes over — the set a
/// partition table must cover.
pub fn fov_training_pairs(ctx: &TrainContext, cfg: &StageConfig) -> Result<Vec<SamplePair>> {
    let (train_ids, _) = train_val_split(ctx.records, cfg.seed, cfg.val_fraction);
    let train_records = training_records(ctx.records, &train_ids);
    mine_positives(&train_records, ctx.gt_cfg, MiningMode::FovBest, None)
}

fn run_loop<M: TrainableModel>(
    mut model: M,
    ctx: &TrainContext,
    cfg: &StageConfig,
    data_stream: u64,
    teacher_forward_count: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let gt = ground_truth_sets(ctx.records, ctx.gt_cfg)?;

    let (train_ids, val_ids) = train_val_split(ctx.records, cfg.seed, cfg.val_fraction);
    if cfg.model_selection == ModelSelection::BestValRecall5 && val_ids.is_empty() {
        return Err(Error::Config(
            "model selection by validation recall requires a non-empty validation split".into(),
        ));
    }
    if train_ids.is_empty() {
        return Err(Error::Config("no training queries left after the validation split".into()));
    }
    let train_records = training_records(ctx.records, &train_ids);

    let db_ids = sorted_ids(ctx.records, Split::Database);
    let mut all_ids = db_ids.clone();
    all_ids.extend(sorted_ids(ctx.records, Split::Query));
    all_ids.sort();

    // with fov_best mining the pair set is fixed across epochs
    let fixed_pairs = match ctx.mining {
        MiningMode::FovBest => Some(mine_positives(&train_records, ctx.gt_cfg, MiningMode::FovBest, None)?),
        MiningMode::Weak => None,
    };
    let n_pairs = match &fixed_pairs {
        Some(p) => p.len(),
        None => train_ids.iter().filter(|q| gt.get(*q).map_or(false, |s| !s.is_empty())).count(),
    };
    if n_pairs == 0 {
        return Err(Error::Training("no trainable pairs (all ground-truth sets empty)".into()));
    }
    let steps_per_epoch = n_pairs.div_ceil(cfg.batch_triplets);
    let total_steps = cfg.epochs * steps_per_epoch;

    let mut data_rng = seeded(cfg.seed, data_stream);
    let mut metrics = Vec::new();
    let mut step_losses = Vec::new();
    let mut global_step = 0usize;
    let mut best: Option<(f64, CheckpointModel)> = None;

    let mut descs = model.descriptor_map(ctx.store, &all_ids)?;

    for epoch in 0..cfg.epochs {
        let provider = |r: &PlaceRecord| -> Result<Vec<f64>> {
            descs
                .get(&r.id)
                .cloned()
                .ok_or_else(|| Error::Training(format!("no cached descriptor for '{}'", r.id)))
        };
        let pairs: Vec<SamplePair> = match &fixed_pairs {
            Some(p) => p.clone(),
            None => mine_positives(&train_records, ctx.gt_cfg, MiningMode::Weak, Some(&provider))?,
        };

        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut data_rng);

        for chunk in order.chunks(cfg.batch_triplets) {
            let mut triplets = Vec::with_capacity(chunk.len() * cfg.negatives_per_triplet);
            for &pi in chunk {
                let pair = &pairs[pi];
                let negs = sample_negatives(
                    &pair.query_id,
                    &train_records,
                    &gt,
                    cfg.negatives_per_triplet,
                    &provider,
                    cfg.negative_pool,
                    &mut data_rng,
                )?;
                if negs.exhausted {
                    log::warn!(
                        "query '{}' has fewer than {} negatives",
                        pair.query_id,
                        cfg.negatives_per_triplet
                    );
                }
                for negative_id in negs.ids {
                    triplets.push(Triplet {
                        pair: pair.clone(),
                        negative_id,
                    });
                }
            }
            if triplets.is_empty() {
                continue;
            }
            let lr = cosine_lr(cfg.lr, global_step, total_steps);
            let parts = model.batch_step(ctx.store, &triplets, cfg.margin, lr)?;
            metrics.push(MetricsRow {
                step: global_step,
                epoch,
                loss_vpr: parts.vpr,
                loss_kd: parts.kd,
                loss_total: parts.total,
                lr,
                val_recall5: None,
            });
            step_losses.push(parts.total);
            global_step += 1;
        }

        // refresh descriptors: validation for this epoch, mining for the next
        descs = model.descriptor_map(ctx.store, &all_ids)?;
        if !val_ids.is_empty() {
            let r5 = recall5(&descs, &db_ids, &val_ids, &gt);
            if let Some(row) = metrics.last_mut() {
                row.val_recall5 = Some(r5);
            }
            let improved = best.as_ref().map_or(true, |(b, _)| r5 > *b);
            if improved {
                best = Some((r5, model.snapshot()));
            }
        }
    }

    let best_val_recall5 = best.as_ref().map(|(r, _)| *r);
    let model = match (cfg.model_selection, best) {
        (ModelSelection::BestValRecall5, Some((_, snapshot))) => snapshot,
        _ => model.snapshot(),
    };
    Ok(TrainOutcome {
        model,
        metrics,
        step_losses,
        teacher_forward_count,
        best_val_recall5,
    })
}

// ---------------------------------------------------------------------------
// public entry points

/// Stage I: pre-train one branch with the triplet VPR loss.
pub fn train_stage1(branch: BranchKind, ctx: &TrainContext, cfg: &StageConfig) -> Result<TrainOutcome> {
    let (kind, input, backbone_cfg, init_stream, data_stream) = match branch {
        BranchKind::Rgb => (
            ModelKind::Rgb,
            InputKind::Rgb,
            BackboneConfig::rgb_like(),
            STREAM_INIT_RGB,
            STREAM_DATA_RGB,
        ),
        BranchKind::Seg => (
            ModelKind::Seg,
            InputKind::Seg,
            BackboneConfig::seg_light(ctx.store.seg_channels()),
            STREAM_INIT_SEG,
            STREAM_DATA_SEG,
        ),
    };
    let params = BackboneParams::init(&backbone_cfg, &mut seeded(cfg.seed, init_stream));
    let tower = SingleTower::new(kind, input, params, cfg.weight_decay);
    run_loop(tower, ctx, cfg, data_stream, 0)
}

/// Stage II options beyond the shared stage config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Options {
    /// Give the transformation T a bias term.
    pub transform_bias: bool,
    /// Initialize the student from the stage-I rgb branch instead of
    /// random parameters.
    pub init_from_stage1: bool,
}

impl Default for Stage2Options {
    fn default() -> Self {
        Self {
            transform_bias: true,
            init_from_stage1: false,
        }
    }
}

/// Stage II: train the student under the total objective, distilling the
/// frozen seg teacher through per-pair weights.
pub fn train_stage2(
    ctx: &TrainContext,
    teacher: &CheckpointModel,
    weights: &WeightTable,
    cfg: &StageConfig,
    options: &Stage2Options,
    stage1_rgb: Option<&CheckpointModel>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if teacher.kind != ModelKind::Seg {
        return Err(Error::Config(format!(
            "stage II teacher must be a seg checkpoint, got {:?}",
            teacher.kind
        )));
    }

    let student_cfg = BackboneConfig::rgb_like();
    let params = if options.init_from_stage1 {
        let source = stage1_rgb.ok_or_else(|| {
            Error::Config("init_from_stage1 requires the stage-I rgb checkpoint".into())
        })?;
        if source.backbone.config != student_cfg {
            return Err(Error::Config("stage-I rgb checkpoint has a different architecture".into()));
        }
        source.backbone.clone()
    } else {
        BackboneParams::init(&student_cfg, &mut seeded(cfg.seed, STREAM_INIT_RGB))
    };

    let student_dim = student_cfg.descriptor_dim(&DEFAULT_LEVELS);
    let teacher_dim = teacher.backbone.config.descriptor_dim(&DEFAULT_LEVELS);
    let transform = Transformation::init(
        student_dim,
        teacher_dim,
        options.transform_bias,
        &mut seeded(cfg.seed, STREAM_INIT_TRANSFORM),
    );

    // the teacher is frozen: its descriptors are computed once and cached
    let mut teacher_descs = HashMap::new();
    let mut teacher_forwards = 0usize;
    if !weights.all_zero() {
        let all_ids = {
            let mut ids = sorted_ids(ctx.records, Split::Database);
            ids.extend(sorted_ids(ctx.records, Split::Query));
            ids.sort();
            ids
        };
        let counter = AtomicUsize::new(0);
        let descs: Vec<(String, Vec<f64>)> = all_ids
            .par_iter()
            .map(|id| {
                counter.fetch_add(1, Ordering::Relaxed);
                Ok((id.clone(), descriptor_for(teacher, ctx.store, id)?))
            })
            .collect::<Result<_>>()?;
        teacher_descs = descs.into_iter().collect();
        teacher_forwards = counter.into_inner();
    }

    let opt_backbone = AdamW::new(params.num_params(), cfg.weight_decay);
    let opt_transform = AdamW::new(transform.num_params(), cfg.weight_decay);
    let student = StudentModel {
        params,
        transform,
        opt_backbone,
        opt_transform,
        teacher_descs,
        weights: weights.clone(),
    };
    run_loop(student, ctx, cfg, STREAM_DATA_RGB, teacher_forwards)
}

/// Fusion baselines: a single 3+C-channel tower, or two towers with
/// concatenated descriptors.
pub fn train_baseline(mode: BaselineMode, ctx: &TrainContext, cfg: &StageConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    match mode {
        BaselineMode::ConcatInput => {
            let backbone_cfg = BackboneConfig {
                input_channels: 3 + ctx.store.seg_channels(),
                ..BackboneConfig::rgb_like()
            };
            let params = BackboneParams::init(&backbone_cfg, &mut seeded(cfg.seed, STREAM_INIT_BASELINE));
            let tower = SingleTower::new(ModelKind::ConcatInput, InputKind::ConcatInput, params, cfg.weight_decay);
            run_loop(tower, ctx, cfg, STREAM_DATA_BASELINE, 0)
        }
        BaselineMode::ConcatFeat => {
            let rgb_cfg = BackboneConfig::rgb_like();
            let seg_cfg = BackboneConfig::seg_light(ctx.store.seg_channels());
            let rgb = BackboneParams::init(&rgb_cfg, &mut seeded(cfg.seed, STREAM_INIT_BASELINE));
            let seg = BackboneParams::init(&seg_cfg, &mut seeded(cfg.seed, STREAM_INIT_BASELINE2));
            let model = TwoTower {
                opt_rgb: AdamW::new(rgb.num_params(), cfg.weight_decay),
                opt_seg: AdamW::new(seg.num_params(), cfg.weight_decay),
                rgb,
                seg,
            };
            run_loop(model, ctx, cfg, STREAM_DATA_BASELINE, 0)
        }
    }
}
