//! End-to-end pipeline orchestration: dataset → stage-I branches →
//! partition → weighted distillation → Recall@N report.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MiningChoice};
use crate::data::ImageStore;
use crate::dataset::{
    ground_truth_sets, load_manifest, synth_generate, GroundTruthConfig, PlaceRecord, Split,
    SynthMeta,
};
use crate::error::{Error, Result};
use crate::eval::{build_index, recall_at_n, RecallReport, RetrievalIndex};
use crate::extract::{descriptor_map, descriptors_for};
use crate::model::{file_digest, load_checkpoint, save_checkpoint, CheckpointModel};
use crate::partition::{compute_rankings, partition, save_partition, PartitionTable, RankBranch};
use crate::slme::SlmeScheme;
use crate::dataset::MiningMode;
use crate::training::{
    fov_training_pairs, train_stage1, train_stage2, BranchKind, MetricsRow, Stage2Options,
    TrainContext, TrainOutcome, WeightScheme, WeightTable,
};

/// Recall over all queries plus the corrupted/clean splits when the
/// dataset carries generation metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub weight_scheme: String,
    pub pair_count: usize,
    pub group_counts: [usize; 4],
    pub recall: RecallReport,
    pub recall_corrupted: Option<RecallReport>,
    pub recall_clean: Option<RecallReport>,
}

impl ExperimentReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub struct ExperimentArtifacts {
    pub report: ExperimentReport,
    pub report_path: PathBuf,
    pub student_ckpt: PathBuf,
}

fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "epoch", "loss_vpr", "loss_kd", "loss_total", "lr", "val_recall5"])?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            format!("{}", r.loss_vpr),
            format!("{}", r.loss_kd),
            format!("{}", r.loss_total),
            format!("{}", r.lr),
            r.val_recall5.map(|v| format!("{v}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn mining_mode(choice: MiningChoice) -> MiningMode {
    match choice {
        MiningChoice::FovBest => MiningMode::FovBest,
        MiningChoice::Weak => MiningMode::Weak,
    }
}

/// Loads (or generates) the dataset named by the config.
pub fn prepare_dataset(cfg: &ExperimentConfig) -> Result<(PathBuf, Vec<PlaceRecord>, Option<SynthMeta>)> {
    let data_dir = cfg.data_dir();
    match (&cfg.dataset.manifest, &cfg.dataset.synth) {
        (Some(manifest), None) => {
            let records = load_manifest(manifest)?;
            let base = manifest
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."));
            let meta = read_synth_meta(&base);
            Ok((base, records, meta))
        }
        (None, Some(synth)) => {
            let mut synth = synth.clone();
            synth.seed = cfg.seed;
            let manifest_path = data_dir.join("manifest.csv");
            if cfg.reuse_stage1 && manifest_path.exists() {
                let records = load_manifest(&manifest_path)?;
                let meta = read_synth_meta(&data_dir);
                return Ok((data_dir, records, meta));
            }
            std::fs::create_dir_all(&data_dir)?;
            let out = synth_generate(&synth, &data_dir)?;
            Ok((data_dir, out.records, Some(out.meta)))
        }
        _ => Err(Error::Config("dataset section needs exactly one source".into())),
    }
}

fn read_synth_meta(dir: &Path) -> Option<SynthMeta> {
    let path = dir.join("synth_meta.json");
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

struct Stage1Artifacts {
    rgb_ckpt: PathBuf,
    seg_ckpt: PathBuf,
    partition_path: PathBuf,
}

/// Trains (or reuses) both stage-I branches and the offline partition.
fn ensure_stage1(
    cfg: &ExperimentConfig,
    ctx: &TrainContext,
) -> Result<Stage1Artifacts> {
    let dir = cfg.stage1_dir();
    std::fs::create_dir_all(&dir)?;
    let rgb_ckpt = dir.join("stage1_rgb.ckpt");
    let seg_ckpt = dir.join("stage1_seg.ckpt");
    let partition_path = dir.join("partition.csv");
    let stage1_cfg = cfg.stage1_with_seed();

    let have_all = rgb_ckpt.exists() && seg_ckpt.exists() && partition_path.exists();
    if !(cfg.reuse_stage1 && have_all) {
        let rgb = train_stage1(BranchKind::Rgb, ctx, &stage1_cfg)?;
        save_checkpoint(&rgb.model, &rgb_ckpt)?;
        write_metrics_csv(&rgb.metrics, &dir.join("stage1_rgb_metrics.csv"))?;

        let seg = train_stage1(BranchKind::Seg, ctx, &stage1_cfg)?;
        save_checkpoint(&seg.model, &seg_ckpt)?;
        write_metrics_csv(&seg.metrics, &dir.join("stage1_seg_metrics.csv"))?;

        // offline partition over the exact stage-II training pairs,
        // using the saved checkpoints
        let pairs = fov_training_pairs(ctx, &stage1_cfg)?;
        let rgb_model = load_checkpoint(&rgb_ckpt)?;
        let seg_model = load_checkpoint(&seg_ckpt)?;
        let table = build_partition(cfg, ctx, &pairs, &seg_model, &rgb_model)?;
        save_partition(
            &table,
            &file_digest(&seg_ckpt)?,
            &file_digest(&rgb_ckpt)?,
            &partition_path,
        )?;
    }
    Ok(Stage1Artifacts {
        rgb_ckpt,
        seg_ckpt,
        partition_path,
    })
}

fn build_partition(
    cfg: &ExperimentConfig,
    ctx: &TrainContext,
    pairs: &[crate::dataset::SamplePair],
    seg_model: &CheckpointModel,
    rgb_model: &CheckpointModel,
) -> Result<PartitionTable> {
    let all_ids: Vec<String> = {
        let mut ids: Vec<String> = ctx.records.iter().map(|r| r.id.clone()).collect();
        ids.sort();
        ids
    };
    let seg_descs = descriptor_map(seg_model, ctx.store, &all_ids)?;
    let rgb_descs = descriptor_map(rgb_model, ctx.store, &all_ids)?;
    let seg_provider = |r: &PlaceRecord| -> Result<Vec<f64>> { Ok(seg_descs[&r.id].clone()) };
    let rgb_provider = |r: &PlaceRecord| -> Result<Vec<f64>> { Ok(rgb_descs[&r.id].clone()) };
    let seg_ranking = compute_rankings(ctx.records, pairs, RankBranch::Seg, &seg_provider)?;
    let rgb_ranking = compute_rankings(ctx.records, pairs, RankBranch::Rgb, &rgb_provider)?;
    partition(&seg_ranking, &rgb_ranking, &cfg.partition)
}

/// Recall over a subset of query records (used for corrupted/clean splits).
fn subset_recall(
    index: &RetrievalIndex,
    queries: &[(String, Vec<f64>)],
    subset: &BTreeSet<String>,
    gt: &crate::dataset::GroundTruth,
    gt_cfg: &GroundTruthConfig,
    ns: &[usize],
) -> Result<Option<RecallReport>> {
    let filtered: Vec<(String, Vec<f64>)> = queries
        .iter()
        .filter(|(id, _)| subset.contains(id))
        .cloned()
        .collect();
    if filtered.is_empty() {
        return Ok(None);
    }
    Ok(Some(recall_at_n(index, &filtered, gt, gt_cfg, ns)?))
}

/// Evaluates a checkpoint over a manifest: index the database split,
/// extract query descriptors, report Recall@N.
pub fn evaluate_model(
    model: &CheckpointModel,
    model_digest: &str,
    store: &ImageStore,
    records: &[PlaceRecord],
    gt_cfg: &GroundTruthConfig,
    ns: &[usize],
) -> Result<(RecallReport, RetrievalIndex, Vec<(String, Vec<f64>)>)> {
    let index = build_index(model, store, records, model_digest)?;
    let mut query_ids: Vec<String> = records
        .iter()
        .filter(|r| r.split == Split::Query)
        .map(|r| r.id.clone())
        .collect();
    query_ids.sort();
    let descs = descriptors_for(model, store, &query_ids)?;
    let queries: Vec<(String, Vec<f64>)> = query_ids.into_iter().zip(descs).collect();
    let gt = ground_truth_sets(records, gt_cfg)?;
    let report = recall_at_n(&index, &queries, &gt, gt_cfg, ns)?;
    Ok((report, index, queries))
}

/// Runs the full pipeline for one weighting scheme. Writes checkpoints,
/// metrics logs, the partition, and the recall reports under the
/// configured directories.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentArtifacts> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.run_dir)?;
    std::fs::write(
        cfg.run_dir.join("config.json"),
        serde_json::to_string_pretty(cfg)?,
    )?;

    let (base_dir, records, synth_meta) = prepare_dataset(cfg)?;
    let scheme = SlmeScheme::resolve(&cfg.slme.scheme)?;
    let store = ImageStore::load(&base_dir, &records, &scheme, cfg.dataset.resize)?;
    let ctx = TrainContext {
        records: &records,
        store: &store,
        gt_cfg: &cfg.dataset.ground_truth,
        mining: mining_mode(cfg.dataset.mining),
    };

    let weight_scheme = WeightScheme::parse(&cfg.stage2.weight_scheme, cfg.partition)?;
    if ctx.mining == MiningMode::Weak && !weight_scheme.is_disabled() {
        return Err(Error::Config(
            "the distillation pipeline requires fov_best mining so the offline partition covers \
             the training pairs"
                .into(),
        ));
    }

    let stage1 = ensure_stage1(cfg, &ctx)?;

    // stage II
    let teacher = load_checkpoint(&stage1.seg_ckpt)?;
    let rgb_model = load_checkpoint(&stage1.rgb_ckpt)?;
    let loaded = crate::partition::load_partition(
        &stage1.partition_path,
        Some((&file_digest(&stage1.seg_ckpt)?, &file_digest(&stage1.rgb_ckpt)?)),
        cfg.eval.strict_provenance,
    )?;
    let weights = WeightTable::from_partition(&loaded.table, &weight_scheme);
    let stage2_cfg = cfg.stage2_with_seed();
    let options = Stage2Options {
        transform_bias: cfg.model.transform_bias,
        init_from_stage1: cfg.stage2.init_from_stage1,
    };
    let outcome: TrainOutcome = train_stage2(
        &ctx,
        &teacher,
        &weights,
        &stage2_cfg,
        &options,
        Some(&rgb_model),
    )?;
    let student_ckpt = cfg.run_dir.join("stage2.ckpt");
    save_checkpoint(&outcome.model, &student_ckpt)?;
    write_metrics_csv(&outcome.metrics, &cfg.run_dir.join("stage2_metrics.csv"))?;

    // evaluation through the saved checkpoint
    let student = load_checkpoint(&student_ckpt)?;
    let digest = file_digest(&student_ckpt)?;
    let (recall, index, queries) =
        evaluate_model(&student, &digest, &store, &records, &cfg.dataset.ground_truth, &cfg.eval.recall_ns)?;
    recall.save_json(&cfg.run_dir.join("report.json"))?;
    recall.save_csv(&cfg.run_dir.join("report.csv"))?;

    let gt = ground_truth_sets(&records, &cfg.dataset.ground_truth)?;
    let (recall_corrupted, recall_clean) = match &synth_meta {
        Some(meta) => {
            let corrupted: BTreeSet<String> = meta
                .records
                .iter()
                .filter(|m| m.corrupted)
                .map(|m| m.id.clone())
                .collect();
            let clean: BTreeSet<String> = records
                .iter()
                .filter(|r| r.split == Split::Query && !corrupted.contains(&r.id))
                .map(|r| r.id.clone())
                .collect();
            (
                subset_recall(&index, &queries, &corrupted, &gt, &cfg.dataset.ground_truth, &cfg.eval.recall_ns)?,
                subset_recall(&index, &queries, &clean, &gt, &cfg.dataset.ground_truth, &cfg.eval.recall_ns)?,
            )
        }
        None => (None, None),
    };

    let report = ExperimentReport {
        seed: cfg.seed,
        weight_scheme: cfg.stage2.weight_scheme.clone(),
        pair_count: loaded.table.rows.len(),
        group_counts: loaded.table.group_counts(),
        recall,
        recall_corrupted,
        recall_clean,
    };
    let report_path = cfg.run_dir.join("experiment.json");
    report.save_json(&report_path)?;

    Ok(ExperimentArtifacts {
        report,
        report_path,
        student_ckpt,
    })
}
