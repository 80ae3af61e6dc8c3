//! The single JSON configuration document driving the pipeline.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{GroundTruthConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::partition::PartitionConfig;
use crate::training::StageConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningChoice {
    FovBest,
    Weak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    /// Existing manifest to train/evaluate on. Mutually exclusive with `synth`.
    pub manifest: Option<PathBuf>,
    /// Generate a synthetic dataset into the data directory.
    pub synth: Option<SynthConfig>,
    pub ground_truth: GroundTruthConfig,
    pub mining: MiningChoice,
    /// Resize every image to (height, width) before use.
    pub resize: Option<(usize, usize)>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            manifest: None,
            synth: Some(SynthConfig::default()),
            ground_truth: GroundTruthConfig::default(),
            mining: MiningChoice::FovBest,
            resize: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlmeSection {
    /// Preset name (`six_class`, `six_class_opposite`, `three_class`,
    /// `identity150`) or path to a scheme JSON file.
    pub scheme: String,
}

impl Default for SlmeSection {
    fn default() -> Self {
        Self {
            scheme: "six_class".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    /// Give the stage-II transformation a bias term.
    pub transform_bias: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { transform_bias: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Section {
    #[serde(flatten)]
    pub cfg: StageConfig,
    /// `eq4|eq7|const:w1,w2,w3,w4|proto|ones|none`.
    pub weight_scheme: String,
    /// Start the student from the stage-I rgb weights.
    pub init_from_stage1: bool,
}

impl Default for Stage2Section {
    fn default() -> Self {
        Self {
            cfg: StageConfig::default(),
            weight_scheme: "eq4".into(),
            init_from_stage1: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub recall_ns: Vec<usize>,
    /// Fail on provenance digest mismatches instead of warning.
    pub strict_provenance: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            recall_ns: vec![1, 5, 10],
            strict_provenance: false,
        }
    }
}

/// Everything the `experiment` subcommand needs, with overridable defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    pub run_dir: PathBuf,
    /// Where dataset files live or get generated (default `run_dir/data`).
    pub data_dir: Option<PathBuf>,
    /// Where stage-I checkpoints and the partition live (default `run_dir`).
    /// Point several scheme runs here to share one pre-training.
    pub stage1_dir: Option<PathBuf>,
    /// Load stage-I artifacts (and generated data) when already present.
    pub reuse_stage1: bool,
    pub dataset: DatasetSection,
    pub slme: SlmeSection,
    pub model: ModelSection,
    pub stage1: StageConfig,
    pub partition: PartitionConfig,
    pub stage2: Stage2Section,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            run_dir: PathBuf::from("runs/experiment"),
            data_dir: None,
            stage1_dir: None,
            reuse_stage1: false,
            dataset: DatasetSection::default(),
            slme: SlmeSection::default(),
            model: ModelSection::default(),
            stage1: StageConfig::default(),
            partition: PartitionConfig::default(),
            stage2: Stage2Section::default(),
            eval: EvalSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config '{}': {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config '{}': {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.manifest.is_some() && self.dataset.synth.is_some() {
            return Err(Error::Config(
                "dataset section must set either 'manifest' or 'synth', not both".into(),
            ));
        }
        if self.dataset.manifest.is_none() && self.dataset.synth.is_none() {
            return Err(Error::Config("dataset section needs 'manifest' or 'synth'".into()));
        }
        if let Some(synth) = &self.dataset.synth {
            synth.validate()?;
        }
        self.dataset.ground_truth.validate()?;
        self.partition.validate()?;
        self.stage1.validate()?;
        self.stage2.cfg.validate()?;
        if self.eval.recall_ns.is_empty() {
            return Err(Error::Config("eval.recall_ns must not be empty".into()));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.run_dir.join("data"))
    }

    pub fn stage1_dir(&self) -> PathBuf {
        self.stage1_dir.clone().unwrap_or_else(|| self.run_dir.clone())
    }

    /// Stage configs with the master seed applied.
    pub fn stage1_with_seed(&self) -> StageConfig {
        StageConfig {
            seed: self.seed,
            ..self.stage1.clone()
        }
    }

    pub fn stage2_with_seed(&self) -> StageConfig {
        StageConfig {
            seed: self.seed,
            ..self.stage2.cfg.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"seed": 7, "stage2": {"weight_scheme": "none"}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.stage2.weight_scheme, "none");
        assert_eq!(cfg.eval.recall_ns, vec![1, 5, 10]);
        assert_eq!(cfg.stage2.cfg.lr, 1e-4);
        cfg.validate().unwrap();
    }

    #[test]
    fn both_dataset_sources_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.manifest = Some("m.csv".into());
        assert!(cfg.validate().is_err());
    }
}
