//! Dataset manifests, pose-based ground truth, positive/negative mining,
//! and the synthetic scene generator.

mod geo;
mod manifest;
mod mining;
mod synth;

pub use geo::{fov_overlap_distance, fov_qualifies, ground_truth_sets, GroundTruthConfig, GtMode};
pub use manifest::{load_manifest, save_manifest, PlaceRecord, Pose, SamplePair, Split};
pub use mining::{mine_positives, sample_negatives, DescriptorFn, MiningMode, NegativeSample};
pub use synth::{load_label_map, synth_generate, SynthConfig, SynthMeta, SynthOutput, SynthRecordMeta};

/// Ground-truth sets keyed by query id; values are database ids.
pub type GroundTruth = std::collections::BTreeMap<String, std::collections::BTreeSet<String>>;
