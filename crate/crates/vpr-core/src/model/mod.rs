//! Descriptor models: five-stage convolutional backbones, multi-level
//! concatenation aggregation, and the student→teacher transformation.
//!
//! Backbones are a small parametric family (3×3 conv, stride, ReLU per
//! stage). Two presets fix the default widths so the rgb and seg branches
//! produce 448- and 480-dimensional descriptors respectively.

mod aggregate;
mod backbone;
mod checkpoint;
mod transform;

pub use aggregate::{
    mc_aggregate, mc_aggregate_backward, tagged_descriptor, AggregateTrace, BranchTag,
    GlobalDescriptor, DEFAULT_LEVELS,
};
pub use backbone::{backward, forward, BackboneGrads, FeaturePyramid};
pub use checkpoint::{
    file_digest, load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointModel,
    ModelKind, CHECKPOINT_VERSION,
};
pub use transform::Transformation;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Capacity presets for the two stage-I branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityPreset {
    /// Wider backbone for RGB inputs (descriptor dim 448 over levels 3–5).
    RgbLike,
    /// Lighter backbone for encoded label maps (descriptor dim 480).
    SegLight,
}

/// Architecture of a five-stage backbone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_channels: usize,
    pub stage_channels: [usize; 5],
    pub stage_strides: [usize; 5],
}

impl BackboneConfig {
    pub fn preset(preset: CapacityPreset, input_channels: usize) -> Self {
        let stage_channels = match preset {
            CapacityPreset::RgbLike => [16, 24, 32, 96, 320],
            CapacityPreset::SegLight => [8, 16, 24, 96, 360],
        };
        Self {
            input_channels,
            stage_channels,
            stage_strides: [2; 5],
        }
    }

    /// Default RGB branch: 3 input channels, descriptor dim 448.
    pub fn rgb_like() -> Self {
        Self::preset(CapacityPreset::RgbLike, 3)
    }

    /// Default seg branch over `c` encoded channels, descriptor dim 480.
    pub fn seg_light(c: usize) -> Self {
        Self::preset(CapacityPreset::SegLight, c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::Config("backbone needs at least one input channel".into()));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("stage widths must be positive".into()));
        }
        if self.stage_strides.iter().any(|&s| s == 0) {
            return Err(Error::Config("stage strides must be positive".into()));
        }
        Ok(())
    }

    /// Descriptor dimension over the given 1-indexed levels.
    pub fn descriptor_dim(&self, levels: &[usize]) -> usize {
        levels.iter().map(|&l| self.stage_channels[l - 1]).sum()
    }
}

/// One 3×3 convolution stage with bias, laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_c: usize,
    pub out_c: usize,
    pub stride: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_c: usize, out_c: usize, stride: usize) -> Self {
        Self {
            in_c,
            out_c,
            stride,
            weight: vec![0.0; out_c * in_c * 9],
            bias: vec![0.0; out_c],
        }
    }

    #[inline]
    pub fn weight_idx(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_c + ic) * 3 + ky) * 3 + kx
    }
}

/// All parameters of one backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub config: BackboneConfig,
    pub stages: Vec<ConvLayer>,
}

impl BackboneParams {
    /// He-style uniform initialization. Values are drawn as `f32` and
    /// widened, so a freshly initialized model survives the f32 checkpoint
    /// body without loss. Biases start slightly positive: with ReLU
    /// stages, a zero bias leaves dead receptive fields sitting exactly on
    /// the activation kink.
    pub fn init(config: &BackboneConfig, rng: &mut impl Rng) -> Self {
        let mut stages = Vec::with_capacity(5);
        let mut in_c = config.input_channels;
        for i in 0..5 {
            let out_c = config.stage_channels[i];
            let mut layer = ConvLayer::zeros(in_c, out_c, config.stage_strides[i]);
            let fan_in = (in_c * 9) as f64;
            let bound = (6.0 / fan_in).sqrt() as f32;
            for w in &mut layer.weight {
                *w = rng.gen_range(-bound..bound) as f64;
            }
            for b in &mut layer.bias {
                *b = 0.01f32 as f64;
            }
            stages.push(layer);
            in_c = out_c;
        }
        Self {
            config: config.clone(),
            stages,
        }
    }

    pub fn zeros_like(&self) -> BackboneGrads {
        BackboneGrads {
            stages: self
                .stages
                .iter()
                .map(|l| ConvLayer::zeros(l.in_c, l.out_c, l.stride))
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.stages.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters flattened in declared order (per stage: weight then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.stages {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut offset = 0;
        for l in &mut self.stages {
            let wl = l.weight.len();
            l.weight.copy_from_slice(&flat[offset..offset + wl]);
            offset += wl;
            let bl = l.bias.len();
            l.bias.copy_from_slice(&flat[offset..offset + bl]);
            offset += bl;
        }
    }
}
