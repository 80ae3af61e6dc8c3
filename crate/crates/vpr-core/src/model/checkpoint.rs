//! Versioned binary checkpoint container.
//!
//! Layout: 8-byte magic, u32 little-endian header length, a JSON header
//! (version, model kind, configs, tensor index), then the tensors as
//! little-endian `f32` in declared order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackboneConfig, BackboneParams, ConvLayer, Transformation};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"VPRCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// What a checkpoint contains, which decides how it is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Rgb,
    Seg,
    Student,
    ConcatInput,
    ConcatFeat,
}

impl ModelKind {
    /// Whether evaluation of this model needs segmentation inputs.
    pub fn needs_seg_at_eval(&self) -> bool {
        matches!(self, ModelKind::Seg | ModelKind::ConcatInput | ModelKind::ConcatFeat)
    }
}

/// A complete model as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointModel {
    pub kind: ModelKind,
    pub backbone: BackboneParams,
    /// Second tower for the concat_feat baseline.
    pub second: Option<BackboneParams>,
    /// Student→teacher transformation, kept for resuming stage II.
    pub transform: Option<Transformation>,
}

#[derive(Serialize, Deserialize)]
struct TransformMeta {
    in_dim: usize,
    out_dim: usize,
    bias: bool,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: ModelKind,
    backbone: BackboneConfig,
    second_backbone: Option<BackboneConfig>,
    transform: Option<TransformMeta>,
    tensors: Vec<TensorMeta>,
}

fn backbone_tensors<'a>(prefix: &str, params: &'a BackboneParams) -> Vec<(String, &'a [f64])> {
    let mut out = Vec::new();
    for (i, layer) in params.stages.iter().enumerate() {
        out.push((format!("{prefix}stage{i}.weight"), layer.weight.as_slice()));
        out.push((format!("{prefix}stage{i}.bias"), layer.bias.as_slice()));
    }
    out
}

/// Saves the model; tensors are downcast to `f32` per the container format.
pub fn save_checkpoint(model: &CheckpointModel, path: &Path) -> Result<()> {
    let mut tensors = backbone_tensors("", &model.backbone);
    if let Some(second) = &model.second {
        tensors.extend(backbone_tensors("second.", second));
    }
    if let Some(t) = &model.transform {
        tensors.push(("transform.weight".into(), t.weight.as_slice()));
        if let Some(b) = &t.bias {
            tensors.push(("transform.bias".into(), b.as_slice()));
        }
    }

    let header = Header {
        version: CHECKPOINT_VERSION,
        kind: model.kind,
        backbone: model.backbone.config.clone(),
        second_backbone: model.second.as_ref().map(|p| p.config.clone()),
        transform: model.transform.as_ref().map(|t| TransformMeta {
            in_dim: t.in_dim,
            out_dim: t.out_dim,
            bias: t.bias.is_some(),
        }),
        tensors: tensors
            .iter()
            .map(|(name, data)| TensorMeta {
                name: name.clone(),
                len: data.len(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_json.len() as u32).to_le_bytes())?;
    w.write_all(&header_json)?;
    for (_, data) in &tensors {
        for &v in *data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_vec(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn take_tensor(body: &mut impl Read, meta: &TensorMeta) -> Result<Vec<f64>> {
    let bytes = read_exact_vec(body, meta.len * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn rebuild_backbone(
    config: &BackboneConfig,
    prefix: &str,
    metas: &[TensorMeta],
    cursor: &mut usize,
    body: &mut impl Read,
) -> Result<BackboneParams> {
    config.validate()?;
    let mut stages = Vec::with_capacity(5);
    let mut in_c = config.input_channels;
    for i in 0..5 {
        let out_c = config.stage_channels[i];
        let mut layer = ConvLayer::zeros(in_c, out_c, config.stage_strides[i]);
        for (suffix, slot, expect_len) in [
            ("weight", 0usize, out_c * in_c * 9),
            ("bias", 1, out_c),
        ] {
            let meta = metas
                .get(*cursor)
                .ok_or_else(|| Error::Format("tensor index shorter than expected".into()))?;
            let want = format!("{prefix}stage{i}.{suffix}");
            if meta.name != want || meta.len != expect_len {
                return Err(Error::Format(format!(
                    "tensor '{}' (len {}) where '{want}' (len {expect_len}) was expected",
                    meta.name, meta.len
                )));
            }
            let data = take_tensor(body, meta)?;
            if slot == 0 {
                layer.weight = data;
            } else {
                layer.bias = data;
            }
            *cursor += 1;
        }
        stages.push(layer);
        in_c = out_c;
    }
    Ok(BackboneParams {
        config: config.clone(),
        stages,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointModel> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact_vec(&mut r, 8)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint file", path.display())));
    }
    let len_bytes = read_exact_vec(&mut r, 4)?;
    let header_len = u32::from_le_bytes([len_bytes[0], len_bytes[1], len_bytes[2], len_bytes[3]]) as usize;
    let header: Header = serde_json::from_slice(&read_exact_vec(&mut r, header_len)?)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }

    let mut cursor = 0;
    let backbone = rebuild_backbone(&header.backbone, "", &header.tensors, &mut cursor, &mut r)?;
    let second = match &header.second_backbone {
        Some(cfg) => Some(rebuild_backbone(cfg, "second.", &header.tensors, &mut cursor, &mut r)?),
        None => None,
    };
    let transform = match &header.transform {
        Some(meta) => {
            let mut t = Transformation::zeros(meta.in_dim, meta.out_dim, meta.bias);
            let wmeta = header
                .tensors
                .get(cursor)
                .ok_or_else(|| Error::Format("missing transform.weight tensor".into()))?;
            if wmeta.name != "transform.weight" || wmeta.len != meta.out_dim * meta.in_dim {
                return Err(Error::Format("transform.weight tensor mismatch".into()));
            }
            t.weight = take_tensor(&mut r, wmeta)?;
            cursor += 1;
            if meta.bias {
                let bmeta = header
                    .tensors
                    .get(cursor)
                    .ok_or_else(|| Error::Format("missing transform.bias tensor".into()))?;
                if bmeta.name != "transform.bias" || bmeta.len != meta.out_dim {
                    return Err(Error::Format("transform.bias tensor mismatch".into()));
                }
                t.bias = Some(take_tensor(&mut r, bmeta)?);
                cursor += 1;
            }
            Some(t)
        }
        None => None,
    };

    if cursor != header.tensors.len() {
        return Err(Error::Format("unconsumed tensors in checkpoint".into()));
    }

    Ok(CheckpointModel {
        kind: header.kind,
        backbone,
        second,
        transform,
    })
}

/// Loads and verifies the main backbone architecture matches `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &BackboneConfig) -> Result<CheckpointModel> {
    let model = load_checkpoint(path)?;
    if &model.backbone.config != expected {
        return Err(Error::Format(format!(
            "checkpoint backbone {:?} does not match expected {:?}",
            model.backbone.config, expected
        )));
    }
    Ok(model)
}

/// SHA-256 of the file contents, hex-encoded. Used for provenance stamps.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut f, &mut hasher)?;
    Ok(format!("{:x}", hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, mc_aggregate, BackboneConfig, DEFAULT_LEVELS};
    use crate::tensor::Tensor3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fresh_model(kind: ModelKind, seed: u64) -> CheckpointModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CheckpointModel {
            kind,
            backbone: BackboneParams::init(&BackboneConfig::rgb_like(), &mut rng),
            second: None,
            transform: None,
        }
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        // freshly initialized parameters are f32-representable by construction
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = fresh_model(ModelKind::Rgb, 1);
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn quantized_round_trip_is_stable() {
        // after arbitrary f64 updates, one save/load quantizes; a second is exact
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = fresh_model(ModelKind::Rgb, 2);
        for w in &mut model.backbone.stages[0].weight {
            *w += 1.0 / 3.0;
        }
        save_checkpoint(&model, &path).unwrap();
        let once = load_checkpoint(&path).unwrap();
        save_checkpoint(&once, &path).unwrap();
        let twice = load_checkpoint(&path).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn wrong_config_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&fresh_model(ModelKind::Rgb, 3), &path).unwrap();
        let err = load_checkpoint_expecting(&path, &BackboneConfig::seg_light(6)).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&fresh_model(ModelKind::Rgb, 4), &path).unwrap();
        // bump the version field in place
        let mut bytes = std::fs::read(&path).unwrap();
        let needle = b"\"version\":1";
        let pos = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        bytes[pos + needle.len() - 1] = b'9';
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxx").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }

    #[test]
    fn loaded_model_descriptors_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = fresh_model(ModelKind::Rgb, 5);
        // perturb away from the f32 grid as training would
        for w in &mut model.backbone.stages[2].weight {
            *w *= 1.000000031;
        }
        save_checkpoint(&model, &path).unwrap();

        let input = Tensor3::from_fn(3, 24, 24, |c, y, x| ((c * 17 + y * 5 + x) % 23) as f64 / 23.0);
        let a = load_checkpoint(&path).unwrap();
        let b = load_checkpoint(&path).unwrap();
        let da = mc_aggregate(&forward(&a.backbone, &input).unwrap(), &DEFAULT_LEVELS).unwrap().0;
        let db = mc_aggregate(&forward(&b.backbone, &input).unwrap(), &DEFAULT_LEVELS).unwrap().0;
        assert_eq!(da, db);
    }

    #[test]
    fn transform_and_second_tower_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = CheckpointModel {
            kind: ModelKind::ConcatFeat,
            backbone: BackboneParams::init(&BackboneConfig::rgb_like(), &mut rng),
            second: Some(BackboneParams::init(&BackboneConfig::seg_light(6), &mut rng)),
            transform: Some(Transformation::init(448, 480, true, &mut rng)),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), model);
    }
}
