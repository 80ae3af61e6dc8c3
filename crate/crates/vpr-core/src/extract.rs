//! Descriptor extraction: model + image store → global descriptors.

use rayon::prelude::*;
use std::collections::HashMap;

use crate::data::{ImageStore, InputKind};
use crate::error::Result;
use crate::model::{forward, mc_aggregate, CheckpointModel, ModelKind, DEFAULT_LEVELS};
use crate::tensor::l2_normalize;

/// Input kind feeding the primary backbone of a model.
pub fn primary_input(kind: ModelKind) -> InputKind {
    match kind {
        ModelKind::Rgb | ModelKind::Student => InputKind::Rgb,
        ModelKind::Seg => InputKind::Seg,
        ModelKind::ConcatInput => InputKind::ConcatInput,
        // concat_feat towers are handled explicitly
        ModelKind::ConcatFeat => InputKind::Rgb,
    }
}

/// Extracts the retrieval descriptor for one record.
pub fn descriptor_for(model: &CheckpointModel, store: &ImageStore, id: &str) -> Result<Vec<f64>> {
    match model.kind {
        ModelKind::ConcatFeat => {
            let second = model.second.as_ref().ok_or_else(|| {
                crate::error::Error::Model("concat_feat checkpoint lacks its second tower".into())
            })?;
            let rgb_in = store.input_for(InputKind::Rgb, id)?;
            let seg_in = store.input_for(InputKind::Seg, id)?;
            let (d_rgb, _) = mc_aggregate(&forward(&model.backbone, &rgb_in)?, &DEFAULT_LEVELS)?;
            let (d_seg, _) = mc_aggregate(&forward(second, &seg_in)?, &DEFAULT_LEVELS)?;
            let mut concat = d_rgb;
            concat.extend_from_slice(&d_seg);
            Ok(l2_normalize(&concat))
        }
        kind => {
            let input = store.input_for(primary_input(kind), id)?;
            let (desc, _) = mc_aggregate(&forward(&model.backbone, &input)?, &DEFAULT_LEVELS)?;
            Ok(desc)
        }
    }
}

/// Extracts descriptors for many records in parallel, in input order.
pub fn descriptors_for(
    model: &CheckpointModel,
    store: &ImageStore,
    ids: &[String],
) -> Result<Vec<Vec<f64>>> {
    ids.par_iter()
        .map(|id| descriptor_for(model, store, id))
        .collect()
}

/// Same, keyed by id.
pub fn descriptor_map(
    model: &CheckpointModel,
    store: &ImageStore,
    ids: &[String],
) -> Result<HashMap<String, Vec<f64>>> {
    let descs = descriptors_for(model, store, ids)?;
    Ok(ids.iter().cloned().zip(descs).collect())
}
