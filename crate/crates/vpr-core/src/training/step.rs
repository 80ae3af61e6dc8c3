//! Loss evaluation and gradients for one (query, positive, negative)
//! triplet, with optional distillation terms on all three images.

use std::collections::HashMap;

use crate::data::ImageStore;
use crate::dataset::SamplePair;
use crate::error::{Error, Result};
use crate::model::{
    backward, forward, mc_aggregate, mc_aggregate_backward, BackboneGrads, BackboneParams,
    Transformation, DEFAULT_LEVELS,
};
use crate::tensor::Tensor3;
use crate::training::losses::{kd_loss, kd_loss_grad, triplet_loss, triplet_loss_grad, TripletLossConfig};
use crate::training::weights::WeightTable;

/// A mined training triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub pair: SamplePair,
    pub negative_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub vpr: f64,
    pub kd: f64,
}

impl LossParts {
    pub fn add(&mut self, other: &LossParts) {
        self.total += other.total;
        self.vpr += other.vpr;
        self.kd += other.kd;
    }

    pub fn scale(&mut self, s: f64) {
        self.total *= s;
        self.vpr *= s;
        self.kd *= s;
    }
}

/// The three input tensors of a triplet.
pub struct TripletInputs<'a> {
    pub q: &'a Tensor3,
    pub p: &'a Tensor3,
    pub n: &'a Tensor3,
}

/// Frozen teacher descriptors for the triplet's images plus the pair weight.
pub struct KdTargets<'a> {
    pub q: &'a [f64],
    pub p: &'a [f64],
    pub n: &'a [f64],
    pub phi: f64,
}

/// Loss only: triplet term plus, when distillation is active, one
/// feature-mimic term per image under the pair's single weight.
pub fn triplet_total_forward(
    params: &BackboneParams,
    inputs: &TripletInputs,
    margin: f64,
    kd: Option<(&Transformation, &KdTargets)>,
) -> Result<LossParts> {
    let cfg = TripletLossConfig { margin };
    let descs: Vec<Vec<f64>> = [inputs.q, inputs.p, inputs.n]
        .iter()
        .map(|input| Ok(mc_aggregate(&forward(params, input)?, &DEFAULT_LEVELS)?.0))
        .collect::<Result<_>>()?;
    let vpr = triplet_loss(&descs[0], &descs[1], &descs[2], &cfg)?;
    let mut kd_sum = 0.0;
    if let Some((t, targets)) = kd {
        if targets.phi > 0.0 {
            for (desc, teacher) in descs.iter().zip([targets.q, targets.p, targets.n]) {
                kd_sum += kd_loss(teacher, desc, t, targets.phi)?;
            }
        }
    }
    Ok(LossParts {
        total: vpr + kd_sum,
        vpr,
        kd: kd_sum,
    })
}

/// Loss and gradients w.r.t. the backbone and (when distilling) the
/// transformation. The teacher stays frozen.
pub fn triplet_total_backward(
    params: &BackboneParams,
    inputs: &TripletInputs,
    margin: f64,
    kd: Option<(&Transformation, &KdTargets)>,
) -> Result<(LossParts, BackboneGrads, Option<Transformation>)> {
    let cfg = TripletLossConfig { margin };
    let images = [inputs.q, inputs.p, inputs.n];

    let mut pyramids = Vec::with_capacity(3);
    let mut traces = Vec::with_capacity(3);
    let mut descs = Vec::with_capacity(3);
    for input in images {
        let pyramid = forward(params, input)?;
        let (desc, trace) = mc_aggregate(&pyramid, &DEFAULT_LEVELS)?;
        pyramids.push(pyramid);
        traces.push(trace);
        descs.push(desc);
    }

    let (vpr, dq, dp, dn) = triplet_loss_grad(&descs[0], &descs[1], &descs[2], &cfg)?;
    let mut d_descs = [dq, dp, dn];

    let mut kd_sum = 0.0;
    let mut t_grads = None;
    if let Some((t, targets)) = kd {
        let mut grad = Transformation::zeros(t.in_dim, t.out_dim, t.bias.is_some());
        if targets.phi > 0.0 {
            for (i, teacher) in [targets.q, targets.p, targets.n].into_iter().enumerate() {
                let (loss, d_desc) = kd_loss_grad(teacher, &descs[i], t, targets.phi, &mut grad)?;
                kd_sum += loss;
                for (a, b) in d_descs[i].iter_mut().zip(&d_desc) {
                    *a += b;
                }
            }
        }
        t_grads = Some(grad);
    }

    let mut grads = params.zeros_like();
    for i in 0..3 {
        let level_grads = level_grad_array(mc_aggregate_backward(&pyramids[i], &traces[i], &d_descs[i]));
        grads.add_assign(&backward(params, images[i], &pyramids[i], &level_grads));
    }

    Ok((
        LossParts {
            total: vpr + kd_sum,
            vpr,
            kd: kd_sum,
        },
        grads,
        t_grads,
    ))
}

fn level_grad_array(per_level: Vec<(usize, Tensor3)>) -> [Option<Tensor3>; 5] {
    let mut out = [None, None, None, None, None];
    for (level, grad) in per_level {
        out[level - 1] = Some(grad);
    }
    out
}

/// Full objective for one triplet, looking up the pair's weight and the
/// frozen teacher descriptors by id.
pub fn total_loss(
    student: &BackboneParams,
    transform: &Transformation,
    store: &ImageStore,
    triplet: &Triplet,
    teacher_descs: &HashMap<String, Vec<f64>>,
    weights: &WeightTable,
    margin: f64,
) -> Result<LossParts> {
    let phi = weights.get(&triplet.pair)?;
    let q = store.rgb(&triplet.pair.query_id)?;
    let p = store.rgb(&triplet.pair.positive_id)?;
    let n = store.rgb(&triplet.negative_id)?;
    let inputs = TripletInputs { q, p, n };
    if phi == 0.0 {
        return triplet_total_forward(student, &inputs, margin, None);
    }
    let teacher = |id: &str| -> Result<&[f64]> {
        teacher_descs
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Training(format!("no teacher descriptor for record '{id}'")))
    };
    let targets = KdTargets {
        q: teacher(&triplet.pair.query_id)?,
        p: teacher(&triplet.pair.positive_id)?,
        n: teacher(&triplet.negative_id)?,
        phi,
    };
    triplet_total_forward(student, &inputs, margin, Some((transform, &targets)))
}
