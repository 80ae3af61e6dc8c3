//! Multi-level concatenation: global max pooling per level, per-level L2
//! normalization, concatenation over the last three stages, and a final
//! L2 normalization.

use serde::{Deserialize, Serialize};

use super::backbone::FeaturePyramid;
use crate::error::{Error, Result};
use crate::tensor::{l2_norm, Tensor3, L2_NORM_EPS};

/// Which branch produced a descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchTag {
    Rgb,
    Seg,
    Student,
    /// Concatenated two-branch baseline descriptor.
    Fused,
}

/// A unit-norm global descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    pub vector: Vec<f64>,
    pub branch: BranchTag,
}

impl GlobalDescriptor {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Levels used for aggregation (1-indexed stages).
pub const DEFAULT_LEVELS: [usize; 3] = [3, 4, 5];

struct LevelTrace {
    level: usize,
    /// flat spatial index of the max per channel
    argmax: Vec<usize>,
    pooled: Vec<f64>,
    norm: f64,
    clamped: bool,
    normalized: Vec<f64>,
}

/// Intermediate state needed to backpropagate through the aggregation.
pub struct AggregateTrace {
    levels: Vec<LevelTrace>,
    concat_norm: f64,
    concat_clamped: bool,
    descriptor: Vec<f64>,
}

fn gmp(map: &Tensor3) -> (Vec<f64>, Vec<usize>) {
    let plane = map.h * map.w;
    let mut pooled = Vec::with_capacity(map.c);
    let mut argmax = Vec::with_capacity(map.c);
    for c in 0..map.c {
        let ch = map.channel(c);
        let mut best = ch[0];
        let mut best_i = 0;
        for (i, &v) in ch.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                best_i = i;
            }
        }
        debug_assert!(best_i < plane);
        pooled.push(best);
        argmax.push(best_i);
    }
    (pooled, argmax)
}

/// Aggregates a pyramid into a unit-norm descriptor and records the trace
/// for [`mc_aggregate_backward`].
pub fn mc_aggregate(pyramid: &FeaturePyramid, levels: &[usize]) -> Result<(Vec<f64>, AggregateTrace)> {
    if levels.is_empty() {
        return Err(Error::Model("aggregation needs at least one level".into()));
    }
    let mut level_traces = Vec::with_capacity(levels.len());
    let mut concat = Vec::new();
    for &level in levels {
        if level < 1 || level > pyramid.maps.len() {
            return Err(Error::Model(format!(
                "requested level {level} outside 1..={}",
                pyramid.maps.len()
            )));
        }
        let map = pyramid.level(level);
        let (pooled, argmax) = gmp(map);
        let raw_norm = l2_norm(&pooled);
        let clamped = raw_norm < L2_NORM_EPS;
        let norm = raw_norm.max(L2_NORM_EPS);
        let normalized: Vec<f64> = pooled.iter().map(|v| v / norm).collect();
        concat.extend_from_slice(&normalized);
        level_traces.push(LevelTrace {
            level,
            argmax,
            pooled,
            norm,
            clamped,
            normalized,
        });
    }
    let raw_norm = l2_norm(&concat);
    let concat_clamped = raw_norm < L2_NORM_EPS;
    let concat_norm = raw_norm.max(L2_NORM_EPS);
    let descriptor: Vec<f64> = concat.iter().map(|v| v / concat_norm).collect();
    Ok((
        descriptor.clone(),
        AggregateTrace {
            levels: level_traces,
            concat_norm,
            concat_clamped,
            descriptor,
        },
    ))
}

/// Backward through normalization `y = u / max(‖u‖, ε)`:
/// `du = (dy − y·(yᵀdy)) / n`, or `dy / ε` in the clamped branch where the
/// norm is constant.
fn l2_normalize_backward(normalized: &[f64], norm: f64, clamped: bool, d_out: &[f64]) -> Vec<f64> {
    if clamped {
        return d_out.iter().map(|g| g / norm).collect();
    }
    let dot: f64 = normalized.iter().zip(d_out).map(|(y, g)| y * g).sum();
    normalized
        .iter()
        .zip(d_out)
        .map(|(y, g)| (g - y * dot) / norm)
        .collect()
}

/// Maps a descriptor gradient back to per-level feature-map gradients.
/// Returns `(level, grad)` pairs; GMP routes each channel's gradient to
/// the recorded max position.
pub fn mc_aggregate_backward(
    pyramid: &FeaturePyramid,
    trace: &AggregateTrace,
    d_descriptor: &[f64],
) -> Vec<(usize, Tensor3)> {
    debug_assert_eq!(d_descriptor.len(), trace.descriptor.len());
    let d_concat = l2_normalize_backward(
        &trace.descriptor,
        trace.concat_norm,
        trace.concat_clamped,
        d_descriptor,
    );

    let mut out = Vec::with_capacity(trace.levels.len());
    let mut offset = 0;
    for lt in &trace.levels {
        let width = lt.pooled.len();
        let d_f = &d_concat[offset..offset + width];
        offset += width;
        let d_pooled = l2_normalize_backward(&lt.normalized, lt.norm, lt.clamped, d_f);

        let map = pyramid.level(lt.level);
        let mut grad = Tensor3::zeros(map.c, map.h, map.w);
        let plane = map.h * map.w;
        for c in 0..map.c {
            grad.data_mut()[c * plane + lt.argmax[c]] = d_pooled[c];
        }
        out.push((lt.level, grad));
    }
    out
}

/// Convenience wrapper producing a tagged [`GlobalDescriptor`].
pub fn tagged_descriptor(pyramid: &FeaturePyramid, levels: &[usize], branch: BranchTag) -> Result<GlobalDescriptor> {
    let (vector, _) = mc_aggregate(pyramid, levels)?;
    Ok(GlobalDescriptor { vector, branch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{backbone::forward, BackboneConfig, BackboneParams};
    use crate::tensor::l2_norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pyramid_from(maps: Vec<Tensor3>) -> FeaturePyramid {
        FeaturePyramid { maps }
    }

    #[test]
    fn constant_activation_descriptor_is_uniform() {
        // three levels of 2 channels, all activations the same positive value:
        // per-level unit vectors (1/sqrt(2), 1/sqrt(2)), concat norm sqrt(3),
        // every output entry 1/sqrt(6)
        let maps = vec![
            Tensor3::from_fn(2, 4, 4, |_, _, _| 0.7),
            Tensor3::from_fn(2, 3, 3, |_, _, _| 0.7),
            Tensor3::from_fn(2, 2, 2, |_, _, _| 0.7),
        ];
        let (desc, _) = mc_aggregate(&pyramid_from(maps), &[1, 2, 3]).unwrap();
        let expect = 1.0 / 6.0f64.sqrt();
        assert_eq!(desc.len(), 6);
        for v in desc {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn descriptor_dims_match_config_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rgb = BackboneParams::init(&BackboneConfig::rgb_like(), &mut rng);
        let input = Tensor3::from_fn(3, 32, 32, |c, y, x| ((c * 31 + y * 7 + x) % 13) as f64 / 13.0);
        let pyr = forward(&rgb, &input).unwrap();
        let (desc, _) = mc_aggregate(&pyr, &DEFAULT_LEVELS).unwrap();
        assert_eq!(desc.len(), 448);

        let seg = BackboneParams::init(&BackboneConfig::seg_light(6), &mut rng);
        let input = Tensor3::from_fn(6, 32, 32, |c, y, x| ((c * 5 + y * 3 + x) % 7) as f64 / 7.0);
        let pyr = forward(&seg, &input).unwrap();
        let (desc, _) = mc_aggregate(&pyr, &DEFAULT_LEVELS).unwrap();
        assert_eq!(desc.len(), 480);
    }

    #[test]
    fn output_is_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = BackboneParams::init(&BackboneConfig::rgb_like(), &mut rng);
        let input = Tensor3::from_fn(3, 24, 24, |c, y, x| ((c + y * y + x) % 17) as f64 / 17.0);
        let pyr = forward(&params, &input).unwrap();
        let (desc, _) = mc_aggregate(&pyr, &DEFAULT_LEVELS).unwrap();
        assert!((l2_norm(&desc) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn per_level_scale_invariance() {
        let maps: Vec<Tensor3> = (0..3)
            .map(|l| Tensor3::from_fn(3, 4 - l, 4 - l, |c, y, x| ((c * 13 + y * 5 + x * 3) % 9) as f64 + 0.5))
            .collect();
        let (base, _) = mc_aggregate(&pyramid_from(maps.clone()), &[1, 2, 3]).unwrap();

        let mut scaled = maps;
        scaled[1].scale(37.5);
        let (desc, _) = mc_aggregate(&pyramid_from(scaled), &[1, 2, 3]).unwrap();
        for (a, b) in base.iter().zip(&desc) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gmp_ignores_spatial_permutation() {
        let map = Tensor3::from_fn(2, 3, 3, |c, y, x| (c * 9 + y * 3 + x) as f64);
        // reverse the spatial layout per channel
        let mut rev = Tensor3::zeros(2, 3, 3);
        for c in 0..2 {
            for y in 0..3 {
                for x in 0..3 {
                    rev.set(c, 2 - y, 2 - x, map.get(c, y, x));
                }
            }
        }
        let other = Tensor3::from_fn(1, 1, 1, |_, _, _| 1.0);
        let (a, _) = mc_aggregate(&pyramid_from(vec![map, other.clone()]), &[1, 2]).unwrap();
        let (b, _) = mc_aggregate(&pyramid_from(vec![rev, other]), &[1, 2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_level_is_model_error() {
        let pyr = pyramid_from(vec![Tensor3::zeros(1, 2, 2)]);
        assert!(matches!(mc_aggregate(&pyr, &[2]), Err(Error::Model(_))));
    }
}
