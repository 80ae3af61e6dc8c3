//! Forward and backward passes through the five-stage backbone.

use super::{BackboneParams, ConvLayer};
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Per-stage feature maps F₁..F₅ (post-activation).
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub maps: Vec<Tensor3>,
}

impl FeaturePyramid {
    /// 1-indexed stage access.
    pub fn level(&self, level: usize) -> &Tensor3 {
        &self.maps[level - 1]
    }
}

/// Gradients with the same shape as [`BackboneParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneGrads {
    pub stages: Vec<ConvLayer>,
}

impl BackboneGrads {
    pub fn add_assign(&mut self, other: &BackboneGrads) {
        for (a, b) in self.stages.iter_mut().zip(&other.stages) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.stages {
            for x in &mut l.weight {
                *x *= s;
            }
            for x in &mut l.bias {
                *x *= s;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.stages {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

#[inline]
fn out_extent(len: usize, stride: usize) -> usize {
    // 3×3 kernel, padding 1
    (len - 1) / stride + 1
}

/// 3×3 stride-`s` convolution with padding 1, bias, and fused ReLU.
fn conv_relu(layer: &ConvLayer, input: &Tensor3) -> Tensor3 {
    let (in_c, h, w) = input.shape();
    debug_assert_eq!(in_c, layer.in_c);
    let oh = out_extent(h, layer.stride);
    let ow = out_extent(w, layer.stride);
    let mut out = Tensor3::zeros(layer.out_c, oh, ow);

    for oc in 0..layer.out_c {
        for oy in 0..oh {
            let iy0 = (oy * layer.stride) as isize - 1;
            for ox in 0..ow {
                let ix0 = (ox * layer.stride) as isize - 1;
                let mut acc = layer.bias[oc];
                for ic in 0..layer.in_c {
                    let plane = input.channel(ic);
                    let wbase = (oc * layer.in_c + ic) * 9;
                    for ky in 0..3usize {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = iy as usize * w;
                        for kx in 0..3usize {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += layer.weight[wbase + ky * 3 + kx] * plane[row + ix as usize];
                        }
                    }
                }
                if acc > 0.0 {
                    out.set(oc, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Runs all five stages. The input channel count must match the config.
pub fn forward(params: &BackboneParams, input: &Tensor3) -> Result<FeaturePyramid> {
    if input.c != params.config.input_channels {
        return Err(Error::Model(format!(
            "input has {} channels, backbone expects {}",
            input.c, params.config.input_channels
        )));
    }
    let mut maps = Vec::with_capacity(5);
    let mut current = input;
    for layer in &params.stages {
        let next = conv_relu(layer, current);
        maps.push(next);
        current = maps.last().unwrap();
    }
    Ok(FeaturePyramid { maps })
}

/// Backpropagates per-level gradients through the backbone.
///
/// `level_grads[i]` is the loss gradient w.r.t. pyramid map `i+1`
/// (post-activation); levels without a gradient carry `None`. ReLU masks
/// come from the stored pyramid, so this must be the pyramid produced by
/// [`forward`] on the same input.
pub fn backward(
    params: &BackboneParams,
    input: &Tensor3,
    pyramid: &FeaturePyramid,
    level_grads: &[Option<Tensor3>; 5],
) -> BackboneGrads {
    let mut grads = params.zeros_like();
    let mut upstream: Option<Tensor3> = None;

    for stage in (0..5).rev() {
        let output = &pyramid.maps[stage];
        let mut d_out = match upstream.take() {
            Some(t) => t,
            None => Tensor3::zeros(output.c, output.h, output.w),
        };
        if let Some(extra) = &level_grads[stage] {
            debug_assert_eq!(extra.shape(), output.shape());
            for (a, b) in d_out.data_mut().iter_mut().zip(extra.data()) {
                *a += b;
            }
        }
        let stage_input: &Tensor3 = if stage == 0 { input } else { &pyramid.maps[stage - 1] };
        upstream = conv_relu_backward(
            &params.stages[stage],
            stage_input,
            output,
            &d_out,
            &mut grads.stages[stage],
            stage > 0,
        );
    }
    grads
}

/// Backward through one conv+ReLU stage. Accumulates weight/bias grads in
/// `layer_grad` and optionally returns the gradient w.r.t. the stage input.
fn conv_relu_backward(
    layer: &ConvLayer,
    input: &Tensor3,
    output: &Tensor3,
    d_out: &Tensor3,
    layer_grad: &mut ConvLayer,
    need_input_grad: bool,
) -> Option<Tensor3> {
    let (_, h, w) = input.shape();
    let (oc_n, oh, ow) = output.shape();
    let mut d_in = if need_input_grad {
        Some(Tensor3::zeros(input.c, h, w))
    } else {
        None
    };

    for oc in 0..oc_n {
        for oy in 0..oh {
            let iy0 = (oy * layer.stride) as isize - 1;
            for ox in 0..ow {
                // ReLU: gradient flows only where the stored activation is positive
                if output.get(oc, oy, ox) <= 0.0 {
                    continue;
                }
                let g = d_out.get(oc, oy, ox);
                if g == 0.0 {
                    continue;
                }
                let ix0 = (ox * layer.stride) as isize - 1;
                layer_grad.bias[oc] += g;
                for ic in 0..layer.in_c {
                    let plane = input.channel(ic);
                    let wbase = (oc * layer.in_c + ic) * 9;
                    for ky in 0..3usize {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = iy as usize * w;
                        for kx in 0..3usize {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let col = ix as usize;
                            layer_grad.weight[wbase + ky * 3 + kx] += g * plane[row + col];
                            if let Some(di) = d_in.as_mut() {
                                let idx = di.idx(ic, iy as usize, col);
                                di.data_mut()[idx] += g * layer.weight[wbase + ky * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    d_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BackboneConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stride_arithmetic_shrinks_to_two() {
        let cfg = BackboneConfig::rgb_like();
        let params = BackboneParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let input = Tensor3::zeros(3, 64, 64);
        let pyr = forward(&params, &input).unwrap();
        assert_eq!(pyr.level(1).shape(), (16, 32, 32));
        assert_eq!(pyr.level(5).shape(), (320, 2, 2));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_pyramid() {
        let cfg = BackboneConfig::rgb_like();
        let mut params = BackboneParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
        for layer in &mut params.stages {
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let input = Tensor3::zeros(3, 16, 16);
        let pyr = forward(&params, &input).unwrap();
        for level in &pyr.maps {
            assert!(level.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn forward_is_bitwise_stable() {
        let cfg = BackboneConfig::seg_light(6);
        let params = BackboneParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let input = Tensor3::from_fn(6, 20, 20, |c, y, x| ((c + 3 * y + 7 * x) % 11) as f64 / 11.0);
        let a = forward(&params, &input).unwrap();
        let b = forward(&params, &input).unwrap();
        for (ma, mb) in a.maps.iter().zip(&b.maps) {
            assert_eq!(ma.data(), mb.data());
        }
    }

    #[test]
    fn channel_mismatch_is_model_error() {
        let cfg = BackboneConfig::rgb_like();
        let params = BackboneParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(4));
        let input = Tensor3::zeros(6, 16, 16);
        assert!(matches!(forward(&params, &input), Err(Error::Model(_))));
    }

    #[test]
    fn spatial_size_non_increasing() {
        let cfg = BackboneConfig {
            input_channels: 3,
            stage_channels: [4, 4, 4, 4, 4],
            stage_strides: [1, 2, 1, 2, 1],
        };
        let params = BackboneParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
        let input = Tensor3::zeros(3, 17, 13);
        let pyr = forward(&params, &input).unwrap();
        for pair in pyr.maps.windows(2) {
            assert!(pair[1].h <= pair[0].h && pair[1].w <= pair[0].w);
        }
    }
}
