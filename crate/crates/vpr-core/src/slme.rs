//! Segmentation label map encoding: format → cluster → weight.
//!
//! A raw label map (per-pixel class indices out of e.g. 150 classes) is
//! first re-labelled into a small set of clustered classes, then expanded
//! into a C×H×W tensor where the pixel's channel carries that class's
//! encoding weight and every other channel is zero. The encoded tensor is
//! what the seg branch consumes.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Per-pixel class indices. Used for both raw and clustered label maps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub h: usize,
    pub w: usize,
    data: Vec<u16>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, data: Vec<u16>) -> Self {
        assert_eq!(data.len(), h * w, "label map data length mismatch");
        Self { h, w, data }
    }

    pub fn filled(h: usize, w: usize, class: u16) -> Self {
        Self::new(h, w, vec![class; h * w])
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u16) {
        self.data[y * self.w + x] = v;
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    /// Nearest-neighbor resize. Label maps must never be interpolated:
    /// averaging class indices would invent classes along boundaries.
    pub fn resize_nearest(&self, new_h: usize, new_w: usize) -> LabelMap {
        assert!(new_h > 0 && new_w > 0);
        let mut out = Vec::with_capacity(new_h * new_w);
        for y in 0..new_h {
            let sy = ((y as f64 + 0.5) * self.h as f64 / new_h as f64) as usize;
            let sy = sy.min(self.h - 1);
            for x in 0..new_w {
                let sx = ((x as f64 + 0.5) * self.w as f64 / new_w as f64) as usize;
                let sx = sx.min(self.w - 1);
                out.push(self.data[sy * self.w + sx]);
            }
        }
        LabelMap::new(new_h, new_w, out)
    }
}

/// Total map from raw class indices to clustered indices in `[0, num_clusters)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMap {
    mapping: Vec<u16>,
    num_clusters: usize,
}

impl ClusterMap {
    pub fn new(mapping: Vec<u16>, num_clusters: usize) -> Result<Self> {
        if num_clusters == 0 {
            return Err(Error::Config("cluster map needs at least one cluster".into()));
        }
        if let Some((i, &m)) = mapping.iter().enumerate().find(|(_, &m)| m as usize >= num_clusters) {
            return Err(Error::Config(format!(
                "cluster map entry {i} maps to {m}, outside [0, {num_clusters})"
            )));
        }
        Ok(Self { mapping, num_clusters })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n as u16).collect(),
            num_clusters: n,
        }
    }

    pub fn raw_classes(&self) -> usize {
        self.mapping.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn mapping(&self) -> &[u16] {
        &self.mapping
    }
}

/// Positive encoding magnitudes, one per clustered class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    values: Vec<f64>,
}

impl ClassWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("class weights must be non-empty".into()));
        }
        if let Some((i, &v)) = values.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::Config(format!("class weight {i} is {v}, must be > 0")));
        }
        Ok(Self { values })
    }

    pub fn ones(n: usize) -> Self {
        Self { values: vec![1.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, class: usize) -> f64 {
        self.values[class]
    }
}

/// Weighted one-hot encoding of a clustered label map.
///
/// Invariants: per pixel at most one channel is nonzero, and the nonzero
/// entry equals the weight of that pixel's class.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSegTensor(Tensor3);

impl EncodedSegTensor {
    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }

    /// Wrap a tensor that is claimed to satisfy the encoding invariants.
    /// `decode_argmax` will reject pixels that violate them.
    pub fn from_tensor(t: Tensor3) -> Self {
        Self(t)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.0.shape()
    }
}

/// A full SLME scheme: clustering plus per-class weights, with class names
/// for reporting. Serialized as `{C, names, mapping, weights}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlmeScheme {
    #[serde(rename = "C")]
    pub c: usize,
    pub names: Vec<String>,
    pub mapping: Vec<u16>,
    pub weights: Vec<f64>,
}

/// Fixed channel order of the default six-class scheme.
pub const SIX_CLASS_NAMES: [&str; 6] = ["vegetation", "dynamic", "sky", "ground", "building", "other"];

/// Default encoding weights bound positionally to [`SIX_CLASS_NAMES`].
pub const SIX_CLASS_WEIGHTS: [f64; 6] = [0.5, 0.5, 1.0, 1.0, 2.0, 2.0];

impl SlmeScheme {
    /// The default six-class scheme over a six-class raw space
    /// (vegetation, dynamic, sky, ground, building, other), weights
    /// (0.5, 0.5, 1, 1, 2, 2).
    pub fn six_class() -> Self {
        Self {
            c: 6,
            names: SIX_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            mapping: (0..6).collect(),
            weights: SIX_CLASS_WEIGHTS.to_vec(),
        }
    }

    /// Opposite weighting ablation: 0.5 for buildings and other objects,
    /// 2 for dynamic objects and vegetation.
    pub fn six_class_opposite() -> Self {
        Self {
            weights: vec![2.0, 2.0, 1.0, 1.0, 0.5, 0.5],
            ..Self::six_class()
        }
    }

    /// Three-class variant partitioning the six classes into
    /// {sky&ground, dynamic, static}, unweighted.
    pub fn three_class() -> Self {
        Self {
            c: 3,
            names: vec!["sky_ground".into(), "dynamic".into(), "static".into()],
            // vegetation, dynamic, sky, ground, building, other
            mapping: vec![2, 1, 0, 0, 2, 2],
            weights: vec![1.0; 3],
        }
    }

    /// Identity scheme over `n` raw classes, unweighted. `identity(150)`
    /// is the no-clustering ablation.
    pub fn identity(n: usize) -> Self {
        Self {
            c: n,
            names: (0..n).map(|i| format!("class{i}")).collect(),
            mapping: (0..n as u16).collect(),
            weights: vec![1.0; n],
        }
    }

    /// Resolve a preset name or a JSON file path, as accepted by the CLI
    /// `--slme-scheme` flag.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec {
            "six_class" | "default" => Ok(Self::six_class()),
            "six_class_opposite" => Ok(Self::six_class_opposite()),
            "three_class" => Ok(Self::three_class()),
            "identity150" => Ok(Self::identity(150)),
            path => Self::load(Path::new(path)),
        }
    }

    pub fn cluster_map(&self) -> Result<ClusterMap> {
        ClusterMap::new(self.mapping.clone(), self.c)
    }

    pub fn class_weights(&self) -> Result<ClassWeights> {
        let w = ClassWeights::new(self.weights.clone())?;
        if w.len() != self.c {
            return Err(Error::Config(format!(
                "scheme has {} weights for C={}",
                w.len(),
                self.c
            )));
        }
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster_map()?;
        self.class_weights()?;
        if self.names.len() != self.c {
            return Err(Error::Config(format!(
                "scheme has {} names for C={}",
                self.names.len(),
                self.c
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let scheme: Self = serde_json::from_str(&text)?;
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Cluster and encode in one step.
    pub fn apply(&self, raw: &LabelMap) -> Result<EncodedSegTensor> {
        let clustered = cluster_labels(raw, &self.cluster_map()?)?;
        encode(&clustered, &self.class_weights()?)
    }
}

/// Default scheme: the six-class cluster map and its weights.
pub fn default_scheme() -> (ClusterMap, ClassWeights) {
    let s = SlmeScheme::six_class();
    (s.cluster_map().unwrap(), s.class_weights().unwrap())
}

/// Pointwise application of the cluster mapping; shape preserved.
pub fn cluster_labels(labelmap: &LabelMap, cm: &ClusterMap) -> Result<LabelMap> {
    let mut out = Vec::with_capacity(labelmap.data().len());
    for (i, &raw) in labelmap.data().iter().enumerate() {
        if raw as usize >= cm.raw_classes() {
            let (y, x) = (i / labelmap.w, i % labelmap.w);
            return Err(Error::Encode(format!(
                "raw class {raw} at pixel ({y}, {x}) outside mapping of size {}",
                cm.raw_classes()
            )));
        }
        out.push(cm.mapping()[raw as usize]);
    }
    Ok(LabelMap::new(labelmap.h, labelmap.w, out))
}

/// Weighted one-hot expansion: `out[c, y, x] = w[c]` iff `labelmap[y, x] = c`.
pub fn encode(labelmap: &LabelMap, w: &ClassWeights) -> Result<EncodedSegTensor> {
    let c = w.len();
    let mut t = Tensor3::zeros(c, labelmap.h, labelmap.w);
    for y in 0..labelmap.h {
        for x in 0..labelmap.w {
            let class = labelmap.get(y, x) as usize;
            if class >= c {
                return Err(Error::Encode(format!(
                    "class index {class} at pixel ({y}, {x}) not below C={c}"
                )));
            }
            t.set(class, y, x, w.get(class));
        }
    }
    Ok(EncodedSegTensor(t))
}

/// Per pixel, the index of the unique nonzero channel.
pub fn decode_argmax(t: &EncodedSegTensor) -> Result<LabelMap> {
    let (c, h, w) = t.shape();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut best: Option<(usize, f64)> = None;
            for ci in 0..c {
                let v = t.tensor().get(ci, y, x);
                if v != 0.0 {
                    match best {
                        Some((_, bv)) if bv >= v => {}
                        _ => best = Some((ci, v)),
                    }
                }
            }
            match best {
                Some((ci, _)) => out.push(ci as u16),
                None => {
                    return Err(Error::Encode(format!(
                        "all-zero pixel ({y}, {x}) cannot be decoded"
                    )))
                }
            }
        }
    }
    Ok(LabelMap::new(h, w, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_scheme_is_six_class() {
        let (cm, w) = default_scheme();
        assert_eq!(cm.num_clusters(), 6);
        assert_eq!(w.values(), &[0.5, 0.5, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn three_class_partitions_all_six() {
        let s = SlmeScheme::three_class();
        assert_eq!(s.mapping.len(), 6);
        let mut seen = [false; 3];
        for &m in &s.mapping {
            seen[m as usize] = true;
        }
        assert!(seen.iter().all(|&b| b));
        // sky and ground collapse together, dynamic stays its own class
        assert_eq!(s.mapping[2], s.mapping[3]);
        assert_eq!(s.mapping[1], 1);
    }

    #[test]
    fn identity_scheme_maps_i_to_i() {
        let s = SlmeScheme::identity(150);
        assert_eq!(s.c, 150);
        for (i, &m) in s.mapping.iter().enumerate() {
            assert_eq!(m as usize, i);
        }
    }

    #[test]
    fn opposite_weights_swap_static_and_dynamic() {
        let s = SlmeScheme::six_class_opposite();
        assert_eq!(s.weights, vec![2.0, 2.0, 1.0, 1.0, 0.5, 0.5]);
    }

    #[test]
    fn cluster_identity_is_noop() {
        let m = LabelMap::new(2, 3, vec![0, 1, 2, 3, 4, 5]);
        let out = cluster_labels(&m, &ClusterMap::identity(6)).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn cluster_constant_map() {
        let m = LabelMap::filled(4, 4, 7);
        let mut mapping = vec![0u16; 10];
        mapping[7] = 4;
        let cm = ClusterMap::new(mapping, 6).unwrap();
        let out = cluster_labels(&m, &cm).unwrap();
        assert!(out.data().iter().all(|&v| v == 4));
    }

    #[test]
    fn cluster_matches_pointwise_loop() {
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            rng_state
        };
        let raw: Vec<u16> = (0..16 * 16).map(|_| (next() % 150) as u16).collect();
        let m = LabelMap::new(16, 16, raw.clone());
        let mapping: Vec<u16> = (0..150).map(|_| (next() % 6) as u16).collect();
        let cm = ClusterMap::new(mapping.clone(), 6).unwrap();
        let out = cluster_labels(&m, &cm).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(out.get(y, x), mapping[raw[y * 16 + x] as usize]);
            }
        }
    }

    #[test]
    fn cluster_out_of_range_names_pixel_and_value() {
        let m = LabelMap::new(1, 2, vec![0, 9]);
        let err = cluster_labels(&m, &ClusterMap::identity(6)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("9") && msg.contains("(0, 1)"), "{msg}");
    }

    #[test]
    fn encode_hand_constructed_two_by_two() {
        let m = LabelMap::new(2, 2, vec![4, 2, 1, 3]);
        let (_, w) = default_scheme();
        let t = encode(&m, &w).unwrap();
        assert_eq!(t.tensor().get(4, 0, 0), 2.0);
        assert_eq!(t.tensor().get(2, 0, 1), 1.0);
        assert_eq!(t.tensor().get(1, 1, 0), 0.5);
        assert_eq!(t.tensor().get(3, 1, 1), 1.0);
        let nonzero = t.tensor().data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 4);
    }

    #[test]
    fn encode_uniform_map() {
        let m = LabelMap::filled(3, 5, 4);
        let (_, w) = default_scheme();
        let t = encode(&m, &w).unwrap();
        assert!(t.tensor().channel(4).iter().all(|&v| v == 2.0));
        for c in [0, 1, 2, 3, 5] {
            assert!(t.tensor().channel(c).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unit_weights_give_one_hot() {
        let m = LabelMap::new(1, 3, vec![0, 2, 1]);
        let t = encode(&m, &ClassWeights::ones(3)).unwrap();
        let expect = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        assert_eq!(t.tensor().data(), &expect);
    }

    #[test]
    fn encode_rejects_class_at_or_above_c() {
        let m = LabelMap::new(1, 1, vec![6]);
        let (_, w) = default_scheme();
        assert!(matches!(encode(&m, &w), Err(Error::Encode(_))));
    }

    #[test]
    fn decode_single_pixel() {
        let mut t = Tensor3::zeros(6, 1, 1);
        t.set(5, 0, 0, 2.0);
        let m = decode_argmax(&EncodedSegTensor::from_tensor(t)).unwrap();
        assert_eq!(m.get(0, 0), 5);
    }

    #[test]
    fn decode_rejects_all_zero_pixel() {
        let t = Tensor3::zeros(6, 2, 2);
        assert!(matches!(
            decode_argmax(&EncodedSegTensor::from_tensor(t)),
            Err(Error::Encode(_))
        ));
    }

    #[test]
    fn resize_nearest_keeps_classes() {
        let m = LabelMap::new(2, 2, vec![0, 1, 2, 3]);
        let big = m.resize_nearest(4, 4);
        assert_eq!(big.get(0, 0), 0);
        assert_eq!(big.get(0, 3), 1);
        assert_eq!(big.get(3, 0), 2);
        assert_eq!(big.get(3, 3), 3);
        let back = big.resize_nearest(2, 2);
        assert_eq!(back, m);
    }

    #[test]
    fn scheme_json_round_trip() {
        let s = SlmeScheme::six_class();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"C\":6"));
        let back: SlmeScheme = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(
            seed in 0u64..1_000_000,
            preset in 0usize..3,
            h in 1usize..12,
            w in 1usize..12,
        ) {
            let scheme = match preset {
                0 => SlmeScheme::six_class(),
                1 => SlmeScheme::three_class(),
                _ => SlmeScheme::identity(150),
            };
            let c = scheme.c as u64;
            let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
            let data: Vec<u16> = (0..h * w)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state % c) as u16
                })
                .collect();
            let m = LabelMap::new(h, w, data);
            let weights = scheme.class_weights().unwrap();
            let t = encode(&m, &weights).unwrap();
            let back = decode_argmax(&t).unwrap();
            prop_assert_eq!(back, m.clone());

            // per-pixel channel sum equals the weight of the pixel's class
            for y in 0..h {
                for x in 0..w {
                    let sum: f64 = (0..scheme.c).map(|ci| t.tensor().get(ci, y, x)).sum();
                    prop_assert_eq!(sum, weights.get(m.get(y, x) as usize));
                }
            }
        }

        #[test]
        fn encode_commutes_with_pixel_permutation(seed in 0u64..100_000) {
            let (_, w) = default_scheme();
            let mut state = seed.wrapping_mul(0x2545f4914f6cdd1d).wrapping_add(7);
            let mut next = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                state
            };
            let h = 5;
            let wid = 7;
            let data: Vec<u16> = (0..h * wid).map(|_| (next() % 6) as u16).collect();
            let m = LabelMap::new(h, wid, data.clone());
            // reverse the pixel order as the permutation
            let rev = LabelMap::new(h, wid, data.iter().rev().copied().collect());
            let t = encode(&m, &w).unwrap();
            let tr = encode(&rev, &w).unwrap();
            for c in 0..6 {
                let fwd = t.tensor().channel(c);
                let bwd: Vec<f64> = tr.tensor().channel(c).iter().rev().copied().collect();
                prop_assert_eq!(fwd, &bwd[..]);
            }
        }
    }
}
