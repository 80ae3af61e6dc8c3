//! In-memory image store: RGB tensors and label maps keyed by record id.
//!
//! Everything is loaded eagerly (desk-scale datasets fit comfortably);
//! encoded seg tensors are produced on demand from the stored label maps.

use std::borrow::Cow;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset::{load_label_map, PlaceRecord};
use crate::error::{Error, Result};
use crate::slme::{LabelMap, SlmeScheme};
use crate::tensor::Tensor3;

/// Which tensor feeds a backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Rgb,
    Seg,
    /// RGB and encoded seg stacked along channels.
    ConcatInput,
}

#[derive(Debug)]
pub struct ImageStore {
    scheme: SlmeScheme,
    rgb: HashMap<String, Tensor3>,
    seg: HashMap<String, LabelMap>,
}

impl ImageStore {
    /// Loads every record's RGB image and, where present, its label map.
    /// Paths are resolved relative to `base`. `target_size` (h, w) resizes
    /// RGB bilinearly and label maps with nearest-neighbor.
    pub fn load(
        base: &Path,
        records: &[PlaceRecord],
        scheme: &SlmeScheme,
        target_size: Option<(usize, usize)>,
    ) -> Result<Self> {
        scheme.validate()?;
        let loaded: Vec<Result<(String, Tensor3, Option<LabelMap>)>> = records
            .par_iter()
            .map(|r| {
                let rgb = load_rgb(&resolve(base, &r.rgb_path), target_size)
                    .map_err(|e| Error::Data(format!("record '{}': {e}", r.id)))?;
                let seg = match &r.seg_path {
                    Some(p) => {
                        let map = load_label_map(&resolve(base, p))
                            .map_err(|e| Error::Data(format!("record '{}': {e}", r.id)))?;
                        Some(match target_size {
                            Some((h, w)) if (map.h, map.w) != (h, w) => map.resize_nearest(h, w),
                            _ => map,
                        })
                    }
                    None => None,
                };
                Ok((r.id.clone(), rgb, seg))
            })
            .collect();

        let mut rgb = HashMap::new();
        let mut seg = HashMap::new();
        for item in loaded {
            let (id, rgb_t, seg_m) = item?;
            rgb.insert(id.clone(), rgb_t);
            if let Some(m) = seg_m {
                seg.insert(id, m);
            }
        }
        Ok(Self {
            scheme: scheme.clone(),
            rgb,
            seg,
        })
    }

    pub fn scheme(&self) -> &SlmeScheme {
        &self.scheme
    }

    /// Channel count of encoded seg tensors.
    pub fn seg_channels(&self) -> usize {
        self.scheme.c
    }

    pub fn has_seg(&self, id: &str) -> bool {
        self.seg.contains_key(id)
    }

    pub fn rgb(&self, id: &str) -> Result<&Tensor3> {
        self.rgb
            .get(id)
            .ok_or_else(|| Error::Data(format!("record '{id}' not in image store")))
    }

    pub fn label_map(&self, id: &str) -> Result<&LabelMap> {
        self.seg
            .get(id)
            .ok_or_else(|| Error::Eval(format!("record '{id}' has no segmentation input")))
    }

    /// Encoded seg tensor for a record.
    pub fn seg_encoded(&self, id: &str) -> Result<Tensor3> {
        Ok(self.scheme.apply(self.label_map(id)?)?.into_tensor())
    }

    /// The tensor feeding a backbone of the given input kind.
    pub fn input_for(&self, kind: InputKind, id: &str) -> Result<Cow<'_, Tensor3>> {
        match kind {
            InputKind::Rgb => Ok(Cow::Borrowed(self.rgb(id)?)),
            InputKind::Seg => Ok(Cow::Owned(self.seg_encoded(id)?)),
            InputKind::ConcatInput => {
                let rgb = self.rgb(id)?;
                let seg = self.seg_encoded(id)?;
                if (rgb.h, rgb.w) != (seg.h, seg.w) {
                    return Err(Error::Data(format!(
                        "record '{id}': rgb {}×{} vs seg {}×{}",
                        rgb.h, rgb.w, seg.h, seg.w
                    )));
                }
                let mut data = Vec::with_capacity((rgb.c + seg.c) * rgb.h * rgb.w);
                data.extend_from_slice(rgb.data());
                data.extend_from_slice(seg.data());
                Ok(Cow::Owned(Tensor3::from_vec(rgb.c + seg.c, rgb.h, rgb.w, data)))
            }
        }
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn load_rgb(path: &Path, target_size: Option<(usize, usize)>) -> Result<Tensor3> {
    let img = image::open(path)?;
    let img = match target_size {
        Some((h, w)) if (img.height() as usize, img.width() as usize) != (h, w) => {
            image::DynamicImage::ImageRgb8(image::imageops::resize(
                &img.to_rgb8(),
                w as u32,
                h as u32,
                image::imageops::FilterType::Triangle,
            ))
        }
        _ => img,
    };
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut t = Tensor3::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let px = rgb.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                t.set(c, y, x, px[c] as f64 / 255.0);
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthConfig};

    #[test]
    fn loads_synthetic_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_places: 2,
            views_per_place: 2,
            image_size: (24, 24),
            seed: 3,
            ..Default::default()
        };
        let out = synth_generate(&cfg, dir.path()).unwrap();
        let store = ImageStore::load(dir.path(), &out.records, &SlmeScheme::six_class(), None).unwrap();

        let id = &out.records[0].id;
        let rgb = store.rgb(id).unwrap();
        assert_eq!(rgb.shape(), (3, 24, 24));
        assert!(rgb.data().iter().all(|&v| (0.0..=1.0).contains(&v)));

        let seg = store.seg_encoded(id).unwrap();
        assert_eq!(seg.shape(), (6, 24, 24));

        let concat = store.input_for(InputKind::ConcatInput, id).unwrap();
        assert_eq!(concat.shape(), (9, 24, 24));
        // rgb channels first, then the encoded seg channels
        assert_eq!(&concat.data()[..rgb.len()], rgb.data());
    }

    #[test]
    fn missing_record_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_places: 2,
            views_per_place: 2,
            image_size: (24, 24),
            seed: 4,
            ..Default::default()
        };
        let out = synth_generate(&cfg, dir.path()).unwrap();
        let store = ImageStore::load(dir.path(), &out.records, &SlmeScheme::six_class(), None).unwrap();
        assert!(store.rgb("ghost").is_err());
    }

    #[test]
    fn unreadable_image_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_places: 2,
            views_per_place: 2,
            image_size: (24, 24),
            seed: 5,
            ..Default::default()
        };
        let mut out = synth_generate(&cfg, dir.path()).unwrap();
        out.records[1].rgb_path = PathBuf::from("rgb/missing.png");
        let err = ImageStore::load(dir.path(), &out.records, &SlmeScheme::six_class(), None).unwrap_err();
        assert!(err.to_string().contains(&out.records[1].id), "{err}");
    }

    #[test]
    fn resize_applies_to_both_modalities() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_places: 2,
            views_per_place: 2,
            image_size: (32, 32),
            seed: 6,
            ..Default::default()
        };
        let out = synth_generate(&cfg, dir.path()).unwrap();
        let store =
            ImageStore::load(dir.path(), &out.records, &SlmeScheme::six_class(), Some((16, 16))).unwrap();
        let id = &out.records[0].id;
        assert_eq!(store.rgb(id).unwrap().shape(), (3, 16, 16));
        let seg = store.seg_encoded(id).unwrap();
        assert_eq!(seg.shape(), (6, 16, 16));
        // nearest-neighbor keeps label values in the original class set
        let map = store.label_map(id).unwrap();
        assert!(map.data().iter().all(|&v| v < 6));
    }
}
