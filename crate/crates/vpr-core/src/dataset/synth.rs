//! Procedural synthetic scenes: paired RGB renders and clean class-index
//! label maps, with controllable nuisance and query corruption.
//!
//! Each place is a fixed layout of sky, ground, buildings, vegetation and
//! small objects (the six clustered classes). Views of a place differ by a
//! crop-window shift, illumination and color jitter, and per-view dynamic
//! occluders. Queries flagged as corrupted additionally receive a severe
//! photometric scramble; their label maps are untouched.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{save_manifest, PlaceRecord, Pose, Split};
use crate::error::{Error, Result};
use crate::slme::LabelMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_places: usize,
    pub views_per_place: usize,
    /// (height, width) in pixels.
    pub image_size: (usize, usize),
    /// Fraction of queries given severe appearance corruption.
    pub corrupt_fraction: f64,
    pub color_jitter: f64,
    pub illumination_shift: f64,
    /// Expected dynamic occluders per view.
    pub occluder_density: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_places: 20,
            views_per_place: 3,
            image_size: (48, 48),
            corrupt_fraction: 0.5,
            color_jitter: 0.06,
            illumination_shift: 0.15,
            occluder_density: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_places < 2 {
            return Err(Error::Config("n_places must be at least 2".into()));
        }
        if self.views_per_place < 2 {
            return Err(Error::Config("views_per_place must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.corrupt_fraction) {
            return Err(Error::Config(format!(
                "corrupt_fraction must lie in [0, 1], got {}",
                self.corrupt_fraction
            )));
        }
        let (h, w) = self.image_size;
        if h < 16 || w < 16 {
            return Err(Error::Config("image_size must be at least 16×16".into()));
        }
        Ok(())
    }
}

/// Per-record generation facts, written alongside the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecordMeta {
    pub id: String,
    pub place: usize,
    pub view: usize,
    pub corrupted: bool,
    /// Crop offset of this view inside the place's world canvas.
    pub crop_dy: i64,
    pub crop_dx: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthMeta {
    pub config: SynthConfig,
    pub records: Vec<SynthRecordMeta>,
}

/// Output of a generation run.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest_path: PathBuf,
    pub records: Vec<PlaceRecord>,
    pub meta: SynthMeta,
}

// class indices, bound to the default SLME channel order
const VEGETATION: u16 = 0;
const DYNAMIC: u16 = 1;
const SKY: u16 = 2;
const GROUND: u16 = 3;
const BUILDING: u16 = 4;
const OTHER: u16 = 5;

struct WorldCanvas {
    h: usize,
    w: usize,
    labels: Vec<u16>,
    colors: Vec<[f64; 3]>,
}

impl WorldCanvas {
    fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            labels: vec![SKY; h * w],
            colors: vec![[0.0; 3]; h * w],
        }
    }

    fn paint_rect(&mut self, y0: usize, y1: usize, x0: usize, x1: usize, class: u16, color: [f64; 3]) {
        for y in y0..y1.min(self.h) {
            for x in x0..x1.min(self.w) {
                let i = y * self.w + x;
                self.labels[i] = class;
                self.colors[i] = color;
            }
        }
    }

    fn paint_disk(&mut self, cy: f64, cx: f64, r: f64, class: u16, color: [f64; 3]) {
        let y0 = (cy - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil() as usize + 1).min(self.h);
        let x0 = (cx - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil() as usize + 1).min(self.w);
        for y in y0..y1 {
            for x in x0..x1 {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                if dy * dy + dx * dx <= r * r {
                    let i = y * self.w + x;
                    self.labels[i] = class;
                    self.colors[i] = color;
                }
            }
        }
    }
}

fn jitter_color(base: [f64; 3], spread: f64, rng: &mut impl Rng) -> [f64; 3] {
    [
        base[0] + rng.gen_range(-spread..spread),
        base[1] + rng.gen_range(-spread..spread),
        base[2] + rng.gen_range(-spread..spread),
    ]
}

/// Deterministic per-pixel texture noise, independent of iteration order.
fn hash_noise(seed: u64, place: usize, index: usize, channel: usize) -> f64 {
    let mut v = seed
        ^ (place as u64).wrapping_mul(0x9e3779b97f4a7c15)
        ^ (index as u64).wrapping_mul(0xbf58476d1ce4e5b9)
        ^ (channel as u64).wrapping_mul(0x94d049bb133111eb);
    v ^= v >> 30;
    v = v.wrapping_mul(0xbf58476d1ce4e5b9);
    v ^= v >> 27;
    v = v.wrapping_mul(0x94d049bb133111eb);
    v ^= v >> 31;
    (v as f64 / u64::MAX as f64) * 2.0 - 1.0
}

fn render_place(cfg: &SynthConfig, place: usize, world_h: usize, world_w: usize) -> WorldCanvas {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1 + place as u64);

    let mut canvas = WorldCanvas::new(world_h, world_w);
    let horizon = (world_h as f64 * rng.gen_range(0.40..0.60)) as usize;

    let sky_color = jitter_color([0.55, 0.70, 0.90], 0.08, &mut rng);
    canvas.paint_rect(0, horizon, 0, world_w, SKY, sky_color);
    let ground_color = jitter_color([0.45, 0.40, 0.33], 0.08, &mut rng);
    canvas.paint_rect(horizon, world_h, 0, world_w, GROUND, ground_color);

    let n_buildings = rng.gen_range(2..=4);
    for _ in 0..n_buildings {
        let bw = rng.gen_range(world_w / 6..world_w / 3 + 1);
        let x0 = rng.gen_range(0..world_w.saturating_sub(bw).max(1));
        let bh = (world_h as f64 * rng.gen_range(0.18..0.45)) as usize;
        let top = horizon.saturating_sub(bh);
        let color = jitter_color([0.52, 0.50, 0.52], 0.15, &mut rng);
        canvas.paint_rect(top, horizon, x0, x0 + bw, BUILDING, color);
    }

    let n_veg = rng.gen_range(1..=3);
    for _ in 0..n_veg {
        let cx = rng.gen_range(0.0..world_w as f64);
        let cy = horizon as f64 + rng.gen_range(-2.0..2.0);
        let r = world_h as f64 * rng.gen_range(0.08..0.18);
        let color = jitter_color([0.20, 0.50, 0.25], 0.10, &mut rng);
        canvas.paint_disk(cy, cx, r, VEGETATION, color);
    }

    let n_other = rng.gen_range(1..=3);
    for _ in 0..n_other {
        let ow = rng.gen_range(world_w / 16..world_w / 8 + 1).max(1);
        let oh = rng.gen_range(world_h / 12..world_h / 6 + 1).max(1);
        let x0 = rng.gen_range(0..world_w.saturating_sub(ow).max(1));
        let y0 = rng.gen_range(horizon..world_h.saturating_sub(oh).max(horizon + 1));
        let color = jitter_color([0.70, 0.45, 0.20], 0.15, &mut rng);
        canvas.paint_rect(y0, y0 + oh, x0, x0 + ow, OTHER, color);
    }

    canvas
}

struct ViewParams {
    dy: i64,
    dx: i64,
    illumination: f64,
    channel_shift: [f64; 3],
    occluders: Vec<(f64, f64, f64, [f64; 3])>,
    pose: Pose,
}

fn view_params(cfg: &SynthConfig, place: usize, view: usize, margin_y: usize, margin_x: usize) -> ViewParams {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1_000_000 + (place * cfg.views_per_place + view) as u64);

    let dy = rng.gen_range(-(margin_y as i64)..=margin_y as i64);
    let dx = rng.gen_range(-(margin_x as i64)..=margin_x as i64);
    let illumination = 1.0 + rng.gen_range(-1.0..1.0) * cfg.illumination_shift;
    let channel_shift = [
        rng.gen_range(-1.0..1.0) * cfg.color_jitter,
        rng.gen_range(-1.0..1.0) * cfg.color_jitter,
        rng.gen_range(-1.0..1.0) * cfg.color_jitter,
    ];

    let mut occluders = Vec::new();
    let mut budget = cfg.occluder_density;
    while budget > 0.0 {
        let emit = budget >= 1.0 || rng.gen::<f64>() < budget;
        budget -= 1.0;
        if !emit {
            continue;
        }
        let (h, w) = cfg.image_size;
        let cy = rng.gen_range(0.45..0.9) * h as f64;
        let cx = rng.gen_range(0.0..w as f64);
        let r = rng.gen_range(0.05..0.12) * h as f64;
        let color = jitter_color([0.80, 0.20, 0.20], 0.20, &mut rng);
        occluders.push((cy, cx, r, color));
    }

    // places sit on a coarse grid far beyond the ground-truth radius;
    // views jitter within a few meters of the place center
    let cols = (cfg.n_places as f64).sqrt().ceil() as usize;
    let center_e = (place % cols) as f64 * 100.0;
    let center_n = (place / cols) as f64 * 100.0;
    let pose = Pose::new(
        center_e + rng.gen_range(-3.0..3.0),
        center_n + rng.gen_range(-3.0..3.0),
        rng.gen_range(-10.0..10.0),
    )
    .expect("finite synthetic pose");

    ViewParams {
        dy,
        dx,
        illumination,
        channel_shift,
        occluders,
        pose,
    }
}

fn corrupt_params(cfg: &SynthConfig, place: usize, view: usize) -> ([[f64; 3]; 3], f64, f64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2_000_000 + (place * cfg.views_per_place + view) as u64);
    // strong random channel mixing
    let mut matrix = [[0.0; 3]; 3];
    for row in &mut matrix {
        for v in row.iter_mut() {
            *v = rng.gen_range(-0.6..1.2);
        }
    }
    let gamma = rng.gen_range(0.45..2.4);
    let brightness = rng.gen_range(-0.25..0.25);
    let noise_seed = rng.gen::<u64>();
    (matrix, gamma, brightness, noise_seed)
}

/// Generates the dataset on disk: `rgb/`, `seg/`, `manifest.csv` and
/// `synth_meta.json` under `out_dir`. Fully reproducible from the seed;
/// on failure every file written so far is removed.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut created: Vec<PathBuf> = Vec::new();
    match generate_inner(cfg, out_dir, &mut created) {
        Ok(out) => Ok(out),
        Err(e) => {
            for path in created.iter().rev() {
                let _ = std::fs::remove_file(path);
            }
            let _ = std::fs::remove_dir(out_dir.join("rgb"));
            let _ = std::fs::remove_dir(out_dir.join("seg"));
            Err(e)
        }
    }
}

fn generate_inner(cfg: &SynthConfig, out_dir: &Path, created: &mut Vec<PathBuf>) -> Result<SynthOutput> {
    let (h, w) = cfg.image_size;
    let margin_y = (h / 16).max(1);
    let margin_x = (w / 8).max(2);
    let world_h = h + 2 * margin_y;
    let world_w = w + 2 * margin_x;

    std::fs::create_dir_all(out_dir.join("rgb"))?;
    std::fs::create_dir_all(out_dir.join("seg"))?;

    // pick corrupted queries: one query per place (its last view)
    let mut query_places: Vec<usize> = (0..cfg.n_places).collect();
    let mut pick_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pick_rng.set_stream(0);
    query_places.shuffle(&mut pick_rng);
    let n_corrupt = (cfg.corrupt_fraction * cfg.n_places as f64).round() as usize;
    let corrupted_places: std::collections::HashSet<usize> =
        query_places.into_iter().take(n_corrupt).collect();

    let mut records = Vec::new();
    let mut metas = Vec::new();

    for place in 0..cfg.n_places {
        let canvas = render_place(cfg, place, world_h, world_w);
        for view in 0..cfg.views_per_place {
            let is_query = view == cfg.views_per_place - 1;
            let corrupted = is_query && corrupted_places.contains(&place);
            let vp = view_params(cfg, place, view, margin_y, margin_x);
            let id = format!("p{place:04}_v{view}");

            let oy = (margin_y as i64 + vp.dy) as usize;
            let ox = (margin_x as i64 + vp.dx) as usize;

            // crop label map and paint per-view occluders (dynamic class)
            let mut labels = vec![0u16; h * w];
            let mut colors = vec![[0.0f64; 3]; h * w];
            for y in 0..h {
                for x in 0..w {
                    let wi = (y + oy) * world_w + (x + ox);
                    let li = y * w + x;
                    labels[li] = canvas.labels[wi];
                    colors[li] = canvas.colors[wi];
                }
            }
            for &(cy, cx, r, color) in &vp.occluders {
                paint_disk_flat(&mut labels, &mut colors, h, w, cy, cx, r, DYNAMIC, color);
            }

            // RGB render: texture noise, illumination, color jitter
            let mut rgb = vec![0.0f64; h * w * 3];
            for y in 0..h {
                for x in 0..w {
                    let li = y * w + x;
                    let wi = (y + oy) * world_w + (x + ox);
                    for c in 0..3 {
                        let mut v = colors[li][c]
                            + 0.04 * hash_noise(cfg.seed, place, wi, c)
                            + vp.channel_shift[c];
                        v *= vp.illumination;
                        rgb[li * 3 + c] = v;
                    }
                }
            }

            if corrupted {
                let (matrix, gamma, brightness, noise_seed) = corrupt_params(cfg, place, view);
                for li in 0..h * w {
                    let src = [rgb[li * 3], rgb[li * 3 + 1], rgb[li * 3 + 2]];
                    for c in 0..3 {
                        let mixed: f64 = (0..3).map(|k| matrix[c][k] * src[k]).sum();
                        let v = mixed.clamp(0.0, 1.0).powf(gamma)
                            + brightness
                            + 0.08 * hash_noise(noise_seed, place, li, c);
                        rgb[li * 3 + c] = v;
                    }
                }
            }

            let rgb_rel = PathBuf::from(format!("rgb/{id}.png"));
            let seg_rel = PathBuf::from(format!("seg/{id}.png"));
            write_rgb_png(&out_dir.join(&rgb_rel), h, w, &rgb, created)?;
            write_label_png(&out_dir.join(&seg_rel), h, w, &labels, created)?;

            records.push(PlaceRecord {
                id: id.clone(),
                rgb_path: rgb_rel,
                seg_path: Some(seg_rel),
                pose: Some(vp.pose),
                split: if is_query { Split::Query } else { Split::Database },
                seq_index: None,
            });
            metas.push(SynthRecordMeta {
                id,
                place,
                view,
                corrupted,
                crop_dy: vp.dy,
                crop_dx: vp.dx,
            });
        }
    }

    let manifest_path = out_dir.join("manifest.csv");
    save_manifest(&records, &manifest_path)?;
    created.push(manifest_path.clone());

    let meta = SynthMeta {
        config: cfg.clone(),
        records: metas,
    };
    let meta_path = out_dir.join("synth_meta.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;
    created.push(meta_path);

    Ok(SynthOutput {
        manifest_path,
        records,
        meta,
    })
}

#[allow(clippy::too_many_arguments)]
fn paint_disk_flat(
    labels: &mut [u16],
    colors: &mut [[f64; 3]],
    h: usize,
    w: usize,
    cy: f64,
    cx: f64,
    r: f64,
    class: u16,
    color: [f64; 3],
) {
    let y0 = (cy - r).floor().max(0.0) as usize;
    let y1 = (((cy + r).ceil() as i64 + 1).max(0) as usize).min(h);
    let x0 = (cx - r).floor().max(0.0) as usize;
    let x1 = (((cx + r).ceil() as i64 + 1).max(0) as usize).min(w);
    for y in y0..y1 {
        for x in x0..x1 {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            if dy * dy + dx * dx <= r * r {
                labels[y * w + x] = class;
                colors[y * w + x] = color;
            }
        }
    }
}

fn write_rgb_png(path: &Path, h: usize, w: usize, rgb: &[f64], created: &mut Vec<PathBuf>) -> Result<()> {
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let li = (y * w + x) * 3;
            let px = [
                (rgb[li].clamp(0.0, 1.0) * 255.0).round() as u8,
                (rgb[li + 1].clamp(0.0, 1.0) * 255.0).round() as u8,
                (rgb[li + 2].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path)?;
    created.push(path.to_path_buf());
    Ok(())
}

fn write_label_png(path: &Path, h: usize, w: usize, labels: &[u16], created: &mut Vec<PathBuf>) -> Result<()> {
    let max = labels.iter().copied().max().unwrap_or(0);
    if max > 255 {
        let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                img.put_pixel(x as u32, y as u32, image::Luma([labels[y * w + x]]));
            }
        }
        img.save(path)?;
    } else {
        let mut img = image::GrayImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                img.put_pixel(x as u32, y as u32, image::Luma([labels[y * w + x] as u8]));
            }
        }
        img.save(path)?;
    }
    created.push(path.to_path_buf());
    Ok(())
}

/// Reads a label map from an 8- or 16-bit grayscale image.
pub fn load_label_map(path: &Path) -> Result<LabelMap> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<u16> = match img {
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
        image::DynamicImage::ImageLuma16(buf) => buf.into_raw(),
        other => other.into_luma16().into_raw(),
    };
    Ok(LabelMap::new(h, w, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ground_truth_sets, GroundTruthConfig};

    fn small_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            n_places: 4,
            views_per_place: 3,
            image_size: (32, 32),
            corrupt_fraction: 0.5,
            seed,
            ..Default::default()
        }
    }

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for entry in walk(dir) {
            let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            out.push((rel, std::fs::read(&entry).unwrap()));
        }
        out.sort();
        out
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut files = Vec::new();
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                files.extend(walk(&path));
            } else {
                files.push(path);
            }
        }
        files
    }

    #[test]
    fn fixed_seed_runs_are_byte_identical() {
        let cfg = small_cfg(11);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        synth_generate(&cfg, d1.path()).unwrap();
        synth_generate(&cfg, d2.path()).unwrap();
        assert_eq!(dir_bytes(d1.path()), dir_bytes(d2.path()));
    }

    #[test]
    fn zero_corrupt_fraction_flags_nothing() {
        let cfg = SynthConfig {
            corrupt_fraction: 0.0,
            ..small_cfg(3)
        };
        let dir = tempfile::tempdir().unwrap();
        let out = synth_generate(&cfg, dir.path()).unwrap();
        assert!(out.meta.records.iter().all(|m| !m.corrupted));
    }

    #[test]
    fn label_maps_use_only_the_six_classes() {
        let cfg = small_cfg(7);
        let dir = tempfile::tempdir().unwrap();
        let out = synth_generate(&cfg, dir.path()).unwrap();
        for record in &out.records {
            let seg = dir.path().join(record.seg_path.as_ref().unwrap());
            let map = load_label_map(&seg).unwrap();
            assert!(map.data().iter().all(|&v| v < 6), "record {}", record.id);
        }
    }

    #[test]
    fn manifest_round_trips() {
        let cfg = small_cfg(5);
        let dir = tempfile::tempdir().unwrap();
        let out = synth_generate(&cfg, dir.path()).unwrap();
        let loaded = crate::dataset::load_manifest(&out.manifest_path).unwrap();
        assert_eq!(loaded, out.records);
    }

    #[test]
    fn same_place_views_are_ground_truth_positives() {
        let cfg = small_cfg(9);
        let dir = tempfile::tempdir().unwrap();
        let out = synth_generate(&cfg, dir.path()).unwrap();
        let gt = ground_truth_sets(&out.records, &GroundTruthConfig::default()).unwrap();
        for (query_id, refs) in &gt {
            let place = &query_id[..5];
            // all and only the same-place database views
            let expect: std::collections::BTreeSet<String> = out
                .records
                .iter()
                .filter(|r| r.split == Split::Database && r.id.starts_with(place))
                .map(|r| r.id.clone())
                .collect();
            assert_eq!(refs, &expect, "query {query_id}");
        }
    }

    #[test]
    fn label_maps_shift_with_declared_jitter_only() {
        // without occluders, two views of one place are crops of the same canvas
        let cfg = SynthConfig {
            occluder_density: 0.0,
            ..small_cfg(13)
        };
        let dir = tempfile::tempdir().unwrap();
        let out = synth_generate(&cfg, dir.path()).unwrap();

        let meta = &out.meta.records;
        let a = &meta[0];
        let b = &meta[1];
        assert_eq!(a.place, b.place);
        let la = load_label_map(&dir.path().join(format!("seg/{}.png", a.id))).unwrap();
        let lb = load_label_map(&dir.path().join(format!("seg/{}.png", b.id))).unwrap();

        let (h, w) = cfg.image_size;
        let shift_y = b.crop_dy - a.crop_dy;
        let shift_x = b.crop_dx - a.crop_dx;
        let mut compared = 0usize;
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (by, bx) = (y - shift_y, x - shift_x);
                if by >= 0 && by < h as i64 && bx >= 0 && bx < w as i64 {
                    assert_eq!(
                        la.get(y as usize, x as usize),
                        lb.get(by as usize, bx as usize),
                        "mismatch at ({y}, {x})"
                    );
                    compared += 1;
                }
            }
        }
        assert!(compared > 0);
    }

    #[test]
    fn corruption_changes_rgb_but_not_labels() {
        let base = SynthConfig {
            corrupt_fraction: 0.0,
            ..small_cfg(21)
        };
        let all = SynthConfig {
            corrupt_fraction: 1.0,
            ..small_cfg(21)
        };
        let d_base = tempfile::tempdir().unwrap();
        let d_all = tempfile::tempdir().unwrap();
        let out_base = synth_generate(&base, d_base.path()).unwrap();
        let out_all = synth_generate(&all, d_all.path()).unwrap();

        for (mb, ma) in out_base.meta.records.iter().zip(&out_all.meta.records) {
            assert_eq!(mb.id, ma.id);
            let seg_b = std::fs::read(d_base.path().join(format!("seg/{}.png", mb.id))).unwrap();
            let seg_a = std::fs::read(d_all.path().join(format!("seg/{}.png", ma.id))).unwrap();
            assert_eq!(seg_b, seg_a, "label map must not change under corruption");
            let rgb_b = std::fs::read(d_base.path().join(format!("rgb/{}.png", mb.id))).unwrap();
            let rgb_a = std::fs::read(d_all.path().join(format!("rgb/{}.png", ma.id))).unwrap();
            if ma.corrupted {
                assert_ne!(rgb_b, rgb_a, "corrupted query must differ from clean render");
            } else {
                assert_eq!(rgb_b, rgb_a);
            }
        }
    }
}
