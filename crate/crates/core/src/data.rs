//! Synthetic two-domain benchmark generator and on-disk dataset I/O.
//!
//! Scenes contain bright shapes (disk, square, triangle) on a dark
//! background. Target-domain images are the same renders passed through a
//! corruption pipeline (Gaussian blur, brightness shift, additive noise);
//! ground-truth boxes are recorded before corruption, so labels are valid
//! in both domains. Pixels are quantized to the 8-bit grid at generation
//! time so a save/load round-trip is bit-exact.

use crate::geometry::BoxXYXY;
use ndarray::{ArrayD, IxDyn};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Which side of the adaptation problem an image belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Binary cross-entropy target for the pixel/instance discriminators,
    /// which predict the probability that features come from the source.
    pub fn adversarial_label(self) -> f64 {
        match self {
            Domain::Source => 1.0,
            Domain::Target => 0.0,
        }
    }

    /// Channel parity in category-domain maps: source maps to even
    /// channels `2c`, target to odd channels `2c + 1`.
    pub fn channel_offset(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }
}

/// An image with its domain tag and ground-truth objects.
#[derive(Debug, Clone)]
pub struct AnnotatedImage {
    pub id: String,
    /// Pixels `(3, H, W)` in `[0, 1]`, quantized to the 8-bit grid.
    pub pixels: ArrayD<f64>,
    pub domain: Domain,
    pub objects: Vec<(BoxXYXY, usize)>,
}

impl AnnotatedImage {
    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    /// Check box bounds and category range.
    pub fn validate(&self, num_categories: usize) -> Result<(), String> {
        let (w, h) = (self.width() as f64, self.height() as f64);
        for (idx, (bx, cat)) in self.objects.iter().enumerate() {
            if bx.x1 < 0.0 || bx.y1 < 0.0 || bx.x2 > w || bx.y2 > h {
                return Err(format!("object {idx}: box outside {w}x{h} image bounds"));
            }
            if *cat >= num_categories {
                return Err(format!(
                    "object {idx}: unknown category {cat} (have {num_categories})"
                ));
            }
        }
        Ok(())
    }
}

/// One optimization batch: labeled source images plus unlabeled targets.
#[derive(Debug, Clone)]
pub struct DomainBatch {
    pub source: Vec<AnnotatedImage>,
    pub target: Vec<AnnotatedImage>,
}

/// Knobs for the synthetic benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Square image side; must be divisible by the coarsest stride.
    pub image_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Bounds on an object's longest side, in pixels.
    pub min_size: f64,
    pub max_size: f64,
    /// Target-domain corruption; all zeros is the identity.
    pub blur_sigma: f64,
    pub brightness_shift: f64,
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 128,
            min_objects: 2,
            max_objects: 5,
            min_size: 10.0,
            max_size: 110.0,
            blur_sigma: 1.2,
            brightness_shift: -0.22,
            noise_amplitude: 0.06,
            seed: 0,
        }
    }
}

/// Shape categories, in category-id order.
pub const SHAPE_NAMES: [&str; 3] = ["disk", "square", "triangle"];
pub const NUM_SHAPE_CATEGORIES: usize = 3;

const PALETTE: [[f64; 3]; 3] = [
    [0.90, 0.35, 0.30],
    [0.35, 0.85, 0.35],
    [0.40, 0.55, 0.95],
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("annotation document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("record {index} ({image}): {message}")]
    Record {
        index: usize,
        image: String,
        message: String,
    },
}

#[derive(Serialize, Deserialize)]
struct ObjectRecord {
    bbox: [f64; 4],
    category: usize,
}

#[derive(Serialize, Deserialize)]
struct ImageRecord {
    image: String,
    domain: Domain,
    objects: Vec<ObjectRecord>,
}

/// Generate `n_images` deterministic scenes for one domain.
///
/// Scene content depends only on `(config.seed, index)`, never on the
/// domain, so the target split renders the same scenes as the source split
/// before corruption. Callers wanting unpaired splits use distinct seeds.
pub fn synthesize(config: &SynthConfig, n_images: usize, domain: Domain) -> Vec<AnnotatedImage> {
    (0..n_images)
        .map(|index| synthesize_one(config, index, domain))
        .collect()
}

fn synthesize_one(config: &SynthConfig, index: usize, domain: Domain) -> AnnotatedImage {
    let mut scene_rng = ChaCha8Rng::seed_from_u64(config.seed);
    scene_rng.set_stream(2 * index as u64);
    let (mut pixels, objects) = render_scene(config, &mut scene_rng);
    if domain == Domain::Target {
        let mut corrupt_rng = ChaCha8Rng::seed_from_u64(config.seed);
        corrupt_rng.set_stream(2 * index as u64 + 1);
        corrupt(&mut pixels, config, &mut corrupt_rng);
    }
    quantize(&mut pixels);
    let prefix = match domain {
        Domain::Source => "src",
        Domain::Target => "tgt",
    };
    AnnotatedImage {
        id: format!("{prefix}_{index:04}"),
        pixels,
        domain,
        objects,
    }
}

fn render_scene(
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> (ArrayD<f64>, Vec<(BoxXYXY, usize)>) {
    let s = config.image_size;
    let base = rng.random_range(0.03..0.10);
    let mut pixels = ArrayD::zeros(IxDyn(&[3, s, s]));
    for c in 0..3 {
        for j in 0..s {
            for i in 0..s {
                let texture: f64 = rng.random_range(-0.015..0.015);
                pixels[IxDyn(&[c, j, i])] = (base + texture).clamp(0.0, 1.0);
            }
        }
    }

    let count = rng.random_range(config.min_objects..=config.max_objects);
    let mut objects: Vec<(BoxXYXY, usize)> = Vec::new();
    for _ in 0..count {
        let category = rng.random_range(0..NUM_SHAPE_CATEGORIES);
        let mut placed = None;
        for _ in 0..30 {
            let side = rng.random_range(config.min_size..=config.max_size);
            let aspect = rng.random_range(1.0..4.0 / 3.0);
            let (mut w, mut h) = (side, side / aspect);
            if rng.random_bool(0.5) {
                std::mem::swap(&mut w, &mut h);
            }
            let max_x1 = s as f64 - 1.0 - w;
            let max_y1 = s as f64 - 1.0 - h;
            if max_x1 <= 1.0 || max_y1 <= 1.0 {
                continue;
            }
            let x1 = rng.random_range(1.0..max_x1);
            let y1 = rng.random_range(1.0..max_y1);
            let bx = BoxXYXY::new(x1, y1, x1 + w, y1 + h).expect("constructed ordered");
            let ok = objects.iter().all(|(other, _)| {
                let inter_ok = crate::geometry::iou(&bx, other) <= 0.25;
                let cover = intersection_area(&bx, other) / bx.area().min(other.area());
                inter_ok && cover <= 0.5
            });
            if ok {
                placed = Some(bx);
                break;
            }
        }
        let Some(bx) = placed else { continue };
        let color: Vec<f64> = PALETTE[category]
            .iter()
            .map(|v| (v + rng.random_range(-0.08..0.08)).clamp(0.12, 1.0))
            .collect();
        rasterize(&mut pixels, &bx, category, &color);
        objects.push((bx, category));
    }
    (pixels, objects)
}

fn intersection_area(a: &BoxXYXY, b: &BoxXYXY) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    iw * ih
}

fn rasterize(pixels: &mut ArrayD<f64>, bx: &BoxXYXY, category: usize, color: &[f64]) {
    let s = pixels.shape()[1];
    let (cx, cy) = (0.5 * (bx.x1 + bx.x2), 0.5 * (bx.y1 + bx.y2));
    let (rx, ry) = (0.5 * bx.width(), 0.5 * bx.height());
    let j0 = bx.y1.floor().max(0.0) as usize;
    let j1 = (bx.y2.ceil() as usize).min(s);
    let i0 = bx.x1.floor().max(0.0) as usize;
    let i1 = (bx.x2.ceil() as usize).min(s);
    for j in j0..j1 {
        for i in i0..i1 {
            let px = i as f64 + 0.5;
            let py = j as f64 + 0.5;
            let inside = match category {
                0 => {
                    let nx = (px - cx) / rx;
                    let ny = (py - cy) / ry;
                    nx * nx + ny * ny <= 1.0
                }
                1 => px >= bx.x1 && px <= bx.x2 && py >= bx.y1 && py <= bx.y2,
                _ => {
                    py >= bx.y1
                        && py <= bx.y2
                        && (px - cx).abs() <= 0.5 * bx.width() * (py - bx.y1) / bx.height()
                }
            };
            if inside {
                for c in 0..3 {
                    pixels[IxDyn(&[c, j, i])] = color[c];
                }
            }
        }
    }
}

fn corrupt(pixels: &mut ArrayD<f64>, config: &SynthConfig, rng: &mut ChaCha8Rng) {
    if config.blur_sigma > 0.0 {
        gaussian_blur(pixels, config.blur_sigma);
    }
    if config.brightness_shift != 0.0 {
        pixels.mapv_inplace(|v| v + config.brightness_shift);
    }
    if config.noise_amplitude > 0.0 {
        let amp = config.noise_amplitude;
        pixels.mapv_inplace(|v| v + rng.random_range(-amp..amp));
    }
    pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
}

/// Separable Gaussian blur with clamp-to-edge padding.
fn gaussian_blur(pixels: &mut ArrayD<f64>, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let norm: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / norm).collect();

    let (ch, h, w) = (pixels.shape()[0], pixels.shape()[1], pixels.shape()[2]);
    let mut tmp = pixels.clone();
    for c in 0..ch {
        for j in 0..h {
            for i in 0..w {
                let mut acc = 0.0;
                for (t, wt) in weights.iter().enumerate() {
                    let x = (i as isize + t as isize - radius).clamp(0, w as isize - 1);
                    acc += wt * pixels[IxDyn(&[c, j, x as usize])];
                }
                tmp[IxDyn(&[c, j, i])] = acc;
            }
        }
    }
    for c in 0..ch {
        for j in 0..h {
            for i in 0..w {
                let mut acc = 0.0;
                for (t, wt) in weights.iter().enumerate() {
                    let y = (j as isize + t as isize - radius).clamp(0, h as isize - 1);
                    acc += wt * tmp[IxDyn(&[c, y as usize, i])];
                }
                pixels[IxDyn(&[c, j, i])] = acc;
            }
        }
    }
}

fn quantize(pixels: &mut ArrayD<f64>) {
    pixels.mapv_inplace(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
}

/// Bilinear resize to a square side, scaling boxes to match.
pub fn resize(img: &AnnotatedImage, new_size: usize) -> AnnotatedImage {
    let (h, w) = (img.height(), img.width());
    let mut out = ArrayD::zeros(IxDyn(&[3, new_size, new_size]));
    let sy = h as f64 / new_size as f64;
    let sx = w as f64 / new_size as f64;
    for c in 0..3 {
        for j in 0..new_size {
            let fy = ((j as f64 + 0.5) * sy - 0.5).clamp(0.0, h as f64 - 1.0);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let dy = fy - y0 as f64;
            for i in 0..new_size {
                let fx = ((i as f64 + 0.5) * sx - 0.5).clamp(0.0, w as f64 - 1.0);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let dx = fx - x0 as f64;
                let v00 = img.pixels[IxDyn(&[c, y0, x0])];
                let v01 = img.pixels[IxDyn(&[c, y0, x1])];
                let v10 = img.pixels[IxDyn(&[c, y1, x0])];
                let v11 = img.pixels[IxDyn(&[c, y1, x1])];
                out[IxDyn(&[c, j, i])] = v00 * (1.0 - dy) * (1.0 - dx)
                    + v01 * (1.0 - dy) * dx
                    + v10 * dy * (1.0 - dx)
                    + v11 * dy * dx;
            }
        }
    }
    let rx = new_size as f64 / w as f64;
    let ry = new_size as f64 / h as f64;
    let objects = img
        .objects
        .iter()
        .map(|(bx, cat)| {
            let scaled = BoxXYXY::new(bx.x1 * rx, bx.y1 * ry, bx.x2 * rx, bx.y2 * ry)
                .expect("positive scaling preserves ordering");
            (scaled, *cat)
        })
        .collect();
    AnnotatedImage {
        id: img.id.clone(),
        pixels: out,
        domain: img.domain,
        objects,
    }
}

/// Write images as PNGs under `root/images/` plus one annotation document.
pub fn save_dataset(dataset: &[AnnotatedImage], root: &Path, annotation_name: &str) -> Result<(), DataError> {
    let images_dir = root.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|source| DataError::Io {
        path: images_dir.clone(),
        source,
    })?;
    let mut sorted: Vec<&AnnotatedImage> = dataset.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let mut records = Vec::with_capacity(sorted.len());
    for img in sorted {
        let rel = format!("images/{}.png", img.id);
        let path = root.join(&rel);
        write_png(&img.pixels, &path)?;
        records.push(ImageRecord {
            image: rel,
            domain: img.domain,
            objects: img
                .objects
                .iter()
                .map(|(bx, cat)| ObjectRecord {
                    bbox: [bx.x1, bx.y1, bx.x2, bx.y2],
                    category: *cat,
                })
                .collect(),
        });
    }
    let doc = serde_json::to_string_pretty(&records)?;
    let path = root.join(annotation_name);
    std::fs::write(&path, doc + "\n").map_err(|source| DataError::Io { path, source })?;
    Ok(())
}

/// Load a dataset saved in the annotation format, validating every record.
pub fn load_dataset(
    root: &Path,
    annotation_name: &str,
    num_categories: usize,
) -> Result<Vec<AnnotatedImage>, DataError> {
    let path = root.join(annotation_name);
    let doc = std::fs::read_to_string(&path).map_err(|source| DataError::Io {
        path: path.clone(),
        source,
    })?;
    let records: Vec<ImageRecord> = serde_json::from_str(&doc)?;

    let mut dataset = Vec::with_capacity(records.len());
    for (index, rec) in records.into_iter().enumerate() {
        let img_path = root.join(&rec.image);
        if !img_path.is_file() {
            return Err(DataError::Record {
                index,
                image: rec.image,
                message: "missing image file".into(),
            });
        }
        let pixels = read_png(&img_path)?;
        let id = Path::new(&rec.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| rec.image.clone());
        let mut objects = Vec::with_capacity(rec.objects.len());
        for (obj_idx, obj) in rec.objects.iter().enumerate() {
            let [x1, y1, x2, y2] = obj.bbox;
            let bx = BoxXYXY::new(x1, y1, x2, y2).map_err(|e| DataError::Record {
                index,
                image: rec.image.clone(),
                message: format!("object {obj_idx}: {e}"),
            })?;
            objects.push((bx, obj.category));
        }
        let img = AnnotatedImage {
            id,
            pixels,
            domain: rec.domain,
            objects,
        };
        img.validate(num_categories)
            .map_err(|message| DataError::Record {
                index,
                image: rec.image.clone(),
                message,
            })?;
        dataset.push(img);
    }
    dataset.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(dataset)
}

fn write_png(pixels: &ArrayD<f64>, path: &Path) -> Result<(), DataError> {
    let (h, w) = (pixels.shape()[1], pixels.shape()[2]);
    let mut raw = Vec::with_capacity(3 * h * w);
    for j in 0..h {
        for i in 0..w {
            for c in 0..3 {
                raw.push((pixels[IxDyn(&[c, j, i])].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, raw)
        .expect("raw buffer sized to dimensions");
    img.save(path).map_err(|source| DataError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Read an RGB PNG into `(3, H, W)` floats in [0, 1].
pub fn read_png(path: &Path) -> Result<ArrayD<f64>, DataError> {
    let img = image::open(path)
        .map_err(|source| DataError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut pixels = ArrayD::zeros(IxDyn(&[3, h, w]));
    for j in 0..h {
        for i in 0..w {
            let p = img.get_pixel(i as u32, j as u32);
            for c in 0..3 {
                pixels[IxDyn(&[c, j, i])] = p[c] as f64 / 255.0;
            }
        }
    }
    Ok(pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_config(seed: u64) -> SynthConfig {
        SynthConfig {
            image_size: 96,
            max_size: 60.0,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_renders_identical_pixels() {
        let cfg = small_config(7);
        let a = synthesize(&cfg, 3, Domain::Source);
        let b = synthesize(&cfg, 3, Domain::Source);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.pixels, y.pixels);
            assert_eq!(x.objects.len(), y.objects.len());
        }
    }

    #[test]
    fn identity_corruption_matches_source_render() {
        let cfg = SynthConfig {
            blur_sigma: 0.0,
            brightness_shift: 0.0,
            noise_amplitude: 0.0,
            ..small_config(11)
        };
        let src = synthesize(&cfg, 2, Domain::Source);
        let tgt = synthesize(&cfg, 2, Domain::Target);
        for (s, t) in src.iter().zip(tgt.iter()) {
            assert_eq!(s.pixels, t.pixels);
        }
    }

    #[test]
    fn generated_sizes_stay_in_requested_range() {
        let cfg = small_config(3);
        let imgs = synthesize(&cfg, 40, Domain::Source);
        let mut n = 0;
        for img in &imgs {
            for (bx, _) in &img.objects {
                let side = bx.width().max(bx.height());
                assert!(side >= cfg.min_size && side <= cfg.max_size, "side {side}");
                n += 1;
            }
        }
        assert!(n >= 40, "expected a healthy object sample, got {n}");
    }

    #[test]
    fn sizes_span_all_pyramid_scale_ranges() {
        let cfg = small_config(5);
        let imgs = synthesize(&cfg, 60, Domain::Source);
        let (mut small, mut medium, mut large) = (0, 0, 0);
        for img in &imgs {
            for (bx, _) in &img.objects {
                let side = bx.width().max(bx.height());
                if side <= 16.0 {
                    small += 1;
                } else if side <= 32.0 {
                    medium += 1;
                } else {
                    large += 1;
                }
            }
        }
        assert!(small > 0 && medium > 0 && large > 0, "{small}/{medium}/{large}");
    }

    #[test]
    fn object_interiors_stand_out_from_background() {
        let cfg = small_config(13);
        for img in synthesize(&cfg, 10, Domain::Source) {
            for (bx, _) in &img.objects {
                let (i0, i1) = (bx.x1.floor() as usize, (bx.x2.ceil() as usize).min(img.width()));
                let (j0, j1) = (bx.y1.floor() as usize, (bx.y2.ceil() as usize).min(img.height()));
                let mut sum = 0.0;
                let mut count = 0.0;
                for j in j0..j1 {
                    for i in i0..i1 {
                        for c in 0..3 {
                            sum += img.pixels[IxDyn(&[c, j, i])];
                        }
                        count += 3.0;
                    }
                }
                let interior_mean = sum / count;
                // background stays below 0.115 by construction
                assert!(
                    interior_mean - 0.115 > 0.1,
                    "interior mean {interior_mean} too close to background"
                );
            }
        }
    }

    #[test]
    fn corruption_preserves_geometry() {
        let cfg = small_config(17);
        let src = synthesize(&cfg, 5, Domain::Source);
        let tgt = synthesize(&cfg, 5, Domain::Target);
        for (s, t) in src.iter().zip(tgt.iter()) {
            assert_eq!(s.objects.len(), t.objects.len());
            for ((sb, sc), (tb, tc)) in s.objects.iter().zip(t.objects.iter()) {
                assert_eq!(sb.x1, tb.x1);
                assert_eq!(sb.y2, tb.y2);
                assert_eq!(sc, tc);
            }
            t.validate(NUM_SHAPE_CATEGORIES).unwrap();
        }
    }

    #[test]
    fn save_load_round_trip_is_field_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(23);
        let mut dataset = synthesize(&cfg, 3, Domain::Source);
        dataset.extend(synthesize(
            &SynthConfig { seed: 24, ..cfg.clone() },
            2,
            Domain::Target,
        ));
        save_dataset(&dataset, dir.path(), "ann.json").unwrap();
        let loaded = load_dataset(dir.path(), "ann.json", NUM_SHAPE_CATEGORIES).unwrap();
        assert_eq!(loaded.len(), dataset.len());
        let mut original: Vec<&AnnotatedImage> = dataset.iter().collect();
        original.sort_by(|a, b| a.id.cmp(&b.id));
        for (orig, back) in original.iter().zip(loaded.iter()) {
            assert_eq!(orig.id, back.id);
            assert_eq!(orig.domain, back.domain);
            assert_eq!(orig.pixels, back.pixels);
            assert_eq!(orig.objects.len(), back.objects.len());
            for ((ob, oc), (lb, lc)) in orig.objects.iter().zip(back.objects.iter()) {
                assert_eq!([ob.x1, ob.y1, ob.x2, ob.y2], [lb.x1, lb.y1, lb.x2, lb.y2]);
                assert_eq!(oc, lc);
            }
        }
    }

    #[test]
    fn save_is_byte_identical_across_runs() {
        let cfg = small_config(29);
        let dataset = synthesize(&cfg, 2, Domain::Source);
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        save_dataset(&dataset, dir1.path(), "ann.json").unwrap();
        save_dataset(&dataset, dir2.path(), "ann.json").unwrap();
        let a = std::fs::read(dir1.path().join("ann.json")).unwrap();
        let b = std::fs::read(dir2.path().join("ann.json")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_annotation_list_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ann.json"), "[]\n").unwrap();
        let loaded = load_dataset(dir.path(), "ann.json", 3).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn inverted_box_is_a_parse_error_naming_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = synthesize(&small_config(31), 1, Domain::Source);
        save_dataset(&dataset, dir.path(), "ann.json").unwrap();
        let doc = format!(
            r#"[{{"image": "images/{id}.png", "domain": "source",
                "objects": [{{"bbox": [30.0, 10.0, 20.0, 40.0], "category": 0}}]}}]"#,
            id = dataset[0].id
        );
        std::fs::write(dir.path().join("bad.json"), doc).unwrap();
        let err = load_dataset(dir.path(), "bad.json", 3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("record 0"), "{msg}");
    }

    #[test]
    fn unknown_category_and_missing_image_are_descriptive() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = synthesize(&small_config(37), 1, Domain::Source);
        save_dataset(&dataset, dir.path(), "ann.json").unwrap();

        let doc = format!(
            r#"[{{"image": "images/{id}.png", "domain": "target",
                "objects": [{{"bbox": [10.0, 10.0, 20.0, 20.0], "category": 9}}]}}]"#,
            id = dataset[0].id
        );
        std::fs::write(dir.path().join("badcat.json"), doc).unwrap();
        let err = load_dataset(dir.path(), "badcat.json", 3).unwrap_err();
        assert!(err.to_string().contains("unknown category 9"), "{err}");

        let doc = r#"[{"image": "images/nope.png", "domain": "source", "objects": []}]"#;
        std::fs::write(dir.path().join("missing.json"), doc).unwrap();
        let err = load_dataset(dir.path(), "missing.json", 3).unwrap_err();
        assert!(err.to_string().contains("missing image file"), "{err}");
    }

    #[test]
    fn resize_scales_boxes_proportionally() {
        let cfg = small_config(41);
        let img = &synthesize(&cfg, 1, Domain::Source)[0];
        let resized = resize(img, 128);
        assert_eq!(resized.pixels.shape(), &[3, 128, 128]);
        let r = 128.0 / 96.0;
        for ((ob, _), (rb, _)) in img.objects.iter().zip(resized.objects.iter()) {
            assert!((rb.x1 - ob.x1 * r).abs() < 1e-12);
            assert!((rb.y2 - ob.y2 * r).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_to_same_size_preserves_pixels() {
        let cfg = small_config(43);
        let img = &synthesize(&cfg, 1, Domain::Source)[0];
        let same = resize(img, 96);
        let mut max_err = 0.0f64;
        for (a, b) in img.pixels.iter().zip(same.pixels.iter()) {
            max_err = max_err.max((a - b).abs());
        }
        assert!(max_err < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn boxes_always_in_bounds_and_categories_valid(seed in 0u64..10_000) {
            let cfg = small_config(seed);
            for domain in [Domain::Source, Domain::Target] {
                for img in synthesize(&cfg, 2, domain) {
                    prop_assert!(img.validate(NUM_SHAPE_CATEGORIES).is_ok());
                    prop_assert!(!img.objects.is_empty());
                    for v in img.pixels.iter() {
                        prop_assert!((0.0..=1.0).contains(v));
                    }
                }
            }
        }
    }
}
