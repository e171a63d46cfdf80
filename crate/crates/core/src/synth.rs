//! Deterministic synthetic scenes and datasets for tests, examples and
//! benchmarks.
//!
//! Backgrounds are smooth multi-octave value noise with a little grain, so
//! they have natural-image-like spatial statistics; instances are star-shaped
//! polygons filled with a shaded color distinct from the background.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotations::{
    serialize_dataset, AnnotationError, Category, DatasetIndex, ImageRecord, InstanceAnnotation,
    Segmentation,
};
use crate::grid::Grid;
use crate::maskops::{chebyshev_distance, mask_to_bbox, rasterize, BinaryMask};
use crate::rle::Rle;

/// Smooth noise in `[0, 1]` with octaves of period `base_period / 2^k`.
pub fn value_noise(width: usize, height: usize, base_period: f64, octaves: u32, seed: u64) -> Grid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Grid::filled(width, height, 0.0);
    let mut amp = 1.0;
    let mut total = 0.0;
    for k in 0..octaves {
        let period = (base_period / f64::from(1u32 << k)).max(2.0);
        let gw = (width as f64 / period).ceil() as usize + 2;
        let gh = (height as f64 / period).ceil() as usize + 2;
        let lattice = Grid::from_fn(gw, gh, |_, _| rng.random::<f64>());
        for y in 0..height {
            for x in 0..width {
                let v = lattice.sample_bilinear(x as f64 / period, y as f64 / period);
                *out.get_mut(x, y) += amp * v;
            }
        }
        total += amp;
        amp *= 0.5;
    }
    out.map(|v| v / total)
}

/// Textured background with a random palette.
pub fn natural_background(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(60.0..190.0));
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-60.0..60.0));
    let period = (width.max(height) as f64 / 3.0).max(8.0);
    let coarse = value_noise(width, height, period, 4, rng.random());
    let fine = value_noise(width, height, 6.0, 1, rng.random());
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let c = *coarse.get(x, y) - 0.5;
        let f = *fine.get(x, y) - 0.5;
        Rgb(std::array::from_fn(|i| {
            (base[i] + 1.6 * tint[i] * c + 12.0 * f).round().clamp(0.0, 255.0) as u8
        }))
    })
}

/// Stripes of the given period along x (`vertical = true`) or y.
pub fn stripes(width: usize, height: usize, period: usize, vertical: bool) -> RgbImage {
    let period = period.max(2);
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let t = if vertical { x } else { y } as usize;
        if (t % period) < period / 2 {
            Rgb([220, 220, 220])
        } else {
            Rgb([30, 30, 30])
        }
    })
}

/// Star-shaped polygon around `(cx, cy)` in COCO continuous coordinates.
pub fn blob_polygon<R: Rng + ?Sized>(
    rng: &mut R,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    vertices: usize,
) -> Vec<f64> {
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let wobble: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..0.15)).collect();
    (0..vertices)
        .flat_map(|k| {
            let t = k as f64 / vertices as f64 * std::f64::consts::TAU;
            let r = 1.0
                + wobble[0] * (3.0 * t + phase).sin()
                + wobble[1] * (5.0 * t - phase).cos()
                + wobble[2] * (2.0 * t).sin();
            [cx + rx * r * t.cos(), cy + ry * r * t.sin()]
        })
        .collect()
}

/// Synthetic scene: image plus its instance annotations.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: RgbImage,
    pub annotations: Vec<InstanceAnnotation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub instances: usize,
    /// Instance radius range as a fraction of the shorter image side.
    pub radius_range: [f64; 2],
    /// Encode every n-th instance as RLE instead of polygons; 0 never.
    pub rle_every: usize,
    /// Add one small crowd region.
    pub with_crowd: bool,
}

impl SceneSpec {
    pub fn new(width: usize, height: usize, instances: usize) -> Self {
        Self {
            width,
            height,
            instances,
            radius_range: [0.08, 0.16],
            rle_every: 0,
            with_crowd: false,
        }
    }
}

fn mean_color(image: &RgbImage, mask: &BinaryMask) -> [f64; 3] {
    let mut acc = [0.0; 3];
    let mut n = 0.0_f64;
    for (x, y) in mask.foreground() {
        let p = image.get_pixel(x as u32, y as u32).0;
        for c in 0..3 {
            acc[c] += p[c] as f64;
        }
        n += 1.0;
    }
    acc.map(|v| v / n.max(1.0))
}

/// Render a scene; instance ids start at `first_id`, all on `image_id`.
pub fn scene(spec: &SceneSpec, seed: u64, image_id: u64, first_id: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);
    let mut image = natural_background(w, h, rng.random());
    let shading = value_noise(w, h, 10.0, 2, rng.random());
    let short = w.min(h) as f64;
    let mut occupied = BinaryMask::new(w, h);
    let mut annotations = Vec::new();
    let mut attempts = 0;
    while annotations.len() < spec.instances && attempts < 200 {
        attempts += 1;
        let rx = rng.random_range(spec.radius_range[0]..=spec.radius_range[1]) * short;
        let ry = rx * rng.random_range(0.7..1.3);
        let margin_x = rx * 1.4 + 2.0;
        let margin_y = ry * 1.4 + 2.0;
        if 2.0 * margin_x >= w as f64 || 2.0 * margin_y >= h as f64 {
            continue;
        }
        let cx = rng.random_range(margin_x..w as f64 - margin_x);
        let cy = rng.random_range(margin_y..h as f64 - margin_y);
        let poly = blob_polygon(&mut rng, cx, cy, rx, ry, 32);
        let id = first_id + annotations.len() as u64;
        let mut ann = InstanceAnnotation {
            id,
            image_id,
            category_id: 1 + (annotations.len() as u64 % 3),
            segmentation: Segmentation::Polygons(vec![poly]),
            bbox: Default::default(),
            area: 0.0,
            iscrowd: false,
            extra: Default::default(),
        };
        let Ok(mask) = rasterize(&ann, w, h) else {
            continue;
        };
        // Keep instances apart so every one has its own background ring.
        let grown = dilate(&mask, 4);
        if grown.intersection_count(&occupied) > 0 {
            continue;
        }
        let bg = mean_color(&image, &mask);
        let color: [f64; 3] = std::array::from_fn(|c| {
            let offset = rng.random_range(40.0..90.0);
            if bg[c] > 127.0 {
                bg[c] - offset
            } else {
                bg[c] + offset
            }
        });
        for (x, y) in mask.foreground() {
            let s = 0.85 + 0.3 * shading.get(x, y);
            let px = image.get_pixel_mut(x as u32, y as u32);
            for c in 0..3 {
                px.0[c] = (color[c] * s).round().clamp(0.0, 255.0) as u8;
            }
        }
        for (x, y) in grown.foreground() {
            occupied.set(x, y, true);
        }
        ann.bbox = mask_to_bbox(&mask).expect("mask nonempty");
        ann.area = mask.count() as f64;
        if spec.rle_every > 0 && annotations.len() % spec.rle_every == spec.rle_every - 1 {
            ann.segmentation = Segmentation::Rle(Rle::from_mask(&mask));
        }
        annotations.push(ann);
    }
    if spec.with_crowd {
        let (cw, ch) = ((w / 10).max(2), (h / 10).max(2));
        let crowd = BinaryMask::from_fn(w, h, |x, y| x < cw && y < ch);
        annotations.push(InstanceAnnotation {
            id: first_id + annotations.len() as u64,
            image_id,
            category_id: 1,
            segmentation: Segmentation::Rle(Rle::from_mask(&crowd)),
            bbox: mask_to_bbox(&crowd).expect("crowd nonempty"),
            area: crowd.count() as f64,
            iscrowd: true,
            extra: Default::default(),
        });
    }
    Scene { image, annotations }
}

fn dilate(mask: &BinaryMask, radius: u32) -> BinaryMask {
    let d = chebyshev_distance(mask);
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| *d.get(x, y) <= radius)
}

pub fn categories() -> Vec<Category> {
    vec![
        Category::new(1, "blob"),
        Category::new(2, "disc"),
        Category::new(3, "shape"),
    ]
}

/// Paths of a dataset written by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub annotations: PathBuf,
    pub images: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

/// Build an in-memory dataset of `n_images` scenes.
pub fn dataset(n_images: usize, spec: &SceneSpec, seed: u64) -> (DatasetIndex, Vec<RgbImage>) {
    let mut images = Vec::new();
    let mut records = Vec::new();
    let mut anns = Vec::new();
    let mut next_ann = 1;
    for i in 0..n_images {
        let id = i as u64 + 1;
        let s = scene(spec, seed.wrapping_add(id.wrapping_mul(7919)), id, next_ann);
        next_ann += s.annotations.len() as u64;
        records.push(ImageRecord::new(id, format!("img_{id:05}.png"), spec.width as u32, spec.height as u32));
        anns.extend(s.annotations);
        images.push(s.image);
    }
    let index = DatasetIndex::new(records, anns, categories()).expect("synthetic ids are unique");
    (index, images)
}

/// Write a dataset to `dir/annotations.json` and `dir/images/`.
pub fn write_dataset(
    dir: &Path,
    n_images: usize,
    spec: &SceneSpec,
    seed: u64,
) -> Result<DatasetPaths, SynthError> {
    let (index, images) = dataset(n_images, spec, seed);
    let image_dir = dir.join("images");
    fs::create_dir_all(&image_dir)?;
    for (rec, img) in index.images.iter().zip(&images) {
        img.save_with_format(image_dir.join(&rec.file_name), image::ImageFormat::Png)?;
    }
    let ann_path = dir.join("annotations.json");
    serialize_dataset(&index, &ann_path)?;
    Ok(DatasetPaths {
        annotations: ann_path,
        images: image_dir,
    })
}
