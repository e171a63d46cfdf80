//! Per-image and per-dataset augmentation.
//!
//! For each selected instance (largest first): cut it out with a feathered
//! matte, inpaint the hole, re-estimate the patch's foreground colors against
//! the filled background, choose a placement, warp the patch, composite it
//! over the filled background and regenerate its annotation. Any failure on
//! one instance leaves that instance where it was.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{
    parse_dataset, serialize_dataset, validate, AnnotationError, BBox, DatasetIndex, ImageRecord,
    InstanceAnnotation,
};
use crate::heatmap::{compute_heatmap, to_probability, sample_center, HeatmapConfig, HeatmapError};
use crate::inpaint::{inpaint, InpaintConfig};
use crate::maskops::{
    cut_mask, mask_to_bbox, rasterize, unmix_foreground, AlphaInstancePatch, BinaryMask,
};
use crate::transform::{
    sample_jitter, transform_annotation, warp_patch, AffineTuple, JitterConfig,
    DEFAULT_ALPHA_THRESHOLD,
};

/// Warped instances with fewer visible pixels than this are not pasted.
pub const MIN_VISIBLE_PIXELS: usize = 20;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("input dataset has {count} validation problem(s), first: {first}")]
    ValidationFailure { count: usize, first: String },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("image {path} is {got:?}, annotation says {expected:?}")]
    ImageSizeMismatch {
        path: PathBuf,
        got: (u32, u32),
        expected: (u32, u32),
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    RandomJitter,
    MapGuided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub mode: AugmentMode,
    /// Chance that an image is augmented at all.
    pub apply_probability: f64,
    /// `None` moves every non-crowd instance.
    pub max_instances_per_image: Option<usize>,
    pub jitter: JitterConfig,
    pub heatmap: HeatmapConfig,
    pub inpaint: InpaintConfig,
    pub feather_radius: f64,
    pub seed: u64,
    /// Keep map-guided pastes off the boxes of other instances.
    pub forbid_overlap: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mode: AugmentMode::MapGuided,
            apply_probability: 0.5,
            max_instances_per_image: None,
            jitter: JitterConfig::default(),
            heatmap: HeatmapConfig::default(),
            inpaint: InpaintConfig::default(),
            feather_radius: 3.0,
            seed: 0,
            forbid_overlap: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |e: String| PipelineError::InvalidConfig(e);
        if !(0.0..=1.0).contains(&self.apply_probability) {
            return Err(bad(format!(
                "apply_probability must be in [0, 1], got {}",
                self.apply_probability
            )));
        }
        if !(self.feather_radius >= 0.0) || !self.feather_radius.is_finite() {
            return Err(bad("feather_radius must be finite and >= 0".into()));
        }
        self.jitter.validate().map_err(|e| bad(e.to_string()))?;
        self.heatmap.validate().map_err(|e| bad(e.to_string()))?;
        self.inpaint.validate().map_err(|e| bad(e.to_string()))?;
        Ok(())
    }
}

/// Wall time spent per stage, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub rasterize: f64,
    pub cut: f64,
    pub inpaint: f64,
    pub heatmap: f64,
    pub warp: f64,
    pub composite: f64,
    pub annotate: f64,
}

impl StageTimings {
    pub fn add(&mut self, other: &StageTimings) {
        self.rasterize += other.rasterize;
        self.cut += other.cut;
        self.inpaint += other.inpaint;
        self.heatmap += other.heatmap;
        self.warp += other.warp;
        self.composite += other.composite;
        self.annotate += other.annotate;
    }

    pub fn total(&self) -> f64 {
        self.rasterize + self.cut + self.inpaint + self.heatmap + self.warp + self.composite + self.annotate
    }
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    *slot += t.elapsed().as_secs_f64();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoveRecord {
    pub source_annotation_id: u64,
    pub tuple: AffineTuple,
    /// New instance center in source pixels.
    pub sampled_center: (f64, f64),
    pub mode: AugmentMode,
    pub heatmap_used: bool,
    pub inpaint_converged: bool,
    /// Annotations whose masks the pasted instance now covers in part.
    pub occludes: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceFailure {
    pub annotation_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct AugmentedSample {
    pub image: RgbImage,
    pub annotations: Vec<InstanceAnnotation>,
    /// One record per moved instance.
    pub provenance: Vec<MoveRecord>,
    /// Instances that were selected but kept in place.
    pub failures: Vec<InstanceFailure>,
    /// False when the apply-probability roll skipped this image.
    pub applied: bool,
    pub timings: StageTimings,
}

/// Per-image random stream derived from the run seed, image id and copy index.
pub fn image_seed(seed: u64, image_id: u64, copy: u64) -> u64 {
    let mut z = seed
        ^ image_id.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ copy.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn image_rng(seed: u64, image_id: u64, copy: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(image_seed(seed, image_id, copy))
}

struct Selected {
    pos: usize,
    mask: BinaryMask,
    bbox: BBox,
}

/// Augment one image.
pub fn augment_image<R: Rng + ?Sized>(
    image: &RgbImage,
    anns: &[InstanceAnnotation],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<AugmentedSample, PipelineError> {
    cfg.validate()?;
    let mut timings = StageTimings::default();
    let passthrough = |timings| AugmentedSample {
        image: image.clone(),
        annotations: anns.to_vec(),
        provenance: Vec::new(),
        failures: Vec::new(),
        applied: false,
        timings,
    };
    let roll: f64 = rng.random();
    if roll >= cfg.apply_probability {
        return Ok(passthrough(timings));
    }
    let (w, h) = (image.width() as usize, image.height() as usize);

    let mut failures = Vec::new();
    let mut masks: Vec<Option<BinaryMask>> = Vec::with_capacity(anns.len());
    let mut selected = Vec::new();
    timed(&mut timings.rasterize, || {
        for (pos, ann) in anns.iter().enumerate() {
            if ann.iscrowd {
                masks.push(None);
                continue;
            }
            match rasterize(ann, w, h).and_then(|m| mask_to_bbox(&m).map(|b| (m, b))) {
                Ok((mask, bbox)) => {
                    selected.push(Selected {
                        pos,
                        mask: mask.clone(),
                        bbox,
                    });
                    masks.push(Some(mask));
                }
                Err(e) => {
                    failures.push(InstanceFailure {
                        annotation_id: ann.id,
                        reason: format!("rasterize: {e}"),
                    });
                    masks.push(None);
                }
            }
        }
    });
    if selected.is_empty() && failures.is_empty() {
        return Ok(passthrough(timings));
    }
    selected.sort_by(|a, b| {
        b.mask
            .count()
            .cmp(&a.mask.count())
            .then(anns[a.pos].id.cmp(&anns[b.pos].id))
    });
    if let Some(limit) = cfg.max_instances_per_image {
        selected.truncate(limit);
    }

    let mut current = image.clone();
    let mut out_anns = anns.to_vec();
    let mut provenance = Vec::new();
    let all_boxes: Vec<(usize, BBox)> = selected.iter().map(|s| (s.pos, s.bbox)).collect();

    for sel in &selected {
        let ann = &anns[sel.pos];
        let fail = |reason: String| InstanceFailure {
            annotation_id: ann.id,
            reason,
        };
        let cut = timed(&mut timings.cut, || {
            cut_mask(&current, &sel.mask, cfg.feather_radius, ann.id)
        });
        let (mut patch, hole) = match cut {
            Ok(v) => v,
            Err(e) => {
                failures.push(fail(format!("cut: {e}")));
                continue;
            }
        };
        let filled = match timed(&mut timings.inpaint, || inpaint(&current, &hole, &cfg.inpaint)) {
            Ok(v) => v,
            Err(e) => {
                failures.push(fail(format!("inpaint: {e}")));
                continue;
            }
        };

        timed(&mut timings.cut, || unmix_foreground(&mut patch, &filled.image));

        let jitter = sample_jitter(rng, sel.bbox.w, sel.bbox.h, &cfg.jitter);
        let (cx, cy) = patch.center;
        let tuple = match cfg.mode {
            AugmentMode::RandomJitter => jitter,
            AugmentMode::MapGuided => {
                let others: Vec<BBox> = if cfg.forbid_overlap {
                    all_boxes
                        .iter()
                        .filter(|(p, _)| *p != sel.pos)
                        .map(|(_, b)| *b)
                        .collect()
                } else {
                    Vec::new()
                };
                let center = timed(&mut timings.heatmap, || {
                    guided_center(image, &sel.mask, sel.bbox, (cx, cy), &others, &cfg.heatmap, rng)
                });
                match center {
                    Ok((nx, ny)) => AffineTuple::new(nx - cx, ny - cy, jitter.scale, jitter.rotation),
                    Err(e) => {
                        failures.push(fail(format!("heatmap: {e}")));
                        continue;
                    }
                }
            }
        };

        let warped = match timed(&mut timings.warp, || warp_patch(&patch, &tuple, w, h)) {
            Ok(p) if p.visible_pixels() >= MIN_VISIBLE_PIXELS => p,
            Ok(p) => {
                failures.push(fail(format!(
                    "only {} visible pixels after warp",
                    p.visible_pixels()
                )));
                continue;
            }
            Err(e) => {
                failures.push(fail(format!("warp: {e}")));
                continue;
            }
        };
        let new_ann = match timed(&mut timings.annotate, || {
            transform_annotation(ann, &warped, w, h, DEFAULT_ALPHA_THRESHOLD, ann.id)
        }) {
            Ok(a) => a,
            Err(e) => {
                failures.push(fail(format!("annotate: {e}")));
                continue;
            }
        };

        current = timed(&mut timings.composite, || composite(&filled.image, &warped));
        let new_mask = warped.mask_above(DEFAULT_ALPHA_THRESHOLD, w, h);
        let occludes = masks
            .iter()
            .enumerate()
            .filter(|(p, m)| *p != sel.pos && m.as_ref().is_some_and(|m| m.intersection_count(&new_mask) > 0))
            .map(|(p, _)| anns[p].id)
            .collect();
        masks[sel.pos] = Some(new_mask);
        out_anns[sel.pos] = new_ann;
        provenance.push(MoveRecord {
            source_annotation_id: ann.id,
            tuple,
            sampled_center: (cx + tuple.tx, cy + tuple.ty),
            mode: cfg.mode,
            heatmap_used: cfg.mode == AugmentMode::MapGuided,
            inpaint_converged: filled.converged,
            occludes,
        });
    }

    Ok(AugmentedSample {
        image: current,
        annotations: out_anns,
        provenance,
        failures,
        applied: true,
        timings,
    })
}

/// Sample a paste center from the instance's heatmap, excluding centers
/// that would push its box out of the frame or onto `others`.
fn guided_center<R: Rng + ?Sized>(
    image: &RgbImage,
    mask: &BinaryMask,
    bbox: BBox,
    center: (f64, f64),
    others: &[BBox],
    cfg: &HeatmapConfig,
    rng: &mut R,
) -> Result<(f64, f64), HeatmapError> {
    let hm = compute_heatmap(image, mask, cfg)?;
    let exclusion = placement_exclusion(hm.width, hm.height, bbox, center, others);
    let p = to_probability(&hm, Some(&exclusion))?;
    let (x, y) = sample_center(rng, &p);
    Ok((x as f64, y as f64))
}

/// Centers at which the instance box, moved with its center, would leave
/// the frame or intersect one of `others`.
pub fn placement_exclusion(
    width: usize,
    height: usize,
    bbox: BBox,
    center: (f64, f64),
    others: &[BBox],
) -> BinaryMask {
    let (cx, cy) = center;
    let (left, top) = (cx - bbox.x, cy - bbox.y);
    let (right, bottom) = (bbox.x + bbox.w - cx, bbox.y + bbox.h - cy);
    BinaryMask::from_fn(width, height, |x, y| {
        let (x, y) = (x as f64, y as f64);
        let (bx0, by0, bx1, by1) = (x - left, y - top, x + right, y + bottom);
        if bx0 < 0.0 || by0 < 0.0 || bx1 > width as f64 || by1 > height as f64 {
            return true;
        }
        others
            .iter()
            .any(|o| bx0 < o.x + o.w && o.x < bx1 && by0 < o.y + o.h && o.y < by1)
    })
}

/// `out = α·patch + (1 − α)·background`, rounded to 8 bits.
pub fn composite(background: &RgbImage, patch: &AlphaInstancePatch) -> RgbImage {
    let mut out = background.clone();
    let (w, h) = (out.width() as i64, out.height() as i64);
    for ly in 0..patch.height() {
        for lx in 0..patch.width() {
            let (x, y) = (patch.origin.0 + lx as i64, patch.origin.1 + ly as i64);
            if x < 0 || y < 0 || x >= w || y >= h {
                continue;
            }
            let p = patch.rgba.get(lx, ly);
            let a = p[3];
            if a <= 0.0 {
                continue;
            }
            let px = out.get_pixel_mut(x as u32, y as u32);
            for c in 0..3 {
                let v = if a >= 1.0 {
                    p[c]
                } else {
                    a * p[c] + (1.0 - a) * px.0[c] as f32
                };
                px.0[c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetOptions {
    pub workers: usize,
    /// Augmented copies per input image; copy 0 keeps the original ids.
    pub copies: usize,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            copies: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub images: usize,
    pub images_augmented: usize,
    pub instances_moved: usize,
    pub instance_failures: usize,
    pub wall_time_s: f64,
    pub mean_image_latency_s: f64,
    pub io_s: f64,
    pub stages: StageTimings,
}

impl RunStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

impl std::fmt::Display for RunStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "images: {}", self.images)?;
        writeln!(f, "images augmented: {}", self.images_augmented)?;
        writeln!(f, "instances moved: {}", self.instances_moved)?;
        writeln!(f, "instance failures: {}", self.instance_failures)?;
        writeln!(f, "wall time: {:.3} s", self.wall_time_s)?;
        writeln!(f, "mean image latency: {:.3} s", self.mean_image_latency_s)?;
        writeln!(f, "io: {:.3} s", self.io_s)?;
        let s = &self.stages;
        write!(
            f,
            "stages (s): rasterize {:.3}, cut {:.3}, inpaint {:.3}, heatmap {:.3}, warp {:.3}, composite {:.3}, annotate {:.3}",
            s.rasterize, s.cut, s.inpaint, s.heatmap, s.warp, s.composite, s.annotate
        )
    }
}

struct Job<'a> {
    record: &'a ImageRecord,
    copy: usize,
}

struct JobOutput {
    record: ImageRecord,
    sample: AugmentedSample,
    latency: f64,
    load_s: f64,
}

fn output_file_name(file_name: &str, copy: usize) -> String {
    let path = Path::new(file_name);
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| file_name.to_string());
    let name = if copy == 0 {
        format!("{stem}.png")
    } else {
        format!("{stem}_aug{copy}.png")
    };
    match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => {
            parent.join(name).to_string_lossy().into_owned()
        }
        _ => name,
    }
}

fn load_rgb(path: &Path, expected: (u32, u32)) -> Result<RgbImage, PipelineError> {
    let img = image::open(path)
        .map_err(|source| PipelineError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    if img.dimensions() != expected {
        return Err(PipelineError::ImageSizeMismatch {
            path: path.to_path_buf(),
            got: img.dimensions(),
            expected,
        });
    }
    Ok(img)
}

/// Augment every image of a dataset and write images and annotations.
///
/// Output images are PNG. With `copies > 1`, copy `k` gets image and
/// annotation ids offset by `k · (max id + 1)` and a `_aug{k}` file suffix.
pub fn augment_dataset(
    in_ann: &Path,
    image_dir: &Path,
    out_ann: &Path,
    out_image_dir: &Path,
    cfg: &AugmentConfig,
    opts: DatasetOptions,
) -> Result<RunStats, PipelineError> {
    let start = Instant::now();
    cfg.validate()?;
    if opts.copies == 0 || opts.workers == 0 {
        return Err(PipelineError::InvalidConfig(
            "workers and copies must be >= 1".into(),
        ));
    }
    let index = parse_dataset(in_ann)?;
    let report = validate(&index);
    if !report.is_empty() {
        let v = &report.violations[0];
        return Err(PipelineError::ValidationFailure {
            count: report.len(),
            first: format!("{:?}: {:?}", v.record, v.kind),
        });
    }
    fs::create_dir_all(out_image_dir).map_err(|source| PipelineError::Io {
        path: out_image_dir.to_path_buf(),
        source,
    })?;

    let image_stride = index.max_image_id() + 1;
    let ann_stride = index.max_annotation_id() + 1;
    let jobs: Vec<Job> = (0..opts.copies)
        .flat_map(|copy| index.images.iter().map(move |record| Job { record, copy }))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;

    let run_job = |job: &Job| -> Result<JobOutput, PipelineError> {
        let t = Instant::now();
        let rec = job.record;
        let img = load_rgb(&image_dir.join(&rec.file_name), (rec.width, rec.height))?;
        let load_s = t.elapsed().as_secs_f64();
        let anns: Vec<InstanceAnnotation> =
            index.annotations_for(rec.id).into_iter().cloned().collect();
        let mut rng = image_rng(cfg.seed, rec.id, job.copy as u64);
        let mut sample = augment_image(&img, &anns, cfg, &mut rng)?;
        let k = job.copy as u64;
        let mut record = rec.clone();
        record.id = rec.id + k * image_stride;
        record.file_name = output_file_name(&rec.file_name, job.copy);
        for a in &mut sample.annotations {
            a.id += k * ann_stride;
            a.image_id = record.id;
        }
        Ok(JobOutput {
            record,
            sample,
            latency: t.elapsed().as_secs_f64(),
            load_s,
        })
    };

    let mut stats = RunStats::default();
    let mut images = Vec::with_capacity(jobs.len());
    let mut annotations = Vec::with_capacity(index.annotations.len() * opts.copies);
    let chunk = (opts.workers * 2).max(4);
    let mut latency_sum = 0.0;
    for batch in jobs.chunks(chunk) {
        let outputs: Vec<Result<JobOutput, PipelineError>> =
            pool.install(|| batch.par_iter().map(run_job).collect());
        for out in outputs {
            let out = out?;
            let t = Instant::now();
            let path = out_image_dir.join(&out.record.file_name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            out.sample
                .image
                .save_with_format(&path, image::ImageFormat::Png)
                .map_err(|source| PipelineError::Image { path, source })?;
            stats.io_s += t.elapsed().as_secs_f64() + out.load_s;
            stats.images += 1;
            stats.images_augmented += usize::from(out.sample.applied);
            stats.instances_moved += out.sample.provenance.len();
            stats.instance_failures += out.sample.failures.len();
            stats.stages.add(&out.sample.timings);
            latency_sum += out.latency;
            images.push(out.record);
            annotations.extend(out.sample.annotations);
        }
    }

    let mut out_index = DatasetIndex::new(images, annotations, index.categories.clone())?;
    out_index.extra = index.extra.clone();
    serialize_dataset(&out_index, out_ann)?;
    stats.wall_time_s = start.elapsed().as_secs_f64();
    stats.mean_image_latency_s = if stats.images > 0 {
        latency_sum / stats.images as f64
    } else {
        0.0
    };
    Ok(stats)
}

/// Working-resolution distance of the cell under a source pixel; used by
/// diagnostics that relate sampled centers back to the heatmap.
pub fn distance_under(hm: &crate::heatmap::ConsistencyHeatmap, x: usize, y: usize) -> f64 {
    let (cx, cy) = hm.working_cell(x, y);
    *hm.distance.get(cx, cy)
}
