//! Appearance-consistency heatmaps.
//!
//! The background around an instance is described by three contour rings.
//! Moving the rings to a candidate center and comparing colors pixel by
//! pixel with the rings at the original center gives an appearance
//! distance; the distance map is turned into a heatmap by a normalized
//! negative log and then into a probability map for paste-center sampling.
//!
//! Scanning every center at full resolution is quadratic in the image area,
//! so the map is computed on a small fixed-size copy of the image and
//! upsampled bilinearly.

use image::{Rgb, RgbImage};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::maskops::{check_ring_params, contour_rings, BinaryMask, ContourRingSet, MaskError};

#[derive(Debug, Error, PartialEq)]
pub enum HeatmapError {
    #[error("instance mask is empty")]
    EmptyMask,
    #[error("mask is {got:?} but image is {expected:?}")]
    SizeMismatch {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("invalid heatmap configuration: {0}")]
    InvalidConfig(String),
    #[error("no probability mass left after exclusions")]
    DegenerateDistribution,
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    /// Ring widths at source resolution, innermost first.
    pub ring_widths: [u32; 3],
    pub ring_weights: [f64; 3],
    /// `(width, height)` of the grid the distances are computed on.
    pub working_size: [usize; 2],
    /// Floor of the normalized distance inside the log.
    pub epsilon_log: f64,
    /// Candidate spacing on the working grid.
    pub stride: usize,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            ring_widths: [5, 5, 5],
            ring_weights: [0.4, 0.35, 0.25],
            working_size: [180, 120],
            epsilon_log: 1e-6,
            stride: 1,
        }
    }
}

impl HeatmapConfig {
    /// Same settings, but evaluated at the source resolution without resizing.
    pub fn exact_for(&self, width: usize, height: usize) -> Self {
        Self {
            working_size: [width, height],
            ..*self
        }
    }

    pub fn validate(&self) -> Result<(), HeatmapError> {
        check_ring_params(self.ring_widths, self.ring_weights)?;
        if self.working_size[0] == 0 || self.working_size[1] == 0 {
            return Err(HeatmapError::InvalidConfig("working_size must be positive".into()));
        }
        if !(self.epsilon_log > 0.0 && self.epsilon_log < 1.0) {
            return Err(HeatmapError::InvalidConfig("epsilon_log must lie in (0, 1)".into()));
        }
        if self.stride == 0 {
            return Err(HeatmapError::InvalidConfig("stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Floating-point RGB raster.
pub type ColorGrid = Grid<[f64; 3]>;

pub fn color_grid(image: &RgbImage) -> ColorGrid {
    Grid::from_fn(image.width() as usize, image.height() as usize, |x, y| {
        let p = image.get_pixel(x as u32, y as u32).0;
        [p[0] as f64, p[1] as f64, p[2] as f64]
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HeatmapStatus {
    Normal,
    /// All finite distances were equal; finite cells share one value.
    Uniform,
    /// No finite distance at all; the value grid is a delta at the origin.
    AllInfinite,
}

#[derive(Debug, Clone)]
pub struct ConsistencyHeatmap {
    /// Source image size.
    pub width: usize,
    pub height: usize,
    /// Size of the grid the distances were computed on.
    pub computed_at: (usize, usize),
    /// Appearance distance per working cell, `+∞` where undefined.
    pub distance: Grid<f64>,
    /// Heatmap value per working cell.
    pub working_value: Grid<f64>,
    /// Heatmap value upsampled to the source size.
    pub value: Grid<f64>,
    /// Origin cell on the working grid.
    pub origin_working: (usize, usize),
    /// Instance centroid at source resolution.
    pub origin_source: (f64, f64),
    /// `(m, M)` over finite distances.
    pub distance_range: Option<(f64, f64)>,
    pub ring_widths_used: [u32; 3],
    pub status: HeatmapStatus,
}

impl ConsistencyHeatmap {
    /// Working cell under a source pixel.
    pub fn working_cell(&self, x: usize, y: usize) -> (usize, usize) {
        let (ww, wh) = self.computed_at;
        let cx = ((x as f64 + 0.5) * ww as f64 / self.width as f64) as usize;
        let cy = ((y as f64 + 0.5) * wh as f64 / self.height as f64) as usize;
        (cx.min(ww - 1), cy.min(wh - 1))
    }

    /// Source pixel with the largest value (first in row-major order on ties).
    pub fn argmax(&self) -> (usize, usize) {
        argmax(&self.value)
    }
}

fn argmax(g: &Grid<f64>) -> (usize, usize) {
    let mut best = 0;
    for (i, &v) in g.as_slice().iter().enumerate() {
        if v > g.as_slice()[best] {
            best = i;
        }
    }
    g.coords(best)
}

/// Ring pixels with their reference colors, ready for repeated scanning.
#[derive(Debug, Clone)]
pub struct RingDescriptor {
    rings: [Vec<(i64, i64, [f64; 3])>; 3],
    weights: [f64; 3],
}

impl RingDescriptor {
    pub fn new(image: &ColorGrid, rings: &ContourRingSet) -> Self {
        Self {
            rings: std::array::from_fn(|i| {
                rings.rings[i]
                    .foreground()
                    .map(|(x, y)| (x as i64, y as i64, *image.get(x, y)))
                    .collect()
            }),
            weights: rings.weights,
        }
    }

    /// Distance for a translation `(dx, dy)` of the rings.
    pub fn distance_at(&self, image: &ColorGrid, hole: &BinaryMask, dx: i64, dy: i64) -> f64 {
        let (w, h) = (image.width() as i64, image.height() as i64);
        let at_origin = dx == 0 && dy == 0;
        let pixels = image.as_slice();
        let hole_bits = hole.bits();
        let mut total = 0.0;
        for (ring, &weight) in self.rings.iter().zip(&self.weights) {
            if ring.is_empty() {
                continue;
            }
            let n = ring.len();
            let max_excluded = n / 2;
            let mut excluded = 0usize;
            let mut sum = 0.0;
            for &(x, y, c) in ring {
                let (qx, qy) = (x + dx, y + dy);
                if qx < 0 || qy < 0 || qx >= w || qy >= h {
                    excluded += 1;
                } else {
                    let idx = (qy * w + qx) as usize;
                    if !at_origin && hole_bits[idx] {
                        excluded += 1;
                    } else {
                        let q = pixels[idx];
                        let (a, b, e) = (c[0] - q[0], c[1] - q[1], c[2] - q[2]);
                        sum += (a * a + b * b + e * e).sqrt();
                        continue;
                    }
                }
                if excluded > max_excluded {
                    return f64::INFINITY;
                }
            }
            total += weight * sum / (n - excluded) as f64;
        }
        total
    }
}

/// Appearance distance between the descriptor at `origin` and the same
/// descriptor moved to `candidate`.
///
/// Each ring contributes its weight times the mean Euclidean RGB distance
/// between ring pixels and their translated partners. Partners outside the
/// image or inside `hole` are skipped (the hole rule is waived when the
/// candidate is the origin); if more than half of any ring is skipped the
/// distance is `+∞`.
pub fn appearance_distance(
    image: &ColorGrid,
    hole: &BinaryMask,
    rings: &ContourRingSet,
    origin: (i64, i64),
    candidate: (i64, i64),
) -> f64 {
    RingDescriptor::new(image, rings).distance_at(
        image,
        hole,
        candidate.0 - origin.0,
        candidate.1 - origin.1,
    )
}

/// Normalized negative log of finite distances; `+∞` maps to 0 and equal
/// extremes give 1.0 everywhere finite.
pub fn log_rescale(distances: &Grid<f64>, epsilon_log: f64) -> Grid<f64> {
    let Some((m, big_m)) = finite_range(distances) else {
        return distances.map(|_| 0.0);
    };
    distances.map(|&d| log_value(d, m, big_m, epsilon_log))
}

#[inline]
fn log_value(d: f64, m: f64, big_m: f64, epsilon_log: f64) -> f64 {
    if !d.is_finite() {
        0.0
    } else if big_m == m {
        1.0
    } else {
        -((d - m) / (big_m - m)).max(epsilon_log).ln()
    }
}

fn finite_range(g: &Grid<f64>) -> Option<(f64, f64)> {
    g.as_slice()
        .iter()
        .filter(|d| d.is_finite())
        .fold(None, |acc, &d| match acc {
            None => Some((d, d)),
            Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
        })
}

/// Box-filter resample of a color raster.
pub fn resize_area(src: &ColorGrid, width: usize, height: usize) -> ColorGrid {
    if (src.width(), src.height()) == (width, height) {
        return src.clone();
    }
    area_resample(src.width(), src.height(), |x, y| *src.get(x, y), width, height)
}

/// Box-filter resample straight from 8-bit pixels.
pub fn resize_area_rgb(src: &RgbImage, width: usize, height: usize) -> ColorGrid {
    let (sw, sh) = (src.width() as usize, src.height() as usize);
    if (sw, sh) == (width, height) {
        return color_grid(src);
    }
    let raw = src.as_raw();
    area_resample(
        sw,
        sh,
        |x, y| {
            let i = 3 * (y * sw + x);
            [raw[i] as f64, raw[i + 1] as f64, raw[i + 2] as f64]
        },
        width,
        height,
    )
}

fn area_resample(
    sw: usize,
    sh: usize,
    get: impl Fn(usize, usize) -> [f64; 3],
    width: usize,
    height: usize,
) -> ColorGrid {
    let xw = box_taps(sw, width);
    let yw = box_taps(sh, height);
    let mut rows = Vec::with_capacity(width * sh);
    for y in 0..sh {
        rows.extend(xw.iter().map(|taps| {
            let mut acc = [0.0; 3];
            for &(x, wt) in taps {
                let p = get(x, y);
                for c in 0..3 {
                    acc[c] += wt as f64 * p[c];
                }
            }
            acc
        }));
    }
    let rows = Grid::from_vec(width, sh, rows);
    let norm = (sw * sh) as f64;
    Grid::from_fn(width, height, |x, y| {
        let mut acc = [0.0; 3];
        for &(sy, wt) in &yw[y] {
            let p = rows.get(x, sy);
            for c in 0..3 {
                acc[c] += wt as f64 * p[c];
            }
        }
        acc.map(|v| v / norm)
    })
}

/// Majority-coverage resample of a mask; never returns an empty mask for a
/// nonempty input.
pub fn resize_mask(src: &BinaryMask, width: usize, height: usize) -> BinaryMask {
    if (src.width(), src.height()) == (width, height) {
        return src.clone();
    }
    let xw = box_taps(src.width(), width);
    let yw = box_taps(src.height(), height);
    let mut rows = Grid::filled(width, src.height(), 0u64);
    for y in 0..src.height() {
        for (x, taps) in xw.iter().enumerate() {
            let v: u64 = taps
                .iter()
                .filter(|(sx, _)| src.get(*sx, y))
                .map(|(_, wt)| wt)
                .sum();
            rows.set(x, y, v);
        }
    }
    let total = (src.width() * src.height()) as u64;
    let mut out = BinaryMask::from_fn(width, height, |x, y| {
        2 * yw[y].iter().map(|&(sy, wt)| wt * rows.get(x, sy)).sum::<u64>() >= total
    });
    if out.is_empty() {
        if let Some((cx, cy)) = src.centroid() {
            let x = ((cx + 0.5) * width as f64 / src.width() as f64) as usize;
            let y = ((cy + 0.5) * height as f64 / src.height() as f64) as usize;
            out.set(x.min(width - 1), y.min(height - 1), true);
        }
    }
    out
}

/// For each destination index, the source indices it overlaps and the
/// overlap length in units of `1 / dst` source pixels (taps sum to `src`).
/// Integer weights keep constant inputs exactly constant.
fn box_taps(src: usize, dst: usize) -> Vec<Vec<(usize, u64)>> {
    (0..dst)
        .map(|i| {
            let (lo, hi) = (i * src, (i + 1) * src);
            (lo / dst..hi.div_ceil(dst).min(src))
                .filter_map(|s| {
                    let cover = hi.min((s + 1) * dst).saturating_sub(lo.max(s * dst));
                    (cover > 0).then_some((s, cover as u64))
                })
                .collect()
        })
        .collect()
}

/// Ring widths at working resolution: scaled by the geometric mean of the
/// axis factors, rounded, at least one pixel.
pub fn scaled_ring_widths(widths: [u32; 3], source: (usize, usize), working: (usize, usize)) -> [u32; 3] {
    let factor = ((working.0 as f64 / source.0 as f64) * (working.1 as f64 / source.1 as f64)).sqrt();
    widths.map(|w| ((w as f64 * factor).round() as u32).max(1))
}

/// Build the appearance-consistency heatmap of the instance covering `mask`.
pub fn compute_heatmap(
    image: &RgbImage,
    mask: &BinaryMask,
    cfg: &HeatmapConfig,
) -> Result<ConsistencyHeatmap, HeatmapError> {
    cfg.validate()?;
    let (w, h) = (image.width() as usize, image.height() as usize);
    if (mask.width(), mask.height()) != (w, h) {
        return Err(HeatmapError::SizeMismatch {
            got: (mask.width(), mask.height()),
            expected: (w, h),
        });
    }
    let origin_source = mask.centroid().ok_or(HeatmapError::EmptyMask)?;
    let (ww, wh) = (cfg.working_size[0], cfg.working_size[1]);

    let work_img = resize_area_rgb(image, ww, wh);
    let work_mask = resize_mask(mask, ww, wh);
    let widths = scaled_ring_widths(cfg.ring_widths, (w, h), (ww, wh));
    let rings = contour_rings(&work_mask, widths, cfg.ring_weights)?;
    let (mcx, mcy) = work_mask.centroid().ok_or(HeatmapError::EmptyMask)?;
    let origin = (
        (mcx.round() as usize).min(ww - 1),
        (mcy.round() as usize).min(wh - 1),
    );

    let distance = distance_grid(&work_img, &work_mask, &rings, origin, cfg.stride);
    let range = finite_range(&distance);
    let (status, working_value) = match range {
        None => {
            let mut delta = Grid::filled(ww, wh, 0.0);
            delta.set(origin.0, origin.1, 1.0);
            (HeatmapStatus::AllInfinite, delta)
        }
        Some((m, big_m)) => {
            let status = if m == big_m {
                HeatmapStatus::Uniform
            } else {
                HeatmapStatus::Normal
            };
            (status, log_rescale(&distance, cfg.epsilon_log))
        }
    };
    let value = if status == HeatmapStatus::AllInfinite {
        let mut delta = Grid::filled(w, h, 0.0);
        let (ox, oy) = (origin_source.0.round() as usize, origin_source.1.round() as usize);
        delta.set(ox.min(w - 1), oy.min(h - 1), 1.0);
        delta
    } else {
        working_value.resize_bilinear(w, h)
    };
    Ok(ConsistencyHeatmap {
        width: w,
        height: h,
        computed_at: (ww, wh),
        distance,
        working_value,
        value,
        origin_working: origin,
        origin_source,
        distance_range: range,
        ring_widths_used: widths,
        status,
    })
}

/// Distances at every stride-grid candidate (aligned with `origin`); other
/// cells copy their nearest candidate.
pub fn distance_grid(
    image: &ColorGrid,
    hole: &BinaryMask,
    rings: &ContourRingSet,
    origin: (usize, usize),
    stride: usize,
) -> Grid<f64> {
    let (w, h) = (image.width(), image.height());
    let desc = RingDescriptor::new(image, rings);
    let (ox, oy) = (origin.0 as i64, origin.1 as i64);
    let snap = |v: usize, o: i64, n: usize| -> i64 {
        let s = stride as i64;
        let k = ((v as i64 - o) as f64 / s as f64).round() as i64;
        let mut c = o + k * s;
        while c >= n as i64 {
            c -= s;
        }
        while c < 0 {
            c += s;
        }
        c
    };
    let cand_x: Vec<i64> = (0..w).map(|x| snap(x, ox, w)).collect();
    let cand_y: Vec<i64> = (0..h).map(|y| snap(y, oy, h)).collect();
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let cy = cand_y[y];
            let mut row = Vec::with_capacity(w);
            let mut cache: Option<(i64, f64)> = None;
            for &cx in cand_x.iter() {
                let d = match cache {
                    Some((k, d)) if k == cx => d,
                    _ => desc.distance_at(image, hole, cx - ox, cy - oy),
                };
                cache = Some((cx, d));
                row.push(d);
            }
            row
        })
        .collect();
    Grid::from_vec(w, h, rows.into_iter().flatten().collect())
}

/// Normalized sampling distribution over source pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub p: Grid<f64>,
}

impl ProbabilityMap {
    /// Normalize an arbitrary nonnegative weight grid.
    pub fn from_weights(weights: Grid<f64>) -> Result<Self, HeatmapError> {
        let total: f64 = weights.as_slice().iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(HeatmapError::DegenerateDistribution);
        }
        Ok(Self {
            p: weights.map(|&v| v / total),
        })
    }

    pub fn sampler(&self) -> CenterSampler {
        CenterSampler::new(self)
    }
}

/// Turn a heatmap into a distribution over source pixels. Excluded pixels
/// and pixels whose working cell has infinite distance get zero mass.
pub fn to_probability(
    hm: &ConsistencyHeatmap,
    exclusion: Option<&BinaryMask>,
) -> Result<ProbabilityMap, HeatmapError> {
    if let Some(ex) = exclusion {
        if (ex.width(), ex.height()) != (hm.width, hm.height) {
            return Err(HeatmapError::SizeMismatch {
                got: (ex.width(), ex.height()),
                expected: (hm.width, hm.height),
            });
        }
    }
    let infinite = hm.status != HeatmapStatus::AllInfinite;
    let weights = Grid::from_fn(hm.width, hm.height, |x, y| {
        if exclusion.is_some_and(|ex| ex.get(x, y)) {
            return 0.0;
        }
        if infinite {
            let (cx, cy) = hm.working_cell(x, y);
            if !hm.distance.get(cx, cy).is_finite() {
                return 0.0;
            }
        }
        hm.value.get(x, y).max(0.0)
    });
    ProbabilityMap::from_weights(weights)
}

/// Inverse-CDF sampler over the row-major flattening of a probability map.
#[derive(Debug, Clone)]
pub struct CenterSampler {
    width: usize,
    cdf: Vec<f64>,
}

impl CenterSampler {
    pub fn new(p: &ProbabilityMap) -> Self {
        let mut acc = 0.0;
        let cdf = p
            .p
            .as_slice()
            .iter()
            .map(|&v| {
                acc += v;
                acc
            })
            .collect();
        Self {
            width: p.p.width(),
            cdf,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let total = *self.cdf.last().expect("nonempty distribution");
        let u = rng.random::<f64>() * total;
        let mut i = self.cdf.partition_point(|&c| c <= u);
        if i >= self.cdf.len() {
            // u rounded up to the total: take the last cell with mass.
            i = self.cdf.len() - 1;
            while i > 0 && self.cdf[i - 1] == self.cdf[i] {
                i -= 1;
            }
        }
        (i % self.width, i / self.width)
    }
}

/// Draw one pixel with probability `p`.
pub fn sample_center<R: Rng + ?Sized>(rng: &mut R, p: &ProbabilityMap) -> (usize, usize) {
    CenterSampler::new(p).sample(rng)
}

/// Blue→cyan→yellow→red rendering of the value grid, scaled so the maximum
/// is red.
pub fn render_colormap(hm: &ConsistencyHeatmap) -> RgbImage {
    let max = hm.value.as_slice().iter().cloned().fold(0.0, f64::max);
    RgbImage::from_fn(hm.width as u32, hm.height as u32, |x, y| {
        let v = hm.value.get(x as usize, y as usize);
        let t = if max > 0.0 { v / max } else { 1.0 };
        jet(t)
    })
}

/// Grayscale rendering normalized to `[0, 255]`.
pub fn render_gray(hm: &ConsistencyHeatmap) -> image::GrayImage {
    let max = hm.value.as_slice().iter().cloned().fold(0.0, f64::max);
    image::GrayImage::from_fn(hm.width as u32, hm.height as u32, |x, y| {
        let v = hm.value.get(x as usize, y as usize);
        let t = if max > 0.0 { v / max } else { 1.0 };
        image::Luma([(t * 255.0).round() as u8])
    })
}

fn jet(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let ch = |c: f64| ((1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    Rgb([ch(3.0), ch(2.0), ch(1.0)])
}
