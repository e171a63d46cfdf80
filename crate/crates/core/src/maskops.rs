//! Binary masks, contour rings and feathered instance cut-outs.
//!
//! Two coordinate conventions meet here. Polygon vertices follow COCO: pixel
//! `(x, y)` covers `[x, x+1) × [y, y+1)` and its center sits at
//! `(x + 0.5, y + 0.5)`. Everything derived from a mask (centroids, patch
//! origins, paste centers) uses pixel indices, so the center of pixel
//! `(x, y)` is simply `(x, y)`.

use image::RgbImage;
use thiserror::Error;

use crate::annotations::{BBox, InstanceAnnotation, Segmentation};
use crate::grid::Grid;
use crate::rle::RleError;

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("mask size {got:?} does not match image size {expected:?}")]
    SizeMismatch {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Rle(#[from] RleError),
}

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(x, y);
            }
        }
        m
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Like [`get`](Self::get) but `false` outside the frame.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground pixel coordinates in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    /// Mean foreground pixel index.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (x, y) in self.foreground() {
            sx += x as f64;
            sy += y as f64;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Shift by `(dx, dy)`, dropping pixels that leave the frame.
    pub fn translate(&self, dx: i64, dy: i64) -> BinaryMask {
        let mut out = BinaryMask::new(self.width, self.height);
        for (x, y) in self.foreground() {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height {
                out.set(nx as usize, ny as usize, true);
            }
        }
        out
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    /// Intersection over union; two empty masks give 1.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let inter = self.intersection_count(other);
        let union = self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a || **b)
            .count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Per-pixel opacity in `[0, 1]`.
pub type AlphaPlane = Grid<f32>;

/// Rasterize an annotation's segmentation on a `width × height` canvas.
///
/// Polygons are filled with the even-odd rule sampled at pixel centers;
/// multiple polygons of one annotation are unioned.
pub fn rasterize(
    annotation: &InstanceAnnotation,
    width: usize,
    height: usize,
) -> Result<BinaryMask, MaskError> {
    match &annotation.segmentation {
        Segmentation::Rle(rle) => {
            let mask = rle.to_mask()?;
            if (mask.width(), mask.height()) != (width, height) {
                return Err(MaskError::SizeMismatch {
                    got: (mask.width(), mask.height()),
                    expected: (width, height),
                });
            }
            Ok(mask)
        }
        Segmentation::Polygons(polys) => {
            if polys.is_empty() {
                return Err(MaskError::DegenerateGeometry("no polygons".into()));
            }
            let mut mask = BinaryMask::new(width, height);
            let (mut vx, mut vy, mut nv) = (0.0, 0.0, 0usize);
            for poly in polys {
                if poly.len() < 6 || poly.len() % 2 != 0 {
                    return Err(MaskError::DegenerateGeometry(format!(
                        "polygon with {} coordinates",
                        poly.len()
                    )));
                }
                if polygon_area(poly).abs() < 1e-12 {
                    return Err(MaskError::DegenerateGeometry("zero-area polygon".into()));
                }
                fill_polygon(&mut mask, poly);
                for v in poly.chunks_exact(2) {
                    vx += v[0];
                    vy += v[1];
                    nv += 1;
                }
            }
            if mask.is_empty() {
                // Sub-pixel polygons miss every pixel center; keep the pixel under their vertex mean.
                let (cx, cy) = (vx / nv as f64, vy / nv as f64);
                if cx < 0.0 || cy < 0.0 || cx >= width as f64 || cy >= height as f64 {
                    return Err(MaskError::EmptyMask);
                }
                mask.set(cx as usize, cy as usize, true);
            }
            Ok(mask)
        }
    }
}

/// Signed shoelace area of a flat `x, y, ...` polygon.
pub fn polygon_area(poly: &[f64]) -> f64 {
    let n = poly.len() / 2;
    let mut acc = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        acc += poly[2 * i] * poly[2 * j + 1] - poly[2 * j] * poly[2 * i + 1];
    }
    acc * 0.5
}

fn fill_polygon(mask: &mut BinaryMask, poly: &[f64]) {
    let n = poly.len() / 2;
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let ys = poly.iter().skip(1).step_by(2);
    let (ymin, ymax) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
        (lo.min(y), hi.max(y))
    });
    let row_start = ((ymin - 0.5).ceil() as i64).max(0);
    let row_end = ((ymax - 0.5).ceil() as i64).min(h);
    let mut xs = Vec::with_capacity(8);
    for row in row_start..row_end {
        let yc = row as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let j = (i + 1) % n;
            let (x0, y0, x1, y1) = (poly[2 * i], poly[2 * i + 1], poly[2 * j], poly[2 * j + 1]);
            if (y0 <= yc) != (y1 <= yc) {
                xs.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let start = ((pair[0] - 0.5).ceil() as i64).max(0);
            let end = ((pair[1] - 0.5).ceil() as i64).min(w);
            for col in start..end {
                mask.set(col as usize, row as usize, true);
            }
        }
    }
}

/// Tightest pixel box around the foreground.
pub fn mask_to_bbox(mask: &BinaryMask) -> Result<BBox, MaskError> {
    let mut it = mask.foreground();
    let (x0, y0) = it.next().ok_or(MaskError::EmptyMask)?;
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (x0, x0, y0, y0);
    for (x, y) in it {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    Ok(BBox::new(
        xmin as f64,
        ymin as f64,
        (xmax - xmin + 1) as f64,
        (ymax - ymin + 1) as f64,
    ))
}

/// Chessboard distance from every pixel to the nearest foreground pixel.
/// Foreground pixels hold 0; an empty mask yields `u32::MAX` everywhere.
pub fn chebyshev_distance(mask: &BinaryMask) -> Grid<u32> {
    let (w, h) = (mask.width(), mask.height());
    let inf = u32::MAX;
    let mut d = Grid::from_fn(w, h, |x, y| if mask.get(x, y) { 0 } else { inf });
    let relax = |d: &Grid<u32>, x: usize, y: usize, dx: i64, dy: i64, cur: u32| -> u32 {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
            return cur;
        }
        let v = *d.get(nx as usize, ny as usize);
        if v == inf {
            cur
        } else {
            cur.min(v + 1)
        }
    };
    for y in 0..h {
        for x in 0..w {
            let mut cur = *d.get(x, y);
            for (dx, dy) in [(-1, -1), (0, -1), (1, -1), (-1, 0)] {
                cur = relax(&d, x, y, dx, dy, cur);
            }
            d.set(x, y, cur);
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let mut cur = *d.get(x, y);
            for (dx, dy) in [(1, 1), (0, 1), (-1, 1), (1, 0)] {
                cur = relax(&d, x, y, dx, dy, cur);
            }
            d.set(x, y, cur);
        }
    }
    d
}

/// Squared Euclidean distance from every pixel to the nearest pixel whose
/// mask value equals `target` (exact, separable lower-envelope transform).
pub fn squared_euclidean_distance(mask: &BinaryMask, target: bool) -> Grid<f64> {
    let (w, h) = (mask.width(), mask.height());
    let mut g = Grid::from_fn(w, h, |x, y| {
        if mask.get(x, y) == target {
            0.0
        } else {
            f64::INFINITY
        }
    });
    let mut buf = vec![0.0; w.max(h)];
    let mut out = vec![0.0; w.max(h)];
    for x in 0..w {
        for y in 0..h {
            buf[y] = *g.get(x, y);
        }
        envelope_1d(&buf[..h], &mut out[..h]);
        for y in 0..h {
            g.set(x, y, out[y]);
        }
    }
    for y in 0..h {
        for x in 0..w {
            buf[x] = *g.get(x, y);
        }
        envelope_1d(&buf[..w], &mut out[..w]);
        for x in 0..w {
            g.set(x, y, out[x]);
        }
    }
    g
}

fn envelope_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let finite: Vec<usize> = (0..n).filter(|&i| f[i].is_finite()).collect();
    if finite.is_empty() {
        d.iter_mut().for_each(|v| *v = f64::INFINITY);
        return;
    }
    let mut v = Vec::with_capacity(finite.len());
    let mut z: Vec<f64> = Vec::with_capacity(finite.len() + 1);
    let intersect = |q: usize, p: usize| -> f64 {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
    };
    for &q in &finite {
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = intersect(q, p);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                        if v.is_empty() {
                            continue;
                        }
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    let mut k = 0;
    for (i, slot) in d.iter_mut().enumerate() {
        let x = i as f64;
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let dx = x - v[k] as f64;
        *slot = dx * dx + f[v[k]];
    }
}

/// Three background bands of fixed width around an instance, innermost first.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourRingSet {
    pub rings: [BinaryMask; 3],
    pub widths: [u32; 3],
    pub weights: [f64; 3],
}

impl ContourRingSet {
    /// Foreground pixels of ring `i` as `(x, y)` indices.
    pub fn pixels(&self, i: usize) -> Vec<(usize, usize)> {
        self.rings[i].foreground().collect()
    }
}

pub fn check_ring_params(widths: [u32; 3], weights: [f64; 3]) -> Result<(), MaskError> {
    if widths.iter().any(|&w| w == 0) {
        return Err(MaskError::InvalidParameter(format!(
            "ring widths must be positive, got {widths:?}"
        )));
    }
    let ok = weights.iter().all(|w| w.is_finite())
        && weights[0] > weights[1]
        && weights[1] > weights[2]
        && weights[2] > 0.0;
    if !ok {
        return Err(MaskError::InvalidParameter(format!(
            "ring weights must be strictly decreasing and positive, got {weights:?}"
        )));
    }
    Ok(())
}

/// Bands of Chebyshev dilation around `mask`: ring 1 is `dilate(w1) \ mask`,
/// ring 2 is `dilate(w1 + w2) \ dilate(w1)`, and so on. Bands are clipped to
/// the frame.
pub fn contour_rings(
    mask: &BinaryMask,
    widths: [u32; 3],
    weights: [f64; 3],
) -> Result<ContourRingSet, MaskError> {
    check_ring_params(widths, weights)?;
    if mask.is_empty() {
        return Err(MaskError::EmptyMask);
    }
    let dist = chebyshev_distance(mask);
    let outer = [widths[0], widths[0] + widths[1], widths[0] + widths[1] + widths[2]];
    let rings = std::array::from_fn(|i| {
        let inner = if i == 0 { 0 } else { outer[i - 1] };
        BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
            let d = *dist.get(x, y);
            d > inner && d <= outer[i]
        })
    });
    Ok(ContourRingSet {
        rings,
        widths,
        weights,
    })
}

/// Opacity for a pixel at `signed_distance` from the mask boundary
/// (positive inside).
#[inline]
pub fn alpha_from_signed_distance(signed_distance: f64, feather_radius: f64) -> f64 {
    (0.5 + signed_distance / (2.0 * feather_radius)).clamp(0.0, 1.0)
}

/// Signed distance from pixel centers to the mask boundary, which runs
/// halfway between a foreground pixel and its nearest background pixel.
pub fn signed_distance(mask: &BinaryMask) -> Grid<f64> {
    let to_bg = squared_euclidean_distance(mask, false);
    let to_fg = squared_euclidean_distance(mask, true);
    Grid::from_fn(mask.width(), mask.height(), |x, y| {
        if mask.get(x, y) {
            to_bg.get(x, y).sqrt() - 0.5
        } else {
            -(to_fg.get(x, y).sqrt() - 0.5)
        }
    })
}

/// Feathered alpha matte; radius 0 reproduces the hard mask.
pub fn feather_alpha(mask: &BinaryMask, feather_radius: f64) -> Result<AlphaPlane, MaskError> {
    if !(feather_radius >= 0.0) || !feather_radius.is_finite() {
        return Err(MaskError::InvalidParameter(format!(
            "feather radius must be finite and >= 0, got {feather_radius}"
        )));
    }
    if mask.is_empty() {
        return Err(MaskError::EmptyMask);
    }
    if feather_radius == 0.0 {
        return Ok(Grid::from_fn(mask.width(), mask.height(), |x, y| {
            if mask.get(x, y) {
                1.0
            } else {
                0.0
            }
        }));
    }
    let sd = signed_distance(mask);
    Ok(sd.map(|&d| alpha_from_signed_distance(d, feather_radius) as f32))
}

/// An instance cut out of its image: straight (non-premultiplied) color in
/// `0..=255` plus alpha in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaInstancePatch {
    pub rgba: Grid<[f32; 4]>,
    /// Source-image position of the patch's top-left pixel.
    pub origin: (i64, i64),
    /// Instance centroid in source-image pixel indices.
    pub center: (f64, f64),
    pub source_annotation_id: u64,
}

impl AlphaInstancePatch {
    pub fn width(&self) -> usize {
        self.rgba.width()
    }

    pub fn height(&self) -> usize {
        self.rgba.height()
    }

    pub fn alpha(&self) -> AlphaPlane {
        self.rgba.map(|p| p[3])
    }

    /// Alpha at a canvas position, 0 outside the patch.
    pub fn alpha_at(&self, x: i64, y: i64) -> f32 {
        let (lx, ly) = (x - self.origin.0, y - self.origin.1);
        if lx < 0 || ly < 0 || lx >= self.width() as i64 || ly >= self.height() as i64 {
            0.0
        } else {
            self.rgba.get(lx as usize, ly as usize)[3]
        }
    }

    /// Canvas-sized mask of pixels with alpha strictly above `threshold`.
    pub fn mask_above(&self, threshold: f32, canvas_w: usize, canvas_h: usize) -> BinaryMask {
        let mut m = BinaryMask::new(canvas_w, canvas_h);
        for ly in 0..self.height() {
            for lx in 0..self.width() {
                let (x, y) = (self.origin.0 + lx as i64, self.origin.1 + ly as i64);
                if x >= 0
                    && y >= 0
                    && (x as usize) < canvas_w
                    && (y as usize) < canvas_h
                    && self.rgba.get(lx, ly)[3] > threshold
                {
                    m.set(x as usize, y as usize, true);
                }
            }
        }
        m
    }

    /// Number of pixels with nonzero alpha.
    pub fn visible_pixels(&self) -> usize {
        self.rgba.as_slice().iter().filter(|p| p[3] > 0.0).count()
    }
}

/// Cut an annotated instance out of `image` with a feathered alpha matte.
///
/// Returns the patch and the hole (every pixel with nonzero alpha) that the
/// background must have filled in.
pub fn cut_instance(
    image: &RgbImage,
    annotation: &InstanceAnnotation,
    feather_radius: f64,
) -> Result<(AlphaInstancePatch, BinaryMask), MaskError> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mask = rasterize(annotation, w, h)?;
    cut_mask(image, &mask, feather_radius, annotation.id)
}

/// [`cut_instance`] for an already rasterized mask.
pub fn cut_mask(
    image: &RgbImage,
    mask: &BinaryMask,
    feather_radius: f64,
    source_annotation_id: u64,
) -> Result<(AlphaInstancePatch, BinaryMask), MaskError> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if (mask.width(), mask.height()) != (w, h) {
        return Err(MaskError::SizeMismatch {
            got: (mask.width(), mask.height()),
            expected: (w, h),
        });
    }
    let alpha = feather_alpha(mask, feather_radius)?;
    let hole = BinaryMask::from_fn(w, h, |x, y| *alpha.get(x, y) > 0.0);
    let bbox = mask_to_bbox(&hole)?;
    let (x0, y0) = (bbox.x as usize, bbox.y as usize);
    let rgba = Grid::from_fn(bbox.w as usize, bbox.h as usize, |lx, ly| {
        let (x, y) = (x0 + lx, y0 + ly);
        let p = image.get_pixel(x as u32, y as u32).0;
        [p[0] as f32, p[1] as f32, p[2] as f32, *alpha.get(x, y)]
    });
    let center = mask.centroid().ok_or(MaskError::EmptyMask)?;
    Ok((
        AlphaInstancePatch {
            rgba,
            origin: (x0 as i64, y0 as i64),
            center,
            source_annotation_id,
        },
        hole,
    ))
}

/// Foreground estimation against a filled-in background.
///
/// The patch initially carries the observed colors `I`. Where `0 < α < 1`
/// these are mixtures of object and background, so each is replaced by the
/// foreground color `F = (I − (1 − α)·B) / α`, which satisfies the matting
/// equation `I = α·F + (1 − α)·B` against `background`. Compositing the
/// patch back in place over `background` then reproduces `I`, and pasting it
/// elsewhere swaps the old background share for the new one. `F` is left
/// unclamped; only the composite is clamped.
pub fn unmix_foreground(patch: &mut AlphaInstancePatch, background: &RgbImage) {
    let (w, h) = (background.width() as i64, background.height() as i64);
    let (ox, oy) = patch.origin;
    let pw = patch.width();
    for (i, px) in patch.rgba.as_mut_slice().iter_mut().enumerate() {
        let a = px[3];
        if a <= 0.0 || a >= 1.0 {
            continue;
        }
        let (x, y) = (ox + (i % pw) as i64, oy + (i / pw) as i64);
        if x < 0 || y < 0 || x >= w || y >= h {
            continue;
        }
        let b = background.get_pixel(x as u32, y as u32).0;
        for c in 0..3 {
            px[c] = (px[c] - (1.0 - a) * b[c] as f32) / a;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::BBox;
    use image::Rgb;
    use proptest::prelude::*;

    fn poly_ann(poly: Vec<f64>) -> InstanceAnnotation {
        InstanceAnnotation {
            id: 1,
            image_id: 1,
            category_id: 1,
            segmentation: Segmentation::Polygons(vec![poly]),
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
            area: 1.0,
            iscrowd: false,
            extra: Default::default(),
        }
    }

    fn square(x0: usize, y0: usize, side: usize, w: usize, h: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            x >= x0 && x < x0 + side && y >= y0 && y < y0 + side
        })
    }

    /// Count pixel centers inside a polygon by testing each one with a
    /// crossing-number point test (independent of the scanline fill).
    fn crossing_oracle(poly: &[f64], w: usize, h: usize) -> usize {
        let n = poly.len() / 2;
        let mut count = 0;
        for py in 0..h {
            for px in 0..w {
                let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                let mut inside = false;
                for i in 0..n {
                    let j = (i + n - 1) % n;
                    let (xi, yi, xj, yj) = (poly[2 * i], poly[2 * i + 1], poly[2 * j], poly[2 * j + 1]);
                    if (yi > cy) != (yj > cy) && cx < (xj - xi) * (cy - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                }
                count += usize::from(inside);
            }
        }
        count
    }

    #[test]
    fn square_polygon_rasterizes_to_100_pixels() {
        let poly = vec![10.0, 10.0, 20.0, 10.0, 20.0, 20.0, 10.0, 20.0];
        let m = rasterize(&poly_ann(poly.clone()), 32, 32).unwrap();
        assert_eq!(m.count(), crossing_oracle(&poly, 32, 32));
        assert_eq!(m.count(), 100);
        assert_eq!(mask_to_bbox(&m).unwrap(), BBox::new(10.0, 10.0, 10.0, 10.0));
    }

    #[test]
    fn concave_polygon_matches_crossing_oracle() {
        let poly = vec![2.3, 1.7, 28.1, 3.2, 15.5, 12.0, 27.4, 29.9, 4.0, 22.2, 9.8, 13.3];
        let m = rasterize(&poly_ann(poly.clone()), 32, 32).unwrap();
        assert_eq!(m.count(), crossing_oracle(&poly, 32, 32));
    }

    #[test]
    fn full_frame_polygon_is_all_true() {
        let m = rasterize(&poly_ann(vec![0.0, 0.0, 32.0, 0.0, 32.0, 32.0, 0.0, 32.0]), 32, 32)
            .unwrap();
        assert_eq!(m.count(), 32 * 32);
        assert_eq!(mask_to_bbox(&m).unwrap(), BBox::new(0.0, 0.0, 32.0, 32.0));
    }

    #[test]
    fn degenerate_polygons_are_rejected() {
        let two = rasterize(&poly_ann(vec![1.0, 1.0, 5.0, 5.0]), 8, 8);
        assert!(matches!(two, Err(MaskError::DegenerateGeometry(_))));
        let flat = rasterize(&poly_ann(vec![1.0, 1.0, 3.0, 3.0, 5.0, 5.0]), 8, 8);
        assert!(matches!(flat, Err(MaskError::DegenerateGeometry(_))));
    }

    #[test]
    fn tiny_polygon_keeps_one_pixel() {
        let m = rasterize(&poly_ann(vec![3.1, 3.1, 3.3, 3.1, 3.2, 3.3]), 8, 8).unwrap();
        assert_eq!(m.count(), 1);
        assert!(m.get(3, 3));
    }

    #[test]
    fn bbox_of_single_pixel_and_empty() {
        let mut m = BinaryMask::new(16, 16);
        assert_eq!(mask_to_bbox(&m), Err(MaskError::EmptyMask));
        m.set(5, 7, true);
        assert_eq!(mask_to_bbox(&m).unwrap(), BBox::new(5.0, 7.0, 1.0, 1.0));
    }

    fn brute_chebyshev(mask: &BinaryMask, x: usize, y: usize) -> u32 {
        mask.foreground()
            .map(|(fx, fy)| (fx as i64 - x as i64).unsigned_abs().max((fy as i64 - y as i64).unsigned_abs()) as u32)
            .min()
            .unwrap()
    }

    fn banding_oracle(mask: &BinaryMask, widths: [u32; 3]) -> [usize; 3] {
        let edges = [widths[0], widths[0] + widths[1], widths[0] + widths[1] + widths[2]];
        let mut counts = [0; 3];
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                let d = brute_chebyshev(mask, x, y);
                for i in 0..3 {
                    let lo = if i == 0 { 0 } else { edges[i - 1] };
                    if d > lo && d <= edges[i] {
                        counts[i] += 1;
                    }
                }
            }
        }
        counts
    }

    #[test]
    fn square_rings_match_banding_oracle() {
        let m = square(20, 20, 10, 50, 50);
        let rings = contour_rings(&m, [5, 5, 5], [0.4, 0.35, 0.25]).unwrap();
        let counts: Vec<usize> = rings.rings.iter().map(BinaryMask::count).collect();
        assert_eq!(counts, banding_oracle(&m, [5, 5, 5]).to_vec());
        // 20² − 10², 30² − 20², 40² − 30²
        assert_eq!(counts, vec![300, 500, 700]);
    }

    #[test]
    fn border_rings_are_clipped() {
        let interior = square(20, 20, 10, 50, 50);
        let border = square(0, 20, 10, 50, 50);
        let ri = contour_rings(&interior, [5, 5, 5], [0.4, 0.35, 0.25]).unwrap();
        let rb = contour_rings(&border, [5, 5, 5], [0.4, 0.35, 0.25]).unwrap();
        let total = |r: &ContourRingSet| r.rings.iter().map(BinaryMask::count).sum::<usize>();
        assert!(total(&rb) < total(&ri));
        let counts: Vec<usize> = rb.rings.iter().map(BinaryMask::count).collect();
        assert_eq!(counts, banding_oracle(&border, [5, 5, 5]).to_vec());
    }

    #[test]
    fn ring_parameters_are_checked() {
        let m = square(2, 2, 3, 10, 10);
        assert!(contour_rings(&m, [5, 0, 5], [0.4, 0.35, 0.25]).is_err());
        assert!(contour_rings(&m, [5, 5, 5], [0.3, 0.35, 0.25]).is_err());
        assert_eq!(
            contour_rings(&BinaryMask::new(4, 4), [1, 1, 1], [3.0, 2.0, 1.0]),
            Err(MaskError::EmptyMask)
        );
    }

    #[test]
    fn zero_radius_feather_is_hard_mask() {
        let m = square(3, 4, 5, 16, 16);
        let a = feather_alpha(&m, 0.0).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(*a.get(x, y), if m.get(x, y) { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(alpha_from_signed_distance(0.0, 3.0), 0.5);
    }

    #[test]
    fn edt_matches_brute_force() {
        let m = BinaryMask::from_fn(23, 17, |x, y| (x * 7 + y * 3) % 11 == 0 || (x > 15 && y > 10));
        let d = squared_euclidean_distance(&m, true);
        for y in 0..17 {
            for x in 0..23 {
                let brute = m
                    .foreground()
                    .map(|(fx, fy)| {
                        let (dx, dy) = (fx as f64 - x as f64, fy as f64 - y as f64);
                        dx * dx + dy * dy
                    })
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(*d.get(x, y), brute, "at ({x},{y})");
            }
        }
    }

    #[test]
    fn feather_is_monotone_along_outward_rows() {
        let m = square(20, 20, 12, 52, 52);
        let a = feather_alpha(&m, 3.0).unwrap();
        // Brute-force signed distance along the horizontal line through the middle.
        let y = 26;
        let mut prev = f32::INFINITY;
        for x in 26..52 {
            let v = *a.get(x, y);
            assert!(v <= prev, "alpha rose at x={x}");
            prev = v;
            let expected = if m.get(x, y) {
                (31 - x) as f64 + 1.0 - 0.5
            } else {
                -((x - 31) as f64 - 0.5)
            };
            assert!((v as f64 - alpha_from_signed_distance(expected, 3.0)).abs() < 1e-6);
        }
        assert_eq!(*a.get(26, 26), 1.0);
        assert_eq!(*a.get(5, 5), 0.0);
    }

    #[test]
    fn cut_uniform_image() {
        let img = RgbImage::from_pixel(40, 30, Rgb([10, 200, 30]));
        let ann = poly_ann(vec![10.0, 8.0, 25.0, 9.0, 22.0, 24.0, 12.0, 20.0]);
        let (patch, hole) = cut_instance(&img, &ann, 3.0).unwrap();
        assert!(patch.rgba.as_slice().iter().all(|p| p[..3] == [10.0, 200.0, 30.0]));
        let mask = rasterize(&ann, 40, 30).unwrap();
        assert_eq!(mask.intersection_count(&hole), mask.count());
        let local = BinaryMask::from_fn(patch.width(), patch.height(), |x, y| {
            mask.get(x + patch.origin.0 as usize, y + patch.origin.1 as usize)
        });
        let (lx, ly) = local.centroid().unwrap();
        let (cx, cy) = mask.centroid().unwrap();
        assert!((lx + patch.origin.0 as f64 - cx).abs() < 1e-9);
        assert!((ly + patch.origin.1 as f64 - cy).abs() < 1e-9);
        assert_eq!(patch.center, (cx, cy));
    }

    fn blob() -> impl Strategy<Value = BinaryMask> {
        (4usize..12, 4usize..12, 1usize..6, 0u64..1000).prop_map(|(cx, cy, r, salt)| {
            BinaryMask::from_fn(40, 40, |x, y| {
                let (dx, dy) = (x as i64 - cx as i64 - 12, y as i64 - cy as i64 - 12);
                dx * dx + dy * dy <= (r * r) as i64
                    || ((x as u64 * 31 + y as u64 * 17 + salt) % 97 == 0 && dx.abs() < 8 && dy.abs() < 8)
            })
        })
    }

    proptest! {
        #[test]
        fn rings_disjoint_and_outside(m in blob()) {
            let r = contour_rings(&m, [2, 3, 2], [3.0, 2.0, 1.0]).unwrap();
            for i in 0..3 {
                prop_assert_eq!(r.rings[i].intersection_count(&m), 0);
                for j in i + 1..3 {
                    prop_assert_eq!(r.rings[i].intersection_count(&r.rings[j]), 0);
                }
            }
            prop_assert!(r.rings[0].count() > 0);
        }

        #[test]
        fn rings_translation_equivariant(m in blob(), dx in -3i64..4, dy in -3i64..4) {
            let moved = m.translate(dx, dy);
            let r = contour_rings(&m, [2, 2, 2], [3.0, 2.0, 1.0]).unwrap();
            let rm = contour_rings(&moved, [2, 2, 2], [3.0, 2.0, 1.0]).unwrap();
            for i in 0..3 {
                prop_assert_eq!(&r.rings[i].translate(dx, dy), &rm.rings[i]);
            }
        }

        #[test]
        fn feather_alpha_sum_is_continuous_in_radius(r in 1u32..6) {
            let m = BinaryMask::from_fn(48, 48, |x, y| {
                let (dx, dy) = (x as f64 - 23.5, y as f64 - 23.5);
                dx * dx + dy * dy <= 121.0
            });
            let sum = |rad: f64| feather_alpha(&m, rad).unwrap().as_slice().iter().map(|&v| v as f64).sum::<f64>();
            let (a, b) = (sum(r as f64), sum(r as f64 + 1.0));
            // A one-pixel change of radius moves at most the feather band's worth of mass.
            let band = signed_distance(&m).as_slice().iter().filter(|d| d.abs() <= r as f64 + 1.0).count() as f64;
            prop_assert!((a - b).abs() <= band * 0.5 / (r as f64));
        }
    }

    #[test]
    fn unmixed_patch_recomposes_to_source() {
        let img = RgbImage::from_fn(40, 30, |x, y| {
            if (x as i64 - 20).pow(2) + (y as i64 - 15).pow(2) < 64 {
                Rgb([240, 20, 200])
            } else {
                Rgb([30, 140, 60])
            }
        });
        let bg = RgbImage::from_fn(40, 30, |x, _| Rgb([(20 + x) as u8, 150, 70]));
        let mask = BinaryMask::from_fn(40, 30, |x, y| img.get_pixel(x as u32, y as u32).0[0] == 240);
        let (mut patch, _) = cut_mask(&img, &mask, 3.0, 1).unwrap();
        unmix_foreground(&mut patch, &bg);
        for ly in 0..patch.height() {
            for lx in 0..patch.width() {
                let p = patch.rgba.get(lx, ly);
                let (x, y) = (patch.origin.0 as u32 + lx as u32, patch.origin.1 as u32 + ly as u32);
                let (i, b) = (img.get_pixel(x, y).0, bg.get_pixel(x, y).0);
                if p[3] == 0.0 {
                    continue;
                }
                for c in 0..3 {
                    let out = p[3] * p[c] + (1.0 - p[3]) * b[c] as f32;
                    assert!((out - i[c] as f32).abs() < 1e-3, "({x},{y}) {out} vs {}", i[c]);
                }
            }
        }
    }
}
