//! Placement transforms for pasted instances.
//!
//! A placement is a tuple `(t_x, t_y, s, r)`: translation in pixels, uniform
//! scale and rotation in degrees. Its matrix is
//!
//! ```text
//! [  s·cos r   s·sin r   t_x ]
//! [ -s·sin r   s·cos r   t_y ]
//! [     0         0       1  ]
//! ```
//!
//! Scale and rotation act about the instance centroid, so `(t_x, t_y)` is
//! exactly the shift of the centroid. With image axes (y down) a positive
//! `r` turns the instance clockwise on screen.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{InstanceAnnotation, Segmentation};
use crate::grid::Grid;
use crate::maskops::{mask_to_bbox, AlphaInstancePatch};
use crate::rle::Rle;

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("invalid affine tuple: {0}")]
    InvalidTuple(String),
    #[error("transformed patch lies entirely outside the canvas")]
    FullyClipped,
    #[error("no pixel of the warped alpha is above the threshold")]
    EmptyResult,
    #[error("invalid jitter configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTuple {
    pub tx: f64,
    pub ty: f64,
    pub scale: f64,
    /// Degrees.
    pub rotation: f64,
}

impl AffineTuple {
    pub const IDENTITY: AffineTuple = AffineTuple {
        tx: 0.0,
        ty: 0.0,
        scale: 1.0,
        rotation: 0.0,
    };

    pub fn new(tx: f64, ty: f64, scale: f64, rotation: f64) -> Self {
        Self {
            tx,
            ty,
            scale,
            rotation,
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new(tx, ty, 1.0, 0.0)
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        let finite = [self.tx, self.ty, self.scale, self.rotation]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(TransformError::InvalidTuple(format!("{self:?} is not finite")));
        }
        if self.scale <= 0.0 {
            return Err(TransformError::InvalidTuple(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    /// Upper-left 2×2 block of the matrix.
    pub fn linear(&self) -> [[f64; 2]; 2] {
        let (sin, cos) = self.rotation.to_radians().sin_cos();
        let s = self.scale;
        [[s * cos, s * sin], [-s * sin, s * cos]]
    }
}

pub type Matrix3 = [[f64; 3]; 3];

pub fn affine_matrix(t: &AffineTuple) -> Matrix3 {
    let [[a, b], [c, d]] = t.linear();
    [[a, b, t.tx], [c, d, t.ty], [0.0, 0.0, 1.0]]
}

pub fn matmul3(a: &Matrix3, b: &Matrix3) -> Matrix3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Ranges of the uniform jitter distribution around the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterConfig {
    /// Translation bound as a fraction of object width (x) and height (y).
    pub translation_ratio: f64,
    pub scale_range: [f64; 2],
    pub rotation_range_deg: [f64; 2],
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            translation_ratio: 1.0 / 15.0,
            scale_range: [0.8, 1.2],
            rotation_range_deg: [-5.0, 5.0],
        }
    }
}

impl JitterConfig {
    /// Ranges that always produce the identity tuple.
    pub fn identity() -> Self {
        Self {
            translation_ratio: 0.0,
            scale_range: [1.0, 1.0],
            rotation_range_deg: [0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        let [s0, s1] = self.scale_range;
        let [r0, r1] = self.rotation_range_deg;
        if !(self.translation_ratio >= 0.0) || !self.translation_ratio.is_finite() {
            return Err(TransformError::InvalidConfig(
                "translation_ratio must be finite and >= 0".into(),
            ));
        }
        if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return Err(TransformError::InvalidConfig(format!(
                "scale_range must satisfy 0 < lo <= hi, got {:?}",
                self.scale_range
            )));
        }
        if !(r0 <= r1 && r0.is_finite() && r1.is_finite()) {
            return Err(TransformError::InvalidConfig(format!(
                "rotation_range_deg must satisfy lo <= hi, got {:?}",
                self.rotation_range_deg
            )));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    // Always consume one draw so the stream stays aligned for degenerate ranges.
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Draw `(t_x, t_y, s, r)` independently and uniformly around the identity.
pub fn sample_jitter<R: Rng + ?Sized>(
    rng: &mut R,
    obj_w: f64,
    obj_h: f64,
    cfg: &JitterConfig,
) -> AffineTuple {
    let bx = obj_w * cfg.translation_ratio;
    let by = obj_h * cfg.translation_ratio;
    let tx = uniform(rng, -bx, bx);
    let ty = uniform(rng, -by, by);
    let scale = uniform(rng, cfg.scale_range[0], cfg.scale_range[1]);
    let rotation = uniform(rng, cfg.rotation_range_deg[0], cfg.rotation_range_deg[1]);
    AffineTuple::new(tx, ty, scale, rotation)
}

/// Resample `patch` under `t` (scale and rotation about the patch center,
/// then translation) onto a `canvas_w × canvas_h` canvas, keeping only the
/// in-canvas part. Color and alpha are interpolated bilinearly in
/// premultiplied form.
pub fn warp_patch(
    patch: &AlphaInstancePatch,
    t: &AffineTuple,
    canvas_w: usize,
    canvas_h: usize,
) -> Result<AlphaInstancePatch, TransformError> {
    t.validate()?;
    let (cx, cy) = patch.center;
    let [[a, b], [c, d]] = t.linear();
    let det = a * d - b * c;
    let inv = [[d / det, -b / det], [-c / det, a / det]];
    let (ox, oy) = (patch.origin.0 as f64, patch.origin.1 as f64);
    let (pw, ph) = (patch.width() as f64, patch.height() as f64);

    let forward = |x: f64, y: f64| {
        let (dx, dy) = (x - cx, y - cy);
        (
            a * dx + b * dy + cx + t.tx,
            c * dx + d * dy + cy + t.ty,
        )
    };
    // Support of the bilinear source reaches half a pixel past the outer samples.
    let corners = [
        forward(ox - 1.0, oy - 1.0),
        forward(ox + pw, oy - 1.0),
        forward(ox - 1.0, oy + ph),
        forward(ox + pw, oy + ph),
    ];
    let min_x = corners.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor();
    let max_x = corners.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil();
    let min_y = corners.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor();
    let max_y = corners.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil();
    let x0 = (min_x.max(0.0)) as i64;
    let y0 = (min_y.max(0.0)) as i64;
    let x1 = (max_x.min(canvas_w as f64 - 1.0)) as i64;
    let y1 = (max_y.min(canvas_h as f64 - 1.0)) as i64;
    if x1 < x0 || y1 < y0 {
        return Err(TransformError::FullyClipped);
    }

    let premul = patch.rgba.map(|p| [p[0] * p[3], p[1] * p[3], p[2] * p[3], p[3]]);
    let sample = |sx: f64, sy: f64| -> [f32; 4] {
        let fx = sx - ox;
        let fy = sy - oy;
        let ix = fx.floor();
        let iy = fy.floor();
        let (wx, wy) = ((fx - ix) as f32, (fy - iy) as f32);
        let (ix, iy) = (ix as i64, iy as i64);
        let tap = |x: i64, y: i64| -> [f32; 4] {
            if x < 0 || y < 0 || x >= premul.width() as i64 || y >= premul.height() as i64 {
                [0.0; 4]
            } else {
                *premul.get(x as usize, y as usize)
            }
        };
        let weights = [
            ((1.0 - wx) * (1.0 - wy), ix, iy),
            (wx * (1.0 - wy), ix + 1, iy),
            ((1.0 - wx) * wy, ix, iy + 1),
            (wx * wy, ix + 1, iy + 1),
        ];
        let mut acc = [0f32; 4];
        for (wt, x, y) in weights {
            if wt == 0.0 {
                continue;
            }
            let v = tap(x, y);
            for k in 0..4 {
                acc[k] += wt * v[k];
            }
        }
        acc
    };

    let (ow, oh) = ((x1 - x0 + 1) as usize, (y1 - y0 + 1) as usize);
    let mut any = false;
    let rgba = Grid::from_fn(ow, oh, |lx, ly| {
        let (x, y) = ((x0 + lx as i64) as f64, (y0 + ly as i64) as f64);
        // Written as an offset from the pure translation so that identity and
        // integer shifts land exactly on source pixels.
        let (dx, dy) = (x - cx - t.tx, y - cy - t.ty);
        let sx = x - t.tx + (inv[0][0] - 1.0) * dx + inv[0][1] * dy;
        let sy = y - t.ty + inv[1][0] * dx + (inv[1][1] - 1.0) * dy;
        let p = sample(sx, sy);
        let alpha = p[3].clamp(0.0, 1.0);
        if alpha > 0.0 {
            any = true;
            [p[0] / p[3], p[1] / p[3], p[2] / p[3], alpha].map(|v| v.max(0.0))
        } else {
            [0.0; 4]
        }
    });
    if !any {
        return Err(TransformError::FullyClipped);
    }
    Ok(AlphaInstancePatch {
        rgba,
        origin: (x0, y0),
        center: (cx + t.tx, cy + t.ty),
        source_annotation_id: patch.source_annotation_id,
    })
}

pub const DEFAULT_ALPHA_THRESHOLD: f32 = 0.5;

/// Regenerate an annotation from a warped patch: the mask is every canvas
/// pixel whose alpha is strictly above `alpha_threshold`, stored as RLE.
pub fn transform_annotation(
    ann: &InstanceAnnotation,
    warped: &AlphaInstancePatch,
    canvas_w: usize,
    canvas_h: usize,
    alpha_threshold: f32,
    new_id: u64,
) -> Result<InstanceAnnotation, TransformError> {
    let mask = warped.mask_above(alpha_threshold, canvas_w, canvas_h);
    let bbox = mask_to_bbox(&mask).map_err(|_| TransformError::EmptyResult)?;
    Ok(InstanceAnnotation {
        id: new_id,
        image_id: ann.image_id,
        category_id: ann.category_id,
        segmentation: Segmentation::Rle(Rle::from_mask(&mask)),
        bbox,
        area: mask.count() as f64,
        iscrowd: ann.iscrowd,
        extra: ann.extra.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskops::{cut_mask, rasterize, BinaryMask};
    use image::{Rgb, RgbImage};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &Matrix3, b: &Matrix3, tol: f64) -> bool {
        a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matrix_examples() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(affine_matrix(&AffineTuple::IDENTITY), id);
        assert_eq!(
            affine_matrix(&AffineTuple::new(3.0, -2.0, 1.0, 0.0)),
            [[1.0, 0.0, 3.0], [0.0, 1.0, -2.0], [0.0, 0.0, 1.0]]
        );
        let m = affine_matrix(&AffineTuple::new(0.0, 0.0, 2.0, 90.0));
        assert!(close(&m, &[[0.0, 2.0, 0.0], [-2.0, 0.0, 0.0], [0.0, 0.0, 1.0]], 1e-12));
    }

    #[test]
    fn determinant_is_scale_squared() {
        for (s, r) in [(0.8, -5.0), (1.2, 3.3), (2.0, 170.0)] {
            let [[a, b], [c, d]] = AffineTuple::new(1.0, 2.0, s, r).linear();
            assert!((a * d - b * c - s * s).abs() < 1e-12);
        }
    }

    #[test]
    fn composition_multiplies_scale_and_adds_rotation() {
        let t1 = AffineTuple::new(3.0, 1.0, 1.1, 4.0);
        let t2 = AffineTuple::new(-2.0, 5.0, 0.9, -7.5);
        let m = matmul3(&affine_matrix(&t1), &affine_matrix(&t2));
        let expect = AffineTuple::new(0.0, 0.0, 1.1 * 0.9, 4.0 - 7.5).linear();
        for i in 0..2 {
            for j in 0..2 {
                assert!((m[i][j] - expect[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_jitter_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = sample_jitter(&mut rng, 50.0, 40.0, &JitterConfig::identity());
            assert_eq!(t, AffineTuple::IDENTITY);
        }
    }

    #[test]
    fn default_jitter_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = JitterConfig::default();
        for _ in 0..10_000 {
            let t = sample_jitter(&mut rng, 150.0, 90.0, &cfg);
            assert!(t.tx.abs() <= 10.0 + 1e-12 && t.ty.abs() <= 6.0 + 1e-12);
            assert!((0.8..=1.2).contains(&t.scale));
            assert!((-5.0..=5.0).contains(&t.rotation));
        }
    }

    #[test]
    fn scale_draws_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let cfg = JitterConfig::default();
        let mut s: Vec<f64> = (0..100_000)
            .map(|_| sample_jitter(&mut rng, 10.0, 10.0, &cfg).scale)
            .collect();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((mean - 1.0).abs() < 0.01);
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        let ks = s
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let cdf = ((v - 0.8) / 0.4).clamp(0.0, 1.0);
                (cdf - i as f64 / n).abs().max((cdf - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn seeded_jitter_is_deterministic() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5)
                .map(|_| sample_jitter(&mut rng, 30.0, 20.0, &JitterConfig::default()))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    fn textured(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) * 3 % 256) as u8]))
    }

    fn disc(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            dx * dx + dy * dy <= r * r
        })
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = textured(80, 60);
        let (patch, _) = cut_mask(&img, &disc(80, 60, 40.0, 30.0, 12.0), 3.0, 1).unwrap();
        let out = warp_patch(&patch, &AffineTuple::IDENTITY, 80, 60).unwrap();
        for y in 0..60i64 {
            for x in 0..80i64 {
                let a = patch.alpha_at(x, y);
                assert_eq!(out.alpha_at(x, y), a);
                if a > 0.0 {
                    let lp = out.rgba.get((x - out.origin.0) as usize, (y - out.origin.1) as usize);
                    let sp = patch.rgba.get((x - patch.origin.0) as usize, (y - patch.origin.1) as usize);
                    for k in 0..3 {
                        assert!((lp[k] - sp[k]).abs() < 1e-3);
                    }
                }
            }
        }
    }

    #[test]
    fn integer_translation_is_a_shifted_copy() {
        let img = textured(80, 60);
        let (patch, _) = cut_mask(&img, &disc(80, 60, 30.0, 25.0, 9.0), 2.0, 1).unwrap();
        let out = warp_patch(&patch, &AffineTuple::translation(7.0, 3.0), 80, 60).unwrap();
        assert_eq!(out.center, (patch.center.0 + 7.0, patch.center.1 + 3.0));
        for y in 0..60i64 {
            for x in 0..80i64 {
                assert_eq!(out.alpha_at(x + 7, y + 3), patch.alpha_at(x, y));
            }
        }
    }

    #[test]
    fn doubling_scale_quadruples_area() {
        let img = textured(200, 200);
        let mask = disc(200, 200, 100.0, 100.0, 15.0);
        let (patch, _) = cut_mask(&img, &mask, 0.0, 1).unwrap();
        let out = warp_patch(&patch, &AffineTuple::new(0.0, 0.0, 2.0, 0.0), 200, 200).unwrap();
        let before = patch.mask_above(0.5, 200, 200).count() as f64;
        let after = out.mask_above(0.5, 200, 200).count() as f64;
        let ratio = after / before;
        assert!((3.8..=4.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn off_canvas_is_fully_clipped() {
        let img = textured(50, 50);
        let (patch, _) = cut_mask(&img, &disc(50, 50, 25.0, 25.0, 5.0), 1.0, 1).unwrap();
        assert_eq!(
            warp_patch(&patch, &AffineTuple::translation(200.0, 0.0), 50, 50),
            Err(TransformError::FullyClipped)
        );
        assert!(warp_patch(&patch, &AffineTuple::new(0.0, 0.0, -1.0, 0.0), 50, 50).is_err());
    }

    fn ann_for(mask: &BinaryMask) -> InstanceAnnotation {
        InstanceAnnotation {
            id: 4,
            image_id: 2,
            category_id: 9,
            segmentation: Segmentation::Rle(Rle::from_mask(mask)),
            bbox: mask_to_bbox(mask).unwrap(),
            area: mask.count() as f64,
            iscrowd: false,
            extra: Default::default(),
        }
    }

    #[test]
    fn identity_annotation_round_trip() {
        let img = textured(90, 70);
        let mask = disc(90, 70, 44.0, 33.0, 14.5);
        let ann = ann_for(&mask);
        let (patch, _) = cut_mask(&img, &mask, 3.0, ann.id).unwrap();
        let warped = warp_patch(&patch, &AffineTuple::IDENTITY, 90, 70).unwrap();
        let out = transform_annotation(&ann, &warped, 90, 70, 0.5, 77).unwrap();
        let new_mask = rasterize(&out, 90, 70).unwrap();
        assert!(new_mask.iou(&mask) >= 0.95);
        assert_eq!((out.id, out.image_id, out.category_id), (77, 2, 9));
        assert_eq!(out.area, new_mask.count() as f64);
    }

    #[test]
    fn translated_annotation_shifts_bbox() {
        let img = textured(90, 70);
        let mask = disc(90, 70, 40.0, 30.0, 10.0);
        let ann = ann_for(&mask);
        let (patch, _) = cut_mask(&img, &mask, 3.0, ann.id).unwrap();
        let warped = warp_patch(&patch, &AffineTuple::translation(7.0, 3.0), 90, 70).unwrap();
        let out = transform_annotation(&ann, &warped, 90, 70, 0.5, 4).unwrap();
        let b = ann.bbox;
        assert_eq!(out.bbox, crate::annotations::BBox::new(b.x + 7.0, b.y + 3.0, b.w, b.h));
    }

    #[test]
    fn shrinking_reduces_area() {
        let img = textured(120, 120);
        let mask = disc(120, 120, 60.0, 60.0, 25.0);
        let ann = ann_for(&mask);
        let (patch, _) = cut_mask(&img, &mask, 3.0, ann.id).unwrap();
        let warped = warp_patch(&patch, &AffineTuple::new(0.0, 0.0, 0.8, 0.0), 120, 120).unwrap();
        let out = transform_annotation(&ann, &warped, 120, 120, 0.5, 4).unwrap();
        let ratio = out.area / ann.area;
        assert!((0.55..=0.75).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn empty_threshold_result_is_an_error() {
        let img = textured(40, 40);
        let mask = disc(40, 40, 20.0, 20.0, 6.0);
        let ann = ann_for(&mask);
        let (patch, _) = cut_mask(&img, &mask, 3.0, ann.id).unwrap();
        assert_eq!(
            transform_annotation(&ann, &patch, 40, 40, 1.0, 4),
            Err(TransformError::EmptyResult)
        );
    }
}
