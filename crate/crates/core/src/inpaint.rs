//! Harmonic (diffusion) hole filling.
//!
//! Hole pixels are relaxed towards the average of their 4-neighbours with
//! Jacobi sweeps until the largest per-sweep change drops below the
//! configured epsilon. Pixels outside the image are skipped, which gives a
//! zero-flux condition on the frame. Large holes are first solved on a
//! 4× coarser grid and the result is upsampled as the starting guess.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::maskops::BinaryMask;

#[derive(Debug, Error, PartialEq)]
pub enum InpaintError {
    #[error("hole covers the whole image, nothing to diffuse from")]
    HoleCoversImage,
    #[error("hole is {got:?} but image is {expected:?}")]
    SizeMismatch {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("invalid inpaint configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpaintConfig {
    pub max_iterations: u32,
    /// Stop once no channel of any hole pixel moves more than this in one sweep (0–255 scale).
    pub convergence_epsilon: f64,
    /// Known pixels kept around the hole's bounding box when solving; at least 1 is used.
    pub boundary_band: u32,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            convergence_epsilon: 0.1,
            boundary_band: 2,
        }
    }
}

impl InpaintConfig {
    pub fn validate(&self) -> Result<(), InpaintError> {
        if self.max_iterations == 0 {
            return Err(InpaintError::InvalidConfig("max_iterations must be > 0".into()));
        }
        if !(self.convergence_epsilon >= 0.0) {
            return Err(InpaintError::InvalidConfig(
                "convergence_epsilon must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InpaintOutcome {
    pub image: RgbImage,
    /// Sweeps run at full resolution.
    pub iterations: u32,
    /// False when `max_iterations` ran out first; the image is then the last iterate.
    pub converged: bool,
    /// Largest per-sweep change of each full-resolution sweep.
    pub sweep_changes: Vec<f32>,
}

type Px = [f32; 3];

const COARSE_MIN_HOLE: usize = 64;
const COARSE_FACTOR: usize = 4;
const PARALLEL_MIN_HOLE: usize = 8192;

/// Fill `hole` in `image` by diffusion. Pixels outside the hole are copied
/// unchanged.
pub fn inpaint(
    image: &RgbImage,
    hole: &BinaryMask,
    config: &InpaintConfig,
) -> Result<InpaintOutcome, InpaintError> {
    config.validate()?;
    let (w, h) = (image.width() as usize, image.height() as usize);
    if (hole.width(), hole.height()) != (w, h) {
        return Err(InpaintError::SizeMismatch {
            got: (hole.width(), hole.height()),
            expected: (w, h),
        });
    }
    let Some((x0, y0, x1, y1)) = hole_extent(hole) else {
        return Ok(InpaintOutcome {
            image: image.clone(),
            iterations: 0,
            converged: true,
            sweep_changes: Vec::new(),
        });
    };
    if hole.count() == w * h {
        return Err(InpaintError::HoleCoversImage);
    }

    let band = config.boundary_band.max(1) as usize;
    let cx0 = x0.saturating_sub(band);
    let cy0 = y0.saturating_sub(band);
    let cx1 = (x1 + band + 1).min(w);
    let cy1 = (y1 + band + 1).min(h);
    let (cw, ch) = (cx1 - cx0, cy1 - cy0);

    let values = Grid::from_fn(cw, ch, |x, y| {
        let p = image.get_pixel((cx0 + x) as u32, (cy0 + y) as u32).0;
        [p[0] as f32, p[1] as f32, p[2] as f32]
    });
    let crop_hole = BinaryMask::from_fn(cw, ch, |x, y| hole.get(cx0 + x, cy0 + y));
    let solved = solve(values, &crop_hole, config)?;

    let mut out = image.clone();
    for (x, y) in crop_hole.foreground() {
        let v = solved.values.get(x, y);
        let px = out.get_pixel_mut((cx0 + x) as u32, (cy0 + y) as u32);
        for c in 0..3 {
            px.0[c] = v[c].round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(InpaintOutcome {
        image: out,
        iterations: solved.iterations,
        converged: solved.converged,
        sweep_changes: solved.sweep_changes,
    })
}

fn hole_extent(hole: &BinaryMask) -> Option<(usize, usize, usize, usize)> {
    let mut it = hole.foreground();
    let (fx, fy) = it.next()?;
    Some(it.fold((fx, fy, fx, fy), |(a, b, c, d), (x, y)| {
        (a.min(x), b.min(y), c.max(x), d.max(y))
    }))
}

struct Solved {
    values: Grid<Px>,
    iterations: u32,
    converged: bool,
    sweep_changes: Vec<f32>,
}

struct Stencil {
    /// Flat index of each hole pixel.
    cells: Vec<usize>,
    /// Up to four in-frame neighbour indices per hole pixel.
    neighbors: Vec<[usize; 4]>,
    counts: Vec<u8>,
}

fn stencil(hole: &BinaryMask) -> Stencil {
    let (w, h) = (hole.width(), hole.height());
    let mut cells = Vec::new();
    let mut neighbors = Vec::new();
    let mut counts = Vec::new();
    for (x, y) in hole.foreground() {
        let mut nb = [0usize; 4];
        let mut n = 0;
        let mut push = |nx: usize, ny: usize| {
            nb[n] = ny * w + nx;
            n += 1;
        };
        if x > 0 {
            push(x - 1, y);
        }
        if x + 1 < w {
            push(x + 1, y);
        }
        if y > 0 {
            push(x, y - 1);
        }
        if y + 1 < h {
            push(x, y + 1);
        }
        cells.push(y * w + x);
        neighbors.push(nb);
        counts.push(n as u8);
    }
    Stencil {
        cells,
        neighbors,
        counts,
    }
}

/// Per-channel range of the known pixels that touch the hole.
fn boundary_range(values: &Grid<Px>, hole: &BinaryMask) -> Option<(Px, Px)> {
    let (w, h) = (hole.width(), hole.height());
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    let mut any = false;
    for y in 0..h {
        for x in 0..w {
            if hole.get(x, y) {
                continue;
            }
            let touches = (x > 0 && hole.get(x - 1, y))
                || (x + 1 < w && hole.get(x + 1, y))
                || (y > 0 && hole.get(x, y - 1))
                || (y + 1 < h && hole.get(x, y + 1));
            if touches {
                any = true;
                let v = values.get(x, y);
                for c in 0..3 {
                    lo[c] = lo[c].min(v[c]);
                    hi[c] = hi[c].max(v[c]);
                }
            }
        }
    }
    any.then_some((lo, hi))
}

fn solve(mut values: Grid<Px>, hole: &BinaryMask, config: &InpaintConfig) -> Result<Solved, InpaintError> {
    let w = hole.width();
    let (lo, hi) = boundary_range(&values, hole).ok_or(InpaintError::HoleCoversImage)?;
    let st = stencil(hole);

    let init = coarse_guess(&values, hole, config);
    let mean = [0, 1, 2].map(|c| (lo[c] + hi[c]) * 0.5);
    for &i in &st.cells {
        let (x, y) = (i % w, i / w);
        let guess = init.as_ref().map_or(mean, |g| *g.get(x, y));
        values.as_mut_slice()[i] = [0, 1, 2].map(|c| guess[c].clamp(lo[c], hi[c]));
    }

    let eps = config.convergence_epsilon as f32;
    let mut update = vec![[0f32; 3]; st.cells.len()];
    let mut sweep_changes = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let relax = |k: usize, vals: &[Px]| -> Px {
        let n = st.counts[k] as usize;
        let mut acc = [0f32; 3];
        for &j in &st.neighbors[k][..n] {
            for c in 0..3 {
                acc[c] += vals[j][c];
            }
        }
        acc.map(|a| a / n as f32)
    };
    while iterations < config.max_iterations {
        {
            let vals = values.as_slice();
            if st.cells.len() >= PARALLEL_MIN_HOLE {
                update
                    .par_iter_mut()
                    .enumerate()
                    .for_each(|(k, u)| *u = relax(k, vals));
            } else {
                for (k, u) in update.iter_mut().enumerate() {
                    *u = relax(k, vals);
                }
            }
        }
        let vals = values.as_mut_slice();
        let mut change = 0f32;
        for (k, &i) in st.cells.iter().enumerate() {
            for c in 0..3 {
                change = change.max((update[k][c] - vals[i][c]).abs());
            }
            vals[i] = update[k];
        }
        iterations += 1;
        sweep_changes.push(change);
        if change <= eps {
            converged = true;
            break;
        }
    }
    Ok(Solved {
        values,
        iterations,
        converged,
        sweep_changes,
    })
}

/// Factor applied to the convergence epsilon on coarse levels.
const COARSE_TIGHTENING: f64 = 0.01;

/// Starting guess from a solve on a grid `COARSE_FACTOR` times smaller.
fn coarse_guess(values: &Grid<Px>, hole: &BinaryMask, config: &InpaintConfig) -> Option<Grid<Px>> {
    let (w, h) = (hole.width(), hole.height());
    if hole.count() < COARSE_MIN_HOLE || w < 2 * COARSE_FACTOR || h < 2 * COARSE_FACTOR {
        return None;
    }
    let (cw, ch) = (w.div_ceil(COARSE_FACTOR), h.div_ceil(COARSE_FACTOR));
    let mut sums = Grid::filled(cw, ch, ([0f32; 3], 0u32));
    for y in 0..h {
        for x in 0..w {
            if hole.get(x, y) {
                continue;
            }
            let cell = sums.get_mut(x / COARSE_FACTOR, y / COARSE_FACTOR);
            let v = values.get(x, y);
            for c in 0..3 {
                cell.0[c] += v[c];
            }
            cell.1 += 1;
        }
    }
    let coarse_hole = BinaryMask::from_fn(cw, ch, |x, y| sums.get(x, y).1 == 0);
    if coarse_hole.is_empty() || coarse_hole.count() == cw * ch {
        return None;
    }
    let coarse_vals = sums.map(|(s, n)| {
        if *n == 0 {
            [0.0; 3]
        } else {
            s.map(|v| v / *n as f32)
        }
    });
    // The coarse error carries straight into the fine start, and a loose
    // per-sweep criterion stops far from the fixed point on slow modes.
    let coarse_config = InpaintConfig {
        convergence_epsilon: config.convergence_epsilon * COARSE_TIGHTENING,
        ..*config
    };
    let solved = solve(coarse_vals, &coarse_hole, &coarse_config).ok()?;
    let f = COARSE_FACTOR as f64;
    let planes: [Grid<f64>; 3] =
        std::array::from_fn(|c| solved.values.map(|p| p[c] as f64));
    Some(Grid::from_fn(w, h, |x, y| {
        let u = (x as f64 + 0.5) / f - 0.5;
        let v = (y as f64 + 0.5) / f - 0.5;
        [0, 1, 2].map(|c| planes[c].sample_bilinear(u, v) as f32)
    }))
}
