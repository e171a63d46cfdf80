mod common;

use image::{Rgb, RgbImage};
use instaboost::heatmap::{
    appearance_distance, color_grid, compute_heatmap, distance_grid, to_probability,
};
use instaboost::maskops::{contour_rings, mask_to_bbox};
use instaboost::synth::{natural_background, stripes};
use instaboost::{BinaryMask, HeatmapConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn disc(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| {
        (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r
    })
}

/// Brute-force ring distance for a pure horizontal shift on a stripe image.
fn stripe_oracle(image: &RgbImage, ring: &BinaryMask, dx: i64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for (x, y) in ring.foreground() {
        let a = image.get_pixel(x as u32, y as u32).0;
        let b = image.get_pixel((x as i64 + dx) as u32, y as u32).0;
        let sq: f64 = (0..3).map(|c| (a[c] as f64 - b[c] as f64).powi(2)).sum();
        sum += sq.sqrt();
        n += 1.0;
    }
    sum / n
}

#[test]
fn stripe_period_shift_is_free_half_period_is_maximal() {
    let (w, h) = (180, 120);
    let image = stripes(w, h, 8, true);
    let mask = disc(w, h, 90.0, 60.0, 10.0);
    let cfg = HeatmapConfig::default();
    let rings = contour_rings(&mask, cfg.ring_widths, cfg.ring_weights).unwrap();
    let grid = color_grid(&image);
    let at8 = appearance_distance(&grid, &mask, &rings, (90, 60), (98, 60));
    let at4 = appearance_distance(&grid, &mask, &rings, (90, 60), (94, 60));
    let contrast = ((220.0f64 - 30.0).powi(2) * 3.0).sqrt();
    assert_eq!(at8, 0.0);
    let weighted: f64 = (0..3)
        .map(|i| cfg.ring_weights[i] * stripe_oracle(&image, &rings.rings[i], 4))
        .sum();
    assert!((at4 - weighted).abs() < 1e-9, "{at4} vs {weighted}");
    assert!((at4 - contrast).abs() < 1e-9, "every pixel flips under a half-period shift");

    let hm = compute_heatmap(&image, &mask, &cfg).unwrap();
    assert!(hm.value.get(98, 60) >= hm.value.get(94, 60));
}

#[test]
fn distance_grid_moves_with_the_scene() {
    // Two crops of one large image offset by (dx, dy), instance moved along.
    let big = natural_background(260, 200, 5);
    let (w, h) = (180, 120);
    let (dx, dy) = (13usize, 9usize);
    let crop = |ox: usize, oy: usize| {
        RgbImage::from_fn(w as u32, h as u32, |x, y| *big.get_pixel(x + ox as u32, y + oy as u32))
    };
    let a_img = crop(30, 30);
    let b_img = crop(30 - dx, 30 - dy);
    let a_mask = disc(w, h, 80.0, 55.0, 12.0);
    let b_mask = a_mask.translate(dx as i64, dy as i64);
    let cfg = HeatmapConfig::default();
    let ra = contour_rings(&a_mask, cfg.ring_widths, cfg.ring_weights).unwrap();
    let rb = contour_rings(&b_mask, cfg.ring_widths, cfg.ring_weights).unwrap();
    let da = distance_grid(&color_grid(&a_img), &a_mask, &ra, (80, 55), 1);
    let db = distance_grid(&color_grid(&b_img), &b_mask, &rb, (80 + dx, 55 + dy), 1);

    // Compare only candidates whose whole descriptor stays inside both frames.
    let reach = mask_to_bbox(&a_mask).unwrap();
    let pad = 15.0;
    let mut compared = 0;
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (x as f64 - 80.0, y as f64 - 55.0);
            let x0 = reach.x - pad + sx;
            let y0 = reach.y - pad + sy;
            let x1 = reach.x + reach.w + pad + sx;
            let y1 = reach.y + reach.h + pad + sy;
            let inside = x0 >= 0.0 && y0 >= 0.0 && x1 + dx as f64 <= w as f64 && y1 + dy as f64 <= h as f64;
            if !inside {
                continue;
            }
            let a = *da.get(x, y);
            let b = *db.get(x + dx, y + dy);
            assert!(
                (a.is_infinite() && b.is_infinite()) || (a - b).abs() <= 1e-9 * a.abs().max(1.0),
                "({x},{y}): {a} vs {b}"
            );
            compared += 1;
        }
    }
    assert!(compared > 500, "only {compared} candidates compared");
}

#[test]
fn probability_is_proportional_to_value() {
    let image = natural_background(180, 120, 8);
    let mask = disc(180, 120, 70.0, 50.0, 14.0);
    let hm = compute_heatmap(&image, &mask, &HeatmapConfig::default()).unwrap();
    let p = to_probability(&hm, None).unwrap();
    let total: f64 = p.p.as_slice().iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    while checked < 100 {
        let (x1, y1) = (rng.random_range(0..180), rng.random_range(0..120));
        let (x2, y2) = (rng.random_range(0..180), rng.random_range(0..120));
        let (v1, v2) = (*hm.value.get(x1, y1), *hm.value.get(x2, y2));
        let (p1, p2) = (*p.p.get(x1, y1), *p.p.get(x2, y2));
        let finite = |x, y| hm.distance.get(x, y).is_finite();
        if !finite(x1, y1) || !finite(x2, y2) || v2 == 0.0 {
            continue;
        }
        assert!((p1 / p2 - v1 / v2).abs() <= 1e-9 * (v1 / v2).max(1.0));
        checked += 1;
    }
    for (i, d) in hm.distance.as_slice().iter().enumerate() {
        if d.is_infinite() {
            assert_eq!(p.p.as_slice()[i], 0.0);
        }
    }
}

#[test]
fn constant_image_gives_uniform_heatmap() {
    let image = RgbImage::from_pixel(200, 150, Rgb([77, 77, 77]));
    let mask = disc(200, 150, 100.0, 75.0, 20.0);
    let hm = compute_heatmap(&image, &mask, &HeatmapConfig::default()).unwrap();
    let (m, big_m) = hm.distance_range.unwrap();
    assert_eq!(m, big_m);
    for (i, d) in hm.distance.as_slice().iter().enumerate() {
        if d.is_finite() {
            assert_eq!(hm.working_value.as_slice()[i], 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Lower distance always means higher heatmap value.
    #[test]
    fn value_order_reverses_distance_order(seed in 0u64..1000, cx in 40.0f64..140.0, cy in 30.0f64..90.0) {
        let image = natural_background(180, 120, seed);
        let mask = disc(180, 120, cx, cy, 9.0);
        let hm = compute_heatmap(&image, &mask, &HeatmapConfig::default()).unwrap();
        let (m, big_m) = hm.distance_range.unwrap();
        let floor = m + 1e-6 * (big_m - m);
        let mut cells: Vec<(f64, f64)> = hm
            .distance
            .as_slice()
            .iter()
            .zip(hm.working_value.as_slice())
            .filter(|(d, _)| d.is_finite() && **d > floor)
            .map(|(d, v)| (*d, *v))
            .collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0));
        for pair in cells.windows(2) {
            if pair[0].0 < pair[1].0 {
                prop_assert!(pair[0].1 > pair[1].1);
            }
        }
    }
}
