#![allow(dead_code)]

use image::RgbImage;
use instaboost::BinaryMask;

/// PSNR in dB over the pixels selected by `region`, all three channels.
pub fn psnr_in(a: &RgbImage, b: &RgbImage, region: &BinaryMask) -> f64 {
    let mut se = 0.0;
    let mut n = 0usize;
    for (x, y) in region.foreground() {
        let (p, q) = (a.get_pixel(x as u32, y as u32).0, b.get_pixel(x as u32, y as u32).0);
        for c in 0..3 {
            let d = p[c] as f64 - q[c] as f64;
            se += d * d;
            n += 1;
        }
    }
    let mse = se / n.max(1) as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

/// One line of the acceptance report, written to the stdout handle so it
/// shows up even when the harness captures output of passing tests.
pub fn report(name: &str, pass: bool, detail: &str) {
    use std::io::Write;
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

use std::path::Path;

use instaboost::annotations::{serialize_dataset, BBox, Category, DatasetIndex, ImageRecord, InstanceAnnotation, Segmentation};
use instaboost::synth::DatasetPaths;

/// Polygon annotation for a regular `n`-gon.
pub fn ngon(id: u64, image_id: u64, cx: f64, cy: f64, r: f64, n: usize) -> InstanceAnnotation {
    let poly: Vec<f64> = (0..n)
        .flat_map(|k| {
            let t = k as f64 / n as f64 * std::f64::consts::TAU;
            [cx + r * t.cos(), cy + r * t.sin()]
        })
        .collect();
    InstanceAnnotation {
        id,
        image_id,
        category_id: 1,
        segmentation: Segmentation::Polygons(vec![poly]),
        bbox: BBox::new(cx - r, cy - r, 2.0 * r, 2.0 * r),
        area: std::f64::consts::PI * r * r,
        iscrowd: false,
        extra: Default::default(),
    }
}

/// Write one image and its annotations as a dataset under `dir`.
pub fn write_single(dir: &Path, image: &RgbImage, anns: Vec<InstanceAnnotation>) -> DatasetPaths {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).unwrap();
    image.save(images.join("one.png")).unwrap();
    let record = ImageRecord::new(1, "one.png", image.width(), image.height());
    let index = DatasetIndex::new(vec![record], anns, vec![Category::new(1, "thing")]).unwrap();
    let annotations = dir.join("annotations.json");
    serialize_dataset(&index, &annotations).unwrap();
    DatasetPaths { annotations, images }
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
