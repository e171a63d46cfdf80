//! Compute where an instance would blend in and save the heatmap as an image.
use image::Rgb;
use instaboost::heatmap::{compute_heatmap, render_colormap};
use instaboost::maskops::rasterize;
use instaboost::synth::{natural_background, stripes};
use instaboost::{BBox, HeatmapConfig, InstanceAnnotation, Segmentation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (w, h) = (360, 240);
    let mut image = stripes(w, h, 12, false);
    let noise = natural_background(w, h, 2);
    for (x, y, px) in image.enumerate_pixels_mut() {
        if x > 240 {
            *px = *noise.get_pixel(x, y);
        }
    }
    let poly: Vec<f64> = (0..24)
        .flat_map(|k| {
            let t = k as f64 / 24.0 * std::f64::consts::TAU;
            [100.0 + 20.0 * t.cos(), 120.0 + 20.0 * t.sin()]
        })
        .collect();
    let ann = InstanceAnnotation {
        id: 1,
        image_id: 1,
        category_id: 1,
        segmentation: Segmentation::Polygons(vec![poly]),
        bbox: BBox::new(80.0, 100.0, 40.0, 40.0),
        area: std::f64::consts::PI * 400.0,
        iscrowd: false,
        extra: Default::default(),
    };
    let mask = rasterize(&ann, w, h)?;
    for (x, y) in mask.foreground() {
        image.put_pixel(x as u32, y as u32, Rgb([200, 60, 40]));
    }
    let hm = compute_heatmap(&image, &mask, &HeatmapConfig::default())?;
    let (x, y) = hm.argmax();
    println!("status: {:?}", hm.status);
    println!("distance range: {:?}", hm.distance_range);
    println!("best new center: ({x}, {y})");
    let path = std::env::temp_dir().join("instaboost_heatmap.png");
    render_colormap(&hm).save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
