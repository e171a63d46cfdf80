//! Draw new centers from a heatmap and count how often each band is picked.
use instaboost::heatmap::{compute_heatmap, to_probability};
use instaboost::maskops::rasterize;
use instaboost::synth::{scene, SceneSpec};
use instaboost::HeatmapConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = scene(&SceneSpec::new(180, 120, 1), 12, 1, 1);
    let mask = rasterize(&s.annotations[0], 180, 120)?;
    let hm = compute_heatmap(&s.image, &mask, &HeatmapConfig::default())?;
    let p = to_probability(&hm, None)?;
    let sampler = p.sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut bands = [0usize; 4];
    for _ in 0..2000 {
        let (x, y) = sampler.sample(&mut rng);
        let v = *hm.value.get(x, y);
        bands[((v * 4.0) as usize).min(3)] += 1;
    }
    for (i, n) in bands.iter().enumerate() {
        println!("value in [{:.2}, {:.2}): {n}", i as f64 / 4.0, (i + 1) as f64 / 4.0);
    }
    Ok(())
}
