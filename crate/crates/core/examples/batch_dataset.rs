//! Augment a whole dataset on a worker pool, two copies per image.
use instaboost::pipeline::{augment_dataset, DatasetOptions};
use instaboost::synth::{write_dataset, SceneSpec};
use instaboost::AugmentConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("instaboost_batch");
    let paths = write_dataset(&dir.join("in"), 20, &SceneSpec::new(320, 240, 3), 4)?;
    let cfg = AugmentConfig {
        apply_probability: 0.8,
        seed: 42,
        ..Default::default()
    };
    let stats = augment_dataset(
        &paths.annotations,
        &paths.images,
        &dir.join("out/annotations.json"),
        &dir.join("out/images"),
        &cfg,
        DatasetOptions { workers: 4, copies: 2 },
    )?;
    println!("{stats}");
    Ok(())
}
