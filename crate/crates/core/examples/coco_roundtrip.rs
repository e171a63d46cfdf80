//! Write a synthetic COCO dataset, read it back, and validate it.
use instaboost::synth::{write_dataset, SceneSpec};
use instaboost::{parse_dataset, serialize_dataset, validate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("instaboost_coco_roundtrip");
    let spec = SceneSpec {
        rle_every: 2,
        with_crowd: true,
        ..SceneSpec::new(160, 120, 3)
    };
    let paths = write_dataset(&dir, 5, &spec, 1)?;
    let index = parse_dataset(&paths.annotations)?;
    println!(
        "{} images, {} annotations, {} categories",
        index.images.len(),
        index.annotations.len(),
        index.categories.len()
    );
    println!("violations: {}", validate(&index).len());

    let again = dir.join("again.json");
    serialize_dataset(&index, &again)?;
    let same = std::fs::read(&paths.annotations)? == std::fs::read(&again)?;
    println!("byte-identical after round trip: {same}");
    Ok(())
}
