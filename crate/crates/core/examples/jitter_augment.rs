//! Augment one image by moving each instance a small random distance.
use instaboost::pipeline::{augment_image, image_rng};
use instaboost::synth::{scene, SceneSpec};
use instaboost::{AugmentConfig, AugmentMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = scene(&SceneSpec::new(240, 180, 3), 5, 1, 1);
    let cfg = AugmentConfig {
        mode: AugmentMode::RandomJitter,
        apply_probability: 1.0,
        ..Default::default()
    };
    let out = augment_image(&s.image, &s.annotations, &cfg, &mut image_rng(cfg.seed, 1, 0))?;
    for m in &out.provenance {
        let t = m.tuple;
        println!(
            "annotation {}: tx {:+.2} ty {:+.2} scale {:.3} rot {:+.2} deg",
            m.source_annotation_id, t.tx, t.ty, t.scale, t.rotation
        );
    }
    for f in &out.failures {
        println!("annotation {} kept in place: {}", f.annotation_id, f.reason);
    }
    let path = std::env::temp_dir().join("instaboost_jitter.png");
    out.image.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
