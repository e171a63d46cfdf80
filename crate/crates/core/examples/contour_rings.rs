//! Build the three background rings around an instance and its feathered matte.
use instaboost::maskops::{contour_rings, feather_alpha, rasterize};
use instaboost::synth::{scene, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = scene(&SceneSpec::new(160, 120, 1), 3, 1, 1);
    let mask = rasterize(&s.annotations[0], 160, 120)?;
    let rings = contour_rings(&mask, [5, 5, 5], [0.4, 0.35, 0.25])?;
    println!("instance pixels: {}", mask.count());
    for (i, ring) in rings.rings.iter().enumerate() {
        println!("ring {i}: {} px, weight {}", ring.count(), rings.weights[i]);
    }

    let alpha = feather_alpha(&mask, 3.0)?;
    let soft = alpha.as_slice().iter().filter(|&&a| a > 0.0 && a < 1.0).count();
    let solid = alpha.as_slice().iter().filter(|&&a| a == 1.0).count();
    println!("alpha: {solid} opaque, {soft} feathered");
    Ok(())
}
