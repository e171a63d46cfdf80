//! Cut an instance out and fill the hole it leaves by diffusion.
use instaboost::inpaint::inpaint;
use instaboost::maskops::cut_instance;
use instaboost::synth::{scene, SceneSpec};
use instaboost::InpaintConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = scene(&SceneSpec::new(200, 150, 1), 9, 1, 1);
    let (_patch, hole) = cut_instance(&s.image, &s.annotations[0], 3.0)?;
    let out = inpaint(&s.image, &hole, &InpaintConfig::default())?;
    println!(
        "hole: {} px, sweeps: {}, converged: {}",
        hole.count(),
        out.iterations,
        out.converged
    );
    let dir = std::env::temp_dir();
    s.image.save(dir.join("instaboost_before.png"))?;
    out.image.save(dir.join("instaboost_inpainted.png"))?;
    println!("wrote {}", dir.join("instaboost_inpainted.png").display());
    Ok(())
}
