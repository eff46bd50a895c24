//! Object removal: an object's footprint is erased and filled by diffusion.

use grl_forge::synth::{gen_base_scene, inpaint_remove, InpaintConfig};

fn main() -> grl_forge::Result<()> {
    let scene = gen_base_scene(8, 40, 40, 3)?;
    let mask = scene.objects[0].dilate(1);
    let filled = inpaint_remove(&scene.image, &mask, &InpaintConfig::default())?;

    let diff: f64 = scene
        .image
        .data()
        .iter()
        .zip(filled.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    println!("removed object 0 of {}, hole of {} pixels, total change {diff:.3}", scene.objects.len(), mask.count());
    grl_forge::data::write_image("before.ppm", &scene.image)?;
    grl_forge::data::write_image("after.ppm", &filled)?;
    Ok(())
}
