//! One copy-move forgery on a procedural base image, with its provenance.

use grl_forge::synth::{gen_base_image, make_copy_move, SynthConfig};

fn main() -> grl_forge::Result<()> {
    let base = gen_base_image(21, 48, 48, 3)?;
    let sample = make_copy_move(&base, 5, &SynthConfig::default())?;
    let changed = (0..48)
        .flat_map(|y| (0..48).map(move |x| (y, x)))
        .filter(|&(y, x)| base.pixel(y, x) != sample.image.pixel(y, x))
        .count();

    println!("mask covers {} pixels, {changed} pixels changed", sample.mask.count());
    println!("{}", serde_json::to_string_pretty(&sample.provenance).expect("provenance serializes"));
    grl_forge::data::write_image("copy_move.ppm", &sample.image)?;
    grl_forge::data::write_image("copy_move_mask.pgm", &sample.mask.to_image())?;
    Ok(())
}
