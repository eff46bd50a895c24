//! Writes a small mixed corpus (images, masks, manifest) to a directory.
//!
//!     cargo run --example synth_corpus -- [out_dir] [size]

use std::path::PathBuf;

use grl_forge::synth::{synthesize_dataset, write_corpus, ForgeryMode, SynthConfig};

fn main() -> grl_forge::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "corpus".into()));
    let size = args.next().map_or(40, |s| s.parse().expect("size"));

    let config = SynthConfig { size, seed: 3, ..SynthConfig::default() };
    let (samples, manifest) = synthesize_dataset(&config)?;
    write_corpus(&dir, &samples, &manifest)?;

    let count = |m| samples.iter().filter(|s| s.label == 1 && s.provenance.mode == m).count();
    println!(
        "{} items, {} copy-move, {} removal -> {}",
        samples.len(),
        count(ForgeryMode::CopyMove),
        count(ForgeryMode::InpaintRemoval),
        dir.join("manifest.jsonl").display()
    );
    Ok(())
}
