//! Trains a small two-head model on a synthetic source corpus and an
//! unlabeled target corpus, saves it, reloads it and evaluates on both.
//!
//!     cargo run --release --example train_eval

use grl_forge::dann::{fit_with, load_checkpoint, save_checkpoint, Backbone, Checkpoint, DannModel, GrlConfig};
use grl_forge::data::{Domain, EvalImages, LabeledImages, NormStats, UnlabeledImages};
use grl_forge::eval::evaluate;
use grl_forge::nn::TrainConfig;
use grl_forge::synth::{synthesize_dataset, Image, ModeMix, SynthConfig};

fn main() -> grl_forge::Result<()> {
    let source_cfg = SynthConfig {
        size: 200,
        mode_mix: ModeMix { copy_move: 1.0, inpaint_removal: 0.0 },
        scale: [1.3, 1.8],
        seed: 1,
        ..SynthConfig::default()
    };
    let target_cfg = SynthConfig {
        blur_sigma: [1.0, 2.0],
        brightness_offset: 0.1,
        domain: Domain::Target,
        seed: 2,
        ..source_cfg.clone()
    };
    let (source, _) = synthesize_dataset(&source_cfg)?;
    let (target, _) = synthesize_dataset(&target_cfg)?;
    let images = |s: &[grl_forge::synth::ForgedSample]| s.iter().map(|x| x.image.clone()).collect::<Vec<Image>>();
    let labels = |s: &[grl_forge::synth::ForgedSample]| s.iter().map(|x| usize::from(x.label)).collect::<Vec<_>>();

    let (train, val) = source.split_at(160);
    let norm = NormStats::compute(&images(train))?;
    let train_view = LabeledImages::new(norm.apply_all(&images(train))?, labels(train))?;
    let target_view = UnlabeledImages { images: norm.apply_all(&images(&target))? };

    let mut model = DannModel::new(
        &[3, 32, 32],
        Backbone::preset("small-cnn", &[3, 32, 32])?,
        GrlConfig::Constant { lambda0: 1.0 },
        7,
    )?;
    let config = TrainConfig { epochs: 8, ..TrainConfig::default() };
    fit_with(&mut model, &train_view, &target_view, &config, &mut |_, e| {
        println!(
            "epoch {} l_source {:.4} l_domain {:.4} source acc {:.3}",
            e.epoch, e.losses.l_source, e.losses.l_domain, e.source_accuracy
        );
        Ok(())
    })?;

    let path = std::env::temp_dir().join("train_eval_example.ckpt");
    save_checkpoint(&Checkpoint { model, normalization: Some(norm) }, &path)?;
    let ckpt = load_checkpoint(&path)?;
    let norm = ckpt.normalization.as_ref().expect("saved with statistics");
    for (name, items, domain) in [("source val", val, Domain::Source), ("target", &target[..], Domain::Target)] {
        let view = EvalImages {
            images: norm.apply_all(&images(items))?,
            labels: labels(items),
            domains: vec![domain; items.len()],
        };
        let r = evaluate(&ckpt.model, &view)?;
        println!("{name:<10} f1 {:.3} accuracy {:.3}", r.f1, r.accuracy);
    }
    Ok(())
}
