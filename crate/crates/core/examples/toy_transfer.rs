//! Source-only versus adversarial training on two synthetic domains.
//!
//!     cargo run --release --example toy_transfer -- [seeds] [epochs]

use std::time::Instant;

use grl_forge::toy::{run_toy, ToyConfig, ToySummary};

fn main() -> grl_forge::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(5, |s| s.parse().expect("seed count"));
    let epochs: Option<usize> = args.next().map(|s| s.parse().expect("epoch count"));

    let mut config = ToyConfig {
        seeds: (0..seeds).collect(),
        ..ToyConfig::default()
    };
    if let Some(e) = epochs {
        config.train.epochs = e;
    }
    let start = Instant::now();
    let summary = run_toy(&config)?;
    for (b, a) in summary.baseline.iter().zip(&summary.adapted) {
        println!(
            "seed {}: target f1 {:.3} -> {:.3}, source f1 {:.3} / {:.3}, domain acc {:.3} / {:.3}",
            b.seed, b.target.f1, a.target.f1, b.source.f1, a.source.f1, b.domain_accuracy, a.domain_accuracy
        );
    }
    println!(
        "median target f1 gain {:+.4}, domain acc {:.3} -> {:.3} ({:.1?})",
        summary.target_f1_gain(),
        ToySummary::median_of(&summary.baseline, |r| r.domain_accuracy),
        ToySummary::median_of(&summary.adapted, |r| r.domain_accuracy),
        start.elapsed()
    );
    Ok(())
}
