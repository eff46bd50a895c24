//! The scaled-down transfer experiment: a copy-move source corpus, a
//! blurrier and brighter target corpus, and a source-only (lambda 0) versus
//! adversarial comparison over several seeds.

use serde::{Deserialize, Serialize};

use crate::dann::{fit, Backbone, DannModel, GrlConfig};
use crate::data::{make_split, Domain, EvalImages, LabeledImages, NormStats, UnlabeledImages};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport, ReportRow};
use crate::nn::TrainConfig;
use crate::rng::mix;
use crate::synth::{synthesize_dataset, Image, ModeMix, SynthConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub source: SynthConfig,
    pub target: SynthConfig,
    pub train: TrainConfig,
    pub backbone: String,
    /// Reversal coefficient of the adversarial run; the baseline uses 0.
    pub lambda: f64,
    pub seeds: Vec<u64>,
    /// Share of each corpus held out for validation.
    pub holdout_fraction: f64,
    /// Run seeds on separate threads.
    pub parallel: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        let source = SynthConfig {
            size: 1000,
            forged_fraction: 0.5,
            height: 32,
            width: 32,
            channels: 3,
            mode_mix: ModeMix {
                copy_move: 1.0,
                inpaint_removal: 0.0,
            },
            blur_sigma: [0.0, 0.5],
            scale: [1.3, 1.8],
            ..SynthConfig::default()
        };
        let target = SynthConfig {
            blur_sigma: [1.0, 2.0],
            brightness_offset: 0.1,
            domain: Domain::Target,
            ..source.clone()
        };
        Self {
            source,
            target,
            train: TrainConfig::default(),
            backbone: "small-cnn".into(),
            lambda: 1.0,
            seeds: vec![0, 1, 2, 3, 4],
            holdout_fraction: 0.2,
            parallel: true,
        }
    }
}

/// Outcome of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRun {
    pub seed: u64,
    pub lambda: f64,
    /// Class metrics on the held-out source items.
    pub source: MetricsReport,
    /// Class metrics on every target item.
    pub target: MetricsReport,
    /// Balanced domain-head accuracy on the held-out items of both domains.
    pub domain_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub baseline: Vec<ToyRun>,
    pub adapted: Vec<ToyRun>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl ToySummary {
    pub fn median_of(runs: &[ToyRun], f: impl Fn(&ToyRun) -> f64) -> f64 {
        median(&runs.iter().map(f).collect::<Vec<_>>())
    }

    /// Median target F1 of the adapted runs minus that of the baseline.
    pub fn target_f1_gain(&self) -> f64 {
        Self::median_of(&self.adapted, |r| r.target.f1) - Self::median_of(&self.baseline, |r| r.target.f1)
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        for (name, runs) in [("baseline", &self.baseline), ("dann", &self.adapted)] {
            for r in runs.iter() {
                rows.push(ReportRow::new(format!("{name}-seed{}-source", r.seed), 0, r.lambda, &r.source));
                let mut target = r.target;
                target.domain_accuracy = Some(r.domain_accuracy);
                rows.push(ReportRow::new(format!("{name}-seed{}-target", r.seed), 0, r.lambda, &target));
            }
        }
        rows
    }
}

struct Corpus {
    images: Vec<Image>,
    labels: Vec<usize>,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn corpus(config: &SynthConfig, holdout: f64, split_seed: u64) -> Result<Corpus> {
    let (samples, manifest) = synthesize_dataset(config)?;
    let split = make_split(&manifest, holdout, split_seed)?;
    Ok(Corpus {
        labels: samples.iter().map(|s| usize::from(s.label)).collect(),
        images: samples.into_iter().map(|s| s.image).collect(),
        train: split.train,
        test: split.test,
    })
}

fn pick(images: &[Image], idx: &[usize]) -> Vec<Image> {
    idx.iter().map(|&i| images[i].clone()).collect()
}

/// Trains the baseline and the adversarial model for one seed. Corpus,
/// split, initialization and batch order depend only on `seed`, so the two
/// runs differ in the reversal coefficient alone.
pub fn run_seed(config: &ToyConfig, seed: u64) -> Result<(ToyRun, ToyRun)> {
    let source_cfg = SynthConfig {
        seed: mix(seed, 1),
        domain: Domain::Source,
        ..config.source.clone()
    };
    let target_cfg = SynthConfig {
        seed: mix(seed, 2),
        domain: Domain::Target,
        ..config.target.clone()
    };
    let src = corpus(&source_cfg, config.holdout_fraction, mix(seed, 3))?;
    let tgt = corpus(&target_cfg, config.holdout_fraction, mix(seed, 4))?;
    if src.train.is_empty() || tgt.train.is_empty() || src.test.is_empty() || tgt.test.is_empty() {
        return Err(Error::Config("toy corpora are too small to split".into()));
    }

    let norm = NormStats::compute(&pick(&src.images, &src.train))?;
    let labeled = LabeledImages::new(
        norm.apply_all(&pick(&src.images, &src.train))?,
        src.train.iter().map(|&i| src.labels[i]).collect(),
    )?;
    let unlabeled = UnlabeledImages {
        images: norm.apply_all(&pick(&tgt.images, &tgt.train))?,
    };
    let source_val = EvalImages {
        images: norm.apply_all(&pick(&src.images, &src.test))?,
        labels: src.test.iter().map(|&i| src.labels[i]).collect(),
        domains: vec![Domain::Source; src.test.len()],
    };
    let target_all = EvalImages {
        images: norm.apply_all(&tgt.images)?,
        labels: tgt.labels.clone(),
        domains: vec![Domain::Target; tgt.images.len()],
    };
    let target_test = norm.apply_all(&pick(&tgt.images, &tgt.test))?;
    let held_out = EvalImages {
        images: Tensor::concat_rows(&source_val.images, &target_test)?,
        labels: source_val
            .labels
            .iter()
            .copied()
            .chain(tgt.test.iter().map(|&i| tgt.labels[i]))
            .collect(),
        domains: source_val
            .domains
            .iter()
            .copied()
            .chain(std::iter::repeat_n(Domain::Target, tgt.test.len()))
            .collect(),
    };

    let input_shape = [config.source.channels, config.source.height, config.source.width];
    let train = TrainConfig {
        seed: mix(seed, 6),
        ..config.train.clone()
    };
    let run = |lambda: f64| -> Result<ToyRun> {
        let backbone = Backbone::preset(&config.backbone, &input_shape)?;
        let mut model = DannModel::new(&input_shape, backbone, GrlConfig::Constant { lambda0: lambda }, mix(seed, 5))?;
        fit(&mut model, &labeled, &unlabeled, &train)?;
        let domain_accuracy = evaluate(&model, &held_out)?
            .domain_accuracy
            .expect("held-out view has both domains");
        Ok(ToyRun {
            seed,
            lambda,
            source: evaluate(&model, &source_val)?,
            target: evaluate(&model, &target_all)?,
            domain_accuracy,
        })
    };
    Ok((run(0.0)?, run(config.lambda)?))
}

/// Runs every seed of `config.seeds`.
pub fn run_toy(config: &ToyConfig) -> Result<ToySummary> {
    if config.seeds.is_empty() {
        return Err(Error::Config("toy experiment needs at least one seed".into()));
    }
    let results: Vec<Result<(ToyRun, ToyRun)>> = if config.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = config
                .seeds
                .iter()
                .map(|&seed| s.spawn(move || run_seed(config, seed)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("toy worker panicked"))
                .collect()
        })
    } else {
        config.seeds.iter().map(|&seed| run_seed(config, seed)).collect()
    };
    let mut summary = ToySummary {
        baseline: Vec::new(),
        adapted: Vec::new(),
    };
    for r in results {
        let (b, a) = r?;
        summary.baseline.push(b);
        summary.adapted.push(a);
    }
    Ok(summary)
}
