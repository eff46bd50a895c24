//! Command-line front end. Settings come from built-in defaults, then the
//! JSON file given with `--config`, then individual flags, each layer
//! overriding the one before.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::check::{gradcheck_suite, EPSILON};
use crate::dann::{
    fit_with, lambda_at, load_checkpoint, predict_domain, save_checkpoint, Backbone, Checkpoint, DannModel, GrlConfig,
};
use crate::data::{
    eval_view, labeled, load_images, load_manifest, load_split, make_split, manifest_dir, save_split, unlabeled,
    Domain, EvalImages, NormStats,
};
use crate::error::{Error, Result};
use crate::eval::{append_csv, domain_accuracy, evaluate, write_csv, ReportRow};
use crate::nn::{LayerKind, TrainConfig};
use crate::synth::{synthesize_dataset, write_corpus, ForgeryMode, SynthConfig};
use crate::tensor::Tensor;
use crate::toy::{run_toy, ToyConfig, ToySummary};

pub const SCHEMA_VERSION: u32 = 1;

/// Exit status of a check that ran but failed.
pub const EXIT_CHECK_FAILED: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "grl-forge", version, about = "Forgery corpus synthesis and domain-adversarial training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled corpus of authentic and forged images.
    Synth(CommonArgs),
    /// Train a two-head model on a labeled source and an unlabeled target corpus.
    Train(CommonArgs),
    /// Evaluate a checkpoint on a labeled manifest.
    Eval(CommonArgs),
    /// Finite-difference checks of every layer kind and of gradient reversal.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Random shapes per layer kind.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Add 1e-3 to the gradients leaving every layer of this kind.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Source-only versus adversarial training on two synthetic domains.
    ReproduceToy(CommonArgs),
}

#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Constant reversal coefficient.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Backbone preset: small-cnn or mlp.
    #[arg(long)]
    pub backbone: Option<String>,
}

/// Contents of a `--config` file. Every field is optional except `schema`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub run_id: String,
    pub out: PathBuf,
    pub backbone: String,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub grl: GrlConfig,
    pub source_manifest: Option<PathBuf>,
    pub target_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    /// Split file whose test indices restrict evaluation.
    pub eval_split: Option<PathBuf>,
    /// Defaults to `<out>/<run_id>.ckpt`.
    pub checkpoint: Option<PathBuf>,
    /// Share of the source corpus held out for validation during training.
    pub validation_fraction: f64,
    pub toy: ToyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            run_id: "run".into(),
            out: PathBuf::from("out"),
            backbone: "small-cnn".into(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            grl: GrlConfig::default(),
            source_manifest: None,
            target_manifest: None,
            eval_manifest: None,
            eval_split: None,
            checkpoint: None,
            validation_fraction: 0.2,
            toy: ToyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        match value.get("schema").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => return Err(Error::Config(format!("unsupported schema version {v}"))),
            None => return Err(Error::Config("config file needs a numeric \"schema\" field".into())),
        }
        serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Defaults, then the `--config` file, then flags.
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        cfg.apply(args);
        Ok(cfg)
    }

    /// Flag overrides. `--seed` seeds corpus synthesis and training, and
    /// makes the toy experiment use consecutive seeds starting there.
    pub fn apply(&mut self, args: &CommonArgs) {
        if let Some(seed) = args.seed {
            self.synth.seed = seed;
            self.train.seed = seed;
            let n = self.toy.seeds.len() as u64;
            self.toy.seeds = (seed..seed.saturating_add(n)).collect();
        }
        if let Some(out) = &args.out {
            self.out.clone_from(out);
        }
        if let Some(lambda) = args.lambda {
            self.grl = GrlConfig::Constant { lambda0: lambda };
            self.toy.lambda = lambda;
        }
        if let Some(epochs) = args.epochs {
            self.train.epochs = epochs;
            self.toy.train.epochs = epochs;
        }
        if let Some(backbone) = &args.backbone {
            self.backbone.clone_from(backbone);
            self.toy.backbone.clone_from(backbone);
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join(format!("{}.ckpt", self.run_id)))
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.out.join(format!("{}_metrics.csv", self.run_id))
    }

    pub fn split_path(&self) -> PathBuf {
        self.out.join(format!("{}_split.json", self.run_id))
    }
}

/// Creates `dir` if absent; its parent must already exist.
fn ensure_out_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        return Ok(());
    }
    std::fs::create_dir(dir).map_err(|e| Error::io(dir, e))
}

fn required<'a>(field: &'a Option<PathBuf>, name: &str) -> Result<&'a PathBuf> {
    field
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{name} is required")))
}

fn io_out(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

pub fn cmd_synth(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.synth.validate()?;
    ensure_out_dir(&cfg.out)?;
    let (samples, manifest) = synthesize_dataset(&cfg.synth)?;
    write_corpus(&cfg.out, &samples, &manifest)?;
    let forged = samples.iter().filter(|s| s.label == 1).count();
    let by_mode = |m: ForgeryMode| samples.iter().filter(|s| s.provenance.mode == m).count();
    writeln!(
        out,
        "{forged} forged / {} authentic (copy_move {}, inpaint_removal {}) -> {}",
        samples.len() - forged,
        by_mode(ForgeryMode::CopyMove),
        by_mode(ForgeryMode::InpaintRemoval),
        cfg.out.display()
    )
    .map_err(io_out)
}

fn lambda_label(grl: &GrlConfig) -> f64 {
    lambda_at(grl, 1.0).unwrap_or(f64::NAN)
}

fn identity_norm(channels: usize) -> NormStats {
    NormStats {
        mean: vec![0.0; channels],
        std: vec![1.0; channels],
    }
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.train.validate()?;
    cfg.grl.validate()?;
    let source_path = required(&cfg.source_manifest, "source_manifest")?;
    let target_path = required(&cfg.target_manifest, "target_manifest")?;
    let source = load_manifest(source_path)?;
    let target = load_manifest(target_path)?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Config("source and target manifests must be non-empty".into()));
    }
    let ckpt_path = cfg.checkpoint_path();
    if ckpt_path.exists() {
        return Err(Error::Config(format!(
            "run id {:?} already used: {} exists",
            cfg.run_id,
            ckpt_path.display()
        )));
    }
    ensure_out_dir(&cfg.out)?;

    let split = make_split(&source, cfg.validation_fraction, cfg.train.seed)?;
    if split.train.is_empty() {
        return Err(Error::Config("validation fraction leaves no source training data".into()));
    }
    let source_dir = manifest_dir(source_path);
    let train_images = load_images(&source, &split.train, &source_dir)?;
    let val_images = load_images(&source, &split.test, &source_dir)?;
    let target_idx: Vec<usize> = (0..target.len()).collect();
    let target_images = load_images(&target, &target_idx, &manifest_dir(target_path))?;

    let norm = NormStats::compute(&train_images)?;
    let source_train = labeled(&source, &split.train, &train_images, &norm)?;
    let target_train = unlabeled(&target_images, &norm)?;
    let source_val = if split.test.is_empty() {
        None
    } else {
        Some(eval_view(&source, &split.test, &val_images, &norm)?)
    };
    let domain_view = match &source_val {
        Some(v) => Some((
            Tensor::concat_rows(&v.images, &target_train.images)?,
            v.domains
                .iter()
                .copied()
                .chain(std::iter::repeat_n(Domain::Target, target_train.len()))
                .collect::<Vec<_>>(),
        )),
        None => None,
    };

    let first = &train_images[0];
    let input_shape = [first.channels(), first.height(), first.width()];
    let backbone = Backbone::preset(&cfg.backbone, &input_shape)?;
    let mut model = DannModel::new(&input_shape, backbone, cfg.grl, cfg.train.seed)?;

    let mut rows = Vec::new();
    let mut last_f1 = None;
    let report = fit_with(&mut model, &source_train, &target_train, &cfg.train, &mut |m, epoch| {
        if let (Some(val), Some((images, domains))) = (&source_val, &domain_view) {
            let mut r = evaluate(m, val)?;
            r.domain_accuracy = domain_accuracy(&predict_domain(m, images)?, domains);
            last_f1 = Some(r.f1);
            rows.push(ReportRow::new(cfg.run_id.clone(), epoch.epoch, epoch.lambda, &r));
        }
        Ok(())
    })?;

    save_checkpoint(
        &Checkpoint {
            model,
            normalization: Some(norm),
        },
        &ckpt_path,
    )?;
    write_csv(&rows, cfg.metrics_path())?;
    save_split(&split, cfg.split_path())?;

    let last = report.last().expect("at least one epoch");
    writeln!(
        out,
        "epoch {}: l_source {} l_domain {} l_total {}",
        last.epoch, last.losses.l_source, last.losses.l_domain, last.losses.l_total
    )
    .map_err(io_out)?;
    match last_f1 {
        Some(f1) => writeln!(out, "source validation f1 {f1}"),
        None => writeln!(out, "source validation f1 n/a (no validation split)"),
    }
    .map_err(io_out)?;
    writeln!(out, "checkpoint {}", ckpt_path.display()).map_err(io_out)
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let ckpt = load_checkpoint(cfg.checkpoint_path())?;
    let path = required(&cfg.eval_manifest, "eval_manifest")?;
    let manifest = load_manifest(path)?;
    let indices = match &cfg.eval_split {
        Some(split) => {
            let split = load_split(split)?;
            if let Some(&bad) = split.test.iter().find(|&&i| i >= manifest.len()) {
                return Err(Error::Config(format!(
                    "split index {bad} is out of range for {} entries",
                    manifest.len()
                )));
            }
            split.test
        }
        None => (0..manifest.len()).collect(),
    };
    if indices.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    if let Some(&i) = indices.iter().find(|&&i| manifest.entries()[i].label.is_none()) {
        return Err(Error::Input(format!(
            "evaluation entry {:?} has no label",
            manifest.entries()[i].path
        )));
    }
    let images = load_images(&manifest, &indices, &manifest_dir(path))?;
    let norm = ckpt
        .normalization
        .clone()
        .unwrap_or_else(|| identity_norm(images[0].channels()));
    let view: EvalImages = eval_view(&manifest, &indices, &images, &norm)?;
    let report = evaluate(&ckpt.model, &view)?;
    ensure_out_dir(&cfg.out)?;
    append_csv(
        &[ReportRow::new(
            format!("{}-eval", cfg.run_id),
            0,
            lambda_label(&ckpt.model.grl),
            &report,
        )],
        cfg.metrics_path(),
    )?;
    writeln!(out, "f1 {} accuracy {}", report.f1, report.accuracy).map_err(io_out)?;
    if let Some(d) = report.domain_accuracy {
        writeln!(out, "domain accuracy {d}").map_err(io_out)?;
    }
    Ok(())
}

/// Returns whether every check passed.
pub fn cmd_gradcheck(seed: u64, trials: usize, fault: Option<&str>, out: &mut dyn Write) -> Result<bool> {
    let fault = fault
        .map(|name| name.parse::<LayerKind>().map(|k| (k, 1e-3)))
        .transpose()?;
    let lines = gradcheck_suite(trials, seed, fault)?;
    writeln!(out, "finite differences: epsilon {EPSILON}, {trials} shapes per layer kind").map_err(io_out)?;
    for line in &lines {
        let verdict = if line.passed() { "ok" } else { "FAIL" };
        let at = match line.worst {
            Some((layer, kind)) => format!(" (worst at layer {layer}, {})", kind.name()),
            None => String::new(),
        };
        writeln!(out, "{:<28} max rel error {:.3e}  {verdict}{at}", line.component, line.max_error).map_err(io_out)?;
    }
    Ok(lines.iter().all(|l| l.passed()))
}

/// Writes the comparison table and returns whether the adapted runs beat
/// the baseline on the target domain by at least 3 median F1 points, every
/// run kept source validation F1 at 0.85 or above, and the median domain
/// accuracy dropped.
pub fn cmd_reproduce_toy(cfg: &RunConfig, out: &mut dyn Write) -> Result<bool> {
    ensure_out_dir(&cfg.out)?;
    let summary = run_toy(&cfg.toy)?;
    write_csv(&summary.rows(), cfg.out.join("toy_comparison.csv"))?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    let path = cfg.out.join("toy_summary.json");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;

    let med = |runs: &[crate::toy::ToyRun], f: fn(&crate::toy::ToyRun) -> f64| ToySummary::median_of(runs, f);
    let (b, a) = (&summary.baseline, &summary.adapted);
    for (name, runs) in [("baseline", b), ("dann", a)] {
        writeln!(
            out,
            "{name:<9} median target f1 {:.4}  source f1 {:.4}  domain acc {:.4}",
            med(runs, |r| r.target.f1),
            med(runs, |r| r.source.f1),
            med(runs, |r| r.domain_accuracy),
        )
        .map_err(io_out)?;
    }
    let gain = summary.target_f1_gain();
    let ok = gain >= 0.03
        && b.iter().chain(a).all(|r| r.source.f1 >= 0.85)
        && med(a, |r| r.domain_accuracy) < med(b, |r| r.domain_accuracy);
    writeln!(out, "target f1 gain {:+.4}: {}", gain, if ok { "ok" } else { "FAIL" }).map_err(io_out)?;
    Ok(ok)
}

fn report(result: Result<bool>, err: &mut dyn Write) -> i32 {
    match result {
        Ok(true) => 0,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let resolved = |common: &CommonArgs| RunConfig::resolve(common);
    let result = match &cli.command {
        Command::Synth(c) => resolved(c).and_then(|cfg| cmd_synth(&cfg, out)).map(|()| true),
        Command::Train(c) => resolved(c).and_then(|cfg| cmd_train(&cfg, out)).map(|()| true),
        Command::Eval(c) => resolved(c).and_then(|cfg| cmd_eval(&cfg, out)).map(|()| true),
        Command::Gradcheck {
            common,
            trials,
            inject_fault,
        } => resolved(common).and_then(|cfg| cmd_gradcheck(cfg.train.seed, *trials, inject_fault.as_deref(), out)),
        Command::ReproduceToy(c) => resolved(c).and_then(|cfg| cmd_reproduce_toy(&cfg, out)),
    };
    report(result, err)
}

/// Parses `args` (program name first) and runs the command. Usage errors
/// exit with 2, like configuration errors.
pub fn run_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli, out, err),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let cfg = RunConfig::from_json(
            r#"{"schema": 1, "run_id": "a", "train": {"epochs": 5, "seed": 9}}"#,
            Path::new("c.json"),
        )
        .unwrap();
        assert_eq!((cfg.train.epochs, cfg.train.seed, cfg.train.batch_size), (5, 9, 32));
        let mut cfg = cfg;
        cfg.apply(&CommonArgs {
            epochs: Some(2),
            lambda: Some(0.0),
            ..CommonArgs::default()
        });
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.grl, GrlConfig::Constant { lambda0: 0.0 });
    }

    #[test]
    fn schema_is_required() {
        let e = RunConfig::from_json(r#"{"run_id": "a"}"#, Path::new("c.json")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = RunConfig::from_json(r#"{"schema": 7}"#, Path::new("c.json")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = RunConfig::from_json(r#"{"schema": 1, "bogus": 1}"#, Path::new("c.json")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn unknown_command_is_usage_error() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run_args(["grl-forge", "frobnicate"], &mut o, &mut e), 2);
    }
}
