//! Command-line front end: `gen`, `split`, `train`, `eval` and `ablate`.
//!
//! Options come from an optional JSON config file overlaid by flags; the
//! merged [`RunConfig`] is written as `config.json` next to every output.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, write_dataset, DatasetManifest, GenConfig, Split, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::metrics::{percent, roc_csv};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, ModelParams, Selection, Variant};
use crate::subtype::Subtype;
use crate::training::{
    ablate, ablation_csv_header, ablation_csv_row, ablation_table, evaluate, history_jsonl, train_with_progress,
    AblationRow, TrainConfig, SELECTION_CRITERION,
};

pub const CONFIG_ECHO: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.dsck";
pub const HISTORY_FILE: &str = "history.jsonl";

#[derive(Debug, Parser)]
#[command(name = "dscenet", version, about = "Multimodal MIL subtype classification with dynamic screening")]
pub struct Cli {
    /// Run seed for generation, splitting, initialization and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with run options; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short = 'o', global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (bag files and manifest).
    Gen(GenArgs),
    /// Assign train/val/test splits and normalization statistics.
    Split(SplitArgs),
    /// Train one model variant.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Train and test all four variants with a shared seed.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Cases per class as PV,ET,PrePMF,PMF.
    #[arg(long, value_parser = parse_counts)]
    pub counts: Option<[usize; 4]>,
    /// Fewest patches per bag.
    #[arg(long)]
    pub min_patches: Option<usize>,
    /// Most patches per bag.
    #[arg(long)]
    pub max_patches: Option<usize>,
    /// Patch feature width L.
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Number of clinical indicators m.
    #[arg(long)]
    pub clinical_dim: Option<usize>,
    /// Fraction of patches carrying the class shift.
    #[arg(long)]
    pub signal_fraction: Option<f64>,
    /// Size of the class shift on signal patches.
    #[arg(long)]
    pub image_signal: Option<f64>,
    /// Weak image cue for the clinically coded class split.
    #[arg(long)]
    pub image_leak: Option<f64>,
    /// Strength of the class effect on clinical indicators.
    #[arg(long)]
    pub clinical_signal: Option<f64>,
    /// Weak clinical cue for the image-coded class split.
    #[arg(long)]
    pub clinical_leak: Option<f64>,
    /// Standard deviation of patch feature noise.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Dataset directory holding `manifest.json`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Replace an existing split.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Adam first-moment decay.
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Adam second-moment decay.
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Adam denominator epsilon.
    #[arg(long)]
    pub eps: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Split dataset directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// full | no_ds | no_cf | none
    #[arg(long)]
    pub variant: Option<Variant>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Split dataset directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// train | val | test
    #[arg(long)]
    pub split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Split dataset directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Run the four arms concurrently.
    #[arg(long)]
    pub parallel: bool,
    #[command(flatten)]
    pub flags: TrainFlags,
}

fn parse_counts(s: &str) -> std::result::Result<[usize; 4], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<usize>| format!("expected 4 comma-separated counts, got {}", v.len()))
}

/// Every option a command can read, after merging file and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub split: Split,
    pub force: bool,
    pub parallel: bool,
    pub generator: GenConfig,
    /// `training.seed` always mirrors `seed`.
    pub training: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            seed: 0,
            out: None,
            dataset: None,
            checkpoint: None,
            split: Split::Test,
            force: false,
            parallel: false,
            generator: GenConfig::default(),
            training: TrainConfig::default(),
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_train_flags(t: &mut TrainConfig, f: TrainFlags) {
    set(&mut t.epochs, f.epochs);
    set(&mut t.learning_rate, f.lr);
    set(&mut t.adam_beta1, f.beta1);
    set(&mut t.adam_beta2, f.beta2);
    set(&mut t.adam_eps, f.eps);
}

impl RunConfig {
    /// Loads the config file (if any) and overlays the command-line flags.
    pub fn from_cli(cli: Cli) -> Result<(Self, CommandKind)> {
        let mut rc = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(|e| Error::config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        set(&mut rc.seed, cli.seed);
        if cli.out.is_some() {
            rc.out = cli.out;
        }
        let kind = match cli.command {
            Command::Gen(a) => {
                let g = &mut rc.generator;
                set(&mut g.counts, a.counts);
                set(&mut g.min_patches, a.min_patches);
                set(&mut g.max_patches, a.max_patches);
                set(&mut g.feature_dim, a.feature_dim);
                set(&mut g.clinical_dim, a.clinical_dim);
                set(&mut g.signal_fraction, a.signal_fraction);
                set(&mut g.image_signal, a.image_signal);
                set(&mut g.image_leak, a.image_leak);
                set(&mut g.clinical_signal, a.clinical_signal);
                set(&mut g.clinical_leak, a.clinical_leak);
                set(&mut g.noise, a.noise);
                CommandKind::Gen
            }
            Command::Split(a) => {
                set(&mut rc.dataset, a.dataset.map(Some));
                rc.force |= a.force;
                CommandKind::Split
            }
            Command::Train(a) => {
                set(&mut rc.dataset, a.dataset.map(Some));
                set(&mut rc.training.variant, a.variant);
                apply_train_flags(&mut rc.training, a.flags);
                CommandKind::Train
            }
            Command::Eval(a) => {
                set(&mut rc.dataset, a.dataset.map(Some));
                set(&mut rc.checkpoint, a.checkpoint.map(Some));
                set(&mut rc.split, a.split);
                CommandKind::Eval
            }
            Command::Ablate(a) => {
                set(&mut rc.dataset, a.dataset.map(Some));
                rc.parallel |= a.parallel;
                apply_train_flags(&mut rc.training, a.flags);
                CommandKind::Ablate
            }
        };
        rc.command = kind.name().to_string();
        rc.training.seed = rc.seed;
        Ok((rc, kind))
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::config(format!("{} needs an output directory (--out)", self.command)))
    }

    fn dataset_dir(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::config(format!("{} needs a dataset directory (--dataset)", self.command)))
    }

    fn write_echo(&self, dir: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        write_file(&dir.join(CONFIG_ECHO), s.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Gen,
    Split,
    Train,
    Eval,
    Ablate,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Gen => "gen",
            CommandKind::Split => "split",
            CommandKind::Train => "train",
            CommandKind::Eval => "eval",
            CommandKind::Ablate => "ablate",
        }
    }
}

/// 2 for usage and configuration problems, 3 for I/O and file formats,
/// 4 for numerical failures.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::BadFormat(_) | Error::Json(_) => 3,
        Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::NonScalarRoot { .. } => 4,
        Error::Dimension { .. }
        | Error::InvalidShape { .. }
        | Error::EmptyBag
        | Error::LabelOutOfRange(_)
        | Error::DegenerateInput(_)
        | Error::Config(_)
        | Error::Parse { .. } => 2,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(&dir.join(MANIFEST_FILE))
}

fn require_split(m: &DatasetManifest) -> Result<()> {
    if m.is_split() && m.normalization.is_some() {
        Ok(())
    } else {
        Err(Error::config("dataset has no split assignment; run `split` first"))
    }
}

fn cmd_gen(rc: &RunConfig, log: &mut dyn std::io::Write) -> Result<()> {
    let out = rc.out_dir()?;
    let (bags, manifest) = generate_synthetic(&rc.generator, rc.seed)?;
    create_dir(out)?;
    write_dataset(out, &bags, &manifest)?;
    rc.write_echo(out)?;
    let _ = writeln!(log, "wrote {} bags to {}", bags.len(), out.display());
    for (c, n) in Subtype::ALL.iter().zip(rc.generator.counts) {
        let _ = writeln!(log, "  {:<7}{n:>5}", c.name());
    }
    let _ = writeln!(log, "manifest sha256 {}", manifest.hash()?);
    Ok(())
}

fn cmd_split(rc: &RunConfig, log: &mut dyn std::io::Write) -> Result<()> {
    let dataset = rc.dataset_dir()?;
    let mut manifest = load_manifest(dataset)?;
    let bags = manifest.read_raw_bags(dataset)?;
    let table = manifest.assign_splits(&bags, rc.seed, rc.force)?;
    let out = rc.out.as_deref().unwrap_or(dataset);
    if out != dataset {
        create_dir(out)?;
        let root = dataset.canonicalize().map_err(|e| Error::io(dataset, e))?;
        for c in &mut manifest.cases {
            c.bag = root.join(&c.bag).to_string_lossy().into_owned();
        }
    }
    manifest.save(&out.join(MANIFEST_FILE))?;
    let _ = write!(log, "{table}");
    Ok(())
}

fn cmd_train(rc: &RunConfig, log: &mut dyn std::io::Write) -> Result<()> {
    let out = rc.out_dir()?;
    let dataset = rc.dataset_dir()?;
    let manifest = load_manifest(dataset)?;
    require_split(&manifest)?;
    let train_set = manifest.load_split(dataset, Split::Train)?;
    let val_set = manifest.load_split(dataset, Split::Val)?;
    let cfg = rc.training;
    let model_cfg = ModelConfig::new(manifest.feature_dim, manifest.clinical_dim, cfg.variant);
    let params = ModelParams::init(&model_cfg, cfg.seed)?;
    create_dir(out)?;
    rc.write_echo(out)?;
    let outcome = train_with_progress(&train_set, &val_set, params, &model_cfg, &cfg, |r| {
        let _ = writeln!(
            log,
            "epoch {:>4}  train loss {:.5}  val acc {}  val macro-AUC {}",
            r.epoch,
            r.train_loss,
            percent(r.val_accuracy),
            percent(r.val_macro_auc)
        );
    })?;
    write_file(&out.join(HISTORY_FILE), history_jsonl(&outcome.history)?.as_bytes())?;
    save_checkpoint(
        &out.join(CHECKPOINT_FILE),
        &Checkpoint {
            config: model_cfg,
            selection: Some(Selection {
                criterion: SELECTION_CRITERION.into(),
                epoch: outcome.best_epoch,
                value: Some(outcome.best_val_macro_auc),
            }),
            params: outcome.best,
        },
    )?;
    let _ = writeln!(
        log,
        "selected epoch {} (val macro-AUC {})",
        outcome.best_epoch,
        percent(outcome.best_val_macro_auc)
    );
    Ok(())
}

fn cmd_eval(rc: &RunConfig, log: &mut dyn std::io::Write) -> Result<()> {
    let out = rc.out_dir()?;
    let dataset = rc.dataset_dir()?;
    let ckpt_path = rc
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::config("eval needs --checkpoint"))?;
    let ckpt = load_checkpoint(ckpt_path)?;
    let manifest = load_manifest(dataset)?;
    require_split(&manifest)?;
    if (ckpt.config.feature_dim, ckpt.config.clinical_dim) != (manifest.feature_dim, manifest.clinical_dim) {
        return Err(Error::config(format!(
            "checkpoint expects L={}, m={}; dataset has L={}, m={}",
            ckpt.config.feature_dim, ckpt.config.clinical_dim, manifest.feature_dim, manifest.clinical_dim
        )));
    }
    let bags = manifest.load_split(dataset, rc.split)?;
    let report = evaluate(&ckpt.params, &bags, &ckpt.config)?;
    create_dir(out)?;
    rc.write_echo(out)?;
    write_file(&out.join("report.json"), report.to_json()?.as_bytes())?;
    write_file(&out.join("confusion.csv"), report.confusion_csv().as_bytes())?;
    for (class, curve) in Subtype::ALL.iter().zip(&report.roc) {
        if let Some(curve) = curve {
            write_file(&out.join(format!("roc_{}.csv", class.name())), roc_csv(curve).as_bytes())?;
        }
    }
    let _ = writeln!(
        log,
        "{} split: {} cases, accuracy {}, macro-AUC {}",
        rc.split,
        bags.len(),
        percent(report.accuracy),
        report.macro_avg.auc.map_or("n/a".into(), percent)
    );
    Ok(())
}

fn cmd_ablate(rc: &RunConfig, log: &mut dyn std::io::Write) -> Result<()> {
    let out = rc.out_dir()?;
    let dataset = rc.dataset_dir()?;
    let manifest = load_manifest(dataset)?;
    require_split(&manifest)?;
    let data = manifest.partition(&manifest.read_raw_bags(dataset)?)?;
    create_dir(out)?;
    rc.write_echo(out)?;
    let csv_path = out.join("ablation.csv");
    let mut csv = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    csv.write_all(ablation_csv_header().as_bytes())
        .map_err(|e| Error::io(&csv_path, e))?;
    let mut flush_row = |row: &AblationRow| -> Result<()> {
        csv.write_all(ablation_csv_row(row).as_bytes())
            .and_then(|_| csv.flush())
            .map_err(|e| Error::io(&csv_path, e))?;
        let name = format!("report_{}.json", row.variant.name());
        write_file(&out.join(name), row.test.to_json()?.as_bytes())?;
        let _ = writeln!(log, "{:<16} test macro-AUC {}", row.variant.label(), percent(row.test.macro_auc()));
        Ok(())
    };
    let mut flush_err = None;
    let rows = ablate(&data, &rc.training, rc.parallel, |row| {
        if flush_err.is_none() {
            flush_err = flush_row(row).err();
        }
    })?;
    if let Some(e) = flush_err {
        return Err(e);
    }
    let table = ablation_table(&rows);
    write_file(&out.join("ablation.txt"), table.as_bytes())?;
    let _ = write!(log, "{table}");
    Ok(())
}

/// Runs a parsed command line, writing progress to `log`.
pub fn run(cli: Cli, log: &mut dyn std::io::Write) -> Result<()> {
    let (rc, kind) = RunConfig::from_cli(cli)?;
    match kind {
        CommandKind::Gen => cmd_gen(&rc, log),
        CommandKind::Split => cmd_split(&rc, log),
        CommandKind::Train => cmd_train(&rc, log),
        CommandKind::Eval => cmd_eval(&rc, log),
        CommandKind::Ablate => cmd_ablate(&rc, log),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_from<I, T>(args: I, log: &mut dyn std::io::Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli, log) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> ExitCode {
    ExitCode::from(run_from(std::env::args_os(), &mut std::io::stdout()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> (RunConfig, CommandKind) {
        RunConfig::from_cli(Cli::try_parse_from(args).unwrap()).unwrap()
    }

    #[test]
    fn counts_parser() {
        assert_eq!(parse_counts("81,126,88,88").unwrap(), [81, 126, 88, 88]);
        assert!(parse_counts("1,2,3").is_err());
        assert!(parse_counts("1,2,x,4").is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"seed": 5, "training": {"epochs": 7, "learning_rate": 0.01}}"#).unwrap();
        let p = path.to_str().unwrap();
        let (rc, kind) = parse(&["dscenet", "--config", p, "train", "--epochs", "3", "--variant", "no_cf"]);
        assert_eq!(kind, CommandKind::Train);
        assert_eq!(rc.seed, 5);
        assert_eq!(rc.training.seed, 5);
        assert_eq!(rc.training.epochs, 3);
        assert_eq!(rc.training.learning_rate, 0.01);
        assert_eq!(rc.training.variant, Variant::NO_CF);
        let (rc, _) = parse(&["dscenet", "train", "--config", p, "--seed", "9"]);
        assert_eq!(rc.training.seed, 9);
    }

    #[test]
    fn echo_round_trips() {
        let (rc, _) = parse(&["dscenet", "gen", "--counts", "5,6,7,8", "--noise", "0.5", "-o", "x"]);
        let text = serde_json::to_string(&rc).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rc);
        assert_eq!(back.generator.counts, [5, 6, 7, 8]);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"sed": 5}"#).unwrap();
        let cli = Cli::try_parse_from(["dscenet", "--config", path.to_str().unwrap(), "split"]).unwrap();
        assert!(matches!(RunConfig::from_cli(cli), Err(Error::Config(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::config("x")), 2);
        assert_eq!(exit_code(&Error::io("p", std::io::Error::other("x"))), 3);
        assert_eq!(exit_code(&Error::NonFiniteLoss { context: "e".into() }), 4);
    }
}
