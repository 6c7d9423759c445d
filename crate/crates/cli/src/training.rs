//! `train-monitor` and `prune`.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use koopman::datasets::{self, LabeledImages};
use koopman::dmd;
use koopman::monitor::{self, ObservableKind, Thresholds};
use koopman::nn::{self, Architecture, Dataset, InitScheme, SnapshotLog, TrainConfig};
use koopman::pruning::{self, Algorithm, PruneSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::Output;
use crate::svg::{self, Series};
use crate::Globals;

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// Directory with `images-idx3-ubyte[.gz]` and `labels-idx1-ubyte[.gz]`
    #[arg(long, default_value = "data/mnist")]
    pub data: PathBuf,
    #[arg(long, default_value_t = datasets::DEFAULT_TRAIN)]
    pub n_train: usize,
    #[arg(long, default_value_t = datasets::DEFAULT_TEST)]
    pub n_test: usize,
    /// Seed of the stratified train/test subset
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

impl DataArgs {
    pub fn load(&self) -> CliResult<(Dataset, Dataset, (usize, usize))> {
        let find = |stems: &[&str]| {
            stems
                .iter()
                .flat_map(|s| [format!("{s}.gz"), s.to_string()])
                .map(|n| self.data.join(n))
                .find(|p| p.is_file())
                .ok_or_else(|| CliError::Usage(format!("no {} file in {}", stems[0], self.data.display())))
        };
        let images = find(&["images-idx3-ubyte", "train-images-idx3-ubyte", "t10k-images-idx3-ubyte"])?;
        let labels = find(&["labels-idx1-ubyte", "train-labels-idx1-ubyte", "t10k-labels-idx1-ubyte"])?;
        let all: LabeledImages = datasets::load_idx(&images, &labels)?;
        let (train, test) = datasets::subset(&all, self.n_train, self.n_test, self.data_seed)?;
        Ok((train.to_dataset(), test.to_dataset(), (all.rows, all.cols)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Dense,
    Convnet,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainMonitorArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = ArchKind::Dense)]
    pub arch: ArchKind,
    /// Hidden layer widths of the dense network
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = nn::DEFAULT_LEARNING_RATE)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = nn::DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    /// he, xavier or normal
    #[arg(long, default_value = "xavier")]
    pub init: InitScheme,
    /// Delay-embedding depth of the loss observable
    #[arg(long, default_value_t = dmd::DEFAULT_DELAY)]
    pub delay: usize,
    #[arg(long, value_delimiter = ',', default_value = "40,100,500")]
    pub loss_windows: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "50,100,500")]
    pub weight_windows: Vec<usize>,
}

fn loss_csv(log: &SnapshotLog) -> String {
    let mut csv = String::from("epoch,train_loss,test_loss\n");
    for r in &log.records {
        let test = r.test_loss.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(csv, "{},{:e},{test}", r.epoch, r.train_loss).unwrap();
    }
    csv
}

fn loss_series(log: &SnapshotLog, name: &str) -> Vec<Series> {
    let mut out = vec![Series::new(format!("{name} train"), log.records.iter().map(|r| (r.epoch as f64, r.train_loss)).collect())];
    let test: Vec<(f64, f64)> = log.records.iter().filter_map(|r| r.test_loss.map(|t| (r.epoch as f64, t))).collect();
    if !test.is_empty() {
        out.push(Series::new(format!("{name} test"), test));
    }
    out
}

pub fn train_monitor(args: &TrainMonitorArgs, g: &Globals, out: &mut Output) -> CliResult<()> {
    let (train, test, (rows, cols)) = args.data.load()?;
    let arch = match args.arch {
        ArchKind::Dense => {
            let mut sizes = vec![rows * cols];
            sizes.extend(&args.hidden);
            sizes.push(datasets::CLASSES);
            Architecture::dense(&sizes)?
        }
        ArchKind::Convnet if (rows, cols) == (28, 28) => Architecture::mnist_convnet(),
        ArchKind::Convnet => return Err(CliError::Usage(format!("the convnet expects 28×28 images, got {rows}×{cols}"))),
    };
    let config = TrainConfig {
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        batch_size: args.batch_size,
        init_scheme: args.init,
        seed: g.seed,
        mask: None,
    };
    log::info!("training {} parameters for {} epochs", arch.param_count, args.epochs);
    let (_, log) = nn::train(&arch, &train, Some(&test), &config)?;
    log.save(out.path("log"))?;
    out.record_tree("log")?;
    out.write("loss.csv", loss_csv(&log))?;
    out.write("loss.svg", svg::line_chart("cross-entropy", "epoch", "loss", &loss_series(&log, "run"), true, out.stamp()))?;

    let available = log.len();
    let mut jobs: Vec<(ObservableKind, usize)> = Vec::new();
    for &w in &args.loss_windows {
        let end = w.min(available);
        if end < args.delay + 2 {
            log::warn!("skipping loss window [0,{w}): {available} epochs logged, delay {}", args.delay);
        } else if !jobs.contains(&(ObservableKind::LossDelay, end)) {
            jobs.push((ObservableKind::LossDelay, end));
        }
    }
    for &w in &args.weight_windows {
        let end = w.min(available);
        if end < 3 {
            log::warn!("skipping weight window [0,{w}): {available} epochs logged");
        } else if !jobs.contains(&(ObservableKind::Weights, end)) {
            jobs.push((ObservableKind::Weights, end));
        }
    }
    for (kind, end) in jobs {
        let report = monitor::analyze(&log, kind, 0..end, args.delay, dmd::DEFAULT_RANK_TOLERANCE, Thresholds::default())?;
        let doc = report.document()?;
        let stem = match kind {
            ObservableKind::LossDelay => format!("reports/loss_0_{end}"),
            ObservableKind::Weights => format!("reports/weights_0_{end}"),
        };
        out.write_json(&format!("{stem}.json"), &doc)?;
        let eigs: Vec<(f64, f64)> = report.dmd.eigenvalues.iter().map(|z| (z.re, z.im)).collect();
        let top: Vec<bool> = (0..eigs.len()).map(|j| report.top.contains(&j)).collect();
        let title = format!("{kind:?} spectrum, epochs [0,{end})");
        out.write(&format!("{stem}.svg"), svg::spectrum(&title, &eigs, &top, out.stamp()))?;
        let rate = doc.verdict.rate.map_or("-".into(), |r| format!("{r:.6}"));
        println!("{kind:?} [0,{end}): {:?} (rate {rate}, {} modes)", doc.verdict.kind, report.dmd.len());
    }
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PruneArgs {
    /// Snapshot log directory written by `train-monitor`
    #[arg(long)]
    pub log: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Epoch at which the mask is computed
    #[arg(long, default_value_t = 100)]
    pub epoch: usize,
    /// 1 keeps reconstructed survivors, 2 re-initializes them
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub algorithm: u8,
    /// Target fraction of zeroed prunable weights
    #[arg(long, default_value_t = pruning::DEFAULT_SPARSITY)]
    pub sparsity: f64,
    /// Explicit magnitude threshold; overrides --sparsity
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Last retraining epoch; defaults to the last epoch of the log
    #[arg(long)]
    pub until: Option<usize>,
    /// Let biases be pruned too
    #[arg(long)]
    pub prune_biases: bool,
}

fn load_log(dir: &Path) -> CliResult<SnapshotLog> {
    if !dir.join("meta.json").is_file() {
        return Err(CliError::Usage(format!("{} is not a snapshot log", dir.display())));
    }
    Ok(SnapshotLog::load(dir)?)
}

pub fn prune(args: &PruneArgs, out: &mut Output) -> CliResult<()> {
    let base = load_log(&args.log)?;
    let last = base.records.last().map_or(0, |r| r.epoch);
    if args.epoch < 3 || args.epoch > last {
        return Err(CliError::Usage(format!("prune epoch {} outside [3, {last}]", args.epoch)));
    }
    let until = args.until.unwrap_or(last);
    if until < args.epoch {
        return Err(CliError::Usage(format!("--until {until} precedes the prune epoch {}", args.epoch)));
    }
    let (train, test, _) = args.data.load()?;
    let spec = PruneSpec {
        epoch: args.epoch,
        algorithm: if args.algorithm == 1 { Algorithm::Reconstruction } else { Algorithm::Reinit },
        sparsity: args.sparsity,
        epsilon: args.epsilon,
        until_epoch: until,
        exempt_biases: !args.prune_biases,
        ..PruneSpec::default()
    };
    let outcome = pruning::prune_and_retrain(&base, &train, Some(&test), &spec)?;
    outcome.mask.save(out.path("mask.bin"))?;
    out.record_file("mask.bin")?;
    out.record_file("mask.bin.json")?;
    outcome.log.save(out.path("pruned_log"))?;
    out.record_tree("pruned_log")?;

    let mut csv = String::from("epoch,unpruned_test,pruned_test,unpruned_train,pruned_train\n");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in &outcome.log.records {
        let u = base.record_at(r.epoch);
        writeln!(
            csv,
            "{},{},{},{},{:e}",
            r.epoch,
            fmt(u.and_then(|u| u.test_loss)),
            fmt(r.test_loss),
            fmt(u.map(|u| u.train_loss)),
            r.train_loss
        )
        .unwrap();
    }
    out.write("prune_loss.csv", csv)?;
    let mut series = loss_series(&base, "unpruned");
    series.retain(|s| s.label.ends_with("test"));
    series.extend(loss_series(&outcome.log, "pruned").into_iter().filter(|s| s.label.ends_with("test")));
    out.write("prune_loss.svg", svg::line_chart("test cross-entropy", "epoch", "loss", &series, true, out.stamp()))?;

    let prunable = if spec.exempt_biases { base.arch.bias_positions().iter().filter(|&&b| !b).count() } else { base.arch.param_count };
    let report = serde_json::json!({
        "algorithm": args.algorithm,
        "epoch": args.epoch,
        "until": until,
        "threshold": outcome.mask.threshold,
        "sparsity": outcome.mask.sparsity,
        "zeroed": outcome.mask.mask.count(),
        "prunable": prunable,
        "provenance": outcome.mask.provenance,
        "final_test_loss": outcome.log.records.last().and_then(|r| r.test_loss),
        "unpruned_test_loss": base.record_at(until).and_then(|r| r.test_loss),
    });
    out.write_json("sparsity.json", &report)?;
    println!("sparsity {:.4} (threshold {:e}), {} of {prunable} weights zeroed", outcome.mask.sparsity, outcome.mask.threshold, outcome.mask.mask.count());
    Ok(())
}
