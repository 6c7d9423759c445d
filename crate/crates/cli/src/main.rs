//! `koopman` experiment runner.

mod error;
mod output;
mod signals;
mod svg;
mod training;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use error::{CliError, CliResult};
use output::{ExperimentManifest, Output};

#[derive(Debug, Parser)]
#[command(name = "koopman", version, about = "Koopman spectral analysis of training runs and multiscale signal fits")]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON object of command options; flags given on the command line win
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for independent sub-jobs
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Omit timestamps so repeated runs are byte-identical
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on MNIST and report the Koopman spectrum of the run
    TrainMonitor(training::TrainMonitorArgs),
    /// Prune a logged run from its mode reconstruction and retrain
    Prune(training::PruneArgs),
    /// Detect frequencies and the HSVR scale ladder of a function
    Scales(signals::ScalesArgs),
    /// Fit HSVR cascades and tabulate layer counts and errors
    Hsvr(signals::HsvrArgs),
    /// Denoising experiment with L2 and Sobolev losses
    Sobolev(signals::SobolevArgs),
}

pub struct Globals {
    pub seed: u64,
    pub jobs: usize,
}

/// Applies `f` to every item on up to `jobs` threads; results keep input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Overlays `--config` keys onto `args` unless the flag was given explicitly.
fn merge_config<T: Serialize + DeserializeOwned>(args: &mut T, matches: &ArgMatches, path: &Path) -> CliResult<()> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let cfg: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let serde_json::Value::Object(cfg) = cfg else {
        return Err(CliError::Usage(format!("{} must hold a JSON object", path.display())));
    };
    let mut current = serde_json::to_value(&*args).map_err(koopman::Error::from)?;
    let obj = current.as_object_mut().expect("options serialize to an object");
    for (key, value) in cfg {
        if !obj.contains_key(&key) {
            return Err(CliError::Usage(format!("unknown option {key:?} in {}", path.display())));
        }
        if matches.try_contains_id(&key).is_ok() && matches.value_source(&key) == Some(ValueSource::CommandLine) {
            continue;
        }
        obj.insert(key, value);
    }
    *args = serde_json::from_value(current).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn run(cli: &mut Cli, matches: &ArgMatches) -> CliResult<()> {
    if let (Some(path), Some((_, sub))) = (cli.config.clone(), matches.subcommand()) {
        match &mut cli.command {
            Command::TrainMonitor(a) => merge_config(a, sub, &path)?,
            Command::Prune(a) => merge_config(a, sub, &path)?,
            Command::Scales(a) => merge_config(a, sub, &path)?,
            Command::Hsvr(a) => merge_config(a, sub, &path)?,
            Command::Sobolev(a) => merge_config(a, sub, &path)?,
        }
    }
    let globals = Globals { seed: cli.seed, jobs: cli.jobs.max(1) };
    let mut out = Output::create(&cli.out, cli.deterministic)?;
    let (name, config) = match &cli.command {
        Command::TrainMonitor(a) => ("train-monitor", serde_json::to_value(a)),
        Command::Prune(a) => ("prune", serde_json::to_value(a)),
        Command::Scales(a) => ("scales", serde_json::to_value(a)),
        Command::Hsvr(a) => ("hsvr", serde_json::to_value(a)),
        Command::Sobolev(a) => ("sobolev", serde_json::to_value(a)),
    };
    let config = config.map_err(koopman::Error::from)?;
    let result = match &cli.command {
        Command::TrainMonitor(a) => training::train_monitor(a, &globals, &mut out),
        Command::Prune(a) => training::prune(a, &mut out),
        Command::Scales(a) => signals::scales_cmd(a, &mut out),
        Command::Hsvr(a) => signals::hsvr_cmd(a, &globals, &mut out),
        Command::Sobolev(a) => signals::sobolev_cmd(a, &globals, &mut out),
    };
    // Numerical failures still leave partial artifacts worth describing.
    if result.as_ref().is_err_and(|e| e.exit_code() != 3) {
        return result;
    }
    out.finish(ExperimentManifest {
        command: name.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cli.seed,
        jobs: globals.jobs,
        deterministic: cli.deterministic,
        out: cli.out.clone(),
        config,
        artifacts: Vec::new(),
        created_unix: None,
    })?;
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = Cli::command().get_matches();
    let mut cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&mut cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
