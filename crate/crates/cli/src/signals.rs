//! `scales`, `hsvr` and `sobolev`.

use std::fmt::Write;
use std::path::PathBuf;

use clap::{ArgGroup, Args, ValueEnum};
use koopman::datasets::{self, SignalId, SignalSpec};
use koopman::hsvr::{self, SvrParams};
use koopman::scales::{self, SampledSignal, ScaleLadder};
use koopman::sobolev::{self, LossKind, ScaleFn, SobolevConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::Output;
use crate::svg::{self, Series};
use crate::{par_map, Globals};

fn signal_id(name: &str) -> CliResult<SignalId> {
    name.parse().map_err(|_| {
        let known: Vec<&str> = SignalId::ALL.iter().map(|s| s.name()).collect();
        CliError::Usage(format!("unknown function {name:?}; known: {}", known.join(", ")))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fft,
    Dmd,
    Both,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[command(group(ArgGroup::new("source").required(true).args(["function", "input"])))]
pub struct ScalesArgs {
    /// Function id, e.g. sin2pi or x+sin2pix4
    #[arg(long)]
    pub function: Option<String>,
    /// CSV file with `x,y` rows on a uniform grid
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Samples on [0, 2) for --function
    #[arg(long, default_value_t = 1024)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = Method::Both)]
    pub method: Method,
    #[arg(long, default_value_t = scales::DEFAULT_RHO)]
    pub rho: f64,
    #[arg(long, default_value_t = scales::DEFAULT_KEEP_FRACTION)]
    pub keep_fraction: f64,
    /// Delay depth for DMD frequency detection
    #[arg(long, default_value_t = 64)]
    pub delay: usize,
}

#[derive(Debug, Serialize)]
struct Detection {
    frequencies: Vec<f64>,
    ladder: ScaleLadder,
}

fn detect(signal: &SampledSignal, method: &str, keep: f64, delay: usize, rho: f64) -> koopman::Result<Detection> {
    let frequencies = match method {
        "fft" => scales::detect_frequencies_fft(signal, keep)?,
        _ => scales::detect_frequencies_dmd(signal, delay)?,
    };
    let ladder = scales::build_ladder(&frequencies, rho)?;
    Ok(Detection { frequencies, ladder })
}

pub fn scales_cmd(args: &ScalesArgs, out: &mut Output) -> CliResult<()> {
    let (name, formula, signal) = match (&args.function, &args.input) {
        (Some(f), _) => {
            let id = signal_id(f)?;
            (id.name().to_string(), id.formula().to_string(), datasets::gen_signal(&SignalSpec::on_unit_window(id, args.samples))?)
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            (path.display().to_string(), String::new(), datasets::parse_signal_csv(&text)?)
        }
        (None, None) => return Err(CliError::Usage("give --function or --input".into())),
    };
    let mut doc = serde_json::json!({ "function": name, "formula": formula });
    let mut summary = Vec::new();
    for method in ["fft", "dmd"] {
        if args.method == Method::Both || (method == "fft") == (args.method == Method::Fft) {
            let d = detect(&signal, method, args.keep_fraction, args.delay, args.rho)?;
            summary.push(format!("{} ({})", d.ladder.layer_count, method.to_uppercase()));
            doc[method] = serde_json::to_value(d).map_err(koopman::Error::from)?;
        }
    }
    println!("{name}: layers {}", summary.join(", "));
    out.write_json("scales.json", &doc)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct HsvrArgs {
    /// Function ids; `all` runs every table row
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub function: Vec<String>,
    /// Training samples on [0, 2)
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    /// Evaluation samples on [0, 2)
    #[arg(long, default_value_t = 1024)]
    pub eval_samples: usize,
    #[arg(long, default_value_t = scales::DEFAULT_RHO)]
    pub rho: f64,
    #[arg(long, default_value_t = scales::DEFAULT_KEEP_FRACTION)]
    pub keep_fraction: f64,
    #[arg(long, default_value_t = 64)]
    pub delay: usize,
}

#[derive(Debug, Clone, Serialize)]
struct Fit {
    layers: usize,
    mae: f64,
    rmse: f64,
    max_err: f64,
}

#[derive(Debug, Clone, Serialize)]
struct Row {
    function: String,
    formula: String,
    epsilon: f64,
    fft: Result<Fit, String>,
    dmd: Result<Fit, String>,
}

fn fit_row(id: SignalId, args: &HsvrArgs) -> koopman::Result<Row> {
    let signal = datasets::gen_signal(&SignalSpec::on_unit_window(id, args.samples))?;
    let dense = datasets::gen_signal(&SignalSpec::on_unit_window(id, args.eval_samples))?;
    let p = SvrParams::defaults_for(signal.ys(), 1.0);
    let run = |method: &str| -> Result<Fit, koopman::Error> {
        let d = detect(&signal, method, args.keep_fraction, args.delay, args.rho)?;
        let model = hsvr::fit_hsvr(&signal, &d.ladder, p.epsilon, p.c)?;
        let m = hsvr::evaluate(&model, &dense);
        Ok(Fit { layers: d.ladder.layer_count, mae: m.mae, rmse: m.rmse, max_err: m.max_err })
    };
    let classify = |r: koopman::Result<Fit>| match r {
        Ok(f) => Ok(Ok(f)),
        Err(e @ (koopman::Error::NumericalFailure(_) | koopman::Error::SvrNotConverged { .. })) => Ok(Err(e.to_string())),
        Err(e) => Err(e),
    };
    Ok(Row { function: id.name().into(), formula: id.formula().into(), epsilon: p.epsilon, fft: classify(run("fft"))?, dmd: classify(run("dmd"))? })
}

pub fn hsvr_cmd(args: &HsvrArgs, g: &Globals, out: &mut Output) -> CliResult<()> {
    let ids: Vec<SignalId> = if args.function.iter().any(|f| f == "all") {
        SignalId::ALL.to_vec()
    } else {
        args.function.iter().map(|f| signal_id(f)).collect::<CliResult<_>>()?
    };
    let rows: Vec<Row> = par_map(&ids, g.jobs, |&id| fit_row(id, args)).into_iter().collect::<koopman::Result<_>>()?;
    let mut csv = String::from("function,layers_fft,epsilon,mae_fft,layers_dmd,mae_dmd\n");
    let cell = |f: &Result<Fit, String>| match f {
        Ok(f) => (f.layers.to_string(), format!("{:.6}", f.mae)),
        Err(_) => (String::new(), "failed".to_string()),
    };
    let mut failed = Vec::new();
    for r in &rows {
        let ((lf, ef), (ld, ed)) = (cell(&r.fft), cell(&r.dmd));
        writeln!(csv, "{},{lf},{:.6},{ef},{ld},{ed}", r.function, r.epsilon).unwrap();
        println!("{:<34} layers {lf:>3} / {ld:>3}  eps {:.4}  mae {ef} / {ed}", r.function, r.epsilon);
        for (m, e) in [("fft", &r.fft), ("dmd", &r.dmd)] {
            if let Err(msg) = e {
                failed.push(format!("{} ({m}): {msg}", r.function));
            }
        }
    }
    out.write("table.csv", csv)?;
    out.write_json("table.json", &rows)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(koopman::Error::NumericalFailure(failed.join("; ")).into())
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SobolevArgs {
    #[arg(long, default_value = "x+sin2pix4")]
    pub function: String,
    /// Relative noise levels
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.5,1.0")]
    pub noise: Vec<f64>,
    /// l2, sobolev1 or sobolev2
    #[arg(long, value_delimiter = ',', default_value = "l2,sobolev1,sobolev2")]
    pub losses: Vec<LossKind>,
    #[arg(long, default_value_t = sobolev::DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = koopman::nn::DEFAULT_LEARNING_RATE)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = sobolev::DEFAULT_HIDDEN_LAYERS)]
    pub hidden_layers: usize,
    #[arg(long, default_value_t = sobolev::DEFAULT_WIDTH)]
    pub width: usize,
    #[arg(long, default_value_t = sobolev::DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, default_value_t = sobolev::DEFAULT_EVAL_GRID)]
    pub eval_grid: usize,
    /// Use s(ℓ) = 2^ℓ instead of s(ℓ) = ℓ
    #[arg(long)]
    pub exponential_scales: bool,
}

pub fn sobolev_cmd(args: &SobolevArgs, g: &Globals, out: &mut Output) -> CliResult<()> {
    let id = signal_id(&args.function)?;
    if args.noise.iter().any(|&e| !(e >= 0.0)) {
        return Err(CliError::Usage("noise levels must be non-negative".into()));
    }
    let clean = datasets::gen_signal(&SignalSpec::on_unit_window(id, args.grid))?;
    let f = move |x: f64| id.eval(x);
    let cells: Vec<(f64, LossKind)> = args.noise.iter().flat_map(|&e| args.losses.iter().map(move |&l| (e, l))).collect();
    let results = par_map(&cells, g.jobs, |&(noise, loss)| {
        let signal = sobolev::make_noisy(&clean, noise, g.seed)?;
        let config = SobolevConfig {
            scale_fn: if args.exponential_scales { ScaleFn::Exponential } else { ScaleFn::Linear },
            hidden_layers: args.hidden_layers,
            width: args.width,
            loss,
            learning_rate: args.learning_rate,
            epochs: args.epochs,
            eval_points: args.eval_grid,
        };
        sobolev::train_reconstruction(&signal, &config, g.seed, &f).map(|r| (signal, r))
    });
    let mut summary = Vec::new();
    let mut panel = Vec::new();
    for (&(noise, loss), result) in cells.iter().zip(results) {
        let (signal, r) = result?;
        let name = format!("{}_noise{noise}", serde_json::to_value(loss).unwrap().as_str().unwrap_or("loss"));
        let mut csv = String::from("x,clean,reconstruction\n");
        for ((x, c), y) in r.eval_xs.iter().zip(&r.eval_clean).zip(&r.reconstruction) {
            writeln!(csv, "{x:e},{c:e},{y:e}").unwrap();
        }
        out.write(&format!("sobolev/{name}.csv"), csv)?;
        let mut noisy = String::from("x,clean,noisy,split\n");
        for (i, (x, c)) in signal.clean.xs().iter().zip(signal.clean.ys()).enumerate() {
            let split = if signal.train.contains(&i) { "train" } else { "test" };
            writeln!(noisy, "{x:e},{c:e},{:e},{split}", signal.noisy[i]).unwrap();
        }
        out.write(&format!("sobolev/{name}_data.csv"), noisy)?;
        println!("{name}: mse vs clean {:.5}, vs noisy test {:.5}", r.metrics.mse_vs_clean, r.metrics.mse_vs_noisy);
        summary.push(serde_json::json!({ "noise": noise, "loss": loss, "metrics": r.metrics, "final_loss": r.losses.last() }));
        let pts = |ys: &[f64]| r.eval_xs.iter().copied().zip(ys.iter().copied()).collect::<Vec<_>>();
        panel.push((format!("{loss:?}, noise {noise}"), vec![Series::new("clean", pts(&r.eval_clean)), Series::new("fit", pts(&r.reconstruction))]));
    }
    out.write_json("sobolev/metrics.json", &summary)?;
    let columns = args.losses.len().max(1);
    out.write("sobolev/panel.svg", svg::panel(&format!("{} reconstructions", id.name()), &panel, columns, out.stamp()))
}
