use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use koopman::datasets::{self, LabeledImages, SignalId, SignalSpec};
use koopman::scales;
use serde_json::Value;

fn koopman(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_koopman")).args(args).env("RUST_LOG", "error").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = koopman(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 6×6 two-blob images, 8 per class, gzip-free IDX files.
fn tiny_mnist(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    let (rows, cols) = (6, 6);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for i in 0..80u32 {
        let label = (i % 10) as u8;
        for p in 0..rows * cols {
            let v = ((p as u32 * 7 + u32::from(label) * 13 + i) % 17) as f64 / 16.0;
            pixels.push((v * 255.0).round() / 255.0);
        }
        labels.push(label);
    }
    let (img, lab) = datasets::encode_idx(&LabeledImages { rows, cols, pixels, labels });
    std::fs::write(data.join("images-idx3-ubyte"), img).unwrap();
    std::fs::write(data.join("labels-idx1-ubyte"), lab).unwrap();
    data
}

#[test]
fn scales_reports_ladders() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    ok(&["scales", "--function", "sin2pi", "--out", s(&out), "--deterministic"]);
    let v = json(out.join("scales.json"));
    assert_eq!(v["fft"]["ladder"]["layer_count"], 1);
    assert_eq!(v["dmd"]["ladder"]["layer_count"], 1);
    assert!((v["fft"]["ladder"]["gamma0"].as_f64().unwrap() - 36.0).abs() < 1e-9);

    ok(&["scales", "--function", "x+sin2pix4", "--out", s(&out), "--deterministic"]);
    let signal = datasets::gen_signal(&SignalSpec::on_unit_window(SignalId::XPlusSin2PiX4, 1024)).unwrap();
    let freqs = scales::detect_frequencies_fft(&signal, scales::DEFAULT_KEEP_FRACTION).unwrap();
    let ladder = scales::build_ladder(&freqs, scales::DEFAULT_RHO).unwrap();
    assert_eq!(json(out.join("scales.json"))["fft"]["ladder"]["layer_count"], ladder.layer_count);
}

#[test]
fn scales_reads_csv_input() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let csv = tmp.path().join("sig.csv");
    let rows: String = (0..512).map(|i| {
        let x = 2.0 * i as f64 / 512.0;
        format!("{x},{}\n", (2.0 * std::f64::consts::PI * x).sin())
    }).collect();
    std::fs::write(&csv, rows).unwrap();
    ok(&["scales", "--input", s(&csv), "--method", "fft", "--out", s(&out)]);
    let v = json(out.join("scales.json"));
    assert_eq!(v["fft"]["ladder"]["layer_count"], 1);
    assert!(v.get("dmd").is_none());
    assert_eq!(koopman(&["scales", "--input", s(&csv), "--function", "sin2pi", "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn unknown_function_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    for cmd in ["scales", "hsvr", "sobolev"] {
        let r = koopman(&[cmd, "--function", "tan", "--out", s(&out)]);
        assert_eq!(r.status.code(), Some(2), "{cmd}");
    }
    assert_eq!(koopman(&["scales"]).status.code(), Some(2));
}

#[test]
fn hsvr_row_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    ok(&["hsvr", "--function", "sin2pi,cos2pi+sin20pi", "--jobs", "2", "--out", s(&out), "--deterministic"]);
    let csv = std::fs::read_to_string(out.join("table.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "function,layers_fft,epsilon,mae_fft,layers_dmd,mae_dmd");
    let row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(row[0], "sin2pi");
    assert_eq!(row[1], "1");
    assert!(row[3].parse::<f64>().unwrap() <= 0.04);
    assert!(lines[2].starts_with("cos2pi+sin20pi,"));

    let m = json(out.join("manifest.json"));
    assert_eq!(m["command"], "hsvr");
    assert!(m.get("created_unix").is_none());
    for a in m["artifacts"].as_array().unwrap() {
        let bytes = std::fs::read(out.join(a["path"].as_str().unwrap())).unwrap();
        assert_eq!(a["bytes"].as_u64().unwrap(), bytes.len() as u64);
        assert_eq!(a["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = ["sobolev", "--epochs", "3", "--grid", "64", "--eval-grid", "128", "--hidden-layers", "3", "--width", "4", "--deterministic"];
    ok(&[&args[..], &["--out", s(&a), "--jobs", "3"]].concat());
    ok(&[&args[..], &["--out", s(&b)]].concat());
    let (ma, mb) = (json(a.join("manifest.json")), json(b.join("manifest.json")));
    assert_eq!(ma["artifacts"], mb["artifacts"]);
    assert_eq!(ma["artifacts"].as_array().unwrap().len(), 9 * 2 + 2);
    let panel = std::fs::read_to_string(a.join("sobolev/panel.svg")).unwrap();
    assert!(panel.contains(r#"viewBox="0 0 800 600""#));
    assert!(!panel.contains("created"));
}

#[test]
fn svg_timestamp_only_without_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let args = ["sobolev", "--epochs", "2", "--grid", "64", "--eval-grid", "64", "--hidden-layers", "2", "--noise", "0.5", "--losses", "l2"];
    ok(&[&args[..], &["--out", s(&out)]].concat());
    assert!(std::fs::read_to_string(out.join("sobolev/panel.svg")).unwrap().contains("<!-- created"));
    assert!(json(out.join("manifest.json")).get("created_unix").is_some());
}

#[test]
fn config_file_fills_options_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"samples": 128, "rho": 3.0}"#).unwrap();
    ok(&["scales", "--function", "sin2pi", "--rho", "4", "--config", s(&cfg), "--out", s(&out)]);
    let m = json(out.join("manifest.json"));
    assert_eq!(m["config"]["samples"], 128);
    assert_eq!(m["config"]["rho"], 4.0);

    std::fs::write(&cfg, r#"{"nonsense": 1}"#).unwrap();
    assert_eq!(koopman(&["scales", "--function", "sin2pi", "--config", s(&cfg), "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn train_monitor_and_prune() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_mnist(tmp.path());
    let common = ["--data", s(&data), "--n-train", "40", "--n-test", "20", "--hidden", "5", "--deterministic"];

    // A frozen run sits at its fixed point.
    let frozen = tmp.path().join("frozen");
    let args = ["train-monitor", "--epochs", "30", "--learning-rate", "0", "--loss-windows", "20,30", "--weight-windows", "10,31"];
    ok(&[&args[..], &common, &["--out", s(&frozen)]].concat());
    let reports: Vec<_> = std::fs::read_dir(frozen.join("reports")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(reports.iter().filter(|p| p.extension().unwrap() == "json").count(), 4);
    for p in reports.iter().filter(|p| p.extension().unwrap() == "json") {
        assert_eq!(json(p)["verdict"]["kind"], "converging_near_fixed_point", "{p:?}");
    }
    assert!(std::fs::read_to_string(frozen.join("reports/weights_0_31.svg")).unwrap().contains("stroke-dasharray"));

    let run = tmp.path().join("run");
    let args = ["train-monitor", "--epochs", "30", "--learning-rate", "0.05", "--batch-size", "8"];
    ok(&[&args[..], &common, &["--out", s(&run)]].concat());
    let csv = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 32);

    let log = run.join("log");
    let data_args = ["--data", s(&data), "--n-train", "40", "--n-test", "20", "--deterministic"];
    let pruned = tmp.path().join("pruned");
    ok(&[&["prune", "--log", s(&log), "--epoch", "10", "--until", "20", "--out", s(&pruned)][..], &data_args].concat());
    let rep = json(pruned.join("sparsity.json"));
    let prunable = rep["prunable"].as_f64().unwrap();
    assert_eq!(prunable, (36 * 5 + 5 * 10) as f64);
    assert!((rep["sparsity"].as_f64().unwrap() - 0.75).abs() <= 1.0 / prunable);
    let trace = std::fs::read_to_string(pruned.join("prune_loss.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 11);
    assert!(trace.lines().nth(1).unwrap().starts_with("10,"));

    let noop = tmp.path().join("noop");
    ok(&[&["prune", "--log", s(&log), "--epoch", "10", "--epsilon", "0", "--out", s(&noop)][..], &data_args].concat());
    assert_eq!(json(noop.join("sparsity.json"))["zeroed"], 0);

    let bad = koopman(&[&["prune", "--log", s(&log), "--epoch", "99", "--out", s(&noop)][..], &data_args].concat());
    assert_eq!(bad.status.code(), Some(2));
    let missing = koopman(&["prune", "--log", s(&tmp.path().join("nothing")), "--out", s(&noop)]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn missing_data_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let r = koopman(&["train-monitor", "--data", s(&tmp.path().join("none")), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("no images-idx3-ubyte"));
}
