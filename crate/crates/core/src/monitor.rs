//! Convergence diagnostics from the Koopman spectrum of a training run.
//!
//! Eigenvalues clustered near `1` signal a fixed point of the training map,
//! eigenvalues outside the unit circle signal divergence, and the slowest
//! stable eigenvalue sets the convergence rate.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dmd::{self, DmdResult, DmdSummary, SnapshotMatrix};
use crate::error::{invalid, Error, Result};
use crate::nn::SnapshotLog;

pub const DEFAULT_NEAR_ONE: f64 = 0.05;
pub const DEFAULT_UNSTABLE_MARGIN: f64 = 0.01;
pub const DEFAULT_TOP_MASS: f64 = 0.9;

/// Loss-observable windows used by the paper-style report.
pub const LOSS_WINDOWS: [usize; 3] = [40, 100, 500];
/// Weight-observable windows used by the paper-style report.
pub const WEIGHT_WINDOWS: [usize; 3] = [50, 100, 500];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    LossDelay,
    Weights,
}

/// Classification thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// `|λ − 1| < near_one` counts as clustering at one.
    pub near_one: f64,
    /// `|λ| > 1 + unstable_margin` counts as growth.
    pub unstable_margin: f64,
    /// Leading modes holding this fraction of total `|c|` form the top set.
    pub top_mass: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { near_one: DEFAULT_NEAR_ONE, unstable_margin: DEFAULT_UNSTABLE_MARGIN, top_mass: DEFAULT_TOP_MASS }
    }
}

#[derive(Debug, Clone)]
pub struct SpectrumReport {
    /// Epoch range `[start, end)` of the snapshots used.
    pub window: (usize, usize),
    pub observable: ObservableKind,
    pub dmd: DmdResult,
    pub thresholds: Thresholds,
    /// Indices (into `dmd`) of the top-coefficient modes.
    pub top: Vec<usize>,
    pub near_one: Vec<usize>,
    pub unstable: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    ConvergingNearFixedPoint,
    StillTransient,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    /// Largest `|λ| < 1` among top-set modes that are not near one.
    pub rate: Option<f64>,
}

/// JSON form of a [`SpectrumReport`] together with its verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub window: (usize, usize),
    pub observable: ObservableKind,
    pub thresholds: Thresholds,
    pub top: Vec<usize>,
    pub near_one: Vec<usize>,
    pub unstable: Vec<usize>,
    pub verdict: Verdict,
    pub dmd: DmdSummary,
}

impl SpectrumReport {
    pub fn document(&self) -> Result<ReportDocument> {
        Ok(ReportDocument {
            window: self.window,
            observable: self.observable,
            thresholds: self.thresholds,
            top: self.top.clone(),
            near_one: self.near_one.clone(),
            unstable: self.unstable.clone(),
            verdict: verdict(self)?,
            dmd: self.dmd.summary(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.document()?)?)
    }
}

/// Hankel matrix of the training loss over the whole log.
pub fn loss_observable(log: &SnapshotLog, delay: usize) -> Result<SnapshotMatrix> {
    loss_window(log, 0..log.len(), delay)
}

fn loss_window(log: &SnapshotLog, window: Range<usize>, delay: usize) -> Result<SnapshotMatrix> {
    let positions = record_range(log, &window)?;
    if positions.len() < delay + 2 {
        return invalid(format!("{} epochs are too few for delay {delay}", positions.len()));
    }
    let losses: Vec<f64> = log.records[positions].iter().map(|r| r.train_loss).collect();
    dmd::delay_embed(&losses, delay)
}

/// Weight vectors for epochs in `window` as snapshot columns.
pub fn weight_observable(log: &SnapshotLog, window: Range<usize>) -> Result<SnapshotMatrix> {
    let positions = record_range(log, &window)?;
    let cols: Vec<&[f64]> = log.records[positions].iter().map(|r| r.weights.as_slice()).collect();
    SnapshotMatrix::from_columns(&cols)
}

/// Record positions whose epoch lies in `window`; the window must be covered.
fn record_range(log: &SnapshotLog, window: &Range<usize>) -> Result<Range<usize>> {
    if window.start >= window.end {
        return invalid(format!("empty window {window:?}"));
    }
    let start = log.records.iter().position(|r| r.epoch == window.start);
    let last = log.records.iter().position(|r| r.epoch == window.end - 1);
    match (start, last) {
        (Some(s), Some(e)) if e - s + 1 == window.len() => Ok(s..e + 1),
        _ => invalid(format!("window {window:?} is not covered by the log")),
    }
}

pub fn analyze(
    log: &SnapshotLog,
    kind: ObservableKind,
    window: Range<usize>,
    delay: usize,
    rank_tolerance: f64,
    thresholds: Thresholds,
) -> Result<SpectrumReport> {
    let snaps = match kind {
        ObservableKind::LossDelay => loss_window(log, window.clone(), delay)?,
        ObservableKind::Weights => weight_observable(log, window.clone())?,
    };
    let result = dmd::dmd_rrr(&snaps, rank_tolerance)?;
    Ok(classify(result, (window.start, window.end), kind, thresholds))
}

/// Builds a report from an existing decomposition.
pub fn classify(dmd: DmdResult, window: (usize, usize), observable: ObservableKind, thresholds: Thresholds) -> SpectrumReport {
    let top = top_mass_set(&dmd, thresholds.top_mass);
    let near_one = top.iter().copied().filter(|&j| (dmd.eigenvalues[j] - 1.0).norm() < thresholds.near_one).collect();
    let unstable = top
        .iter()
        .copied()
        .filter(|&j| dmd.eigenvalues[j].norm() > 1.0 + thresholds.unstable_margin)
        .collect();
    SpectrumReport { window, observable, dmd, thresholds, top, near_one, unstable }
}

/// Shortest `|c|`-ordered prefix whose cumulative `|c|` reaches `mass` of the total.
pub fn top_mass_set(dmd: &DmdResult, mass: f64) -> Vec<usize> {
    let total: f64 = dmd.coefficients.iter().map(|c| c.norm()).sum();
    let mut acc = 0.0;
    let mut out = Vec::new();
    for (j, c) in dmd.coefficients.iter().enumerate() {
        out.push(j);
        acc += c.norm();
        if acc >= mass * total {
            break;
        }
    }
    out
}

pub fn verdict(report: &SpectrumReport) -> Result<Verdict> {
    if report.dmd.is_empty() || report.top.is_empty() {
        return Err(Error::DegenerateData("empty spectrum".into()));
    }
    let rate = report
        .top
        .iter()
        .filter(|j| !report.near_one.contains(j))
        .map(|&j| report.dmd.eigenvalues[j].norm())
        .filter(|&m| m < 1.0)
        .fold(None, |acc: Option<f64>, m| Some(acc.map_or(m, |a| a.max(m))));
    let kind = if !report.unstable.is_empty() {
        VerdictKind::Unstable
    } else if !report.near_one.is_empty() {
        VerdictKind::ConvergingNearFixedPoint
    } else {
        VerdictKind::StillTransient
    };
    Ok(Verdict { kind, rate })
}
