//! Weight pruning from the Koopman mode reconstruction of a training run.
//!
//! A reconstruction `Y` of the weights is built from the modes ranked at or
//! above the eigenvalue-one mode. Weights with `|Y| < ε` are pinned at zero;
//! the survivors either keep their reconstructed values (Algorithm 1) or are
//! freshly initialized (Algorithm 2).

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dmd::{self, SelectionPolicy};
use crate::error::{invalid, Error, Result};
use crate::monitor::{self, DEFAULT_NEAR_ONE};
use crate::nn::{self, Architecture, Dataset, InitScheme, LogEvent, Mask, Network, SnapshotLog, TrainConfig};

pub const DEFAULT_SPARSITY: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Survivors keep the reconstructed values.
    Reconstruction,
    /// Survivors are re-drawn from the initialization scheme.
    Reinit,
}

/// Where a mask came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub window: (usize, usize),
    pub modes: Vec<usize>,
    pub fallback_top1: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub mask: Mask,
    pub threshold: f64,
    /// Zeroed fraction of the prunable (non-exempt) positions.
    pub sparsity: f64,
    pub provenance: Option<Provenance>,
}

/// JSON sidecar written next to the bit-packed mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MaskSidecar {
    epsilon: f64,
    sparsity: f64,
    len: usize,
    zeroed: usize,
    provenance: Option<Provenance>,
}

impl PruneMask {
    pub fn len(&self) -> usize {
        self.mask.zeroed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.zeroed.is_empty()
    }

    /// Writes `<path>` (LE `u64` length, then bits LSB-first) and `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = vec![0u8; self.len().div_ceil(8)];
        for (i, &z) in self.mask.zeroed.iter().enumerate() {
            if z {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&(self.len() as u64).to_le_bytes())?;
        f.write_all(&bytes)?;
        f.flush()?;
        let sidecar = MaskSidecar {
            epsilon: self.threshold,
            sparsity: self.sparsity,
            len: self.len(),
            zeroed: self.mask.count(),
            provenance: self.provenance.clone(),
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        if bytes.len() < 8 {
            return Err(Error::Format("mask file shorter than its header".into()));
        }
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() != len.div_ceil(8) {
            return Err(Error::Format(format!("mask body has {} bytes for {len} bits", body.len())));
        }
        let zeroed = (0..len).map(|i| body[i / 8] >> (i % 8) & 1 == 1).collect();
        let sidecar: MaskSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        if sidecar.len != len {
            return Err(Error::Format("mask sidecar length disagrees with the mask file".into()));
        }
        Ok(Self { mask: Mask { zeroed }, threshold: sidecar.epsilon, sparsity: sidecar.sparsity, provenance: sidecar.provenance })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// A KMD reconstruction of the weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

/// Reconstructs the weights at epoch `window.end` from the modes up to and
/// including the eigenvalue-one mode of the window's weight DMD.
pub fn kmd_reconstruct_weights(log: &SnapshotLog, window: Range<usize>, rank_tolerance: f64) -> Result<Reconstruction> {
    if window.len() < 3 {
        return invalid(format!("window {window:?} has fewer than 3 snapshots"));
    }
    let snaps = monitor::weight_observable(log, window.clone())?;
    let result = dmd::dmd_rrr(&snaps, rank_tolerance)?;
    let near = result.nearest_to_one().filter(|&j| (result.eigenvalues[j] - 1.0).norm() < DEFAULT_NEAR_ONE);
    let (policy, fallback) = match near {
        Some(_) => (SelectionPolicy::ThroughEigenvalueOne, false),
        None => {
            warn!("no eigenvalue near one in window {window:?}; using the leading mode only");
            (SelectionPolicy::TopK(1), true)
        }
    };
    let selection = dmd::select_modes(&result, policy)?;
    let values = dmd::reconstruct_real(&result, &selection.indices, window.len() as u32)?;
    Ok(Reconstruction {
        values,
        provenance: Provenance { window: (window.start, window.end), modes: selection.indices, fallback_top1: fallback },
    })
}

/// Builds the mask `|Y| < ε` over non-exempt positions.
pub fn mask_for(y: &[f64], epsilon: f64, exempt: Option<&[bool]>) -> Result<PruneMask> {
    if !(epsilon >= 0.0) {
        return invalid(format!("threshold {epsilon} must be non-negative"));
    }
    if exempt.is_some_and(|e| e.len() != y.len()) {
        return invalid("exemption vector has the wrong length");
    }
    let is_exempt = |i: usize| exempt.is_some_and(|e| e[i]);
    let zeroed: Vec<bool> = y.iter().enumerate().map(|(i, v)| !is_exempt(i) && v.abs() < epsilon).collect();
    let eligible = (0..y.len()).filter(|&i| !is_exempt(i)).count();
    let count = zeroed.iter().filter(|&&z| z).count();
    let sparsity = if eligible == 0 { 0.0 } else { count as f64 / eligible as f64 };
    Ok(PruneMask { mask: Mask { zeroed }, threshold: epsilon, sparsity, provenance: None })
}

/// Algorithm 1: `W = Y` with masked entries set to zero.
pub fn prune_reconstruction(y: &[f64], epsilon: f64, exempt: Option<&[bool]>) -> Result<(Vec<f64>, PruneMask)> {
    let mask = mask_for(y, epsilon, exempt)?;
    let mut w = y.to_vec();
    mask.mask.apply(&mut w);
    Ok((w, mask))
}

/// Algorithm 2: fresh initialization with masked entries set to zero.
pub fn prune_reinit(
    y: &[f64],
    epsilon: f64,
    arch: &Architecture,
    scheme: InitScheme,
    seed: u64,
    exempt: Option<&[bool]>,
) -> Result<(Vec<f64>, PruneMask)> {
    if y.len() != arch.param_count {
        return invalid(format!("reconstruction has {} entries for {} parameters", y.len(), arch.param_count));
    }
    let mask = mask_for(y, epsilon, exempt)?;
    let mut w = nn::init_weights(arch, scheme, seed);
    mask.mask.apply(&mut w);
    Ok((w, mask))
}

/// Threshold whose mask zeroes `round(target · m)` of the `m` prunable entries
/// (fewer only when `|Y|` has ties at the cut).
pub fn threshold_for_sparsity(y: &[f64], target: f64, exempt: Option<&[bool]>) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return invalid(format!("target sparsity {target} outside [0, 1]"));
    }
    let mut mags: Vec<f64> = y
        .iter()
        .enumerate()
        .filter(|&(i, _)| !exempt.is_some_and(|e| e[i]))
        .map(|(_, v)| v.abs())
        .collect();
    if mags.iter().any(|v| v.is_nan()) {
        return invalid("reconstruction contains NaN");
    }
    mags.sort_by(f64::total_cmp);
    let k = (target * mags.len() as f64).round() as usize;
    Ok(match (k, mags.last()) {
        (0, _) | (_, None) => 0.0,
        (k, Some(&max)) if k >= mags.len() => next_up(max),
        (k, _) => mags[k],
    })
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        f64::from_bits(1)
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

/// How a pruning run is configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSpec {
    /// Epoch at which the mask is computed; the KMD window is `[0, epoch)`.
    pub epoch: usize,
    pub algorithm: Algorithm,
    /// Target sparsity; ignored when `epsilon` is set.
    pub sparsity: f64,
    pub epsilon: Option<f64>,
    /// Train until this epoch after pruning.
    pub until_epoch: usize,
    pub exempt_biases: bool,
    pub rank_tolerance: f64,
}

impl Default for PruneSpec {
    fn default() -> Self {
        Self {
            epoch: 100,
            algorithm: Algorithm::Reconstruction,
            sparsity: DEFAULT_SPARSITY,
            epsilon: None,
            until_epoch: 500,
            exempt_biases: true,
            rank_tolerance: dmd::DEFAULT_RANK_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub mask: PruneMask,
    /// Pruned weights at `spec.epoch` followed by the masked retraining.
    pub log: SnapshotLog,
}

/// Prunes a logged run at `spec.epoch` and retrains with the mask pinned.
///
/// Retraining starts from a fresh optimizer state and keeps the base run's
/// seed so batch orders match those of the unpruned run.
pub fn prune_and_retrain(base: &SnapshotLog, train: &Dataset, test: Option<&Dataset>, spec: &PruneSpec) -> Result<PruneOutcome> {
    if spec.until_epoch < spec.epoch {
        return invalid(format!("retraining ends at {} before the prune epoch {}", spec.until_epoch, spec.epoch));
    }
    let recon = kmd_reconstruct_weights(base, 0..spec.epoch, spec.rank_tolerance)?;
    let exempt = spec.exempt_biases.then(|| base.arch.bias_positions());
    let exempt = exempt.as_deref();
    let epsilon = match spec.epsilon {
        Some(e) => e,
        None => threshold_for_sparsity(&recon.values, spec.sparsity, exempt)?,
    };
    let (w, mut mask) = match spec.algorithm {
        Algorithm::Reconstruction => prune_reconstruction(&recon.values, epsilon, exempt)?,
        Algorithm::Reinit => {
            let cfg = &base.config;
            prune_reinit(&recon.values, epsilon, &base.arch, cfg.init_scheme, cfg.seed.wrapping_add(1), exempt)?
        }
    };
    mask.provenance = Some(recon.provenance);
    let mut net = Network::with_weights(base.arch.clone(), w)?;
    let config = TrainConfig { epochs: spec.until_epoch - spec.epoch, mask: Some(mask.mask.clone()), ..base.config.clone() };
    let mut log = nn::train_from(&mut net, train, test, &config, spec.epoch)?;
    log.events.insert(
        0,
        LogEvent {
            epoch: spec.epoch,
            kind: "prune".into(),
            detail: format!("{:?} epsilon={:e} sparsity={:.6}", spec.algorithm, mask.threshold, mask.sparsity),
        },
    );
    Ok(PruneOutcome { mask, log })
}
