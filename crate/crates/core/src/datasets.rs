//! MNIST IDX ingestion, stratified subsets, closed-form test signals and
//! random splits.

use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::Dataset;
use crate::scales::SampledSignal;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const DEFAULT_TRAIN: usize = 2000;
pub const DEFAULT_TEST: usize = 500;
pub const CLASSES: usize = 10;

/// Gray images scaled to `[0, 1]` with labels `0..=9`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
    pub labels: Vec<u8>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    fn select(&self, idx: &[usize]) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            pixels: idx.iter().flat_map(|&i| self.image(i).iter().copied()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn to_dataset(&self) -> Dataset {
        Dataset::new(self.pixels.clone(), self.labels.iter().map(|&l| usize::from(l)).collect(), self.rows * self.cols)
            .expect("image buffer matches labels")
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Parses an IDX image file (magic 0x803) and label file (magic 0x801);
/// gzip-compressed files are detected and inflated.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledImages> {
    parse_idx(&read_maybe_gz(images_path.as_ref())?, &read_maybe_gz(labels_path.as_ref())?)
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledImages> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("images: bad magic {magic:#010x}")));
    }
    let count = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let body = &images[16..];
    if body.len() != count * rows * cols {
        return Err(Error::Format(format!("images: expected {} pixel bytes, found {}", count * rows * cols, body.len())));
    }
    let magic = be_u32(labels, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!("labels: bad magic {magic:#010x}")));
    }
    let n_labels = be_u32(labels, 4, "labels")? as usize;
    let lbody = &labels[8..];
    if lbody.len() != n_labels {
        return Err(Error::Format(format!("labels: expected {n_labels} bytes, found {}", lbody.len())));
    }
    if n_labels != count {
        return Err(Error::Format(format!("{count} images but {n_labels} labels")));
    }
    if let Some(&l) = lbody.iter().find(|&&l| usize::from(l) >= CLASSES) {
        return Err(Error::Format(format!("label {l} out of range")));
    }
    Ok(LabeledImages {
        rows,
        cols,
        pixels: body.iter().map(|&p| f64::from(p) / 255.0).collect(),
        labels: lbody.to_vec(),
    })
}

/// Encodes images (pixels rounded to bytes) and labels as IDX files.
pub fn encode_idx(data: &LabeledImages) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(16 + data.pixels.len());
    for v in [IMAGES_MAGIC, data.len() as u32, data.rows as u32, data.cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(data.pixels.iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut labels = Vec::with_capacity(8 + data.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(data.len() as u32).to_be_bytes());
    labels.extend_from_slice(&data.labels);
    (images, labels)
}

/// Disjoint stratified train/test samples: each class contributes
/// `n/10` samples, with the remainder spread over the lowest classes.
pub fn subset(data: &LabeledImages, n_train: usize, n_test: usize, seed: u64) -> Result<(LabeledImages, LabeledImages)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASSES];
    for (i, &l) in data.labels.iter().enumerate() {
        by_class[usize::from(l)].push(i);
    }
    for v in &mut by_class {
        v.shuffle(&mut rng);
    }
    let quota = |n: usize, c: usize| n / CLASSES + usize::from(c < n % CLASSES);
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n_test);
    for (c, idx) in by_class.iter().enumerate() {
        let (a, b) = (quota(n_train, c), quota(n_test, c));
        if idx.len() < a + b {
            return invalid(format!("class {c} has {} samples, {} requested", idx.len(), a + b));
        }
        train.extend_from_slice(&idx[..a]);
        test.extend_from_slice(&idx[a..a + b]);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((data.select(&train), data.select(&test)))
}

/// The closed-form functions used for depth selection experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalId {
    Sin2Pi,
    Sin20Pi,
    Sin200Pi,
    Sin20PiTimes100,
    Cos2PiTimes40,
    Cos20PiTimes100,
    Sin2PiXSquared,
    Cubic,
    XPlusSin2PiX4,
    Cos2PiPlusSin20Pi,
    Cos20PiSin15Pi,
    Cos32PiCubed,
    FourTones,
    Sin50PiSin20PiCos15Pi,
    Sin40PiCos10PiPlus3Sin20Sin40,
    Sin2xCos32x,
}

impl SignalId {
    pub const ALL: [SignalId; 16] = [
        SignalId::Sin2Pi,
        SignalId::Sin20Pi,
        SignalId::Sin200Pi,
        SignalId::Sin20PiTimes100,
        SignalId::Cos2PiTimes40,
        SignalId::Cos20PiTimes100,
        SignalId::Sin2PiXSquared,
        SignalId::Cubic,
        SignalId::XPlusSin2PiX4,
        SignalId::Cos2PiPlusSin20Pi,
        SignalId::Cos20PiSin15Pi,
        SignalId::Cos32PiCubed,
        SignalId::FourTones,
        SignalId::Sin50PiSin20PiCos15Pi,
        SignalId::Sin40PiCos10PiPlus3Sin20Sin40,
        SignalId::Sin2xCos32x,
    ];

    /// Short command-line name.
    pub fn name(self) -> &'static str {
        match self {
            SignalId::Sin2Pi => "sin2pi",
            SignalId::Sin20Pi => "sin20pi",
            SignalId::Sin200Pi => "sin200pi",
            SignalId::Sin20PiTimes100 => "100sin20pi",
            SignalId::Cos2PiTimes40 => "40cos2pi",
            SignalId::Cos20PiTimes100 => "100cos20pi",
            SignalId::Sin2PiXSquared => "sin2pix2",
            SignalId::Cubic => "cubic",
            SignalId::XPlusSin2PiX4 => "x+sin2pix4",
            SignalId::Cos2PiPlusSin20Pi => "cos2pi+sin20pi",
            SignalId::Cos20PiSin15Pi => "cos20pi*sin15pi",
            SignalId::Cos32PiCubed => "cos32pi^3",
            SignalId::FourTones => "four-tones",
            SignalId::Sin50PiSin20PiCos15Pi => "sin50pi*sin20pi*cos15pi",
            SignalId::Sin40PiCos10PiPlus3Sin20Sin40 => "sin40pi*cos10pi+3sin20*sin40",
            SignalId::Sin2xCos32x => "sin2x*cos32x",
        }
    }

    /// Human-readable formula.
    pub fn formula(self) -> &'static str {
        match self {
            SignalId::Sin2Pi => "sin(2πx)",
            SignalId::Sin20Pi => "sin(20πx)",
            SignalId::Sin200Pi => "sin(200πx)",
            SignalId::Sin20PiTimes100 => "100 sin(20πx)",
            SignalId::Cos2PiTimes40 => "40 cos(2πx)",
            SignalId::Cos20PiTimes100 => "100 cos(20πx)",
            SignalId::Sin2PiXSquared => "sin(2πx²)",
            SignalId::Cubic => "x + x² + x³",
            SignalId::XPlusSin2PiX4 => "x + sin(2πx⁴)",
            SignalId::Cos2PiPlusSin20Pi => "cos(2πx) + sin(20πx)",
            SignalId::Cos20PiSin15Pi => "cos(20πx) sin(15πx)",
            SignalId::Cos32PiCubed => "cos(32πx)³",
            SignalId::FourTones => "sin(13πx) + sin(17πx) + sin(19πx) + sin(23πx)",
            SignalId::Sin50PiSin20PiCos15Pi => "sin(50πx) sin(20πx) cos(15πx)",
            SignalId::Sin40PiCos10PiPlus3Sin20Sin40 => "sin(40πx) cos(10πx) + 3 sin(20x) sin(40x)",
            SignalId::Sin2xCos32x => "sin(2x) cos(32x)",
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        use std::f64::consts::PI;
        let s = |k: f64| (k * PI * x).sin();
        let c = |k: f64| (k * PI * x).cos();
        match self {
            SignalId::Sin2Pi => s(2.0),
            SignalId::Sin20Pi => s(20.0),
            SignalId::Sin200Pi => s(200.0),
            SignalId::Sin20PiTimes100 => 100.0 * s(20.0),
            SignalId::Cos2PiTimes40 => 40.0 * c(2.0),
            SignalId::Cos20PiTimes100 => 100.0 * c(20.0),
            SignalId::Sin2PiXSquared => (2.0 * PI * x * x).sin(),
            SignalId::Cubic => x + x * x + x * x * x,
            SignalId::XPlusSin2PiX4 => x + (2.0 * PI * x.powi(4)).sin(),
            SignalId::Cos2PiPlusSin20Pi => c(2.0) + s(20.0),
            SignalId::Cos20PiSin15Pi => c(20.0) * s(15.0),
            SignalId::Cos32PiCubed => c(32.0).powi(3),
            SignalId::FourTones => s(13.0) + s(17.0) + s(19.0) + s(23.0),
            SignalId::Sin50PiSin20PiCos15Pi => s(50.0) * s(20.0) * c(15.0),
            SignalId::Sin40PiCos10PiPlus3Sin20Sin40 => s(40.0) * c(10.0) + 3.0 * (20.0 * x).sin() * (40.0 * x).sin(),
            SignalId::Sin2xCos32x => (2.0 * x).sin() * (32.0 * x).cos(),
        }
    }
}

impl FromStr for SignalId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SignalId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown function id {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub id: SignalId,
    pub domain: (f64, f64),
    pub n_samples: usize,
}

impl SignalSpec {
    /// `n` samples on `[0, 2)`.
    pub fn on_unit_window(id: SignalId, n_samples: usize) -> Self {
        Self { id, domain: (0.0, 2.0), n_samples }
    }
}

pub fn gen_signal(spec: &SignalSpec) -> Result<SampledSignal> {
    let id = spec.id;
    SampledSignal::from_fn(spec.domain.0, spec.domain.1, spec.n_samples, move |x| id.eval(x))
}

/// Uniform random partition into `round(0.75 n)` train and the remaining test indices.
pub fn split_75_25(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 4 {
        return invalid(format!("split needs at least 4 samples, got {n}"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (0.75 * n as f64).round() as usize;
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Writes `x,y` rows.
pub fn signal_csv(signal: &SampledSignal) -> String {
    let mut out = String::from("x,y\n");
    for (x, y) in signal.xs().iter().zip(signal.ys()) {
        out.push_str(&format!("{x:e},{y:e}\n"));
    }
    out
}

/// Reads `x,y` rows (a header line is skipped if it does not parse).
pub fn parse_signal_csv(text: &str) -> Result<SampledSignal> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parsed = (parts.next().map(str::trim).map(str::parse::<f64>), parts.next().map(str::trim).map(str::parse::<f64>));
        match parsed {
            (Some(Ok(x)), Some(Ok(y))) => {
                xs.push(x);
                ys.push(y);
            }
            _ if i == 0 => continue,
            _ => return Err(Error::Format(format!("line {}: expected x,y", i + 1))),
        }
    }
    SampledSignal::new(xs, ys)
}
