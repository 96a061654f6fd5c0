//! Datasets: IDX ingestion, the synthetic 8×8 corpora, and a linear probe.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Activation, DenseNet, LossKind, NnError};
use crate::rng::seeded;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const SYNTH_SIDE: usize = 8;
pub const SYNTH_DIM: usize = SYNTH_SIDE * SYNTH_SIDE;
pub const SYNTH_CLASSES: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("idx parse error in field `{field}`: {reason}")]
    Idx { field: &'static str, reason: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Which samples may be used for training and which are reserved for evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<usize>,
    pub heldout: Vec<usize>,
}

impl SplitManifest {
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut all: Vec<usize> = self.train.iter().chain(&self.heldout).copied().collect();
        all.sort_unstable();
        all.len() == n && all.iter().enumerate().all(|(i, &v)| i == v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    samples: Vec<Vec<f64>>,
    labels: Vec<usize>,
    split: SplitManifest,
}

impl Dataset {
    /// Every sample goes to the training split.
    pub fn new(dim: usize, samples: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(i) = samples.iter().position(|s| s.len() != dim) {
            return Err(DataError::Invalid(format!("sample {i} does not have dimension {dim}")));
        }
        let split = SplitManifest {
            train: (0..samples.len()).collect(),
            heldout: Vec::new(),
        };
        Ok(Self { dim, samples, labels, split })
    }

    pub fn with_split(mut self, split: SplitManifest) -> Result<Self> {
        if !split.is_partition_of(self.len()) {
            return Err(DataError::Invalid("split is not a partition of the samples".into()));
        }
        self.split = split;
        Ok(self)
    }

    /// Class-stratified split: within each class, after a seeded shuffle, the
    /// last `round(heldout_fraction * count)` samples are held out.
    pub fn stratified_split(self, heldout_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&heldout_fraction) {
            return Err(DataError::Invalid(format!("heldout fraction {heldout_fraction}")));
        }
        let mut rng = seeded(seed);
        let mut train = Vec::new();
        let mut heldout = Vec::new();
        for class in self.classes() {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == class).collect();
            idx.shuffle(&mut rng);
            let n_held = (heldout_fraction * idx.len() as f64).round() as usize;
            let cut = idx.len() - n_held;
            train.extend_from_slice(&idx[..cut]);
            heldout.extend_from_slice(&idx[cut..]);
        }
        train.sort_unstable();
        heldout.sort_unstable();
        self.with_split(SplitManifest { train, heldout })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> &SplitManifest {
        &self.split
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn train_samples(&self) -> Vec<&[f64]> {
        self.split.train.iter().map(|&i| self.samples[i].as_slice()).collect()
    }

    pub fn heldout_samples(&self) -> Vec<&[f64]> {
        self.split.heldout.iter().map(|&i| self.samples[i].as_slice()).collect()
    }

    pub fn train_labels(&self) -> Vec<usize> {
        self.split.train.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn heldout_labels(&self) -> Vec<usize> {
        self.split.heldout.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

struct BeReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BeReader<'_> {
    fn u32(&mut self, field: &'static str) -> Result<u32> {
        let b = self.bytes.get(self.pos..self.pos + 4).ok_or(DataError::Idx {
            field,
            reason: format!("truncated at byte {}", self.pos),
        })?;
        self.pos += 4;
        Ok(u32::from_be_bytes(b.try_into().unwrap()))
    }

    fn raw(&mut self, n: usize, field: &'static str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(DataError::Idx {
            field,
            reason: format!("expected {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

/// Parses an IDX image file (`0x00000803`, dims n, rows, cols) and its label
/// file (`0x00000801`, dim n). Pixels are scaled to `value / 255`.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let mut img = BeReader { bytes: image_bytes, pos: 0 };
    let magic = img.u32("magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::Idx {
            field: "magic",
            reason: format!("image file magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = img.u32("image count")? as usize;
    let rows = img.u32("rows")? as usize;
    let cols = img.u32("cols")? as usize;
    let dim = rows * cols;
    let pixels = img.raw(n * dim, "pixels")?;

    let mut lab = BeReader { bytes: label_bytes, pos: 0 };
    let magic = lab.u32("magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::Idx {
            field: "magic",
            reason: format!("label file magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n_labels = lab.u32("label count")? as usize;
    if n_labels != n {
        return Err(DataError::Idx {
            field: "label count",
            reason: format!("{n_labels} labels for {n} images"),
        });
    }
    let labels = lab.raw(n, "labels")?.iter().map(|&l| l as usize).collect();

    let samples = if dim == 0 {
        vec![Vec::new(); n]
    } else {
        pixels
            .chunks_exact(dim)
            .map(|c| c.iter().map(|&p| p as f64 / 255.0).collect())
            .collect()
    };
    Dataset::new(dim, samples, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corpus {
    /// Line segments: three horizontal rows, three vertical columns, two
    /// diagonals and two half-length segments.
    Bars,
    /// Gaussian bumps: five centers times two widths.
    Blobs,
}

/// Class-balanced 8×8 corpus with `n_per_class` samples per class, pixels in `[0, 1]`.
pub fn make_synthetic(corpus: Corpus, n_per_class: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(DataError::Invalid("n_per_class must be at least 1".into()));
    }
    let mut rng = seeded(seed);
    let mut samples = Vec::with_capacity(SYNTH_CLASSES * n_per_class);
    let mut labels = Vec::with_capacity(SYNTH_CLASSES * n_per_class);
    for class in 0..SYNTH_CLASSES {
        for _ in 0..n_per_class {
            let img = match corpus {
                Corpus::Bars => bar_sample(class, &mut rng),
                Corpus::Blobs => blob_sample(class, &mut rng),
            };
            samples.push(img);
            labels.push(class);
        }
    }
    Dataset::new(SYNTH_DIM, samples, labels)
}

fn bar_sample<R: Rng + ?Sized>(class: usize, rng: &mut R) -> Vec<f64> {
    let mut img: Vec<f64> = (0..SYNTH_DIM).map(|_| rng.random_range(0.0..0.1)).collect();
    let intensity = rng.random_range(0.6..=1.0);
    // Full-length bars lose up to one pixel at either end.
    let start = rng.random_range(0..=1usize);
    let end = SYNTH_SIDE - rng.random_range(0..=1usize);
    let mut set = |r: usize, c: usize| img[r * SYNTH_SIDE + c] = intensity;
    match class {
        0..=2 => {
            let row = [1, 4, 6][class];
            (start..end).for_each(|c| set(row, c));
        }
        3..=5 => {
            let col = [1, 4, 6][class - 3];
            (start..end).for_each(|r| set(r, col));
        }
        6 => (start..end).for_each(|i| set(i, i)),
        7 => (start..end).for_each(|i| set(i, SYNTH_SIDE - 1 - i)),
        8 => (4..SYNTH_SIDE).for_each(|c| set(2, c)),
        _ => (4..SYNTH_SIDE).for_each(|r| set(r, 2)),
    }
    img
}

fn blob_sample<R: Rng + ?Sized>(class: usize, rng: &mut R) -> Vec<f64> {
    const CENTERS: [(f64, f64); 5] = [(2.0, 2.0), (2.0, 5.0), (5.0, 2.0), (5.0, 5.0), (3.5, 3.5)];
    let (cy, cx) = CENTERS[class % 5];
    let width = if class < 5 { 0.8 } else { 1.8 };
    let cy = cy + rng.random_range(-0.3..=0.3);
    let cx = cx + rng.random_range(-0.3..=0.3);
    let amp = rng.random_range(0.7..=1.0);
    (0..SYNTH_DIM)
        .map(|i| {
            let (r, c) = ((i / SYNTH_SIDE) as f64, (i % SYNTH_SIDE) as f64);
            let d2 = (r - cy).powi(2) + (c - cx).powi(2);
            let v = amp * (-d2 / (2.0 * width * width)).exp() + rng.random_range(0.0..0.05);
            v.min(1.0)
        })
        .collect()
}

/// Multinomial logistic regression on raw vectors, trained by seeded SGD.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    net: DenseNet,
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            lr: 0.1,
            seed: 0x5eed,
        }
    }
}

impl LinearProbe {
    pub fn train(samples: &[&[f64]], labels: &[usize], n_classes: usize, config: ProbeConfig) -> Result<Self> {
        if samples.is_empty() || samples.len() != labels.len() {
            return Err(DataError::Invalid("probe needs matching non-empty samples and labels".into()));
        }
        let mut rng = seeded(config.seed);
        let dim = samples[0].len();
        let mut net = DenseNet::random(dim, &[(n_classes, Activation::Softmax)], &mut rng)?;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut target = vec![0.0; n_classes];
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                target.iter_mut().for_each(|t| *t = 0.0);
                target[labels[i]] = 1.0;
                let trace = net.forward(samples[i])?;
                let (_, g) = net.backward(&trace, LossKind::CrossEntropy, &target)?;
                net.apply_sgd(&g, config.lr)?;
            }
        }
        Ok(Self { net })
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let p = self.net.predict(x)?;
        Ok(crate::lewis::argmax(&p, 0.0))
    }

    pub fn accuracy(&self, samples: &[&[f64]], labels: &[usize]) -> Result<f64> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0;
        for (x, &l) in samples.iter().zip(labels) {
            if self.predict(x)? == l {
                hits += 1;
            }
        }
        Ok(hits as f64 / samples.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [n, rows, cols] {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn hand_built_idx_blob() {
        let images = idx_images(2, 2, 2, &[0, 255, 128, 0, 51, 0, 0, 255]);
        // Byte-level check of the published layout: magic, then big-endian dims.
        assert_eq!(&images[..4], &[0, 0, 8, 3]);
        assert_eq!(&images[4..8], &[0, 0, 0, 2]);
        let ds = parse_idx(&images, &idx_labels(&[7, 3])).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.samples()[0], vec![0.0, 1.0, 128.0 / 255.0, 0.0]);
        assert_eq!(ds.samples()[1], vec![0.2, 0.0, 0.0, 1.0]);
        assert_eq!(ds.labels(), &[7, 3]);
    }

    #[test]
    fn label_magic_in_image_parser() {
        let err = parse_idx(&idx_labels(&[1]), &idx_labels(&[1])).unwrap_err();
        assert!(matches!(err, DataError::Idx { field: "magic", .. }));
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn zero_images_is_empty_dataset() {
        let ds = parse_idx(&idx_images(0, 28, 28, &[]), &idx_labels(&[])).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.dim(), 784);
    }

    #[test]
    fn truncation_and_count_mismatch() {
        let images = idx_images(2, 2, 2, &[0; 7]);
        assert!(matches!(parse_idx(&images, &idx_labels(&[0, 0])), Err(DataError::Idx { field: "pixels", .. })));
        let images = idx_images(2, 2, 2, &[0; 8]);
        assert!(matches!(
            parse_idx(&images, &idx_labels(&[0])),
            Err(DataError::Idx { field: "label count", .. })
        ));
        assert!(matches!(
            parse_idx(&images[..6], &idx_labels(&[0])),
            Err(DataError::Idx { field: "image count", .. })
        ));
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        for corpus in [Corpus::Bars, Corpus::Blobs] {
            let a = make_synthetic(corpus, 12, 5).unwrap();
            let b = make_synthetic(corpus, 12, 5).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.class_counts(), vec![12; 10]);
            assert!(a.samples().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_ne!(make_synthetic(Corpus::Bars, 3, 1).unwrap(), make_synthetic(Corpus::Bars, 3, 2).unwrap());
    }

    #[test]
    fn stratified_split_partitions() {
        let ds = make_synthetic(Corpus::Blobs, 10, 0).unwrap().stratified_split(0.2, 1).unwrap();
        assert!(ds.split().is_partition_of(ds.len()));
        assert_eq!(ds.split().heldout.len(), 20);
        let held = ds.heldout_labels();
        for c in 0..10 {
            assert_eq!(held.iter().filter(|&&l| l == c).count(), 2);
        }
    }

    #[test]
    fn bars_are_linearly_separable() {
        let ds = make_synthetic(Corpus::Bars, 40, 3).unwrap().stratified_split(0.25, 3).unwrap();
        let probe = LinearProbe::train(&ds.train_samples(), &ds.train_labels(), 10, ProbeConfig::default()).unwrap();
        let acc = probe.accuracy(&ds.heldout_samples(), &ds.heldout_labels()).unwrap();
        assert!(acc >= 0.9, "probe accuracy {acc}");
    }
}
