//! Labelled image sets: IDX ingestion, client splits, label flipping.
//!
//! Pixels are kept as the raw bytes found in the IDX file. Models read
//! them scaled by `1/255`, so a stored dataset and the values a model sees
//! are in exact correspondence, and a dataset can be content-addressed
//! without loss.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::DataError;
use crate::seed::derive_seed;

pub const MNIST_CLASSES: u8 = 10;
pub const MNIST_DIM: usize = 28 * 28;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    dim: usize,
    num_classes: u8,
    pixels: Vec<u8>,
    labels: Vec<u8>,
    provenance: String,
}

impl Dataset {
    pub fn new(
        dim: usize,
        num_classes: u8,
        pixels: Vec<u8>,
        labels: Vec<u8>,
        provenance: impl Into<String>,
    ) -> Result<Self, DataError> {
        if dim == 0 {
            return Err(DataError::Inconsistent("zero image dimension".into()));
        }
        if pixels.len() != dim * labels.len() {
            return Err(DataError::Inconsistent(format!(
                "{} pixels for {} images of dimension {dim}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            dim,
            num_classes,
            pixels,
            labels,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> u8 {
        self.num_classes
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.pixels[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], provenance: impl Into<String>) -> Dataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            dim: self.dim,
            num_classes: self.num_classes,
            pixels,
            labels,
            provenance: provenance.into(),
        }
    }

    /// Encodes the dataset as an IDX image file followed by an IDX label
    /// file, prefixed with the image file's length as a little-endian `u32`.
    /// Images are written with shape `n x 1 x dim` unless `dim` is 784.
    pub fn to_idx_bundle(&self) -> Vec<u8> {
        let (rows, cols) = if self.dim == MNIST_DIM {
            (28, 28)
        } else {
            (1, self.dim)
        };
        let n = self.len() as u32;
        let mut images = Vec::with_capacity(16 + self.pixels.len());
        for word in [IDX_IMAGES_MAGIC, n, rows as u32, cols as u32] {
            images.extend_from_slice(&word.to_be_bytes());
        }
        images.extend_from_slice(&self.pixels);

        let mut out = Vec::with_capacity(4 + images.len() + 8 + self.labels.len());
        out.extend_from_slice(&(images.len() as u32).to_le_bytes());
        out.extend_from_slice(&images);
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&n.to_be_bytes());
        out.extend_from_slice(&self.labels);
        out
    }

    pub fn from_idx_bundle(
        bytes: &[u8],
        num_classes: u8,
        provenance: impl Into<String>,
    ) -> Result<Self, DataError> {
        if bytes.len() < 4 {
            return Err(DataError::Truncated("bundle header".into()));
        }
        let image_len = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        let rest = &bytes[4..];
        if rest.len() < image_len {
            return Err(DataError::Truncated("bundle image section".into()));
        }
        parse_idx(
            &rest[..image_len],
            &rest[image_len..],
            num_classes,
            provenance,
        )
    }
}

fn read_be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| DataError::Truncated(format!("missing {what}")))
}

/// Parses an in-memory IDX image file and IDX label file.
pub fn parse_idx(
    images: &[u8],
    labels: &[u8],
    num_classes: u8,
    provenance: impl Into<String>,
) -> Result<Dataset, DataError> {
    let magic = read_be_u32(images, 0, "images magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let magic = read_be_u32(labels, 0, "labels magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let n_images = read_be_u32(images, 4, "image count")? as usize;
    let rows = read_be_u32(images, 8, "row count")? as usize;
    let cols = read_be_u32(images, 12, "column count")? as usize;
    let n_labels = read_be_u32(labels, 4, "label count")? as usize;
    if n_images != n_labels {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let dim = rows * cols;
    let pixels = &images[16..];
    if pixels.len() < n_images * dim {
        return Err(DataError::Truncated(format!(
            "{n_images} images of {dim} bytes need {} bytes, found {}",
            n_images * dim,
            pixels.len()
        )));
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < n_labels {
        return Err(DataError::Truncated(format!(
            "{n_labels} labels declared, {} present",
            label_bytes.len()
        )));
    }
    Dataset::new(
        dim,
        num_classes,
        pixels[..n_images * dim].to_vec(),
        label_bytes[..n_labels].to_vec(),
        provenance,
    )
}

/// Loads an MNIST-style IDX pair from disk.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| DataError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let images = read(images_path)?;
    let labels = read(labels_path)?;
    parse_idx(
        &images,
        &labels,
        MNIST_CLASSES,
        images_path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
    )
}

/// The canonical MNIST file names inside `dir`, for the train or test split.
pub fn mnist_paths(dir: &Path, train: bool) -> (std::path::PathBuf, std::path::PathBuf) {
    let prefix = if train { "train" } else { "t10k" };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    EqualRandom(usize),
    RatioRandom(Vec<u64>),
    WithFlip {
        base: Box<SplitSpec>,
        flip_probs: Vec<f64>,
    },
}

impl SplitSpec {
    pub fn client_count(&self) -> usize {
        match self {
            SplitSpec::EqualRandom(n) => *n,
            SplitSpec::RatioRandom(r) => r.len(),
            SplitSpec::WithFlip { base, .. } => base.client_count(),
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        match self {
            SplitSpec::EqualRandom(n) if *n < 2 => Err(DataError::InvalidSplit(format!(
                "need at least 2 clients, got {n}"
            ))),
            SplitSpec::RatioRandom(r) if r.is_empty() => {
                Err(DataError::InvalidSplit("no ratios given".into()))
            }
            SplitSpec::RatioRandom(r) if r.contains(&0) => {
                Err(DataError::InvalidSplit("ratios must be positive".into()))
            }
            SplitSpec::WithFlip { base, flip_probs } => {
                base.validate()?;
                if flip_probs.len() != base.client_count() {
                    return Err(DataError::InvalidSplit(format!(
                        "{} flip probabilities for {} clients",
                        flip_probs.len(),
                        base.client_count()
                    )));
                }
                if let Some(&p) = flip_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                    return Err(DataError::InvalidProbability(p));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Largest-remainder apportionment of `total` items over `ratios`.
/// Ties in the remainder go to the earlier entry.
pub fn apportion(total: usize, ratios: &[u64]) -> Vec<usize> {
    let sum: u128 = ratios.iter().map(|&r| r as u128).sum();
    let mut sizes = Vec::with_capacity(ratios.len());
    let mut remainders = Vec::with_capacity(ratios.len());
    for (i, &r) in ratios.iter().enumerate() {
        let num = total as u128 * r as u128;
        sizes.push((num / sum) as usize);
        remainders.push((num % sum, i));
    }
    let leftover = total - sizes.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(leftover) {
        sizes[i] += 1;
    }
    sizes
}

/// Index sets for each client: consecutive runs of one seeded permutation.
pub fn split_indices(
    len: usize,
    spec: &SplitSpec,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    spec.validate()?;
    if len == 0 {
        return Err(DataError::EmptyDataset);
    }
    let clients = spec.client_count();
    if len < clients {
        return Err(DataError::InvalidSplit(format!(
            "{len} samples cannot cover {clients} clients"
        )));
    }
    let sizes = match spec {
        SplitSpec::EqualRandom(n) => apportion(len, &vec![1; *n]),
        SplitSpec::RatioRandom(r) => apportion(len, r),
        SplitSpec::WithFlip { base, .. } => return split_indices(len, base, seed),
    };
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for size in sizes {
        parts.push(order[at..at + size].to_vec());
        at += size;
    }
    Ok(parts)
}

pub fn split(data: &Dataset, spec: &SplitSpec, seed: u64) -> Result<Vec<Dataset>, DataError> {
    let parts = split_indices(data.len(), spec, seed)?;
    let n = parts.len();
    let mut out: Vec<Dataset> = parts
        .iter()
        .enumerate()
        .map(|(i, idx)| {
            data.subset(
                idx,
                format!("{} split {}/{n} seed={seed}", data.provenance, i + 1),
            )
        })
        .collect();
    if let SplitSpec::WithFlip { flip_probs, .. } = spec {
        for (i, (d, &p)) in out.iter_mut().zip(flip_probs).enumerate() {
            *d = flip_labels(
                d,
                p,
                derive_seed(&[b"flip", &seed.to_le_bytes(), &(i as u64).to_le_bytes()]),
            )?;
        }
    }
    Ok(out)
}

/// The corruption `flip_labels` applies: `round(p * n)` distinct indices,
/// each paired with a label drawn uniformly from all classes.
pub fn flip_plan(
    n: usize,
    num_classes: u8,
    p: f64,
    seed: u64,
) -> Result<Vec<(usize, u8)>, DataError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(DataError::InvalidProbability(p));
    }
    let count = (p * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = index::sample(&mut rng, n, count.min(n));
    Ok(chosen
        .into_iter()
        .map(|i| (i, rng.random_range(0..num_classes)))
        .collect())
}

pub fn flip_labels(data: &Dataset, p: f64, seed: u64) -> Result<Dataset, DataError> {
    let plan = flip_plan(data.len(), data.num_classes, p, seed)?;
    let mut out = data.clone();
    for (i, label) in plan {
        out.labels[i] = label;
    }
    if p > 0.0 {
        out.provenance = format!("{} flip p={p} seed={seed}", data.provenance);
    }
    Ok(out)
}

/// A seeded fraction of `data`, kept in original order.
pub fn subsample(data: &Dataset, fraction: f64, seed: u64) -> Result<Dataset, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::InvalidProbability(fraction));
    }
    let keep = ((fraction * data.len() as f64).round() as usize).max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut idx = order[..keep.min(data.len())].to_vec();
    idx.sort_unstable();
    Ok(data.subset(
        &idx,
        format!("{} subsample {fraction} seed={seed}", data.provenance),
    ))
}

/// A learnable synthetic classification task: every class has a sparse
/// binary prototype, and samples are noisy copies of their class prototype.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    dim: usize,
    num_classes: u8,
    prototypes: Vec<Vec<bool>>,
}

impl SyntheticTask {
    pub fn new(dim: usize, num_classes: u8, task_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
        let prototypes = (0..num_classes)
            .map(|_| (0..dim).map(|_| rng.random_bool(0.3)).collect())
            .collect();
        Self {
            dim,
            num_classes,
            prototypes,
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pixels = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let label = rng.random_range(0..self.num_classes);
            for &on in &self.prototypes[label as usize] {
                let lit = if on {
                    rng.random_bool(0.75)
                } else {
                    rng.random_bool(0.12)
                };
                pixels.push(if lit { rng.random_range(128..=255) } else { 0 });
            }
            labels.push(label);
        }
        Dataset {
            dim: self.dim,
            num_classes: self.num_classes,
            pixels,
            labels,
            provenance: format!("synthetic dim={} seed={seed}", self.dim),
        }
    }
}

/// `n` samples of the synthetic task with task seed 0.
pub fn synthetic(n: usize, dim: usize, num_classes: u8, seed: u64) -> Dataset {
    SyntheticTask::new(dim, num_classes, 0).sample(n, seed)
}
