//! Client datasets: synthetic blob generation, IDX (MNIST) loading, and
//! IID partitioning across clients.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::topology::ClientId;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const IDX_CLASS_COUNT: usize = 10;

/// A labelled feature set. Features are fixed-width real vectors, labels are
/// class indices in `[0, class_count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::usage(format!(
                "feature/label count mismatch: {} vs {}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::usage(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        let width = features.first().map(|f| f.len()).unwrap_or(0);
        for f in &features {
            if f.len() != width {
                return Err(Error::shape(width, f.len(), "ragged feature vectors"));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::usage("non-finite feature value"));
            }
        }
        Ok(Self {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature width; 0 for an empty dataset.
    pub fn feature_dim(&self) -> usize {
        self.features.first().map(|f| f.len()).unwrap_or(0)
    }
}

/// The per-client split of a training pool plus the shared holdout set.
///
/// Shards are disjoint by construction and together cover the whole pool.
#[derive(Debug, Clone)]
pub struct Partition {
    pub shards: BTreeMap<ClientId, Dataset>,
    pub holdout: Dataset,
}

impl Partition {
    pub fn shard(&self, id: ClientId) -> Option<&Dataset> {
        self.shards.get(&id)
    }

    pub fn total_train_samples(&self) -> usize {
        self.shards.values().map(|d| d.len()).sum()
    }
}

/// Generate Gaussian class blobs: one seeded centroid per class, samples
/// scattered around it with standard deviation `cluster_spread`.
///
/// Labels are assigned round-robin, so classes are balanced to within one
/// sample. The same seed always yields a bit-identical dataset.
pub fn synth_generate(
    seed: u64,
    n_samples: usize,
    n_features: usize,
    n_classes: usize,
    cluster_spread: f64,
) -> Result<Dataset> {
    if n_samples == 0 || n_features == 0 || n_classes == 0 {
        return Err(Error::usage(
            "synth_generate requires positive sample, feature, and class counts",
        ));
    }
    if !(cluster_spread >= 0.0) {
        return Err(Error::usage("cluster_spread must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..n_features).map(|_| rng.sample(StandardNormal)).collect())
        .collect();

    let mut features = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let label = i % n_classes;
        let point: Vec<f64> = centroids[label]
            .iter()
            .map(|&c| c + cluster_spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        features.push(point);
        labels.push(label);
    }
    Dataset::new(features, labels, n_classes)
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            format!("truncated IDX header while reading {what}"),
        )));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Load an MNIST-layout IDX image/label file pair.
///
/// Pixels are scaled to `[0, 1]`; at most `limit` samples are read. The two
/// files must agree on the sample count.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: usize,
) -> Result<Dataset> {
    let mut image_bytes = Vec::new();
    File::open(images_path.as_ref())?.read_to_end(&mut image_bytes)?;
    let mut label_bytes = Vec::new();
    File::open(labels_path.as_ref())?.read_to_end(&mut label_bytes)?;

    let image_magic = read_be_u32(&image_bytes, 0, "image magic")?;
    if image_magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic 0x{image_magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )));
    }
    let label_magic = read_be_u32(&label_bytes, 0, "label magic")?;
    if label_magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic 0x{label_magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )));
    }

    let n_images = read_be_u32(&image_bytes, 4, "image count")? as usize;
    let rows = read_be_u32(&image_bytes, 8, "row count")? as usize;
    let cols = read_be_u32(&image_bytes, 12, "column count")? as usize;
    let n_labels = read_be_u32(&label_bytes, 4, "label count")? as usize;
    if n_images != n_labels {
        return Err(Error::Format(format!(
            "image/label count mismatch: {n_images} vs {n_labels}"
        )));
    }

    let take = limit.min(n_images);
    let pixels = rows * cols;
    let need_images = 16 + take * pixels;
    if image_bytes.len() < need_images {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            format!(
                "image file truncated: need {need_images} bytes, have {}",
                image_bytes.len()
            ),
        )));
    }
    let need_labels = 8 + take;
    if label_bytes.len() < need_labels {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            format!(
                "label file truncated: need {need_labels} bytes, have {}",
                label_bytes.len()
            ),
        )));
    }

    let mut features = Vec::with_capacity(take);
    let mut labels = Vec::with_capacity(take);
    for i in 0..take {
        let start = 16 + i * pixels;
        features.push(
            image_bytes[start..start + pixels]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect(),
        );
        let y = label_bytes[8 + i] as usize;
        if y >= IDX_CLASS_COUNT {
            return Err(Error::Format(format!("label {y} out of range [0, 10)")));
        }
        labels.push(y);
    }
    Dataset::new(features, labels, IDX_CLASS_COUNT)
}

/// Split a training pool across clients with a seeded shuffle.
///
/// Shard sizes differ by at most one; shards are disjoint by sample index and
/// jointly cover the pool. Extra samples go to the lowest client ids.
pub fn partition_iid(
    train: &Dataset,
    holdout: Dataset,
    client_ids: &[ClientId],
    seed: u64,
) -> Result<Partition> {
    if client_ids.is_empty() {
        return Err(Error::usage("partition_iid requires at least one client"));
    }
    if train.len() < client_ids.len() {
        return Err(Error::usage(format!(
            "cannot split {} samples across {} clients",
            train.len(),
            client_ids.len()
        )));
    }

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut ids: Vec<ClientId> = client_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != client_ids.len() {
        return Err(Error::usage("duplicate client ids in partition request"));
    }

    let base = train.len() / ids.len();
    let extra = train.len() % ids.len();
    let mut shards = BTreeMap::new();
    let mut cursor = 0usize;
    for (slot, id) in ids.iter().enumerate() {
        let size = base + usize::from(slot < extra);
        let take = &order[cursor..cursor + size];
        cursor += size;
        let features = take.iter().map(|&i| train.features[i].clone()).collect();
        let labels = take.iter().map(|&i| train.labels[i]).collect();
        shards.insert(*id, Dataset::new(features, labels, train.class_count)?);
    }
    Ok(Partition { shards, holdout })
}
