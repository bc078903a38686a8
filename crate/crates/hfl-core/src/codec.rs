//! Client-side model compression: magnitude sparsification followed by a
//! per-cluster random projection of each flattened layer.
//!
//! A layer of `G` parameters is first thresholded (`|P| >= mu` keeps, else 0)
//! and then multiplied by the cluster's `g x G` projection matrix, `g < G`.
//! The output layer is never compressed; it stays on the client. Because the
//! projection is linear, compressed layers from one cluster can be summed
//! component-wise and recovered in a single solve.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{LayerRole, ModelParams};
use crate::seed;

/// A thresholded layer: same length as the input, entries below the
/// producing `mu` zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLayer {
    pub values: Vec<f64>,
}

impl SparseLayer {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nonzeros(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

/// Zero every entry with magnitude below `mu`; entries with `|P| >= mu` are
/// kept unchanged. Length is preserved.
pub fn sparsify(values: &[f64], mu: f64) -> Result<SparseLayer> {
    if !(mu >= 0.0) {
        return Err(Error::usage(format!("sparsify threshold must be >= 0, got {mu}")));
    }
    Ok(SparseLayer {
        values: values
            .iter()
            .map(|&v| if v.abs() >= mu { v } else { 0.0 })
            .collect(),
    })
}

/// Smallest threshold whose kept fraction is at most `density`.
///
/// With distinct magnitudes the kept fraction lands in
/// `[max(density - 1/G, 0), density]`. Ties at the returned threshold are all
/// kept (the `>=` in the sparsification rule), so equal-magnitude vectors can
/// keep everything; that is the documented tie behavior.
pub fn mu_for_density(values: &[f64], density: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::usage("mu_for_density requires a nonempty vector"));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::usage(format!("density must be in (0, 1], got {density}")));
    }
    let g = values.len();
    let keep = (density * g as f64).floor() as usize;
    if keep >= g {
        return Ok(0.0);
    }
    let mut magnitudes: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    magnitudes.sort_by(|a, b| b.partial_cmp(a).expect("finite magnitudes"));
    if keep == 0 {
        // Nothing may survive: step just above the largest magnitude.
        return Ok(next_above(magnitudes[0]));
    }
    Ok(magnitudes[keep - 1])
}

fn next_above(v: f64) -> f64 {
    if v == 0.0 {
        f64::MIN_POSITIVE
    } else {
        f64::from_bits(v.to_bits() + 1)
    }
}

/// How layers are thresholded before projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SparsifyMode {
    /// One fixed threshold for every layer.
    FixedMu(f64),
    /// Derive each layer's threshold from a target kept fraction.
    Density(f64),
}

/// Seeded `rows x cols` matrix with i.i.d. Gaussian entries of variance
/// `1/rows` — the measurement-matrix ensemble the recovery solver assumes.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (rows as f64).sqrt();
    let mut m = DMatrix::<f64>::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

/// The per-(cluster, layer) projection matrices, all derived from one seed.
///
/// Every member of a cluster uses the same matrix for a given layer, and
/// regenerating a bank from the same seed is bit-identical. Entries are
/// i.i.d. Gaussian with variance `1/g_k` where `g_k = ceil(ratio * G_k)`.
#[derive(Debug, Clone)]
pub struct CompressionBank {
    pub ratio: f64,
    pub seed: u64,
    matrices: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl CompressionBank {
    /// Generate matrices for every non-output layer size in `body_param_counts`
    /// and every cluster id.
    pub fn generate(
        body_param_counts: &[usize],
        cluster_ids: &[usize],
        ratio: f64,
        bank_seed: u64,
    ) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::usage(format!("compression ratio must be in (0, 1), got {ratio}")));
        }
        let mut matrices = BTreeMap::new();
        for &cluster in cluster_ids {
            for (k, &big_g) in body_param_counts.iter().enumerate() {
                let g = compressed_len(ratio, big_g);
                if g >= big_g {
                    return Err(Error::Config(format!(
                        "layer {k}: ceil({ratio} * {big_g}) = {g} does not compress"
                    )));
                }
                let m = gaussian_matrix(g, big_g, seed::derive(bank_seed, cluster as u64, k as u64));
                matrices.insert((cluster, k), m);
            }
        }
        Ok(Self {
            ratio,
            seed: bank_seed,
            matrices,
        })
    }

    pub fn matrix(&self, cluster: usize, layer: usize) -> Option<&DMatrix<f64>> {
        self.matrices.get(&(cluster, layer))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(usize, usize), &DMatrix<f64>)> {
        self.matrices.iter()
    }
}

/// Compressed length for a layer of `big_g` parameters.
pub fn compressed_len(ratio: f64, big_g: usize) -> usize {
    (ratio * big_g as f64).ceil() as usize
}

/// Project a sparse layer: the exact matrix-vector product `phi * layer`.
pub fn compress(sparse: &SparseLayer, phi: &DMatrix<f64>) -> Result<Vec<f64>> {
    if phi.ncols() != sparse.len() {
        return Err(Error::shape(phi.ncols(), sparse.len(), "projection input length"));
    }
    let x = DVector::from_column_slice(&sparse.values);
    Ok((phi * x).as_slice().to_vec())
}

/// A model after sparsify-then-project, ready for in-cluster aggregation.
/// Holds one short vector per non-output layer plus the shape metadata the
/// server needs to rebuild layer blocks. The output layer is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedModel {
    pub cluster: usize,
    /// Projected vectors, one per non-output layer, in layer order.
    pub layers: Vec<Vec<f64>>,
    /// `(in_dim, out_dim)` of each compressed layer.
    pub body_shapes: Vec<(usize, usize)>,
    /// Nonzeros each sparse layer carried into the projection; summed across
    /// a cluster this feeds the recovery feasibility guard.
    pub sparse_nonzeros: Vec<usize>,
}

impl CompressedModel {
    /// Component-wise sum with another member's compressed model (the
    /// in-cluster aggregation step).
    pub fn accumulate(&mut self, other: &CompressedModel) -> Result<()> {
        if other.cluster != self.cluster {
            return Err(Error::usage(format!(
                "cannot aggregate across clusters {} and {}",
                self.cluster, other.cluster
            )));
        }
        if other.layers.len() != self.layers.len() {
            return Err(Error::shape(self.layers.len(), other.layers.len(), "layer count"));
        }
        for (k, (mine, theirs)) in self.layers.iter_mut().zip(&other.layers).enumerate() {
            if mine.len() != theirs.len() {
                return Err(Error::shape(mine.len(), theirs.len(), format!("layer {k} length")));
            }
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
        for (mine, theirs) in self.sparse_nonzeros.iter_mut().zip(&other.sparse_nonzeros) {
            *mine += theirs;
        }
        Ok(())
    }
}

/// Sparsify and project every non-output layer of a model, in layer order.
pub fn compress_model(
    model: &ModelParams,
    bank: &CompressionBank,
    cluster: usize,
    mode: &SparsifyMode,
) -> Result<CompressedModel> {
    let mut layers = Vec::new();
    let mut body_shapes = Vec::new();
    let mut sparse_nonzeros = Vec::new();
    for (k, layer) in model.body().iter().enumerate() {
        debug_assert_eq!(layer.role, LayerRole::Hidden);
        let phi = bank.matrix(cluster, k).ok_or_else(|| {
            Error::Config(format!("compression bank has no matrix for cluster {cluster}, layer {k}"))
        })?;
        let mu = match mode {
            SparsifyMode::FixedMu(mu) => *mu,
            SparsifyMode::Density(s) => mu_for_density(layer.as_flat(), *s)?,
        };
        let sparse = sparsify(layer.as_flat(), mu)?;
        sparse_nonzeros.push(sparse.nonzeros());
        layers.push(compress(&sparse, phi)?);
        body_shapes.push((layer.in_dim, layer.out_dim));
    }
    Ok(CompressedModel {
        cluster,
        layers,
        body_shapes,
        sparse_nonzeros,
    })
}
