//! Server-side decompression: recover aggregated sparse layers from their
//! projections by equality-constrained L1 minimization (basis pursuit),
//!
//! `min ||x||_1  subject to  phi * x = y`,
//!
//! solved with ADMM. The x-update is an exact projection onto the affine
//! feasible set using a cached Cholesky factorization of `phi * phi^T`; the
//! z-update is soft thresholding. Because the projection is linear, the sum
//! of several compressed models recovers the sum of the sparse models in a
//! single solve, which is what makes in-cluster aggregation viable; see
//! [`theorem1_check`] for the executable form of that equivalence.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::codec::{CompressedModel, CompressionBank};
use crate::error::{Error, Result};
use crate::nn::{LayerBlock, LayerRole};

/// ADMM solver settings: stopping tolerances, iteration cap, and penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmSettings {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iter: usize,
    pub penalty: f64,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            max_iter: 5000,
            penalty: 1.0,
        }
    }
}

/// One equality-constrained L1 problem instance.
#[derive(Debug, Clone)]
pub struct BasisPursuitProblem {
    pub phi: DMatrix<f64>,
    pub y: Vec<f64>,
    pub settings: AdmmSettings,
}

/// Solver output. `x_hat` is the feasible iterate, so a converged result
/// satisfies `||phi x_hat - y|| / max(1, ||y||) <= 1e-6`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub x_hat: Vec<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
}

/// A basis pursuit solver with the projection factorization cached, so one
/// `phi` can serve many right-hand sides (one per round).
#[derive(Debug, Clone)]
pub struct BasisPursuitSolver {
    phi: DMatrix<f64>,
    gram_chol: Cholesky<f64, Dyn>,
    settings: AdmmSettings,
}

impl BasisPursuitSolver {
    pub fn new(phi: DMatrix<f64>, settings: AdmmSettings) -> Result<Self> {
        let (g, big_g) = (phi.nrows(), phi.ncols());
        if g == 0 || big_g == 0 || g >= big_g {
            return Err(Error::usage(format!(
                "basis pursuit needs an underdetermined system, got {g} x {big_g}"
            )));
        }
        if !(settings.penalty > 0.0) {
            return Err(Error::usage("ADMM penalty must be > 0"));
        }
        let gram = &phi * phi.transpose();
        let gram_chol = Cholesky::new(gram).ok_or_else(|| {
            Error::Factorization(format!(
                "phi * phi^T ({g} x {g}) is not positive definite; phi is rank deficient"
            ))
        })?;
        // The factorization can numerically succeed on a singular Gram
        // matrix; near-zero pivots mean phi is rank deficient.
        let diag = gram_chol.l_dirty();
        let mut max_pivot = 0.0f64;
        let mut min_pivot = f64::INFINITY;
        for i in 0..g {
            let p = diag[(i, i)];
            if !p.is_finite() {
                min_pivot = 0.0;
                break;
            }
            max_pivot = max_pivot.max(p);
            min_pivot = min_pivot.min(p);
        }
        if min_pivot <= 1e-6 * max_pivot {
            return Err(Error::Factorization(format!(
                "phi is numerically rank deficient (pivot ratio {:.3e})",
                min_pivot / max_pivot
            )));
        }
        Ok(Self {
            phi,
            gram_chol,
            settings,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.phi.nrows(), self.phi.ncols())
    }

    /// Projection onto `{x : phi x = y}`: `v - phi^T (phi phi^T)^{-1} (phi v - y)`.
    fn project(&self, v: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut residual = &self.phi * v;
        residual -= y;
        let correction = self.gram_chol.solve(&residual);
        v - self.phi.tr_mul(&correction)
    }

    /// Solve for one right-hand side. Deterministic: zero initialization and
    /// a fixed operation order. Hitting the iteration cap returns the best
    /// iterate with `converged = false`; the caller decides what to do.
    pub fn solve(&self, y: &[f64]) -> Result<RecoveryResult> {
        let g = self.phi.nrows();
        if y.len() != g {
            return Err(Error::shape(g, y.len(), "basis pursuit rhs length"));
        }
        let big_g = self.phi.ncols();
        let y = DVector::from_column_slice(y);
        let s = &self.settings;
        let threshold = 1.0 / s.penalty;
        let sqrt_n = (big_g as f64).sqrt();

        let mut x = DVector::<f64>::zeros(big_g);
        let mut z = DVector::<f64>::zeros(big_g);
        let mut u = DVector::<f64>::zeros(big_g);
        let mut primal = f64::INFINITY;
        let mut dual = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;

        for iter in 1..=s.max_iter {
            iterations = iter;
            let v = &z - &u;
            x = self.project(&v, &y);
            let w = &x + &u;
            let z_prev = z;
            z = w.map(|t| soft_threshold(t, threshold));
            u = &w - &z;

            primal = (&x - &z).norm();
            dual = s.penalty * (&z - &z_prev).norm();
            let eps_primal = sqrt_n * s.tol_primal + s.tol_primal * x.norm().max(z.norm());
            let eps_dual = sqrt_n * s.tol_dual + s.tol_dual * (s.penalty * u.norm());
            if primal <= eps_primal && dual <= eps_dual {
                converged = true;
                break;
            }
        }

        Ok(RecoveryResult {
            x_hat: x.as_slice().to_vec(),
            iterations,
            primal_residual: primal,
            dual_residual: dual,
            converged,
        })
    }
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// One-shot basis pursuit (factorizes, solves, discards).
pub fn basis_pursuit(problem: &BasisPursuitProblem) -> Result<RecoveryResult> {
    BasisPursuitSolver::new(problem.phi.clone(), problem.settings)?.solve(&problem.y)
}

/// Normalized feasibility error `||phi x - y||_2 / max(1, ||y||_2)`.
pub fn feasibility_error(phi: &DMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    let xv = DVector::from_column_slice(x);
    let yv = DVector::from_column_slice(y);
    (phi * xv - &yv).norm() / yv.norm().max(1.0)
}

/// Per-layer solver diagnostics carried into round metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerRecovery {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub feasibility: f64,
    pub converged: bool,
}

/// A cluster's recovered (non-output) layers plus solver diagnostics.
#[derive(Debug, Clone)]
pub struct RecoveredBody {
    pub layers: Vec<LayerBlock>,
    pub reports: Vec<LayerRecovery>,
}

impl RecoveredBody {
    pub fn worst_feasibility(&self) -> f64 {
        self.reports.iter().map(|r| r.feasibility).fold(0.0, f64::max)
    }

    pub fn nonconverged(&self) -> usize {
        self.reports.iter().filter(|r| !r.converged).count()
    }
}

/// All solvers for a compression bank, factorized once and reused across
/// rounds; read-only after construction.
pub struct DecompressorBank {
    solvers: BTreeMap<(usize, usize), BasisPursuitSolver>,
}

impl DecompressorBank {
    pub fn new(bank: &CompressionBank, settings: AdmmSettings) -> Result<Self> {
        let mut solvers = BTreeMap::new();
        for (&key, phi) in bank.entries() {
            solvers.insert(key, BasisPursuitSolver::new(phi.clone(), settings)?);
        }
        Ok(Self { solvers })
    }

    /// Decompress one cluster's aggregated model: per layer, a single basis
    /// pursuit solve on the summed projection. With `normalize`, the
    /// recovered sum is divided by the member count `c`, turning the
    /// in-cluster sum into an in-cluster mean. Non-convergence is reported,
    /// not fatal: the best iterate is still used.
    pub fn recover_cluster(
        &self,
        aggregated: &CompressedModel,
        member_count: usize,
        normalize: bool,
    ) -> Result<RecoveredBody> {
        if member_count == 0 {
            return Err(Error::usage("recover_cluster requires member_count >= 1"));
        }
        let mut layers = Vec::new();
        let mut reports = Vec::new();
        for (k, y) in aggregated.layers.iter().enumerate() {
            let solver = self.solvers.get(&(aggregated.cluster, k)).ok_or_else(|| {
                Error::Config(format!(
                    "no solver for cluster {}, layer {k}",
                    aggregated.cluster
                ))
            })?;
            let (g, big_g) = solver.dims();
            if y.len() != g {
                return Err(Error::shape(g, y.len(), format!("layer {k} compressed length")));
            }
            let result = solver.solve(y)?;
            let feasibility = feasibility_error(&solver.phi, &result.x_hat, y);
            reports.push(LayerRecovery {
                iterations: result.iterations,
                primal_residual: result.primal_residual,
                dual_residual: result.dual_residual,
                feasibility,
                converged: result.converged,
            });
            let mut values = result.x_hat;
            if normalize {
                let scale = 1.0 / member_count as f64;
                for v in values.iter_mut() {
                    *v *= scale;
                }
            }
            let (in_dim, out_dim) = aggregated.body_shapes[k];
            debug_assert_eq!(out_dim * (in_dim + 1), big_g);
            layers.push(LayerBlock::from_flat(in_dim, out_dim, LayerRole::Hidden, values)?);
        }
        Ok(RecoveredBody { layers, reports })
    }
}

/// Outcome of the two decompression routes on the same planted models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Report {
    /// Error of per-model recoveries summed, against the true sum.
    pub lhs_error: f64,
    /// Error of the single solve on the summed projection, against the true sum.
    pub rhs_error: f64,
    pub equivalent: bool,
    /// True when the union support exceeds `g / 4`; recovery quality is not
    /// promised past that point.
    pub support_guard_exceeded: bool,
}

/// Run both decompression routes on known sparse models and compare.
///
/// Route (a) solves one basis pursuit per model and sums the recoveries;
/// route (b) solves once on the summed projection. Errors are L2 distances
/// to the true sum, normalized by `max(1, ||true sum||)` so that exact
/// cancellation (`A = -B`) stays well-defined.
pub fn theorem1_check(
    models: &[Vec<f64>],
    phi: &DMatrix<f64>,
    tol: f64,
    settings: AdmmSettings,
) -> Result<Theorem1Report> {
    if models.len() < 2 {
        return Err(Error::usage("theorem1_check needs at least 2 models"));
    }
    let big_g = phi.ncols();
    for m in models {
        if m.len() != big_g {
            return Err(Error::shape(big_g, m.len(), "model length"));
        }
    }
    let union_support = (0..big_g)
        .filter(|&i| models.iter().any(|m| m[i] != 0.0))
        .count();
    let support_guard_exceeded = union_support > phi.nrows() / 4;

    let solver = BasisPursuitSolver::new(phi.clone(), settings)?;
    let mut true_sum = DVector::<f64>::zeros(big_g);
    for m in models {
        true_sum += DVector::from_column_slice(m);
    }
    let scale = true_sum.norm().max(1.0);

    // Route (a): P1 per model, then sum.
    let mut summed = DVector::<f64>::zeros(big_g);
    for m in models {
        let y = phi * DVector::from_column_slice(m);
        let r = solver.solve(y.as_slice())?;
        summed += DVector::from_column_slice(&r.x_hat);
    }
    let lhs_error = (&summed - &true_sum).norm() / scale;

    // Route (b): P2 once on the aggregated projection.
    let y_sum = phi * &true_sum;
    let r = solver.solve(y_sum.as_slice())?;
    let rhs_error = (DVector::from_column_slice(&r.x_hat) - &true_sum).norm() / scale;

    Ok(Theorem1Report {
        lhs_error,
        rhs_error,
        equivalent: lhs_error <= tol && rhs_error <= tol,
        support_guard_exceeded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{compress_model, CompressionBank, SparsifyMode};
    use crate::nn::ModelParams;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (rows as f64).sqrt();
        DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
    }

    fn planted(big_g: usize, k: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..big_g).collect();
        idx.shuffle(&mut rng);
        let mut x = vec![0.0; big_g];
        for &i in idx.iter().take(k) {
            x[i] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        }
        x
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        diff / norm.max(1e-300)
    }

    #[test]
    fn zero_rhs_recovers_zero_immediately() {
        let solver = BasisPursuitSolver::new(gaussian_matrix(10, 40, 1), AdmmSettings::default()).unwrap();
        let r = solver.solve(&vec![0.0; 10]).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 2, "took {} iterations", r.iterations);
        assert!(r.x_hat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_block_pins_leading_coordinates() {
        // phi = (I | 0) of shape g x 2g: feasibility pins the first block to
        // y and the zero columns make any mass elsewhere pure L1 cost.
        let g = 6;
        let mut phi = DMatrix::<f64>::zeros(g, 2 * g);
        for i in 0..g {
            phi[(i, i)] = 1.0;
        }
        let y: Vec<f64> = (0..g).map(|i| (i as f64) - 2.5).collect();
        let r = basis_pursuit(&BasisPursuitProblem {
            phi,
            y: y.clone(),
            settings: AdmmSettings::default(),
        })
        .unwrap();
        assert!(r.converged);
        for i in 0..g {
            assert!((r.x_hat[i] - y[i]).abs() < 1e-6, "coordinate {i}");
        }
        for i in g..2 * g {
            assert!(r.x_hat[i].abs() < 1e-6, "tail coordinate {i}");
        }
    }

    #[test]
    fn planted_sparse_instance_recovers() {
        let phi = gaussian_matrix(60, 200, 7);
        let x0 = planted(200, 5, 8);
        let y = (&phi * DVector::from_column_slice(&x0)).as_slice().to_vec();
        let solver = BasisPursuitSolver::new(phi.clone(), AdmmSettings::default()).unwrap();
        let r = solver.solve(&y).unwrap();
        assert!(r.converged);
        assert!(rel_err(&r.x_hat, &x0) < 1e-4, "err {}", rel_err(&r.x_hat, &x0));
        // Feasibility invariant on the converged iterate.
        assert!(feasibility_error(&phi, &r.x_hat, &y) <= 1e-6);
    }

    #[test]
    fn solver_is_deterministic() {
        let phi = gaussian_matrix(30, 100, 3);
        let x0 = planted(100, 4, 4);
        let y = (&phi * DVector::from_column_slice(&x0)).as_slice().to_vec();
        let solver = BasisPursuitSolver::new(phi, AdmmSettings::default()).unwrap();
        let a = solver.solve(&y).unwrap();
        let b = solver.solve(&y).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rank_deficient_phi_is_factorization_error() {
        let mut phi = DMatrix::<f64>::zeros(4, 10);
        for c in 0..10 {
            phi[(0, c)] = c as f64;
            phi[(1, c)] = 2.0 * c as f64; // duplicate direction
            phi[(2, c)] = (c * c) as f64;
            phi[(3, c)] = 1.0;
        }
        let err = BasisPursuitSolver::new(phi, AdmmSettings::default()).unwrap_err();
        assert!(matches!(err, Error::Factorization(_)), "got {err:?}");
    }

    #[test]
    fn square_or_fat_x_is_rejected() {
        let phi = gaussian_matrix(10, 40, 1);
        assert!(BasisPursuitSolver::new(phi.transpose(), AdmmSettings::default()).is_err());
        let square = gaussian_matrix(10, 10, 1);
        assert!(BasisPursuitSolver::new(square, AdmmSettings::default()).is_err());
    }

    #[test]
    fn iteration_cap_returns_best_iterate_unconverged() {
        let phi = gaussian_matrix(20, 80, 5);
        let x0 = planted(80, 10, 6);
        let y = (&phi * DVector::from_column_slice(&x0)).as_slice().to_vec();
        let solver = BasisPursuitSolver::new(
            phi,
            AdmmSettings {
                max_iter: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let r = solver.solve(&y).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
        assert_eq!(r.x_hat.len(), 80);
    }

    fn model_from_flat(values: Vec<f64>) -> ModelParams {
        // 5-in, 10-out hidden block holds 10 * 6 = 60 values; a 2-class head
        // completes the model.
        let mut m = ModelParams::zeros_mlp(&[5, 10, 2]).unwrap();
        assert_eq!(m.layers[0].param_count(), values.len());
        m.layers[0].values = values;
        m
    }

    #[test]
    fn single_member_cluster_recovers_its_sparse_layers() {
        let model = model_from_flat(planted(60, 6, 21));
        let counts: Vec<usize> = model.body().iter().map(|l| l.param_count()).collect();
        let bank = CompressionBank::generate(&counts, &[0], 0.5, 77).unwrap();
        // Entries are +-1, so mu = 0.5 leaves the layer unchanged.
        let compressed = compress_model(&model, &bank, 0, &SparsifyMode::FixedMu(0.5)).unwrap();
        let dec = DecompressorBank::new(&bank, AdmmSettings::default()).unwrap();
        let recovered = dec.recover_cluster(&compressed, 1, true).unwrap();
        assert_eq!(recovered.nonconverged(), 0);
        let err = rel_err(&recovered.layers[0].values, &model.layers[0].values);
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn all_zero_aggregate_recovers_zero() {
        let model = model_from_flat(vec![0.0; 60]);
        let counts: Vec<usize> = model.body().iter().map(|l| l.param_count()).collect();
        let bank = CompressionBank::generate(&counts, &[0], 0.5, 1).unwrap();
        let compressed = compress_model(&model, &bank, 0, &SparsifyMode::FixedMu(0.0)).unwrap();
        let dec = DecompressorBank::new(&bank, AdmmSettings::default()).unwrap();
        let recovered = dec.recover_cluster(&compressed, 1, true).unwrap();
        assert!(recovered.layers[0].values.iter().all(|&v| v == 0.0));
        assert_eq!(recovered.nonconverged(), 0);
    }

    #[test]
    fn disjoint_support_members_recover_their_mean() {
        // Three planted layers with disjoint supports; normalized recovery
        // of the aggregate equals their arithmetic mean.
        let mut values = vec![vec![0.0; 60]; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (j, v) in values.iter_mut().enumerate() {
            for t in 0..4 {
                v[j * 20 + t * 5] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            }
        }
        let counts = vec![60usize];
        let bank = CompressionBank::generate(&counts, &[0], 0.6, 3).unwrap();
        let models: Vec<ModelParams> = values.iter().cloned().map(model_from_flat).collect();
        let mut aggregate = compress_model(&models[0], &bank, 0, &SparsifyMode::FixedMu(0.5)).unwrap();
        for m in &models[1..] {
            let cm = compress_model(m, &bank, 0, &SparsifyMode::FixedMu(0.5)).unwrap();
            aggregate.accumulate(&cm).unwrap();
        }
        let dec = DecompressorBank::new(&bank, AdmmSettings::default()).unwrap();
        let recovered = dec.recover_cluster(&aggregate, 3, true).unwrap();
        let mean: Vec<f64> = (0..60)
            .map(|i| (values[0][i] + values[1][i] + values[2][i]) / 3.0)
            .collect();
        let err = rel_err(&recovered.layers[0].values, &mean);
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn theorem1_cancellation_recovers_zero_sum() {
        let phi = gaussian_matrix(40, 120, 11);
        let a = planted(120, 4, 12);
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        let report = theorem1_check(&[a, b], &phi, 1e-4, AdmmSettings::default()).unwrap();
        assert!(report.rhs_error <= 1e-10, "rhs {}", report.rhs_error);
        assert!(report.equivalent, "lhs {} rhs {}", report.lhs_error, report.rhs_error);
    }

    #[test]
    fn theorem1_zero_model_reduces_to_single_recovery() {
        let phi = gaussian_matrix(40, 120, 13);
        let a = planted(120, 4, 14);
        let zero = vec![0.0; 120];
        let report = theorem1_check(&[a.clone(), zero], &phi, 1e-4, AdmmSettings::default()).unwrap();
        assert!(report.equivalent, "lhs {} rhs {}", report.lhs_error, report.rhs_error);

        let solver = BasisPursuitSolver::new(phi.clone(), AdmmSettings::default()).unwrap();
        let y = (&phi * DVector::from_column_slice(&a)).as_slice().to_vec();
        let single = solver.solve(&y).unwrap();
        assert!(rel_err(&single.x_hat, &a) < 1e-4);
    }

    #[test]
    fn theorem1_two_sparse_models_agree_on_both_routes() {
        let phi = gaussian_matrix(80, 200, 15);
        let a = planted(200, 4, 16);
        let b = planted(200, 4, 17);
        let report = theorem1_check(&[a, b], &phi, 1e-4, AdmmSettings::default()).unwrap();
        assert!(!report.support_guard_exceeded);
        assert!(
            report.equivalent,
            "lhs {} rhs {}",
            report.lhs_error, report.rhs_error
        );
        assert!((report.lhs_error - report.rhs_error).abs() < 1e-4);
    }

    #[test]
    fn theorem1_requires_two_models() {
        let phi = gaussian_matrix(10, 30, 1);
        let err = theorem1_check(&[vec![0.0; 30]], &phi, 1e-4, AdmmSettings::default()).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn theorem1_flags_oversized_support() {
        let phi = gaussian_matrix(20, 60, 2);
        let a = planted(60, 8, 3);
        let b = planted(60, 8, 4);
        let report = theorem1_check(&[a, b], &phi, 1e-4, AdmmSettings::default()).unwrap();
        // Union support ~16 > 20 / 4 = 5.
        assert!(report.support_guard_exceeded);
    }
}
