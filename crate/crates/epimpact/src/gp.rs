//! Zero-mean Gaussian Process regression with the composite per-cluster
//! kernel: type-II maximum likelihood in log-parameter space with
//! multi-start quasi-Newton optimisation, exact Cholesky inference and
//! predictive mean/variance.

use nalgebra::{DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ClusterPartition, FeatureMatrix};
use crate::kernel::{BaseKernel, KernelSpec};
use crate::optim::{minimize, OptimOptions};
use crate::series::RateSeries;

/// Log-space box for hyperparameters; the optimiser never leaves it.
const LOG_PARAM_MIN: f64 = -27.631021115928547; // ln(1e-12)
const LOG_PARAM_MAX: f64 = 27.631021115928547; // ln(1e12)

/// Restart draws are log-uniform on [1e-2, 1e2].
const RESTART_LOG_LO: f64 = -4.605170185988091; // ln(1e-2)
const RESTART_LOG_HI: f64 = 4.605170185988091; // ln(1e2)

/// Jitter escalation ladder used before declaring a covariance non-PD.
const JITTERS: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpConfig {
    pub base_kind: BaseKernel,
    /// Multi-start optimisations of the marginal likelihood.
    pub restarts: usize,
    /// Iteration budget per restart.
    pub max_iters: usize,
    /// Standardise feature columns to zero mean / unit variance before
    /// fitting (off by default; frequencies are assumed pre-normalised).
    pub standardize: bool,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            base_kind: BaseKernel::Matern52,
            restarts: 10,
            max_iters: 150,
            standardize: false,
        }
    }
}

/// Per-column affine rescaling fitted on training features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(matrix: &DMatrix<f64>) -> Self {
        let n = matrix.nrows() as f64;
        let means: Vec<f64> = (0..matrix.ncols())
            .map(|j| matrix.column(j).iter().sum::<f64>() / n)
            .collect();
        let scales: Vec<f64> = (0..matrix.ncols())
            .map(|j| {
                let var = matrix
                    .column(j)
                    .iter()
                    .map(|v| (v - means[j]) * (v - means[j]))
                    .sum::<f64>()
                    / n;
                let sd = var.sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { means, scales }
    }

    pub fn apply(&self, matrix: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(matrix.nrows(), matrix.ncols(), |i, j| {
            (matrix[(i, j)] - self.means[j]) / self.scales[j]
        })
    }
}

/// Squared Euclidean distances between cluster sub-vectors of the rows of
/// `a` and the rows of `b`, one matrix per cluster group.
pub fn cluster_sq_dists(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    clusters: &ClusterPartition,
) -> Vec<DMatrix<f64>> {
    clusters
        .groups()
        .iter()
        .map(|group| {
            DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
                group
                    .iter()
                    .map(|&c| {
                        let d = a[(i, c)] - b[(j, c)];
                        d * d
                    })
                    .sum()
            })
        })
        .collect()
}

/// Cholesky with jitter escalation on the diagonal.
pub fn cholesky_with_jitter(
    k: &DMatrix<f64>,
) -> Result<(nalgebra::Cholesky<f64, Dyn>, f64)> {
    for &jitter in &JITTERS {
        let mut kj = k.clone();
        if jitter > 0.0 {
            for i in 0..kj.nrows() {
                kj[(i, i)] += jitter;
            }
        }
        if let Some(chol) = nalgebra::Cholesky::new(kj) {
            return Ok((chol, jitter));
        }
    }
    Err(Error::NotPositiveDefinite {
        max_jitter: *JITTERS.last().unwrap(),
    })
}

/// Zero-mean GP log marginal likelihood and its gradient with respect to
/// the log hyperparameters, for precomputed per-cluster distances.
pub fn log_marginal_likelihood(
    spec: &KernelSpec,
    sq_dists: &[DMatrix<f64>],
    y: &DVector<f64>,
) -> Result<(f64, Vec<f64>)> {
    let n = y.len();
    let k = spec.training_covariance(sq_dists);
    let (chol, _jitter) = cholesky_with_jitter(&k)?;
    let alpha = chol.solve(y);
    let half_log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let lml = -0.5 * y.dot(&alpha) - half_log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // d lml / d theta_j = 1/2 tr((alpha alpha' - K^-1) dK/dtheta_j)
    let kinv = chol.inverse();
    let w = &alpha * alpha.transpose() - kinv;
    let grad = spec
        .gradient_matrices(sq_dists)
        .iter()
        .map(|dk| 0.5 * w.component_mul(dk).sum())
        .collect();
    Ok((lml, grad))
}

/// Fitted GP: optimised kernel plus the cached training decomposition.
#[derive(Debug, Clone)]
pub struct TrainedGP {
    spec: KernelSpec,
    clusters: ClusterPartition,
    terms: Vec<String>,
    standardizer: Option<Standardizer>,
    train_matrix: DMatrix<f64>,
    targets: DVector<f64>,
    chol: nalgebra::Cholesky<f64, Dyn>,
    jitter: f64,
    alpha: DVector<f64>,
    lml: f64,
    digest: String,
}

impl TrainedGP {
    /// Fit on a feature panel aligned with a rate series.
    pub fn fit(
        features: &FeatureMatrix,
        rates: &RateSeries,
        config: &GpConfig,
        seed: u64,
    ) -> Result<TrainedGP> {
        if features.index() != rates.index() {
            return Err(Error::NonAlignable(
                "feature matrix and target series are on different indices".into(),
            ));
        }
        let digest = features.digest_with_targets(rates.values());
        let mut gp = Self::fit_matrix(
            features.values(),
            features.clusters(),
            rates.values(),
            config,
            seed,
        )?;
        gp.terms = features.terms().to_vec();
        gp.digest = digest;
        Ok(gp)
    }

    /// Fit directly on a raw matrix; used by the cross-validation harness.
    pub fn fit_matrix(
        matrix: &DMatrix<f64>,
        clusters: &ClusterPartition,
        y: &[f64],
        config: &GpConfig,
        seed: u64,
    ) -> Result<TrainedGP> {
        let n = matrix.nrows();
        let z = clusters.n_clusters();
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} targets for {} feature rows",
                y.len(),
                n
            )));
        }
        if n < z + 2 {
            return Err(Error::Validation(format!(
                "need at least Z + 2 = {} observations, got {n}",
                z + 2
            )));
        }
        if config.restarts == 0 {
            return Err(Error::Validation("restarts must be positive".into()));
        }

        let standardizer = config.standardize.then(|| Standardizer::fit(matrix));
        let train = match &standardizer {
            Some(s) => s.apply(matrix),
            None => matrix.clone(),
        };
        let dists = cluster_sq_dists(&train, &train, clusters);
        let yv = DVector::from_column_slice(y);

        let per = config.base_kind.params_per_cluster();
        let dim = z * per + 1;
        let opts = OptimOptions {
            max_iters: config.max_iters,
            ..Default::default()
        };

        // Independent seeded streams make the restarts order-insensitive,
        // so the parallel and serial reductions agree bit-for-bit.
        let outcomes: Vec<Option<(f64, Vec<f64>)>> = (0..config.restarts)
            .into_par_iter()
            .map(|restart| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(restart as u64);
                let x0: Vec<f64> = (0..dim)
                    .map(|_| rng.gen_range(RESTART_LOG_LO..RESTART_LOG_HI))
                    .collect();
                let objective = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
                    if x.iter().any(|v| *v < LOG_PARAM_MIN || *v > LOG_PARAM_MAX) {
                        return None;
                    }
                    let spec = KernelSpec::from_log_params(config.base_kind, z, x).ok()?;
                    let (lml, grad) = log_marginal_likelihood(&spec, &dists, &yv).ok()?;
                    if !lml.is_finite() {
                        return None;
                    }
                    Some((-lml, grad.iter().map(|g| -g).collect()))
                };
                minimize(objective, &x0, &opts).map(|out| (-out.value, out.x))
            })
            .collect();

        let best = outcomes
            .into_iter()
            .flatten()
            .fold(None::<(f64, Vec<f64>)>, |acc, cand| match acc {
                Some(b) if b.0 >= cand.0 => Some(b),
                _ => Some(cand),
            });
        let Some((_, best_x)) = best else {
            return Err(Error::OptimizationFailed(format!(
                "all {} restarts failed to produce a positive-definite model",
                config.restarts
            )));
        };

        let spec = KernelSpec::from_log_params(config.base_kind, z, &best_x)?;
        Self::assemble(spec, clusters.clone(), Vec::new(), standardizer, train, yv)
    }

    /// Build a model from an explicit kernel spec without optimisation.
    pub fn with_spec(
        spec: KernelSpec,
        features: &FeatureMatrix,
        rates: &RateSeries,
        standardize: bool,
    ) -> Result<TrainedGP> {
        if features.index() != rates.index() {
            return Err(Error::NonAlignable(
                "feature matrix and target series are on different indices".into(),
            ));
        }
        if spec.n_clusters() != features.clusters().n_clusters() {
            return Err(Error::DimensionMismatch(format!(
                "kernel has {} blocks but the features have {} clusters",
                spec.n_clusters(),
                features.clusters().n_clusters()
            )));
        }
        let digest = features.digest_with_targets(rates.values());
        let standardizer = standardize.then(|| Standardizer::fit(features.values()));
        let train = match &standardizer {
            Some(s) => s.apply(features.values()),
            None => features.values().clone(),
        };
        let yv = DVector::from_column_slice(rates.values());
        let mut gp = Self::assemble(
            spec,
            features.clusters().clone(),
            features.terms().to_vec(),
            standardizer,
            train,
            yv,
        )?;
        gp.digest = digest;
        Ok(gp)
    }

    fn assemble(
        spec: KernelSpec,
        clusters: ClusterPartition,
        terms: Vec<String>,
        standardizer: Option<Standardizer>,
        train: DMatrix<f64>,
        targets: DVector<f64>,
    ) -> Result<TrainedGP> {
        let dists = cluster_sq_dists(&train, &train, &clusters);
        let k = spec.training_covariance(&dists);
        let (chol, jitter) = cholesky_with_jitter(&k)?;
        let alpha = chol.solve(&targets);
        let half_log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        let n = targets.len() as f64;
        let lml = -0.5 * targets.dot(&alpha)
            - half_log_det
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        Ok(TrainedGP {
            spec,
            clusters,
            terms,
            standardizer,
            train_matrix: train,
            targets,
            chol,
            jitter,
            alpha,
            lml,
            digest: String::new(),
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn clusters(&self) -> &ClusterPartition {
        &self.clusters
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn training_digest(&self) -> &str {
        &self.digest
    }

    pub fn targets(&self) -> &[f64] {
        self.targets.as_slice()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardizer.is_some()
    }

    /// Posterior mean and variance per row of `features`.
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<(f64, f64)>> {
        if !self.terms.is_empty() && features.terms() != self.terms.as_slice() {
            return Err(Error::DimensionMismatch(
                "prediction features have a different term layout than training".into(),
            ));
        }
        if features.clusters() != &self.clusters {
            return Err(Error::DimensionMismatch(
                "prediction features have a different cluster partition than training".into(),
            ));
        }
        self.predict_matrix(features.values())
    }

    /// Posterior mean and variance per row of a raw matrix.
    pub fn predict_matrix(&self, matrix: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
        if matrix.ncols() != self.train_matrix.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "prediction rows have {} columns, training had {}",
                matrix.ncols(),
                self.train_matrix.ncols()
            )));
        }
        let m = match &self.standardizer {
            Some(s) => s.apply(matrix),
            None => matrix.clone(),
        };
        let cross = cluster_sq_dists(&self.train_matrix, &m, &self.clusters);
        let kstar = self.spec.base_covariance(&cross); // n_train x n_star
        let means = kstar.transpose() * &self.alpha;
        let solved = self.chol.solve(&kstar);
        let prior = self.spec.prior_variance();
        Ok((0..matrix.nrows())
            .map(|j| {
                let var = prior - kstar.column(j).dot(&solved.column(j));
                (means[j], var.max(0.0))
            })
            .collect())
    }

    /// Posterior means consumed as disease rates, clamped at zero.
    pub fn predict_rates(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self
            .predict(features)?
            .into_iter()
            .map(|(m, _)| m.max(0.0))
            .collect())
    }
}

/// Blocked cross-validation of the GP: contiguous time folds, a fresh fit
/// per fold, predictions clamped at zero as disease rates.
pub fn cross_validate(
    features: &FeatureMatrix,
    rates: &RateSeries,
    folds: usize,
    config: &GpConfig,
    seed: u64,
) -> Result<crate::cv::CvSummary> {
    if features.index() != rates.index() {
        return Err(Error::NonAlignable(
            "feature matrix and target series are on different indices".into(),
        ));
    }
    let clusters = features.clusters();
    crate::cv::cross_validate(features.values(), rates.values(), folds, |train_x, train_y, test_x, fold| {
        let gp = TrainedGP::fit_matrix(
            train_x,
            clusters,
            train_y,
            config,
            crate::cv::fold_seed(seed, fold),
        )?;
        Ok(gp
            .predict_matrix(test_x)?
            .into_iter()
            .map(|(m, _)| m.max(0.0))
            .collect())
    })
}
