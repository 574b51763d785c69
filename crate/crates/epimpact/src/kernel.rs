//! Composite covariance: a sum of per-cluster base kernels plus a noise term
//! that contributes only on the diagonal of the training covariance.
//!
//! Base kernels are stationary with one shared length-scale per cluster,
//! applied to the Euclidean distance between cluster sub-vectors. Gradients
//! are taken with respect to the log of each hyperparameter.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ClusterPartition;

/// Supported base kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKernel {
    RationalQuadratic,
    Matern52,
    Matern32,
}

impl BaseKernel {
    /// Hyperparameters per cluster block (signal variance, length-scale,
    /// and the shape parameter for the rational quadratic).
    pub fn params_per_cluster(self) -> usize {
        match self {
            BaseKernel::RationalQuadratic => 3,
            BaseKernel::Matern52 | BaseKernel::Matern32 => 2,
        }
    }
}

impl std::fmt::Display for BaseKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BaseKernel::RationalQuadratic => write!(f, "rational_quadratic"),
            BaseKernel::Matern52 => write!(f, "matern52"),
            BaseKernel::Matern32 => write!(f, "matern32"),
        }
    }
}

/// Hyperparameters of one cluster block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub signal_variance: f64,
    pub length_scale: f64,
    /// Shape parameter; only the rational quadratic reads it.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl ClusterParams {
    pub fn new(signal_variance: f64, length_scale: f64) -> Self {
        ClusterParams {
            signal_variance,
            length_scale,
            alpha: 1.0,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

/// Full kernel specification: one hyperparameter block per cluster plus the
/// noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub base_kind: BaseKernel,
    pub blocks: Vec<ClusterParams>,
    pub noise_variance: f64,
}

impl KernelSpec {
    pub fn new(
        base_kind: BaseKernel,
        blocks: Vec<ClusterParams>,
        noise_variance: f64,
    ) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Validation(
                "kernel needs at least one cluster block".into(),
            ));
        }
        let spec = KernelSpec {
            base_kind,
            blocks,
            noise_variance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (z, b) in self.blocks.iter().enumerate() {
            for (name, v) in [
                ("signal_variance", b.signal_variance),
                ("length_scale", b.length_scale),
                ("alpha", b.alpha),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Validation(format!(
                        "cluster {z} {name} must be a positive real, got {v}"
                    )));
                }
            }
        }
        if !(self.noise_variance.is_finite() && self.noise_variance > 0.0) {
            return Err(Error::Validation(format!(
                "noise variance must be a positive real, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    pub fn n_clusters(&self) -> usize {
        self.blocks.len()
    }

    /// Number of log-space hyperparameters (cluster blocks plus noise).
    pub fn n_params(&self) -> usize {
        self.blocks.len() * self.base_kind.params_per_cluster() + 1
    }

    /// Sum of per-cluster signal variances: the prior variance of the
    /// latent function, and the value the predictive variance reverts to
    /// far away from the training data.
    pub fn prior_variance(&self) -> f64 {
        self.blocks.iter().map(|b| b.signal_variance).sum()
    }

    /// Flatten the hyperparameters into log space.
    pub fn to_log_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for b in &self.blocks {
            out.push(b.signal_variance.ln());
            out.push(b.length_scale.ln());
            if self.base_kind == BaseKernel::RationalQuadratic {
                out.push(b.alpha.ln());
            }
        }
        out.push(self.noise_variance.ln());
        out
    }

    /// Rebuild a spec from log-space hyperparameters.
    pub fn from_log_params(base_kind: BaseKernel, n_clusters: usize, log_params: &[f64]) -> Result<Self> {
        let per = base_kind.params_per_cluster();
        if log_params.len() != n_clusters * per + 1 {
            return Err(Error::DimensionMismatch(format!(
                "expected {} log-parameters, got {}",
                n_clusters * per + 1,
                log_params.len()
            )));
        }
        let mut blocks = Vec::with_capacity(n_clusters);
        for z in 0..n_clusters {
            let base = z * per;
            let mut b = ClusterParams::new(log_params[base].exp(), log_params[base + 1].exp());
            if base_kind == BaseKernel::RationalQuadratic {
                b.alpha = log_params[base + 2].exp();
            }
            blocks.push(b);
        }
        KernelSpec::new(base_kind, blocks, log_params[n_clusters * per].exp())
    }

    /// Kernel value between two feature rows: the sum over clusters of the
    /// base kernel on the cluster sub-vectors, plus the noise variance when
    /// the rows are the same observation.
    pub fn eval(
        &self,
        clusters: &ClusterPartition,
        x: &[f64],
        xp: &[f64],
        same_observation: bool,
    ) -> Result<f64> {
        if x.len() != xp.len() {
            return Err(Error::DimensionMismatch(format!(
                "kernel inputs have lengths {} and {}",
                x.len(),
                xp.len()
            )));
        }
        if clusters.n_clusters() != self.blocks.len() {
            return Err(Error::DimensionMismatch(format!(
                "kernel has {} blocks but the partition has {} clusters",
                self.blocks.len(),
                clusters.n_clusters()
            )));
        }
        let n_cols = clusters.groups().iter().map(Vec::len).sum::<usize>();
        if n_cols != x.len() {
            return Err(Error::DimensionMismatch(format!(
                "partition covers {n_cols} columns but the rows have {}",
                x.len()
            )));
        }
        let mut total = 0.0;
        for (group, block) in clusters.groups().iter().zip(&self.blocks) {
            let r2: f64 = group
                .iter()
                .map(|&c| {
                    let d = x[c] - xp[c];
                    d * d
                })
                .sum();
            total += base_value(self.base_kind, block, r2);
        }
        if same_observation {
            total += self.noise_variance;
        }
        Ok(total)
    }

    /// Covariance of the base (noise-free) kernel between the rows behind the
    /// per-cluster squared-distance matrices.
    pub fn base_covariance(&self, sq_dists: &[DMatrix<f64>]) -> DMatrix<f64> {
        let (n, m) = (sq_dists[0].nrows(), sq_dists[0].ncols());
        let mut k = DMatrix::zeros(n, m);
        for (dists, block) in sq_dists.iter().zip(&self.blocks) {
            for j in 0..m {
                for i in 0..n {
                    k[(i, j)] += base_value(self.base_kind, block, dists[(i, j)]);
                }
            }
        }
        k
    }

    /// Training covariance: base covariance plus the noise variance on the
    /// diagonal.
    pub fn training_covariance(&self, sq_dists: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut k = self.base_covariance(sq_dists);
        let n = k.nrows().min(k.ncols());
        for i in 0..n {
            k[(i, i)] += self.noise_variance;
        }
        k
    }

    /// Entry-wise derivatives of the training covariance with respect to
    /// each log hyperparameter, in `to_log_params` order.
    pub fn gradient_matrices(&self, sq_dists: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        let n = sq_dists[0].nrows();
        let per = self.base_kind.params_per_cluster();
        let mut grads: Vec<DMatrix<f64>> = Vec::with_capacity(self.n_params());
        for (dists, block) in sq_dists.iter().zip(&self.blocks) {
            let mut d_sig = DMatrix::zeros(n, n);
            let mut d_ell = DMatrix::zeros(n, n);
            let mut d_alpha = DMatrix::zeros(n, n);
            for j in 0..n {
                for i in 0..n {
                    let g = base_grads(self.base_kind, block, dists[(i, j)]);
                    d_sig[(i, j)] = g.0;
                    d_ell[(i, j)] = g.1;
                    if per == 3 {
                        d_alpha[(i, j)] = g.2;
                    }
                }
            }
            grads.push(d_sig);
            grads.push(d_ell);
            if per == 3 {
                grads.push(d_alpha);
            }
        }
        grads.push(DMatrix::from_diagonal_element(n, n, self.noise_variance));
        grads
    }
}

/// Base kernel value from a squared distance `r2` between cluster sub-vectors.
pub fn base_value(kind: BaseKernel, p: &ClusterParams, r2: f64) -> f64 {
    let sigma2 = p.signal_variance;
    match kind {
        BaseKernel::Matern52 => {
            let s = (5.0 * r2).sqrt() / p.length_scale;
            sigma2 * (1.0 + s + s * s / 3.0) * (-s).exp()
        }
        BaseKernel::Matern32 => {
            let s = (3.0 * r2).sqrt() / p.length_scale;
            sigma2 * (1.0 + s) * (-s).exp()
        }
        BaseKernel::RationalQuadratic => {
            let q = r2 / (2.0 * p.alpha * p.length_scale * p.length_scale);
            sigma2 * (-p.alpha * q.ln_1p()).exp()
        }
    }
}

/// Derivatives of the base kernel with respect to (log signal variance,
/// log length-scale, log alpha).
fn base_grads(kind: BaseKernel, p: &ClusterParams, r2: f64) -> (f64, f64, f64) {
    let k = base_value(kind, p, r2);
    match kind {
        BaseKernel::Matern52 => {
            let s = (5.0 * r2).sqrt() / p.length_scale;
            let d_ell = p.signal_variance * (-s).exp() * s * s * (1.0 + s) / 3.0;
            (k, d_ell, 0.0)
        }
        BaseKernel::Matern32 => {
            let s = (3.0 * r2).sqrt() / p.length_scale;
            let d_ell = p.signal_variance * (-s).exp() * s * s;
            (k, d_ell, 0.0)
        }
        BaseKernel::RationalQuadratic => {
            let q = r2 / (2.0 * p.alpha * p.length_scale * p.length_scale);
            let u = 1.0 + q;
            let d_ell = k * 2.0 * p.alpha * q / u;
            let d_alpha = k * (-p.alpha * q.ln_1p() + p.alpha * q / u);
            (k, d_ell, d_alpha)
        }
    }
}
