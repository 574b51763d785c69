//! Term-frequency observations partitioned into feature clusters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::series::{DateIndex, StudyPeriod};

/// Partition of the feature columns into disjoint clusters.
///
/// The groups must be disjoint and jointly cover every column exactly once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPartition {
    groups: Vec<Vec<usize>>,
}

impl ClusterPartition {
    pub fn new(groups: Vec<Vec<usize>>, n_columns: usize) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Validation(
                "cluster partition needs at least one group".into(),
            ));
        }
        let mut seen = vec![false; n_columns];
        for group in &groups {
            if group.is_empty() {
                return Err(Error::Validation("empty feature cluster".into()));
            }
            for &col in group {
                if col >= n_columns {
                    return Err(Error::Validation(format!(
                        "cluster references column {col} but the matrix has {n_columns}"
                    )));
                }
                if seen[col] {
                    return Err(Error::Validation(format!(
                        "column {col} appears in more than one cluster"
                    )));
                }
                seen[col] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "column {missing} is not assigned to any cluster"
            )));
        }
        Ok(ClusterPartition { groups })
    }

    /// All columns in one cluster.
    pub fn single(n_columns: usize) -> Result<Self> {
        Self::new(vec![(0..n_columns).collect()], n_columns)
    }

    pub fn n_clusters(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

/// `n x m` matrix of non-negative term frequencies over a date index,
/// with columns partitioned into feature clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    index: DateIndex,
    terms: Vec<String>,
    values: DMatrix<f64>,
    clusters: ClusterPartition,
}

impl FeatureMatrix {
    pub fn new(
        index: DateIndex,
        terms: Vec<String>,
        values: DMatrix<f64>,
        clusters: ClusterPartition,
    ) -> Result<Self> {
        if values.nrows() != index.count {
            return Err(Error::DimensionMismatch(format!(
                "feature matrix has {} rows but the index holds {} dates",
                values.nrows(),
                index.count
            )));
        }
        if values.ncols() != terms.len() {
            return Err(Error::DimensionMismatch(format!(
                "feature matrix has {} columns but {} term labels",
                values.ncols(),
                terms.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(
                "feature matrix contains a non-finite or negative frequency".into(),
            ));
        }
        let max_col = clusters.groups.iter().flatten().copied().max().unwrap_or(0);
        if max_col >= terms.len() {
            return Err(Error::DimensionMismatch(format!(
                "cluster partition references column {max_col} of a {}-column matrix",
                terms.len()
            )));
        }
        Ok(FeatureMatrix {
            index,
            terms,
            values,
            clusters,
        })
    }

    pub fn index(&self) -> &DateIndex {
        &self.index
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn clusters(&self) -> &ClusterPartition {
        &self.clusters
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_terms(&self) -> usize {
        self.values.ncols()
    }

    /// Rows whose dates fall inside `period`, same terms and clusters.
    pub fn slice(&self, period: &StudyPeriod) -> Result<FeatureMatrix> {
        let positions: Vec<usize> = self
            .index
            .dates()
            .enumerate()
            .filter(|(_, d)| period.contains(*d))
            .map(|(i, _)| i)
            .collect();
        if positions.is_empty() {
            return Err(Error::EmptyOverlap(format!(
                "period [{}, {}) shares no rows with the feature index",
                period.start, period.end
            )));
        }
        let index = DateIndex {
            start: self.index.date_at(positions[0]),
            step_days: self.index.step_days,
            count: positions.len(),
        };
        let values = DMatrix::from_fn(positions.len(), self.n_terms(), |r, c| {
            self.values[(positions[r], c)]
        });
        Ok(FeatureMatrix {
            index,
            terms: self.terms.clone(),
            values,
            clusters: self.clusters.clone(),
        })
    }

    /// Column layout compatibility check for prediction inputs.
    pub fn layout_matches(&self, other: &FeatureMatrix) -> bool {
        self.terms == other.terms && self.clusters == other.clusters
    }

    /// Squared Euclidean distances between the cluster-`z` sub-vectors of the
    /// rows of `self` and the rows of `other`, one matrix per cluster.
    pub fn cluster_sq_dists(&self, other: &FeatureMatrix) -> Vec<DMatrix<f64>> {
        self.clusters
            .groups
            .iter()
            .map(|group| {
                DMatrix::from_fn(self.n_rows(), other.n_rows(), |i, j| {
                    group
                        .iter()
                        .map(|&c| {
                            let d = self.values[(i, c)] - other.values[(j, c)];
                            d * d
                        })
                        .sum()
                })
            })
            .collect()
    }

    /// SHA-256 digest of the observations, used to tie serialized models to
    /// the data they were trained on.
    pub fn digest_with_targets(&self, targets: &[f64]) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.index.start.to_string().as_bytes());
        hasher.update(self.index.step_days.to_le_bytes());
        hasher.update((self.index.count as u64).to_le_bytes());
        for term in &self.terms {
            hasher.update(term.as_bytes());
            hasher.update([0u8]);
        }
        for group in self.clusters.groups() {
            for &col in group {
                hasher.update((col as u64).to_le_bytes());
            }
            hasher.update([0xffu8]);
        }
        for i in 0..self.values.nrows() {
            for j in 0..self.values.ncols() {
                hasher.update(self.values[(i, j)].to_le_bytes());
            }
        }
        for y in targets {
            hasher.update(y.to_le_bytes());
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
