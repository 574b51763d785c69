//! Blocked cross-validation shared by the GP and the linear baselines.
//!
//! Folds are contiguous time blocks rather than random shuffles, respecting
//! the temporal autocorrelation of the series under evaluation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::pearson;

/// Metrics of one held-out fold. `pearson_r` is `None` when the correlation
/// is undefined on that fold (e.g. constant predictions); such folds are
/// excluded from the correlation average but still count towards MAE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub mae: f64,
    pub pearson_r: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: Vec<FoldMetrics>,
    pub mean_mae: f64,
    /// Mean correlation over the folds where it is defined.
    pub mean_r: Option<f64>,
}

impl CvSummary {
    fn from_folds(folds: Vec<FoldMetrics>) -> CvSummary {
        let mean_mae = folds.iter().map(|f| f.mae).sum::<f64>() / folds.len() as f64;
        let defined: Vec<f64> = folds.iter().filter_map(|f| f.pearson_r).collect();
        let mean_r = (!defined.is_empty())
            .then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        CvSummary {
            folds,
            mean_mae,
            mean_r,
        }
    }
}

/// Contiguous near-equal blocks covering `0..n`.
pub fn blocked_folds(n: usize, k: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if k < 2 {
        return Err(Error::Validation("need at least 2 folds".into()));
    }
    if n < 2 * k {
        return Err(Error::Validation(format!(
            "need at least 2k = {} observations for {k}-fold validation, got {n}",
            2 * k
        )));
    }
    Ok((0..k)
        .map(|i| (i * n / k)..((i + 1) * n / k))
        .collect())
}

/// Rows of `matrix` selected by a list of positions.
pub fn select_rows(matrix: &DMatrix<f64>, positions: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(positions.len(), matrix.ncols(), |i, j| {
        matrix[(positions[i], j)]
    })
}

/// Run blocked cross-validation of an arbitrary fit-and-predict closure.
///
/// The closure receives (training rows, training targets, test rows, fold
/// index) and returns the test predictions, already post-processed the way
/// the model's consumers see them.
pub fn cross_validate<F>(
    matrix: &DMatrix<f64>,
    y: &[f64],
    k: usize,
    mut fit_predict: F,
) -> Result<CvSummary>
where
    F: FnMut(&DMatrix<f64>, &[f64], &DMatrix<f64>, usize) -> Result<Vec<f64>>,
{
    let n = matrix.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} rows",
            y.len(),
            n
        )));
    }
    let folds = blocked_folds(n, k)?;
    let mut metrics = Vec::with_capacity(k);
    for (fold, range) in folds.iter().enumerate() {
        let test_pos: Vec<usize> = range.clone().collect();
        let train_pos: Vec<usize> = (0..n).filter(|i| !range.contains(i)).collect();
        let train_x = select_rows(matrix, &train_pos);
        let train_y: Vec<f64> = train_pos.iter().map(|&i| y[i]).collect();
        let test_x = select_rows(matrix, &test_pos);
        let test_y: Vec<f64> = test_pos.iter().map(|&i| y[i]).collect();

        let preds = fit_predict(&train_x, &train_y, &test_x, fold)?;
        if preds.len() != test_y.len() {
            return Err(Error::DimensionMismatch(format!(
                "fold {fold} returned {} predictions for {} test rows",
                preds.len(),
                test_y.len()
            )));
        }
        let mae = preds
            .iter()
            .zip(&test_y)
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>()
            / test_y.len() as f64;
        let pearson_r = pearson(&preds, &test_y).ok();
        metrics.push(FoldMetrics {
            fold,
            mae,
            pearson_r,
        });
    }
    Ok(CvSummary::from_folds(metrics))
}

/// Deterministic per-fold seed derivation (splitmix64 step).
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    let mut x = seed ^ (fold as u64).wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn folds_are_contiguous_and_cover_everything() {
        let folds = blocked_folds(104, 10).unwrap();
        assert_eq!(folds.len(), 10);
        assert_eq!(folds[0].start, 0);
        assert_eq!(folds.last().unwrap().end, 104);
        for w in folds.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
    }

    #[test]
    fn too_few_observations_rejected() {
        assert!(blocked_folds(19, 10).is_err());
        assert!(blocked_folds(20, 10).is_ok());
    }

    #[test]
    fn perfect_predictor_scores_zero_mae_unit_r() {
        let n = 24;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 + 1.0).collect();
        let summary = cross_validate(&x, &y, 4, |_, _, test, _| {
            Ok(test.column(0).iter().map(|v| 2.0 * v + 1.0).collect())
        })
        .unwrap();
        assert_abs_diff_eq!(summary.mean_mae, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(summary.mean_r.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_prediction_folds_are_excluded_from_r() {
        let n = 20;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        // Constant predictions on fold 0, perfect elsewhere.
        let summary = cross_validate(&x, &y, 4, |_, _, test, fold| {
            if fold == 0 {
                Ok(vec![3.0; test.nrows()])
            } else {
                Ok(test.column(0).iter().copied().collect())
            }
        })
        .unwrap();
        assert!(summary.folds[0].pearson_r.is_none());
        assert_eq!(
            summary.folds.iter().filter(|f| f.pearson_r.is_some()).count(),
            3
        );
        assert_abs_diff_eq!(summary.mean_r.unwrap(), 1.0, epsilon = 1e-12);
    }
}
