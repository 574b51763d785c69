//! Regularised linear baselines: ridge and elastic net fitted by cyclic
//! coordinate descent on internally standardised features.
//!
//! The objective is
//!
//! ```text
//! 1/2 ||y - Xw - b||^2 + lambda (mu ||w||_1 + (1 - mu)/2 ||w||^2)
//! ```
//!
//! with an unpenalised intercept. `mu = 0` is ridge, `mu = 1` is the lasso.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cv::{self, CvSummary};
use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_SWEEPS: usize = 50_000;

/// Fitted linear model in the original (unstandardised) feature scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub mixing: f64,
    pub diagnostics: CdDiagnostics,
}

/// Coordinate-descent trace kept for convergence auditing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CdDiagnostics {
    pub sweeps: usize,
    pub converged: bool,
    pub final_change: f64,
    /// Internal (standardised-problem) objective after every sweep.
    pub objective_trace: Vec<f64>,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

struct Standardised {
    xs: DMatrix<f64>,
    yc: Vec<f64>,
    col_means: Vec<f64>,
    col_scales: Vec<f64>,
    active: Vec<usize>,
    y_mean: f64,
}

fn standardise(x: &DMatrix<f64>, y: &[f64]) -> Standardised {
    let (n, m) = (x.nrows(), x.ncols());
    let nf = n as f64;
    let col_means: Vec<f64> = (0..m)
        .map(|j| x.column(j).iter().sum::<f64>() / nf)
        .collect();
    let col_scales: Vec<f64> = (0..m)
        .map(|j| {
            let var = x
                .column(j)
                .iter()
                .map(|v| (v - col_means[j]) * (v - col_means[j]))
                .sum::<f64>()
                / nf;
            var.sqrt()
        })
        .collect();
    // Constant columns stay at weight zero and are skipped by the sweeps.
    let active: Vec<usize> = (0..m).filter(|&j| col_scales[j] > 0.0).collect();
    let xs = DMatrix::from_fn(n, m, |i, j| {
        if col_scales[j] > 0.0 {
            (x[(i, j)] - col_means[j]) / col_scales[j]
        } else {
            0.0
        }
    });
    let y_mean = y.iter().sum::<f64>() / nf;
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    Standardised {
        xs,
        yc,
        col_means,
        col_scales,
        active,
        y_mean,
    }
}

fn objective(xs: &DMatrix<f64>, yc: &[f64], w: &[f64], lambda: f64, mixing: f64) -> f64 {
    let n = xs.nrows();
    let mut sse = 0.0;
    for i in 0..n {
        let mut pred = 0.0;
        for (j, wj) in w.iter().enumerate() {
            if *wj != 0.0 {
                pred += xs[(i, j)] * wj;
            }
        }
        let r = yc[i] - pred;
        sse += r * r;
    }
    let l1: f64 = w.iter().map(|v| v.abs()).sum();
    let l2: f64 = w.iter().map(|v| v * v).sum();
    0.5 * sse + lambda * (mixing * l1 + (1.0 - mixing) * 0.5 * l2)
}

/// Cyclic coordinate descent on an already-standardised problem, optionally
/// warm-started.
fn cd_solve(
    std: &Standardised,
    lambda: f64,
    mixing: f64,
    tolerance: f64,
    max_sweeps: usize,
    warm_start: Option<&[f64]>,
    record_trace: bool,
) -> Result<(Vec<f64>, CdDiagnostics)> {
    let n = std.xs.nrows();
    let m = std.xs.ncols();
    let mut w = match warm_start {
        Some(w0) => w0.to_vec(),
        None => vec![0.0; m],
    };
    let mut residual = std.yc.clone();
    for &j in &std.active {
        if w[j] != 0.0 {
            let col = std.xs.column(j);
            for i in 0..n {
                residual[i] -= w[j] * col[i];
            }
        }
    }
    // After standardisation every active column has squared norm n.
    let z = n as f64;
    let l1 = lambda * mixing;
    let l2 = lambda * (1.0 - mixing);

    let mut trace = Vec::new();
    let mut converged = false;
    let mut last_change = f64::INFINITY;
    let mut sweeps = 0;

    while sweeps < max_sweeps {
        let mut max_change = 0.0f64;
        let mut max_w = 0.0f64;
        for &j in &std.active {
            let old = w[j];
            let col = std.xs.column(j);
            let mut rho = old * z;
            for i in 0..n {
                rho += col[i] * residual[i];
            }
            let new = soft_threshold(rho, l1) / (z + l2);
            if new != old {
                let delta = new - old;
                for i in 0..n {
                    residual[i] -= delta * col[i];
                }
                w[j] = new;
            }
            max_change = max_change.max((new - old).abs());
            max_w = max_w.max(new.abs());
        }
        sweeps += 1;
        if record_trace {
            trace.push(objective(&std.xs, &std.yc, &w, lambda, mixing));
        }
        last_change = max_change;
        if max_change <= tolerance * max_w.max(1.0) {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::NonConvergence {
            iterations: sweeps,
            last_change,
            tolerance,
        });
    }
    Ok((
        w,
        CdDiagnostics {
            sweeps,
            converged,
            final_change: last_change,
            objective_trace: trace,
        },
    ))
}

/// Standardised-scale weights back to the original feature scale.
fn back_transform(std: &Standardised, w: &[f64]) -> (Vec<f64>, f64) {
    let m = w.len();
    let mut weights = vec![0.0; m];
    for &j in &std.active {
        weights[j] = w[j] / std.col_scales[j];
    }
    let intercept = std.y_mean
        - weights
            .iter()
            .zip(&std.col_means)
            .map(|(wj, mj)| wj * mj)
            .sum::<f64>();
    (weights, intercept)
}

fn validate_penalty(lambda: f64, mixing: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Validation(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(0.0..=1.0).contains(&mixing) {
        return Err(Error::Validation(format!(
            "mixing must lie in [0, 1], got {mixing}"
        )));
    }
    Ok(())
}

/// Fit with explicit tolerance and sweep budget.
pub fn fit_linear_with(
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    mixing: f64,
    tolerance: f64,
    max_sweeps: usize,
) -> Result<LinearModel> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} rows",
            y.len(),
            n
        )));
    }
    if n < 2 {
        return Err(Error::Validation("need at least 2 observations".into()));
    }
    validate_penalty(lambda, mixing)?;

    let std = standardise(x, y);
    let (w, diagnostics) = cd_solve(&std, lambda, mixing, tolerance, max_sweeps, None, true)?;
    let (weights, intercept) = back_transform(&std, &w);
    Ok(LinearModel {
        weights,
        intercept,
        lambda,
        mixing,
        diagnostics,
    })
}

/// Fit with the default tolerance and sweep budget.
pub fn fit_linear(x: &DMatrix<f64>, y: &[f64], lambda: f64, mixing: f64) -> Result<LinearModel> {
    fit_linear_with(x, y, lambda, mixing, DEFAULT_TOLERANCE, DEFAULT_MAX_SWEEPS)
}

/// Raw linear predictions `Xw + b`.
pub fn predict_linear(model: &LinearModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} weights but input has {} columns",
            model.weights.len(),
            x.ncols()
        )));
    }
    Ok((0..x.nrows())
        .map(|i| {
            model.intercept
                + model
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * x[(i, j)])
                    .sum::<f64>()
        })
        .collect())
}

/// Predictions consumed as disease rates, clamped at zero.
pub fn predict_rates(model: &LinearModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(predict_linear(model, x)?
        .into_iter()
        .map(|v| v.max(0.0))
        .collect())
}

/// Hyperparameter search space for the baselines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearSelectConfig {
    pub mixing_grid: Vec<f64>,
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub folds: usize,
    pub tolerance: f64,
    /// Bypass the lambda grid with a fixed value.
    pub fixed_lambda: Option<f64>,
    /// Bypass the mixing grid with a fixed value.
    pub fixed_mixing: Option<f64>,
}

impl LinearSelectConfig {
    pub fn ridge(folds: usize) -> Self {
        LinearSelectConfig {
            mixing_grid: vec![0.0],
            n_lambdas: 50,
            lambda_min_ratio: 1e-4,
            folds,
            tolerance: 1e-5,
            fixed_lambda: None,
            fixed_mixing: None,
        }
    }

    pub fn elastic_net(folds: usize) -> Self {
        LinearSelectConfig {
            mixing_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            ..Self::ridge(folds)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectedLinear {
    pub model: LinearModel,
    pub cv: CvSummary,
    pub lambda: f64,
    pub mixing: f64,
}

/// Largest useful penalty: the smallest lambda that zeroes every weight
/// under the pure L1 penalty.
fn lambda_reference(x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let std = standardise(x, y);
    let mut best = 0.0f64;
    for &j in &std.active {
        let dot: f64 = std
            .xs
            .column(j)
            .iter()
            .zip(&std.yc)
            .map(|(a, b)| a * b)
            .sum();
        best = best.max(dot.abs());
    }
    best.max(1e-12)
}

fn lambda_grid(reference: f64, n: usize, min_ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![reference];
    }
    let hi = reference.ln();
    let lo = (reference * min_ratio).ln();
    (0..n)
        .map(|i| (hi + (lo - hi) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Select (lambda, mixing) by blocked cross-validation on mean MAE, then
/// refit on the full data.
///
/// Within each (mixing, fold) the lambda path runs from the largest penalty
/// down, warm-starting each solve from the previous one.
pub fn select_linear(
    x: &DMatrix<f64>,
    y: &[f64],
    config: &LinearSelectConfig,
) -> Result<SelectedLinear> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} rows",
            y.len(),
            n
        )));
    }
    let lambdas = match config.fixed_lambda {
        Some(l) => vec![l],
        None => lambda_grid(lambda_reference(x, y), config.n_lambdas, config.lambda_min_ratio),
    };
    let mixings = match config.fixed_mixing {
        Some(m) => vec![m],
        None => config.mixing_grid.clone(),
    };
    for &l in &lambdas {
        for &m in &mixings {
            validate_penalty(l, m)?;
        }
    }

    let folds = cv::blocked_folds(n, config.folds)?;
    // fold_metrics[mixing][lambda][fold]
    let mut fold_metrics =
        vec![vec![Vec::with_capacity(folds.len()); lambdas.len()]; mixings.len()];
    for (fold, range) in folds.iter().enumerate() {
        let test_pos: Vec<usize> = range.clone().collect();
        let train_pos: Vec<usize> = (0..n).filter(|i| !range.contains(i)).collect();
        let train_x = cv::select_rows(x, &train_pos);
        let train_y: Vec<f64> = train_pos.iter().map(|&i| y[i]).collect();
        let test_x = cv::select_rows(x, &test_pos);
        let test_y: Vec<f64> = test_pos.iter().map(|&i| y[i]).collect();
        let std = standardise(&train_x, &train_y);

        for (mi, &mixing) in mixings.iter().enumerate() {
            let mut warm: Option<Vec<f64>> = None;
            for (li, &lambda) in lambdas.iter().enumerate() {
                let (w, _) = cd_solve(
                    &std,
                    lambda,
                    mixing,
                    config.tolerance,
                    DEFAULT_MAX_SWEEPS,
                    warm.as_deref(),
                    false,
                )?;
                let (weights, intercept) = back_transform(&std, &w);
                let preds: Vec<f64> = (0..test_x.nrows())
                    .map(|i| {
                        let raw = intercept
                            + weights
                                .iter()
                                .enumerate()
                                .map(|(j, wj)| wj * test_x[(i, j)])
                                .sum::<f64>();
                        raw.max(0.0)
                    })
                    .collect();
                let mae = preds
                    .iter()
                    .zip(&test_y)
                    .map(|(p, t)| (p - t).abs())
                    .sum::<f64>()
                    / test_y.len() as f64;
                let pearson_r = crate::series::pearson(&preds, &test_y).ok();
                fold_metrics[mi][li].push(cv::FoldMetrics {
                    fold,
                    mae,
                    pearson_r,
                });
                warm = Some(w);
            }
        }
    }

    let mut best: Option<(f64, usize, usize)> = None;
    for (mi, per_lambda) in fold_metrics.iter().enumerate() {
        for (li, metrics) in per_lambda.iter().enumerate() {
            let mean_mae =
                metrics.iter().map(|f| f.mae).sum::<f64>() / metrics.len() as f64;
            let better = match &best {
                Some((mae, ..)) => mean_mae < *mae,
                None => true,
            };
            if better {
                best = Some((mean_mae, mi, li));
            }
        }
    }
    let (_, mi, li) = best.expect("grid is never empty");
    let (lambda, mixing) = (lambdas[li], mixings[mi]);
    let folds_out = std::mem::take(&mut fold_metrics[mi][li]);
    let defined: Vec<f64> = folds_out.iter().filter_map(|f| f.pearson_r).collect();
    let cv_summary = CvSummary {
        mean_mae: folds_out.iter().map(|f| f.mae).sum::<f64>() / folds_out.len() as f64,
        mean_r: (!defined.is_empty())
            .then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        folds: folds_out,
    };
    let model = fit_linear_with(x, y, lambda, mixing, config.tolerance, DEFAULT_MAX_SWEEPS)?;
    Ok(SelectedLinear {
        model,
        cv: cv_summary,
        lambda,
        mixing,
    })
}

/// Blocked CV of one (lambda, mixing) cell, predictions clamped at zero as
/// disease rates.
pub fn cross_validate_linear(
    x: &DMatrix<f64>,
    y: &[f64],
    folds: usize,
    lambda: f64,
    mixing: f64,
    tolerance: f64,
) -> Result<CvSummary> {
    cv::cross_validate(x, y, folds, |train_x, train_y, test_x, _| {
        let model = fit_linear_with(train_x, train_y, lambda, mixing, tolerance, DEFAULT_MAX_SWEEPS)?;
        predict_rates(&model, test_x)
    })
}
