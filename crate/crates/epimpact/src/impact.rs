//! Counterfactual impact assessment: enumerate target/control location
//! subsets, screen them by pre-intervention correlation of their estimated
//! disease rates, project counterfactual rates in the intervened locations
//! from correlated controls, and quantify the intervention effect with
//! bootstrap confidence intervals and a two-sigma significance rule.

use std::collections::BTreeMap;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gp::{GpConfig, TrainedGP};
use crate::linear::{self, LinearSelectConfig};
use crate::model::{ModelKind, RateModel};
use crate::series::{
    mean, pearson, DateIndex, LocationId, LocationSet, RateSeries, StudyPeriod,
};
use crate::util::mix_seed;

const BOOTSTRAP_SALT: u64 = 0x626f_6f74;
const TRAIN_SALT: u64 = 0x7472_6169;

/// How a subset's rate series is formed from its member locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Unweighted mean of the member series.
    Mean,
    /// Population-weighted mean; every member needs a weight.
    PopulationWeighted(BTreeMap<LocationId, f64>),
}

impl Aggregation {
    pub fn label(&self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::PopulationWeighted(_) => "population_weighted",
        }
    }

    /// Aggregate equal-length per-location series over `members`.
    pub fn aggregate(
        &self,
        members: &[LocationId],
        series: &BTreeMap<LocationId, Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let mut rows: Vec<(&[f64], f64)> = Vec::with_capacity(members.len());
        for id in members {
            let values = series.get(id).ok_or_else(|| {
                Error::Validation(format!("no estimated rate series for location {id}"))
            })?;
            let weight = match self {
                Aggregation::Mean => 1.0,
                Aggregation::PopulationWeighted(weights) => {
                    *weights.get(id).ok_or_else(|| {
                        Error::Validation(format!("no population weight for location {id}"))
                    })?
                }
            };
            if weight <= 0.0 {
                return Err(Error::Validation(format!(
                    "population weight for {id} must be positive"
                )));
            }
            rows.push((values.as_slice(), weight));
        }
        let n = rows[0].0.len();
        if rows.iter().any(|(v, _)| v.len() != n) {
            return Err(Error::DimensionMismatch(
                "per-location series have different lengths".into(),
            ));
        }
        let total_weight: f64 = rows.iter().map(|(_, w)| w).sum();
        Ok((0..n)
            .map(|t| rows.iter().map(|(v, w)| v[t] * w).sum::<f64>() / total_weight)
            .collect())
    }
}

/// Assessment sweep configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssessmentConfig {
    /// Pearson threshold a pair must reach on pre-intervention rates.
    pub rho_min: f64,
    /// Largest enumerated subset cardinality per side.
    pub max_subset_size: usize,
    /// Bootstrap replicates per pair.
    pub bootstrap_replicates: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
    /// Hard cap on the enumerated pair count.
    pub pair_cap: u64,
    /// Guard for the ratio statistic's denominator.
    pub epsilon_divide: f64,
    /// Resample pre-intervention time indices and refit the projector in
    /// every replicate (ablation knob).
    pub resample_inputs: bool,
    /// Resample projection residuals onto the counterfactual in every
    /// replicate (ablation knob).
    pub resample_residuals: bool,
    /// Run the pair sweep on a thread pool; results are identical either way.
    pub parallel: bool,
}

impl Default for AssessmentConfig {
    fn default() -> Self {
        AssessmentConfig {
            rho_min: 0.6,
            max_subset_size: 3,
            bootstrap_replicates: 1000,
            seed: 0,
            aggregation: Aggregation::Mean,
            pair_cap: 1_000_000,
            epsilon_divide: 1e-9,
            resample_inputs: true,
            resample_residuals: true,
            parallel: true,
        }
    }
}

impl AssessmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_min > 0.0 && self.rho_min <= 1.0) {
            return Err(Error::Validation(format!(
                "rho_min must lie in (0, 1], got {}",
                self.rho_min
            )));
        }
        if self.bootstrap_replicates < 100 {
            return Err(Error::Validation(format!(
                "need at least 100 bootstrap replicates, got {}",
                self.bootstrap_replicates
            )));
        }
        if self.max_subset_size == 0 {
            return Err(Error::Validation("max_subset_size must be positive".into()));
        }
        if !(self.epsilon_divide > 0.0) {
            return Err(Error::Validation("epsilon_divide must be positive".into()));
        }
        Ok(())
    }
}

/// An enumerated target/control subset pair, correlation not yet computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCandidate {
    pub target_subset: Vec<LocationId>,
    pub control_subset: Vec<LocationId>,
    /// Canonical position in the enumeration; also the pair's RNG stream.
    pub index: u64,
}

/// A screened pair with its pre-intervention correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetPair {
    pub target_subset: Vec<LocationId>,
    pub control_subset: Vec<LocationId>,
    pub index: u64,
    pub correlation: f64,
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

fn subset_count(n: usize, max_size: usize) -> u128 {
    (1..=max_size.min(n))
        .map(|k| binomial(n as u64, k as u64))
        .sum()
}

/// Non-empty subsets of `members` up to `max_size`, ordered by cardinality
/// then lexicographic member order.
fn bounded_subsets(members: &[LocationId], max_size: usize) -> Vec<Vec<LocationId>> {
    let mut out = Vec::new();
    for size in 1..=max_size.min(members.len()) {
        for combo in members.iter().cloned().combinations(size) {
            out.push(combo);
        }
    }
    out
}

fn cross_pairs(
    target_subsets: &[Vec<LocationId>],
    control_subsets: &[Vec<LocationId>],
) -> Vec<PairCandidate> {
    let nc = control_subsets.len() as u64;
    let mut out = Vec::with_capacity(target_subsets.len() * control_subsets.len());
    for (ti, t) in target_subsets.iter().enumerate() {
        for (ci, c) in control_subsets.iter().enumerate() {
            out.push(PairCandidate {
                target_subset: t.clone(),
                control_subset: c.clone(),
                index: ti as u64 * nc + ci as u64,
            });
        }
    }
    out
}

/// All target/control subset pairs with cardinality up to
/// `config.max_subset_size` per side, in canonical order.
pub fn enumerate_pairs(
    targets: &LocationSet,
    controls: &LocationSet,
    config: &AssessmentConfig,
) -> Result<Vec<PairCandidate>> {
    LocationSet::validate_disjoint(targets, controls)?;
    let count = subset_count(targets.len(), config.max_subset_size)
        * subset_count(controls.len(), config.max_subset_size);
    if count > config.pair_cap as u128 {
        return Err(Error::CombinatorialLimit {
            count,
            cap: config.pair_cap,
        });
    }
    let t_subsets = bounded_subsets(&targets.ordered(), config.max_subset_size);
    let c_subsets = bounded_subsets(&controls.ordered(), config.max_subset_size);
    Ok(cross_pairs(&t_subsets, &c_subsets))
}

/// A pair removed during screening, with the reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroppedPair {
    pub target_subset: Vec<LocationId>,
    pub control_subset: Vec<LocationId>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ScreenOutcome {
    /// Pairs reaching `rho_min`, sorted by descending correlation.
    pub qualified: Vec<SubsetPair>,
    pub dropped: Vec<DroppedPair>,
    /// Best correlation observed across all screenable pairs (NaN if none).
    pub best_r: f64,
}

/// Correlate every candidate's aggregate target and control series over the
/// pre-intervention window and keep those at or above `rho_min`.
pub fn screen(
    candidates: &[PairCandidate],
    pre_estimates: &BTreeMap<LocationId, Vec<f64>>,
    config: &AssessmentConfig,
) -> Result<ScreenOutcome> {
    let mut aggregates: BTreeMap<Vec<LocationId>, Vec<f64>> = BTreeMap::new();
    let mut aggregate_of = |subset: &Vec<LocationId>| -> Result<Vec<f64>> {
        if let Some(v) = aggregates.get(subset) {
            return Ok(v.clone());
        }
        let agg = config.aggregation.aggregate(subset, pre_estimates)?;
        aggregates.insert(subset.clone(), agg.clone());
        Ok(agg)
    };

    let mut qualified = Vec::new();
    let mut dropped = Vec::new();
    let mut best_r = f64::NAN;
    for cand in candidates {
        let t = aggregate_of(&cand.target_subset)?;
        let c = aggregate_of(&cand.control_subset)?;
        match pearson(&t, &c) {
            Ok(r) => {
                if best_r.is_nan() || r > best_r {
                    best_r = r;
                }
                if r >= config.rho_min {
                    qualified.push(SubsetPair {
                        target_subset: cand.target_subset.clone(),
                        control_subset: cand.control_subset.clone(),
                        index: cand.index,
                        correlation: r,
                    });
                }
            }
            Err(e) => dropped.push(DroppedPair {
                target_subset: cand.target_subset.clone(),
                control_subset: cand.control_subset.clone(),
                reason: e.to_string(),
            }),
        }
    }
    qualified.sort_by(|a, b| {
        b.correlation
            .partial_cmp(&a.correlation)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    Ok(ScreenOutcome {
        qualified,
        dropped,
        best_r,
    })
}

/// Ordinary-least-squares map from control rates to target rates over the
/// pre-intervention window, with stored residuals for the bootstrap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearProjector {
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
    pub residual_se: f64,
}

/// Minimum pre-intervention observations for a projector fit.
pub const MIN_PROJECTION_POINTS: usize = 8;

pub fn fit_projection(control: &[f64], target: &[f64]) -> Result<LinearProjector> {
    if control.len() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "projection inputs have lengths {} and {}",
            control.len(),
            target.len()
        )));
    }
    if control.len() < MIN_PROJECTION_POINTS {
        return Err(Error::DegenerateInput(format!(
            "projection needs at least {MIN_PROJECTION_POINTS} observations, got {}",
            control.len()
        )));
    }
    let n = control.len() as f64;
    let mc = mean(control);
    let mt = mean(target);
    let sxx: f64 = control.iter().map(|c| (c - mc) * (c - mc)).sum();
    // Relative floor: numerically constant controls leave round-off mass
    // in sxx and would otherwise produce a garbage slope.
    if sxx <= n * (1e-10 * (1.0 + mc.abs())).powi(2) {
        return Err(Error::DegenerateInput(
            "control series is constant over the projection window".into(),
        ));
    }
    let sxy: f64 = control
        .iter()
        .zip(target)
        .map(|(c, t)| (c - mc) * (t - mt))
        .sum();
    let slope = sxy / sxx;
    let intercept = mt - slope * mc;
    let residuals: Vec<f64> = control
        .iter()
        .zip(target)
        .map(|(c, t)| t - (slope * c + intercept))
        .collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = target.iter().map(|t| (t - mt) * (t - mt)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let residual_se = (ss_res / (n - 2.0)).sqrt();
    Ok(LinearProjector {
        slope,
        intercept,
        residuals,
        r_squared,
        residual_se,
    })
}

impl LinearProjector {
    /// Raw projected values, not clamped.
    pub fn apply(&self, control: &[f64]) -> Vec<f64> {
        control
            .iter()
            .map(|c| self.slope * c + self.intercept)
            .collect()
    }
}

/// Counterfactual rate series: the projector applied to the control series,
/// clamped at zero.
pub fn project(h: &LinearProjector, control: &RateSeries) -> RateSeries {
    let values: Vec<f64> = h.apply(control.values()).iter().map(|v| v.max(0.0)).collect();
    RateSeries::new(
        LocationId::new("counterfactual"),
        *control.index(),
        values,
    )
    .expect("clamped counterfactual values are valid rates")
}

fn theta_from_means(mean_actual: f64, mean_counterfactual: f64, guard: f64) -> Result<f64> {
    if mean_counterfactual <= guard {
        return Err(Error::CounterfactualNearZero {
            mean: mean_counterfactual,
            guard,
        });
    }
    Ok(100.0 * (mean_actual - mean_counterfactual) / mean_counterfactual)
}

/// Relative percentage difference between the observed-estimate and the
/// counterfactual mean rate over the intervention window. Negative values
/// indicate disease reduction.
pub fn impact_theta(actual: &RateSeries, counterfactual: &RateSeries) -> Result<f64> {
    let (a, c) = crate::series::align(actual, counterfactual)?;
    theta_from_means(mean(&a), mean(&c), 1e-9)
}

/// Diagnostics of the bootstrap replicate distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionCheck {
    /// Unimodal and symmetric enough for the two-sigma rule.
    pub ok: bool,
    pub skewness: f64,
    pub n_peaks: usize,
}

/// Symmetry and unimodality check of a bootstrap sample: the skewness must
/// stay within +-0.5 and a smoothed sqrt(B)-bin histogram must have exactly
/// one local maximum.
pub fn check_distribution(samples: &[f64]) -> Result<DistributionCheck> {
    if samples.len() < 100 {
        return Err(Error::Validation(format!(
            "distribution check needs at least 100 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let m = mean(samples);
    let m2 = samples.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / n;
    let sd = m2.sqrt();
    if sd <= 1e-12 * (1.0 + m.abs()) {
        // Degenerate point mass: trivially symmetric and unimodal.
        return Ok(DistributionCheck {
            ok: true,
            skewness: 0.0,
            n_peaks: 1,
        });
    }
    let m3 = samples.iter().map(|s| (s - m).powi(3)).sum::<f64>() / n;
    let skewness = m3 / m2.powf(1.5);

    let n_bins = (n.sqrt().ceil() as usize).max(3);
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0.0f64; n_bins];
    for &s in samples {
        let mut b = ((s - lo) / width) as usize;
        if b >= n_bins {
            b = n_bins - 1;
        }
        counts[b] += 1.0;
    }
    // 3-bin moving average; edges average over the bins that exist.
    let smoothed: Vec<f64> = (0..n_bins)
        .map(|i| {
            let lo_i = i.saturating_sub(1);
            let hi_i = (i + 1).min(n_bins - 1);
            counts[lo_i..=hi_i].iter().sum::<f64>() / (hi_i - lo_i + 1) as f64
        })
        .collect();
    let n_peaks = count_peaks(&smoothed);

    Ok(DistributionCheck {
        ok: skewness.abs() <= 0.5 && n_peaks == 1,
        skewness,
        n_peaks,
    })
}

/// Modes of a smoothed histogram. Local maxima (plateau runs count once)
/// are candidates; a candidate is a separate mode only when the valley
/// between it and every taller accepted mode dips at least 20% below it.
/// Sampling wiggle on a flat top fails that and merges into one mode, while
/// genuinely separated clusters keep their deep valley.
fn count_peaks(values: &[f64]) -> usize {
    let n = values.len();
    let tallest = values.iter().cloned().fold(0.0f64, f64::max);
    if tallest <= 0.0 {
        return 0;
    }
    let floor = 0.05 * tallest;

    let mut candidates: Vec<(usize, f64)> = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[j + 1] == values[i] {
            j += 1;
        }
        let left_lower = i == 0 || values[i - 1] < values[i];
        let right_lower = j == n - 1 || values[j + 1] < values[i];
        if left_lower && right_lower && values[i] > floor {
            candidates.push(((i + j) / 2, values[i]));
        }
        i = j + 1;
    }
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

    let mut modes: Vec<usize> = Vec::new();
    for (pos, height) in candidates {
        let separated = modes.iter().all(|&m| {
            let (lo, hi) = if m < pos { (m, pos) } else { (pos, m) };
            let valley = values[lo..=hi].iter().cloned().fold(f64::INFINITY, f64::min);
            valley < 0.8 * height
        });
        if separated {
            modes.push(pos);
        }
    }
    modes.len()
}

/// Type-1 empirical quantile of an ascending-sorted sample.
pub(crate) fn type1_quantile(sorted: &[f64], p: f64) -> f64 {
    let b = sorted.len();
    let rank = (p * b as f64).ceil() as usize;
    sorted[rank.clamp(1, b) - 1]
}

/// Impact estimate for one qualified pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImpactEstimate {
    pub pair: SubsetPair,
    /// Percentage impact; negative values mean disease reduction.
    pub theta: f64,
    /// Empirical .025 bootstrap quantile.
    pub ci_low: f64,
    /// Empirical .975 bootstrap quantile.
    pub ci_high: f64,
    pub bootstrap_sd: f64,
    /// Two-sigma rule, conditional on the distribution diagnostic.
    pub significant: bool,
    pub distribution: DistributionCheck,
    #[serde(skip)]
    pub bootstrap_samples: Vec<f64>,
}

/// Aggregate series of one pair over both study windows.
#[derive(Debug, Clone)]
pub struct PairSeries {
    pub control_pre: Vec<f64>,
    pub target_pre: Vec<f64>,
    pub control_alpha: Vec<f64>,
    pub target_alpha: Vec<f64>,
}

/// Bootstrap a pair: every replicate resamples the pre-intervention time
/// indices with replacement, refits the projector, projects the
/// counterfactual and perturbs it with resampled residuals, then recomputes
/// the impact percentage.
pub fn bootstrap(
    pair: SubsetPair,
    series: &PairSeries,
    h: &LinearProjector,
    config: &AssessmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ImpactEstimate> {
    let b = config.bootstrap_replicates;
    let n_pre = series.control_pre.len();
    let mean_actual = mean(&series.target_alpha);

    let counterfactual: Vec<f64> = h.apply(&series.control_alpha).iter().map(|v| v.max(0.0)).collect();
    let theta = theta_from_means(mean_actual, mean(&counterfactual), config.epsilon_divide)?;

    let mut samples = Vec::with_capacity(b);
    let mut attempts = 0usize;
    let max_attempts = 10 * b;
    let mut resampled_c = vec![0.0; n_pre];
    let mut resampled_t = vec![0.0; n_pre];
    while samples.len() < b && attempts < max_attempts {
        attempts += 1;
        let h_b = if config.resample_inputs {
            for i in 0..n_pre {
                let k = rng.gen_range(0..n_pre);
                resampled_c[i] = series.control_pre[k];
                resampled_t[i] = series.target_pre[k];
            }
            match fit_projection(&resampled_c, &resampled_t) {
                Ok(hb) => hb,
                Err(_) => continue, // degenerate resample, redraw
            }
        } else {
            h.clone()
        };
        let mut cf = h_b.apply(&series.control_alpha);
        if config.resample_residuals {
            let res = &h_b.residuals;
            for v in cf.iter_mut() {
                *v += res[rng.gen_range(0..res.len())];
            }
        }
        for v in cf.iter_mut() {
            *v = v.max(0.0);
        }
        match theta_from_means(mean_actual, mean(&cf), config.epsilon_divide) {
            Ok(t) => samples.push(t),
            Err(_) => continue,
        }
    }
    if samples.len() < b {
        return Err(Error::BootstrapFailed(format!(
            "only {} of {b} replicates valid after {attempts} attempts",
            samples.len()
        )));
    }

    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let ci_low = type1_quantile(&sorted, 0.025);
    let ci_high = type1_quantile(&sorted, 0.975);
    let mean_b = mean(&samples);
    let var_b = samples.iter().map(|s| (s - mean_b) * (s - mean_b)).sum::<f64>()
        / (b as f64 - 1.0);
    let bootstrap_sd = var_b.sqrt();
    let distribution = check_distribution(&samples)?;
    let significant = theta.abs() > 2.0 * bootstrap_sd && distribution.ok;

    Ok(ImpactEstimate {
        pair,
        theta,
        ci_low,
        ci_high,
        bootstrap_sd,
        significant,
        distribution,
        bootstrap_samples: samples,
    })
}

/// A named group of target locations reported as one Table-style row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub name: String,
    pub members: Vec<LocationId>,
}

/// Full study inputs for an assessment run.
#[derive(Debug, Clone)]
pub struct StudyData {
    /// Observed national disease rates (training targets for the model).
    pub national_rates: RateSeries,
    /// National term frequencies (training features for the model).
    pub national_features: FeatureMatrix,
    /// Per-location term frequencies used for rate estimation.
    pub location_features: BTreeMap<LocationId, FeatureMatrix>,
    pub targets: LocationSet,
    pub controls: LocationSet,
    /// Cohorts reported as summary rows; empty means one all-targets cohort.
    pub cohorts: Vec<Cohort>,
    pub pre_period: StudyPeriod,
    pub intervention_period: StudyPeriod,
}

impl StudyData {
    pub fn validate(&self) -> Result<()> {
        StudyPeriod::validate_order(&self.pre_period, &self.intervention_period)?;
        LocationSet::validate_disjoint(&self.targets, &self.controls)?;
        for id in self.targets.members().iter().chain(self.controls.members()) {
            if !self.location_features.contains_key(id) {
                return Err(Error::Validation(format!(
                    "no feature file for location {id}"
                )));
            }
        }
        for cohort in &self.cohorts {
            if cohort.members.is_empty() {
                return Err(Error::Validation(format!(
                    "cohort {} has no members",
                    cohort.name
                )));
            }
            for id in &cohort.members {
                if !self.targets.contains(id) {
                    return Err(Error::Validation(format!(
                        "cohort {} member {id} is not a target location",
                        cohort.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Cohorts to report: the configured ones, or one all-targets cohort.
    pub fn effective_cohorts(&self) -> Vec<Cohort> {
        if self.cohorts.is_empty() {
            vec![Cohort {
                name: "all locations".into(),
                members: self.targets.ordered(),
            }]
        } else {
            self.cohorts.clone()
        }
    }
}

/// Rate-model training choice for an assessment.
#[derive(Debug, Clone)]
pub enum RateModelConfig {
    Gp(GpConfig),
    Linear {
        kind: ModelKind,
        select: LinearSelectConfig,
    },
}

/// Train the disease-rate model f on the pre-intervention window.
pub fn train_model(
    data: &StudyData,
    model_config: &RateModelConfig,
    seed: u64,
) -> Result<(RateModel, String)> {
    let features = data.national_features.slice(&data.pre_period)?;
    let rates = data.national_rates.slice(&data.pre_period)?;
    if features.index() != rates.index() {
        return Err(Error::NonAlignable(
            "national features and rates cover different pre-intervention dates".into(),
        ));
    }
    let digest = features.digest_with_targets(rates.values());
    let model = match model_config {
        RateModelConfig::Gp(cfg) => {
            let gp = TrainedGP::fit(&features, &rates, cfg, mix_seed(seed, TRAIN_SALT))?;
            RateModel::Gp(gp)
        }
        RateModelConfig::Linear { kind, select } => {
            let selected = linear::select_linear(features.values(), rates.values(), select)?;
            RateModel::Linear {
                kind: *kind,
                model: selected.model,
                terms: features.terms().to_vec(),
            }
        }
    };
    Ok((model, digest))
}

/// One failed pair, isolated from the rest of the sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairFailure {
    pub target_subset: Vec<LocationId>,
    pub control_subset: Vec<LocationId>,
    pub reason: String,
}

/// Cohort-level summary: the qualified pair whose target subset equals the
/// cohort, taken at the highest pre-intervention correlation.
#[derive(Debug, Clone)]
pub struct CohortAssessment {
    pub cohort: Cohort,
    pub estimate: Option<ImpactEstimate>,
    /// Estimated target rates over the intervention window.
    pub actual: Vec<f64>,
    /// Counterfactual rates from the chosen pair, when one qualified.
    pub counterfactual: Option<Vec<f64>>,
    /// Qualified pairs whose target subset equals this cohort.
    pub n_qualified: usize,
    pub note: Option<String>,
}

/// Result of a full assessment sweep.
#[derive(Debug, Clone)]
pub struct Assessment {
    pub cohort_rows: Vec<CohortAssessment>,
    /// All qualified pairs in screening order (sensitivity appendix).
    pub estimates: Vec<ImpactEstimate>,
    pub failures: Vec<PairFailure>,
    pub dropped: Vec<DroppedPair>,
    pub best_r: f64,
    pub n_candidates: u64,
    pub pre_index: DateIndex,
    pub alpha_index: DateIndex,
    pub model_kind: ModelKind,
}

/// Run the full pipeline with a freshly trained model.
pub fn assess(
    data: &StudyData,
    model_config: &RateModelConfig,
    config: &AssessmentConfig,
) -> Result<Assessment> {
    data.validate()?;
    config.validate()?;
    let (model, _) = train_model(data, model_config, config.seed)?;
    assess_with_model(data, &model, config)
}

/// Run the pipeline with an already-trained disease-rate model.
pub fn assess_with_model(
    data: &StudyData,
    model: &RateModel,
    config: &AssessmentConfig,
) -> Result<Assessment> {
    data.validate()?;
    config.validate()?;

    // Estimated rates per location over both windows.
    let mut pre_estimates: BTreeMap<LocationId, Vec<f64>> = BTreeMap::new();
    let mut alpha_estimates: BTreeMap<LocationId, Vec<f64>> = BTreeMap::new();
    let mut pre_index: Option<DateIndex> = None;
    let mut alpha_index: Option<DateIndex> = None;
    for id in data.targets.members().iter().chain(data.controls.members()) {
        let features = &data.location_features[id];
        let pre = features.slice(&data.pre_period)?;
        let alpha = features.slice(&data.intervention_period)?;
        for (slot, idx) in [(&mut pre_index, pre.index()), (&mut alpha_index, alpha.index())] {
            match slot {
                Some(existing) if existing != idx => {
                    return Err(Error::NonAlignable(format!(
                        "location {id} covers different dates than the rest of the study"
                    )));
                }
                Some(_) => {}
                None => *slot = Some(*idx),
            }
        }
        pre_estimates.insert(id.clone(), model.estimate_rates(&pre)?);
        alpha_estimates.insert(id.clone(), model.estimate_rates(&alpha)?);
    }
    let pre_index = pre_index.expect("at least one location");
    let alpha_index = alpha_index.expect("at least one location");

    // Enumerate subsets; cohort target sets join the sweep even when they
    // exceed the enumeration bound.
    let cohorts = data.effective_cohorts();
    let mut target_subsets = bounded_subsets(&data.targets.ordered(), config.max_subset_size);
    for cohort in &cohorts {
        let mut members = cohort.members.clone();
        members.sort();
        members.dedup();
        if !target_subsets.contains(&members) {
            target_subsets.push(members);
        }
    }
    let control_subsets = bounded_subsets(&data.controls.ordered(), config.max_subset_size);
    let count = target_subsets.len() as u128 * control_subsets.len() as u128;
    if count > config.pair_cap as u128 {
        return Err(Error::CombinatorialLimit {
            count,
            cap: config.pair_cap,
        });
    }
    let candidates = cross_pairs(&target_subsets, &control_subsets);

    let screened = screen(&candidates, &pre_estimates, config)?;
    if screened.qualified.is_empty() {
        return Err(Error::NoQualifiedPairs {
            best_r: screened.best_r,
            rho_min: config.rho_min,
        });
    }

    // Pair sweep: each pair owns a seeded stream derived from its canonical
    // index, so parallel and serial execution agree exactly.
    let bootstrap_seed = mix_seed(config.seed, BOOTSTRAP_SALT);
    let run_pair = |pair: &SubsetPair| -> std::result::Result<ImpactEstimate, PairFailure> {
        let fail = |reason: String| PairFailure {
            target_subset: pair.target_subset.clone(),
            control_subset: pair.control_subset.clone(),
            reason,
        };
        let series = PairSeries {
            control_pre: config
                .aggregation
                .aggregate(&pair.control_subset, &pre_estimates)
                .map_err(|e| fail(e.to_string()))?,
            target_pre: config
                .aggregation
                .aggregate(&pair.target_subset, &pre_estimates)
                .map_err(|e| fail(e.to_string()))?,
            control_alpha: config
                .aggregation
                .aggregate(&pair.control_subset, &alpha_estimates)
                .map_err(|e| fail(e.to_string()))?,
            target_alpha: config
                .aggregation
                .aggregate(&pair.target_subset, &alpha_estimates)
                .map_err(|e| fail(e.to_string()))?,
        };
        let h = fit_projection(&series.control_pre, &series.target_pre)
            .map_err(|e| fail(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(bootstrap_seed);
        rng.set_stream(pair.index);
        bootstrap(pair.clone(), &series, &h, config, &mut rng).map_err(|e| fail(e.to_string()))
    };

    let outcomes: Vec<std::result::Result<ImpactEstimate, PairFailure>> = if config.parallel {
        screened.qualified.par_iter().map(run_pair).collect()
    } else {
        screened.qualified.iter().map(run_pair).collect()
    };
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(e) => estimates.push(e),
            Err(f) => failures.push(f),
        }
    }

    // Cohort rows.
    let mut cohort_rows = Vec::with_capacity(cohorts.len());
    for cohort in cohorts {
        let mut members = cohort.members.clone();
        members.sort();
        members.dedup();
        let actual = config.aggregation.aggregate(&members, &alpha_estimates)?;
        let matching: Vec<&ImpactEstimate> = estimates
            .iter()
            .filter(|e| e.pair.target_subset == members)
            .collect();
        let n_qualified = matching.len();
        // Estimates arrive in screening order, so the first match carries
        // the highest pre-intervention correlation.
        let chosen = matching.first().map(|e| (*e).clone());
        let (counterfactual, note) = match &chosen {
            Some(est) => {
                let ctl_alpha = config
                    .aggregation
                    .aggregate(&est.pair.control_subset, &alpha_estimates)?;
                let h = fit_projection(
                    &config
                        .aggregation
                        .aggregate(&est.pair.control_subset, &pre_estimates)?,
                    &config
                        .aggregation
                        .aggregate(&est.pair.target_subset, &pre_estimates)?,
                )?;
                let cf: Vec<f64> = h.apply(&ctl_alpha).iter().map(|v| v.max(0.0)).collect();
                (Some(cf), None)
            }
            None => (
                None,
                Some(format!(
                    "no qualified control subset at rho_min {}",
                    config.rho_min
                )),
            ),
        };
        cohort_rows.push(CohortAssessment {
            cohort: Cohort {
                name: cohort.name,
                members,
            },
            estimate: chosen,
            actual,
            counterfactual,
            n_qualified,
            note,
        });
    }

    Ok(Assessment {
        cohort_rows,
        estimates,
        failures,
        dropped: screened.dropped,
        best_r: screened.best_r,
        n_candidates: count as u64,
        pre_index,
        alpha_index,
        model_kind: model.kind(),
    })
}
