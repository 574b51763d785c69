//! Synthetic study generator: correlated multi-location epidemic curves,
//! term-frequency panels linked to those curves, and known injected
//! intervention effects. This is the ground-truth oracle the quantitative
//! tests run against.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ClusterPartition, FeatureMatrix};
use crate::impact::Cohort;
use crate::series::{
    DateIndex, LocationId, LocationSet, RateSeries, Role, StudyPeriod,
};
use crate::util::normal_draw;

/// One seasonal wave: a Gaussian bump in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonBump {
    pub center_week: f64,
    pub width_weeks: f64,
    pub amplitude: f64,
}

/// Epidemic curve generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpidemicConfig {
    pub targets: Vec<LocationId>,
    pub controls: Vec<LocationId>,
    pub start: NaiveDate,
    pub weeks: usize,
    /// Off-season floor (rates per 100,000).
    pub baseline: f64,
    pub seasons: Vec<SeasonBump>,
    /// Mixing weight of the shared seasonal factor; 1 couples all locations
    /// perfectly, 0 decouples them.
    pub shared_factor_weight: f64,
    /// Observation noise standard deviation.
    pub noise_sd: f64,
    pub seed: u64,
}

impl EpidemicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weeks == 0 {
            return Err(Error::Validation("weeks must be positive".into()));
        }
        if self.targets.is_empty() || self.controls.is_empty() {
            return Err(Error::Validation(
                "need at least one target and one control location".into(),
            ));
        }
        if self.seasons.is_empty() {
            return Err(Error::Validation("need at least one seasonal bump".into()));
        }
        for s in &self.seasons {
            if s.amplitude <= 0.0 || s.width_weeks <= 0.0 {
                return Err(Error::Validation(
                    "season amplitudes and widths must be positive".into(),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.shared_factor_weight) {
            return Err(Error::Validation(format!(
                "shared_factor_weight must lie in [0, 1], got {}",
                self.shared_factor_weight
            )));
        }
        if self.noise_sd < 0.0 || self.baseline < 0.0 {
            return Err(Error::Validation(
                "noise_sd and baseline must be non-negative".into(),
            ));
        }
        let targets = LocationSet::new(Role::Target, self.targets.iter().cloned())?;
        let controls = LocationSet::new(Role::Control, self.controls.iter().cloned())?;
        LocationSet::validate_disjoint(&targets, &controls)?;
        Ok(())
    }

    pub fn all_locations(&self) -> Vec<LocationId> {
        let mut all: Vec<LocationId> = self
            .targets
            .iter()
            .chain(self.controls.iter())
            .cloned()
            .collect();
        all.sort();
        all
    }
}

/// Known truth behind a generated study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Noise-free per-location curves (after any injected effect).
    pub clean: BTreeMap<LocationId, RateSeries>,
    /// Injected effect in percent; 0 before any injection.
    pub theta_true: f64,
    /// Window and locations the effect was applied to.
    pub intervention: Option<(StudyPeriod, Vec<LocationId>)>,
}

fn bump_value(week: f64, bumps: &[SeasonBump]) -> f64 {
    bumps
        .iter()
        .map(|b| {
            let d = (week - b.center_week) / b.width_weeks;
            b.amplitude * (-0.5 * d * d).exp()
        })
        .sum()
}

/// Generate correlated per-location epidemic curves plus their noise-free
/// ground truth (no intervention effect yet).
pub fn generate_epidemic(
    config: &EpidemicConfig,
) -> Result<(BTreeMap<LocationId, RateSeries>, GroundTruth)> {
    config.validate()?;
    let index = DateIndex::weekly(config.start, config.weeks)?;
    let w = config.shared_factor_weight;

    let mut observed = BTreeMap::new();
    let mut clean = BTreeMap::new();
    for (li, id) in config.all_locations().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1 + li as u64);
        // Location-specific curve: the shared bumps under one stable
        // per-location reshaping (amplitude, width, lead/lag), plus a couple
        // of independent minor waves. Keeping the reshaping constant across
        // seasons keeps the cross-location relationship stationary.
        let amp_mult = rng.gen_range(0.75..1.3);
        let width_mult = rng.gen_range(0.85..1.2);
        let center_shift = normal_draw(&mut rng, 1.5);
        let mut own_bumps: Vec<SeasonBump> = config
            .seasons
            .iter()
            .map(|b| SeasonBump {
                center_week: b.center_week + center_shift,
                width_weeks: b.width_weeks * width_mult,
                amplitude: b.amplitude * amp_mult,
            })
            .collect();
        let mean_amplitude = config.seasons.iter().map(|b| b.amplitude).sum::<f64>()
            / config.seasons.len() as f64;
        for _ in 0..2 {
            own_bumps.push(SeasonBump {
                center_week: rng.gen_range(0.0..config.weeks as f64),
                width_weeks: rng.gen_range(3.0..8.0),
                amplitude: mean_amplitude * rng.gen_range(0.05..0.2),
            });
        }
        let mut clean_values = Vec::with_capacity(config.weeks);
        let mut noisy_values = Vec::with_capacity(config.weeks);
        for t in 0..config.weeks {
            let week = t as f64;
            let shared = config.baseline + bump_value(week, &config.seasons);
            let own = config.baseline + bump_value(week, &own_bumps);
            let value = w * shared + (1.0 - w) * own;
            clean_values.push(value.max(0.0));
            let noise = if config.noise_sd > 0.0 {
                normal_draw(&mut rng, config.noise_sd)
            } else {
                0.0
            };
            noisy_values.push((value + noise).max(0.0));
        }
        clean.insert(id.clone(), RateSeries::new(id.clone(), index, clean_values)?);
        observed.insert(id.clone(), RateSeries::new(id, index, noisy_values)?);
    }
    Ok((
        observed,
        GroundTruth {
            clean,
            theta_true: 0.0,
            intervention: None,
        },
    ))
}

/// Multiply target-location rates by `(1 + theta_true/100)` inside the
/// intervention window, in both the observed series and the ground truth.
pub fn inject_intervention(
    series: &BTreeMap<LocationId, RateSeries>,
    truth: &GroundTruth,
    targets: &LocationSet,
    period: &StudyPeriod,
    theta_true: f64,
) -> Result<(BTreeMap<LocationId, RateSeries>, GroundTruth)> {
    if theta_true <= -100.0 {
        return Err(Error::Validation(format!(
            "theta_true must exceed -100, got {theta_true}"
        )));
    }
    let factor = 1.0 + theta_true / 100.0;
    let scale = |s: &RateSeries| -> Result<RateSeries> {
        if targets.contains(s.location()) {
            let values: Vec<f64> = s
                .index()
                .dates()
                .zip(s.values())
                .map(|(d, v)| if period.contains(d) { v * factor } else { *v })
                .collect();
            RateSeries::new(s.location().clone(), *s.index(), values)
        } else {
            Ok(s.clone())
        }
    };
    let mut out_series = BTreeMap::new();
    for (id, s) in series {
        out_series.insert(id.clone(), scale(s)?);
    }
    let mut out_clean = BTreeMap::new();
    for (id, s) in &truth.clean {
        out_clean.insert(id.clone(), scale(s)?);
    }
    Ok((
        out_series,
        GroundTruth {
            clean: out_clean,
            theta_true,
            intervention: Some((*period, targets.ordered())),
        },
    ))
}

/// Term-panel generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UgcConfig {
    /// Terms per token-count cluster; the length sets the cluster count.
    pub terms_per_cluster: Vec<usize>,
    /// Fraction of terms carrying no signal.
    pub distractor_fraction: f64,
    /// Scale of the heteroscedastic observation noise.
    pub noise_scale: f64,
    /// Pass the linear link through a softplus (keeps frequencies positive
    /// and mildly nonlinear in the operating range).
    pub softplus: bool,
    pub slope_range: (f64, f64),
    pub offset_range: (f64, f64),
}

impl Default for UgcConfig {
    fn default() -> Self {
        UgcConfig {
            terms_per_cluster: vec![6, 6, 6, 6],
            distractor_fraction: 0.2,
            noise_scale: 0.11,
            softplus: true,
            slope_range: (0.15, 0.45),
            offset_range: (-5.0, -1.0),
        }
    }
}

impl UgcConfig {
    pub fn n_terms(&self) -> usize {
        self.terms_per_cluster.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms_per_cluster.is_empty() || self.terms_per_cluster.iter().any(|&c| c == 0) {
            return Err(Error::Validation(
                "every cluster needs at least one term".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.distractor_fraction) {
            return Err(Error::Validation(
                "distractor_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::Validation("noise_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Sampled rate-to-frequency link, shared by every location of a study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UgcLink {
    pub terms: Vec<String>,
    pub clusters: ClusterPartition,
    /// Per-term (slope, offset); distractors have slope 0.
    pub coefficients: Vec<(f64, f64)>,
    pub softplus: bool,
    pub noise_scale: f64,
}

impl UgcLink {
    /// Draw per-term link coefficients; deterministic given the rng state.
    pub fn sample(config: &UgcConfig, rng: &mut ChaCha8Rng) -> Result<UgcLink> {
        config.validate()?;
        let m = config.n_terms();
        let mut terms = Vec::with_capacity(m);
        let mut groups = Vec::with_capacity(config.terms_per_cluster.len());
        let mut col = 0;
        for (z, &count) in config.terms_per_cluster.iter().enumerate() {
            let mut group = Vec::with_capacity(count);
            for j in 0..count {
                terms.push(format!("c{z}t{j:02}"));
                group.push(col);
                col += 1;
            }
            groups.push(group);
        }
        let clusters = ClusterPartition::new(groups, m)?;

        let n_distractors = (config.distractor_fraction * m as f64).round() as usize;
        let mut indices: Vec<usize> = (0..m).collect();
        // Fisher-Yates with the shared stream.
        for i in (1..m).rev() {
            let j = rng.gen_range(0..=i);
            indices.swap(i, j);
        }
        let distractors: std::collections::BTreeSet<usize> =
            indices.into_iter().take(n_distractors).collect();

        let coefficients = (0..m)
            .map(|j| {
                let slope = rng.gen_range(config.slope_range.0..config.slope_range.1);
                let offset = rng.gen_range(config.offset_range.0..config.offset_range.1);
                if distractors.contains(&j) {
                    (0.0, offset)
                } else {
                    (slope, offset)
                }
            })
            .collect();
        Ok(UgcLink {
            terms,
            clusters,
            coefficients,
            softplus: config.softplus,
            noise_scale: config.noise_scale,
        })
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Term-frequency panel for one location: each term's frequency follows the
/// link applied to the disease rate, plus heteroscedastic noise.
pub fn generate_ugc(
    rates: &RateSeries,
    link: &UgcLink,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureMatrix> {
    let n = rates.len();
    let m = link.terms.len();
    let mut values = nalgebra::DMatrix::zeros(n, m);
    for (t, &rate) in rates.values().iter().enumerate() {
        for (j, &(a, b)) in link.coefficients.iter().enumerate() {
            let raw = a * rate + b;
            let level = if link.softplus { softplus(raw) } else { raw };
            let noise = if link.noise_scale > 0.0 {
                normal_draw(rng, link.noise_scale * (1.0 + level.max(0.0)).sqrt())
            } else {
                0.0
            };
            values[(t, j)] = (level + noise).max(0.0);
        }
    }
    FeatureMatrix::new(*rates.index(), link.terms.clone(), values, link.clusters.clone())
}

/// Everything a generated study provides to the pipeline and its tests.
#[derive(Debug, Clone)]
pub struct StudyDataset {
    pub observed_rates: BTreeMap<LocationId, RateSeries>,
    pub national_rates: RateSeries,
    pub national_features: FeatureMatrix,
    pub location_features: BTreeMap<LocationId, FeatureMatrix>,
    pub truth: GroundTruth,
    pub link: UgcLink,
    pub targets: LocationSet,
    pub controls: LocationSet,
    pub pre_period: StudyPeriod,
    pub intervention_period: StudyPeriod,
}

/// Full study generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyGenConfig {
    pub epidemic: EpidemicConfig,
    pub ugc: UgcConfig,
    /// Pre-intervention weeks; the remainder of the horizon is the
    /// intervention window.
    pub pre_weeks: usize,
    /// Injected effect in percent (negative reduces disease).
    pub theta_true: f64,
}

impl StudyGenConfig {
    pub fn validate(&self) -> Result<()> {
        self.epidemic.validate()?;
        self.ugc.validate()?;
        if self.pre_weeks < 2 || self.pre_weeks >= self.epidemic.weeks {
            return Err(Error::Validation(format!(
                "pre_weeks must lie in [2, weeks), got {} of {}",
                self.pre_weeks, self.epidemic.weeks
            )));
        }
        if self.theta_true <= -100.0 {
            return Err(Error::Validation(format!(
                "theta_true must exceed -100, got {}",
                self.theta_true
            )));
        }
        Ok(())
    }

    pub fn periods(&self) -> Result<(StudyPeriod, StudyPeriod)> {
        let index = DateIndex::weekly(self.epidemic.start, self.epidemic.weeks)?;
        let split = index.date_at(self.pre_weeks);
        Ok((
            StudyPeriod::pre_intervention(self.epidemic.start, split)?,
            StudyPeriod::intervention(split, index.end())?,
        ))
    }
}

/// Location label of the aggregate series the model trains on.
pub const NATIONAL_LOCATION: &str = "national";

/// Generate a complete synthetic study: epidemic curves, injected effect,
/// national aggregate, and term panels for every location.
pub fn generate_study(config: &StudyGenConfig) -> Result<StudyDataset> {
    config.validate()?;
    let (pre_period, intervention_period) = config.periods()?;
    let targets = LocationSet::new(Role::Target, config.epidemic.targets.iter().cloned())?;
    let controls = LocationSet::new(Role::Control, config.epidemic.controls.iter().cloned())?;

    let (observed, truth) = generate_epidemic(&config.epidemic)?;
    let (observed, truth) = inject_intervention(
        &observed,
        &truth,
        &targets,
        &intervention_period,
        config.theta_true,
    )?;

    // National observed rates: the unweighted mean across every location.
    let index = DateIndex::weekly(config.epidemic.start, config.epidemic.weeks)?;
    let n_loc = observed.len() as f64;
    let national_values: Vec<f64> = (0..config.epidemic.weeks)
        .map(|t| observed.values().map(|s| s.values()[t]).sum::<f64>() / n_loc)
        .collect();
    let national_rates = RateSeries::new(
        LocationId::new(NATIONAL_LOCATION),
        index,
        national_values,
    )?;

    // One link per study; per-location noise runs on separate streams.
    let mut link_rng = ChaCha8Rng::seed_from_u64(config.epidemic.seed);
    link_rng.set_stream(1_000);
    let link = UgcLink::sample(&config.ugc, &mut link_rng)?;

    let mut location_features = BTreeMap::new();
    for (li, (id, series)) in observed.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.epidemic.seed);
        rng.set_stream(2_000 + li as u64);
        location_features.insert(id.clone(), generate_ugc(series, &link, &mut rng)?);
    }
    let mut national_rng = ChaCha8Rng::seed_from_u64(config.epidemic.seed);
    national_rng.set_stream(3_000);
    let national_features = generate_ugc(&national_rates, &link, &mut national_rng)?;

    Ok(StudyDataset {
        observed_rates: observed,
        national_rates,
        national_features,
        location_features,
        truth,
        link,
        targets,
        controls,
        pre_period,
        intervention_period,
    })
}

impl StudyDataset {
    /// View as assessment inputs with the given cohorts.
    pub fn study_data(&self, cohorts: Vec<Cohort>) -> crate::impact::StudyData {
        crate::impact::StudyData {
            national_rates: self.national_rates.clone(),
            national_features: self.national_features.clone(),
            location_features: self.location_features.clone(),
            targets: self.targets.clone(),
            controls: self.controls.clone(),
            cohorts,
            pre_period: self.pre_period,
            intervention_period: self.intervention_period,
        }
    }
}

/// Ground-truth JSON emitted next to a simulated dataset; consumed only by
/// the acceptance harness, never by the pipeline itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub schema_version: u32,
    pub theta_true: f64,
    pub pre_start: String,
    pub pre_end: String,
    pub intervention_start: String,
    pub intervention_end: String,
    /// location -> "target" | "control"
    pub roles: BTreeMap<String, String>,
}

pub const TRUTH_SCHEMA_VERSION: u32 = 1;

impl TruthFile {
    pub fn from_dataset(dataset: &StudyDataset) -> TruthFile {
        let mut roles = BTreeMap::new();
        for id in dataset.targets.members() {
            roles.insert(id.to_string(), "target".to_string());
        }
        for id in dataset.controls.members() {
            roles.insert(id.to_string(), "control".to_string());
        }
        TruthFile {
            schema_version: TRUTH_SCHEMA_VERSION,
            theta_true: dataset.truth.theta_true,
            pre_start: dataset.pre_period.start.to_string(),
            pre_end: dataset.pre_period.end.to_string(),
            intervention_start: dataset.intervention_period.start.to_string(),
            intervention_end: dataset.intervention_period.end.to_string(),
            roles,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<TruthFile> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Default seasonal geometry: 124 weekly observations with three waves, the
/// last one inside the final 20 weeks.
pub fn default_epidemic(targets: usize, controls: usize, seed: u64) -> EpidemicConfig {
    EpidemicConfig {
        targets: (0..targets).map(|i| LocationId::new(format!("t{i:02}"))).collect(),
        controls: (0..controls).map(|i| LocationId::new(format!("c{i:02}"))).collect(),
        start: NaiveDate::from_ymd_opt(2012, 1, 2).unwrap(),
        weeks: 124,
        baseline: 3.0,
        seasons: vec![
            SeasonBump {
                center_week: 22.0,
                width_weeks: 5.0,
                amplitude: 20.0,
            },
            SeasonBump {
                center_week: 74.0,
                width_weeks: 6.0,
                amplitude: 26.0,
            },
            SeasonBump {
                center_week: 112.0,
                width_weeks: 5.5,
                amplitude: 23.0,
            },
        ],
        shared_factor_weight: 0.9,
        noise_sd: 0.5,
        seed,
    }
}

/// Default full-study generator: 104 pre-intervention weeks, 20 intervention
/// weeks, default term panel.
pub fn default_study(targets: usize, controls: usize, theta_true: f64, seed: u64) -> StudyGenConfig {
    StudyGenConfig {
        epidemic: default_epidemic(targets, controls, seed),
        ugc: UgcConfig::default(),
        pre_weeks: 104,
        theta_true,
    }
}
