//! Declarative TOML configuration for the command-line pipeline: one file
//! describes a simulated dataset, another a full study. Relative paths are
//! resolved against the configuration file's directory, and everything is
//! validated before any computation or output starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpConfig;
use crate::impact::{Aggregation, AssessmentConfig, Cohort, RateModelConfig, StudyData};
use crate::ingest;
use crate::kernel::BaseKernel;
use crate::linear::LinearSelectConfig;
use crate::model::ModelKind;
use crate::series::{LocationId, LocationSet, Role, StudyPeriod};
use crate::synthetic::{EpidemicConfig, SeasonBump, StudyGenConfig, UgcConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn parse_date(raw: &str, field: &str) -> Result<NaiveDate> {
    raw.parse()
        .map_err(|_| Error::Validation(format!("{field}: invalid ISO-8601 date {raw:?}")))
}

fn check_schema(version: u32) -> Result<()> {
    if version != CONFIG_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: version,
            expected: CONFIG_SCHEMA_VERSION,
        });
    }
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Generator configuration file (`simulate` subcommand).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub locations: LocationsSection,
    pub epidemic: EpidemicSection,
    pub intervention: InterventionSection,
    #[serde(default)]
    pub ugc: UgcSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationsSection {
    pub targets: Vec<String>,
    pub controls: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpidemicSection {
    pub start: String,
    pub weeks: usize,
    #[serde(default = "default_baseline")]
    pub baseline: f64,
    #[serde(default = "default_shared_weight")]
    pub shared_factor_weight: f64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    pub seasons: Vec<SeasonSection>,
}

fn default_baseline() -> f64 {
    3.0
}
fn default_shared_weight() -> f64 {
    0.9
}
fn default_noise_sd() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeasonSection {
    pub center_week: f64,
    pub width_weeks: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionSection {
    /// Pre-intervention weeks; the remaining horizon is the intervention
    /// window.
    pub pre_weeks: usize,
    pub theta_true: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UgcSection {
    pub terms_per_cluster: Vec<usize>,
    pub distractor_fraction: f64,
    pub noise_scale: f64,
    pub softplus: bool,
    pub slope_range: (f64, f64),
    pub offset_range: (f64, f64),
}

impl Default for UgcSection {
    fn default() -> Self {
        let u = UgcConfig::default();
        UgcSection {
            terms_per_cluster: u.terms_per_cluster,
            distractor_fraction: u.distractor_fraction,
            noise_scale: u.noise_scale,
            softplus: u.softplus,
            slope_range: u.slope_range,
            offset_range: u.offset_range,
        }
    }
}

impl SimulateConfig {
    pub fn load(path: &Path) -> Result<SimulateConfig> {
        let text = std::fs::read_to_string(path)?;
        let config: SimulateConfig = toml::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        check_schema(config.schema_version)?;
        Ok(config)
    }

    /// Validate and convert into the generator's configuration.
    pub fn to_generator(&self, seed_override: Option<u64>) -> Result<StudyGenConfig> {
        let start = parse_date(&self.epidemic.start, "epidemic.start")?;
        let config = StudyGenConfig {
            epidemic: EpidemicConfig {
                targets: self.locations.targets.iter().map(LocationId::new).collect(),
                controls: self.locations.controls.iter().map(LocationId::new).collect(),
                start,
                weeks: self.epidemic.weeks,
                baseline: self.epidemic.baseline,
                seasons: self
                    .epidemic
                    .seasons
                    .iter()
                    .map(|s| SeasonBump {
                        center_week: s.center_week,
                        width_weeks: s.width_weeks,
                        amplitude: s.amplitude,
                    })
                    .collect(),
                shared_factor_weight: self.epidemic.shared_factor_weight,
                noise_sd: self.epidemic.noise_sd,
                seed: seed_override.unwrap_or(self.seed),
            },
            ugc: UgcConfig {
                terms_per_cluster: self.ugc.terms_per_cluster.clone(),
                distractor_fraction: self.ugc.distractor_fraction,
                noise_scale: self.ugc.noise_scale,
                softplus: self.ugc.softplus,
                slope_range: self.ugc.slope_range,
                offset_range: self.ugc.offset_range,
            },
            pre_weeks: self.intervention.pre_weeks,
            theta_true: self.intervention.theta_true,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Study configuration file (`train` and `assess` subcommands).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub schema_version: u32,
    #[serde(default = "default_phase")]
    pub phase: String,
    #[serde(default = "default_source")]
    pub source: String,
    #[serde(default)]
    pub seed: u64,
    pub rates_csv: PathBuf,
    pub clusters_csv: PathBuf,
    /// Location label of the model-training series in the rates file.
    #[serde(default = "default_national")]
    pub national_location: String,
    pub features: FeaturesSection,
    pub locations: LocationsSection,
    #[serde(default)]
    pub cohorts: Vec<CohortSection>,
    pub periods: PeriodsSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub assessment: AssessmentSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_phase() -> String {
    "unlabelled".into()
}
fn default_source() -> String {
    "ugc".into()
}
fn default_national() -> String {
    "national".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesSection {
    /// Term panel the model trains on (national scope).
    pub national: PathBuf,
    /// Per-location term panels used for rate estimation.
    pub locations: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSection {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodsSection {
    pub pre_start: String,
    pub pre_end: String,
    pub intervention_start: String,
    pub intervention_end: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: String,
    pub kernel: String,
    pub restarts: usize,
    pub max_iters: usize,
    pub standardize: bool,
    pub cv_folds: usize,
    /// Fixed penalty for the linear kinds; grid-searched when absent.
    pub lambda: Option<f64>,
    /// Fixed mixing for elastic net; grid-searched when absent.
    pub mixing: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: "gp".into(),
            kernel: "matern52".into(),
            restarts: 10,
            max_iters: 150,
            standardize: false,
            cv_folds: 10,
            lambda: None,
            mixing: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssessmentSection {
    pub rho_min: f64,
    pub max_subset_size: usize,
    pub bootstrap_replicates: usize,
    pub aggregation: String,
    pub populations: BTreeMap<String, f64>,
    pub pair_cap: u64,
    pub parallel: bool,
    pub resample_inputs: bool,
    pub resample_residuals: bool,
}

impl Default for AssessmentSection {
    fn default() -> Self {
        let a = AssessmentConfig::default();
        AssessmentSection {
            rho_min: a.rho_min,
            max_subset_size: a.max_subset_size,
            bootstrap_replicates: a.bootstrap_replicates,
            aggregation: "mean".into(),
            populations: BTreeMap::new(),
            pair_cap: a.pair_cap,
            parallel: a.parallel,
            resample_inputs: a.resample_inputs,
            resample_residuals: a.resample_residuals,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub out_dir: Option<PathBuf>,
}

impl StudyConfig {
    pub fn load(path: &Path) -> Result<StudyConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut config: StudyConfig = toml::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        check_schema(config.schema_version)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        config.rates_csv = resolve(&base, &config.rates_csv);
        config.clusters_csv = resolve(&base, &config.clusters_csv);
        config.features.national = resolve(&base, &config.features.national);
        for p in config.features.locations.values_mut() {
            *p = resolve(&base, p);
        }
        if let Some(dir) = &config.output.out_dir {
            config.output.out_dir = Some(resolve(&base, dir));
        }
        Ok(config)
    }

    pub fn periods(&self) -> Result<(StudyPeriod, StudyPeriod)> {
        let pre = StudyPeriod::pre_intervention(
            parse_date(&self.periods.pre_start, "periods.pre_start")?,
            parse_date(&self.periods.pre_end, "periods.pre_end")?,
        )?;
        let alpha = StudyPeriod::intervention(
            parse_date(&self.periods.intervention_start, "periods.intervention_start")?,
            parse_date(&self.periods.intervention_end, "periods.intervention_end")?,
        )?;
        StudyPeriod::validate_order(&pre, &alpha)?;
        Ok((pre, alpha))
    }

    pub fn model_config(&self) -> Result<RateModelConfig> {
        let kernel = match self.model.kernel.as_str() {
            "matern52" => BaseKernel::Matern52,
            "matern32" => BaseKernel::Matern32,
            "rational_quadratic" => BaseKernel::RationalQuadratic,
            other => {
                return Err(Error::Validation(format!(
                    "model.kernel: unknown kernel {other:?} \
                     (expected matern52, matern32 or rational_quadratic)"
                )))
            }
        };
        match self.model.kind.as_str() {
            "gp" => Ok(RateModelConfig::Gp(GpConfig {
                base_kind: kernel,
                restarts: self.model.restarts,
                max_iters: self.model.max_iters,
                standardize: self.model.standardize,
            })),
            "ridge" => Ok(RateModelConfig::Linear {
                kind: ModelKind::Ridge,
                select: LinearSelectConfig {
                    fixed_lambda: self.model.lambda,
                    fixed_mixing: Some(self.model.mixing.unwrap_or(0.0)),
                    ..LinearSelectConfig::ridge(self.model.cv_folds)
                },
            }),
            "elastic_net" => Ok(RateModelConfig::Linear {
                kind: ModelKind::ElasticNet,
                select: LinearSelectConfig {
                    fixed_lambda: self.model.lambda,
                    fixed_mixing: self.model.mixing,
                    ..LinearSelectConfig::elastic_net(self.model.cv_folds)
                },
            }),
            other => Err(Error::Validation(format!(
                "model.kind: unknown model {other:?} (expected gp, ridge or elastic_net)"
            ))),
        }
    }

    pub fn assessment_config(&self, seed_override: Option<u64>) -> Result<AssessmentConfig> {
        let aggregation = match self.assessment.aggregation.as_str() {
            "mean" => Aggregation::Mean,
            "population" => {
                if self.assessment.populations.is_empty() {
                    return Err(Error::Validation(
                        "assessment.populations is required for population weighting".into(),
                    ));
                }
                Aggregation::PopulationWeighted(
                    self.assessment
                        .populations
                        .iter()
                        .map(|(k, v)| (LocationId::new(k), *v))
                        .collect(),
                )
            }
            other => {
                return Err(Error::Validation(format!(
                    "assessment.aggregation: unknown mode {other:?} (expected mean or population)"
                )))
            }
        };
        let config = AssessmentConfig {
            rho_min: self.assessment.rho_min,
            max_subset_size: self.assessment.max_subset_size,
            bootstrap_replicates: self.assessment.bootstrap_replicates,
            seed: seed_override.unwrap_or(self.seed),
            aggregation,
            pair_cap: self.assessment.pair_cap,
            epsilon_divide: 1e-9,
            resample_inputs: self.assessment.resample_inputs,
            resample_residuals: self.assessment.resample_residuals,
            parallel: self.assessment.parallel,
        };
        config.validate()?;
        Ok(config)
    }

    /// Read every referenced file and assemble the assessment inputs.
    pub fn load_study_data(&self) -> Result<StudyData> {
        let (pre_period, intervention_period) = self.periods()?;
        let rates = ingest::read_rates(&self.rates_csv)?;
        let national = LocationId::new(&self.national_location);
        let national_rates = rates.get(&national).cloned().ok_or_else(|| {
            Error::Validation(format!(
                "rates file {} has no series for the training location {national}",
                self.rates_csv.display()
            ))
        })?;
        let clusters = ingest::read_clusters(&self.clusters_csv)?;
        let national_features = ingest::read_features(&self.features.national, &clusters)?;

        let targets = LocationSet::new(
            Role::Target,
            self.locations.targets.iter().map(LocationId::new),
        )?;
        let controls = LocationSet::new(
            Role::Control,
            self.locations.controls.iter().map(LocationId::new),
        )?;
        let mut location_features = BTreeMap::new();
        for id in targets.members().iter().chain(controls.members()) {
            let path = self.features.locations.get(id.as_str()).ok_or_else(|| {
                Error::Validation(format!("features.locations has no entry for {id}"))
            })?;
            let features = ingest::read_features(path, &clusters)?;
            if !national_features.layout_matches(&features) {
                return Err(Error::Validation(format!(
                    "feature panel for {id} has a different term/cluster layout \
                     than the national panel"
                )));
            }
            location_features.insert(id.clone(), features);
        }
        let cohorts = self
            .cohorts
            .iter()
            .map(|c| Cohort {
                name: c.name.clone(),
                members: c.members.iter().map(LocationId::new).collect(),
            })
            .collect();

        let data = StudyData {
            national_rates,
            national_features,
            location_features,
            targets,
            controls,
            cohorts,
            pre_period,
            intervention_period,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn out_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        override_dir
            .map(Path::to_path_buf)
            .or_else(|| self.output.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}
