//! Unified disease-rate estimator over the GP and the linear baselines,
//! plus the versioned JSON document that ties a fitted model to a training
//! data digest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ClusterPartition, FeatureMatrix};
use crate::gp::TrainedGP;
use crate::kernel::KernelSpec;
use crate::linear::{self, LinearModel};
use crate::series::RateSeries;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Which estimator family a model belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gp,
    Ridge,
    ElasticNet,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Gp => write!(f, "gp"),
            ModelKind::Ridge => write!(f, "ridge"),
            ModelKind::ElasticNet => write!(f, "elastic_net"),
        }
    }
}

/// A fitted disease-rate estimator.
#[derive(Debug, Clone)]
pub enum RateModel {
    Gp(TrainedGP),
    Linear {
        kind: ModelKind,
        model: LinearModel,
        terms: Vec<String>,
    },
}

impl RateModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            RateModel::Gp(_) => ModelKind::Gp,
            RateModel::Linear { kind, .. } => *kind,
        }
    }

    /// Estimated disease rates for a feature panel, clamped at zero.
    pub fn estimate_rates(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            RateModel::Gp(gp) => gp.predict_rates(features),
            RateModel::Linear { model, terms, .. } => {
                if !terms.is_empty() && features.terms() != terms.as_slice() {
                    return Err(Error::DimensionMismatch(
                        "prediction features have a different term layout than training".into(),
                    ));
                }
                linear::predict_rates(model, features.values())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpDocument {
    pub spec: KernelSpec,
    pub clusters: ClusterPartition,
    pub terms: Vec<String>,
    pub standardize: bool,
    pub log_marginal_likelihood: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearDocument {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub mixing: f64,
    pub terms: Vec<String>,
}

/// Versioned on-disk model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub model_kind: ModelKind,
    pub training_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gp: Option<GpDocument>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearDocument>,
}

impl ModelFile {
    /// Snapshot a fitted model together with its training-data digest.
    pub fn from_model(model: &RateModel, digest: String) -> ModelFile {
        match model {
            RateModel::Gp(gp) => ModelFile {
                schema_version: MODEL_SCHEMA_VERSION,
                model_kind: ModelKind::Gp,
                training_digest: digest,
                gp: Some(GpDocument {
                    spec: gp.spec().clone(),
                    clusters: gp.clusters().clone(),
                    terms: Vec::new(),
                    standardize: gp.is_standardized(),
                    log_marginal_likelihood: gp.log_marginal_likelihood(),
                }),
                linear: None,
            },
            RateModel::Linear { kind, model, terms } => ModelFile {
                schema_version: MODEL_SCHEMA_VERSION,
                model_kind: *kind,
                training_digest: digest,
                gp: None,
                linear: Some(LinearDocument {
                    weights: model.weights.clone(),
                    intercept: model.intercept,
                    lambda: model.lambda,
                    mixing: model.mixing,
                    terms: terms.clone(),
                }),
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelFile> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: file.schema_version,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        Ok(file)
    }

    /// Rebuild a usable estimator, verifying the document against the
    /// training data it claims to come from.
    pub fn rebuild(&self, features: &FeatureMatrix, rates: &RateSeries) -> Result<RateModel> {
        let digest = features.digest_with_targets(rates.values());
        if digest != self.training_digest {
            return Err(Error::Validation(format!(
                "training data digest {digest} does not match the model document ({})",
                self.training_digest
            )));
        }
        match self.model_kind {
            ModelKind::Gp => {
                let doc = self.gp.as_ref().ok_or_else(|| {
                    Error::Parse("gp model document is missing its gp block".into())
                })?;
                let gp = TrainedGP::with_spec(
                    doc.spec.clone(),
                    features,
                    rates,
                    doc.standardize,
                )?;
                Ok(RateModel::Gp(gp))
            }
            ModelKind::Ridge | ModelKind::ElasticNet => {
                let doc = self.linear.as_ref().ok_or_else(|| {
                    Error::Parse("linear model document is missing its linear block".into())
                })?;
                Ok(RateModel::Linear {
                    kind: self.model_kind,
                    model: LinearModel {
                        weights: doc.weights.clone(),
                        intercept: doc.intercept,
                        lambda: doc.lambda,
                        mixing: doc.mixing,
                        diagnostics: linear::CdDiagnostics {
                            sweeps: 0,
                            converged: true,
                            final_change: 0.0,
                            objective_trace: vec![],
                        },
                    },
                    terms: doc.terms.clone(),
                })
            }
        }
    }
}
