//! Disease-rate nowcasting from user-generated-content term frequencies and
//! counterfactual impact assessment of public health interventions.
//!
//! The library covers the full pipeline:
//!
//! 1. **Disease modelling** — a zero-mean Gaussian Process maps term-frequency
//!    panels to disease rates through a composite kernel: one base kernel
//!    (Matérn 5/2, Matérn 3/2 or rational quadratic) per feature cluster,
//!    summed, plus a noise term. Hyperparameters are learned by maximising
//!    the log marginal likelihood from multiple restarts. Ridge and elastic
//!    net baselines share the blocked cross-validation harness.
//! 2. **Impact assessment** — target/control location subsets are enumerated
//!    and screened by pre-intervention correlation of their estimated rates;
//!    a linear projector maps control rates to a counterfactual for each
//!    qualified pair; the impact percentage is bootstrapped (residual and
//!    input resampling) into confidence intervals with a two-sigma
//!    significance rule conditioned on a unimodality/symmetry diagnostic.
//! 3. **Synthetic studies** — a seeded generator produces correlated
//!    epidemic curves, term panels linked to them, and known injected
//!    effects, so the whole pipeline can be validated quantitatively.
//!
//! # Examples
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run --release --example simulate_dataset
//! cargo run --release --example fit_gp
//! cargo run --release --example cross_validate_models
//! cargo run --release --example counterfactual_projection
//! cargo run --release --example bootstrap_diagnostics
//! cargo run --release --example full_assessment
//! ```
//!
//! A thin `epimpact` binary wraps the same pipeline as `simulate`, `train`,
//! `assess` and `report` subcommands over CSV/TOML/JSON files; see the
//! crate README.

pub mod cli;
pub mod config;
pub mod cv;
pub mod error;
pub mod features;
pub mod gp;
pub mod impact;
pub mod ingest;
pub mod kernel;
pub mod linear;
pub mod model;
pub mod optim;
pub mod report;
pub mod series;
pub mod synthetic;
pub mod util;

pub use error::{Error, Result};
pub use features::{ClusterPartition, FeatureMatrix};
pub use gp::{GpConfig, TrainedGP};
pub use impact::{
    assess, assess_with_model, enumerate_pairs, fit_projection, impact_theta, project,
    screen, Assessment, AssessmentConfig, Cohort, ImpactEstimate, LinearProjector,
    RateModelConfig, StudyData, SubsetPair,
};
pub use kernel::{BaseKernel, ClusterParams, KernelSpec};
pub use linear::{fit_linear, predict_linear, LinearModel, LinearSelectConfig};
pub use model::{ModelFile, ModelKind, RateModel};
pub use series::{
    align, mean, pearson, DateIndex, LocationId, LocationSet, PeriodKind, RateSeries,
    Role, StudyPeriod,
};
pub use synthetic::{
    default_study, generate_epidemic, generate_study, generate_ugc, inject_intervention,
    EpidemicConfig, GroundTruth, StudyDataset, StudyGenConfig, UgcConfig, UgcLink,
};
