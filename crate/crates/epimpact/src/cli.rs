//! Subcommand entry points for the thin `epimpact` binary: `simulate`,
//! `train`, `assess` and `report`. All validation happens before any output
//! file is created, and exit codes partition the failure classes (2 config,
//! 3 training, 4 assessment, 5 report).

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::config::{SimulateConfig, StudyConfig};
use crate::cv::CvSummary;
use crate::error::{Error, Result};
use crate::gp;
use crate::impact::{self, RateModelConfig};
use crate::ingest;
use crate::linear::{self, LinearSelectConfig};
use crate::model::{ModelFile, ModelKind};
use crate::report::ReportDocument;
use crate::synthetic::{self, TruthFile};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_ASSESSMENT: i32 = 4;
pub const EXIT_REPORT: i32 = 5;

/// An error tagged with the failure class it belongs to.
#[derive(Debug)]
pub struct CliError {
    pub exit_code: i32,
    pub error: Error,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

trait Stage<T> {
    fn stage(self, exit_code: i32) -> CliResult<T>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, exit_code: i32) -> CliResult<T> {
        self.map_err(|error| CliError { exit_code, error })
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "epimpact",
    version,
    about = "Disease-rate nowcasting from term-frequency panels and \
             counterfactual impact assessment of public health interventions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic study dataset (rates, term panels, ground truth)
    Simulate {
        /// Generator configuration (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config)
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Seed (overrides the config)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the disease-rate model and write cross-validation metrics
    Train {
        /// Study configuration (TOML)
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Evaluate gp, ridge and elastic net side by side
        #[arg(long)]
        compare: bool,
    },
    /// Run the counterfactual impact assessment and write the report files
    Assess {
        /// Study configuration (TOML)
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Train the model now instead of loading model.json
        #[arg(long)]
        train: bool,
    },
    /// Pretty-print a report JSON to standard output
    Report {
        /// Report document written by `assess`
        report: PathBuf,
    },
}

/// Parse arguments, dispatch, and return the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate {
            config,
            out_dir,
            seed,
        } => cmd_simulate(&config, out_dir.as_deref(), seed),
        Command::Train {
            config,
            out_dir,
            seed,
            compare,
        } => cmd_train(&config, out_dir.as_deref(), seed, compare),
        Command::Assess {
            config,
            out_dir,
            seed,
            train,
        } => cmd_assess(&config, out_dir.as_deref(), seed, train),
        Command::Report { report } => cmd_report(&report),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code
        }
    }
}

fn file_digest(hasher: &mut Sha256, path: &Path) -> Result<()> {
    hasher.update(std::fs::read(path)?);
    Ok(())
}

/// Generate and write a synthetic dataset plus a ready-to-run study config.
pub fn cmd_simulate(
    config_path: &Path,
    out_dir: Option<&Path>,
    seed: Option<u64>,
) -> CliResult<()> {
    let config = SimulateConfig::load(config_path).stage(EXIT_CONFIG)?;
    let gen = config.to_generator(seed).stage(EXIT_CONFIG)?;
    let dataset = synthetic::generate_study(&gen).stage(EXIT_CONFIG)?;

    let dir = out_dir.unwrap_or(&config.out_dir).to_path_buf();
    std::fs::create_dir_all(&dir)
        .map_err(Error::from)
        .stage(EXIT_CONFIG)?;

    // rates.csv holds every location plus the national training series.
    let rates_path = dir.join("rates.csv");
    let all_rates: Vec<&crate::series::RateSeries> = dataset
        .observed_rates
        .values()
        .chain(std::iter::once(&dataset.national_rates))
        .collect();
    ingest::write_rates(&rates_path, all_rates.into_iter().rev()).stage(EXIT_CONFIG)?;

    let clusters_path = dir.join("clusters.csv");
    let mut assignments: Vec<(String, u32)> = Vec::new();
    for (z, group) in dataset.link.clusters.groups().iter().enumerate() {
        for &c in group {
            assignments.push((dataset.link.terms[c].clone(), z as u32 + 1));
        }
    }
    ingest::write_clusters(
        &clusters_path,
        assignments.iter().map(|(t, z)| (t.as_str(), *z)),
    )
    .stage(EXIT_CONFIG)?;

    let national_features_path = dir.join("features_national.csv");
    ingest::write_features(&national_features_path, &dataset.national_features)
        .stage(EXIT_CONFIG)?;
    let mut feature_paths = Vec::new();
    for (id, features) in &dataset.location_features {
        let path = dir.join(format!("features_{id}.csv"));
        ingest::write_features(&path, features).stage(EXIT_CONFIG)?;
        feature_paths.push((id.clone(), path));
    }

    let truth_path = dir.join("truth.json");
    TruthFile::from_dataset(&dataset)
        .save(&truth_path)
        .stage(EXIT_CONFIG)?;

    let study_path = dir.join("study.toml");
    let study = study_config_for(&config, &gen, &dataset);
    let toml_text = toml::to_string_pretty(&study)
        .map_err(|e| Error::Validation(format!("study.toml serialization: {e}")))
        .stage(EXIT_CONFIG)?;
    std::fs::write(&study_path, toml_text)
        .map_err(Error::from)
        .stage(EXIT_CONFIG)?;

    // One-line dataset digest over every emitted file, in a fixed order.
    let mut hasher = Sha256::new();
    let mut digest_inputs: Vec<PathBuf> = vec![rates_path, clusters_path, national_features_path];
    digest_inputs.extend(feature_paths.iter().map(|(_, p)| p.clone()));
    digest_inputs.push(truth_path);
    digest_inputs.push(study_path);
    for p in &digest_inputs {
        file_digest(&mut hasher, p).stage(EXIT_CONFIG)?;
    }
    let digest: String = hasher
        .finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect();
    println!(
        "simulated {} targets / {} controls, {} weeks, {} terms, theta_true {:+.2}%; \
         wrote {} files to {} [digest {digest}]",
        dataset.targets.len(),
        dataset.controls.len(),
        gen.epidemic.weeks,
        dataset.link.terms.len(),
        gen.theta_true,
        digest_inputs.len(),
        dir.display(),
    );
    Ok(())
}

/// The study config that makes a simulated dataset immediately runnable.
fn study_config_for(
    sim: &SimulateConfig,
    gen: &synthetic::StudyGenConfig,
    dataset: &synthetic::StudyDataset,
) -> StudyConfig {
    use crate::config::*;
    let (pre, alpha) = (dataset.pre_period, dataset.intervention_period);
    StudyConfig {
        schema_version: CONFIG_SCHEMA_VERSION,
        phase: "synthetic".into(),
        source: "synthetic-ugc".into(),
        seed: gen.epidemic.seed,
        rates_csv: PathBuf::from("rates.csv"),
        clusters_csv: PathBuf::from("clusters.csv"),
        national_location: synthetic::NATIONAL_LOCATION.into(),
        features: FeaturesSection {
            national: PathBuf::from("features_national.csv"),
            locations: dataset
                .location_features
                .keys()
                .map(|id| (id.to_string(), PathBuf::from(format!("features_{id}.csv"))))
                .collect(),
        },
        locations: LocationsSection {
            targets: sim.locations.targets.clone(),
            controls: sim.locations.controls.clone(),
        },
        cohorts: Vec::new(),
        periods: PeriodsSection {
            pre_start: pre.start.to_string(),
            pre_end: pre.end.to_string(),
            intervention_start: alpha.start.to_string(),
            intervention_end: alpha.end.to_string(),
        },
        model: ModelSection::default(),
        assessment: AssessmentSection::default(),
        output: OutputSection::default(),
    }
}

fn is_training_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::OptimizationFailed(_)
            | Error::NotPositiveDefinite { .. }
            | Error::NonConvergence { .. }
    )
}

fn metrics_rows(w: &mut csv::Writer<std::fs::File>, model: &str, cv: &CvSummary) -> Result<()> {
    for fold in &cv.folds {
        w.write_record([
            fold.fold.to_string(),
            model.to_string(),
            format!("{:.6}", fold.mae),
            fold.pearson_r.map(|r| format!("{r:.6}")).unwrap_or_default(),
        ])?;
    }
    w.write_record([
        "mean".to_string(),
        model.to_string(),
        format!("{:.6}", cv.mean_mae),
        cv.mean_r.map(|r| format!("{r:.6}")).unwrap_or_default(),
    ])?;
    Ok(())
}

/// Train the configured disease-rate model; write `model.json` and
/// `metrics.csv` (per-fold and mean MAE / Pearson r).
pub fn cmd_train(
    config_path: &Path,
    out_dir: Option<&Path>,
    seed: Option<u64>,
    compare: bool,
) -> CliResult<()> {
    let config = StudyConfig::load(config_path).stage(EXIT_CONFIG)?;
    let data = config.load_study_data().stage(EXIT_CONFIG)?;
    let model_config = config.model_config().stage(EXIT_CONFIG)?;
    let run_seed = seed.unwrap_or(config.seed);
    let folds = config.model.cv_folds;

    let features = data
        .national_features
        .slice(&data.pre_period)
        .stage(EXIT_CONFIG)?;
    let rates = data
        .national_rates
        .slice(&data.pre_period)
        .stage(EXIT_CONFIG)?;

    // Train the configured model and collect its CV metrics.
    let (model, digest) = impact::train_model(&data, &model_config, run_seed)
        .map_err(|e| CliError {
            exit_code: if is_training_failure(&e) {
                EXIT_TRAINING
            } else {
                EXIT_CONFIG
            },
            error: e,
        })?;
    let own_cv: CvSummary = match &model_config {
        RateModelConfig::Gp(cfg) => {
            gp::cross_validate(&features, &rates, folds, cfg, run_seed).stage(EXIT_TRAINING)?
        }
        RateModelConfig::Linear { select, .. } => {
            linear::select_linear(features.values(), rates.values(), select)
                .stage(EXIT_TRAINING)?
                .cv
        }
    };

    // Optional side-by-side comparison of the three model families.
    let mut comparison: Vec<(String, CvSummary)> = Vec::new();
    if compare {
        let own_kind = model.kind();
        for kind in [ModelKind::Gp, ModelKind::Ridge, ModelKind::ElasticNet] {
            if kind == own_kind {
                comparison.push((kind.to_string(), own_cv.clone()));
                continue;
            }
            let cv = match kind {
                ModelKind::Gp => gp::cross_validate(
                    &features,
                    &rates,
                    folds,
                    &crate::gp::GpConfig::default(),
                    run_seed,
                )
                .stage(EXIT_TRAINING)?,
                ModelKind::Ridge => {
                    linear::select_linear(
                        features.values(),
                        rates.values(),
                        &LinearSelectConfig::ridge(folds),
                    )
                    .stage(EXIT_TRAINING)?
                    .cv
                }
                ModelKind::ElasticNet => {
                    linear::select_linear(
                        features.values(),
                        rates.values(),
                        &LinearSelectConfig::elastic_net(folds),
                    )
                    .stage(EXIT_TRAINING)?
                    .cv
                }
            };
            comparison.push((kind.to_string(), cv));
        }
    } else {
        comparison.push((model.kind().to_string(), own_cv.clone()));
    }

    // All computation done; write outputs.
    let dir = config.out_dir(out_dir);
    std::fs::create_dir_all(&dir)
        .map_err(Error::from)
        .stage(EXIT_CONFIG)?;
    ModelFile::from_model(&model, digest)
        .save(&dir.join("model.json"))
        .stage(EXIT_TRAINING)?;
    let metrics_path = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&metrics_path)
        .map_err(Error::from)
        .stage(EXIT_TRAINING)?;
    w.write_record(["fold", "model", "mae", "pearson_r"])
        .map_err(Error::from)
        .stage(EXIT_TRAINING)?;
    for (name, cv) in &comparison {
        metrics_rows(&mut w, name, cv).stage(EXIT_TRAINING)?;
    }
    w.flush().map_err(Error::from).stage(EXIT_TRAINING)?;

    for (name, cv) in &comparison {
        println!(
            "{name}: {}-fold mean MAE {:.4}, mean r {}",
            folds,
            cv.mean_mae,
            cv.mean_r
                .map(|r| format!("{r:.4}"))
                .unwrap_or_else(|| "n/a".into()),
        );
    }
    println!(
        "wrote {} and {}",
        dir.join("model.json").display(),
        metrics_path.display()
    );
    Ok(())
}

/// Run the assessment and write `report.json`, `cohorts.csv` and
/// `plot_data.csv`.
pub fn cmd_assess(
    config_path: &Path,
    out_dir: Option<&Path>,
    seed: Option<u64>,
    train: bool,
) -> CliResult<()> {
    let config = StudyConfig::load(config_path).stage(EXIT_CONFIG)?;
    let data = config.load_study_data().stage(EXIT_CONFIG)?;
    let assess_config = config.assessment_config(seed).stage(EXIT_CONFIG)?;
    let dir = config.out_dir(out_dir);

    let (model, model_digest) = if train {
        let model_config = config.model_config().stage(EXIT_CONFIG)?;
        impact::train_model(&data, &model_config, assess_config.seed).map_err(|e| CliError {
            exit_code: if is_training_failure(&e) {
                EXIT_TRAINING
            } else {
                EXIT_CONFIG
            },
            error: e,
        })?
    } else {
        let model_path = dir.join("model.json");
        if !model_path.exists() {
            return Err(CliError {
                exit_code: EXIT_CONFIG,
                error: Error::Validation(format!(
                    "{} not found; run `train` first or pass --train",
                    model_path.display()
                )),
            });
        }
        let file = ModelFile::load(&model_path).stage(EXIT_CONFIG)?;
        let features = data
            .national_features
            .slice(&data.pre_period)
            .stage(EXIT_CONFIG)?;
        let rates = data
            .national_rates
            .slice(&data.pre_period)
            .stage(EXIT_CONFIG)?;
        let digest = file.training_digest.clone();
        (file.rebuild(&features, &rates).stage(EXIT_CONFIG)?, digest)
    };

    let assessment =
        impact::assess_with_model(&data, &model, &assess_config).stage(EXIT_ASSESSMENT)?;
    let report =
        ReportDocument::from_assessment(&assessment, &assess_config, &config.phase, &config.source);

    std::fs::create_dir_all(&dir)
        .map_err(Error::from)
        .stage(EXIT_ASSESSMENT)?;
    if train {
        ModelFile::from_model(&model, model_digest)
            .save(&dir.join("model.json"))
            .stage(EXIT_ASSESSMENT)?;
    }
    report
        .save(&dir.join("report.json"))
        .stage(EXIT_ASSESSMENT)?;
    report
        .write_cohort_csv(&dir.join("cohorts.csv"))
        .stage(EXIT_ASSESSMENT)?;
    report
        .write_plot_csv(&dir.join("plot_data.csv"))
        .stage(EXIT_ASSESSMENT)?;

    for row in &report.cohorts {
        match &row.estimate {
            Some(est) => println!(
                "cohort {}: theta {:+.2}% ci ({:+.2}, {:+.2}) r {:.3} controls {} {}",
                row.cohort,
                est.theta,
                est.ci_low,
                est.ci_high,
                est.r,
                est.control_subset.len(),
                if !est.assessable {
                    "[not assessable]"
                } else if est.significant {
                    "[significant]"
                } else {
                    "[not significant]"
                }
            ),
            None => println!("cohort {}: no qualified pair", row.cohort),
        }
    }
    println!(
        "wrote report.json, cohorts.csv and plot_data.csv to {}",
        dir.display()
    );
    Ok(())
}

/// Render a report document to standard output.
pub fn cmd_report(report_path: &Path) -> CliResult<()> {
    let report = ReportDocument::load(report_path).stage(EXIT_REPORT)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let rendered = report.render(&mut lock).and_then(|_| lock.flush());
    match rendered {
        Ok(()) => Ok(()),
        // A closed downstream pipe is not a report failure.
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(CliError {
            exit_code: EXIT_REPORT,
            error: e.into(),
        }),
    }
}
