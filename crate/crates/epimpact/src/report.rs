//! Versioned report document: JSON with full per-pair detail, a cohort CSV
//! with the summary-table columns, tidy plot data, and a human-readable
//! rendering.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impact::{Assessment, AssessmentConfig, ImpactEstimate};
use crate::series::DateIndex;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodDoc {
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateDoc {
    pub target_subset: Vec<String>,
    pub control_subset: Vec<String>,
    pub r: f64,
    /// Percentage impact; negative values are disease reductions.
    pub theta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bootstrap_sd: f64,
    pub significant: bool,
    /// Bootstrap distribution passed the unimodality/symmetry diagnostic.
    pub assessable: bool,
    pub skewness: f64,
    pub n_peaks: usize,
}

impl EstimateDoc {
    fn from_estimate(est: &ImpactEstimate) -> EstimateDoc {
        EstimateDoc {
            target_subset: est.pair.target_subset.iter().map(|l| l.to_string()).collect(),
            control_subset: est
                .pair
                .control_subset
                .iter()
                .map(|l| l.to_string())
                .collect(),
            r: est.pair.correlation,
            theta: est.theta,
            ci_low: est.ci_low,
            ci_high: est.ci_high,
            bootstrap_sd: est.bootstrap_sd,
            significant: est.significant,
            assessable: est.distribution.ok,
            skewness: est.distribution.skewness,
            n_peaks: est.distribution.n_peaks,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesPointDoc {
    pub date: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortRowDoc {
    pub cohort: String,
    pub members: Vec<String>,
    /// Qualified pairs whose target subset equals this cohort.
    pub n_qualified: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Estimated target rates over the intervention window.
    pub actual: Vec<SeriesPointDoc>,
    /// Counterfactual rates from the chosen pair.
    pub counterfactual: Vec<SeriesPointDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroppedDoc {
    pub target_subset: Vec<String>,
    pub control_subset: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub phase: String,
    pub source: String,
    pub model_kind: String,
    pub seed: u64,
    pub rho_min: f64,
    pub max_subset_size: usize,
    pub bootstrap_replicates: usize,
    pub aggregation: String,
    pub pre_period: PeriodDoc,
    pub intervention_period: PeriodDoc,
    pub n_candidate_pairs: u64,
    pub n_qualified_pairs: usize,
    pub best_screened_r: f64,
    pub cohorts: Vec<CohortRowDoc>,
    /// Every qualified pair in screening order (sensitivity appendix).
    pub sensitivity: Vec<EstimateDoc>,
    pub dropped: Vec<DroppedDoc>,
    pub failures: Vec<DroppedDoc>,
}

fn period_doc(index: &DateIndex) -> PeriodDoc {
    PeriodDoc {
        start: index.start.to_string(),
        end: index.end().to_string(),
    }
}

fn series_points(index: &DateIndex, values: &[f64]) -> Vec<SeriesPointDoc> {
    index
        .dates()
        .zip(values)
        .map(|(d, v)| SeriesPointDoc {
            date: d.to_string(),
            value: *v,
        })
        .collect()
}

impl ReportDocument {
    pub fn from_assessment(
        assessment: &Assessment,
        config: &AssessmentConfig,
        phase: &str,
        source: &str,
    ) -> ReportDocument {
        let cohorts = assessment
            .cohort_rows
            .iter()
            .map(|row| CohortRowDoc {
                cohort: row.cohort.name.clone(),
                members: row.cohort.members.iter().map(|l| l.to_string()).collect(),
                n_qualified: row.n_qualified,
                estimate: row.estimate.as_ref().map(EstimateDoc::from_estimate),
                note: row.note.clone(),
                actual: series_points(&assessment.alpha_index, &row.actual),
                counterfactual: row
                    .counterfactual
                    .as_ref()
                    .map(|cf| series_points(&assessment.alpha_index, cf))
                    .unwrap_or_default(),
            })
            .collect();
        ReportDocument {
            schema_version: REPORT_SCHEMA_VERSION,
            phase: phase.to_string(),
            source: source.to_string(),
            model_kind: assessment.model_kind.to_string(),
            seed: config.seed,
            rho_min: config.rho_min,
            max_subset_size: config.max_subset_size,
            bootstrap_replicates: config.bootstrap_replicates,
            aggregation: config.aggregation.label().to_string(),
            pre_period: period_doc(&assessment.pre_index),
            intervention_period: period_doc(&assessment.alpha_index),
            n_candidate_pairs: assessment.n_candidates,
            n_qualified_pairs: assessment.estimates.len(),
            best_screened_r: assessment.best_r,
            cohorts,
            sensitivity: assessment
                .estimates
                .iter()
                .map(EstimateDoc::from_estimate)
                .collect(),
            dropped: assessment
                .dropped
                .iter()
                .map(|d| DroppedDoc {
                    target_subset: d.target_subset.iter().map(|l| l.to_string()).collect(),
                    control_subset: d.control_subset.iter().map(|l| l.to_string()).collect(),
                    reason: d.reason.clone(),
                })
                .collect(),
            failures: assessment
                .failures
                .iter()
                .map(|f| DroppedDoc {
                    target_subset: f.target_subset.iter().map(|l| l.to_string()).collect(),
                    control_subset: f.control_subset.iter().map(|l| l.to_string()).collect(),
                    reason: f.reason.clone(),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ReportDocument> {
        let text = std::fs::read_to_string(path)?;
        let doc: ReportDocument = serde_json::from_str(&text)?;
        if doc.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: doc.schema_version,
                expected: REPORT_SCHEMA_VERSION,
            });
        }
        Ok(doc)
    }

    /// Cohort summary CSV with the fixed column order
    /// `phase,source,target_cohort,n_control,r,theta,ci_low,ci_high,significant`.
    pub fn write_cohort_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "phase",
            "source",
            "target_cohort",
            "n_control",
            "r",
            "theta",
            "ci_low",
            "ci_high",
            "significant",
        ])?;
        for row in &self.cohorts {
            match &row.estimate {
                Some(est) => {
                    let significance = if !est.assessable {
                        "not_assessable"
                    } else if est.significant {
                        "true"
                    } else {
                        "false"
                    };
                    w.write_record([
                        self.phase.as_str(),
                        self.source.as_str(),
                        row.cohort.as_str(),
                        &est.control_subset.len().to_string(),
                        &format!("{:.4}", est.r),
                        &format!("{:.2}", est.theta),
                        &format!("{:.2}", est.ci_low),
                        &format!("{:.2}", est.ci_high),
                        significance,
                    ])?;
                }
                None => {
                    w.write_record([
                        self.phase.as_str(),
                        self.source.as_str(),
                        row.cohort.as_str(),
                        "0",
                        "",
                        "",
                        "",
                        "",
                        "no_qualified_pair",
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Tidy plot data: one row per cohort, series role and time point.
    pub fn write_plot_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cohort", "series", "date", "value"])?;
        for row in &self.cohorts {
            for (label, points) in
                [("actual", &row.actual), ("counterfactual", &row.counterfactual)]
            {
                for p in points {
                    w.write_record([
                        row.cohort.as_str(),
                        label,
                        p.date.as_str(),
                        &format!("{}", p.value),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable summary: cohort table plus the sensitivity appendix.
    /// Renders what the document says; never recomputes.
    pub fn render(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "Impact assessment — phase: {}, source: {}, model: {}",
            self.phase, self.source, self.model_kind
        )?;
        writeln!(
            out,
            "pre-intervention [{}, {})  intervention [{}, {})",
            self.pre_period.start,
            self.pre_period.end,
            self.intervention_period.start,
            self.intervention_period.end
        )?;
        writeln!(
            out,
            "rho_min {:.2}, max subset size {}, B {}, seed {}, aggregation {}",
            self.rho_min, self.max_subset_size, self.bootstrap_replicates, self.seed, self.aggregation
        )?;
        writeln!(
            out,
            "{} candidate pairs, {} qualified (best screened r {:.3})",
            self.n_candidate_pairs, self.n_qualified_pairs, self.best_screened_r
        )?;
        writeln!(out)?;

        if self.sensitivity.is_empty() && self.cohorts.iter().all(|c| c.estimate.is_none()) {
            writeln!(out, "*** no qualified pairs ***")?;
            return Ok(());
        }

        writeln!(out, "Cohort summary (impact % of disease rates):")?;
        writeln!(
            out,
            "  {:<28} {:>9} {:>7} {:>10} {:>20}   significance",
            "cohort", "controls", "r", "theta", "95% CI"
        )?;
        for row in &self.cohorts {
            match &row.estimate {
                Some(est) => {
                    let marker = if est.significant { "*" } else { " " };
                    let significance = if !est.assessable {
                        "not assessable"
                    } else if est.significant {
                        "significant"
                    } else {
                        "not significant"
                    };
                    writeln!(
                        out,
                        "  {:<28} {:>9} {:>7.2} {:>9.2}{} ({:>8.2}, {:>8.2})   {}",
                        row.cohort,
                        est.control_subset.len(),
                        est.r,
                        est.theta,
                        marker,
                        est.ci_low,
                        est.ci_high,
                        significance
                    )?;
                }
                None => {
                    writeln!(
                        out,
                        "  {:<28} {:>9} {:>7} {:>10} {:>20}   {}",
                        row.cohort,
                        "-",
                        "-",
                        "-",
                        "-",
                        row.note.as_deref().unwrap_or("no qualified pair")
                    )?;
                }
            }
        }
        writeln!(out, "  (*) |theta| exceeds twice the bootstrap standard deviation")?;
        writeln!(out)?;

        writeln!(
            out,
            "Sensitivity appendix ({} qualified pairs):",
            self.sensitivity.len()
        )?;
        writeln!(
            out,
            "  {:<30} {:<30} {:>7} {:>9} {:>20}",
            "targets", "controls", "r", "theta", "95% CI"
        )?;
        for est in &self.sensitivity {
            let marker = if est.significant { "*" } else { " " };
            writeln!(
                out,
                "  {:<30} {:<30} {:>7.3} {:>8.2}{} ({:>8.2}, {:>8.2})",
                est.target_subset.join("+"),
                est.control_subset.join("+"),
                est.r,
                est.theta,
                marker,
                est.ci_low,
                est.ci_high
            )?;
        }
        if !self.dropped.is_empty() || !self.failures.is_empty() {
            writeln!(
                out,
                "\n{} pairs dropped at screening, {} pairs failed during the sweep",
                self.dropped.len(),
                self.failures.len()
            )?;
        }
        Ok(())
    }
}
