//! End-to-end impact assessment on a synthetic study with a known -20%
//! injected effect: train the GP disease model on the national panel,
//! estimate per-location rates, enumerate and screen target/control
//! subsets, project counterfactuals, bootstrap, and print the report.
//!
//! Run with: cargo run --release --example full_assessment

use epimpact::impact::{assess, AssessmentConfig, RateModelConfig};
use epimpact::report::ReportDocument;
use epimpact::synthetic;
use epimpact::GpConfig;

fn main() -> epimpact::Result<()> {
    let seed = 1;
    let gen_config = synthetic::default_study(4, 6, -20.0, seed);
    let dataset = synthetic::generate_study(&gen_config)?;
    println!(
        "study: {} targets, {} controls, theta_true {:+.1}%",
        dataset.targets.len(),
        dataset.controls.len(),
        dataset.truth.theta_true
    );

    let data = dataset.study_data(vec![]);
    let config = AssessmentConfig {
        seed,
        max_subset_size: 2,
        ..Default::default()
    };
    let assessment = assess(&data, &RateModelConfig::Gp(GpConfig::default()), &config)?;

    let report = ReportDocument::from_assessment(&assessment, &config, "synthetic", "synthetic-ugc");
    // Print the cohort table and the first page of the appendix.
    let mut rendered = Vec::new();
    report.render(&mut rendered)?;
    let text = String::from_utf8_lossy(&rendered);
    for line in text.lines().take(30) {
        println!("{line}");
    }
    println!("...");
    println!(
        "\nrecovered theta {:+.2}% for an injected {:+.2}%",
        report.cohorts[0].estimate.as_ref().unwrap().theta,
        dataset.truth.theta_true
    );
    Ok(())
}
