//! Generate a synthetic multi-location epidemic with a known injected
//! intervention effect, link term-frequency panels to the curves, and write
//! everything in the CSV/JSON schemas the pipeline ingests.
//!
//! Run with: cargo run --release --example simulate_dataset

use epimpact::ingest;
use epimpact::series::pearson;
use epimpact::synthetic::{self, TruthFile};

fn main() -> epimpact::Result<()> {
    // 4 vaccinated (target) and 6 unvaccinated (control) locations over
    // 124 weeks; the last 20 weeks carry a known -20% effect in the targets.
    let config = synthetic::default_study(4, 6, -20.0, 7);
    let dataset = synthetic::generate_study(&config)?;

    println!(
        "generated {} locations x {} weeks, {} terms in {} clusters",
        dataset.observed_rates.len(),
        config.epidemic.weeks,
        dataset.link.terms.len(),
        dataset.link.clusters.n_clusters(),
    );
    println!(
        "pre-intervention [{}, {}), intervention [{}, {}), theta_true {:+.1}%",
        dataset.pre_period.start,
        dataset.pre_period.end,
        dataset.intervention_period.start,
        dataset.intervention_period.end,
        dataset.truth.theta_true,
    );

    // Cross-location coupling on the pre-intervention window.
    let ids: Vec<_> = dataset.observed_rates.keys().cloned().collect();
    let a = dataset.observed_rates[&ids[0]].slice(&dataset.pre_period)?;
    let b = dataset.observed_rates[&ids[1]].slice(&dataset.pre_period)?;
    println!(
        "pairwise pre-intervention r({}, {}) = {:.3}",
        ids[0],
        ids[1],
        pearson(a.values(), b.values())?
    );

    let dir = std::env::temp_dir().join("epimpact_examples/simulate_dataset");
    std::fs::create_dir_all(&dir)?;
    ingest::write_rates(
        &dir.join("rates.csv"),
        dataset
            .observed_rates
            .values()
            .chain(std::iter::once(&dataset.national_rates)),
    )?;
    ingest::write_features(&dir.join("features_national.csv"), &dataset.national_features)?;
    for (id, features) in &dataset.location_features {
        ingest::write_features(&dir.join(format!("features_{id}.csv")), features)?;
    }
    TruthFile::from_dataset(&dataset).save(&dir.join("truth.json"))?;
    println!("wrote dataset files to {}", dir.display());
    Ok(())
}
