//! Fit the composite-kernel Gaussian Process on a synthetic term panel and
//! inspect the learned hyperparameters and predictive uncertainty.
//!
//! The kernel is a sum over feature clusters of one base kernel each
//! (Matern 5/2 here) plus a noise term; hyperparameters are learned by
//! maximising the log marginal likelihood from several random restarts.
//!
//! Run with: cargo run --release --example fit_gp

use epimpact::synthetic;
use epimpact::{GpConfig, TrainedGP};

fn main() -> epimpact::Result<()> {
    let config = synthetic::default_study(2, 3, 0.0, 11);
    let dataset = synthetic::generate_study(&config)?;
    let features = dataset.national_features.slice(&dataset.pre_period)?;
    let rates = dataset.national_rates.slice(&dataset.pre_period)?;

    let gp = TrainedGP::fit(&features, &rates, &GpConfig::default(), 11)?;
    println!(
        "fitted on {} weeks x {} terms, log marginal likelihood {:.2}",
        features.n_rows(),
        features.n_terms(),
        gp.log_marginal_likelihood(),
    );
    for (z, block) in gp.spec().blocks.iter().enumerate() {
        println!(
            "cluster {z}: signal variance {:.4}, length-scale {:.3}",
            block.signal_variance, block.length_scale
        );
    }
    println!("noise variance {:.5}", gp.spec().noise_variance);

    // Nowcast the held-out intervention window.
    let holdout = dataset.national_features.slice(&dataset.intervention_period)?;
    let truth = dataset.national_rates.slice(&dataset.intervention_period)?;
    let predictions = gp.predict(&holdout)?;
    println!("\nheld-out nowcasts (rate per 100,000):");
    println!("  {:<12} {:>8} {:>8} {:>8}", "week", "actual", "mean", "sd");
    for ((date, (mean, var)), actual) in holdout
        .index()
        .dates()
        .zip(&predictions)
        .zip(truth.values())
        .take(8)
    {
        println!(
            "  {:<12} {:>8.2} {:>8.2} {:>8.2}",
            date,
            actual,
            mean.max(0.0),
            var.sqrt()
        );
    }
    let mae = predictions
        .iter()
        .zip(truth.values())
        .map(|((m, _), t)| (m.max(0.0) - t).abs())
        .sum::<f64>()
        / truth.len() as f64;
    println!("held-out MAE {mae:.3}");
    Ok(())
}
