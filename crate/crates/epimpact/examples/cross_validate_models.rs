//! Compare the GP against the ridge and elastic-net baselines with blocked
//! 10-fold cross-validation (contiguous time folds), reporting MAE and
//! Pearson correlation per model.
//!
//! Run with: cargo run --release --example cross_validate_models

use epimpact::linear::{select_linear, LinearSelectConfig};
use epimpact::synthetic;
use epimpact::{gp, GpConfig};

fn main() -> epimpact::Result<()> {
    let config = synthetic::default_study(2, 3, 0.0, 3);
    let dataset = synthetic::generate_study(&config)?;
    let features = dataset.national_features.slice(&dataset.pre_period)?;
    let rates = dataset.national_rates.slice(&dataset.pre_period)?;
    println!(
        "training panel: {} weeks x {} terms\n",
        features.n_rows(),
        features.n_terms()
    );

    let gp_cv = gp::cross_validate(&features, &rates, 10, &GpConfig::default(), 3)?;
    let ridge = select_linear(features.values(), rates.values(), &LinearSelectConfig::ridge(10))?;
    let en = select_linear(
        features.values(),
        rates.values(),
        &LinearSelectConfig::elastic_net(10),
    )?;

    println!("{:<14} {:>10} {:>10}   hyperparameters", "model", "mean MAE", "mean r");
    let fmt_r = |r: Option<f64>| r.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into());
    println!(
        "{:<14} {:>10.4} {:>10}   Matern 5/2, 10 restarts",
        "gp",
        gp_cv.mean_mae,
        fmt_r(gp_cv.mean_r)
    );
    println!(
        "{:<14} {:>10.4} {:>10}   lambda {:.4}",
        "ridge",
        ridge.cv.mean_mae,
        fmt_r(ridge.cv.mean_r),
        ridge.lambda
    );
    println!(
        "{:<14} {:>10.4} {:>10}   lambda {:.4}, mixing {}",
        "elastic_net",
        en.cv.mean_mae,
        fmt_r(en.cv.mean_r),
        en.lambda,
        en.mixing
    );

    println!("\nper-fold MAE (gp):");
    for fold in &gp_cv.folds {
        println!(
            "  fold {}: mae {:.4}, r {}",
            fold.fold,
            fold.mae,
            fmt_r(fold.pearson_r)
        );
    }
    Ok(())
}
