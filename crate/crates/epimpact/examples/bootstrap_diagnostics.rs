//! Bootstrap machinery in isolation: resample a projector's inputs and
//! residuals to build the replicate distribution of the impact percentage,
//! then run the unimodality/symmetry diagnostic that gates the two-sigma
//! significance rule.
//!
//! Run with: cargo run --release --example bootstrap_diagnostics

use epimpact::impact::{
    bootstrap, check_distribution, fit_projection, AssessmentConfig, PairSeries, SubsetPair,
};
use epimpact::util::normal_draw;
use epimpact::LocationId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> epimpact::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    // A noisy but strongly coupled pair with a -15% effect in the last
    // 20 weeks.
    let curve = |t: usize| {
        let d = (t as f64 - 30.0) / 7.0;
        5.0 + 20.0 * (-0.5 * d * d).exp() + 14.0 * (-0.5 * ((t as f64 - 88.0) / 6.0).powi(2)).exp()
    };
    let control: Vec<f64> = (0..104).map(|t| (curve(t) + normal_draw(&mut rng, 0.6)).max(0.0)).collect();
    let target: Vec<f64> = (0..104)
        .map(|t| {
            let clean = 1.3 * curve(t) + 1.0 + normal_draw(&mut rng, 0.6);
            let effect = if t >= 84 { 0.85 } else { 1.0 };
            (clean * effect).max(0.0)
        })
        .collect();
    let series = PairSeries {
        control_pre: control[..84].to_vec(),
        target_pre: target[..84].to_vec(),
        control_alpha: control[84..].to_vec(),
        target_alpha: target[84..].to_vec(),
    };

    let h = fit_projection(&series.control_pre, &series.target_pre)?;
    println!(
        "projector slope {:.3}, intercept {:.3}, R^2 {:.4}",
        h.slope, h.intercept, h.r_squared
    );

    let pair = SubsetPair {
        target_subset: vec![LocationId::new("target")],
        control_subset: vec![LocationId::new("control")],
        index: 0,
        correlation: 0.99,
    };
    let config = AssessmentConfig::default(); // B = 1000, both resampling modes on
    let mut stream = ChaCha8Rng::seed_from_u64(42);
    let estimate = bootstrap(pair, &series, &h, &config, &mut stream)?;
    println!(
        "theta {:+.2}%  95% CI ({:+.2}, {:+.2})  bootstrap sd {:.2}",
        estimate.theta, estimate.ci_low, estimate.ci_high, estimate.bootstrap_sd
    );
    println!(
        "distribution: skewness {:+.3}, {} mode(s), assessable: {} -> significant: {}",
        estimate.distribution.skewness,
        estimate.distribution.n_peaks,
        estimate.distribution.ok,
        estimate.significant
    );

    // The diagnostic on constructed shapes.
    println!("\ndistribution check on constructed samples:");
    let gaussian: Vec<f64> = (0..1000).map(|_| normal_draw(&mut rng, 1.0)).collect();
    let mut bimodal: Vec<f64> = (0..500).map(|_| normal_draw(&mut rng, 0.4) - 5.0).collect();
    bimodal.extend((0..500).map(|_| normal_draw(&mut rng, 0.4) + 5.0));
    let skewed: Vec<f64> = (0..1000).map(|_| -f64::ln(rng.gen_range(1e-9..1.0))).collect();
    for (name, sample) in [("gaussian", gaussian), ("bimodal", bimodal), ("skewed", skewed)] {
        let check = check_distribution(&sample)?;
        println!(
            "  {:<9} skewness {:+.2}, {} mode(s) -> ok = {}",
            name, check.skewness, check.n_peaks, check.ok
        );
    }
    Ok(())
}
