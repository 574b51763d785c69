//! The counterfactual core on clean series: fit a linear projector from a
//! control location to a target location on the pre-intervention window,
//! project the target's counterfactual rates through the intervention
//! window, and compute the impact percentage.
//!
//! With noiseless exactly-affine series and an injected -20% effect the
//! closed loop recovers -20 exactly.
//!
//! Run with: cargo run --release --example counterfactual_projection

use chrono::NaiveDate;
use epimpact::impact::{fit_projection, impact_theta, project};
use epimpact::{DateIndex, LocationId, RateSeries, StudyPeriod};

fn main() -> epimpact::Result<()> {
    let start = NaiveDate::from_ymd_opt(2013, 1, 7).unwrap();
    let index = DateIndex::weekly(start, 72)?;
    let pre = StudyPeriod::pre_intervention(start, index.date_at(52))?;
    let alpha = StudyPeriod::intervention(index.date_at(52), index.end())?;

    // Control curve: one winter wave. Target = 1.6 * control + 2 exactly,
    // with a -20% effect applied inside the intervention window.
    let control_values: Vec<f64> = (0..72)
        .map(|t| {
            let d = (t as f64 - 30.0) / 6.0;
            4.0 + 18.0 * (-0.5 * d * d).exp() + 9.0 * (-0.5 * ((t as f64 - 62.0) / 5.0).powi(2)).exp()
        })
        .collect();
    let target_values: Vec<f64> = control_values
        .iter()
        .enumerate()
        .map(|(t, c)| {
            let clean = 1.6 * c + 2.0;
            if alpha.contains(index.date_at(t)) {
                0.8 * clean
            } else {
                clean
            }
        })
        .collect();
    let control = RateSeries::new(LocationId::new("control"), index, control_values)?;
    let target = RateSeries::new(LocationId::new("target"), index, target_values)?;

    let control_pre = control.slice(&pre)?;
    let target_pre = target.slice(&pre)?;
    let h = fit_projection(control_pre.values(), target_pre.values())?;
    println!(
        "projector: slope {:.4}, intercept {:.4}, R^2 {:.6}, residual se {:.2e}",
        h.slope, h.intercept, h.r_squared, h.residual_se
    );

    let counterfactual = project(&h, &control.slice(&alpha)?);
    let actual = target.slice(&alpha)?;
    println!("\n{:<12} {:>9} {:>15}", "week", "actual", "counterfactual");
    for ((date, a), c) in actual
        .index()
        .dates()
        .zip(actual.values())
        .zip(counterfactual.values())
        .take(8)
    {
        println!("{:<12} {:>9.2} {:>15.2}", date, a, c);
    }

    let theta = impact_theta(&actual, &counterfactual)?;
    println!("\nimpact theta = {theta:+.4}% (negative means disease reduction)");
    Ok(())
}
