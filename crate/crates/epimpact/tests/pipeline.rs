//! Library-level integration of the assessment pipeline: validation
//! contracts, cohort handling, model-null fixtures and bootstrap edge cases.

use std::collections::BTreeMap;

use epimpact::impact::{
    assess, bootstrap, fit_projection, AssessmentConfig, Cohort, PairSeries,
    RateModelConfig, SubsetPair,
};
use epimpact::linear::LinearSelectConfig;
use epimpact::model::ModelKind;
use epimpact::synthetic::{self, UgcConfig};
use epimpact::util::normal_draw;
use epimpact::{gp, Error, GpConfig, LocationId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_linear_model() -> RateModelConfig {
    RateModelConfig::Linear {
        kind: ModelKind::Ridge,
        select: LinearSelectConfig {
            fixed_lambda: Some(1e-6),
            fixed_mixing: Some(0.0),
            ..LinearSelectConfig::ridge(10)
        },
    }
}

#[test]
fn intervention_before_training_window_is_rejected() {
    let gen_config = synthetic::default_study(2, 2, -20.0, 3);
    let dataset = synthetic::generate_study(&gen_config).unwrap();
    let mut data = dataset.study_data(vec![]);
    std::mem::swap(&mut data.pre_period, &mut data.intervention_period);
    data.pre_period = epimpact::StudyPeriod::pre_intervention(
        data.pre_period.start,
        data.pre_period.end,
    )
    .unwrap();
    data.intervention_period = epimpact::StudyPeriod::intervention(
        data.intervention_period.start,
        data.intervention_period.end,
    )
    .unwrap();
    let config = AssessmentConfig {
        seed: 3,
        ..Default::default()
    };
    match assess(&data, &small_linear_model(), &config) {
        Err(Error::PeriodOrder(_)) => {}
        other => panic!("expected PeriodOrder error, got {other:?}"),
    }
}

#[test]
fn impossible_screen_threshold_reports_best_correlation() {
    let gen_config = synthetic::default_study(2, 3, -20.0, 4);
    let dataset = synthetic::generate_study(&gen_config).unwrap();
    let data = dataset.study_data(vec![]);
    let config = AssessmentConfig {
        seed: 4,
        rho_min: 1.0,
        max_subset_size: 2,
        ..Default::default()
    };
    match assess(&data, &small_linear_model(), &config) {
        Err(Error::NoQualifiedPairs { best_r, rho_min }) => {
            assert_eq!(rho_min, 1.0);
            assert!(best_r < 1.0 && best_r > 0.0, "best_r {best_r}");
        }
        other => panic!("expected NoQualifiedPairs, got {other:?}"),
    }
}

#[test]
fn cohort_rows_follow_input_order_and_aggregate_members() {
    let gen_config = synthetic::default_study(3, 3, -20.0, 8);
    let dataset = synthetic::generate_study(&gen_config).unwrap();
    let cohorts = vec![
        Cohort {
            name: "second".into(),
            members: vec![LocationId::new("t01")],
        },
        Cohort {
            name: "first".into(),
            members: vec![LocationId::new("t00")],
        },
        Cohort {
            name: "both".into(),
            members: vec![LocationId::new("t00"), LocationId::new("t01")],
        },
    ];
    let data = dataset.study_data(cohorts);
    let config = AssessmentConfig {
        seed: 8,
        max_subset_size: 1,
        bootstrap_replicates: 200,
        ..Default::default()
    };
    let assessment = assess(&data, &small_linear_model(), &config).unwrap();
    let names: Vec<&str> = assessment
        .cohort_rows
        .iter()
        .map(|c| c.cohort.name.as_str())
        .collect();
    assert_eq!(names, vec!["second", "first", "both"]);
    for row in &assessment.cohort_rows {
        assert_eq!(row.actual.len(), assessment.alpha_index.count);
        if let Some(est) = &row.estimate {
            assert_eq!(est.pair.target_subset, row.cohort.members);
            assert!(row.counterfactual.is_some());
            assert!(est.ci_low <= est.theta && est.theta <= est.ci_high);
        }
    }
    // The two-member cohort exceeds max_subset_size = 1, so its pair only
    // exists through the cohort augmentation.
    let both = &assessment.cohort_rows[2];
    assert!(both.estimate.is_some());
}

#[test]
fn all_distractor_vocabulary_has_no_predictive_signal() {
    // Pure-noise features: cross-validated correlation statistically
    // indistinguishable from zero across seeds.
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut gen_config = synthetic::default_study(1, 1, 0.0, seed);
        gen_config.epidemic.weeks = 64;
        gen_config.pre_weeks = 56;
        gen_config.ugc = UgcConfig {
            terms_per_cluster: vec![2, 2],
            distractor_fraction: 1.0,
            ..Default::default()
        };
        let dataset = synthetic::generate_study(&gen_config).unwrap();
        let features = dataset.national_features.slice(&dataset.pre_period).unwrap();
        let rates = dataset.national_rates.slice(&dataset.pre_period).unwrap();
        let cv = gp::cross_validate(&features, &rates, 8, &GpConfig::default(), seed).unwrap();
        if let Some(r) = cv.mean_r {
            worst = worst.max(r.abs());
        }
    }
    assert!(worst < 0.3, "distractor-only CV |r| reached {worst}");
}

#[test]
fn default_link_supports_accurate_nowcasts() {
    // Default term panel (20% distractors, moderate noise): the GP reaches
    // a cross-validated correlation of at least 0.8.
    for seed in 0..5u64 {
        let gen_config = synthetic::default_study(2, 3, 0.0, seed);
        let dataset = synthetic::generate_study(&gen_config).unwrap();
        let features = dataset.national_features.slice(&dataset.pre_period).unwrap();
        let rates = dataset.national_rates.slice(&dataset.pre_period).unwrap();
        let cv = gp::cross_validate(&features, &rates, 10, &GpConfig::default(), seed).unwrap();
        let r = cv.mean_r.expect("defined correlation");
        assert!(r >= 0.8, "seed {seed}: CV r {r}");
    }
}

#[test]
fn bootstrap_redraws_degenerate_resamples() {
    // A pre-intervention window with a single distinct control value makes
    // roughly a third of the resamples constant; they are redrawn, and the
    // estimate still collects exactly B replicates.
    let control_pre = vec![5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 9.0];
    let target_pre: Vec<f64> = control_pre.iter().map(|c| 1.5 * c + 1.0).collect();
    let series = PairSeries {
        control_pre: control_pre.clone(),
        target_pre,
        control_alpha: vec![6.0, 7.0, 8.0],
        target_alpha: vec![10.0, 11.5, 13.0],
    };
    let h = fit_projection(&series.control_pre, &series.target_pre).unwrap();
    let pair = SubsetPair {
        target_subset: vec![LocationId::new("t")],
        control_subset: vec![LocationId::new("c")],
        index: 0,
        correlation: 1.0,
    };
    let config = AssessmentConfig {
        bootstrap_replicates: 500,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let est = bootstrap(pair, &series, &h, &config, &mut rng).unwrap();
    assert_eq!(est.bootstrap_samples.len(), 500);
}

#[test]
fn bootstrap_fails_cleanly_when_every_replicate_is_degenerate() {
    // An absurd division guard makes every replicate invalid; after 10*B
    // attempts the bootstrap reports failure instead of looping.
    let control_pre: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
    let target_pre: Vec<f64> = control_pre.iter().map(|c| 2.0 * c).collect();
    let series = PairSeries {
        control_pre: control_pre.clone(),
        target_pre,
        control_alpha: vec![2.0, 3.0],
        target_alpha: vec![4.0, 6.0],
    };
    let h = fit_projection(&series.control_pre, &series.target_pre).unwrap();
    let pair = SubsetPair {
        target_subset: vec![LocationId::new("t")],
        control_subset: vec![LocationId::new("c")],
        index: 0,
        correlation: 1.0,
    };
    let config = AssessmentConfig {
        bootstrap_replicates: 100,
        epsilon_divide: 1e9,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    match bootstrap(pair, &series, &h, &config, &mut rng) {
        Err(Error::CounterfactualNearZero { .. }) | Err(Error::BootstrapFailed(_)) => {}
        other => panic!("expected a degenerate-bootstrap error, got {other:?}"),
    }
}

#[test]
fn pair_failures_do_not_abort_the_study() {
    // One control location is constant over the whole horizon: every pair
    // containing it drops at screening (degenerate correlation) while the
    // rest of the sweep completes.
    let gen_config = synthetic::default_study(2, 2, -20.0, 6);
    let dataset = synthetic::generate_study(&gen_config).unwrap();
    let mut data = dataset.study_data(vec![]);

    // Overwrite c00's estimated-rate inputs with a constant panel: constant
    // features produce constant rate estimates under any model.
    let c00 = LocationId::new("c00");
    let features = &data.location_features[&c00];
    let constant = nalgebra::DMatrix::from_element(
        features.n_rows(),
        features.n_terms(),
        2.0,
    );
    let replacement = epimpact::FeatureMatrix::new(
        *features.index(),
        features.terms().to_vec(),
        constant,
        features.clusters().clone(),
    )
    .unwrap();
    data.location_features.insert(c00.clone(), replacement);

    let config = AssessmentConfig {
        seed: 6,
        max_subset_size: 1,
        bootstrap_replicates: 200,
        ..Default::default()
    };
    let assessment = assess(&data, &small_linear_model(), &config).unwrap();
    assert!(
        !assessment.dropped.is_empty(),
        "constant control should drop its pairs at screening"
    );
    assert!(
        assessment
            .dropped
            .iter()
            .all(|d| d.control_subset.contains(&c00)),
        "only c00 pairs should drop"
    );
    assert!(!assessment.estimates.is_empty());
}

#[test]
fn aggregation_modes_weight_members() {
    let series: BTreeMap<LocationId, Vec<f64>> = [
        (LocationId::new("a"), vec![1.0, 2.0]),
        (LocationId::new("b"), vec![3.0, 6.0]),
    ]
    .into();
    let members = [LocationId::new("a"), LocationId::new("b")];
    let mean = epimpact::impact::Aggregation::Mean
        .aggregate(&members, &series)
        .unwrap();
    assert_eq!(mean, vec![2.0, 4.0]);

    let weighted = epimpact::impact::Aggregation::PopulationWeighted(
        [(LocationId::new("a"), 3.0), (LocationId::new("b"), 1.0)].into(),
    )
    .aggregate(&members, &series)
    .unwrap();
    assert_eq!(weighted, vec![1.5, 3.0]);

    // Missing weights are a validation error.
    let missing = epimpact::impact::Aggregation::PopulationWeighted(
        [(LocationId::new("a"), 3.0)].into(),
    )
    .aggregate(&members, &series);
    assert!(missing.is_err());
}

#[test]
fn noisy_null_bootstrap_stays_calibrated_at_pair_level() {
    // Direct Monte Carlo of the bootstrap significance rule on a null pair:
    // strongly coupled series, no effect. The two-sigma rule conditioned on
    // the distribution diagnostic flags at most ~10% of seeds.
    let mut flagged = 0;
    let n_seeds = 60;
    for seed in 0..n_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let curve = |t: usize| {
            let d = (t as f64 - 30.0) / 7.0;
            5.0 + 20.0 * (-0.5 * d * d).exp()
                + 14.0 * (-0.5 * ((t as f64 - 88.0) / 6.0).powi(2)).exp()
        };
        let control: Vec<f64> = (0..104)
            .map(|t| (curve(t) + normal_draw(&mut rng, 0.7)).max(0.0))
            .collect();
        let target: Vec<f64> = (0..104)
            .map(|t| (1.25 * curve(t) + 1.0 + normal_draw(&mut rng, 0.7)).max(0.0))
            .collect();
        let series = PairSeries {
            control_pre: control[..84].to_vec(),
            target_pre: target[..84].to_vec(),
            control_alpha: control[84..].to_vec(),
            target_alpha: target[84..].to_vec(),
        };
        let h = fit_projection(&series.control_pre, &series.target_pre).unwrap();
        let pair = SubsetPair {
            target_subset: vec![LocationId::new("t")],
            control_subset: vec![LocationId::new("c")],
            index: 0,
            correlation: 0.99,
        };
        let config = AssessmentConfig {
            bootstrap_replicates: 400,
            ..Default::default()
        };
        let mut stream = ChaCha8Rng::seed_from_u64(1000 + seed);
        let est = bootstrap(pair, &series, &h, &config, &mut stream).unwrap();
        if est.significant {
            flagged += 1;
        }
    }
    assert!(
        flagged * 10 <= n_seeds, // <= 10%
        "null pair flagged significant in {flagged}/{n_seeds} seeds"
    );
}
