//! Property tests of the statistical invariants.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use proptest::prelude::*;

use epimpact::impact::{enumerate_pairs, fit_projection, screen, AssessmentConfig};
use epimpact::series::{align, pearson, DateIndex, LocationId, LocationSet, RateSeries, Role, StudyPeriod};

fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2013, 1, 7).unwrap()
}

fn value_seq(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..50.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pearson_is_symmetric_and_bounded(a in value_seq(24), b in value_seq(24)) {
        if let (Ok(ab), Ok(ba)) = (pearson(&a, &b), pearson(&b, &a)) {
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn pearson_is_affine_invariant_up_to_sign(
        a in value_seq(20),
        b in value_seq(20),
        alpha in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
        beta in -10.0f64..10.0,
        gamma in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
        delta in -10.0f64..10.0,
    ) {
        if let Ok(r) = pearson(&a, &b) {
            let a2: Vec<f64> = a.iter().map(|v| alpha * v + beta).collect();
            let b2: Vec<f64> = b.iter().map(|v| gamma * v + delta).collect();
            let r2 = pearson(&a2, &b2).unwrap();
            let expected = (alpha * gamma).signum() * r;
            prop_assert!((r2 - expected).abs() < 1e-10, "r {r}, transformed {r2}");
        }
    }

    #[test]
    fn nested_slicing_collapses(values in value_seq(40), lo in 0usize..10, hi in 25usize..40) {
        let index = DateIndex::weekly(start_date(), 40).unwrap();
        let series = RateSeries::new(LocationId::new("x"), index, values).unwrap();
        let outer = StudyPeriod::pre_intervention(index.date_at(lo), index.date_at(hi)).unwrap();
        let inner = StudyPeriod::pre_intervention(index.date_at(lo + 3), index.date_at(hi - 3)).unwrap();
        let twice = series.slice(&outer).unwrap().slice(&inner).unwrap();
        let once = series.slice(&inner).unwrap();
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn align_is_idempotent_on_aligned_series(a in value_seq(30), b in value_seq(30)) {
        let index = DateIndex::weekly(start_date(), 30).unwrap();
        let sa = RateSeries::new(LocationId::new("a"), index, a).unwrap();
        let sb = RateSeries::new(LocationId::new("b"), index, b).unwrap();
        let (va, vb) = align(&sa, &sb).unwrap();
        prop_assert_eq!(&va, sa.values());
        prop_assert_eq!(&vb, sb.values());
        // Aligning the aligned values again changes nothing.
        let ra = RateSeries::new(LocationId::new("a"), index, va.clone()).unwrap();
        let rb = RateSeries::new(LocationId::new("b"), index, vb.clone()).unwrap();
        let (wa, wb) = align(&ra, &rb).unwrap();
        prop_assert_eq!(wa, va);
        prop_assert_eq!(wb, vb);
    }

    #[test]
    fn theta_is_scale_invariant(
        actual in value_seq(12),
        counterfactual in proptest::collection::vec(0.5f64..50.0, 12),
        scale in 0.01f64..100.0,
    ) {
        let index = DateIndex::weekly(start_date(), 12).unwrap();
        let mk = |v: &[f64]| RateSeries::new(LocationId::new("x"), index, v.to_vec()).unwrap();
        let theta = epimpact::impact_theta(&mk(&actual), &mk(&counterfactual)).unwrap();
        let scaled_a: Vec<f64> = actual.iter().map(|v| v * scale).collect();
        let scaled_c: Vec<f64> = counterfactual.iter().map(|v| v * scale).collect();
        let theta_scaled = epimpact::impact_theta(&mk(&scaled_a), &mk(&scaled_c)).unwrap();
        prop_assert!((theta - theta_scaled).abs() < 1e-8 * (1.0 + theta.abs()),
            "theta {theta} vs scaled {theta_scaled}");
    }

    #[test]
    fn identical_series_have_zero_theta(values in proptest::collection::vec(0.5f64..50.0, 10)) {
        let index = DateIndex::weekly(start_date(), 10).unwrap();
        let s = RateSeries::new(LocationId::new("x"), index, values).unwrap();
        prop_assert_eq!(epimpact::impact_theta(&s, &s).unwrap(), 0.0);
    }

    #[test]
    fn projection_reconstructs_its_training_targets(
        control in proptest::collection::vec(0.0f64..30.0, 20),
        target in value_seq(20),
    ) {
        if let Ok(h) = fit_projection(&control, &target) {
            // Fitted values plus stored residuals give the target back, and
            // the residuals average to zero.
            let fitted = h.apply(&control);
            for ((f, r), t) in fitted.iter().zip(&h.residuals).zip(&target) {
                prop_assert!((f + r - t).abs() < 1e-10);
            }
            let mean_res: f64 = h.residuals.iter().sum::<f64>() / h.residuals.len() as f64;
            prop_assert!(mean_res.abs() < 1e-10);
        }
    }

    #[test]
    fn screening_retention_is_monotone_in_rho_min(
        rows in proptest::collection::vec(value_seq(30), 4),
        rho_a in 0.05f64..1.0,
        rho_b in 0.05f64..1.0,
    ) {
        let (lo, hi) = if rho_a <= rho_b { (rho_a, rho_b) } else { (rho_b, rho_a) };
        let targets = LocationSet::new(Role::Target, ["t0", "t1"].map(LocationId::new)).unwrap();
        let controls = LocationSet::new(Role::Control, ["c0", "c1"].map(LocationId::new)).unwrap();
        let mut series: BTreeMap<LocationId, Vec<f64>> = BTreeMap::new();
        for (name, values) in ["t0", "t1", "c0", "c1"].iter().zip(&rows) {
            series.insert(LocationId::new(*name), values.clone());
        }
        let kept = |rho: f64| {
            let config = AssessmentConfig { rho_min: rho, max_subset_size: 2, ..Default::default() };
            let candidates = enumerate_pairs(&targets, &controls, &config).unwrap();
            screen(&candidates, &series, &config).unwrap().qualified.len()
        };
        prop_assert!(kept(hi) <= kept(lo));
    }
}
