//! Ranking metrics against an independently written brute-force scorer.

mod common;

use common::{oracle_means, oracle_rank, summary_vec, toy};
use proptest::prelude::*;
use tcdsr::eval::{build_report, evaluate, instance_metrics, rank_metrics, MetricSummary};
use tcdsr::ingest::Domain;
use tcdsr::trainer::{Part, Variant};

fn pipeline_means(instances: &[(Vec<f64>, usize)]) -> [f64; 6] {
    let m: Vec<_> = instances.iter().map(|(s, p)| rank_metrics(s, *p, Some(s.len())).unwrap()).collect();
    summary_vec(&MetricSummary::mean(&m).unwrap())
}

#[test]
fn hand_fixture_with_ties() {
    let instances = vec![
        (vec![0.9, 0.1, 0.2], 0),
        (vec![0.5, 0.5, 0.5, 0.1], 1),
        (vec![1.0, 1.0, 2.0, 3.0], 0),
        (vec![0.0; 12], 0),
        ((0..20).map(|i| i as f64).collect(), 9),
    ];
    let ranks: Vec<usize> = instances.iter().map(|(s, p)| oracle_rank(s, *p)).collect();
    assert_eq!(ranks, vec![1, 3, 4, 12, 11]);
    assert_eq!(pipeline_means(&instances), oracle_means(&instances));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    // Scores drawn from a handful of values so ties are frequent.
    #[test]
    fn pipeline_equals_oracle(
        instances in prop::collection::vec(
            (prop::collection::vec(0u8..6, 2..30), any::<prop::sample::Index>()),
            1..=20,
        )
    ) {
        let inst: Vec<(Vec<f64>, usize)> = instances
            .into_iter()
            .map(|(s, i)| { let p = i.index(s.len()); (s.into_iter().map(f64::from).collect(), p) })
            .collect();
        for (s, p) in &inst {
            prop_assert_eq!(rank_metrics(s, *p, None).unwrap().rank, oracle_rank(s, *p));
        }
        prop_assert_eq!(pipeline_means(&inst), oracle_means(&inst));
    }
}

#[test]
fn model_report_matches_oracle() {
    let (ds, sem, model) = toy(Variant::Full, 4);
    let report = evaluate(&model, &ds, Part::Test, sem.as_ref(), "h", None).unwrap();
    let scores = model.score_part(&ds, Part::Test, sem.as_ref()).unwrap();
    assert!(ds.test.len() <= 20);
    for d in Domain::BOTH {
        let inst: Vec<(Vec<f64>, usize)> =
            ds.test.iter().zip(&scores).filter(|(i, _)| i.domain == d).map(|(_, s)| (s.clone(), 0)).collect();
        if inst.is_empty() {
            assert!(!report.domains.contains_key(&d));
            continue;
        }
        let m = &report.domains[&d];
        assert_eq!(m.count, inst.len());
        assert_eq!(summary_vec(m), oracle_means(&inst));
    }
}

#[test]
fn bucket_tables_aggregate_to_the_overall_report() {
    let (ds, sem, model) = toy(Variant::V2, 6);
    let scores = model.score_part(&ds, Part::Test, sem.as_ref()).unwrap();
    let metrics = instance_metrics(&ds, Part::Test, &scores, None).unwrap();
    let report = build_report(&ds, Part::Test, &metrics, Variant::V2, "h", Some(3)).unwrap();
    let buckets = report.buckets.as_ref().unwrap();
    assert_eq!(buckets.len(), 3);
    for (d, overall) in &report.domains {
        let mut n = 0;
        let mut acc = [0.0; 6];
        for b in buckets {
            if let Some(m) = b.domains.get(d) {
                n += m.count;
                for (a, v) in acc.iter_mut().zip(summary_vec(m)) {
                    *a += v * m.count as f64;
                }
            }
        }
        assert_eq!(n, overall.count);
        for (a, o) in acc.iter().zip(summary_vec(overall)) {
            assert!((a / n as f64 - o).abs() < 1e-9);
        }
    }
}
