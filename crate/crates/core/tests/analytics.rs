mod common;

use std::collections::HashMap;

use chrono::Duration;
use dayembed::analytics::{self, ClusterAssignment, EmbeddingRecord, EmbeddingStore, Query};
use dayembed::daystring::DayStringRecord;
use dayembed::ingest::{LabelSet, Polarity};
use dayembed::seed;

#[test]
fn search_ranking_matches_double_loop_on_fifty_vectors() {
    let mut rng = seed::rng_from_seed(1);
    let store = common::random_store(&mut rng, 5, 12, 6);
    for q in store.records() {
        let hits = analytics::search(&store, Query::Day { participant_id: &q.participant_id, date: q.date }, 9, true).unwrap();
        let brute = common::brute_search(&store, &q.vector, Some((&q.participant_id, q.date)), 9);
        let got: Vec<_> = hits.iter().map(|h| (h.participant_id.clone(), h.date)).collect();
        let want: Vec<_> = brute.iter().map(|b| (b.0.clone(), b.1)).collect();
        assert_eq!(got, want);
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), (1..=hits.len()).collect::<Vec<_>>());
    }
}

#[test]
fn stride_one_matrix_matches_direct_computation() {
    let mut rng = seed::rng_from_seed(2);
    let store = common::random_store(&mut rng, 1, 5, 4);
    let pid = store.records()[0].participant_id.clone();
    let m = analytics::participant_similarity_matrix(&store, &pid, 1).unwrap();
    let (dates, values) = common::brute_similarity_matrix(&store, &pid, 1);
    assert_eq!(m.dates, dates);
    for (a, b) in m.values.iter().flatten().zip(values.iter().flatten()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn label_similarity_filters_and_matches_brute_force() {
    let mut rng = seed::rng_from_seed(3);
    for trial in 0..20 {
        let store = common::random_store(&mut rng, 5, 30, 5);
        let labels = common::random_labels(&mut rng, &store, 0.2);
        let report = analytics::label_similarity(&store, &labels).unwrap();
        let brute = common::brute_label_similarity(&store, &labels);
        assert_eq!(report.participants.len(), brute.rows.len(), "trial {trial}");
        for (a, b) in report.participants.iter().zip(&brute.rows) {
            assert_eq!(a.participant_id, b.0);
            assert!((a.positive_positive - b.1).abs() < 1e-12);
            assert!((a.positive_negative - b.2).abs() < 1e-12);
        }
        if let Some(pp) = report.positive_positive {
            assert!((pp.mean - brute.pp.0).abs() < 1e-12 && (pp.std - brute.pp.1).abs() < 1e-12);
        }
    }
}

#[test]
fn single_positive_participant_is_excluded() {
    let d = |i| common::base_date() + Duration::days(i);
    let rec = |p: &str, i, v: Vec<f64>| EmbeddingRecord { participant_id: p.into(), date: d(i), vector: v };
    let store = EmbeddingStore::new(vec![
        rec("a", 0, vec![1.0, 0.0]),
        rec("a", 1, vec![0.0, 1.0]),
        rec("a", 2, vec![1.0, 1.0]),
        rec("b", 0, vec![1.0, 0.0]),
        rec("b", 1, vec![0.5, 1.0]),
    ])
    .unwrap();
    let mut labels = LabelSet::new();
    labels.insert("a", d(0), Polarity::Positive).unwrap();
    labels.insert("a", d(1), Polarity::Positive).unwrap();
    labels.insert("a", d(2), Polarity::Negative).unwrap();
    labels.insert("b", d(0), Polarity::Positive).unwrap();
    labels.insert("b", d(1), Polarity::Negative).unwrap();
    let report = analytics::label_similarity(&store, &labels).unwrap();
    assert_eq!(report.participants.len(), 1);
    assert_eq!(report.participants[0].participant_id, "a");
    assert!((report.participants[0].positive_positive - 0.0).abs() < 1e-12);
    assert_eq!(report.positive_positive.unwrap().std, 0.0);
}

#[test]
fn cluster_sample_is_uniform_over_members() {
    let members: Vec<ClusterAssignment> = (0..30)
        .map(|i| ClusterAssignment { participant_id: format!("p{}", i % 3), date: common::base_date() + Duration::days(i), cluster: usize::from(i >= 20) })
        .collect();
    let texts: Vec<DayStringRecord> = members
        .iter()
        .map(|m| DayStringRecord { participant_id: m.participant_id.clone(), date: m.date, text: m.date.to_string() })
        .collect();
    let runs = 10_000;
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in 0..runs {
        let sample = analytics::cluster_sample(&members, &texts, 0, 8, &mut seed::rng_from_seed(s)).unwrap();
        assert_eq!(sample.len(), 8);
        let mut seen: Vec<&str> = sample.iter().map(|r| r.text.as_str()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 8);
        for r in sample {
            *counts.entry(r.text).or_default() += 1;
        }
    }
    assert_eq!(counts.len(), 20);
    for (k, c) in counts {
        let f = c as f64 / runs as f64;
        assert!((f - 0.4).abs() < 0.02, "{k}: {f}");
    }
}

#[test]
fn proportions_match_brute_force_and_sum_to_one() {
    let mut rng = seed::rng_from_seed(4);
    let store = common::random_store(&mut rng, 10, 50, 3);
    let a = common::random_assignments(&mut rng, &store, 4);
    let table = analytics::cluster_proportions(&a, None).unwrap();
    let brute = common::brute_proportions(&a, table.k);
    assert_eq!(table.rows.len(), brute.len());
    for ((d1, r1), (d2, r2)) in table.rows.iter().zip(&brute) {
        assert_eq!(d1, d2);
        assert!((r1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in r1.iter().zip(r2) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
