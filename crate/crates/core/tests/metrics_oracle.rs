mod common;

use std::collections::BTreeMap;

use common::{brute, random_instance};

use qder::data_io::{QrelEntry, Qrels, Rankings};
use qder::evaluation::{
    average_precision, difficulty_bins, evaluate, ndcg_at_k, paired_t_test, precision_at_k,
    rank_shift_report, reciprocal_rank, MetricKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn judged(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
    pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
}

fn ids(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

#[test]
fn metrics_match_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let (ranking, judged) = random_instance(&mut rng);
        let k = rng.random_range(1..25);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
        match (
            average_precision(&ranking, &judged),
            brute::ap(&ranking, &judged),
        ) {
            (Some(a), Some(b)) => assert!(close(a, b), "case {case}: AP {a} vs {b}"),
            (a, b) => assert_eq!(a.is_none(), b.is_none(), "case {case}: AP {a:?} vs {b:?}"),
        }
        match (
            ndcg_at_k(&ranking, &judged, k),
            brute::ndcg(&ranking, &judged, k),
        ) {
            (Some(a), Some(b)) => assert!(close(a, b), "case {case}: nDCG {a} vs {b}"),
            (a, b) => assert_eq!(a.is_none(), b.is_none(), "case {case}: nDCG {a:?} vs {b:?}"),
        }
        assert!(close(
            precision_at_k(&ranking, &judged, k),
            brute::precision(&ranking, &judged, k)
        ));
        assert!(close(
            reciprocal_rank(&ranking, &judged),
            brute::rr(&ranking, &judged)
        ));
    }
}

#[test]
fn worked_examples() {
    let ap =
        average_precision(&ids(&["D1", "D2", "D3"]), &judged(&[("D1", 1), ("D3", 1)])).unwrap();
    assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    assert!((ap - 0.833333).abs() < 1e-6);

    let nd = ndcg_at_k(
        &ids(&["A", "B", "C"]),
        &judged(&[("A", 1), ("B", 0), ("C", 1)]),
        3,
    )
    .unwrap();
    let expected = 1.5 / (1.0 + 1.0 / 3f64.log2());
    assert!((nd - expected).abs() < 1e-12);
    assert!((nd - 0.919720).abs() < 1e-6);

    assert_eq!(
        reciprocal_rank(&ids(&["X", "R"]), &judged(&[("R", 1)])),
        0.5
    );
    let top: Vec<String> = (0..20).map(|i| format!("D{i}")).collect();
    let seven: BTreeMap<String, u32> = (0..7).map(|i| (format!("D{}", i * 2), 1)).collect();
    assert!((precision_at_k(&top, &seven, 20) - 0.35).abs() < 1e-12);
    assert!((precision_at_k(&ids(&["D0"]), &seven, 20) - 0.05).abs() < 1e-12);
}

fn qrels(entries: &[(&str, &str, u32)]) -> Qrels {
    Qrels::from_entries(entries.iter().map(|(q, d, g)| QrelEntry {
        query_id: q.to_string(),
        doc_id: d.to_string(),
        grade: *g,
    }))
    .unwrap()
}

#[test]
fn ideal_ordering_scores_one_everywhere() {
    let q = qrels(&[
        ("Q1", "A", 2),
        ("Q1", "B", 1),
        ("Q1", "C", 0),
        ("Q2", "X", 1),
    ]);
    let mut r = Rankings::new();
    r.insert(
        "Q1".into(),
        vec![("A".into(), 3.0), ("B".into(), 2.0), ("C".into(), 1.0)],
    );
    r.insert("Q2".into(), vec![("X".into(), 1.0), ("Y".into(), 0.5)]);
    let rep = evaluate(&r, &q, 20);
    assert_eq!(rep.macro_avg.ap, 1.0);
    assert_eq!(rep.macro_avg.ndcg_at_k, 1.0);
    assert_eq!(rep.macro_avg.rr, 1.0);
}

/// Two-sided p-value of Student's t by Simpson integration of the density.
fn t_p_value(t: f64, df: f64) -> f64 {
    let ln_gamma = |x: f64| -> f64 {
        // Lanczos approximation, g = 7.
        let c = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let x = x - 1.0;
        let mut a = c[0];
        let tt = x + 7.5;
        for (i, ci) in c.iter().enumerate().skip(1) {
            a += ci / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * tt.ln() - tt + a.ln()
    };
    let norm = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp()
        / (df * std::f64::consts::PI).sqrt();
    let density = |x: f64| norm * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    let n = 200_000;
    let h = t.abs() / n as f64;
    let mut s = density(0.0) + density(t.abs());
    for i in 1..n {
        s += density(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let central = 2.0 * s * h / 3.0;
    1.0 - central
}

#[test]
fn paired_t_matches_textbook_formula() {
    let diffs = [0.1, 0.2, 0.05, 0.15, 0.1];
    let b = [0.3, 0.4, 0.5, 0.2, 0.6];
    let a: Vec<f64> = b.iter().zip(diffs).map(|(x, d)| x + d).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = mean / (sd / n.sqrt());
    let test = paired_t_test(&a, &b).unwrap();
    assert!((test.t - t).abs() < 1e-9, "{} vs {t}", test.t);
    let p = t_p_value(t, n - 1.0);
    assert!(
        (test.p_two_sided - p).abs() < 1e-7,
        "{} vs {p}",
        test.p_two_sided
    );
    assert_eq!(test.n, 5);
}

#[test]
fn identical_and_constant_shift_samples() {
    let x = [0.5, 0.25, 0.75];
    let same = paired_t_test(&x, &x).unwrap();
    assert_eq!((same.t, same.p_two_sided), (0.0, 1.0));
    let shifted: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
    assert!(paired_t_test(&shifted, &x).unwrap().zero_variance);
}

#[test]
fn planted_hard_half_scores_lower() {
    let mut entries = Vec::new();
    let mut base = Rankings::new();
    for i in 0..20 {
        let q = format!("Q{i:02}");
        entries.push((q.clone(), "R".to_string(), 1));
        // Easy queries rank the relevant doc first; hard ones bury it.
        let pos = if i < 10 { 0 } else { 5 + i };
        let mut list: Vec<(String, f64)> = (0..30).map(|j| (format!("N{j}"), 0.0)).collect();
        list.insert(pos, ("R".into(), 0.0));
        let n = list.len();
        for (j, item) in list.iter_mut().enumerate() {
            item.1 = (n - j) as f64;
        }
        base.insert(q, list);
    }
    let qrels = Qrels::from_entries(entries.into_iter().map(|(q, d, g)| QrelEntry {
        query_id: q,
        doc_id: d,
        grade: g,
    }))
    .unwrap();
    let report = evaluate(&base, &qrels, 20);
    let bins = difficulty_bins(&report, &[], MetricKind::Ap, &[50.0, 100.0]).unwrap();
    assert_eq!(bins.bins[0].queries.len(), 10);
    let hard = bins.bins[0].macro_by_system["baseline"].unwrap();
    let easy = bins.bins[1].macro_by_system["baseline"].unwrap();
    assert!(hard < easy);
    assert!(bins.bins[0].queries.iter().all(|q| q.as_str() >= "Q10"));
}

#[test]
fn document_promoted_from_734_to_6() {
    let list = |pos: usize| -> Vec<(String, f64)> {
        let mut l: Vec<(String, f64)> = (0..999).map(|j| (format!("N{j}"), 0.0)).collect();
        l.insert(pos - 1, ("R".into(), 0.0));
        l
    };
    let mut before = Rankings::new();
    before.insert("Q".into(), list(734));
    let mut after = Rankings::new();
    after.insert("Q".into(), list(6));
    let q = qrels(&[("Q", "R", 2)]);
    let shift = rank_shift_report(&before, &after, &q);
    let g = shift[&2];
    assert_eq!(g.mean_rank_after - g.mean_rank_before, -728.0);
    assert_eq!((g.top10_count, g.top50_count, g.beyond100_count), (1, 1, 0));
}
