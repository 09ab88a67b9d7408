//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Runs without the libtest harness so the lines are
//! always visible.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use qder::data_io::{QrelEntry, Qrels, Rankings};
use qder::diagnostics::{
    ablation_suite, clustering_metrics, kendall_tau, noise_sensitivity, spearman, NoiseInstance,
    DEFAULT_SIGMAS,
};
use qder::evaluation::{
    average_precision, evaluate, ndcg_at_k, precision_at_k, reciprocal_rank, DEFAULT_CUTOFF,
};
use qder::hybrid::{fit_lambda, HybridConfig};
use qder::interaction::{attend, AblationConfig, BilinearModel, InteractionOp};
use qder::synthetic::{generate, SyntheticSpec};
use qder::trainer::{cross_validate, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    ensure(start.elapsed() < limit, || {
        format!("took {:.2?}, limit {limit:?}", start.elapsed())
    })
}

fn gradient_check() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let sizes = (
            rng.random_range(1..=4),
            rng.random_range(1..=6),
            rng.random_range(1..=8),
        );
        let ents = (
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(1..=6),
        );
        let pair = Pair::random(&mut rng, sizes, ents);
        let (q, d) = pair.records();
        let model = BilinearModel::init(pair.dt, pair.de, AblationConfig::default(), seed)
            .map_err(|e| e.to_string())?;
        let label = (seed % 2) as f64;
        let grad = model
            .backward(&q, &d, pair.s, label)
            .map_err(|e| e.to_string())?;
        let grad = grad.matrix().ok_or("no matrix gradient")?;
        let h = pair.features(&[Op::Mul, Op::Add], true, true, true);
        let m0 = to_mat(model.matrix().ok_or("no matrix")?);
        for i in 0..m0.len() {
            for j in 0..m0.len() {
                let mut plus = m0.clone();
                plus[i][j] += eps;
                let mut minus = m0.clone();
                minus[i][j] -= eps;
                let numeric = (naive_bce_logit(naive_bilinear(&h, &plus), label)
                    - naive_bce_logit(naive_bilinear(&h, &minus), label))
                    / (2.0 * eps);
                worst = worst.max(rel_err(grad[[i, j]], numeric));
            }
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    within(start, Duration::from_secs(10))?;
    Ok(format!(
        "max relative error {worst:.2e} in {:.2?}",
        start.elapsed()
    ))
}

fn attention_invariants() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for case in 0..1000 {
        let (r, c, dim) = (
            rng.random_range(1..8),
            rng.random_range(1..12),
            rng.random_range(1..10),
        );
        // Every fourth input has logits of order 1e3.
        let scale = if case % 4 == 0 { 30.0 } else { 1.0 };
        let q = from_mat(&random_mat(&mut rng, r, dim, scale), dim);
        let d = from_mat(&random_mat(&mut rng, c, dim, scale), dim);
        peak = q.dot(&d.t()).iter().fold(peak, |m, l| m.max(l.abs()));
        let out = attend(q.view(), d.view()).map_err(|e| e.to_string())?;
        for row in out.weights.rows() {
            ensure(row.iter().all(|&w| w >= 0.0 && w.is_finite()), || {
                format!("case {case}: negative or non-finite weight")
            })?;
            worst = worst.max((row.sum() - 1.0).abs());
        }
        ensure(out.attended.iter().all(|v| v.is_finite()), || {
            format!("case {case}: non-finite attended value")
        })?;
    }
    ensure(worst <= 1e-6, || format!("row sum off by {worst:e}"))?;
    ensure(peak >= 1e3, || format!("largest logit only {peak:.1}"))?;
    within(start, Duration::from_secs(5))?;
    Ok(format!(
        "max |row sum − 1| {worst:.1e}, largest |logit| {peak:.0}, in {:.2?}",
        start.elapsed()
    ))
}

fn permuted(m: &Mat, rng: &mut ChaCha8Rng) -> Mat {
    let mut m = m.clone();
    m.shuffle(rng);
    m
}

fn raw(model: &BilinearModel, pair: &Pair) -> Result<f64, String> {
    let (q, d) = pair.records();
    model
        .forward(&q, &d, pair.s)
        .map(|b| b.raw)
        .map_err(|e| e.to_string())
}

fn permutation_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for trial in 0..200u64 {
        let pair = Pair::random(&mut rng, (4, 7, 5), (3, 4, 3));
        let model = BilinearModel::init(5, 3, AblationConfig::default(), trial)
            .map_err(|e| e.to_string())?;
        let base = raw(&model, &pair)?;
        let shuffled = Pair {
            q_tok: permuted(&pair.q_tok, &mut rng),
            d_tok: permuted(&pair.d_tok, &mut rng),
            q_ent: permuted(&pair.q_ent, &mut rng),
            d_ent: permuted(&pair.d_ent, &mut rng),
            ..pair
        };
        worst = worst.max((raw(&model, &shuffled)? - base).abs());
    }
    ensure(worst <= 1e-9, || format!("max |Δraw| {worst:e}"))?;
    Ok(format!("200 trials, max |Δraw| {worst:.1e}"))
}

fn scaling_law() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let pair = Pair::random(&mut rng, (3, 6, 4), (2, 3, 3));
        let model = BilinearModel::init(4, 3, AblationConfig::default(), trial)
            .map_err(|e| e.to_string())?;
        let base = raw(&model, &pair)?;
        for c in [0.5, 2.0, 10.0] {
            let scaled = Pair {
                s: c * pair.s,
                ..pair.clone()
            };
            let got = raw(&model, &scaled)?;
            worst = worst.max(((got - c * c * base) / (c * c * base)).abs());
        }
    }
    ensure(worst < 1e-9, || format!("max relative error {worst:e}"))?;
    Ok(format!("300 rescalings, max relative error {worst:.1e}"))
}

fn metric_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let (ranking, judged) = random_instance(&mut rng);
        let k = rng.random_range(1..25);
        let mut cmp = |a: Option<f64>, b: Option<f64>, what: &str| -> Result<(), String> {
            match (a, b) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => return Err(format!("case {case}: {what} {a:?} vs {b:?}")),
            }
            Ok(())
        };
        cmp(
            average_precision(&ranking, &judged),
            brute::ap(&ranking, &judged),
            "AP",
        )?;
        cmp(
            ndcg_at_k(&ranking, &judged, k),
            brute::ndcg(&ranking, &judged, k),
            "nDCG",
        )?;
        cmp(
            Some(precision_at_k(&ranking, &judged, k)),
            Some(brute::precision(&ranking, &judged, k)),
            "P",
        )?;
        cmp(
            Some(reciprocal_rank(&ranking, &judged)),
            Some(brute::rr(&ranking, &judged)),
            "RR",
        )?;
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;

    let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let judged = |v: &[(&str, u32)]| -> BTreeMap<String, u32> {
        v.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    };
    let ap = average_precision(&ids(&["D1", "D2", "D3"]), &judged(&[("D1", 1), ("D3", 1)]))
        .ok_or("AP undefined")?;
    let nd = ndcg_at_k(
        &ids(&["A", "B", "C"]),
        &judged(&[("A", 1), ("B", 0), ("C", 1)]),
        3,
    )
    .ok_or("nDCG undefined")?;
    ensure(
        (ap - 0.833333).abs() < 1e-6 && (nd - 0.919720).abs() < 1e-6,
        || format!("worked examples AP {ap:.6}, nDCG {nd:.6}"),
    )?;
    Ok(format!(
        "50 instances, max deviation {worst:.1e}; AP {ap:.7}, nDCG@3 {nd:.7}"
    ))
}

fn learning_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-2,
        warmup_steps: 10,
        ..TrainConfig::default()
    }
}

fn learnability() -> Check {
    let start = Instant::now();
    let ds = generate(&SyntheticSpec::default()).map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let cfg = learning_config();
    let map = |cfg: &TrainConfig| -> Result<f64, String> {
        let cv = pool
            .install(|| cross_validate(&ds, cfg))
            .map_err(|e| e.to_string())?;
        Ok(evaluate(&cv.rankings, &ds.qrels, DEFAULT_CUTOFF).map())
    };
    let trained = map(&cfg)?;
    let random = map(&TrainConfig { epochs: 0, ..cfg })?;
    ensure(trained >= 0.9, || format!("out-of-fold MAP {trained:.4}"))?;
    ensure(trained - random >= 0.3, || {
        format!("MAP {trained:.4} vs random {random:.4}")
    })?;
    within(start, Duration::from_secs(300))?;
    Ok(format!(
        "out-of-fold MAP {trained:.4}, random M {random:.4}, {:.1?} single-threaded",
        start.elapsed()
    ))
}

fn ablation() -> Check {
    let ds = generate(&SyntheticSpec::default()).map_err(|e| e.to_string())?;
    let outcomes = ablation_suite(&ds, &learning_config()).map_err(|e| e.to_string())?;
    let map = |name: &str| -> Result<f64, String> {
        outcomes
            .get(name)
            .map(|o| o.report.map())
            .ok_or_else(|| format!("variant {name} missing"))
    };
    let (none, no_sub) = (map("no-interactions")?, map("no-subtract")?);
    ensure(none < no_sub, || {
        format!("no-interactions {none:.4} vs no-subtract {no_sub:.4}")
    })?;
    Ok(format!(
        "{} variants; no-interactions {none:.4} < no-subtract {no_sub:.4}",
        outcomes.len()
    ))
}

fn sorted(mut list: Vec<(String, f64)>) -> Vec<(String, f64)> {
    list.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    list
}

fn random_fusion_case(rng: &mut ChaCha8Rng) -> (Rankings, Rankings, Qrels) {
    let mut a = Rankings::new();
    let mut b = Rankings::new();
    let mut entries = Vec::new();
    for q in 0..rng.random_range(2..8) {
        let qid = format!("Q{q}");
        let docs = rng.random_range(5..25);
        let mut la = Vec::new();
        let mut lb = Vec::new();
        for d in 0..docs {
            let did = format!("D{d}");
            la.push((did.clone(), rng.random_range(0.0..10.0)));
            lb.push((did.clone(), rng.random_range(-3.0..3.0)));
            if d == 0 || rng.random_bool(0.3) {
                entries.push(QrelEntry {
                    query_id: qid.clone(),
                    doc_id: did,
                    grade: rng.random_range(1..=2),
                });
            }
        }
        a.insert(qid.clone(), sorted(la));
        b.insert(qid, sorted(lb));
    }
    (a, b, Qrels::from_entries(entries).unwrap())
}

fn hybrid_fusion() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cfg = HybridConfig::default();
    for case in 0..50 {
        let (a, b, qrels) = random_fusion_case(&mut rng);
        let fit = fit_lambda(&a, &b, &qrels, &cfg).map_err(|e| e.to_string())?;
        let ends = evaluate(&a, &qrels, DEFAULT_CUTOFF)
            .map()
            .max(evaluate(&b, &qrels, DEFAULT_CUTOFF).map());
        ensure(fit.map >= ends, || {
            format!("case {case}: fitted {} < endpoint {ends}", fit.map)
        })?;
    }
    let (a, _, qrels) = random_fusion_case(&mut rng);
    let ideal: Rankings = a
        .iter()
        .map(|(q, list)| {
            let l = list
                .iter()
                .map(|(d, _)| (d.clone(), f64::from(qrels.grade(q, d))))
                .collect();
            (q.clone(), sorted(l))
        })
        .collect();
    let fit = fit_lambda(&a, &ideal, &qrels, &cfg).map_err(|e| e.to_string())?;
    ensure(fit.map == 1.0, || format!("ideal fusion MAP {}", fit.map))?;
    Ok(format!(
        "50 instances dominate endpoints; ideal fusion MAP 1.0 at λ {}",
        fit.lambda
    ))
}

fn rank_correlations() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 100 {
        let n = rng.random_range(2..60);
        let ties = checked % 2 == 0;
        let x = random_vec(&mut rng, n, ties);
        let y = random_vec(&mut rng, n, ties);
        let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
        if constant(&x) || constant(&y) {
            continue;
        }
        let k = kendall_tau(&x, &y).map_err(|e| e.to_string())?;
        let s = spearman(&x, &y).map_err(|e| e.to_string())?;
        worst = worst
            .max((k - brute_kendall(&x, &y)).abs())
            .max((s - brute_spearman(&x, &y)).abs());
        checked += 1;
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!("100 instances, max deviation {worst:.1e}"))
}

fn noise_harness() -> Check {
    let spec = NoiseInstance::default();
    let mut summary = Vec::new();
    for op in InteractionOp::ALL {
        let zero = noise_sensitivity(op, &[0.0], 100, 3, &spec).map_err(|e| e.to_string())?;
        let z = &zero[0];
        ensure(
            (
                z.angular_deviation_deg,
                z.amplification_ratio,
                z.kendall_tau,
            ) == (0.0, 0.0, 1.0),
            || format!("{op} at σ 0: {z:?}"),
        )?;
        let reports =
            noise_sensitivity(op, &DEFAULT_SIGMAS, 100, 7, &spec).map_err(|e| e.to_string())?;
        for w in reports.windows(2) {
            ensure(
                w[1].angular_deviation_deg >= w[0].angular_deviation_deg,
                || {
                    format!(
                        "{op}: deviation falls from σ {} to σ {}",
                        w[0].sigma, w[1].sigma
                    )
                },
            )?;
        }
        let last = reports.last().ok_or("no reports")?;
        summary.push(format!("{op} {:.3}°", last.angular_deviation_deg));
    }
    Ok(format!(
        "σ 0 exact; monotone to σ 0.1 ({})",
        summary.join(", ")
    ))
}

fn clustering() -> Check {
    let pts = [[0.0, 0.0], [0.0, 0.1], [10.0, 0.0], [10.0, 0.1]];
    let r = clustering_metrics(&pts, &["a", "a", "b", "b"]).map_err(|e| e.to_string())?;
    // a(i) = 0.1; b(i) is the mean of 10 and √100.01.
    let b = (10.0 + 100.01f64.sqrt()) / 2.0;
    let sil = (b - 0.1) / b;
    // Scatter 0.05 per cluster, centroids 10 apart.
    let dbi = (0.05 + 0.05) / 10.0;
    // Between 4 · 25, within 4 · 0.0025, scaled by (4 − 2)/(2 − 1).
    let ch = (4.0 * 25.0) / (4.0 * 0.0025) * 2.0;
    ensure(
        (r.silhouette - sil).abs() < 1e-6
            && (r.dbi - dbi).abs() < 1e-6
            && (r.calinski_harabasz - ch).abs() < 1e-6,
        || format!("two tight clusters: {r:?}"),
    )?;
    let singles =
        clustering_metrics(&[[0.0, 0.0], [3.0, 4.0]], &[1, 2]).map_err(|e| e.to_string())?;
    ensure(singles.dbi == 0.0, || {
        format!("singletons DBI {}", singles.dbi)
    })?;
    let six = [
        [0.0, 0.0],
        [1.0, 0.0],
        [0.0, 1.0],
        [5.0, 5.0],
        [6.0, 5.0],
        [5.0, 6.0],
    ];
    let r6 = clustering_metrics(&six, &[0, 0, 0, 1, 1, 1]).map_err(|e| e.to_string())?;
    let scatter = (2f64.sqrt() + 2.0 * 5f64.sqrt()) / 9.0;
    ensure(
        (r6.calinski_harabasz - 112.5).abs() < 1e-6
            && (r6.dbi - 2.0 * scatter / (5.0 * 2f64.sqrt())).abs() < 1e-6,
        || format!("six-point fixture: {r6:?}"),
    )?;
    Ok(format!(
        "silhouette {:.6}, DBI {:.6}, CH {:.1}; singleton DBI 0; six-point CH 112.5",
        r.silhouette, r.dbi, r.calinski_harabasz
    ))
}

fn qder(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_qder"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn artifact_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.ends_with(".run") || name.ends_with(".qderm") {
            files.insert(name, std::fs::read(&path).map_err(|e| e.to_string())?);
        }
    }
    Ok(files)
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let s = |p: &Path| p.to_string_lossy().into_owned();
    qder(&["--out", &s(&data), "synth", "--fixture"])?;
    let f = |n: &str| s(&data.join(n));
    let mut runs = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("train{i}"));
        qder(&[
            "--threads",
            "1",
            "--seed",
            "42",
            "--out",
            &s(&out),
            "train",
            "--corpus",
            &f("corpus.ndjson"),
            "--queries",
            &f("queries.ndjson"),
            "--run",
            &f("first_stage.run"),
            "--qrels",
            &f("qrels.txt"),
            "--learning-rate",
            "0.03",
            "--warmup-steps",
            "10",
        ])?;
        runs.push(artifact_bytes(&out)?);
    }
    ensure(runs[0].len() == 6, || {
        format!("expected 6 files, got {:?}", runs[0].keys())
    })?;
    ensure(runs[0] == runs[1], || {
        "artifacts differ between runs".into()
    })?;
    let bytes: usize = runs[0].values().map(Vec::len).sum();
    Ok(format!("{} files, {bytes} bytes identical", runs[0].len()))
}

fn main() {
    let checks: [(&str, fn() -> Check); 12] = [
        ("gradient check", gradient_check),
        ("attention invariants", attention_invariants),
        ("permutation invariance", permutation_invariance),
        ("scaling law", scaling_law),
        ("metric oracle", metric_oracle),
        ("end-to-end learnability", learnability),
        ("ablation harness", ablation),
        ("hybrid fusion", hybrid_fusion),
        ("correlation and tau oracles", rank_correlations),
        ("noise harness", noise_harness),
        ("clustering metrics", clustering),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
