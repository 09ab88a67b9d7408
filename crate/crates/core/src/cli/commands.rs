use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use qder::data_io::{
    audit_records, load_corpus, load_qrels, load_queries, load_run, rankings_from_run,
    write_run_to, Dataset, LoadOptions, Qrels, Rankings, RecordKind, Run,
};
use qder::diagnostics::{
    ablation_suite, clustering_metrics, embedding_dump, noise_sensitivity, operation_correlation,
    read_points, scores_from_rankings, write_ablation_csv, write_noise_csv, write_points,
    ClusterReport, DumpMode, EmbeddingPoint, LabelKind, NoiseInstance, DEFAULT_SIGMAS,
};
use qder::evaluation::{
    difficulty_bins, evaluate, paired_t_test, rank_shift_report, MetricKind, MetricReport,
    DEFAULT_EDGES,
};
use qder::hybrid::{cross_fit_fusion, fit_lambda, fuse, HybridConfig};
use qder::interaction::{load_checkpoint, write_checkpoint, InteractionOp};
use qder::synthetic::{
    generate, write_dataset, SyntheticSpec, CORPUS_FILE, QRELS_FILE, QUERIES_FILE, RUN_FILE,
};
use qder::trainer::{cross_validate, rerank, write_epoch_log, FoldSplit};
use qder::{QderError, Result};

use super::output::OutDir;
use super::{
    Cli, ClusterArgs, Command, DataArgs, EvalArgs, FuseArgs, Resolved, Settings, TrainArgs,
    ValidateArgs,
};

pub fn dispatch(cli: Cli) -> Result<i32> {
    let mut settings = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    if cli.seed.is_some() {
        settings.seed = cli.seed;
    }
    match &cli.command {
        Command::Validate(args) => validate(&settings, args),
        Command::Train { data, train } => {
            let r = resolve(&mut settings, Some(data), Some(train))?;
            with_out(&cli.out, "train", &r, |out| cmd_train(&r, out))
        }
        Command::Rerank { data, checkpoint } => {
            let r = resolve(&mut settings, Some(data), None)?;
            with_out(&cli.out, "rerank", &r, |out| {
                cmd_rerank(&r, checkpoint, out)
            })
        }
        Command::Fuse(args) => {
            settings.qrels = args.qrels.clone().or(settings.qrels.take());
            settings.lambda = args.lambda.or(settings.lambda);
            settings.grid_step = args.grid_step.or(settings.grid_step);
            let fixed = settings.lambda.is_some();
            let r = resolve(&mut settings, None, None)?;
            with_out(&cli.out, "fuse", &r, |out| cmd_fuse(&r, args, fixed, out))
        }
        Command::Eval(args) => {
            settings.qrels = args.qrels.clone().or(settings.qrels.take());
            settings.k = args.k.or(settings.k);
            let r = resolve(&mut settings, None, None)?;
            with_out(&cli.out, "eval", &r, |out| cmd_eval(&r, args, out))
        }
        Command::Ablate { data, train } => {
            let r = resolve(&mut settings, Some(data), Some(train))?;
            with_out(&cli.out, "ablate", &r, |out| cmd_ablate(&r, out))
        }
        Command::Noise(args) => {
            let seed = settings.seed.unwrap_or(0);
            let instance = NoiseInstance {
                query_tokens: args.query_tokens,
                doc_tokens: args.doc_tokens,
                dim: args.dim,
                candidates: args.candidates,
            };
            let sigmas = args
                .sigmas
                .clone()
                .unwrap_or_else(|| DEFAULT_SIGMAS.to_vec());
            let ops = args
                .ops
                .clone()
                .map_or_else(|| InteractionOp::ALL.to_vec(), |o| o.0);
            let config = json!({
                "seed": seed,
                "trials": args.trials,
                "sigmas": sigmas,
                "ops": ops,
                "instance": instance,
            });
            log::info!("resolved config: {config}");
            with_out(&cli.out, "noise", &config, |out| {
                cmd_noise(&ops, &sigmas, args.trials, seed, &instance, out)
            })
        }
        Command::Cluster(args) => {
            let r = resolve(&mut settings, Some(&args.data), None)?;
            with_out(&cli.out, "cluster", &r, |out| cmd_cluster(&r, args, out))
        }
        Command::Synth(args) => {
            let mut spec = match (&args.spec, args.fixture) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(path).map_err(|e| QderError::io(path, e))?;
                    toml::from_str(&text).map_err(|e| {
                        QderError::Config(format!("{}: {}", path.display(), e.message()))
                    })?
                }
                (None, true) => SyntheticSpec::fixture(),
                (None, false) => SyntheticSpec::default(),
            };
            if let Some(seed) = settings.seed {
                spec.seed = seed;
            }
            log::info!("resolved config: {}", json!(spec));
            with_out(&cli.out, "synth", &spec, |out| cmd_synth(&spec, out))
        }
    }
}

/// Merge command flags over file settings and log the result.
fn resolve(
    s: &mut Settings,
    data: Option<&DataArgs>,
    train: Option<&TrainArgs>,
) -> Result<Resolved> {
    if let Some(d) = data {
        macro_rules! over {
            ($($f:ident),*) => { $(if d.$f.is_some() { s.$f = d.$f.clone(); })* };
        }
        over!(corpus, queries, run, qrels, max_seq_len, k);
    }
    if let Some(t) = train {
        macro_rules! over {
            ($($f:ident),*) => { $(if t.$f.is_some() { s.$f = t.$f; })* };
        }
        over!(learning_rate, batch_size, epochs, warmup_steps, folds, head);
        if let Some(ops) = &t.ops {
            s.ops = Some(ops.0.clone());
        }
        if t.no_text {
            s.use_text = Some(false);
        }
        if t.no_entity {
            s.use_entity = Some(false);
        }
        if t.no_score_scaling {
            s.use_score_scaling = Some(false);
        }
        if t.adapter {
            s.adapter = Some(true);
        }
    }
    let r = Resolved::from_settings(s)?;
    let text = serde_json::to_string(&r).map_err(|e| QderError::Invalid(e.to_string()))?;
    log::info!("resolved config: {text}");
    Ok(r)
}

/// Run `body` against a fresh output directory, finishing with a manifest or
/// removing its artifacts on failure.
fn with_out(
    root: &Path,
    command: &str,
    config: &impl Serialize,
    body: impl FnOnce(&mut OutDir) -> Result<()>,
) -> Result<i32> {
    let mut out = OutDir::create(root)?;
    match body(&mut out).and_then(|_| out.finish(command, config)) {
        Ok(()) => {
            log::info!("artifacts written to {}", out.root().display());
            Ok(0)
        }
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| QderError::Config(format!("--{flag} is required (flag or config key)")))
}

fn read_qrels(path: &Path) -> Result<Qrels> {
    let (entries, warnings) = load_qrels(path)?;
    for w in warnings {
        log::warn!("{w}");
    }
    Qrels::from_entries(entries)
}

fn load_dataset(r: &Resolved, need_qrels: bool) -> Result<Dataset> {
    let opts = LoadOptions {
        max_seq_len: r.max_seq_len,
        ..LoadOptions::default()
    };
    let corpus = load_corpus(required(&r.corpus, "corpus")?, None, &opts)?;
    let q_opts = LoadOptions {
        expected_dt: Some(corpus.d_t),
        expected_de: Some(corpus.d_e),
        ..opts
    };
    let queries = load_queries(required(&r.queries, "queries")?, None, &q_opts)?;
    let run = load_run(required(&r.run, "run")?)?;
    let qrels = match (&r.qrels, need_qrels) {
        (Some(p), _) => read_qrels(p)?,
        (None, true) => {
            return Err(QderError::Config(
                "--qrels is required (flag or config key)".into(),
            ))
        }
        (None, false) => Qrels::default(),
    };
    log::info!(
        "loaded {} documents, {} queries, {} ranked queries (d_t {}, d_e {})",
        corpus.len(),
        queries.len(),
        run.len(),
        corpus.d_t,
        corpus.d_e
    );
    Ok(Dataset {
        queries,
        corpus,
        run,
        qrels,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> QderError + '_ {
    move |e| QderError::io(path, e)
}

fn write_rankings(out: &mut OutDir, name: &str, rankings: &Rankings, tag: &str) -> Result<()> {
    out.write_with(name, |w| write_run_to(w, rankings, tag))
}

fn write_report(out: &mut OutDir, stem: &str, report: &MetricReport) -> Result<()> {
    out.write_with(&format!("{stem}.csv"), |w| report.write_csv(w))?;
    out.write_json(&format!("{stem}.json"), report)
}

fn validate(settings: &Settings, args: &ValidateArgs) -> Result<i32> {
    let opts = LoadOptions {
        max_seq_len: args
            .max_seq_len
            .or(settings.max_seq_len)
            .unwrap_or(LoadOptions::default().max_seq_len),
        ..LoadOptions::default()
    };
    let corpus = args.corpus.clone().or_else(|| settings.corpus.clone());
    let queries = args.queries.clone().or_else(|| settings.queries.clone());
    if corpus.is_none() && queries.is_none() {
        return Err(QderError::Config(
            "nothing to validate: pass --corpus and/or --queries".into(),
        ));
    }
    let mut bad = 0usize;
    let mut dims = None;
    for (path, kind) in [(corpus, RecordKind::Document), (queries, RecordKind::Query)] {
        let Some(path) = path else { continue };
        let audit = audit_records(&path, args.format, kind, &opts)?;
        for (line, id, msg) in &audit.problems {
            println!("{}:{line}: {id}: {msg}", path.display());
        }
        bad += audit.problems.len();
        match dims {
            None => dims = Some((audit.d_t, audit.d_e)),
            Some((dt, de)) if audit.records > 0 && (dt, de) != (audit.d_t, audit.d_e) => {
                println!(
                    "{}: dimensions ({}, {}) differ from the corpus ({dt}, {de})",
                    path.display(),
                    audit.d_t,
                    audit.d_e
                );
                bad += 1;
            }
            Some(_) => {}
        }
        println!(
            "{}: {} records, d_t {}, d_e {}, {} problem(s)",
            path.display(),
            audit.records,
            audit.d_t,
            audit.d_e,
            audit.problems.len()
        );
    }
    Ok(if bad == 0 { 0 } else { 1 })
}

#[derive(Serialize, Deserialize)]
struct FoldRecord {
    #[serde(flatten)]
    split: FoldSplit,
    best_epoch: usize,
    best_val_map: f64,
}

#[derive(Serialize, Deserialize)]
struct FoldsFile {
    assignment: BTreeMap<String, usize>,
    folds: Vec<FoldRecord>,
}

fn cmd_train(r: &Resolved, out: &mut OutDir) -> Result<()> {
    let ds = load_dataset(r, true)?;
    let cv = cross_validate(&ds, &r.train)?;
    for fold in &cv.folds {
        let name = format!("fold_{}.qderm", fold.split.fold_id);
        out.write_with(&name, |w| write_checkpoint(w, &fold.model))?;
        log::info!(
            "fold {}: best epoch {}, validation MAP {:.4}",
            fold.split.fold_id,
            fold.best_epoch,
            fold.best_val_map
        );
    }
    out.write_with("epoch_log.ndjson", |w| {
        write_epoch_log(w, cv.folds.iter().flat_map(|f| &f.log))
    })?;
    write_rankings(out, "oof.run", &cv.rankings, "qder")?;
    let folds = FoldsFile {
        assignment: cv.assignment.clone(),
        folds: cv
            .folds
            .iter()
            .map(|f| FoldRecord {
                split: f.split.clone(),
                best_epoch: f.best_epoch,
                best_val_map: f.best_val_map,
            })
            .collect(),
    };
    out.write_json("folds.json", &folds)?;
    let report = evaluate(&cv.rankings, &ds.qrels, r.k);
    log::info!("out-of-fold MAP {:.4}", report.map());
    write_report(out, "metrics", &report)
}

fn cmd_rerank(r: &Resolved, checkpoint: &Path, out: &mut OutDir) -> Result<()> {
    let ds = load_dataset(r, false)?;
    let model = load_checkpoint(checkpoint)?;
    let rankings = rerank(&model, &ds, ds.run.keys())?;
    write_rankings(out, "rerank.run", &rankings, "qder")?;
    if r.qrels.is_some() {
        let report = evaluate(&rankings, &ds.qrels, r.k);
        log::info!("MAP {:.4}", report.map());
        write_report(out, "metrics", &report)?;
    }
    Ok(())
}

fn read_rankings(path: &Path) -> Result<Rankings> {
    let run: Run = load_run(path)?;
    Ok(rankings_from_run(&run))
}

fn cmd_fuse(r: &Resolved, args: &FuseArgs, fixed: bool, out: &mut OutDir) -> Result<()> {
    let a = read_rankings(&args.run_a)?;
    let b = read_rankings(&args.run_b)?;
    let qrels = match &r.qrels {
        Some(p) => Some(read_qrels(p)?),
        None => None,
    };
    let hybrid: &HybridConfig = &r.hybrid;
    let (fused, summary) = if fixed {
        let fused = fuse(&a, &b, hybrid.lambda)?;
        (fused, json!({ "mode": "fixed", "lambda": hybrid.lambda }))
    } else {
        let qrels = qrels.as_ref().ok_or_else(|| {
            QderError::Config("fitting lambda needs --qrels; pass --lambda otherwise".into())
        })?;
        match &args.folds_file {
            Some(path) => {
                let file = File::open(path).map_err(io_err(path))?;
                let folds: FoldsFile =
                    serde_json::from_reader(BufReader::new(file)).map_err(|e| {
                        QderError::parse(path.display().to_string(), e.line(), e.to_string())
                    })?;
                let cf = cross_fit_fusion(&a, &b, qrels, &folds.assignment, hybrid)?;
                let mut lambdas = BTreeMap::new();
                for (fold, fit) in &cf.fits {
                    out.write_with(&format!("lambda_curve_fold_{fold}.csv"), |w| {
                        fit.write_csv(w)
                    })?;
                    lambdas.insert(
                        fold.to_string(),
                        json!({ "lambda": fit.lambda, "train_map": fit.map }),
                    );
                }
                (
                    cf.rankings,
                    json!({ "mode": "cross_fit", "folds": lambdas }),
                )
            }
            None => {
                log::warn!("fitting lambda on every query; pass --folds-file for an out-of-sample estimate");
                let fit = fit_lambda(&a, &b, qrels, hybrid)?;
                out.write_with("lambda_curve.csv", |w| fit.write_csv(w))?;
                log::info!("best lambda {} (MAP {:.4})", fit.lambda, fit.map);
                (
                    fuse(&a, &b, fit.lambda)?,
                    json!({ "mode": "fit", "lambda": fit.lambda }),
                )
            }
        }
    };
    write_rankings(out, "fused.run", &fused, "hybrid")?;
    let mut summary = summary;
    if let Some(q) = &qrels {
        let report = evaluate(&fused, q, r.k);
        log::info!("fused MAP {:.4}", report.map());
        summary["map"] = json!(report.map());
        write_report(out, "metrics", &report)?;
    }
    out.write_json("fusion.json", &summary)
}

fn system_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_eval(r: &Resolved, args: &EvalArgs, out: &mut OutDir) -> Result<()> {
    let qrels = read_qrels(required(&r.qrels, "qrels")?)?;
    let mut systems: BTreeMap<String, (Rankings, MetricReport)> = BTreeMap::new();
    for path in &args.runs {
        let name = system_name(path);
        if name == "baseline" || systems.contains_key(&name) {
            return Err(QderError::Config(format!(
                "run name {name:?} is used twice or reserved"
            )));
        }
        let rankings = read_rankings(path)?;
        let report = evaluate(&rankings, &qrels, r.k);
        systems.insert(name, (rankings, report));
    }
    let baseline = match &args.baseline {
        Some(path) => {
            let rankings = read_rankings(path)?;
            let report = evaluate(&rankings, &qrels, r.k);
            Some((rankings, report))
        }
        None => None,
    };

    let mut summary = BTreeMap::new();
    for (name, (_, report)) in &systems {
        log::info!("{name}: MAP {:.4}", report.map());
        write_report(out, &format!("metrics_{name}"), report)?;
        summary.insert(name.clone(), report.macro_avg);
    }
    let mut report_json = json!({ "k": r.k, "systems": summary });

    if let Some((base_rankings, base_report)) = &baseline {
        write_report(out, "metrics_baseline", base_report)?;
        report_json["baseline"] = json!(base_report.macro_avg);
        let mut significance = BTreeMap::new();
        let mut shifts = BTreeMap::new();
        for (name, (rankings, report)) in &systems {
            let mut per_metric = BTreeMap::new();
            for metric in [
                MetricKind::Ap,
                MetricKind::NdcgAtK,
                MetricKind::PAtK,
                MetricKind::Rr,
            ] {
                let a: Vec<f64> = report.values(metric).into_values().collect();
                let b: Vec<f64> = base_report.values(metric).into_values().collect();
                let test = match paired_t_test(&a, &b) {
                    Ok(t) => json!(t),
                    Err(e) => {
                        log::warn!("{name}: no t-test for {metric:?}: {e}");
                        Value::Null
                    }
                };
                per_metric.insert(json!(metric).as_str().unwrap_or_default().to_string(), test);
            }
            significance.insert(name.clone(), per_metric);
            let shift: BTreeMap<String, _> = rank_shift_report(base_rankings, rankings, &qrels)
                .into_iter()
                .map(|(g, s)| (g.to_string(), s))
                .collect();
            shifts.insert(name.clone(), shift);
        }
        report_json["significance"] = json!(significance);
        report_json["rank_shift"] = json!(shifts);
        let named: Vec<(&str, &MetricReport)> = systems
            .iter()
            .map(|(n, (_, rep))| (n.as_str(), rep))
            .collect();
        let bins = difficulty_bins(base_report, &named, MetricKind::Ap, &DEFAULT_EDGES)?;
        out.write_with("difficulty_bins.csv", |w| bins.write_csv(w))?;
        report_json["difficulty_bins"] = json!(bins);
    }
    out.write_json("report.json", &report_json)
}

fn cmd_ablate(r: &Resolved, out: &mut OutDir) -> Result<()> {
    let ds = load_dataset(r, true)?;
    let outcomes = ablation_suite(&ds, &r.train)?;
    out.write_with("ablation.csv", |w| write_ablation_csv(w, outcomes.values()))?;
    let summary: BTreeMap<&String, Value> = outcomes
        .iter()
        .map(|(name, o)| {
            (
                name,
                json!({
                    "ablation": o.variant.ablation,
                    "head": o.variant.head,
                    "feature_dim": o.feature_dim,
                    "macro": o.report.macro_avg,
                }),
            )
        })
        .collect();
    out.write_json("ablation.json", &summary)?;
    for (name, o) in &outcomes {
        log::info!("{name}: MAP {:.4}", o.report.map());
    }

    let singles: BTreeMap<InteractionOp, Rankings> = InteractionOp::ALL
        .into_iter()
        .filter_map(|op| {
            outcomes
                .get(&format!("only-{}", op.name()))
                .map(|o| (op, o.rankings.clone()))
        })
        .collect();
    let table = scores_from_rankings(&singles)?;
    out.write_with("op_scores.csv", |w| table.write_csv(w))?;
    match operation_correlation(&table) {
        Ok(m) => out.write_with("op_correlation.csv", |w| m.write_csv(w))?,
        Err(e) => log::warn!("no operation correlation: {e}"),
    }
    Ok(())
}

fn cmd_noise(
    ops: &[InteractionOp],
    sigmas: &[f64],
    trials: usize,
    seed: u64,
    instance: &NoiseInstance,
    out: &mut OutDir,
) -> Result<()> {
    let mut reports = Vec::new();
    for &op in ops {
        let r = noise_sensitivity(op, sigmas, trials, seed, instance)?;
        for x in &r {
            log::info!(
                "{op} σ={}: angle {:.4}°, amplification {:.4}, τ {:.4}",
                x.sigma,
                x.angular_deviation_deg,
                x.amplification_ratio,
                x.kendall_tau
            );
        }
        reports.extend(r);
    }
    out.write_with("noise.csv", |w| write_noise_csv(w, &reports))?;
    out.write_json("noise.json", &reports)
}

#[derive(Serialize)]
struct ClusterSummary {
    points: usize,
    labels: BTreeMap<String, usize>,
    overall: Option<ClusterReport>,
    /// Mean of per-query reports over queries with both labels present.
    per_query_mean: Option<ClusterReport>,
    per_query_count: usize,
}

fn summarize(points: &[EmbeddingPoint], per_query: bool) -> ClusterSummary {
    let mut labels = BTreeMap::new();
    for p in points {
        *labels.entry(p.label.clone()).or_insert(0) += 1;
    }
    let report = |pts: &[&EmbeddingPoint]| {
        let vecs: Vec<&[f64]> = pts.iter().map(|p| p.vec.as_slice()).collect();
        let labs: Vec<&str> = pts.iter().map(|p| p.label.as_str()).collect();
        clustering_metrics(&vecs, &labs)
    };
    let all: Vec<&EmbeddingPoint> = points.iter().collect();
    let overall = match report(&all) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("no overall clustering report: {e}");
            None
        }
    };
    let (mut per_query_mean, mut per_query_count) = (None, 0);
    if per_query {
        let mut groups: BTreeMap<&str, Vec<&EmbeddingPoint>> = BTreeMap::new();
        for p in points {
            let q = p.id.split(' ').next().unwrap_or_default();
            groups.entry(q).or_default().push(p);
        }
        let reports: Vec<ClusterReport> = groups.values().filter_map(|g| report(g).ok()).collect();
        per_query_count = reports.len();
        if per_query_count > 0 {
            let n = per_query_count as f64;
            per_query_mean = Some(ClusterReport {
                dbi: reports.iter().map(|r| r.dbi).sum::<f64>() / n,
                silhouette: reports.iter().map(|r| r.silhouette).sum::<f64>() / n,
                calinski_harabasz: reports.iter().map(|r| r.calinski_harabasz).sum::<f64>() / n,
            });
        }
    }
    ClusterSummary {
        points: points.len(),
        labels,
        overall,
        per_query_mean,
        per_query_count,
    }
}

fn cmd_cluster(r: &Resolved, args: &ClusterArgs, out: &mut OutDir) -> Result<()> {
    if !args.points.is_empty() {
        let mut summaries = BTreeMap::new();
        for path in &args.points {
            let file = File::open(path).map_err(io_err(path))?;
            let points = read_points(BufReader::new(file), &path.display().to_string())?;
            summaries.insert(
                system_name(path),
                summarize(&points, args.labels == LabelKind::Relevance),
            );
        }
        return out.write_json("cluster.json", &summaries);
    }
    let ds = load_dataset(r, args.labels == LabelKind::Relevance)?;
    let model = args
        .checkpoint
        .as_deref()
        .map(load_checkpoint)
        .transpose()?;
    let mode = args.mode.unwrap_or(if model.is_some() {
        DumpMode::QuerySpecific
    } else {
        DumpMode::StaticPool
    });
    let points = embedding_dump(&ds, model.as_ref(), mode, args.labels, ds.run.keys())?;
    out.write_with("embeddings.ndjson", |w| write_points(w, &points))?;
    let summary = summarize(&points, args.labels == LabelKind::Relevance);
    out.write_json(
        "cluster.json",
        &json!({ "mode": mode, "labels": args.labels, "report": summary }),
    )
}

fn cmd_synth(spec: &SyntheticSpec, out: &mut OutDir) -> Result<()> {
    let ds = generate(spec)?;
    for name in [CORPUS_FILE, QUERIES_FILE, RUN_FILE, QRELS_FILE] {
        out.claim(name);
    }
    write_dataset(&ds, out.root())?;
    log::info!(
        "{} queries, {} documents written to {}",
        ds.queries.len(),
        ds.corpus.len(),
        out.root().display()
    );
    Ok(())
}
