//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit when any
//! criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use axum::body::Body;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tower::ServiceExt;

use scorecf::bench::{instance, query_for, BenchConfig};
use scorecf::diversity::{extend_multi, DiversityConfig};
use scorecf::engine::{run, strip_timings};
use scorecf::formulation::{
    build_binary_cf, build_continuous_cf, build_probability_cf, decode_all, piecewise_logistic, CfModel, CfQuery,
    Counterfactual, Outcome, PwlStrategy, Relation, TERM_CLOSENESS, TERM_OUTCOME, TERM_PROXIMITY,
};
use scorecf::milp::{solve_milp, MilpResult, MilpStatus, SolverLimits};
use scorecf::multiobjective::{solve_hierarchical, Degradation};
use scorecf::oracle::{oracle_multi, oracle_single, OracleResult, OracleStatus};
use scorecf::query::{Method, QueryDoc, StrategyDoc};
use scorecf::scorecard::{logistic, Scorecard, TargetType};
use scorecf::stats::{compute_gaussian_stats, Dataset};
use scorecf::synthetic::{random_query, random_samples, random_scorecard};
use scorecf_service::{app, AppState, Limits};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn solve(cf: &CfModel) -> MilpResult {
    solve_milp(&cf.model, &SolverLimits::default()).expect("solver runs")
}

/// Status and objective agreement; returns the objective difference.
fn agree(tag: &str, r: &MilpResult, oracle: &OracleResult) -> Result<f64, String> {
    match (oracle.status, r.status) {
        (OracleStatus::Infeasible, MilpStatus::Infeasible) => Ok(0.0),
        (OracleStatus::Optimal, MilpStatus::Optimal) => {
            let d = (r.objective_total - oracle.best_objective).abs();
            ensure(d <= 1e-6, || {
                format!(
                    "{tag}: objective {} vs oracle {}",
                    r.objective_total, oracle.best_objective
                )
            })?;
            Ok(d)
        }
        (o, m) => Err(format!("{tag}: status {m} vs oracle {o:?}")),
    }
}

/// Decision function recomputed from the scorecard's bins, independent of
/// the decoder's values.
fn recomputed_score(sc: &Scorecard, q: &CfQuery, c: &Counterfactual) -> f64 {
    sc.intercept
        + sc.features
            .iter()
            .enumerate()
            .map(|(i, f)| f.coefficient * c.assignment[i].map_or(q.x.get(i), |b| f.bins[b].transform_value))
            .sum::<f64>()
}

fn valid(sc: &Scorecard, q: &CfQuery, c: &Counterfactual) -> bool {
    let phi = recomputed_score(sc, q, c);
    match q.outcome {
        Outcome::Binary { target: true } => phi >= q.epsilon,
        Outcome::Binary { target: false } => phi <= 0.0,
        _ => true,
    }
}

fn master_suite() -> Vec<(Scorecard, CfQuery)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..200)
        .map(|_| {
            let sc = random_scorecard(&mut rng, 6, 4, TargetType::Binary);
            let target = rng.random_bool(0.5);
            let q = random_query(&mut rng, &sc, Outcome::Binary { target });
            (sc, q)
        })
        .collect()
}

fn multi_suite() -> Vec<(Scorecard, CfQuery, DiversityConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    (0..50)
        .map(|n| {
            let sc = random_scorecard(&mut rng, 5, 4, TargetType::Binary);
            let target = rng.random_bool(0.5);
            let mut q = random_query(&mut rng, &sc, Outcome::Binary { target });
            q.theta = rng.random_range(1..=2);
            let mut cfg = DiversityConfig::new(rng.random_range(2..=3));
            (cfg.hard_feature_sets, cfg.hard_feature_values) = [(true, false), (false, true), (true, true)][n % 3];
            if rng.random_bool(0.5) {
                cfg.lambda3 = 0.0;
                cfg.lambda4 = 0.0;
            }
            (sc, q, cfg)
        })
        .collect()
}

fn oracle_master() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut infeasible = 0;
    for (n, (sc, q)) in master_suite().iter().enumerate() {
        let r = solve(&build_binary_cf(sc, q).map_err(|e| e.to_string())?);
        let oracle = oracle_single(sc, q, None).map_err(|e| e.to_string())?;
        worst = worst.max(agree(&format!("instance {n}"), &r, &oracle)?);
        infeasible += usize::from(r.status == MilpStatus::Infeasible);
    }
    let t = start.elapsed().as_secs_f64();
    ensure(t < 60.0, || format!("took {t:.1} s"))?;
    Ok(format!(
        "200/200 statuses agree ({infeasible} infeasible), max |Δobjective| {worst:.1e}, {t:.2} s"
    ))
}

fn oracle_multi_suite() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut infeasible = 0;
    for (n, (sc, q, cfg)) in multi_suite().iter().enumerate() {
        let r = solve(&extend_multi(sc, q, cfg).map_err(|e| e.to_string())?);
        let oracle = oracle_multi(sc, q, None, cfg).map_err(|e| e.to_string())?;
        worst = worst.max(agree(&format!("instance {n}"), &r, &oracle)?);
        infeasible += usize::from(r.status == MilpStatus::Infeasible);
    }
    let t = start.elapsed().as_secs_f64();
    ensure(infeasible >= 5, || {
        format!("only {infeasible} certified-infeasible cases")
    })?;
    ensure(t < 120.0, || format!("took {t:.1} s"))?;
    Ok(format!(
        "50/50 agree ({infeasible} certified infeasible), max |Δobjective| {worst:.1e}, {t:.2} s"
    ))
}

fn validity() -> Check {
    let mut checked = 0;
    for (n, (sc, q)) in master_suite().iter().enumerate() {
        let cf = build_binary_cf(sc, q).map_err(|e| e.to_string())?;
        let r = solve(&cf);
        if r.status != MilpStatus::Optimal {
            continue;
        }
        for c in decode_all(sc, q, &cf, &r, None).map_err(|e| e.to_string())? {
            ensure(valid(sc, q, &c), || {
                format!("instance {n}: φ = {}", recomputed_score(sc, q, &c))
            })?;
            ensure(c.changes.len() <= q.theta, || {
                format!("instance {n}: {} changes", c.changes.len())
            })?;
            checked += 1;
        }
    }
    for (n, (sc, q, cfg)) in multi_suite().iter().enumerate() {
        let cf = extend_multi(sc, q, cfg).map_err(|e| e.to_string())?;
        let r = solve(&cf);
        if r.status != MilpStatus::Optimal {
            continue;
        }
        for c in decode_all(sc, q, &cf, &r, None).map_err(|e| e.to_string())? {
            ensure(valid(sc, q, &c), || {
                format!("multi instance {n}: φ = {}", recomputed_score(sc, q, &c))
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked}/{checked} decoded counterfactuals valid"))
}

fn sparsity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2026);
    let mut feasible = 0;
    for n in 0..20 {
        let sc = random_scorecard(&mut rng, 6, 4, TargetType::Binary);
        let target = rng.random_bool(0.5);
        let mut q = random_query(&mut rng, &sc, Outcome::Binary { target });
        let mut previous: Option<f64> = None;
        for theta in 1..=4 {
            q.theta = theta;
            let r = solve(&build_binary_cf(&sc, &q).map_err(|e| e.to_string())?);
            match (r.status, previous) {
                (MilpStatus::Infeasible, None) => {}
                (MilpStatus::Optimal, p) => {
                    ensure(p.is_none_or(|p| r.objective_total <= p + 1e-9), || {
                        format!("instance {n}: Θ={theta} costs more")
                    })?;
                    previous = Some(r.objective_total);
                }
                (s, _) => return Err(format!("instance {n}: Θ={theta} status {s}")),
            }
        }
        feasible += usize::from(previous.is_some());
    }
    Ok(format!(
        "20 instances × Θ=1..4 non-increasing ({feasible} reach feasibility)"
    ))
}

fn piecewise() -> Check {
    let mut detail = Vec::new();
    for eps in [1e-2, 5e-3, 1e-3] {
        let p = piecewise_logistic(-8.0, 8.0, 64, PwlStrategy::Greedy, Some(eps)).map_err(|e| e.to_string())?;
        let n = 10_000;
        let grid = (0..=n)
            .map(|k| {
                let x = -8.0 + 16.0 * k as f64 / n as f64;
                (logistic(x) - p.eval(x)).abs()
            })
            .fold(0.0, f64::max);
        ensure(grid <= eps, || format!("eps {eps}: grid error {grid:.2e}"))?;
        detail.push(format!("{eps}: R={} err {grid:.1e}", p.segments()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2027);
    let mut queries = 0;
    for n in 0..90 {
        let eps = [1e-2, 5e-3, 1e-3][n % 3];
        let sc = random_scorecard(&mut rng, 5, 4, TargetType::Binary);
        let relation = [Relation::Le, Relation::Ge, Relation::Closest][rng.random_range(0..3)];
        let target = rng.random_range(0.05..0.95);
        let mut q = random_query(&mut rng, &sc, Outcome::Probability { target, relation });
        q.piecewise.eps_approx = eps;
        let cf = build_probability_cf(&sc, &q).map_err(|e| e.to_string())?;
        let r = solve(&cf);
        if r.status != MilpStatus::Optimal {
            continue;
        }
        for c in decode_all(&sc, &q, &cf, &r, None).map_err(|e| e.to_string())? {
            let d = (logistic(c.score) - c.model_probability.unwrap_or(f64::NAN)).abs();
            ensure(d <= eps, || format!("query {n}: |PD − f| = {d:.2e} > {eps}"))?;
            queries += 1;
        }
    }
    Ok(format!(
        "grid {}; {queries} probability counterfactuals within eps",
        detail.join(", ")
    ))
}

fn l1_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2028);
    let mut models: Vec<(Scorecard, CfQuery, CfModel)> = Vec::new();
    for (sc, q) in master_suite() {
        let cf = build_binary_cf(&sc, &q).map_err(|e| e.to_string())?;
        models.push((sc, q, cf));
    }
    for _ in 0..50 {
        let sc = random_scorecard(&mut rng, 5, 4, TargetType::Binary);
        let target = rng.random_range(0.05..0.95);
        let q = random_query(
            &mut rng,
            &sc,
            Outcome::Probability {
                target,
                relation: Relation::Closest,
            },
        );
        let cf = build_probability_cf(&sc, &q).map_err(|e| e.to_string())?;
        models.push((sc, q, cf));
        let sc = random_scorecard(&mut rng, 6, 4, TargetType::Continuous);
        let target = rng.random_range(-3.0..3.0);
        let q = random_query(
            &mut rng,
            &sc,
            Outcome::Continuous {
                target,
                relation: Relation::Closest,
            },
        );
        let cf = build_continuous_cf(&sc, &q).map_err(|e| e.to_string())?;
        models.push((sc, q, cf));
    }
    let mut worst = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for (n, (sc, q, cf)) in models.iter().enumerate() {
        let r = solve(cf);
        if r.status != MilpStatus::Optimal {
            continue;
        }
        let c = &decode_all(sc, q, cf, &r, None).map_err(|e| e.to_string())?[0];
        let pairs = [
            (q.lambdas[0] > 0.0, c.model_terms.get(TERM_PROXIMITY), Some(c.proximity)),
            (q.lambdas[1] > 0.0, c.model_terms.get(TERM_CLOSENESS), c.closeness),
            (q.lambdas[2] > 0.0, c.model_terms.get(TERM_OUTCOME), c.outcome_gap),
        ];
        for (t, (active, model, exact)) in pairs.into_iter().enumerate() {
            if !active {
                continue;
            }
            let (Some(m), Some(e)) = (model, exact) else {
                return Err(format!("model {n}: term {t} missing"));
            };
            let d = (m - e).abs();
            ensure(d <= 1e-7, || format!("model {n}: term {t} off by {d:.2e}"))?;
            worst[t] = worst[t].max(d);
            counts[t] += 1;
        }
    }
    Ok(format!(
        "proximity {} (max {:.1e}), closeness {} (max {:.1e}), gap {} (max {:.1e})",
        counts[0], worst[0], counts[1], worst[1], counts[2], worst[2]
    ))
}

fn bench_doc(
    cfg: &BenchConfig,
    sc: &Scorecard,
    x: &scorecf::scorecard::DataPoint,
    k: usize,
    theta: usize,
    method: Method,
) -> QueryDoc {
    let mut doc = query_for(sc, x, cfg, k, theta, method);
    if method == Method::Hierarchical {
        doc.strategy = Some(StrategyDoc {
            method,
            priority: Some(vec![TERM_PROXIMITY.into(), TERM_CLOSENESS.into()]),
            degradation: None,
        });
    }
    doc
}

fn timed_run(sc: &Scorecard, data: &Dataset, doc: &QueryDoc) -> Result<(MilpStatus, f64), String> {
    let start = Instant::now();
    let report = run(sc, Some(data), doc, 30.0, f64::INFINITY).map_err(|e| e.to_string())?;
    Ok((report.status, start.elapsed().as_secs_f64()))
}

fn hierarchical() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2029);
    let mut faces = 0;
    let mut degradations = 0;
    for n in 0..40 {
        let sc = random_scorecard(&mut rng, 5, 4, TargetType::Binary);
        let target = rng.random_bool(0.5);
        let mut q = random_query(&mut rng, &sc, Outcome::Binary { target });
        let data = random_samples(&mut rng, &sc, 40);
        q.stats = Some(compute_gaussian_stats(&data, None).map_err(|e| e.to_string())?);
        q.lambdas = [1.0, 1.0, 0.0];
        let cf = build_binary_cf(&sc, &q).map_err(|e| e.to_string())?;
        let limits = SolverLimits::default();
        let order = vec![TERM_PROXIMITY.to_string(), TERM_CLOSENESS.to_string()];

        let (r, stages) =
            solve_hierarchical(&cf.model, &order, Degradation::Relative(0.0), &limits).map_err(|e| e.to_string())?;
        if r.status == MilpStatus::Optimal {
            let mut first = q.clone();
            first.lambdas = [1.0, 0.0, 0.0];
            let oracle = oracle_single(&sc, &first, None).map_err(|e| e.to_string())?;
            ensure((stages[0].optimum - oracle.best_objective).abs() <= 1e-6, || {
                format!("instance {n}: stage 1 off the oracle")
            })?;
            let stats = q.stats.as_ref().expect("set above");
            for tie in &oracle.best_assignments {
                let point: Vec<f64> = (0..sc.num_features())
                    .map(|i| tie[0][i].map_or(q.x.get(i), |b| sc.features[i].bins[b].transform_value))
                    .collect();
                let c = stats.l1_closeness(&point);
                ensure(stages[1].optimum <= c + 1e-7, || {
                    format!("instance {n}: stage 2 {} above face point {c}", stages[1].optimum)
                })?;
            }
            ensure(
                r.objective_terms[TERM_PROXIMITY] <= stages[0].optimum + limits.feas_tol,
                || format!("instance {n}: left the face"),
            )?;
            faces += 1;
        }

        let (r, stages) =
            solve_hierarchical(&cf.model, &order, Degradation::Relative(0.1), &limits).map_err(|e| e.to_string())?;
        if r.status.has_solution() {
            ensure(
                r.objective_terms[TERM_PROXIMITY] <= stages[0].bound + limits.feas_tol,
                || format!("instance {n}: degradation exceeded"),
            )?;
            degradations += 1;
        }
    }

    let cfg = BenchConfig {
        lambdas: vec![1.0, 1.0, 0.0],
        ..BenchConfig::default()
    };
    let (sc, data, x) = instance(&cfg);
    let best = |method: Method| -> Result<f64, String> {
        let doc = bench_doc(&cfg, &sc, &x, 2, 2, method);
        let mut t = f64::INFINITY;
        for _ in 0..2 {
            let (status, s) = timed_run(&sc, &data, &doc)?;
            ensure(status == MilpStatus::Optimal, || {
                format!("benchmark {method:?} status {status}")
            })?;
            t = t.min(s);
        }
        Ok(t)
    };
    let weighted = best(Method::Weighted)?;
    let hier = best(Method::Hierarchical)?;
    ensure(hier <= 4.0 * weighted, || {
        format!("hierarchical {hier:.3} s vs weighted {weighted:.3} s")
    })?;
    Ok(format!(
        "{faces} δ=0 faces oracle-verified, {degradations} δ=0.1 runs within bounds, benchmark {hier:.3} s vs weighted {weighted:.3} s ({:.1}×)",
        hier / weighted
    ))
}

fn performance() -> Check {
    let cfg = BenchConfig::default();
    let (sc, data, x) = instance(&cfg);
    let (status, single) = timed_run(&sc, &data, &bench_doc(&cfg, &sc, &x, 1, 4, Method::Weighted))?;
    ensure(status == MilpStatus::Optimal, || {
        format!("p=12 single: status {status}")
    })?;
    ensure(single < 5.0, || format!("p=12 single took {single:.2} s"))?;
    let (status, multi) = timed_run(&sc, &data, &bench_doc(&cfg, &sc, &x, 4, 4, Method::Weighted))?;
    ensure(matches!(status, MilpStatus::Optimal | MilpStatus::Infeasible), || {
        format!("K=4 Θ=4 F+FV: status {status} after {multi:.1} s")
    })?;
    ensure(multi < 30.0, || format!("K=4 Θ=4 F+FV took {multi:.1} s"))?;
    Ok(format!(
        "p=12 single {single:.3} s; K=4 Θ=4 F+FV {status} in {multi:.2} s"
    ))
}

fn infeasibility_certificate() -> Check {
    let cfg = BenchConfig::default();
    let (sc, data, x) = instance(&cfg);
    let mut doc = bench_doc(&cfg, &sc, &x, 1, 4, Method::Weighted);
    doc.actionable = Some(vec![]);
    let (status, t) = timed_run(&sc, &data, &doc)?;
    ensure(status == MilpStatus::Infeasible, || format!("status {status}"))?;
    ensure(t < 1.0, || format!("took {t:.3} s"))?;
    Ok(format!(
        "all-frozen flip on p=12 certified infeasible in {:.1} ms",
        t * 1e3
    ))
}

async fn service_report(
    state: &std::sync::Arc<AppState>,
    registration: &Value,
    query: &Value,
) -> Result<Value, String> {
    let call = |uri: String, body: &Value| {
        axum::http::Request::post(uri)
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .expect("request builds")
    };
    let resp = app(state.clone())
        .oneshot(call("/api/scorecards".into(), registration))
        .await
        .map_err(|e| e.to_string())?;
    let bytes = resp.into_body().collect().await.map_err(|e| e.to_string())?.to_bytes();
    let id: Value = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
    let id = id["id"].as_str().ok_or("registration returned no id")?.to_string();
    let resp = app(state.clone())
        .oneshot(call(format!("/api/scorecards/{id}/counterfactuals"), query))
        .await
        .map_err(|e| e.to_string())?;
    let bytes = resp.into_body().collect().await.map_err(|e| e.to_string())?.to_bytes();
    serde_json::from_slice(&bytes).map_err(|e| e.to_string())
}

fn parity() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let toy = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy2");
    let mut cases: Vec<(
        String,
        std::path::PathBuf,
        std::path::PathBuf,
        Option<std::path::PathBuf>,
    )> = [
        "query.json",
        "query_reject.json",
        "query_diverse.json",
        "query_starved.json",
        "query_probability.json",
    ]
    .iter()
    .map(|q| (q.to_string(), toy.join("scorecard.json"), toy.join(q), None))
    .collect();

    // closeness needs sample data: a smaller benchmark instance
    let cfg = BenchConfig {
        features: 6,
        lambdas: vec![1.0, 1.0, 0.0],
        ..BenchConfig::default()
    };
    let (sc, data, x) = instance(&cfg);
    let mut csv = data.names.join(",");
    for r in &data.rows {
        csv.push('\n');
        csv.push_str(&r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    }
    let write = |name: &str, text: &str| -> Result<std::path::PathBuf, String> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| e.to_string())?;
        Ok(p)
    };
    let sc_path = write("sc.json", &sc.to_json())?;
    let csv_path = write("data.csv", &csv)?;
    for (name, method) in [("weighted", Method::Weighted), ("hierarchical", Method::Hierarchical)] {
        let doc = bench_doc(&cfg, &sc, &x, 2, 2, method);
        let q = write(
            &format!("{name}.json"),
            &serde_json::to_string(&doc).map_err(|e| e.to_string())?,
        )?;
        cases.push((format!("bench {name}"), sc_path.clone(), q, Some(csv_path.clone())));
    }

    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let limits = Limits::default();
    let state = AppState::new(limits);
    for (name, sc, q, data) in &cases {
        let mut args = vec![
            "generate".to_string(),
            "--scorecard".into(),
            sc.display().to_string(),
            "--query".into(),
            q.display().to_string(),
            "--format".into(),
            "json".into(),
            "--time-limit".into(),
            limits.default_time_limit.to_string(),
        ];
        if let Some(d) = data {
            args.extend(["--stats-data".into(), d.display().to_string()]);
        }
        let out = Command::new(env!("CARGO_BIN_EXE_cf"))
            .args(&args)
            .output()
            .map_err(|e| e.to_string())?;
        let mut cli: Value = serde_json::from_slice(&out.stdout).map_err(|e| format!("{name}: CLI output: {e}"))?;

        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| e.to_string());
        let doc: Value = serde_json::from_str(&read(sc)?).map_err(|e| e.to_string())?;
        let registration = match data {
            None => doc,
            Some(d) => serde_json::json!({ "scorecard": doc, "data": read(d)? }),
        };
        let query: Value = serde_json::from_str(&read(q)?).map_err(|e| e.to_string())?;
        let mut service = rt.block_on(service_report(&state, &registration, &query))?;
        strip_timings(&mut cli);
        strip_timings(&mut service);
        ensure(cli == service, || format!("{name}: reports differ"))?;
    }
    Ok(format!("{} query documents give identical reports", cases.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("oracle equivalence, single", oracle_master),
        ("oracle equivalence, multi", oracle_multi_suite),
        ("validity", validity),
        ("sparsity monotonicity", sparsity),
        ("piecewise logistic", piecewise),
        ("l1 linearization exactness", l1_exactness),
        ("hierarchical contract", hierarchical),
        ("performance envelope", performance),
        ("infeasibility certificate", infeasibility_certificate),
        ("CLI/service parity", parity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
