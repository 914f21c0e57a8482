use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use scorecf::bench::{instance, query_for, BenchConfig};
use scorecf::engine::strip_timings;
use scorecf::query::Method;

fn toy(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy2").join(name)
}

fn cf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cf"))
        .args(args)
        .output()
        .expect("cf runs")
}

fn generate(scorecard: &Path, query: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "generate",
        "--scorecard",
        scorecard.to_str().unwrap(),
        "--query",
        query.to_str().unwrap(),
        "--format",
        "json",
    ];
    args.extend_from_slice(extra);
    cf(&args)
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn golden_report_is_stable() {
    let out = generate(&toy("scorecard.json"), &toy("query.json"), &[]);
    assert_eq!(out.status.code(), Some(0));
    let mut report = json(&out);
    strip_timings(&mut report);
    let golden: Value = serde_json::from_str(
        &std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/toy2_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report, golden);
    // the oracle's unique optimum: A moves to 0.4 at cost 0.4 / 0.9
    assert_eq!(report["status"], "optimal");
    assert_eq!(report["counterfactuals"].as_array().unwrap().len(), 1);
    let changes = report["counterfactuals"][0]["changes"].as_array().unwrap();
    assert_eq!(changes.len(), 1);
    assert_eq!(changes[0]["feature"], "A");
    assert_eq!(changes[0]["new_value"], 0.4);
    assert!((report["solver"]["objective"].as_f64().unwrap() - 0.4 / 0.9).abs() < 1e-9);
}

#[test]
fn repeated_runs_are_byte_identical_without_timings() {
    let a = generate(&toy("scorecard.json"), &toy("query_diverse.json"), &[]);
    let b = generate(&toy("scorecard.json"), &toy("query_diverse.json"), &[]);
    let (mut a, mut b) = (json(&a), json(&b));
    strip_timings(&mut a);
    strip_timings(&mut b);
    assert_eq!(a.to_string(), b.to_string());
}

#[test]
fn table_output_lists_the_change() {
    let out = cf(&[
        "generate",
        "--scorecard",
        toy("scorecard.json").to_str().unwrap(),
        "--query",
        toy("query_reject.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("status: optimal"), "{text}");
    assert!(text.contains("Feature | Current value | Required value"), "{text}");
    assert!(text.contains("B       | 0             | (-∞, 5.00)"), "{text}");
}

#[test]
fn malformed_query_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"outcome": 5}"#).unwrap();
    let out = generate(&toy("scorecard.json"), &bad, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("schema error"), "{err}");
}

#[test]
fn invalid_arguments_exit_2() {
    let out = cf(&["generate", "--query", toy("query.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--scorecard is required"));

    let out = cf(&[
        "generate",
        "--scorecard",
        "/nonexistent/sc.json",
        "--query",
        toy("query.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = cf(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn starved_diverse_query_is_infeasible_with_exit_3() {
    let out = generate(&toy("scorecard.json"), &toy("query_starved.json"), &[]);
    assert_eq!(out.status.code(), Some(3));
    let report = json(&out);
    assert_eq!(report["status"], "infeasible");
    assert!(report["counterfactuals"].as_array().unwrap().is_empty());
    let solve = report["timing"]["solve"].as_f64().unwrap();
    assert!((0.0..1.0).contains(&solve));
}

#[test]
fn oracle_subcommand_agrees_with_generate() {
    for (q, objective, code) in [
        ("query.json", 0.4 / 0.9, 0),
        ("query_reject.json", 0.5, 0),
        ("query_diverse.json", f64::NAN, 0),
        ("query_starved.json", f64::NAN, 3),
    ] {
        let out = cf(&[
            "oracle",
            "--scorecard",
            toy("scorecard.json").to_str().unwrap(),
            "--query",
            toy(q).to_str().unwrap(),
            "--format",
            "json",
        ]);
        assert_eq!(out.status.code(), Some(code), "{q}");
        let oracle = json(&out);
        let milp = json(&generate(&toy("scorecard.json"), &toy(q), &[]));
        assert_eq!(oracle["status"], milp["status"], "{q}");
        if code == 0 {
            let best = oracle["best_objective"].as_f64().unwrap();
            assert!(
                (best - milp["solver"]["objective"].as_f64().unwrap()).abs() < 1e-6,
                "{q}"
            );
            if !objective.is_nan() {
                assert!((best - objective).abs() < 1e-9, "{q}");
            }
        }
    }
}

#[test]
fn dump_lp_writes_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.lp");
    let out = cf(&[
        "dump-lp",
        "--scorecard",
        toy("scorecard.json").to_str().unwrap(),
        "--query",
        toy("query_diverse.json").to_str().unwrap(),
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let lp = std::fs::read_to_string(&path).unwrap();
    for section in ["Minimize", "Subject To", "Bounds", "Binaries", "End"] {
        assert!(lp.contains(section), "{section}");
    }
    assert!(lp.contains("proximity=1"));
}

#[test]
fn bench_grid_has_one_row_per_cell() {
    let out = cf(&["bench", "--seed", "1", "--time-limit", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5, "{text}");
    assert!(lines[0].starts_with("K,theta,approach,status,proximity,closeness,D_F,D_FV,pd_min,pd_max,time_s"));
    let cells: Vec<(String, String)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 12, "{l}");
            assert_eq!(f[2], "weighted F+FV");
            assert!(
                ["optimal", "feasible", "infeasible", "time_limit"].contains(&f[3]),
                "{l}"
            );
            assert!(f[10].parse::<f64>().unwrap() > 0.0, "{l}");
            (f[0].to_string(), f[1].to_string())
        })
        .collect();
    let expected: Vec<(String, String)> = [("3", "2"), ("3", "3"), ("4", "2"), ("4", "3")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    assert_eq!(cells, expected);
}

#[test]
fn hierarchical_bench_stages_match_sequential_runs() {
    let out = cf(&[
        "bench",
        "--features",
        "8",
        "--k",
        "2",
        "--theta",
        "2",
        "--method",
        "hierarchical",
        "--lambdas",
        "1,1",
        "--format",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let rows = json(&out);
    let stages = &rows[0]["stages"];
    let first = stages["proximity"].as_f64().unwrap();
    let second = stages["closeness"].as_f64().unwrap();

    let cfg = BenchConfig {
        features: 8,
        lambdas: vec![1.0, 1.0, 0.0],
        ..BenchConfig::default()
    };
    let (sc, data, x) = instance(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let sc_path = dir.path().join("sc.json");
    std::fs::write(&sc_path, sc.to_json()).unwrap();
    let data_path = dir.path().join("data.csv");
    let mut csv = data.names.join(",");
    for r in &data.rows {
        csv.push('\n');
        csv.push_str(&r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    }
    std::fs::write(&data_path, csv).unwrap();

    let solo = |lambdas: Vec<f64>| {
        let mut doc = query_for(&sc, &x, &cfg, 2, 2, Method::Weighted);
        doc.lambdas = lambdas;
        let q = dir.path().join("q.json");
        std::fs::write(&q, serde_json::to_string(&doc).unwrap()).unwrap();
        let out = generate(&sc_path, &q, &["--stats-data", data_path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        let report = json(&out);
        assert_eq!(report["status"], "optimal");
        report["solver"]["objective"].as_f64().unwrap()
    };
    // stage one is the proximity-only problem
    assert!((solo(vec![1.0, 0.0]) - first).abs() < 1e-6);
    // stage two is closeness restricted to near-optimal proximity
    assert!(solo(vec![0.0, 1.0]) <= second + 1e-6);
}
