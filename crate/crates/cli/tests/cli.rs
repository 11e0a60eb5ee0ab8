use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polytube::io::{self, ScenarioFile};
use polytube::ocp::{self, OcpOptions};
use serde_json::Value;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn polytube(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polytube"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// The case study with edits applied to its JSON, written into `dir`.
fn variant(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(scenarios().join("case_study.json")).unwrap()).unwrap();
    edit(&mut v);
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(&v).unwrap()).unwrap();
    p
}

#[test]
fn bundled_scenario_file_matches_library() {
    let file = ScenarioFile::read(&scenarios().join("case_study.json")).unwrap();
    assert_eq!(file, io::case_study_scenario());
}

#[test]
fn synth_reports_case_study_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let o = polytube(&["synth"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("m=6 ν=6 l=8 ν̄=68 |𝕁|=60"));
    let report = read_json(&dir.path().join("synth_report.json"));
    assert_eq!(report["dimensions"]["extreme"], 60);
    assert_eq!(report["passed"], true);
    let bundle = read_json(&dir.path().join("template_bundle.json"));
    assert_eq!(bundle["omega"].as_array().unwrap().len(), 68);
    assert_eq!(bundle["extreme"].as_array().unwrap().len(), 60);
}

#[test]
fn synth_box_template() {
    let dir = tempfile::tempdir().unwrap();
    let t = scenarios().join("box_template.json");
    let o = polytube(&["synth", "--template", t.to_str().unwrap()], dir.path());
    assert!(o.status.success());
    let report = read_json(&dir.path().join("synth_report.json"));
    assert_eq!(report["dimensions"]["nu"], 4);
}

#[test]
fn corrupted_cone_exits_2_and_names_identity() {
    let dir = tempfile::tempdir().unwrap();
    let bad = variant(dir.path(), "bad.json", |v| {
        let g = &mut v["template"]["g"][0][0];
        *g = Value::from(g.as_f64().unwrap() + 1.0);
    });
    let o = polytube(&["synth", "--scenario", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("GY=0"));
}

#[test]
fn invariant_passes_audit_and_writes_figure() {
    let dir = tempfile::tempdir().unwrap();
    let o = polytube(&["invariant"], dir.path());
    assert!(o.status.success());
    let steady = read_json(&dir.path().join("steady.json"));
    assert_eq!(steady["passed"], true);
    assert!(steady["hull_vertices"].as_u64().unwrap() <= 6 * 60);
    let svg = std::fs::read_to_string(dir.path().join("invariant_figure.svg")).unwrap();
    assert!(svg.contains(r#"data-layer="extrinsic_hull""#));
    assert!(svg.contains(r#"data-layer="extreme_polytope""#));
    assert!(!svg.contains(r#"data-layer="terminal""#));
}

#[test]
fn uncontrollable_variant_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = variant(dir.path(), "b0.json", |v| v["system"]["b"] = serde_json::json!([[0.0], [0.0]]));
    let o = polytube(&["invariant", "--scenario", p.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn plan_matches_first_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let o = polytube(&["plan"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let plan = read_json(&dir.path().join("plan.json"));
    assert_eq!(plan["active_stages"][0], 2);
    let fig = read_json(&dir.path().join("plan_figure.json"));
    let layers = fig["layers"].as_array().unwrap();
    let hulls = layers.iter().find(|l| l["style"] == "extrinsic_hull").unwrap()["polygons"].as_array().unwrap();
    assert_eq!(hulls.len(), 11);
    for corner in hulls[0].as_array().unwrap() {
        for c in corner.as_array().unwrap() {
            let c = c.as_f64().unwrap();
            assert!((c - 17.0).abs() < 1e-6 || (c - 23.0).abs() < 1e-6, "{c}");
        }
    }
    assert!(layers.iter().any(|l| l["style"] == "terminal"));
    let rows = io::read_tube_csv(&std::fs::read_to_string(dir.path().join("tube.csv")).unwrap()).unwrap();
    assert_eq!(rows.iter().filter(|r| r.1 == "z").count(), 11);
}

#[test]
fn rigid_plan_costs_at_least_the_full_plan() {
    let dir = tempfile::tempdir().unwrap();
    assert!(polytube(&["plan"], dir.path()).status.success());
    let full = read_json(&dir.path().join("plan.json"))["objective"].as_f64().unwrap();
    assert!(polytube(&["plan", "--rigid"], dir.path()).status.success());
    let rigid = read_json(&dir.path().join("plan.json"))["objective"].as_f64().unwrap();
    assert!(rigid >= full - 1e-6 * full.abs());
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let p = variant(dir.path(), "short.json", |v| {
        v["run"]["seeds"] = serde_json::json!([4, 5]);
        v["run"]["steps"] = serde_json::json!(3);
    });
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = polytube(&["simulate", "--scenario", p.to_str().unwrap()], &a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(polytube(&["simulate", "--scenario", p.to_str().unwrap(), "--seed", "5"], &b).status.success());
    let bytes = |d: &Path| std::fs::read(d.join("trace_seed5.csv")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    let summary = read_json(&a.join("summary.json"));
    assert_eq!(summary["all_feasible"], true);
    assert_eq!(read_json(&a.join("manifest.json"))["trace_csv_version"], 1);
}

#[test]
fn zero_noise_widths_shrink_to_sensor_floor() {
    let dir = tempfile::tempdir().unwrap();
    let p = variant(dir.path(), "exact.json", |v| {
        v["system"]["noise"]["b"] = serde_json::json!([0.0, 0.0]);
        v["system"]["vbar"] = serde_json::json!([0.0]);
        v["cost"]["terminal"] = serde_json::json!("free");
        v["run"]["seeds"] = serde_json::json!([0]);
        v["run"]["steps"] = serde_json::json!(6);
    });
    let o = polytube(&["simulate", "--scenario", p.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(dir.path().join("trace_seed0.csv")).unwrap();
    let header = r.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let mut last = f64::INFINITY;
    for rec in r.records() {
        let rec = rec.unwrap();
        let v = |name: &str| rec[col(name)].parse::<f64>().unwrap();
        // measured coordinate: width at the floor; the other never grows
        assert!((v("yhat_post0") + v("yhat_post3")).abs() <= 1e-9);
        let w2 = v("yhat_post2") + v("yhat_post5");
        assert!(w2 <= last + 1e-9);
        last = w2;
    }
    assert!(last < 6.0);
}

#[test]
fn scenario_round_trip_builds_identical_qps() {
    let dir = tempfile::tempdir().unwrap();
    assert!(polytube(&["synth"], dir.path()).status.success());
    let original = io::case_study_scenario().load().unwrap();
    let dumped = ScenarioFile::read(&dir.path().join("scenario.json")).unwrap();
    let reparsed = ScenarioFile::parse(&dumped.to_json().unwrap()).unwrap();
    assert_eq!(dumped, reparsed);
    let reloaded = reparsed.load().unwrap();
    let build = |s: &io::Scenario| {
        let yhat = s.initial_parameter().unwrap();
        let opts = OcpOptions::default().with_terminal(nalgebra::DVector::from_element(8, 100.0));
        ocp::build_dual_ocp(&s.system, &s.cost, &s.meta, s.run.horizon, &yhat, &opts).unwrap()
    };
    let (a, b) = (build(&original), build(&reloaded));
    let (qa, qb) = (a.qp(), b.qp());
    assert_eq!(qa.m.rows().len(), qb.m.rows().len());
    for (ra, rb) in qa.m.rows().iter().zip(qb.m.rows()) {
        assert_eq!(ra.len(), rb.len());
        for (&(ca, va), &(cb, vb)) in ra.iter().zip(&rb) {
            assert_eq!(ca, cb);
            assert!((va - vb).abs() <= 1e-15);
        }
    }
    let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(u, v)| u == v || (u - v).abs() <= 1e-15);
    assert!(close(&qa.q, &qb.q) && close(&qa.lo, &qb.lo) && close(&qa.hi, &qb.hi));
    assert_eq!(qa.p.to_dense(), qb.p.to_dense());
}

#[test]
fn bad_flags_and_files_are_validation_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = polytube(&["invariant", "--scenario", missing.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = polytube(&["plan", "--mode", "fuzzy"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_subset_prints_one_line_per_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let o = polytube(&["verify", "--only", "1,6"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2);
    assert!(out.lines().next().unwrap().starts_with("[FAIL]  1"));
    assert!(out.contains("[PASS]  6"));
}
