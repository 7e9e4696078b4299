use std::path::PathBuf;
use std::process::{Command, Output};

fn pathibp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathibp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pathibp-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn without_wall_ms(json: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    v.as_object_mut().unwrap().remove("wall_ms");
    v
}

#[test]
fn list_prints_every_scenario() {
    let out = pathibp(&["list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let ids: Vec<&str> = text
        .lines()
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(
        ids,
        [
            "circle-full",
            "torus2-degenerate",
            "sphere2-gradient",
            "sphere2-drift",
            "torus2-transverse-drift"
        ]
    );
    assert_eq!(text, String::from_utf8(pathibp(&["list"]).stdout).unwrap());
}

#[test]
fn missing_scenario_is_a_usage_error() {
    let out = pathibp(&["run", "--check", "eq4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_scenario_suggests_the_nearest_id() {
    let out = pathibp(&[
        "run",
        "--scenario",
        "circle-ful",
        "--check",
        "eq4",
        "--paths",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("did you mean `circle-full`"), "{err}");
}

#[test]
fn unknown_check_is_a_usage_error() {
    let out = pathibp(&["run", "--scenario", "circle-full", "--check", "eq44"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("`eq4`"));
}

#[test]
fn report_has_the_documented_keys() {
    let out = pathibp(&[
        "run",
        "--scenario",
        "circle-full",
        "--check",
        "eq4",
        "--paths",
        "200",
        "--steps",
        "64",
    ]);
    assert!(out.status.code() == Some(0) || out.status.code() == Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        [
            "check",
            "lhs",
            "paired",
            "params",
            "pass",
            "rhs",
            "scenario",
            "threshold",
            "version",
            "wall_ms"
        ]
    );
    assert_eq!(v["params"]["seed"], 42);
    assert_eq!(v["params"]["steps"], 64);
}

#[test]
fn geometry_ricci_on_the_sphere_passes() {
    let out = pathibp(&[
        "run",
        "--scenario",
        "sphere2-gradient",
        "--check",
        "geometry-ricci",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["lhs"]["mean"].as_f64().unwrap() - 1.0).abs() <= 1e-3);
}

#[test]
fn repeated_runs_write_identical_reports() {
    let args = |out: &str, dump: &str| {
        vec![
            "run".to_string(),
            "--scenario".into(),
            "sphere2-gradient".into(),
            "--check".into(),
            "eq9".into(),
            "--paths".into(),
            "100".into(),
            "--steps".into(),
            "128".into(),
            "--out".into(),
            out.into(),
            "--dump-samples".into(),
            dump.into(),
        ]
    };
    let (a, b) = (scratch("a.json"), scratch("b.json"));
    let (da, db) = (scratch("a.csv"), scratch("b.csv"));
    for (out, dump) in [(&a, &da), (&b, &db)] {
        let argv = args(out.to_str().unwrap(), dump.to_str().unwrap());
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        let status = pathibp(&argv).status.code();
        assert!(status == Some(0) || status == Some(1));
    }
    let ra = std::fs::read_to_string(&a).unwrap();
    let rb = std::fs::read_to_string(&b).unwrap();
    assert_eq!(without_wall_ms(&ra), without_wall_ms(&rb));
    let strip = |s: &str| {
        s.lines()
            .filter(|l| !l.contains("\"wall_ms\""))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&ra), strip(&rb));
    let ca = std::fs::read_to_string(&da).unwrap();
    assert_eq!(ca, std::fs::read_to_string(&db).unwrap());
    assert_eq!(ca.lines().next(), Some("index,lhs,rhs,diff"));
    assert_eq!(ca.lines().count(), 101);
}

#[test]
fn eq7_is_not_used_where_the_drift_leaves_the_image() {
    let out = pathibp(&[
        "run",
        "--scenario",
        "torus2-transverse-drift",
        "--check",
        "eq9",
        "--paths",
        "50",
        "--steps",
        "64",
    ]);
    assert!(out.status.code() == Some(0) || out.status.code() == Some(1));
}
