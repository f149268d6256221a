use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn subflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subflow")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path.display().to_string()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .take_while(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn assert_well_formed_svg(path: &Path) -> usize {
    let text = std::fs::read_to_string(path).unwrap();
    let doc = roxmltree::Document::parse(&text).expect("well-formed XML");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let labels: Vec<&str> = doc.descendants().filter_map(|n| n.attribute("id")).collect();
    assert!(labels.contains(&"x-label") && labels.contains(&"y-label"));
    doc.descendants().filter(|n| n.has_tag_name("polyline")).count()
}

#[test]
fn integrate_straight_line() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = subflow(&["integrate", "--out", out]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let (header, rows) = read_csv(&dir.path().join("integrate.csv"));
    assert_eq!(header.join(","), "t,q1,q2,q3,p1,p2,p3,u1,u2,H");
    assert_eq!(rows.len(), 1001);
    for r in &rows {
        assert!(r[1].abs() < 1e-6 && r[3].abs() < 1e-6);
        assert!((r[9] - 0.5).abs() < 1e-12);
    }
}

#[test]
fn integrate_zero_duration_and_heisenberg_circle() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "zero.json", r#"{"duration": 0}"#);
    let res = subflow(&["integrate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(res.status.success());
    assert_eq!(read_csv(&dir.path().join("integrate.csv")).1.len(), 1);

    let cfg = write_config(
        dir.path(),
        "circle.json",
        r#"{"structure": {"kind": "heisenberg"}, "initial": {"q": [0, 0, 0], "p": [0, 1, 1]}, "duration": 6.283185307179586}"#,
    );
    let res = subflow(&["integrate", "--config", &cfg, "--out", dir.path().to_str().unwrap(), "--json"]);
    assert!(res.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    let q = summary["final_q"].as_array().unwrap();
    assert!(q[0].as_f64().unwrap().hypot(q[1].as_f64().unwrap()) < 1e-5);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bad.json", "{\n  \"duration\": 1,\n  \"bogus\": true\n}");
    let res = subflow(&["integrate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("bogus") && err.contains("line 3"), "{err}");

    assert_eq!(subflow(&["integrate", "--method", "leapfrog"]).status.code(), Some(1));
    assert_eq!(subflow(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(subflow(&["integrate", "--config", "/nonexistent/cfg.json"]).status.code(), Some(1));
}

#[test]
fn integration_blowup_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "blowup.json",
        r#"{"structure": {"kind": "magnetic", "A_expr": "x^3"}, "initial": {"q": [1, 0, 0], "p": [1, 0, 1]}, "duration": 50,
            "integrator": {"method": "euler", "step": 0.1}}"#,
    );
    let res = subflow(&["integrate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stderr).contains("blew up at t ="));
}

#[test]
fn spray_default_figure() {
    let dir = TempDir::new().unwrap();
    let res = subflow(&["spray", "--out", dir.path().to_str().unwrap()]);
    assert!(res.status.success());
    let (header, rows) = read_csv(&dir.path().join("spray.csv"));
    assert_eq!(header.join(","), "alpha,t,x,y");
    let mut alphas: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    alphas.dedup();
    assert_eq!(alphas.len(), 9);
    for r in &rows {
        let (alpha, t, x) = (r[0], r[1], r[2]);
        if t <= 0.0 {
            assert!(x.abs() < 1e-6);
        } else if alpha > 0.0 {
            assert!(x <= 0.0);
            if t >= 0.01 {
                assert!(x < 0.0, "alpha {alpha}, t {t}");
            }
        }
    }
    assert_eq!(assert_well_formed_svg(&dir.path().join("spray.svg")), 9);
    let svg = std::fs::read_to_string(dir.path().join("spray.svg")).unwrap();
    assert!(svg.contains("branch point"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for cmd in ["spray", "corank"] {
        assert!(subflow(&[cmd, "--out", a.path().to_str().unwrap()]).status.success());
        assert!(subflow(&[cmd, "--out", b.path().to_str().unwrap()]).status.success());
    }
    for name in ["spray.csv", "spray.svg", "corank.csv"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn corank_reports() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = subflow(&["corank", "--out", out, "--json"]);
    assert!(res.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(summary["coranks"], serde_json::json!([1, 1, 1, 1, 1, 0, 0, 0, 0]));
    let jumps = summary["jumps"].as_array().unwrap();
    assert_eq!(jumps.len(), 1);
    let refined = &jumps[0]["refined"];
    let width = refined["upper"].as_f64().unwrap() - refined["lower"].as_f64().unwrap();
    assert!(width <= 1e-3 && refined["lower"].as_f64().unwrap() >= 1.0);
    let text = std::fs::read_to_string(dir.path().join("corank.csv")).unwrap();
    assert!(text.starts_with("t,corank\n"));
    assert!(text.contains("# summary"));

    let heis = write_config(
        dir.path(),
        "heis.json",
        r#"{"structure": {"kind": "heisenberg"}, "initial": {"q": [0, 0, 0], "p": [0.2, 1, 1]}, "duration": 2}"#,
    );
    let res = subflow(&["corank", "--config", &heis, "--out", out, "--json"]);
    let summary: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    // the only drop is the one off the initial point
    let jumps = summary["jumps"].as_array().unwrap();
    assert_eq!(jumps.len(), 1);
    assert_eq!(jumps[0]["lower"], 0.0);
    assert!(jumps[0]["refined"]["upper"].as_f64().unwrap() <= 1e-3);

    let prod = write_config(
        dir.path(),
        "prod.json",
        r#"{"structure": {"kind": "product", "factors": [{"kind": "glued"}, {"kind": "glued"}]},
            "initial": {"q": [0, -1, 0, 0, -0.5, 0], "p": [0, 1, 0, 0, 1, 0]}, "duration": 1,
            "sample_times": [0, 0.25, 0.75], "corank": {"refine": false}}"#,
    );
    let res = subflow(&["corank", "--config", &prod, "--out", out, "--json"]);
    let summary: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(summary["coranks"][0], 2);
}

#[test]
fn product_examples() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = subflow(&["product", "--out", out]);
    assert!(res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("PASS"), "{stdout}");
    let text = std::fs::read_to_string(dir.path().join("product.csv")).unwrap();
    assert!(text.starts_with("t,corank,expected\n"));

    for (name, f) in [
        ("single.json", r#"{"initial": 1, "jumps": [{"time": 0.5, "drop": 1}], "final": 0}"#),
        ("const.json", r#"{"initial": 1, "final": 1}"#),
    ] {
        let cfg = write_config(dir.path(), name, &format!(r#"{{"corank_function": {f}}}"#));
        let res = subflow(&["product", "--config", &cfg, "--out", out]);
        assert!(res.status.success(), "{name}: {}", String::from_utf8_lossy(&res.stdout));
    }

    let cfg = write_config(dir.path(), "bad.json", r#"{"corank_function": {"initial": 1, "jumps": [{"time": 0.5, "drop": 1}], "final": 1}}"#);
    let res = subflow(&["product", "--config", &cfg, "--out", out]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("infeasible"));

    // sampling right after a jump disagrees with f and must be reported
    let cfg = write_config(
        dir.path(),
        "close.json",
        r#"{"corank_function": {"initial": 1, "jumps": [{"time": 0.5, "drop": 1}], "final": 0}, "sample_times": [0.2, 0.5001]}"#,
    );
    let res = subflow(&["product", "--config", &cfg, "--out", out]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stdout).contains("FAIL"));
}

#[test]
fn magnetic_matches_spray_and_hamiltonian() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path(), "mag.json", r#"{"magnetic": {"charges": [-0.5, -0.25, 0.25, 0.5]}}"#);
    let res = subflow(&["magnetic", "--config", &cfg, "--out", out, "--check-hamiltonian"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let (_, checks) = read_csv(&dir.path().join("magnetic_check.csv"));
    assert_eq!(checks.len(), 4);
    assert!(checks.iter().all(|r| r[1] < 1e-4));
    assert_eq!(assert_well_formed_svg(&dir.path().join("magnetic.svg")), 4);

    let spray_cfg = write_config(dir.path(), "spray.json", r#"{"spray": {"alphas": [-0.5, -0.25, 0.25, 0.5]}}"#);
    let res = subflow(&["spray", "--config", &spray_cfg, "--out", out, "--method", "rk4"]);
    assert!(res.status.success());
    let (_, spray) = read_csv(&dir.path().join("spray.csv"));
    let (_, mag) = read_csv(&dir.path().join("magnetic.csv"));
    let mut worst: f64 = 0.0;
    for charge in [-0.5, -0.25, 0.25, 0.5] {
        let s: Vec<&Vec<f64>> = spray.iter().filter(|r| r[0] == charge).collect();
        let m: Vec<&Vec<f64>> = mag.iter().filter(|r| r[0] == charge).collect();
        assert_eq!(s.len(), m.len());
        for (a, b) in s.iter().zip(&m) {
            worst = worst.max((a[2] - b[2]).hypot(a[3] - b[3]));
        }
    }
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn magnetic_straight_line_and_expression_errors() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path(), "zero.json", r#"{"magnetic": {"field": "theta(y) + 2*x*theta(1-y)", "charges": [0], "x": 0.3, "heading": 0.4}}"#);
    assert!(subflow(&["magnetic", "--config", &cfg, "--out", out]).status.success());
    let (header, rows) = read_csv(&dir.path().join("magnetic.csv"));
    assert_eq!(header.join(","), "charge,t,x,y,heading");
    for r in rows {
        assert!(((r[2] - 0.3) * 0.4f64.sin() - (r[3] + 1.0) * 0.4f64.cos()).abs() < 1e-12);
    }
    let cfg = write_config(dir.path(), "bad.json", r#"{"magnetic": {"field": "theta(y"}}"#);
    let res = subflow(&["magnetic", "--config", &cfg, "--out", out]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("position"));
}

#[test]
fn verify_reports_and_fails_when_tampered() {
    let res = subflow(&["verify", "--criterion", "1", "--criterion", "8"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stdout));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);

    let res = subflow(&["verify", "--criterion", "1", "--tolerance-scale", "0"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stdout).contains("[FAIL]"));

    let res = subflow(&["verify", "--criterion", "5", "--json"]);
    let doc: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(doc["passed"], true);
    assert_eq!(doc["criteria"][0]["id"], 5);
}
