//! Drive the installed binary end to end: generate, optimize, report, and
//! the documented exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trajmap"))
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let path = std::env::temp_dir().join(format!(
            "trajmap-cli-{tag}-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        fs::create_dir_all(&path).unwrap();
        Self(path)
    }

    fn path(&self) -> &Path {
        &self.0
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

#[test]
fn generate_optimize_report_round_trip() {
    let root = TempDir::new("roundtrip");
    let out = root.path().join("scenario");

    let generate = binary()
        .args(["generate", "--scenario", "force-field", "--seed", "4"])
        .args(["--count", "40", "--alpha", "0.5"])
        .arg("--output")
        .arg(&out)
        .output()
        .unwrap();
    assert!(generate.status.success(), "{generate:?}");
    assert!(out.join("config.json").exists());
    assert_eq!(fs::read_dir(out.join("references")).unwrap().count(), 40);

    let optimize = binary()
        .arg("optimize")
        .arg("--config")
        .arg(out.join("config.json"))
        .output()
        .unwrap();
    assert!(optimize.status.success(), "{optimize:?}");
    let summary_path = out.join("run").join("summary.json");
    assert!(summary_path.exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&summary_path).unwrap()).unwrap();
    assert_eq!(summary["accepted_count"], 40);
    assert_eq!(summary["admissibility"]["admissible"], true);

    let report = binary()
        .arg("report")
        .arg("--summary")
        .arg(&summary_path)
        .output()
        .unwrap();
    assert!(report.status.success());
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.contains("percent [%]"), "report output: {text}");
}

#[test]
fn repeated_optimize_runs_are_byte_identical() {
    let root = TempDir::new("determinism");
    let out = root.path().join("scenario");
    let generate = binary()
        .args(["generate", "--scenario", "force-field", "--seed", "21"])
        .args(["--count", "30"])
        .arg("--output")
        .arg(&out)
        .output()
        .unwrap();
    assert!(generate.status.success());

    let run = || {
        let status = binary()
            .arg("optimize")
            .arg("--config")
            .arg(out.join("config.json"))
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(out.join("run").join("summary.json")).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn missing_config_exits_with_two() {
    let status = binary()
        .args(["optimize", "--config", "/definitely/not/here.json"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn missing_data_dir_exits_with_three() {
    let root = TempDir::new("missing-data");
    let out = root.path().join("scenario");
    let generate = binary()
        .args(["generate", "--scenario", "force-field", "--seed", "2"])
        .args(["--count", "12"])
        .arg("--output")
        .arg(&out)
        .output()
        .unwrap();
    assert!(generate.status.success());
    let config_path = out.join("config.json");
    let mut config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&config_path).unwrap()).unwrap();
    config["data_dir"] = serde_json::json!(root.path().join("nowhere"));
    fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let status = binary()
        .arg("optimize")
        .arg("--config")
        .arg(&config_path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn impossible_constraint_exits_with_four() {
    let root = TempDir::new("no-admissible");
    let out = root.path().join("scenario");
    let generate = binary()
        .args(["generate", "--scenario", "force-field", "--seed", "8"])
        .args(["--count", "12"])
        .arg("--output")
        .arg(&out)
        .output()
        .unwrap();
    assert!(generate.status.success());
    let config_path = out.join("config.json");
    let mut config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&config_path).unwrap()).unwrap();
    config["constraints"]
        .as_array_mut()
        .unwrap()
        .push(serde_json::json!({
            "type": "upper-bound",
            "variable": "x1",
            "max": -5.0,
        }));
    fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let output = binary()
        .arg("optimize")
        .arg("--config")
        .arg(&config_path)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("tune_nu"), "stderr: {stderr}");
}

#[test]
fn project_writes_coefficients() {
    let root = TempDir::new("project");
    let out = root.path().join("scenario");
    let generate = binary()
        .args(["generate", "--scenario", "force-field", "--seed", "6"])
        .args(["--count", "5"])
        .arg("--output")
        .arg(&out)
        .output()
        .unwrap();
    assert!(generate.status.success());
    let coeffs = root.path().join("coefficients.csv");
    let status = binary()
        .arg("project")
        .arg("--input")
        .arg(out.join("references").join("reference_0000.csv"))
        .args(["--dims", "4,6"])
        .arg("--output")
        .arg(&coeffs)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(&coeffs).unwrap();
    assert!(text.starts_with("variable,index,coefficient"));
    // 4 + 6 coefficients plus the header
    assert_eq!(text.lines().count(), 11);
}

#[test]
fn fit_cost_recovers_a_planted_quadratic() {
    let root = TempDir::new("fit");
    let data = root.path().join("data");
    fs::create_dir_all(&data).unwrap();
    // two files sampling f(x) = 2 + x + 3 x^2 along different ramps
    for (name, slope) in [("a.csv", 1.0_f64), ("b.csv", -0.7)] {
        let mut text = String::from("time,x,f\n");
        for i in 0..40 {
            let t = i as f64 / 39.0;
            let x = slope * t + 0.1 * (i % 5) as f64;
            let f = 2.0 + x + 3.0 * x * x;
            text.push_str(&format!("{t},{x},{f}\n"));
        }
        fs::write(data.join(name), text).unwrap();
    }
    let output = binary()
        .arg("fit-cost")
        .arg("--data-dir")
        .arg(&data)
        .args(["--variables", "x", "--cost-column", "f"])
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    let document: serde_json::Value =
        serde_json::from_slice(&output.stdout).unwrap();
    let quadratic = document["cost"]["quadratic"][0][0].as_f64().unwrap();
    let linear = document["cost"]["linear"][0].as_f64().unwrap();
    let constant = document["cost"]["constant"].as_f64().unwrap();
    assert!((quadratic - 3.0).abs() < 1e-8);
    assert!((linear - 1.0).abs() < 1e-8);
    assert!((constant - 2.0).abs() < 1e-8);
}
