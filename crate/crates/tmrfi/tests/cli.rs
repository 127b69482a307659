use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn tmrfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmrfi")).args(args).env_remove("TMRFI_SEED").env_remove("TMRFI_WORKERS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn config(name: &str) -> String {
    configs().join(name).display().to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SMALL: &str = r#"{
    "seed": 4,
    "layout": { "stages": 12, "geometry": {} },
    "optics": { "thresholds": { "ff": { "power": 0.3, "dose": 40 }, "voter": { "power": 0.5, "dose": 150 } } },
    "scenarios": [
        { "name": "a", "kind": "two_ff", "target_stage": 6, "objective": "20x",
          "durations_ns": [50, 130], "freq_mhz": 10, "input_bit": false, "repetitions": 6 },
        { "name": "b", "kind": "whole_cell", "target_stage": 3, "objective": "5x",
          "durations_ns": [80], "freq_mhz": 50, "input_bit": true, "repetitions": 6 }
    ]
}"#;

#[test]
fn build_reports_cell_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("layout.json");
    let o = tmrfi(&["build", "-c", &config("scenario1.json"), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("1024 stages: 3072 flip-flops, 1024 voters"), "{}", stdout(&o));
    let layout: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(layout["cells"].as_array().unwrap().len(), 4096);

    let one = write(dir.path(), "one.json", r#"{ "layout": { "stages": 1, "geometry": {} } }"#);
    let o = tmrfi(&["build", "-c", &one, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("1 stages: 3 flip-flops, 1 voters"), "{}", stdout(&o));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{ "layout": { "stages": 4 } }"#);
    let o = tmrfi(&["build", "-c", &bad, "--out", dir.path().join("l.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("geometry"), "{}", stderr(&o));

    let o = tmrfi(&["build", "-c", dir.path().join("absent.json").to_str().unwrap(), "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(2));

    let o = tmrfi(&["campaign"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shoot_classifies_single_points() {
    let cfg = config("scenario2_10mhz.json");
    let o = tmrfi(&["shoot", "-c", &cfg, "--power", "0", "--duration", "130"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("class: NoInjection"), "{}", stdout(&o));

    let o = tmrfi(&["shoot", "-c", &cfg, "--scenario", "two_ff_10mhz_20x_in0", "--power", "40", "--duration", "130"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("thresholds (calibrated)"), "{text}");
    assert!(text.contains("class: TransientBitSet"), "{text}");
    assert!(text.contains("repeatability: 1.00"), "{text}");

    let o = tmrfi(&["shoot", "-c", &cfg, "--power", "100", "--duration", "280", "--x", "-500", "--y", "-500"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("induced faults: 0"), "{}", stdout(&o));
    assert!(stdout(&o).contains("class: NoInjection"), "{}", stdout(&o));

    let o = tmrfi(&["shoot", "-c", &cfg, "--power", "120", "--duration", "130"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn shoot_writes_csv_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let csv = dir.path().join("shot.csv");
    let trace = dir.path().join("trace.csv");
    let o = tmrfi(&[
        "shoot", "-c", &cfg, "--power", "100", "--duration", "130", "--phase", "20",
        "--csv", csv.to_str().unwrap(), "--trace", trace.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 2);
    assert!(rows.lines().nth(1).unwrap().contains(",TransientBitSet,"), "{rows}");
    let trace = std::fs::read_to_string(&trace).unwrap();
    assert!(trace.starts_with("edge_index,time_ns,bit\n0,20,0\n"), "{trace}");
    assert!(trace.lines().any(|l| l.ends_with(",1")));
}

#[test]
fn campaign_output_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let mut outputs = Vec::new();
    for workers in ["1", "8"] {
        let out = dir.path().join(format!("w{workers}"));
        let o = tmrfi(&["campaign", "-c", &cfg, "--workers", workers, "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("63 shots over 2 scenarios"), "{}", stdout(&o));
        let files: Vec<Vec<u8>> = ["run_shots.csv", "run_summary.json", "run_table.md", "run_config.json"]
            .iter()
            .map(|f| std::fs::read(out.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
    let table = String::from_utf8(outputs[0][2].clone()).unwrap();
    assert!(table.starts_with("| Clock, MHz |"), "{table}");
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn seed_override_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let run = |seed: &str| {
        let out = dir.path().join(format!("s{seed}"));
        let o = tmrfi(&["campaign", "-c", &cfg, "--seed", seed, "--workers", "1", "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read_to_string(out.join("run_shots.csv")).unwrap()
    };
    assert_eq!(run("4"), run("4"));
    assert_ne!(run("4"), run("5"));
}

#[test]
fn calibrate_round_trips_through_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let fit = dir.path().join("fit.json");
    let o = tmrfi(&["calibrate", "-c", &config("calibration_targets_table1.json"), "--out", fit.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&fit).unwrap()).unwrap();
    let residuals = report["residuals"].as_array().unwrap();
    assert_eq!(residuals.len(), 8);
    assert!(residuals.iter().all(|r| r["residual_pct"].as_f64().unwrap().abs() <= 5.0));

    let out = dir.path().join("camp");
    let o = tmrfi(&[
        "campaign", "-c", &config("scenario2_10mhz.json"), "--thresholds", fit.to_str().unwrap(),
        "--out-dir", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("thresholds (given)"));
    let table = std::fs::read_to_string(out.join("scenario2_10mhz_table.md")).unwrap();
    assert!(table.contains("| 10 | '0' | 40-100 | 130-280 | 20x | bit-set | yes |"), "{table}");
}

#[test]
fn infeasible_calibration_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.json",
        r#"{
        "layout": { "stages": 8, "geometry": {} },
        "optics": { "calibration": { "repetitions": 2, "targets": [
            { "freq_mhz": 10, "objective": "20x", "duration_ns": 130, "input_bit": false, "min_power_pct": 40 },
            { "freq_mhz": 10, "objective": "20x", "duration_ns": 130, "input_bit": false, "min_power_pct": 70 }
        ] } }
    }"#,
    );
    let o = tmrfi(&["calibrate", "-c", &cfg, "--out", dir.path().join("fit.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stdout(&o).contains("best fit"), "{}", stdout(&o));
    assert!(stderr(&o).contains("calibration infeasible"), "{}", stderr(&o));
    assert!(!dir.path().join("fit.json").exists());
}
