use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn memsfbp(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memsfbp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("MEMSFBP_PARAMS_EPS")
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const SMALL: [&str; 6] = ["--nx", "32", "--nz", "16", "--dt", "1e-3"];

#[test]
fn thresholds_report_includes_zero_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = memsfbp(&["thresholds", "--set", "params.eps_values=[0.1, 0.01, 0.0]"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: serde_json::Value = serde_json::from_str(&read(dir.path(), "thresholds.json")).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[2]["xi0"].is_null());
    assert_eq!(rows[2]["m2"].as_f64().unwrap(), std::f64::consts::PI.powi(4));
    assert!((rows[1]["xi0"].as_f64().unwrap() - 2.0).abs() < 1e-3);
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path(), "manifest.json")).unwrap();
    assert_eq!(manifest["mode"], "thresholds");
    assert_eq!(manifest["config"]["params"]["eps_values"][1], 0.01);
}

#[test]
fn evolve_writes_record_snapshots_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["evolve", "--t-end", "0.02", "--set", "time.record_every=5", "--set", "output.raster=true"];
    args.extend(SMALL);
    let out = memsfbp(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record = read(dir.path(), "record.csv");
    let mut lines = record.lines();
    assert_eq!(lines.next(), Some("t,gap_min,E_alpha,max_g1,max_g2"));
    assert_eq!(lines.count(), 5);
    assert!(dir.path().join("snapshots/snap_00004.csv").exists());
    assert!(read(dir.path(), "raster.csv").starts_with("x,z,value,inside"));
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path(), "summary.json")).unwrap();
    assert_eq!(summary["model"], "full");
    assert_eq!(summary["verdict"], "reached_t_end");
}

#[test]
fn strong_drive_reports_touchdown() {
    let dir = tempfile::tempdir().unwrap();
    let out = memsfbp(
        &["sar", "--lambda", "120", "--mu", "120", "--dt", "1e-5", "--t-end", "0.1", "--nx", "32"],
        dir.path(),
    );
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path(), "summary.json")).unwrap();
    assert_eq!(summary["model"], "sar");
    assert_eq!(summary["verdict"], "touchdown");
    assert!(summary["touchdown_time"].as_f64().unwrap() < 0.01);
}

#[test]
fn branch_and_steady_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = memsfbp(&["branch", "--nx", "64", "--set", "params.model=\"sar\""], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "branch.csv");
    assert!(csv.starts_with("lambda,mu,min_gap,u_mid,v_mid,spectral_bound,fold_flag\n"));
    assert!(csv.lines().skip(1).any(|l| l.ends_with(",1")));
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path(), "branch.json")).unwrap();
    assert!((summary["fold_lambda"].as_f64().unwrap() - 0.175).abs() < 5e-3);

    let dir = tempfile::tempdir().unwrap();
    let out = memsfbp(&["steady", "--lambda", "0.1", "--mu", "0.1", "--nx", "32", "--nz", "16"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s: serde_json::Value = serde_json::from_str(&read(dir.path(), "steady.json")).unwrap();
    assert!(s["spectral_bound"].as_f64().unwrap() < 0.0);
    assert!(read(dir.path(), "steady_state.csv").starts_with("x,u,v\n"));
}

#[test]
fn sweep_separates_existence_from_touchdown() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "sweep",
        "--eps",
        "0.1",
        "--t-end",
        "2",
        "--set",
        "params.lambda_values=[0.1, 0.15, 0.3, 0.6]",
        "--set",
        "time.record_every=1000",
    ];
    args.extend(SMALL);
    let out = memsfbp(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "sweep.csv");
    let verdicts: Vec<(&str, &str)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[2], f[5])
        })
        .collect();
    assert_eq!(verdicts.len(), 4);
    assert_eq!(verdicts[0], ("reached_t_end", "1"));
    assert_eq!(verdicts[1], ("reached_t_end", "1"));
    assert_eq!(verdicts[2].0, "touchdown");
    assert_eq!(verdicts[3], ("touchdown", "0"));
}

#[test]
fn verify_passes_and_convergence_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = memsfbp(&["verify", "--nx", "40", "--nz", "20"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let checks: serde_json::Value = serde_json::from_str(&read(dir.path(), "checks.json")).unwrap();
    let checks = checks.as_array().unwrap();
    assert!(checks.len() > 60);
    assert!(checks.iter().any(|c| c["negative_control"] == true && c["passed"] == false));

    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["convergence", "--t-end", "0.05", "--set", "params.eps_values=[0.2]"];
    args.extend(SMALL);
    let out = memsfbp(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = read(dir.path(), "convergence.csv");
    assert_eq!(table.lines().count(), 2);
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path(), "convergence.json")).unwrap();
    assert!(summary["strictly_decreasing"].is_null());
    assert_eq!(read(dir.path(), "mms.csv").lines().count(), 4);
}

#[test]
fn invalid_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[grid]\nnx = 40\nnzz = 3\n").unwrap();
    let out = memsfbp(&["evolve", "--config", cfg.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nzz") && err.contains("line 3"), "{err}");

    let out = memsfbp(&["evolve", "--set", "time.dt=-1"], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dt"));

    let out = memsfbp(&["convergence", "--set", "params.eps_values=[0.1, 0.2]"], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn environment_overrides_sit_below_flags() {
    let dir = tempfile::tempdir().unwrap();
    let run = |extra: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_memsfbp"))
            .args(["thresholds", "--out"])
            .arg(dir.path())
            .args(extra)
            .env("MEMSFBP_PARAMS_EPS_VALUES", "[0.3]")
            .output()
            .unwrap()
    };
    assert!(run(&[]).status.success());
    assert!(read(dir.path(), "thresholds.json").contains("0.3"));
    assert!(run(&["--set", "params.eps_values=[0.25]"]).status.success());
    let text = read(dir.path(), "thresholds.json");
    assert!(text.contains("0.25") && !text.contains("\"eps\": 0.3"));
}

#[test]
fn bundled_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            memsfbp::ExperimentConfig::load(Some(&path), &[]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
