use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[pipeline]
spsa_max_iter = 3
spsa_min_iter = 0
gain_replicates = 2
gmm_k = 4

[scenario]
grid_size = 6
zone_centers = [[1, 1], [1, 4], [4, 1], [4, 4]]
hourly_demand = [10.0, 120.0, 60.0, 120.0, 50.0, 10.0]
"#;

fn mesocal(out: &Path, config: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mesocal"));
    cmd.arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Generates the small scenario into `dir` and returns the config it wrote.
fn scenario(dir: &Path) -> PathBuf {
    let seed_cfg = dir.join("seed.toml");
    fs::write(&seed_cfg, SMALL).unwrap();
    let o = mesocal(dir, Some(&seed_cfg), &["generate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("config.toml")
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn template_is_printed() {
    let dir = tempfile::tempdir().unwrap();
    let o = mesocal(dir.path(), None, &["template"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("[pipeline]") && text.contains("penetration = 0.075"));
}

#[test]
fn report_before_flow_is_missing_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path());
    for stage in ["ingest", "cluster"] {
        assert_eq!(code(&mesocal(dir.path(), Some(&cfg), &[stage])), 0);
    }
    let o = mesocal(dir.path(), Some(&cfg), &["report"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("flow/flow_report.json"), "{}", stderr(&o));
    assert!(stderr(&o).contains("estimate-flow"), "{}", stderr(&o));
}

#[test]
fn missing_input_is_missing_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let o = mesocal(dir.path(), None, &["ingest"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn zero_penetration_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[pipeline]\npenetration = 0.0\n").unwrap();
    let o = mesocal(dir.path(), Some(&cfg), &["ingest"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = mesocal(dir.path(), Some(&cfg), &["run"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn malformed_config_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[pipeline]\npenetration = \"high\"\n").unwrap();
    assert_eq!(code(&mesocal(dir.path(), Some(&cfg), &["ingest"])), 3);
}

#[test]
fn full_run_reports_three_methods_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let cfg = scenario(dir);
        let o = mesocal(dir, Some(&cfg), &["run"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let o = mesocal(dir, Some(&cfg), &["simulate"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }

    let report: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("report/report.json")).unwrap()).unwrap();
    let rows = report["comparison"].as_array().unwrap();
    let methods: Vec<&str> = rows.iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(
        methods,
        [
            "flow_estimation_calibrated",
            "baseline_2_upsample_calibrated",
            "baseline_1_upsample_max_capacity"
        ]
    );
    let breakdown = fs::read_to_string(a.path().join("report/tod_breakdown.csv")).unwrap();
    assert_eq!(breakdown.lines().count(), 5);
    for label in ["AM peak", "Midday", "PM peak", "PM late"] {
        assert!(breakdown.contains(label));
    }

    let fa = files(a.path());
    assert_eq!(fa, files(b.path()));
    let volatile = [Path::new("manifest.json"), Path::new("report/timings.json")];
    let mut compared = 0;
    for f in &fa {
        if volatile.contains(&f.as_path()) || f.starts_with("inputs") && f.ends_with("seed.toml") {
            continue;
        }
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{} differs",
            f.display()
        );
        compared += 1;
    }
    assert!(compared > 20);
}

#[test]
fn rerun_upstream_with_new_settings_blocks_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path());
    assert_eq!(code(&mesocal(dir.path(), Some(&cfg), &["run"])), 0);
    assert_eq!(code(&mesocal(dir.path(), Some(&cfg), &["report"])), 0);

    let o = mesocal(dir.path(), Some(&cfg), &["--seed", "99", "estimate-flow"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = mesocal(dir.path(), Some(&cfg), &["report"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("mixed provenance"), "{}", stderr(&o));

    for stage in ["estimate-flow", "calibrate", "baseline", "report"] {
        let o = mesocal(dir.path(), Some(&cfg), &[stage]);
        assert_eq!(code(&o), 0, "{stage}: {}", stderr(&o));
    }
}
