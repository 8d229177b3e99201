use std::path::Path;
use std::process::{Command, Output};

use minctl::harness::ScenarioConfig;

fn minctl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minctl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, n: usize) -> String {
    let mut cfg = ScenarioConfig::headline(n);
    cfg.output_dir = Some(dir.join("out"));
    let path = dir.join("scenario.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path.display().to_string()
}

#[test]
fn mintime_reports_headline_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 100);
    let out = minctl(&["mintime", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"Tmin\": 1.5"), "{stdout}");
}

#[test]
fn settling_below_tmin_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::headline(100);
    cfg.horizon = 1.2;
    cfg.output_dir = Some(dir.path().join("out"));
    let path = dir.path().join("short.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let out = minctl(&["verify-settling", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn titchmarsh_easy_direction() {
    let dir = tempfile::tempdir().unwrap();
    let out = minctl(
        &["titchmarsh", "--prefix-a", "0.6", "--prefix-b", "0.5", "--tau", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("vanishes"));
}

#[test]
fn bad_input_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"schema_version\": 1, \"surprise\": true}").unwrap();
    assert_eq!(
        minctl(&["mintime", path.to_str().unwrap()], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(minctl(&["no-such-command"], dir.path()).status.code(), Some(2));
    assert_eq!(minctl(&["mintime", "missing.json"], dir.path()).status.code(), Some(2));
}

#[test]
fn kernels_command_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 50);
    let out = minctl(&["--sequential", "kernels", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("out").join(ScenarioConfig::headline(50).id);
    for f in ["kernels.csv", "g.csv", "f1.csv", "f2.csv", "report.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
}

#[test]
fn bundled_scenario_is_the_headline() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/headline.json");
    assert_eq!(ScenarioConfig::load(&path).unwrap(), ScenarioConfig::headline(400));
}
