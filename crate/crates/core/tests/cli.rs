use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn exe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_selguide"))
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("selguide-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn bench_writes_table_and_fit() {
    let dir = scratch("bench");
    let out = exe()
        .args(["bench", "--config"])
        .arg(example("table1.cfg"))
        .arg("--out")
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));

    let mut reader = csv::Reader::from_path(dir.join("run/bench.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "saving"));
    assert!(!headers.iter().any(|h| h == "wall_time"));
    assert_eq!(reader.records().count(), 5);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("run/summary.json")).unwrap()).unwrap();
    let u = summary["fitted_u"].as_f64().unwrap();
    // measured savings follow the cost model exactly, so the fit recovers its u
    let cost_u = 2.0 * 0.0811 / (2.0 * 0.0811 + 0.0366);
    assert!((u - cost_u).abs() < 1e-9, "fitted_u {u}");
    assert!(dir.join("run/config.echo").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn sample_rerun_is_byte_identical() {
    let dir = scratch("sample");
    for rep in ["a", "b"] {
        let out = exe()
            .args(["sample", "--skip-last", "0.2", "--seed", "7", "--seeds", "8", "--out"])
            .arg(dir.join(rep))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for name in ["endpoints.csv", "summary.json", "config.echo"] {
        let a = std::fs::read(dir.join("a").join(name)).unwrap();
        let b = std::fs::read(dir.join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn missing_num_steps_is_a_config_error() {
    let dir = scratch("missing");
    let cfg = dir.join("c.cfg");
    std::fs::write(&cfg, "[guidance]\nscale = 7.5\n").unwrap();
    let out = exe().args(["validate-config", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("schedule.num_steps"), "{}", stderr(&out));

    // --steps supplies the value
    let out = exe()
        .args(["validate-config", "--steps", "20", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn malformed_or_unknown_config_is_rejected() {
    let dir = scratch("malformed");
    let bad = dir.join("bad.cfg");
    std::fs::write(&bad, "[schedule\nnum_steps = 50\n").unwrap();
    let out = exe().args(["validate-config", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let unknown = dir.join("unknown.cfg");
    std::fs::write(&unknown, "[schedule]\nnum_steps = 50\nnum_stepz = 3\n").unwrap();
    let out = exe().args(["validate-config", "--config"]).arg(&unknown).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let invalid = dir.join("invalid.cfg");
    std::fs::write(&invalid, "[schedule]\nnum_steps = 50\n[guidance]\nskip_start_frac = 0.9\nskip_end_frac = 0.2\n").unwrap();
    let out = exe().args(["validate-config", "--config"]).arg(&invalid).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn bad_flag_value_is_a_config_error() {
    let out = exe().args(["sample", "--skip-last", "1.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = scratch("unwritable");
    let blocker = dir.join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = exe()
        .args(["sample", "--seeds", "2", "--out"])
        .arg(blocker.join("sub"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn validate_config_prints_echo_only() {
    let dir = scratch("validate");
    let out = exe()
        .args(["validate-config", "--config"])
        .arg(example("sweep.cfg"))
        .current_dir(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("num_steps"));
    assert_eq!(std::fs::read_dir(&dir).unwrap().count(), 0);
    let _ = std::fs::remove_dir_all(&dir);
}
