mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::scenario_path;
use scynet::cli::{BLOCK_LOG, CONVERGENCE, EVENT_LOG, OUT_ENV, REPORT, SCENARIO_COPY, SETTLEMENTS};
use scynet::state::{read_block_log, write_block};
use scynet::types::Hash256;

fn sim() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_scynet-sim"));
    cmd.env_remove(OUT_ENV);
    cmd
}

fn run_into(dir: &Path, scenario: &str, extra: &[&str]) -> Output {
    sim().arg("run").arg(scenario_path(scenario)).arg("--out").arg(dir).args(extra).output().unwrap()
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

#[test]
fn run_writes_every_output_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_into(tmp.path(), "realtime_basic.toml", &["--tournaments", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    for f in [BLOCK_LOG, EVENT_LOG, REPORT, SETTLEMENTS, CONVERGENCE, SCENARIO_COPY] {
        assert!(tmp.path().join(f).is_file(), "{f} missing");
    }
    let out = sim()
        .arg("verify-replay")
        .arg(tmp.path().join(BLOCK_LOG))
        .arg(tmp.path().join(SCENARIO_COPY))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
}

#[test]
fn seed_flag_changes_the_chain() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_into(a.path(), "realtime_basic.toml", &["--tournaments", "1", "--seed", "7"]).status.success());
    assert!(run_into(b.path(), "realtime_basic.toml", &["--tournaments", "1", "--seed", "8"]).status.success());
    assert_ne!(fs::read(a.path().join(BLOCK_LOG)).unwrap(), fs::read(b.path().join(BLOCK_LOG)).unwrap());
}

#[test]
fn output_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("from-env");
    let out = sim()
        .env(OUT_ENV, &dir)
        .arg("run")
        .arg(scenario_path("dataset_basic.toml"))
        .args(["--tournaments", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    assert!(dir.join(REPORT).is_file());
}

#[test]
fn malformed_scenarios_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("syntax.toml", "schemaVersion = 1\nname = \n".to_string()),
        (
            "unknown-field.toml",
            fs::read_to_string(scenario_path("realtime_basic.toml"))
                .unwrap()
                .replace("[simulation]", "[simulation]\nwarp = 9"),
        ),
        (
            "bad-version.toml",
            fs::read_to_string(scenario_path("realtime_basic.toml"))
                .unwrap()
                .replace("schemaVersion = 1", "schemaVersion = 99"),
        ),
    ];
    for (file, body) in cases {
        let path = tmp.path().join(file);
        fs::write(&path, body).unwrap();
        let out = sim().arg("run").arg(&path).arg("--out").arg(tmp.path().join("out")).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{file}: {}", text(&out));
    }
    let out = sim().arg("run").arg(scenario_path("realtime_basic.toml")).arg("--seed").arg("x").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn truncated_block_log_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_into(tmp.path(), "realtime_basic.toml", &["--tournaments", "1"]).status.success());
    let log = tmp.path().join(BLOCK_LOG);
    let bytes = fs::read(&log).unwrap();
    fs::write(&log, &bytes[..bytes.len() - 3]).unwrap();
    let out = sim().arg("verify-replay").arg(&log).arg(tmp.path().join(SCENARIO_COPY)).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
}

#[test]
fn tampered_block_log_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_into(tmp.path(), "realtime_basic.toml", &["--tournaments", "1"]).status.success());
    let log = tmp.path().join(BLOCK_LOG);
    let mut blocks = read_block_log(&mut fs::File::open(&log).unwrap()).unwrap();
    let mid = blocks.len() / 2;
    blocks[mid].header.state_root = Hash256::digest(b"forged");
    let mut bytes = Vec::new();
    for b in &blocks {
        write_block(&mut bytes, b).unwrap();
    }
    fs::write(&log, bytes).unwrap();
    let out = sim().arg("verify-replay").arg(&log).arg(tmp.path().join(SCENARIO_COPY)).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", text(&out));
    assert!(text(&out).contains(&format!("height {}", mid + 1)), "{}", text(&out));
}

#[test]
fn replay_against_a_different_genesis_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_into(tmp.path(), "realtime_basic.toml", &["--tournaments", "1"]).status.success());
    let out = sim()
        .arg("verify-replay")
        .arg(tmp.path().join(BLOCK_LOG))
        .arg(scenario_path("dataset_basic.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", text(&out));
}

#[test]
fn report_formats() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_into(tmp.path(), "signal_copier.toml", &["--tournaments", "2"]).status.success());

    let out = sim().arg("report").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("node,roles,adversary"));
    let copier = csv.lines().find(|l| l.starts_with("copier,")).expect("copier row");
    assert!(copier.contains("signal-copier"));

    let out = sim().arg("report").arg(tmp.path()).args(["--format", "events"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let events = String::from_utf8(out.stdout).unwrap();
    assert!(events.contains("copy-detected"));
    assert_eq!(events.lines().count(), fs::read_to_string(tmp.path().join(EVENT_LOG)).unwrap().lines().count());

    fs::write(tmp.path().join(REPORT), "{ not json").unwrap();
    let out = sim().arg("report").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
