use std::path::Path;
use std::process::{Command, Output};

fn epgi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epgi")).args(args).output().expect("spawn epgi")
}

fn short_config(dir: &Path) -> String {
    let path = dir.join("short.toml");
    std::fs::write(&path, "[source]\nrun_duration_s = 0.01\n").unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn simulate_then_match_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    for stage in ["simulate", "g2", "match"] {
        let o = epgi(&["--preset", "cat-run", "--config", &cfg, "--out-dir", out_s, stage]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), out_s);
    }
    assert!(out.join("pairs.epgp").is_file());
    assert!(out.join("manifest.toml").is_file());
}

#[test]
fn seed_flag_reaches_the_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out = dir.path().join("run");
    let o = epgi(&["--config", &cfg, "--seed", "77", "--out-dir", out.to_str().unwrap(), "simulate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("simulate.toml")).unwrap();
    assert!(summary.contains("seed = 77"), "{summary}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[source]\nrun_duraton_s = 1.0\n").unwrap();
    let o = epgi(&["--config", path.to_str().unwrap(), "simulate"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("epgi: "));
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = epgi(&["--out-dir", dir.path().join("empty").to_str().unwrap(), "reconstruct"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_subcommand_is_rejected() {
    let o = epgi(&["frobnicate"]);
    assert!(!o.status.success());
}
