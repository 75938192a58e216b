//! Exit codes, argument errors and output files of the command-line tool.

use std::path::Path;
use std::process::{Command, Output};

fn spikeforest(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikeforest"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("SPIKEFOREST_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&spikeforest(dir.path(), &["--help"])), 0);
    assert_eq!(code(&spikeforest(dir.path(), &["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["no-such-command"][..], &["data", "--n", "many"], &["partition", "count", "--n", "3"]] {
        let o = spikeforest(dir.path(), args);
        assert_eq!(code(&o), 1, "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let o = spikeforest(dir.path(), &["sample", "--data", missing.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = spikeforest(dir.path(), &["data", "--regime", "3"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn data_then_kd_partition() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&spikeforest(dir.path(), &["--seed", "5", "data", "--n", "64", "--p", "3"])), 0);
    let data = dir.path().join("data.csv");
    assert!(dir.path().join("truth.json").exists());
    let o = spikeforest(dir.path(), &["partition", "kd", "--data", data.to_str().unwrap(), "--axes", "1,3", "--rounds", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("partition.json")).unwrap()).unwrap();
    assert!(report.is_object());
    // axis 0 does not exist in the 1-based convention
    let o = spikeforest(dir.path(), &["partition", "kd", "--data", data.to_str().unwrap(), "--axes", "0", "--rounds", "1"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn failed_checks_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("strict.toml");
    // a zero ceiling on the tail mass cannot be met
    std::fs::write(
        &config,
        "[experiment]\nscenario = \"overfit-probe\"\nn_grid = [60, 120]\nreplications = 1\nchains = 1\npreflight = false\nceiling = 0.0\n\n[experiment.chain]\niterations = 500\n",
    )
    .unwrap();
    let o = spikeforest(dir.path(), &["--config", config.to_str().unwrap(), "experiment"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("overfit-probe.csv").exists());
}

#[test]
fn thread_variable_overrides_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let run = |env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_spikeforest"));
        c.arg("--out").arg(dir.path()).args(["--threads", "2", "partition", "count", "--n", "5", "--q", "1", "--k", "2"]);
        match env {
            Some(v) => c.env("SPIKEFOREST_THREADS", v),
            None => c.env_remove("SPIKEFOREST_THREADS"),
        };
        c.output().unwrap()
    };
    let base = run(None);
    assert_eq!(code(&base), 0);
    let one = run(Some("1"));
    assert_eq!(code(&one), 0);
    assert_eq!(base.stdout, one.stdout);
    // the variable wins, so an invalid value fails even with a valid flag
    assert_eq!(code(&run(Some("lots"))), 1);
}
