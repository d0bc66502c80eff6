use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use jumptime_cli::commands::SUBCOMMANDS;
use jumptime_cli::config::{keys_for, ExperimentConfig, RawConfig, KEYS};
use proptest::prelude::*;

fn jumptime(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jumptime")).args(args).output().expect("binary runs")
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn help_matches_golden_files() {
    let top = jumptime(&["--help"]);
    assert_eq!(String::from_utf8(top.stdout).unwrap(), golden("help.txt"));
    for sub in SUBCOMMANDS {
        let out = jumptime(&[sub, "--help"]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        assert_eq!(text, golden(&format!("help_{sub}.txt")), "{sub}");
        for k in keys_for(sub) {
            assert!(text.contains(k.key), "{sub} help lacks {}", k.key);
        }
    }
}

#[test]
fn config_errors_exit_with_status_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "run.t = 1\nrun.bogus = 3\n").unwrap();
    let out = jumptime(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key `run.bogus`"));
    let out = jumptime(&["ibp", "--set", "run.paths=0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.paths"));
    assert_eq!(jumptime(&["decay", "--paths", "10", "--out", dir.path().to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn degenerate_model_exits_with_status_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = jumptime(&[
        "duality",
        "--set",
        "model.name=translation",
        "--set",
        "model.b=0",
        "--paths",
        "50",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failed_check_exits_with_status_4_under_assert() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let args = ["check-model", "--set", "model.name=translation", "--set", "model.b=0", "--out", d];
    assert_eq!(jumptime(&args).status.code(), Some(0));
    let mut with_assert = args.to_vec();
    with_assert.push("--assert");
    assert_eq!(jumptime(&with_assert).status.code(), Some(4));
}

#[test]
fn outputs_carry_fingerprint_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = jumptime(&["coverage", "--paths", "500", "--seed", "9", "--out", d, "--assert"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("result.csv")).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let fp = manifest["config_fingerprint"].as_str().unwrap();
    assert_eq!(csv.lines().next().unwrap(), format!("# config_fingerprint: {fp}"));
    assert_eq!(csv.lines().nth(1).unwrap(), "n,levels,mass,bound,empirical,stderr,pass");
    assert_eq!(manifest["config"]["run.seed"], "9");
    assert_eq!(manifest["config"]["run.paths"], "500");
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    let mut raw = RawConfig::default();
    raw.set("run.paths", "500").unwrap();
    raw.set("run.seed", "9").unwrap();
    assert_eq!(raw.resolve().unwrap().fingerprint(), fp);
}

fn alternative(key: &str) -> &'static str {
    match key {
        "model.name" => "geometric",
        "measure.name" => "mu_lambda",
        "measure.lambda" => "0.75",
        "measure.table" => "",
        "run.truncation" => "12",
        "run.levels" => "2",
        "run.reduction" => "path_order",
        "output.dir" => "elsewhere",
        "ibp.g" => "terminal",
        "ibp.phi" => "sin",
        "theta.n" => "10,20",
        "decay.bounds" => "5:1",
        "density.bandwidths" => "0.2",
        "coverage.grid" => "5:1",
        "density.y_min" => "-3",
        "decay.xi_min" | "decay.xi_max" | "density.y_max" => "150",
        _ => "7",
    }
}

#[test]
fn fingerprint_tracks_every_field() {
    let base = ExperimentConfig::from_text("").unwrap();
    for k in KEYS {
        let mut raw = RawConfig::default();
        raw.set(k.key, alternative(k.key)).unwrap();
        if k.key == "ibp.g" {
            raw.set("run.levels", "1").unwrap();
        }
        let Ok(cfg) = raw.resolve() else {
            panic!("alternative value of {} rejected", k.key);
        };
        let changed = cfg != ExperimentConfig { out: cfg.out.clone(), ..base.clone() };
        let same_fp = cfg.fingerprint() == base.fingerprint();
        if k.key == "output.dir" {
            assert!(same_fp);
        } else if changed {
            assert!(!same_fp, "{} changed but fingerprint did not", k.key);
        } else {
            assert!(same_fp, "{} unchanged but fingerprint moved", k.key);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fingerprint_is_injective_on_numeric_fields(t1 in 0.01f64..10.0, t2 in 0.01f64..10.0, s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = ExperimentConfig::from_text(&format!("run.t = {t1}\nrun.seed = {s1}")).unwrap();
        let b = ExperimentConfig::from_text(&format!("run.t = {t2:e}\nrun.seed = {s2}")).unwrap();
        prop_assert_eq!(a.fingerprint() == b.fingerprint(), t1 == t2 && s1 == s2);
    }
}
