//! End-to-end runs of the compiled binary against a throwaway run directory:
//! artifact lifecycle, determinism, seed override precedence, and the
//! error-JSON contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_munchlab"))
}

/// Small but complete run: every split non-empty, transcripts on, a few
/// seconds of training.
fn write_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "paths": {
            "dataset": dir.join("dataset.json"),
            "checkpoints": dir.join("checkpoints"),
            "reports": dir.join("reports"),
            "manifest": dir.join("manifest.json"),
        },
        "gen": { "seed": 3, "n_entities": 40, "n_facts": 100, "n_chains": 30,
                 "forget_fraction": 0.1 },
        "arch": { "embed_dim": 32, "ffn_dim": 64, "n_layers": 2, "context_len": 64 },
        "corpus": { "aux_paths": [[2, 60], [3, 40]], "with_transcripts": true, "seed": 1 },
        "train": { "epochs": 6, "lr": 2e-3, "seed": 9 },
        "unlearn": { "train": { "epochs": 2, "batch_size": 4, "lr": 3e-3, "seed": 5 },
                     "early_stop": null },
        "sweep_fractions": [0.1, 0.2],
        "seeds": [0]
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().expect("no stderr")).expect("stderr not JSON")
}

#[test]
fn lifecycle_produces_all_artifacts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let cfg = config.to_str().unwrap();

    run_ok(&["gen-data", "--config", cfg]);
    run_ok(&["train", "--config", cfg]);
    run_ok(&["unlearn", "--config", cfg, "--method", "ga", "--retain"]);

    // The threshold precondition is checked before anything heavy runs.
    let out = bin().args(["eval", "--config", cfg, "--pipeline", "munch"]).output().unwrap();
    assert!(!out.status.success());
    let err = stderr_json(&out);
    assert_eq!(err["code"], "experiment.missing_tau");
    assert!(
        err["message"].as_str().unwrap().contains("calibration.json"),
        "missing artifact not named: {err}"
    );

    run_ok(&["calibrate", "--config", cfg]);
    let traces = run_ok(&["run-munch", "--config", cfg]);
    let traces_path = String::from_utf8(traces.stdout).unwrap();
    let traces_text = fs::read_to_string(traces_path.trim()).unwrap();
    assert!(traces_text.lines().count() > 0);
    for line in traces_text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["question_id"].is_string());
    }

    let eval = run_ok(&["eval", "--config", cfg, "--pipeline", "munch"]);
    let tsv_path = String::from_utf8(eval.stdout).unwrap();
    let tsv = fs::read_to_string(tsv_path.trim()).unwrap();
    assert_eq!(tsv.lines().count(), 5, "header plus four cells:\n{tsv}");
    assert!(tsv.starts_with("method\tsplit\thops\tpa\trouge_l\tlm\n"));
    assert!(tsv.contains("ga+rt\tforget\tsingle\t"));

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    let artifacts = manifest["artifacts"].as_object().unwrap();
    for needle in ["dataset.json", "original.json", "original.bin", "unlearned-ga+rt.json",
                   "calibration.json", "traces-munch.jsonl", "report-ga+rt-munch.tsv"] {
        assert!(
            artifacts.keys().any(|k| k.contains(needle)),
            "{needle} missing from manifest: {artifacts:?}"
        );
        let hash = artifacts.iter().find(|(k, _)| k.contains(needle)).unwrap().1;
        assert_eq!(hash.as_str().unwrap().len(), 64);
    }
}

#[test]
fn gen_data_is_byte_deterministic_and_env_seed_wins() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let cfg = config.to_str().unwrap();
    let out_a = dir.path().join("a.json");
    let out_b = dir.path().join("b.json");

    run_ok(&["gen-data", "--config", cfg, "--out", out_a.to_str().unwrap()]);
    run_ok(&["gen-data", "--config", cfg, "--out", out_b.to_str().unwrap()]);
    assert_eq!(fs::read(&out_a).unwrap(), fs::read(&out_b).unwrap());

    // A --seed flag changes the dataset; MUNCHLAB_SEED beats the flag.
    let out_c = dir.path().join("c.json");
    let out_d = dir.path().join("d.json");
    run_ok(&["gen-data", "--config", cfg, "--seed", "77", "--out", out_c.to_str().unwrap()]);
    assert_ne!(fs::read(&out_a).unwrap(), fs::read(&out_c).unwrap());
    let out = bin()
        .args(["gen-data", "--config", cfg, "--seed", "1234", "--out", out_d.to_str().unwrap()])
        .env("MUNCHLAB_SEED", "77")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(&out_c).unwrap(), fs::read(&out_d).unwrap());

    let bad = bin()
        .args(["gen-data", "--config", cfg])
        .env("MUNCHLAB_SEED", "not-a-number")
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert_eq!(stderr_json(&bad)["code"], "experiment.config");
}

#[test]
fn usage_errors_are_machine_readable() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["code"], "cli.usage");

    let out = bin().args(["unlearn", "--method", "sgd"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["code"], "cli.usage");

    // Config invariant violations carry the experiment code.
    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = dir.path().join("bad.json");
    fs::write(&bad_cfg, r#"{"sweep_fractions": [1.5]}"#).unwrap();
    let out = bin().args(["gen-data", "--config", bad_cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["code"], "experiment.config");
    assert!(err["message"].as_str().unwrap().contains("1.5"));

    let out = bin().args(["train", "--config", "/nonexistent/c.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["code"], "experiment.config");
}

#[test]
fn help_prints_to_stdout_and_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("gen-data"));
    assert!(out.stderr.is_empty());
}
