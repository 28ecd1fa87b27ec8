use std::path::Path;
use std::process::{Command, Output};

use edgelab::bench::{ExperimentConfig, MethodSpec};
use edgelab::train::{mpo_joint_loss, MpoWeights, PrefSample};
use serde_json::Value;

fn edgelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgelab")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = edgelab(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a failing command and returns its exit code and parsed error object.
fn err(args: &[&str]) -> (i32, Value) {
    let out = edgelab(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let e: Value = serde_json::from_slice(&out.stderr).expect("error JSON on stderr");
    (out.status.code().unwrap(), e["error"].clone())
}

/// A trimmed built-in config written to `dir/name.json`.
fn small_config(dir: &Path, command: &str, edit: impl FnOnce(&mut ExperimentConfig)) -> String {
    let mut cfg = ExperimentConfig::default_for(command).unwrap();
    cfg.trials = 2;
    edit(&mut cfg);
    let path = dir.join(format!("{command}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.display().to_string()
}

#[test]
fn gen_is_seeded() {
    let a = ok(&["gen", "--seed", "7"]);
    assert_eq!(a, ok(&["gen", "--seed", "7"]));
    assert_ne!(a, ok(&["gen", "--seed", "8"]));
    let lines: Vec<Value> = a.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 10);
    assert!(lines.iter().all(|l| l["prompt"].is_array() && l["answer"].is_array()));
}

#[test]
fn evict_writes_a_report_that_rechecks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("evict");
    let cfg = small_config(dir.path(), "evict", |c| {
        c.task = edgelab::bench::TaskSpec::Needle { context_len: 96, needle_pos: None }
    });
    let printed = ok(&["evict", "--config", &cfg, "--out", out.to_str().unwrap()]);
    for f in ["report.json", "trials.jsonl", "summary.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let summary: Value = serde_json::from_str(&printed).unwrap();
    assert_eq!(summary["command"], "evict");
    assert_eq!(ok(&["report", out.to_str().unwrap()]), printed);

    let csv = ok(&["report", out.join("report.json").to_str().unwrap(), "--format", "csv"]);
    assert_eq!(csv, std::fs::read_to_string(out.join("summary.csv")).unwrap());
    assert!(csv.starts_with("schema_version,group,metric,count,mean,min,max\n"));

    // Identical inputs give byte-identical trials and summaries.
    let again = dir.path().join("again");
    ok(&["evict", "--config", &cfg, "--out", again.to_str().unwrap()]);
    for f in ["trials.jsonl", "summary.csv"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap());
    }

    // A tampered aggregate is a contract violation.
    let mut report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    report["aggregates"][0]["mean"] = Value::from(-1.0);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, report.to_string()).unwrap();
    let (code, e) = err(&["report", bad.to_str().unwrap()]);
    assert_eq!((code, e["kind"].as_str().unwrap()), (2, "contract_violation"));
}

#[test]
fn spec_trace_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "spec", |c| {
        if let MethodSpec::Spec { k, max_new, .. } = &mut c.method {
            *k = vec![2];
            *max_new = 12;
        }
    });
    let out = dir.path().join("spec");
    let csv = ok(&["spec", "--trace", "--config", &cfg, "--out", out.to_str().unwrap(), "--format", "csv"]);
    assert!(csv.lines().any(|l| l.contains(",block_efficiency,")));
    let rounds = std::fs::read_to_string(out.join("rounds.jsonl")).unwrap();
    assert!(rounds.lines().count() > 0);
    for l in rounds.lines() {
        serde_json::from_str::<Value>(l).unwrap();
    }
}

#[test]
fn quant_and_lora_demo_run_on_small_configs() {
    let dir = tempfile::tempdir().unwrap();
    let quant = small_config(dir.path(), "quant", |c| {
        if let MethodSpec::Quant { calibration, .. } = &mut c.method {
            *calibration = 2;
        }
    });
    let q: Value = serde_json::from_str(&ok(&["quant", "--config", &quant])).unwrap();
    assert_eq!(q["command"], "quant");
    let lora = small_config(dir.path(), "lora-demo", |c| {
        if let MethodSpec::Lora { swaps, qalft, gradient_checks, .. } = &mut c.method {
            *swaps = 5;
            qalft.steps = 50;
            *gradient_checks = 2;
        }
    });
    let l: Value = serde_json::from_str(&ok(&["lora-demo", "--config", &lora, "--seed", "3"])).unwrap();
    assert_eq!(l["seed"], 3);
}

#[test]
fn losses_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let batch = [
        PrefSample { lp_theta_c: -1.0, lp_ref_c: -1.2, lp_theta_r: -3.0, lp_ref_r: -2.5 },
        PrefSample::from_ratios(0.5, -0.5),
    ];
    let input = dir.path().join("prefs.jsonl");
    let lines: Vec<String> = batch.iter().map(|s| serde_json::to_string(s).unwrap()).collect();
    std::fs::write(&input, lines.join("\n")).unwrap();
    let gen = dir.path().join("gen.json");
    std::fs::write(&gen, "[-0.5, -0.25]").unwrap();
    let weights = MpoWeights { w_p: 0.8, w_q: 0.2, w_g: 1.0, beta: 0.5, delta: 0.0 };
    let wpath = dir.path().join("w.json");
    std::fs::write(&wpath, serde_json::to_string(&weights).unwrap()).unwrap();

    let v: Value = serde_json::from_str(&ok(&[
        "losses",
        "--input",
        input.to_str().unwrap(),
        "--gen-logprobs",
        gen.to_str().unwrap(),
        "--config",
        wpath.to_str().unwrap(),
    ]))
    .unwrap();
    let expect = mpo_joint_loss(&batch, &weights, &[-0.5, -0.25]).unwrap();
    assert_eq!(v["total"].as_f64().unwrap(), expect.total);
    assert_eq!(v["generation"].as_f64().unwrap(), 0.75);
    assert_eq!(v["samples"], 2);

    std::fs::write(&input, "{\"lp_theta_c\": 1}\n").unwrap();
    let (code, e) = err(&["losses", "--input", input.to_str().unwrap()]);
    assert_eq!((code, e["kind"].as_str().unwrap()), (1, "invalid_input"));
}

#[test]
fn rouge_reads_two_files() {
    let dir = tempfile::tempdir().unwrap();
    let (r, h) = (dir.path().join("r.txt"), dir.path().join("h.txt"));
    std::fs::write(&r, "a b c d").unwrap();
    std::fs::write(&h, "a c b d").unwrap();
    let v: Value =
        serde_json::from_str(&ok(&["rouge", "--reference", r.to_str().unwrap(), "--hypothesis", h.to_str().unwrap()]))
            .unwrap();
    assert_eq!(v["rouge1_f1"], 1.0);
    assert_eq!(v["rougeL_f1"], 0.75);
    assert!(v["variant"].is_string());
}

#[test]
fn failures_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let (code, e) = err(&["evict", "--config", "/nonexistent/config.json"]);
    assert_eq!((code, e["kind"].as_str().unwrap()), (1, "io"));

    let cfg = dir.path().join("typo.json");
    let mut v = serde_json::to_value(ExperimentConfig::default_for("evict").unwrap()).unwrap();
    v["trails"] = Value::from(3);
    std::fs::write(&cfg, v.to_string()).unwrap();
    let (code, e) = err(&["evict", "--config", cfg.to_str().unwrap()]);
    assert_eq!((code, e["kind"].as_str().unwrap()), (1, "config"));

    let (code, e) = err(&["evict", "--seed", "minus-one"]);
    assert_eq!((code, e["kind"].as_str().unwrap()), (64, "usage"));
    let (code, _) = err(&["frobnicate"]);
    assert_eq!(code, 64);

    let help = edgelab(&["--help"]);
    assert!(help.status.success());
    assert!(String::from_utf8_lossy(&help.stdout).contains("lora-demo"));
}
