mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use common::*;
use oracle_harness::commands::{cmd_build_verifier, cmd_synthesize};
use oracle_harness::config::RunConfig;
use oracle_harness::llm::{GatewayMode, PromptKind};

const CONFIG: &str = r#"
seed = 99
suite_size = 30
ks = [1, 2]
[strategy]
kind = "implicit"
sample_budget = 3
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_oracle-harness"))
}

/// Corpus directory with copies of the named desk problems.
fn corpus_of(dir: &Path, ids: &[&str], strip_judge: bool) -> PathBuf {
    let corpus = dir.join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    for id in ids {
        let mut text = std::fs::read_to_string(problems_dir().join(format!("{id}.toml"))).unwrap();
        if strip_judge {
            text.truncate(text.find("\n[judge]").unwrap() + 1);
        }
        std::fs::write(corpus.join(format!("{id}.toml")), text).unwrap();
    }
    corpus
}

fn config(root: &Path, corpus: &Path, ws: &str) -> RunConfig {
    let mut cfg: RunConfig = toml::from_str(CONFIG).unwrap();
    cfg.corpus = corpus.to_path_buf();
    cfg.workspace = root.join(ws);
    cfg.gateway.mode = GatewayMode::Record;
    cfg
}

/// Records build-verifier and synthesize with the desk backend.
fn record(cfg: &RunConfig, backend: DeskBackend) -> (i32, i32) {
    let gw = cfg.gateway(Some(Arc::new(backend))).unwrap();
    let b = cmd_build_verifier(cfg, &gw).unwrap();
    let s = cmd_synthesize(cfg, &gw).unwrap();
    (b.exit_code(), s.exit_code())
}

fn fresh_workspace(from: &Path, to: &Path) {
    std::fs::create_dir_all(to.join("transcripts")).unwrap();
    for f in ["transcripts.jsonl", "index.json"] {
        std::fs::copy(from.join("transcripts").join(f), to.join("transcripts").join(f)).unwrap();
    }
}

fn run(root: &Path, cmd: &str, corpus: &Path, ws: &Path, extra: &[&str]) -> Output {
    let cfg_path = root.join("run.toml");
    std::fs::write(&cfg_path, CONFIG).unwrap();
    bin()
        .arg(cmd)
        .arg("--config")
        .arg(&cfg_path)
        .arg("--corpus")
        .arg(corpus)
        .arg("--workspace")
        .arg(ws)
        .arg("--replay")
        .args(extra)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn replay_pipeline_end_to_end() {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let ids = ["knapsack", "lis", "max_subarray"];
    let corpus = corpus_of(root, &ids, false);
    let cfg = config(root, &corpus, "recorded");
    assert_eq!(record(&cfg, DeskBackend::new()), (0, 0));

    let ws_a = root.join("a");
    let ws_b = root.join("b");
    for ws in [&ws_a, &ws_b] {
        fresh_workspace(&cfg.workspace, ws);
        let out = run(root, "build-verifier", &corpus, ws, &[]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("3 done"));
    }
    for id in ids {
        let a = std::fs::read(ws_a.join(format!("suites/{id}.jsonl"))).unwrap();
        let b = std::fs::read(ws_b.join(format!("suites/{id}.jsonl"))).unwrap();
        assert_eq!(a, b, "{id}: suite bytes differ between replays");
        assert_eq!(String::from_utf8(a).unwrap().lines().count(), 30);
    }
    let again = run(root, "build-verifier", &corpus, &ws_a, &[]);
    assert_eq!(again.status.code(), Some(0));
    assert!(stdout(&again).contains("3 up to date"), "{}", stdout(&again));

    let out = run(root, "synthesize", &corpus, &ws_a, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for id in ids {
        let text = std::fs::read_to_string(ws_a.join(format!("verdicts/{id}.jsonl"))).unwrap();
        assert_eq!(text.lines().count(), 3);
    }

    let out = run(root, "evaluate", &corpus, &ws_a, &["--suite-sizes", "1,5,30"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for size in [1, 5, 30] {
        assert!(ws_a.join(format!("reports/report_size_{size}.json")).is_file());
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws_a.join("reports/report.json")).unwrap()).unwrap();
    // one fast program among three draws per problem
    let p1 = report["pass_at_k_unbiased"]["1"].as_f64().unwrap();
    assert!((p1 - 1.0 / 3.0).abs() < 1e-12, "pass@1 = {p1}");
    assert_eq!(report["pass_at_k_ranked"]["1"].as_f64(), Some(1.0));
    assert_eq!(report["agreement"].as_f64(), Some(1.0));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws_a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["reports"].as_array().unwrap().len(), 8);
}

#[test]
fn oracle_exhaustion_fails_one_problem() {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let corpus = corpus_of(root, &["knapsack", "lis", "max_subarray"], false);
    let mut cfg = config(root, &corpus, "ws");
    cfg.oracle_attempts = 2;
    let backend = DeskBackend::new()
        .respond_file("max_subarray", PromptKind::Oracle, 1, "wrong_oracle.py")
        .respond_file("max_subarray", PromptKind::Oracle, 2, "wrong_oracle.py");
    let gw = cfg.gateway(Some(Arc::new(backend))).unwrap();
    let summary = cmd_build_verifier(&cfg, &gw).unwrap();
    assert_eq!(summary.exit_code(), 1);
    assert_eq!(summary.done.len(), 2);
    assert_eq!(summary.failed[0].0, "max_subarray");
    assert!(summary.to_string().contains("no oracle passed the public tests in 2 attempts"));
    assert!(cfg.workspace.join("suites/knapsack.jsonl").is_file());
    assert!(!cfg.workspace.join("suites/max_subarray.jsonl").exists());

    // the command-line run reports the same failure
    let cfg_path = root.join("exhaust.toml");
    std::fs::write(&cfg_path, format!("oracle_attempts = 2\n{CONFIG}")).unwrap();
    let out = bin()
        .args(["build-verifier", "--replay", "--config"])
        .arg(&cfg_path)
        .arg("--corpus")
        .arg(&corpus)
        .arg("--workspace")
        .arg(&cfg.workspace)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("max_subarray: no oracle passed"), "{}", stdout(&out));
}

#[test]
fn synthesize_names_problem_without_suite() {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let corpus = corpus_of(root, &["lis", "knapsack"], false);
    let cfg = config(root, &corpus, "ws");
    assert_eq!(record(&cfg, DeskBackend::new()), (0, 0));
    std::fs::remove_file(cfg.workspace.join("suites/lis.jsonl")).unwrap();
    let out = run(root, "synthesize", &corpus, &cfg.workspace, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("lis: missing suite"), "{}", stdout(&out));
}

#[test]
fn evaluate_without_judge_data() {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let corpus = corpus_of(root, &["lis"], true);
    let cfg = config(root, &corpus, "ws");
    assert_eq!(record(&cfg, DeskBackend::new()), (0, 0));
    let out = run(root, "evaluate", &corpus, &cfg.workspace, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cfg.workspace.join("reports/report.json")).unwrap()).unwrap();
    assert!(report["agreement"].is_null());
    assert!(stdout(&out).contains("agreement (suite): -"));
}

#[test]
fn iterative_first_round_pass_persists_one_candidate() {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let corpus = corpus_of(root, &["lis"], false);
    let mut cfg = config(root, &corpus, "ws");
    cfg.strategy = oracle_harness::StrategySpec::iterative(3);
    assert_eq!(record(&cfg, DeskBackend::new().naive_plan("lis", &["fast.py"])), (0, 0));
    let text = std::fs::read_to_string(cfg.workspace.join("verdicts/lis.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1);
    let names: Vec<String> = std::fs::read_dir(cfg.workspace.join("programs/lis"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("naive_solution") || n.starts_with("refinement"))
        .collect();
    assert_eq!(names, vec!["naive_solution_1.py"]);
}

#[test]
fn configuration_errors_exit_nonzero() {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let corpus = corpus_of(root, &["lis"], false);
    let out = run(root, "build-verifier", &corpus, &root.join("empty"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("transcript store"));
    let out = bin().args(["build-verifier", "--live", "--corpus"]).arg(&corpus).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}
