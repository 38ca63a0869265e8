//! End-to-end checks of the command-line contract.

mod common;

use std::path::Path;
use std::process::Command;

use common::*;
use sqlgrpo::eval::{parse_report_csv, EvalResult};

fn gen(dir: &Path, extra: &[&str]) {
    let mut args = vec!["gen-data", "--out", "data"];
    args.extend_from_slice(extra);
    let (code, _, err) = run_cli(dir, &args);
    assert_eq!(code, 0, "{err}");
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn first_question(dir: &Path, split: &str, template: &str) -> serde_json::Value {
    std::fs::read_to_string(dir.join("data").join(format!("{split}.jsonl")))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|q| q["template_id"] == template)
        .unwrap()
}

#[test]
fn missing_corpus_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run_cli(dir.path(), &["train", "--data", "nowhere", "--out", "run"]);
    assert_eq!(code, 3, "{err}");
    assert!(err.starts_with("sqlgrpo: "));
}

#[test]
fn unknown_config_key_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"train": {"learning_rte": 0.1}}"#).unwrap();
    let (code, _, err) = run_cli(dir.path(), &["gen-data", "--config", "c.json", "--out", "data"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("learning_rte"), "{err}");
}

#[test]
fn invalid_group_size_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let (code, _, err) = run_cli(dir.path(), &["train", "--data", "data", "--out", "run", "--k", "1"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn corpus_files_and_oracle_flag() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let q = first_question(dir.path(), "dev", "top_city");
    assert!(q.get("gold_sql").is_none());
    let manifest = json(&dir.path().join("data/manifest.json"));
    assert_eq!(manifest["sizes"]["train"], 300);

    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &["--with-oracle"]);
    let q = first_question(dir.path(), "dev", "top_city");
    assert!(q["gold_sql"].as_str().unwrap().starts_with("SELECT"));
}

#[test]
fn paper_scale_sizes() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &["--paper-scale"]);
    let expect = [
        ("train", 2961),
        ("dev", 282),
        ("test_original", 578),
        ("test_counterfactual", 699),
        ("test_easy", 732),
        ("test_medium", 507),
        ("test_hard", 719),
    ];
    for (split, n) in expect {
        let text = std::fs::read_to_string(dir.path().join(format!("data/{split}.jsonl"))).unwrap();
        assert_eq!(text.lines().count(), n, "{split}");
    }
}

#[test]
fn score_reports_the_reward_ladder() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &["--with-oracle"]);
    let q = first_question(dir.path(), "dev", "top_city");
    let id = q["id"].as_str().unwrap();
    let gold = q["gold_sql"].as_str().unwrap();
    let superset = gold.split(" GROUP BY").next().unwrap().replacen("SELECT m.city", "SELECT DISTINCT m.city", 1);
    let cases = [
        ("SELEC 1", -100.0),
        ("SELECT 'nowhere at all'", 1.0),
        (gold, 1000.0 + 100.0 + 1.0),
    ];
    for (sql, want) in cases {
        let (code, out, err) = run_cli(dir.path(), &["score", "--data", "data", "--question", id, "--sql", sql]);
        assert_eq!(code, 0, "{err}");
        let b: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(b["total"].as_f64().unwrap(), want, "{sql}: {out}");
    }
    // Every city the athlete won in: contains the answer but is not exact.
    let (_, out, _) = run_cli(dir.path(), &["score", "--data", "data", "--question", id, "--sql", &superset]);
    let b: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(b["outcome_class"], "executed_partial", "{out}");
    assert_eq!(b["total"].as_f64().unwrap(), 101.0);
}

#[test]
fn score_unknown_question_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let (code, _, _) = run_cli(dir.path(), &["score", "--data", "data", "--question", "dev-99999", "--sql", "SELECT 1"]);
    assert_eq!(code, 3);
}

#[test]
fn zero_beta_still_logs_kl() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let (code, _, err) =
        run_cli(dir.path(), &["train", "--data", "data", "--out", "run", "--beta", "0", "--max-steps", "6"]);
    assert_eq!(code, 0, "{err}");
    let log = std::fs::read_to_string(dir.path().join("run/train_log.jsonl")).unwrap();
    let steps: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(steps.len(), 6);
    assert!(steps.iter().all(|s| s["kl"].as_f64().is_some()));
    assert!(steps.last().unwrap()["kl"].as_f64().unwrap() > 0.0);
    assert_eq!(json(&dir.path().join("run/config.json"))["train"]["beta"], 0.0);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let train = |out: &str, extra: &[&str]| {
        let mut args = vec!["train", "--data", "data", "--out", out, "--eval-every", "4"];
        args.extend_from_slice(extra);
        let (code, _, err) = run_cli(dir.path(), &args);
        assert_eq!(code, 0, "{err}");
    };
    train("full", &["--max-steps", "14"]);
    train("split", &["--max-steps", "6"]);
    train("split", &["--resume", "--max-steps", "14"]);

    let a = read_tree(&dir.path().join("full"));
    let b = read_tree(&dir.path().join("split"));
    let compared: Vec<_> = a.keys().filter(|p| !p.ends_with("config.json")).collect();
    assert!(compared.iter().any(|p| p.starts_with("checkpoints")));
    for p in compared {
        assert_eq!(a[p], b.get(p).cloned().unwrap_or_default(), "{}", p.display());
    }
}

#[test]
fn oracle_policy_is_perfect_and_needs_gold_sql() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &["--with-oracle"]);
    let (code, _, err) = run_cli(
        dir.path(),
        &["eval", "--data", "data", "--out", "ev", "--policy", "oracle", "--split", "test_easy", "--split", "dev"],
    );
    assert_eq!(code, 0, "{err}");
    for split in ["test_easy", "dev"] {
        let r: EvalResult =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("ev/eval_{split}_oracle.json"))).unwrap())
                .unwrap();
        assert_eq!(r.metrics.ems, 100.0);
        assert_eq!(r.metrics.error_rate, 0.0);
        assert_eq!(r.records.len(), r.metrics.n);
    }

    // The oracle needs gold SQL, which a plain corpus does not carry.
    let plain = tempfile::tempdir().unwrap();
    gen(plain.path(), &[]);
    let (code, _, _) = run_cli(plain.path(), &["eval", "--data", "data", "--out", "ev", "--policy", "oracle"]);
    assert_eq!(code, 3);
}

#[test]
fn train_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let (code, _, err) = run_cli(dir.path(), &["train", "--data", "data", "--out", "run", "--max-steps", "20"]);
    assert_eq!(code, 0, "{err}");
    for args in [
        vec!["eval", "--data", "data", "--out", "ev", "--policy", "uniform"],
        vec!["eval", "--data", "data", "--out", "ev", "--checkpoint", "run/checkpoints/policy_best.json", "--label", "trained"],
    ] {
        let (code, _, err) = run_cli(dir.path(), &args);
        assert_eq!(code, 0, "{err}");
    }
    let (code, _, err) = run_cli(dir.path(), &["report", "--out", "ev"]);
    assert_eq!(code, 0, "{err}");

    let csv = std::fs::read_to_string(dir.path().join("ev/report.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("delta_test_counterfactual_ems"));
    let rows = parse_report_csv(&csv).unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        for (split, m) in &row.cells {
            let path = dir.path().join(format!("ev/eval_{}_{}.json", split.name(), row.model));
            let r: EvalResult = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
            assert_eq!(m.ems.to_bits(), r.metrics.ems.to_bits());
            assert_eq!(m.rems.to_bits(), r.metrics.rems.to_bits());
            assert_eq!(m.error_rate.to_bits(), r.metrics.error_rate.to_bits());
            assert_eq!(m.error_count, r.metrics.error_count);
            assert!(m.ems <= m.rems && m.rems <= 100.0);
        }
    }
    let text = std::fs::read_to_string(dir.path().join("ev/report.txt")).unwrap();
    assert!(text.contains("Counterfactual"));
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = |out: &str, args: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(bin());
        cmd.current_dir(dir.path()).env_remove("RUN_SEED").args(["gen-data", "--out", out]).args(args);
        if let Some(s) = env {
            cmd.env("RUN_SEED", s);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(dir.path().join(out).join("manifest.json")).unwrap()
    };
    std::fs::write(dir.path().join("c.json"), r#"{"seed": 5}"#).unwrap();
    let five = manifest("a", &["--seed", "5"], None);
    assert_eq!(manifest("b", &[], Some("5")), five);
    assert_eq!(manifest("c", &["--config", "c.json"], Some("9")), five);
    assert_eq!(manifest("d", &["--seed", "5", "--config", "c.json"], Some("9")), five);
    assert_ne!(manifest("e", &["--seed", "6", "--config", "c.json"], None), five);
    assert_eq!(manifest("f", &[], None), manifest("g", &["--seed", "7"], None));
}
