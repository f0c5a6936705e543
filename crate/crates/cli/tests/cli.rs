use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn m3(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_m3"))
        .args(args)
        .env_remove("M3_DATA_DIR")
        .output()
        .expect("spawn m3")
}

fn ok(args: &[&str]) -> String {
    let out = m3(args);
    assert!(
        out.status.success(),
        "m3 {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, spec: &str) -> PathBuf {
    let data = dir.join(spec);
    ok(&[
        "gen",
        "--spec",
        s(&fixture(&format!("{spec}.json"))),
        "--out",
        s(&data),
    ]);
    data
}

fn train(dir: &Path, data: &Path, epochs: &str) -> PathBuf {
    let ck = dir.join("ck.json");
    let cfg = fixture("train_config.json");
    ok(&[
        "train",
        "--data",
        s(data),
        "--config",
        s(&cfg),
        "--epochs",
        epochs,
        "--out",
        s(&ck),
    ]);
    ck
}

#[test]
fn gen_writes_four_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "tiny");
    let b = dir.path().join("again");
    ok(&["gen", "--spec", s(&fixture("tiny.json")), "--out", s(&b)]);
    for f in [
        "zoo.json",
        "graphs.jsonl",
        "outcomes.jsonl",
        "features.jsonl",
    ] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty(), "{f}");
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.json");
    std::fs::write(&spec, r#"{"seed": 0, "n_samples": "many"}"#).unwrap();
    let out = m3(&["gen", "--spec", s(&spec), "--out", s(&dir.path().join("x"))]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let data = gen(dir.path(), "tiny");
    std::fs::remove_file(data.join("features.jsonl")).unwrap();
    let out = m3(&["eval", "--data", s(&data), "--methods", "random"]);
    assert_eq!(out.status.code(), Some(3));

    let out = m3(&["eval", "--data", s(&data), "--methods", "best_guess"]);
    assert_eq!(out.status.code(), Some(2));
    let out = m3(&["train"]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "missing --data is a usage error"
    );
}

#[test]
fn train_then_eval_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "tiny");
    let ck = train(dir.path(), &data, "5");
    assert!(dir.path().join("ck.history.csv").exists());
    let mut reports = Vec::new();
    for name in ["r1.csv", "r2.csv"] {
        let out = dir.path().join(name);
        ok(&[
            "eval",
            "--data",
            s(&data),
            "--checkpoint",
            s(&ck),
            "--out",
            s(&out),
        ]);
        reports.push(std::fs::read_to_string(out).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let lines: Vec<&str> = reports[0].lines().collect();
    assert_eq!(lines[0], "method,bucket,ser,std,count");
    assert!(lines.iter().any(|l| l.starts_with("m3,Full,")));
    assert!(lines.iter().any(|l| l.starts_with("oracle,Full,1")));

    let jsonl = dir.path().join("r.jsonl");
    ok(&[
        "eval",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--out",
        s(&jsonl),
    ]);
    assert_eq!(
        std::fs::read_to_string(jsonl).unwrap().lines().count(),
        lines.len() - 1
    );
}

#[test]
fn breakdown_and_budget_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "tiny");
    let ck = train(dir.path(), &data, "2");
    let by_level = ok(&[
        "eval",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--methods",
        "m3",
        "--by",
        "difficulty",
    ]);
    assert_eq!(by_level.lines().count(), 1 + 6);
    let budgets = ok(&[
        "eval",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--methods",
        "m3",
        "--budgets",
        "0.3,inf",
    ]);
    let rows: Vec<&str> = budgets.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("m3,0.3,"));
    assert!(rows[1].starts_with("m3,inf,"));
}

#[test]
fn select_prints_ranked_choices() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "tiny");
    let ck = train(dir.path(), &data, "2");
    let top = ok(&[
        "select",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--sample",
        "s00000",
        "--topk",
        "3",
    ]);
    assert_eq!(top.lines().count(), 3);
    let one = ok(&[
        "select",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--sample",
        "s00000",
    ]);
    assert!(one.lines().last().unwrap().contains("score"));
    let out = m3(&[
        "select",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--sample",
        "missing",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn budget_changes_the_selection() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "slow_best");
    let ck = train(dir.path(), &data, "10");
    let mut changed = false;
    for i in 0..20 {
        let id = format!("s{i:05}");
        let free = ok(&[
            "select",
            "--data",
            s(&data),
            "--checkpoint",
            s(&ck),
            "--sample",
            &id,
        ]);
        let tight = ok(&[
            "select",
            "--data",
            s(&data),
            "--checkpoint",
            s(&ck),
            "--sample",
            &id,
            "--budget",
            "0.3",
        ]);
        changed |= free != tight;
    }
    assert!(changed);
    let out = m3(&[
        "select",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--sample",
        "s00000",
        "--budget",
        "0.001",
    ]);
    assert_eq!(out.status.code(), Some(5));
}
