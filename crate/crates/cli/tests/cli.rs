use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn seqroute(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqroute")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn oracle_agrees_on_the_trap() {
    let out = seqroute(&["oracle", "--env", path(&fixture("trap.json")), "--set", "search.simulations=100"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("match"));
}

#[test]
fn search_train_eval_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let env = fixture("stochastic.json");
    let run = |sub: &str, out: &Path, extra: &[&str]| {
        let mut args = vec![sub, "--env", path(&env), "--output-dir", path(out), "--seed", "4"];
        args.extend_from_slice(extra);
        let o = seqroute(&args);
        assert!(o.status.success(), "{sub}: {}", stderr(&o));
        o
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run("search", out, &["--set", "search.simulations=40"]);
        run("train", out, &["--set", "train.epochs=5"]);
        run("eval", out, &["--router", "policy"]);
    }
    for file in ["dataset.jsonl", "params.json", "report.json", "metrics.csv", "selection.csv"] {
        let left = std::fs::read(a.join(file)).unwrap();
        assert_eq!(left, std::fs::read(b.join(file)).unwrap(), "{file} differs between identical runs");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["router"], "policy");

    let knn = run("eval", &a, &["--router", "knn:2"]);
    assert!(stdout(&knn).contains("knn:2"));
}

#[test]
fn sweep_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqroute(&[
        "sweep",
        "--env",
        path(&fixture("cost_asymmetry.json")),
        "--prices",
        path(&fixture("cost_prices.json")),
        "--output-dir",
        path(dir.path()),
        "--lambdas",
        "0,50",
        "--set",
        "search.simulations=100",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn config_files_resolve_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture("trap.json"), dir.path().join("trap.json")).unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(&config, r#"{"env": {"tabular": "trap.json"}, "router": "greedy", "seed": 3, "output_dir": "out"}"#)
        .unwrap();
    let out = seqroute(&["eval", "--config", path(&config)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("greedy"));
    assert!(dir.path().join("out/report.json").exists());
}

#[test]
fn gradcheck_passes() {
    let out = seqroute(&["gradcheck", "--seeds", "2", "--sample", "8"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("gradient check passed"));
}

#[test]
fn bad_input_exits_nonzero() {
    let out = seqroute(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("Usage"));

    let env = fixture("trap.json");
    let out = seqroute(&["eval", "--env", path(&env), "--set", "search.simulation=3"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("search.simulation"), "{}", stderr(&out));

    let out = seqroute(&["eval", "--env", path(&env), "--router", "oracle"]);
    assert!(!out.status.success());

    let out = seqroute(&["eval", "--env", "/no/such/env.json"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("env.tabular"), "{}", stderr(&out));

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("typo.json");
    std::fs::write(&config, r#"{"env": {"tabular": "x.json"}, "serach": {}}"#).unwrap();
    let out = seqroute(&["eval", "--config", path(&config)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("serach"), "{}", stderr(&out));

    let out = seqroute(&["eval", "--env", path(&env), "--router", "policy"]);
    assert!(!out.status.success(), "policy without a dataset must fail");

    let out = seqroute(&["gradcheck", "--set", "train.hidden_dim=4"]);
    assert!(!out.status.success());
}
