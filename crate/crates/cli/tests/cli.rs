use std::path::Path;
use std::process::{Command, Output};

fn netid(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netid"))
        .args(args)
        .env("NETID_OUT", root)
        .env_remove("RUST_BACKTRACE")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: &str = r#"{
  "network": {"n": 5, "er_p": 0.5},
  "train_steps": 80,
  "horizon": 10,
  "seeds": [0],
  "asind": {"outer_max_iters": 10}
}
"#;

#[test]
fn simulate_fit_predict_eval() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("small.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let cfg = cfg.to_str().unwrap();

    ok(&netid(
        root,
        &[
            "--threads",
            "1",
            "simulate",
            "--config",
            cfg,
            "--model",
            "sis",
            "--network",
            "er",
        ],
    ));
    let sim = root.join("simulate");
    for f in [
        "train.csv",
        "test.csv",
        "network.csv",
        "edges.csv",
        "dynamics.json",
        "train.meta.json",
    ] {
        assert!(sim.join(f).exists(), "{f}");
    }

    let model = root.join("m.json");
    let train = sim.join("train.csv");
    ok(&netid(
        root,
        &[
            "fit",
            "--data",
            train.to_str().unwrap(),
            "--config",
            cfg,
            "--out",
            model.to_str().unwrap(),
        ],
    ));
    assert!(std::fs::read_to_string(&model)
        .unwrap()
        .contains("\"method\": \"asind\""));

    let pred = root.join("pred.csv");
    ok(&netid(
        root,
        &[
            "predict",
            "--model",
            model.to_str().unwrap(),
            "--data",
            train.to_str().unwrap(),
            "--steps",
            "10",
            "--out",
            pred.to_str().unwrap(),
        ],
    ));
    let text = std::fs::read_to_string(&pred).unwrap();
    assert!(text.starts_with("t,node_0,node_1,node_2,node_3,node_4"));
    assert_eq!(text.lines().count(), 1 + 11);

    let report = ok(&netid(
        root,
        &[
            "eval",
            "--model",
            model.to_str().unwrap(),
            "--truth",
            sim.join("test.csv").to_str().unwrap(),
            "--network",
            sim.join("network.csv").to_str().unwrap(),
        ],
    ));
    assert!(
        report.contains("\"rmse\"") && report.contains("\"jaccard\""),
        "{report}"
    );
}

#[test]
fn run_writes_tables_under_the_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("small.json");
    std::fs::write(&cfg, SMALL).unwrap();
    ok(&netid(
        root,
        &["run", "--config", cfg.to_str().unwrap(), "--method", "sindy"],
    ));
    let results = std::fs::read_to_string(root.join("run/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 2);
    assert!(results.lines().nth(1).unwrap().starts_with("sis,ER,sindy,0,"));
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("bad.json");
    std::fs::write(&cfg, "{\n  \"horizon\": 3,\n  \"bogus\": 1\n}\n").unwrap();
    let out = netid(root, &["run", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains(":3:"), "{err}");

    let out = netid(root, &["grid", "--models", "sis,heat"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("heat"));

    let out = netid(root, &["run", "--out", "/no/such/parent/here"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("path"));
}
