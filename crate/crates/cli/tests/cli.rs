use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_complex-rank"));
    c.env("RUST_LOG", "warn");
    c
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(dir: &Path, agent: &str) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "dataset": {"kind": "synthetic", "train_queries": 12, "valid_queries": 4, "test_queries": 5,
                    "docs_per_query": 7, "feature_count": 6, "seed": 3},
        "agent": agent,
        "display_order": "center",
        "k": 3,
        "dims": {"embed": 4, "hidden": 6, "head": 4},
        "gru_candidate_input": "conventional",
        "trainer": {"learning_rate": 0.001, "batch_episodes": 4, "transfer_every": 10,
                    "max_steps": 40, "eval_every": 20, "log_every": 10,
                    "epsilon": {"start": 1.0, "end": 0.1, "decay_steps": 30}},
        "seeds": [5],
        "out_dir": dir.join("runs"),
    });
    let path = dir.join(format!("{agent}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn train_writes_artifacts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "drm");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let stdout = ok(bin()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap());
        assert!(stdout.contains("test P-NDCG"), "{stdout}");
    }
    let run_a = a.join("seed-5");
    for f in ["training_log.csv", "checkpoint.json", "report.json", "manifest.json"] {
        assert!(run_a.join(f).is_file(), "missing {f}");
    }
    for f in ["training_log.csv", "report_queries.csv", "report_histograms.csv"] {
        assert_eq!(
            std::fs::read(run_a.join(f)).unwrap(),
            std::fs::read(b.join("seed-5").join(f)).unwrap(),
            "{f} differs"
        );
    }
    let log = std::fs::read_to_string(run_a.join("training_log.csv")).unwrap();
    assert!(log.starts_with("step,epsilon,train_loss,validation_p_ndcg,transfer_flag\n"));

    // the manifest alone repeats the run
    let c = tmp.path().join("c");
    ok(bin()
        .args(["train", "--config"])
        .arg(run_a.join("manifest.json"))
        .arg("--out")
        .arg(&c)
        .output()
        .unwrap());
    assert_eq!(
        std::fs::read(run_a.join("report_queries.csv")).unwrap(),
        std::fs::read(c.join("seed-5/report_queries.csv")).unwrap()
    );

    // evaluating the checkpoint reproduces the test report
    let e = tmp.path().join("eval");
    ok(bin()
        .args(["evaluate", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(run_a.join("checkpoint.json"))
        .arg("--out")
        .arg(&e)
        .output()
        .unwrap());
    assert_eq!(
        std::fs::read(run_a.join("report_queries.csv")).unwrap(),
        std::fs::read(e.join("report_queries.csv")).unwrap()
    );
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "drm");
    let out = tmp.path().join("o");
    ok(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--agent", "gru", "--seed", "9", "--display-order", "last", "--reward-level", "serp", "--gain", "standard_dcg", "--out"])
        .arg(&out)
        .output()
        .unwrap());
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("seed-9/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["agent"], "gru");
    assert_eq!(m["config"]["display_order"], "last");
    assert_eq!(m["config"]["reward_level"], "serp");
    assert_eq!(m["config"]["gain"], "standard_dcg");
    assert_eq!(m["display_order"], serde_json::json!([3, 2, 1]));
}

#[test]
fn missing_dataset_fails_before_compute() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"dataset": {"kind": "letor", "train": "/no/such/train.txt", "test": "/no/such/test.txt",
            "feature_count": 3}, "agent": "gru", "k": 3, "out_dir": "never"}"#,
    )
    .unwrap();
    let out = bin().args(["train", "--config"]).arg(&cfg).current_dir(tmp.path()).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/no/such/train.txt"), "{err}");
    assert!(!tmp.path().join("never").exists());
}

#[test]
fn synth_then_train_from_letor_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let synth = tmp.path().join("synth.json");
    std::fs::write(
        &synth,
        r#"{"train_queries": 8, "valid_queries": 3, "test_queries": 3, "docs_per_query": 5,
            "feature_count": 6, "seed": 1}"#,
    )
    .unwrap();
    ok(bin()
        .args(["synth", "--k", "3", "--config"])
        .arg(&synth)
        .arg("--out")
        .arg(&data)
        .output()
        .unwrap());
    for f in ["train.txt", "vali.txt", "test.txt", "dataset.json"] {
        assert!(data.join(f).is_file(), "missing {f}");
    }
    let first = std::fs::read_to_string(data.join("train.txt")).unwrap();
    assert!(first.lines().next().unwrap().contains("qid:"));

    let cfg = tmp.path().join("letor.json");
    let value = serde_json::json!({
        "dataset": {"kind": "letor", "train": data.join("train.txt"), "valid": data.join("vali.txt"),
                    "test": data.join("test.txt"), "feature_count": 6},
        "agent": "gru", "k": 3,
        "dims": {"embed": 3, "hidden": 4, "head": 3},
        "trainer": {"batch_episodes": 2, "max_steps": 10, "eval_every": 5},
        "out_dir": tmp.path().join("runs"),
    });
    std::fs::write(&cfg, value.to_string()).unwrap();
    ok(bin().args(["train", "--config"]).arg(&cfg).output().unwrap());
    assert!(tmp.path().join("runs/seed-0/report.json").is_file());
}

#[test]
fn sweep_grid_and_plot_data() {
    let tmp = tempfile::tempdir().unwrap();
    let base_path = tiny_config(tmp.path(), "gru");
    let mut base: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&base_path).unwrap()).unwrap();
    base["seeds"] = serde_json::json!([1, 2]);
    base["trainer"]["max_steps"] = serde_json::json!(12);
    base["trainer"]["eval_every"] = serde_json::json!(6);
    let sweep = serde_json::json!({
        "base": base,
        "agents": ["gru", "drm"],
        "display_orders": ["first", "center", "last"],
        "reward_levels": ["document"],
    });
    let sweep_path = tmp.path().join("sweep.json");
    std::fs::write(&sweep_path, sweep.to_string()).unwrap();
    let out = tmp.path().join("sweep");
    let stdout = ok(bin()
        .args(["sweep", "--config"])
        .arg(&sweep_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    assert_eq!(stdout.lines().count(), 7, "{stdout}");
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 13);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary, stdout);

    let report = out.join("drm_center_document/lr-1e-3/seed-1/report.json");
    assert!(report.is_file());
    let plot = ok(bin().args(["plot-data", "--report"]).arg(&report).output().unwrap());
    let rows: Vec<&str> = plot.lines().collect();
    assert_eq!(rows[0], "bias,series,index,mean_label");
    assert_eq!(rows.len(), 1 + 2 * 3);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for (i, row) in rows[1..4].iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[0], "center");
        assert_eq!(cols[1], "per_position");
        assert_eq!(cols[2], (i + 1).to_string());
        assert_eq!(cols[3].parse::<f64>().unwrap(), r["per_position"][i].as_f64().unwrap());
    }
    let missing = bin().args(["plot-data", "--report", "x=/no/report.json"]).output().unwrap();
    assert!(!missing.status.success());
}
