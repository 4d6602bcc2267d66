//! End-to-end runs of the `exswitch` binary on small grids.

use std::path::Path;
use std::process::{Command, Output};

use exswitch::model::regulator;
use exswitch::rl::{checkpoint_load, Activation, NeuralValue, RegimeEncoding};

fn exswitch(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exswitch"))
        .args(args)
        .env("EXSWITCH_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn missing_config_fails_without_outputs() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("run");
    let o = exswitch(
        &[
            "solve",
            "--config",
            "/nonexistent/cfg.json",
            "--out",
            out.to_str().unwrap(),
        ],
        root.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);
}

#[test]
fn invalid_config_fields_are_reported_with_a_position() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("cfg.json");
    std::fs::write(&cfg, "{\n  \"train\": {\"bacth\": 3}\n}\n").unwrap();
    let o = exswitch(&["train", "--config", cfg.to_str().unwrap()], root.path());
    assert_eq!(o.status.code(), Some(2));
    let msg = text(&o);
    assert!(
        msg.contains("cfg.json:2:") && msg.contains("bacth"),
        "{msg}"
    );
}

#[test]
fn solve_writes_regime_files_report_and_manifest() {
    let root = tempfile::tempdir().unwrap();
    let o = exswitch(
        &[
            "solve",
            "--family",
            "regulator",
            "--lambda",
            "0.2",
            "--grid",
            "61x100",
        ],
        root.path(),
    );
    assert!(o.status.success(), "{}", text(&o));
    let dir = root.path().join("solve-regulator-seed0");
    for f in [
        "value.bin",
        "value_regime0.csv",
        "value_regime1.csv",
        "iteration.csv",
        "report.json",
        "value_slices.csv",
    ] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let m = manifest(&dir);
    assert_eq!(m["config"]["grid"]["nodes"], 61);
    assert_eq!(m["model_hash"], regulator().hash());
    let digest = m["outputs"]["value_regime0.csv"].as_str().unwrap();
    assert_eq!(
        digest,
        exswitch_cli::manifest::sha256_file(&dir.join("value_regime0.csv")).unwrap()
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["iteration"]["converged"], true);
    assert_eq!(csv_rows(&dir.join("value_regime1.csv")).len(), 61);
}

#[test]
fn lambda_sweep_is_monotone() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("sweep");
    let o = exswitch(
        &[
            "solve",
            "--family",
            "regulator",
            "--lambda-sweep",
            "0.2,0.1,0.05,0.01",
            "--grid",
            "121x200",
            "--no-iterate",
            "--out",
            out.to_str().unwrap(),
        ],
        root.path(),
    );
    assert!(o.status.success(), "{}", text(&o));
    let d: Vec<f64> = csv_rows(&out.join("lambda_sweep.csv"))
        .iter()
        .map(|r| r[1].parse().unwrap())
        .collect();
    assert_eq!(d.len(), 4);
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
    assert!(!out.join("iteration.csv").exists());
}

#[test]
fn zero_episodes_saves_the_initialization() {
    let root = tempfile::tempdir().unwrap();
    let o = exswitch(&["train", "--episodes", "0", "--seed", "7"], root.path());
    assert!(o.status.success(), "{}", text(&o));
    let dir = root.path().join("train-regulator-seed7");
    let model = regulator();
    let init = NeuralValue::for_model(
        &model,
        &[(128, Activation::Relu), (128, Activation::Tanh)],
        RegimeEncoding::OneHot,
        7,
    )
    .unwrap();
    let ck = checkpoint_load(
        &dir.join("checkpoint.json"),
        Some(init.network().architecture()),
        Some(&model.hash()),
    )
    .unwrap();
    assert_eq!(ck.params, *init.network());
    assert_eq!(ck.lineage.episodes, 0);
    assert_eq!(csv_rows(&dir.join("loss.csv")).len(), 0);
}

#[test]
fn training_is_reproducible_and_emits_slices() {
    let root = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "train".to_string(),
            "--episodes".into(),
            "3".into(),
            "--batch".into(),
            "4".into(),
            "--steps".into(),
            "20".into(),
            "--mode".into(),
            "offline".into(),
            "--schedule".into(),
            "adam:0.001".into(),
            "--out".into(),
            out.into(),
        ]
    };
    let a = root.path().join("a");
    let b = root.path().join("b");
    for d in [&a, &b] {
        let v = args(d.to_str().unwrap());
        let v: Vec<&str> = v.iter().map(String::as_str).collect();
        let o = exswitch(&v, root.path());
        assert!(o.status.success(), "{}", text(&o));
    }
    let (ma, mb) = (manifest(&a), manifest(&b));
    for f in [
        "checkpoint.json",
        "value_slices.csv",
        "probability_slices.csv",
    ] {
        assert_eq!(ma["outputs"][f], mb["outputs"][f], "{f}");
    }
    // loss.csv also carries wall-clock seconds
    let (la, lb) = (csv_rows(&a.join("loss.csv")), csv_rows(&b.join("loss.csv")));
    assert_eq!(la.len(), 3);
    for (ra, rb) in la.iter().zip(&lb) {
        assert_eq!(ra[..3], rb[..3]);
    }

    // probabilities of each (t, x, from) sum to one
    let rows = csv_rows(&a.join("probability_slices.csv"));
    assert_eq!(rows.len(), 81 * 2 * 2);
    for chunk in rows.chunks(2) {
        let s: f64 = chunk.iter().map(|r| r[6].parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    // replaying the manifest reproduces the outputs
    let c = root.path().join("c");
    let manifest_path = a.join("manifest.json");
    let o = exswitch(
        &[
            "train",
            "--config",
            manifest_path.to_str().unwrap(),
            "--out",
            c.to_str().unwrap(),
        ],
        root.path(),
    );
    assert!(o.status.success(), "{}", text(&o));
    let mc = manifest(&c);
    for f in [
        "checkpoint.json",
        "value_slices.csv",
        "probability_slices.csv",
    ] {
        assert_eq!(mc["outputs"][f], ma["outputs"][f], "{f}");
    }
    for (ra, rc) in la.iter().zip(&csv_rows(&c.join("loss.csv"))) {
        assert_eq!(ra[..3], rc[..3]);
    }
}

#[test]
fn put_training_slices_vary_one_price_at_a_time() {
    let root = tempfile::tempdir().unwrap();
    let o = exswitch(
        &[
            "train",
            "--family",
            "put-options",
            "--episodes",
            "1",
            "--batch",
            "2",
        ],
        root.path(),
    );
    assert!(o.status.success(), "{}", text(&o));
    let rows = csv_rows(&root.path().join("train-put-options-seed0/value_slices.csv"));
    // 17 prices per axis, 2 axes, 3 regimes
    assert_eq!(rows.len(), 17 * 2 * 3);
    assert!(rows.iter().all(|r| r[0] == "0.5"));
    assert!(rows.iter().filter(|r| r[1] == "0").all(|r| r[3] == "1"));
}

#[test]
fn divergence_exits_with_its_own_code() {
    let root = tempfile::tempdir().unwrap();
    let o = exswitch(
        &[
            "train",
            "--episodes",
            "50",
            "--batch",
            "2",
            "--steps",
            "10",
            "--schedule",
            "constant:1000",
        ],
        root.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
    assert!(text(&o).contains("last log records"));
    assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);
}

#[test]
fn verify_passes_and_fails_with_exit_codes() {
    let root = tempfile::tempdir().unwrap();
    let o = exswitch(&["verify", "--only", "1,8"], root.path());
    assert!(o.status.success(), "{}", text(&o));
    let out = text(&o);
    assert!(
        out.contains("PASS") && out.contains("2 passed, 0 failed"),
        "{out}"
    );
    assert!(root
        .path()
        .join("verify-regulator-seed0/verify.json")
        .is_file());

    let o = exswitch(&["verify", "--only", "12"], root.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn coarse_grid_is_detected_by_the_monte_carlo_check() {
    let root = tempfile::tempdir().unwrap();
    let o = exswitch(
        &["verify", "--only", "7", "--coarse", "--mc-scale", "0.1"],
        root.path(),
    );
    assert_eq!(o.status.code(), Some(4), "{}", text(&o));
    assert!(text(&o).contains("FAIL"));
}

#[test]
fn bad_flag_values_are_usage_errors() {
    let root = tempfile::tempdir().unwrap();
    assert_eq!(
        exswitch(&["train", "--mode", "sideways"], root.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        exswitch(&["solve", "--grid", "abc"], root.path())
            .status
            .code(),
        Some(2)
    );
}
