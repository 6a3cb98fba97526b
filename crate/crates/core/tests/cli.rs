use std::path::Path;
use std::process::{Command, Output};

use graphrom::cli::read_query_fields;

fn graphrom(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphrom"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_run(out: &Path) {
    let o = graphrom(out, &["generate-data", "--resolution", "5", "--grid", "2", "--dt", "0.1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = graphrom(out, &["train", "--epochs-adam", "5", "--latent-dim", "2", "--ratio-mu", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = graphrom(dir.path(), &["selftest", "--draws", "4", "--trials", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("selftest.json")).unwrap()).unwrap();
    assert!(report.is_object());
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[split]\nratio_t = 2.0\n").unwrap();
    let o = graphrom(dir.path(), &["--config", cfg.to_str().unwrap(), "selftest", "--draws", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("split.ratio_t"), "{}", stderr(&o));

    std::fs::write(&cfg, "seed = 1\n[train]\nlearning_rate = 1.0\n").unwrap();
    let o = graphrom(dir.path(), &["--config", cfg.to_str().unwrap(), "selftest", "--draws", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("learning_rate") && err.contains("line 3"), "{err}");
}

#[test]
fn missing_dataset_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = graphrom(dir.path(), &["train", "--dataset", dir.path().join("nowhere").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn checkpoint_on_another_mesh_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    tiny_run(dir.path());
    let other = dir.path().join("other");
    let o = graphrom(dir.path(), &["generate-data", "--resolution", "6", "--grid", "2", "--dt", "0.1", "--dataset", other.to_str().unwrap()]);
    assert!(o.status.success());
    let o = graphrom(dir.path(), &["evaluate", "--dataset", other.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!stderr(&o).is_empty());
}

#[test]
fn pipeline_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    tiny_run(out);
    let queries = out.join("queries.csv");
    std::fs::write(&queries, "t,mu_1,mu_2\n0.1,0.5,0.5\n0.2,7.0,7.0\n").unwrap();
    for args in [
        vec!["evaluate"],
        vec!["rollout"],
        vec!["interpolate", "--method", "linear", "--queries", queries.to_str().unwrap(), "--probe-pairs", "200"],
        vec!["diagnose-bifurcation", "--checkpoint", out.join("checkpoint").to_str().unwrap()],
    ] {
        let o = graphrom(out, &args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    for f in [
        "config.train.toml",
        "loss_history.csv",
        "split.json",
        "eval_report.json",
        "errors.csv",
        "latent.csv",
        "interpolation_report.json",
        "bifurcation.json",
        "diagram_model.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let (len, rows) = read_query_fields(&out.join("fields.f64")).unwrap();
    assert_eq!((rows.len(), len), (2, 25));
    assert!(rows[0].iter().all(|v| v.is_finite()));
    assert!(rows[1].iter().all(|v| v.is_nan()), "out-of-hull query must be NaN");
}
