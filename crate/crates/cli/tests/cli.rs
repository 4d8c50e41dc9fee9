use std::path::Path;
use std::process::{Command, Output};

fn lel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lel"))
        .args(args)
        .env_remove("LEL_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = lel(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn synth_planted_writes_a_dump_and_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("dump");
    ok(&[
        "synth",
        "--planted",
        "--active",
        "3",
        "--passive",
        "5",
        "--n",
        "300",
        "--out",
        p(&dump),
    ]);
    let dump_meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dump.join("meta.json")).unwrap()).unwrap();
    assert_eq!(dump_meta["d"], 8);
    assert_eq!(dump_meta["has_sigma"], true);
    let truth = std::fs::read_to_string(dump.join("ground_truth.csv")).unwrap();
    assert!(truth.starts_with("dim,label,oracle_entropy\n"));
    assert_eq!(truth.lines().count(), 9);
    assert!(dump.join("labels.csv").is_file());
}

#[test]
fn synth_spike_slab_records_slab_variance() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "synth",
        "--spike-slab",
        "--pi",
        "0.5",
        "--n",
        "200",
        "--out",
        p(tmp.path()),
    ]);
    let meta = std::fs::read_to_string(tmp.path().join("meta.json")).unwrap();
    assert!(meta.contains("\"slab_var\": 1.9975"), "{meta}");
    assert!(std::fs::read_to_string(tmp.path().join("mu.csv"))
        .unwrap()
        .starts_with("dim_0\n"));
}

#[test]
fn analyze_reports_all_three_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("dump");
    let out = tmp.path().join("out");
    ok(&[
        "synth",
        "--planted",
        "--active",
        "2",
        "--passive",
        "3",
        "--n",
        "400",
        "--out",
        p(&dump),
    ]);
    ok(&[
        "analyze",
        p(&dump),
        "--estimator",
        "knn",
        "--k",
        "5",
        "--out",
        p(&out),
    ]);
    let r = report(&out);
    assert_eq!(r["schema"], 1);
    assert_eq!(r["estimator"]["knn_k"], 5);
    let dims = r["classification"]["dims"].as_array().unwrap();
    assert_eq!(dims.len(), 5);
    for d in dims {
        assert_ne!(d["bonheme_label"], "unclassified");
        assert_ne!(d["kl_label"], "unclassified");
    }
    let entropy = r["dimension_stats"]["dims"][0]["entropy"]
        .as_object()
        .unwrap();
    assert_eq!(entropy.keys().collect::<Vec<_>>(), vec!["knn"]);
    let csv = std::fs::read_to_string(out.join("marginal_entropies.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn analyze_without_sigma_leaves_variance_criteria_unclassified() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("dump");
    ok(&[
        "synth",
        "--planted",
        "--active",
        "2",
        "--passive",
        "2",
        "--n",
        "300",
        "--out",
        p(&dump),
    ]);
    std::fs::remove_file(dump.join("sigma_sq.csv")).unwrap();
    let meta = std::fs::read_to_string(dump.join("meta.json")).unwrap();
    std::fs::write(
        dump.join("meta.json"),
        meta.replace("\"has_sigma\": true", "\"has_sigma\": false"),
    )
    .unwrap();
    ok(&["analyze", p(&dump), "--out", p(tmp.path())]);
    let r = report(tmp.path());
    for d in r["classification"]["dims"].as_array().unwrap() {
        assert_eq!(d["bonheme_label"], "unclassified");
        assert_eq!(d["kl_label"], "unclassified");
    }
    assert!(r["classification"]["notes"]
        .to_string()
        .contains("no variance representation"));
}

#[test]
fn sweep_default_grid_has_a_row_per_point_and_estimator() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["sweep", "--n", "300", "--out", p(tmp.path())]);
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("pi,estimator,entropy,oracle_entropy"));
    assert_eq!(lines.count(), 9 * 4);
    ok(&["sweep", "--oracle-only", "--out", p(tmp.path())]);
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("pi,oracle_entropy\n0.1,-0.86152"));
    assert_eq!(csv.lines().count(), 10);
}

#[test]
fn downstream_writes_curve_files_and_needs_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("dump");
    ok(&[
        "synth",
        "--planted",
        "--active",
        "2",
        "--passive",
        "2",
        "--n",
        "300",
        "--out",
        p(&dump),
    ]);
    ok(&[
        "downstream",
        p(&dump),
        "--repeats",
        "2",
        "--epochs",
        "50",
        "--out",
        p(tmp.path()),
    ]);
    let csv = std::fs::read_to_string(tmp.path().join("curve.csv")).unwrap();
    assert!(csv.starts_with("n,accuracy_raw,accuracy_normalised\n"));
    assert_eq!(csv.lines().count(), 5);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("curve.json")).unwrap())
            .unwrap();
    assert_eq!(json["repeats"], 2);

    std::fs::remove_file(dump.join("labels.csv")).unwrap();
    let out = lel(&["downstream", p(&dump), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        lel(&["analyze", p(&tmp.path().join("missing"))])
            .status
            .code(),
        Some(1)
    );

    let dump = tmp.path().join("dump");
    ok(&[
        "synth",
        "--planted",
        "--active",
        "1",
        "--passive",
        "1",
        "--n",
        "200",
        "--out",
        p(&dump),
    ]);
    let nan = tmp.path().join("nan");
    std::fs::create_dir(&nan).unwrap();
    for f in ["meta.json", "sigma_sq.csv", "labels.csv"] {
        std::fs::copy(dump.join(f), nan.join(f)).unwrap();
    }
    let mu = std::fs::read_to_string(dump.join("mu.csv")).unwrap();
    let mut lines: Vec<String> = mu.lines().map(String::from).collect();
    lines[1] = "NaN,0.0".into();
    std::fs::write(nan.join("mu.csv"), lines.join("\n") + "\n").unwrap();
    assert_eq!(lel(&["analyze", p(&nan)]).status.code(), Some(1));

    for args in [
        vec!["analyze", p(&dump), "--alpha", "1"],
        vec!["analyze", p(&dump), "--tau-method", "median"],
        vec!["synth", "--planted", "--n", "10"],
        vec!["synth"],
        vec![
            "sweep",
            "--oracle-only",
            "--pi-min",
            "0.5",
            "--pi-max",
            "0.1",
        ],
        vec!["bogus"],
    ] {
        assert_eq!(lel(&args).status.code(), Some(2), "{args:?}");
    }

    let bad_threads = Command::new(env!("CARGO_BIN_EXE_lel"))
        .args(["sweep", "--oracle-only", "--out", p(tmp.path())])
        .env("LEL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));
}

#[test]
fn fixed_tau_is_used_verbatim() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("dump");
    ok(&[
        "synth",
        "--planted",
        "--active",
        "2",
        "--passive",
        "2",
        "--n",
        "300",
        "--out",
        p(&dump),
    ]);
    ok(&["analyze", p(&dump), "--tau", "-1.5", "--out", p(tmp.path())]);
    assert_eq!(report(tmp.path())["classification"]["tau_used"], -1.5);
}
