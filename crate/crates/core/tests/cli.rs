use std::path::Path;
use std::process::{Command, Output};

use dckm::cli::{Record, EXIT_DATA, EXIT_OK, EXIT_USAGE};

fn dckm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dckm")).args(args).env_remove("DCKM_SEED").output().expect("binary runs")
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> String {
    let path = dir.join(name).display().to_string();
    let mut args = vec!["gen", "--n", "120", "--d", "12", "--k", "3", "--bias", "0.9", "--seed", "7", "--out", &path];
    args.extend_from_slice(extra);
    let out = dckm(&args);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn gen_writes_requested_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.csv", &[]);
    let b = gen(dir.path(), "b.csv", &[]);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 121);
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
}

#[test]
fn gen_rejects_out_of_range_bias() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("x.csv").display().to_string();
    let out = dckm(&["gen", "--bias", "1.2", "--out", &out_path]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(!Path::new(&out_path).exists());
}

#[test]
fn fit_reports_scores_for_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.csv", &[]);
    for method in ["dckm", "kmeans", "deckm", "pcakm", "dropkm"] {
        let out_path = dir.path().join(format!("{method}.txt")).display().to_string();
        let out = dckm(&[
            "fit",
            "--method",
            method,
            "--data",
            &data,
            "--labels",
            "label",
            "--k",
            "3",
            "--restarts",
            "3",
            "--seed",
            "7",
            "--max-iters",
            "20",
            "--out",
            &out_path,
        ]);
        assert_eq!(out.status.code(), Some(EXIT_OK), "{method}: {}", String::from_utf8_lossy(&out.stderr));
        let rec = Record::parse(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
        assert_eq!(rec.kind, "dckm-result");
        assert_eq!(rec.get("method"), Some(method));
        assert_eq!(rec.get("restarts"), Some("3"));
        let nmi = rec.get_f64("nmi.mean").unwrap();
        assert!((0.0..=1.0).contains(&nmi));
        assert!(rec.get("restart.2.ari").is_some());
        assert_eq!(rec.get("kept_features").is_some(), method == "dropkm");
        assert_eq!(rec.get("corr.after").is_some(), matches!(method, "dckm" | "deckm"));
    }
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.csv", &[]);
    let run = |env_seed: Option<&str>, flag: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_dckm"));
        cmd.args(["fit", "--method", "kmeans", "--data", &data, "--labels", "label", "--restarts", "1"]).args(flag);
        match env_seed {
            Some(s) => cmd.env("DCKM_SEED", s),
            None => cmd.env_remove("DCKM_SEED"),
        };
        let out = cmd.output().unwrap();
        Record::parse(&String::from_utf8_lossy(&out.stdout)).unwrap()
    };
    assert_eq!(run(Some("42"), &[]).get("seed"), Some("42"));
    assert_eq!(run(Some("42"), &["--seed", "3"]).get("seed"), Some("3"));
    assert_eq!(run(None, &[]).get("seed"), Some("0"));
}

#[test]
fn weights_feed_the_correlation_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.csv", &[]);
    let weights = dir.path().join("w.txt").display().to_string();
    let out = dckm(&[
        "fit",
        "--method",
        "dckm",
        "--data",
        &data,
        "--labels",
        "label",
        "--restarts",
        "2",
        "--max-iters",
        "10",
        "--weights-out",
        &weights,
    ]);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&out.stderr));

    let out = dckm(&["corr", "--data", &data, "--labels", "label", "--weights", &weights]);
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let rec = Record::parse(&format!("# corr v1\n{}", String::from_utf8_lossy(&out.stdout))).unwrap();
    let ratio = rec.get_f64("ratio").unwrap();
    let before = rec.get_f64("unweighted").unwrap();
    let after = rec.get_f64("weighted").unwrap();
    assert!((ratio - after / before).abs() < 1e-12);

    let out = dckm(&["corr", "--data", &data, "--labels", "label"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 1);

    let short = dir.path().join("short.txt");
    std::fs::write(&short, "0.5\n0.5\n").unwrap();
    let out = dckm(&["corr", "--data", &data, "--labels", "label", "--weights", short.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(EXIT_DATA));
}

#[test]
fn kmeans_has_no_weights_to_write() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.csv", &[]);
    let w = dir.path().join("w.txt").display().to_string();
    let out = dckm(&["fit", "--method", "kmeans", "--data", &data, "--restarts", "1", "--weights-out", &w]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.csv", &[]);
    let out = dckm(&["fit", "--method", "spectral", "--data", &data]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));

    let missing = dir.path().join("missing.csv").display().to_string();
    let out = dckm(&["fit", "--method", "kmeans", "--data", &missing]);
    assert_eq!(out.status.code(), Some(EXIT_DATA));

    let ragged = dir.path().join("ragged.csv");
    std::fs::write(&ragged, "a,b\n1,0\n0\n").unwrap();
    let out = dckm(&["fit", "--method", "kmeans", "--data", ragged.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(EXIT_DATA));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = dckm(&["bench", "--data", &data, "--labels", "label", "--methods="]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
}

#[test]
fn bench_cells_match_single_fits() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.csv", &[]);
    let table = dir.path().join("table.txt").display().to_string();
    let common = ["--labels", "label", "--k", "3", "--restarts", "2", "--seed", "5", "--max-iters", "15"];
    let mut args = vec![
        "bench",
        "--data",
        &data,
        "--methods",
        "kmeans,dckm",
        "--l1-grid",
        "0.1,10",
        "--l2-grid",
        "1",
        "--out",
        &table,
    ];
    args.extend_from_slice(&common);
    let out = dckm(&args);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("dckm gain"));
    let rec = Record::parse(&std::fs::read_to_string(&table).unwrap()).unwrap();
    assert_eq!(rec.kind, "dckm-bench");
    assert!(rec.get("improvement.0.nmi_pct").is_some());

    let l1 = rec.get_f64("cell.0.dckm.lambda1").unwrap().to_string();
    let single = dir.path().join("single.txt").display().to_string();
    let mut args = vec!["fit", "--method", "dckm", "--data", &data, "--l1", &l1, "--l2", "1", "--out", &single];
    args.extend_from_slice(&common);
    assert_eq!(dckm(&args).status.code(), Some(EXIT_OK));
    let fit = Record::parse(&std::fs::read_to_string(&single).unwrap()).unwrap();
    for (key, value) in &fit.entries {
        assert_eq!(rec.get(&format!("cell.0.dckm.{key}")), Some(value.as_str()), "{key}");
    }
}
