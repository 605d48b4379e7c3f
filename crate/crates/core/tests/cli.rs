use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dbc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbc")).args(args).output().unwrap()
}

fn dbc_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbc"))
        .args(args)
        .env(key, value)
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 20 points in two well-separated blobs; ids `a0..a9`, `b0..b9`.
fn two_blobs(dir: &Path) -> PathBuf {
    let mut text = String::from("id,f0,f1,label\n");
    for i in 0..10 {
        text.push_str(&format!("a{i},{},{},0\n", 0.1 * i as f64, 0.05 * (i % 3) as f64));
    }
    for i in 0..10 {
        text.push_str(&format!("b{i},{},{},1\n", 20.0 + 0.1 * i as f64, 5.0 - 0.05 * (i % 4) as f64));
    }
    let path = dir.join("blobs.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn read_assignments(path: &Path) -> Vec<(String, usize)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let (id, c) = l.split_once('\t').unwrap();
            (id.to_string(), c.parse().unwrap())
        })
        .collect()
}

fn generate(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let mut args = vec!["generate", "--seed", "2", "--out", p(&data)];
    args.extend_from_slice(extra);
    assert!(dbc(&args).status.success());
    (data.join("features.csv"), data.join("truth.tsv"))
}

#[test]
fn cluster_two_blobs() {
    let dir = TempDir::new().unwrap();
    let input = two_blobs(dir.path());
    let out = dir.path().join("out");
    let o = dbc(&["cluster", "--input", p(&input), "--target-clusters", "2", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_assignments(&out.join("labels.tsv"));
    assert_eq!(rows.len(), 20);
    let ids: BTreeSet<usize> = rows.iter().map(|r| r.1).collect();
    assert_eq!(ids.len(), 2);
    for (id, c) in &rows {
        let expected = if id.starts_with('a') { rows[0].1 } else { rows[10].1 };
        assert_eq!(*c, expected, "{id}");
    }
    let merges = std::fs::read_to_string(out.join("merges.jsonl")).unwrap();
    assert_eq!(merges.lines().count(), 18);
    let first: serde_json::Value = serde_json::from_str(merges.lines().next().unwrap()).unwrap();
    for key in ["stage", "step", "a", "b", "value", "new_id", "n_a", "n_b"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["pairwise_f1"], 1.0);
    assert_eq!(metrics["mAP"], 1.0);
}

#[test]
fn nan_row_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(&input, "id,f0,f1\nx,1,2\ny,3,NaN\nz,0,0\n").unwrap();
    let o = dbc(&["cluster", "--input", p(&input), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.csv:3") && err.contains("row 1") && err.contains("`y`"), "{err}");
}

#[test]
fn malformed_csv_reports_line() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("short.csv");
    std::fs::write(&input, "id,f0,f1\nx,1,2\ny,3\n").unwrap();
    let o = dbc(&["cluster", "--input", p(&input), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("short.csv:3"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let input = two_blobs(dir.path());
    let out = dir.path().join("o");
    let cases: [&[&str]; 5] = [
        &["cluster", "--input", p(&input), "--merge-percent", "0.01", "--out", p(&out)],
        &["cluster", "--input", p(&input), "--criterion", "ward", "--out", p(&out)],
        &["cluster", "--input", p(&input), "--lambda=-0.5", "--out", p(&out)],
        &["cluster", "--input", "/does/not/exist.csv", "--out", p(&out)],
        &["cluster", "--input", p(&input), "--intra-mode", "fuzzy"],
    ];
    for args in cases {
        let o = dbc(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    let o = dbc_env(&["cluster", "--input", p(&input), "--out", p(&out)], "DBC_THREADS", "zero");
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(dbc(&["--help"]).status.code(), Some(0));
    assert_eq!(dbc(&["bogus"]).status.code(), Some(1));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let (input, truth) = generate(dir.path(), &[]);
    let one = dir.path().join("one");
    let two = dir.path().join("two");
    for (out, threads) in [(&one, "1"), (&two, "3")] {
        let args = [
            "cluster",
            "--input",
            p(&input),
            "--labels",
            p(&truth),
            "--target-clusters",
            "50",
            "--out",
            p(out),
        ];
        assert!(dbc_env(&args, "DBC_THREADS", threads).status.success());
    }
    for file in ["labels.tsv", "merges.jsonl", "metrics.json"] {
        assert_eq!(std::fs::read(one.join(file)).unwrap(), std::fs::read(two.join(file)).unwrap());
    }
}

#[test]
fn zero_stage_alternation_returns_inputs() {
    let dir = TempDir::new().unwrap();
    let input = two_blobs(dir.path());
    let out = dir.path().join("out");
    let o = dbc(&["alternate", "--input", p(&input), "--stages", "0", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let store = dbc::io::read_dbcf(&out.join("features.dbcf")).unwrap();
    let original = dbc::io::read_csv(&input).unwrap();
    for (a, b) in store.as_slice().iter().zip(original.as_slice()) {
        assert_eq!(*a, (*b as f32) as f64);
    }
    let rows = read_assignments(&out.join("labels.tsv"));
    assert!(rows.iter().enumerate().all(|(i, r)| r.1 == i));
    assert_eq!(std::fs::read_to_string(out.join("merges.jsonl")).unwrap(), "");
}

#[test]
fn alternation_history_counts_down_by_k() {
    let dir = TempDir::new().unwrap();
    let (input, truth) = generate(dir.path(), &[]);
    let out = dir.path().join("out");
    let o = dbc(&[
        "alternate", "--input", p(&input), "--labels", p(&truth), "--epochs", "1", "--stages", "4", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let n = dbc::io::read_csv(&input).unwrap().len();
    let k = (0.05 * n as f64).round() as usize;
    let history: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(out.join("history.json")).unwrap()).unwrap();
    assert_eq!(history.len(), 4);
    for (s, h) in history.iter().enumerate() {
        assert_eq!(h["cluster_count"].as_u64().unwrap() as usize, n - (s + 1) * k);
    }
    let best = history.iter().map(|h| h["perf"].as_f64().unwrap()).fold(f64::MIN, f64::max);
    assert!(best >= history[0]["perf"].as_f64().unwrap());
    assert!(out.join("metrics.json").exists());
    assert_eq!(dbc::io::read_dbcf(&out.join("features.dbcf")).unwrap().len(), n);
}

#[test]
fn ablation_on_separable_data() {
    let dir = TempDir::new().unwrap();
    let (input, truth) = generate(dir.path(), &["--spread", "0"]);
    let out = dir.path().join("out");
    let o = dbc(&[
        "ablate", "--input", p(&input), "--labels", p(&truth), "--pipeline", "cluster", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["criterion"].as_str().unwrap()).collect();
    assert_eq!(names, ["single", "single-sizereg", "dispersion-noreg", "dispersion"]);
    for r in &rows {
        for key in ["rank1", "mAP", "purity", "clusters"] {
            assert!(r.get(key).is_some());
        }
        // λ (n_a + n_b) grows with identity size, so only the scale-free
        // criteria are guaranteed to solve collapsed identities at λ = 0.5
        if r["criterion"] != "single-sizereg" {
            assert_eq!(r["pairwise_f1"], 1.0, "{r}");
        }
    }
    let table = std::fs::read_to_string(out.join("ablation.txt")).unwrap();
    assert_eq!(table.lines().count(), 5);

    let small = dir.path().join("small");
    let o = dbc(&[
        "ablate", "--input", p(&input), "--labels", p(&truth), "--pipeline", "cluster", "--lambda", "0.001", "--out",
        p(&small),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(small.join("ablation.json")).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r["pairwise_f1"] == 1.0), "{rows:?}");

    let o = dbc(&["ablate", "--input", p(&input), "--pipeline", "cluster", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ground-truth"));
}

#[test]
fn sweep_deduplicates_lambdas() {
    let dir = TempDir::new().unwrap();
    let (input, truth) = generate(dir.path(), &[]);
    let out = dir.path().join("out");
    let o = dbc(&[
        "sweep-lambda",
        "--input",
        p(&input),
        "--labels",
        p(&truth),
        "--pipeline",
        "cluster",
        "--lambdas",
        "0,0.5,0,0.1",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("duplicate lambda 0"), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda,rank1,mAP,f1,purity");
    let lambdas: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(lambdas, ["0.0", "0.5", "0.1"]);

    let o = dbc(&["sweep-lambda", "--input", p(&input), "--labels", p(&truth), "--lambdas", "", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_scaling_report() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = dbc(&["bench-scaling", "--sizes", "200,400,800", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("scaling.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("log-log slope"));
    assert!(out.join("scaling_slope.json").exists());

    let o = dbc(&["bench-scaling", "--sizes", "400,200", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn dbcf_input_round_trip() {
    let dir = TempDir::new().unwrap();
    let input = two_blobs(dir.path());
    let store = dbc::io::read_csv(&input).unwrap();
    let bin = dir.path().join("blobs.dbcf");
    dbc::io::write_dbcf(&bin, &store).unwrap();
    let out = dir.path().join("out");
    let o = dbc(&[
        "cluster", "--input", p(&bin), "--format", "dbcf", "--target-clusters", "2", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_assignments(&out.join("labels.tsv"));
    assert_eq!(rows.iter().map(|r| r.1).collect::<BTreeSet<_>>().len(), 2);
}
