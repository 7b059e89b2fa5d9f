use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ssm_core::graph::build_graph;
use ssm_core::io::{read_matrix_file, ModelFile};
use ssm_core::labels::{build_labels, DatasetLayout};
use ssm_core::propagation::closed_form_oracle;
use ssm_core::{DistanceMatrix, GraphConfig, Matrix};
use tempfile::TempDir;

fn ssm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssm"))
        .args(args)
        .output()
        .expect("spawn ssm")
}

fn ok(args: &[&str]) -> Output {
    let out = ssm(args);
    assert!(
        out.status.success(),
        "ssm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> (i32, String) {
    let out = ssm(args);
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Synth {
    _dir: TempDir,
    root: PathBuf,
}

impl Synth {
    fn new(extra: &[&str]) -> Self {
        let dir = TempDir::new().unwrap();
        let root = dir.path().to_path_buf();
        let mut args = vec![
            "synth",
            "--out",
            s(&root),
            "--identities",
            "12",
            "--distractors",
            "6",
        ];
        args.extend_from_slice(extra);
        ok(&args);
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn learn(&self, out: &str, extra: &[&str]) -> PathBuf {
        let model = self.path(out);
        let db = self.path("database.ssm");
        let labels = self.path("labels.csv");
        let mut args = vec![
            "learn",
            "--distances",
            s(&db),
            "--labels",
            s(&labels),
            "--out",
            s(&model),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        model
    }
}

#[test]
fn synth_learn_query_eval() {
    let d = Synth::new(&[]);
    for f in ["database.ssm", "labels.csv", "probes.ssm", "truth.csv"] {
        assert!(d.path(f).exists(), "{f}");
    }
    let model = d.learn("m.ssmm", &[]);
    let ranks = d.path("r.csv");
    ok(&[
        "query",
        "--model",
        s(&model),
        "--probes",
        s(&d.path("probes.ssm")),
        "--out",
        s(&ranks),
    ]);

    let text = fs::read_to_string(&ranks).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("probe,rank,gallery_index,score"));
    // 6 test identities, 6 + 6 gallery entries.
    assert_eq!(lines.count(), 6 * 12);

    let csv = d.path("rep.csv");
    let out = ok(&[
        "eval",
        "--rankings",
        s(&ranks),
        "--truth",
        s(&d.path("truth.csv")),
        "--rankings",
        s(&ranks),
        "--truth",
        s(&d.path("truth.csv")),
        "--csv",
        s(&csv),
    ]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("trial"));
    assert!(table.contains("trial1") && table.contains("trial2") && table.contains("mean"));
    let report = fs::read_to_string(&csv).unwrap();
    assert!(report.starts_with("trial,metric,rank,value\n"));
    assert!(report.contains("trial1,map,,"));
}

#[test]
fn learn_is_byte_deterministic() {
    let d = Synth::new(&["--seed", "5"]);
    let a = fs::read(d.learn("a.ssmm", &[])).unwrap();
    let b = fs::read(d.learn("b.ssmm", &[])).unwrap();
    let c = fs::read(d.learn("c.ssmm", &["--sequential"])).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    let e = fs::read(d.learn("e.ssmm", &["--alpha", "0.2"])).unwrap();
    assert_ne!(a, e);
}

#[test]
fn query_output_independent_of_batching() {
    let d = Synth::new(&[]);
    let model = d.learn("m.ssmm", &[]);
    let probes = d.path("probes.ssm");
    let one = ok(&[
        "query",
        "--model",
        s(&model),
        "--probes",
        s(&probes),
        "--batch",
        "1",
    ])
    .stdout;
    let many = ok(&[
        "query",
        "--model",
        s(&model),
        "--probes",
        s(&probes),
        "--batch",
        "4",
    ])
    .stdout;
    let seq = ok(&[
        "--sequential",
        "query",
        "--model",
        s(&model),
        "--probes",
        s(&probes),
    ])
    .stdout;
    assert_eq!(one, many);
    assert_eq!(one, seq);
}

#[test]
fn csv_fixture_model_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let pts: [f64; 6] = [0.0, 0.5, 1.2, 2.0, 2.6, 4.0];
    let mut dist = String::new();
    for a in pts {
        let row: Vec<String> = pts.iter().map(|b| format!("{}", (a - b).abs())).collect();
        dist.push_str(&row.join(","));
        dist.push('\n');
    }
    let dpath = dir.path().join("d.csv");
    fs::write(&dpath, dist).unwrap();
    // File order mixes blocks; the model must sort gallery first.
    let lpath = dir.path().join("labels.csv");
    fs::write(
        &lpath,
        "index,block,identity\n0,labeled,1\n1,gallery,\n2,labeled,1\n3,gallery,\n4,labeled,2\n5,gallery,\n",
    )
    .unwrap();
    let mpath = dir.path().join("m.ssmm");
    ok(&[
        "learn",
        "--distances",
        s(&dpath),
        "--labels",
        s(&lpath),
        "--out",
        s(&mpath),
        "--iters",
        "200",
        "--kernel-k",
        "2",
    ]);
    let model = ModelFile::load(&mpath).unwrap();
    let order: Vec<usize> = model.manifest.iter().map(|e| e.original_index).collect();
    assert_eq!(order, vec![1, 3, 5, 0, 2, 4]);

    let d = Matrix::from_fn(6, 6, |i, j| (pts[order[i]] - pts[order[j]]).abs());
    let graph = build_graph(
        &DistanceMatrix::new(d).unwrap(),
        &GraphConfig {
            kernel_k: 2,
            sparsify_knn: None,
        },
    )
    .unwrap();
    let labels = build_labels(DatasetLayout::new(3, 3), &[1, 1, 2], true).unwrap();
    let expected = closed_form_oracle(&graph.p, &labels.l, 0.1).unwrap();
    assert!(model.q.max_abs_diff(&expected).unwrap() <= 1e-10);
}

#[test]
fn config_file_then_flags() {
    let d = Synth::new(&[]);
    let cfg = d.path("cfg.toml");
    fs::write(&cfg, "alpha = 0.3\niters = 5\nsparsify_knn = 4\n").unwrap();
    let m = ModelFile::load(&d.learn("f.ssmm", &["--config", s(&cfg)])).unwrap();
    assert_eq!(m.propagation.alpha, 0.3);
    assert_eq!(m.propagation.iterations, 5);
    assert_eq!(m.graph.sparsify_knn, Some(4));
    assert_eq!(m.graph.kernel_k, 7);

    let m = ModelFile::load(&d.learn("g.ssmm", &["--config", s(&cfg), "--iters", "9"])).unwrap();
    assert_eq!((m.propagation.alpha, m.propagation.iterations), (0.3, 9));
}

#[test]
fn exit_codes_by_error_class() {
    let d = Synth::new(&[]);
    let db = d.path("database.ssm");
    let labels = d.path("labels.csv");
    let out = d.path("x.ssmm");
    let learn = |extra: &[&str]| {
        let mut a = vec![
            "learn",
            "--distances",
            s(&db),
            "--labels",
            s(&labels),
            "--out",
            s(&out),
        ];
        a.extend_from_slice(extra);
        code(&a)
    };

    assert_eq!(learn(&["--alpha", "1.5"]).0, 3);
    assert_eq!(learn(&["--alpha", "0"]).0, 3);
    assert_eq!(learn(&["--kernel-k", "0"]).0, 3);
    let bad_cfg = d.path("bad.toml");
    fs::write(&bad_cfg, "alpah = 0.2\n").unwrap();
    assert_eq!(learn(&["--config", s(&bad_cfg)]).0, 3);
    assert_eq!(
        code(&[
            "learn",
            "--distances",
            "/nonexistent.ssm",
            "--labels",
            s(&labels),
            "--out",
            s(&out)
        ])
        .0,
        1
    );
    assert_eq!(code(&["learn"]).0, 2);

    // Truncated distances.
    let bytes = fs::read(&db).unwrap();
    let cut = d.path("cut.ssm");
    fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    let (c, err) = code(&[
        "learn",
        "--distances",
        s(&cut),
        "--labels",
        s(&labels),
        "--out",
        s(&out),
    ]);
    assert_eq!(c, 4);
    assert!(err.contains("byte"), "{err}");

    // Labels that do not cover the matrix.
    let short = d.path("short.csv");
    fs::write(&short, "index,block,identity\n0,gallery,\n1,labeled,3\n").unwrap();
    assert_eq!(
        code(&[
            "learn",
            "--distances",
            s(&db),
            "--labels",
            s(&short),
            "--out",
            s(&out)
        ])
        .0,
        6
    );

    // Negative distance.
    let neg = d.path("neg.csv");
    fs::write(&neg, "0,-1\n-1,0\n").unwrap();
    let two = d.path("two.csv");
    fs::write(&two, "index,block,identity\n0,gallery,\n1,labeled,1\n").unwrap();
    assert_eq!(
        code(&[
            "learn",
            "--distances",
            s(&neg),
            "--labels",
            s(&two),
            "--out",
            s(&out)
        ])
        .0,
        5
    );

    // Probe rows of the wrong length carry their row index.
    let model = d.learn("m.ssmm", &[]);
    let probes = d.path("p.csv");
    fs::write(&probes, "1,2,3\n").unwrap();
    let (c, err) = code(&["query", "--model", s(&model), "--probes", s(&probes)]);
    assert_eq!(c, 6);
    assert!(err.contains("probe row 0"), "{err}");

    // A probe identity absent from the gallery is a domain error unless allowed.
    let ranks = d.path("r.csv");
    ok(&[
        "query",
        "--model",
        s(&model),
        "--probes",
        s(&d.path("probes.ssm")),
        "--out",
        s(&ranks),
    ]);
    let patched: String = fs::read_to_string(d.path("truth.csv"))
        .unwrap()
        .lines()
        .map(|l| {
            if l.starts_with("probe,0,") {
                "probe,0,9999\n".to_string()
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    let odd = d.path("odd.csv");
    fs::write(&odd, patched).unwrap();
    assert_eq!(
        code(&["eval", "--rankings", s(&ranks), "--truth", s(&odd)]).0,
        5
    );
    ok(&[
        "eval",
        "--rankings",
        s(&ranks),
        "--truth",
        s(&odd),
        "--allow-unmatched",
    ]);
    assert_eq!(
        code(&[
            "eval",
            "--rankings",
            s(&ranks),
            "--truth",
            s(&odd),
            "--truth",
            s(&odd)
        ])
        .0,
        3
    );
}

#[test]
fn synth_matrices_are_consistent() {
    let d = Synth::new(&["--seed", "3"]);
    let db = read_matrix_file(&d.path("database.ssm")).unwrap();
    let probes = read_matrix_file(&d.path("probes.ssm")).unwrap();
    assert_eq!(db.rows(), db.cols());
    assert_eq!(probes.cols(), db.cols());
    assert!(db.is_symmetric(0.0));
}

#[test]
fn bench_runs_small() {
    let out = ok(&[
        "bench",
        "--sizes",
        "20,40",
        "--reps",
        "1",
        "--query-n",
        "30",
        "--probes",
        "3",
        "--budgets",
        "2,4",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("fitted exponent"));
    assert!(text.contains("re-iteration"));
    assert!(text.contains("query latency"));
}
