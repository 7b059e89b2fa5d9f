use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ssm_core::bench::random_workload;
use ssm_core::embedding::precompute_factor_with;
use ssm_core::exec::map_range;
use ssm_core::graph::build_graph_with;
use ssm_core::linalg::matmul_with;
use ssm_core::{Execution, GraphConfig, Matrix, ProbeMatcher, PropagationConfig, SmoothedModel};

const POLICIES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [128, 512] {
        let a = Matrix::from_fn(n, n, |i, j| ((i * 31 + j * 17) % 97) as f64 / 97.0);
        let b = a.transpose();
        for (name, exec) in POLICIES {
            g.bench_with_input(BenchmarkId::new(name, n), &n, |bch, _| {
                bch.iter(|| matmul_with(&a, &b, exec).unwrap())
            });
        }
    }
    g.finish();
}

fn graph_build(c: &mut Criterion) {
    let mut g = c.benchmark_group("graph_build");
    let w = random_workload(800, 1, 3).unwrap();
    for (name, exec) in POLICIES {
        g.bench_function(name, |bch| {
            bch.iter(|| build_graph_with(&w.dist, &GraphConfig::default(), exec).unwrap())
        });
    }
    g.finish();
}

fn batch_query(c: &mut Criterion) {
    let mut g = c.benchmark_group("batch_query");
    g.sample_size(20);
    let w = random_workload(600, 200, 5).unwrap();
    let graph = build_graph_with(&w.dist, &GraphConfig::default(), Execution::default()).unwrap();
    let model = SmoothedModel::learn(&graph, &w.labels, &PropagationConfig::default()).unwrap();
    let factor = precompute_factor_with(&model, &graph, Execution::default()).unwrap();
    let matcher = ProbeMatcher::new(factor, &graph);
    for (name, exec) in POLICIES {
        g.bench_function(name, |bch| {
            bch.iter(|| {
                map_range(exec, w.probes.rows(), |p| {
                    matcher.rank(w.probes.row(p)).unwrap()
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, matmul, graph_build, batch_query);
criterion_main!(benches);
