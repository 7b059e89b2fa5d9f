//! Timing harness for the offline/online cost split.
//!
//! Three measurements: offline iteration time against `N` with a log-log
//! power fit (cubic expected), per-probe query time against a per-probe
//! full re-iteration, and query latency for models learned with different
//! iteration budgets.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{full_reiteration_scores, precompute_factor_with, ProbeMatcher};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::{build_graph_with, AffinityGraph, DistanceMatrix, GraphConfig};
use crate::labels::{build_labels, ConstraintLabels, DatasetLayout};
use crate::linalg::Matrix;
use crate::propagation::{iterate_accelerated_traced, PropagationConfig, SmoothedModel};

const WORKLOAD_DIM: usize = 8;

/// Random points in the unit cube: half gallery, half labeled in pairs.
#[derive(Debug, Clone)]
pub struct Workload {
    pub dist: DistanceMatrix,
    pub labels: ConstraintLabels,
    /// One row per probe, distances to every database vertex.
    pub probes: Matrix,
}

pub fn random_workload(n: usize, n_probes: usize, seed: u64) -> Result<Workload> {
    if n < 4 || n_probes == 0 {
        return Err(Error::Config(format!(
            "workload needs n >= 4 and at least one probe, got n={n}, probes={n_probes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut point = || -> Vec<f64> { (0..WORKLOAD_DIM).map(|_| rng.random::<f64>()).collect() };
    let pts: Vec<Vec<f64>> = (0..n).map(|_| point()).collect();
    let probe_pts: Vec<Vec<f64>> = (0..n_probes).map(|_| point()).collect();
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let d = Matrix::from_fn(
        n,
        n,
        |i, j| if i == j { 0.0 } else { dist(&pts[i], &pts[j]) },
    );
    let probes = Matrix::from_fn(n_probes, n, |p, j| dist(&probe_pts[p], &pts[j]));
    let layout = DatasetLayout::new(n - n / 2, n / 2);
    let ids: Vec<u64> = (0..layout.n_labeled as u64).map(|i| i / 2).collect();
    Ok(Workload {
        dist: DistanceMatrix::new(d)?,
        labels: build_labels(layout, &ids, true)?,
        probes,
    })
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, Duration)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed()))
}

/// Least-squares fit of `y = c · x^e` on log-log axes; returns `(e, c)`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let k = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let e = sxy / sxx;
    Some((e, (my - e * mx).exp()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineScaling {
    /// `(N, best-of-reps seconds)` for the propagation alone.
    pub samples: Vec<(usize, f64)>,
    pub exponent: f64,
}

/// Times `T` accelerated iterations for each size, keeping the fastest of
/// `reps` runs.
pub fn offline_scaling(
    sizes: &[usize],
    reps: usize,
    cfg: &PropagationConfig,
    graph_cfg: &GraphConfig,
    exec: Execution,
) -> Result<OfflineScaling> {
    let mut samples = Vec::with_capacity(sizes.len());
    for (i, &n) in sizes.iter().enumerate() {
        let w = random_workload(n, 1, 1000 + i as u64)?;
        let graph = build_graph_with(&w.dist, graph_cfg, exec)?;
        let mut best = f64::INFINITY;
        for _ in 0..reps.max(1) {
            let (_, t) =
                timed(|| iterate_accelerated_traced(&graph.p, &w.labels.l, cfg, exec, |_, _| {}))?;
            best = best.min(t.as_secs_f64());
        }
        samples.push((n, best));
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(n, t)| (n as f64, t)).collect();
    let (exponent, _) = fit_power_law(&pts)
        .ok_or_else(|| Error::Config("scaling fit needs at least two distinct sizes".into()))?;
    Ok(OfflineScaling { samples, exponent })
}

/// Per-probe query time: the fastest of `reps` passes through all probes,
/// divided by the probe count.
pub fn time_queries(matcher: &ProbeMatcher, probes: &Matrix, reps: usize) -> Result<Duration> {
    let mut best = Duration::MAX;
    let mut sink = 0.0;
    for _ in 0..reps.max(1) {
        let (_, t) = timed(|| {
            for p in 0..probes.rows() {
                let r = matcher.rank(probes.row(p))?;
                sink += r.scores[r.order[0]];
            }
            Ok(())
        })?;
        best = best.min(t);
    }
    std::hint::black_box(sink);
    Ok(best / probes.rows() as u32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedReport {
    pub n: usize,
    pub iterations: usize,
    pub query_per_probe: Duration,
    pub reiteration_per_probe: Duration,
}

impl SpeedReport {
    pub fn ratio(&self) -> f64 {
        self.reiteration_per_probe.as_secs_f64() / self.query_per_probe.as_secs_f64().max(1e-12)
    }
}

fn learn_matcher(
    w: &Workload,
    graph: &AffinityGraph,
    cfg: &PropagationConfig,
    exec: Execution,
) -> Result<ProbeMatcher> {
    let model = SmoothedModel::learn_with(graph, &w.labels, cfg, exec)?;
    let factor = precompute_factor_with(&model, graph, exec)?;
    Ok(ProbeMatcher::new(factor, graph))
}

/// Online query through the precomputed factor against rebuilding the
/// graph and re-running propagation for each of `slow_probes` probes.
pub fn query_vs_reiteration(
    w: &Workload,
    graph_cfg: &GraphConfig,
    cfg: &PropagationConfig,
    slow_probes: usize,
    query_reps: usize,
    exec: Execution,
) -> Result<SpeedReport> {
    let graph = build_graph_with(&w.dist, graph_cfg, exec)?;
    let matcher = learn_matcher(w, &graph, cfg, exec)?;
    let query = time_queries(&matcher, &w.probes, query_reps)?;

    Ok(SpeedReport {
        n: w.dist.len(),
        iterations: cfg.iterations,
        query_per_probe: query,
        reiteration_per_probe: time_reiteration(w, graph_cfg, cfg, slow_probes, exec)?,
    })
}

/// Mean per-probe time of the reference path for the first `slow_probes`
/// probes: graph rebuild plus a full propagation run each.
pub fn time_reiteration(
    w: &Workload,
    graph_cfg: &GraphConfig,
    cfg: &PropagationConfig,
    slow_probes: usize,
    exec: Execution,
) -> Result<Duration> {
    let slow = slow_probes.clamp(1, w.probes.rows());
    let (_, total) = timed(|| {
        for p in 0..slow {
            full_reiteration_scores(&w.dist, &w.labels, w.probes.row(p), graph_cfg, cfg, exec)?;
        }
        Ok(())
    })?;
    Ok(total / slow as u32)
}

/// Query latency for models learned with each budget in `budgets`. One
/// propagation run to the largest budget supplies every snapshot.
pub fn query_latency_by_iterations(
    w: &Workload,
    graph_cfg: &GraphConfig,
    alpha: f64,
    budgets: &[usize],
    query_reps: usize,
    exec: Execution,
) -> Result<Vec<(usize, Duration)>> {
    if budgets.is_empty() || budgets.contains(&0) {
        return Err(Error::Config("iteration budgets must be positive".into()));
    }
    let max_t = budgets.iter().copied().max().unwrap_or(0);
    let cfg = PropagationConfig {
        alpha,
        iterations: max_t,
        early_stop_tol: 0.0,
    };
    let graph = build_graph_with(&w.dist, graph_cfg, exec)?;
    let mut snapshots: Vec<(usize, Matrix)> = Vec::new();
    iterate_accelerated_traced(&graph.p, &w.labels.l, &cfg, exec, |t, q| {
        if budgets.contains(&t) {
            snapshots.push((t, q.clone()));
        }
    })?;
    let mut out = Vec::with_capacity(budgets.len());
    for &t in budgets {
        let q = snapshots
            .iter()
            .find(|(s, _)| *s == t)
            .map(|(_, q)| q.clone())
            .expect("every budget is observed");
        let model = SmoothedModel {
            q,
            layout: w.labels.layout,
            config: PropagationConfig {
                iterations: t,
                ..cfg
            },
            iterations_run: t,
            factor: None,
        };
        let factor = precompute_factor_with(&model, &graph, exec)?;
        let matcher = ProbeMatcher::new(factor, &graph);
        out.push((t, time_queries(&matcher, &w.probes, query_reps)?));
    }
    Ok(out)
}

fn fmt_duration(d: Duration) -> String {
    let s = d.as_secs_f64();
    if s >= 1.0 {
        format!("{s:.3} s")
    } else if s >= 1e-3 {
        format!("{:.3} ms", s * 1e3)
    } else {
        format!("{:.3} us", s * 1e6)
    }
}

pub fn format_scaling(s: &OfflineScaling) -> String {
    let mut out = String::from("offline propagation time\n");
    let _ = writeln!(out, "{:>8} {:>12}", "N", "seconds");
    for &(n, t) in &s.samples {
        let _ = writeln!(out, "{n:>8} {t:>12.4}");
    }
    let _ = writeln!(out, "fitted exponent: {:.2}", s.exponent);
    out
}

pub fn format_speed(reports: &[SpeedReport]) -> String {
    let mut out = String::from("per-probe online cost\n");
    let _ = writeln!(
        out,
        "{:>8} {:>6} {:>14} {:>14} {:>10}",
        "N", "T", "query", "re-iteration", "ratio"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:>8} {:>6} {:>14} {:>14} {:>10.0}",
            r.n,
            r.iterations,
            fmt_duration(r.query_per_probe),
            fmt_duration(r.reiteration_per_probe),
            r.ratio()
        );
    }
    out
}

pub fn format_latency(n: usize, rows: &[(usize, Duration)]) -> String {
    let mut out = format!("query latency by iteration budget (N = {n})\n");
    let _ = writeln!(out, "{:>6} {:>14}", "T", "query");
    for &(t, d) in rows {
        let _ = writeln!(out, "{t:>6} {:>14}", fmt_duration(d));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_fit_recovers_exponent() {
        let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0, 80.0]
            .iter()
            .map(|&x: &f64| (x, 0.5 * x.powf(2.75)))
            .collect();
        let (e, c) = fit_power_law(&pts).unwrap();
        assert!((e - 2.75).abs() < 1e-12);
        assert!((c - 0.5).abs() < 1e-10);
        assert!(fit_power_law(&pts[..1]).is_none());
        assert!(fit_power_law(&[(1.0, 1.0), (1.0, 2.0)]).is_none());
        assert!(fit_power_law(&[(1.0, 0.0), (2.0, 2.0)]).is_none());
    }

    #[test]
    fn workload_shape() {
        let w = random_workload(9, 3, 4).unwrap();
        assert_eq!(w.dist.len(), 9);
        assert_eq!(w.labels.layout, DatasetLayout::new(5, 4));
        assert_eq!(w.probes.shape(), (3, 9));
        assert!(random_workload(3, 1, 0).is_err());
    }

    #[test]
    fn small_reports_run() {
        let w = random_workload(24, 4, 2).unwrap();
        let g = GraphConfig::default();
        let cfg = PropagationConfig::default();
        let s = query_vs_reiteration(&w, &g, &cfg, 1, 2, Execution::Sequential).unwrap();
        assert_eq!((s.n, s.iterations), (24, 30));
        assert!(s.ratio() > 0.0);
        let rows =
            query_latency_by_iterations(&w, &g, 0.1, &[1, 3], 1, Execution::Sequential).unwrap();
        assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 3]);
        assert!(
            query_latency_by_iterations(&w, &g, 0.1, &[0, 3], 1, Execution::Sequential).is_err()
        );
        let sc = offline_scaling(&[16, 32], 1, &cfg, &g, Execution::Sequential).unwrap();
        assert!(format_scaling(&sc).contains("fitted exponent"));
        assert!(format_speed(&[s]).contains("re-iteration"));
    }
}
