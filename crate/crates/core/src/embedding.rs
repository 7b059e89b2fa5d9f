//! Online probe embedding.
//!
//! A probe `p` with transition row `P_p` over the database receives gallery
//! scores `Q_pi = Σ_{l,j} P_pl Q_lj P_ij`. Grouping the right-hand factors,
//! `R = Q · P_gᵀ` (with `P_g` the gallery rows of `P`) is computed once
//! offline and every query is a single vector-matrix product `P_p · R`.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::{self, AffinityGraph, DistanceMatrix, GraphConfig};
use crate::labels::{ConstraintLabels, DatasetLayout};
use crate::linalg::{matmul_transposed_into, Matrix};
use crate::propagation::{iterate_accelerated_traced, PropagationConfig, SmoothedModel};

/// `R`, shaped `(N_g + N_l) × N_g`.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineFactor {
    pub r: Matrix,
    pub layout: DatasetLayout,
}

pub fn precompute_factor(model: &SmoothedModel, graph: &AffinityGraph) -> Result<OnlineFactor> {
    precompute_factor_with(model, graph, Execution::default())
}

pub fn precompute_factor_with(
    model: &SmoothedModel,
    graph: &AffinityGraph,
    exec: Execution,
) -> Result<OnlineFactor> {
    let layout = model.layout;
    let n = layout.total();
    if graph.p.shape() != (n, n) || model.q.shape() != (n, n) {
        return Err(Error::shape(
            "precompute_factor",
            format!(
                "layout has {n} vertices, Q is {:?}, P is {:?}",
                model.q.shape(),
                graph.p.shape()
            ),
        ));
    }
    let p_gallery = graph.p.block(0, layout.n_gallery, 0, n);
    let mut r = Matrix::zeros(n, layout.n_gallery);
    matmul_transposed_into(&model.q, &p_gallery, &mut r, exec)?;
    Ok(OnlineFactor { r, layout })
}

impl SmoothedModel {
    /// Computes and stores the online factor.
    pub fn attach_factor(&mut self, graph: &AffinityGraph) -> Result<&OnlineFactor> {
        let f = precompute_factor(self, graph)?;
        Ok(self.factor.insert(f))
    }
}

/// Gallery scores and the induced ranking (descending score, ties by index).
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub scores: Vec<f64>,
    pub order: Vec<usize>,
}

impl RankingResult {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
            Ordering::Equal => a.cmp(&b),
            o => o,
        });
        Self { scores, order }
    }

    /// Ranking by ascending distance, as used for the raw-distance baseline.
    pub fn from_distances(distances: &[f64]) -> Self {
        let scores = distances.iter().map(|d| -d).collect();
        Self::from_scores(scores)
    }
}

/// Scores every gallery instance for one probe transition row.
pub fn query(factor: &OnlineFactor, probe_row: &[f64]) -> Result<RankingResult> {
    if probe_row.len() != factor.r.rows() {
        return Err(Error::shape(
            "query",
            format!(
                "probe row has {} entries, database has {}",
                probe_row.len(),
                factor.r.rows()
            ),
        ));
    }
    Ok(RankingResult::from_scores(factor.r.vecmat(probe_row)?))
}

/// Everything the online stage needs: the factor plus the database
/// bandwidths used to turn probe distances into a transition row.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeMatcher {
    pub factor: OnlineFactor,
    pub sigmas: Vec<f64>,
    pub kernel_k: usize,
    pub sparsify_knn: Option<usize>,
}

impl ProbeMatcher {
    pub fn new(factor: OnlineFactor, graph: &AffinityGraph) -> Self {
        Self {
            factor,
            sigmas: graph.sigmas.clone(),
            kernel_k: graph.kernel_k,
            sparsify_knn: graph.sparsify_knn,
        }
    }

    pub fn transition_row(&self, dist_probe: &[f64]) -> Result<Vec<f64>> {
        graph::probe_transition_row(&self.sigmas, self.kernel_k, self.sparsify_knn, dist_probe)
    }

    pub fn rank(&self, dist_probe: &[f64]) -> Result<RankingResult> {
        query(&self.factor, &self.transition_row(dist_probe)?)
    }
}

/// Reference pipeline without probe embedding: rebuild the graph with the
/// probe as an extra vertex, rerun the propagation, and read the probe's row
/// of `Q` against the gallery. Cost per probe is that of a full learning run.
pub fn full_reiteration_scores(
    dist: &DistanceMatrix,
    labels: &ConstraintLabels,
    dist_probe: &[f64],
    graph_cfg: &GraphConfig,
    prop_cfg: &PropagationConfig,
    exec: Execution,
) -> Result<RankingResult> {
    let layout = labels.layout;
    let n = layout.total();
    if dist.len() != n || dist_probe.len() != n {
        return Err(Error::shape(
            "full_reiteration_scores",
            format!(
                "layout has {n} vertices, distances {} and probe {}",
                dist.len(),
                dist_probe.len()
            ),
        ));
    }
    // Probe goes first: vertex order [p | gallery | labeled].
    let d = dist.matrix();
    let augmented = Matrix::from_fn(n + 1, n + 1, |i, j| match (i, j) {
        (0, 0) => 0.0,
        (0, j) => dist_probe[j - 1],
        (i, 0) => dist_probe[i - 1],
        (i, j) => d[(i - 1, j - 1)],
    });
    let graph = graph::build_graph_with(&DistanceMatrix::new(augmented)?, graph_cfg, exec)?;
    let l = Matrix::from_fn(n + 1, n + 1, |i, j| {
        if i == 0 || j == 0 {
            0.0
        } else {
            labels.l[(i - 1, j - 1)]
        }
    });
    let run = iterate_accelerated_traced(&graph.p, &l, prop_cfg, exec, |_, _| {})?;
    let scores = run.q.row(0)[1..1 + layout.n_gallery].to_vec();
    Ok(RankingResult::from_scores(scores))
}
