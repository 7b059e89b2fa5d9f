//! End-to-end offline learning and online ranking over file-level inputs.

use crate::embedding::{precompute_factor_with, OnlineFactor, ProbeMatcher, RankingResult};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::exec::Execution;
use crate::graph::{build_graph_with, DistanceMatrix, GraphConfig};
use crate::io::{vertex_manifest, LabelRecord, ModelFile};
use crate::labels::build_labels;
use crate::propagation::{PropagationConfig, SmoothedModel};
use crate::synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnConfig {
    pub graph: GraphConfig,
    pub propagation: PropagationConfig,
    /// Whether labeled instances constrain themselves (`L_ii = 1`).
    pub labeled_diagonal: bool,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            graph: GraphConfig::default(),
            propagation: PropagationConfig::default(),
            labeled_diagonal: true,
        }
    }
}

/// Offline stage on a distance matrix in arbitrary file order. The label
/// records say which rows are gallery and which are labeled.
pub fn learn_model(
    dist: &DistanceMatrix,
    records: &[LabelRecord],
    cfg: &LearnConfig,
    exec: Execution,
) -> Result<ModelFile> {
    if records.len() != dist.len() {
        return Err(Error::shape(
            "learn_model",
            format!(
                "{} label rows for a {}-vertex distance matrix",
                records.len(),
                dist.len()
            ),
        ));
    }
    cfg.propagation.validate()?;
    let (layout, manifest) = vertex_manifest(records);
    if layout.n_gallery == 0 {
        return Err(Error::shape("learn_model", "labels mark no gallery rows"));
    }
    let order: Vec<usize> = manifest.iter().map(|e| e.original_index).collect();
    let dist = dist.permuted(&order)?;
    let identities: Vec<u64> = manifest[layout.n_gallery..]
        .iter()
        .map(|e| e.identity.expect("labeled rows carry identities"))
        .collect();

    let graph = build_graph_with(&dist, &cfg.graph, exec)?;
    let labels = build_labels(layout, &identities, cfg.labeled_diagonal)?;
    let model = SmoothedModel::learn_with(&graph, &labels, &cfg.propagation, exec)?;
    let factor = precompute_factor_with(&model, &graph, exec)?;
    Ok(ModelFile {
        layout,
        propagation: cfg.propagation,
        iterations_run: model.iterations_run,
        graph: cfg.graph,
        labeled_diagonal: cfg.labeled_diagonal,
        q: model.q,
        r: factor.r,
        sigmas: graph.sigmas,
        manifest,
    })
}

impl ModelFile {
    pub fn matcher(&self) -> ProbeMatcher {
        ProbeMatcher {
            factor: OnlineFactor {
                r: self.r.clone(),
                layout: self.layout,
            },
            sigmas: self.sigmas.clone(),
            kernel_k: self.graph.kernel_k,
            sparsify_knn: self.graph.sparsify_knn,
        }
    }
}

/// Ranks one probe whose distances are in original file order. Ranking
/// indices are gallery vertices; map them with
/// [`ModelFile::gallery_original_index`].
pub fn rank_probe(model: &ModelFile, matcher: &ProbeMatcher, raw: &[f64]) -> Result<RankingResult> {
    matcher.rank(&model.to_vertex_order(raw)?)
}

/// Learns on synthetic data and ranks its probes.
pub fn learned_rankings(
    data: &SyntheticData,
    cfg: &LearnConfig,
    exec: Execution,
) -> Result<Vec<RankingResult>> {
    let graph = build_graph_with(&data.database, &cfg.graph, exec)?;
    let labels = build_labels(data.layout, &data.labeled_identities, cfg.labeled_diagonal)?;
    let model = SmoothedModel::learn_with(&graph, &labels, &cfg.propagation, exec)?;
    let factor = precompute_factor_with(&model, &graph, exec)?;
    let matcher = ProbeMatcher::new(factor, &graph);
    crate::exec::map_range(exec, data.probe_distances.rows(), |p| {
        matcher.rank(data.probe_distances.row(p))
    })
    .into_iter()
    .collect()
}

/// Baseline and learned reports on one synthetic draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub seed: u64,
    pub baseline: EvalReport,
    pub learned: EvalReport,
}

pub fn compare_on_synthetic(
    spec: &SyntheticSpec,
    cfg: &LearnConfig,
    exec: Execution,
) -> Result<Comparison> {
    let data = generate_synthetic(spec)?;
    let baseline = evaluate(&data.baseline_rankings(), &data.truth)?;
    let learned = evaluate(&learned_rankings(&data, cfg, exec)?, &data.truth)?;
    Ok(Comparison {
        seed: spec.seed,
        baseline,
        learned,
    })
}
