//! Affinity graph over database instances.
//!
//! Edge weights come from a self-tuning Gaussian kernel,
//! `W_ij = exp(-d_ij² / (σ_i σ_j))`, where `σ_i` is the distance from `i` to
//! its k-th nearest neighbour. The transition matrix is the row-normalized `W`.

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::linalg::{row_normalize, Matrix};

pub const DEFAULT_KERNEL_K: usize = 7;

/// Asymmetry tolerated on input before a distance matrix is rejected.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Symmetric, non-negative pairwise dissimilarities with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    d: Matrix,
}

impl DistanceMatrix {
    /// Validates `d`. Entries within [`SYMMETRY_TOL`] of symmetric are averaged
    /// so the stored matrix is exactly symmetric.
    pub fn new(d: Matrix) -> Result<Self> {
        const OP: &str = "DistanceMatrix";
        if !d.is_square() || d.is_empty() {
            return Err(Error::shape(
                OP,
                format!(
                    "expected a non-empty square matrix, got {}x{}",
                    d.rows(),
                    d.cols()
                ),
            ));
        }
        let n = d.rows();
        let mut sym = d.clone();
        for i in 0..n {
            if d[(i, i)].abs() > SYMMETRY_TOL {
                return Err(Error::domain(
                    OP,
                    format!("diagonal entry {i} is {} (must be 0)", d[(i, i)]),
                ));
            }
            sym[(i, i)] = 0.0;
            for j in 0..i {
                let (a, b) = (d[(i, j)], d[(j, i)]);
                if a < 0.0 || b < 0.0 {
                    return Err(Error::domain(
                        OP,
                        format!("negative distance at ({i}, {j})"),
                    ));
                }
                if (a - b).abs() > SYMMETRY_TOL {
                    return Err(Error::domain(
                        OP,
                        format!("not symmetric at ({i}, {j}): {a} vs {b}"),
                    ));
                }
                let m = 0.5 * (a + b);
                sym[(i, j)] = m;
                sym[(j, i)] = m;
            }
        }
        Ok(Self { d: sym })
    }

    pub fn len(&self) -> usize {
        self.d.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.d
    }

    pub fn into_matrix(self) -> Matrix {
        self.d
    }

    /// Restricts to the instances in `order` (in that order).
    pub fn permuted(&self, order: &[usize]) -> Result<DistanceMatrix> {
        if let Some(&bad) = order.iter().find(|&&i| i >= self.len()) {
            return Err(Error::shape(
                "DistanceMatrix::permuted",
                format!("index {bad} out of range for {} instances", self.len()),
            ));
        }
        let d = Matrix::from_fn(order.len(), order.len(), |i, j| {
            self.d[(order[i], order[j])]
        });
        Ok(Self { d })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphConfig {
    /// Neighbour rank defining each instance's bandwidth.
    pub kernel_k: usize,
    /// Keep only symmetric k-nearest-neighbour edges when set.
    pub sparsify_knn: Option<usize>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            kernel_k: DEFAULT_KERNEL_K,
            sparsify_knn: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    pub w: Matrix,
    pub p: Matrix,
    pub sigmas: Vec<f64>,
    pub kernel_k: usize,
    pub sparsify_knn: Option<usize>,
}

/// Value of the `k`-th smallest element (1-based) of `values`.
fn kth_smallest(values: &mut [f64], k: usize) -> f64 {
    let (_, v, _) = values.select_nth_unstable_by(k - 1, f64::total_cmp);
    *v
}

/// Self-tuning bandwidths: distance from each instance to its `kernel_k`-th
/// nearest other instance. Zero bandwidths fall back to the smallest positive
/// one (or 1 when every bandwidth is zero).
pub fn self_tuning_sigmas(dist: &DistanceMatrix, kernel_k: usize) -> Result<Vec<f64>> {
    let n = dist.len();
    if kernel_k == 0 || kernel_k >= n {
        return Err(Error::Config(format!(
            "kernel_k must lie in 1..{n} for {n} instances, got {kernel_k}"
        )));
    }
    let d = dist.matrix();
    let mut sigmas: Vec<f64> = (0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d[(i, j)]).collect();
            kth_smallest(&mut others, kernel_k)
        })
        .collect();
    let fallback = sigmas
        .iter()
        .copied()
        .filter(|&s| s > 0.0)
        .fold(f64::INFINITY, f64::min);
    let fallback = if fallback.is_finite() { fallback } else { 1.0 };
    for s in &mut sigmas {
        if *s <= 0.0 {
            *s = fallback;
        }
    }
    Ok(sigmas)
}

#[inline]
pub fn gaussian_affinity(d: f64, sigma_i: f64, sigma_j: f64) -> f64 {
    (-(d * d) / (sigma_i * sigma_j)).exp()
}

/// Dense kernel matrix for fixed bandwidths, zero on the diagonal.
pub fn kernel_weights(dist: &DistanceMatrix, sigmas: &[f64], exec: Execution) -> Result<Matrix> {
    let n = dist.len();
    if sigmas.len() != n {
        return Err(Error::shape(
            "kernel_weights",
            format!("{} bandwidths for {n} instances", sigmas.len()),
        ));
    }
    let d = dist.matrix();
    let mut w = Matrix::zeros(n, n);
    exec::for_each_chunk_mut(exec, w.data_mut(), n, |i, row| {
        for (j, x) in row.iter_mut().enumerate() {
            if j != i {
                *x = gaussian_affinity(d[(i, j)], sigmas[i], sigmas[j]);
            }
        }
    });
    Ok(w)
}

/// Indices of the `k` nearest entries of `row`, skipping `skip`.
fn nearest(row: &[f64], k: usize, skip: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).filter(|&j| Some(j) != skip).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn build_graph(dist: &DistanceMatrix, cfg: &GraphConfig) -> Result<AffinityGraph> {
    build_graph_with(dist, cfg, Execution::default())
}

pub fn build_graph_with(
    dist: &DistanceMatrix,
    cfg: &GraphConfig,
    exec: Execution,
) -> Result<AffinityGraph> {
    let n = dist.len();
    let sigmas = self_tuning_sigmas(dist, cfg.kernel_k)?;
    let mut w = kernel_weights(dist, &sigmas, exec)?;

    if let Some(k) = cfg.sparsify_knn {
        if k == 0 || k >= n {
            return Err(Error::Config(format!(
                "sparsify_knn must lie in 1..{n}, got {k}"
            )));
        }
        let d = dist.matrix();
        let knn: Vec<Vec<usize>> = exec::map_range(exec, n, |i| nearest(d.row(i), k, Some(i)));
        let mut keep = vec![false; n * n];
        for (i, nbrs) in knn.iter().enumerate() {
            for &j in nbrs {
                keep[i * n + j] = true;
                keep[j * n + i] = true;
            }
        }
        for i in 0..n {
            for j in 0..n {
                if !keep[i * n + j] {
                    w[(i, j)] = 0.0;
                }
            }
        }
    }

    let p = row_normalize(&w)?;
    Ok(AffinityGraph {
        w,
        p,
        sigmas,
        kernel_k: cfg.kernel_k,
        sparsify_knn: cfg.sparsify_knn,
    })
}

/// Transition probabilities from an unseen probe to each database instance.
///
/// The probe bandwidth is the `kernel_k`-th smallest probe distance; a zero
/// bandwidth falls back to the smallest database bandwidth. All-zero rows
/// become uniform.
pub fn probe_transition_row(
    sigmas: &[f64],
    kernel_k: usize,
    sparsify_knn: Option<usize>,
    dist_probe: &[f64],
) -> Result<Vec<f64>> {
    const OP: &str = "probe_transition_row";
    let n = sigmas.len();
    if dist_probe.len() != n {
        return Err(Error::shape(
            OP,
            format!(
                "probe has {} distances, database has {n} instances",
                dist_probe.len()
            ),
        ));
    }
    if let Some(j) = dist_probe
        .iter()
        .position(|d| !(d.is_finite() && *d >= 0.0))
    {
        return Err(Error::domain(
            OP,
            format!(
                "distance {j} is {} (must be finite and >= 0)",
                dist_probe[j]
            ),
        ));
    }
    if kernel_k == 0 || kernel_k > n {
        return Err(Error::Config(format!(
            "kernel_k must lie in 1..={n} for a probe row, got {kernel_k}"
        )));
    }
    let mut sigma_p = kth_smallest(&mut dist_probe.to_vec(), kernel_k);
    if sigma_p <= 0.0 {
        sigma_p = sigmas.iter().copied().fold(f64::INFINITY, f64::min);
    }

    let mut row: Vec<f64> = dist_probe
        .iter()
        .zip(sigmas)
        .map(|(&d, &s)| gaussian_affinity(d, sigma_p, s))
        .collect();
    if let Some(k) = sparsify_knn {
        let kept = nearest(dist_probe, k.min(n), None);
        let mut mask = vec![false; n];
        kept.into_iter().for_each(|j| mask[j] = true);
        row.iter_mut()
            .zip(mask)
            .filter(|(_, m)| !m)
            .for_each(|(x, _)| *x = 0.0);
    }
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        row.iter_mut().for_each(|x| *x /= sum);
    } else {
        row.fill(1.0 / n as f64);
    }
    Ok(row)
}

impl AffinityGraph {
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn probe_transition_row(&self, dist_probe: &[f64]) -> Result<Vec<f64>> {
        probe_transition_row(&self.sigmas, self.kernel_k, self.sparsify_knn, dist_probe)
    }
}
