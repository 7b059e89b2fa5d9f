//! Deterministic two-camera synthetic re-identification data.
//!
//! Each identity has a Gaussian center. Images alternate between camera A
//! and camera B; camera B images are shifted by one fixed offset vector, and
//! every image gets isotropic Gaussian noise. Half the identities form the
//! labeled block. For the rest, camera A images become probes and camera B
//! images join the gallery, together with distractors that match no probe.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::RankingResult;
use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::graph::DistanceMatrix;
use crate::labels::DatasetLayout;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_identities: usize,
    pub images_per_identity: usize,
    pub feature_dim: usize,
    /// Length of the camera B shift.
    pub camera_offset_scale: f64,
    /// Per-coordinate standard deviation of image noise.
    pub noise_scale: f64,
    pub n_distractors: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_identities: 50,
            images_per_identity: 2,
            feature_dim: 16,
            camera_offset_scale: 2.0,
            noise_scale: 0.6,
            n_distractors: 50,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::Config(format!(
                "need at least 2 identities to split labeled and test sets, got {}",
                self.n_identities
            )));
        }
        if self.images_per_identity < 2 {
            return Err(Error::Config(
                "need at least 2 images per identity (one per camera)".into(),
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        for (name, v) in [
            ("camera_offset_scale", self.camera_offset_scale),
            ("noise_scale", self.noise_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Identities assigned to the labeled block.
    pub fn n_labeled_identities(&self) -> usize {
        self.n_identities / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Database distances in `[gallery | labeled]` order.
    pub database: DistanceMatrix,
    pub layout: DatasetLayout,
    pub labeled_identities: Vec<u64>,
    /// One row per probe, one column per database instance.
    pub probe_distances: Matrix,
    pub truth: GroundTruth,
}

impl SyntheticData {
    /// Rankings by raw Euclidean distance to the gallery.
    pub fn baseline_rankings(&self) -> Vec<RankingResult> {
        let g = self.layout.n_gallery;
        (0..self.probe_distances.rows())
            .map(|p| RankingResult::from_distances(&self.probe_distances.row(p)[..g]))
            .collect()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let dim = spec.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let centers: Vec<Vec<f64>> = (0..spec.n_identities)
        .map(|_| gaussian(&mut rng, dim, 1.0))
        .collect();
    let offset = gaussian(&mut rng, dim, spec.camera_offset_scale);

    let image = |rng: &mut ChaCha8Rng, center: &[f64], camera_b: bool| -> Vec<f64> {
        let noise = gaussian(rng, dim, spec.noise_scale);
        center
            .iter()
            .zip(&noise)
            .zip(&offset)
            .map(|((c, n), o)| c + n + if camera_b { *o } else { 0.0 })
            .collect()
    };

    let n_lab_ids = spec.n_labeled_identities();
    let mut labeled: Vec<(u64, Vec<f64>)> = Vec::new();
    let mut gallery: Vec<(u64, Vec<f64>)> = Vec::new();
    let mut probes: Vec<(u64, Vec<f64>)> = Vec::new();
    for (id, center) in centers.iter().enumerate() {
        for m in 0..spec.images_per_identity {
            let camera_b = m % 2 == 1;
            let x = image(&mut rng, center, camera_b);
            let id = id as u64;
            if (id as usize) < n_lab_ids {
                labeled.push((id, x));
            } else if camera_b {
                gallery.push((id, x));
            } else {
                probes.push((id, x));
            }
        }
    }
    for k in 0..spec.n_distractors {
        let center = gaussian(&mut rng, dim, 1.0);
        let x = image(&mut rng, &center, true);
        gallery.push(((spec.n_identities + k) as u64, x));
    }
    gallery.shuffle(&mut rng);

    let layout = DatasetLayout::new(gallery.len(), labeled.len());
    let database: Vec<&Vec<f64>> = gallery.iter().chain(&labeled).map(|(_, x)| x).collect();
    let n = database.len();
    let d = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            euclidean(database[i], database[j])
        }
    });
    let probe_distances =
        Matrix::from_fn(probes.len(), n, |p, j| euclidean(&probes[p].1, database[j]));

    Ok(SyntheticData {
        database: DistanceMatrix::new(d)?,
        layout,
        labeled_identities: labeled.iter().map(|(id, _)| *id).collect(),
        probe_distances,
        truth: GroundTruth::new(
            probes.iter().map(|(id, _)| *id).collect(),
            gallery.iter().map(|(id, _)| *id).collect(),
        ),
    })
}
