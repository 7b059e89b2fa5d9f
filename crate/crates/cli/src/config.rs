//! Learning parameters: built-in defaults, then an optional TOML file, then
//! explicit command-line flags.

use std::path::Path;

use anyhow::Context;
use clap::Args;
use serde::Deserialize;
use ssm_core::{GraphConfig, LearnConfig, PropagationConfig};

#[derive(Debug, Default, Clone, Args)]
pub struct ParamFlags {
    /// Propagation weight in (0, 1) [default: 0.1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Iteration budget T [default: 30]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Neighbour rank used for the self-tuning bandwidth [default: 7]
    #[arg(long)]
    pub kernel_k: Option<usize>,
    /// Keep only mutual-or k-nearest-neighbour edges [default: off]
    #[arg(long)]
    pub sparsify_knn: Option<usize>,
    /// Stop early once successive iterates differ by at most this [default: 0, off]
    #[arg(long)]
    pub early_stop_tol: Option<f64>,
    /// Drop the self-pair constraints on labeled instances
    #[arg(long)]
    pub no_labeled_diagonal: bool,
    /// TOML file with any of: alpha, iters, kernel_k, sparsify_knn,
    /// early_stop_tol, labeled_diagonal
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub alpha: Option<f64>,
    pub iters: Option<usize>,
    pub kernel_k: Option<usize>,
    pub sparsify_knn: Option<usize>,
    pub early_stop_tol: Option<f64>,
    pub labeled_diagonal: Option<bool>,
}

/// Unreadable files are I/O errors; malformed contents are config errors.
pub fn load_file(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text)
        .map_err(|e| ssm_core::Error::Config(format!("{}: {e}", path.display())).into())
}

impl ParamFlags {
    pub fn resolve(&self) -> anyhow::Result<LearnConfig> {
        let file = match &self.config {
            Some(p) => load_file(p)?,
            None => FileConfig::default(),
        };
        Ok(merge(self, &file))
    }
}

pub fn merge(flags: &ParamFlags, file: &FileConfig) -> LearnConfig {
    let d = LearnConfig::default();
    let sparsify = flags.sparsify_knn.or(file.sparsify_knn).filter(|&k| k > 0);
    LearnConfig {
        graph: GraphConfig {
            kernel_k: flags.kernel_k.or(file.kernel_k).unwrap_or(d.graph.kernel_k),
            sparsify_knn: sparsify,
        },
        propagation: PropagationConfig {
            alpha: flags.alpha.or(file.alpha).unwrap_or(d.propagation.alpha),
            iterations: flags
                .iters
                .or(file.iters)
                .unwrap_or(d.propagation.iterations),
            early_stop_tol: flags
                .early_stop_tol
                .or(file.early_stop_tol)
                .unwrap_or(d.propagation.early_stop_tol),
        },
        labeled_diagonal: if flags.no_labeled_diagonal {
            false
        } else {
            file.labeled_diagonal.unwrap_or(d.labeled_diagonal)
        },
    }
}
