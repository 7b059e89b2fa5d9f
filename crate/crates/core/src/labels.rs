//! Pairwise equivalence constraints from identity annotations.

use std::collections::HashMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Vertex ordering `[gallery | labeled]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetLayout {
    pub n_gallery: usize,
    pub n_labeled: usize,
}

impl DatasetLayout {
    pub fn new(n_gallery: usize, n_labeled: usize) -> Self {
        Self {
            n_gallery,
            n_labeled,
        }
    }

    pub fn total(&self) -> usize {
        self.n_gallery + self.n_labeled
    }

    pub fn gallery(&self) -> Range<usize> {
        0..self.n_gallery
    }

    pub fn labeled(&self) -> Range<usize> {
        self.n_gallery..self.total()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintLabels {
    pub layout: DatasetLayout,
    pub identities: Vec<u64>,
    pub l: Matrix,
}

/// Builds `L` with `L_ij = 1` iff `i` and `j` are labeled and share an
/// identity. `labeled_diagonal` controls whether labeled self-pairs count.
pub fn build_labels(
    layout: DatasetLayout,
    identities: &[u64],
    labeled_diagonal: bool,
) -> Result<ConstraintLabels> {
    if identities.len() != layout.n_labeled {
        return Err(Error::shape(
            "build_labels",
            format!(
                "{} identities for {} labeled instances",
                identities.len(),
                layout.n_labeled
            ),
        ));
    }
    let n = layout.total();
    let off = layout.n_gallery;
    let mut l = Matrix::zeros(n, n);

    let mut classes: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, &id) in identities.iter().enumerate() {
        classes.entry(id).or_default().push(off + i);
    }
    for members in classes.values() {
        for &a in members {
            for &b in members {
                if a != b || labeled_diagonal {
                    l[(a, b)] = 1.0;
                }
            }
        }
    }
    Ok(ConstraintLabels {
        layout,
        identities: identities.to_vec(),
        l,
    })
}
