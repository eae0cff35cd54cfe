//! Datasets, non-IID partitioners and IDX ingestion.

pub mod idx;
pub mod partition;
pub mod synth;

pub use idx::{load_idx, IdxError};
pub use partition::{dirichlet_partition, pathological_partition, split_train_test, ClientSplit, Partition};
pub use synth::synth_blobs;

use crate::error::{Error, Result};
use crate::nn::DenseMatrix;

/// Features plus integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DenseMatrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::invalid("dataset must hold at least one sample"));
        }
        if labels.len() != features.rows() {
            return Err(Error::shape(
                "Dataset::new",
                format!("{} labels", features.rows()),
                labels.len(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Feature rows and labels for the given sample indices.
    pub fn gather(&self, indices: &[usize]) -> (DenseMatrix, Vec<usize>) {
        (
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Sample indices grouped by class, each group in ascending order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        by_class
    }
}
