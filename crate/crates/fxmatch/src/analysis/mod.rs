//! Embedding-quality and style-matching evaluation: PCA baseline, random
//! forest, CCA, mutual-information tables, and held-out loss comparisons.

mod cca;
mod eval;
mod forest;
mod mi;
mod pca;

pub use cca::cca_project;
pub use eval::{
    embedding_dataset, eval_e2e, generate_pairs, split_indices, E2eEvalReport, ThetaSource,
};
pub use forest::{
    classification_report, rf_predict, rf_train, ClassReport, ForestConfig, RandomForest,
};
pub use mi::{mmi_from, mmi_table, mutual_info, MmiEntry, MI_BINS};
pub use pca::{pca_fit, pca_transform, Pca};

use crate::error::Result;

/// Embeddings with their effect labels and, optionally, the parameter
/// settings that produced them.
pub struct EmbeddingSet {
    pub embeddings: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub thetas: Option<Vec<Vec<f32>>>,
    pub label_names: Vec<String>,
}

impl EmbeddingSet {
    pub fn new(
        embeddings: Vec<Vec<f64>>,
        labels: Vec<usize>,
        thetas: Option<Vec<Vec<f32>>>,
        label_names: Vec<String>,
    ) -> Self {
        assert_eq!(embeddings.len(), labels.len(), "row count mismatch");
        if let Some(t) = &thetas {
            assert_eq!(t.len(), labels.len(), "row count mismatch");
        }
        Self {
            embeddings,
            labels,
            thetas,
            label_names,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows at `indices`, dropping thetas.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            embeddings: indices.iter().map(|&i| self.embeddings[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            thetas: None,
            label_names: self.label_names.clone(),
        }
    }
}

pub fn rf_train_set(set: &EmbeddingSet, cfg: &ForestConfig) -> Result<RandomForest> {
    rf_train(&set.embeddings, &set.labels, cfg)
}

pub fn rf_eval_set(forest: &RandomForest, set: &EmbeddingSet) -> ClassReport {
    let pred = rf_predict(forest, &set.embeddings);
    classification_report(&set.labels, &pred, forest.num_classes)
}
