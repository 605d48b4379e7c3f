//! Sample embeddings and the row-level transforms applied to them.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

/// Tolerance on row norms when a store claims to be normalized.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// `N x d` matrix of sample embeddings with stable sample identifiers.
///
/// Ground-truth labels ride along for evaluation only; nothing in the
/// clustering engine reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    features: Vec<f64>,
    sample_ids: Vec<String>,
    ground_truth: Option<Vec<i64>>,
    normalized: bool,
}

impl FeatureStore {
    pub fn new(features: Vec<f64>, dim: usize, sample_ids: Vec<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::data("feature dimension must be at least 1"));
        }
        if !features.len().is_multiple_of(dim) {
            return Err(Error::data(format!(
                "{} values do not form rows of width {dim}",
                features.len()
            )));
        }
        let rows = features.len() / dim;
        if rows == 0 {
            return Err(Error::data("store must contain at least one sample"));
        }
        if sample_ids.len() != rows {
            return Err(Error::data(format!(
                "{} sample ids for {rows} rows",
                sample_ids.len()
            )));
        }
        check_finite(&features, dim)?;
        let mut seen = HashSet::with_capacity(rows);
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::data(format!("duplicate sample id `{id}`")));
            }
        }
        Ok(FeatureStore {
            dim,
            features,
            sample_ids,
            ground_truth: None,
            normalized: false,
        })
    }

    /// Store with ids `0..N` rendered as strings.
    pub fn with_index_ids(features: Vec<f64>, dim: usize) -> Result<Self> {
        let rows = features.len().checked_div(dim).unwrap_or(0);
        Self::new(features, dim, (0..rows).map(|i| i.to_string()).collect())
    }

    pub fn with_ground_truth(mut self, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::data(format!(
                "{} ground-truth labels for {} samples",
                labels.len(),
                self.len()
            )));
        }
        self.ground_truth = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.features.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.features
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn ground_truth(&self) -> Option<&[i64]> {
        self.ground_truth.as_deref()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Row index of every sample id.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.sample_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Replace the feature matrix, keeping ids and labels. Used by the
    /// training loop which mutates embeddings in place.
    pub(crate) fn with_features(&self, features: Vec<f64>, normalized: bool) -> Result<Self> {
        debug_assert_eq!(features.len(), self.features.len());
        check_finite(&features, self.dim)?;
        Ok(FeatureStore {
            dim: self.dim,
            features,
            sample_ids: self.sample_ids.clone(),
            ground_truth: self.ground_truth.clone(),
            normalized,
        })
    }
}

fn check_finite(features: &[f64], dim: usize) -> Result<()> {
    for (row, values) in features.chunks_exact(dim).enumerate() {
        if let Some(col) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidRow {
                row,
                reason: format!("non-finite value {} in column {col}", values[col]),
            });
        }
    }
    Ok(())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scale every row to unit Euclidean norm.
pub fn normalize_rows(store: &FeatureStore) -> Result<FeatureStore> {
    let mut features = store.features.clone();
    for (row, values) in features.chunks_exact_mut(store.dim).enumerate() {
        let n = norm(values);
        if n == 0.0 {
            return Err(Error::InvalidRow {
                row,
                reason: "zero-norm row cannot be normalized".into(),
            });
        }
        values.iter_mut().for_each(|x| *x /= n);
    }
    store.with_features(features, true)
}

/// Average the rows of each group into one output row.
///
/// Output ids are the group indices `0..groups.len()`. Ground-truth labels
/// are carried over when every member of a group agrees.
pub fn pool_group_features(store: &FeatureStore, groups: &[Vec<String>]) -> Result<FeatureStore> {
    let index = store.index();
    let dim = store.dim;
    let mut pooled = Vec::with_capacity(groups.len() * dim);
    let mut seen = HashSet::new();
    let mut pooled_labels = store.ground_truth.as_ref().map(|_| Vec::with_capacity(groups.len()));
    for (g, group) in groups.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::data(format!("group {g} is empty")));
        }
        let mut acc = vec![0.0; dim];
        let mut label: Option<Option<i64>> = None;
        for id in group {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Error::data(format!("group {g}: unknown sample id `{id}`")))?;
            if !seen.insert(i) {
                return Err(Error::data(format!("sample id `{id}` appears in more than one group")));
            }
            for (a, x) in acc.iter_mut().zip(store.row(i)) {
                *a += x;
            }
            if let Some(truth) = &store.ground_truth {
                label = match label {
                    None => Some(Some(truth[i])),
                    Some(Some(l)) if l == truth[i] => Some(Some(l)),
                    _ => Some(None),
                };
            }
        }
        let n = group.len() as f64;
        pooled.extend(acc.into_iter().map(|x| x / n));
        if let Some(labels) = pooled_labels.as_mut() {
            match label.flatten() {
                Some(l) => labels.push(l),
                None => {
                    return Err(Error::data(format!("group {g} mixes ground-truth identities")));
                }
            }
        }
    }
    let out = FeatureStore::with_index_ids(pooled, dim)?;
    match pooled_labels {
        Some(labels) => out.with_ground_truth(labels),
        None => Ok(out),
    }
}
