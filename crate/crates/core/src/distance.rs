use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::store::FeatureStore;

/// Dense symmetric matrix of Euclidean distances between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Wrap a precomputed square matrix. Symmetry and a zero diagonal are
    /// required exactly.
    pub fn from_square(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::data(format!("expected {} entries, got {}", n * n, values.len())));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::data(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let v = values[i * n + j];
                if !(v >= 0.0) || v != values[j * n + i] {
                    return Err(Error::data(format!("entry ({i},{j}) is negative or asymmetric")));
                }
            }
        }
        Ok(DistanceMatrix { n, values })
    }

    /// Distances between points on a line, handy for small constructions.
    pub fn from_line(points: &[f64]) -> Self {
        let n = points.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = (points[i] - points[j]).abs();
            }
        }
        DistanceMatrix { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

#[inline]
pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// All-pairs Euclidean distances. The upper triangle is computed in
/// parallel row blocks and mirrored, so the result is exactly symmetric.
pub fn pairwise_distances(store: &FeatureStore) -> Result<DistanceMatrix> {
    for (row, values) in store.rows().enumerate() {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidRow {
                row,
                reason: format!("non-finite value {v}"),
            });
        }
    }
    let n = store.len();
    let mut values = vec![0.0; n * n];
    values.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
        let a = store.row(i);
        for (j, slot) in out.iter_mut().enumerate().skip(i + 1) {
            *slot = euclidean(a, store.row(j));
        }
    });
    for i in 0..n {
        for j in 0..i {
            values[i * n + j] = values[j * n + i];
        }
    }
    Ok(DistanceMatrix { n, values })
}
