//! Retrieval (CMC rank-k, mAP) and partition-agreement metrics.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{euclidean, DistanceMatrix};
use crate::error::{Error, Result};
use crate::store::FeatureStore;

/// Query and gallery rows of a store plus the identity of every row.
#[derive(Debug, Clone)]
pub struct RetrievalProtocol {
    queries: Vec<usize>,
    gallery: Vec<usize>,
    identities: Vec<i64>,
}

impl RetrievalProtocol {
    pub fn new(queries: Vec<usize>, gallery: Vec<usize>, identities: Vec<i64>) -> Result<Self> {
        let n = identities.len();
        if let Some(&bad) = queries.iter().chain(&gallery).find(|&&i| i >= n) {
            return Err(Error::data(format!("row {bad} outside {n} identities")));
        }
        let gallery_rows: HashSet<usize> = gallery.iter().copied().collect();
        if let Some(&shared) = queries.iter().find(|q| gallery_rows.contains(q)) {
            return Err(Error::data(format!("row {shared} is both query and gallery")));
        }
        let gallery_ids: HashSet<i64> = gallery.iter().map(|&g| identities[g]).collect();
        if let Some(&q) = queries.iter().find(|&&q| !gallery_ids.contains(&identities[q])) {
            return Err(Error::data(format!(
                "query row {q} (identity {}) has no match in the gallery",
                identities[q]
            )));
        }
        Ok(RetrievalProtocol {
            queries,
            gallery,
            identities,
        })
    }

    /// Build from sample ids, taking identities from the store's ground truth.
    pub fn from_ids(store: &FeatureStore, queries: &[String], gallery: &[String]) -> Result<Self> {
        let truth = store
            .ground_truth()
            .ok_or_else(|| Error::data("retrieval needs ground-truth labels"))?;
        let index = store.index();
        let lookup = |ids: &[String]| -> Result<Vec<usize>> {
            ids.iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::data(format!("unknown sample id `{id}`")))
                })
                .collect()
        };
        Self::new(lookup(queries)?, lookup(gallery)?, truth.to_vec())
    }

    /// First sample of every identity with at least two samples is a query;
    /// everything else is gallery.
    pub fn one_query_per_identity(identities: &[i64]) -> Result<Self> {
        let mut counts: HashMap<i64, usize> = HashMap::new();
        for &id in identities {
            *counts.entry(id).or_default() += 1;
        }
        let mut seen = HashSet::new();
        let (mut queries, mut gallery) = (Vec::new(), Vec::new());
        for (i, &id) in identities.iter().enumerate() {
            if counts[&id] >= 2 && seen.insert(id) {
                queries.push(i);
            } else {
                gallery.push(i);
            }
        }
        Self::new(queries, gallery, identities.to_vec())
    }

    pub fn queries(&self) -> &[usize] {
        &self.queries
    }

    pub fn gallery(&self) -> &[usize] {
        &self.gallery
    }

    /// For each query, relevance flags of the gallery sorted by ascending
    /// distance (ties keep gallery order).
    fn ranked_relevance(&self, store: &FeatureStore) -> Result<Vec<Vec<bool>>> {
        if store.len() != self.identities.len() {
            return Err(Error::data(format!(
                "protocol covers {} rows, store has {}",
                self.identities.len(),
                store.len()
            )));
        }
        Ok(self
            .queries
            .par_iter()
            .map(|&q| {
                let qv = store.row(q);
                let dists: Vec<f64> = self.gallery.iter().map(|&g| euclidean(qv, store.row(g))).collect();
                let mut order: Vec<usize> = (0..self.gallery.len()).collect();
                order.sort_by(|&x, &y| dists[x].total_cmp(&dists[y]));
                order
                    .into_iter()
                    .map(|k| self.identities[self.gallery[k]] == self.identities[q])
                    .collect()
            })
            .collect())
    }
}

/// Fraction of queries with a correct match among the top `k`, for each `k`.
pub fn cmc_rank_k(protocol: &RetrievalProtocol, store: &FeatureStore, ks: &[usize]) -> Result<Vec<f64>> {
    let ranked = protocol.ranked_relevance(store)?;
    let first_hits: Vec<usize> = ranked
        .iter()
        .map(|r| r.iter().position(|&hit| hit).expect("protocol guarantees a match"))
        .collect();
    let nq = first_hits.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| first_hits.iter().filter(|&&r| r < k).count() as f64 / nq)
        .collect())
}

/// Sum of fractions kept exact while it fits in `u128`, so textbook cases
/// such as `(1/1 + 2/3) / 2` come out as the nearest double to `5/6`.
/// Numerator and denominator below 2^53 convert with a single rounding.
#[derive(Debug, Clone, Copy)]
enum FracSum {
    Exact { num: u128, den: u128 },
    Float(f64),
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl FracSum {
    fn zero() -> Self {
        FracSum::Exact { num: 0, den: 1 }
    }

    fn value(self) -> f64 {
        match self {
            FracSum::Exact { num, den } => num as f64 / den as f64,
            FracSum::Float(v) => v,
        }
    }

    fn add(self, n: u128, d: u128) -> Self {
        if let FracSum::Exact { num, den } = self {
            let g = gcd(den, d);
            let exact = (den / g)
                .checked_mul(d)
                .and_then(|new_den| {
                    let lhs = num.checked_mul(d / g)?;
                    let rhs = n.checked_mul(den / g)?;
                    Some((lhs.checked_add(rhs)?, new_den))
                })
                .map(|(num, den)| {
                    let g = gcd(num, den).max(1);
                    FracSum::Exact { num: num / g, den: den / g }
                });
            if let Some(sum) = exact {
                return sum;
            }
        }
        FracSum::Float(self.value() + n as f64 / d as f64)
    }

    /// Divide by a positive integer.
    fn div(self, k: u128) -> Self {
        match self {
            FracSum::Exact { num, den } => match den.checked_mul(k) {
                Some(den) => {
                    let g = gcd(num, den).max(1);
                    FracSum::Exact { num: num / g, den: den / g }
                }
                None => FracSum::Float(num as f64 / den as f64 / k as f64),
            },
            FracSum::Float(v) => FracSum::Float(v / k as f64),
        }
    }
}

fn average_precision_frac(relevance: &[bool]) -> FracSum {
    let mut hits = 0u128;
    let mut acc = FracSum::zero();
    for (pos, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            acc = acc.add(hits, pos as u128 + 1);
        }
    }
    if hits == 0 {
        FracSum::zero()
    } else {
        acc.div(hits)
    }
}

/// Average precision of one ranked relevance list.
pub fn average_precision(relevance: &[bool]) -> f64 {
    average_precision_frac(relevance).value()
}

/// Mean of per-query average precisions.
pub fn mean_average_precision(protocol: &RetrievalProtocol, store: &FeatureStore) -> Result<f64> {
    let ranked = protocol.ranked_relevance(store)?;
    let mut total = FracSum::zero();
    for r in &ranked {
        total = match average_precision_frac(r) {
            FracSum::Exact { num, den } => total.add(num, den),
            FracSum::Float(v) => FracSum::Float(total.value() + v),
        };
    }
    Ok(total.div(ranked.len() as u128).value())
}

/// Pairwise F1 and purity of a predicted partition against the truth.
///
/// When the prediction has no co-clustered pair precision is undefined and
/// F1 is 0, unless the truth has none either (identical partitions, F1 1).
pub fn partition_scores<P, T>(predicted: &[P], truth: &[T]) -> Result<(f64, f64)>
where
    P: Hash + Eq,
    T: Hash + Eq,
{
    if predicted.len() != truth.len() {
        return Err(Error::data(format!(
            "{} predicted labels vs {} true labels",
            predicted.len(),
            truth.len()
        )));
    }
    let n = predicted.len();
    if n == 0 {
        return Err(Error::data("no labels to score"));
    }
    let mut joint: HashMap<(&P, &T), u64> = HashMap::new();
    let mut pred_sizes: HashMap<&P, u64> = HashMap::new();
    let mut true_sizes: HashMap<&T, u64> = HashMap::new();
    for (p, t) in predicted.iter().zip(truth) {
        *joint.entry((p, t)).or_default() += 1;
        *pred_sizes.entry(p).or_default() += 1;
        *true_sizes.entry(t).or_default() += 1;
    }
    let pairs = |c: u64| c * c.saturating_sub(1) / 2;
    let tp: u64 = joint.values().map(|&c| pairs(c)).sum();
    let pred_pairs: u64 = pred_sizes.values().map(|&c| pairs(c)).sum();
    let true_pairs: u64 = true_sizes.values().map(|&c| pairs(c)).sum();
    let f1 = match (pred_pairs, true_pairs) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => 2.0 * tp as f64 / (pred_pairs + true_pairs) as f64,
    };

    let mut best: HashMap<&P, u64> = HashMap::new();
    for (&(p, _), &c) in &joint {
        let e = best.entry(p).or_default();
        *e = (*e).max(c);
    }
    let purity = best.values().sum::<u64>() as f64 / n as f64;
    Ok((f1, purity))
}

/// Mean silhouette over samples; singletons contribute 0. An internal
/// quality score for runs without ground truth.
pub fn mean_silhouette(dist: &DistanceMatrix, labels: &[usize]) -> f64 {
    let n = labels.len();
    let c = labels.iter().max().map_or(0, |m| m + 1);
    if c < 2 {
        return 0.0;
    }
    let mut sizes = vec![0usize; c];
    for &l in labels {
        sizes[l] += 1;
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; c];
            for (j, &d) in dist.row(i).iter().enumerate() {
                sums[labels[j]] += d;
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..c)
                .filter(|&k| k != own)
                .map(|k| sums[k] / sizes[k] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .sum();
    total / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub pairwise_f1: f64,
    pub purity: f64,
}

/// Retrieval metrics of `store` under `protocol` plus agreement of
/// `predicted` with the protocol's identities.
pub fn evaluate(store: &FeatureStore, protocol: &RetrievalProtocol, predicted: &[usize]) -> Result<MetricReport> {
    let cmc = cmc_rank_k(protocol, store, &[1, 5, 10])?;
    let map = mean_average_precision(protocol, store)?;
    let (pairwise_f1, purity) = partition_scores(predicted, &protocol.identities)?;
    Ok(MetricReport {
        rank1: cmc[0],
        rank5: cmc[1],
        rank10: cmc[2],
        map,
        pairwise_f1,
        purity,
    })
}
