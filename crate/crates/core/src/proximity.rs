//! Intra- and inter-cluster dispersion, the proximity matrix over
//! clusters, and the closed-form updates applied when two clusters merge.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};

/// How the intra-dispersion of a freshly merged cluster is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntraMode {
    /// `(n_a d_a + n_b d_b + n_a n_b d_ab) / (n_a + n_b + n_a n_b)`.
    #[default]
    PaperEq7,
    /// Pair-sum bookkeeping; always equal to recomputing the dispersion of
    /// the merged member set from scratch.
    Exact,
}

/// Size and intra statistics of one cluster, enough to merge it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntraStats {
    pub size: usize,
    /// Sum of distances over unordered member pairs.
    pub pair_sum: f64,
    pub dispersion: f64,
}

impl IntraStats {
    pub fn singleton() -> Self {
        IntraStats {
            size: 1,
            pair_sum: 0.0,
            dispersion: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub members: Vec<usize>,
    pub pair_sum: f64,
    pub dispersion: f64,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn stats(&self) -> IntraStats {
        IntraStats {
            size: self.members.len(),
            pair_sum: self.pair_sum,
            dispersion: self.dispersion,
        }
    }
}

/// A partition of the samples into clusters `0..C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    labels: Vec<usize>,
    clusters: Vec<Cluster>,
}

impl ClusterState {
    /// Every sample in its own cluster, cluster `i` holding sample `i`.
    pub fn singletons(n: usize) -> Self {
        ClusterState {
            labels: (0..n).collect(),
            clusters: (0..n)
                .map(|i| Cluster {
                    members: vec![i],
                    pair_sum: 0.0,
                    dispersion: 0.0,
                })
                .collect(),
        }
    }

    /// Build from dense labels `0..C`; intra statistics are recomputed from
    /// the distances.
    pub fn from_labels(labels: &[usize], dist: &DistanceMatrix) -> Result<Self> {
        if labels.len() != dist.len() {
            return Err(Error::data(format!(
                "{} labels for {} samples",
                labels.len(),
                dist.len()
            )));
        }
        let c = labels.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); c];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(Error::data(format!("labels are not dense: cluster {empty} is empty")));
        }
        let clusters = members
            .into_par_iter()
            .map(|m| {
                let (pair_sum, dispersion) = intra_dispersion(&m, dist);
                Cluster {
                    members: m,
                    pair_sum,
                    dispersion,
                }
            })
            .collect();
        Ok(ClusterState {
            labels: labels.to_vec(),
            clusters,
        })
    }

    /// Assemble from clusters listed in their final order. Labels follow the
    /// list position.
    pub(crate) fn from_clusters(n: usize, clusters: Vec<Cluster>) -> Self {
        let mut labels = vec![usize::MAX; n];
        for (c, cl) in clusters.iter().enumerate() {
            for &i in &cl.members {
                labels[i] = c;
            }
        }
        debug_assert!(labels.iter().all(|&l| l != usize::MAX));
        ClusterState { labels, clusters }
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn cluster(&self, c: usize) -> Result<&Cluster> {
        self.clusters.get(c).ok_or(Error::DeadCluster(c))
    }

    /// Check the partition invariants; returns a description of the first
    /// violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut seen = vec![false; self.labels.len()];
        for (c, cl) in self.clusters.iter().enumerate() {
            if cl.members.is_empty() {
                return Err(format!("cluster {c} is empty"));
            }
            for &i in &cl.members {
                if i >= seen.len() || seen[i] {
                    return Err(format!("sample {i} listed twice or out of range"));
                }
                seen[i] = true;
                if self.labels[i] != c {
                    return Err(format!("sample {i} labelled {} but listed in {c}", self.labels[i]));
                }
            }
            if cl.members.len() == 1 && (cl.pair_sum != 0.0 || cl.dispersion != 0.0) {
                return Err(format!("singleton {c} has nonzero dispersion"));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err("some sample belongs to no cluster".into());
        }
        Ok(())
    }
}

/// Sum of distances over unordered member pairs and that sum divided by the
/// member count.
pub fn intra_dispersion(members: &[usize], dist: &DistanceMatrix) -> (f64, f64) {
    let mut pair_sum = 0.0;
    for (k, &i) in members.iter().enumerate() {
        let row = dist.row(i);
        for &j in &members[k + 1..] {
            pair_sum += row[j];
        }
    }
    if members.is_empty() {
        return (0.0, 0.0);
    }
    (pair_sum, pair_sum / members.len() as f64)
}

/// Mean distance over all cross pairs of two disjoint member sets.
pub fn inter_dispersion(a: &[usize], b: &[usize], dist: &DistanceMatrix) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::data("inter-dispersion needs two nonempty sets"));
    }
    if let Some(&shared) = a.iter().find(|i| b.contains(i)) {
        return Err(Error::data(format!("sample {shared} is in both sets")));
    }
    let mut sum = 0.0;
    for &i in a {
        let row = dist.row(i);
        for &j in b {
            sum += row[j];
        }
    }
    Ok(sum / (a.len() * b.len()) as f64)
}

/// Inter-dispersion from cluster `q = a ∪ b` to a third cluster `s`.
#[inline]
pub fn update_inter_on_merge(d_as: f64, d_bs: f64, n_a: usize, n_b: usize) -> f64 {
    let (na, nb) = (n_a as f64, n_b as f64);
    let total = na + nb;
    (na / total) * d_as + (nb / total) * d_bs
}

/// Intra statistics of the cluster formed by merging `a` and `b`, whose
/// inter-dispersion is `d_ab`.
///
/// The pair sum is always the exact one; only the dispersion depends on
/// the mode.
pub fn update_intra_on_merge(a: IntraStats, b: IntraStats, d_ab: f64, mode: IntraMode) -> IntraStats {
    let (na, nb) = (a.size as f64, b.size as f64);
    let pair_sum = a.pair_sum + b.pair_sum + na * nb * d_ab;
    let dispersion = match mode {
        IntraMode::PaperEq7 => (na * a.dispersion + nb * b.dispersion + na * nb * d_ab) / (na + nb + na * nb),
        IntraMode::Exact => pair_sum / (na + nb),
    };
    IntraStats {
        size: a.size + b.size,
        pair_sum,
        dispersion,
    }
}

/// Binary indexed tree over live slots; maps between storage slots and the
/// dense indices seen by callers.
#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<usize>,
}

impl Fenwick {
    fn full(n: usize) -> Self {
        let mut tree = vec![0; n + 1];
        for i in 1..=n {
            tree[i] += 1;
            let parent = i + (i & i.wrapping_neg());
            if parent <= n {
                tree[parent] += tree[i];
            }
        }
        Fenwick { tree }
    }

    fn remove(&mut self, slot: usize) {
        let mut i = slot + 1;
        while i < self.tree.len() {
            self.tree[i] -= 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of live slots strictly before `slot`.
    fn rank(&self, slot: usize) -> usize {
        let mut i = slot;
        let mut acc = 0;
        while i > 0 {
            acc += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        acc
    }

    /// Slot holding the `k`-th live entry (0-based).
    fn select(&self, mut k: usize) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= k {
                pos = next;
                k -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}

/// Symmetric `C x C` matrix of inter-cluster dispersions.
///
/// Storage keeps one slot per cluster present at construction. A merge
/// overwrites the surviving (smaller-index) row and retires the other, so
/// callers see the dimension drop by one and later indices shift down,
/// while no surviving entry is moved.
#[derive(Debug, Clone)]
pub struct ProximityMatrix {
    cap: usize,
    values: Vec<f64>,
    alive: Vec<bool>,
    ranks: Fenwick,
    live: usize,
}

impl ProximityMatrix {
    pub(crate) fn from_values(cap: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), cap * cap);
        ProximityMatrix {
            cap,
            values,
            alive: vec![true; cap],
            ranks: Fenwick::full(cap),
            live: cap,
        }
    }

    pub fn dim(&self) -> usize {
        self.live
    }

    /// Entry `(a, b)` in dense indices.
    pub fn get(&self, a: usize, b: usize) -> Result<f64> {
        let sa = self.slot_of(a)?;
        let sb = self.slot_of(b)?;
        Ok(self.values[sa * self.cap + sb])
    }

    /// Dense row-major copy of the live entries.
    pub fn to_dense(&self) -> Vec<f64> {
        let slots: Vec<usize> = self.live_slots().collect();
        let mut out = Vec::with_capacity(slots.len() * slots.len());
        for &s in &slots {
            for &t in &slots {
                out.push(self.values[s * self.cap + t]);
            }
        }
        out
    }

    /// Merge clusters `a` and `b` (dense indices, sizes `n_a`, `n_b`) with the
    /// size-weighted update. The result takes the smaller index.
    pub fn merge(&mut self, a: usize, b: usize, n_a: usize, n_b: usize) -> Result<usize> {
        if a == b {
            return Err(Error::data("cannot merge a cluster with itself"));
        }
        let (keep, drop, n_keep, n_drop) = if a < b { (a, b, n_a, n_b) } else { (b, a, n_b, n_a) };
        let sk = self.slot_of(keep)?;
        let sd = self.slot_of(drop)?;
        self.merge_slots_with(sk, sd, |x, y| update_inter_on_merge(x, y, n_keep, n_drop));
        Ok(keep)
    }

    /// Same matrix with retired slots squeezed out.
    pub fn compacted(&self) -> ProximityMatrix {
        ProximityMatrix::from_values(self.live, self.to_dense())
    }

    fn slot_of(&self, idx: usize) -> Result<usize> {
        if idx >= self.live {
            return Err(Error::DeadCluster(idx));
        }
        Ok(self.ranks.select(idx))
    }

    pub(crate) fn cap(&self) -> usize {
        self.cap
    }

    #[inline]
    pub(crate) fn is_alive(&self, slot: usize) -> bool {
        self.alive[slot]
    }

    #[inline]
    pub(crate) fn at(&self, s: usize, t: usize) -> f64 {
        self.values[s * self.cap + t]
    }

    pub(crate) fn slot_row(&self, s: usize) -> &[f64] {
        &self.values[s * self.cap..(s + 1) * self.cap]
    }

    pub(crate) fn live_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.cap).filter(move |&s| self.alive[s])
    }

    /// Dense index of a live slot.
    pub(crate) fn index_of_slot(&self, slot: usize) -> usize {
        self.ranks.rank(slot)
    }

    /// Fold row `drop` into row `keep` with `combine(keep_entry, drop_entry)`,
    /// then retire `drop`.
    pub(crate) fn merge_slots_with(&mut self, keep: usize, drop: usize, combine: impl Fn(f64, f64) -> f64) {
        let cap = self.cap;
        for s in 0..cap {
            if !self.alive[s] || s == keep || s == drop {
                continue;
            }
            let v = combine(self.values[keep * cap + s], self.values[drop * cap + s]);
            self.values[keep * cap + s] = v;
            self.values[s * cap + keep] = v;
        }
        self.alive[drop] = false;
        self.ranks.remove(drop);
        self.live -= 1;
    }
}

/// Group-reduce the sample distance matrix by cluster: entry `(a, b)` is the
/// mean cross distance between clusters `a` and `b`.
pub fn build_proximity(state: &ClusterState, dist: &DistanceMatrix) -> ProximityMatrix {
    let c = state.num_clusters();
    let labels = state.labels();
    let mut values = vec![0.0; c * c];
    values.par_chunks_mut(c).enumerate().for_each(|(a, out)| {
        for &i in &state.clusters[a].members {
            for (j, &d) in dist.row(i).iter().enumerate() {
                out[labels[j]] += d;
            }
        }
        let na = state.clusters[a].size() as f64;
        for (b, v) in out.iter_mut().enumerate() {
            *v = if b == a {
                0.0
            } else {
                *v / (na * state.clusters[b].size() as f64)
            };
        }
    });
    // mirror the upper triangle so the matrix is exactly symmetric
    for a in 0..c {
        for b in 0..a {
            values[a * c + b] = values[b * c + a];
        }
    }
    ProximityMatrix::from_values(c, values)
}
