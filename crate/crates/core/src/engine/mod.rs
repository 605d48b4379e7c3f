//! Agglomerative merging driven by the dispersion criterion
//! `D_ab = d_ab + λ (d_a + d_b)` and the single-linkage baselines.
//!
//! A stage performs `k = round(m N)` greedy merges. Each step picks the live
//! pair with the smallest criterion, merges it, and updates the proximity
//! matrix and intra statistics in place before the next pick.

pub mod scenarios;

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::proximity::{
    build_proximity, update_inter_on_merge, update_intra_on_merge, Cluster, ClusterState, IntraMode, IntraStats,
    ProximityMatrix,
};

/// Paper hyperparameters for the clustering stage.
pub const DEFAULT_MERGE_PERCENT: f64 = 0.05;
pub const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    /// Inter-dispersion plus `lambda` times the summed intra-dispersions.
    Dispersion { lambda: f64 },
    DispersionNoReg,
    /// Minimum cross-cluster sample distance.
    SingleLinkage,
    /// Minimum cross distance plus `lambda` times the summed cluster sizes.
    SingleLinkageSizeReg { lambda: f64 },
}

impl Criterion {
    /// Parse a CLI criterion name; `lambda` applies to the regularised kinds.
    pub fn from_name(name: &str, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        match name {
            "dispersion" => Ok(Criterion::Dispersion { lambda }),
            "dispersion-noreg" => Ok(Criterion::DispersionNoReg),
            "single" => Ok(Criterion::SingleLinkage),
            "single-sizereg" => Ok(Criterion::SingleLinkageSizeReg { lambda }),
            other => Err(Error::config(format!("unknown criterion `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Dispersion { .. } => "dispersion",
            Criterion::DispersionNoReg => "dispersion-noreg",
            Criterion::SingleLinkage => "single",
            Criterion::SingleLinkageSizeReg { .. } => "single-sizereg",
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match *self {
            Criterion::Dispersion { lambda } | Criterion::SingleLinkageSizeReg { lambda } => Some(lambda),
            _ => None,
        }
    }

    fn uses_single_linkage(&self) -> bool {
        matches!(self, Criterion::SingleLinkage | Criterion::SingleLinkageSizeReg { .. })
    }

    /// Combine the pairwise linkage value with the pair's intra statistics.
    #[inline]
    fn combine(&self, linkage: f64, a: &IntraStats, b: &IntraStats) -> f64 {
        match *self {
            Criterion::Dispersion { lambda } => linkage + lambda * (a.dispersion + b.dispersion),
            Criterion::DispersionNoReg | Criterion::SingleLinkage => linkage,
            Criterion::SingleLinkageSizeReg { lambda } => linkage + lambda * (a.size + b.size) as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.lambda() {
            Some(l) if !(l >= 0.0 && l.is_finite()) => {
                Err(Error::config(format!("lambda must be finite and >= 0, got {l}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop once this many clusters remain; the last stage may be short.
    MinClusters(usize),
    /// Run full stages while more than `k` clusters remain.
    PaperLoop,
}

/// Ordering among pairs with equal criterion values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Smaller summed intra-dispersion first, then lexicographic `(a, b)`.
    #[default]
    IntraThenIndex,
    /// Lexicographic `(a, b)` only.
    Index,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub merge_percent: f64,
    pub criterion: Criterion,
    pub intra_mode: IntraMode,
    pub stop: StopRule,
    pub tie_break: TieBreak,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            merge_percent: DEFAULT_MERGE_PERCENT,
            criterion: Criterion::Dispersion { lambda: DEFAULT_LAMBDA },
            intra_mode: IntraMode::PaperEq7,
            stop: StopRule::PaperLoop,
            tie_break: TieBreak::IntraThenIndex,
        }
    }
}

impl EngineConfig {
    pub fn with_criterion(mut self, criterion: Criterion) -> Self {
        self.criterion = criterion;
        self
    }

    pub fn with_stop(mut self, stop: StopRule) -> Self {
        self.stop = stop;
        self
    }

    pub fn with_intra_mode(mut self, mode: IntraMode) -> Self {
        self.intra_mode = mode;
        self
    }

    pub fn with_merge_percent(mut self, m: f64) -> Self {
        self.merge_percent = m;
        self
    }

    /// Merge batch `k = round(m N)` for a dataset of `n` samples, after
    /// validating the whole config.
    pub fn merges_per_stage(&self, n: usize) -> Result<usize> {
        self.criterion.validate()?;
        let m = self.merge_percent;
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::config(format!("merge percent must lie in (0, 1), got {m}")));
        }
        let k = (m * n as f64).round() as usize;
        if k < 1 {
            return Err(Error::config(format!(
                "merge percent {m} gives no merges for {n} samples (m * N < 1)"
            )));
        }
        if let StopRule::MinClusters(0) = self.stop {
            return Err(Error::config("target cluster count must be at least 1"));
        }
        Ok(k)
    }

    /// Merges the next stage should perform from `clusters` live clusters,
    /// or `None` when the stop rule is met.
    pub fn next_stage_merges(&self, clusters: usize, k: usize) -> Option<usize> {
        match self.stop {
            StopRule::PaperLoop => (clusters > k).then_some(k),
            StopRule::MinClusters(target) => (clusters > target).then(|| k.min(clusters - target)),
        }
    }
}

/// One merge. Cluster ids are dense indices at the moment of the merge;
/// the result takes id `a` and every id above `b` shifts down by one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub stage: usize,
    pub step: usize,
    pub a: usize,
    pub b: usize,
    pub value: f64,
    pub new_id: usize,
    pub n_a: usize,
    pub n_b: usize,
}

/// Criterion value for the live pair `(a, b)`.
pub fn criterion_value(
    crit: Criterion,
    a: usize,
    b: usize,
    state: &ClusterState,
    prox: &ProximityMatrix,
    dist: &DistanceMatrix,
) -> Result<f64> {
    if a == b {
        return Err(Error::data("criterion needs two distinct clusters"));
    }
    let ca = state.cluster(a)?;
    let cb = state.cluster(b)?;
    let linkage = if crit.uses_single_linkage() {
        min_cross_distance(&ca.members, &cb.members, dist)
    } else {
        prox.get(a, b)?
    };
    Ok(crit.combine(linkage, &ca.stats(), &cb.stats()))
}

fn min_cross_distance(a: &[usize], b: &[usize], dist: &DistanceMatrix) -> f64 {
    a.iter()
        .flat_map(|&i| b.iter().map(move |&j| dist.get(i, j)))
        .fold(f64::INFINITY, f64::min)
}

/// Per-sample cluster labels `y_i = j` for every `x_i` in cluster `j`.
pub fn relabel(state: &ClusterState) -> Vec<usize> {
    let mut labels = vec![0; state.num_samples()];
    for (j, cluster) in state.clusters().iter().enumerate() {
        for &i in &cluster.members {
            labels[i] = j;
        }
    }
    labels
}

/// Cluster-level minimum cross distances, grouped like [`build_proximity`].
pub fn build_single_linkage(state: &ClusterState, dist: &DistanceMatrix) -> ProximityMatrix {
    let c = state.num_clusters();
    let labels = state.labels();
    let mut values = vec![f64::INFINITY; c * c];
    values.par_chunks_mut(c).enumerate().for_each(|(a, out)| {
        for &i in &state.clusters()[a].members {
            for (j, &d) in dist.row(i).iter().enumerate() {
                let slot = &mut out[labels[j]];
                if d < *slot {
                    *slot = d;
                }
            }
        }
        out[a] = 0.0;
    });
    ProximityMatrix::from_values(c, values)
}

#[derive(Debug, Clone, Copy)]
struct PairKey {
    value: f64,
    tie: f64,
    lo: usize,
    hi: usize,
}

impl PairKey {
    fn cmp(&self, other: &PairKey) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then(self.tie.total_cmp(&other.tie))
            .then(self.lo.cmp(&other.lo))
            .then(self.hi.cmp(&other.hi))
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    key: PairKey,
    partner: usize,
}

/// Mutable clustering state over storage slots for the duration of a stage.
struct Merger<'a> {
    config: &'a EngineConfig,
    prox: ProximityMatrix,
    single: Option<ProximityMatrix>,
    stats: Vec<IntraStats>,
    members: Vec<Vec<usize>>,
    best: Vec<Option<Candidate>>,
}

impl<'a> Merger<'a> {
    fn new(state: &ClusterState, prox: &ProximityMatrix, dist: &DistanceMatrix, config: &'a EngineConfig) -> Self {
        let prox = prox.compacted();
        let single = config.criterion.uses_single_linkage().then(|| build_single_linkage(state, dist));
        let mut merger = Merger {
            config,
            prox,
            single,
            stats: state.clusters().iter().map(Cluster::stats).collect(),
            members: state.clusters().iter().map(|c| c.members.clone()).collect(),
            best: Vec::new(),
        };
        merger.best = (0..merger.prox.cap())
            .into_par_iter()
            .map(|s| merger.scan_row(s))
            .collect();
        merger
    }

    #[inline]
    fn linkage_row(&self, s: usize) -> &[f64] {
        match &self.single {
            Some(m) => m.slot_row(s),
            None => self.prox.slot_row(s),
        }
    }

    #[inline]
    fn key(&self, s: usize, t: usize, linkage: f64) -> PairKey {
        let (a, b) = (&self.stats[s], &self.stats[t]);
        let tie = match self.config.tie_break {
            TieBreak::IntraThenIndex => a.dispersion + b.dispersion,
            TieBreak::Index => 0.0,
        };
        PairKey {
            value: self.config.criterion.combine(linkage, a, b),
            tie,
            lo: s.min(t),
            hi: s.max(t),
        }
    }

    fn scan_row(&self, s: usize) -> Option<Candidate> {
        if !self.prox.is_alive(s) {
            return None;
        }
        let row = self.linkage_row(s);
        let mut best: Option<Candidate> = None;
        for t in self.prox.live_slots() {
            if t == s {
                continue;
            }
            let key = self.key(s, t, row[t]);
            if best.is_none_or(|b| key.cmp(&b.key) == Ordering::Less) {
                best = Some(Candidate { key, partner: t });
            }
        }
        best
    }

    fn live(&self) -> usize {
        self.prox.dim()
    }

    /// Select the best pair, merge it, and return the event.
    fn step(&mut self, stage: usize, step: usize) -> MergeEvent {
        let chosen = self
            .best
            .iter()
            .flatten()
            .min_by(|x, y| x.key.cmp(&y.key))
            .copied()
            .expect("a stage step needs at least two live clusters");
        let (a, b) = (chosen.key.lo, chosen.key.hi);
        let (na, nb) = (self.stats[a].size, self.stats[b].size);
        let event = MergeEvent {
            stage,
            step,
            a: self.prox.index_of_slot(a),
            b: self.prox.index_of_slot(b),
            value: chosen.key.value,
            new_id: self.prox.index_of_slot(a),
            n_a: na,
            n_b: nb,
        };

        let d_ab = self.prox.at(a, b);
        self.stats[a] = update_intra_on_merge(self.stats[a], self.stats[b], d_ab, self.config.intra_mode);
        self.prox.merge_slots_with(a, b, |x, y| update_inter_on_merge(x, y, na, nb));
        if let Some(single) = self.single.as_mut() {
            single.merge_slots_with(a, b, f64::min);
        }
        let moved = std::mem::take(&mut self.members[b]);
        self.members[a].extend(moved);
        self.best[b] = None;

        for s in 0..self.best.len() {
            if s == a || !self.prox.is_alive(s) {
                continue;
            }
            match self.best[s] {
                Some(c) if c.partner != a && c.partner != b => {
                    let key = self.key(s, a, self.linkage_row(s)[a]);
                    if key.cmp(&c.key) == Ordering::Less {
                        self.best[s] = Some(Candidate { key, partner: a });
                    }
                }
                _ => self.best[s] = self.scan_row(s),
            }
        }
        self.best[a] = self.scan_row(a);
        event
    }

    fn finish(self, n: usize) -> (ClusterState, ProximityMatrix) {
        let clusters = self
            .prox
            .live_slots()
            .map(|s| Cluster {
                members: self.members[s].clone(),
                pair_sum: self.stats[s].pair_sum,
                dispersion: self.stats[s].dispersion,
            })
            .collect();
        (ClusterState::from_clusters(n, clusters), self.prox.compacted())
    }
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub state: ClusterState,
    pub prox: ProximityMatrix,
    pub events: Vec<MergeEvent>,
}

/// One full clustering stage: exactly `k = round(m N)` greedy merges.
pub fn run_stage(
    state: &ClusterState,
    prox: &ProximityMatrix,
    dist: &DistanceMatrix,
    config: &EngineConfig,
    stage: usize,
) -> Result<StageOutcome> {
    let k = config.merges_per_stage(dist.len())?;
    run_merges(state, prox, dist, config, stage, k)
}

/// A stage of `merges` greedy merges; the stop rule may ask for fewer than
/// `k` at the end of a run.
pub fn run_merges(
    state: &ClusterState,
    prox: &ProximityMatrix,
    dist: &DistanceMatrix,
    config: &EngineConfig,
    stage: usize,
    merges: usize,
) -> Result<StageOutcome> {
    config.merges_per_stage(dist.len())?;
    let c = state.num_clusters();
    if c <= merges {
        return Err(Error::StageRefused { clusters: c, merges });
    }
    if prox.dim() != c || state.num_samples() != dist.len() {
        return Err(Error::data(format!(
            "proximity ({}) / distance ({}) sizes disagree with state ({c} clusters, {} samples)",
            prox.dim(),
            dist.len(),
            state.num_samples()
        )));
    }
    let mut merger = Merger::new(state, prox, dist, config);
    let events: Vec<MergeEvent> = (0..merges).map(|step| merger.step(stage, step)).collect();
    debug_assert_eq!(merger.live(), c - merges);
    let (state, prox) = merger.finish(dist.len());
    Ok(StageOutcome { state, prox, events })
}

/// Rebuild the partition reached by `events` from sample specificity,
/// re-evaluating every merge on the current distances.
///
/// Intra statistics follow `mode` along the recorded merge order, so
/// paper-mode dispersions keep their merge-history semantics after the
/// features move. Exact mode reproduces a from-scratch evaluation.
pub fn replay(dist: &DistanceMatrix, events: &[MergeEvent], mode: IntraMode) -> Result<ClusterState> {
    let n = dist.len();
    let mut clusters: Vec<Cluster> = ClusterState::singletons(n).clusters().to_vec();
    for e in events {
        if e.a >= e.b || e.b >= clusters.len() {
            return Err(Error::data(format!(
                "merge log stage {} step {} names ({}, {}) with {} clusters live",
                e.stage,
                e.step,
                e.a,
                e.b,
                clusters.len()
            )));
        }
        let b = clusters.remove(e.b);
        let a = &mut clusters[e.a];
        let d_ab = inter_mean(&a.members, &b.members, dist);
        let merged = update_intra_on_merge(a.stats(), b.stats(), d_ab, mode);
        a.members.extend(b.members);
        a.pair_sum = merged.pair_sum;
        a.dispersion = merged.dispersion;
    }
    Ok(ClusterState::from_clusters(n, clusters))
}

fn inter_mean(a: &[usize], b: &[usize], dist: &DistanceMatrix) -> f64 {
    let mut sum = 0.0;
    for &i in a {
        let row = dist.row(i);
        sum += b.iter().map(|&j| row[j]).sum::<f64>();
    }
    sum / (a.len() * b.len()) as f64
}

/// Result of clustering fixed features until the stop rule.
#[derive(Debug, Clone)]
pub struct ClusteringRun {
    pub state: ClusterState,
    pub events: Vec<MergeEvent>,
    pub stages: usize,
}

/// Cluster from sample specificity (all singletons) until the stop rule.
pub fn cluster(dist: &DistanceMatrix, config: &EngineConfig) -> Result<ClusteringRun> {
    let k = config.merges_per_stage(dist.len())?;
    let mut state = ClusterState::singletons(dist.len());
    let mut prox = build_proximity(&state, dist);
    let mut events = Vec::new();
    let mut stage = 0;
    while let Some(merges) = config.next_stage_merges(state.num_clusters(), k) {
        let out = run_merges(&state, &prox, dist, config, stage, merges)?;
        log::debug!("stage {stage}: {} clusters", out.state.num_clusters());
        state = out.state;
        prox = out.prox;
        events.extend(out.events);
        stage += 1;
    }
    Ok(ClusteringRun { state, events, stages: stage })
}
