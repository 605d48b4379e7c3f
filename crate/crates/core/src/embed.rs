//! Free per-sample embeddings trained with a non-parametric softmax over a
//! lookup table of class centroids, alternated with clustering stages.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distance::{pairwise_distances, DistanceMatrix};
use crate::engine::{relabel, replay, run_merges, EngineConfig, MergeEvent};
use crate::error::{Error, Result};
use crate::eval::{cmc_rank_k, mean_silhouette, RetrievalProtocol};
use crate::proximity::{build_proximity, ClusterState};
use crate::store::{norm, normalize_rows, FeatureStore, UNIT_NORM_TOL};

// Not given by the paper; common values for OIM-style lookup tables.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_MOMENTUM: f64 = 0.5;

/// One unit-norm centroid feature per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    dim: usize,
    values: Vec<f64>,
    momentum: f64,
    temperature: f64,
}

impl LookupTable {
    pub fn new(values: Vec<f64>, dim: usize, momentum: f64, temperature: f64) -> Result<Self> {
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(Error::config("lookup table needs at least one row of positive width"));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::config(format!("temperature must be positive, got {temperature}")));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1], got {momentum}")));
        }
        Ok(LookupTable {
            dim,
            values,
            momentum,
            temperature,
        })
    }

    /// Normalised class centroids of `features` under dense `labels`.
    pub fn from_centroids(
        store: &FeatureStore,
        labels: &[usize],
        momentum: f64,
        temperature: f64,
    ) -> Result<Self> {
        let dim = store.dim();
        let classes = check_labels(labels, store.len())?;
        let mut sums = vec![0.0; classes * dim];
        let mut counts = vec![0usize; classes];
        for (row, &l) in store.rows().zip(labels) {
            counts[l] += 1;
            for (s, x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(row) {
                *s += x;
            }
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::data(format!("class {empty} has no samples")));
        }
        for (c, centroid) in sums.chunks_exact_mut(dim).enumerate() {
            let n = norm(centroid);
            if n > 0.0 {
                centroid.iter_mut().for_each(|x| *x /= n);
            } else {
                // opposite members cancelled out; fall back to the first one
                let first = labels.iter().position(|&l| l == c).unwrap();
                let row = store.row(first);
                let rn = norm(row);
                centroid.iter_mut().zip(row).for_each(|(x, r)| *x = r / rn);
            }
        }
        Self::new(sums, dim, momentum, temperature)
    }

    pub fn num_classes(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.values[c * self.dim..(c + 1) * self.dim]
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    fn logits_into(&self, v: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.values
                .chunks_exact(self.dim)
                .map(|row| dot(row, v) / self.temperature),
        );
    }
}

fn check_labels(labels: &[usize], n: usize) -> Result<usize> {
    if labels.len() != n {
        return Err(Error::data(format!("{} labels for {n} samples", labels.len())));
    }
    Ok(labels.iter().max().map_or(0, |m| m + 1))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place softmax with max subtraction; returns log of the normaliser
/// relative to the max.
fn softmax_in_place(z: &mut [f64]) -> (f64, f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in z.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    z.iter_mut().for_each(|x| *x /= total);
    (max, total.ln())
}

/// Class distribution `p(j | v) ∝ exp(V_j · v / τ)`.
pub fn repelled_probability(v: &[f64], lut: &LookupTable) -> Result<Vec<f64>> {
    if v.len() != lut.dim {
        return Err(Error::data(format!("feature width {} vs table width {}", v.len(), lut.dim)));
    }
    let mut z = Vec::with_capacity(lut.num_classes());
    lut.logits_into(v, &mut z);
    softmax_in_place(&mut z);
    Ok(z)
}

/// Mean negative log-likelihood of `labels` over rows of `features`, and its
/// gradient with respect to every feature entry. The table is constant.
pub fn repelled_loss_and_gradient(
    features: &[f64],
    labels: &[usize],
    lut: &LookupTable,
) -> Result<(f64, Vec<f64>)> {
    let dim = lut.dim;
    if features.len() != labels.len() * dim {
        return Err(Error::data("feature block does not match label count"));
    }
    let classes = lut.num_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::data(format!("label {bad} outside {classes} classes")));
    }
    let batch = labels.len() as f64;
    let scale = 1.0 / (batch * lut.temperature);
    let mut grad = vec![0.0; features.len()];
    let mut loss = 0.0;
    let mut z = Vec::with_capacity(classes);
    for ((v, g), &y) in features.chunks_exact(dim).zip(grad.chunks_exact_mut(dim)).zip(labels) {
        lut.logits_into(v, &mut z);
        let zy = z[y];
        let (max, log_total) = softmax_in_place(&mut z);
        loss += max + log_total - zy;
        // dL/dv = (E_p[V] - V_y) / τ
        for (j, &p) in z.iter().enumerate() {
            let coef = if j == y { p - 1.0 } else { p };
            if coef != 0.0 {
                for (gk, vk) in g.iter_mut().zip(lut.row(j)) {
                    *gk += coef * vk;
                }
            }
        }
        g.iter_mut().for_each(|x| *x *= scale);
    }
    Ok((loss / batch, grad))
}

/// `V_y <- normalize(momentum V_y + (1 - momentum) v)` for each sample, in
/// order.
pub fn lut_ema_update(lut: &mut LookupTable, features: &[f64], labels: &[usize]) -> Result<()> {
    let dim = lut.dim;
    if features.len() != labels.len() * dim {
        return Err(Error::data("feature block does not match label count"));
    }
    let classes = lut.num_classes();
    let m = lut.momentum;
    if m == 1.0 {
        return Ok(());
    }
    for (v, &y) in features.chunks_exact(dim).zip(labels) {
        if y >= classes {
            return Err(Error::data(format!("label {y} outside {classes} classes")));
        }
        let row = &mut lut.values[y * dim..(y + 1) * dim];
        for (r, x) in row.iter_mut().zip(v) {
            *r = m * *r + (1.0 - m) * x;
        }
        let n = norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|r| *r /= n);
        }
    }
    Ok(())
}

/// Step schedule: `initial` until `decay_epoch`, then `decayed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_epoch: usize,
    pub decayed: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            initial: lr,
            decay_epoch: usize::MAX,
            decayed: lr,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_epoch {
            self.initial
        } else {
            self.decayed
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: LrSchedule,
    pub batch_size: usize,
    pub temperature: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// 20 epochs, batch 16, learning rate 0.1 decayed to 0.01 after 15 epochs.
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: LrSchedule {
                initial: 0.1,
                decay_epoch: 15,
                decayed: 0.01,
            },
            batch_size: 16,
            temperature: DEFAULT_TEMPERATURE,
            momentum: DEFAULT_MOMENTUM,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be positive"));
        }
        if !(self.lr.initial >= 0.0 && self.lr.decayed >= 0.0) {
            return Err(Error::config("learning rates must be non-negative"));
        }
        if self.lr.decay_epoch != usize::MAX && self.lr.decay_epoch > self.epochs {
            return Err(Error::config("decay epoch exceeds the epoch count"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

fn is_unit(store: &FeatureStore) -> bool {
    store.is_normalized() || store.rows().all(|r| (norm(r) - 1.0).abs() <= UNIT_NORM_TOL)
}

/// Refine the embeddings under the current labels with mini-batch gradient
/// descent on the repelled loss, renormalising updated rows after each step
/// and refreshing the table by moving average.
pub fn train_stage(
    store: &FeatureStore,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<(FeatureStore, TrainReport)> {
    config.validate()?;
    let start = if is_unit(store) {
        store.clone()
    } else {
        normalize_rows(store)?
    };
    let mut lut = LookupTable::from_centroids(&start, labels, config.momentum, config.temperature)?;
    let dim = start.dim();
    let mut features = start.as_slice().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..start.len()).collect();
    let mut block = Vec::with_capacity(config.batch_size * dim);
    let mut block_labels = Vec::with_capacity(config.batch_size);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.lr.at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            block.clear();
            block_labels.clear();
            for &i in batch {
                block.extend_from_slice(&features[i * dim..(i + 1) * dim]);
                block_labels.push(labels[i]);
            }
            let (loss, grad) = repelled_loss_and_gradient(&block, &block_labels, &lut)?;
            total += loss;
            batches += 1;
            if lr > 0.0 {
                for (v, g) in block.chunks_exact_mut(dim).zip(grad.chunks_exact(dim)) {
                    v.iter_mut().zip(g).for_each(|(x, gx)| *x -= lr * gx);
                    let n = norm(v);
                    v.iter_mut().for_each(|x| *x /= n);
                }
                for (k, &i) in batch.iter().enumerate() {
                    features[i * dim..(i + 1) * dim].copy_from_slice(&block[k * dim..(k + 1) * dim]);
                }
            }
            lut_ema_update(&mut lut, &block, &block_labels)?;
        }
        epoch_losses.push(total / batches as f64);
    }
    let refined = if config.lr.initial == 0.0 && config.lr.decayed == 0.0 {
        start
    } else {
        start.with_features(features, true)?
    };
    Ok((refined, TrainReport { epoch_losses }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub cluster_count: usize,
    pub loss_final: f64,
    pub perf: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct AlternationResult {
    pub best_store: FeatureStore,
    pub best_state: ClusterState,
    /// Stage that produced the best snapshot; `None` when no stage ran.
    pub best_stage: Option<usize>,
    /// Partition and features when the loop ended.
    pub final_state: ClusterState,
    pub final_store: FeatureStore,
    pub history: Vec<StageRecord>,
    pub events: Vec<MergeEvent>,
}

/// Validation signal for a finished stage: features after training, the
/// partition after clustering, and the sample distances used.
pub type EvalHook<'a> = dyn FnMut(&FeatureStore, &ClusterState, &DistanceMatrix) -> Result<f64> + 'a;

/// Rank-1 on a one-query-per-identity split when ground truth exists,
/// otherwise the mean silhouette of the partition.
pub fn default_validation(store: &FeatureStore, state: &ClusterState, dist: &DistanceMatrix) -> Result<f64> {
    match store.ground_truth() {
        Some(truth) => {
            let protocol = RetrievalProtocol::one_query_per_identity(truth)?;
            Ok(cmc_rank_k(&protocol, store, &[1])?[0])
        }
        None => Ok(mean_silhouette(dist, state.labels())),
    }
}

/// Alternate embedding refinement and clustering stages starting from
/// sample specificity, keeping the snapshot with the best validation score.
///
/// `max_stages` caps the loop; the engine's stop rule ends it otherwise.
pub fn alternate(
    store: &FeatureStore,
    engine: &EngineConfig,
    train: &TrainConfig,
    max_stages: Option<usize>,
    eval_hook: &mut EvalHook<'_>,
) -> Result<AlternationResult> {
    let n = store.len();
    let k = engine.merges_per_stage(n)?;
    train.validate()?;
    let mut result = AlternationResult {
        best_store: store.clone(),
        best_state: ClusterState::singletons(n),
        best_stage: None,
        final_state: ClusterState::singletons(n),
        final_store: store.clone(),
        history: Vec::new(),
        events: Vec::new(),
    };
    let limit = max_stages.unwrap_or(usize::MAX);
    if limit == 0 {
        return Ok(result);
    }

    let mut features = if is_unit(store) { store.clone() } else { normalize_rows(store)? };
    let mut labels: Vec<usize> = (0..n).collect();
    let mut clusters = n;
    let mut best_perf = f64::NEG_INFINITY;
    let mut stage = 0;
    while stage < limit {
        let Some(merges) = engine.next_stage_merges(clusters, k) else {
            break;
        };
        let started = Instant::now();
        let stage_train = TrainConfig {
            seed: train.seed.wrapping_add(stage as u64),
            ..train.clone()
        };
        let (refined, report) = train_stage(&features, &labels, &stage_train)?;
        features = refined;
        let dist = pairwise_distances(&features)?;
        let state = replay(&dist, &result.events, engine.intra_mode)?;
        debug_assert_eq!(state.labels(), &labels[..]);
        let prox = build_proximity(&state, &dist);
        let out = run_merges(&state, &prox, &dist, engine, stage, merges)?;
        labels = relabel(&out.state);
        clusters = out.state.num_clusters();
        let perf = eval_hook(&features, &out.state, &dist)?;
        log::info!("stage {stage}: {clusters} clusters, perf {perf:.4}");
        result.history.push(StageRecord {
            stage,
            cluster_count: clusters,
            loss_final: report.epoch_losses.last().copied().unwrap_or(f64::NAN),
            perf,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        result.events.extend(out.events);
        if perf > best_perf {
            best_perf = perf;
            result.best_store = features.clone();
            result.best_state = out.state.clone();
            result.best_stage = Some(stage);
        }
        result.final_state = out.state;
        stage += 1;
    }
    result.final_store = features;
    Ok(result)
}
