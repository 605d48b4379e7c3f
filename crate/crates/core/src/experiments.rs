//! Experiment drivers shared by the CLI and the acceptance suite: criterion
//! ablation, λ sweeps, and stage-time scaling.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::distance::pairwise_distances;
use crate::embed::{alternate, default_validation, LrSchedule, TrainConfig};
use crate::engine::{cluster, run_stage, Criterion, EngineConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricReport, RetrievalProtocol};
use crate::proximity::{build_proximity, ClusterState};
use crate::store::FeatureStore;
use crate::synthetic::{generate_synthetic, SyntheticSpec};

/// How each configuration of an experiment is run.
#[derive(Debug, Clone, Default)]
pub enum Pipeline {
    /// Cluster the given features to the stop rule; features are untouched.
    #[default]
    ClusterOnly,
    /// Alternate training and clustering. Retrieval is scored on the best
    /// stage's features, partition agreement on the final partition so
    /// criteria are compared at the same cluster count.
    Alternate { train: TrainConfig, max_stages: Option<usize> },
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: MetricReport,
    pub clusters: usize,
    pub labels: Vec<usize>,
    /// Highest per-stage validation score, alternating pipeline only.
    pub best_stage_perf: Option<f64>,
}

/// Short per-stage training used for the benchmark experiments.
pub fn benchmark_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        lr: LrSchedule::constant(0.1),
        seed,
        ..TrainConfig::default()
    }
}

fn truth_of(store: &FeatureStore) -> Result<&[i64]> {
    store
        .ground_truth()
        .ok_or_else(|| Error::config("this experiment needs ground-truth labels"))
}

/// Run one engine configuration and score it against the ground truth.
pub fn run_pipeline(store: &FeatureStore, config: &EngineConfig, pipeline: &Pipeline) -> Result<PipelineOutcome> {
    let truth = truth_of(store)?;
    let protocol = RetrievalProtocol::one_query_per_identity(truth)?;
    let (features, state, best_perf): (FeatureStore, ClusterState, Option<f64>) = match pipeline {
        Pipeline::ClusterOnly => {
            let dist = pairwise_distances(store)?;
            (store.clone(), cluster(&dist, config)?.state, None)
        }
        Pipeline::Alternate { train, max_stages } => {
            let r = alternate(store, config, train, *max_stages, &mut default_validation)?;
            let best = r.history.iter().map(|h| h.perf).fold(f64::NEG_INFINITY, f64::max);
            (r.best_store, r.final_state, Some(best))
        }
    };
    let labels = state.labels().to_vec();
    let report = evaluate(&features, &protocol, &labels)?;
    Ok(PipelineOutcome {
        report,
        clusters: state.num_clusters(),
        labels,
        best_stage_perf: best_perf,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub criterion: String,
    pub lambda: Option<f64>,
    pub clusters: usize,
    pub rank1: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub pairwise_f1: f64,
    pub purity: f64,
}

/// The four criteria compared under one otherwise identical configuration;
/// `lambda` feeds both regularised kinds.
pub fn ablation_criteria(lambda: f64) -> [Criterion; 4] {
    [
        Criterion::SingleLinkage,
        Criterion::SingleLinkageSizeReg { lambda },
        Criterion::DispersionNoReg,
        Criterion::Dispersion { lambda },
    ]
}

pub fn ablation(store: &FeatureStore, base: &EngineConfig, lambda: f64, pipeline: &Pipeline) -> Result<Vec<AblationRow>> {
    truth_of(store)?;
    ablation_criteria(lambda)
        .into_iter()
        .map(|criterion| {
            let cfg = base.clone().with_criterion(criterion);
            let out = run_pipeline(store, &cfg, pipeline)?;
            Ok(AblationRow {
                criterion: criterion.name().to_string(),
                lambda: criterion.lambda(),
                clusters: out.clusters,
                rank1: out.report.rank1,
                map: out.report.map,
                pairwise_f1: out.report.pairwise_f1,
                purity: out.report.purity,
            })
        })
        .collect()
}

/// Aligned plain-text rendering of an ablation table.
pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<16} {:>7} {:>9} {:>8} {:>8} {:>8} {:>8}\n",
        "criterion", "lambda", "clusters", "rank1", "mAP", "F1", "purity"
    );
    for r in rows {
        let lambda = r.lambda.map_or_else(|| "-".to_string(), |l| format!("{l}"));
        out.push_str(&format!(
            "{:<16} {:>7} {:>9} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            r.criterion, lambda, r.clusters, r.rank1, r.map, r.pairwise_f1, r.purity
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub rank1: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub f1: f64,
    pub purity: f64,
}

/// Drop repeated λ values, keeping first occurrences in order. Returns the
/// cleaned list and the duplicates removed.
pub fn dedup_lambdas(lambdas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut kept: Vec<f64> = Vec::new();
    let mut dropped = Vec::new();
    for &l in lambdas {
        if kept.contains(&l) {
            dropped.push(l);
        } else {
            kept.push(l);
        }
    }
    (kept, dropped)
}

pub fn sweep_lambda(
    store: &FeatureStore,
    base: &EngineConfig,
    lambdas: &[f64],
    pipeline: &Pipeline,
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::config("lambda list is empty"));
    }
    truth_of(store)?;
    lambdas
        .iter()
        .map(|&lambda| {
            let cfg = base.clone().with_criterion(Criterion::Dispersion { lambda });
            let out = run_pipeline(store, &cfg, pipeline)?;
            Ok(SweepRow {
                lambda,
                rank1: out.report.rank1,
                map: out.report.map,
                f1: out.report.pairwise_f1,
                purity: out.report.purity,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub wall_ms: f64,
}

/// Samples per identity in the scaling datasets.
const SCALING_IDENTITY_SIZE: usize = 16;
const SCALING_DIM: usize = 32;

/// Time one full clustering stage from sample specificity (distances,
/// proximity build, `k` merges) for each dataset size.
pub fn bench_scaling(sizes: &[usize], config: &EngineConfig, seed: u64) -> Result<Vec<ScalingRow>> {
    if sizes.is_empty() {
        return Err(Error::config("size list is empty"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("sizes must be strictly ascending"));
    }
    for &n in sizes {
        config.merges_per_stage(n)?;
    }
    sizes
        .iter()
        .map(|&n| {
            let identities = n.div_ceil(SCALING_IDENTITY_SIZE).max(1);
            let mut spec = SyntheticSpec::uniform(identities, SCALING_IDENTITY_SIZE, SCALING_DIM, seed);
            spec.sample_cap = spec.sample_cap.max(identities * SCALING_IDENTITY_SIZE);
            let full = generate_synthetic(&spec)?;
            let store = FeatureStore::with_index_ids(full.as_slice()[..n * SCALING_DIM].to_vec(), SCALING_DIM)?;
            let started = Instant::now();
            let dist = pairwise_distances(&store)?;
            let state = ClusterState::singletons(n);
            let prox = build_proximity(&state, &dist);
            let out = run_stage(&state, &prox, &dist, config, 0)?;
            let wall_ms = started.elapsed().as_secs_f64() * 1e3;
            log::info!("N = {n}: {} merges in {wall_ms:.1} ms", out.events.len());
            Ok(ScalingRow { n, wall_ms })
        })
        .collect()
}

/// Least-squares slope of `ln wall_ms` against `ln n`.
pub fn loglog_slope(rows: &[ScalingRow]) -> Option<f64> {
    if rows.len() < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| ((r.n as f64).ln(), r.wall_ms.ln())).collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
