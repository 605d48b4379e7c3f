//! Small 1-D constructions exhibiting the two effects of the intra-dispersion
//! regulariser: singletons merge first, and loose clusters are left alone.

use crate::distance::DistanceMatrix;
use crate::error::Result;
use crate::proximity::{build_proximity, ClusterState};

use super::{criterion_value, Criterion};

#[derive(Debug, Clone)]
pub struct Scenario {
    pub points: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Criterion value of every cluster pair, in the order they would be merged.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRanking {
    pub ranked: Vec<((usize, usize), f64)>,
}

impl PairRanking {
    pub fn chosen(&self) -> (usize, usize) {
        self.ranked[0].0
    }

    pub fn value(&self, a: usize, b: usize) -> Option<f64> {
        self.ranked
            .iter()
            .find(|((x, y), _)| (*x, *y) == (a.min(b), a.max(b)))
            .map(|(_, v)| *v)
    }
}

/// Clusters `{0}`, `{4}`, `{7, 9}`. The middle singleton is at mean distance
/// 4 from both neighbours, so only the regulariser separates the options.
pub fn singleton_priority() -> Scenario {
    Scenario {
        points: vec![0.0, 4.0, 7.0, 9.0],
        labels: vec![0, 1, 2, 2],
    }
}

/// Brown `{10, 11}` sits between a loose blue cluster `{4, 17}` (mean cross
/// distance 6.5) and a compact green one `{18.5, 19}` (8.25).
pub fn poor_cluster_deferral() -> Scenario {
    Scenario {
        points: vec![10.0, 11.0, 4.0, 17.0, 18.5, 19.0],
        labels: vec![0, 0, 1, 1, 2, 2],
    }
}

pub const BROWN: usize = 0;
pub const BLUE: usize = 1;
pub const GREEN: usize = 2;

/// Rank all cluster pairs of a scenario under `crit`, using the engine's
/// tie-break (smaller summed intra-dispersion, then index).
pub fn rank_pairs(scenario: &Scenario, crit: Criterion) -> Result<PairRanking> {
    let dist = DistanceMatrix::from_line(&scenario.points);
    let state = ClusterState::from_labels(&scenario.labels, &dist)?;
    let prox = build_proximity(&state, &dist);
    let c = state.num_clusters();
    let mut ranked = Vec::new();
    for a in 0..c {
        for b in a + 1..c {
            let v = criterion_value(crit, a, b, &state, &prox, &dist)?;
            let tie = state.clusters()[a].dispersion + state.clusters()[b].dispersion;
            ranked.push(((a, b), v, tie));
        }
    }
    ranked.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.2.total_cmp(&y.2)).then(x.0.cmp(&y.0)));
    Ok(PairRanking {
        ranked: ranked.into_iter().map(|(p, v, _)| (p, v)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_merges, EngineConfig, StopRule};

    fn dispersion(lambda: f64) -> Criterion {
        Criterion::Dispersion { lambda }
    }

    #[test]
    fn singleton_wins_with_regulariser() {
        let r = rank_pairs(&singleton_priority(), dispersion(0.5)).unwrap();
        assert_eq!(r.chosen(), (0, 1));
        assert_eq!(r.value(0, 1), Some(4.0));
        assert_eq!(r.value(1, 2), Some(4.5));
    }

    #[test]
    fn singleton_tie_without_regulariser() {
        let r = rank_pairs(&singleton_priority(), dispersion(0.0)).unwrap();
        assert_eq!(r.value(0, 1), r.value(1, 2));
    }

    #[test]
    fn singleton_preference_is_monotone_in_lambda() {
        for i in 1..=50 {
            let lambda = i as f64 * 0.2;
            let r = rank_pairs(&singleton_priority(), dispersion(lambda)).unwrap();
            assert_eq!(r.chosen(), (0, 1), "lambda {lambda}");
            assert!(r.value(0, 1).unwrap() < r.value(1, 2).unwrap());
        }
    }

    #[test]
    fn loose_cluster_deferred() {
        let s = poor_cluster_deferral();
        assert_eq!(rank_pairs(&s, dispersion(0.5)).unwrap().chosen(), (BROWN, GREEN));
        assert_eq!(rank_pairs(&s, dispersion(0.0)).unwrap().chosen(), (BROWN, BLUE));
    }

    #[test]
    fn lambda_limits_order_pairs() {
        let s = poor_cluster_deferral();
        // λ → ∞: order by summed intra-dispersion (brown 0.5, blue 6.5, green 0.25)
        let big = rank_pairs(&s, dispersion(1e9)).unwrap();
        let order: Vec<_> = big.ranked.iter().map(|r| r.0).collect();
        assert_eq!(order, vec![(BROWN, GREEN), (BLUE, GREEN), (BROWN, BLUE)]);
        // λ → 0: order by inter-dispersion (6.5, 8.25, 8.25 tied on the last two)
        let small = rank_pairs(&s, dispersion(0.0)).unwrap();
        assert_eq!(small.chosen(), (BROWN, BLUE));
        assert_eq!(small.value(BROWN, GREEN), small.value(BLUE, GREEN));
    }

    #[test]
    fn engine_agrees_with_ranking() {
        let s = poor_cluster_deferral();
        let dist = DistanceMatrix::from_line(&s.points);
        let state = ClusterState::from_labels(&s.labels, &dist).unwrap();
        let prox = build_proximity(&state, &dist);
        for lambda in [0.0, 0.5, 3.0] {
            let cfg = EngineConfig::default()
                .with_criterion(dispersion(lambda))
                .with_merge_percent(0.2)
                .with_stop(StopRule::MinClusters(1));
            let out = run_merges(&state, &prox, &dist, &cfg, 0, 1).unwrap();
            let e = &out.events[0];
            let expect = rank_pairs(&s, dispersion(lambda)).unwrap().chosen();
            assert_eq!((e.a, e.b), expect, "lambda {lambda}");
        }
    }
}
