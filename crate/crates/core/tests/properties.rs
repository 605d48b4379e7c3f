mod common;

use proptest::prelude::*;

use common::*;
use dbc::eval::{average_precision, cmc_rank_k, mean_average_precision, partition_scores, RetrievalProtocol};
use dbc::proximity::{intra_dispersion, update_inter_on_merge, update_intra_on_merge, IntraStats};
use dbc::{
    build_proximity, cluster, normalize_rows, pairwise_distances, relabel, ClusterState, Criterion, EngineConfig,
    FeatureStore, IntraMode, StopRule,
};

fn points(max_n: usize, max_dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2..=max_n, 1..=max_dim).prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-5.0..5.0f64, d), n))
}

fn store_of(points: &[Vec<f64>]) -> FeatureStore {
    FeatureStore::with_index_ids(flatten(points), points[0].len()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn distances_symmetric_with_zero_diagonal(pts in points(30, 6)) {
        let d = pairwise_distances(&store_of(&pts)).unwrap();
        for i in 0..pts.len() {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..pts.len() {
                prop_assert_eq!(d.get(i, j), d.get(j, i));
                prop_assert!((d.get(i, j) - euclid(&pts[i], &pts[j])).abs() < 1e-12);
                for k in 0..pts.len().min(5) {
                    prop_assert!(d.get(i, j) <= d.get(i, k) + d.get(k, j) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn distances_commute_with_permutation(pts in points(25, 4), seed in any::<u64>()) {
        let n = pts.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&p| pts[p].clone()).collect();
        let d = pairwise_distances(&store_of(&pts)).unwrap();
        let dp = pairwise_distances(&store_of(&permuted)).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(dp.get(i, j), d.get(perm[i], perm[j]));
            }
        }
    }

    #[test]
    fn normalized_rows_have_unit_norm(pts in points(20, 8)) {
        prop_assume!(pts.iter().all(|r| r.iter().any(|x| x.abs() > 1e-3)));
        let s = normalize_rows(&store_of(&pts)).unwrap();
        for row in s.rows() {
            prop_assert!((row.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn inter_update_matches_recomputation(pts in points(40, 5), split in 1usize..1000, cut in 1usize..1000) {
        let n = pts.len();
        prop_assume!(n >= 3);
        // three clusters: [0, a), [a, b), [b, n)
        let a = 1 + split % (n - 2);
        let b = a + 1 + cut % (n - a - 1);
        let groups: Vec<Vec<usize>> = vec![(0..a).collect(), (a..b).collect(), (b..n).collect()];
        let got = update_inter_on_merge(
            inter(&pts, &groups[0], &groups[2]),
            inter(&pts, &groups[1], &groups[2]),
            groups[0].len(),
            groups[1].len(),
        );
        let merged: Vec<usize> = (0..b).collect();
        prop_assert!((got - inter(&pts, &merged, &groups[2])).abs() < 1e-9);
    }

    #[test]
    fn exact_intra_update_matches_recomputation(pts in points(40, 5), split in 1usize..1000) {
        let n = pts.len();
        let a: Vec<usize> = (0..1 + split % (n - 1)).collect();
        let b: Vec<usize> = (a.len()..n).collect();
        let d = pairwise_distances(&store_of(&pts)).unwrap();
        let stats = |m: &[usize]| {
            let (pair_sum, dispersion) = intra_dispersion(m, &d);
            IntraStats { size: m.len(), pair_sum, dispersion }
        };
        let merged = update_intra_on_merge(stats(&a), stats(&b), inter(&pts, &a, &b), IntraMode::Exact);
        let all: Vec<usize> = (0..n).collect();
        prop_assert!((merged.dispersion - intra(&pts, &all)).abs() < 1e-9);
        prop_assert!((stats(&all).dispersion - intra(&pts, &all)).abs() < 1e-9);
    }

    #[test]
    fn paper_intra_update_is_a_convex_combination(da in 0.0..10.0f64, db in 0.0..10.0f64, dab in 0.0..10.0f64,
                                                   na in 1usize..50, nb in 1usize..50) {
        let a = IntraStats { size: na, pair_sum: 0.0, dispersion: da };
        let b = IntraStats { size: nb, pair_sum: 0.0, dispersion: db };
        let q = update_intra_on_merge(a, b, dab, IntraMode::PaperEq7).dispersion;
        let lo = da.min(db).min(dab);
        let hi = da.max(db).max(dab);
        prop_assert!(q >= lo - 1e-12 && q <= hi + 1e-12);
    }

    #[test]
    fn average_linkage_matches_naive_oracle(pts in points(14, 3)) {
        let config = EngineConfig::default()
            .with_criterion(Criterion::DispersionNoReg)
            .with_merge_percent(0.3)
            .with_stop(StopRule::MinClusters(1));
        let run = cluster(&pairwise_distances(&store_of(&pts)).unwrap(), &config).unwrap();
        let got: Vec<(usize, usize)> = run.events.iter().map(|e| (e.a, e.b)).collect();
        prop_assert_eq!(got, naive_average_linkage(&pts));
    }

    #[test]
    fn stages_merge_exactly_k(pts in points(60, 3), target in 1usize..10) {
        let n = pts.len();
        prop_assume!(n >= 20);
        let config = EngineConfig::default().with_stop(StopRule::MinClusters(target));
        let k = config.merges_per_stage(n).unwrap();
        let run = cluster(&pairwise_distances(&store_of(&pts)).unwrap(), &config).unwrap();
        prop_assert_eq!(run.state.num_clusters(), target.min(n));
        for stage in 0..run.stages {
            let count = run.events.iter().filter(|e| e.stage == stage).count();
            if stage + 1 < run.stages {
                prop_assert_eq!(count, k);
            } else {
                prop_assert!(count >= 1 && count <= k);
            }
        }
        let labels = relabel(&run.state);
        prop_assert_eq!(&labels[..], run.state.labels());
        prop_assert!(run.state.validate().is_ok());
    }

    #[test]
    fn merge_choice_invariant_under_doubling(pts in points(30, 3), lambda in 0.0..2.0f64, single in any::<bool>()) {
        let crit = if single { Criterion::SingleLinkage } else { Criterion::Dispersion { lambda } };
        let config = EngineConfig::default()
            .with_criterion(crit)
            .with_merge_percent(0.5)
            .with_stop(StopRule::MinClusters(1));
        let scaled: Vec<Vec<f64>> = pts.iter().map(|r| r.iter().map(|x| 2.0 * x).collect()).collect();
        let base = cluster(&pairwise_distances(&store_of(&pts)).unwrap(), &config).unwrap();
        let big = cluster(&pairwise_distances(&store_of(&scaled)).unwrap(), &config).unwrap();
        let pairs = |r: &dbc::engine::ClusteringRun| r.events.iter().map(|e| (e.a, e.b)).collect::<Vec<_>>();
        prop_assert_eq!(pairs(&base), pairs(&big));
    }

    #[test]
    fn proximity_rows_follow_cluster_permutation(pts in points(20, 3), c in 2usize..6, rot in 1usize..6) {
        let n = pts.len();
        prop_assume!(n >= c);
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let shifted: Vec<usize> = labels.iter().map(|&l| (l + rot) % c).collect();
        let d = pairwise_distances(&store_of(&pts)).unwrap();
        let p = build_proximity(&ClusterState::from_labels(&labels, &d).unwrap(), &d);
        let q = build_proximity(&ClusterState::from_labels(&shifted, &d).unwrap(), &d);
        for a in 0..c {
            for b in 0..c {
                if a != b {
                    let moved = q.get((a + rot) % c, (b + rot) % c).unwrap();
                    prop_assert!((p.get(a, b).unwrap() - moved).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn retrieval_metrics_match_oracles(pts in points(18, 2), ids in prop::collection::vec(0i64..3, 18)) {
        let n = pts.len();
        prop_assume!(n >= 4);
        let ids = &ids[..n];
        let queries: Vec<usize> = (0..n).step_by(3).filter(|q| (0..n).any(|g| g % 3 != 0 && ids[g] == ids[*q])).collect();
        prop_assume!(!queries.is_empty());
        let gallery: Vec<usize> = (0..n).filter(|g| g % 3 != 0).collect();
        let protocol = RetrievalProtocol::new(queries.clone(), gallery.clone(), ids.to_vec()).unwrap();
        let store = store_of(&pts);
        let cmc = cmc_rank_k(&protocol, &store, &[1, 5, 10]).unwrap();
        prop_assert!(cmc[0] <= cmc[1] && cmc[1] <= cmc[2]);
        prop_assert_eq!(cmc[0], naive_cmc(&pts, &queries, &gallery, ids, 1));
        prop_assert_eq!(mean_average_precision(&protocol, &store).unwrap(), naive_map(&pts, &queries, &gallery, ids));

        let scaled: Vec<Vec<f64>> = pts.iter().map(|r| r.iter().map(|x| 3.0 * x).collect()).collect();
        let map = mean_average_precision(&protocol, &store).unwrap();
        let map_scaled = mean_average_precision(&protocol, &store_of(&scaled)).unwrap();
        prop_assert!((map - map_scaled).abs() < 1e-12);
    }

    #[test]
    fn partition_scores_ignore_label_names(labels in prop::collection::vec(0usize..5, 1..40),
                                           truth in prop::collection::vec(0i64..5, 40)) {
        let truth = &truth[..labels.len()];
        let renamed: Vec<usize> = labels.iter().map(|l| 100 - 7 * l).collect();
        let (f1, purity) = partition_scores(&labels, truth).unwrap();
        prop_assert_eq!((f1, purity), partition_scores(&renamed, truth).unwrap());
        prop_assert!((0.0..=1.0).contains(&f1) && (0.0..=1.0).contains(&purity));
        prop_assert_eq!(partition_scores(truth, truth).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn average_precision_matches_rational_oracle(rel in prop::collection::vec(any::<bool>(), 1..30)) {
        prop_assert_eq!(average_precision(&rel), ratio_to_f64(rational_ap(&rel)));
    }
}
