//! Brute-force reference implementations shared by the integration and
//! acceptance tests. Each recomputes from raw points with no shared state.

#![allow(dead_code)]

use num_rational::Ratio;
use rand::Rng;

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn flatten(points: &[Vec<f64>]) -> Vec<f64> {
    points.iter().flatten().copied().collect()
}

/// Mean distance over all cross pairs.
pub fn inter(points: &[Vec<f64>], a: &[usize], b: &[usize]) -> f64 {
    let mut sum = 0.0;
    for &i in a {
        for &j in b {
            sum += euclid(&points[i], &points[j]);
        }
    }
    sum / (a.len() * b.len()) as f64
}

/// Sum over unordered within-cluster pairs divided by the cluster size.
pub fn intra(points: &[Vec<f64>], members: &[usize]) -> f64 {
    let mut sum = 0.0;
    for (x, &i) in members.iter().enumerate() {
        for &j in &members[x + 1..] {
            sum += euclid(&points[i], &points[j]);
        }
    }
    sum / members.len() as f64
}

/// Random partition of `0..n` into `c` non-empty groups.
pub fn random_partition<R: Rng>(rng: &mut R, n: usize, c: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| if i < c { i } else { rng.random_range(0..c) }).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    labels
}

/// Greedy average linkage by full recomputation each step. Ties are broken
/// by the smaller summed merge-history dispersion, then by `(a, b)`.
/// Returns `(a, b)` per merge with ids shifting down after each merge.
pub fn naive_average_linkage(points: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let mut clusters: Vec<(Vec<usize>, f64)> = (0..points.len()).map(|i| (vec![i], 0.0)).collect();
    let mut order = Vec::new();
    while clusters.len() > 1 {
        let mut best: Option<(f64, f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let v = inter(points, &clusters[a].0, &clusters[b].0);
                let tie = clusters[a].1 + clusters[b].1;
                let better = match best {
                    None => true,
                    Some((bv, bt, _, _)) => v < bv || (v == bv && tie < bt),
                };
                if better {
                    best = Some((v, tie, a, b));
                }
            }
        }
        let (d_ab, _, a, b) = best.unwrap();
        let (mb, db) = clusters.remove(b);
        let (ma, da) = &mut clusters[a];
        let (na, nb) = (ma.len() as f64, mb.len() as f64);
        *da = (na * *da + nb * db + na * nb * d_ab) / (na + nb + na * nb);
        ma.extend(mb);
        order.push((a, b));
    }
    order
}

/// Distances from each query to the gallery, sorted by insertion (stable).
fn naive_ranking(points: &[Vec<f64>], q: usize, gallery: &[usize], ids: &[i64]) -> Vec<bool> {
    let mut ranked: Vec<(f64, usize)> = Vec::new();
    for &g in gallery {
        let d = euclid(&points[q], &points[g]);
        let pos = ranked.iter().position(|&(e, _)| e > d).unwrap_or(ranked.len());
        ranked.insert(pos, (d, g));
    }
    ranked.into_iter().map(|(_, g)| ids[g] == ids[q]).collect()
}

pub fn naive_cmc(points: &[Vec<f64>], queries: &[usize], gallery: &[usize], ids: &[i64], k: usize) -> f64 {
    let hits = queries
        .iter()
        .filter(|&&q| naive_ranking(points, q, gallery, ids).iter().take(k).any(|&h| h))
        .count();
    hits as f64 / queries.len() as f64
}

/// Exact rational AP of a relevance list.
pub fn rational_ap(relevance: &[bool]) -> Ratio<i128> {
    let mut hits = 0i128;
    let mut sum = Ratio::from_integer(0);
    for (i, &r) in relevance.iter().enumerate() {
        if r {
            hits += 1;
            sum += Ratio::new(hits, i as i128 + 1);
        }
    }
    if hits == 0 {
        sum
    } else {
        sum / hits
    }
}

pub fn naive_map(points: &[Vec<f64>], queries: &[usize], gallery: &[usize], ids: &[i64]) -> f64 {
    let mut total = Ratio::from_integer(0);
    for &q in queries {
        total += rational_ap(&naive_ranking(points, q, gallery, ids));
    }
    ratio_to_f64(total / queries.len() as i128)
}

/// Correctly rounded while numerator and denominator stay below 2^53.
pub fn ratio_to_f64(r: Ratio<i128>) -> f64 {
    let limit = 1i128 << 53;
    assert!(r.numer().abs() < limit && *r.denom() < limit, "oracle ratio too large");
    *r.numer() as f64 / *r.denom() as f64
}

/// Mean repelled negative log-likelihood with a fixed lookup table.
pub fn repelled_loss(features: &[f64], labels: &[usize], lut: &[f64], dim: usize, tau: f64) -> f64 {
    let classes = lut.len() / dim;
    let mut total = 0.0;
    for (v, &y) in features.chunks(dim).zip(labels) {
        let logits: Vec<f64> = (0..classes)
            .map(|c| v.iter().zip(&lut[c * dim..(c + 1) * dim]).map(|(a, b)| a * b).sum::<f64>() / tau)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    total / labels.len() as f64
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
