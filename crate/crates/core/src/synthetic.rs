//! Gaussian-blob datasets with uniform or long-tailed identity sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::store::FeatureStore;

/// Every identity gets at least this many samples; a lone sample has no
/// partner to retrieve.
pub const MIN_IDENTITY_COUNT: usize = 2;

const DEFAULT_SAMPLE_CAP: usize = 200_000;
const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SizeLaw {
    /// Same count for every identity.
    Uniform { per_identity: usize },
    /// Counts drawn from `P(n) ∝ n^-exponent` on `[MIN_IDENTITY_COUNT, max_count]`.
    LongTail { exponent: f64, max_count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_identities: usize,
    pub size_law: SizeLaw,
    pub dim: usize,
    /// Per-coordinate standard deviation of samples around their centroid.
    pub cluster_spread: f64,
    /// Per-coordinate standard deviation of centroid placement.
    pub ambient_scale: f64,
    pub seed: u64,
    pub sample_cap: usize,
}

impl SyntheticSpec {
    /// The long-tail benchmark used by the ablation and alternation
    /// experiments: 100 identities, exponent 1.5, roughly 1,600 samples.
    pub fn standard_benchmark(seed: u64) -> Self {
        SyntheticSpec {
            num_identities: 100,
            size_law: SizeLaw::LongTail {
                exponent: 1.5,
                max_count: 200,
            },
            dim: 32,
            cluster_spread: 0.8,
            ambient_scale: 1.0,
            seed,
            sample_cap: DEFAULT_SAMPLE_CAP,
        }
    }

    /// Equal-sized identities, `per_identity` samples each.
    pub fn uniform(num_identities: usize, per_identity: usize, dim: usize, seed: u64) -> Self {
        SyntheticSpec {
            num_identities,
            size_law: SizeLaw::Uniform { per_identity },
            dim,
            cluster_spread: 0.25,
            ambient_scale: 1.0,
            seed,
            sample_cap: DEFAULT_SAMPLE_CAP,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_identities == 0 {
            return Err(Error::config("num_identities must be positive"));
        }
        if self.dim == 0 {
            return Err(Error::config("dimension must be positive"));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::config("cluster_spread must be finite and non-negative"));
        }
        if !(self.ambient_scale > 0.0 && self.ambient_scale.is_finite()) {
            return Err(Error::config("ambient_scale must be finite and positive"));
        }
        match self.size_law {
            SizeLaw::Uniform { per_identity } if per_identity < MIN_IDENTITY_COUNT => Err(
                Error::config(format!("uniform count must be at least {MIN_IDENTITY_COUNT}")),
            ),
            SizeLaw::LongTail { exponent, max_count } => {
                if !(exponent > 0.0 && exponent.is_finite()) {
                    Err(Error::config("long-tail exponent must be positive"))
                } else if max_count < MIN_IDENTITY_COUNT {
                    Err(Error::config(format!("max_count must be at least {MIN_IDENTITY_COUNT}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }?;
        if self.num_identities.saturating_mul(MIN_IDENTITY_COUNT) > self.sample_cap {
            return Err(Error::config(format!(
                "{} identities need at least {} samples, above the cap of {}",
                self.num_identities,
                self.num_identities * MIN_IDENTITY_COUNT,
                self.sample_cap
            )));
        }
        Ok(())
    }
}

fn identity_counts(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match spec.size_law {
        SizeLaw::Uniform { per_identity } => vec![per_identity; spec.num_identities],
        SizeLaw::LongTail { exponent, max_count } => {
            // inverse-CDF sampling over the truncated support
            let support: Vec<usize> = (MIN_IDENTITY_COUNT..=max_count).collect();
            let mut cdf: Vec<f64> = support.iter().map(|&n| (n as f64).powf(-exponent)).collect();
            let mut acc = 0.0;
            for w in cdf.iter_mut() {
                acc += *w;
                *w = acc;
            }
            (0..spec.num_identities)
                .map(|_| {
                    let u = rng.random::<f64>() * acc;
                    let pos = cdf.partition_point(|&c| c < u).min(support.len() - 1);
                    support[pos]
                })
                .collect()
        }
    }
}

fn place_centroids(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let min_sep = 4.0 * spec.cluster_spread;
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(spec.num_identities);
    for id in 0..spec.num_identities {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let c: Vec<f64> = (0..spec.dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    spec.ambient_scale * z
                })
                .collect();
            let clear = centroids
                .iter()
                .all(|o| crate::distance::euclidean(o, &c) >= min_sep);
            if clear {
                centroids.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::config(format!(
                "could not place centroid {id} at separation {min_sep}; raise ambient_scale"
            )));
        }
    }
    Ok(centroids)
}

/// Draw a labelled store. Sample order is shuffled so identities are not
/// contiguous; ids are the row indices.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<FeatureStore> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let counts = identity_counts(spec, &mut rng);
    let total: usize = counts.iter().sum();
    if total > spec.sample_cap {
        return Err(Error::config(format!(
            "{total} samples exceed the cap of {}",
            spec.sample_cap
        )));
    }
    let centroids = place_centroids(spec, &mut rng)?;

    let mut labels: Vec<i64> = counts
        .iter()
        .enumerate()
        .flat_map(|(id, &c)| std::iter::repeat_n(id as i64, c))
        .collect();
    // Fisher-Yates with our own rng keeps the order reproducible
    for i in (1..labels.len()).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }

    let mut features = Vec::with_capacity(total * spec.dim);
    for &label in &labels {
        let c = &centroids[label as usize];
        for &x in c {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features.push(x + spec.cluster_spread * noise);
        }
    }
    FeatureStore::with_index_ids(features, spec.dim)?.with_ground_truth(labels)
}
