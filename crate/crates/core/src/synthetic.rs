//! Deterministic generators for the two synthetic experiments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, FeatureSchema, Task};
use crate::knockoffs::GaussianMixture;
use crate::rng::{rng_for, streams};
use crate::{Error, Result};

pub const PAIRS_FEATURES: usize = 20;
/// Exchangeable feature pairs of the pairs generator.
pub const PAIRS: [(usize, usize); 3] = [(0, 1), (2, 3), (4, 5)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Comparison {
    Above(f64),
    Below(f64),
    /// Strictly inside `(lo, hi)`.
    Between(f64, f64),
}

impl Comparison {
    fn holds(self, x: f64) -> bool {
        match self {
            Comparison::Above(t) => x > t,
            Comparison::Below(t) => x < t,
            Comparison::Between(lo, hi) => lo < x && x < hi,
        }
    }
}

/// A conjunction of threshold tests, each on one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub weight: f64,
    pub literals: Vec<(usize, Comparison)>,
}

impl Clause {
    /// Maximum of the clause over every choice of pair member. Literals on
    /// distinct pairs are independent, so the maximum factorises into one
    /// "either member" test per literal.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let holds = self.literals.iter().all(|&(p, cmp)| {
            let (a, b) = PAIRS[p];
            cmp.holds(x[a]) || cmp.holds(x[b])
        });
        if holds {
            1.0
        } else {
            0.0
        }
    }
}

pub const PAIRS_WEIGHT: f64 = 8.0;
pub const PAIRS_BIAS: f64 = -4.0;
pub const PAIRS_BAND: f64 = 0.4;

/// Clause set of the pairs generator: every two of the three pairs must have
/// a member inside `(-0.4, 0.4)`.
pub fn pairs_clauses() -> Vec<Clause> {
    let band = Comparison::Between(-PAIRS_BAND, PAIRS_BAND);
    [(0, 1), (1, 2), (2, 0)]
        .into_iter()
        .map(|(p, q)| Clause {
            weight: PAIRS_WEIGHT,
            literals: vec![(p, band), (q, band)],
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `P(y = 1 | x)` of the pairs generator.
pub fn pairs_probability(x: &[f64]) -> f64 {
    let score: f64 = pairs_clauses().iter().map(|c| c.weight * c.evaluate(x)).sum();
    sigmoid(PAIRS_BIAS + score)
}

fn check_n(n: usize) -> Result<()> {
    if n < 1000 {
        return Err(Error::arg(format!("synthetic generators need n >= 1000, got {n}")));
    }
    Ok(())
}

fn feature_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

/// Twenty i.i.d. standard normal features where columns 0↔1, 2↔3 and 4↔5
/// are interchangeable in the label function and 6..19 are pure noise.
pub fn gen_exchangeable_pairs(n: usize, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    let d = PAIRS_FEATURES;
    let mut xr = rng_for(seed, streams::SYNTH_X);
    let mut yr = rng_for(seed, streams::SYNTH_Y);
    let values: Vec<f64> = (0..n * d).map(|_| xr.sample(StandardNormal)).collect();
    let target = values
        .chunks_exact(d)
        .map(|row| if yr.gen::<f64>() < pairs_probability(row) { 1.0 } else { 0.0 })
        .collect();
    let schema = FeatureSchema::numeric(&feature_names(d), "y", Task::Classification)?;
    Dataset::new(values, target, schema)
}

pub const GMM_FEATURES: usize = 20;
pub const GMM_COMPONENTS: usize = 3;
/// Features 0..GMM_SIGNAL carry the signal.
pub const GMM_SIGNAL: usize = 3;
pub const GMM_BETA: [f64; GMM_SIGNAL] = [1.0, 1.0, 1.0];
pub const GMM_NOISE_SD: f64 = 0.5;
/// Norm of each null column's loading on the signal block.
pub const GMM_LOADING: f64 = 0.6;
const GMM_TRUTH_SEED: u64 = 0x6d69_7874_7572_6533;

/// The fixed mixture behind [`gen_gmm_nonnull`].
///
/// The signal block is N(0, I) in every component. Each null column loads on
/// the signal block along a fixed direction orthogonal to β, so the nulls are
/// independent of β·x (and of the label) while still being informative about
/// individual signal columns. Components differ in the null means and in the
/// residual null covariances.
pub fn gmm_truth() -> GaussianMixture {
    let d = GMM_FEATURES;
    let nulls = d - GMM_SIGNAL;
    let mut rng = rng_for(GMM_TRUTH_SEED, 0);
    let u1 = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt(), 0.0];
    let u2 = [1.0 / 6f64.sqrt(), 1.0 / 6f64.sqrt(), -2.0 / 6f64.sqrt()];
    let loadings = DMatrix::from_fn(nulls, GMM_SIGNAL, |j, k| {
        let theta = std::f64::consts::TAU * j as f64 / nulls as f64;
        GMM_LOADING * (theta.cos() * u1[k] + theta.sin() * u2[k])
    });
    let shared = &loadings * loadings.transpose();
    let weights = vec![0.3, 0.3, 0.4];
    let mut means = Vec::with_capacity(GMM_COMPONENTS);
    let mut covs = Vec::with_capacity(GMM_COMPONENTS);
    for _ in 0..GMM_COMPONENTS {
        let mean = DVector::from_fn(d, |j, _| if j < GMM_SIGNAL { 0.0 } else { rng.gen_range(-2.0..2.0) });
        let a = DMatrix::from_fn(nulls, nulls, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = &a * a.transpose();
        let residual = DMatrix::from_fn(nulls, nulls, |i, j| {
            let c = if i == j {
                1.0
            } else {
                0.4 * g[(i, j)] / (g[(i, i)] * g[(j, j)]).sqrt()
            };
            c * (1.0 - GMM_LOADING * GMM_LOADING)
        });
        let mut cov = DMatrix::identity(d, d);
        for i in 0..nulls {
            for k in 0..GMM_SIGNAL {
                cov[(i + GMM_SIGNAL, k)] = loadings[(i, k)];
                cov[(k, i + GMM_SIGNAL)] = loadings[(i, k)];
            }
            for j in 0..nulls {
                cov[(i + GMM_SIGNAL, j + GMM_SIGNAL)] = shared[(i, j)] + residual[(i, j)];
            }
        }
        means.push(mean);
        covs.push(cov);
    }
    GaussianMixture::new(weights, means, covs).expect("fixed mixture is valid")
}

/// Draws from [`gmm_truth`] with `y = 1{β·(x₀, x₁, x₂) + noise > 0}`.
pub fn gen_gmm_nonnull(n: usize, seed: u64) -> Result<(Dataset, GaussianMixture)> {
    check_n(n)?;
    let truth = gmm_truth();
    let mut xr = rng_for(seed, streams::SYNTH_X);
    let mut yr = rng_for(seed, streams::SYNTH_Y);
    let (x, _) = truth.sample(n, &mut xr)?;
    let d = GMM_FEATURES;
    let mut values = Vec::with_capacity(n * d);
    let mut target = Vec::with_capacity(n);
    for i in 0..n {
        values.extend(x.row(i).iter());
        let signal: f64 = (0..GMM_SIGNAL).map(|j| GMM_BETA[j] * x[(i, j)]).sum();
        let noise: f64 = yr.sample::<f64, _>(StandardNormal) * GMM_NOISE_SD;
        target.push(if signal + noise > 0.0 { 1.0 } else { 0.0 });
    }
    let schema = FeatureSchema::numeric(&feature_names(d), "y", Task::Classification)?;
    Ok((Dataset::new(values, target, schema)?, truth))
}
