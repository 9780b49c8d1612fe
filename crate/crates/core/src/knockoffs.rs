//! Gaussian-mixture model-X knockoffs and the angle permutation test.
//!
//! A knockoff copy `X̃` is exchangeable with `X` (swapping any subset of
//! original/knockoff columns leaves the joint law unchanged) and carries no
//! information about the outcome beyond `X`. For a Gaussian mixture, knockoffs
//! are drawn by sampling the latent component from its posterior given the
//! row and then drawing a Gaussian knockoff for that component.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureKind, FeatureSpec};
use crate::embedding::wrap_angle;
use crate::rng::{derive_seed, rng_for, streams};
use crate::{Error, Result};

/// Shrink applied to the equicorrelated `s` so the conditional covariance
/// stays positive definite.
pub const S_SHRINK: f64 = 0.999;
/// Ridge added to every covariance, relative to the mean feature variance.
pub const RIDGE_FACTOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

struct ComponentDensity {
    chol: Cholesky<f64, nalgebra::Dyn>,
    log_norm: f64,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(Error::arg("mixture needs matching, non-empty weights/means/covariances"));
        }
        let d = means[0].len();
        if means.iter().any(|m| m.len() != d) || covariances.iter().any(|c| c.shape() != (d, d)) {
            return Err(Error::arg("mixture component dimensions disagree"));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || total.is_nan() || total <= 0.0 {
            return Err(Error::arg("mixture weights must be non-negative with a positive sum"));
        }
        let gm = GaussianMixture {
            weights: weights.iter().map(|w| w / total).collect(),
            means,
            covariances,
        };
        gm.densities()?;
        Ok(gm)
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn densities(&self) -> Result<Vec<ComponentDensity>> {
        let d = self.dim() as f64;
        self.covariances
            .iter()
            .enumerate()
            .map(|(z, cov)| {
                let chol = Cholesky::new(cov.clone())
                    .ok_or_else(|| Error::Numerical(format!("covariance of component {z} is not positive definite")))?;
                let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
                Ok(ComponentDensity {
                    chol,
                    log_norm: -0.5 * (d * (2.0 * PI).ln() + log_det),
                })
            })
            .collect()
    }

    /// Log of `π_z N(x; μ_z, Σ_z)` for every component.
    fn joint_log(&self, dens: &[ComponentDensity], x: &DVector<f64>, out: &mut [f64]) {
        for (z, c) in dens.iter().enumerate() {
            let diff = x - &self.means[z];
            let sol = c
                .chol
                .l_dirty()
                .solve_lower_triangular(&diff)
                .expect("cholesky factor is invertible");
            out[z] = self.weights[z].ln() + c.log_norm - 0.5 * sol.norm_squared();
        }
    }

    /// Component posterior `P(z | x)` for one row.
    pub fn posterior(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        let dens = self.densities()?;
        let mut lp = vec![0.0; self.n_components()];
        self.joint_log(&dens, x, &mut lp);
        let lse = log_sum_exp(&lp);
        Ok(lp.iter().map(|l| (l - lse).exp()).collect())
    }

    /// Mean log-likelihood per row.
    pub fn mean_log_likelihood(&self, x: &DMatrix<f64>) -> Result<f64> {
        let dens = self.densities()?;
        let mut lp = vec![0.0; self.n_components()];
        let mut total = 0.0;
        for i in 0..x.nrows() {
            self.joint_log(&dens, &x.row(i).transpose(), &mut lp);
            total += log_sum_exp(&lp);
        }
        Ok(total / x.nrows() as f64)
    }

    /// Draws `n` rows; also returns the component of each row.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<(DMatrix<f64>, Vec<usize>)> {
        let d = self.dim();
        let factors: Vec<DMatrix<f64>> = self.densities()?.into_iter().map(|c| c.chol.l()).collect();
        let mut x = DMatrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let z = pick(&self.weights, rng.gen::<f64>());
            let xi = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let row = &self.means[z] + &factors[z] * xi;
            x.set_row(i, &row.transpose());
            labels.push(z);
        }
        Ok((x, labels))
    }
}

fn pick(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Feature matrix of a dataset as an n×d `DMatrix`.
pub fn to_matrix(ds: &Dataset) -> DMatrix<f64> {
    DMatrix::from_row_slice(ds.n_rows(), ds.n_features(), ds.values())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub mixture: GaussianMixture,
    /// Mean log-likelihood per row before each M-step.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

fn sample_covariance(x: &DMatrix<f64>, weights: &[f64], mean: &DVector<f64>, total: f64) -> DMatrix<f64> {
    let d = x.ncols();
    let mut cov = DMatrix::zeros(d, d);
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let diff = x.row(i).transpose() - mean;
        cov.ger(w / total, &diff, &diff, 1.0);
    }
    cov
}

/// EM for a full-covariance Gaussian mixture.
///
/// Initial means come from seeded k-means++ seeding followed by one hard
/// assignment. Every covariance gets `ε·I` added with `ε = 1e-6 · mean
/// variance`. Stops when the per-row log-likelihood gain falls below `tol`
/// or after `max_iter` M-steps.
pub fn fit_gmm(x: &DMatrix<f64>, k: usize, max_iter: usize, tol: f64, seed: u64) -> Result<GmmFit> {
    let (n, d) = x.shape();
    if k < 1 {
        return Err(Error::arg("need at least one mixture component"));
    }
    if n <= d {
        return Err(Error::Numerical(format!("ill-posed mixture fit: {n} rows for {d} dimensions")));
    }
    if n < k {
        return Err(Error::arg("fewer rows than mixture components"));
    }
    let global_mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let global_cov = sample_covariance(x, &vec![1.0; n], &global_mean, n as f64);
    let mean_var = global_cov.diagonal().mean();
    let ridge = RIDGE_FACTOR * if mean_var > 0.0 { mean_var } else { 1.0 };
    let ridge_i = DMatrix::<f64>::identity(d, d) * ridge;

    // k-means++ seeding and a hard assignment as the first responsibilities.
    let mut rng = rng_for(seed, streams::GMM_INIT);
    let rows: Vec<DVector<f64>> = (0..n).map(|i| x.row(i).transpose()).collect();
    let mut centers = vec![rows[rng.gen_range(0..n)].clone()];
    let mut dist: Vec<f64> = rows.iter().map(|r| (r - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, dv) in dist.iter().enumerate() {
                acc += dv;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(rows[next].clone());
        for (i, r) in rows.iter().enumerate() {
            dist[i] = dist[i].min((r - centers.last().unwrap()).norm_squared());
        }
    }
    let mut resp = DMatrix::<f64>::zeros(n, k);
    for (i, r) in rows.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (z, c) in centers.iter().enumerate() {
            let dz = (r - c).norm_squared();
            if dz < best_d {
                best_d = dz;
                best = z;
            }
        }
        resp[(i, best)] = 1.0;
    }

    let m_step = |resp: &DMatrix<f64>| -> Result<GaussianMixture> {
        let mut weights = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for z in 0..k {
            let w: Vec<f64> = resp.column(z).iter().copied().collect();
            let nk: f64 = w.iter().sum();
            if nk < 1e-8 * n as f64 {
                // Empty component: park it on the global fit with negligible weight.
                weights.push(1e-12);
                means.push(global_mean.clone());
                covs.push(&global_cov + &ridge_i);
                continue;
            }
            let mean = x.tr_mul(&DVector::from_vec(w.clone())) / nk;
            let cov = sample_covariance(x, &w, &mean, nk) + &ridge_i;
            weights.push(nk / n as f64);
            means.push(mean);
            covs.push((&cov + cov.transpose()) * 0.5);
        }
        GaussianMixture::new(weights, means, covs)
    };

    let mut mixture = m_step(&resp)?;
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut lp = vec![0.0; k];
    for _ in 0..max_iter {
        let dens = mixture.densities()?;
        let mut ll = 0.0;
        for (i, r) in rows.iter().enumerate() {
            mixture.joint_log(&dens, r, &mut lp);
            let lse = log_sum_exp(&lp);
            ll += lse;
            for z in 0..k {
                resp[(i, z)] = (lp[z] - lse).exp();
            }
        }
        let ll = ll / n as f64;
        if !ll.is_finite() {
            return Err(Error::Numerical("mixture log-likelihood is not finite".into()));
        }
        if let Some(&prev) = history.last() {
            // EM never decreases the likelihood; the ridge only perturbs it at O(ε²).
            if ll < prev - 1e-9 * prev.abs().max(1.0) {
                return Err(Error::Numerical(format!("EM log-likelihood decreased from {prev} to {ll}")));
            }
            if ll - prev < tol {
                history.push(ll);
                converged = true;
                break;
            }
        }
        history.push(ll);
        mixture = m_step(&resp)?;
    }
    Ok(GmmFit {
        mixture,
        log_likelihoods: history,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnockoffConstruction {
    /// `s = min(1, 2·λ_min(corr Σ))` in correlation units, shrunk by 0.999.
    Equicorrelated,
    /// `s = 0`: the knockoff equals the original. Diagnostic only.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnockoffSet {
    /// n×d knockoff matrix, row-aligned with the source data.
    pub x_tilde: DMatrix<f64>,
    /// Diagonal of `D` for every mixture component, in covariance units.
    pub s_vectors: Vec<DVector<f64>>,
}

struct ComponentKnockoff {
    mean: DVector<f64>,
    /// `D Σ⁻¹`
    shrink: DMatrix<f64>,
    /// Cholesky factor of `2D − D Σ⁻¹ D`; `None` when `D = 0`.
    factor: Option<DMatrix<f64>>,
}

/// Equicorrelated `s` of one covariance, in covariance units.
pub fn equicorrelated_s(cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = cov.nrows();
    let sd = DVector::from_fn(d, |j, _| cov[(j, j)].sqrt());
    if sd.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Numerical("covariance has a non-positive variance".into()));
    }
    let corr = DMatrix::from_fn(d, d, |i, j| cov[(i, j)] / (sd[i] * sd[j]));
    let lambda_min = SymmetricEigen::new(corr).eigenvalues.min();
    let s = (2.0 * lambda_min).min(1.0);
    if s.is_nan() || s <= 0.0 {
        return Err(Error::Numerical(format!("correlation matrix is singular (λ_min = {lambda_min})")));
    }
    Ok(DVector::from_fn(d, |j, _| S_SHRINK * s * cov[(j, j)]))
}

fn component_knockoff(
    z: usize,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    construction: KnockoffConstruction,
) -> Result<(ComponentKnockoff, DVector<f64>)> {
    let d = cov.nrows();
    let s = match construction {
        KnockoffConstruction::Equicorrelated => equicorrelated_s(cov).map_err(|e| Error::Numerical(format!("component {z}: {e}")))?,
        KnockoffConstruction::Zero => DVector::zeros(d),
    };
    let chol = Cholesky::new(cov.clone()).ok_or_else(|| Error::Numerical(format!("component {z}: covariance is not positive definite")))?;
    let inv = chol.inverse();
    let dmat = DMatrix::from_diagonal(&s);
    let shrink = &dmat * &inv;
    let factor = if s.iter().all(|&v| v == 0.0) {
        None
    } else {
        let cond = &dmat * 2.0 - &shrink * &dmat;
        let cond = (&cond + cond.transpose()) * 0.5;
        Some(
            Cholesky::new(cond)
                .ok_or_else(|| Error::Numerical(format!("component {z}: knockoff conditional covariance is not positive definite")))?
                .l(),
        )
    };
    Ok((
        ComponentKnockoff {
            mean: mean.clone(),
            shrink,
            factor,
        },
        s,
    ))
}

/// Draws one knockoff row per data row:
/// `z ~ P(z | x)`, then `x̃ ~ N(x − DΣ_z⁻¹(x − μ_z), 2D − DΣ_z⁻¹D)`.
/// Row `i` uses its own `(seed, i)` stream.
pub fn sample_knockoffs(gmm: &GaussianMixture, x: &DMatrix<f64>, seed: u64, construction: KnockoffConstruction) -> Result<KnockoffSet> {
    let (n, d) = x.shape();
    if gmm.dim() != d {
        return Err(Error::arg(format!("mixture has dimension {}, data has {d} columns", gmm.dim())));
    }
    let mut parts = Vec::with_capacity(gmm.n_components());
    let mut s_vectors = Vec::with_capacity(gmm.n_components());
    for z in 0..gmm.n_components() {
        let (c, s) = component_knockoff(z, &gmm.means[z], &gmm.covariances[z], construction)?;
        parts.push(c);
        s_vectors.push(s);
    }
    let dens = gmm.densities()?;
    let rows: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let xi = x.row(i).transpose();
            let mut lp = vec![0.0; gmm.n_components()];
            gmm.joint_log(&dens, &xi, &mut lp);
            let lse = log_sum_exp(&lp);
            let post: Vec<f64> = lp.iter().map(|l| (l - lse).exp()).collect();
            let z = pick(&post, rng.gen::<f64>());
            let part = &parts[z];
            let mut out = &xi - &part.shrink * (&xi - &part.mean);
            if let Some(l) = &part.factor {
                let noise = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                out += l * noise;
            }
            out
        })
        .collect();
    let mut x_tilde = DMatrix::zeros(n, d);
    for (i, r) in rows.iter().enumerate() {
        x_tilde.set_row(i, &r.transpose());
    }
    Ok(KnockoffSet { x_tilde, s_vectors })
}

/// `[X, X̃]` with knockoff columns named `<name>_knockoff`, appended after the
/// originals so feature `j` pairs with `j + d`.
pub fn augment_with_knockoffs(ds: &Dataset, knockoffs: &KnockoffSet) -> Result<Dataset> {
    let d = ds.n_features();
    if knockoffs.x_tilde.shape() != (ds.n_rows(), d) {
        return Err(Error::arg("knockoff matrix does not match the dataset shape"));
    }
    let specs: Vec<FeatureSpec> = ds
        .schema()
        .features
        .iter()
        .map(|f| FeatureSpec {
            name: format!("{}_knockoff", f.name),
            kind: FeatureKind::Numeric,
        })
        .collect();
    let columns: Vec<Vec<f64>> = (0..d).map(|j| knockoffs.x_tilde.column(j).iter().copied().collect()).collect();
    ds.with_appended_columns(&specs, &columns)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnglePermutationTest {
    pub p_value: f64,
    /// Mean angular distance (radians) under the given pairing.
    pub observed: f64,
    /// Mean angular distance under each random perfect pairing.
    pub null: Vec<f64>,
}

/// The pairing `i ↔ i + d` of features with their knockoffs.
pub fn knockoff_pairing(d: usize) -> Vec<(usize, usize)> {
    (0..d).map(|i| (i, i + d)).collect()
}

/// One-sided permutation test of whether `pairs` match vectors with more
/// similar directions than random perfect pairings do.
///
/// `p = (1 + #{null ≤ observed}) / (n_perm + 1)`.
pub fn angle_permutation_test(vectors: &[[f64; 2]], pairs: &[(usize, usize)], n_perm: usize, seed: u64) -> Result<AnglePermutationTest> {
    if n_perm < 100 {
        return Err(Error::arg("need at least 100 permutations"));
    }
    let m = vectors.len();
    if m < 2 || !m.is_multiple_of(2) || pairs.len() * 2 != m {
        return Err(Error::arg("pairing must cover an even number of vectors exactly once"));
    }
    let mut seen = vec![false; m];
    for &(a, b) in pairs {
        for i in [a, b] {
            if i >= m || seen[i] {
                return Err(Error::arg("pairing must cover every vector exactly once"));
            }
            seen[i] = true;
        }
    }
    if let Some(i) = vectors.iter().position(|v| v[0] == 0.0 && v[1] == 0.0) {
        return Err(Error::UndefinedAngle(i));
    }
    let angles: Vec<f64> = vectors.iter().map(|v| v[1].atan2(v[0])).collect();
    let stat = |pairs: &mut dyn Iterator<Item = (usize, usize)>| {
        let mut total = 0.0;
        let mut count = 0;
        for (a, b) in pairs {
            total += wrap_angle(angles[a] - angles[b]);
            count += 1;
        }
        total / count as f64
    };
    let observed = stat(&mut pairs.iter().copied());
    let mut rng = rng_for(derive_seed(seed, streams::PERM_TEST), 0);
    let mut idx: Vec<usize> = (0..m).collect();
    let mut null = Vec::with_capacity(n_perm);
    for _ in 0..n_perm {
        idx.shuffle(&mut rng);
        null.push(stat(&mut idx.chunks_exact(2).map(|c| (c[0], c[1]))));
    }
    let extreme = null.iter().filter(|&&v| v <= observed).count();
    Ok(AnglePermutationTest {
        p_value: (1 + extreme) as f64 / (n_perm + 1) as f64,
        observed,
        null,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over `[min, max]` of `values`.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|b| lo + b as f64 * width).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoffFeatureReport {
    pub name: String,
    pub importance: f64,
    pub knockoff_importance: f64,
    /// Angular distance between feature and knockoff, in degrees.
    pub angular_gap_degrees: f64,
}

/// JSON report of a knockoff angle test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoffReport {
    pub p_value: f64,
    pub observed_stat: f64,
    pub n_perm: usize,
    pub null_histogram: Histogram,
    pub features: Vec<KnockoffFeatureReport>,
}

pub const HISTOGRAM_BINS: usize = 50;

impl KnockoffReport {
    /// Builds the report from an embedding of `[X, X̃]` (2d vectors).
    pub fn new(names: &[&str], vectors: &[[f64; 2]], test: &AnglePermutationTest) -> Result<Self> {
        let d = names.len();
        if vectors.len() != 2 * d {
            return Err(Error::arg("expected one vector per feature and per knockoff"));
        }
        let norm = |v: [f64; 2]| v[0].hypot(v[1]);
        let features = (0..d)
            .map(|j| {
                let gap = crate::embedding::angular_distance(vectors[j], vectors[j + d])
                    .map(f64::to_degrees)
                    .unwrap_or(f64::NAN);
                KnockoffFeatureReport {
                    name: names[j].to_string(),
                    importance: norm(vectors[j]),
                    knockoff_importance: norm(vectors[j + d]),
                    angular_gap_degrees: gap,
                }
            })
            .collect();
        Ok(KnockoffReport {
            p_value: test.p_value,
            observed_stat: test.observed,
            n_perm: test.null.len(),
            null_histogram: histogram(&test.null, HISTOGRAM_BINS),
            features,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn spd(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.5..0.5));
        &a * a.transpose() + DMatrix::identity(d, d)
    }

    #[test]
    fn single_component_is_closed_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(300, 3, |_, _| rng.gen_range(-2.0..2.0));
        let fit = fit_gmm(&x, 1, 50, 1e-10, 0).unwrap();
        let n = x.nrows() as f64;
        let mean = DVector::from_fn(3, |j, _| x.column(j).sum() / n);
        let mut cov = DMatrix::zeros(3, 3);
        for i in 0..300 {
            let d = x.row(i).transpose() - &mean;
            cov += &d * d.transpose() / n;
        }
        let ridge = RIDGE_FACTOR * cov.diagonal().mean();
        cov += DMatrix::identity(3, 3) * ridge;
        assert!((&fit.mixture.means[0] - &mean).amax() < 1e-12);
        assert!((&fit.mixture.covariances[0] - &cov).amax() < 1e-12);
    }

    #[test]
    fn separated_clusters_are_recovered() {
        let truth = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![DVector::from_vec(vec![-6.0, 0.0]), DVector::from_vec(vec![6.0, 1.0])],
            vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let (x, labels) = truth.sample(4000, &mut rng).unwrap();
        let fit = fit_gmm(&x, 2, 200, 1e-9, 5).unwrap();
        let gm = &fit.mixture;
        let order: Vec<usize> = if gm.means[0][0] < gm.means[1][0] { vec![0, 1] } else { vec![1, 0] };
        for (t, &z) in order.iter().enumerate() {
            assert!((&gm.means[z] - &truth.means[t]).amax() < 0.1);
        }
        for i in 0..x.nrows() {
            let post = gm.posterior(&x.row(i).transpose()).unwrap();
            assert!(post[order[labels[i]]] >= 0.99);
        }
        assert!(fit.log_likelihoods.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn em_likelihood_monotone_on_overlapping_mixture() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let truth = GaussianMixture::new(
            vec![0.3, 0.3, 0.4],
            (0..3).map(|z| DVector::from_fn(4, |j, _| (z + j) as f64 * 0.7)).collect(),
            (0..3).map(|_| spd(4, &mut rng)).collect(),
        )
        .unwrap();
        let (x, _) = truth.sample(1500, &mut rng).unwrap();
        let fit = fit_gmm(&x, 3, 100, 0.0, 1).unwrap();
        assert!(fit.log_likelihoods.len() > 5);
        for w in fit.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{w:?}");
        }
    }

    #[test]
    fn ill_posed_fit_rejected() {
        let x = DMatrix::from_fn(3, 3, |i, j| (i + j) as f64);
        assert!(matches!(fit_gmm(&x, 1, 10, 1e-6, 0), Err(Error::Numerical(_))));
    }

    #[test]
    fn zero_s_reproduces_data() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let gm = GaussianMixture::new(vec![1.0], vec![DVector::zeros(3)], vec![spd(3, &mut rng)]).unwrap();
        let (x, _) = gm.sample(50, &mut rng).unwrap();
        let ko = sample_knockoffs(&gm, &x, 0, KnockoffConstruction::Zero).unwrap();
        assert_eq!(ko.x_tilde, x);
    }

    #[test]
    fn equicorrelated_s_bounds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let cov = spd(5, &mut rng);
        let s = equicorrelated_s(&cov).unwrap();
        let sd = DVector::from_fn(5, |j, _| cov[(j, j)].sqrt());
        let corr = DMatrix::from_fn(5, 5, |i, j| cov[(i, j)] / (sd[i] * sd[j]));
        let lmin = SymmetricEigen::new(corr).eigenvalues.min();
        for j in 0..5 {
            let s_corr = s[j] / cov[(j, j)];
            assert!(s_corr > 0.0 && s_corr <= 2.0 * lmin + 1e-12 && s_corr <= 1.0);
        }
    }

    #[test]
    fn knockoffs_are_deterministic_and_thread_independent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let gm = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![DVector::zeros(3), DVector::from_element(3, 2.0)],
            vec![spd(3, &mut rng), spd(3, &mut rng)],
        )
        .unwrap();
        let (x, _) = gm.sample(200, &mut rng).unwrap();
        let a = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| sample_knockoffs(&gm, &x, 9, KnockoffConstruction::Equicorrelated).unwrap());
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| sample_knockoffs(&gm, &x, 9, KnockoffConstruction::Equicorrelated).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn identical_pairs_give_minimal_p() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let d = 6;
        let mut vectors = vec![[0.0; 2]; 2 * d];
        for j in 0..d {
            let a: f64 = rng.gen_range(0.0..2.0 * PI);
            vectors[j] = [a.cos(), a.sin()];
            vectors[j + d] = [2.0 * a.cos(), 2.0 * a.sin()];
        }
        let t = angle_permutation_test(&vectors, &knockoff_pairing(d), 500, 1).unwrap();
        assert_eq!(t.observed, 0.0);
        assert!(t.null.iter().all(|&v| v > 0.0));
        assert_eq!(t.p_value, 1.0 / 501.0);
    }

    #[test]
    fn permutation_test_is_calibrated_under_the_null() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut rejections = 0;
        for trial in 0..100 {
            let vectors: Vec<[f64; 2]> = (0..20)
                .map(|_| {
                    let a: f64 = rng.gen_range(0.0..2.0 * PI);
                    [a.cos(), a.sin()]
                })
                .collect();
            let mut idx: Vec<usize> = (0..20).collect();
            idx.shuffle(&mut rng);
            let pairs: Vec<(usize, usize)> = idx.chunks(2).map(|c| (c[0], c[1])).collect();
            let t = angle_permutation_test(&vectors, &pairs, 200, trial).unwrap();
            assert!(t.p_value > 0.0 && t.p_value <= 1.0);
            if t.p_value <= 0.05 {
                rejections += 1;
            }
        }
        assert!(rejections <= 10, "{rejections} rejections");
    }

    #[test]
    fn permutation_test_validation() {
        let v = vec![[1.0, 0.0]; 4];
        assert!(angle_permutation_test(&v, &[(0, 1), (2, 3)], 99, 0).is_err());
        assert!(angle_permutation_test(&v, &[(0, 1), (1, 3)], 100, 0).is_err());
        let mut z = v.clone();
        z[2] = [0.0, 0.0];
        assert!(matches!(
            angle_permutation_test(&z, &[(0, 1), (2, 3)], 100, 0),
            Err(Error::UndefinedAngle(2))
        ));
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[0.0, 0.5, 1.0, 1.0], 4);
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
        assert_eq!(h.counts, vec![1, 0, 1, 2]);
        assert_eq!(h.edges.len(), 5);
    }
}
