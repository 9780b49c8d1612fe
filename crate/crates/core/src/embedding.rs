//! Co-occurrence counting over sentences and the rank-2 feature embedding.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::forest::Sentence;
use crate::svd::jacobi_svd;
use crate::{Error, Result};

/// Default co-occurrence window.
pub const DEFAULT_WINDOW: usize = 3;

const CHUNK: usize = 4096;

/// Symmetric d×d matrix of windowed co-occurrence counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    d: usize,
    window: usize,
    values: Vec<f64>,
}

impl CooccurrenceMatrix {
    /// Wraps an arbitrary symmetric non-negative matrix (row-major).
    pub fn from_dense(d: usize, values: Vec<f64>, window: usize) -> Result<Self> {
        if values.len() != d * d {
            return Err(Error::arg(format!("expected {} entries, got {}", d * d, values.len())));
        }
        for i in 0..d {
            for j in 0..d {
                let v = values[i * d + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::arg(format!("entry ({i}, {j}) = {v} is not a non-negative count")));
                }
                if v != values[j * d + i] {
                    return Err(Error::arg(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(CooccurrenceMatrix { d, window, values })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        CooccurrenceMatrix {
            d: self.d,
            window: self.window,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn write_tsv<W: Write>(&self, names: &[&str], mut out: W) -> std::io::Result<()> {
        write!(out, "feature")?;
        for n in names {
            write!(out, "\t{n}")?;
        }
        writeln!(out)?;
        for (i, n) in names.iter().enumerate() {
            write!(out, "{n}")?;
            for j in 0..self.d {
                write!(out, "\t{}", self.get(i, j))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Counts, for every sentence `f₁…f_L` and every position pair `i < j` with
/// `j − i ≤ w`, one co-occurrence of `f_i` and `f_j` in both `m[f_i][f_j]`
/// and `m[f_j][f_i]`. A feature repeated within the window therefore adds 2
/// to its diagonal entry per pair; a single position never pairs with itself.
pub fn build_cooccurrence(sentences: &[Sentence], d: usize, window: usize) -> Result<CooccurrenceMatrix> {
    if window < 1 {
        return Err(Error::arg("window must be at least 1"));
    }
    if d == 0 {
        return Err(Error::arg("need at least one feature"));
    }
    if let Some(bad) = sentences.iter().flat_map(|s| s.features()).find(|&&f| f >= d) {
        return Err(Error::arg(format!("feature index {bad} out of range (d = {d})")));
    }
    let counts = sentences
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut local = vec![0u64; d * d];
            for s in chunk {
                let f = s.features();
                for i in 0..f.len() {
                    for j in i + 1..f.len().min(i + window + 1) {
                        local[f[i] * d + f[j]] += 1;
                        local[f[j] * d + f[i]] += 1;
                    }
                }
            }
            local
        })
        .reduce(
            || vec![0u64; d * d],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    Ok(CooccurrenceMatrix {
        d,
        window,
        values: counts.into_iter().map(|c| c as f64).collect(),
    })
}

/// Per-feature 2-D vectors: row `i` of `U₂Σ₂` from the SVD of the raw counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEmbedding {
    vectors: Vec<[f64; 2]>,
    singular_values: [f64; 2],
    explained_variance: f64,
}

impl FeatureEmbedding {
    pub fn from_vectors(vectors: Vec<[f64; 2]>, singular_values: [f64; 2], explained_variance: f64) -> Self {
        FeatureEmbedding {
            vectors,
            singular_values,
            explained_variance,
        }
    }

    pub fn vectors(&self) -> &[[f64; 2]] {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> [f64; 2] {
        self.vectors[i]
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn singular_values(&self) -> [f64; 2] {
        self.singular_values
    }

    /// `(σ₁² + σ₂²) / Σ σₖ²`.
    pub fn explained_variance(&self) -> f64 {
        self.explained_variance
    }

    pub fn importance(&self) -> Vec<f64> {
        importance(self)
    }

    /// Direction of vector `i` in degrees, in `[0, 360)`; `None` for a zero vector.
    pub fn angle_degrees(&self, i: usize) -> Option<f64> {
        let [x, y] = self.vectors[i];
        if x == 0.0 && y == 0.0 {
            return None;
        }
        Some(y.atan2(x).to_degrees().rem_euclid(360.0))
    }

    /// Tab-separated `feature_name, vx, vy, importance, angle_degrees`.
    pub fn write_tsv<W: Write>(&self, names: &[&str], mut out: W) -> Result<()> {
        if names.len() != self.vectors.len() {
            return Err(Error::arg("name count does not match embedding size"));
        }
        let io = |e| Error::io("<embedding tsv>", e);
        writeln!(out, "feature_name\tvx\tvy\timportance\tangle_degrees").map_err(io)?;
        for (i, (name, v)) in names.iter().zip(&self.vectors).enumerate() {
            let angle = self.angle_degrees(i).map_or_else(|| "NaN".to_string(), |a| a.to_string());
            writeln!(out, "{name}\t{}\t{}\t{}\t{angle}", v[0], v[1], v[0].hypot(v[1])).map_err(io)?;
        }
        Ok(())
    }
}

/// Rank-2 truncated SVD of the raw co-occurrence counts (no centering or
/// reweighting, so magnitudes keep the importance signal).
///
/// Each left singular vector is sign-fixed so that its largest-magnitude
/// entry (lowest index on ties) is positive.
pub fn embed(m: &CooccurrenceMatrix) -> Result<FeatureEmbedding> {
    if m.is_zero() {
        return Err(Error::DegenerateMatrix("co-occurrence matrix is all zeros".into()));
    }
    let d = m.d();
    let svd = jacobi_svd(m.values(), d, d);
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let sigma = [svd.singular_values[0], svd.singular_values.get(1).copied().unwrap_or(0.0)];
    let mut comps: Vec<Vec<f64>> = vec![svd.u[0].clone(), svd.u.get(1).cloned().unwrap_or_else(|| vec![0.0; d])];
    for u in &mut comps {
        let mut lead = 0;
        for (i, x) in u.iter().enumerate() {
            if x.abs() > u[lead].abs() {
                lead = i;
            }
        }
        if u[lead] < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let vectors = (0..d).map(|i| [comps[0][i] * sigma[0], comps[1][i] * sigma[1]]).collect();
    let explained_variance = ((sigma[0].powi(2) + sigma[1].powi(2)) / total).min(1.0);
    Ok(FeatureEmbedding {
        vectors,
        singular_values: sigma,
        explained_variance,
    })
}

/// Importance of each feature: the Euclidean norm of its vector.
pub fn importance(e: &FeatureEmbedding) -> Vec<f64> {
    e.vectors.iter().map(|v| v[0].hypot(v[1])).collect()
}

/// Absolute difference of the two directions, wrapped into `[0, π]`.
pub fn angular_distance(a: [f64; 2], b: [f64; 2]) -> Result<f64> {
    if a == [0.0, 0.0] {
        return Err(Error::UndefinedAngle(0));
    }
    if b == [0.0, 0.0] {
        return Err(Error::UndefinedAngle(1));
    }
    Ok(wrap_angle(a[1].atan2(a[0]) - b[1].atan2(b[0])))
}

pub(crate) fn wrap_angle(diff: f64) -> f64 {
    let r = diff.rem_euclid(2.0 * PI);
    if r > PI {
        2.0 * PI - r
    } else {
        r
    }
}
