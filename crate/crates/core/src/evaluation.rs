//! Remove-top-k / add-top-k retraining curves and rank agreement.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::ImportanceScores;
use crate::dataset::{Dataset, Task};
use crate::forest::{score_predictions, train_forest, TrainParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveDirection {
    /// Smallest destroying subset: drop the top-k features.
    Sds,
    /// Smallest sufficient subset: keep only the top-k features.
    Sss,
}

impl CurveDirection {
    pub fn name(self) -> &'static str {
        match self {
            CurveDirection::Sds => "sds",
            CurveDirection::Sss => "sss",
        }
    }
}

/// Test metric after retraining, indexed by k = 0…d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceCurve {
    pub method: String,
    pub direction: CurveDirection,
    /// Accuracy (classification) or MSE (regression).
    pub metric: Vec<f64>,
}

impl PerformanceCurve {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,metric")?;
        for (k, m) in self.metric.iter().enumerate() {
            writeln!(out, "{k},{m}")?;
        }
        Ok(())
    }
}

/// How each point of a curve is retrained: a fixed-size forest with fixed
/// parameters and seed. The candidate subset size follows ⌈√d'⌉ of the
/// features kept at that point unless pinned in `params`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retrainer {
    pub params: TrainParams,
    pub n_trees: usize,
    pub seed: u64,
}

impl Retrainer {
    /// Test metric of a model trained on `features` only. With no features the
    /// model predicts the training majority class (or training mean).
    pub fn evaluate(&self, train: &Dataset, test: &Dataset, features: &[usize]) -> Result<f64> {
        if features.is_empty() {
            return Ok(constant_baseline(train, test));
        }
        let tr = train.select_features(features)?;
        let te = test.select_features(features)?;
        let mut params = self.params;
        if params.subset_size.is_some_and(|k| k > features.len()) {
            params.subset_size = Some(features.len());
        }
        train_forest(&tr, &params, self.n_trees, self.seed)?.score(&te)
    }
}

/// Accuracy of always predicting the training majority class (lowest class
/// on ties), or MSE of predicting the training mean.
pub fn constant_baseline(train: &Dataset, test: &Dataset) -> f64 {
    let guess = match train.task() {
        Task::Classification => {
            let counts = train.class_counts();
            let mut best = 0;
            for (c, &n) in counts.iter().enumerate() {
                if n > counts[best] {
                    best = c;
                }
            }
            best as f64
        }
        Task::Regression => train.target().iter().sum::<f64>() / train.n_rows() as f64,
    };
    score_predictions(train.task(), &vec![guess; test.n_rows()], test.target())
}

fn check_ranking(ranking: &[usize], d: usize) -> Result<()> {
    let mut seen = vec![false; d];
    if ranking.len() != d {
        return Err(Error::arg(format!("ranking has {} entries, expected {d}", ranking.len())));
    }
    for &f in ranking {
        if f >= d || seen[f] {
            return Err(Error::arg("ranking is not a permutation of the features"));
        }
        seen[f] = true;
    }
    Ok(())
}

fn curve(
    train: &Dataset,
    test: &Dataset,
    ranking: &[usize],
    trainer: &Retrainer,
    direction: CurveDirection,
    method: &str,
) -> Result<PerformanceCurve> {
    let d = train.n_features();
    check_ranking(ranking, d)?;
    if test.n_features() != d {
        return Err(Error::arg("train and test have different feature counts"));
    }
    let metric = (0..=d)
        .into_par_iter()
        .map(|k| {
            let mut kept: Vec<usize> = match direction {
                CurveDirection::Sds => ranking[k..].to_vec(),
                CurveDirection::Sss => ranking[..k].to_vec(),
            };
            // Keep original column order so k = d (SSS) and k = 0 (SDS) train
            // on the identical dataset.
            kept.sort_unstable();
            trainer.evaluate(train, test, &kept)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(PerformanceCurve {
        method: method.to_string(),
        direction,
        metric,
    })
}

/// Metric after removing the k most important features, k = 0…d.
pub fn sds_curve(train: &Dataset, test: &Dataset, ranking: &[usize], trainer: &Retrainer, method: &str) -> Result<PerformanceCurve> {
    curve(train, test, ranking, trainer, CurveDirection::Sds, method)
}

/// Metric when keeping only the k most important features, k = 0…d.
pub fn sss_curve(train: &Dataset, test: &Dataset, ranking: &[usize], trainer: &Retrainer, method: &str) -> Result<PerformanceCurve> {
    curve(train, test, ranking, trainer, CurveDirection::Sss, method)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank ties.
pub fn spearman(a: &ImportanceScores, b: &ImportanceScores) -> Result<f64> {
    spearman_slices(&a.scores, &b.scores)
}

pub fn spearman_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::arg("spearman needs two equally long vectors of length >= 2"));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("one of the score vectors is constant".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}
