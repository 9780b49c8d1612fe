//! Reference importance scores: impurity (Gini), permutation, and scores
//! computed elsewhere (e.g. SHAP) loaded from a file.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureSchema};
use crate::embedding::FeatureEmbedding;
use crate::forest::{Forest, Node};
use crate::rng::rng_for;
use crate::{Error, Result};

/// One score per feature, higher meaning more important.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScores {
    pub method: String,
    pub scores: Vec<f64>,
}

impl ImportanceScores {
    pub fn new(method: impl Into<String>, scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numerical(format!("score of feature {i} is not finite")));
        }
        Ok(ImportanceScores {
            method: method.into(),
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Feature indices, most important first; equal scores keep index order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }

    /// Tab-separated `feature_name, score` with a header row.
    pub fn write_tsv<W: Write>(&self, names: &[&str], mut out: W) -> Result<()> {
        if names.len() != self.scores.len() {
            return Err(Error::arg("name count does not match score count"));
        }
        let io = |e| Error::io("<importance tsv>", e);
        writeln!(out, "feature_name\tscore").map_err(io)?;
        for (n, s) in names.iter().zip(&self.scores) {
            writeln!(out, "{n}\t{s}").map_err(io)?;
        }
        Ok(())
    }
}

/// Feature Vectors importance: the norm of each embedding vector.
pub fn feature_vector_scores(e: &FeatureEmbedding) -> ImportanceScores {
    ImportanceScores {
        method: "fv".into(),
        scores: e.importance(),
    }
}

/// Σ over a tree's splits on `f` of `(n_node / n_root) · impurity_decrease`,
/// averaged over trees and normalised to sum to 1.
pub fn gini_importance(forest: &Forest) -> Result<ImportanceScores> {
    if forest.trees().is_empty() {
        return Err(Error::arg("forest has no trees"));
    }
    let d = forest.n_features();
    let mut scores = vec![0.0; d];
    for tree in forest.trees() {
        let nodes = tree.nodes();
        let total = nodes[0].n_samples() as f64;
        for node in nodes {
            if let Node::Internal {
                feature,
                n_samples,
                impurity_decrease,
                ..
            } = *node
            {
                scores[feature] += n_samples as f64 / total * impurity_decrease;
            }
        }
    }
    let n_trees = forest.trees().len() as f64;
    scores.iter_mut().for_each(|s| *s /= n_trees);
    let sum: f64 = scores.iter().sum();
    if sum > 0.0 {
        scores.iter_mut().for_each(|s| *s /= sum);
    } else {
        log::warn!("forest has no impurity-reducing splits; Gini importance is all zero");
    }
    ImportanceScores::new("gini", scores)
}

/// Mean drop in accuracy (or in negative MSE) when one column of `test` is
/// shuffled. Each feature's shuffles come from its own `(seed, feature)` stream.
pub fn permutation_importance(forest: &Forest, test: &Dataset, repeats: usize, seed: u64) -> Result<ImportanceScores> {
    if repeats < 1 {
        return Err(Error::arg("repeats must be at least 1"));
    }
    let baseline = forest.metric(test)?;
    let d = test.n_features();
    let scores = (0..d)
        .into_par_iter()
        .map(|f| -> Result<f64> {
            let mut rng = rng_for(seed, f as u64);
            let mut shuffled = test.clone();
            let original = test.column(f);
            let mut column = original.clone();
            let mut drop = 0.0;
            for _ in 0..repeats {
                column.copy_from_slice(&original);
                column.shuffle(&mut rng);
                shuffled.set_column(f, &column);
                drop += baseline - forest.metric(&shuffled)?;
            }
            Ok(drop / repeats as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    ImportanceScores::new("perm", scores)
}

/// Reads `feature_name<TAB>score` lines (optional header, `#` comments) and
/// aligns them to schema order. Commas are accepted as separators too.
pub fn load_external_scores(path: impl AsRef<Path>, schema: &FeatureSchema, method: &str) -> Result<ImportanceScores> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut found: HashMap<String, f64> = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(2, ['\t', ',']);
        let name = parts.next().unwrap_or("").trim().to_string();
        let raw = parts.next().unwrap_or("").trim();
        let score = match raw.parse::<f64>() {
            Ok(v) => v,
            Err(_) if lineno == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    row: lineno + 1,
                    column: "score".into(),
                    message: format!("`{raw}` is not a number"),
                })
            }
        };
        if schema.index_of(&name).is_none() {
            return Err(Error::Schema(format!("unknown feature `{name}` in {}", path.display())));
        }
        if found.insert(name.clone(), score).is_some() {
            return Err(Error::Schema(format!("feature `{name}` listed twice in {}", path.display())));
        }
    }
    let scores = schema
        .features
        .iter()
        .map(|f| {
            found
                .get(&f.name)
                .copied()
                .ok_or_else(|| Error::Schema(format!("feature `{}` missing from {}", f.name, path.display())))
        })
        .collect::<Result<Vec<f64>>>()?;
    ImportanceScores::new(method, scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Task;
    use crate::forest::{train_forest, DecisionTree, LeafValue, TrainParams};
    use rand::{Rng, SeedableRng};

    fn leaf(p: Vec<f64>, n: usize) -> Node {
        Node::Leaf {
            value: LeafValue::Distribution(p),
            n_samples: n,
        }
    }

    fn forest_of(trees: Vec<DecisionTree>, d: usize) -> Forest {
        Forest::new(trees, TrainParams::new(Task::Classification, 3), 0, d, 2)
    }

    fn schema(names: &[&str]) -> FeatureSchema {
        FeatureSchema::numeric(names, "y", Task::Classification).unwrap()
    }

    fn threshold_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            y.push(if row[0] > 0.0 { 1.0 } else { 0.0 });
            values.extend(row);
        }
        let names: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        Dataset::new(values, y, FeatureSchema::numeric(&names, "y", Task::Classification).unwrap()).unwrap()
    }

    #[test]
    fn leaf_only_forest_scores_zero() {
        let tree = DecisionTree::from_nodes(vec![leaf(vec![1.0, 0.0], 4)]).unwrap();
        let s = gini_importance(&forest_of(vec![tree], 3)).unwrap();
        assert_eq!(s.scores, vec![0.0; 3]);
    }

    /// Root splits 100 samples on f0 (decrease 0.3), its left child of 40
    /// samples splits on f2 (decrease 0.5):
    /// raw = [1.0·0.3, 0, 0.4·0.5] = [0.3, 0, 0.2] → normalised [0.6, 0, 0.4].
    #[test]
    fn hand_built_tree() {
        let nodes = vec![
            Node::Internal {
                feature: 0,
                threshold: 0.0,
                left: 1,
                right: 4,
                n_samples: 100,
                impurity_decrease: 0.3,
            },
            Node::Internal {
                feature: 2,
                threshold: 0.0,
                left: 2,
                right: 3,
                n_samples: 40,
                impurity_decrease: 0.5,
            },
            leaf(vec![1.0, 0.0], 20),
            leaf(vec![0.0, 1.0], 20),
            leaf(vec![0.0, 1.0], 60),
        ];
        let tree = DecisionTree::from_nodes(nodes).unwrap();
        let s = gini_importance(&forest_of(vec![tree], 3)).unwrap();
        let expect = [0.6, 0.0, 0.4];
        for (a, b) in s.scores.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(s.ranking(), vec![0, 2, 1]);
    }

    #[test]
    fn gini_nonnegative_and_normalised() {
        let ds = threshold_data(400, 4, 1);
        let forest = train_forest(&ds, &TrainParams::new(Task::Classification, 4), 10, 2).unwrap();
        let s = gini_importance(&forest).unwrap();
        assert!(s.scores.iter().all(|&x| x >= 0.0));
        assert!((s.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(s.ranking()[0], 0);
    }

    #[test]
    fn permutation_drops_signal_feature() {
        let ds = threshold_data(2000, 3, 4);
        let (train, test) = crate::dataset::train_test_split(&ds, 0.3, 0).unwrap();
        let mut params = TrainParams::new(Task::Classification, 2);
        params.subset_size = Some(3);
        let forest = train_forest(&train, &params, 5, 0).unwrap();
        let s = permutation_importance(&forest, &test, 5, 9).unwrap();
        let base = forest.score(&test).unwrap();
        assert!(base > 0.95);
        // After shuffling x0 the model is right about half the time.
        assert!((base - s.scores[0] - 0.5).abs() < 0.06, "{:?}", s.scores);
        assert_eq!(s, permutation_importance(&forest, &test, 5, 9).unwrap());
    }

    #[test]
    fn unused_and_constant_features_score_zero() {
        let ds = threshold_data(500, 3, 5);
        let mut params = TrainParams::new(Task::Classification, 1);
        params.subset_size = Some(3);
        let forest = train_forest(&ds, &params, 3, 0).unwrap();
        let used: Vec<usize> = forest
            .trees()
            .iter()
            .flat_map(|t| t.nodes().iter())
            .filter_map(|n| match n {
                Node::Internal { feature, .. } => Some(*feature),
                _ => None,
            })
            .collect();
        assert!(used.iter().all(|&f| f == 0));
        let s = permutation_importance(&forest, &ds, 3, 1).unwrap();
        assert_eq!(s.scores[1], 0.0);
        assert_eq!(s.scores[2], 0.0);
        let g = gini_importance(&forest).unwrap();
        assert_eq!(g.scores[1..], [0.0, 0.0]);

        let mut constant = ds.clone();
        constant.set_column(0, &vec![0.5; ds.n_rows()]);
        let s = permutation_importance(&forest, &constant, 3, 1).unwrap();
        assert_eq!(s.scores[0], 0.0);
    }

    #[test]
    fn scaling_a_column_keeps_both_baselines() {
        let ds = threshold_data(600, 3, 8);
        let mut scaled = ds.clone();
        let col: Vec<f64> = ds.column(1).iter().map(|v| v * 7.5).collect();
        scaled.set_column(1, &col);
        let params = TrainParams::new(Task::Classification, 3);
        let a = train_forest(&ds, &params, 5, 3).unwrap();
        let b = train_forest(&scaled, &params, 5, 3).unwrap();
        assert_eq!(gini_importance(&a).unwrap(), gini_importance(&b).unwrap());
        assert_eq!(
            permutation_importance(&a, &ds, 2, 0).unwrap(),
            permutation_importance(&b, &scaled, 2, 0).unwrap()
        );
    }

    fn tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn external_scores_alignment() {
        let schema = schema(&["a", "b", "c"]);
        let f = tmp("feature_name\tscore\na\t1\nb\t2\nc\t3\n");
        assert_eq!(load_external_scores(f.path(), &schema, "shap").unwrap().scores, vec![1.0, 2.0, 3.0]);
        let f = tmp("c\t3\na\t1\nb\t2\n");
        assert_eq!(load_external_scores(f.path(), &schema, "shap").unwrap().scores, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn external_scores_errors() {
        let schema = schema(&["a", "b"]);
        for content in ["a\t1\na\t2\nb\t3\n", "a\t1\n", "a\t1\nb\t2\nz\t3\n"] {
            let f = tmp(content);
            assert!(
                matches!(load_external_scores(f.path(), &schema, "shap"), Err(Error::Schema(_))),
                "{content}"
            );
        }
    }
}
