//! Random-subspace CART ensembles and decision-path sentences.
//!
//! Every split draws a fresh random subset of ⌈√d⌉ candidate features, so
//! features that are shadowed by a slightly better one still get a non-zero
//! chance to appear on decision paths.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Task};
use crate::rng::{derive_seed, rng_for, streams, Rng};
use crate::{Error, Result};

/// Consecutive split-free trees tolerated by [`grow_until_rules`].
pub const MAX_IDLE_TREES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Candidate features per split; `None` means ⌈√d⌉.
    pub subset_size: Option<usize>,
    pub bootstrap: bool,
    pub task: Task,
}

impl TrainParams {
    pub fn new(task: Task, max_depth: usize) -> Self {
        TrainParams {
            max_depth,
            min_samples_leaf: 1,
            subset_size: None,
            bootstrap: false,
            task,
        }
    }

    /// Candidate subset size for `d` features.
    pub fn subset_size_for(&self, d: usize) -> usize {
        self.subset_size.unwrap_or_else(|| default_subset_size(d))
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::arg("max_depth must be at least 1"));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::arg("min_samples_leaf must be at least 1"));
        }
        let k = self.subset_size_for(d);
        if k < 1 || k > d {
            return Err(Error::arg(format!("subset size {k} not in 1..={d}")));
        }
        Ok(())
    }
}

/// ⌈√d⌉, computed without floating-point rounding surprises.
pub fn default_subset_size(d: usize) -> usize {
    let mut k = (d as f64).sqrt() as usize;
    while k * k < d {
        k += 1;
    }
    while k > 1 && (k - 1) * (k - 1) >= d {
        k -= 1;
    }
    k.max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LeafValue {
    /// Class probabilities.
    Distribution(Vec<f64>),
    /// Mean target.
    Mean(f64),
}

/// One node of a tree stored in preorder: an internal node's left child is
/// always the next node in the array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Internal {
        feature: usize,
        /// Rows with `value <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
        n_samples: usize,
        impurity_decrease: f64,
    },
    Leaf {
        value: LeafValue,
        n_samples: usize,
    },
}

impl Node {
    pub fn n_samples(&self) -> usize {
        match self {
            Node::Internal { n_samples, .. } | Node::Leaf { n_samples, .. } => *n_samples,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    /// Wraps a preorder node array, checking child links.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::arg("a tree needs at least one node"));
        }
        for (i, node) in nodes.iter().enumerate() {
            if let Node::Internal { left, right, .. } = *node {
                if left != i + 1 || right <= left || right >= nodes.len() {
                    return Err(Error::Data(format!("node {i} has invalid child links")));
                }
            }
        }
        Ok(DecisionTree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.len() - self.n_leaves()
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        while let Node::Internal {
            feature,
            threshold,
            left,
            right,
            ..
        } = self.nodes[i]
        {
            i = if row[feature] <= threshold { left } else { right };
        }
        i
    }

    pub fn predict_leaf(&self, row: &[f64]) -> &LeafValue {
        match &self.nodes[self.leaf_index(row)] {
            Node::Leaf { value, .. } => value,
            Node::Internal { .. } => unreachable!("leaf_index always stops at a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

/// Split features along one root-to-leaf path, root first. Repeated splits on
/// the same feature are kept.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    features: Vec<usize>,
}

impl Sentence {
    pub fn new(features: Vec<usize>) -> Self {
        Sentence { features }
    }

    pub fn features(&self) -> &[usize] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStep {
    pub node: usize,
    pub feature: usize,
    pub goes_left: bool,
}

/// A root-to-leaf path with branch directions.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionPath {
    pub leaf: usize,
    pub steps: Vec<PathStep>,
}

impl DecisionPath {
    pub fn sentence(&self) -> Sentence {
        Sentence::new(self.steps.iter().map(|s| s.feature).collect())
    }
}

/// All root-to-leaf paths in left-first preorder. A split-free tree has none.
pub fn decision_paths(tree: &DecisionTree) -> Vec<DecisionPath> {
    let nodes = tree.nodes();
    if nodes[0].is_leaf() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut stack: Vec<(usize, Vec<PathStep>)> = vec![(0, Vec::new())];
    while let Some((i, steps)) = stack.pop() {
        match nodes[i] {
            Node::Leaf { .. } => out.push(DecisionPath { leaf: i, steps }),
            Node::Internal { feature, left, right, .. } => {
                let mut r = steps.clone();
                r.push(PathStep {
                    node: i,
                    feature,
                    goes_left: false,
                });
                let mut l = steps;
                l.push(PathStep {
                    node: i,
                    feature,
                    goes_left: true,
                });
                stack.push((right, r));
                stack.push((left, l));
            }
        }
    }
    out
}

/// One sentence per leaf, in left-first preorder of the leaves.
pub fn extract_sentences(tree: &DecisionTree) -> Vec<Sentence> {
    let nodes = tree.nodes();
    if nodes[0].is_leaf() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(tree.n_leaves());
    let mut path = Vec::new();
    walk(nodes, 0, &mut path, &mut out);
    out
}

fn walk(nodes: &[Node], i: usize, path: &mut Vec<usize>, out: &mut Vec<Sentence>) {
    match nodes[i] {
        Node::Leaf { .. } => out.push(Sentence::new(path.clone())),
        Node::Internal { feature, left, right, .. } => {
            path.push(feature);
            walk(nodes, left, path, out);
            walk(nodes, right, path, out);
            path.pop();
        }
    }
}

/// Column-major copy of the training data shared by every tree of a forest.
struct TrainingData {
    columns: Vec<Vec<f64>>,
    labels: Vec<usize>,
    target: Vec<f64>,
    n_classes: usize,
}

impl TrainingData {
    fn new(ds: &Dataset) -> Self {
        let columns = (0..ds.n_features()).map(|f| ds.column(f)).collect();
        let labels = match ds.task() {
            Task::Classification => ds.target().iter().map(|&t| t as usize).collect(),
            Task::Regression => Vec::new(),
        };
        TrainingData {
            columns,
            labels,
            target: ds.target().to_vec(),
            n_classes: ds.n_classes(),
        }
    }

    fn n_rows(&self) -> usize {
        self.target.len()
    }

    fn n_features(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Builder<'a> {
    data: &'a TrainingData,
    params: &'a TrainParams,
    subset: usize,
    rng: Rng,
    nodes: Vec<Node>,
    scratch: Vec<(f64, usize)>,
    counts: Vec<usize>,
}

impl Builder<'_> {
    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let leaf = self.leaf_value(rows);
        let impurity = self.impurity(rows);
        let stop = depth >= self.params.max_depth || n < 2 * self.params.min_samples_leaf || impurity <= 0.0;
        let split = if stop { None } else { self.best_split(rows, impurity) };
        let Some(split) = split else {
            self.nodes.push(Node::Leaf { value: leaf, n_samples: n });
            return id;
        };

        let column = &self.data.columns[split.feature];
        let mut lo = 0;
        for i in 0..n {
            if column[rows[i]] <= split.threshold {
                rows.swap(lo, i);
                lo += 1;
            }
        }
        self.nodes.push(Node::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left: id + 1,
            right: 0,
            n_samples: n,
            impurity_decrease: split.gain.max(0.0),
        });
        let (left_rows, right_rows) = rows.split_at_mut(lo);
        self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        if let Node::Internal { right: r, .. } = &mut self.nodes[id] {
            *r = right;
        }
        id
    }

    fn leaf_value(&mut self, rows: &[usize]) -> LeafValue {
        match self.params.task {
            Task::Classification => {
                let n = rows.len() as f64;
                let counts = self.class_counts(rows);
                LeafValue::Distribution(counts.iter().map(|&c| c as f64 / n).collect())
            }
            Task::Regression => LeafValue::Mean(rows.iter().map(|&i| self.data.target[i]).sum::<f64>() / rows.len() as f64),
        }
    }

    fn class_counts(&mut self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.data.n_classes];
        for &i in rows {
            counts[self.data.labels[i]] += 1;
        }
        counts
    }

    fn impurity(&mut self, rows: &[usize]) -> f64 {
        let n = rows.len() as f64;
        match self.params.task {
            Task::Classification => {
                let counts = self.class_counts(rows);
                1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
            }
            Task::Regression => {
                let (s, ss) = rows.iter().fold((0.0, 0.0), |(s, ss), &i| {
                    let y = self.data.target[i];
                    (s + y, ss + y * y)
                });
                (ss / n - (s / n).powi(2)).max(0.0)
            }
        }
    }

    /// Best (feature, threshold) over a fresh random feature subset. Features
    /// are scanned in ascending index order and thresholds in ascending order,
    /// and only a strictly larger gain replaces the incumbent.
    fn best_split(&mut self, rows: &[usize], parent_impurity: f64) -> Option<Split> {
        let d = self.data.n_features();
        let mut candidates = sample(&mut self.rng, d, self.subset.min(d)).into_vec();
        candidates.sort_unstable();
        let mut best: Option<Split> = None;
        for f in candidates {
            if let Some(s) = self.scan_feature(rows, f, parent_impurity) {
                if best.is_none_or(|b| s.gain > b.gain) {
                    best = Some(s);
                }
            }
        }
        best
    }

    fn scan_feature(&mut self, rows: &[usize], feature: usize, parent_impurity: f64) -> Option<Split> {
        let column = &self.data.columns[feature];
        self.scratch.clear();
        self.scratch.extend(rows.iter().map(|&i| (column[i], i)));
        self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let n = self.scratch.len();
        if self.scratch[0].0 == self.scratch[n - 1].0 {
            return None;
        }
        let msl = self.params.min_samples_leaf;
        let nf = n as f64;
        let mut best: Option<(f64, usize)> = None;

        match self.params.task {
            Task::Classification => {
                let k = self.data.n_classes;
                self.counts.clear();
                self.counts.resize(2 * k, 0);
                let (left, right) = self.counts.split_at_mut(k);
                for &(_, i) in &self.scratch {
                    right[self.data.labels[i]] += 1;
                }
                let mut sq_left = 0.0f64;
                let mut sq_right: f64 = right.iter().map(|&c| (c * c) as f64).sum();
                for p in 0..n - 1 {
                    let c = self.data.labels[self.scratch[p].1];
                    sq_left += (2 * left[c] + 1) as f64;
                    sq_right -= (2 * right[c] - 1) as f64;
                    left[c] += 1;
                    right[c] -= 1;
                    let nl = p + 1;
                    let nr = n - nl;
                    if nl < msl || nr < msl || self.scratch[p].0 == self.scratch[p + 1].0 {
                        continue;
                    }
                    // n * weighted child gini = nl - sq_l/nl + nr - sq_r/nr
                    let child = (nf - sq_left / nl as f64 - sq_right / nr as f64) / nf;
                    let gain = parent_impurity - child;
                    if best.is_none_or(|(g, _)| gain > g) {
                        best = Some((gain, p));
                    }
                }
            }
            Task::Regression => {
                let y = &self.data.target;
                let (total, total_sq) = self
                    .scratch
                    .iter()
                    .fold((0.0, 0.0), |(s, ss), &(_, i)| (s + y[i], ss + y[i] * y[i]));
                let (mut sl, mut ssl) = (0.0, 0.0);
                for p in 0..n - 1 {
                    let v = y[self.scratch[p].1];
                    sl += v;
                    ssl += v * v;
                    let nl = p + 1;
                    let nr = n - nl;
                    if nl < msl || nr < msl || self.scratch[p].0 == self.scratch[p + 1].0 {
                        continue;
                    }
                    let sr = total - sl;
                    let ssr = total_sq - ssl;
                    let sse = (ssl - sl * sl / nl as f64) + (ssr - sr * sr / nr as f64);
                    let gain = parent_impurity - sse.max(0.0) / nf;
                    if best.is_none_or(|(g, _)| gain > g) {
                        best = Some((gain, p));
                    }
                }
            }
        }

        best.map(|(gain, p)| {
            let a = self.scratch[p].0;
            let b = self.scratch[p + 1].0;
            let mid = a + (b - a) / 2.0;
            Split {
                feature,
                threshold: if mid < b { mid } else { a },
                gain,
            }
        })
    }
}

fn train_on(data: &TrainingData, params: &TrainParams, seed: u64) -> DecisionTree {
    let d = data.n_features();
    let mut rng = rng_for(seed, 0);
    let n = data.n_rows();
    let mut rows: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut builder = Builder {
        data,
        params,
        subset: params.subset_size_for(d),
        rng,
        nodes: Vec::new(),
        scratch: Vec::with_capacity(n),
        counts: Vec::new(),
    };
    builder.build(&mut rows, 0);
    DecisionTree { nodes: builder.nodes }
}

fn check_task(ds: &Dataset, params: &TrainParams) -> Result<()> {
    if ds.task() != params.task {
        return Err(Error::arg(format!(
            "parameters are for {:?} but the dataset is {:?}",
            params.task,
            ds.task()
        )));
    }
    params.validate(ds.n_features())
}

/// Greedy CART on the whole dataset (or a bootstrap sample of it).
///
/// Gini impurity for classification, variance for regression. Stops at
/// `max_depth`, when a child would fall below `min_samples_leaf`, or at pure
/// nodes; degenerate data simply yields a single leaf.
pub fn train_tree(ds: &Dataset, params: &TrainParams, seed: u64) -> Result<DecisionTree> {
    check_task(ds, params)?;
    Ok(train_on(&TrainingData::new(ds), params, seed))
}

/// Seed of tree `index` in a forest grown from `seed`.
pub fn tree_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<DecisionTree>,
    params: TrainParams,
    seed: u64,
    n_features: usize,
    n_classes: usize,
}

impl Forest {
    pub fn new(trees: Vec<DecisionTree>, params: TrainParams, seed: u64, n_features: usize, n_classes: usize) -> Self {
        Forest {
            trees,
            params,
            seed,
            n_features,
            n_classes,
        }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn params(&self) -> &TrainParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn task(&self) -> Task {
        self.params.task
    }

    /// Sentences of every tree, in tree order.
    pub fn sentences(&self) -> Vec<Sentence> {
        self.trees.iter().flat_map(extract_sentences).collect()
    }

    /// Majority vote of per-tree argmax (ties to the lower class) for
    /// classification; mean of leaf means for regression.
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if self.trees.is_empty() {
            return Err(Error::arg("cannot predict with an empty forest"));
        }
        if row.len() != self.n_features {
            return Err(Error::arg(format!(
                "row has {} values, forest expects {}",
                row.len(),
                self.n_features
            )));
        }
        Ok(self.predict_unchecked(row))
    }

    fn predict_unchecked(&self, row: &[f64]) -> f64 {
        match self.params.task {
            Task::Classification => {
                let mut votes = vec![0usize; self.n_classes.max(1)];
                for t in &self.trees {
                    if let LeafValue::Distribution(p) = t.predict_leaf(row) {
                        votes[argmax(p)] += 1;
                    }
                }
                argmax_count(&votes) as f64
            }
            Task::Regression => {
                let sum: f64 = self
                    .trees
                    .iter()
                    .map(|t| match t.predict_leaf(row) {
                        LeafValue::Mean(m) => *m,
                        LeafValue::Distribution(_) => 0.0,
                    })
                    .sum();
                sum / self.trees.len() as f64
            }
        }
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>> {
        if self.trees.is_empty() {
            return Err(Error::arg("cannot predict with an empty forest"));
        }
        if ds.n_features() != self.n_features {
            return Err(Error::arg(format!(
                "dataset has {} features, forest expects {}",
                ds.n_features(),
                self.n_features
            )));
        }
        Ok((0..ds.n_rows()).map(|i| self.predict_unchecked(ds.row(i))).collect())
    }

    /// Accuracy (classification) or mean squared error (regression).
    pub fn score(&self, ds: &Dataset) -> Result<f64> {
        let pred = self.predict_dataset(ds)?;
        Ok(score_predictions(self.params.task, &pred, ds.target()))
    }

    /// Higher-is-better metric: accuracy or negative MSE.
    pub fn metric(&self, ds: &Dataset) -> Result<f64> {
        let s = self.score(ds)?;
        Ok(match self.params.task {
            Task::Classification => s,
            Task::Regression => -s,
        })
    }

    pub fn to_document(&self) -> ForestDocument {
        ForestDocument {
            format: FOREST_FORMAT.to_string(),
            version: FOREST_VERSION,
            forest: self.clone(),
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), &self.to_document())?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let doc: ForestDocument = serde_json::from_reader(BufReader::new(file))?;
        doc.into_forest()
    }
}

pub const FOREST_FORMAT: &str = "featvec-forest";
pub const FOREST_VERSION: u32 = 1;

/// Versioned on-disk form of a [`Forest`]; trees are preorder node arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestDocument {
    pub format: String,
    pub version: u32,
    #[serde(flatten)]
    pub forest: Forest,
}

impl ForestDocument {
    pub fn into_forest(self) -> Result<Forest> {
        if self.format != FOREST_FORMAT {
            return Err(Error::Data(format!("not a forest document (format `{}`)", self.format)));
        }
        if self.version != FOREST_VERSION {
            return Err(Error::Data(format!(
                "unsupported forest document version {} (expected {FOREST_VERSION})",
                self.version
            )));
        }
        for tree in &self.forest.trees {
            DecisionTree::from_nodes(tree.nodes.clone())?;
        }
        Ok(self.forest)
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn argmax_count(v: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in v.iter().enumerate() {
        if c > v[best] {
            best = i;
        }
    }
    best
}

pub fn score_predictions(task: Task, pred: &[f64], truth: &[f64]) -> f64 {
    let n = truth.len() as f64;
    match task {
        Task::Classification => pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / n,
        Task::Regression => pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n,
    }
}

/// A fixed-size forest; trees are trained in parallel from per-tree seeds.
pub fn train_forest(ds: &Dataset, params: &TrainParams, n_trees: usize, seed: u64) -> Result<Forest> {
    check_task(ds, params)?;
    if n_trees == 0 {
        return Err(Error::arg("n_trees must be at least 1"));
    }
    let data = TrainingData::new(ds);
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|t| train_on(&data, params, tree_seed(seed, t)))
        .collect();
    Ok(Forest::new(trees, *params, seed, ds.n_features(), ds.n_classes()))
}

/// Trains trees 0, 1, 2, … until at least `rules` sentences exist and
/// returns every sentence (the last tree may overshoot `rules`).
///
/// Trees are trained in parallel batches but consumed strictly in index
/// order, so the result does not depend on the number of worker threads.
pub fn grow_until_rules(ds: &Dataset, rules: usize, params: &TrainParams, seed: u64) -> Result<(Forest, Vec<Sentence>)> {
    check_task(ds, params)?;
    if rules == 0 {
        return Err(Error::arg("number of rules must be at least 1"));
    }
    let data = TrainingData::new(ds);
    let mut trees = Vec::new();
    let mut sentences = Vec::with_capacity(rules);
    let mut idle = 0;
    let mut next = 0usize;
    let mut batch = rayon::current_num_threads().max(1);
    'grow: loop {
        let trained: Vec<DecisionTree> = (next..next + batch)
            .into_par_iter()
            .map(|t| train_on(&data, params, tree_seed(seed, t)))
            .collect();
        next += batch;
        for tree in trained {
            let s = extract_sentences(&tree);
            if s.is_empty() {
                idle += 1;
                if idle >= MAX_IDLE_TREES {
                    return Err(Error::Unsplittable(format!("{MAX_IDLE_TREES} consecutive trees produced no split")));
                }
            } else {
                idle = 0;
            }
            sentences.extend(s);
            trees.push(tree);
            if sentences.len() >= rules {
                break 'grow;
            }
        }
        let per_tree = (sentences.len() / trees.len()).max(1);
        let needed = (rules - sentences.len()).div_ceil(per_tree);
        batch = needed.clamp(rayon::current_num_threads().max(1), 256);
    }
    log::debug!("grew {} trees for {} sentences", trees.len(), sentences.len());
    Ok((Forest::new(trees, *params, seed, ds.n_features(), ds.n_classes()), sentences))
}

/// Fold assignment for k-fold cross-validation, stratified by class for
/// classification.
pub fn fold_assignment(ds: &Dataset, folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut rng = rng_for(seed, streams::CV_FOLDS);
    let mut fold = vec![0; ds.n_rows()];
    let groups: Vec<Vec<usize>> = match ds.task() {
        Task::Classification => {
            let mut g = vec![Vec::new(); ds.n_classes()];
            for (i, &t) in ds.target().iter().enumerate() {
                g[t as usize].push(i);
            }
            g
        }
        Task::Regression => vec![(0..ds.n_rows()).collect()],
    };
    let mut offset = 0;
    for mut g in groups {
        g.shuffle(&mut rng);
        for (j, &i) in g.iter().enumerate() {
            fold[i] = (offset + j) % folds;
        }
        offset += g.len();
    }
    fold
}

/// Depth with the best mean validation metric over `folds` folds; exact ties
/// go to the smaller depth. Each fold trains a forest of `n_trees` trees.
pub fn cross_validate_depth(ds: &Dataset, depths: &[usize], folds: usize, base: &TrainParams, n_trees: usize, seed: u64) -> Result<usize> {
    if depths.is_empty() {
        return Err(Error::arg("depth list is empty"));
    }
    if folds < 2 {
        return Err(Error::arg("cross-validation needs at least 2 folds"));
    }
    if ds.task() == Task::Classification {
        if let Some((c, &n)) = ds.class_counts().iter().enumerate().find(|&(_, &n)| n > 0 && n < folds) {
            return Err(Error::arg(format!("class {c} has {n} members, fewer than {folds} folds")));
        }
    } else if ds.n_rows() < folds {
        return Err(Error::arg("fewer rows than folds"));
    }
    let mut sorted = depths.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let assignment = fold_assignment(ds, folds, seed);
    let splits: Vec<(Dataset, Dataset)> = (0..folds)
        .map(|k| {
            let train: Vec<usize> = (0..ds.n_rows()).filter(|&i| assignment[i] != k).collect();
            let valid: Vec<usize> = (0..ds.n_rows()).filter(|&i| assignment[i] == k).collect();
            (ds.select_rows(&train), ds.select_rows(&valid))
        })
        .collect();

    let forest_seed = derive_seed(seed, streams::CV_FOREST);
    let mut best: Option<(f64, usize)> = None;
    for &depth in &sorted {
        let params = TrainParams { max_depth: depth, ..*base };
        let mut total = 0.0;
        for (train, valid) in &splits {
            let forest = train_forest(train, &params, n_trees, forest_seed)?;
            total += forest.metric(valid)?;
        }
        let mean = total / folds as f64;
        log::debug!("cv depth {depth}: mean metric {mean:.4}");
        if best.is_none_or(|(m, _)| mean > m) {
            best = Some((mean, depth));
        }
    }
    Ok(best.expect("non-empty depth list").1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureSchema;
    use rand::SeedableRng;

    fn dataset(rows: &[Vec<f64>], y: &[f64], task: Task) -> Dataset {
        let names: Vec<String> = (0..rows[0].len()).map(|i| format!("x{i}")).collect();
        let schema = FeatureSchema::numeric(&names, "y", task).unwrap();
        Dataset::from_rows(rows, y.to_vec(), schema).unwrap()
    }

    fn xor() -> Dataset {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..5 {
            for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                rows.push(vec![a, b]);
                y.push(if (a == 1.0) != (b == 1.0) { 1.0 } else { 0.0 });
            }
        }
        dataset(&rows, &y, Task::Classification)
    }

    fn random_dataset(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| if r[0] + 0.3 * rng.gen::<f64>() > 0.6 { 1.0 } else { 0.0 })
            .collect();
        dataset(&rows, &y, Task::Classification)
    }

    fn check_conservation(tree: &DecisionTree) {
        for node in tree.nodes() {
            if let Node::Internal {
                left,
                right,
                n_samples,
                impurity_decrease,
                ..
            } = *node
            {
                assert_eq!(n_samples, tree.nodes()[left].n_samples() + tree.nodes()[right].n_samples());
                assert!(impurity_decrease >= 0.0);
            }
        }
    }

    #[test]
    fn subset_size_is_ceil_sqrt() {
        let expect = [(1, 1), (2, 2), (4, 2), (5, 3), (9, 3), (10, 4), (20, 5), (40, 7), (11, 4)];
        for (d, k) in expect {
            assert_eq!(default_subset_size(d), k, "d = {d}");
        }
    }

    #[test]
    fn pure_labels_give_single_leaf() {
        let ds = dataset(&[vec![1.0], vec![2.0], vec![3.0]], &[1.0, 1.0, 1.0], Task::Classification);
        let tree = train_tree(&ds, &TrainParams::new(Task::Classification, 5), 0).unwrap();
        assert_eq!(tree.nodes().len(), 1);
        assert!(extract_sentences(&tree).is_empty());
    }

    #[test]
    fn perfect_one_dimensional_split() {
        let ds = dataset(
            &[vec![0.0], vec![1.0], vec![0.0], vec![1.0]],
            &[0.0, 1.0, 0.0, 1.0],
            Task::Classification,
        );
        let tree = train_tree(&ds, &TrainParams::new(Task::Classification, 3), 0).unwrap();
        assert_eq!(tree.n_splits(), 1);
        match tree.nodes()[0] {
            Node::Internal { threshold, .. } => assert!(threshold > 0.0 && threshold < 1.0),
            _ => panic!("expected a split"),
        }
        for node in tree.nodes().iter().filter(|n| n.is_leaf()) {
            match node {
                Node::Leaf {
                    value: LeafValue::Distribution(p),
                    ..
                } => assert!(p.contains(&1.0)),
                _ => panic!(),
            }
        }
    }

    /// Brute force over every axis-aligned depth-2 tree on the XOR grid:
    /// a perfect one exists, and greedy training must find one.
    #[test]
    fn xor_depth_two_is_perfect() {
        let ds = xor();
        let thresholds = |f: usize, rows: &[usize]| {
            let mut v: Vec<f64> = rows.iter().map(|&i| ds.value(i, f)).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect::<Vec<_>>()
        };
        let pure = |rows: &[usize]| rows.windows(2).all(|w| ds.target()[w[0]] == ds.target()[w[1]]);
        let all: Vec<usize> = (0..ds.n_rows()).collect();
        let mut perfect_exists = false;
        for f0 in 0..2 {
            for t0 in thresholds(f0, &all) {
                let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| ds.value(i, f0) <= t0);
                let side_ok = |rows: &[usize]| {
                    pure(rows)
                        || (0..2).any(|f| {
                            thresholds(f, rows).into_iter().any(|t| {
                                let (a, b): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| ds.value(i, f) <= t);
                                pure(&a) && pure(&b)
                            })
                        })
                };
                perfect_exists |= side_ok(&l) && side_ok(&r);
            }
        }
        assert!(perfect_exists);

        let mut params = TrainParams::new(Task::Classification, 2);
        params.subset_size = Some(2);
        let tree = train_tree(&ds, &params, 11).unwrap();
        assert_eq!(tree.depth(), 2);
        let forest = Forest::new(vec![tree], params, 11, 2, 2);
        assert_eq!(forest.score(&ds).unwrap(), 1.0);
    }

    #[test]
    fn tie_break_prefers_lowest_feature() {
        // Columns 0 and 1 are identical, so every split ties.
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| if i < 5 { 0.0 } else { 1.0 }).collect();
        let ds = dataset(&rows, &y, Task::Classification);
        let mut params = TrainParams::new(Task::Classification, 1);
        params.subset_size = Some(2);
        let tree = train_tree(&ds, &params, 0).unwrap();
        assert!(matches!(tree.nodes()[0], Node::Internal { feature: 0, threshold, .. } if threshold == 4.5));
    }

    #[test]
    fn sentences_of_single_split() {
        let nodes = vec![
            Node::Internal {
                feature: 3,
                threshold: 0.0,
                left: 1,
                right: 2,
                n_samples: 2,
                impurity_decrease: 0.5,
            },
            Node::Leaf {
                value: LeafValue::Mean(0.0),
                n_samples: 1,
            },
            Node::Leaf {
                value: LeafValue::Mean(1.0),
                n_samples: 1,
            },
        ];
        let tree = DecisionTree::from_nodes(nodes).unwrap();
        let s: Vec<Vec<usize>> = extract_sentences(&tree).iter().map(|s| s.features().to_vec()).collect();
        assert_eq!(s, vec![vec![3], vec![3]]);
    }

    #[test]
    fn sentences_of_complete_depth_two_tree() {
        let leaf = || Node::Leaf {
            value: LeafValue::Mean(0.0),
            n_samples: 1,
        };
        let split = |feature, left, right, n| Node::Internal {
            feature,
            threshold: 0.0,
            left,
            right,
            n_samples: n,
            impurity_decrease: 0.0,
        };
        let nodes = vec![
            split(0, 1, 4, 4),
            split(1, 2, 3, 2),
            leaf(),
            leaf(),
            split(2, 5, 6, 2),
            leaf(),
            leaf(),
        ];
        let tree = DecisionTree::from_nodes(nodes).unwrap();
        let s: Vec<Vec<usize>> = extract_sentences(&tree).iter().map(|s| s.features().to_vec()).collect();
        assert_eq!(s, vec![vec![0, 1], vec![0, 1], vec![0, 2], vec![0, 2]]);
    }

    fn count_leaves_recursive(nodes: &[Node], i: usize) -> usize {
        match nodes[i] {
            Node::Leaf { .. } => 1,
            Node::Internal { left, right, .. } => count_leaves_recursive(nodes, left) + count_leaves_recursive(nodes, right),
        }
    }

    #[test]
    fn random_tree_structure() {
        let ds = random_dataset(300, 6, 5);
        for seed in 0..5 {
            let tree = train_tree(&ds, &TrainParams::new(Task::Classification, 5), seed).unwrap();
            check_conservation(&tree);
            let sentences = extract_sentences(&tree);
            assert_eq!(sentences.len(), count_leaves_recursive(tree.nodes(), 0));
            assert!(sentences.iter().all(|s| !s.is_empty() && s.len() <= 5));

            // Replaying every path from the root lands on its own leaf, and
            // every leaf is reached exactly once.
            let paths = decision_paths(&tree);
            let mut leaves: Vec<usize> = paths.iter().map(|p| p.leaf).collect();
            for p in &paths {
                let mut i = 0;
                for step in &p.steps {
                    assert_eq!(step.node, i);
                    match tree.nodes()[i] {
                        Node::Internal { feature, left, right, .. } => {
                            assert_eq!(feature, step.feature);
                            i = if step.goes_left { left } else { right };
                        }
                        Node::Leaf { .. } => panic!("path continues past a leaf"),
                    }
                }
                assert_eq!(i, p.leaf);
            }
            leaves.sort_unstable();
            leaves.dedup();
            assert_eq!(leaves.len(), paths.len());
            let from_paths: Vec<Sentence> = paths.iter().map(DecisionPath::sentence).collect();
            assert_eq!(from_paths, sentences);
        }
    }

    #[test]
    fn candidate_subset_has_requested_size() {
        // With subset_size = d every feature is scanned, so the root split is
        // the global best; with subset_size = 1 the root feature varies by seed.
        let ds = random_dataset(200, 5, 9);
        let mut params = TrainParams::new(Task::Classification, 1);
        params.subset_size = Some(5);
        let roots: Vec<usize> = (0..20)
            .map(|s| match train_tree(&ds, &params, s).unwrap().nodes()[0] {
                Node::Internal { feature, .. } => feature,
                _ => usize::MAX,
            })
            .collect();
        assert!(roots.iter().all(|&f| f == 0));
        params.subset_size = Some(1);
        let mut roots: Vec<usize> = (0..40)
            .map(|s| match train_tree(&ds, &params, s).unwrap().nodes()[0] {
                Node::Internal { feature, .. } => feature,
                _ => usize::MAX,
            })
            .collect();
        roots.sort_unstable();
        roots.dedup();
        assert_eq!(roots, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn grow_until_one_rule() {
        let ds = random_dataset(100, 4, 1);
        let (forest, sentences) = grow_until_rules(&ds, 1, &TrainParams::new(Task::Classification, 3), 0).unwrap();
        assert_eq!(forest.trees().len(), 1);
        assert!(sentences.len() >= 2);
    }

    #[test]
    fn grow_until_rules_accounting() {
        let ds = random_dataset(200, 6, 2);
        let (forest, sentences) = grow_until_rules(&ds, 500, &TrainParams::new(Task::Classification, 4), 3).unwrap();
        let leaves: usize = forest.trees().iter().map(DecisionTree::n_leaves).sum();
        assert!(sentences.len() >= 500);
        assert_eq!(sentences.len(), leaves);
        // Dropping the last tree must leave fewer than R sentences.
        let last = forest.trees().last().unwrap().n_leaves();
        assert!(sentences.len() - last < 500);
        assert_eq!(forest.sentences(), sentences);
    }

    #[test]
    fn unsplittable_data_errors() {
        let ds = dataset(&[vec![1.0], vec![1.0], vec![1.0]], &[0.0, 1.0, 0.0], Task::Classification);
        let err = grow_until_rules(&ds, 10, &TrainParams::new(Task::Classification, 3), 0).unwrap_err();
        assert!(matches!(err, Error::Unsplittable(_)));
    }

    #[test]
    fn forest_is_thread_count_independent() {
        let ds = random_dataset(300, 9, 4);
        let params = TrainParams::new(Task::Classification, 4);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| grow_until_rules(&ds, 700, &params, 17).unwrap())
        };
        let (a, sa) = run(1);
        let (b, sb) = run(3);
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn threshold_feature_prediction() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..1000)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| if r[0] > 0.0 { 1.0 } else { 0.0 }).collect();
        let ds = dataset(&rows, &y, Task::Classification);
        let (train, test) = crate::dataset::train_test_split(&ds, 0.3, 1).unwrap();
        let forest = train_forest(&train, &TrainParams::new(Task::Classification, 2), 10, 0).unwrap();
        assert!(forest.score(&test).unwrap() > 0.95);
    }

    #[test]
    fn predict_errors() {
        let empty = Forest::new(vec![], TrainParams::new(Task::Classification, 1), 0, 2, 2);
        assert!(empty.predict(&[0.0, 0.0]).is_err());
        let ds = xor();
        let forest = train_forest(&ds, &TrainParams::new(Task::Classification, 2), 2, 0).unwrap();
        assert!(matches!(forest.predict(&[0.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn single_pure_leaf_prediction() {
        let tree = DecisionTree::from_nodes(vec![Node::Leaf {
            value: LeafValue::Distribution(vec![0.0, 1.0]),
            n_samples: 3,
        }])
        .unwrap();
        let forest = Forest::new(vec![tree], TrainParams::new(Task::Classification, 1), 0, 1, 2);
        assert_eq!(forest.predict(&[5.0]).unwrap(), 1.0);
    }

    #[test]
    fn regression_tree_fits_step() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| if i < 20 { 1.0 } else { 3.0 }).collect();
        let ds = dataset(&rows, &y, Task::Regression);
        let tree = train_tree(&ds, &TrainParams::new(Task::Regression, 1), 0).unwrap();
        match tree.nodes()[0] {
            Node::Internal {
                threshold,
                impurity_decrease,
                ..
            } => {
                assert_eq!(threshold, 19.5);
                assert!((impurity_decrease - 1.0).abs() < 1e-12);
            }
            _ => panic!(),
        }
        let forest = Forest::new(vec![tree], TrainParams::new(Task::Regression, 1), 0, 1, 0);
        assert_eq!(forest.score(&ds).unwrap(), 0.0);
    }

    #[test]
    fn cv_prefers_smallest_depth_on_ties() {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..60).map(|i| if i < 30 { 0.0 } else { 1.0 }).collect();
        let ds = dataset(&rows, &y, Task::Classification);
        let base = TrainParams::new(Task::Classification, 1);
        let d = cross_validate_depth(&ds, &[3, 1, 2], 3, &base, 5, 0).unwrap();
        assert_eq!(d, 1);
        assert_eq!(cross_validate_depth(&ds, &[3, 1, 2], 3, &base, 5, 0).unwrap(), d);
    }

    #[test]
    fn cv_picks_depth_two_for_xor() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|_| vec![rng.gen_range(0..2) as f64, rng.gen_range(0..2) as f64])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| if r[0] != r[1] { 1.0 } else { 0.0 }).collect();
        let ds = dataset(&rows, &y, Task::Classification);
        let mut base = TrainParams::new(Task::Classification, 1);
        base.subset_size = Some(2);
        assert_eq!(cross_validate_depth(&ds, &[1, 2], 4, &base, 5, 1).unwrap(), 2);
        assert!(cross_validate_depth(&ds, &[], 4, &base, 5, 1).is_err());
    }

    #[test]
    fn json_round_trip() {
        let ds = random_dataset(100, 3, 0);
        let forest = train_forest(&ds, &TrainParams::new(Task::Classification, 3), 3, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forest.json");
        forest.write_json(&path).unwrap();
        assert_eq!(Forest::read_json(&path).unwrap(), forest);
        let mut doc = forest.to_document();
        doc.version = 99;
        assert!(doc.into_forest().is_err());
    }
}
