//! The end-to-end fit: split, pick a depth, grow sentences, embed.

use serde::{Deserialize, Serialize};

use crate::dataset::{split_indices, Dataset};
use crate::embedding::{build_cooccurrence, embed, CooccurrenceMatrix, FeatureEmbedding, DEFAULT_WINDOW};
use crate::forest::{cross_validate_depth, grow_until_rules, Forest, Sentence, TrainParams};
use crate::rng::{derive_seed, streams};
use crate::Result;

pub const DEFAULT_RULES: usize = 100_000;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_CV_FOLDS: usize = 3;
pub const DEFAULT_CV_TREES: usize = 25;
pub const DEFAULT_CV_DEPTHS: [usize; 9] = [2, 3, 4, 5, 6, 7, 8, 9, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthChoice {
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for DepthChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(DepthChoice::Auto);
        }
        match s.parse::<usize>() {
            Ok(d) if d >= 1 => Ok(DepthChoice::Fixed(d)),
            _ => Err(format!("depth must be 'auto' or a positive integer, got '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub rules: usize,
    pub window: usize,
    pub depth: DepthChoice,
    pub seed: u64,
    pub test_fraction: f64,
    pub cv_folds: usize,
    pub cv_trees: usize,
    pub cv_depths: Vec<usize>,
    pub bootstrap: bool,
    pub min_samples_leaf: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            rules: DEFAULT_RULES,
            window: DEFAULT_WINDOW,
            depth: DepthChoice::Auto,
            seed: 0,
            test_fraction: DEFAULT_TEST_FRACTION,
            cv_folds: DEFAULT_CV_FOLDS,
            cv_trees: DEFAULT_CV_TREES,
            cv_depths: DEFAULT_CV_DEPTHS.to_vec(),
            bootstrap: false,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub depth: usize,
    /// `true` when the depth came from cross-validation.
    pub cv_selected: bool,
    pub forest: Forest,
    pub sentences: Vec<Sentence>,
    pub cooccurrence: CooccurrenceMatrix,
    pub embedding: FeatureEmbedding,
}

impl FitOutput {
    pub fn train(&self, ds: &Dataset) -> Dataset {
        ds.select_rows(&self.train_rows)
    }

    pub fn test(&self, ds: &Dataset) -> Dataset {
        ds.select_rows(&self.test_rows)
    }
}

/// Depth for `train` per `config`, cross-validated on the training rows when
/// `Auto`.
pub fn choose_depth(train: &Dataset, config: &FitConfig) -> Result<usize> {
    match config.depth {
        DepthChoice::Fixed(d) => Ok(d),
        DepthChoice::Auto => {
            let base = base_params(train, config, 1);
            cross_validate_depth(
                train,
                &config.cv_depths,
                config.cv_folds,
                &base,
                config.cv_trees,
                derive_seed(config.seed, streams::CV_FOLDS),
            )
        }
    }
}

fn base_params(ds: &Dataset, config: &FitConfig, depth: usize) -> TrainParams {
    TrainParams {
        bootstrap: config.bootstrap,
        min_samples_leaf: config.min_samples_leaf,
        ..TrainParams::new(ds.task(), depth)
    }
}

/// Splits `ds`, chooses the depth on the training part, grows trees on it
/// until `rules` sentences exist and embeds their co-occurrences.
pub fn fit(ds: &Dataset, config: &FitConfig) -> Result<FitOutput> {
    let (train_rows, test_rows) = if config.test_fraction > 0.0 {
        split_indices(ds, config.test_fraction, config.seed)?
    } else {
        ((0..ds.n_rows()).collect(), Vec::new())
    };
    let train = ds.select_rows(&train_rows);
    let depth = choose_depth(&train, config)?;
    log::info!("tree depth {depth}");
    let params = base_params(&train, config, depth);
    let (forest, sentences) = grow_until_rules(&train, config.rules, &params, config.seed)?;
    log::info!("{} trees, {} sentences", forest.trees().len(), sentences.len());
    let cooccurrence = build_cooccurrence(&sentences, ds.n_features(), config.window)?;
    let embedding = embed(&cooccurrence)?;
    Ok(FitOutput {
        train_rows,
        test_rows,
        depth,
        cv_selected: config.depth == DepthChoice::Auto,
        forest,
        sentences,
        cooccurrence,
        embedding,
    })
}
