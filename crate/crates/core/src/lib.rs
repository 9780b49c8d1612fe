//! Feature Vectors: a global interpretability method for tabular models.
//!
//! A large ensemble of decision trees is trained where every split only sees a
//! random subset of the features. Each root-to-leaf decision path becomes a
//! "sentence" of feature indices, features that appear close to each other in
//! those sentences are counted in a co-occurrence matrix, and a rank-2
//! truncated SVD of the raw counts yields one 2-D vector per feature. The
//! vector's length is the feature's importance and its direction encodes which
//! features the model treats as interchangeable.
//!
//! The crate also carries the tooling used to validate those vectors:
//! impurity and permutation importances ([`baselines`]), retraining curves
//! ([`evaluation`]), Gaussian-mixture knockoffs with an angle permutation test
//! ([`knockoffs`]), synthetic generators ([`synthetic`]) and SVG rendering
//! ([`viz`]).
//!
//! ```no_run
//! use featvec::{dataset, embedding, forest};
//!
//! # fn main() -> featvec::Result<()> {
//! let ds = dataset::load_csv("data.csv", None, &dataset::LoadOptions::default())?.dataset;
//! let params = forest::TrainParams::new(ds.task(), 6);
//! let (_forest, sentences) = forest::grow_until_rules(&ds, 100_000, &params, 42)?;
//! let m = embedding::build_cooccurrence(&sentences, ds.n_features(), 3)?;
//! let emb = embedding::embed(&m)?;
//! println!("explained variance: {:.3}", emb.explained_variance());
//! # Ok(())
//! # }
//! ```

pub mod baselines;
pub mod dataset;
pub mod embedding;
mod error;
pub mod evaluation;
pub mod forest;
pub mod knockoffs;
pub mod pipeline;
pub mod rng;
pub mod svd;
pub mod synthetic;
pub mod viz;

pub use error::{Error, Result};
