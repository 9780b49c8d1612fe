use std::path::{Path, PathBuf};

use featvec::baselines::{self, ImportanceScores};
use featvec::dataset::{self, Dataset, FeatureKind, FeatureSchema, LoadOptions, Task};
use featvec::embedding::{build_cooccurrence, embed as embed_counts, FeatureEmbedding};
use featvec::evaluation::{self, PerformanceCurve, Retrainer};
use featvec::forest::{Forest, Sentence, TrainParams};
use featvec::knockoffs::{self, GaussianMixture, KnockoffConstruction, KnockoffReport};
use featvec::pipeline::{self, FitConfig, DEFAULT_CV_DEPTHS};
use featvec::rng::derive_seed;
use featvec::synthetic;
use featvec::viz::{self, VectorPlotOptions};
use featvec::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::run_dir::{self, Context, Metadata, METADATA_FILE};
use crate::{CurveKind, DataArgs, EmbedArgs, EvalArgs, FitArgs, ForestArgs, KnockoffArgs, Method, SynthArgs, SynthKind};

const GMM_STREAM: u64 = 1;
const KNOCKOFF_STREAM: u64 = 2;
const PERMUTATION_STREAM: u64 = 3;
const RETRAIN_STREAM: u64 = 4;

pub const FOREST_FILE: &str = "forest.json";
pub const SCHEMA_FILE: &str = "schema.json";
pub const SPLIT_FILE: &str = "split.json";
pub const SENTENCES_FILE: &str = "sentences.json";
pub const COOCCURRENCE_FILE: &str = "cooccurrence.tsv";
pub const EMBEDDING_FILE: &str = "embedding.tsv";
pub const VECTORS_SVG: &str = "feature_vectors.svg";

fn load(args: &DataArgs) -> Result<Dataset> {
    let schema = args.schema.as_ref().map(FeatureSchema::from_json_file).transpose()?;
    let opts = LoadOptions {
        target: args.target.clone(),
        impute: args.impute,
    };
    let loaded = dataset::load_csv(&args.data, schema.as_ref(), &opts)?;
    Ok(loaded.dataset)
}

fn fit_config(a: &ForestArgs) -> Result<FitConfig> {
    if !(0.0..1.0).contains(&a.test_fraction) {
        return Err(Error::Argument(format!(
            "--test-fraction must be in [0, 1), got {}",
            a.test_fraction
        )));
    }
    Ok(FitConfig {
        rules: a.rules,
        window: a.window,
        depth: a.depth,
        seed: a.seed,
        test_fraction: a.test_fraction,
        cv_folds: a.cv_folds,
        cv_trees: a.cv_trees,
        cv_depths: DEFAULT_CV_DEPTHS.to_vec(),
        bootstrap: a.bootstrap,
        min_samples_leaf: a.min_samples_leaf,
    })
}

fn absolute(path: &Path) -> PathBuf {
    std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Split {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SentenceSummary {
    pub count: usize,
    pub trees: usize,
    pub mean_length: f64,
    /// `length_counts[l]` sentences have length `l`.
    pub length_counts: Vec<usize>,
}

impl SentenceSummary {
    fn new(sentences: &[Sentence], trees: usize) -> Self {
        let max = sentences.iter().map(Sentence::len).max().unwrap_or(0);
        let mut length_counts = vec![0; max + 1];
        let mut total = 0;
        for s in sentences {
            length_counts[s.len()] += 1;
            total += s.len();
        }
        SentenceSummary {
            count: sentences.len(),
            trees,
            mean_length: total as f64 / sentences.len().max(1) as f64,
            length_counts,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitResults {
    pub data_path: PathBuf,
    pub n_rows: usize,
    pub n_features: usize,
    pub depth: usize,
    pub cv_selected: bool,
    pub n_trees: usize,
    pub n_sentences: usize,
    pub explained_variance: f64,
}

pub fn fit(a: &FitArgs, ctx: &Context) -> Result<()> {
    let ds = load(&a.data)?;
    let config = fit_config(&a.forest)?;
    let fitted = pipeline::fit(&ds, &config)?;
    let out = run_dir::create(&a.out)?;
    fitted.forest.write_json(out.join(FOREST_FILE))?;
    ds.schema().write_json(out.join(SCHEMA_FILE))?;
    run_dir::write_json(
        &out.join(SPLIT_FILE),
        &Split {
            train_rows: fitted.train_rows.clone(),
            test_rows: fitted.test_rows.clone(),
        },
    )?;
    run_dir::write_json(
        &out.join(SENTENCES_FILE),
        &SentenceSummary::new(&fitted.sentences, fitted.forest.trees().len()),
    )?;
    let path = out.join(COOCCURRENCE_FILE);
    run_dir::write_with(&path, |w| {
        fitted
            .cooccurrence
            .write_tsv(&ds.feature_names(), w)
            .map_err(|e| run_dir::io_error(&path, e))
    })?;
    let results = FitResults {
        data_path: absolute(&a.data.data),
        n_rows: ds.n_rows(),
        n_features: ds.n_features(),
        depth: fitted.depth,
        cv_selected: fitted.cv_selected,
        n_trees: fitted.forest.trees().len(),
        n_sentences: fitted.sentences.len(),
        explained_variance: fitted.embedding.explained_variance(),
    };
    run_dir::write_json(&out.join(METADATA_FILE), &Metadata::new(ctx, "fit", a, results))
}

/// A directory written by `fit`.
struct Model {
    forest: Forest,
    schema: FeatureSchema,
    split: Split,
    meta: Metadata<FitArgs, FitResults>,
}

impl Model {
    fn load(dir: &Path) -> Result<Self> {
        let meta: Metadata<FitArgs, FitResults> = run_dir::read_json(&dir.join(METADATA_FILE))?;
        if meta.command != "fit" {
            return Err(Error::Data(format!("{} is not a fitted model directory", dir.display())));
        }
        Ok(Model {
            forest: Forest::read_json(dir.join(FOREST_FILE))?,
            schema: FeatureSchema::from_json_file(dir.join(SCHEMA_FILE))?,
            split: run_dir::read_json(&dir.join(SPLIT_FILE))?,
            meta,
        })
    }

    fn embedding(&self) -> Result<FeatureEmbedding> {
        let m = build_cooccurrence(&self.forest.sentences(), self.schema.n_features(), self.meta.args.forest.window)?;
        embed_counts(&m)
    }
}

fn write_embedding(dir: &Path, e: &FeatureEmbedding, names: &[&str], opts: &VectorPlotOptions) -> Result<()> {
    run_dir::write_with(&dir.join(EMBEDDING_FILE), |w| e.write_tsv(names, w))?;
    viz::write_svg(dir.join(VECTORS_SVG), &viz::render_feature_vectors(e, names, opts)?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResults {
    pub n_sentences: usize,
    pub singular_values: [f64; 2],
    pub explained_variance: f64,
}

pub fn embed(a: &EmbedArgs, ctx: &Context) -> Result<()> {
    let model = Model::load(&a.model)?;
    let e = model.embedding()?;
    let out = run_dir::create(&a.out.clone().unwrap_or_else(|| a.model.join("embedding")))?;
    let opts = VectorPlotOptions {
        title: a.title.clone(),
        knockoff_pairs: None,
    };
    write_embedding(&out, &e, &model.schema.names(), &opts)?;
    let results = EmbedResults {
        n_sentences: model.meta.results.n_sentences,
        singular_values: e.singular_values(),
        explained_variance: e.explained_variance(),
    };
    run_dir::write_json(&out.join(METADATA_FILE), &Metadata::new(ctx, "embed", a, results))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RankAgreement {
    pub a: String,
    pub b: String,
    pub spearman: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalResults {
    pub data_path: PathBuf,
    pub seed: u64,
    pub rank_agreement: Vec<RankAgreement>,
    pub curves: Vec<PerformanceCurve>,
}

fn method_scores(method: Method, a: &EvalArgs, model: &Model, test: &Dataset, seed: u64) -> Result<ImportanceScores> {
    match method {
        Method::Fv => Ok(baselines::feature_vector_scores(&model.embedding()?)),
        Method::Gini => baselines::gini_importance(&model.forest),
        Method::Perm => {
            if test.n_rows() == 0 {
                return Err(Error::Argument(
                    "permutation importance needs a test split; refit with --test-fraction > 0".into(),
                ));
            }
            baselines::permutation_importance(&model.forest, test, a.perm_repeats, derive_seed(seed, PERMUTATION_STREAM))
        }
        Method::External => {
            let path = a
                .external
                .as_ref()
                .ok_or_else(|| Error::Argument("method `external` needs --external <scores file>".into()))?;
            baselines::load_external_scores(path, &model.schema, "external")
        }
    }
}

pub fn eval(a: &EvalArgs, ctx: &Context) -> Result<()> {
    let model = Model::load(&a.model)?;
    let data_path = a.data.clone().unwrap_or_else(|| model.meta.results.data_path.clone());
    let opts = LoadOptions {
        target: None,
        impute: model.meta.args.data.impute,
    };
    let ds = dataset::load_csv(&data_path, Some(&model.schema), &opts)?.dataset;
    if ds.n_rows() != model.meta.results.n_rows {
        return Err(Error::Data(format!(
            "{} has {} rows but the model was fitted on {}",
            data_path.display(),
            ds.n_rows(),
            model.meta.results.n_rows
        )));
    }
    let train = ds.select_rows(&model.split.train_rows);
    let test = ds.select_rows(&model.split.test_rows);
    if !a.curves.is_empty() && test.n_rows() == 0 {
        return Err(Error::Argument(
            "retraining curves need a test split; refit with --test-fraction > 0".into(),
        ));
    }
    let seed = a.seed.unwrap_or(model.forest.seed());
    let out = run_dir::create(&a.out.clone().unwrap_or_else(|| a.model.join("eval")))?;
    let names = ds.feature_names();

    let mut methods = a.methods.clone();
    methods.dedup();
    let mut scores = Vec::with_capacity(methods.len());
    for &m in &methods {
        let s = method_scores(m, a, &model, &test, seed)?;
        run_dir::write_with(&out.join(format!("importance_{}.tsv", m.name())), |w| s.write_tsv(&names, w))?;
        scores.push(s);
    }

    let mut rank_agreement = Vec::new();
    for i in 0..scores.len() {
        for j in i + 1..scores.len() {
            let rho = match evaluation::spearman(&scores[i], &scores[j]) {
                Ok(r) => Some(r),
                Err(e) => {
                    log::warn!("no rank agreement for {} vs {}: {e}", scores[i].method, scores[j].method);
                    None
                }
            };
            rank_agreement.push(RankAgreement {
                a: scores[i].method.clone(),
                b: scores[j].method.clone(),
                spearman: rho,
            });
        }
    }
    run_dir::write_with(&out.join("rank_agreement.tsv"), |w| {
        use std::io::Write;
        let io = |e| run_dir::io_error(Path::new("rank_agreement.tsv"), e);
        writeln!(w, "method_a\tmethod_b\tspearman").map_err(io)?;
        for r in &rank_agreement {
            let rho = r.spearman.map_or_else(|| "NaN".to_string(), |v| v.to_string());
            writeln!(w, "{}\t{}\t{rho}", r.a, r.b).map_err(io)?;
        }
        Ok(())
    })?;

    let trainer = Retrainer {
        params: TrainParams {
            max_depth: a.retrain_depth.unwrap_or(model.meta.results.depth),
            ..*model.forest.params()
        },
        n_trees: a.retrain_trees,
        seed: derive_seed(seed, RETRAIN_STREAM),
    };
    let y_label = match ds.task() {
        Task::Classification => "test accuracy",
        Task::Regression => "test MSE",
    };
    let mut curves = Vec::new();
    let mut kinds = a.curves.clone();
    kinds.dedup();
    for kind in kinds {
        let mut group = Vec::with_capacity(scores.len());
        for s in &scores {
            let ranking = s.ranking();
            let curve = match kind {
                CurveKind::Sds => evaluation::sds_curve(&train, &test, &ranking, &trainer, &s.method)?,
                CurveKind::Sss => evaluation::sss_curve(&train, &test, &ranking, &trainer, &s.method)?,
            };
            let path = out.join(format!("curve_{}_{}.csv", curve.direction.name(), s.method));
            run_dir::write_with(&path, |w| curve.write_csv(w).map_err(|e| run_dir::io_error(&path, e)))?;
            group.push(curve);
        }
        if !group.is_empty() {
            let name = group[0].direction.name();
            let svg = viz::render_curves(&group, &name.to_uppercase(), y_label)?;
            viz::write_svg(out.join(format!("curves_{name}.svg")), &svg)?;
        }
        curves.extend(group);
    }

    let results = EvalResults {
        data_path: absolute(&data_path),
        seed,
        rank_agreement,
        curves,
    };
    run_dir::write_json(&out.join(METADATA_FILE), &Metadata::new(ctx, "eval", a, results))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct KnockoffResults {
    pub data_path: PathBuf,
    pub p_value: f64,
    pub observed_stat: f64,
    pub depth: usize,
    pub n_sentences: usize,
    pub explained_variance: f64,
    pub gmm_converged: Option<bool>,
}

fn read_mixture(path: &Path, d: usize) -> Result<GaussianMixture> {
    let m: GaussianMixture = run_dir::read_json(path)?;
    let m = GaussianMixture::new(m.weights, m.means, m.covariances)?;
    if m.dim() != d {
        return Err(Error::Argument(format!(
            "mixture in {} has dimension {}, data has {d} features",
            path.display(),
            m.dim()
        )));
    }
    Ok(m)
}

pub fn knockoff_test(a: &KnockoffArgs, ctx: &Context) -> Result<()> {
    let ds = load(&a.data)?;
    let config = fit_config(&a.forest)?;
    if ds.schema().features.iter().any(|f| f.kind == FeatureKind::Categorical) {
        log::warn!("categorical codes are treated as continuous when sampling knockoffs");
    }
    let d = ds.n_features();
    let x = knockoffs::to_matrix(&ds);
    let (gmm, converged) = match &a.oracle_gmm {
        Some(path) => (read_mixture(path, d)?, None),
        None => {
            let fit = knockoffs::fit_gmm(
                &x,
                a.gmm_components,
                a.gmm_max_iter,
                a.gmm_tol,
                derive_seed(a.forest.seed, GMM_STREAM),
            )?;
            if !fit.converged {
                log::warn!("mixture fit stopped after {} iterations without converging", a.gmm_max_iter);
            }
            (fit.mixture, Some(fit.converged))
        }
    };
    let ko = knockoffs::sample_knockoffs(
        &gmm,
        &x,
        derive_seed(a.forest.seed, KNOCKOFF_STREAM),
        KnockoffConstruction::Equicorrelated,
    )?;
    let augmented = knockoffs::augment_with_knockoffs(&ds, &ko)?;
    let fitted = pipeline::fit(&augmented, &config)?;
    let vectors = fitted.embedding.vectors();
    let test = knockoffs::angle_permutation_test(vectors, &knockoffs::knockoff_pairing(d), a.n_perm, a.forest.seed)?;
    let report = KnockoffReport::new(&ds.feature_names(), vectors, &test)?;

    let out = run_dir::create(&a.out)?;
    run_dir::write_json(&out.join("gmm.json"), &gmm)?;
    run_dir::write_json(&out.join("knockoff_report.json"), &report)?;
    let opts = VectorPlotOptions {
        title: Some(format!("features and knockoffs (p = {:.4})", test.p_value)),
        knockoff_pairs: Some(d),
    };
    write_embedding(&out, &fitted.embedding, &augmented.feature_names(), &opts)?;
    let results = KnockoffResults {
        data_path: absolute(&a.data.data),
        p_value: test.p_value,
        observed_stat: test.observed,
        depth: fitted.depth,
        n_sentences: fitted.sentences.len(),
        explained_variance: fitted.embedding.explained_variance(),
        gmm_converged: converged,
    };
    run_dir::write_json(&out.join(METADATA_FILE), &Metadata::new(ctx, "knockoff-test", a, results))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SynthResults {
    pub n_rows: usize,
    pub n_features: usize,
    pub positive_rate: f64,
}

pub fn synth(a: &SynthArgs, ctx: &Context) -> Result<()> {
    let out = run_dir::create(&a.out)?;
    let ds = match a.kind {
        SynthKind::Pairs => synthetic::gen_exchangeable_pairs(a.n, a.seed)?,
        SynthKind::Gmm => {
            let (ds, truth) = synthetic::gen_gmm_nonnull(a.n, a.seed)?;
            run_dir::write_json(&out.join("gmm_truth.json"), &truth)?;
            ds
        }
    };
    ds.write_csv(out.join("data.csv"))?;
    ds.schema().write_json(out.join(SCHEMA_FILE))?;
    let results = SynthResults {
        n_rows: ds.n_rows(),
        n_features: ds.n_features(),
        positive_rate: ds.target().iter().sum::<f64>() / ds.n_rows() as f64,
    };
    run_dir::write_json(&out.join(METADATA_FILE), &Metadata::new(ctx, "synth", a, results))
}
