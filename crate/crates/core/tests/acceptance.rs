//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p featvec --test acceptance`. Criteria listed in
//! `KNOWN_GAPS` are still evaluated and reported, but do not fail the run.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use featvec::baselines::{feature_vector_scores, gini_importance};
use featvec::dataset::{self, Dataset, LoadOptions, Task};
use featvec::embedding::{angular_distance, build_cooccurrence, CooccurrenceMatrix, FeatureEmbedding};
use featvec::evaluation::{constant_baseline, sds_curve, spearman, sss_curve, Retrainer};
use featvec::forest::{Sentence, TrainParams};
use featvec::knockoffs::{
    angle_permutation_test, augment_with_knockoffs, knockoff_pairing, sample_knockoffs, to_matrix, GaussianMixture, KnockoffConstruction,
};
use featvec::pipeline::{fit, FitConfig, FitOutput};
use featvec::rng::rng_for;
use featvec::svd::jacobi_svd;
use featvec::synthetic::{gen_exchangeable_pairs, gen_gmm_nonnull, PAIRS};
use featvec::viz::{render_feature_vectors, VectorPlotOptions};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;

/// Base seed; `FEATVEC_ACCEPTANCE_SEED` overrides it.
fn seed() -> u64 {
    std::env::var("FEATVEC_ACCEPTANCE_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(1)
}
const KNOWN_GAPS: &[&str] = &["3c"];

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: &'static str, title: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, title, pass, detail }
}

fn report(o: &Outcome, elapsed: Duration) {
    let status = match (o.pass, KNOWN_GAPS.contains(&o.id)) {
        (true, _) => "PASS",
        (false, true) => "FAIL (known gap)",
        (false, false) => "FAIL",
    };
    println!("{status} [{}] {}: {} ({:.1}s)", o.id, o.title, o.detail, elapsed.as_secs_f64());
}

fn wine() -> Dataset {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/winequality-red.csv");
    dataset::load_csv(path, None, &LoadOptions::default())
        .expect("bundled wine data")
        .dataset
}

fn config() -> FitConfig {
    FitConfig {
        seed: seed(),
        ..FitConfig::default()
    }
}

struct Fitted {
    ds: Dataset,
    out: FitOutput,
    elapsed: Duration,
}

fn fit_timed(ds: Dataset) -> Fitted {
    let start = Instant::now();
    let out = fit(&ds, &config()).expect("pipeline fit");
    Fitted {
        ds,
        out,
        elapsed: start.elapsed(),
    }
}

fn pairs_recovery(p: &Fitted) -> Outcome {
    let e = &p.out.embedding;
    let angles: Vec<f64> = PAIRS
        .iter()
        .map(|&(a, b)| angular_distance(e.vector(a), e.vector(b)).map_or(f64::INFINITY, f64::to_degrees))
        .collect();
    let imp = e.importance();
    let min_inf = imp[..6].iter().copied().fold(f64::INFINITY, f64::min);
    let max_null = imp[6..].iter().copied().fold(0.0, f64::max);
    let max_angle = angles.iter().copied().fold(0.0, f64::max);
    let runtime_ok = p.elapsed < Duration::from_secs(300);
    let pass = max_angle < 15.0 && min_inf > 2.0 * max_null && runtime_ok;
    outcome(
        "1",
        "exchangeable-pairs recovery",
        pass,
        format!(
            "pair angles {:.2}/{:.2}/{:.2} deg (< 15), min informative / max null importance = {:.2} (> 2), fit {:.1}s (< 300s)",
            angles[0],
            angles[1],
            angles[2],
            min_inf / max_null,
            p.elapsed.as_secs_f64()
        ),
    )
}

fn explained_variance(wine: &Fitted, pairs: &Fitted) -> Outcome {
    let w = wine.out.embedding.explained_variance();
    let s = pairs.out.embedding.explained_variance();
    outcome(
        "2",
        "explained variance",
        w >= 0.90 && s >= 0.80,
        format!("wine {w:.4} (>= 0.90), pairs {s:.4} (>= 0.80)"),
    )
}

fn imp_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / ((a + b) / 2.0)
}

fn knockoff_angle_test() -> Vec<Outcome> {
    let (ds, truth): (Dataset, GaussianMixture) = gen_gmm_nonnull(10_000, seed()).expect("gmm data");
    let d = ds.n_features();
    let ko = sample_knockoffs(&truth, &to_matrix(&ds), seed(), KnockoffConstruction::Equicorrelated).expect("knockoffs");
    let aug = augment_with_knockoffs(&ds, &ko).expect("augmented data");
    let out = fit(&aug, &config()).expect("pipeline fit");
    let e = &out.embedding;
    let test = angle_permutation_test(e.vectors(), &knockoff_pairing(d), 10_000, seed()).expect("permutation test");
    let imp = e.importance();
    let ratios: Vec<f64> = (0..3).map(|j| imp[j] / imp[j + d]).collect();
    let gaps: Vec<(usize, f64)> = (3..d).map(|j| (j, imp_gap(imp[j], imp[j + d]))).collect();
    let (worst_j, worst) = gaps.iter().copied().fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let within = gaps.iter().filter(|g| g.1 <= 0.25).count();
    let median = {
        let mut g: Vec<f64> = gaps.iter().map(|g| g.1).collect();
        g.sort_by(f64::total_cmp);
        g[g.len() / 2]
    };
    vec![
        outcome(
            "3a",
            "knockoff angle test p-value",
            test.p_value <= 0.05,
            format!("p = {:.4} (<= 0.05), observed mean gap {:.4} rad", test.p_value, test.observed),
        ),
        outcome(
            "3b",
            "non-null features beat their knockoffs",
            ratios.iter().all(|&r| r >= 1.25),
            format!(
                "importance / knockoff importance = {:.2}, {:.2}, {:.2} (>= 1.25)",
                ratios[0], ratios[1], ratios[2]
            ),
        ),
        outcome(
            "3c",
            "null features match their knockoffs",
            worst <= 0.25,
            format!(
                "{within}/{} nulls within 25% of the pair mean, median gap {:.3}, worst x{worst_j} {:.3} (<= 0.25)",
                gaps.len(),
                median,
                worst
            ),
        ),
    ]
}

fn rank_agreement(wine: &Fitted, pairs: &Fitted) -> Outcome {
    let rho = |f: &Fitted| {
        let fv = feature_vector_scores(&f.out.embedding);
        let gini = gini_importance(&f.out.forest).expect("gini importance");
        spearman(&fv, &gini).expect("spearman")
    };
    let (w, p) = (rho(wine), rho(pairs));
    outcome(
        "4",
        "rank agreement with Gini importance",
        w >= 0.7 && p >= 0.7,
        format!("Spearman wine {w:.3}, pairs {p:.3} (>= 0.7)"),
    )
}

fn retraining_curves(pairs: &Fitted) -> Outcome {
    let train = pairs.out.train(&pairs.ds);
    let test = pairs.out.test(&pairs.ds);
    let trainer = Retrainer {
        params: TrainParams::new(Task::Classification, pairs.out.depth),
        n_trees: 100,
        seed: seed(),
    };
    let ranking = feature_vector_scores(&pairs.out.embedding).ranking();
    let sds = sds_curve(&train, &test, &ranking, &trainer, "fv").expect("sds curve");
    let sss = sss_curve(&train, &test, &ranking, &trainer, "fv").expect("sss curve");
    let chance = constant_baseline(&train, &test);
    let d = pairs.ds.n_features();
    let full = sss.metric[d];
    let pass = sds.metric[6] <= chance + 0.05 && sss.metric[6] >= full - 0.03;
    outcome(
        "5",
        "SDS/SSS sanity",
        pass,
        format!(
            "SDS k=6 {:.4} vs chance {:.4} (<= +0.05); SSS k=6 {:.4} vs full {:.4} (>= -0.03)",
            sds.metric[6], chance, sss.metric[6], full
        ),
    )
}

fn brute_force(sentences: &[Sentence], d: usize, w: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for s in sentences {
        let f = s.features();
        for i in 0..f.len() {
            for j in 0..f.len() {
                if i != j && i.abs_diff(j) <= w {
                    m[f[i] * d + f[j]] += 1.0;
                }
            }
        }
    }
    m
}

fn rank2_error(m: &CooccurrenceMatrix) -> (f64, f64) {
    let d = m.d();
    let vals = m.values();
    let svd = jacobi_svd(vals, d, d);
    let mut sq = 0.0;
    for i in 0..d {
        for j in 0..d {
            let approx: f64 = (0..2).map(|k| svd.u[k][i] * svd.singular_values[k] * svd.v[k][j]).sum();
            sq += (vals[i * d + j] - approx).powi(2);
        }
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, vals));
    let mut mags: Vec<f64> = eig.eigenvalues.iter().map(|l| l.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let oracle = mags[2..].iter().map(|s| s * s).sum::<f64>().sqrt();
    (sq.sqrt(), oracle)
}

fn oracle_equivalence(wine: &Fitted, pairs: &Fitted) -> Outcome {
    let mut rng = rng_for(seed(), 6);
    let d = 20;
    let sentences: Vec<Sentence> = (0..1000)
        .map(|_| {
            let len = rng.gen_range(1..=12);
            Sentence::new((0..len).map(|_| rng.gen_range(0..d)).collect())
        })
        .collect();
    let mut counts_ok = true;
    for w in 1..=5 {
        let m = build_cooccurrence(&sentences, d, w).expect("co-occurrence");
        counts_ok &= m.values() == brute_force(&sentences, d, w).as_slice();
    }
    let random = build_cooccurrence(&sentences, d, 3).expect("co-occurrence");
    let mut worst: f64 = 0.0;
    for m in [&random, &wine.out.cooccurrence, &pairs.out.cooccurrence] {
        let (err, oracle) = rank2_error(m);
        let norm = m.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max((err - oracle).abs() / norm);
    }
    outcome(
        "6",
        "oracle equivalence",
        counts_ok && worst <= 1e-8,
        format!(
            "counts {} brute force on 1000 sentences (w = 1..5); worst rank-2 error gap {worst:.2e} of |M|_F (<= 1e-8)",
            if counts_ok { "equal" } else { "DIFFER from" }
        ),
    )
}

fn artifacts(ds: &Dataset, cfg: &FitConfig) -> (Vec<u8>, String) {
    let out = fit(ds, cfg).expect("pipeline fit");
    let e: &FeatureEmbedding = &out.embedding;
    let names = ds.feature_names();
    let mut tsv = Vec::new();
    e.write_tsv(&names, &mut tsv).expect("tsv");
    let svg = render_feature_vectors(e, &names, &VectorPlotOptions::default()).expect("svg");
    (tsv, svg)
}

fn determinism(pairs: &Fitted) -> Outcome {
    let runs: Vec<(Vec<u8>, String)> = [1, 4, 8]
        .iter()
        .map(|&t| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().expect("thread pool");
            pool.install(|| artifacts(&pairs.ds, &config()))
        })
        .collect();
    let same = runs.windows(2).all(|w| w[0] == w[1]);
    outcome(
        "7",
        "determinism across thread counts",
        same,
        format!(
            "embedding TSV ({} bytes) and SVG ({} bytes) {} across 1, 4, 8 threads",
            runs[0].0.len(),
            runs[0].1.len(),
            if same { "byte-identical" } else { "DIFFER" }
        ),
    )
}

fn knockoff_moments() -> Outcome {
    let d = 5;
    let cov = DMatrix::from_fn(d, d, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()) * (1.0 + 0.1 * (i + j) as f64));
    let g = GaussianMixture::new(vec![1.0], vec![DVector::from_fn(d, |i, _| i as f64)], vec![cov.clone()]).expect("mixture");
    let (x, _) = g.sample(20_000, &mut rng_for(seed(), 8)).expect("sample");
    let ko = sample_knockoffs(&g, &x, seed(), KnockoffConstruction::Equicorrelated).expect("knockoffs");
    let z = DMatrix::from_fn(x.nrows(), 2 * d, |i, j| if j < d { x[(i, j)] } else { ko.x_tilde[(i, j - d)] });
    let moments = |z: &DMatrix<f64>| {
        let n = z.nrows() as f64;
        let mean = DVector::from_fn(z.ncols(), |j, _| z.column(j).mean());
        let mut c = z.clone();
        for j in 0..z.ncols() {
            c.column_mut(j).add_scalar_mut(-mean[j]);
        }
        (mean, c.transpose() * &c / (n - 1.0))
    };
    let (m0, c0) = moments(&z);
    let theory = DMatrix::from_fn(2 * d, 2 * d, |i, j| {
        let s = cov[(i % d, j % d)];
        if (i < d) != (j < d) && i % d == j % d {
            s - ko.s_vectors[0][i % d]
        } else {
            s
        }
    });
    let cov_dev = (&c0 - &theory).amax();
    let mut rng = rng_for(seed(), 9);
    let mut swap_dev: f64 = 0.0;
    let mut features: Vec<usize> = (0..d).collect();
    for trial in 0..10 {
        features.shuffle(&mut rng);
        let mut zs = z.clone();
        for &j in &features[..1 + trial % d] {
            zs.swap_columns(j, j + d);
        }
        let (m1, c1) = moments(&zs);
        swap_dev = swap_dev.max((&m1 - &m0).amax()).max((&c1 - &c0).amax());
    }
    outcome(
        "8",
        "knockoff moment validity",
        cov_dev <= 0.05 && swap_dev <= 0.05,
        format!("max |cov - theory| {cov_dev:.4} (<= 0.05), max swap moment shift {swap_dev:.4} (<= 0.05)"),
    )
}

fn main() -> ExitCode {
    let mut outcomes = Vec::new();
    let mut run = |f: &mut dyn FnMut() -> Vec<Outcome>| {
        let start = Instant::now();
        let got = f();
        let elapsed = start.elapsed();
        for o in got {
            report(&o, elapsed);
            outcomes.push((o.id, o.pass));
        }
    };

    println!("seed {}", seed());
    let start = Instant::now();
    let pairs = fit_timed(gen_exchangeable_pairs(10_000, seed()).expect("pairs data"));
    let wine = fit_timed(wine());
    println!(
        "fitted pairs (depth {}, {} sentences) and wine (depth {}, {} sentences) in {:.1}s",
        pairs.out.depth,
        pairs.out.sentences.len(),
        wine.out.depth,
        wine.out.sentences.len(),
        start.elapsed().as_secs_f64()
    );

    run(&mut || vec![pairs_recovery(&pairs)]);
    run(&mut || vec![explained_variance(&wine, &pairs)]);
    run(&mut knockoff_angle_test);
    run(&mut || vec![rank_agreement(&wine, &pairs)]);
    run(&mut || vec![retraining_curves(&pairs)]);
    run(&mut || vec![oracle_equivalence(&wine, &pairs)]);
    run(&mut || vec![determinism(&pairs)]);
    run(&mut || vec![knockoff_moments()]);

    let passed = outcomes.iter().filter(|o| o.1).count();
    let unexpected: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.1 && !KNOWN_GAPS.contains(&o.0))
        .map(|o| o.0)
        .collect();
    println!("{passed}/{} criteria passed", outcomes.len());
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {}", unexpected.join(", "));
        ExitCode::FAILURE
    }
}
