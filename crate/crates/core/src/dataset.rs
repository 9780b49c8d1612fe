//! Tabular data: schema, typed feature matrix, CSV loading and splitting.
//!
//! Categorical columns are integer-coded by order of first appearance and
//! stored as `f64` codes alongside every numeric column, so the tree learner
//! treats them as ordered numerics.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{rng_for, streams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub name: String,
    pub task: Task,
}

/// Ordered feature list plus target description. Column order is fixed for
/// the lifetime of a run; every index in the crate refers to this order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    pub target: TargetSpec,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>, target: TargetSpec) -> Result<Self> {
        let schema = FeatureSchema { features, target };
        schema.validate()?;
        Ok(schema)
    }

    /// All-numeric schema with the given feature names.
    pub fn numeric<S: AsRef<str>>(names: &[S], target: &str, task: Task) -> Result<Self> {
        let features = names
            .iter()
            .map(|n| FeatureSpec {
                name: n.as_ref().to_string(),
                kind: FeatureKind::Numeric,
            })
            .collect();
        Self::new(
            features,
            TargetSpec {
                name: target.to_string(),
                task,
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("schema must list at least one feature".into()));
        }
        let mut seen = HashMap::new();
        for f in &self.features {
            if seen.insert(f.name.as_str(), ()).is_some() {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
        }
        if seen.contains_key(self.target.name.as_str()) {
            return Err(Error::Schema(format!("target `{}` is also listed as a feature", self.target.name)));
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let schema: FeatureSchema = serde_json::from_reader(std::io::BufReader::new(file))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }
}

/// n×d feature matrix (row-major) with its target vector and schema.
#[derive(Debug, Clone)]
pub struct Dataset {
    values: Vec<f64>,
    n_rows: usize,
    target: Vec<f64>,
    schema: FeatureSchema,
    n_classes: usize,
    categories: Vec<Option<Vec<String>>>,
    class_labels: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from a row-major value buffer.
    ///
    /// Classification targets must be non-negative integer class codes; the
    /// class count is `max code + 1`.
    pub fn new(values: Vec<f64>, target: Vec<f64>, schema: FeatureSchema) -> Result<Self> {
        schema.validate()?;
        let d = schema.n_features();
        if !values.len().is_multiple_of(d) || values.len() / d != target.len() {
            return Err(Error::arg(format!(
                "value buffer of length {} does not match {} rows x {} features",
                values.len(),
                target.len(),
                d
            )));
        }
        let n_rows = target.len();
        if n_rows < 2 {
            return Err(Error::Data(format!("need at least 2 rows, got {n_rows}")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, feature `{}`",
                pos / d,
                schema.features[pos % d].name
            )));
        }
        if let Some(pos) = target.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite target at row {pos}")));
        }
        let n_classes = match schema.target.task {
            Task::Classification => {
                let mut max = 0usize;
                for (i, &t) in target.iter().enumerate() {
                    if t < 0.0 || t.fract() != 0.0 {
                        return Err(Error::Data(format!("row {i}: class code {t} is not a non-negative integer")));
                    }
                    max = max.max(t as usize);
                }
                max + 1
            }
            Task::Regression => 0,
        };
        Ok(Dataset {
            values,
            n_rows,
            target,
            categories: vec![None; d],
            schema,
            n_classes,
            class_labels: None,
        })
    }

    /// Builds a dataset from a slice of equally wide rows.
    pub fn from_rows(rows: &[Vec<f64>], target: Vec<f64>, schema: FeatureSchema) -> Result<Self> {
        let d = schema.n_features();
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::arg(format!(
                "row {bad} has {} values, schema has {d} features",
                rows[bad].len()
            )));
        }
        Self::new(rows.concat(), target, schema)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.schema.n_features()
    }

    /// Number of classes for classification, 0 for regression.
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn task(&self) -> Task {
        self.schema.target.task
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.schema.names()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.n_features() + feature]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.value(i, feature)).collect()
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    /// Overwrites one column in place; used by permutation importance.
    pub fn set_column(&mut self, feature: usize, column: &[f64]) {
        assert_eq!(column.len(), self.n_rows);
        let d = self.n_features();
        for (i, &v) in column.iter().enumerate() {
            self.values[i * d + feature] = v;
        }
    }

    /// Code table of a categorical feature, `None` for numeric features.
    pub fn categories(&self, feature: usize) -> Option<&[String]> {
        self.categories[feature].as_deref()
    }

    pub fn decode_category(&self, feature: usize, code: f64) -> Option<&str> {
        let table = self.categories[feature].as_ref()?;
        if code < 0.0 || code.fract() != 0.0 {
            return None;
        }
        table.get(code as usize).map(String::as_str)
    }

    pub fn class_labels(&self) -> Option<&[String]> {
        self.class_labels.as_deref()
    }

    /// Class frequencies (classification only).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &t in &self.target {
            counts[t as usize] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order. Class count and code tables carry over.
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        let d = self.n_features();
        let mut values = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Dataset {
            values,
            n_rows: indices.len(),
            target: indices.iter().map(|&i| self.target[i]).collect(),
            schema: self.schema.clone(),
            n_classes: self.n_classes,
            categories: self.categories.clone(),
            class_labels: self.class_labels.clone(),
        }
    }

    /// Projection onto the given feature columns, in the given order.
    pub fn select_features(&self, features: &[usize]) -> Result<Dataset> {
        if features.is_empty() {
            return Err(Error::arg("feature selection must keep at least one feature"));
        }
        let d = self.n_features();
        if let Some(&bad) = features.iter().find(|&&f| f >= d) {
            return Err(Error::arg(format!("feature index {bad} out of range (d = {d})")));
        }
        let mut values = Vec::with_capacity(self.n_rows * features.len());
        for i in 0..self.n_rows {
            let row = self.row(i);
            values.extend(features.iter().map(|&f| row[f]));
        }
        let schema = FeatureSchema::new(
            features.iter().map(|&f| self.schema.features[f].clone()).collect(),
            self.schema.target.clone(),
        )?;
        Ok(Dataset {
            values,
            n_rows: self.n_rows,
            target: self.target.clone(),
            schema,
            n_classes: self.n_classes,
            categories: features.iter().map(|&f| self.categories[f].clone()).collect(),
            class_labels: self.class_labels.clone(),
        })
    }

    /// Appends extra numeric columns (e.g. knockoff copies) to every row.
    pub fn with_appended_columns(&self, extra: &[FeatureSpec], columns: &[Vec<f64>]) -> Result<Dataset> {
        if extra.len() != columns.len() || columns.iter().any(|c| c.len() != self.n_rows) {
            return Err(Error::arg("appended columns do not match the dataset shape"));
        }
        let d = self.n_features();
        let mut values = Vec::with_capacity(self.n_rows * (d + extra.len()));
        for i in 0..self.n_rows {
            values.extend_from_slice(self.row(i));
            values.extend(columns.iter().map(|c| c[i]));
        }
        let mut features = self.schema.features.clone();
        features.extend_from_slice(extra);
        let schema = FeatureSchema::new(features, self.schema.target.clone())?;
        let mut categories = self.categories.clone();
        categories.extend(std::iter::repeat_n(None, extra.len()));
        Ok(Dataset {
            values,
            n_rows: self.n_rows,
            target: self.target.clone(),
            schema,
            n_classes: self.n_classes,
            categories,
            class_labels: self.class_labels.clone(),
        })
    }

    /// Writes the dataset back out as a headered CSV, decoding categorical
    /// codes and class labels.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.feature_names();
        header.push(&self.schema.target.name);
        w.write_record(&header)?;
        let d = self.n_features();
        let mut record = Vec::with_capacity(d + 1);
        for i in 0..self.n_rows {
            record.clear();
            for f in 0..d {
                let v = self.value(i, f);
                record.push(match self.decode_category(f, v) {
                    Some(s) => s.to_string(),
                    None => v.to_string(),
                });
            }
            let t = self.target[i];
            record.push(
                self.class_labels
                    .as_ref()
                    .and_then(|l| l.get(t as usize).cloned())
                    .unwrap_or_else(|| t.to_string()),
            );
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Target column used when the schema is inferred; defaults to the last column.
    pub target: Option<String>,
    /// Replace missing cells by the column median (numeric) or mode (categorical).
    pub impute: bool,
}

#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub dataset: Dataset,
    /// Header columns that were not part of the schema.
    pub ignored_columns: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "?" | "NA" | "N/A" | "NaN" | "nan" | "null")
}

fn parse_num(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

const MAX_INFERRED_CLASSES: usize = 20;

fn infer_schema(header: &[String], rows: &[Vec<String>], opts: &LoadOptions) -> Result<FeatureSchema> {
    let target = match &opts.target {
        Some(t) => {
            if !header.contains(t) {
                return Err(Error::Schema(format!("target column `{t}` not found in header")));
            }
            t.clone()
        }
        None => header.last().cloned().ok_or_else(|| Error::Schema("empty header".into()))?,
    };
    let numeric = |col: usize| {
        rows.iter()
            .map(|r| r[col].trim())
            .filter(|c| !is_missing(c))
            .all(|c| parse_num(c).is_some())
    };
    let mut features = Vec::new();
    let mut task = Task::Regression;
    for (col, name) in header.iter().enumerate() {
        if *name == target {
            task = if !numeric(col) {
                Task::Classification
            } else {
                let mut distinct: Vec<f64> = rows.iter().filter_map(|r| parse_num(r[col].trim())).collect();
                distinct.sort_by(f64::total_cmp);
                distinct.dedup();
                if distinct.iter().all(|v| v.fract() == 0.0) && distinct.len() <= MAX_INFERRED_CLASSES {
                    Task::Classification
                } else {
                    Task::Regression
                }
            };
            continue;
        }
        features.push(FeatureSpec {
            name: name.clone(),
            kind: if numeric(col) {
                FeatureKind::Numeric
            } else {
                FeatureKind::Categorical
            },
        });
    }
    FeatureSchema::new(features, TargetSpec { name: target, task })
}

/// Loads a headered, comma-delimited CSV.
///
/// Columns are reordered to schema order; columns absent from the schema are
/// dropped with a warning. Without a schema one is inferred: a column is
/// categorical iff any non-missing cell fails to parse as a number.
pub fn load_csv(path: impl AsRef<Path>, schema: Option<&FeatureSchema>, opts: &LoadOptions) -> Result<CsvLoad> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }

    let schema = match schema {
        Some(s) => {
            s.validate()?;
            s.clone()
        }
        None => infer_schema(&header, &rows, opts)?,
    };
    let col_of = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` missing from {}", path.display())))
    };
    let feature_cols: Vec<usize> = schema.features.iter().map(|f| col_of(&f.name)).collect::<Result<_>>()?;
    let target_col = col_of(&schema.target.name)?;

    let ignored_columns: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != target_col && !feature_cols.contains(c))
        .map(|(_, h)| h.clone())
        .collect();
    for col in &ignored_columns {
        log::warn!("column `{col}` is not in the schema and will be ignored");
    }

    let n = rows.len();
    let d = schema.n_features();
    let mut values = vec![f64::NAN; n * d];
    let mut categories: Vec<Option<Vec<String>>> = vec![None; d];
    for (j, (spec, &col)) in schema.features.iter().zip(&feature_cols).enumerate() {
        let mut codes: HashMap<String, usize> = HashMap::new();
        let mut table = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            let cell = row[col].trim();
            if is_missing(cell) {
                if !opts.impute {
                    return Err(Error::Data(format!(
                        "missing value at row {}, column `{}` (use imputation to fill)",
                        i + 1,
                        spec.name
                    )));
                }
                continue;
            }
            values[i * d + j] = match spec.kind {
                FeatureKind::Numeric => parse_num(cell).ok_or_else(|| Error::Parse {
                    row: i + 1,
                    column: spec.name.clone(),
                    message: format!("`{cell}` is not a number"),
                })?,
                FeatureKind::Categorical => {
                    let next = table.len();
                    let code = *codes.entry(cell.to_string()).or_insert_with(|| {
                        table.push(cell.to_string());
                        next
                    });
                    code as f64
                }
            };
        }
        if spec.kind == FeatureKind::Categorical {
            categories[j] = Some(table);
        }
        if opts.impute {
            impute_column(&mut values, n, d, j, spec.kind)?;
        }
    }

    let mut target = Vec::with_capacity(n);
    let mut class_labels = None;
    let cells: Vec<&str> = rows.iter().map(|r| r[target_col].trim()).collect();
    if let Some(i) = cells.iter().position(|c| is_missing(c)) {
        return Err(Error::Data(format!("missing target value at row {}", i + 1)));
    }
    match schema.target.task {
        Task::Regression => {
            for (i, cell) in cells.iter().enumerate() {
                target.push(parse_num(cell).ok_or_else(|| Error::Parse {
                    row: i + 1,
                    column: schema.target.name.clone(),
                    message: format!("`{cell}` is not a number"),
                })?);
            }
        }
        Task::Classification => {
            let labels = class_table(&cells);
            let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(k, l)| (l.as_str(), k)).collect();
            target.extend(cells.iter().map(|c| index[c] as f64));
            class_labels = Some(labels);
        }
    }

    let mut dataset = Dataset::new(values, target, schema)?;
    dataset.categories = categories;
    if let Some(labels) = class_labels {
        dataset.n_classes = labels.len();
        dataset.class_labels = Some(labels);
    }
    Ok(CsvLoad { dataset, ignored_columns })
}

/// Class label table: numerically sorted when every label is a number,
/// otherwise in order of first appearance.
fn class_table(cells: &[&str]) -> Vec<String> {
    if cells.iter().all(|c| parse_num(c).is_some()) {
        let mut distinct: Vec<(f64, String)> = Vec::new();
        for c in cells {
            let v = parse_num(c).unwrap();
            if !distinct.iter().any(|(x, _)| *x == v) {
                distinct.push((v, c.to_string()));
            }
        }
        distinct.sort_by(|a, b| a.0.total_cmp(&b.0));
        distinct.into_iter().map(|(_, s)| s).collect()
    } else {
        let mut table: Vec<String> = Vec::new();
        for c in cells {
            if !table.iter().any(|t| t == c) {
                table.push(c.to_string());
            }
        }
        table
    }
}

fn impute_column(values: &mut [f64], n: usize, d: usize, j: usize, kind: FeatureKind) -> Result<()> {
    let mut present: Vec<f64> = (0..n).map(|i| values[i * d + j]).filter(|v| !v.is_nan()).collect();
    if present.len() == n {
        return Ok(());
    }
    if present.is_empty() {
        return Err(Error::Data(format!("feature column {j} has no observed values to impute from")));
    }
    let fill = match kind {
        FeatureKind::Numeric => {
            present.sort_by(f64::total_cmp);
            let m = present.len();
            if m % 2 == 1 {
                present[m / 2]
            } else {
                0.5 * (present[m / 2 - 1] + present[m / 2])
            }
        }
        FeatureKind::Categorical => {
            let mut counts: HashMap<u64, usize> = HashMap::new();
            for v in &present {
                *counts.entry(*v as u64).or_default() += 1;
            }
            let (code, _) = counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).unwrap();
            code as f64
        }
    };
    for i in 0..n {
        if values[i * d + j].is_nan() {
            values[i * d + j] = fill;
        }
    }
    Ok(())
}

/// Row indices of a seeded train/test partition, each side sorted ascending.
///
/// Classification data is stratified by class whenever every class has at
/// least two members; per-class test quotas use largest remainders so the
/// test side has exactly `floor(n * test_fraction)` rows.
pub fn split_indices(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::arg(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let n = ds.n_rows();
    let n_test = (n as f64 * test_fraction).floor() as usize;
    if n_test < 1 || n_test >= n {
        return Err(Error::arg(format!(
            "split of {n} rows at fraction {test_fraction} leaves an empty side"
        )));
    }
    let mut rng = rng_for(seed, streams::SPLIT);
    let counts = ds.class_counts();
    let stratify = ds.task() == Task::Classification && counts.iter().all(|&c| c == 0 || c >= 2);

    let mut test = Vec::with_capacity(n_test);
    if stratify {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
        for (i, &t) in ds.target().iter().enumerate() {
            members[t as usize].push(i);
        }
        let exact: Vec<f64> = counts.iter().map(|&c| c as f64 * n_test as f64 / n as f64).collect();
        let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
        let mut remaining = n_test - quota.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..quota.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &c in order.iter().cycle() {
            if remaining == 0 {
                break;
            }
            if quota[c] < counts[c] {
                quota[c] += 1;
                remaining -= 1;
            }
        }
        for (class, mut idx) in members.into_iter().enumerate() {
            idx.shuffle(&mut rng);
            test.extend_from_slice(&idx[..quota[class]]);
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        test.extend_from_slice(&idx[..n_test]);
    }
    test.sort_unstable();
    let mut is_test = vec![false; n];
    for &i in &test {
        is_test[i] = true;
    }
    let train = (0..n).filter(|&i| !is_test[i]).collect();
    Ok((train, test))
}

/// Seeded train/test split; see [`split_indices`].
pub fn train_test_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds, test_fraction, seed)?;
    Ok((ds.select_rows(&train), ds.select_rows(&test)))
}
