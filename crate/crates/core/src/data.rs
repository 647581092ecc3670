//! CSV ingestion, the benchmark registry and seeded stratified splitting.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Environment variable pointing at the fixture directory.
pub const DATA_DIR_ENV: &str = "NLST_DATA_DIR";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: cannot parse {value:?} at row {row}, column {column:?} as a finite number")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: label column {label:?} not found in header")]
    MissingLabel { path: PathBuf, label: String },
    #[error("{path}: empty label at row {row}")]
    EmptyLabel { path: PathBuf, row: usize },
    #[error("{path}: no data rows")]
    EmptyFile { path: PathBuf },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
    #[error("malformed {what}: {msg}")]
    Format { what: String, msg: String },
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("invalid split plan: {0}")]
    InvalidPlan(String),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
}

/// Column roles for one CSV fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub name: String,
    pub label: String,
    #[serde(default)]
    pub drop: Vec<String>,
}

impl DatasetSchema {
    pub fn from_file(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_owned(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| DataError::Format {
            what: path.display().to_string(),
            msg: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub feature_names: Vec<String>,
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.y, self.n_classes())
    }

    /// Copy of the dataset restricted to `rows` (in the given order).
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            feature_names: self.feature_names.clone(),
            x: self.x.select(Axis(0), rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

pub fn class_counts(y: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &c in y {
        counts[c] += 1;
    }
    counts
}

/// Read a headed CSV. Labels are encoded by order of first appearance.
pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<Dataset, DataError> {
    let csv_err = |source| DataError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_owned)
        .collect();
    let label_col = header
        .iter()
        .position(|h| *h == schema.label)
        .ok_or_else(|| DataError::MissingLabel {
            path: path.to_owned(),
            label: schema.label.clone(),
        })?;
    for d in &schema.drop {
        if !header.contains(d) {
            return Err(DataError::Invalid {
                path: path.to_owned(),
                msg: format!("drop column {d:?} not in header"),
            });
        }
    }
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&j| j != label_col && !schema.drop.contains(&header[j]))
        .collect();
    if feature_cols.is_empty() {
        return Err(DataError::Invalid {
            path: path.to_owned(),
            msg: "no feature columns".into(),
        });
    }

    let mut values = Vec::new();
    let mut y = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        // Row numbers in messages count the header as row 1.
        let row = i + 2;
        for &j in &feature_cols {
            let cell = record.get(j).unwrap_or("");
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| DataError::Parse {
                    path: path.to_owned(),
                    row,
                    column: header[j].clone(),
                    value: cell.to_owned(),
                })?;
            values.push(v);
        }
        let label = record.get(label_col).unwrap_or("");
        if label.is_empty() {
            return Err(DataError::EmptyLabel {
                path: path.to_owned(),
                row,
            });
        }
        let next = class_names.len();
        let code = *class_index.entry(label.to_owned()).or_insert_with(|| {
            class_names.push(label.to_owned());
            next
        });
        y.push(code);
    }
    if y.is_empty() {
        return Err(DataError::EmptyFile {
            path: path.to_owned(),
        });
    }
    if class_names.len() < 2 {
        return Err(DataError::Invalid {
            path: path.to_owned(),
            msg: "fewer than two classes".into(),
        });
    }
    let x = Array2::from_shape_vec((y.len(), feature_cols.len()), values)
        .expect("one value per feature cell");
    Ok(Dataset {
        name: schema.name.clone(),
        feature_names: feature_cols.iter().map(|&j| header[j].clone()).collect(),
        x,
        y,
        class_names,
    })
}

/// Fixture directory: `$NLST_DATA_DIR`, else the repository's `datasets/`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../datasets"))
}

/// Expected shape of one benchmark dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub name: String,
    pub slug: String,
    pub samples: usize,
    pub classes: usize,
    pub ratio: String,
}

impl RegistryEntry {
    pub fn ratio_values(&self) -> Result<Vec<f64>, DataError> {
        self.ratio
            .split(':')
            .map(|p| {
                p.trim().parse::<f64>().map_err(|e| DataError::Format {
                    what: format!("ratio of {}", self.name),
                    msg: e.to_string(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    #[serde(rename = "dataset")]
    pub datasets: Vec<RegistryEntry>,
}

impl Registry {
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        toml::from_str(text).map_err(|e| DataError::Format {
            what: "registry".into(),
            msg: e.to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Lookup by display name or slug, case-insensitively.
    pub fn get(&self, name: &str) -> Result<&RegistryEntry, DataError> {
        self.datasets
            .iter()
            .find(|e| e.name.eq_ignore_ascii_case(name) || e.slug.eq_ignore_ascii_case(name))
            .ok_or_else(|| DataError::UnknownDataset(name.to_owned()))
    }

    pub fn names(&self) -> Vec<String> {
        self.datasets.iter().map(|e| e.name.clone()).collect()
    }
}

/// The registry plus the fixtures it points at.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    pub dir: PathBuf,
    pub registry: Registry,
}

impl FixtureStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, DataError> {
        let dir = dir.into();
        let registry = Registry::from_file(&dir.join("registry.toml"))?;
        Ok(Self { dir, registry })
    }

    pub fn open_default() -> Result<Self, DataError> {
        Self::open(default_data_dir())
    }

    pub fn load(&self, name: &str) -> Result<Dataset, DataError> {
        let entry = self.registry.get(name)?;
        let schema =
            DatasetSchema::from_file(&self.dir.join(format!("{}.schema.toml", entry.slug)))?;
        let mut ds = load_csv(&self.dir.join(format!("{}.csv", entry.slug)), &schema)?;
        ds.name = entry.name.clone();
        Ok(ds)
    }
}

/// Comparison of a loaded dataset against its registry entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegistryReport {
    pub name: String,
    pub expected_samples: usize,
    pub actual_samples: usize,
    pub expected_classes: usize,
    pub actual_classes: usize,
    pub expected_ratio: String,
    /// In label-encoding order.
    pub actual_ratio: String,
    pub mismatches: Vec<String>,
}

impl RegistryReport {
    pub fn is_ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Each class count over the smallest class count.
pub fn class_ratios(counts: &[usize]) -> Vec<f64> {
    let min = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(1) as f64;
    counts.iter().map(|&c| c as f64 / min).collect()
}

pub fn registry_check(ds: &Dataset, registry: &Registry) -> Result<RegistryReport, DataError> {
    let entry = registry.get(&ds.name)?;
    let counts = ds.class_counts();
    let ratios = class_ratios(&counts);
    let mut mismatches = Vec::new();
    if ds.n_samples() != entry.samples {
        mismatches.push(format!(
            "samples: expected {}, found {}",
            entry.samples,
            ds.n_samples()
        ));
    }
    if ds.n_classes() != entry.classes {
        mismatches.push(format!(
            "classes: expected {}, found {}",
            entry.classes,
            ds.n_classes()
        ));
    }
    // The published ratio does not follow one fixed class order, so compare
    // the sorted values at one-decimal resolution.
    let mut expected = entry.ratio_values()?;
    let mut actual = ratios.clone();
    expected.sort_by(f64::total_cmp);
    actual.sort_by(f64::total_cmp);
    let ratio_ok = expected.len() == actual.len()
        && expected
            .iter()
            .zip(&actual)
            .all(|(e, a)| (e - a).abs() <= 0.05 + 1e-9);
    let actual_ratio = ratios
        .iter()
        .map(|r| format!("{r:.1}"))
        .collect::<Vec<_>>()
        .join(":");
    if !ratio_ok {
        mismatches.push(format!(
            "class ratio: expected {}, found {}",
            entry.ratio, actual_ratio
        ));
    }
    Ok(RegistryReport {
        name: entry.name.clone(),
        expected_samples: entry.samples,
        actual_samples: ds.n_samples(),
        expected_classes: entry.classes,
        actual_classes: ds.n_classes(),
        expected_ratio: entry.ratio.clone(),
        actual_ratio,
        mismatches,
    })
}

/// How a dataset is divided into test, labeled and unlabeled partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPlan {
    pub test_fraction: f64,
    pub labeled_fraction_of_train: f64,
    pub seed: u64,
    pub stratified: bool,
    /// Move one sample of a class from U to L when the quota leaves the class
    /// without any labeled sample.
    pub force_labeled_coverage: bool,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            test_fraction: 0.20,
            labeled_fraction_of_train: 0.15,
            seed: 0,
            stratified: true,
            force_labeled_coverage: true,
        }
    }
}

impl SplitPlan {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(DataError::InvalidPlan(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if !(self.labeled_fraction_of_train > 0.0 && self.labeled_fraction_of_train < 1.0) {
            return Err(DataError::InvalidPlan(format!(
                "labeled_fraction_of_train must lie in (0, 1), got {}",
                self.labeled_fraction_of_train
            )));
        }
        Ok(())
    }
}

/// Disjoint, sorted index sets into the source dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train_labeled: Vec<usize>,
    pub train_unlabeled: Vec<usize>,
    pub test: Vec<usize>,
    pub warnings: Vec<String>,
}

impl Split {
    /// L and U together.
    pub fn train(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self
            .train_labeled
            .iter()
            .chain(&self.train_unlabeled)
            .copied()
            .collect();
        t.sort_unstable();
        t
    }
}

/// Round fractional `quotas` to integers summing to `total` by
/// largest-remainder apportionment; ties go to the lower group index.
pub fn largest_remainder(quotas: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &g in order.iter().take(total.saturating_sub(assigned)) {
        counts[g] += 1;
    }
    counts
}

fn scaled(sizes: &[usize], fraction: f64) -> Vec<f64> {
    sizes.iter().map(|&s| s as f64 * fraction).collect()
}

fn round_count(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

pub fn split(y: &[usize], n_classes: usize, plan: &SplitPlan) -> Result<Split, DataError> {
    plan.validate()?;
    let n = y.len();
    if n < 2 {
        return Err(DataError::InfeasibleSplit(format!("only {n} samples")));
    }
    let mut rng = rng::stream(plan.seed, "split", 0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in y.iter().enumerate() {
        by_class[c].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }

    let n_test = round_count(n, plan.test_fraction).clamp(1, n - 1);
    let mut test = Vec::new();
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut warnings = Vec::new();

    if plan.stratified {
        let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
        let test_counts = largest_remainder(&scaled(&sizes, plan.test_fraction), n_test);
        let train_sizes: Vec<usize> = sizes.iter().zip(&test_counts).map(|(s, t)| s - t).collect();
        let n_train: usize = train_sizes.iter().sum();
        let n_labeled = round_count(n_train, plan.labeled_fraction_of_train).max(1);
        let labeled_counts = largest_remainder(
            &scaled(&train_sizes, plan.labeled_fraction_of_train),
            n_labeled,
        );
        for (c, members) in by_class.iter().enumerate() {
            let (t, l) = (test_counts[c], labeled_counts[c]);
            test.extend_from_slice(&members[..t]);
            labeled.extend_from_slice(&members[t..t + l]);
            unlabeled.extend_from_slice(&members[t + l..]);
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        let n_labeled = round_count(n - n_test, plan.labeled_fraction_of_train).max(1);
        test.extend_from_slice(&all[..n_test]);
        labeled.extend_from_slice(&all[n_test..n_test + n_labeled]);
        unlabeled.extend_from_slice(&all[n_test + n_labeled..]);
    }

    for c in 0..n_classes {
        if by_class[c].is_empty() || labeled.iter().any(|&i| y[i] == c) {
            continue;
        }
        // First U member of the class in shuffled order.
        let pos = unlabeled.iter().position(|&i| y[i] == c);
        match (pos, plan.force_labeled_coverage) {
            (Some(p), true) => {
                let moved = unlabeled.remove(p);
                labeled.push(moved);
                warnings.push(format!(
                    "class {c} had no labeled sample; moved index {moved} from U to L"
                ));
            }
            (Some(_), false) => {
                return Err(DataError::InfeasibleSplit(format!(
                    "class {c} receives no labeled training sample"
                )))
            }
            (None, _) => {
                return Err(DataError::InfeasibleSplit(format!(
                    "class {c} has no training sample to label"
                )))
            }
        }
    }

    test.sort_unstable();
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    Ok(Split {
        train_labeled: labeled,
        train_unlabeled: unlabeled,
        test,
        warnings,
    })
}

/// Rows of `x` selected by `rows`.
pub fn take_rows(x: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}
