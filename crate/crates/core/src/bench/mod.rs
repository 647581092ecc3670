//! The {ST, NL, NL+ST} x classifier x dataset x seed experiment matrix.

mod config;
mod report;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{Architecture, ExperimentConfig, LeakageMode, NeuronDefaults, QMap, QMode};
pub use report::{
    emit_report, fmt4, read_results, write_derived, GainRow, SummaryRow, RESULTS_HEADER,
};

use crate::classifiers::{ClassifierKind, ClassifierSpec, ProbClassifier};
use crate::data::{self, take_rows, DataError, Dataset, FixtureStore, Split, SplitPlan};
use crate::eval::{self, EvalError, QTuneResult};
use crate::features;
use crate::rng;
use crate::selftrain::{self_train, RoundRecord};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {msg}")]
    Csv { path: PathBuf, msg: String },
    #[error("{0}")]
    Cell(String),
}

/// True labels of the unlabeled partition. Every read is counted so a run
/// can prove that training never looked at them.
#[derive(Debug)]
pub struct HiddenLabels {
    labels: Vec<usize>,
    reads: AtomicUsize,
}

impl HiddenLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        Self {
            labels,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn read(&self, i: usize) -> usize {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.labels[i]
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// One (dataset, classifier, architecture, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub classifier: ClassifierKind,
    pub architecture: Architecture,
    pub seed: u64,
    pub status: CellStatus,
    pub q: Option<f64>,
    pub macro_f1: Option<f64>,
    /// Self-training rounds that accepted at least one sample.
    pub st_rounds: Option<usize>,
    pub fits: Option<usize>,
    pub labeled_initial: Option<usize>,
    pub labeled_final: Option<usize>,
    pub pseudo_label_accuracy: Option<f64>,
    pub termination: Option<String>,
    pub converged: Option<bool>,
    /// Reads of the hidden unlabeled labels before evaluation began.
    pub train_label_reads: Option<usize>,
    pub error: Option<String>,
}

impl ResultRow {
    fn failed(job: &Job, dataset: &str, q: Option<f64>, error: String) -> Self {
        Self {
            dataset: dataset.to_owned(),
            classifier: job.kind,
            architecture: job.arch,
            seed: job.seed,
            status: CellStatus::Failed,
            q,
            macro_f1: None,
            st_rounds: None,
            fits: None,
            labeled_initial: None,
            labeled_final: None,
            pseudo_label_accuracy: None,
            termination: None,
            converged: None,
            train_label_reads: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditLine {
    pub dataset: String,
    pub classifier: ClassifierKind,
    pub architecture: Architecture,
    pub seed: u64,
    #[serde(flatten)]
    pub record: RoundRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub dataset: String,
    pub classifier: ClassifierKind,
    pub architecture: Architecture,
    pub seed: u64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub dataset: String,
    pub classifier: ClassifierKind,
    pub best_q: Option<f64>,
    pub best_score: Option<f64>,
    pub failed_q: usize,
    pub error: Option<String>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: Option<ExperimentConfig>,
    pub rows: Vec<ResultRow>,
    pub audit: Vec<AuditLine>,
    pub timings: Vec<Timing>,
    pub tuning: Vec<TuneRow>,
}

/// A loaded dataset and, in paper mode, its full-data normalization.
#[derive(Debug)]
struct Prepared {
    ds: Dataset,
    x_norm: Option<Arc<Array2<f64>>>,
}

#[derive(Debug, Clone, Copy)]
struct Job {
    dataset: usize,
    kind: ClassifierKind,
    arch: Architecture,
    seed: u64,
}

type Features = Result<Arc<Array2<f64>>, String>;
/// Keyed by dataset index, q bits and, in strict mode, the split seed.
type FeatureCache = HashMap<(usize, u64, Option<u64>), Arc<OnceLock<Features>>>;

struct Shared {
    cfg: ExperimentConfig,
    names: Vec<String>,
    prepared: Vec<Result<Prepared, String>>,
    q_map: QMap,
    cache: Mutex<FeatureCache>,
}

struct CellOutput {
    row: ResultRow,
    audit: Vec<AuditLine>,
}

/// Seed of the split shared by every classifier and architecture.
pub fn split_seed(seed: u64, dataset: &str) -> u64 {
    rng::derive_seed(seed, &format!("split/{dataset}"), 0)
}

pub fn model_seed(seed: u64) -> u64 {
    rng::derive_seed(seed, "model", 0)
}

pub fn tune_seed(seed: u64, dataset: &str, kind: ClassifierKind) -> u64 {
    rng::derive_seed(seed, &format!("tune/{dataset}/{kind}"), 0)
}

fn prepare(store: &FixtureStore, name: &str, mode: LeakageMode) -> Result<Prepared, String> {
    let ds = store.load(name).map_err(|e| e.to_string())?;
    let x_norm = match mode {
        LeakageMode::Paper => {
            let stats = features::fit_minmax(ds.x.view()).map_err(|e| e.to_string())?;
            let x = features::apply_minmax(ds.x.view(), &stats).map_err(|e| e.to_string())?;
            Some(Arc::new(x))
        }
        LeakageMode::Strict => None,
    };
    Ok(Prepared { ds, x_norm })
}

/// Normalized features for one split.
fn normalized(prep: &Prepared, split: &Split) -> Result<Arc<Array2<f64>>, String> {
    if let Some(x) = &prep.x_norm {
        return Ok(Arc::clone(x));
    }
    let train = take_rows(prep.ds.x.view(), &split.train());
    let stats = features::fit_minmax(train.view()).map_err(|e| e.to_string())?;
    features::apply_minmax(prep.ds.x.view(), &stats)
        .map(Arc::new)
        .map_err(|e| e.to_string())
}

fn make_split(prep: &Prepared, plan: &SplitPlan, seed: u64) -> Result<Split, DataError> {
    let plan = SplitPlan {
        seed: split_seed(seed, &prep.ds.name),
        ..plan.clone()
    };
    data::split(&prep.ds.y, prep.ds.n_classes(), &plan)
}

/// Tune q for one dataset and classifier on the split of `seed`.
fn tune_prepared(
    prep: &Prepared,
    kind: ClassifierKind,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<QTuneResult, BenchError> {
    let split = make_split(prep, &cfg.split, seed)?;
    let x = normalized(prep, &split).map_err(BenchError::Cell)?;
    let rows = match cfg.leakage_mode {
        LeakageMode::Paper => split.train(),
        LeakageMode::Strict => split.train_labeled.clone(),
    };
    let xt = take_rows(x.view(), &rows);
    let yt: Vec<usize> = rows.iter().map(|&i| prep.ds.y[i]).collect();
    let template = cfg.neuron.neuron(0.5)?;
    let spec = ClassifierSpec::default_for(kind, model_seed(seed));
    Ok(eval::tune_q(
        xt.view(),
        &yt,
        prep.ds.n_classes(),
        &cfg.grid(),
        &template,
        &spec,
        tune_seed(seed, &prep.ds.name, kind),
    )?)
}

/// Tune q for one (dataset, classifier) pair on the first seed's split.
pub fn tune_pair(
    cfg: &ExperimentConfig,
    dataset: &str,
    kind: ClassifierKind,
) -> Result<QTuneResult, BenchError> {
    cfg.validate()?;
    let store = FixtureStore::open(cfg.data_dir())?;
    let prep = prepare(&store, dataset, cfg.leakage_mode).map_err(BenchError::Cell)?;
    tune_prepared(&prep, kind, cfg, cfg.seeds[0])
}

fn resolve_datasets(
    cfg: &ExperimentConfig,
    store: &FixtureStore,
) -> Result<Vec<String>, BenchError> {
    if cfg.datasets.is_empty() {
        return Ok(store.registry.names());
    }
    cfg.datasets
        .iter()
        .map(|d| Ok(store.registry.get(d)?.name.clone()))
        .collect()
}

impl Shared {
    fn q_for(&self, kind: ClassifierKind, dataset: &str) -> Result<f64, String> {
        self.q_map
            .get(kind, dataset)
            .ok_or_else(|| format!("no q for ({kind}, {dataset})"))
    }

    fn firing(&self, d: usize, prep: &Prepared, split: &Split, q: f64, seed: u64) -> Features {
        // Paper-mode features do not depend on the split.
        let split_key = prep.x_norm.is_none().then_some(seed);
        let cell = {
            let mut cache = self.cache.lock().expect("feature cache poisoned");
            Arc::clone(cache.entry((d, q.to_bits(), split_key)).or_default())
        };
        cell.get_or_init(|| {
            let x = normalized(prep, split)?;
            let neuron = self.cfg.neuron.neuron(q).map_err(|e| e.to_string())?;
            features::transform_dataset(x.view(), &neuron)
                .map(|m| Arc::new(m.into_inner()))
                .map_err(|e| format!("q = {q}: {e}"))
        })
        .clone()
    }

    fn run_cell(&self, job: &Job) -> CellOutput {
        let name = &self.names[job.dataset];
        let q = if job.arch.uses_firing() {
            match self.q_for(job.kind, name) {
                Ok(q) => Some(q),
                Err(e) => {
                    return CellOutput {
                        row: ResultRow::failed(job, name, None, e),
                        audit: Vec::new(),
                    }
                }
            }
        } else {
            None
        };
        match self.try_cell(job, q) {
            Ok(out) => out,
            Err(e) => CellOutput {
                row: ResultRow::failed(job, name, q, e),
                audit: Vec::new(),
            },
        }
    }

    fn try_cell(&self, job: &Job, q: Option<f64>) -> Result<CellOutput, String> {
        let prep = self.prepared[job.dataset].as_ref().map_err(Clone::clone)?;
        let ds = &prep.ds;
        let n_classes = ds.n_classes();
        let split = make_split(prep, &self.cfg.split, job.seed).map_err(|e| e.to_string())?;
        let x = match q {
            Some(q) => self.firing(job.dataset, prep, &split, q, job.seed)?,
            None => normalized(prep, &split)?,
        };
        let lx = take_rows(x.view(), &split.train_labeled);
        let ly: Vec<usize> = split.train_labeled.iter().map(|&i| ds.y[i]).collect();
        let ux = take_rows(x.view(), &split.train_unlabeled);
        let hidden = HiddenLabels::new(split.train_unlabeled.iter().map(|&i| ds.y[i]).collect());
        let spec = ClassifierSpec::default_for(job.kind, model_seed(job.seed));

        let (model, audit): (Box<dyn ProbClassifier>, _) = if job.arch.self_trains() {
            let out = self_train(
                || spec.build(),
                lx.view(),
                &ly,
                ux.view(),
                n_classes,
                &self.cfg.self_training,
            )
            .map_err(|e| e.to_string())?;
            (out.model, Some((out.audit, out.labeled_y.len())))
        } else {
            let mut model = spec.build().map_err(|e| e.to_string())?;
            model
                .fit(lx.view(), &ly, n_classes)
                .map_err(|e| e.to_string())?;
            (model, None)
        };
        let train_label_reads = hidden.reads();

        let test_x = take_rows(x.view(), &split.test);
        let truth: Vec<usize> = split.test.iter().map(|&i| ds.y[i]).collect();
        let pred = model.predict(test_x.view()).map_err(|e| e.to_string())?;
        let f1 = eval::macro_f1(&truth, &pred, n_classes)
            .map_err(|e| e.to_string())?
            .macro_f1;

        let mut row = ResultRow {
            dataset: ds.name.clone(),
            classifier: job.kind,
            architecture: job.arch,
            seed: job.seed,
            status: CellStatus::Ok,
            q,
            macro_f1: Some(f1),
            st_rounds: None,
            fits: Some(1),
            labeled_initial: Some(ly.len()),
            labeled_final: Some(ly.len()),
            pseudo_label_accuracy: None,
            termination: None,
            converged: Some(model.converged()),
            train_label_reads: Some(train_label_reads),
            error: None,
        };
        let mut lines = Vec::new();
        if let Some((audit, labeled_final)) = audit {
            let (mut total, mut correct) = (0usize, 0usize);
            for (i, label) in audit.pseudo_labels() {
                total += 1;
                correct += usize::from(hidden.read(i) == label);
            }
            row.st_rounds = Some(audit.accepting_rounds());
            row.fits = Some(audit.fits);
            row.labeled_final = Some(labeled_final);
            row.pseudo_label_accuracy = (total > 0).then(|| correct as f64 / total as f64);
            row.termination = Some(audit.termination.to_string());
            lines = audit
                .rounds
                .into_iter()
                .map(|record| AuditLine {
                    dataset: ds.name.clone(),
                    classifier: job.kind,
                    architecture: job.arch,
                    seed: job.seed,
                    record,
                })
                .collect();
        }
        Ok(CellOutput { row, audit: lines })
    }
}

/// Run every cell on `workers` threads; a cell exceeding `timeout` is
/// reported failed and left to finish in the background.
fn execute(
    shared: Arc<Shared>,
    jobs: Arc<Vec<Job>>,
    workers: usize,
    timeout: Duration,
) -> Vec<(CellOutput, f64)> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(CellOutput, f64)>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let (tx, rx) = mpsc::channel();
                let (sh, jb) = (Arc::clone(&shared), Arc::clone(&jobs));
                let start = Instant::now();
                std::thread::spawn(move || {
                    let job = &jb[i];
                    let out = catch_unwind(AssertUnwindSafe(|| sh.run_cell(job))).unwrap_or_else(
                        |panic| {
                            let msg = panic
                                .downcast_ref::<String>()
                                .cloned()
                                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                                .unwrap_or_else(|| "unknown panic".into());
                            CellOutput {
                                row: ResultRow::failed(
                                    job,
                                    &sh.names[job.dataset],
                                    None,
                                    format!("panic: {msg}"),
                                ),
                                audit: Vec::new(),
                            }
                        },
                    );
                    let _ = tx.send(out);
                });
                let out = rx.recv_timeout(timeout).unwrap_or_else(|_| {
                    let job = &jobs[i];
                    CellOutput {
                        row: ResultRow::failed(
                            job,
                            &shared.names[job.dataset],
                            None,
                            format!("timed out after {:.0} s", timeout.as_secs_f64()),
                        ),
                        audit: Vec::new(),
                    }
                });
                let secs = start.elapsed().as_secs_f64();
                slots.lock().expect("result slots poisoned")[i] = Some((out, secs));
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|s| s.expect("every job ran"))
        .collect()
}

/// Run the full configured matrix. Cell failures are recorded in the report;
/// only configuration and registry problems are returned as errors.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, BenchError> {
    cfg.validate()?;
    let store = FixtureStore::open(cfg.data_dir())?;
    let names = resolve_datasets(cfg, &store)?;
    let prepared: Vec<Result<Prepared, String>> = names
        .iter()
        .map(|n| prepare(&store, n, cfg.leakage_mode))
        .collect();

    let needs_q = cfg.architectures.iter().any(|a| a.uses_firing());
    let mut tuning = Vec::new();
    let q_map = match cfg.q_mode {
        QMode::Fixed if needs_q => QMap::from_file(&cfg.q_map_path())?,
        QMode::Fixed => QMap::default(),
        QMode::Tune => {
            let mut map = QMap::default();
            if needs_q {
                for (name, prep) in names.iter().zip(&prepared) {
                    for &kind in &cfg.classifiers {
                        let start = Instant::now();
                        let outcome = match prep {
                            Ok(p) => tune_prepared(p, kind, cfg, cfg.seeds[0]),
                            Err(e) => Err(BenchError::Cell(e.clone())),
                        };
                        let wall_seconds = start.elapsed().as_secs_f64();
                        tuning.push(match outcome {
                            Ok(r) => {
                                map.insert(kind, name, r.best_q);
                                TuneRow {
                                    dataset: name.clone(),
                                    classifier: kind,
                                    best_q: Some(r.best_q),
                                    best_score: Some(r.best_score),
                                    failed_q: r.failures.len(),
                                    error: None,
                                    wall_seconds,
                                }
                            }
                            Err(e) => TuneRow {
                                dataset: name.clone(),
                                classifier: kind,
                                best_q: None,
                                best_score: None,
                                failed_q: 0,
                                error: Some(e.to_string()),
                                wall_seconds,
                            },
                        });
                    }
                }
            }
            map
        }
    };

    let mut jobs = Vec::new();
    for d in 0..names.len() {
        for &kind in &cfg.classifiers {
            for &arch in &cfg.architectures {
                for &seed in &cfg.seeds {
                    jobs.push(Job {
                        dataset: d,
                        kind,
                        arch,
                        seed,
                    });
                }
            }
        }
    }
    let shared = Arc::new(Shared {
        cfg: cfg.clone(),
        names,
        prepared,
        q_map,
        cache: Mutex::new(HashMap::new()),
    });
    let jobs = Arc::new(jobs);
    let outputs = execute(
        Arc::clone(&shared),
        Arc::clone(&jobs),
        cfg.worker_count(),
        Duration::from_secs_f64(cfg.cell_timeout_secs),
    );

    let mut report = ExperimentReport {
        config: Some(cfg.clone()),
        tuning,
        ..ExperimentReport::default()
    };
    for (out, secs) in outputs {
        report.timings.push(Timing {
            dataset: out.row.dataset.clone(),
            classifier: out.row.classifier,
            architecture: out.row.architecture,
            seed: out.row.seed,
            wall_seconds: secs,
        });
        report.rows.push(out.row);
        report.audit.extend(out.audit);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hidden_labels_count_reads() {
        let h = HiddenLabels::new(vec![2, 0]);
        assert_eq!(h.reads(), 0);
        assert_eq!(h.read(1), 0);
        assert_eq!(h.reads(), 1);
    }

    #[test]
    fn architecture_parsing() {
        assert_eq!("nl+st".parse::<Architecture>().unwrap(), Architecture::NlSt);
        assert_eq!("NL".parse::<Architecture>().unwrap(), Architecture::Nl);
        assert!("ssl".parse::<Architecture>().is_err());
    }

    #[test]
    fn q_map_lookup_and_validation() {
        let map = QMap::from_toml("[RF]\n\"Iris\" = 0.956\n").unwrap();
        assert_eq!(map.get(ClassifierKind::RandomForest, "iris"), Some(0.956));
        assert_eq!(map.get(ClassifierKind::GaussianNb, "Iris"), None);
        assert!(QMap::from_toml("[RF]\n\"Iris\" = 1.5\n").is_err());
        assert!(QMap::from_toml("[KNN]\n\"Iris\" = 0.5\n").is_err());
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = ExperimentConfig::from_toml("seeds = [1, 2]\nclassifiers = [\"GNB\"]\n").unwrap();
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.architectures.len(), 3);
        assert!(cfg.validate().is_ok());
        let empty = ExperimentConfig {
            seeds: Vec::new(),
            ..ExperimentConfig::default()
        };
        assert!(empty.validate().is_err());
    }
}
