use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Architecture, BenchError, CellStatus, ExperimentReport, ResultRow};
use crate::classifiers::{ClassifierKind, Hyperparameters};
use crate::eval::gain_percent;

pub const RESULTS_HEADER: [&str; 16] = [
    "dataset",
    "classifier",
    "architecture",
    "seed",
    "status",
    "q",
    "macro_f1",
    "st_rounds",
    "fits",
    "labeled_initial",
    "labeled_final",
    "pseudo_label_accuracy",
    "termination",
    "converged",
    "train_label_reads",
    "error",
];

/// Four decimals, without a negative zero.
pub fn fmt4(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

fn round4(v: f64) -> f64 {
    fmt4(v).parse().expect("formatted float parses")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn opt4(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt4)
}

/// Mean and spread of one (dataset, classifier, architecture) cell over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub classifier: ClassifierKind,
    pub architecture: Architecture,
    pub q: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_macro_f1: Option<f64>,
    /// Sample standard deviation; 0 for a single run.
    pub std_macro_f1: Option<f64>,
}

/// Relative improvement of NL+ST over ST, computed from the printed means.
#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub classifier: ClassifierKind,
    pub dataset: String,
    pub mean_st: Option<f64>,
    pub mean_nl_st: Option<f64>,
    pub gain_percent: Option<f64>,
    /// Seeds where NL+ST scored strictly above ST.
    pub wins: usize,
    /// Seeds where both cells succeeded.
    pub paired: usize,
}

fn first_appearance<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut seen = Vec::new();
    for it in items {
        if !seen.contains(&it) {
            seen.push(it);
        }
    }
    seen
}

impl ExperimentReport {
    pub fn summary(&self) -> Vec<SummaryRow> {
        summarize(&self.rows)
    }

    pub fn gains(&self) -> Vec<GainRow> {
        gains(&self.rows)
    }
}

fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let keys = first_appearance(
        rows.iter()
            .map(|r| (r.dataset.clone(), r.classifier, r.architecture)),
    );
    keys.into_iter()
        .map(|(dataset, classifier, architecture)| {
            let cell: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| {
                    r.dataset == dataset
                        && r.classifier == classifier
                        && r.architecture == architecture
                })
                .collect();
            // Aggregate the printed per-seed values so `report` can rebuild
            // identical files from results.csv.
            let scores: Vec<f64> = cell.iter().filter_map(|r| r.macro_f1.map(round4)).collect();
            let n = scores.len();
            let mean = (n > 0).then(|| scores.iter().sum::<f64>() / n as f64);
            let std = mean.map(|m| {
                if n < 2 {
                    0.0
                } else {
                    (scores.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / (n - 1) as f64).sqrt()
                }
            });
            SummaryRow {
                q: cell.iter().find_map(|r| r.q),
                n_ok: cell.iter().filter(|r| r.status == CellStatus::Ok).count(),
                n_failed: cell
                    .iter()
                    .filter(|r| r.status == CellStatus::Failed)
                    .count(),
                dataset,
                classifier,
                architecture,
                mean_macro_f1: mean,
                std_macro_f1: std,
            }
        })
        .collect()
}

fn gains(rows: &[ResultRow]) -> Vec<GainRow> {
    let summary = summarize(rows);
    let mean_of = |c: ClassifierKind, d: &str, a: Architecture| {
        summary
            .iter()
            .find(|s| s.classifier == c && s.dataset == d && s.architecture == a)
            .and_then(|s| s.mean_macro_f1)
    };
    let classifiers = first_appearance(rows.iter().map(|r| r.classifier));
    let datasets = first_appearance(rows.iter().map(|r| r.dataset.clone()));
    let mut out = Vec::new();
    for &c in &classifiers {
        let mut block = Vec::new();
        for d in &datasets {
            let has = |a| {
                rows.iter()
                    .any(|r| r.classifier == c && &r.dataset == d && r.architecture == a)
            };
            if !(has(Architecture::St) && has(Architecture::NlSt)) {
                continue;
            }
            let mean_st = mean_of(c, d, Architecture::St);
            let mean_nl_st = mean_of(c, d, Architecture::NlSt);
            let gain = match (mean_nl_st, mean_st) {
                (Some(a), Some(b)) => gain_percent(round4(a), round4(b)).ok(),
                _ => None,
            };
            let score = |a: Architecture, seed: u64| {
                rows.iter()
                    .find(|r| {
                        r.classifier == c
                            && &r.dataset == d
                            && r.architecture == a
                            && r.seed == seed
                    })
                    .and_then(|r| r.macro_f1.map(round4))
            };
            let seeds = first_appearance(
                rows.iter()
                    .filter(|r| r.classifier == c && &r.dataset == d)
                    .map(|r| r.seed),
            );
            let (mut wins, mut paired) = (0, 0);
            for s in seeds {
                if let (Some(st), Some(nlst)) =
                    (score(Architecture::St, s), score(Architecture::NlSt, s))
                {
                    paired += 1;
                    wins += usize::from(nlst > st);
                }
            }
            block.push(GainRow {
                classifier: c,
                dataset: d.clone(),
                mean_st,
                mean_nl_st,
                gain_percent: gain,
                wins,
                paired,
            });
        }
        // Descending gain; undefined gains last; stable for ties.
        block.sort_by(|a, b| match (a.gain_percent, b.gain_percent) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        });
        out.extend(block);
    }
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_owned(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> BenchError + '_ {
    move |e| BenchError::Csv {
        path: path.to_owned(),
        msg: e.to_string(),
    }
}

fn write_csv(path: &Path, header: &[&str], records: &[Vec<String>]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in records {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn result_record(r: &ResultRow) -> Vec<String> {
    vec![
        r.dataset.clone(),
        r.classifier.to_string(),
        r.architecture.to_string(),
        r.seed.to_string(),
        match r.status {
            CellStatus::Ok => "ok".into(),
            CellStatus::Failed => "failed".into(),
        },
        opt4(r.q),
        opt4(r.macro_f1),
        opt(r.st_rounds),
        opt(r.fits),
        opt(r.labeled_initial),
        opt(r.labeled_final),
        opt4(r.pseudo_label_accuracy),
        r.termination.clone().unwrap_or_default(),
        opt(r.converged),
        opt(r.train_label_reads),
        r.error.clone().unwrap_or_default(),
    ]
}

/// Write every report file into `dir` and return their paths.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    let path = dir.join("results.csv");
    let records: Vec<Vec<String>> = report.rows.iter().map(result_record).collect();
    write_csv(&path, &RESULTS_HEADER, &records)?;
    written.push(path);

    written.extend(write_derived(&report.rows, dir)?);

    let path = dir.join("audit.jsonl");
    let mut text = String::new();
    for line in &report.audit {
        text.push_str(&serde_json::to_string(line).expect("audit line serializes"));
        text.push('\n');
    }
    fs::write(&path, text).map_err(io_err(&path))?;
    written.push(path);

    let path = dir.join("timings.csv");
    let records: Vec<Vec<String>> = report
        .timings
        .iter()
        .map(|t| {
            vec![
                t.dataset.clone(),
                t.classifier.to_string(),
                t.architecture.to_string(),
                t.seed.to_string(),
                fmt4(t.wall_seconds),
            ]
        })
        .collect();
    write_csv(
        &path,
        &[
            "dataset",
            "classifier",
            "architecture",
            "seed",
            "wall_seconds",
        ],
        &records,
    )?;
    written.push(path);

    if !report.tuning.is_empty() {
        let path = dir.join("tuning.csv");
        let records: Vec<Vec<String>> = report
            .tuning
            .iter()
            .map(|t| {
                vec![
                    t.dataset.clone(),
                    t.classifier.to_string(),
                    opt(t.best_q),
                    opt4(t.best_score),
                    t.failed_q.to_string(),
                    t.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(
            &path,
            &[
                "dataset",
                "classifier",
                "best_q",
                "best_cv_macro_f1",
                "failed_q",
                "error",
            ],
            &records,
        )?;
        written.push(path);
    }

    if let Some(cfg) = &report.config {
        let path = dir.join("run.json");
        let hyper: Vec<Hyperparameters> = cfg
            .classifiers
            .iter()
            .map(|&k| Hyperparameters::default_for(k))
            .collect();
        let doc = serde_json::json!({ "config": cfg, "hyperparameters": hyper });
        let text = serde_json::to_string_pretty(&doc).expect("run record serializes");
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Summary, gain, plot-data and markdown files derived from result rows.
pub fn write_derived(rows: &[ResultRow], dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let summary = summarize(rows);
    let gains = gains(rows);
    let mut written = Vec::new();

    let path = dir.join("summary.csv");
    let records: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            vec![
                s.dataset.clone(),
                s.classifier.to_string(),
                s.architecture.to_string(),
                opt4(s.q),
                s.n_ok.to_string(),
                s.n_failed.to_string(),
                opt4(s.mean_macro_f1),
                opt4(s.std_macro_f1),
            ]
        })
        .collect();
    write_csv(
        &path,
        &[
            "dataset",
            "classifier",
            "architecture",
            "q",
            "n_ok",
            "n_failed",
            "mean_macro_f1",
            "std_macro_f1",
        ],
        &records,
    )?;
    written.push(path);

    let path = dir.join("gains.csv");
    let records: Vec<Vec<String>> = gains
        .iter()
        .map(|g| {
            vec![
                g.classifier.to_string(),
                g.dataset.clone(),
                opt4(g.mean_st),
                opt4(g.mean_nl_st),
                opt4(g.gain_percent),
                g.wins.to_string(),
                g.paired.to_string(),
            ]
        })
        .collect();
    write_csv(
        &path,
        &[
            "classifier",
            "dataset",
            "mean_macro_f1_st",
            "mean_macro_f1_nl_st",
            "gain_percent",
            "nl_st_wins",
            "paired_seeds",
        ],
        &records,
    )?;
    written.push(path);

    let path = dir.join("plot_data.csv");
    let records: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            vec![
                s.classifier.to_string(),
                s.dataset.clone(),
                s.architecture.to_string(),
                opt4(s.mean_macro_f1),
                opt4(s.std_macro_f1),
            ]
        })
        .collect();
    write_csv(
        &path,
        &["figure", "dataset", "series", "value", "error"],
        &records,
    )?;
    written.push(path);

    let path = dir.join("tables.md");
    fs::write(&path, markdown(&summary, &gains)).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

fn markdown(summary: &[SummaryRow], gains: &[GainRow]) -> String {
    let mut out = String::new();
    let classifiers = first_appearance(summary.iter().map(|s| s.classifier));
    for c in classifiers {
        let archs = first_appearance(
            summary
                .iter()
                .filter(|s| s.classifier == c)
                .map(|s| s.architecture),
        );
        let _ = writeln!(out, "## {c}\n");
        let _ = write!(out, "| Dataset | q |");
        for a in &archs {
            let _ = write!(out, " {a} |");
        }
        let _ = write!(out, "\n|---|---|");
        for _ in &archs {
            let _ = write!(out, "---|");
        }
        out.push('\n');
        let datasets = first_appearance(
            summary
                .iter()
                .filter(|s| s.classifier == c)
                .map(|s| s.dataset.clone()),
        );
        for d in datasets {
            let cells: Vec<&SummaryRow> = summary
                .iter()
                .filter(|s| s.classifier == c && s.dataset == d)
                .collect();
            let q = cells.iter().find_map(|s| s.q);
            let _ = write!(out, "| {d} | {} |", q.map_or("-".into(), fmt4));
            for a in &archs {
                let cell = cells.iter().find(|s| s.architecture == *a);
                let text = match cell.and_then(|s| s.mean_macro_f1.zip(s.std_macro_f1)) {
                    Some((m, sd)) => format!("{} ± {}", fmt4(m), fmt4(sd)),
                    None => "failed".into(),
                };
                let _ = write!(out, " {text} |");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    if !gains.is_empty() {
        out.push_str("## Gain of NL+ST over ST (%)\n\n");
        out.push_str("| Classifier | Dataset | Gain (%) | NL+ST wins |\n|---|---|---|---|\n");
        for g in gains {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {}/{} |",
                g.classifier,
                g.dataset,
                g.gain_percent.map_or("undefined".into(), fmt4),
                g.wins,
                g.paired
            );
        }
    }
    out
}

/// Read a `results.csv` written by [`emit_report`].
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, BenchError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = reader.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(RESULTS_HEADER.iter().copied()) {
        return Err(BenchError::Csv {
            path: path.to_owned(),
            msg: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let bad = |line: usize, what: &str, v: &str| BenchError::Csv {
        path: path.to_owned(),
        msg: format!("line {line}: bad {what} {v:?}"),
    };
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        fn parse_opt<T: std::str::FromStr>(s: &str) -> Result<Option<T>, ()> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| ())
            }
        }
        macro_rules! p {
            ($k:expr, $name:expr) => {
                parse_opt(field($k)).map_err(|_| bad(line, $name, field($k)))?
            };
        }
        rows.push(ResultRow {
            dataset: field(0).to_owned(),
            classifier: field(1)
                .parse()
                .map_err(|_| bad(line, "classifier", field(1)))?,
            architecture: field(2)
                .parse()
                .map_err(|_| bad(line, "architecture", field(2)))?,
            seed: field(3).parse().map_err(|_| bad(line, "seed", field(3)))?,
            status: match field(4) {
                "ok" => CellStatus::Ok,
                "failed" => CellStatus::Failed,
                other => return Err(bad(line, "status", other)),
            },
            q: p!(5, "q"),
            macro_f1: p!(6, "macro_f1"),
            st_rounds: p!(7, "st_rounds"),
            fits: p!(8, "fits"),
            labeled_initial: p!(9, "labeled_initial"),
            labeled_final: p!(10, "labeled_final"),
            pseudo_label_accuracy: p!(11, "pseudo_label_accuracy"),
            termination: Some(field(12).to_owned()).filter(|s| !s.is_empty()),
            converged: p!(13, "converged"),
            train_label_reads: p!(14, "train_label_reads"),
            error: Some(field(15).to_owned()).filter(|s| !s.is_empty()),
        });
    }
    Ok(rows)
}
