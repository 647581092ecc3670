use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nlst_core::bench::{
    self, emit_report, read_results, write_derived, Architecture, ExperimentConfig, LeakageMode,
    QMap, QMode,
};
use nlst_core::classifiers::ClassifierKind;
use nlst_core::data::{registry_check, FixtureStore, DATA_DIR_ENV};

#[derive(Parser)]
#[command(name = "nlst", version, about = "NL+ST benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment matrix and write reports.
    Run(RunArgs),
    /// Tune q per (dataset, classifier) and write a q map.
    TuneQ(RunArgs),
    /// Check every fixture against the dataset registry.
    ValidateData(DataArgs),
    /// Rebuild summary, gain and markdown files from an existing results.csv.
    Report(ReportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Fixture directory (overrides the environment variable).
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated dataset names or slugs.
    #[arg(long, value_delimiter = ',')]
    datasets: Option<Vec<String>>,
    /// Comma-separated subset of RF, AB, SVM, LR, GNB.
    #[arg(long, value_delimiter = ',')]
    classifiers: Option<Vec<ClassifierKind>>,
    /// Comma-separated subset of ST, NL, NL+ST.
    #[arg(long, value_delimiter = ',')]
    archs: Option<Vec<Architecture>>,
    /// Comma-separated seeds, or a count `n` written as `0..n`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
    /// 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    leakage_mode: Option<LeakageMode>,
    /// Fixed q map; implies fixed-q mode for `run`.
    #[arg(long)]
    q_map: Option<PathBuf>,
    /// Tune q instead of reading the fixed map.
    #[arg(long)]
    tune: bool,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding results.csv; derived files are rewritten there.
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a >= b {
            bail!("empty seed range {s:?}");
        }
        return Ok((a..b).collect());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .with_context(|| format!("bad seed {p:?}"))
        })
        .collect()
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &args.datasets {
        cfg.datasets = d.clone();
    }
    if let Some(c) = &args.classifiers {
        cfg.classifiers = c.clone();
    }
    if let Some(a) = &args.archs {
        cfg.architectures = a.clone();
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(m) = args.leakage_mode {
        cfg.leakage_mode = m;
    }
    if let Some(q) = &args.q_map {
        cfg.q_map = Some(q.clone());
        cfg.q_mode = QMode::Fixed;
    }
    if args.tune {
        cfg.q_mode = QMode::Tune;
    }
    if let Some(d) = &args.data.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let cfg = build_config(&args)?;
    let report = bench::run_experiment(&cfg)?;
    let files = emit_report(&report, &args.out_dir)?;
    let failed = report
        .rows
        .iter()
        .filter(|r| r.status == bench::CellStatus::Failed)
        .count();
    for f in &files {
        println!("wrote {}", f.display());
    }
    println!("{} cells, {} failed", report.rows.len(), failed);
    Ok(ExitCode::SUCCESS)
}

fn tune(args: RunArgs) -> Result<ExitCode> {
    let cfg = build_config(&args)?;
    let store = FixtureStore::open(cfg.data_dir())?;
    let names = if cfg.datasets.is_empty() {
        store.registry.names()
    } else {
        cfg.datasets.clone()
    };
    std::fs::create_dir_all(&args.out_dir)?;
    let mut map = QMap::default();
    let mut failures = 0;
    for name in &names {
        let display = store.registry.get(name)?.name.clone();
        for &kind in &cfg.classifiers {
            match bench::tune_pair(&cfg, &display, kind) {
                Ok(r) => {
                    println!(
                        "{display}\t{kind}\tq = {}\tcv macro F1 = {}",
                        r.best_q,
                        bench::fmt4(r.best_score)
                    );
                    map.insert(kind, &display, r.best_q);
                }
                Err(e) => {
                    failures += 1;
                    eprintln!("{display}\t{kind}\tfailed: {e}");
                }
            }
        }
    }
    let path = args.out_dir.join("tuned_q.toml");
    std::fs::write(&path, map.to_toml())?;
    println!("wrote {}", path.display());
    Ok(if failures > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn validate_data(args: DataArgs) -> Result<ExitCode> {
    let store = match args.data_dir {
        Some(d) => FixtureStore::open(d)?,
        None => FixtureStore::open_default()?,
    };
    let mut ok = true;
    for entry in &store.registry.datasets {
        let line = match store.load(&entry.name) {
            Ok(ds) => {
                let report = registry_check(&ds, &store.registry)?;
                ok &= report.is_ok();
                if report.is_ok() {
                    format!(
                        "ok      {} ({} samples, {} classes)",
                        entry.name,
                        ds.n_samples(),
                        ds.n_classes()
                    )
                } else {
                    format!("MISMATCH {}: {}", entry.name, report.mismatches.join("; "))
                }
            }
            Err(e) => {
                ok = false;
                format!("ERROR   {}: {e}", entry.name)
            }
        };
        println!("{line}");
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn report(args: ReportArgs) -> Result<ExitCode> {
    let rows = read_results(&args.out_dir.join("results.csv"))?;
    for f in write_derived(&rows, &args.out_dir)? {
        println!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::TuneQ(a) => tune(a),
        Command::ValidateData(a) => validate_data(a),
        Command::Report(a) => report(a),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
