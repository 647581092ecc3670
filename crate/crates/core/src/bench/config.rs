use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::chaos::{NeuronConfig, DEFAULT_MAX_ITERS, DEFAULT_NEIGHBOURHOOD, DEFAULT_THRESHOLD};
use crate::classifiers::ClassifierKind;
use crate::data::{default_data_dir, SplitPlan};
use crate::selftrain::STConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    /// Normalized features with self-training.
    #[serde(rename = "ST")]
    St,
    /// Firing-rate features, supervised fit on the labeled set only.
    #[serde(rename = "NL")]
    Nl,
    /// Firing-rate features with self-training.
    #[serde(rename = "NL+ST")]
    NlSt,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::St, Architecture::Nl, Architecture::NlSt];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::St => "ST",
            Architecture::Nl => "NL",
            Architecture::NlSt => "NL+ST",
        }
    }

    pub fn uses_firing(self) -> bool {
        self != Architecture::St
    }

    pub fn self_trains(self) -> bool {
        self != Architecture::Nl
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s
            .trim()
            .to_ascii_uppercase()
            .replace(['-', '_'], "+")
            .as_str()
        {
            "ST" => Ok(Architecture::St),
            "NL" => Ok(Architecture::Nl),
            "NL+ST" | "NLST" => Ok(Architecture::NlSt),
            _ => Err(format!(
                "unknown architecture {s:?} (expected ST, NL or NL+ST)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeakageMode {
    /// Normalize on the full dataset and tune q on the whole training split.
    #[default]
    Paper,
    /// Normalize on the training split and tune q on the labeled set only.
    Strict,
}

impl FromStr for LeakageMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(LeakageMode::Paper),
            "strict" => Ok(LeakageMode::Strict),
            _ => Err(format!(
                "unknown leakage mode {s:?} (expected paper or strict)"
            )),
        }
    }
}

impl fmt::Display for LeakageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LeakageMode::Paper => "paper",
            LeakageMode::Strict => "strict",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QMode {
    #[default]
    Fixed,
    Tune,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuronDefaults {
    pub b: f64,
    pub eps: f64,
    pub max_iters: usize,
}

impl Default for NeuronDefaults {
    fn default() -> Self {
        Self {
            b: DEFAULT_THRESHOLD,
            eps: DEFAULT_NEIGHBOURHOOD,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

impl NeuronDefaults {
    pub fn neuron(&self, q: f64) -> Result<NeuronConfig, BenchError> {
        NeuronConfig::new(q, self.b, self.eps, self.max_iters)
            .map_err(|e| BenchError::Config(e.to_string()))
    }
}

/// Tuned q per classifier and dataset display name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QMap(pub BTreeMap<String, BTreeMap<String, f64>>);

impl QMap {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let map: QMap = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        for (kind, table) in &map.0 {
            kind.parse::<ClassifierKind>().map_err(BenchError::Config)?;
            if let Some((ds, q)) = table.iter().find(|(_, q)| !(**q > 0.0 && **q < 1.0)) {
                return Err(BenchError::Config(format!(
                    "q for ({kind}, {ds}) must lie in (0, 1), got {q}"
                )));
            }
        }
        Ok(map)
    }

    pub fn from_file(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn get(&self, kind: ClassifierKind, dataset: &str) -> Option<f64> {
        self.0
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(kind.short_name()))
            .and_then(|(_, t)| {
                t.iter()
                    .find(|(d, _)| d.eq_ignore_ascii_case(dataset))
                    .map(|(_, q)| *q)
            })
    }

    pub fn insert(&mut self, kind: ClassifierKind, dataset: &str, q: f64) {
        self.0
            .entry(kind.short_name().to_owned())
            .or_default()
            .insert(dataset.to_owned(), q);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("q map serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Display names or slugs; empty means every registry entry.
    pub datasets: Vec<String>,
    pub classifiers: Vec<ClassifierKind>,
    pub architectures: Vec<Architecture>,
    pub seeds: Vec<u64>,
    pub q_mode: QMode,
    /// Fixed-q map; defaults to `paper_q.toml` in the data directory.
    pub q_map: Option<PathBuf>,
    /// Tuning grid; defaults to 0.001..=0.999 in steps of 0.001.
    pub q_grid: Option<Vec<f64>>,
    pub leakage_mode: LeakageMode,
    pub neuron: NeuronDefaults,
    /// The seed field is replaced per run.
    pub split: SplitPlan,
    pub self_training: STConfig,
    /// 0 uses every available core.
    pub workers: usize,
    pub cell_timeout_secs: f64,
    pub data_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            classifiers: ClassifierKind::ALL.to_vec(),
            architectures: Architecture::ALL.to_vec(),
            seeds: (0..10).collect(),
            q_mode: QMode::Fixed,
            q_map: None,
            q_grid: None,
            leakage_mode: LeakageMode::Paper,
            neuron: NeuronDefaults::default(),
            split: SplitPlan::default(),
            self_training: STConfig::default(),
            workers: 0,
            cell_timeout_secs: 120.0,
            data_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(default_data_dir)
    }

    pub fn q_map_path(&self) -> PathBuf {
        self.q_map
            .clone()
            .unwrap_or_else(|| self.data_dir().join("paper_q.toml"))
    }

    pub fn grid(&self) -> Vec<f64> {
        self.q_grid
            .clone()
            .unwrap_or_else(crate::eval::default_q_grid)
    }

    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.classifiers.is_empty() {
            return bad("classifier list is empty".into());
        }
        if self.architectures.is_empty() {
            return bad("architecture list is empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if !(self.cell_timeout_secs > 0.0) {
            return bad(format!(
                "cell_timeout_secs must be > 0, got {}",
                self.cell_timeout_secs
            ));
        }
        if let Some(grid) = &self.q_grid {
            if grid.is_empty() {
                return bad("q_grid is empty".into());
            }
            if let Some(q) = grid.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
                return bad(format!("q_grid value {q} outside (0, 1)"));
            }
        }
        self.neuron.neuron(0.5)?;
        self.split
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        self.self_training
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(())
    }
}
