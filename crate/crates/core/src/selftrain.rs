//! Confidence-thresholded self-training.

use std::io::Write;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{argmax, ClassifierError, ProbClassifier};

pub const DEFAULT_CONFIDENCE: f64 = 0.75;

#[derive(Debug, Error)]
pub enum SelfTrainError {
    #[error("invalid self-training config: {0}")]
    InvalidConfig(String),
    #[error("labeled set is empty")]
    EmptyLabeled,
    #[error("{rows} labeled rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("class {class} is absent from the labeled set")]
    MissingClass { class: usize },
    #[error("labeled rows have {labeled} features, unlabeled rows {unlabeled}")]
    FeatureMismatch { labeled: usize, unlabeled: usize },
    #[error("round {round}: {source}")]
    Classifier {
        round: usize,
        #[source]
        source: ClassifierError,
    },
    #[error("audit log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct STConfig {
    pub confidence_threshold: f64,
    /// Cap on classifier fits; `None` means `|U| + 1`.
    pub max_rounds: Option<usize>,
}

impl Default for STConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: DEFAULT_CONFIDENCE,
            max_rounds: None,
        }
    }
}

impl STConfig {
    pub fn validate(&self) -> Result<(), SelfTrainError> {
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold <= 1.0) {
            return Err(SelfTrainError::InvalidConfig(format!(
                "confidence_threshold must lie in (0, 1], got {}",
                self.confidence_threshold
            )));
        }
        if self.max_rounds == Some(0) {
            return Err(SelfTrainError::InvalidConfig(
                "max_rounds must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    NoCandidates,
    ExhaustedUnlabeled,
    MaxRounds,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TerminationReason::NoCandidates => "no_candidates",
            TerminationReason::ExhaustedUnlabeled => "exhausted_unlabeled",
            TerminationReason::MaxRounds => "max_rounds",
        })
    }
}

/// One scoring pass over the remaining unlabeled rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Zero-based.
    pub round: usize,
    pub labeled_before: usize,
    pub accepted: usize,
    pub per_class: Vec<usize>,
    pub min_confidence: Option<f64>,
    pub mean_confidence: Option<f64>,
    /// Positions in the original unlabeled set.
    pub accepted_indices: Vec<usize>,
    pub pseudo_labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct STAudit {
    pub rounds: Vec<RoundRecord>,
    pub termination: TerminationReason,
    pub fits: usize,
}

impl STAudit {
    pub fn accepting_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| r.accepted > 0).count()
    }

    pub fn total_accepted(&self) -> usize {
        self.rounds.iter().map(|r| r.accepted).sum()
    }

    /// Every pseudo-label as `(original unlabeled index, label)` in acceptance order.
    pub fn pseudo_labels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rounds.iter().flat_map(|r| {
            r.accepted_indices
                .iter()
                .copied()
                .zip(r.pseudo_labels.iter().copied())
        })
    }

    /// One JSON object per round.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), SelfTrainError> {
        for r in &self.rounds {
            let line = serde_json::to_string(r).map_err(std::io::Error::other)?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub confidences: Vec<f64>,
}

/// Rows whose largest probability is at least `threshold`, labeled by argmax.
pub fn pseudo_label_selection(proba: ArrayView2<f64>, threshold: f64) -> Selection {
    let mut sel = Selection::default();
    for (i, row) in proba.rows().into_iter().enumerate() {
        let label = argmax(row.iter().copied());
        let conf = row[label];
        if conf >= threshold {
            sel.indices.push(i);
            sel.labels.push(label);
            sel.confidences.push(conf);
        }
    }
    sel
}

pub struct SelfTrainOutcome {
    pub model: Box<dyn ProbClassifier>,
    pub labeled_x: Array2<f64>,
    pub labeled_y: Vec<usize>,
    pub audit: STAudit,
}

impl std::fmt::Debug for SelfTrainOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SelfTrainOutcome")
            .field("labeled", &self.labeled_y.len())
            .field("audit", &self.audit)
            .finish_non_exhaustive()
    }
}

/// Pseudo-label `ux` into the labeled set `(lx, ly)` until no unlabeled row
/// clears the threshold. `make` must return a fresh unfitted classifier.
pub fn self_train<F>(
    mut make: F,
    lx: ArrayView2<f64>,
    ly: &[usize],
    ux: ArrayView2<f64>,
    n_classes: usize,
    cfg: &STConfig,
) -> Result<SelfTrainOutcome, SelfTrainError>
where
    F: FnMut() -> Result<Box<dyn ProbClassifier>, ClassifierError>,
{
    cfg.validate()?;
    if ly.is_empty() {
        return Err(SelfTrainError::EmptyLabeled);
    }
    if lx.nrows() != ly.len() {
        return Err(SelfTrainError::LengthMismatch {
            rows: lx.nrows(),
            labels: ly.len(),
        });
    }
    if ux.nrows() > 0 && ux.ncols() != lx.ncols() {
        return Err(SelfTrainError::FeatureMismatch {
            labeled: lx.ncols(),
            unlabeled: ux.ncols(),
        });
    }
    for class in 0..n_classes {
        if !ly.contains(&class) {
            return Err(SelfTrainError::MissingClass { class });
        }
    }

    let max_fits = cfg.max_rounds.unwrap_or(ux.nrows() + 1);
    let mut labeled_x = lx.to_owned();
    let mut labeled_y = ly.to_vec();
    // Original positions of the rows still unlabeled.
    let mut remaining: Vec<usize> = (0..ux.nrows()).collect();
    let mut rounds = Vec::new();
    let mut fits = 0;

    loop {
        let classifier_err = |source| SelfTrainError::Classifier {
            round: fits,
            source,
        };
        let mut model = make().map_err(classifier_err)?;
        model
            .fit(labeled_x.view(), &labeled_y, n_classes)
            .map_err(classifier_err)?;
        fits += 1;

        let termination = if remaining.is_empty() {
            Some(TerminationReason::ExhaustedUnlabeled)
        } else if fits >= max_fits {
            Some(TerminationReason::MaxRounds)
        } else {
            None
        };
        if let Some(termination) = termination {
            return Ok(SelfTrainOutcome {
                model,
                labeled_x,
                labeled_y,
                audit: STAudit {
                    rounds,
                    termination,
                    fits,
                },
            });
        }

        let pool = ux.select(Axis(0), &remaining);
        let proba =
            model
                .predict_proba(pool.view())
                .map_err(|source| SelfTrainError::Classifier {
                    round: fits - 1,
                    source,
                })?;
        let sel = pseudo_label_selection(proba.view(), cfg.confidence_threshold);
        let mut per_class = vec![0; n_classes];
        for &c in &sel.labels {
            per_class[c] += 1;
        }
        let accepted_indices: Vec<usize> = sel.indices.iter().map(|&i| remaining[i]).collect();
        rounds.push(RoundRecord {
            round: fits - 1,
            labeled_before: labeled_y.len(),
            accepted: sel.indices.len(),
            per_class,
            min_confidence: sel.confidences.iter().copied().reduce(f64::min),
            mean_confidence: (!sel.confidences.is_empty())
                .then(|| sel.confidences.iter().sum::<f64>() / sel.confidences.len() as f64),
            accepted_indices: accepted_indices.clone(),
            pseudo_labels: sel.labels.clone(),
        });
        if sel.indices.is_empty() {
            return Ok(SelfTrainOutcome {
                model,
                labeled_x,
                labeled_y,
                audit: STAudit {
                    rounds,
                    termination: TerminationReason::NoCandidates,
                    fits,
                },
            });
        }

        let moved = ux.select(Axis(0), &accepted_indices);
        labeled_x = concatenate![Axis(0), labeled_x, moved];
        labeled_y.extend_from_slice(&sel.labels);
        let mut chosen = sel.indices.iter().peekable();
        let mut kept = Vec::with_capacity(remaining.len() - sel.indices.len());
        for (pos, &orig) in remaining.iter().enumerate() {
            if chosen.peek() == Some(&&pos) {
                chosen.next();
            } else {
                kept.push(orig);
            }
        }
        remaining = kept;
    }
}
