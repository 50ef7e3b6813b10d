//! Relative error, the challenge score, per-class reports, folds and splits.

mod files;
mod folds;

pub use files::{load_predictions, load_truth, save_predictions, save_truth};
pub use folds::{make_folds, random_split, train_count, CatalogEntry, FoldSpec};

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::data::{ContainerClass, MassPrediction};
use crate::error::{Error, Result};

/// `|estimate - truth| / truth`.
pub fn relative_error(estimate: f64, truth: f64) -> Result<f64> {
    if !(truth > 0.0) {
        return Err(Error::InvalidInput(format!("true mass {truth} must be positive")));
    }
    Ok((estimate - truth).abs() / truth)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub recording_id: String,
    pub mass: f64,
    pub class: ContainerClass,
}

/// Score over one group of recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupScore {
    pub count: usize,
    pub missing: usize,
    /// Mean of `exp(-error)` with missing estimates counted as 0, in [0, 1].
    pub score: f64,
    /// Mean relative error over the recordings that have an estimate.
    pub mean_error: Option<f64>,
}

impl GroupScore {
    fn from_errors(errors: &[Option<f64>]) -> Self {
        let count = errors.len();
        let present: Vec<f64> = errors.iter().flatten().copied().collect();
        let score = if count == 0 {
            0.0
        } else {
            present.iter().map(|e| (-e).exp()).sum::<f64>() / count as f64
        };
        Self {
            count,
            missing: count - present.len(),
            score,
            mean_error: (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64),
        }
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.score
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub total: GroupScore,
    /// Classes in their declaration order, only those with recordings.
    pub per_class: Vec<(ContainerClass, GroupScore)>,
}

impl ScoreReport {
    /// Total score rebuilt from the per-class scores weighted by their
    /// recording counts.
    pub fn weighted_total(&self) -> f64 {
        combine_scores(self.per_class.iter().map(|(_, g)| (g.score, g.count)))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let fmt_err = |e: Option<f64>| e.map_or("NA".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(s, "{:<8} {:>6} {:>8} {:>9} {:>10}", "class", "count", "missing", "score_%", "mean_err");
        for (c, g) in &self.per_class {
            let _ = writeln!(
                s,
                "{:<8} {:>6} {:>8} {:>9.2} {:>10}",
                c.as_str(),
                g.count,
                g.missing,
                g.percent(),
                fmt_err(g.mean_error)
            );
        }
        let t = &self.total;
        let _ = writeln!(
            s,
            "{:<8} {:>6} {:>8} {:>9.2} {:>10}",
            "total",
            t.count,
            t.missing,
            t.percent(),
            fmt_err(t.mean_error)
        );
        s
    }

    /// One `key=value` per line, full precision.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut put = |prefix: &str, g: &GroupScore| {
            let _ = writeln!(s, "{prefix}.count={}", g.count);
            let _ = writeln!(s, "{prefix}.missing={}", g.missing);
            let _ = writeln!(s, "{prefix}.score={}", g.score);
            match g.mean_error {
                Some(e) => {
                    let _ = writeln!(s, "{prefix}.mean_error={e}");
                }
                None => {
                    let _ = writeln!(s, "{prefix}.mean_error=NA");
                }
            }
        };
        put("total", &self.total);
        for (c, g) in &self.per_class {
            put(c.as_str(), g);
        }
        s
    }
}

/// Instance-weighted mean of `(score, count)` pairs.
pub fn combine_scores(parts: impl IntoIterator<Item = (f64, usize)>) -> f64 {
    let (sum, n) = parts
        .into_iter()
        .fold((0.0, 0usize), |(s, n), (score, count)| (s + score * count as f64, n + count));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn errors_by_recording(
    predictions: &[MassPrediction],
    truths: &[TruthRecord],
) -> Result<Vec<Option<f64>>> {
    let mut truth_index: HashMap<&str, usize> = HashMap::with_capacity(truths.len());
    for (i, t) in truths.iter().enumerate() {
        if truth_index.insert(&t.recording_id, i).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate truth entry for recording {}",
                t.recording_id
            )));
        }
    }
    let mut estimates: Vec<Option<Option<f64>>> = vec![None; truths.len()];
    for p in predictions {
        let &i = truth_index
            .get(p.recording_id())
            .ok_or_else(|| Error::UnknownRecording(p.recording_id().to_string()))?;
        if estimates[i].is_some() {
            return Err(Error::DuplicatePrediction(p.recording_id().to_string()));
        }
        estimates[i] = Some(p.estimate());
    }
    truths
        .iter()
        .zip(estimates)
        .map(|(t, e)| e.flatten().map(|m| relative_error(m, t.mass)).transpose())
        .collect()
}

/// Mean over truth recordings of `exp(-relative error)`, where recordings
/// without an estimate (or absent from `predictions`) contribute 0.
pub fn score(predictions: &[MassPrediction], truths: &[TruthRecord]) -> Result<ScoreReport> {
    per_class_report(predictions, truths, &ContainerClass::ALL)
}

/// As [`score`], with a breakdown over `classes`; a truth record whose class
/// is not listed is an error.
pub fn per_class_report(
    predictions: &[MassPrediction],
    truths: &[TruthRecord],
    classes: &[ContainerClass],
) -> Result<ScoreReport> {
    if let Some(t) = truths.iter().find(|t| !classes.contains(&t.class)) {
        return Err(Error::UnknownClass(format!(
            "{} (recording {})",
            t.class, t.recording_id
        )));
    }
    let errors = errors_by_recording(predictions, truths)?;
    let mut groups: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    for (t, e) in truths.iter().zip(&errors) {
        let pos = classes.iter().position(|c| *c == t.class).expect("checked above");
        groups.entry(pos).or_default().push(*e);
    }
    Ok(ScoreReport {
        total: GroupScore::from_errors(&errors),
        per_class: groups
            .into_iter()
            .map(|(pos, e)| (classes[pos], GroupScore::from_errors(&e)))
            .collect(),
    })
}
