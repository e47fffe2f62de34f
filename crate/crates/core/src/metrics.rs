//! Metric registry, metric evaluation and naive baselines.
//!
//! Labels are compared the way the pipeline scaffold compares them: a cell
//! that parses as an integral number is treated as that integer, anything else
//! as its trimmed text. Both sides of the validation loop therefore agree on
//! what counts as a correct label.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::parse_number;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("unknown metric `{0}`")]
    Unknown(String),
    #[error("metric {metric}: {reason}")]
    Invalid { metric: Metric, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    SmallerBetter,
    LargerBetter,
}

impl Direction {
    /// True when `a` is strictly worse than `b`.
    pub fn worse(self, a: f64, b: f64) -> bool {
        match self {
            Self::LargerBetter => a < b,
            Self::SmallerBetter => a > b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "accuracy")]
    Accuracy,
    #[serde(rename = "auc")]
    Auc,
    #[serde(rename = "r2-score")]
    R2,
    #[serde(rename = "f1")]
    F1,
    #[serde(rename = "rmse")]
    Rmse,
    #[serde(rename = "rmsle")]
    Rmsle,
    #[serde(rename = "logloss")]
    LogLoss,
    #[serde(rename = "mae")]
    Mae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classification,
    Regression,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Accuracy,
        Metric::Auc,
        Metric::R2,
        Metric::F1,
        Metric::Rmse,
        Metric::Rmsle,
        Metric::LogLoss,
        Metric::Mae,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Accuracy => "accuracy",
            Self::Auc => "auc",
            Self::R2 => "r2-score",
            Self::F1 => "f1",
            Self::Rmse => "rmse",
            Self::Rmsle => "rmsle",
            Self::LogLoss => "logloss",
            Self::Mae => "mae",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            Self::Accuracy | Self::Auc | Self::R2 | Self::F1 => Direction::LargerBetter,
            Self::Rmse | Self::Rmsle | Self::LogLoss | Self::Mae => Direction::SmallerBetter,
        }
    }

    pub fn task_kind(self) -> TaskKind {
        match self {
            Self::Accuracy | Self::Auc | Self::F1 | Self::LogLoss => TaskKind::Classification,
            Self::R2 | Self::Rmse | Self::Rmsle | Self::Mae => TaskKind::Regression,
        }
    }

    /// Recognises a metric mentioned in free text, e.g. "ROC AUC" or
    /// "Root Mean Squared Error".
    pub fn find_in_text(text: &str) -> Option<Metric> {
        let t = text.to_lowercase();
        // Longer, more specific phrases first.
        const PHRASES: &[(&str, Metric)] = &[
            ("root mean squared logarithmic error", Metric::Rmsle),
            ("root mean squared log error", Metric::Rmsle),
            ("rmsle", Metric::Rmsle),
            ("root mean squared error", Metric::Rmse),
            ("root mean square error", Metric::Rmse),
            ("rmse", Metric::Rmse),
            ("mean absolute error", Metric::Mae),
            ("mae", Metric::Mae),
            ("log loss", Metric::LogLoss),
            ("logloss", Metric::LogLoss),
            ("log-loss", Metric::LogLoss),
            ("cross-entropy", Metric::LogLoss),
            ("area under the roc", Metric::Auc),
            ("roc auc", Metric::Auc),
            ("roc-auc", Metric::Auc),
            ("auc", Metric::Auc),
            ("r2-score", Metric::R2),
            ("r2 score", Metric::R2),
            ("r-squared", Metric::R2),
            ("r2", Metric::R2),
            ("f1", Metric::F1),
            ("accuracy", Metric::Accuracy),
        ];
        PHRASES.iter().find_map(|(phrase, m)| {
            let mut start = 0;
            while let Some(pos) = t[start..].find(phrase) {
                let at = start + pos;
                let before = t[..at].chars().next_back();
                let after = t[at + phrase.len()..].chars().next();
                let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric());
                if boundary(before) && boundary(after) {
                    return Some(*m);
                }
                start = at + phrase.len();
            }
            None
        })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_lowercase();
        match key.as_str() {
            "accuracy" | "acc" => Ok(Self::Accuracy),
            "auc" | "roc_auc" | "roc-auc" => Ok(Self::Auc),
            "r2-score" | "r2" | "r2_score" => Ok(Self::R2),
            "f1" | "f1-score" | "f1_score" => Ok(Self::F1),
            "rmse" => Ok(Self::Rmse),
            "rmsle" => Ok(Self::Rmsle),
            "logloss" | "log_loss" | "log-loss" => Ok(Self::LogLoss),
            "mae" => Ok(Self::Mae),
            _ => Err(MetricError::Unknown(s.to_string())),
        }
    }
}

/// Canonical label form: integral numbers lose their fractional part.
pub fn label_key(raw: &str) -> String {
    let t = raw.trim();
    match parse_number(t) {
        Some(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15 => {
            format!("{}", v as i64)
        }
        _ => t.to_string(),
    }
}

fn label_cmp(a: &str, b: &str) -> Ordering {
    match (parse_number(a), parse_number(b)) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cmp(b),
    }
}

/// The positive class of a binary target: the larger of the distinct labels.
pub fn positive_label(labels: &[&str]) -> Option<String> {
    let mut keys: Vec<String> = labels.iter().map(|l| label_key(l)).collect();
    keys.sort_by(|a, b| label_cmp(a, b));
    keys.dedup();
    keys.pop()
}

fn numbers(metric: Metric, values: &[&str]) -> Result<Vec<f64>, MetricError> {
    values
        .iter()
        .map(|v| {
            parse_number(v).ok_or_else(|| MetricError::Invalid {
                metric,
                reason: format!("non-numeric value `{v}`"),
            })
        })
        .collect()
}

/// Rank-based ROC AUC with average ranks for ties.
pub fn roc_auc(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].partial_cmp(&scores[*b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = positive.iter().zip(&ranks).filter(|(p, _)| **p).map(|(_, r)| *r).sum();
    let n_pos = n_pos as f64;
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

/// Evaluates `metric` on aligned true values and predictions.
pub fn evaluate(metric: Metric, y_true: &[&str], y_pred: &[&str]) -> Result<f64, MetricError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricError::Invalid {
            metric,
            reason: format!("{} labels but {} predictions", y_true.len(), y_pred.len()),
        });
    }
    if y_true.is_empty() {
        return Err(MetricError::Invalid {
            metric,
            reason: "no rows".into(),
        });
    }
    let n = y_true.len() as f64;
    match metric {
        Metric::Accuracy => {
            let hits = y_true
                .iter()
                .zip(y_pred)
                .filter(|(t, p)| label_key(t) == label_key(p))
                .count();
            Ok(hits as f64 / n)
        }
        Metric::F1 => {
            let pos = positive_label(y_true).unwrap_or_default();
            let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
            for (t, p) in y_true.iter().zip(y_pred) {
                let (t, p) = (label_key(t) == pos, label_key(p) == pos);
                match (t, p) {
                    (true, true) => tp += 1.0,
                    (false, true) => fp += 1.0,
                    (true, false) => fneg += 1.0,
                    _ => {}
                }
            }
            let denom = 2.0 * tp + fp + fneg;
            Ok(if denom == 0.0 { 0.0 } else { 2.0 * tp / denom })
        }
        Metric::Auc | Metric::LogLoss => {
            let pos = positive_label(y_true).unwrap_or_default();
            let truth: Vec<bool> = y_true.iter().map(|t| label_key(t) == pos).collect();
            let scores = numbers(metric, y_pred)?;
            if metric == Metric::Auc {
                roc_auc(&truth, &scores).ok_or_else(|| MetricError::Invalid {
                    metric,
                    reason: "validation labels contain a single class".into(),
                })
            } else {
                let eps = 1e-15;
                let total: f64 = truth
                    .iter()
                    .zip(&scores)
                    .map(|(t, p)| {
                        let p = p.clamp(eps, 1.0 - eps);
                        if *t {
                            -p.ln()
                        } else {
                            -(1.0 - p).ln()
                        }
                    })
                    .sum();
                Ok(total / n)
            }
        }
        Metric::R2 | Metric::Rmse | Metric::Rmsle | Metric::Mae => {
            let t = numbers(metric, y_true)?;
            let p = numbers(metric, y_pred)?;
            match metric {
                Metric::Mae => Ok(t.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum::<f64>() / n),
                Metric::Rmse => Ok((t.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt()),
                Metric::Rmsle => {
                    if t.iter().chain(&p).any(|v| *v <= -1.0) {
                        return Err(MetricError::Invalid {
                            metric,
                            reason: "values must be greater than -1".into(),
                        });
                    }
                    Ok((t
                        .iter()
                        .zip(&p)
                        .map(|(a, b)| (a.ln_1p() - b.ln_1p()).powi(2))
                        .sum::<f64>()
                        / n)
                        .sqrt())
                }
                _ => {
                    let mean = t.iter().sum::<f64>() / n;
                    let ss_tot: f64 = t.iter().map(|a| (a - mean).powi(2)).sum();
                    let ss_res: f64 = t.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
                    if ss_tot == 0.0 {
                        Ok(if ss_res == 0.0 { 1.0 } else { 0.0 })
                    } else {
                        Ok(1.0 - ss_res / ss_tot)
                    }
                }
            }
        }
    }
}

/// Constant prediction used as the naive baseline for `metric`.
///
/// Classification predicts the majority training label (its prevalence for
/// probabilistic metrics, a constant score for AUC); regression predicts the
/// training mean.
pub fn naive_prediction(metric: Metric, train_labels: &[&str]) -> Result<String, MetricError> {
    if train_labels.is_empty() {
        return Err(MetricError::Invalid {
            metric,
            reason: "no training labels".into(),
        });
    }
    match metric {
        Metric::Accuracy | Metric::F1 => {
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for l in train_labels {
                *counts.entry(label_key(l)).or_default() += 1;
            }
            // Highest count wins; ties go to the first label in sorted order.
            let best = counts
                .iter()
                .fold(None::<(&String, usize)>, |acc, (k, c)| match acc {
                    Some((_, bc)) if bc >= *c => acc,
                    _ => Some((k, *c)),
                })
                .map(|(k, _)| k.clone())
                .unwrap();
            Ok(best)
        }
        Metric::Auc => Ok("0.5".to_string()),
        Metric::LogLoss => {
            let pos = positive_label(train_labels).unwrap_or_default();
            let rate = train_labels.iter().filter(|l| label_key(l) == pos).count() as f64 / train_labels.len() as f64;
            Ok(format!("{rate}"))
        }
        Metric::R2 | Metric::Rmse | Metric::Rmsle | Metric::Mae => {
            let v = numbers(metric, train_labels)?;
            Ok(format!("{}", v.iter().sum::<f64>() / v.len() as f64))
        }
    }
}

/// Score of the naive predictor on the validation labels.
pub fn naive_baseline(metric: Metric, train_labels: &[&str], val_labels: &[&str]) -> Result<f64, MetricError> {
    let constant = naive_prediction(metric, train_labels)?;
    let preds = vec![constant.as_str(); val_labels.len()];
    match evaluate(metric, val_labels, &preds) {
        // A single-class validation fold has no defined AUC; the constant
        // scorer is the chance level.
        Err(_) if metric == Metric::Auc => Ok(0.5),
        other => other,
    }
}
