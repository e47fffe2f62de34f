use std::collections::HashSet;
use std::fmt;
use std::sync::OnceLock;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{is_null, TableHandle};

/// Share of non-null values that must parse as dates for a DATETIME column.
pub const DATETIME_PARSE_THRESHOLD: f64 = 0.95;

/// Default character budget for the EDA text injected into prompts.
pub const DEFAULT_EDA_BUDGET: usize = 6000;

const SAMPLE_VALUES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ColumnKind {
    Id,
    Numerical,
    Categorical,
    Datetime,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Id => "ID",
            Self::Numerical => "NUMERICAL",
            Self::Categorical => "CATEGORICAL",
            Self::Datetime => "DATETIME",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub name: String,
    pub inferred_kind: ColumnKind,
    pub distinct_count: usize,
    pub null_fraction: f64,
    pub sample_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaProfile {
    pub columns: Vec<ColumnProfile>,
    pub target_candidates: Vec<String>,
    pub n_rows: usize,
    pub text: String,
}

fn id_name_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^(id|.*_id|.*Id)$").unwrap())
}

fn uuid_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^[0-9a-f]{8}-?[0-9a-f]{4}-?[0-9a-f]{4}-?[0-9a-f]{4}-?[0-9a-f]{12}$").unwrap())
}

fn target_name_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^(target|label|labels|y|class|outcome|survived|transported|price|saleprice|churn|exited|defects?|status)$")
            .unwrap()
    })
}

pub(crate) fn parse_number(s: &str) -> Option<f64> {
    let t = s.trim();
    if t.is_empty() {
        return None;
    }
    t.parse::<f64>().ok()
}

pub(crate) fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    let t = s.trim();
    // Bare numbers are never dates here.
    if t.is_empty() || t.parse::<f64>().is_ok() {
        return None;
    }
    const DATE_FORMATS: &[&str] = &["%Y-%m-%d", "%Y/%m/%d", "%d.%m.%Y", "%m/%d/%Y", "%d-%b-%Y"];
    const DATETIME_FORMATS: &[&str] = &[
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y/%m/%d %H:%M:%S",
        "%m/%d/%Y %H:%M",
        "%m/%d/%Y %H:%M:%S",
    ];
    if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        return Some(dt.naive_utc());
    }
    if let Ok(dt) = DateTime::parse_from_str(t, "%Y-%m-%d %H:%M:%S %:z") {
        return Some(dt.naive_utc());
    }
    DATETIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(t, f).ok())
        .or_else(|| {
            DATE_FORMATS
                .iter()
                .find_map(|f| NaiveDate::parse_from_str(t, f).ok())
                .map(|d| d.and_time(chrono::NaiveTime::MIN))
        })
}

fn is_sequential(values: &[&str]) -> bool {
    let mut ints: Vec<i64> = Vec::with_capacity(values.len());
    for v in values {
        match v.trim().parse::<i64>() {
            Ok(i) => ints.push(i),
            Err(_) => return false,
        }
    }
    ints.sort_unstable();
    ints.windows(2).all(|w| w[1] - w[0] == 1)
}

/// Classifies one column.
///
/// The order of the checks matters: a unique identifier is reported as ID even
/// when its values are numbers.
pub fn profile_column<'a>(name: &str, cells: impl Iterator<Item = &'a str>) -> ColumnProfile {
    let cells: Vec<&str> = cells.collect();
    let n_rows = cells.len();
    let non_null: Vec<&str> = cells.iter().copied().filter(|c| !is_null(c)).collect();
    let distinct: HashSet<&str> = non_null.iter().copied().collect();
    let null_fraction = if n_rows == 0 {
        0.0
    } else {
        (n_rows - non_null.len()) as f64 / n_rows as f64
    };

    let mut sample_values = Vec::new();
    let mut seen = HashSet::new();
    for v in &non_null {
        if sample_values.len() == SAMPLE_VALUES {
            break;
        }
        if seen.insert(*v) {
            sample_values.push(v.to_string());
        }
    }

    // A conventional target name is never an identifier, whatever its values.
    let all_distinct = n_rows > 0 && distinct.len() == n_rows && !target_name_re().is_match(name);
    let id_like_values = || is_sequential(&non_null) || non_null.iter().all(|v| uuid_re().is_match(v.trim()));
    let kind = if all_distinct && (id_name_re().is_match(name) || id_like_values()) {
        ColumnKind::Id
    } else if !non_null.is_empty()
        && non_null.iter().filter(|v| parse_datetime(v).is_some()).count() as f64
            >= DATETIME_PARSE_THRESHOLD * non_null.len() as f64
    {
        ColumnKind::Datetime
    } else if !non_null.is_empty() && non_null.iter().all(|v| parse_number(v).is_some()) {
        ColumnKind::Numerical
    } else {
        ColumnKind::Categorical
    };

    ColumnProfile {
        name: name.to_string(),
        inferred_kind: kind,
        distinct_count: distinct.len(),
        null_fraction,
        sample_values,
    }
}

fn numeric_summary(table: &TableHandle, name: &str) -> Option<String> {
    let values: Vec<f64> = table
        .column_values(name)
        .ok()?
        .into_iter()
        .filter_map(parse_number)
        .collect();
    if values.is_empty() {
        return None;
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Some(format!("min={min:.4}, max={max:.4}, mean={mean:.4}"))
}

fn truncate_to_budget(text: String, budget: usize) -> String {
    let len = text.chars().count();
    if len <= budget {
        return text;
    }
    let marker = format!("\n[... EDA truncated, {len} characters in full]");
    let keep = budget.saturating_sub(marker.chars().count());
    let mut out: String = text.chars().take(keep).collect();
    out.push_str(&marker);
    out.chars().take(budget).collect()
}

impl EdaProfile {
    /// Re-renders the prompt text under a different character budget.
    pub fn render_text(&self, table: &TableHandle, budget: usize) -> String {
        let mut text = format!("Rows: {}, columns: {}\n\nColumns:\n", self.n_rows, self.columns.len());
        for c in &self.columns {
            text.push_str(&format!(
                "- {} ({}): distinct={}, missing={:.1}%",
                c.name,
                c.inferred_kind,
                c.distinct_count,
                c.null_fraction * 100.0
            ));
            if c.inferred_kind == ColumnKind::Numerical {
                if let Some(s) = numeric_summary(table, &c.name) {
                    text.push_str(&format!(", {s}"));
                }
            }
            if !c.sample_values.is_empty() {
                text.push_str(&format!(", examples: {}", c.sample_values.join(", ")));
            }
            text.push('\n');
        }
        if !self.target_candidates.is_empty() {
            text.push_str(&format!(
                "\nLikely target columns: {}\n",
                self.target_candidates.join(", ")
            ));
        }
        truncate_to_budget(text, budget)
    }
}

/// Profiles every column of `table` and renders the EDA text.
pub fn profile(table: &TableHandle) -> EdaProfile {
    profile_with_budget(table, DEFAULT_EDA_BUDGET)
}

pub fn profile_with_budget(table: &TableHandle, budget: usize) -> EdaProfile {
    let columns = table.columns.clone();
    let mut target_candidates: Vec<String> = columns
        .iter()
        .filter(|c| c.inferred_kind != ColumnKind::Id && target_name_re().is_match(&c.name))
        .map(|c| c.name.clone())
        .collect();
    if let Some(last) = columns.iter().rev().find(|c| c.inferred_kind != ColumnKind::Id) {
        if !target_candidates.contains(&last.name) {
            target_candidates.push(last.name.clone());
        }
    }
    let mut eda = EdaProfile {
        columns,
        target_candidates,
        n_rows: table.n_rows,
        text: String::new(),
    };
    eda.text = eda.render_text(table, budget);
    eda
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TableFormat;
    use proptest::prelude::*;

    fn kind(name: &str, values: &[&str]) -> ColumnKind {
        profile_column(name, values.iter().copied()).inferred_kind
    }

    #[test]
    fn passenger_id_is_id() {
        let ids: Vec<String> = (1..=50).map(|i| i.to_string()).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        assert_eq!(kind("PassengerId", &refs), ColumnKind::Id);
        // Sequential values identify an ID even without a telling name.
        assert_eq!(kind("row", &refs), ColumnKind::Id);
    }

    #[test]
    fn distinct_numbers_without_id_signal_are_numerical() {
        assert_eq!(kind("Fare", &["7.25", "71.28", "8.05", "53.1"]), ColumnKind::Numerical);
        assert_eq!(kind("Age", &["22", "38", "26", "35"]), ColumnKind::Numerical);
    }

    #[test]
    fn embarked_is_categorical() {
        assert_eq!(
            kind("Embarked", &["S", "C", "Q", "S", "S", ""]),
            ColumnKind::Categorical
        );
    }

    #[test]
    fn dates_are_datetime() {
        assert_eq!(
            kind("when", &["2024-01-05", "2024-02-11", "2024-03-01", "2024-03-01"]),
            ColumnKind::Datetime
        );
        // 19 of 20 parse: exactly at the threshold.
        let mut v = vec!["2024-01-05"; 19];
        v.push("garbage");
        assert_eq!(kind("when", &v), ColumnKind::Datetime);
        let mut v = vec!["2024-01-05"; 18];
        v.extend(["garbage", "junk"]);
        assert_eq!(kind("when", &v), ColumnKind::Categorical);
    }

    #[test]
    fn uuid_values_are_ids() {
        assert_eq!(
            kind(
                "key",
                &[
                    "0b7f1c3e-2a4d-4a4e-9d7e-1f2a3b4c5d6e",
                    "7e1d2c3b-4a5f-4e6d-8c7b-9a8f7e6d5c4b"
                ]
            ),
            ColumnKind::Id
        );
    }

    #[test]
    fn null_fraction_and_distinct() {
        let p = profile_column("x", ["a", "", "a", "NA"].into_iter());
        assert_eq!(p.distinct_count, 1);
        assert!((p.null_fraction - 0.5).abs() < 1e-12);
        assert_eq!(p.sample_values, ["a"]);
    }

    #[test]
    fn eda_text_respects_budget() {
        let header: Vec<String> = (0..200).map(|i| format!("feature_{i}")).collect();
        let rows = vec![vec!["1".to_string(); 200]; 3];
        let t = TableHandle::from_rows("t.csv", TableFormat::Csv, header, rows);
        let eda = profile_with_budget(&t, 500);
        assert!(eda.text.chars().count() <= 500);
        assert!(eda.text.contains("EDA truncated"));
    }

    #[test]
    fn target_candidates_prefer_named_columns() {
        let t = TableHandle::from_rows(
            "t.csv",
            TableFormat::Csv,
            vec!["PassengerId".into(), "Survived".into(), "Fare".into()],
            vec![
                vec!["1".into(), "0".into(), "7.2".into()],
                vec!["2".into(), "1".into(), "8.1".into()],
            ],
        );
        let eda = profile(&t);
        assert_eq!(eda.target_candidates, ["Survived", "Fare"]);
    }

    proptest! {
        #[test]
        fn profile_is_pure_and_total(
            rows in proptest::collection::vec(
                proptest::collection::vec("[a-c0-9.\\-]{0,6}", 4), 0..30)
        ) {
            let header = vec!["a".to_string(), "b_id".into(), "c".into(), "d".into()];
            let t = TableHandle::from_rows("t.csv", TableFormat::Csv, header, rows);
            let first = profile(&t);
            let second = profile(&t);
            prop_assert_eq!(&first, &second);
            prop_assert_eq!(first.columns.len(), t.n_cols);
            for c in &first.columns {
                prop_assert!(c.distinct_count <= t.n_rows);
                prop_assert!((0.0..=1.0).contains(&c.null_fraction));
            }
        }
    }
}
