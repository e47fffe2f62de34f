//! Task reflection and build planning.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ColumnKind, EdaProfile, TableHandle};
use crate::gateway::{bind, Gateway, LlmError};
use crate::metrics::Metric;

#[derive(Debug, Error)]
pub enum ReflectionError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("task description is empty")]
    EmptyDescription,
    #[error("reflection is missing sections: {}", .0.iter().map(|s| s.title()).collect::<Vec<_>>().join(", "))]
    SectionMissing(Vec<Section>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Section {
    Overview,
    Files,
    ProblemDefinition,
    DataInformation,
    TargetVariable,
    EvaluationMetrics,
    SubmissionFormat,
    OtherAspects,
}

impl Section {
    pub const ALL: [Section; 8] = [
        Section::Overview,
        Section::Files,
        Section::ProblemDefinition,
        Section::DataInformation,
        Section::TargetVariable,
        Section::EvaluationMetrics,
        Section::SubmissionFormat,
        Section::OtherAspects,
    ];

    pub fn title(self) -> &'static str {
        match self {
            Self::Overview => "Competition Overview",
            Self::Files => "Files",
            Self::ProblemDefinition => "Problem Definition",
            Self::DataInformation => "Data Information",
            Self::TargetVariable => "Target Variable",
            Self::EvaluationMetrics => "Evaluation Metrics",
            Self::SubmissionFormat => "Submission Format",
            Self::OtherAspects => "Other Key Aspects",
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        match self {
            Self::Overview => &["competition overview", "overview"],
            Self::Files => &["files", "data files", "file analysis"],
            Self::ProblemDefinition => &["problem definition"],
            Self::DataInformation => &["data information", "data info"],
            Self::TargetVariable => &["target variable", "target"],
            Self::EvaluationMetrics => &["evaluation metrics", "evaluation metric", "metrics", "metric"],
            Self::SubmissionFormat => &["submission format", "submission"],
            Self::OtherAspects => &["other key aspects", "other aspects", "other considerations"],
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReflection {
    pub overview: Option<String>,
    pub files: Vec<(String, String)>,
    pub problem_definition: Option<String>,
    pub data_information: Option<String>,
    pub feature_classes: BTreeMap<String, ColumnKind>,
    /// `None` when no training column could be identified as the target.
    pub target_variable: Option<String>,
    /// `None` when the metric is not in the registry.
    pub evaluation_metric: Option<Metric>,
    pub submission_format: Option<String>,
    pub other_aspects: Option<String>,
    pub absent_sections: BTreeSet<Section>,
    pub raw_text: String,
}

impl TaskReflection {
    pub fn is_resolved(&self) -> bool {
        self.target_variable.is_some() && self.evaluation_metric.is_some()
    }

    /// Question put to the user when the target or metric is unresolved.
    pub fn clarification(&self) -> Option<String> {
        match (&self.target_variable, &self.evaluation_metric) {
            (Some(_), Some(_)) => None,
            (None, Some(_)) => {
                Some("I could not tell which column should be predicted. Which column is the target?".into())
            }
            (Some(t), None) => Some(format!(
                "The target is `{t}`, but I could not identify a supported evaluation metric. \
                 Which metric should be used (accuracy, auc, f1, logloss, r2-score, rmse, rmsle, mae)?"
            )),
            (None, None) => Some(
                "I could not identify the target column or the evaluation metric. \
                 Which column should be predicted, and how should predictions be scored?"
                    .into(),
            ),
        }
    }

    /// Text bound to `{reflection}` in downstream prompts.
    pub fn prompt_text(&self) -> String {
        let mut text = self.raw_text.trim().to_string();
        text.push_str("\n\n# Resolved task settings\n");
        if let Some(t) = &self.target_variable {
            text.push_str(&format!("Target column: {t}\n"));
        }
        if let Some(m) = self.evaluation_metric {
            text.push_str(&format!("Validation metric: {m}\n"));
        }
        text
    }

    pub fn id_columns(&self) -> Vec<&str> {
        self.feature_classes
            .iter()
            .filter(|(_, k)| **k == ColumnKind::Id)
            .map(|(c, _)| c.as_str())
            .collect()
    }
}

fn heading_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^[ \t>]*(?P<hashes>#{1,6})?[ \t]*(?P<b1>\*\*|__)?[ \t]*(?:(?P<num>\d{1,2})[.)][ \t]*)?(?P<b2>\*\*|__)?[ \t]*(?P<rest>.*)$")
            .unwrap()
    })
}

/// Recognises a section heading; returns the section and inline content.
fn match_heading(line: &str) -> Option<(Section, String)> {
    let c = heading_re().captures(line)?;
    let numbered = c.name("num");
    let marked = c.name("hashes").is_some() || c.name("b1").is_some() || c.name("b2").is_some();
    if numbered.is_none() && !marked {
        return None;
    }
    let rest = c.name("rest").map_or("", |m| m.as_str());
    let lower = rest.to_lowercase();
    for section in Section::ALL {
        for alias in section.aliases() {
            if let Some(after) = lower.strip_prefix(alias) {
                // The alias must end at a word boundary.
                if after.chars().next().is_some_and(|ch| ch.is_alphanumeric()) {
                    continue;
                }
                if let Some(n) = numbered {
                    let n: usize = n.as_str().parse().ok()?;
                    let expected = Section::ALL.iter().position(|s| *s == section).unwrap() + 1;
                    if n != expected {
                        continue;
                    }
                }
                let inline = rest[alias.len()..]
                    .trim_start_matches(|ch: char| ch == '*' || ch == '_' || ch == ':' || ch.is_whitespace())
                    .trim_end_matches(['*', '_', ' ', '\t']);
                return Some((section, inline.to_string()));
            }
        }
    }
    None
}

/// Splits an analysis into the eight sections by heading.
pub fn split_sections(text: &str) -> BTreeMap<Section, String> {
    let mut out: BTreeMap<Section, String> = BTreeMap::new();
    let mut current: Option<Section> = None;
    for line in text.lines() {
        if let Some((section, inline)) = match_heading(line) {
            if let std::collections::btree_map::Entry::Vacant(slot) = out.entry(section) {
                current = Some(section);
                slot.insert(inline);
                continue;
            }
        }
        if let Some(s) = current {
            let body = out.get_mut(&s).unwrap();
            if !body.is_empty() {
                body.push('\n');
            }
            body.push_str(line);
        }
    }
    out.into_iter()
        .map(|(k, v)| (k, v.trim().to_string()))
        .filter(|(_, v)| !v.is_empty())
        .collect()
}

fn word_positions(haystack: &str, needle: &str) -> Option<usize> {
    let mut start = 0;
    while let Some(pos) = haystack[start..].find(needle) {
        let at = start + pos;
        let before = haystack[..at].chars().next_back();
        let after = haystack[at + needle.len()..].chars().next();
        let ok = |c: Option<char>| c.is_none_or(|c| !(c.is_alphanumeric() || c == '_'));
        if ok(before) && ok(after) {
            return Some(at);
        }
        start = at + needle.len().max(1);
    }
    None
}

/// The table column mentioned earliest in `text`; longer names win ties.
fn first_column_mention<'a>(text: &str, columns: impl Iterator<Item = &'a str>) -> Option<String> {
    columns
        .filter_map(|c| word_positions(text, c).map(|p| (p, std::cmp::Reverse(c.len()), c)))
        .min()
        .map(|(_, _, c)| c.to_string())
}

fn file_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)([A-Za-z0-9_.-]+\.(?:csv|xlsx|xls|parquet|json|txt|md|zip))[`*_ ]*[:\-\u{2013}]+\s*(.+)$")
            .unwrap()
    })
}

fn kind_keyword(line: &str) -> Option<ColumnKind> {
    let l = line.to_lowercase();
    let head: String = l.chars().take(40).collect();
    if head.contains("id type") || head.contains("identifier") {
        Some(ColumnKind::Id)
    } else if head.contains("numerical") || head.contains("numeric") {
        Some(ColumnKind::Numerical)
    } else if head.contains("categorical") {
        Some(ColumnKind::Categorical)
    } else if head.contains("datetime") || head.contains("date type") {
        Some(ColumnKind::Datetime)
    } else {
        None
    }
}

fn feature_classes(data_info: Option<&str>, eda: &EdaProfile, target: Option<&str>) -> BTreeMap<String, ColumnKind> {
    let mut out: BTreeMap<String, ColumnKind> = BTreeMap::new();
    if let Some(text) = data_info {
        let mut kind = None;
        for line in text.lines() {
            if let Some(k) = kind_keyword(line) {
                kind = Some(k);
            } else if line.trim().to_lowercase().starts_with("4.2") {
                kind = None;
            }
            let Some(k) = kind else { continue };
            for col in &eda.columns {
                if Some(col.name.as_str()) != target
                    && !out.contains_key(&col.name)
                    && word_positions(line, &col.name).is_some()
                {
                    out.insert(col.name.clone(), k);
                }
            }
        }
    }
    for col in &eda.columns {
        if Some(col.name.as_str()) != target {
            out.entry(col.name.clone()).or_insert(col.inferred_kind);
        }
    }
    out
}

/// Builds a reflection from an analysis text, cross-checked against the table.
pub fn parse_reflection(text: &str, eda: &EdaProfile, table: &TableHandle) -> Result<TaskReflection, ReflectionError> {
    let sections = split_sections(text);
    let absent: BTreeSet<Section> = Section::ALL.into_iter().filter(|s| !sections.contains_key(s)).collect();
    if absent.len() > 2 {
        return Err(ReflectionError::SectionMissing(absent.into_iter().collect()));
    }
    let get = |s: Section| sections.get(&s).cloned();

    let target_variable =
        get(Section::TargetVariable).and_then(|t| first_column_mention(&t, table.header().iter().map(String::as_str)));
    let evaluation_metric = get(Section::EvaluationMetrics).and_then(|t| Metric::find_in_text(&t));

    let files = get(Section::Files)
        .map(|t| {
            t.lines()
                .filter_map(|l| {
                    file_line_re()
                        .captures(l)
                        .map(|c| (c[1].to_string(), c[2].trim().trim_matches('*').trim().to_string()))
                })
                .collect()
        })
        .unwrap_or_default();

    let feature_classes = feature_classes(
        sections.get(&Section::DataInformation).map(String::as_str),
        eda,
        target_variable.as_deref(),
    );

    if target_variable.is_none() {
        tracing::info!("reflection target is unresolved");
    }
    if evaluation_metric.is_none() {
        tracing::info!("reflection metric is unresolved");
    }
    Ok(TaskReflection {
        overview: get(Section::Overview),
        files,
        problem_definition: get(Section::ProblemDefinition),
        data_information: get(Section::DataInformation),
        feature_classes,
        target_variable,
        evaluation_metric,
        submission_format: get(Section::SubmissionFormat),
        other_aspects: get(Section::OtherAspects),
        absent_sections: absent,
        raw_text: text.to_string(),
    })
}

/// File listing bound into the analysis prompt.
pub fn file_inventory(table: &TableHandle, extra: &[(String, String)]) -> String {
    let mut text = format!(
        "{}: training data, {} rows x {} columns. Columns: {}\n",
        table.file_name(),
        table.n_rows,
        table.n_cols,
        table.header().join(", ")
    );
    for (name, summary) in extra {
        text.push_str(&format!("{name}: {summary}\n"));
    }
    text.push('\n');
    text.push_str(&table.head_text(5));
    text
}

/// Runs the analysis prompt and parses the response.
pub fn reflect(
    gateway: &Gateway,
    description: &str,
    inventory: &str,
    eda: &EdaProfile,
    table: &TableHandle,
) -> Result<TaskReflection, ReflectionError> {
    if description.trim().is_empty() {
        return Err(ReflectionError::EmptyDescription);
    }
    let prompt = gateway.render(
        "problem_reflection",
        &bind([
            (
                "data_files_and_content",
                format!("Task description:\n{}\n\nFiles:\n{}", description.trim(), inventory),
            ),
            ("dataset_eda", eda.text.clone()),
        ]),
    )?;
    let raw = gateway.complete(gateway.profile(), &prompt)?;
    parse_reflection(&raw, eda, table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RouteHint {
    Codegen,
    Automl,
    Either,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildPlan {
    pub steps: Vec<PlanStep>,
    pub route_hint: RouteHint,
}

impl BuildPlan {
    pub fn render(&self) -> String {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {}: {}", i + 1, s.name, s.description))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.steps.iter().position(|s| s.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    Preprocessing,
    Fitting,
    Validation,
    Submission,
}

impl Stage {
    const ALL: [Stage; 4] = [
        Stage::Preprocessing,
        Stage::Fitting,
        Stage::Validation,
        Stage::Submission,
    ];

    fn default_step(self) -> PlanStep {
        let (name, description) = match self {
            Self::Preprocessing => ("preprocessing", "Clean the features and encode categorical columns."),
            Self::Fitting => ("model_fitting", "Fit a model on the training split."),
            Self::Validation => ("validation", "Score the model on the 20% validation split."),
            Self::Submission => ("submission", "Write predictions to the submission file."),
        };
        PlanStep {
            name: name.into(),
            description: description.into(),
        }
    }

    fn of(step: &PlanStep) -> Option<Stage> {
        let text = format!("{} {}", step.name, step.description).to_lowercase();
        let name = step.name.to_lowercase();
        let has = |words: &[&str], s: &str| words.iter().any(|w| s.contains(w));
        const SUB: &[&str] = &["submission", "submit"];
        const VAL: &[&str] = &["validat", "evaluat", "score"];
        const FIT: &[&str] = &["fit", "train", "model"];
        const PRE: &[&str] = &["preprocess", "clean", "encod", "feature", "impute"];
        // The step name decides first; the description only breaks a miss.
        for s in [&name, &text] {
            if has(SUB, s) {
                return Some(Stage::Submission);
            }
            if has(VAL, s) {
                return Some(Stage::Validation);
            }
            if has(FIT, s) {
                return Some(Stage::Fitting);
            }
            if has(PRE, s) {
                return Some(Stage::Preprocessing);
            }
        }
        None
    }
}

fn plan_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*\d+[.)]\s*\**\s*`?([A-Za-z][A-Za-z0-9_ -]{0,60}?)`?\s*\**\s*:\s*(.+?)\s*$").unwrap()
    })
}

fn snake_case(name: &str) -> String {
    let mut out = String::new();
    for ch in name.trim().chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Parses numbered `name: description` lines into a plan that covers the
/// four required stages in order.
pub fn parse_plan(text: &str, reflection: &TaskReflection) -> BuildPlan {
    let mut steps: Vec<PlanStep> = Vec::new();
    for line in text.lines() {
        if let Some(c) = plan_line_re().captures(line) {
            let base = snake_case(&c[1]);
            if base.is_empty() {
                continue;
            }
            let mut name = base.clone();
            let mut n = 2;
            while steps.iter().any(|s| s.name == name) {
                name = format!("{base}_{n}");
                n += 1;
            }
            steps.push(PlanStep {
                name,
                description: c[2].to_string(),
            });
        }
    }

    for stage in Stage::ALL {
        if steps.iter().any(|s| Stage::of(s) == Some(stage)) {
            continue;
        }
        let at = steps
            .iter()
            .position(|s| Stage::of(s).is_some_and(|o| o > stage))
            .unwrap_or(steps.len());
        let mut step = stage.default_step();
        if steps.iter().any(|s| s.name == step.name) {
            step.name = format!("{}_step", step.name);
        }
        steps.insert(at, step);
    }
    // Submission steps go after the last validation step.
    let last_val = steps.iter().rposition(|s| Stage::of(s) == Some(Stage::Validation));
    if let Some(last_val) = last_val {
        let (early_sub, rest): (Vec<_>, Vec<_>) = steps
            .into_iter()
            .enumerate()
            .partition(|(i, s)| *i < last_val && Stage::of(s) == Some(Stage::Submission));
        steps = rest.into_iter().map(|(_, s)| s).collect();
        steps.extend(early_sub.into_iter().map(|(_, s)| s));
    }

    if let Some(question) = reflection.clarification() {
        steps.insert(
            0,
            PlanStep {
                name: if reflection.target_variable.is_none() {
                    "confirm_target".into()
                } else {
                    "confirm_metric".into()
                },
                description: format!("Ask the user (INTERACT): {question}"),
            },
        );
    }

    let hint_text = format!("{}\n{}", reflection.raw_text, text).to_lowercase();
    let route_hint = if ["automl", "auto-ml", "lightautoml", "fedot"]
        .iter()
        .any(|w| hint_text.contains(w))
    {
        RouteHint::Automl
    } else {
        RouteHint::Either
    };
    BuildPlan { steps, route_hint }
}

/// Asks the planner for build steps.
pub fn plan(gateway: &Gateway, reflection: &TaskReflection) -> Result<BuildPlan, ReflectionError> {
    let prompt = gateway.render("plan", &bind([("reflection", reflection.prompt_text())]))?;
    let raw = gateway.complete(gateway.profile(), &prompt)?;
    Ok(parse_plan(&raw, reflection))
}
