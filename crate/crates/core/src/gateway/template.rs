//! Prompt templates with `{name}` placeholders.
//!
//! Bodies are parsed once into literal text and placeholders. Two placeholder
//! forms are recognised:
//!
//! * `{name}` is a required binding;
//! * `{"prefix" + name if name else ""}` renders `prefix` followed by the
//!   value when `name` is bound to non-empty text, and nothing otherwise.
//!
//! Any other brace is literal text. Substitution is literal: a bound value is
//! never scanned for placeholders.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::LlmError;

/// Placeholder name to bound text.
pub type Bindings = BTreeMap<String, String>;

/// Builds [`Bindings`] from `(name, value)` pairs.
pub fn bind<I, K, V>(pairs: I) -> Bindings
where
    I: IntoIterator<Item = (K, V)>,
    K: Into<String>,
    V: Into<String>,
{
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}

/// A rendered prompt, tagged with the template it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub template_id: String,
    pub text: String,
}

impl Prompt {
    pub fn new(template_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            template_id: template_id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Var(String),
    Conditional { prefix: String, name: String },
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub template_id: String,
    pub body: String,
    pub required_bindings: BTreeSet<String>,
    pub optional_bindings: BTreeSet<String>,
    pieces: Vec<Piece>,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"\{(?:([A-Za-z_][A-Za-z0-9_]*)|"([^"{}]*)" \+ ([A-Za-z_][A-Za-z0-9_]*) if ([A-Za-z_][A-Za-z0-9_]*) else "")\}"#,
        )
        .expect("placeholder pattern")
    })
}

impl PromptTemplate {
    pub fn parse(template_id: impl Into<String>, body: impl Into<String>) -> Self {
        let template_id = template_id.into();
        let body = body.into();
        let mut pieces = Vec::new();
        let mut required = BTreeSet::new();
        let mut optional = BTreeSet::new();
        let mut last = 0;
        for caps in placeholder_re().captures_iter(&body) {
            let whole = caps.get(0).unwrap();
            let piece = if let Some(name) = caps.get(1) {
                required.insert(name.as_str().to_string());
                Piece::Var(name.as_str().to_string())
            } else {
                let (value_name, test_name) = (&caps[3], &caps[4]);
                if value_name != test_name {
                    // Not a form we understand; keep it as text.
                    continue;
                }
                optional.insert(value_name.to_string());
                Piece::Conditional {
                    prefix: caps[2].to_string(),
                    name: value_name.to_string(),
                }
            };
            if whole.start() > last {
                pieces.push(Piece::Text(body[last..whole.start()].to_string()));
            }
            pieces.push(piece);
            last = whole.end();
        }
        if last < body.len() {
            pieces.push(Piece::Text(body[last..].to_string()));
        }
        Self {
            template_id,
            body,
            required_bindings: required,
            optional_bindings: optional,
            pieces,
        }
    }

    pub fn render(&self, bindings: &Bindings) -> Result<Prompt, LlmError> {
        if let Some(missing) = self
            .required_bindings
            .iter()
            .find(|name| !bindings.contains_key(name.as_str()))
        {
            return Err(LlmError::MissingBinding(missing.clone()));
        }
        let mut out = String::with_capacity(self.body.len());
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Var(name) => out.push_str(&bindings[name]),
                Piece::Conditional { prefix, name } => {
                    if let Some(v) = bindings.get(name).filter(|v| !v.is_empty()) {
                        out.push_str(prefix);
                        out.push_str(v);
                    }
                }
            }
        }
        Ok(Prompt::new(self.template_id.clone(), out))
    }
}

#[derive(Debug, Deserialize)]
struct Manifest {
    template: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    id: String,
    file: String,
    suffix: Option<String>,
    sha256: Option<String>,
}

const BUILTIN_MANIFEST: &str = include_str!("../../assets/prompts/manifest.toml");

const BUILTIN_FILES: &[(&str, &str)] = &[
    (
        "fedot_solution.txt",
        include_str!("../../assets/prompts/fedot_solution.txt"),
    ),
    (
        "automl_config.txt",
        include_str!("../../assets/prompts/automl_config.txt"),
    ),
    (
        "automl_router.txt",
        include_str!("../../assets/prompts/automl_router.txt"),
    ),
    (
        "fix_solution.txt",
        include_str!("../../assets/prompts/fix_solution.txt"),
    ),
    (
        "automl_params.txt",
        include_str!("../../assets/prompts/automl_params.txt"),
    ),
    (
        "problem_reflection.txt",
        include_str!("../../assets/prompts/problem_reflection.txt"),
    ),
    ("reporter.txt", include_str!("../../assets/prompts/reporter.txt")),
    ("dispatch.txt", include_str!("../../assets/prompts/dispatch.txt")),
    ("interact.txt", include_str!("../../assets/prompts/interact.txt")),
    ("plan.txt", include_str!("../../assets/prompts/plan.txt")),
    (
        "generate_solution.txt",
        include_str!("../../assets/prompts/generate_solution.txt"),
    ),
    (
        "summarize_step.txt",
        include_str!("../../assets/prompts/summarize_step.txt"),
    ),
    (
        "router_request.txt",
        include_str!("../../assets/prompts/router_request.txt"),
    ),
    (
        "params_format.txt",
        include_str!("../../assets/prompts/params_format.txt"),
    ),
];

/// The set of prompt templates available to a gateway, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct TemplateRegistry {
    templates: HashMap<String, PromptTemplate>,
}

impl TemplateRegistry {
    /// Templates compiled into the crate.
    pub fn builtin() -> Self {
        let files: HashMap<&str, &str> = BUILTIN_FILES.iter().copied().collect();
        Self::from_manifest(BUILTIN_MANIFEST, |name| {
            files
                .get(name)
                .map(|s| s.to_string())
                .ok_or_else(|| LlmError::TemplateAsset(format!("missing asset {name}")))
        })
        .expect("builtin prompt assets are consistent")
    }

    /// Loads `manifest.toml` and the files it names from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, LlmError> {
        let manifest = std::fs::read_to_string(dir.join("manifest.toml"))
            .map_err(|e| LlmError::TemplateAsset(format!("{}: {e}", dir.display())))?;
        Self::from_manifest(&manifest, |name| {
            std::fs::read_to_string(dir.join(name)).map_err(|e| LlmError::TemplateAsset(format!("{name}: {e}")))
        })
    }

    fn from_manifest(manifest: &str, read: impl Fn(&str) -> Result<String, LlmError>) -> Result<Self, LlmError> {
        let manifest: Manifest = toml::from_str(manifest).map_err(|e| LlmError::TemplateAsset(e.to_string()))?;
        let mut templates = HashMap::new();
        for entry in manifest.template {
            let mut body = read(&entry.file)?;
            if let Some(expected) = &entry.sha256 {
                let actual = hex::encode(Sha256::digest(body.as_bytes()));
                if !actual.eq_ignore_ascii_case(expected) {
                    return Err(LlmError::TemplateAsset(format!(
                        "{} does not match its pinned digest (expected {expected}, found {actual})",
                        entry.file
                    )));
                }
            }
            if let Some(suffix) = &entry.suffix {
                body.push_str(&read(suffix)?);
            }
            templates.insert(entry.id.clone(), PromptTemplate::parse(entry.id, body));
        }
        Ok(Self { templates })
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.template_id.clone(), template);
    }

    pub fn get(&self, template_id: &str) -> Result<&PromptTemplate, LlmError> {
        self.templates
            .get(template_id)
            .ok_or_else(|| LlmError::UnknownTemplate(template_id.to_string()))
    }

    pub fn ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.templates.keys().map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }

    pub fn render(&self, template_id: &str, bindings: &Bindings) -> Result<Prompt, LlmError> {
        self.get(template_id)?.render(bindings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn automl_config_renders_all_four_values() {
        let reg = TemplateRegistry::builtin();
        let p = reg
            .render(
                "automl_config",
                &bind([
                    ("task", "predict house sale price"),
                    ("file_name", "train.csv"),
                    ("df_columns", "Id, LotArea, SalePrice"),
                    ("df_head", "Id LotArea SalePrice\n1 8450 208500"),
                ]),
            )
            .unwrap();
        assert!(p.text.contains("User's task: predict house sale price"));
        assert!(p.text.contains("File name: train.csv"));
        assert!(p.text.contains("Column names: Id, LotArea, SalePrice"));
        assert!(p.text.contains("1 8450 208500"));
        assert_eq!(p.template_id, "automl_config");
    }

    #[test]
    fn fix_solution_requires_stderr() {
        let reg = TemplateRegistry::builtin();
        let err = reg
            .render(
                "fix_solution",
                &bind([
                    ("reflection", "r"),
                    ("dataset_path", "data/train.csv"),
                    ("code_recent_solution", "print(1)"),
                    ("stdout", ""),
                ]),
            )
            .unwrap_err();
        assert!(matches!(err, LlmError::MissingBinding(name) if name == "stderr"));
    }

    #[test]
    fn fix_solution_execution_message_is_conditional() {
        let reg = TemplateRegistry::builtin();
        let mut b = bind([
            ("reflection", "r"),
            ("dataset_path", "data/train.csv"),
            ("code_recent_solution", "print(1)"),
            ("stdout", "out"),
            ("stderr", "err"),
        ]);
        let without = reg.render("fix_solution", &b).unwrap();
        assert!(!without.text.contains("Execution Message"));
        assert!(!without.text.contains("msg"));

        b.insert("msg".into(), "metric below baseline".into());
        let with = reg.render("fix_solution", &b).unwrap();
        assert!(with.text.contains("# Execution Message: metric below baseline"));
    }

    #[test]
    fn reporter_keeps_outline_headers() {
        let reg = TemplateRegistry::builtin();
        let p = reg
            .render(
                "reporter",
                &bind([("pipeline", "p"), ("code", "print(1)"), ("metrics", "auc: 0.81")]),
            )
            .unwrap();
        for header in [
            "**Overview**",
            "**Data Preprocessing**",
            "**Pipeline Summary**",
            "**Code Highlights:**",
            "**Metrics**",
            "**Takeaways**",
        ] {
            assert!(p.text.contains(header), "missing {header}");
        }
        assert!(p.text.contains("auc: 0.81"));
    }

    #[test]
    fn router_prompt_carries_the_query() {
        let reg = TemplateRegistry::builtin();
        let p = reg
            .render("automl_router", &bind([("query", "solve this with LightAutoML")]))
            .unwrap();
        assert!(p.text.starts_with("You are an experienced machine learning developer"));
        assert!(p.text.ends_with("User's request: solve this with LightAutoML\n"));
    }

    #[test]
    fn unknown_template() {
        let reg = TemplateRegistry::builtin();
        assert!(matches!(
            reg.render("nope", &Bindings::new()),
            Err(LlmError::UnknownTemplate(_))
        ));
    }

    #[test]
    fn substitution_is_not_recursive() {
        let t = PromptTemplate::parse("t", "a {x} b {y}");
        let p = t.render(&bind([("x", "{y}"), ("y", "Y")])).unwrap();
        assert_eq!(p.text, "a {y} b Y");
    }

    #[test]
    fn unrecognised_braces_are_literal() {
        let t = PromptTemplate::parse("t", "{\"a\": 1} {x} { spaced }");
        assert_eq!(t.required_bindings.len(), 1);
        assert_eq!(t.render(&bind([("x", "X")])).unwrap().text, "{\"a\": 1} X { spaced }");
    }

    #[test]
    fn digest_drift_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("manifest.toml"),
            "[[template]]\nid = \"x\"\nfile = \"x.txt\"\nsha256 = \"00\"\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("x.txt"), "hello {name}").unwrap();
        assert!(matches!(
            TemplateRegistry::from_dir(dir.path()),
            Err(LlmError::TemplateAsset(_))
        ));
    }

    proptest! {
        #[test]
        fn every_required_placeholder_is_substituted(
            values in proptest::collection::vec("[a-zA-Z0-9 .,:\n-]{0,40}", 7)
        ) {
            let reg = TemplateRegistry::builtin();
            for id in reg.ids() {
                let t = reg.get(id).unwrap();
                let b: Bindings = t
                    .required_bindings
                    .iter()
                    .chain(t.optional_bindings.iter())
                    .enumerate()
                    .map(|(i, name)| (name.clone(), values[i % values.len()].clone()))
                    .collect();
                let p = t.render(&b).unwrap();
                for name in t.required_bindings.iter().chain(t.optional_bindings.iter()) {
                    let fragment = format!("{{{name}}}");
                    prop_assert!(!p.text.contains(&fragment), "{id}: {fragment} survived");
                }
                prop_assert!(!p.text.contains("if msg else"));
            }
        }
    }
}
