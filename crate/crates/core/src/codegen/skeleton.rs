//! Pipeline skeletons with frozen scaffolding and editable regions.
//!
//! A region is delimited by marker lines:
//!
//! ```text
//! ### BEGIN FROZEN: io ###
//! ...
//! ### END FROZEN: io ###
//! ### BEGIN USER CODE: modeling ###
//! ...
//! ### END USER CODE: modeling ###
//! ```
//!
//! Everything outside USER CODE bodies is protected: frozen regions, the
//! USER CODE marker lines themselves and any text between regions.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SkeletonError {
    #[error("line {line}: region `{label}` opened inside region `{open}`")]
    Nested { line: usize, label: String, open: String },
    #[error("line {line}: end marker for `{label}` does not close an open region")]
    UnmatchedEnd { line: usize, label: String },
    #[error("region `{0}` is never closed")]
    Unclosed(String),
    #[error("region label `{0}` appears more than once")]
    DuplicateLabel(String),
    #[error("no USER CODE region named `{0}`")]
    UnknownRegion(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionKind {
    Frozen,
    UserCode,
}

impl RegionKind {
    fn marker_word(self) -> &'static str {
        match self {
            Self::Frozen => "FROZEN",
            Self::UserCode => "USER CODE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub kind: RegionKind,
    pub label: String,
    /// Byte offset of the begin marker line.
    pub start: usize,
    /// Byte offset just past the end marker text (before its newline).
    pub end: usize,
    /// Byte range of the body between the two marker lines.
    pub body: (usize, usize),
}

pub fn begin_marker(kind: RegionKind, label: &str) -> String {
    format!("### BEGIN {}: {label} ###", kind.marker_word())
}

pub fn end_marker(kind: RegionKind, label: &str) -> String {
    format!("### END {}: {label} ###", kind.marker_word())
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^### (BEGIN|END) (FROZEN|USER CODE): ([A-Za-z0-9_.-]+) ###[ \t]*$").unwrap())
}

/// Offset of the first occurrence of `needle` at or after `from` that starts
/// and ends on line boundaries (indentation before it is allowed).
fn find_lines(hay: &str, needle: &str, from: usize) -> Option<usize> {
    let mut start = from;
    while let Some(rel) = hay[start..].find(needle) {
        let at = start + rel;
        let line_start = hay[..at].rfind('\n').map_or(0, |i| i + 1);
        let head_ok = hay[line_start..at].chars().all(|c| c == ' ' || c == '\t');
        let end = at + needle.len();
        let tail_ok = hay[end..].split('\n').next().is_some_and(|rest| rest.trim().is_empty());
        if head_ok && tail_ok {
            return Some(at);
        }
        start = at + needle.chars().next().map_or(1, char::len_utf8);
    }
    None
}

/// First protected span that `check_protected` could not find.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedViolation {
    pub region: String,
    pub detail: String,
}

impl fmt::Display for ProtectedViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "protected region `{}` {}", self.region, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    body: String,
    regions: Vec<Region>,
}

impl Skeleton {
    pub fn parse(text: &str) -> Result<Self, SkeletonError> {
        let body = text.replace("\r\n", "\n");
        let mut regions = Vec::new();
        let mut open: Option<(RegionKind, String, usize, usize)> = None;
        let mut offset = 0;
        for (idx, raw) in body.split_inclusive('\n').enumerate() {
            let line = raw.trim_end_matches('\n');
            let line_no = idx + 1;
            if let Some(c) = marker_re().captures(line) {
                let kind = if &c[2] == "FROZEN" {
                    RegionKind::Frozen
                } else {
                    RegionKind::UserCode
                };
                let label = c[3].to_string();
                if &c[1] == "BEGIN" {
                    if let Some((_, open_label, _, _)) = &open {
                        return Err(SkeletonError::Nested {
                            line: line_no,
                            label,
                            open: open_label.clone(),
                        });
                    }
                    if regions.iter().any(|r: &Region| r.label == label) {
                        return Err(SkeletonError::DuplicateLabel(label));
                    }
                    open = Some((kind, label, offset, offset + raw.len()));
                } else {
                    match open.take() {
                        Some((k, l, start, body_start)) if k == kind && l == label => {
                            regions.push(Region {
                                kind,
                                label,
                                start,
                                end: offset + line.len(),
                                body: (body_start, offset),
                            });
                        }
                        _ => return Err(SkeletonError::UnmatchedEnd { line: line_no, label }),
                    }
                }
            }
            offset += raw.len();
        }
        if let Some((_, label, _, _)) = open {
            return Err(SkeletonError::Unclosed(label));
        }
        Ok(Self { body, regions })
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn protected_regions(&self) -> impl Iterator<Item = &Region> {
        self.regions.iter().filter(|r| r.kind == RegionKind::Frozen)
    }

    pub fn user_regions(&self) -> Vec<&str> {
        self.regions
            .iter()
            .filter(|r| r.kind == RegionKind::UserCode)
            .map(|r| r.label.as_str())
            .collect()
    }

    pub fn region_text(&self, region: &Region) -> &str {
        &self.body[region.start..region.end]
    }

    pub fn region_body(&self, label: &str) -> Option<&str> {
        self.regions
            .iter()
            .find(|r| r.label == label)
            .map(|r| &self.body[r.body.0..r.body.1])
    }

    /// Replaces USER CODE bodies; regions not mentioned keep their text.
    pub fn fill(&self, bodies: &BTreeMap<String, String>) -> Result<String, SkeletonError> {
        for label in bodies.keys() {
            if !self
                .regions
                .iter()
                .any(|r| r.kind == RegionKind::UserCode && &r.label == label)
            {
                return Err(SkeletonError::UnknownRegion(label.clone()));
            }
        }
        let mut out = String::with_capacity(self.body.len());
        let mut cursor = 0;
        for r in &self.regions {
            let Some(text) = bodies.get(&r.label) else { continue };
            out.push_str(&self.body[cursor..r.body.0]);
            out.push_str(text);
            if !text.is_empty() && !text.ends_with('\n') {
                out.push('\n');
            }
            cursor = r.body.1;
        }
        out.push_str(&self.body[cursor..]);
        Ok(out)
    }

    /// Rebuilds the skeleton around the USER CODE bodies found in `code`.
    pub fn assemble(&self, code: &str) -> Result<String, SkeletonError> {
        let candidate = Skeleton::parse(code)?;
        let bodies = candidate
            .regions
            .iter()
            .filter(|r| r.kind == RegionKind::UserCode && self.user_regions().contains(&r.label.as_str()))
            .map(|r| (r.label.clone(), candidate.body[r.body.0..r.body.1].to_string()))
            .collect();
        self.fill(&bodies)
    }

    /// Protected spans in skeleton order, each with the name reported on a
    /// violation.
    fn protected_spans(&self) -> Vec<(String, &str)> {
        let mut spans = Vec::new();
        let mut cursor = 0;
        for r in &self.regions {
            spans.push((format!("text before `{}`", r.label), &self.body[cursor..r.start]));
            match r.kind {
                RegionKind::Frozen => spans.push((r.label.clone(), &self.body[r.start..r.end])),
                RegionKind::UserCode => {
                    spans.push((format!("{} begin marker", r.label), &self.body[r.start..r.body.0]));
                    spans.push((format!("{} end marker", r.label), &self.body[r.body.1..r.end]));
                }
            }
            cursor = r.end;
        }
        spans.push(("text after the last region".to_string(), &self.body[cursor..]));
        spans
    }

    /// Checks that every protected span occurs byte-identically in `code`, in
    /// skeleton order. Leading and trailing whitespace of a span is ignored.
    pub fn check_protected(&self, code: &str) -> Result<(), ProtectedViolation> {
        let code = code.replace("\r\n", "\n");
        let mut pos = 0;
        for (name, span) in self.protected_spans() {
            let span = span.trim();
            if span.is_empty() {
                continue;
            }
            match find_lines(&code, span, pos) {
                Some(at) => pos = at + span.len(),
                None => {
                    let detail = if find_lines(&code, span, 0).is_some() {
                        "appears out of order".to_string()
                    } else {
                        "was modified or removed".to_string()
                    };
                    return Err(ProtectedViolation { region: name, detail });
                }
            }
        }
        Ok(())
    }
}
