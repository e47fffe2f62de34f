//! Tabular dataset intake: loading, profiling, prompt rendering and the
//! hold-out split.
//!
//! Every format is read into the same representation: a header of unique
//! column names and rows of raw text cells. Typing happens later, in
//! [`profile`], so the loader never guesses.

mod profile;
mod split;

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use profile::parse_number;
pub use profile::{
    profile, profile_column, profile_with_budget, ColumnKind, ColumnProfile, EdaProfile, DEFAULT_EDA_BUDGET,
};
pub use split::{split_indices, split_train_val, Split};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unsupported format `{0}`")]
    UnsupportedFormat(String),
    #[error("parse error at {position}: {message}")]
    Parse { position: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("need at least 2 rows to split, found {0}")]
    TooFewRows(usize),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Xlsx,
    Parquet,
}

impl TableFormat {
    pub fn from_path(path: &Path) -> Result<Self, DatasetError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "csv" => Ok(Self::Csv),
            "xlsx" => Ok(Self::Xlsx),
            "parquet" => Ok(Self::Parquet),
            _ => Err(DatasetError::UnsupportedFormat(ext)),
        }
    }
}

impl fmt::Display for TableFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Xlsx => "xlsx",
            Self::Parquet => "parquet",
        })
    }
}

const NULL_TOKENS: &[&str] = &["", "NA", "N/A", "NaN", "nan", "NULL", "null", "None", "<NA>"];

pub fn is_null(cell: &str) -> bool {
    NULL_TOKENS.contains(&cell.trim())
}

/// A loaded table. Immutable once built.
#[derive(Debug, Clone)]
pub struct TableHandle {
    pub source_path: PathBuf,
    pub format: TableFormat,
    pub n_rows: usize,
    pub n_cols: usize,
    pub columns: Vec<ColumnProfile>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

/// Makes header names unique: blanks become `Unnamed: i`, repeats get `.1`,
/// `.2`, ... appended.
fn normalize_header(raw: Vec<String>) -> Vec<String> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::with_capacity(raw.len());
    for (i, name) in raw.into_iter().enumerate() {
        let base = match name.trim() {
            "" => format!("Unnamed: {i}"),
            t => t.to_string(),
        };
        let mut candidate = base.clone();
        while let Some(n) = seen.get_mut(&candidate) {
            *n += 1;
            candidate = format!("{base}.{n}");
        }
        seen.insert(candidate.clone(), 0);
        out.push(candidate);
    }
    out
}

fn fmt_float(v: f64) -> String {
    if v.is_finite() && v.trunc() == v && v.abs() < 1e16 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

impl TableHandle {
    pub fn from_rows(
        source_path: impl Into<PathBuf>,
        format: TableFormat,
        header: Vec<String>,
        rows: Vec<Vec<String>>,
    ) -> Self {
        let header = normalize_header(header);
        let n_cols = header.len();
        let rows: Vec<Vec<String>> = rows
            .into_iter()
            .map(|mut r| {
                r.resize(n_cols, String::new());
                r
            })
            .collect();
        let columns = header
            .iter()
            .enumerate()
            .map(|(i, name)| profile_column(name, rows.iter().map(|r| r[i].as_str())))
            .collect();
        Self {
            source_path: source_path.into(),
            format,
            n_rows: rows.len(),
            n_cols,
            columns,
            header,
            rows,
        }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column_values(&self, name: &str) -> Result<Vec<&str>, DatasetError> {
        let idx = self
            .column_index(name)
            .ok_or_else(|| DatasetError::UnknownColumn(name.to_string()))?;
        Ok(self.rows.iter().map(|r| r[idx].as_str()).collect())
    }

    pub fn file_name(&self) -> String {
        self.source_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    /// Writes the table as comma-separated text.
    pub fn write_csv(&self, path: &Path) -> Result<(), DatasetError> {
        self.write_csv_subset(path, None, &[])
    }

    /// Writes selected rows (all when `rows` is `None`) without the columns in
    /// `drop`.
    pub fn write_csv_subset(&self, path: &Path, rows: Option<&[usize]>, drop: &[&str]) -> Result<(), DatasetError> {
        let io = |e: std::io::Error| DatasetError::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let keep: Vec<usize> = (0..self.n_cols)
            .filter(|i| !drop.contains(&self.header[*i].as_str()))
            .collect();
        let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
        w.write_record(keep.iter().map(|i| &self.header[*i]))
            .map_err(|e| io(e.into()))?;
        let mut write_row = |r: &Vec<String>| {
            w.write_record(keep.iter().map(|i| r[*i].as_str()))
                .map_err(|e| io(e.into()))
        };
        match rows {
            Some(idx) => idx.iter().try_for_each(|i| write_row(&self.rows[*i]))?,
            None => self.rows.iter().try_for_each(&mut write_row)?,
        }
        w.flush().map_err(io)
    }

    /// Plain-text preview of the first `n` rows with aligned columns.
    ///
    /// Cells longer than 40 characters are cut to 40 and suffixed with `…`;
    /// nulls render as `NaN`. The layout is part of the prompt format and is
    /// kept stable.
    pub fn head_text(&self, n: usize) -> String {
        const MAX_CELL: usize = 40;
        let n = n.max(1).min(self.n_rows);
        let cell = |s: &str| -> String {
            let s = if is_null(s) { "NaN" } else { s };
            if s.chars().count() > MAX_CELL {
                let mut t: String = s.chars().take(MAX_CELL).collect();
                t.push('…');
                t
            } else {
                s.to_string()
            }
        };
        let mut grid: Vec<Vec<String>> = Vec::with_capacity(n + 1);
        grid.push(self.header.iter().map(|h| cell(h)).collect());
        grid.extend(self.rows[..n].iter().map(|r| r.iter().map(|c| cell(c)).collect()));
        let widths: Vec<usize> = (0..self.n_cols)
            .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &grid {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(v, w)| format!("{v:<w$}", w = *w))
                .collect();
            out.push_str(line.join(" | ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Loads a csv, xlsx or parquet file, chosen by extension.
pub fn load(path: &Path) -> Result<TableHandle, DatasetError> {
    let format = TableFormat::from_path(path)?;
    if !path.is_file() {
        return Err(DatasetError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a readable file"),
        });
    }
    let (header, rows) = match format {
        TableFormat::Csv => read_csv(path)?,
        TableFormat::Xlsx => read_xlsx(path)?,
        TableFormat::Parquet => read_parquet(path)?,
    };
    Ok(TableHandle::from_rows(path, format, header, rows))
}

/// Picks the delimiter among `,`, `;` and tab that occurs most often outside
/// quotes in the first line.
fn sniff_delimiter(first_line: &str) -> u8 {
    let mut counts = [0usize; 3];
    let mut in_quotes = false;
    for ch in first_line.chars() {
        match ch {
            '"' => in_quotes = !in_quotes,
            ',' if !in_quotes => counts[0] += 1,
            ';' if !in_quotes => counts[1] += 1,
            '\t' if !in_quotes => counts[2] += 1,
            _ => {}
        }
    }
    let candidates = *b",;\t";
    let best = (0..3).max_by_key(|i| (counts[*i], std::cmp::Reverse(*i))).unwrap();
    if counts[best] == 0 {
        b','
    } else {
        candidates[best]
    }
}

type RawTable = (Vec<String>, Vec<Vec<String>>);

fn read_csv(path: &Path) -> Result<RawTable, DatasetError> {
    let bytes = std::fs::read(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    if text.trim().is_empty() {
        return Err(DatasetError::Parse {
            position: "line 1".into(),
            message: "file is empty".into(),
        });
    }
    let delimiter = sniff_delimiter(text.lines().next().unwrap_or(""));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let parse_err = |e: csv::Error| {
        let position = e
            .position()
            .map(|p| format!("line {}", p.line()))
            .unwrap_or_else(|| "unknown position".into());
        DatasetError::Parse {
            position,
            message: e.to_string(),
        }
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(parse_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(parse_err)?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn read_xlsx(path: &Path) -> Result<RawTable, DatasetError> {
    use calamine::{open_workbook, Data, Reader, Xlsx};

    let parse_err = |message: String| DatasetError::Parse {
        position: "workbook".into(),
        message,
    };
    let mut wb: Xlsx<_> = open_workbook(path).map_err(|e: calamine::XlsxError| parse_err(e.to_string()))?;
    let range = wb
        .worksheet_range_at(0)
        .ok_or_else(|| parse_err("workbook has no sheets".into()))?
        .map_err(|e| parse_err(e.to_string()))?;
    let cell = |d: &Data| -> String {
        match d {
            Data::Empty | Data::Error(_) => String::new(),
            Data::Int(i) => i.to_string(),
            Data::Float(f) => fmt_float(*f),
            Data::String(s) | Data::DateTimeIso(s) | Data::DurationIso(s) => s.clone(),
            Data::Bool(b) => if *b { "True" } else { "False" }.to_string(),
            Data::DateTime(dt) => match dt.as_datetime() {
                Some(t) if t.time() == chrono::NaiveTime::MIN => t.date().to_string(),
                Some(t) => t.format("%Y-%m-%d %H:%M:%S").to_string(),
                None => fmt_float(dt.as_f64()),
            },
        }
    };
    let mut rows = range.rows();
    let header = match rows.next() {
        Some(h) => h.iter().map(cell).collect(),
        None => return Ok((Vec::new(), Vec::new())),
    };
    let rows = rows.map(|r| r.iter().map(cell).collect()).collect();
    Ok((header, rows))
}

fn read_parquet(path: &Path) -> Result<RawTable, DatasetError> {
    use parquet::file::reader::{FileReader, SerializedFileReader};
    use parquet::record::Field;

    let parse_err = |message: String| DatasetError::Parse {
        position: "parquet".into(),
        message,
    };
    let file = File::open(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let reader = SerializedFileReader::new(file).map_err(|e| parse_err(e.to_string()))?;
    let header: Vec<String> = reader
        .metadata()
        .file_metadata()
        .schema_descr()
        .root_schema()
        .get_fields()
        .iter()
        .map(|f| f.name().to_string())
        .collect();
    let cell = |f: &Field| -> String {
        match f {
            Field::Null => String::new(),
            Field::Str(s) => s.clone(),
            Field::Bytes(b) => String::from_utf8_lossy(b.data()).into_owned(),
            Field::Float(v) => fmt_float(*v as f64),
            Field::Double(v) => fmt_float(*v),
            Field::Bool(b) => if *b { "True" } else { "False" }.to_string(),
            other => other.to_string(),
        }
    };
    let mut rows = Vec::new();
    for row in reader.get_row_iter(None).map_err(|e| parse_err(e.to_string()))? {
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        rows.push(row.get_column_iter().map(|(_, f)| cell(f)).collect());
    }
    Ok((header, rows))
}
