//! Header-addressed TSV reading with per-row diagnostics, plus JSONL helpers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing column {column:?}")]
    MissingColumn { path: String, column: String },
    #[error("{path}:{line}: {message}")]
    Row { path: String, line: usize, message: String },
}

/// A rejected input row.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct RowDiagnostic {
    pub file: String,
    pub line: usize,
    pub message: String,
}

pub struct Table {
    pub path: String,
    headers: Vec<String>,
    pub rows: Vec<Row>,
}

pub struct Row {
    pub line: usize,
    fields: Vec<String>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, TableError> {
        let display = path.display().to_string();
        let file = File::open(path).map_err(|source| TableError::Io {
            path: display.clone(),
            source,
        })?;
        Self::from_reader(&display, file)
    }

    pub fn from_reader<R: std::io::Read>(name: &str, reader: R) -> Result<Self, TableError> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .flexible(true)
            .quoting(false)
            .comment(Some(b'#'))
            .from_reader(reader);
        let io_err = |e: csv::Error| TableError::Io {
            path: name.to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
        };
        let headers = rdr
            .headers()
            .map_err(io_err)?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(io_err)?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.iter().all(|f| f.trim().is_empty()) {
                continue;
            }
            rows.push(Row {
                line,
                fields: record.iter().map(|f| f.trim().to_string()).collect(),
            });
        }
        Ok(Self {
            path: name.to_string(),
            headers,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize, TableError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TableError::MissingColumn {
                path: self.path.clone(),
                column: name.to_string(),
            })
    }

    pub fn optional_column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn width(&self) -> usize {
        self.headers.len()
    }

    pub fn diagnostic(&self, row: &Row, message: impl Into<String>) -> RowDiagnostic {
        RowDiagnostic {
            file: self.path.clone(),
            line: row.line,
            message: message.into(),
        }
    }
}

impl Row {
    pub fn get(&self, idx: usize) -> &str {
        self.fields.get(idx).map_or("", String::as_str)
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

pub fn parse_f64(raw: &str, what: &str) -> Result<f64, String> {
    let v: f64 = raw
        .parse()
        .map_err(|_| format!("{what}: cannot parse {raw:?} as a number"))?;
    if !v.is_finite() {
        return Err(format!("{what}: non-finite value {raw:?}"));
    }
    Ok(v)
}

pub fn parse_optional_f64(raw: &str, what: &str) -> Result<Option<f64>, String> {
    match raw {
        "" | "NA" | "-" | "nan" | "NaN" => Ok(None),
        _ => parse_f64(raw, what).map(Some),
    }
}

pub fn parse_flag(raw: &str, what: &str) -> Result<bool, String> {
    match raw.to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" => Ok(true),
        "0" | "false" | "f" | "no" => Ok(false),
        _ => Err(format!("{what}: expected 0/1, got {raw:?}")),
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, TableError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| TableError::Io {
        path: display.clone(),
        source,
    })?;
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| TableError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| TableError::Row {
            path: display.clone(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}
