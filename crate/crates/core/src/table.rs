//! Table model, text formats, seeded perturbation and cell lookup.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::rng::DetRng;
use crate::text::normalize_cell;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TableError {
    #[error("empty input")]
    EmptyInput,
    #[error("row {row} has {found} cells, header has {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("header cell {0} is empty")]
    EmptyHeader(usize),
    #[error("format `{0}` cannot be used here")]
    UnsupportedFormat(String),
    #[error("invalid table json: {0}")]
    Json(String),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    #[default]
    Markdown,
    Csv,
    Dataframe,
    JsonGrid,
}

impl SourceFormat {
    pub fn parse(name: &str) -> Result<Self, TableError> {
        match name {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "dataframe" => Ok(Self::Dataframe),
            "json" | "json_grid" => Ok(Self::JsonGrid),
            other => Err(TableError::UnsupportedFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    #[serde(default)]
    pub source_format: SourceFormat,
}

/// Non-fatal issue found while parsing in lenient mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub row: usize,
    pub message: String,
}

/// A `(cell, column)` evidence reference. `cell` is `None` for column-only
/// references.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<String>,
    pub column: String,
}

impl CellRef {
    pub fn cell(cell: impl Into<String>, column: impl Into<String>) -> Self {
        Self {
            cell: Some(cell.into()),
            column: column.into(),
        }
    }

    pub fn column(column: impl Into<String>) -> Self {
        Self {
            cell: None,
            column: column.into(),
        }
    }

    /// Normalized comparison key (lowercase, trimmed, whitespace collapsed).
    pub fn key(&self) -> CellRef {
        CellRef {
            cell: self.cell.as_deref().map(normalize_cell),
            column: normalize_cell(&self.column),
        }
    }

    pub fn column_only(&self) -> CellRef {
        CellRef::column(self.column.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    Column,
    Row,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub mode: PerturbMode,
    pub seed: u64,
}

const COLUMN_STREAM: u64 = 1;
const ROW_STREAM: u64 = 2;

impl Table {
    /// Builds a table and checks the structural invariants.
    pub fn new(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, TableError> {
        let t = Table {
            title: None,
            header,
            rows,
            source_format: SourceFormat::Markdown,
        };
        t.validate()?;
        Ok(t)
    }

    /// Table with a multi-level header; levels are given top to bottom and
    /// joined per column with `" / "`, skipping blank levels and levels that
    /// repeat the one directly above (spanning cells).
    pub fn from_header_levels(
        levels: &[Vec<String>],
        rows: Vec<Vec<String>>,
    ) -> Result<Self, TableError> {
        Table::new(flatten_header_levels(levels), rows)
    }

    pub fn validate(&self) -> Result<(), TableError> {
        for (i, h) in self.header.iter().enumerate() {
            if h.trim().is_empty() {
                return Err(TableError::EmptyHeader(i));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.header.len() {
                return Err(TableError::RaggedRow {
                    row: i,
                    expected: self.header.len(),
                    found: row.len(),
                });
            }
        }
        Ok(())
    }

    pub fn n_cols(&self) -> usize {
        self.header.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Form a table takes after a lossless text round trip: cells and
    /// header trimmed, internal newlines turned into spaces, no title.
    pub fn canonicalize(&self, format: SourceFormat) -> Table {
        let clean = |s: &String| s.replace(['\r', '\n'], " ").trim().to_string();
        Table {
            title: None,
            header: self.header.iter().map(clean).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(clean).collect())
                .collect(),
            source_format: format,
        }
    }

    /// All cell texts, row-major.
    pub fn cells(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().flat_map(|r| r.iter().map(String::as_str))
    }

    pub fn column_values(&self, col: usize) -> Vec<&str> {
        self.rows.iter().map(|r| r[col].as_str()).collect()
    }

    pub fn serialize(&self, format: SourceFormat) -> Result<String, TableError> {
        match format {
            SourceFormat::Markdown => Ok(to_markdown(self)),
            SourceFormat::Csv => to_csv(self),
            SourceFormat::Dataframe => Ok(to_dataframe(self)),
            SourceFormat::JsonGrid => Ok(table_to_json(self).to_string()),
        }
    }

    pub fn perturb(&self, spec: PerturbationSpec) -> Table {
        perturb(self, spec)
    }

    pub fn contains(&self, r: &CellRef) -> bool {
        contains_cell(self, r)
    }
}

pub(crate) fn flatten_header_levels(levels: &[Vec<String>]) -> Vec<String> {
    let width = levels.iter().map(Vec::len).max().unwrap_or(0);
    (0..width)
        .map(|c| {
            let mut parts: Vec<&str> = Vec::new();
            for level in levels {
                let t = level.get(c).map(|s| s.trim()).unwrap_or("");
                if !t.is_empty() && parts.last() != Some(&t) {
                    parts.push(t);
                }
            }
            parts.join(" / ")
        })
        .collect()
}

// ---------------------------------------------------------------- markdown

/// Splits one pipe-table line into trimmed cells, honouring `\|` escapes.
fn split_pipe_row(line: &str) -> Vec<String> {
    let mut body = line.trim();
    body = body.strip_prefix('|').unwrap_or(body);
    // a trailing pipe closes the row unless it is escaped
    if body.ends_with('|') && !body.ends_with("\\|") {
        body = &body[..body.len() - 1];
    }
    let mut cells = Vec::new();
    let mut cur = String::new();
    let mut chars = body.chars().peekable();
    while let Some(ch) = chars.next() {
        match ch {
            '\\' if chars.peek() == Some(&'|') => {
                cur.push('|');
                chars.next();
            }
            '|' => cells.push(std::mem::take(&mut cur).trim().to_string()),
            _ => cur.push(ch),
        }
    }
    cells.push(cur.trim().to_string());
    cells
}

fn is_separator_row(cells: &[String]) -> bool {
    !cells.is_empty()
        && cells.iter().all(|c| {
            let c = c.trim();
            c.contains('-') && c.chars().all(|ch| matches!(ch, '-' | ':' | ' '))
        })
}

/// Parses a markdown pipe table. In lenient mode ragged rows are padded
/// with empty cells (or truncated) and reported as warnings; in strict mode
/// they are an error.
pub fn parse_markdown_table(
    text: &str,
    strict: bool,
) -> Result<(Table, Vec<ParseWarning>), TableError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines.next().ok_or(TableError::EmptyInput)?;
    let header = split_pipe_row(header_line);
    for (i, h) in header.iter().enumerate() {
        if h.is_empty() {
            return Err(TableError::EmptyHeader(i));
        }
    }
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in lines.enumerate() {
        let mut cells = split_pipe_row(line);
        if idx == 0 && is_separator_row(&cells) {
            continue;
        }
        let row = rows.len();
        if cells.len() != header.len() {
            if strict {
                return Err(TableError::RaggedRow {
                    row,
                    expected: header.len(),
                    found: cells.len(),
                });
            }
            warnings.push(ParseWarning {
                row,
                message: format!("{} cells, header has {}", cells.len(), header.len()),
            });
            cells.resize(header.len(), String::new());
        }
        rows.push(cells);
    }
    Ok((
        Table {
            title: None,
            header,
            rows,
            source_format: SourceFormat::Markdown,
        },
        warnings,
    ))
}

fn md_cell(s: &str) -> String {
    s.replace(['\r', '\n'], " ").trim().replace('|', "\\|")
}

fn to_markdown(t: &Table) -> String {
    let mut out = String::new();
    let line = |cells: &mut dyn Iterator<Item = String>| {
        let mut l = String::from("|");
        for c in cells {
            l.push(' ');
            l.push_str(&c);
            l.push_str(" |");
        }
        l.push('\n');
        l
    };
    out.push_str(&line(&mut t.header.iter().map(|h| md_cell(h))));
    out.push_str(&line(&mut t.header.iter().map(|_| "---".to_string())));
    for r in &t.rows {
        out.push_str(&line(&mut r.iter().map(|c| md_cell(c))));
    }
    out
}

// ---------------------------------------------------------------- csv

fn to_csv(t: &Table) -> Result<String, TableError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .flexible(true)
        .from_writer(Vec::new());
    let err = |e: csv::Error| TableError::Csv(e.to_string());
    w.write_record(&t.header).map_err(err)?;
    for r in &t.rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| TableError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| TableError::Csv(e.to_string()))
}

/// Parses RFC-4180 CSV, first record as header. Cells are trimmed.
pub fn parse_csv_table(text: &str, strict: bool) -> Result<(Table, Vec<ParseWarning>), TableError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();
    let header: Vec<String> = match records.next() {
        Some(r) => r
            .map_err(|e| TableError::Csv(e.to_string()))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect(),
        None => return Err(TableError::EmptyInput),
    };
    if let Some(i) = header.iter().position(|h| h.is_empty()) {
        return Err(TableError::EmptyHeader(i));
    }
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| TableError::Csv(e.to_string()))?;
        let mut cells: Vec<String> = rec.iter().map(|s| s.trim().to_string()).collect();
        if cells.len() != header.len() {
            if strict {
                return Err(TableError::RaggedRow {
                    row: rows.len(),
                    expected: header.len(),
                    found: cells.len(),
                });
            }
            warnings.push(ParseWarning {
                row: rows.len(),
                message: format!("{} cells, header has {}", cells.len(), header.len()),
            });
            cells.resize(header.len(), String::new());
        }
        rows.push(cells);
    }
    Ok((
        Table {
            title: None,
            header,
            rows,
            source_format: SourceFormat::Csv,
        },
        warnings,
    ))
}

// ---------------------------------------------------------------- dataframe

fn width(s: &str) -> usize {
    s.chars().count()
}

fn pad_left(out: &mut String, s: &str, w: usize) {
    for _ in width(s)..w {
        out.push(' ');
    }
    out.push_str(s);
}

/// Pandas-like text: right-aligned integer index from 0, two-space column
/// gaps, each column as wide as its widest entry (header included).
fn to_dataframe(t: &Table) -> String {
    let clean = |s: &str| s.replace(['\r', '\n'], " ");
    let index_w = t
        .rows
        .len()
        .checked_sub(1)
        .map(|last| last.to_string().len())
        .unwrap_or(0);
    let widths: Vec<usize> = (0..t.n_cols())
        .map(|c| {
            t.rows
                .iter()
                .map(|r| width(&clean(&r[c])))
                .chain(std::iter::once(width(&clean(&t.header[c]))))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    out.push_str(&" ".repeat(index_w));
    for (h, w) in t.header.iter().zip(&widths) {
        out.push_str("  ");
        pad_left(&mut out, &clean(h), *w);
    }
    out.push('\n');
    for (i, r) in t.rows.iter().enumerate() {
        let _ = write!(out, "{:>index_w$}", i);
        for (c, w) in r.iter().zip(&widths) {
            out.push_str("  ");
            pad_left(&mut out, &clean(c), *w);
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------- json grid

#[derive(Deserialize)]
#[serde(untagged)]
enum HeaderSpec {
    Flat(Vec<String>),
    Levels(Vec<Vec<String>>),
}

#[derive(Deserialize)]
struct GridRecord {
    #[serde(default)]
    title: Option<String>,
    header: HeaderSpec,
    #[serde(default)]
    rows: Vec<Vec<serde_json::Value>>,
}

fn cell_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Ingests a JSON grid `{"title":?, "header":[...], "rows":[[...]]}`.
/// `header` may also be a list of header levels (list of lists), which is
/// flattened with `" / "`. Non-string cells are kept as their JSON text.
pub fn table_from_json(value: &serde_json::Value) -> Result<Table, TableError> {
    let rec: GridRecord =
        serde_json::from_value(value.clone()).map_err(|e| TableError::Json(e.to_string()))?;
    let header = match rec.header {
        HeaderSpec::Flat(h) => h,
        HeaderSpec::Levels(levels) => flatten_header_levels(&levels),
    };
    let rows = rec
        .rows
        .iter()
        .map(|r| r.iter().map(cell_text).collect())
        .collect();
    let mut t = Table::new(header, rows)?;
    t.title = rec.title;
    t.source_format = SourceFormat::JsonGrid;
    Ok(t)
}

pub fn table_to_json(t: &Table) -> serde_json::Value {
    let mut m = serde_json::Map::new();
    if let Some(title) = &t.title {
        m.insert("title".into(), title.clone().into());
    }
    m.insert("header".into(), t.header.clone().into());
    m.insert(
        "rows".into(),
        serde_json::Value::Array(t.rows.iter().map(|r| r.clone().into()).collect()),
    );
    serde_json::Value::Object(m)
}

// ---------------------------------------------------------------- perturbation

/// Row and/or column permutation driven by the pinned generator. Columns
/// are permuted first (stream 1), then rows (stream 2).
pub fn perturb(table: &Table, spec: PerturbationSpec) -> Table {
    let mut out = table.clone();
    if matches!(spec.mode, PerturbMode::Column | PerturbMode::Both) {
        let perm = DetRng::substream(spec.seed, COLUMN_STREAM).permutation(table.n_cols());
        out.header = perm.iter().map(|&c| table.header[c].clone()).collect();
        out.rows = out
            .rows
            .iter()
            .map(|r| perm.iter().map(|&c| r[c].clone()).collect())
            .collect();
    }
    if matches!(spec.mode, PerturbMode::Row | PerturbMode::Both) {
        let perm = DetRng::substream(spec.seed, ROW_STREAM).permutation(out.n_rows());
        let rows = std::mem::take(&mut out.rows);
        out.rows = perm.iter().map(|&i| rows[i].clone()).collect();
    }
    out
}

// ---------------------------------------------------------------- lookup

pub fn contains_cell(table: &Table, r: &CellRef) -> bool {
    let col = normalize_cell(&r.column);
    if col.is_empty() {
        return false;
    }
    let cols: Vec<usize> = table
        .header
        .iter()
        .enumerate()
        .filter(|(_, h)| normalize_cell(h) == col)
        .map(|(i, _)| i)
        .collect();
    if cols.is_empty() {
        return false;
    }
    match &r.cell {
        None => true,
        Some(cell) => {
            let cell = normalize_cell(cell);
            table
                .rows
                .iter()
                .any(|row| cols.iter().any(|&c| normalize_cell(&row[c]) == cell))
        }
    }
}
