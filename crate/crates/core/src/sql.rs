//! SQL side of scoring: execution match against a read-only SQLite file,
//! token n-gram similarity, and column extraction for schema linking.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};

use crate::table::CellRef;

#[derive(Debug, thiserror::Error)]
pub enum SqlError {
    #[error("database unavailable: {0}")]
    DatabaseUnavailable(String),
    #[error("gold query failed: {0}")]
    GoldExecution(String),
    #[error("unparseable sql: {0}")]
    Unparseable(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecOptions {
    pub timeout: Duration,
    /// Compare result rows as ordered lists instead of bags.
    pub strict_order: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            strict_order: false,
        }
    }
}

/// Outcome of comparing a predicted query against the gold query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecMatch {
    pub matched: bool,
    pub diagnostic: Option<String>,
}

#[derive(Debug)]
enum QueryFailure {
    Timeout,
    Failed(String),
}

impl std::fmt::Display for QueryFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QueryFailure::Timeout => write!(f, "timeout"),
            QueryFailure::Failed(m) => write!(f, "{m}"),
        }
    }
}

pub fn open_readonly(path: &Path) -> Result<Connection, SqlError> {
    Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| SqlError::DatabaseUnavailable(format!("{}: {e}", path.display())))
}

fn single_statement(sql: &str) -> &str {
    sql.trim().trim_end_matches(|c: char| c == ';' || c.is_whitespace())
}

/// Type-tagged canonical text of one value. Integral reals collapse onto
/// integers; other reals keep 12 significant digits.
fn canonical_value(v: ValueRef<'_>) -> String {
    match v {
        ValueRef::Null => "null".into(),
        ValueRef::Integer(i) => format!("n:{i}"),
        ValueRef::Real(r) => {
            if r.is_finite() && r.fract() == 0.0 && r.abs() < 1e15 {
                format!("n:{}", r as i64)
            } else {
                format!("n:{r:.11e}")
            }
        }
        ValueRef::Text(t) => format!("s:{}", String::from_utf8_lossy(t)),
        ValueRef::Blob(b) => {
            let hex: String = b.iter().map(|x| format!("{x:02x}")).collect();
            format!("b:{hex}")
        }
    }
}

fn run_query(
    conn: &Connection,
    sql: &str,
    timeout: Duration,
) -> Result<Vec<Vec<String>>, QueryFailure> {
    let deadline = Instant::now() + timeout;
    conn.progress_handler(1_000, Some(move || Instant::now() > deadline));
    let result = (|| {
        let mut stmt = conn
            .prepare(single_statement(sql))
            .map_err(|e| QueryFailure::Failed(e.to_string()))?;
        let ncols = stmt.column_count();
        let mut rows = stmt.query([]).map_err(|e| QueryFailure::Failed(e.to_string()))?;
        let mut out = Vec::new();
        loop {
            match rows.next() {
                Ok(Some(row)) => {
                    let mut vals = Vec::with_capacity(ncols);
                    for i in 0..ncols {
                        let v = row
                            .get_ref(i)
                            .map_err(|e| QueryFailure::Failed(e.to_string()))?;
                        vals.push(canonical_value(v));
                    }
                    out.push(vals);
                }
                Ok(None) => break,
                Err(rusqlite::Error::SqliteFailure(e, _))
                    if e.code == rusqlite::ErrorCode::OperationInterrupted =>
                {
                    return Err(QueryFailure::Timeout)
                }
                Err(e) => return Err(QueryFailure::Failed(e.to_string())),
            }
        }
        Ok(out)
    })();
    conn.progress_handler(0, None::<fn() -> bool>);
    result
}

/// Executes gold then prediction on `db`. Prediction failures (syntax,
/// runtime, timeout) are a mismatch with a diagnostic; gold failures are
/// an error because they indicate a broken fixture.
pub fn execution_match(
    pred_sql: &str,
    gold_sql: &str,
    db: &Path,
    opts: &ExecOptions,
) -> Result<ExecMatch, SqlError> {
    let conn = open_readonly(db)?;
    execution_match_on(&conn, pred_sql, gold_sql, opts)
}

pub fn execution_match_on(
    conn: &Connection,
    pred_sql: &str,
    gold_sql: &str,
    opts: &ExecOptions,
) -> Result<ExecMatch, SqlError> {
    let mut gold =
        run_query(conn, gold_sql, opts.timeout).map_err(|e| SqlError::GoldExecution(e.to_string()))?;
    let mut pred = match run_query(conn, pred_sql, opts.timeout) {
        Ok(rows) => rows,
        Err(QueryFailure::Timeout) => {
            return Ok(ExecMatch {
                matched: false,
                diagnostic: Some("pred_timeout".into()),
            })
        }
        Err(QueryFailure::Failed(m)) => {
            return Ok(ExecMatch {
                matched: false,
                diagnostic: Some(format!("pred_error: {m}")),
            })
        }
    };
    if !opts.strict_order {
        gold.sort_unstable();
        pred.sort_unstable();
    }
    Ok(ExecMatch {
        matched: gold == pred,
        diagnostic: None,
    })
}

// ---------------------------------------------------------------- tokens

const KEYWORDS: &[&str] = &[
    "ALL", "AND", "AS", "ASC", "AVG", "BETWEEN", "BY", "CASE", "CAST", "COUNT", "CROSS", "DESC",
    "DISTINCT", "ELSE", "END", "EXCEPT", "EXISTS", "FROM", "FULL", "GLOB", "GROUP", "HAVING",
    "IFNULL", "IIF", "IN", "INNER", "INTERSECT", "IS", "JOIN", "LEFT", "LIKE", "LIMIT", "MAX",
    "MIN", "NATURAL", "NOT", "NULL", "OFFSET", "ON", "OR", "ORDER", "OUTER", "RIGHT", "SELECT",
    "SUBSTR", "SUM", "THEN", "UNION", "USING", "WHEN", "WHERE", "WITH", "ROUND", "ABS", "LENGTH",
    "LOWER", "UPPER", "REAL", "INTEGER", "TEXT", "STRFTIME", "COALESCE", "INSTR", "RECURSIVE",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SqlToken {
    Keyword(String),
    Ident(String),
    /// Quoted identifier, quotes removed.
    QuotedIdent(String),
    Str(String),
    Number(String),
    Punct(String),
}

impl SqlToken {
    pub fn text(&self) -> &str {
        match self {
            SqlToken::Keyword(s)
            | SqlToken::Ident(s)
            | SqlToken::QuotedIdent(s)
            | SqlToken::Str(s)
            | SqlToken::Number(s)
            | SqlToken::Punct(s) => s,
        }
    }

    fn ident(&self) -> Option<&str> {
        match self {
            SqlToken::Ident(s) | SqlToken::QuotedIdent(s) => Some(s),
            _ => None,
        }
    }
}

fn is_keyword(word: &str) -> bool {
    let up = word.to_ascii_uppercase();
    KEYWORDS.contains(&up.as_str())
}

/// Lexes SQL into tokens; keywords are uppercased, identifiers keep their
/// case, comments are dropped. Unterminated quotes run to end of input.
pub fn tokenize_sql(sql: &str) -> Vec<SqlToken> {
    let chars: Vec<char> = sql.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let take_until = |start: usize, close: char, chars: &[char]| -> (String, usize) {
        let mut j = start;
        let mut s = String::new();
        while j < chars.len() {
            if chars[j] == close {
                if close == '\'' && chars.get(j + 1) == Some(&'\'') {
                    s.push('\'');
                    j += 2;
                    continue;
                }
                return (s, j + 1);
            }
            s.push(chars[j]);
            j += 1;
        }
        (s, j)
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i < chars.len() && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                i += 1;
            }
            i = (i + 2).min(chars.len());
        } else if c == '\'' {
            let (s, next) = take_until(i + 1, '\'', &chars);
            out.push(SqlToken::Str(format!("'{s}'")));
            i = next;
        } else if c == '"' || c == '`' || c == '[' {
            let close = if c == '[' { ']' } else { c };
            let (s, next) = take_until(i + 1, close, &chars);
            out.push(SqlToken::QuotedIdent(s));
            i = next;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            out.push(SqlToken::Number(chars[start..i].iter().collect()));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            if is_keyword(&word) {
                out.push(SqlToken::Keyword(word.to_ascii_uppercase()));
            } else {
                out.push(SqlToken::Ident(word));
            }
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            if matches!(two.as_str(), "<=" | ">=" | "<>" | "!=" | "==" | "||") {
                out.push(SqlToken::Punct(two));
                i += 2;
            } else {
                out.push(SqlToken::Punct(c.to_string()));
                i += 1;
            }
        }
    }
    out
}

fn ngram_set(tokens: &[&str], n: usize) -> HashSet<Vec<String>> {
    tokens
        .windows(n)
        .map(|w| w.iter().map(|s| s.to_string()).collect())
        .collect()
}

/// Jaccard similarity of token n-gram sets. Falls back to unigrams when
/// either statement has fewer than `n` tokens; 0 when both are empty.
pub fn ngram_similarity(pred_sql: &str, gold_sql: &str, n: usize) -> f64 {
    let p = tokenize_sql(pred_sql);
    let g = tokenize_sql(gold_sql);
    let p: Vec<&str> = p.iter().map(SqlToken::text).collect();
    let g: Vec<&str> = g.iter().map(SqlToken::text).collect();
    let n = if n == 0 || p.len() < n || g.len() < n { 1 } else { n };
    let a = ngram_set(&p, n);
    let b = ngram_set(&g, n);
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

// ---------------------------------------------------------------- schema linking

/// Table name -> column names, as declared in the database.
pub fn read_schema(conn: &Connection) -> Result<Vec<(String, Vec<String>)>, SqlError> {
    let unavailable = |e: rusqlite::Error| SqlError::DatabaseUnavailable(e.to_string());
    let mut stmt = conn
        .prepare("SELECT name FROM sqlite_master WHERE type IN ('table','view') AND name NOT LIKE 'sqlite_%' ORDER BY name")
        .map_err(unavailable)?;
    let names: Vec<String> = stmt
        .query_map([], |r| r.get(0))
        .map_err(unavailable)?
        .collect::<Result<_, _>>()
        .map_err(unavailable)?;
    let mut out = Vec::new();
    for name in names {
        let mut info = conn
            .prepare(&format!("PRAGMA table_info(\"{}\")", name.replace('"', "\"\"")))
            .map_err(unavailable)?;
        let cols: Vec<String> = info
            .query_map([], |r| r.get(1))
            .map_err(unavailable)?
            .collect::<Result<_, _>>()
            .map_err(unavailable)?;
        out.push((name, cols));
    }
    Ok(out)
}

/// Column identifiers referenced by `gold_sql`, as column-only refs in
/// first-mention order. Qualified names resolve through table aliases; a
/// bare `*` expands to every column of every referenced table.
pub fn sql_schema_positions(gold_sql: &str, db: &Path) -> Result<Vec<CellRef>, SqlError> {
    let conn = open_readonly(db)?;
    conn.prepare(single_statement(gold_sql))
        .map_err(|e| SqlError::Unparseable(e.to_string()))?;
    let schema = read_schema(&conn)?;
    Ok(columns_in_sql(gold_sql, &schema))
}

pub fn columns_in_sql(sql: &str, schema: &[(String, Vec<String>)]) -> Vec<CellRef> {
    let tokens = tokenize_sql(sql);
    let table_idx: HashMap<String, usize> = schema
        .iter()
        .enumerate()
        .map(|(i, (n, _))| (n.to_lowercase(), i))
        .collect();

    // referenced tables and their aliases
    let mut referenced: Vec<usize> = Vec::new();
    let mut alias: HashMap<String, usize> = HashMap::new();
    for (k, tok) in tokens.iter().enumerate() {
        let Some(name) = tok.ident() else { continue };
        let Some(&t) = table_idx.get(&name.to_lowercase()) else { continue };
        if tokens.get(k + 1).is_some_and(|n| n.text() == ".") {
            continue;
        }
        if !referenced.contains(&t) {
            referenced.push(t);
        }
        alias.insert(name.to_lowercase(), t);
        let mut next = k + 1;
        if matches!(tokens.get(next), Some(SqlToken::Keyword(kw)) if kw == "AS") {
            next += 1;
        }
        if let Some(a) = tokens.get(next).and_then(SqlToken::ident) {
            alias.insert(a.to_lowercase(), t);
        }
    }

    let find_col = |t: usize, name: &str| -> Option<String> {
        schema[t]
            .1
            .iter()
            .find(|c| c.eq_ignore_ascii_case(name))
            .cloned()
    };

    let mut out: Vec<CellRef> = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |col: String, out: &mut Vec<CellRef>| {
        if seen.insert(col.to_lowercase()) {
            out.push(CellRef::column(col));
        }
    };
    for (k, tok) in tokens.iter().enumerate() {
        let prev_dot = k >= 1 && tokens[k - 1].text() == ".";
        let qualifier = if prev_dot && k >= 2 {
            tokens[k - 2]
                .ident()
                .and_then(|q| alias.get(&q.to_lowercase()).copied())
        } else {
            None
        };
        if tok.text() == "*" && matches!(tok, SqlToken::Punct(_)) {
            let prev = if k >= 1 { tokens[k - 1].text() } else { "" };
            if let Some(t) = qualifier {
                for c in &schema[t].1 {
                    push(c.clone(), &mut out);
                }
            } else if matches!(prev, "SELECT" | "," | "DISTINCT") {
                for &t in &referenced {
                    for c in &schema[t].1 {
                        push(c.clone(), &mut out);
                    }
                }
            }
            continue;
        }
        let Some(name) = tok.ident() else { continue };
        if tokens.get(k + 1).is_some_and(|n| n.text() == ".") {
            continue;
        }
        let hit = match qualifier {
            Some(t) => find_col(t, name),
            None => referenced.iter().find_map(|&t| find_col(t, name)),
        };
        if let Some(col) = hit {
            push(col, &mut out);
        }
    }
    out
}
