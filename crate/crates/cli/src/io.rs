//! JSONL reading and writing with provenance trailers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

/// Key of the last record in every JSONL output.
pub const TRAILER_KEY: &str = "_trailer";

/// Records handed to workers at a time; bounds memory on large corpora.
pub const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
}

/// Reads the trailer of a JSONL file, if it has one, without scanning the
/// whole file.
pub fn peek_trailer(path: &Path) -> Result<Option<Provenance>, CliError> {
    let mut f = File::open(path).map_err(CliError::io(format!("open {}", path.display())))?;
    let len = f.metadata().map_err(CliError::io("stat"))?.len();
    let mut back = 4096u64;
    loop {
        let start = len.saturating_sub(back);
        f.seek(SeekFrom::Start(start)).map_err(CliError::io("seek"))?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf).map_err(CliError::io("read"))?;
        let text = String::from_utf8_lossy(&buf);
        let trimmed = text.trim_end();
        match trimmed.rfind('\n') {
            Some(i) => return Ok(parse_trailer(&trimmed[i + 1..])),
            None if start == 0 => return Ok(parse_trailer(trimmed)),
            None => back *= 4,
        }
    }
}

fn parse_trailer(line: &str) -> Option<Provenance> {
    let v: Value = serde_json::from_str(line).ok()?;
    serde_json::from_value(v.get(TRAILER_KEY)?.clone()).ok()
}

/// Rejects a set of inputs whose trailers name different config hashes.
pub fn check_provenance(paths: &[&Path]) -> Result<(), CliError> {
    let mut seen: Option<String> = None;
    for p in paths {
        if let Some(t) = peek_trailer(p)? {
            match &seen {
                Some(h) if *h != t.config_hash => {
                    return Err(CliError::MixedConfig(h.clone(), t.config_hash));
                }
                _ => seen = Some(t.config_hash),
            }
        }
    }
    Ok(())
}

/// Line-numbered JSONL record stream. Blank lines and trailers are skipped.
pub struct JsonlReader<T> {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: DeserializeOwned> JsonlReader<T> {
    pub fn open(path: &Path) -> Result<Self, CliError> {
        let f = File::open(path).map_err(CliError::io(format!("open {}", path.display())))?;
        Ok(Self {
            path: path.to_path_buf(),
            lines: BufReader::new(f).lines(),
            line: 0,
            _marker: std::marker::PhantomData,
        })
    }

    fn schema(&self, message: impl Into<String>) -> CliError {
        CliError::Schema {
            path: self.path.clone(),
            line: self.line,
            message: message.into(),
        }
    }

    /// Next `(line number, raw line, record)`.
    pub fn next_record(&mut self) -> Option<Result<(usize, String, T), CliError>> {
        loop {
            let raw = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.line += 1;
                    return Some(Err(self.schema(format!("unreadable line: {e}"))));
                }
            };
            self.line += 1;
            let raw = raw.strip_prefix('\u{feff}').map(str::to_string).unwrap_or(raw);
            if raw.trim().is_empty() {
                continue;
            }
            let value: Value = match serde_json::from_str(&raw) {
                Ok(v) => v,
                Err(e) => return Some(Err(self.schema(e.to_string()))),
            };
            if value.get(TRAILER_KEY).is_some() {
                continue;
            }
            return Some(match serde_json::from_value(value) {
                Ok(r) => Ok((self.line, raw, r)),
                Err(e) => Err(self.schema(e.to_string())),
            });
        }
    }

    /// Up to `n` records; empty at end of input.
    pub fn next_chunk(&mut self, n: usize) -> Result<Vec<(usize, String, T)>, CliError> {
        let mut out = Vec::with_capacity(n.min(CHUNK));
        while out.len() < n {
            match self.next_record() {
                Some(r) => out.push(r?),
                None => break,
            }
        }
        Ok(out)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_all<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, CliError> {
    let mut r = JsonlReader::open(path)?;
    let mut out = Vec::new();
    while let Some(rec) = r.next_record() {
        let (line, _, v) = rec?;
        out.push((line, v));
    }
    Ok(out)
}

/// Buffered output file written beside its destination and renamed into
/// place on [`OutFile::commit`], so a failed run never leaves a partial
/// file under the final name.
pub struct OutFile {
    tmp: PathBuf,
    dest: PathBuf,
    w: Option<BufWriter<File>>,
}

impl OutFile {
    pub fn create(dest: &Path) -> Result<Self, CliError> {
        if let Some(dir) = dest.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(CliError::io(format!("create {}", dir.display())))?;
        }
        let mut name = dest.file_name().unwrap_or_default().to_os_string();
        name.push(".partial");
        let tmp = dest.with_file_name(name);
        let f = File::create(&tmp).map_err(CliError::io(format!("create {}", tmp.display())))?;
        Ok(Self {
            tmp,
            dest: dest.to_path_buf(),
            w: Some(BufWriter::new(f)),
        })
    }

    pub fn write_str(&mut self, s: &str) -> Result<(), CliError> {
        let w = self.w.as_mut().expect("writer lives until commit");
        w.write_all(s.as_bytes()).map_err(CliError::io("write"))
    }

    pub fn write_line(&mut self, s: &str) -> Result<(), CliError> {
        self.write_str(s)?;
        self.write_str("\n")
    }

    pub fn write_json<T: Serialize>(&mut self, v: &T) -> Result<(), CliError> {
        let s = serde_json::to_string(v).map_err(|e| CliError::Other(e.to_string()))?;
        self.write_line(&s)
    }

    /// Writes `{"_trailer": {...provenance, ...extra}}` as the last line.
    pub fn write_trailer(&mut self, prov: &Provenance, extra: Value) -> Result<(), CliError> {
        let mut body = serde_json::to_value(prov).expect("provenance serializes");
        if let (Value::Object(b), Value::Object(e)) = (&mut body, extra) {
            b.extend(e);
        }
        self.write_json(&serde_json::json!({ TRAILER_KEY: body }))
    }

    pub fn commit(mut self) -> Result<(), CliError> {
        let mut w = self.w.take().expect("writer lives until commit");
        w.flush().map_err(CliError::io("flush"))?;
        drop(w);
        std::fs::rename(&self.tmp, &self.dest).map_err(CliError::io(format!("rename to {}", self.dest.display())))
    }
}

impl Drop for OutFile {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.tmp);
    }
}

/// Writes a pretty JSON document (trailing newline) atomically.
pub fn write_json_file<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let mut f = OutFile::create(path)?;
    let s = serde_json::to_string_pretty(v).map_err(|e| CliError::Other(e.to_string()))?;
    f.write_line(&s)?;
    f.commit()
}
