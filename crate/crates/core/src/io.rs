//! Artifact files: CSV with `#` provenance lines, write-once semantics.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Ordered `key=value` pairs written as `# key=value` lines ahead of the CSV header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance(Vec<(String, String)>);

impl Provenance {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.push((key.to_owned(), value.to_string()));
        self
    }

    pub fn extend(mut self, other: &Provenance) -> Self {
        self.0.extend(other.0.iter().cloned());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn render(&self, out: &mut Vec<u8>) {
        for (k, v) in &self.0 {
            out.extend_from_slice(format!("# {k}={v}\n").as_bytes());
        }
    }

    fn parse_line(&mut self, line: &str) {
        if let Some((k, v)) = line.trim_start_matches('#').trim().split_once('=') {
            self.0.push((k.trim().to_owned(), v.trim().to_owned()));
        }
    }
}

/// Renders a CSV document (LF line endings) with provenance comments.
pub fn render_csv<I, R>(provenance: &Provenance, header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut buf = Vec::new();
    provenance.render(&mut buf);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(buf);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes `bytes` to `path` unless an artifact is already there. Re-writing
/// identical bytes is a no-op; different bytes are refused.
pub fn write_once(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Ok(existing) = fs::read(path) {
        return if existing == bytes {
            Ok(())
        } else {
            Err(Error::ArtifactExists(path.to_owned()))
        };
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Parsed CSV: provenance comments, header, and rows with their 1-based line numbers.
#[derive(Debug, Clone)]
pub struct CsvDocument {
    pub path: PathBuf,
    pub provenance: Provenance,
    pub header: Vec<String>,
    pub rows: Vec<(u64, Vec<String>)>,
}

impl CsvDocument {
    pub fn parse_error(&self, line: u64, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    pub fn parse_f64(&self, line: u64, field: &str) -> Result<f64> {
        let v: f64 = field
            .trim()
            .parse()
            .map_err(|_| self.parse_error(line, format!("`{field}` is not a number")))?;
        if !v.is_finite() {
            return Err(self.parse_error(line, format!("`{field}` is not finite")));
        }
        Ok(v)
    }
}

pub fn read_csv(path: &Path) -> Result<CsvDocument> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingArtifact(path.to_owned())),
        Err(e) => return Err(e.into()),
    };
    let mut provenance = Provenance::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        provenance.parse_line(line);
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.iter().map(str::to_owned).collect::<Vec<_>>();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                path: path.to_owned(),
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((line, record.iter().map(str::to_owned).collect()));
    }
    Ok(CsvDocument {
        path: path.to_owned(),
        provenance,
        header,
        rows,
    })
}

/// Shortest decimal representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
