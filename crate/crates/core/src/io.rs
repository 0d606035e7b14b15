//! Text and CSV file formats shared by the pipeline stages, plus the
//! buffered output set that is only written once a stage succeeds.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// First line of every emitted file.
pub fn header_line(tool: &str, config_hash: &str, seed: u64) -> String {
    format!("# pupilkit {tool} v{} config={config_hash} seed={seed}\n", env!("CARGO_PKG_VERSION"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses a headed CSV, skipping `#` comment lines.
pub fn parse_csv<T: DeserializeOwned>(bytes: &[u8], path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?);
    }
    Ok(out)
}

/// CSV text built row by row.
#[derive(Debug, Clone)]
pub struct CsvText {
    text: String,
}

impl CsvText {
    pub fn new(header: &str, columns: &[&str]) -> Self {
        CsvText { text: format!("{header}{}\n", columns.join(",")) }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: std::fmt::Display,
    {
        let cells: Vec<String> = fields.into_iter().map(|f| f.to_string()).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

/// Files staged in memory; [`Outputs::commit`] writes them all or none.
#[derive(Debug, Default)]
pub struct Outputs {
    files: BTreeMap<PathBuf, Vec<u8>>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.insert(path.into(), bytes.into());
    }

    pub fn get(&self, path: &Path) -> Option<&[u8]> {
        self.files.get(path).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PathBuf, &Vec<u8>)> {
        self.files.iter()
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Writes every file through a temporary sibling and renames it into
    /// place. On failure the files written so far are removed again.
    pub fn commit(&self) -> Result<()> {
        let mut done: Vec<&Path> = Vec::new();
        let result = (|| {
            for (path, bytes) in &self.files {
                if let Some(dir) = path.parent() {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                let tmp = path.with_extension("partial");
                fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
                fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
                done.push(path);
            }
            Ok(())
        })();
        if result.is_err() {
            for p in done {
                let _ = fs::remove_file(p);
            }
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(serde::Deserialize, Debug, PartialEq)]
    struct Row {
        a: u32,
        b: f64,
    }

    #[test]
    fn comments_are_skipped() {
        let text = b"# pupilkit x\na,b\n1,2.5\n# note\n3, 4\n";
        let rows: Vec<Row> = parse_csv(text, Path::new("t.csv")).unwrap();
        assert_eq!(rows, vec![Row { a: 1, b: 2.5 }, Row { a: 3, b: 4.0 }]);
        let bad = parse_csv::<Row>(b"a,b\nx,1\n", Path::new("t.csv")).unwrap_err();
        assert!(matches!(bad, Error::Parse { line: 2, .. }), "{bad}");
    }

    #[test]
    fn commit_writes_everything() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::new();
        out.add(dir.path().join("a/b.csv"), "x\n");
        out.add(dir.path().join("c.txt"), "y\n");
        out.commit().unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("a/b.csv")).unwrap(), "x\n");
        assert!(!dir.path().join("c.partial").exists());
    }
}
