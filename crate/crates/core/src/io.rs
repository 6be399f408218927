//! JSON Lines readers and writers for every file format in the pipeline.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::doc::Document;
use crate::error::{Error, Result};
use crate::labels::{LabelSet, ValueRecord};

/// Non-blank lines with 1-based line numbers.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn write_lines<I, S>(path: &Path, lines: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        w.write_all(line.as_ref().as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn parse_jsonl<T: DeserializeOwned>(lines: &[(usize, String)]) -> Result<Vec<T>> {
    lines
        .iter()
        .map(|(n, l)| serde_json::from_str(l).map_err(|source| Error::Parse { line: *n, source }))
        .collect()
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<String> {
    items
        .iter()
        .map(|t| serde_json::to_string(t).expect("record serializes"))
        .collect()
}

pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    let docs = read_lines(path)?
        .iter()
        .map(|(n, l)| Document::parse(l, *n))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.context(path.display()))?;
    let mut seen = std::collections::HashSet::new();
    for d in &docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::validation(format!(
                "{}: duplicate doc_id {}",
                path.display(),
                d.doc_id
            )));
        }
    }
    Ok(docs)
}

pub fn write_documents(path: &Path, docs: &[Document]) -> Result<()> {
    write_lines(path, docs.iter().map(Document::to_json_line))
}

pub fn read_values(path: &Path) -> Result<Vec<ValueRecord>> {
    parse_jsonl(&read_lines(path)?).map_err(|e| e.context(path.display()))
}

pub fn write_values(path: &Path, values: &[ValueRecord]) -> Result<()> {
    write_lines(path, to_jsonl(values))
}

pub fn read_labels(path: &Path, corpus: &[Document]) -> Result<LabelSet> {
    let lines = read_lines(path)?;
    LabelSet::from_json_lines(lines.iter().map(|(n, l)| (*n, l.as_str())), corpus)
        .map_err(|e| e.context(path.display()))
}

pub fn write_labels(path: &Path, labels: &LabelSet) -> Result<()> {
    write_lines(path, labels.to_json_lines())
}
