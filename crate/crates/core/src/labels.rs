//! Word-level label sets, ground-truth annotations and extracted values.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::doc::Document;
use crate::error::{Error, Result};
use crate::schema::FieldSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Bootstrap,
    /// Refined from the predictions of branch `j` (1-based).
    Refined(usize),
    Truth,
    Predicted,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Bootstrap => f.write_str("bootstrap"),
            Provenance::Refined(j) => write!(f, "refined@branch_{j}"),
            Provenance::Truth => f.write_str("truth"),
            Provenance::Predicted => f.write_str("predicted"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bootstrap" => Ok(Provenance::Bootstrap),
            "truth" => Ok(Provenance::Truth),
            "predicted" => Ok(Provenance::Predicted),
            _ => s
                .strip_prefix("refined@branch_")
                .and_then(|j| j.parse().ok())
                .map(Provenance::Refined)
                .ok_or_else(|| Error::validation(format!("unknown provenance {s:?}"))),
        }
    }
}

/// Dense class labels for every word of one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocLabels {
    pub doc_id: String,
    pub labels: Vec<usize>,
}

impl DocLabels {
    pub fn background(doc: &Document) -> Self {
        DocLabels {
            doc_id: doc.doc_id.clone(),
            labels: vec![0; doc.words.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    pub provenance: Provenance,
    pub docs: Vec<DocLabels>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRecord {
    doc_id: String,
    labels: Vec<(usize, usize)>,
    provenance: String,
}

impl LabelSet {
    /// Checks alignment with a corpus: same documents, in order, same word counts,
    /// and classes within `0..=num_fields`.
    pub fn check_against(&self, corpus: &[Document], num_fields: usize) -> Result<()> {
        if self.docs.len() != corpus.len() {
            return Err(Error::validation(format!(
                "label set covers {} documents, corpus has {}",
                self.docs.len(),
                corpus.len()
            )));
        }
        for (l, d) in self.docs.iter().zip(corpus) {
            if l.doc_id != d.doc_id {
                return Err(Error::validation(format!(
                    "label set doc {} does not match corpus doc {}",
                    l.doc_id, d.doc_id
                )));
            }
            if l.labels.len() != d.words.len() {
                return Err(Error::validation(format!(
                    "doc {}: {} labels for {} words",
                    d.doc_id,
                    l.labels.len(),
                    d.words.len()
                )));
            }
            if let Some(c) = l.labels.iter().find(|&&c| c > num_fields) {
                return Err(Error::validation(format!(
                    "doc {}: class {c} out of range 0..={num_fields}",
                    d.doc_id
                )));
            }
        }
        Ok(())
    }

    /// Only non-background labels are written; absent words are class 0.
    pub fn to_json_lines(&self) -> Vec<String> {
        self.docs
            .iter()
            .map(|d| {
                let rec = LabelRecord {
                    doc_id: d.doc_id.clone(),
                    labels: d
                        .labels
                        .iter()
                        .enumerate()
                        .filter(|(_, &c)| c != 0)
                        .map(|(w, &c)| (w, c))
                        .collect(),
                    provenance: self.provenance.to_string(),
                };
                serde_json::to_string(&rec).expect("labels serialize")
            })
            .collect()
    }

    /// Reads label lines and expands them against `corpus`.
    pub fn from_json_lines<'a>(
        lines: impl IntoIterator<Item = (usize, &'a str)>,
        corpus: &[Document],
    ) -> Result<Self> {
        let mut by_id: BTreeMap<String, (Vec<(usize, usize)>, String)> = BTreeMap::new();
        for (line_no, line) in lines {
            let rec: LabelRecord = serde_json::from_str(line).map_err(|source| Error::Parse {
                line: line_no,
                source,
            })?;
            by_id.insert(rec.doc_id, (rec.labels, rec.provenance));
        }
        let mut provenance = None;
        let mut docs = Vec::with_capacity(corpus.len());
        for d in corpus {
            let (pairs, prov) = by_id
                .remove(&d.doc_id)
                .ok_or_else(|| Error::validation(format!("no labels for doc {}", d.doc_id)))?;
            let prov: Provenance = prov.parse()?;
            if *provenance.get_or_insert(prov) != prov {
                return Err(Error::validation(format!(
                    "doc {}: mixed provenance in label file",
                    d.doc_id
                )));
            }
            let mut dl = DocLabels::background(d);
            for (w, c) in pairs {
                *dl.labels.get_mut(w).ok_or_else(|| {
                    Error::validation(format!("doc {}: label for missing word {w}", d.doc_id))
                })? = c;
            }
            docs.push(dl);
        }
        if let Some(extra) = by_id.keys().next() {
            return Err(Error::validation(format!("labels for unknown doc {extra}")));
        }
        Ok(LabelSet {
            provenance: provenance.unwrap_or(Provenance::Bootstrap),
            docs,
        })
    }
}

/// Field values for one document, keyed by field name. Used both for ground
/// truth and for extraction output.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueRecord {
    pub doc_id: String,
    pub fields: BTreeMap<String, String>,
    /// Word ids carrying each value, when known (synthetic ground truth).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub spans: BTreeMap<String, Vec<usize>>,
}

impl ValueRecord {
    pub fn new(doc_id: impl Into<String>) -> Self {
        ValueRecord {
            doc_id: doc_id.into(),
            ..Default::default()
        }
    }

    pub fn check_fields(&self, schema: &FieldSchema) -> Result<()> {
        for name in self.fields.keys().chain(self.spans.keys()) {
            if schema.by_name(name).is_none() {
                return Err(Error::validation(format!(
                    "doc {}: unknown field {name:?}",
                    self.doc_id
                )));
            }
        }
        Ok(())
    }
}

/// Ground-truth annotation for one document.
pub type Annotation = ValueRecord;

/// Word-level truth labels derived from annotation spans.
pub fn truth_labels(
    corpus: &[Document],
    gold: &[Annotation],
    schema: &FieldSchema,
) -> Result<LabelSet> {
    let by_id: BTreeMap<&str, &Annotation> = gold.iter().map(|a| (a.doc_id.as_str(), a)).collect();
    let mut docs = Vec::with_capacity(corpus.len());
    for d in corpus {
        let ann = by_id
            .get(d.doc_id.as_str())
            .ok_or_else(|| Error::validation(format!("no annotation for doc {}", d.doc_id)))?;
        let mut dl = DocLabels::background(d);
        for (name, ids) in &ann.spans {
            let field = schema.by_name(name).ok_or_else(|| {
                Error::validation(format!("doc {}: unknown field {name:?}", d.doc_id))
            })?;
            for &w in ids {
                *dl.labels.get_mut(w).ok_or_else(|| {
                    Error::validation(format!(
                        "doc {}: span references missing word {w}",
                        d.doc_id
                    ))
                })? = field.id;
            }
        }
        docs.push(dl);
    }
    Ok(LabelSet {
        provenance: Provenance::Truth,
        docs,
    })
}
