//! Document model: OCR words with normalized boxes, phrase candidates, and
//! geometric reading order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in normalized page coordinates, origin top-left, y down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = BBox { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let c = [self.x0, self.y0, self.x1, self.y1];
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "box {:?} has non-finite coordinates",
                c
            )));
        }
        if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation(format!("box {:?} lies outside [0,1]", c)));
        }
        if self.x0 > self.x1 || self.y0 > self.y1 {
            return Err(Error::validation(format!(
                "box {:?} has x1 < x0 or y1 < y0",
                c
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn cx(&self) -> f64 {
        0.5 * (self.x0 + self.x1)
    }

    pub fn cy(&self) -> f64 {
        0.5 * (self.y0 + self.y1)
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    fn total_cmp(&self, other: &BBox) -> Ordering {
        self.x0
            .total_cmp(&other.x0)
            .then(self.y0.total_cmp(&other.y0))
            .then(self.x1.total_cmp(&other.x1))
            .then(self.y1.total_cmp(&other.y1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Word {
    pub id: usize,
    pub text: String,
    pub bbox: BBox,
}

/// A run of nearby words treated as one key/value candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Phrase {
    /// Member word ids in reading order.
    pub word_ids: Vec<usize>,
    pub text: String,
    pub bbox: BBox,
}

impl Phrase {
    /// Builds a phrase from word ids that are already in reading order.
    pub fn from_words(doc: &Document, word_ids: Vec<usize>) -> Result<Self> {
        let first = word_ids
            .first()
            .ok_or_else(|| Error::validation("phrase has no words"))?;
        let mut seen = vec![false; doc.words.len()];
        let mut bbox = doc.word(*first)?.bbox;
        let mut parts = Vec::with_capacity(word_ids.len());
        for &id in &word_ids {
            let w = doc.word(id)?;
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::validation(format!("phrase repeats word {id}")));
            }
            bbox = bbox.union(&w.bbox);
            parts.push(w.text.as_str());
        }
        Ok(Phrase {
            text: parts.join(" "),
            word_ids,
            bbox,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub page_width: u32,
    pub page_height: u32,
    pub words: Vec<Word>,
    pub phrases: Option<Vec<Phrase>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WordRecord {
    text: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct PhraseRecord {
    word_ids: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentRecord {
    doc_id: String,
    page_width: u32,
    page_height: u32,
    words: Vec<WordRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phrases: Option<Vec<PhraseRecord>>,
}

/// Coordinates above this are taken to be pixels.
const PIXEL_THRESHOLD: f64 = 1.5;

impl Document {
    pub fn word(&self, id: usize) -> Result<&Word> {
        self.words
            .get(id)
            .ok_or_else(|| Error::validation(format!("doc {}: no word with id {id}", self.doc_id)))
    }

    /// Parses one OCR JSONL line. `line_no` is 1-based and only used in errors.
    pub fn parse(line: &str, line_no: usize) -> Result<Self> {
        let rec: DocumentRecord = serde_json::from_str(line).map_err(|source| Error::Parse {
            line: line_no,
            source,
        })?;
        Self::from_record(rec).map_err(|e| e.context(format!("line {line_no}")))
    }

    fn from_record(rec: DocumentRecord) -> Result<Self> {
        if rec.page_width == 0 || rec.page_height == 0 {
            return Err(Error::validation(format!(
                "doc {}: page dimensions must be positive",
                rec.doc_id
            )));
        }
        let in_pixels = rec
            .words
            .iter()
            .flat_map(|w| w.bbox.iter())
            .any(|&v| v > PIXEL_THRESHOLD);
        let (sx, sy) = if in_pixels {
            (1.0 / rec.page_width as f64, 1.0 / rec.page_height as f64)
        } else {
            (1.0, 1.0)
        };
        let mut words = Vec::with_capacity(rec.words.len());
        for (id, w) in rec.words.into_iter().enumerate() {
            let text = w.text.trim();
            if text.is_empty() {
                return Err(Error::validation(format!(
                    "doc {}: word {id} has empty text",
                    rec.doc_id
                )));
            }
            let [x0, y0, x1, y1] = w.bbox;
            let bbox = BBox::new(x0 * sx, y0 * sy, x1 * sx, y1 * sy)
                .map_err(|e| e.context(format!("doc {}: word {id} ({text:?})", rec.doc_id)))?;
            words.push(Word {
                id,
                text: text.to_string(),
                bbox,
            });
        }
        let mut doc = Document {
            doc_id: rec.doc_id,
            page_width: rec.page_width,
            page_height: rec.page_height,
            words,
            phrases: None,
        };
        if let Some(phrases) = rec.phrases {
            let built = phrases
                .into_iter()
                .map(|p| Phrase::from_words(&doc, p.word_ids))
                .collect::<Result<Vec<_>>>()?;
            doc.set_phrases(built)?;
        }
        Ok(doc)
    }

    /// Attaches phrases after checking that no word belongs to two of them.
    pub fn set_phrases(&mut self, phrases: Vec<Phrase>) -> Result<()> {
        let mut owner = vec![false; self.words.len()];
        for p in &phrases {
            for &id in &p.word_ids {
                if id >= owner.len() {
                    return Err(Error::validation(format!(
                        "doc {}: phrase references missing word {id}",
                        self.doc_id
                    )));
                }
                if std::mem::replace(&mut owner[id], true) {
                    return Err(Error::validation(format!(
                        "doc {}: word {id} belongs to more than one phrase",
                        self.doc_id
                    )));
                }
            }
        }
        self.phrases = Some(phrases);
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        let rec = DocumentRecord {
            doc_id: self.doc_id.clone(),
            page_width: self.page_width,
            page_height: self.page_height,
            words: self
                .words
                .iter()
                .map(|w| WordRecord {
                    text: w.text.clone(),
                    bbox: w.bbox.as_array(),
                })
                .collect(),
            phrases: self.phrases.as_ref().map(|ps| {
                ps.iter()
                    .map(|p| PhraseRecord {
                        word_ids: p.word_ids.clone(),
                    })
                    .collect()
            }),
        };
        serde_json::to_string(&rec).expect("document serializes")
    }
}

fn same_line(a: &BBox, b: &BBox) -> bool {
    (a.cy() - b.cy()).abs() <= 0.5 * a.height().min(b.height())
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Word ids in reading order: lines top to bottom, words left to right.
///
/// Two words share a line when their vertical centers differ by at most half
/// the smaller height; lines are the transitive closure of that relation.
pub fn reading_order(doc: &Document) -> Vec<usize> {
    let words = &doc.words;
    let n = words.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if same_line(&words[i].bbox, &words[j].bbox) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let word_cmp = |a: &Word, b: &Word| {
        a.bbox
            .total_cmp(&b.bbox)
            .then_with(|| a.text.cmp(&b.text))
            .then(a.id.cmp(&b.id))
    };

    let mut lines: Vec<Vec<usize>> = Vec::new();
    let mut root_line = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_line[r] == usize::MAX {
            root_line[r] = lines.len();
            lines.push(Vec::new());
        }
        lines[root_line[r]].push(i);
    }
    for line in &mut lines {
        line.sort_by(|&a, &b| word_cmp(&words[a], &words[b]));
    }
    let top = |line: &[usize]| {
        line.iter()
            .map(|&i| words[i].bbox.y0)
            .fold(f64::INFINITY, f64::min)
    };
    lines.sort_by(|a, b| {
        top(a)
            .total_cmp(&top(b))
            .then_with(|| word_cmp(&words[a[0]], &words[b[0]]))
    });
    lines.into_iter().flatten().collect()
}

/// Inverse of [`reading_order`]: rank of every word id.
pub fn reading_rank(doc: &Document) -> Vec<usize> {
    let order = reading_order(doc);
    let mut rank = vec![0; order.len()];
    for (r, &id) in order.iter().enumerate() {
        rank[id] = r;
    }
    rank
}
