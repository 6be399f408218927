//! Overlay records and SVG pages for looking at predictions next to gold.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ffrg_core::eval::normalize_value;
use ffrg_core::ple::argmax;
use ffrg_core::{Annotation, Document, FieldSchema, ValueRecord};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct WordOverlay<'a> {
    pub id: usize,
    pub text: &'a str,
    pub bbox: [f64; 4],
    pub class: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<&'a str>,
    pub prob: f64,
}

/// Per-word predicted classes for one document.
#[derive(Debug, Serialize)]
pub struct DocOverlay<'a> {
    pub doc_id: &'a str,
    pub words: Vec<WordOverlay<'a>>,
}

pub fn doc_overlay<'a>(
    doc: &'a Document,
    rows: &[Vec<f64>],
    schema: &'a FieldSchema,
) -> DocOverlay<'a> {
    let words = doc
        .words
        .iter()
        .zip(rows)
        .map(|(w, row)| {
            let class = argmax(row);
            WordOverlay {
                id: w.id,
                text: &w.text,
                bbox: w.bbox.as_array(),
                class,
                field: schema.field(class).map(|f| f.name.as_str()),
                prob: row[class],
            }
        })
        .collect();
    DocOverlay {
        doc_id: &doc.doc_id,
        words,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Correct,
    /// Wrong words picked, or a value missed or invented.
    ExtractorError,
    /// Right words, wrong text.
    ValueTextError,
}

impl Status {
    fn color(self) -> &'static str {
        match self {
            Status::Correct => "#d62728",
            Status::ExtractorError => "#1f77b4",
            Status::ValueTextError => "#9467bd",
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FieldOverlay {
    pub field: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    pub predicted_words: Vec<usize>,
    pub gold_words: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct InspectRecord {
    pub doc_id: String,
    pub fields: Vec<FieldOverlay>,
}

pub fn classify(
    pred: Option<&str>,
    gold: Option<&str>,
    pred_words: &[usize],
    gold_words: &[usize],
) -> Option<Status> {
    match (pred, gold) {
        (None, None) => None,
        (Some(p), Some(g)) if normalize_value(p) == normalize_value(g) => Some(Status::Correct),
        (Some(_), Some(_)) => {
            let same = !pred_words.is_empty()
                && pred_words.iter().collect::<BTreeSet<_>>()
                    == gold_words.iter().collect::<BTreeSet<_>>();
            Some(if same {
                Status::ValueTextError
            } else {
                Status::ExtractorError
            })
        }
        _ => Some(Status::ExtractorError),
    }
}

pub fn inspect_record(
    pred: &ValueRecord,
    gold: &Annotation,
    schema: &FieldSchema,
) -> InspectRecord {
    let mut fields = Vec::new();
    for f in &schema.fields {
        let p = pred.fields.get(&f.name).map(String::as_str);
        let g = gold.fields.get(&f.name).map(String::as_str);
        let pw = pred.spans.get(&f.name).cloned().unwrap_or_default();
        let gw = gold.spans.get(&f.name).cloned().unwrap_or_default();
        if let Some(status) = classify(p, g, &pw, &gw) {
            fields.push(FieldOverlay {
                field: f.name.clone(),
                status,
                predicted: p.map(str::to_string),
                gold: g.map(str::to_string),
                predicted_words: pw,
                gold_words: gw,
            });
        }
    }
    InspectRecord {
        doc_id: gold.doc_id.clone(),
        fields,
    }
}

const PALETTE: [&str; 8] = [
    "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// `doc_id` made safe for a file name.
pub fn svg_path(dir: &Path, doc_id: &str) -> PathBuf {
    let stem: String = doc_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    dir.join(format!("{stem}.svg"))
}

fn page(doc: &Document, color_of: impl Fn(usize) -> Option<(&'static str, String)>) -> String {
    let (w, h) = (doc.page_width as f64, doc.page_height as f64);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r##"<rect width="{w}" height="{h}" fill="#ffffff"/>"##);
    for word in &doc.words {
        let b = &word.bbox;
        let (x, y, bw, bh) = (b.x0 * w, b.y0 * h, b.width() * w, b.height() * h);
        let (fill, title) = match color_of(word.id) {
            Some((c, t)) => (c, format!("<title>{}</title>", escape(&t))),
            None => ("#999999", String::new()),
        };
        let _ = writeln!(
            s,
            r##"<g>{title}<rect x="{x:.1}" y="{y:.1}" width="{bw:.1}" height="{bh:.1}" fill="none" stroke="#dddddd"/><text x="{x:.1}" y="{:.1}" font-size="{:.1}" fill="{fill}">{}</text></g>"##,
            y + bh * 0.85,
            bh * 0.9,
            escape(&word.text)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Words colored by predicted field; background words stay gray.
pub fn prediction_svg(doc: &Document, overlay: &DocOverlay, schema: &FieldSchema) -> String {
    page(doc, |id| {
        let w = &overlay.words[id];
        (w.class > 0).then(|| {
            let name = schema
                .field(w.class)
                .map(|f| f.name.clone())
                .unwrap_or_default();
            (
                PALETTE[(w.class - 1) % PALETTE.len()],
                format!("{name} {:.2}", w.prob),
            )
        })
    })
}

/// Predicted value words colored by status; missed gold words in the
/// extractor-error color.
pub fn inspect_svg(doc: &Document, rec: &InspectRecord) -> String {
    page(doc, |id| {
        rec.fields.iter().find_map(|f| {
            let hit = f.predicted_words.contains(&id)
                || (f.predicted.is_none() && f.gold_words.contains(&id));
            hit.then(|| (f.status.color(), format!("{} {:?}", f.field, f.status)))
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statuses() {
        assert_eq!(
            classify(Some("A1"), Some(" A1"), &[1], &[1]),
            Some(Status::Correct)
        );
        assert_eq!(
            classify(Some("A7"), Some("A1"), &[1], &[1]),
            Some(Status::ValueTextError)
        );
        assert_eq!(
            classify(Some("A7"), Some("A1"), &[2], &[1]),
            Some(Status::ExtractorError)
        );
        assert_eq!(
            classify(None, Some("A1"), &[], &[1]),
            Some(Status::ExtractorError)
        );
        assert_eq!(
            classify(Some("A1"), None, &[1], &[]),
            Some(Status::ExtractorError)
        );
        assert_eq!(
            classify(Some("A7"), Some("A1"), &[], &[]),
            Some(Status::ExtractorError)
        );
        assert_eq!(classify(None, None, &[], &[]), None);
    }

    #[test]
    fn svg_names_and_escaping() {
        assert_eq!(svg_path(Path::new("d"), "a/b c"), Path::new("d/a_b_c.svg"));
        assert_eq!(escape("<a&b>"), "&lt;a&amp;b&gt;");
    }
}
