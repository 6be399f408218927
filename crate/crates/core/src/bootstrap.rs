//! Rule engine that mines word-level pseudo-labels from unlabeled documents.
//!
//! For every field the best-matching key phrase is located by string
//! similarity to the field's key lexicon, then the value is the type-compatible
//! phrase near the key that maximizes `key_score * g(key, value)`, where `g`
//! rewards short distances and values lying to the right of or below the key.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doc::{Document, Phrase};
use crate::error::{Error, Result};
use crate::grouping::{phrases_of, GroupingConfig};
use crate::labels::{DocLabels, LabelSet, Provenance, ValueRecord};
use crate::schema::{FieldDef, FieldSchema};
use crate::similarity::string_distance;
use crate::typer::{type_of, TypeSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleParams {
    pub sigma_d: f64,
    /// Radians.
    pub sigma_a: f64,
    pub mu_d: f64,
    pub alpha: f64,
    pub theta_v: f64,
    /// Neighbor zone extent above the candidate, in candidate heights.
    pub zone_above: f64,
    /// Neighbor zone extent below the candidate, in candidate heights.
    pub zone_below: f64,
}

impl Default for RuleParams {
    fn default() -> Self {
        RuleParams {
            sigma_d: 0.5,
            sigma_a: 0.5,
            mu_d: 0.0,
            alpha: 4.0,
            theta_v: 0.1,
            zone_above: 4.0,
            zone_below: 1.0,
        }
    }
}

impl RuleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_d > 0.0 && self.sigma_a > 0.0) {
            return Err(Error::config("sigma_d and sigma_a must be positive"));
        }
        if self.mu_d != 0.0 {
            return Err(Error::config("mu_d is fixed at 0"));
        }
        if !(self.theta_v >= 0.0 && self.alpha >= 0.0) {
            return Err(Error::config("theta_v and alpha must be non-negative"));
        }
        if !(self.zone_above >= 0.0 && self.zone_below >= 0.0) {
            return Err(Error::config("neighbor zone extents must be non-negative"));
        }
        Ok(())
    }
}

/// Outcome of the rules for one field of one document. Phrase references are
/// indices into the document's phrase list.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldExtraction {
    pub field_id: usize,
    pub key_phrase: Option<usize>,
    pub key_score: f64,
    pub value_phrase: Option<usize>,
    pub value_score: Option<f64>,
}

impl FieldExtraction {
    fn drop_value(&mut self) {
        self.value_phrase = None;
        self.value_score = None;
    }
}

fn kernel(x: f64, mu: f64, sigma: f64) -> f64 {
    (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp()
}

/// One minus the smallest string distance to any of the field's keys.
pub fn key_score(phrase: &Phrase, field: &FieldDef) -> f64 {
    let text = phrase.text.to_lowercase();
    let best = field
        .keys
        .iter()
        .map(|k| string_distance(&text, k))
        .fold(f64::INFINITY, f64::min);
    if best.is_finite() {
        1.0 - best
    } else {
        0.0
    }
}

/// Highest-scoring key phrase; the earliest phrase wins ties.
pub fn localize_key(phrases: &[Phrase], field: &FieldDef) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in phrases.iter().enumerate() {
        let s = key_score(p, field);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best
}

/// Distance (normalized page units) and angle (radians, y down) from the
/// center of `from` to the center of `to`.
pub fn center_offset(from: &Phrase, to: &Phrase) -> (f64, f64) {
    let dx = to.bbox.cx() - from.bbox.cx();
    let dy = to.bbox.cy() - from.bbox.cy();
    let dist = dx.hypot(dy);
    let angle = if dist == 0.0 { 0.0 } else { dy.atan2(dx) };
    (dist, angle)
}

pub fn geometric_score(key: &Phrase, value: &Phrase, p: &RuleParams) -> f64 {
    let (dist, angle) = center_offset(key, value);
    let angle_term = kernel(angle, 0.0, p.sigma_a).max(kernel(angle, FRAC_PI_2, p.sigma_a));
    kernel(dist, p.mu_d, p.sigma_d) + p.alpha * angle_term
}

pub fn value_score(key: &Phrase, key_score: f64, candidate: &Phrase, p: &RuleParams) -> f64 {
    key_score * geometric_score(key, candidate, p)
}

/// Whether the key's center lies in the zone spanning from the page's left
/// edge to the candidate's right edge, `zone_above` candidate heights above
/// it and `zone_below` below.
pub fn in_neighbor_zone(key: &Phrase, candidate: &Phrase, p: &RuleParams) -> bool {
    let b = &candidate.bbox;
    let h = b.height();
    let (kx, ky) = (key.bbox.cx(), key.bbox.cy());
    (0.0..=b.x1).contains(&kx) && (b.y0 - p.zone_above * h..=b.y1 + p.zone_below * h).contains(&ky)
}

/// Data types of each phrase, in phrase order.
pub fn phrase_types(phrases: &[Phrase]) -> Vec<TypeSet> {
    phrases
        .iter()
        .map(|p| type_of(&p.text).unwrap_or_default())
        .collect()
}

/// Runs key localization and value selection for one field.
pub fn extract_field(
    phrases: &[Phrase],
    types: &[TypeSet],
    field: &FieldDef,
    p: &RuleParams,
) -> FieldExtraction {
    let mut out = FieldExtraction {
        field_id: field.id,
        key_phrase: None,
        key_score: 0.0,
        value_phrase: None,
        value_score: None,
    };
    let Some((k, ks)) = localize_key(phrases, field) else {
        return out;
    };
    out.key_phrase = Some(k);
    out.key_score = ks;
    let allowed = field.type_set();
    let key = &phrases[k];
    let mut best: Option<(usize, f64)> = None;
    for (j, cand) in phrases.iter().enumerate() {
        if j == k || !types[j].intersects(&allowed) || !in_neighbor_zone(key, cand, p) {
            continue;
        }
        let s = value_score(key, ks, cand, p);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    if let Some((j, s)) = best.filter(|&(_, s)| s > p.theta_v) {
        out.value_phrase = Some(j);
        out.value_score = Some(s);
    }
    out
}

/// Extracts every schema field from one document and resolves phrases
/// claimed by several fields in favor of the higher value score, then the
/// lower field id.
pub fn extract_document(
    phrases: &[Phrase],
    schema: &FieldSchema,
    p: &RuleParams,
) -> Vec<FieldExtraction> {
    let types = phrase_types(phrases);
    let mut fields: Vec<FieldExtraction> = schema
        .fields
        .iter()
        .map(|f| extract_field(phrases, &types, f, p))
        .collect();
    let mut ranked: Vec<usize> = (0..fields.len())
        .filter(|&i| fields[i].value_phrase.is_some())
        .collect();
    ranked.sort_by(|&a, &b| {
        let (sa, sb) = (
            fields[a].value_score.unwrap(),
            fields[b].value_score.unwrap(),
        );
        sb.total_cmp(&sa)
            .then(fields[a].field_id.cmp(&fields[b].field_id))
    });
    let mut claimed = vec![false; phrases.len()];
    for i in ranked {
        let v = fields[i].value_phrase.unwrap();
        if std::mem::replace(&mut claimed[v], true) {
            fields[i].drop_value();
        }
    }
    fields
}

/// Word labels for one document from its field extractions.
pub fn labels_from_extractions(
    doc: &Document,
    phrases: &[Phrase],
    extractions: &[FieldExtraction],
) -> DocLabels {
    let mut labels = DocLabels::background(doc);
    for e in extractions {
        if let Some(v) = e.value_phrase {
            for &w in &phrases[v].word_ids {
                labels.labels[w] = e.field_id;
            }
        }
    }
    labels
}

pub fn values_from_extractions(
    doc: &Document,
    phrases: &[Phrase],
    extractions: &[FieldExtraction],
    schema: &FieldSchema,
) -> ValueRecord {
    let mut rec = ValueRecord::new(doc.doc_id.clone());
    for e in extractions {
        if let (Some(v), Some(f)) = (e.value_phrase, schema.field(e.field_id)) {
            rec.fields.insert(f.name.clone(), phrases[v].text.clone());
            rec.spans
                .insert(f.name.clone(), phrases[v].word_ids.clone());
        }
    }
    rec
}

/// Bootstrap labels and the matching extracted values for a corpus.
pub fn bootstrap(
    corpus: &[Document],
    schema: &FieldSchema,
    p: &RuleParams,
    grouping: &GroupingConfig,
) -> (LabelSet, Vec<ValueRecord>) {
    let per_doc: Vec<(DocLabels, ValueRecord)> = corpus
        .par_iter()
        .map(|doc| {
            let phrases = phrases_of(doc, grouping);
            let ex = extract_document(&phrases, schema, p);
            (
                labels_from_extractions(doc, &phrases, &ex),
                values_from_extractions(doc, &phrases, &ex, schema),
            )
        })
        .collect();
    let (docs, values) = per_doc.into_iter().unzip();
    (
        LabelSet {
            provenance: Provenance::Bootstrap,
            docs,
        },
        values,
    )
}

pub fn bootstrap_labels(
    corpus: &[Document],
    schema: &FieldSchema,
    p: &RuleParams,
    grouping: &GroupingConfig,
) -> LabelSet {
    bootstrap(corpus, schema, p, grouping).0
}
