//! Exact-match evaluation of extracted field values.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::labels::{Annotation, ValueRecord};
use crate::schema::FieldSchema;

/// NFC, outer trim, and single spaces between words. Case is kept.
pub fn normalize_value(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldReport {
    pub field: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tp: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fp: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "fn")]
    pub fn_: Option<u64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False when the field has neither gold values nor predictions.
    pub included: bool,
}

impl FieldReport {
    fn from_counts(field: &str, tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        FieldReport {
            field: field.to_string(),
            tp: Some(tp),
            fp: Some(fp),
            fn_: Some(fn_),
            precision,
            recall,
            f1: f1(precision, recall),
            included: tp + fp + fn_ > 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub fields: Vec<FieldReport>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub runs: usize,
}

impl EvalReport {
    fn from_fields(fields: Vec<FieldReport>, runs: usize) -> Self {
        let included: Vec<&FieldReport> = fields.iter().filter(|f| f.included).collect();
        let mean = |get: fn(&FieldReport) -> f64| {
            if included.is_empty() {
                0.0
            } else {
                included.iter().map(|f| get(f)).sum::<f64>() / included.len() as f64
            }
        };
        EvalReport {
            macro_precision: mean(|f| f.precision),
            macro_recall: mean(|f| f.recall),
            macro_f1: mean(|f| f.f1),
            fields,
            runs,
        }
    }

    pub fn field(&self, name: &str) -> Option<&FieldReport> {
        self.fields.iter().find(|f| f.field == name)
    }

    /// Report without the per-field breakdown.
    pub fn summary(&self) -> EvalReport {
        EvalReport {
            fields: Vec::new(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Per-field exact-match counts over a corpus. Documents are matched by id;
/// a document missing from either side contributes no values on that side.
pub fn score(
    predictions: &[ValueRecord],
    annotations: &[Annotation],
    schema: &FieldSchema,
) -> Result<EvalReport> {
    let mut gold: HashMap<&str, &Annotation> = HashMap::new();
    for a in annotations {
        a.check_fields(schema)?;
        if gold.insert(a.doc_id.as_str(), a).is_some() {
            return Err(Error::validation(format!(
                "duplicate gold doc {}",
                a.doc_id
            )));
        }
    }
    let mut seen: HashSet<&str> = HashSet::new();
    let mut counts: BTreeMap<usize, [u64; 3]> =
        schema.fields.iter().map(|f| (f.id, [0; 3])).collect();
    for p in predictions {
        p.check_fields(schema)?;
        if !seen.insert(p.doc_id.as_str()) {
            return Err(Error::validation(format!(
                "duplicate prediction doc {}",
                p.doc_id
            )));
        }
    }
    let empty = ValueRecord::default();
    let pred_by_id: HashMap<&str, &ValueRecord> =
        predictions.iter().map(|p| (p.doc_id.as_str(), p)).collect();
    let mut ids: Vec<&str> = gold.keys().chain(pred_by_id.keys()).copied().collect();
    ids.sort_unstable();
    ids.dedup();
    for id in ids {
        let g = gold.get(id).copied().unwrap_or(&empty);
        let p = pred_by_id.get(id).copied().unwrap_or(&empty);
        for f in &schema.fields {
            let c = counts.get_mut(&f.id).expect("every field has counts");
            match (p.fields.get(&f.name), g.fields.get(&f.name)) {
                (Some(pv), Some(gv)) if normalize_value(pv) == normalize_value(gv) => c[0] += 1,
                (Some(_), Some(_)) => {
                    c[1] += 1;
                    c[2] += 1;
                }
                (Some(_), None) => c[1] += 1,
                (None, Some(_)) => c[2] += 1,
                (None, None) => {}
            }
        }
    }
    let fields = schema
        .fields
        .iter()
        .map(|f| {
            let [tp, fp, fn_] = counts[&f.id];
            FieldReport::from_counts(&f.name, tp, fp, fn_)
        })
        .collect();
    Ok(EvalReport::from_fields(fields, 1))
}

/// Mean of every metric across runs; counts are dropped.
pub fn aggregate_runs(reports: &[EvalReport]) -> Result<EvalReport> {
    let Some(first) = reports.first() else {
        return Err(Error::validation("no reports to aggregate"));
    };
    let n = reports.len() as f64;
    let fields = first
        .fields
        .iter()
        .map(|f| {
            let runs: Vec<&FieldReport> = reports
                .iter()
                .map(|r| {
                    r.field(&f.field).ok_or_else(|| {
                        Error::validation(format!("field {} missing from a run", f.field))
                    })
                })
                .collect::<Result<_>>()?;
            Ok(FieldReport {
                field: f.field.clone(),
                tp: None,
                fp: None,
                fn_: None,
                precision: runs.iter().map(|r| r.precision).sum::<f64>() / n,
                recall: runs.iter().map(|r| r.recall).sum::<f64>() / n,
                f1: runs.iter().map(|r| r.f1).sum::<f64>() / n,
                included: runs.iter().any(|r| r.included),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = |get: fn(&EvalReport) -> f64| reports.iter().map(get).sum::<f64>() / n;
    Ok(EvalReport {
        fields,
        macro_precision: mean(|r| r.macro_precision),
        macro_recall: mean(|r| r.macro_recall),
        macro_f1: mean(|r| r.macro_f1),
        runs: reports.iter().map(|r| r.runs).sum(),
    })
}
