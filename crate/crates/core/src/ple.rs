//! Progressive pseudo-label ensemble: refined labels, the aggregate loss,
//! staged training with freezing, and ensemble inference.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doc::{reading_rank, Document};
use crate::error::{Error, Result};
use crate::grouping::{phrases_of, GroupingConfig};
use crate::labels::{DocLabels, LabelSet, Provenance, ValueRecord};
use crate::model::network::accumulate;
use crate::model::{
    adam_step, featurize, AdamConfig, AdamState, FeatureMatrix, Input, LossTerm, ModelDims,
    ModelParams, ParamGroup, FEATURE_DIM,
};
use crate::schema::FieldSchema;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PleConfig {
    pub branches: usize,
    pub beta: f64,
    pub refine_threshold: f64,
    pub epochs_step1: usize,
    /// Epochs for each later branch.
    pub epochs_step2: usize,
    pub seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub branch_hidden: usize,
    /// Train the trunk and first branch alone, then freeze them and train the
    /// remaining branches one at a time. When off, every branch and the trunk
    /// are trained jointly on the full loss from the start.
    pub two_step: bool,
}

impl Default for PleConfig {
    fn default() -> Self {
        PleConfig {
            branches: 3,
            beta: 1.0,
            refine_threshold: 0.1,
            epochs_step1: 2,
            epochs_step2: 2,
            seed: 7,
            lr: 5e-3,
            batch_size: 8,
            hidden: 64,
            branch_hidden: 64,
            two_step: true,
        }
    }
}

impl PleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branches == 0 {
            return Err(Error::config("branches must be at least 1"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.refine_threshold) {
            return Err(Error::config("refine_threshold must lie in [0, 1]"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        if self.batch_size == 0 || self.hidden == 0 || self.branch_hidden == 0 {
            return Err(Error::config(
                "batch_size and layer widths must be positive",
            ));
        }
        Ok(())
    }

    pub fn dims(&self, schema: &FieldSchema) -> ModelDims {
        ModelDims {
            input: FEATURE_DIM,
            hidden: self.hidden,
            branch_hidden: self.branch_hidden,
            classes: schema.num_classes(),
            branches: self.branches,
        }
    }
}

/// One cross-entropy term of the aggregate loss: branch `branch` (0-based)
/// against label set `labels` (0 is the bootstrap set, `j` is refined from
/// branch `j`, 1-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub branch: usize,
    pub labels: usize,
    pub weight: f64,
}

/// Terms of the aggregate loss in written order. The bootstrap term of a
/// later branch is repeated once for every earlier refined set.
pub fn loss_terms(branches: usize, beta: f64) -> Vec<LossSpec> {
    let mut terms = Vec::new();
    if branches == 0 {
        return terms;
    }
    terms.push(LossSpec {
        branch: 0,
        labels: 0,
        weight: 1.0,
    });
    for k in 1..branches {
        for j in 1..=k {
            terms.push(LossSpec {
                branch: k,
                labels: j,
                weight: 1.0,
            });
            terms.push(LossSpec {
                branch: k,
                labels: 0,
                weight: beta,
            });
        }
    }
    terms
}

/// Aggregate loss from `losses[k][j]`, the loss of branch `k` against label
/// set `j`. Panics if the matrix is smaller than the term list requires.
pub fn total_loss(losses: &[Vec<f64>], beta: f64) -> f64 {
    loss_terms(losses.len(), beta)
        .iter()
        .map(|t| t.weight * losses[t.branch][t.labels])
        .sum()
}

/// First index of the largest entry.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Refinement for one document: each positive class keeps at most the single
/// word with the highest probability for it, provided that probability
/// exceeds `threshold` and the word's argmax is that class. Ties go to the
/// earlier word in reading order.
pub fn refine_rows(rows: &[Vec<f64>], rank: &[usize], threshold: f64) -> Vec<usize> {
    let mut labels = vec![0; rows.len()];
    let Some(classes) = rows.first().map(Vec::len) else {
        return labels;
    };
    for c in 1..classes {
        let mut best: Option<usize> = None;
        for w in 0..rows.len() {
            best = match best {
                Some(b) if rows[b][c] > rows[w][c] => Some(b),
                Some(b) if rows[b][c] == rows[w][c] && rank[b] < rank[w] => Some(b),
                _ => Some(w),
            };
        }
        if let Some(b) = best {
            if rows[b][c] > threshold && argmax(&rows[b]) == c {
                labels[b] = c;
            }
        }
    }
    labels
}

/// Refined labels for a corpus from one branch's probability rows.
pub fn refine_labels(
    scores: &[Vec<Vec<f64>>],
    corpus: &[Document],
    threshold: f64,
    provenance: Provenance,
) -> Result<LabelSet> {
    if scores.len() != corpus.len() {
        return Err(Error::validation(format!(
            "{} score blocks for {} documents",
            scores.len(),
            corpus.len()
        )));
    }
    let docs = scores
        .par_iter()
        .zip(corpus)
        .map(|(rows, doc)| {
            if rows.len() != doc.words.len() {
                return Err(Error::validation(format!(
                    "doc {}: {} score rows for {} words",
                    doc.doc_id,
                    rows.len(),
                    doc.words.len()
                )));
            }
            Ok(DocLabels {
                doc_id: doc.doc_id.clone(),
                labels: refine_rows(rows, &reading_rank(doc), threshold),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelSet { provenance, docs })
}

/// Mean of per-branch probability rows.
pub fn average_rows(per_branch: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let Some(first) = per_branch.first() else {
        return Vec::new();
    };
    let inv = 1.0 / per_branch.len() as f64;
    (0..first.len())
        .map(|i| {
            let mut row = vec![0.0; first[i].len()];
            for b in per_branch {
                row.iter_mut().zip(&b[i]).for_each(|(r, v)| *r += v);
            }
            row.iter_mut().for_each(|r| *r *= inv);
            row
        })
        .collect()
}

/// Branch-averaged probability rows for every word.
pub fn ensemble_predict(params: &ModelParams, feats: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
    let hidden = params.trunk_hidden(feats)?;
    let per_branch = (0..params.dims.branches)
        .map(|k| params.head_probs(&hidden, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(average_rows(&per_branch))
}

/// Field values from probability rows: the refinement rule picks one anchor
/// word per field, which grows to the longest run of words in its phrase,
/// in reading order, that also predict the field.
pub fn values_from_rows(
    doc: &Document,
    rows: &[Vec<f64>],
    schema: &FieldSchema,
    grouping: &GroupingConfig,
    threshold: f64,
) -> ValueRecord {
    let mut rec = ValueRecord::new(doc.doc_id.clone());
    if doc.words.is_empty() {
        return rec;
    }
    let rank = reading_rank(doc);
    let anchors = refine_rows(rows, &rank, threshold);
    let phrases = phrases_of(doc, grouping);
    let mut phrase_of = vec![0; doc.words.len()];
    for (p, ph) in phrases.iter().enumerate() {
        for &w in &ph.word_ids {
            phrase_of[w] = p;
        }
    }
    for (w, &c) in anchors.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let Some(field) = schema.field(c) else {
            continue;
        };
        let mut members = phrases[phrase_of[w]].word_ids.clone();
        members.sort_by_key(|&m| rank[m]);
        let pos = members
            .iter()
            .position(|&m| m == w)
            .expect("anchor is in its phrase");
        let hits = |m: usize| argmax(&rows[m]) == c;
        let mut lo = pos;
        while lo > 0 && hits(members[lo - 1]) {
            lo -= 1;
        }
        let mut hi = pos;
        while hi + 1 < members.len() && hits(members[hi + 1]) {
            hi += 1;
        }
        let text: Vec<&str> = members[lo..=hi]
            .iter()
            .map(|&m| doc.words[m].text.as_str())
            .collect();
        rec.fields.insert(field.name.clone(), text.join(" "));
        rec.spans
            .insert(field.name.clone(), members[lo..=hi].to_vec());
    }
    rec
}

pub fn extract_values(
    params: &ModelParams,
    doc: &Document,
    schema: &FieldSchema,
    grouping: &GroupingConfig,
    threshold: f64,
) -> Result<ValueRecord> {
    let rows = ensemble_predict(params, &featurize(doc, grouping))?;
    Ok(values_from_rows(doc, &rows, schema, grouping, threshold))
}

/// Per-document extraction plus per-word predicted classes.
pub fn extract_corpus(
    params: &ModelParams,
    corpus: &[Document],
    schema: &FieldSchema,
    grouping: &GroupingConfig,
    threshold: f64,
) -> Result<Vec<(ValueRecord, Vec<usize>)>> {
    if params.dims.classes != schema.num_classes() {
        return Err(Error::config(format!(
            "model predicts {} classes, schema has {}",
            params.dims.classes,
            schema.num_classes()
        )));
    }
    corpus
        .par_iter()
        .map(|doc| {
            let rows = ensemble_predict(params, &featurize(doc, grouping))
                .map_err(|e| e.context(format!("doc {}", doc.doc_id)))?;
            let classes = rows.iter().map(|r| argmax(r)).collect();
            Ok((
                values_from_rows(doc, &rows, schema, grouping, threshold),
                classes,
            ))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    /// Refined label sets in branch order (`refined[0]` comes from branch 1).
    pub refined: Vec<LabelSet>,
    /// Mean per-word training loss of every epoch, across all stages.
    pub epoch_losses: Vec<f64>,
}

const INIT_STREAM: u64 = 0x1417;

struct Epoch<'a> {
    inputs: Vec<Input<'a>>,
    rows: Vec<usize>,
    groups: Vec<ParamGroup>,
    train_trunk: bool,
    stage: u64,
}

impl Epoch<'_> {
    fn run(
        &self,
        params: &mut ModelParams,
        state: &mut AdamState,
        cfg: &PleConfig,
        epoch: u64,
        label_sets: &[LabelSet],
        specs: &[LossSpec],
    ) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.inputs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(
            cfg.seed,
            &[self.stage, epoch],
        )));
        let adam = AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        };
        let specs: Vec<LossSpec> = specs.iter().copied().filter(|s| s.weight != 0.0).collect();
        let mut total = 0.0;
        let mut words = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let n: usize = batch.iter().map(|&d| self.rows[d]).sum();
            if n == 0 {
                continue;
            }
            let scale = 1.0 / n as f64;
            let frozen: &ModelParams = params;
            let parts = batch
                .par_iter()
                .map(|&d| {
                    let terms: Vec<LossTerm> = specs
                        .iter()
                        .map(|s| LossTerm {
                            branch: s.branch,
                            labels: &label_sets[s.labels].docs[d].labels,
                            weight: s.weight,
                        })
                        .collect();
                    let mut g = frozen.zeros_like();
                    let l = accumulate(
                        frozen,
                        self.inputs[d],
                        &terms,
                        scale,
                        &mut g,
                        self.train_trunk,
                    )
                    .map_err(|e| e.context(format!("doc {}", label_sets[0].docs[d].doc_id)))?;
                    Ok((l, g))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grad = params.zeros_like();
            let mut loss = 0.0;
            for (l, g) in &parts {
                loss += l;
                grad.add_assign(g);
            }
            adam_step(params, &grad, state, &adam, &self.groups);
            total += loss * n as f64;
            words += n;
        }
        if !params.is_finite() {
            return Err(Error::validation("training diverged to non-finite weights"));
        }
        Ok(if words == 0 {
            0.0
        } else {
            total / words as f64
        })
    }
}

fn branch_scores(
    params: &ModelParams,
    hidden: &[FeatureMatrix],
    k: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    hidden.par_iter().map(|h| params.head_probs(h, k)).collect()
}

fn trunk_cache(params: &ModelParams, feats: &[FeatureMatrix]) -> Result<Vec<FeatureMatrix>> {
    feats.par_iter().map(|f| params.trunk_hidden(f)).collect()
}

/// Trains a K-branch model on bootstrap labels. Deterministic given the seed
/// and independent of the thread count.
pub fn train(
    corpus: &[Document],
    bootstrap: &LabelSet,
    schema: &FieldSchema,
    grouping: &GroupingConfig,
    cfg: &PleConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::validation("cannot train on an empty corpus"));
    }
    bootstrap.check_against(corpus, schema.len())?;
    let feats: Vec<FeatureMatrix> = corpus.par_iter().map(|d| featurize(d, grouping)).collect();
    train_features(corpus, &feats, bootstrap, cfg.dims(schema), cfg)
}

/// As [`train`], on precomputed features.
pub fn train_features(
    corpus: &[Document],
    feats: &[FeatureMatrix],
    bootstrap: &LabelSet,
    dims: ModelDims,
    cfg: &PleConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if feats.len() != corpus.len() {
        return Err(Error::validation("feature blocks do not match the corpus"));
    }
    bootstrap.check_against(corpus, dims.classes - 1)?;
    let k_total = cfg.branches;
    let mut params = ModelParams::init(dims, seed::derive(cfg.seed, &[INIT_STREAM]));
    let rows: Vec<usize> = feats.iter().map(|f| f.rows).collect();
    let specs = loss_terms(k_total, cfg.beta);
    let mut label_sets = vec![bootstrap.clone()];
    let mut epoch_losses = Vec::new();

    if cfg.two_step || k_total == 1 {
        let step1 = Epoch {
            inputs: feats.iter().map(Input::Features).collect(),
            rows: rows.clone(),
            groups: vec![ParamGroup::Trunk, ParamGroup::Branch(0)],
            train_trunk: true,
            stage: 0,
        };
        let mut state = AdamState::new(&params);
        for e in 0..cfg.epochs_step1 {
            epoch_losses.push(step1.run(
                &mut params,
                &mut state,
                cfg,
                e as u64,
                &label_sets,
                &specs[..1],
            )?);
        }
        if k_total > 1 {
            let hidden = trunk_cache(&params, feats)?;
            for k in 1..k_total {
                let scores = branch_scores(&params, &hidden, k - 1)?;
                label_sets.push(refine_labels(
                    &scores,
                    corpus,
                    cfg.refine_threshold,
                    Provenance::Refined(k),
                )?);
                let stage = Epoch {
                    inputs: hidden.iter().map(Input::Hidden).collect(),
                    rows: rows.clone(),
                    groups: vec![ParamGroup::Branch(k)],
                    train_trunk: false,
                    stage: k as u64,
                };
                let stage_specs: Vec<LossSpec> =
                    specs.iter().copied().filter(|s| s.branch == k).collect();
                let mut state = AdamState::new(&params);
                for e in 0..cfg.epochs_step2 {
                    epoch_losses.push(stage.run(
                        &mut params,
                        &mut state,
                        cfg,
                        e as u64,
                        &label_sets,
                        &stage_specs,
                    )?);
                }
                log::debug!(
                    "branch {} trained, last loss {:?}",
                    k + 1,
                    epoch_losses.last()
                );
            }
        }
    } else {
        // Joint training: refined sets are regenerated from the current
        // branches at the start of every epoch.
        let joint = Epoch {
            inputs: feats.iter().map(Input::Features).collect(),
            rows,
            groups: std::iter::once(ParamGroup::Trunk)
                .chain((0..k_total).map(ParamGroup::Branch))
                .collect(),
            train_trunk: true,
            stage: 0,
        };
        let mut state = AdamState::new(&params);
        let epochs = cfg.epochs_step1 + (k_total - 1) * cfg.epochs_step2;
        for e in 0..epochs {
            let hidden = trunk_cache(&params, feats)?;
            label_sets.truncate(1);
            for j in 1..k_total {
                let scores = branch_scores(&params, &hidden, j - 1)?;
                label_sets.push(refine_labels(
                    &scores,
                    corpus,
                    cfg.refine_threshold,
                    Provenance::Refined(j),
                )?);
            }
            epoch_losses.push(joint.run(
                &mut params,
                &mut state,
                cfg,
                e as u64,
                &label_sets,
                &specs,
            )?);
        }
    }

    log::info!(
        "trained {} branch(es), final epoch loss {:.4}",
        k_total,
        epoch_losses.last().copied().unwrap_or(0.0)
    );
    Ok(TrainOutput {
        params,
        refined: label_sets.split_off(1),
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::{BBox, Word};

    fn doc(words: &[(&str, [f64; 4])]) -> Document {
        Document {
            doc_id: "d".into(),
            page_width: 1000,
            page_height: 1000,
            words: words
                .iter()
                .enumerate()
                .map(|(id, (t, b))| Word {
                    id,
                    text: t.to_string(),
                    bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
                })
                .collect(),
            phrases: None,
        }
    }

    #[test]
    fn loss_term_expansion() {
        let t = loss_terms(3, 1.0);
        let pairs: Vec<(usize, usize)> = t.iter().map(|s| (s.branch, s.labels)).collect();
        assert_eq!(
            pairs,
            vec![(0, 0), (1, 1), (1, 0), (2, 1), (2, 0), (2, 2), (2, 0)]
        );
        assert!(loss_terms(1, 1.0).len() == 1);
        let ablated = loss_terms(2, 0.0);
        assert_eq!(ablated[2].weight, 0.0);
    }

    #[test]
    fn total_loss_matches_written_sum() {
        let l = vec![
            vec![1.0, 0.0, 0.0],
            vec![2.0, 3.0, 0.0],
            vec![5.0, 7.0, 11.0],
        ];
        assert_eq!(total_loss(&l[..1], 1.0), 1.0);
        assert_eq!(
            total_loss(&l, 1.0),
            1.0 + 3.0 + 2.0 + 7.0 + 5.0 + 11.0 + 5.0
        );
        assert_eq!(total_loss(&l[..2], 0.0), 1.0 + 3.0);
        assert_eq!(total_loss(&l[..2], 0.5), 1.0 + 3.0 + 1.0);
    }

    #[test]
    fn refine_keeps_document_max() {
        // classes: background, A
        let rows = vec![vec![0.95, 0.05], vec![0.4, 0.6], vec![0.7, 0.3]];
        assert_eq!(refine_rows(&rows, &[0, 1, 2], 0.1), vec![0, 1, 0]);
    }

    #[test]
    fn refine_threshold_and_argmax_gate() {
        let low = vec![vec![0.92, 0.08], vec![0.95, 0.05]];
        assert_eq!(refine_rows(&low, &[0, 1], 0.1), vec![0, 0]);
        // word 1 has the highest A score but predicts background; word 2
        // predicts A with a lower score and is not promoted
        let rows = vec![
            vec![0.8, 0.1, 0.1],
            vec![0.5, 0.45, 0.05],
            vec![0.3, 0.3, 0.4],
        ];
        assert_eq!(refine_rows(&rows, &[0, 1, 2], 0.1), vec![0, 0, 2]);
    }

    #[test]
    fn refine_ties_go_to_reading_order() {
        let rows = vec![vec![0.4, 0.6], vec![0.4, 0.6]];
        assert_eq!(refine_rows(&rows, &[1, 0], 0.1), vec![0, 1]);
    }

    #[test]
    fn average_of_opposite_rows() {
        let a = vec![vec![1.0, 0.0]];
        let b = vec![vec![0.0, 1.0]];
        assert_eq!(average_rows(&[a, b]), vec![vec![0.5, 0.5]]);
    }

    #[test]
    fn anchor_grows_over_date_phrase() {
        let schema = FieldSchema::invoice_default();
        let d = doc(&[
            ("Jan", [0.50, 0.10, 0.53, 0.12]),
            ("31,", [0.535, 0.10, 0.56, 0.12]),
            ("2020", [0.565, 0.10, 0.60, 0.12]),
            ("Total", [0.10, 0.80, 0.15, 0.82]),
        ]);
        let date = schema.by_name("inv_date").unwrap().id;
        let mut rows = vec![vec![0.0; 8]; 4];
        for (w, p) in [(0, 0.55), (1, 0.7), (2, 0.6)] {
            rows[w][date] = p;
            rows[w][0] = 1.0 - p;
        }
        rows[3][0] = 1.0;
        let v = values_from_rows(&d, &rows, &schema, &GroupingConfig::default(), 0.1);
        assert_eq!(
            v.fields.get("inv_date").map(String::as_str),
            Some("Jan 31, 2020")
        );
        assert_eq!(v.fields.len(), 1);

        rows[2][date] = 0.2;
        rows[2][0] = 0.8;
        let v = values_from_rows(&d, &rows, &schema, &GroupingConfig::default(), 0.1);
        assert_eq!(v.fields["inv_date"], "Jan 31,");
    }

    #[test]
    fn config_validation() {
        assert!(PleConfig::default().validate().is_ok());
        let bad = PleConfig {
            branches: 0,
            ..PleConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PleConfig {
            beta: -1.0,
            ..PleConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
