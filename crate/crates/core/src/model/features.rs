//! Deterministic per-word features: hashed character trigrams, shape and
//! type flags and box geometry, for the word and for the phrases around it.

use crate::doc::{reading_order, reading_rank, BBox, Document};
use crate::grouping::{phrases_of, GroupingConfig};
use crate::typer::{type_of, DataType, TypeSet};

pub const HASH_DIM: usize = 256;
pub const SHAPE_DIM: usize = 16;
pub const GEOM_DIM: usize = 4;
/// Features describing one word on its own.
pub const TOKEN_DIM: usize = HASH_DIM + SHAPE_DIM + GEOM_DIM;
/// Gap and position flags appended after the four token blocks.
pub const REL_DIM: usize = 6;
/// Own word, radius context, left neighbor phrase, phrase above.
pub const FEATURE_DIM: usize = 4 * TOKEN_DIM + REL_DIM;
/// Words whose centers lie within this distance form the radius context.
pub const CONTEXT_RADIUS: f64 = 0.15;
/// How far above a phrase, in its own line heights, a neighbor may sit.
pub const ABOVE_REACH: f64 = 4.0;
/// Scale, in line heights, for the gap to the left neighbor.
const LEFT_REACH: f64 = 20.0;
pub const HASH_SEED: u64 = 0x5eed_f0f0_1234_abcd;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    // final avalanche so low bits depend on every byte
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^ (h >> 33)
}

/// Row-major matrix of per-word feature vectors, indexed by word id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        FeatureMatrix {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn hash_trigrams(text: &str, out: &mut [f64]) {
    let chars: Vec<char> = std::iter::once('^')
        .chain(text.to_lowercase().chars())
        .chain(std::iter::once('$'))
        .collect();
    let mut buf = [0u8; 12];
    for tri in chars.windows(3) {
        let mut len = 0;
        for c in tri {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let h = fnv1a(HASH_SEED, &buf[..len]);
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        out[(h % HASH_DIM as u64) as usize] += sign;
    }
}

fn shape_flags(text: &str, phrase_types: TypeSet, out: &mut [f64]) {
    let n = text.chars().count().max(1) as f64;
    let alpha: Vec<char> = text.chars().filter(|c| c.is_alphabetic()).collect();
    let digits = text.chars().filter(|c| c.is_ascii_digit()).count() as f64;
    let punct = text.chars().filter(|c| !c.is_alphanumeric()).count() as f64;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    out[0] = flag(!alpha.is_empty() && alpha.iter().all(|c| c.is_uppercase()));
    out[1] = flag(
        alpha.len() > 1 && alpha[0].is_uppercase() && alpha[1..].iter().all(|c| c.is_lowercase()),
    );
    out[2] = flag(!alpha.is_empty() && alpha.iter().all(|c| c.is_lowercase()));
    out[3] = flag(digits > 0.0);
    out[4] = digits / n;
    out[5] = alpha.len() as f64 / n;
    out[6] = punct / n;
    out[7] = flag(text.contains(['$', '€', '£', '¥']));
    out[8] = flag(phrase_types.contains(DataType::Money));
    out[9] = flag(phrase_types.contains(DataType::Date));
    out[10] = flag(phrase_types.contains(DataType::Number));
    out[11] = flag(phrase_types.contains(DataType::Other));
    let bucket = match text.chars().count() {
        0..=2 => 12,
        3..=5 => 13,
        6..=9 => 14,
        _ => 15,
    };
    out[bucket] = 1.0;
}

/// One feature row per word, in word-id order.
///
/// Besides the word itself a row carries the mean token features of its own
/// phrase, of the nearest phrase to its left on the same line and of the
/// nearest phrase above it. Sums run in reading order so the result does not
/// depend on the input word order.
pub fn featurize(doc: &Document, grouping: &GroupingConfig) -> FeatureMatrix {
    let m = doc.words.len();
    let mut feats = FeatureMatrix::zeros(m, FEATURE_DIM);
    if m == 0 {
        return feats;
    }
    let rank = reading_rank(doc);
    let phrases = phrases_of(doc, grouping);
    let mut word_types = vec![TypeSet::default(); m];
    for p in &phrases {
        let t = type_of(&p.text).unwrap_or_default();
        for &w in &p.word_ids {
            word_types[w] = t;
        }
    }
    let mut token = FeatureMatrix::zeros(m, TOKEN_DIM);
    for w in &doc.words {
        let row = token.row_mut(w.id);
        hash_trigrams(&w.text, &mut row[..HASH_DIM]);
        shape_flags(
            &w.text,
            word_types[w.id],
            &mut row[HASH_DIM..HASH_DIM + SHAPE_DIM],
        );
        let b = &w.bbox;
        row[HASH_DIM + SHAPE_DIM..].copy_from_slice(&[b.cx(), b.cy(), b.width(), b.height()]);
    }

    let members: Vec<Vec<usize>> = phrases
        .iter()
        .map(|p| {
            let mut ids = p.word_ids.clone();
            ids.sort_by_key(|&w| rank[w]);
            ids
        })
        .collect();
    let means: Vec<Vec<f64>> = members
        .iter()
        .map(|ids| {
            let mut acc = vec![0.0; TOKEN_DIM];
            for &w in ids {
                acc.iter_mut().zip(token.row(w)).for_each(|(a, t)| *a += t);
            }
            let inv = 1.0 / ids.len() as f64;
            acc.iter_mut().for_each(|a| *a *= inv);
            acc
        })
        .collect();
    let radius = radius_context(doc, &token);
    let first: Vec<usize> = members.iter().map(|ids| rank[ids[0]]).collect();
    let boxes: Vec<&BBox> = phrases.iter().map(|p| &p.bbox).collect();

    for (p, ids) in members.iter().enumerate() {
        let b = boxes[p];
        let h = b.height().max(1e-6);
        let left = nearest(boxes.len(), &first, |q| {
            let o = boxes[q];
            let overlap = o.y1.min(b.y1) - o.y0.max(b.y0);
            (q != p && overlap >= 0.5 * o.height().min(b.height()) && o.x1 <= b.x0 + 0.25 * h)
                .then_some(b.x0 - o.x1)
        });
        let above = nearest(boxes.len(), &first, |q| {
            let o = boxes[q];
            let overlap = o.x1.min(b.x1) - o.x0.max(b.x0);
            let gap = b.y0 - o.y1;
            (q != p && overlap > 0.0 && gap >= -0.25 * h && gap <= ABOVE_REACH * h).then_some(gap)
        });
        for (i, &w) in ids.iter().enumerate() {
            let row = feats.row_mut(w);
            row[..TOKEN_DIM].copy_from_slice(token.row(w));
            row[TOKEN_DIM..2 * TOKEN_DIM].copy_from_slice(&radius[w]);
            let rel = 4 * TOKEN_DIM;
            if let Some((q, gap)) = left {
                row[2 * TOKEN_DIM..3 * TOKEN_DIM].copy_from_slice(&means[q]);
                row[rel] = 1.0;
                row[rel + 1] = (gap / h).clamp(0.0, LEFT_REACH) / LEFT_REACH;
            }
            if let Some((q, gap)) = above {
                row[3 * TOKEN_DIM..4 * TOKEN_DIM].copy_from_slice(&means[q]);
                row[rel + 2] = 1.0;
                row[rel + 3] = (gap / h).clamp(0.0, ABOVE_REACH) / ABOVE_REACH;
            }
            row[rel + 4] = if i == 0 { 1.0 } else { 0.0 };
            row[rel + 5] = if i + 1 == ids.len() { 1.0 } else { 0.0 };
        }
    }
    feats
}

/// Mean token features of the other words whose centers lie within
/// `CONTEXT_RADIUS`, summed in reading order.
fn radius_context(doc: &Document, token: &FeatureMatrix) -> Vec<Vec<f64>> {
    let order = reading_order(doc);
    doc.words
        .iter()
        .map(|w| {
            let mut acc = vec![0.0; TOKEN_DIM];
            let mut count = 0usize;
            for &o in &order {
                let ob = &doc.words[o].bbox;
                if o != w.id
                    && (ob.cx() - w.bbox.cx()).hypot(ob.cy() - w.bbox.cy()) <= CONTEXT_RADIUS
                {
                    acc.iter_mut().zip(token.row(o)).for_each(|(a, t)| *a += t);
                    count += 1;
                }
            }
            if count > 0 {
                let inv = 1.0 / count as f64;
                acc.iter_mut().for_each(|a| *a *= inv);
            }
            acc
        })
        .collect()
}

/// Candidate with the smallest distance; ties go to the earlier phrase in
/// reading order.
fn nearest(n: usize, first: &[usize], dist: impl Fn(usize) -> Option<f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for q in 0..n {
        if let Some(d) = dist(q) {
            let better = match best {
                None => true,
                Some((b, bd)) => d < bd || (d == bd && first[q] < first[b]),
            };
            if better {
                best = Some((q, d));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::{BBox, Word};

    fn doc(words: &[(&str, [f64; 4])]) -> Document {
        Document {
            doc_id: "f".into(),
            page_width: 1,
            page_height: 1,
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
    fn directional_context() {
        let d = doc(&[
            ("Total", [0.1, 0.1, 0.15, 0.112]),
            ("$5.00", [0.3, 0.1, 0.35, 0.112]),
            ("far", [0.9, 0.9, 0.95, 0.912]),
            ("Date", [0.1, 0.5, 0.14, 0.512]),
            ("1/2/20", [0.1, 0.518, 0.15, 0.53]),
        ]);
        let g = GroupingConfig::default();
        let a = featurize(&d, &g);
        assert_eq!(a, featurize(&d, &g));
        assert_eq!(a.dim, FEATURE_DIM);
        let rel = 4 * TOKEN_DIM;

        // isolated word: no context and no neighbors
        let far = a.row(2);
        assert!(far[TOKEN_DIM..rel].iter().all(|&v| v == 0.0));
        assert_eq!(&far[rel..], &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);

        // the amount sees the key on its left
        let amount = a.row(1);
        assert_eq!(
            &amount[2 * TOKEN_DIM..3 * TOKEN_DIM],
            &a.row(0)[..TOKEN_DIM]
        );
        assert_eq!(amount[rel], 1.0);
        assert!((amount[rel + 1] - (0.15 / 0.012) / 20.0).abs() < 1e-9);

        // the date sees its key above and nothing on the left
        let date = a.row(4);
        assert_eq!(&date[3 * TOKEN_DIM..rel], &a.row(3)[..TOKEN_DIM]);
        assert_eq!(date[rel], 0.0);
        assert_eq!(date[rel + 2], 1.0);

        // money flag comes from the phrase type
        assert_eq!(a.row(1)[HASH_DIM + 8], 1.0);
        assert_eq!(a.row(0)[HASH_DIM + 11], 1.0);
        let geom = &a.row(0)[HASH_DIM + SHAPE_DIM..TOKEN_DIM];
        assert!((geom[0] - 0.125).abs() < 1e-12 && (geom[3] - 0.012).abs() < 1e-12);
    }

    #[test]
    fn trigram_counts_cover_token() {
        let mut v = vec![0.0; HASH_DIM];
        hash_trigrams("abc", &mut v);
        // "^abc$" has three trigrams
        let mass: f64 = v.iter().map(|x| x.abs()).sum();
        assert!((1.0..=3.0).contains(&mass));
    }
}
