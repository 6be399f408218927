//! Library behaviour checked against small independent reimplementations.

mod common;

use std::collections::BTreeSet;

use common::{permuted, random_doc};
use ffrg_core::grouping::{group_words, GroupingConfig};
use ffrg_core::model::network::{Head, Linear};
use ffrg_core::model::{forward, FeatureMatrix, ModelDims, ModelParams};
use ffrg_core::reading_order;
use ffrg_core::similarity::string_distance;
use ffrg_core::Document;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn components(n: usize, linked: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in 0..i {
            if linked(i, j) {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

fn oracle_reading_order(doc: &Document) -> Vec<usize> {
    let w = &doc.words;
    let cy = |i: usize| 0.5 * (w[i].bbox.y0 + w[i].bbox.y1);
    let h = |i: usize| w[i].bbox.y1 - w[i].bbox.y0;
    let mut lines = components(w.len(), |i, j| {
        (cy(i) - cy(j)).abs() <= 0.5 * h(i).min(h(j))
    });
    for line in &mut lines {
        line.sort_by(|&a, &b| w[a].bbox.x0.partial_cmp(&w[b].bbox.x0).unwrap());
    }
    let top = |line: &Vec<usize>| line.iter().map(|&i| w[i].bbox.y0).fold(f64::MAX, f64::min);
    lines.sort_by(|a, b| top(a).partial_cmp(&top(b)).unwrap());
    lines.concat()
}

#[test]
fn reading_order_matches_oracle() {
    for seed in 0..200 {
        let doc = random_doc(seed, 50);
        assert_eq!(
            reading_order(&doc),
            oracle_reading_order(&doc),
            "seed {seed}"
        );
    }
}

#[test]
fn reading_order_ignores_input_order() {
    for seed in 0..100 {
        let doc = random_doc(seed, 50);
        let (shuffled, perm) = permuted(&doc, seed + 1000);
        let mapped: Vec<usize> = reading_order(&shuffled).iter().map(|&i| perm[i]).collect();
        assert_eq!(mapped, reading_order(&doc), "seed {seed}");
    }
}

fn oracle_groups(
    doc: &Document,
    eps_scale: f64,
    vertical_penalty: f64,
) -> BTreeSet<BTreeSet<usize>> {
    let w = &doc.words;
    let mut heights: Vec<f64> = w.iter().map(|x| x.bbox.y1 - x.bbox.y0).collect();
    heights.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = heights.len();
    let median = if n % 2 == 1 {
        heights[n / 2]
    } else {
        (heights[n / 2 - 1] + heights[n / 2]) / 2.0
    };
    let eps = eps_scale * median;
    let dist = |i: usize, j: usize| {
        let (a, b) = (&w[i].bbox, &w[j].bbox);
        let gap = if a.x1 < b.x0 {
            b.x0 - a.x1
        } else if b.x1 < a.x0 {
            a.x0 - b.x1
        } else {
            0.0
        };
        let dy = ((a.y0 + a.y1) - (b.y0 + b.y1)).abs() / 2.0;
        (gap * gap + (vertical_penalty * dy).powi(2)).sqrt()
    };
    components(n, |i, j| dist(i, j) <= eps)
        .into_iter()
        .map(|c| c.into_iter().collect())
        .collect()
}

fn as_sets(doc: &Document, cfg: &GroupingConfig) -> BTreeSet<BTreeSet<usize>> {
    group_words(doc, cfg)
        .into_iter()
        .map(|p| p.word_ids.into_iter().collect())
        .collect()
}

#[test]
fn grouping_equals_union_find_closure() {
    let cfg = GroupingConfig::default();
    for seed in 0..200 {
        let doc = random_doc(seed, 50);
        let got = as_sets(&doc, &cfg);
        assert_eq!(
            got,
            oracle_groups(&doc, cfg.eps_scale, cfg.vertical_penalty),
            "seed {seed}"
        );
        let covered: usize = got.iter().map(|g| g.len()).sum();
        assert_eq!(covered, doc.words.len());
    }
}

#[test]
fn grouping_ignores_input_order() {
    let cfg = GroupingConfig::default();
    for seed in 0..100 {
        let doc = random_doc(seed, 50);
        let (shuffled, perm) = permuted(&doc, seed + 7);
        let mapped: BTreeSet<BTreeSet<usize>> = as_sets(&shuffled, &cfg)
            .into_iter()
            .map(|g| g.into_iter().map(|i| perm[i]).collect())
            .collect();
        assert_eq!(mapped, as_sets(&doc, &cfg), "seed {seed}");
    }
}

pub const JW_PAIRS: [(&str, &str); 25] = [
    ("MARTHA", "MARHTA"),
    ("DWAYNE", "DUANE"),
    ("DIXON", "DICKSONX"),
    ("JELLYFISH", "SMELLYFISH"),
    ("invoice number", "invoice no"),
    ("invoice #", "invoice no."),
    ("po number", "p.o. number"),
    ("purchase order", "purchase order no"),
    ("total", "total amount"),
    ("amount due", "balance due"),
    ("due date", "date due"),
    ("invoice date", "date"),
    ("tax", "vat"),
    ("total tax", "sales tax"),
    ("abc", "abc"),
    ("abc", "xyz"),
    ("a", "a"),
    ("a", "b"),
    ("ab", "ba"),
    ("crate", "trace"),
    ("martha", "marhta"),
    ("dixon", "dicksonx"),
    ("payment due", "pay by"),
    ("order", "ordre"),
    ("subtotal", "sub total"),
];

#[test]
fn jaro_winkler_matches_reference() {
    for (a, b) in JW_PAIRS {
        let reference = 1.0 - strsim::jaro_winkler(&a.to_lowercase(), &b.to_lowercase());
        let got = string_distance(a, b);
        assert!(
            (got - reference).abs() <= 1e-6,
            "{a:?} vs {b:?}: {got} != {reference}"
        );
    }
    assert!((string_distance("MARTHA", "MARHTA") - 0.0389).abs() < 1e-4);
}

fn affine(l: &Linear, x: &[f64]) -> Vec<f64> {
    (0..l.outputs)
        .map(|r| {
            l.bias[r]
                + (0..l.inputs)
                    .map(|c| l.weight[r * l.inputs + c] * x[c])
                    .sum::<f64>()
        })
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter()
        .map(|x| if x > 0.0 { x } else { 0.0 })
        .collect()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

#[test]
fn forward_matches_naive_evaluation() {
    for seed in 0..10 {
        let dims = ModelDims {
            input: 12,
            hidden: 7,
            branch_hidden: 5,
            classes: 4,
            branches: 3,
        };
        let params = ModelParams::init(dims, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        let mut feats = FeatureMatrix::zeros(6, 12);
        feats.data.iter_mut().for_each(|v| {
            *v = if rng.gen_bool(0.4) {
                0.0
            } else {
                rng.gen_range(-2.0..2.0)
            }
        });
        for k in 0..3 {
            let got = forward(&params, &feats, k).unwrap();
            for (i, row) in got.iter().enumerate() {
                let h = relu(affine(&params.trunk, feats.row(i)));
                let logits = match &params.heads[k] {
                    Head::Linear(l) => affine(l, &h),
                    Head::Hidden { hidden, out } => affine(out, &relu(affine(hidden, &h))),
                };
                let want = softmax(&logits);
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                for (g, w) in row.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-12, "seed {seed} branch {k} row {i}");
                    assert!(*g > 0.0 && *g < 1.0);
                }
            }
        }
    }
}
