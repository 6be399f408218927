#![allow(dead_code)]

use ffrg_core::{BBox, Document, Word};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 12] = [
    "Invoice",
    "No:",
    "PO",
    "#",
    "Total",
    "$1,204.50",
    "Jan",
    "3,",
    "2021",
    "Due",
    "Date",
    "A-1042",
];

/// Words scattered over a handful of text lines, with gaps both inside
/// and between phrases.
pub fn random_doc(seed: u64, max_words: usize) -> Document {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_words);
    let lines = rng.gen_range(1..=8);
    let line_y: Vec<f64> = (0..lines).map(|_| rng.gen_range(0.02..0.95)).collect();
    let words = (0..n)
        .map(|id| {
            let h = rng.gen_range(0.009..0.014);
            let y = line_y[rng.gen_range(0..lines)] + rng.gen_range(-0.002..0.002);
            let x = rng.gen_range(0.0..0.9);
            let w = rng.gen_range(0.01..0.08);
            Word {
                id,
                text: WORDS[rng.gen_range(0..WORDS.len())].to_string(),
                bbox: BBox::new(x, y, (x + w).min(1.0), (y + h).min(1.0)).unwrap(),
            }
        })
        .collect();
    Document {
        doc_id: format!("r{seed}"),
        page_width: 850,
        page_height: 1100,
        words,
        phrases: None,
    }
}

/// The same document with its words listed in a different order.
pub fn permuted(doc: &Document, seed: u64) -> (Document, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..doc.words.len()).collect();
    perm.shuffle(&mut rng);
    // new word i is old word perm[i]
    let words = perm
        .iter()
        .enumerate()
        .map(|(i, &old)| Word {
            id: i,
            ..doc.words[old].clone()
        })
        .collect();
    (
        Document {
            words,
            ..doc.clone()
        },
        perm,
    )
}
