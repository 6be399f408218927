//! Geometry the clean generator promises for every placed field.

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;

use ffrg_core::bootstrap::{center_offset, in_neighbor_zone, key_score, RuleParams};
use ffrg_core::grouping::{group_words, GroupingConfig};
use ffrg_core::synth::{generate, Preset};
use ffrg_core::FieldSchema;

#[test]
fn clean_values_sit_right_of_or_below_an_exact_key() {
    let schema = FieldSchema::invoice_default();
    let params = RuleParams::default();
    let (docs, gold) = generate(&Preset::Clean.config(200, 7), &schema).unwrap();
    let mut placed = 0;
    for (doc, ann) in docs.iter().zip(&gold) {
        let phrases = group_words(doc, &GroupingConfig::default());
        for f in &schema.fields {
            let Some(span) = ann.spans.get(&f.name) else {
                continue;
            };
            placed += 1;
            let span: BTreeSet<usize> = span.iter().copied().collect();
            let value = phrases
                .iter()
                .position(|p| p.word_ids.iter().copied().collect::<BTreeSet<_>>() == span)
                .unwrap_or_else(|| panic!("{}: {} is not a whole phrase", doc.doc_id, f.name));
            let keys: Vec<usize> = (0..phrases.len())
                .filter(|&i| key_score(&phrases[i], f) == 1.0)
                .collect();
            assert_eq!(keys.len(), 1, "{}: {}", doc.doc_id, f.name);
            let key = &phrases[keys[0]];
            let (_, angle) = center_offset(key, &phrases[value]);
            assert!(
                angle.abs() < 1e-9 || (angle - FRAC_PI_2).abs() < 1e-9,
                "{}: {} at angle {angle}",
                doc.doc_id,
                f.name
            );
            assert!(
                in_neighbor_zone(key, &phrases[value], &params),
                "{}: {}",
                doc.doc_id,
                f.name
            );
        }
    }
    assert!(placed >= 3 * docs.len());
}
