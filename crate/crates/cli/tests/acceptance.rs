//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ffrg_core::bootstrap::{bootstrap, RuleParams};
use ffrg_core::eval::{aggregate_runs, score, EvalReport};
use ffrg_core::grouping::{group_words, GroupingConfig};
use ffrg_core::model::{loss_and_grad, FeatureMatrix, LossTerm, ModelDims, ModelParams};
use ffrg_core::pipeline::{self, PipelineConfig};
use ffrg_core::ple::{loss_terms, PleConfig};
use ffrg_core::similarity::string_distance;
use ffrg_core::synth::{corruption_report, generate, Preset};
use ffrg_core::{BBox, Document, FieldSchema, ValueRecord, Word};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

fn rule_engine_on_clean() -> Outcome {
    let schema = FieldSchema::invoice_default();
    let start = Instant::now();
    let report = single_thread(|| {
        let (docs, gold) = generate(&Preset::Clean.config(500, 7), &schema).unwrap();
        let (_, values) = bootstrap(
            &docs,
            &schema,
            &RuleParams::default(),
            &GroupingConfig::default(),
        );
        score(&values, &gold, &schema).unwrap()
    });
    let took = start.elapsed();
    outcome(
        report.macro_f1 >= 0.95 && took < Duration::from_secs(30),
        format!(
            "macro F1 {:.4} in {:.1}s on one thread",
            report.macro_f1,
            took.as_secs_f64()
        ),
    )
}

fn noisy_label_regime() -> Outcome {
    let schema = FieldSchema::invoice_default();
    let (docs, gold) = generate(&Preset::NoisyBench.config(1000, 7), &schema).unwrap();
    let (labels, _) = bootstrap(
        &docs,
        &schema,
        &RuleParams::default(),
        &GroupingConfig::default(),
    );
    let r = corruption_report(&docs, &gold, &labels, &schema).unwrap();
    let band = 0.5..=0.8;
    outcome(
        band.contains(&r.precision) && band.contains(&r.recall),
        format!("label precision {:.4} recall {:.4}", r.precision, r.recall),
    )
}

fn run_seeds(ple: PleConfig) -> (EvalReport, Duration) {
    let schema = FieldSchema::invoice_default();
    let start = Instant::now();
    let mut reports = Vec::new();
    for seed in 0..SEEDS {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            seed,
            synth: Preset::NoisyBench.config(1000, 0),
            n_test: 300,
            ple,
            ..PipelineConfig::default()
        };
        reports.push(pipeline::run(&cfg, &schema, dir.path()).unwrap().report);
    }
    (aggregate_runs(&reports).unwrap(), start.elapsed())
}

fn line(name: &str, r: &EvalReport) -> String {
    format!(
        "{name} P {:.4} R {:.4} F1 {:.4}",
        r.macro_precision, r.macro_recall, r.macro_f1
    )
}

fn loss_structure() -> Outcome {
    let terms = loss_terms(3, 1.0);
    let bootstrap_terms: Vec<_> = terms.iter().filter(|t| t.labels == 0).collect();
    let unweighted_at_first = bootstrap_terms.iter().filter(|t| t.branch == 0).count();
    let written = [(0, 0), (1, 1), (1, 0), (2, 1), (2, 0), (2, 2), (2, 0)];
    let got: Vec<(usize, usize)> = terms.iter().map(|t| (t.branch, t.labels)).collect();
    let weighted = loss_terms(3, 0.3)
        .iter()
        .filter(|t| t.weight == 0.3)
        .count();
    outcome(
        terms.len() == 7
            && bootstrap_terms.len() == 4
            && unweighted_at_first == 1
            && weighted == 3
            && got == written,
        format!(
            "{} terms, bootstrap set used {} times",
            terms.len(),
            bootstrap_terms.len()
        ),
    )
}

fn gradient_check() -> Outcome {
    let dims = ModelDims {
        input: 20,
        hidden: 8,
        branch_hidden: 6,
        classes: 5,
        branches: 3,
    };
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::init(dims, seed);
        for i in 0..params.num_params() {
            let v = params.get_flat(i);
            params.set_flat(i, v + rng.gen_range(-0.05..0.05));
        }
        let rows = 9;
        let mut feats = FeatureMatrix::zeros(rows, dims.input);
        feats
            .data
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let labels: Vec<Vec<usize>> = (0..3)
            .map(|_| (0..rows).map(|_| rng.gen_range(0..dims.classes)).collect())
            .collect();
        let terms: Vec<LossTerm> = loss_terms(3, 1.0)
            .iter()
            .map(|s| LossTerm {
                branch: s.branch,
                labels: &labels[s.labels],
                weight: s.weight,
            })
            .collect();
        let (_, grad) = loss_and_grad(&params, &feats, &terms).unwrap();
        for _ in 0..100 {
            let i = rng.gen_range(0..params.num_params());
            let mut p = params.clone();
            let base = p.get_flat(i);
            p.set_flat(i, base + 1e-5);
            let up = loss_and_grad(&p, &feats, &terms).unwrap().0;
            p.set_flat(i, base - 1e-5);
            let down = loss_and_grad(&p, &feats, &terms).unwrap().0;
            let numeric = (up - down) / 2e-5;
            let analytic = grad.get_flat(i);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    outcome(worst <= 1e-4, format!("worst relative error {worst:.2e}"))
}

fn random_doc(rng: &mut ChaCha8Rng, max_words: usize) -> Document {
    let n = rng.gen_range(1..=max_words);
    let mut words = Vec::new();
    for id in 0..n {
        let x0 = rng.gen_range(0.0..0.9);
        let y0 = rng.gen_range(0.0..0.3);
        let h = rng.gen_range(0.009..0.014);
        let w = rng.gen_range(0.01..0.06);
        words.push(Word {
            id,
            text: format!("w{id}"),
            bbox: BBox::new(x0, y0, x0 + w, y0 + h).unwrap(),
        });
    }
    Document {
        doc_id: format!("r{n}"),
        page_width: 850,
        page_height: 1100,
        words,
        phrases: None,
    }
}

fn union_find_groups(doc: &Document, cfg: &GroupingConfig) -> BTreeSet<BTreeSet<usize>> {
    let w = &doc.words;
    let n = w.len();
    let mut heights: Vec<f64> = w.iter().map(|x| x.bbox.y1 - x.bbox.y0).collect();
    heights.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        heights[n / 2]
    } else {
        (heights[n / 2 - 1] + heights[n / 2]) / 2.0
    };
    let eps = cfg.eps_scale * median;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&w[i].bbox, &w[j].bbox);
            let gap = (b.x0 - a.x1).max(a.x0 - b.x1).max(0.0);
            let dy = ((a.y0 + a.y1) - (b.y0 + b.y1)).abs() / 2.0;
            if gap.hypot(cfg.vertical_penalty * dy) <= eps {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            }
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().insert(i);
    }
    groups.into_values().collect()
}

fn clustering_oracle() -> Outcome {
    let cfg = GroupingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for _ in 0..200 {
        let doc = random_doc(&mut rng, 50);
        let got: BTreeSet<BTreeSet<usize>> = group_words(&doc, &cfg)
            .into_iter()
            .map(|p| p.word_ids.into_iter().collect())
            .collect();
        if got != union_find_groups(&doc, &cfg) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} of 200 documents differ"),
    )
}

const JW_PAIRS: [(&str, &str); 25] = [
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

fn jaro_winkler_oracle() -> Outcome {
    let worst = JW_PAIRS
        .iter()
        .map(|(a, b)| {
            let reference = 1.0 - strsim::jaro_winkler(&a.to_lowercase(), &b.to_lowercase());
            (string_distance(a, b) - reference).abs()
        })
        .fold(0.0, f64::max);
    let martha = string_distance("MARTHA", "MARHTA");
    outcome(
        worst <= 1e-6 && (martha - 0.0389).abs() < 1e-4,
        format!("worst deviation {worst:.1e}, MARTHA/MARHTA {martha:.4}"),
    )
}

fn record(id: &str, kv: &[(&str, &str)]) -> ValueRecord {
    let mut r = ValueRecord::new(id);
    for (k, v) in kv {
        r.fields.insert(k.to_string(), v.to_string());
    }
    r
}

fn metric_hand_case() -> Outcome {
    let schema = FieldSchema::invoice_default();
    let gold = [
        record("a", &[("inv_number", "1"), ("po_number", "9")]),
        record("b", &[("po_number", "8")]),
    ];
    let pred = [
        record("a", &[("inv_number", "1"), ("po_number", "9")]),
        record("b", &[("inv_number", "5")]),
    ];
    let r = score(&pred, &gold, &schema).unwrap();
    let a = r.field("inv_number").unwrap();
    let b = r.field("po_number").unwrap();
    outcome(
        (a.tp, a.fp, a.fn_) == (Some(1), Some(1), Some(0))
            && (b.tp, b.fp, b.fn_) == (Some(1), Some(0), Some(1))
            && r.macro_f1 == 2.0 / 3.0,
        format!("macro F1 {}", r.macro_f1),
    )
}

fn pipeline_bytes(dir: &Path, threads: &str) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_ffrg"))
        .args([
            "pipeline",
            "--preset",
            "noisy-bench",
            "--n",
            "200",
            "--n-test",
            "50",
            "--seed",
            "7",
        ])
        .args(["--threads", threads, "--out-dir"])
        .arg(dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let read = |name: &str| std::fs::read(dir.join(name)).unwrap();
    (out.stdout, read(pipeline::REPORT), read(pipeline::MODEL))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<_> = [("a", "1"), ("b", "1"), ("c", "4")]
        .iter()
        .map(|(name, threads)| pipeline_bytes(&tmp.path().join(name), threads))
        .collect();
    let same = runs.windows(2).all(|w| w[0] == w[1]);
    outcome(
        same,
        format!(
            "{} byte checkpoint, identical across runs and 1/4 threads: {same}",
            runs[0].2.len()
        ),
    )
}

#[test]
fn acceptance() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("rule engine on clean corpus", rule_engine_on_clean()),
        ("noisy bootstrap label regime", noisy_label_regime()),
    ];

    let full = PleConfig::default();
    let (k3, k3_time) = run_seeds(full);
    let (k1, k1_time) = run_seeds(PleConfig {
        branches: 1,
        ..full
    });
    let (no_beta, _) = run_seeds(PleConfig { beta: 0.0, ..full });
    let (joint, _) = run_seeds(PleConfig {
        two_step: false,
        ..full
    });
    eprintln!("{}", line("K=1", &k1));
    eprintln!("{}", line("K=3", &k3));
    eprintln!("{}", line("beta=0", &no_beta));
    eprintln!("{}", line("joint", &joint));
    let gain = 100.0 * (k3.macro_f1 - k1.macro_f1);
    let budget = k1_time + k3_time;
    results.push((
        "ensemble gain over single branch",
        outcome(
            gain >= 2.0 && budget < Duration::from_secs(600),
            format!("{gain:+.2} F1 points, {:.0}s", budget.as_secs_f64()),
        ),
    ));
    let dp = 100.0 * (k3.macro_precision - k1.macro_precision);
    let dr = 100.0 * (k3.macro_recall - k1.macro_recall);
    results.push((
        "more branches trade recall for precision",
        outcome(
            dp >= 3.0 && dr <= 0.0,
            format!("precision {dp:+.2}, recall {dr:+.2} points"),
        ),
    ));
    results.push((
        "ablations fall below the full method",
        outcome(
            no_beta.macro_f1 < k3.macro_f1 && joint.macro_f1 < k3.macro_f1,
            format!(
                "full {:.4}, beta=0 {:.4}, joint {:.4}",
                k3.macro_f1, no_beta.macro_f1, joint.macro_f1
            ),
        ),
    ));

    results.push(("aggregate loss structure", loss_structure()));
    results.push(("analytic gradients", gradient_check()));
    results.push(("grouping equals union-find closure", clustering_oracle()));
    results.push(("Jaro-Winkler against reference", jaro_winkler_oracle()));
    results.push(("two-field metric hand case", metric_hand_case()));
    results.push(("pipeline determinism", determinism()));

    for (i, (name, o)) in results.iter().enumerate() {
        println!(
            "{} {:>2}. {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    let failed: Vec<_> = results
        .iter()
        .filter(|(_, o)| !o.pass)
        .map(|(n, _)| *n)
        .collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
