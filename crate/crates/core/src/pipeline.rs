//! End-to-end run: synthesize train and test corpora, mine bootstrap labels,
//! train, extract on the test corpus and score.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap, RuleParams};
use crate::error::Result;
use crate::eval::{score, EvalReport};
use crate::grouping::GroupingConfig;
use crate::io;
use crate::model::Checkpoint;
use crate::ple::{extract_corpus, train, PleConfig};
use crate::schema::FieldSchema;
use crate::seed;
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Generator settings for the training corpus; the test corpus uses the
    /// same settings with `n_test` documents and its own seed.
    pub synth: SynthConfig,
    pub n_test: usize,
    pub grouping: GroupingConfig,
    pub rules: RuleParams,
    pub ple: PleConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            synth: SynthConfig::default(),
            n_test: 100,
            grouping: GroupingConfig::default(),
            rules: RuleParams::default(),
            ple: PleConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: EvalReport,
    pub bootstrap_report: EvalReport,
    pub model_path: PathBuf,
    pub report_path: PathBuf,
}

pub const TRAIN_DOCS: &str = "train_docs.jsonl";
pub const TRAIN_GOLD: &str = "train_gold.jsonl";
pub const TEST_DOCS: &str = "test_docs.jsonl";
pub const TEST_GOLD: &str = "test_gold.jsonl";
pub const LABELS: &str = "bootstrap_labels.jsonl";
pub const MODEL: &str = "model.ffrg";
pub const VALUES: &str = "values.jsonl";
pub const REPORT: &str = "report.json";

/// Runs every stage, writing intermediate files into `out_dir`.
pub fn run(cfg: &PipelineConfig, schema: &FieldSchema, out_dir: &Path) -> Result<PipelineOutput> {
    cfg.grouping.validate()?;
    cfg.rules.validate()?;
    cfg.ple.validate()?;
    let train_cfg = SynthConfig {
        seed: seed::derive(cfg.seed, &[1]),
        ..cfg.synth.clone()
    };
    let test_cfg = SynthConfig {
        seed: seed::derive(cfg.seed, &[2]),
        n_docs: cfg.n_test,
        ..cfg.synth.clone()
    };
    let (train_docs, train_gold) = generate(&train_cfg, schema)?;
    let (test_docs, test_gold) = generate(&test_cfg, schema)?;
    io::write_documents(&out_dir.join(TRAIN_DOCS), &train_docs)?;
    io::write_values(&out_dir.join(TRAIN_GOLD), &train_gold)?;
    io::write_documents(&out_dir.join(TEST_DOCS), &test_docs)?;
    io::write_values(&out_dir.join(TEST_GOLD), &test_gold)?;
    log::info!(
        "synthesized {} train and {} test documents",
        train_docs.len(),
        test_docs.len()
    );

    let (labels, _) = bootstrap(&train_docs, schema, &cfg.rules, &cfg.grouping);
    io::write_labels(&out_dir.join(LABELS), &labels)?;
    let (_, rule_values) = bootstrap(&test_docs, schema, &cfg.rules, &cfg.grouping);
    let bootstrap_report = score(&rule_values, &test_gold, schema)?;
    log::info!(
        "rule extraction on test set: macro F1 {:.4}",
        bootstrap_report.macro_f1
    );

    let ple = PleConfig {
        seed: cfg.seed,
        ..cfg.ple
    };
    let trained = train(&train_docs, &labels, schema, &cfg.grouping, &ple)?;
    let model_path = out_dir.join(MODEL);
    Checkpoint {
        schema_hash: schema.hash(),
        params: trained.params,
    }
    .save(&model_path)?;
    let ck = Checkpoint::load(&model_path)?;

    let extracted = extract_corpus(
        &ck.params,
        &test_docs,
        schema,
        &cfg.grouping,
        ple.refine_threshold,
    )?;
    let values: Vec<_> = extracted.into_iter().map(|(v, _)| v).collect();
    io::write_values(&out_dir.join(VALUES), &values)?;
    let report = score(&values, &test_gold, schema)?;
    let report_path = out_dir.join(REPORT);
    io::write_lines(&report_path, [report.to_json()])?;
    log::info!(
        "model extraction on test set: macro F1 {:.4}",
        report.macro_f1
    );
    Ok(PipelineOutput {
        report,
        bootstrap_report,
        model_path,
        report_path,
    })
}
