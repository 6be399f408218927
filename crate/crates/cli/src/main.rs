mod config;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use ffrg_core::bootstrap::bootstrap;
use ffrg_core::eval::score;
use ffrg_core::grouping::group_words;
use ffrg_core::io;
use ffrg_core::model::{featurize, Checkpoint};
use ffrg_core::pipeline::{self, PipelineConfig};
use ffrg_core::ple::{ensemble_predict, train, values_from_rows, PleConfig};
use ffrg_core::synth::{corruption_report, generate, Preset};
use ffrg_core::{Error, Result, ValueRecord};

use config::{required, FileConfig};

#[derive(Parser, Debug)]
#[command(
    name = "ffrg",
    version,
    about = "Form field extraction from rule-bootstrapped pseudo-labels"
)]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 or unset: one per core).
    #[arg(long, global = true, env = "FFRG_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic invoice corpus with ground truth.
    Synth(SynthArgs),
    /// Attach phrase groupings to documents.
    Group(GroupArgs),
    /// Mine pseudo-labels (and rule-extracted values) with the rule engine.
    Bootstrap(BootstrapArgs),
    /// Train a multi-branch model on bootstrap labels.
    Train(TrainArgs),
    /// Extract field values with a trained model.
    Extract(ExtractArgs),
    /// Score extracted values against gold annotations.
    Eval(EvalArgs),
    /// Mark each prediction as correct, extractor error or value-text error.
    Inspect(InspectArgs),
    /// synth, bootstrap, train, extract and eval in one go.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    out_docs: Option<PathBuf>,
    #[arg(long)]
    out_gold: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GroupArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eps_scale: Option<f64>,
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    #[arg(long)]
    docs: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the rule engine's extracted values.
    #[arg(long)]
    values: Option<PathBuf>,
    /// Log word-level label precision and recall against these annotations.
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    theta_v: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sigma_d: Option<f64>,
    #[arg(long)]
    sigma_a: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    docs: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    branches: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epochs_step1: Option<usize>,
    #[arg(long)]
    epochs_step2: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Train all branches jointly instead of freezing the trunk after step one.
    #[arg(long)]
    single_step: bool,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    docs: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-word predicted classes and boxes, one JSON line per document.
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Directory for one SVG page per document.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Report file; printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also log one line per field.
    #[arg(long)]
    per_field: bool,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    docs: Option<PathBuf>,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    preset: Option<Preset>,
    /// Training documents.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Directory for intermediate files [default: ffrg-pipeline].
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.threads).unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let seed = cli.seed.or(file.seed);
    match cli.command {
        Command::Synth(a) => synth_cmd(a, &file, seed),
        Command::Group(a) => group_cmd(a, &file),
        Command::Bootstrap(a) => bootstrap_cmd(a, &file),
        Command::Train(a) => train_cmd(a, &file, seed),
        Command::Extract(a) => extract_cmd(a, &file),
        Command::Eval(a) => eval_cmd(a, &file),
        Command::Inspect(a) => inspect_cmd(a, &file),
        Command::Pipeline(a) => pipeline_cmd(a, &file, seed),
    }
}

fn synth_cmd(a: SynthArgs, file: &FileConfig, seed: Option<u64>) -> Result<()> {
    let schema = file.schema(a.schema.as_ref())?;
    let mut cfg = file.synth(a.preset);
    if let Some(n) = a.n {
        cfg.n_docs = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out_docs = required(a.out_docs, &file.out_docs, "out-docs")?;
    let out_gold = required(a.out_gold, &file.out_gold, "out-gold")?;
    let (docs, gold) = generate(&cfg, &schema)?;
    io::write_documents(&out_docs, &docs)?;
    io::write_values(&out_gold, &gold)?;
    log::info!("wrote {} documents to {}", docs.len(), out_docs.display());
    Ok(())
}

fn group_cmd(a: GroupArgs, file: &FileConfig) -> Result<()> {
    let mut grouping = file.grouping();
    if let Some(e) = a.eps_scale {
        grouping.eps_scale = e;
    }
    grouping.validate()?;
    let input = required(a.input, &file.docs, "in")?;
    let out = required(a.out, &file.out, "out")?;
    let mut docs = io::read_documents(&input)?;
    let phrases: Vec<_> = docs.par_iter().map(|d| group_words(d, &grouping)).collect();
    let mut count = 0;
    for (d, p) in docs.iter_mut().zip(phrases) {
        count += p.len();
        d.set_phrases(p)?;
    }
    io::write_documents(&out, &docs)?;
    log::info!("grouped {} documents into {count} phrases", docs.len());
    Ok(())
}

fn bootstrap_cmd(a: BootstrapArgs, file: &FileConfig) -> Result<()> {
    let schema = file.schema(a.schema.as_ref())?;
    let mut rules = file.rules();
    rules.theta_v = a.theta_v.unwrap_or(rules.theta_v);
    rules.alpha = a.alpha.unwrap_or(rules.alpha);
    rules.sigma_d = a.sigma_d.unwrap_or(rules.sigma_d);
    rules.sigma_a = a.sigma_a.unwrap_or(rules.sigma_a);
    rules.validate()?;
    let grouping = file.grouping();
    grouping.validate()?;
    let docs_path = required(a.docs, &file.docs, "docs")?;
    let out = required(a.out, &file.labels, "out")?;
    let docs = io::read_documents(&docs_path)?;
    let (labels, values) = bootstrap(&docs, &schema, &rules, &grouping);
    io::write_labels(&out, &labels)?;
    if let Some(v) = a.values.or_else(|| file.values.clone()) {
        io::write_values(&v, &values)?;
    }
    let labeled: usize = labels
        .docs
        .iter()
        .map(|d| d.labels.iter().filter(|&&c| c != 0).count())
        .sum();
    log::info!("labeled {labeled} words in {} documents", docs.len());
    if let Some(g) = a.gold.or_else(|| file.gold.clone()) {
        let gold = io::read_values(&g)?;
        let r = corruption_report(&docs, &gold, &labels, &schema)?;
        log::info!("label precision {:.4} recall {:.4}", r.precision, r.recall);
    }
    Ok(())
}

fn train_cmd(a: TrainArgs, file: &FileConfig, seed: Option<u64>) -> Result<()> {
    let schema = file.schema(a.schema.as_ref())?;
    let base = file.ple();
    let cfg = PleConfig {
        branches: a.branches.unwrap_or(base.branches),
        beta: a.beta.unwrap_or(base.beta),
        epochs_step1: a.epochs_step1.unwrap_or(base.epochs_step1),
        epochs_step2: a.epochs_step2.unwrap_or(base.epochs_step2),
        lr: a.lr.unwrap_or(base.lr),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        hidden: a.hidden.unwrap_or(base.hidden),
        two_step: base.two_step && !a.single_step,
        seed: seed.unwrap_or(base.seed),
        ..base
    };
    cfg.validate()?;
    let grouping = file.grouping();
    let docs_path = required(a.docs, &file.docs, "docs")?;
    let labels_path = required(a.labels, &file.labels, "labels")?;
    let out = required(a.out, &file.model, "out")?;
    let docs = io::read_documents(&docs_path)?;
    let labels = io::read_labels(&labels_path, &docs)?;
    let trained = train(&docs, &labels, &schema, &grouping, &cfg)?;
    for (e, l) in trained.epoch_losses.iter().enumerate() {
        log::info!("epoch {e}: loss {l:.5}");
    }
    Checkpoint {
        schema_hash: schema.hash(),
        params: trained.params,
    }
    .save(&out)?;
    log::info!("saved {}", out.display());
    Ok(())
}

fn load_model(path: &Path, schema: &ffrg_core::FieldSchema) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if ck.schema_hash != schema.hash() {
        return Err(Error::Checkpoint(format!(
            "{} was trained with a different schema",
            path.display()
        )));
    }
    Ok(ck)
}

fn extract_cmd(a: ExtractArgs, file: &FileConfig) -> Result<()> {
    let schema = file.schema(a.schema.as_ref())?;
    let grouping = file.grouping();
    let threshold = file.ple().refine_threshold;
    let model = required(a.model, &file.model, "model")?;
    let docs_path = required(a.docs, &file.docs, "docs")?;
    let out = required(a.out, &file.values, "out")?;
    let ck = load_model(&model, &schema)?;
    let docs = io::read_documents(&docs_path)?;
    let rows: Vec<Vec<Vec<f64>>> = docs
        .par_iter()
        .map(|d| {
            ensemble_predict(&ck.params, &featurize(d, &grouping))
                .map_err(|e| e.context(format!("doc {}", d.doc_id)))
        })
        .collect::<Result<_>>()?;
    let values: Vec<ValueRecord> = docs
        .par_iter()
        .zip(&rows)
        .map(|(d, r)| values_from_rows(d, r, &schema, &grouping, threshold))
        .collect();
    io::write_values(&out, &values)?;
    log::info!("extracted values for {} documents", docs.len());

    let overlay_path = a.overlay.or_else(|| file.overlay.clone());
    let svg_dir = a.svg.or_else(|| file.svg.clone());
    if overlay_path.is_some() || svg_dir.is_some() {
        let overlays: Vec<_> = docs
            .iter()
            .zip(&rows)
            .map(|(d, r)| render::doc_overlay(d, r, &schema))
            .collect();
        if let Some(p) = overlay_path {
            io::write_lines(
                &p,
                overlays
                    .iter()
                    .map(|o| serde_json::to_string(o).expect("overlay serializes")),
            )?;
        }
        if let Some(dir) = svg_dir {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (d, o) in docs.iter().zip(&overlays) {
                let path = render::svg_path(&dir, &d.doc_id);
                std::fs::write(&path, render::prediction_svg(d, o, &schema))
                    .map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs, file: &FileConfig) -> Result<()> {
    let schema = file.schema(a.schema.as_ref())?;
    let pred_path = required(a.pred, &file.pred, "pred")?;
    let gold_path = required(a.gold, &file.gold, "gold")?;
    let gold = io::read_values(&gold_path)?;
    let pred = io::read_values(&pred_path)?;
    let report = score(&pred, &gold, &schema)?;
    if a.per_field {
        for f in report.fields.iter().filter(|f| f.included) {
            log::info!(
                "{:<16} P {:.4} R {:.4} F1 {:.4}",
                f.field,
                f.precision,
                f.recall,
                f.f1
            );
        }
    }
    log::info!(
        "macro P {:.4} R {:.4} F1 {:.4}",
        report.macro_precision,
        report.macro_recall,
        report.macro_f1
    );
    match a.report.or_else(|| file.report.clone()) {
        Some(p) => io::write_lines(&p, [report.to_json()]),
        None => {
            println!("{}", report.to_json());
            Ok(())
        }
    }
}

fn inspect_cmd(a: InspectArgs, file: &FileConfig) -> Result<()> {
    let schema = file.schema(a.schema.as_ref())?;
    let pred_path = required(a.pred, &file.pred, "pred")?;
    let gold_path = required(a.gold, &file.gold, "gold")?;
    let out = required(a.out, &file.overlay, "out")?;
    let pred = io::read_values(&pred_path)?;
    let gold = io::read_values(&gold_path)?;
    let by_id: std::collections::HashMap<&str, &ValueRecord> =
        pred.iter().map(|p| (p.doc_id.as_str(), p)).collect();
    let empty = ValueRecord::default();
    let records: Vec<_> = gold
        .iter()
        .map(|g| {
            g.check_fields(&schema)?;
            let p = by_id.get(g.doc_id.as_str()).copied().unwrap_or(&empty);
            p.check_fields(&schema)?;
            Ok(render::inspect_record(p, g, &schema))
        })
        .collect::<Result<_>>()?;
    io::write_lines(
        &out,
        records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes")),
    )?;
    if let Some(dir) = a.svg.or_else(|| file.svg.clone()) {
        let docs_path = required(a.docs, &file.docs, "docs")?;
        let docs = io::read_documents(&docs_path)?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for r in &records {
            let Some(d) = docs.iter().find(|d| d.doc_id == r.doc_id) else {
                return Err(Error::validation(format!(
                    "doc {} not found in {}",
                    r.doc_id,
                    docs_path.display()
                )));
            };
            let path = render::svg_path(&dir, &d.doc_id);
            std::fs::write(&path, render::inspect_svg(d, r)).map_err(|e| Error::io(&path, e))?;
        }
    }
    log::info!("wrote {} overlay records", records.len());
    Ok(())
}

fn pipeline_cmd(a: PipelineArgs, file: &FileConfig, seed: Option<u64>) -> Result<()> {
    let schema = file.schema(a.schema.as_ref())?;
    let mut synth = file.synth(a.preset);
    if let Some(n) = a.n {
        synth.n_docs = n;
    }
    let defaults = PipelineConfig::default();
    let cfg = PipelineConfig {
        seed: seed.unwrap_or(defaults.seed),
        synth,
        n_test: a.n_test.or(file.n_test).unwrap_or(defaults.n_test),
        grouping: file.grouping(),
        rules: file.rules(),
        ple: file.ple(),
    };
    let out_dir = a
        .out_dir
        .or_else(|| file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("ffrg-pipeline"));
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let out = pipeline::run(&cfg, &schema, &out_dir)?;
    log::info!(
        "rule baseline macro F1 {:.4}",
        out.bootstrap_report.macro_f1
    );
    println!("{}", out.report.to_json());
    Ok(())
}
