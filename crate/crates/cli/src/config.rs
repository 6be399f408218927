//! JSON config file shared by every subcommand. Command-line flags win over
//! values read here.

use std::path::{Path, PathBuf};

use ffrg_core::bootstrap::RuleParams;
use ffrg_core::grouping::GroupingConfig;
use ffrg_core::ple::PleConfig;
use ffrg_core::synth::{Preset, SynthConfig};
use ffrg_core::{Error, FieldSchema, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,

    pub schema: Option<PathBuf>,
    pub docs: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub values: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub overlay: Option<PathBuf>,
    pub svg: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub out_docs: Option<PathBuf>,
    pub out_gold: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,

    pub preset: Option<Preset>,
    pub n: Option<usize>,
    pub n_test: Option<usize>,

    pub synth: Option<SynthConfig>,
    pub grouping: Option<GroupingConfig>,
    pub rules: Option<RuleParams>,
    pub ple: Option<PleConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn schema(&self, flag: Option<&PathBuf>) -> Result<FieldSchema> {
        match flag.or(self.schema.as_ref()) {
            Some(p) => FieldSchema::load(p),
            None => Ok(FieldSchema::invoice_default()),
        }
    }

    pub fn grouping(&self) -> GroupingConfig {
        self.grouping.unwrap_or_default()
    }

    pub fn rules(&self) -> RuleParams {
        self.rules.unwrap_or_default()
    }

    pub fn ple(&self) -> PleConfig {
        self.ple.unwrap_or_default()
    }

    /// Generator settings: an explicit preset flag wins, then a `synth`
    /// section, then a preset named in the file, then the clean preset.
    pub fn synth(&self, preset_flag: Option<Preset>) -> SynthConfig {
        let base = match (preset_flag, &self.synth, self.preset) {
            (Some(p), _, _) => p.config(100, 7),
            (None, Some(s), _) => s.clone(),
            (None, None, Some(p)) => p.config(100, 7),
            (None, None, None) => Preset::Clean.config(100, 7),
        };
        SynthConfig {
            n_docs: self.n.unwrap_or(base.n_docs),
            seed: self.seed.unwrap_or(base.seed),
            ..base
        }
    }
}

/// Flag value, else config value, else a usage error naming the flag.
pub fn required(flag: Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| file.clone())
        .ok_or_else(|| Error::config(format!("missing --{name} (flag or config key)")))
}
