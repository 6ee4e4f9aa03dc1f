//! Experiment configuration: JSON in, flags override fields.

use anyhow::{bail, Context, Result};
use riskal_core::active::{ClassifierKind, InitialSelection};
use riskal_core::data::GeneratorConfig;
use riskal_core::decision::{DecisionProcess, DecisionProcessDoc};
use riskal_core::kernel::KernelConfig;
use riskal_core::mrvm::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Where the monitoring stream comes from: the built-in generator (a fresh
/// draw per run index) or a fixed feature CSV with labeling indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Generator(GeneratorConfig),
    Csv {
        path: PathBuf,
        damage_start_index: usize,
        #[serde(default)]
        cold_ranges: Vec<(usize, usize)>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Generator(GeneratorConfig::default())
    }
}

/// Decision process: the built-in table set or an inline document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProcessSource {
    Named(String),
    Inline(DecisionProcessDoc),
}

impl Default for ProcessSource {
    fn default() -> Self {
        ProcessSource::Named("z24_default".to_string())
    }
}

impl ProcessSource {
    pub fn build(&self, renormalize: bool) -> Result<DecisionProcess> {
        match self {
            ProcessSource::Named(name) if name == "z24_default" => {
                Ok(DecisionProcess::z24_default())
            }
            ProcessSource::Named(other) => bail!("unknown decision process {other:?}"),
            ProcessSource::Inline(doc) => DecisionProcess::from_doc(doc.clone(), renormalize)
                .context("invalid inline decision process"),
        }
    }
}

fn default_runs() -> usize {
    50
}

fn default_initial_count() -> usize {
    10
}

fn default_classifiers() -> Vec<ClassifierKind> {
    ClassifierKind::ALL.to_vec()
}

fn default_selection() -> InitialSelection {
    InitialSelection::Random
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub decision_process: ProcessSource,
    pub classifiers: Vec<ClassifierKind>,
    pub runs: usize,
    pub base_seed: u64,
    pub initial_labelled_count: usize,
    pub initial_selection: InitialSelection,
    pub kernel: KernelConfig,
    /// Trainer settings; the variant field is overridden per classifier.
    pub train: TrainConfig,
    pub evaluate_milestones: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::default(),
            decision_process: ProcessSource::default(),
            classifiers: default_classifiers(),
            runs: default_runs(),
            base_seed: 42,
            initial_labelled_count: default_initial_count(),
            initial_selection: default_selection(),
            kernel: KernelConfig::default(),
            train: TrainConfig::default(),
            evaluate_milestones: default_true(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            bail!("runs must be >= 1");
        }
        if self.classifiers.is_empty() {
            bail!("classifier list must not be empty");
        }
        if self.initial_labelled_count == 0 {
            bail!("initial_labelled_count must be >= 1");
        }
        Ok(())
    }
}
