//! TOML experiment configuration.
//!
//! One file drives a whole experiment. Every section is optional and falls
//! back to the desk-scale defaults; command-line flags override file values
//! afterwards.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::real::FloatMode;
use crate::training::{EvalSchedule, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// JSONL or CSV corpus; when absent a synthetic corpus is generated.
    pub input: Option<PathBuf>,
    pub synthetic_notes: usize,
    pub class_balance: f64,
    pub corpus_seed: u64,
    pub test_size: usize,
    pub supervised_size: usize,
    pub split_seed: u64,
    pub tokenizer_merges: usize,
    /// Notes of the pretrain split used to learn merges (0 = all).
    pub tokenizer_sample: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            input: None,
            synthetic_notes: 54_000,
            class_balance: 0.5,
            corpus_seed: 1,
            test_size: 2_000,
            supervised_size: 2_000,
            split_seed: 2,
            tokenizer_merges: 4_744,
            tokenizer_sample: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Explicit label counts; overrides the log-spaced grid when non-empty.
    pub cases: Vec<usize>,
    pub lo: usize,
    pub hi: usize,
    pub n_cases: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            cases: vec![20, 60, 200, 600, 2000],
            lo: 20,
            hi: 2000,
            n_cases: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub run_a: bool,
    pub run_b: bool,
    pub min_epochs: usize,
    pub min_iterations: usize,
    /// Ceiling on per-case fine-tuning iterations.
    pub max_iterations: usize,
    pub eval: EvalSchedule,
    pub threshold: f64,
    /// Target AUC for the label-efficiency factor.
    pub tau: f64,
    pub float_mode: FloatMode,
    pub save_checkpoints: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            run_a: true,
            run_b: true,
            min_epochs: 50,
            min_iterations: 3_000,
            max_iterations: 20_000,
            eval: EvalSchedule::default(),
            threshold: 0.5,
            tau: 0.95,
            float_mode: FloatMode::F32,
            save_checkpoints: true,
        }
    }
}

impl HarnessConfig {
    /// `max(min_epochs · n, min_iterations)`, capped at `max_iterations`.
    pub fn iteration_budget(&self, n_labels: usize) -> usize {
        (self.min_epochs * n_labels)
            .max(self.min_iterations)
            .min(self.max_iterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `vocab_size` is replaced by the trained tokenizer's size.
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub corpus: CorpusConfig,
    pub grid: GridConfig,
    pub harness: HarnessConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            pretrain: TrainConfig {
                max_iterations: 50_000,
                ..TrainConfig::default()
            },
            finetune: TrainConfig::default(),
            corpus: CorpusConfig::default(),
            grid: GridConfig::default(),
            harness: HarnessConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies one `section.key=value` override, parsing the value as a TOML
    /// literal (bare words are taken as strings).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
            .map(|mut t| t.remove("v").expect("parsed key"))
            .unwrap_or_else(|_| toml::Value::String(raw.trim().to_string()));
        let mut doc = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut doc;
        for part in key.trim().split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        }
        *slot = value;
        *self = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.finetune.validate()?;
        let c = &self.corpus;
        if !(c.class_balance > 0.0 && c.class_balance < 1.0) {
            return Err(Error::Config("class_balance must be in (0, 1)".into()));
        }
        if c.test_size == 0 || c.supervised_size == 0 {
            return Err(Error::Config("test_size and supervised_size must be positive".into()));
        }
        if !self.harness.run_a && !self.harness.run_b {
            return Err(Error::Config("at least one scenario must run".into()));
        }
        Ok(())
    }
}
