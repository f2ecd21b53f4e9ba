//! Model, training and run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Scheme;
use crate::error::{Error, Result};

/// Component removals and information-flow blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct Ablation {
    /// Slot-aware first round of the intent feature is replaced by zeros.
    pub no_slot2int: bool,
    /// Intent-aware first round of the slot feature is replaced by zeros.
    pub no_int2slot: bool,
    pub no_slot_memory: bool,
    pub no_intent_memory: bool,
    pub no_local_calculation: bool,
    pub no_global_recurrence: bool,
}

impl Ablation {
    pub fn validate(&self) -> Result<()> {
        if self.no_slot_memory && self.no_int2slot {
            return Err(Error::config(
                "no-slot-memory and no-int2slot are contradictory: without a slot memory there is no slot feature to block",
            ));
        }
        if self.no_intent_memory && self.no_slot2int {
            return Err(Error::config(
                "no-intent-memory and no-slot2int are contradictory: without an intent memory there is no intent feature to block",
            ));
        }
        Ok(())
    }

    pub fn is_full_model(&self) -> bool {
        *self == Ablation::default()
    }

    /// Flag names that are set, in CLI spelling.
    pub fn active(&self) -> Vec<&'static str> {
        [
            (self.no_slot_memory, "no-slot-memory"),
            (self.no_intent_memory, "no-intent-memory"),
            (self.no_local_calculation, "no-local-calculation"),
            (self.no_global_recurrence, "no-global-recurrence"),
            (self.no_slot2int, "no-slot2int"),
            (self.no_int2slot, "no-int2slot"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect()
    }

    pub fn set(&mut self, flag: &str) -> Result<()> {
        let slot = match flag.trim_start_matches("--") {
            "no-slot-memory" => &mut self.no_slot_memory,
            "no-intent-memory" => &mut self.no_intent_memory,
            "no-local-calculation" => &mut self.no_local_calculation,
            "no-global-recurrence" => &mut self.no_global_recurrence,
            "no-slot2int" => &mut self.no_slot2int,
            "no-int2slot" => &mut self.no_int2slot,
            other => return Err(Error::config(format!("unknown ablation flag {other:?}"))),
        };
        *slot = true;
        Ok(())
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ModelConfig {
    /// Scheme of the tags the model emits.
    pub scheme: Scheme,
    pub hidden_size: usize,
    pub blocks: usize,
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub tie_memories: bool,
    pub gate_bias: bool,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Bio2,
            hidden_size: 128,
            blocks: 3,
            word_dim: 300,
            char_dim: 30,
            char_filters: 100,
            tie_memories: true,
            gate_bias: true,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || !self.hidden_size.is_multiple_of(2) {
            return Err(Error::config(format!(
                "hidden-size must be a positive even number, got {}",
                self.hidden_size
            )));
        }
        if self.blocks == 0 {
            return Err(Error::config("blocks must be at least 1"));
        }
        for (name, v) in [
            ("word-dim", self.word_dim),
            ("char-dim", self.char_dim),
            ("char-filters", self.char_filters),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        self.ablation.validate()
    }

    /// Width of the per-token embedding `x_t`.
    pub fn input_dim(&self) -> usize {
        self.word_dim + self.char_filters
    }
}

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub clip_norm: f64,
    pub dropout: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub decay_factor: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Stop as soon as validation slot F1 and intent accuracy are both 1.
    pub stop_on_perfect: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            clip_norm: 3.0,
            dropout: 0.5,
            lambda: 0.5,
            epochs: 50,
            seed: 1,
            batch_size: 1,
            decay_factor: 0.95,
            patience: 0,
            stop_on_perfect: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config("lr must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip-norm must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch-size must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config("decay-factor must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// JSON document driving the command-line tool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    pub train: PathBuf,
    #[serde(default)]
    pub valid: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
    /// Scheme of the tags in the corpus files.
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Scheme the model is trained in; defaults to `scheme`.
    #[serde(default)]
    pub train_scheme: Option<Scheme>,

    #[serde(default = "d_hidden")]
    pub hidden_size: usize,
    #[serde(default = "d_blocks")]
    pub blocks: usize,
    #[serde(default = "d_word_dim")]
    pub word_dim: usize,
    #[serde(default = "d_char_dim")]
    pub char_dim: usize,
    #[serde(default = "d_char_filters")]
    pub char_filters: usize,
    #[serde(default = "yes")]
    pub tie_memories: bool,
    #[serde(default = "yes")]
    pub gate_bias: bool,

    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_clip")]
    pub clip_norm: f64,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_decay")]
    pub decay_factor: f64,
    #[serde(default)]
    pub patience: usize,
    #[serde(default)]
    pub stop_on_perfect: bool,

    #[serde(default)]
    pub no_slot2int: bool,
    #[serde(default)]
    pub no_int2slot: bool,
    #[serde(default)]
    pub no_slot_memory: bool,
    #[serde(default)]
    pub no_intent_memory: bool,
    #[serde(default)]
    pub no_local_calculation: bool,
    #[serde(default)]
    pub no_global_recurrence: bool,
}

fn default_scheme() -> Scheme {
    Scheme::Bio2
}
fn yes() -> bool {
    true
}
fn d_hidden() -> usize {
    ModelConfig::default().hidden_size
}
fn d_blocks() -> usize {
    ModelConfig::default().blocks
}
fn d_word_dim() -> usize {
    ModelConfig::default().word_dim
}
fn d_char_dim() -> usize {
    ModelConfig::default().char_dim
}
fn d_char_filters() -> usize {
    ModelConfig::default().char_filters
}
fn d_lr() -> f64 {
    TrainConfig::default().lr
}
fn d_clip() -> f64 {
    TrainConfig::default().clip_norm
}
fn d_dropout() -> f64 {
    TrainConfig::default().dropout
}
fn d_lambda() -> f64 {
    TrainConfig::default().lambda
}
fn d_epochs() -> usize {
    TrainConfig::default().epochs
}
fn d_seed() -> u64 {
    TrainConfig::default().seed
}
fn d_batch() -> usize {
    TrainConfig::default().batch_size
}
fn d_decay() -> f64 {
    TrainConfig::default().decay_factor
}

impl RunConfig {
    /// Parses and validates a config. Relative paths resolve against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.train);
        resolve(&mut cfg.checkpoint_dir);
        for p in [&mut cfg.valid, &mut cfg.test, &mut cfg.embeddings]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_config().validate()
    }

    /// Every input path must exist before any computation starts.
    pub fn check_paths(&self) -> Result<()> {
        let inputs = [
            ("train", Some(&self.train)),
            ("valid", self.valid.as_ref()),
            ("test", self.test.as_ref()),
            ("embeddings", self.embeddings.as_ref()),
        ];
        for (field, path) in inputs {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::config(format!("{field}: no such file {}", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn train_scheme(&self) -> Scheme {
        self.train_scheme.unwrap_or(self.scheme)
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            no_slot2int: self.no_slot2int,
            no_int2slot: self.no_int2slot,
            no_slot_memory: self.no_slot_memory,
            no_intent_memory: self.no_intent_memory,
            no_local_calculation: self.no_local_calculation,
            no_global_recurrence: self.no_global_recurrence,
        }
    }

    pub fn set_ablation(&mut self, a: Ablation) {
        self.no_slot2int = a.no_slot2int;
        self.no_int2slot = a.no_int2slot;
        self.no_slot_memory = a.no_slot_memory;
        self.no_intent_memory = a.no_intent_memory;
        self.no_local_calculation = a.no_local_calculation;
        self.no_global_recurrence = a.no_global_recurrence;
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            scheme: self.train_scheme(),
            hidden_size: self.hidden_size,
            blocks: self.blocks,
            word_dim: self.word_dim,
            char_dim: self.char_dim,
            char_filters: self.char_filters,
            tie_memories: self.tie_memories,
            gate_bias: self.gate_bias,
            ablation: self.ablation(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            clip_norm: self.clip_norm,
            dropout: self.dropout,
            lambda: self.lambda,
            epochs: self.epochs,
            seed: self.seed,
            batch_size: self.batch_size,
            decay_factor: self.decay_factor,
            patience: self.patience,
            stop_on_perfect: self.stop_on_perfect,
        }
    }
}
