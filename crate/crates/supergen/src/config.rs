//! TOML pipeline configuration: typed sections with strict field checking,
//! plus dotted-path overrides (`--set section.key=value`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::NeuralLmConfig;
use crate::metrics::Metric;
use crate::net::ClassifierConfig;
use crate::sampling::SamplingConfig;
use crate::selection::{PolicyKind, SelectionPolicy};
use crate::tasks::SyntheticTaskSpec;
use crate::train::TrainConfig;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmKind {
    Ngram,
    Neural,
}

/// Language-model pretraining section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmSection {
    pub kind: LmKind,
    pub order: usize,
    pub kappa: f32,
    pub context_window: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f32,
}

impl Default for LmSection {
    fn default() -> Self {
        let n = NeuralLmConfig::default();
        LmSection {
            kind: LmKind::Ngram,
            order: 2,
            kappa: 0.1,
            context_window: n.context_window,
            embed_dim: n.embed_dim,
            hidden_dim: n.hidden_dim,
            epochs: n.epochs,
            learning_rate: n.learning_rate,
        }
    }
}

impl LmSection {
    pub fn neural_config(&self) -> NeuralLmConfig {
        NeuralLmConfig {
            context_window: self.context_window,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::config("lm.order", "must be >= 1"));
        }
        if self.kappa <= 0.0 {
            return Err(Error::config("lm.kappa", "must be > 0"));
        }
        if self.kind == LmKind::Neural
            && (self.context_window == 0 || self.embed_dim == 0 || self.hidden_dim == 0)
        {
            return Err(Error::config("lm", "neural dimensions must be > 0"));
        }
        Ok(())
    }
}

/// Decoding section; `top_k = 0` disables the restriction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub temperature: f64,
    pub top_k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub max_len: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection { temperature: 1.0, top_k: 10, alpha: 1.0, beta: 1.2, max_len: 16 }
    }
}

impl SamplingSection {
    pub fn sampling_config(&self, stop_tokens: Vec<TokenId>) -> SamplingConfig {
        SamplingConfig {
            temperature: self.temperature,
            top_k: if self.top_k == 0 { None } else { Some(self.top_k) },
            alpha: self.alpha,
            beta: self.beta,
            max_len: self.max_len,
            stop_tokens,
        }
    }
}

/// Generation section: pool size per class, and the temperature pair for
/// contrast tasks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSection {
    pub per_class: usize,
    pub tau_low: f64,
    pub tau_high: f64,
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection { per_class: 10_000, tau_low: 0.1, tau_high: 5.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSection {
    pub policy: PolicyKind,
    pub n_per_class: usize,
    pub merge_pools: bool,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection { policy: PolicyKind::TopN, n_per_class: 3000, merge_pools: false }
    }
}

impl SelectionSection {
    pub fn selection_policy(&self, n_classes: usize) -> SelectionPolicy {
        SelectionPolicy {
            per_label: vec![self.policy; n_classes],
            n_per_class: self.n_per_class,
            merge_pools: self.merge_pools,
        }
    }
}

/// Fine-tuning section (classifier dimensions plus loop hyperparameters).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub total_steps: usize,
    pub ensemble_interval: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub delta: f64,
    pub lambda_max: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let c = ClassifierConfig::default();
        TrainSection {
            embed_dim: c.embed_dim,
            hidden_dim: c.hidden_dim,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            total_steps: t.total_steps,
            ensemble_interval: t.ensemble_interval,
            epsilon: t.epsilon,
            gamma: t.gamma,
            delta: t.delta,
            lambda_max: t.lambda_max,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            total_steps: self.total_steps,
            ensemble_interval: self.ensemble_interval,
            epsilon: self.epsilon,
            gamma: self.gamma,
            delta: self.delta,
            lambda_max: self.lambda_max,
            seed,
        }
    }

    pub fn classifier_config(&self, n_classes: usize) -> ClassifierConfig {
        ClassifierConfig { embed_dim: self.embed_dim, hidden_dim: self.hidden_dim, n_classes }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub metric: Metric,
    pub seeds: Vec<u64>,
    /// Gold examples per label for the few-shot extension.
    pub fewshot_per_label: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection { metric: Metric::Accuracy, seeds: vec![0, 1, 2, 3, 4], fewshot_per_label: 16 }
    }
}

/// The full pipeline configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub task: SyntheticTaskSpec,
    pub lm: LmSection,
    pub sampling: SamplingSection,
    pub generation: GenerationSection,
    pub selection: SelectionSection,
    pub training: TrainSection,
    pub evaluation: EvaluationSection,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.lm.validate()?;
        if self.generation.per_class == 0 {
            return Err(Error::config("generation.per_class", "must be > 0"));
        }
        if self.generation.per_class < self.selection.n_per_class {
            return Err(Error::config(
                "selection.n_per_class",
                "cannot exceed generation.per_class",
            ));
        }
        if self.selection.n_per_class == 0 {
            return Err(Error::config("selection.n_per_class", "must be > 0"));
        }
        if self.sampling.temperature < 0.0 {
            return Err(Error::config("sampling.temperature", "must be >= 0"));
        }
        if self.sampling.max_len == 0 {
            return Err(Error::config("sampling.max_len", "must be >= 1"));
        }
        if !(self.generation.tau_low > 0.0 && self.generation.tau_low < self.generation.tau_high) {
            return Err(Error::config("generation.tau_low", "need 0 < tau_low < tau_high"));
        }
        if self.evaluation.seeds.len() < 2 {
            return Err(Error::config("evaluation.seeds", "need at least 2 seeds"));
        }
        // section conversions carry the remaining range checks
        self.training.train_config(0).validate()?;
        Ok(())
    }

    /// Parses a TOML string, then applies `key=value` overrides on dotted
    /// paths before typed deserialization.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::config("config", format!("invalid TOML: {e}")))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let cfg: PipelineConfig = table
            .try_into()
            .map_err(|e| Error::config("config", format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, overrides)
    }

    /// Canonical serialized form, the input to config hashing.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Stop tokens for generation: EOS, plus class markers so a generation
    /// never runs into another class's prompt region.
    pub fn stop_tokens(&self, vocab: &Vocabulary) -> Vec<TokenId> {
        let mut stops = vec![vocab.eos()];
        for c in 0..self.task.n_classes {
            if let Some(id) = vocab.id_of(&format!("<y{c}>")) {
                stops.push(id);
            }
        }
        stops
    }
}

/// Applies one `section.key=value` override in place. The value is parsed
/// as TOML (so numbers, booleans, and arrays work) and falls back to a
/// plain string.
fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::config("--set", format!("`{item}` is not key=value")))?;
    let path = path.trim();
    let raw = raw.trim();
    if path.is_empty() {
        return Err(Error::config("--set", "empty key path"));
    }
    let value: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = path.split('.').collect();
    let mut current = table;
    for part in &parts[..parts.len() - 1] {
        current = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config("--set", format!("`{part}` is not a table")))?;
    }
    current.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
