//! Label-to-prompt mapping and the three generation procedures:
//! single-sequence, sequence-pair, and varying-temperature contrast.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::AutoregressiveLm;
use crate::sampling::{generate_sequence, SamplingConfig};
use crate::vocab::{TokenId, TokenSequence, Vocabulary};

/// Slot marker in pair templates for the sampled first sequence.
pub const XS_SLOT: &str = "{XS}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Single,
    Pair,
    TemperatureContrast,
}

/// One label's prompt: a token pattern ending at the generation point.
/// Pair patterns contain the `{XS}` slot exactly once.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub label: usize,
    pub task_type: TaskType,
    pub pattern: Vec<String>,
}

impl PromptTemplate {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let slots = self.pattern.iter().filter(|t| t.as_str() == XS_SLOT).count();
        match self.task_type {
            TaskType::Single | TaskType::TemperatureContrast => {
                if slots != 0 {
                    return Err(Error::config(
                        "prompts.pattern",
                        "single templates must not contain {XS}",
                    ));
                }
            }
            TaskType::Pair => {
                if slots != 1 {
                    return Err(Error::config(
                        "prompts.pattern",
                        "pair templates must contain {XS} exactly once",
                    ));
                }
            }
        }
        for tok in &self.pattern {
            if tok != XS_SLOT && vocab.id_of(tok).is_none() {
                return Err(Error::config(
                    "prompts.pattern",
                    format!("unknown prompt token `{tok}`"),
                ));
            }
        }
        Ok(())
    }

    /// Renders the prompt as BOS plus the pattern, with `{XS}` replaced by
    /// the sampled first sequence. Pure: same inputs, same tokens.
    pub fn render(&self, vocab: &Vocabulary, first_seq: Option<&TokenSequence>) -> Result<TokenSequence> {
        let mut ids = vec![vocab.bos()];
        for tok in &self.pattern {
            if tok == XS_SLOT {
                match first_seq {
                    Some(xs) => ids.extend_from_slice(xs.ids()),
                    None => {
                        return Err(Error::InvalidSample(
                            "pair template rendered without a first sequence".into(),
                        ))
                    }
                }
            } else {
                ids.push(vocab.id_of(tok).unwrap());
            }
        }
        Ok(TokenSequence::new(ids))
    }
}

/// Predicate constraints on candidate first sequences.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConstraints {
    pub min_len: Option<usize>,
    pub max_len: Option<usize>,
    pub starts_with: Option<String>,
    pub ends_with: Option<String>,
}

impl SamplerConstraints {
    pub fn matches(&self, seq: &TokenSequence, vocab: &Vocabulary) -> bool {
        if let Some(min) = self.min_len {
            if seq.len() < min {
                return false;
            }
        }
        if let Some(max) = self.max_len {
            if seq.len() > max {
                return false;
            }
        }
        if let Some(ref tok) = self.starts_with {
            match seq.ids().first() {
                Some(&id) => {
                    if vocab.token(id) != tok {
                        return false;
                    }
                }
                None => return false,
            }
        }
        if let Some(ref tok) = self.ends_with {
            match seq.ids().last() {
                Some(&id) => {
                    if vocab.token(id) != tok {
                        return false;
                    }
                }
                None => return false,
            }
        }
        true
    }
}

/// The unit of synthesized supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub id: u64,
    pub first_seq: Option<TokenSequence>,
    pub generated: TokenSequence,
    pub label: usize,
    pub score: Option<f64>,
}

/// Uniform draw of a corpus sequence satisfying the constraints.
pub fn sample_first_sequence<'a>(
    corpus: &'a [TokenSequence],
    constraints: &SamplerConstraints,
    vocab: &Vocabulary,
    rng: &mut ChaCha8Rng,
) -> Result<&'a TokenSequence> {
    if corpus.is_empty() {
        return Err(Error::config("corpus", "empty first-sequence corpus"));
    }
    let candidates: Vec<&TokenSequence> =
        corpus.iter().filter(|s| constraints.matches(s, vocab)).collect();
    if candidates.is_empty() {
        return Err(Error::ConstraintUnsatisfiable);
    }
    Ok(candidates[rng.gen_range(0..candidates.len())])
}

/// Single-sequence generation: x_g from the label prompt alone.
pub fn generate_single(
    model: &dyn AutoregressiveLm,
    template: &PromptTemplate,
    cfg: &SamplingConfig,
    rng: &mut ChaCha8Rng,
    id: u64,
) -> Result<GeneratedSample> {
    if template.task_type != TaskType::Single {
        return Err(Error::config("prompts.task_type", "expected a single-sequence template"));
    }
    let prompt = template.render(model.vocab(), None)?;
    let generated = generate_sequence(model, &prompt, cfg, &HashSet::new(), rng)?;
    Ok(GeneratedSample { id, first_seq: None, generated, label: template.label, score: None })
}

/// Sequence-pair generation: sample x_s from the corpus, condition on
/// `[x_s; w_y]`, and use x_s as the repetition reward set.
pub fn generate_pair(
    model: &dyn AutoregressiveLm,
    template: &PromptTemplate,
    corpus: &[TokenSequence],
    constraints: &SamplerConstraints,
    cfg: &SamplingConfig,
    rng: &mut ChaCha8Rng,
    id: u64,
) -> Result<GeneratedSample> {
    if template.task_type != TaskType::Pair {
        return Err(Error::config("prompts.task_type", "expected a pair template"));
    }
    let vocab = model.vocab();
    let first = sample_first_sequence(corpus, constraints, vocab, rng)?.clone();
    let prompt = template.render(vocab, Some(&first))?;
    let first_set: HashSet<TokenId> = first.ids().iter().copied().collect();
    let generated = generate_sequence(model, &prompt, cfg, &first_set, rng)?;
    Ok(GeneratedSample { id, first_seq: Some(first), generated, label: template.label, score: None })
}

/// One contrast-stream sample: the sequence starts from a random
/// stop-word-analog seed token and continues at the given temperature.
/// The stored x_g includes the seed token.
pub fn generate_contrast_one(
    model: &dyn AutoregressiveLm,
    seed_tokens: &[TokenId],
    temperature: f64,
    label: usize,
    cfg: &SamplingConfig,
    rng: &mut ChaCha8Rng,
    id: u64,
) -> Result<GeneratedSample> {
    if seed_tokens.is_empty() {
        return Err(Error::config("prompts.seed_tokens", "contrast tasks need seed tokens"));
    }
    let vocab = model.vocab();
    let seed = seed_tokens[rng.gen_range(0..seed_tokens.len())];
    let prompt = TokenSequence::new(vec![vocab.bos(), seed]);
    let step_cfg = SamplingConfig { temperature, ..cfg.clone() };
    let tail = generate_sequence(model, &prompt, &step_cfg, &HashSet::new(), rng)?;
    let mut generated = TokenSequence::new(vec![seed]);
    for &t in tail.ids() {
        generated.push(t);
    }
    Ok(GeneratedSample { id, first_seq: None, generated, label, score: None })
}

/// Varying-temperature generation: a low-temperature stream labeled as the
/// acceptable analog and a high-temperature stream as the unacceptable one.
#[allow(clippy::too_many_arguments)]
pub fn generate_temperature_contrast(
    model: &dyn AutoregressiveLm,
    seed_tokens: &[TokenId],
    tau_low: f64,
    tau_high: f64,
    labels: (usize, usize),
    cfg: &SamplingConfig,
    count: usize,
    seed: u64,
) -> Result<(Vec<GeneratedSample>, Vec<GeneratedSample>)> {
    if !(tau_low > 0.0 && tau_low < tau_high) {
        return Err(Error::config("sampling.temperature", "need 0 < tau_low < tau_high"));
    }
    let mut low = Vec::with_capacity(count);
    let mut high = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = crate::rng::stream_rng(seed, "contrast-low", i as u64);
        low.push(generate_contrast_one(model, seed_tokens, tau_low, labels.0, cfg, &mut rng, i as u64)?);
        let mut rng = crate::rng::stream_rng(seed, "contrast-high", i as u64);
        high.push(generate_contrast_one(
            model,
            seed_tokens,
            tau_high,
            labels.1,
            cfg,
            &mut rng,
            (count + i) as u64,
        )?);
    }
    Ok((low, high))
}
