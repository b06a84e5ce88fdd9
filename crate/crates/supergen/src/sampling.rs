//! Decoding engine: temperature softmax, repetition reward/penalty,
//! top-k restriction, and the recursive generation loop.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lm::AutoregressiveLm;
use crate::numeric::argmax;
use crate::vocab::{TokenId, TokenSequence};

/// Decoding hyperparameters. `temperature = 0` selects greedy decoding;
/// the repetition adjustment still applies in that mode (computed with an
/// effective temperature of 1 before the argmax).
#[derive(Debug, Clone)]
pub struct SamplingConfig {
    pub temperature: f64,
    /// `None` means no top-k restriction.
    pub top_k: Option<usize>,
    /// Reward divisor for tokens of the first sequence not yet generated.
    pub alpha: f64,
    /// Penalty divisor for tokens already generated.
    pub beta: f64,
    pub max_len: usize,
    pub stop_tokens: Vec<TokenId>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 0.2,
            top_k: Some(10),
            alpha: 1.0,
            beta: 1.2,
            max_len: 64,
            stop_tokens: Vec::new(),
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.temperature < 0.0 {
            return Err(Error::config("sampling.temperature", "must be >= 0"));
        }
        if self.alpha <= 0.0 {
            return Err(Error::config("sampling.alpha", "must be > 0"));
        }
        if self.beta <= 0.0 {
            return Err(Error::config("sampling.beta", "must be > 0"));
        }
        if self.max_len == 0 {
            return Err(Error::config("sampling.max_len", "must be >= 1"));
        }
        if let Some(k) = self.top_k {
            if k == 0 || k > vocab_size {
                return Err(Error::config("sampling.top_k", "must be in [1, |V|]"));
            }
        }
        Ok(())
    }
}

/// Temperature-scaled softmax.
pub fn temperature_probs(logits: &[f32], temperature: f64) -> Result<Vec<f64>> {
    if temperature <= 0.0 {
        return Err(Error::config("sampling.temperature", "must be > 0 for sampling"));
    }
    let scaled: Vec<f64> = logits.iter().map(|&l| l as f64 / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| e / sum).collect())
}

/// Repetition-adjusted distribution: each candidate token gets its own
/// softmax divisor depending on whether it appeared in the first sequence
/// and/or the generated tokens so far.
pub fn repetition_adjusted_probs(
    logits: &[f32],
    temperature: f64,
    alpha: f64,
    beta: f64,
    first_seq: &HashSet<TokenId>,
    generated: &HashSet<TokenId>,
) -> Result<Vec<f64>> {
    if temperature <= 0.0 {
        return Err(Error::config("sampling.temperature", "must be > 0 for sampling"));
    }
    if alpha <= 0.0 || beta <= 0.0 {
        return Err(Error::config("sampling.alpha", "alpha and beta must be > 0"));
    }
    let divisor = |tok: TokenId| -> f64 {
        if generated.contains(&tok) {
            temperature * beta
        } else if first_seq.contains(&tok) {
            temperature * alpha
        } else {
            temperature
        }
    };
    let scaled: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| l as f64 / divisor(i as TokenId))
        .collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| e / sum).collect())
}

/// Keeps the k largest probabilities (ties broken by lower token id),
/// zeros the rest, renormalizes.
pub fn top_k_filter(probs: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > probs.len() {
        return Err(Error::config("sampling.top_k", "must be in [1, |V|]"));
    }
    if k == probs.len() {
        return Ok(probs.to_vec());
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // descending by probability, ascending by id on ties
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let kept: HashSet<usize> = order[..k].iter().copied().collect();
    let mass: f64 = kept.iter().map(|&i| probs[i]).sum();
    Ok((0..probs.len())
        .map(|i| if kept.contains(&i) { probs[i] / mass } else { 0.0 })
        .collect())
}

/// Inverse-CDF draw from a probability vector with a single RNG sample.
pub fn sample_token(rng: &mut ChaCha8Rng, probs: &[f64]) -> Result<TokenId> {
    let mut sum = 0.0;
    for &p in probs {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::Numeric(format!("degenerate probability {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Numeric(format!("probabilities sum to {sum}")));
    }
    let u: f64 = rng.gen::<f64>() * sum;
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i as TokenId);
        }
    }
    // numerical edge: fall back to the last positive-probability token
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1) as TokenId)
}

/// One decoding step: repetition adjustment, then top-k, then draw
/// (or argmax of the adjusted distribution when temperature = 0).
pub fn next_token(
    model: &dyn AutoregressiveLm,
    context: &[TokenId],
    cfg: &SamplingConfig,
    first_seq: &HashSet<TokenId>,
    generated: &HashSet<TokenId>,
    rng: &mut ChaCha8Rng,
) -> Result<TokenId> {
    let logits = model.next_token_logits(context);
    if cfg.temperature == 0.0 {
        let probs =
            repetition_adjusted_probs(&logits, 1.0, cfg.alpha, cfg.beta, first_seq, generated)?;
        let argmax_id = argmax(&probs.iter().map(|&p| p as f32).collect::<Vec<f32>>());
        return Ok(argmax_id as TokenId);
    }
    let probs = repetition_adjusted_probs(
        &logits,
        cfg.temperature,
        cfg.alpha,
        cfg.beta,
        first_seq,
        generated,
    )?;
    let probs = match cfg.top_k {
        Some(k) => top_k_filter(&probs, k)?,
        None => probs,
    };
    sample_token(rng, &probs)
}

/// Recursive generation: emits the continuation only (the prompt is
/// excluded). Stops at a stop token or `max_len`. The generated-token set
/// grows as tokens are emitted so the repetition penalty compounds.
pub fn generate_sequence(
    model: &dyn AutoregressiveLm,
    prompt: &TokenSequence,
    cfg: &SamplingConfig,
    first_seq_tokens: &HashSet<TokenId>,
    rng: &mut ChaCha8Rng,
) -> Result<TokenSequence> {
    if prompt.is_empty() {
        return Err(Error::InvalidSample("empty prompt".into()));
    }
    cfg.validate(model.vocab().size())?;
    let mut context: Vec<TokenId> = prompt.ids().to_vec();
    let mut generated: HashSet<TokenId> = HashSet::new();
    let mut out = TokenSequence::empty();
    while out.len() < cfg.max_len {
        let tok = next_token(model, &context, cfg, first_seq_tokens, &generated, rng)?;
        if cfg.stop_tokens.contains(&tok) {
            break;
        }
        out.push(tok);
        generated.insert(tok);
        context.push(tok);
    }
    Ok(out)
}
