//! Evaluation metrics (accuracy, F1, Matthews correlation) and the
//! multi-seed evaluation protocol.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::mean_std;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    F1,
    Matthews,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
            Metric::Matthews => "matthews",
        }
    }

    pub fn compute(&self, predictions: &[usize], gold: &[usize]) -> Result<f64> {
        match self {
            Metric::Accuracy => accuracy(predictions, gold),
            Metric::F1 => f1(predictions, gold),
            Metric::Matthews => matthews(predictions, gold),
        }
    }
}

fn check_lists(predictions: &[usize], gold: &[usize]) -> Result<()> {
    if predictions.is_empty() || gold.is_empty() {
        return Err(Error::InvalidSample("empty prediction or gold list".into()));
    }
    if predictions.len() != gold.len() {
        return Err(Error::InvalidSample(format!(
            "prediction/gold length mismatch: {} vs {}",
            predictions.len(),
            gold.len()
        )));
    }
    Ok(())
}

pub fn accuracy(predictions: &[usize], gold: &[usize]) -> Result<f64> {
    check_lists(predictions, gold)?;
    let correct = predictions.iter().zip(gold.iter()).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / gold.len() as f64)
}

/// Binary confusion counts with class 1 as the positive class.
fn confusion(predictions: &[usize], gold: &[usize]) -> Result<(f64, f64, f64, f64)> {
    check_lists(predictions, gold)?;
    if predictions.iter().chain(gold.iter()).any(|&v| v > 1) {
        return Err(Error::InvalidSample("f1/matthews require binary labels".into()));
    }
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    let mut tn = 0.0;
    for (&p, &g) in predictions.iter().zip(gold.iter()) {
        match (p, g) {
            (1, 1) => tp += 1.0,
            (1, 0) => fp += 1.0,
            (0, 1) => fn_ += 1.0,
            _ => tn += 1.0,
        }
    }
    Ok((tp, fp, fn_, tn))
}

/// F1 on the positive class; 0 when precision + recall is 0.
pub fn f1(predictions: &[usize], gold: &[usize]) -> Result<f64> {
    let (tp, fp, fn_, _) = confusion(predictions, gold)?;
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp / denom)
}

/// Matthews correlation coefficient; 0 when the denominator vanishes.
pub fn matthews(predictions: &[usize], gold: &[usize]) -> Result<f64> {
    let (tp, fp, fn_, tn) = confusion(predictions, gold)?;
    let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((tp * tn - fp * fn_) / denom)
}

/// Metric values aggregated over a seed list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric: String,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl EvalResult {
    pub fn from_values(metric: &str, per_seed: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_seed);
        EvalResult { metric: metric.to_string(), per_seed, mean, std }
    }
}

/// Runs `experiment` once per seed and aggregates mean and sample
/// standard deviation.
pub fn run_seeds<F>(metric: &str, seeds: &[u64], mut experiment: F) -> Result<EvalResult>
where
    F: FnMut(u64) -> Result<f64>,
{
    if seeds.len() < 2 {
        return Err(Error::config("evaluation.seeds", "need at least 2 seeds"));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        per_seed.push(experiment(seed)?);
    }
    Ok(EvalResult::from_values(metric, per_seed))
}
