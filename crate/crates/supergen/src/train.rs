//! Regularized fine-tuning on generated data: label smoothing, temporal
//! ensembling with bias correction, the combined objective with its
//! lambda ramp-up, agreement filtering, and the training loop.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::ClassifierNet;
use crate::numeric::PROB_FLOOR;
use crate::rng::stream_rng;
use crate::vocab::TokenSequence;

/// Smoothed label target: `(1 - eps)` on the gold class, `eps / |Y|`
/// spread uniformly.
pub fn smoothed_targets(label: usize, n_classes: usize, epsilon: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::config("training.epsilon", "must be in [0, 1)"));
    }
    if label >= n_classes {
        return Err(Error::InvalidSample(format!("label {label} >= |Y| = {n_classes}")));
    }
    let uniform = epsilon / n_classes as f64;
    Ok((0..n_classes)
        .map(|j| if j == label { 1.0 - epsilon + uniform } else { uniform })
        .collect())
}

fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR as f64).ln()
}

/// Combined objective: smoothed cross-entropy plus a lambda-weighted KL
/// term from the prediction to the ensembled target. Returns the loss and
/// its gradient w.r.t. the output logits (the ensemble target is fixed; no
/// gradient flows into it). With `ensemble = None` or `lambda = 0` this is
/// plain smoothed cross-entropy.
pub fn training_loss(
    probs: &[f64],
    targets: &[f64],
    ensemble: Option<&[f64]>,
    lambda: f64,
) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    for (q, p) in targets.iter().zip(probs.iter()) {
        loss -= q * floored_ln(*p);
    }
    let mut grad: Vec<f64> = Vec::with_capacity(probs.len());
    match ensemble {
        Some(zbar) if lambda > 0.0 => {
            for (z, p) in zbar.iter().zip(probs.iter()) {
                if *z > 0.0 {
                    loss -= lambda * z * (floored_ln(*p) - floored_ln(*z));
                }
            }
            for j in 0..probs.len() {
                grad.push((1.0 + lambda) * probs[j] - targets[j] - lambda * zbar[j]);
            }
        }
        _ => {
            for j in 0..probs.len() {
                grad.push(probs[j] - targets[j]);
            }
        }
    }
    (loss, grad)
}

/// Per-sample temporal ensemble accumulator.
#[derive(Debug, Clone)]
pub struct EnsembleState {
    pub z_hat: Vec<f64>,
    pub updates: u32,
    pub gamma: f64,
}

impl EnsembleState {
    pub fn new(n_classes: usize, gamma: f64) -> Self {
        EnsembleState { z_hat: vec![0.0; n_classes], updates: 0, gamma }
    }

    /// `z_hat <- gamma z_hat + (1 - gamma) p`, then bump the update count.
    pub fn update(&mut self, prediction: &[f64]) {
        for (z, p) in self.z_hat.iter_mut().zip(prediction.iter()) {
            *z = self.gamma * *z + (1.0 - self.gamma) * p;
        }
        self.updates += 1;
    }

    /// Bias-corrected ensemble `z_hat / (1 - gamma^t)`; `None` before the
    /// first update.
    pub fn z_bar(&self) -> Option<Vec<f64>> {
        if self.updates == 0 {
            return None;
        }
        let correction = 1.0 - self.gamma.powi(self.updates as i32);
        Some(self.z_hat.iter().map(|z| z / correction).collect())
    }
}

/// Lambda ramp-up over the first 10 ensembles, plateauing at `lambda_max`.
pub fn lambda_schedule(ensembles: u32, lambda_max: f64) -> f64 {
    if ensembles >= 10 {
        lambda_max
    } else {
        let t = ensembles as f64;
        lambda_max * (-5.0 * (1.0 - t / 10.0).powi(2)).exp()
    }
}

/// Indices of samples whose ensembled probability on their own label
/// strictly exceeds delta.
pub fn filter_training_set(labels: &[usize], z_bars: &[Option<Vec<f64>>], delta: f64) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| match &z_bars[*i] {
            Some(z) => z[y] > delta,
            None => true, // no ensemble yet; filtering not active
        })
        .map(|(i, _)| i)
        .collect()
}

/// Fine-tuning hyperparameters. The learning rate default is scaled for
/// the toy classifier (the reference value for large encoders is 1e-5).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub total_steps: usize,
    pub ensemble_interval: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub delta: f64,
    pub lambda_max: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1.0,
            batch_size: 16,
            total_steps: 1125,
            ensemble_interval: 100,
            epsilon: 0.15,
            gamma: 0.8,
            delta: 0.8,
            lambda_max: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::config("training.learning_rate", "must be > 0"));
        }
        if self.batch_size == 0 || self.total_steps == 0 || self.ensemble_interval == 0 {
            return Err(Error::config("training", "steps, batch size and interval must be > 0"));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::config("training.epsilon", "must be in [0, 1)"));
        }
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::config("training.gamma", "must be in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::config("training.delta", "must be in [0, 1)"));
        }
        if self.lambda_max < 0.0 {
            return Err(Error::config("training.lambda_max", "must be >= 0"));
        }
        Ok(())
    }
}

/// One labeled training input (pairs already joined by SEP).
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: TokenSequence,
    pub label: usize,
}

/// One trace row per ensemble interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub interval: u32,
    pub loss: f64,
    pub lambda: f64,
    pub filtered_size: usize,
}

/// The main fine-tuning loop: runs exactly `total_steps` minibatch
/// gradient steps; every `ensemble_interval` steps records predictions on
/// the full training set, updates the per-sample ensembles, recomputes
/// lambda, and refilters the active set.
pub fn train_classifier(
    samples: &[TrainSample],
    net: &mut ClassifierNet,
    cfg: &TrainConfig,
) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    if samples.len() < cfg.batch_size {
        return Err(Error::config(
            "training.batch_size",
            format!("training set ({}) smaller than batch size ({})", samples.len(), cfg.batch_size),
        ));
    }
    let n_classes = net.n_classes;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    for (i, &y) in labels.iter().enumerate() {
        if y >= n_classes {
            return Err(Error::InvalidSample(format!("sample {i} label {y} >= |Y|")));
        }
    }

    let mut states: Vec<EnsembleState> =
        (0..samples.len()).map(|_| EnsembleState::new(n_classes, cfg.gamma)).collect();
    let mut active: Vec<usize> = (0..samples.len()).collect();
    let mut lambda = 0.0;
    let mut ensembles: u32 = 0;

    let mut shuffle_rng = stream_rng(cfg.seed, "train-shuffle", 0);
    let mut order: Vec<usize> = active.clone();
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0usize;

    let mut trace = Vec::new();
    let mut block_loss = 0.0f64;
    let mut block_steps = 0usize;

    for step in 1..=cfg.total_steps {
        // draw a minibatch from the current active set
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor >= order.len() {
                order = active.clone();
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let mut grads = net.zero_gradients();
        let mut batch_loss = 0.0f64;
        for &idx in &batch {
            let sample = &samples[idx];
            let cache = net.forward_cached(&sample.input)?;
            let probs: Vec<f64> = cache.probs.iter().map(|&p| p as f64).collect();
            let targets = smoothed_targets(sample.label, n_classes, cfg.epsilon)?;
            let zbar = states[idx].z_bar();
            let (loss, grad) = training_loss(&probs, &targets, zbar.as_deref(), lambda);
            batch_loss += loss;
            let grad32: Vec<f32> = grad.iter().map(|&g| g as f32).collect();
            net.accumulate_backward(&cache, &grad32, &mut grads);
        }
        // the KL term multiplies the objective's curvature by about
        // (1 + lambda); rescaling the step keeps plain gradient descent
        // stable across the whole ramp-up
        net.apply_gradients(
            &grads,
            cfg.learning_rate / ((1.0 + lambda as f32) * cfg.batch_size as f32),
        );
        block_loss += batch_loss / cfg.batch_size as f64;
        block_steps += 1;

        if step % cfg.ensemble_interval == 0 {
            // full evaluation pass over all of T, gathered in sample order
            let predictions: Vec<Vec<f64>> = samples
                .par_iter()
                .map(|s| {
                    let p = net.forward(&s.input).expect("validated inputs");
                    p.iter().map(|&x| x as f64).collect()
                })
                .collect();
            for (state, p) in states.iter_mut().zip(predictions.iter()) {
                state.update(p);
            }
            ensembles += 1;
            lambda = lambda_schedule(ensembles, cfg.lambda_max);

            let z_bars: Vec<Option<Vec<f64>>> = states.iter().map(|s| s.z_bar()).collect();
            let mut filtered = filter_training_set(&labels, &z_bars, cfg.delta);
            if filtered.len() < cfg.batch_size {
                // filter collapse: keep the batch-size samples with the
                // highest ensembled probability on their own label
                let mut ranked: Vec<usize> = (0..samples.len()).collect();
                ranked.sort_by(|&a, &b| {
                    let za = z_bars[a].as_ref().map(|z| z[labels[a]]).unwrap_or(0.0);
                    let zb = z_bars[b].as_ref().map(|z| z[labels[b]]).unwrap_or(0.0);
                    zb.partial_cmp(&za).unwrap().then(a.cmp(&b))
                });
                filtered = ranked[..cfg.batch_size].to_vec();
                filtered.sort_unstable();
            }
            active = filtered;
            order = active.clone();
            order.shuffle(&mut shuffle_rng);
            cursor = 0;

            trace.push(TraceRow {
                step,
                interval: ensembles,
                loss: block_loss / block_steps as f64,
                lambda,
                filtered_size: active.len(),
            });
            block_loss = 0.0;
            block_steps = 0;
        }
    }
    if block_steps > 0 {
        trace.push(TraceRow {
            step: cfg.total_steps,
            interval: ensembles,
            loss: block_loss / block_steps as f64,
            lambda,
            filtered_size: active.len(),
        });
    }
    Ok(trace)
}

/// Few-shot extension: plain cross-entropy fine-tuning on the gold
/// few-shot set, then the regularized loop on the generated data with a
/// fresh ensemble state.
pub fn finetune_fewshot_then_generated(
    fewshot: &[TrainSample],
    generated: &[TrainSample],
    net: &mut ClassifierNet,
    cfg: &TrainConfig,
) -> Result<Vec<TraceRow>> {
    if fewshot.is_empty() {
        return Err(Error::config("training.fewshot", "few-shot set is empty"));
    }
    let stage1 = TrainConfig {
        epsilon: 0.0,
        lambda_max: 0.0,
        delta: 0.0,
        batch_size: cfg.batch_size.min(fewshot.len()),
        ..cfg.clone()
    };
    let mut trace = train_classifier(fewshot, net, &stage1)?;
    if !generated.is_empty() {
        trace.extend(train_classifier(generated, net, cfg)?);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn smoothed_target_examples() {
        assert_eq!(smoothed_targets(0, 2, 0.0).unwrap(), vec![1.0, 0.0]);
        let q = smoothed_targets(0, 2, 0.15).unwrap();
        assert_abs_diff_eq!(q[0], 0.925, epsilon = 1e-12);
        assert_abs_diff_eq!(q[1], 0.075, epsilon = 1e-12);
        let q = smoothed_targets(0, 3, 0.15).unwrap();
        assert_abs_diff_eq!(q[0], 0.90, epsilon = 1e-12);
        assert_abs_diff_eq!(q[1], 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(q[2], 0.05, epsilon = 1e-12);
        let sum: f64 = q.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn smoothed_target_preconditions() {
        assert!(smoothed_targets(0, 2, 1.0).is_err());
        assert!(smoothed_targets(2, 2, 0.1).is_err());
    }

    #[test]
    fn loss_at_p_equals_q_is_entropy() {
        let q = vec![0.925, 0.075];
        let (loss, _) = training_loss(&q, &q, None, 0.0);
        assert_abs_diff_eq!(loss, 0.2664, epsilon = 1e-3);
    }

    #[test]
    fn kl_term_vanishes_at_p_equals_zbar() {
        let p = vec![0.7, 0.3];
        let q = smoothed_targets(0, 2, 0.15).unwrap();
        let (with, _) = training_loss(&p, &q, Some(&p), 3.0);
        let (without, _) = training_loss(&p, &q, None, 0.0);
        assert_abs_diff_eq!(with, without, epsilon = 1e-12);
    }

    #[test]
    fn lambda_zero_reduces_to_label_smoothing_exactly() {
        let p = vec![0.6, 0.3, 0.1];
        let q = smoothed_targets(1, 3, 0.15).unwrap();
        let z = vec![0.2, 0.5, 0.3];
        let (a, ga) = training_loss(&p, &q, Some(&z), 0.0);
        let (b, gb) = training_loss(&p, &q, None, 0.0);
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        for (x, y) in ga.iter().zip(gb.iter()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn loss_stays_finite_with_zero_probabilities() {
        let p = vec![1.0, 0.0];
        let q = vec![0.5, 0.5];
        let z = vec![0.0, 1.0];
        let (loss, grad) = training_loss(&p, &q, Some(&z), 2.0);
        assert!(loss.is_finite());
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    /// Finite-difference check of the full objective w.r.t. logits, in f64.
    #[test]
    fn loss_gradient_matches_finite_differences() {
        let logits = vec![0.8, -0.4, 0.3];
        let q = smoothed_targets(2, 3, 0.15).unwrap();
        let z = vec![0.25, 0.35, 0.40];
        let lambda = 1.7;

        let softmax64 = |l: &[f64]| -> Vec<f64> {
            let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = l.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|x| x / s).collect()
        };
        let loss_of = |l: &[f64]| training_loss(&softmax64(l), &q, Some(&z), lambda).0;

        let p = softmax64(&logits);
        let (_, grad) = training_loss(&p, &q, Some(&z), lambda);
        let eps = 1e-6;
        for j in 0..logits.len() {
            let mut plus = logits.clone();
            plus[j] += eps;
            let mut minus = logits.clone();
            minus[j] -= eps;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            let rel = (grad[j] - numeric).abs() / numeric.abs().max(grad[j].abs()).max(1e-8);
            assert!(rel < 1e-4, "coordinate {j}: analytic {} vs numeric {numeric}", grad[j]);
        }
    }

    #[test]
    fn ensemble_first_update_is_bias_corrected_to_p() {
        let mut s = EnsembleState::new(2, 0.8);
        s.update(&[0.6, 0.4]);
        assert_abs_diff_eq!(s.z_hat[0], 0.12, epsilon = 1e-12);
        assert_abs_diff_eq!(s.z_hat[1], 0.08, epsilon = 1e-12);
        let z = s.z_bar().unwrap();
        assert_abs_diff_eq!(z[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn ensemble_second_update_hand_example() {
        let mut s = EnsembleState::new(2, 0.8);
        s.update(&[0.6, 0.4]);
        s.update(&[1.0, 0.0]);
        assert_abs_diff_eq!(s.z_hat[0], 0.296, epsilon = 1e-12);
        assert_abs_diff_eq!(s.z_hat[1], 0.064, epsilon = 1e-12);
        let z = s.z_bar().unwrap();
        assert_abs_diff_eq!(z[0], 0.8222, epsilon = 1e-4);
        assert_abs_diff_eq!(z[1], 0.1778, epsilon = 1e-4);
    }

    #[test]
    fn constant_prediction_is_a_fixed_point() {
        let p = vec![0.3, 0.7];
        let mut s = EnsembleState::new(2, 0.8);
        for _ in 0..12 {
            s.update(&p);
            let z = s.z_bar().unwrap();
            assert_abs_diff_eq!(z[0], 0.3, epsilon = 1e-9);
            assert_abs_diff_eq!(z[1], 0.7, epsilon = 1e-9);
        }
    }

    #[test]
    fn z_bar_stays_a_probability_vector() {
        let mut s = EnsembleState::new(3, 0.8);
        let preds = [[0.2, 0.5, 0.3], [0.9, 0.05, 0.05], [0.1, 0.1, 0.8]];
        for p in preds.iter().cycle().take(20) {
            s.update(p);
            let z = s.z_bar().unwrap();
            let sum: f64 = z.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-6);
            assert!(z.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn lambda_schedule_values() {
        assert_abs_diff_eq!(lambda_schedule(10, 10.0), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lambda_schedule(0, 10.0), 10.0 * (-5.0f64).exp(), epsilon = 1e-4);
        assert_abs_diff_eq!(lambda_schedule(20, 10.0), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn filtering_strict_inequality_and_monotonicity() {
        let labels = vec![0, 0, 1];
        let z_bars = vec![
            Some(vec![0.9, 0.1]),
            Some(vec![0.8, 0.2]),
            Some(vec![0.5, 0.5]),
        ];
        let kept = filter_training_set(&labels, &z_bars, 0.8);
        assert_eq!(kept, vec![0]); // 0.8 is dropped (strict), 0.5 dropped
        let all = filter_training_set(&labels, &z_bars, 0.0);
        assert_eq!(all, vec![0, 1, 2]);
        // raising delta never enlarges the kept set
        let mut prev = usize::MAX;
        for delta in [0.0, 0.2, 0.4, 0.6, 0.8, 0.99] {
            let k = filter_training_set(&labels, &z_bars, delta).len();
            assert!(k <= prev);
            prev = k;
        }
    }
}
