//! Quality scoring of generated samples and per-label selection policies.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{sequence_token_log_probs, AutoregressiveLm};
use crate::prompts::GeneratedSample;
use crate::rng::stream_rng;
use crate::vocab::TokenSequence;

/// Per-label selection choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    TopN,
    BottomN,
    RandomN,
}

/// How the training set is drawn from the generated pool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionPolicy {
    /// One entry per label.
    pub per_label: Vec<PolicyKind>,
    /// Samples selected per class.
    pub n_per_class: usize,
    /// When true (contrast-style tasks), all pools are merged and ranked
    /// jointly; selected samples are relabeled to the selecting class.
    pub merge_pools: bool,
}

/// Average per-token log probability of the generated continuation under
/// the model, conditioned on the prefix the generation saw. Computed at
/// temperature 1 with no repetition adjustment.
pub fn ranking_score(
    model: &dyn AutoregressiveLm,
    prefix: &TokenSequence,
    generated: &TokenSequence,
) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::InvalidSample("cannot score an empty generation".into()));
    }
    let lps = sequence_token_log_probs(model, prefix, generated)?;
    Ok(lps.iter().map(|&lp| lp as f64).sum::<f64>() / lps.len() as f64)
}

fn sort_scored(pool: &mut Vec<&GeneratedSample>, ascending: bool) -> Result<()> {
    for s in pool.iter() {
        if s.score.is_none() {
            return Err(Error::Numeric(format!("sample {} is unscored", s.id)));
        }
    }
    pool.sort_by(|a, b| {
        let sa = a.score.unwrap();
        let sb = b.score.unwrap();
        let ord = if ascending {
            sa.partial_cmp(&sb).unwrap()
        } else {
            sb.partial_cmp(&sa).unwrap()
        };
        ord.then(a.id.cmp(&b.id))
    });
    Ok(())
}

/// Applies the per-label policies to the generated pool and returns the
/// training set, ordered by label then selection order.
pub fn select(
    pool: &[GeneratedSample],
    policy: &SelectionPolicy,
    seed: u64,
) -> Result<Vec<GeneratedSample>> {
    let n = policy.n_per_class;
    let mut out = Vec::with_capacity(n * policy.per_label.len());
    for (label, kind) in policy.per_label.iter().enumerate() {
        let mut candidates: Vec<&GeneratedSample> = if policy.merge_pools {
            pool.iter().collect()
        } else {
            pool.iter().filter(|s| s.label == label).collect()
        };
        if candidates.len() < n {
            return Err(Error::InsufficientPool { label, have: candidates.len(), need: n });
        }
        let chosen: Vec<&GeneratedSample> = match kind {
            PolicyKind::TopN => {
                sort_scored(&mut candidates, false)?;
                candidates[..n].to_vec()
            }
            PolicyKind::BottomN => {
                sort_scored(&mut candidates, true)?;
                candidates[..n].to_vec()
            }
            PolicyKind::RandomN => {
                candidates.sort_by_key(|s| s.id);
                let mut rng = stream_rng(seed, "select-random", label as u64);
                let mut shuffled = candidates.clone();
                shuffled.shuffle(&mut rng);
                shuffled[..n].to_vec()
            }
        };
        for s in chosen {
            let mut s = s.clone();
            if policy.merge_pools {
                s.label = label;
            }
            out.push(s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::NGramLm;
    use crate::vocab::Vocabulary;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn sample(id: u64, label: usize, score: Option<f64>) -> GeneratedSample {
        GeneratedSample {
            id,
            first_seq: None,
            generated: TokenSequence::new(vec![0]),
            label,
            score,
        }
    }

    #[test]
    fn uniform_model_score_is_length_invariant() {
        let vocab = Arc::new(Vocabulary::new(&["a"]).unwrap()); // |V| = 4
        let model = NGramLm::new(vocab.clone(), 2, 1.0).unwrap();
        let prefix = TokenSequence::new(vec![vocab.bos()]);
        for len in [1usize, 3, 7] {
            let g = TokenSequence::new(vec![3; len]);
            let r = ranking_score(&model, &prefix, &g).unwrap();
            assert_abs_diff_eq!(r, (0.25f64).ln(), epsilon = 1e-6);
        }
    }

    #[test]
    fn score_is_mean_of_token_log_probs() {
        // model with p(a|bos)=0.5, p(b|a)=0.25 as in the lm tests
        let vocab = Arc::new(Vocabulary::new(&["a", "b", "c"]).unwrap());
        let a = vocab.id_of("a").unwrap();
        let b = vocab.id_of("b").unwrap();
        let mut model = NGramLm::new(vocab.clone(), 2, 1.0).unwrap();
        let mut row = vec![0u32; vocab.size()];
        row[a as usize] = 5;
        row[vocab.eos() as usize] = 1;
        model.insert_count_row(vec![vocab.bos()], row);
        let mut row = vec![0u32; vocab.size()];
        row[b as usize] = 2;
        row[vocab.eos() as usize] = 4;
        model.insert_count_row(vec![a], row);

        let r = ranking_score(
            &model,
            &TokenSequence::empty(),
            &TokenSequence::new(vec![a, b]),
        )
        .unwrap();
        assert_abs_diff_eq!(r, -1.0397, epsilon = 1e-4);
    }

    #[test]
    fn top_n_and_bottom_n() {
        let pool = vec![
            sample(0, 0, Some(-3.0)),
            sample(1, 0, Some(-1.0)),
            sample(2, 0, Some(-4.0)),
            sample(3, 0, Some(-2.0)),
        ];
        let top = select(
            &pool,
            &SelectionPolicy { per_label: vec![PolicyKind::TopN], n_per_class: 2, merge_pools: false },
            0,
        )
        .unwrap();
        assert_eq!(top.iter().map(|s| s.score.unwrap()).collect::<Vec<_>>(), vec![-1.0, -2.0]);
        let bottom = select(
            &pool,
            &SelectionPolicy {
                per_label: vec![PolicyKind::BottomN],
                n_per_class: 2,
                merge_pools: false,
            },
            0,
        )
        .unwrap();
        assert_eq!(
            bottom.iter().map(|s| s.score.unwrap()).collect::<Vec<_>>(),
            vec![-4.0, -3.0]
        );
    }

    #[test]
    fn selection_invariant_to_pool_order() {
        let mut pool = vec![
            sample(0, 0, Some(-1.0)),
            sample(1, 0, Some(-1.0)),
            sample(2, 0, Some(-2.0)),
            sample(3, 0, Some(-0.5)),
        ];
        let policy =
            SelectionPolicy { per_label: vec![PolicyKind::TopN], n_per_class: 2, merge_pools: false };
        let a = select(&pool, &policy, 0).unwrap();
        pool.reverse();
        let b = select(&pool, &policy, 0).unwrap();
        let ids_a: Vec<u64> = a.iter().map(|s| s.id).collect();
        let ids_b: Vec<u64> = b.iter().map(|s| s.id).collect();
        assert_eq!(ids_a, ids_b);
        assert_eq!(ids_a, vec![3, 0]); // tie at -1.0 broken by lower id
    }

    #[test]
    fn insufficient_pool_errors() {
        let pool = vec![sample(0, 0, Some(-1.0))];
        let policy =
            SelectionPolicy { per_label: vec![PolicyKind::TopN], n_per_class: 2, merge_pools: false };
        assert!(matches!(select(&pool, &policy, 0), Err(Error::InsufficientPool { .. })));
    }

    #[test]
    fn random_n_needs_no_scores() {
        let pool = vec![sample(0, 0, None), sample(1, 0, None), sample(2, 0, None)];
        let policy = SelectionPolicy {
            per_label: vec![PolicyKind::RandomN],
            n_per_class: 2,
            merge_pools: false,
        };
        let a = select(&pool, &policy, 5).unwrap();
        let b = select(&pool, &policy, 5).unwrap();
        assert_eq!(a.iter().map(|s| s.id).collect::<Vec<_>>(), b.iter().map(|s| s.id).collect::<Vec<_>>());
    }

    #[test]
    fn top_n_mean_beats_random_n_mean() {
        let pool: Vec<GeneratedSample> =
            (0..20).map(|i| sample(i, 0, Some(-(i as f64)))).collect();
        let top = select(
            &pool,
            &SelectionPolicy { per_label: vec![PolicyKind::TopN], n_per_class: 5, merge_pools: false },
            1,
        )
        .unwrap();
        let random = select(
            &pool,
            &SelectionPolicy {
                per_label: vec![PolicyKind::RandomN],
                n_per_class: 5,
                merge_pools: false,
            },
            1,
        )
        .unwrap();
        let mean = |xs: &[GeneratedSample]| {
            xs.iter().map(|s| s.score.unwrap()).sum::<f64>() / xs.len() as f64
        };
        assert!(mean(&top) > mean(&random));
    }

    #[test]
    fn merged_pools_relabel() {
        let pool = vec![
            sample(0, 0, Some(-1.0)),
            sample(1, 1, Some(-2.0)),
            sample(2, 0, Some(-3.0)),
            sample(3, 1, Some(-4.0)),
        ];
        let policy = SelectionPolicy {
            per_label: vec![PolicyKind::TopN, PolicyKind::BottomN],
            n_per_class: 2,
            merge_pools: true,
        };
        let out = select(&pool, &policy, 0).unwrap();
        // top-2 of merged pool relabeled 0, bottom-2 relabeled 1
        assert_eq!(out.iter().map(|s| (s.id, s.label)).collect::<Vec<_>>(), vec![
            (0, 0),
            (1, 0),
            (3, 1),
            (2, 1)
        ]);
    }
}
