//! Synthetic tasks with analytically known structure: a pretraining
//! corpus with class markers, prompt templates, a gold evaluation set,
//! and a closed-form Bayes-accuracy reference.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompts::{PromptTemplate, TaskType, XS_SLOT};
use crate::rng::stream_rng;
use crate::vocab::{TokenId, TokenSequence, VocabRef, Vocabulary};

/// Parameters of a synthetic task. Class sub-vocabularies are disjoint;
/// `shared_mass` of each class-conditional distribution sits on a common
/// shared-word set, which keeps the Bayes accuracy in closed form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTaskSpec {
    pub task_type: TaskType,
    pub n_classes: usize,
    /// Words per class sub-vocabulary (chain length for contrast tasks).
    pub class_words: usize,
    pub shared_words: usize,
    /// Probability mass on shared words in each class-conditional
    /// distribution.
    pub shared_mass: f64,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    /// Probability that a pretraining document carries the wrong class
    /// marker.
    pub noise_rate: f64,
    pub corpus_size: usize,
    pub eval_size: usize,
    /// Fraction of second-sequence positions copied from the first
    /// sequence for entailment-analog pairs.
    pub pair_overlap: f64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            task_type: TaskType::Single,
            n_classes: 2,
            class_words: 12,
            shared_words: 6,
            shared_mass: 0.2,
            doc_len_min: 4,
            doc_len_max: 12,
            noise_rate: 0.1,
            corpus_size: 2000,
            eval_size: 500,
            pair_overlap: 0.7,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("task.n_classes", "need at least 2 classes"));
        }
        if self.class_words == 0 {
            return Err(Error::config("task.class_words", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.shared_mass) {
            return Err(Error::config("task.shared_mass", "must be in [0, 1)"));
        }
        if self.doc_len_min == 0 || self.doc_len_min > self.doc_len_max {
            return Err(Error::config("task.doc_len", "need 1 <= min <= max"));
        }
        if !(0.0..0.5).contains(&self.noise_rate) {
            return Err(Error::config("task.noise_rate", "must be in [0, 0.5)"));
        }
        if self.corpus_size == 0 || self.eval_size == 0 {
            return Err(Error::config("task.sizes", "corpus and eval sizes must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.pair_overlap) {
            return Err(Error::config("task.pair_overlap", "must be in [0, 1]"));
        }
        Ok(())
    }

    /// Degenerate when the class-conditional distributions coincide.
    pub fn is_degenerate(&self) -> bool {
        self.shared_mass >= 1.0
    }
}

/// One gold evaluation sample. `first` is set for pair tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub first: Option<TokenSequence>,
    pub text: TokenSequence,
    pub label: usize,
}

/// Everything a pipeline run needs from a task, generated as a pure
/// function of (spec, seed).
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub spec: SyntheticTaskSpec,
    pub vocab: VocabRef,
    /// Pretraining documents (marker-prefixed for single tasks).
    pub corpus: Vec<TokenSequence>,
    /// Candidate first sequences for pair generation.
    pub first_corpus: Vec<TokenSequence>,
    pub templates: Vec<PromptTemplate>,
    /// Stop-word-analog seed tokens for contrast generation.
    pub seed_tokens: Vec<TokenId>,
    pub eval: Vec<EvalSample>,
    pub bayes_accuracy: f64,
    pub degenerate: bool,
    /// Class-conditional token log probabilities (single tasks), indexed
    /// [class][token id]; used by the Bayes reference classifier.
    pub class_log_probs: Vec<Vec<f64>>,
}

fn marker_name(class: usize) -> String {
    format!("<y{class}>")
}

/// Closed-form Bayes accuracy for the disjoint-plus-shared mixture: a
/// document is ambiguous only when every token is shared.
fn bayes_accuracy_single(spec: &SyntheticTaskSpec) -> f64 {
    let lengths = (spec.doc_len_max - spec.doc_len_min + 1) as f64;
    let p_all_shared: f64 = (spec.doc_len_min..=spec.doc_len_max)
        .map(|len| spec.shared_mass.powi(len as i32))
        .sum::<f64>()
        / lengths;
    // ambiguous documents are a (|Y|-1)/|Y| loss under a fair tie-break
    1.0 - p_all_shared * (spec.n_classes as f64 - 1.0) / spec.n_classes as f64
}

/// Closed-form Bayes accuracy for the chain-grammar contrast task: a
/// uniform-random document is only mistakable when it happens to be a
/// valid chain, which then always looks acceptable.
fn bayes_accuracy_contrast(spec: &SyntheticTaskSpec) -> f64 {
    let w = spec.class_words as f64;
    let lengths = (spec.doc_len_max - spec.doc_len_min + 1) as f64;
    let p_chain: f64 = (spec.doc_len_min..=spec.doc_len_max)
        .map(|len| w.powi(-(len as i32 - 1)))
        .sum::<f64>()
        / lengths;
    1.0 - 0.5 * p_chain
}

struct SingleDists {
    /// [class][token id] probability
    probs: Vec<Vec<f64>>,
    content_ids: Vec<TokenId>,
}

fn single_vocab_and_dists(spec: &SyntheticTaskSpec) -> Result<(VocabRef, SingleDists)> {
    let mut words: Vec<String> = (0..spec.n_classes).map(marker_name).collect();
    for class in 0..spec.n_classes {
        for w in 0..spec.class_words {
            words.push(format!("c{class}w{w}"));
        }
    }
    for s in 0..spec.shared_words {
        words.push(format!("sh{s}"));
    }
    let vocab = std::sync::Arc::new(Vocabulary::new(&words)?);
    let mut probs = vec![vec![0.0; vocab.size()]; spec.n_classes];
    let mut content_ids = Vec::new();
    for class in 0..spec.n_classes {
        let class_p = (1.0 - spec.shared_mass) / spec.class_words as f64;
        for w in 0..spec.class_words {
            let id = vocab.id_of(&format!("c{class}w{w}")).unwrap();
            probs[class][id as usize] = class_p;
            content_ids.push(id);
        }
    }
    if spec.shared_words > 0 {
        let shared_p = spec.shared_mass / spec.shared_words as f64;
        for s in 0..spec.shared_words {
            let id = vocab.id_of(&format!("sh{s}")).unwrap();
            for class in 0..spec.n_classes {
                probs[class][id as usize] = shared_p;
            }
            content_ids.push(id);
        }
    }
    Ok((vocab, SingleDists { probs, content_ids }))
}

fn draw_from<R: Rng>(probs: &[f64], rng: &mut R) -> TokenId {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc && p > 0.0 {
            return i as TokenId;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as TokenId
}

fn doc_len<R: Rng>(spec: &SyntheticTaskSpec, rng: &mut R) -> usize {
    rng.gen_range(spec.doc_len_min..=spec.doc_len_max)
}

/// Flips `class` to a uniformly random other class with probability
/// `noise_rate`.
fn maybe_flip<R: Rng>(class: usize, n_classes: usize, noise_rate: f64, rng: &mut R) -> usize {
    if n_classes > 1 && rng.gen::<f64>() < noise_rate {
        let other = rng.gen_range(0..n_classes - 1);
        if other >= class {
            other + 1
        } else {
            other
        }
    } else {
        class
    }
}

fn make_single(spec: &SyntheticTaskSpec, seed: u64) -> Result<SyntheticTask> {
    let (vocab, dists) = single_vocab_and_dists(spec)?;
    let marker_ids: Vec<TokenId> =
        (0..spec.n_classes).map(|c| vocab.id_of(&marker_name(c)).unwrap()).collect();

    let mut corpus = Vec::with_capacity(spec.corpus_size);
    for i in 0..spec.corpus_size {
        let mut rng = stream_rng(seed, "task-corpus", i as u64);
        let class = i % spec.n_classes;
        let marker = maybe_flip(class, spec.n_classes, spec.noise_rate, &mut rng);
        let mut ids = vec![marker_ids[marker]];
        for _ in 0..doc_len(spec, &mut rng) {
            ids.push(draw_from(&dists.probs[class], &mut rng));
        }
        corpus.push(TokenSequence::new(ids));
    }

    let mut eval = Vec::with_capacity(spec.eval_size);
    for i in 0..spec.eval_size {
        let mut rng = stream_rng(seed, "task-eval", i as u64);
        let class = i % spec.n_classes;
        let mut ids = Vec::new();
        for _ in 0..doc_len(spec, &mut rng) {
            ids.push(draw_from(&dists.probs[class], &mut rng));
        }
        eval.push(EvalSample { first: None, text: TokenSequence::new(ids), label: class });
    }

    let templates = (0..spec.n_classes)
        .map(|c| PromptTemplate {
            label: c,
            task_type: TaskType::Single,
            pattern: vec![marker_name(c)],
        })
        .collect();

    let degenerate = spec.is_degenerate();
    let bayes_accuracy = if degenerate {
        1.0 / spec.n_classes as f64
    } else {
        bayes_accuracy_single(spec)
    };
    Ok(SyntheticTask {
        spec: spec.clone(),
        vocab,
        corpus,
        first_corpus: Vec::new(),
        templates,
        seed_tokens: Vec::new(),
        eval,
        bayes_accuracy,
        degenerate,
        class_log_probs: dists
            .probs
            .iter()
            .map(|row| row.iter().map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY }).collect())
            .collect(),
    })
}

fn make_pair(spec: &SyntheticTaskSpec, seed: u64) -> Result<SyntheticTask> {
    let (vocab, dists) = single_vocab_and_dists(spec)?;
    let marker_ids: Vec<TokenId> =
        (0..spec.n_classes).map(|c| vocab.id_of(&marker_name(c)).unwrap()).collect();
    // class-agnostic content distribution for pair text
    let content = &dists.content_ids;
    let draw_content = |rng: &mut rand_chacha::ChaCha8Rng| -> TokenId {
        content[rng.gen_range(0..content.len())]
    };

    let entailed_second =
        |first: &TokenSequence, rng: &mut rand_chacha::ChaCha8Rng, len: usize| -> Vec<TokenId> {
            let n_copy = ((len as f64 * spec.pair_overlap).ceil() as usize).min(len);
            let mut ids = Vec::with_capacity(len);
            for pos in 0..len {
                if pos < n_copy {
                    ids.push(first.ids()[rng.gen_range(0..first.len())]);
                } else {
                    ids.push(draw_content(rng));
                }
            }
            ids
        };
    let disjoint_second =
        |first: &TokenSequence, rng: &mut rand_chacha::ChaCha8Rng, len: usize| -> Vec<TokenId> {
            let mut ids = Vec::with_capacity(len);
            while ids.len() < len {
                let cand = draw_content(rng);
                if !first.ids().contains(&cand) {
                    ids.push(cand);
                }
            }
            ids
        };

    let mut corpus = Vec::with_capacity(spec.corpus_size);
    let mut first_corpus = Vec::with_capacity(spec.corpus_size);
    for i in 0..spec.corpus_size {
        let mut rng = stream_rng(seed, "task-corpus", i as u64);
        let first_len = doc_len(spec, &mut rng);
        let first =
            TokenSequence::new((0..first_len).map(|_| draw_content(&mut rng)).collect());
        let class = i % spec.n_classes;
        let marker = maybe_flip(class, spec.n_classes, spec.noise_rate, &mut rng);
        let second_len = doc_len(spec, &mut rng);
        let second = if class == 0 {
            entailed_second(&first, &mut rng, second_len)
        } else {
            disjoint_second(&first, &mut rng, second_len)
        };
        let mut ids = first.ids().to_vec();
        ids.push(marker_ids[marker]);
        ids.extend_from_slice(&second);
        corpus.push(TokenSequence::new(ids));
        first_corpus.push(first);
    }

    let mut eval = Vec::with_capacity(spec.eval_size);
    for i in 0..spec.eval_size {
        let mut rng = stream_rng(seed, "task-eval", i as u64);
        let first_len = doc_len(spec, &mut rng);
        let first =
            TokenSequence::new((0..first_len).map(|_| draw_content(&mut rng)).collect());
        let class = i % spec.n_classes;
        let second_len = doc_len(spec, &mut rng);
        let second = if class == 0 {
            entailed_second(&first, &mut rng, second_len)
        } else {
            disjoint_second(&first, &mut rng, second_len)
        };
        eval.push(EvalSample {
            first: Some(first),
            text: TokenSequence::new(second),
            label: class,
        });
    }

    let templates = (0..spec.n_classes)
        .map(|c| PromptTemplate {
            label: c,
            task_type: TaskType::Pair,
            pattern: vec![XS_SLOT.to_string(), marker_name(c)],
        })
        .collect();

    // overlap-separable construction: entailed pairs share tokens, the
    // rest are disjoint, so the optimal rule is exact
    Ok(SyntheticTask {
        spec: spec.clone(),
        vocab,
        corpus,
        first_corpus,
        templates,
        seed_tokens: Vec::new(),
        eval,
        bayes_accuracy: 1.0,
        degenerate: false,
        class_log_probs: Vec::new(),
    })
}

fn make_contrast(spec: &SyntheticTaskSpec, seed: u64) -> Result<SyntheticTask> {
    let w = spec.class_words;
    let mut words: Vec<String> = (0..w).map(|i| format!("w{i}")).collect();
    let n_stops = spec.shared_words.max(1);
    for s in 0..n_stops {
        words.push(format!("st{s}"));
    }
    let vocab = std::sync::Arc::new(Vocabulary::new(&words)?);
    let chain_ids: Vec<TokenId> =
        (0..w).map(|i| vocab.id_of(&format!("w{i}")).unwrap()).collect();
    let stop_ids: Vec<TokenId> =
        (0..n_stops).map(|s| vocab.id_of(&format!("st{s}")).unwrap()).collect();

    // chain grammar: w_i is always followed by w_{(i+1) mod W}
    let mut corpus = Vec::with_capacity(spec.corpus_size);
    for i in 0..spec.corpus_size {
        let mut rng = stream_rng(seed, "task-corpus", i as u64);
        let mut ids = vec![stop_ids[rng.gen_range(0..stop_ids.len())]];
        let mut pos = rng.gen_range(0..w);
        for _ in 0..doc_len(spec, &mut rng) {
            ids.push(chain_ids[pos]);
            pos = (pos + 1) % w;
        }
        corpus.push(TokenSequence::new(ids));
    }

    // label 1 = acceptable analog (valid chains), label 0 = unacceptable
    let mut eval = Vec::with_capacity(spec.eval_size);
    for i in 0..spec.eval_size {
        let mut rng = stream_rng(seed, "task-eval", i as u64);
        let len = doc_len(spec, &mut rng);
        let (ids, label): (Vec<TokenId>, usize) = if i % 2 == 0 {
            let mut pos = rng.gen_range(0..w);
            let ids = (0..len)
                .map(|_| {
                    let id = chain_ids[pos];
                    pos = (pos + 1) % w;
                    id
                })
                .collect();
            (ids, 1)
        } else {
            ((0..len).map(|_| chain_ids[rng.gen_range(0..w)]).collect(), 0)
        };
        eval.push(EvalSample { first: None, text: TokenSequence::new(ids), label });
    }

    let templates = vec![
        PromptTemplate { label: 0, task_type: TaskType::TemperatureContrast, pattern: vec![] },
        PromptTemplate { label: 1, task_type: TaskType::TemperatureContrast, pattern: vec![] },
    ];

    Ok(SyntheticTask {
        spec: spec.clone(),
        vocab,
        corpus,
        first_corpus: Vec::new(),
        templates,
        seed_tokens: stop_ids,
        eval,
        bayes_accuracy: bayes_accuracy_contrast(spec),
        degenerate: false,
        class_log_probs: Vec::new(),
    })
}

/// Builds a synthetic task as a pure function of (spec, seed).
pub fn make_task(spec: &SyntheticTaskSpec, seed: u64) -> Result<SyntheticTask> {
    spec.validate()?;
    match spec.task_type {
        TaskType::Single => make_single(spec, seed),
        TaskType::Pair => make_pair(spec, seed),
        TaskType::TemperatureContrast => make_contrast(spec, seed),
    }
}

impl SyntheticTask {
    /// Likelihood-ratio reference classifier for single tasks; ambiguous
    /// documents fall back to class 0.
    pub fn bayes_predict(&self, doc: &TokenSequence) -> usize {
        let mut best = 0usize;
        let mut best_ll = f64::NEG_INFINITY;
        for (class, table) in self.class_log_probs.iter().enumerate() {
            let ll: f64 = doc.ids().iter().map(|&t| table[t as usize]).sum();
            if ll > best_ll {
                best_ll = ll;
                best = class;
            }
        }
        best
    }
}
