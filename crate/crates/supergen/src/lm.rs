//! Autoregressive language models: a tabular n-gram with additive smoothing
//! and a tiny fixed-window neural model. Both expose the same
//! next-token-logits contract consumed by decoding and scoring.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::log_softmax;
use crate::vocab::{TokenId, TokenSequence, VocabRef};

/// Next-token-logits contract. Implementations are immutable during
/// inference and safe to call from many workers concurrently.
pub trait AutoregressiveLm: Send + Sync {
    fn vocab(&self) -> &VocabRef;

    /// Logits over the full vocabulary given a (possibly empty) context.
    /// Contexts longer than the model window are truncated to the most
    /// recent tokens.
    fn next_token_logits(&self, context: &[TokenId]) -> Vec<f32>;
}

/// Per-token log probabilities of `continuation` under the model, each
/// conditioned on `prefix ++ continuation[..i]`. Computed at temperature 1
/// with no repetition adjustment.
pub fn sequence_token_log_probs(
    model: &dyn AutoregressiveLm,
    prefix: &TokenSequence,
    continuation: &TokenSequence,
) -> Result<Vec<f32>> {
    if continuation.is_empty() {
        return Err(Error::InvalidSample("empty continuation".into()));
    }
    let mut context: Vec<TokenId> = prefix.ids().to_vec();
    let mut out = Vec::with_capacity(continuation.len());
    for &tok in continuation.ids() {
        let logits = model.next_token_logits(&context);
        out.push(log_softmax(&logits)[tok as usize]);
        context.push(tok);
    }
    Ok(out)
}

/// Tabular n-gram model with additive (add-kappa) smoothing.
///
/// Contexts are the previous `order - 1` tokens, left-padded with BOS.
/// Training appends an EOS target to every document.
#[derive(Debug, Clone)]
pub struct NGramLm {
    vocab: VocabRef,
    order: usize,
    kappa: f32,
    counts: HashMap<Vec<TokenId>, Vec<u32>>,
}

impl NGramLm {
    pub fn new(vocab: VocabRef, order: usize, kappa: f32) -> Result<Self> {
        if order == 0 {
            return Err(Error::config("lm.order", "n-gram order must be >= 1"));
        }
        if kappa <= 0.0 {
            return Err(Error::config("lm.kappa", "smoothing kappa must be > 0"));
        }
        Ok(NGramLm { vocab, order, kappa, counts: HashMap::new() })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn kappa(&self) -> f32 {
        self.kappa
    }

    fn context_key(&self, context: &[TokenId]) -> Vec<TokenId> {
        let clen = self.order - 1;
        let mut key = Vec::with_capacity(clen);
        if context.len() < clen {
            key.resize(clen - context.len(), self.vocab.bos());
        }
        let start = context.len().saturating_sub(clen);
        key.extend_from_slice(&context[start..]);
        key
    }

    pub fn observe(&mut self, context: &[TokenId], target: TokenId) {
        let key = self.context_key(context);
        let row = self.counts.entry(key).or_insert_with(|| vec![0; self.vocab.size()]);
        row[target as usize] += 1;
    }

    /// Smoothed conditional probability used by the logit computation;
    /// exposed for oracle checks.
    pub fn conditional_prob(&self, context: &[TokenId], target: TokenId) -> f64 {
        let key = self.context_key(context);
        let vsize = self.vocab.size() as f64;
        let kappa = self.kappa as f64;
        match self.counts.get(&key) {
            Some(row) => {
                let total: u64 = row.iter().map(|&c| c as u64).sum();
                (row[target as usize] as f64 + kappa) / (total as f64 + kappa * vsize)
            }
            None => 1.0 / vsize,
        }
    }

    /// Count table in sorted-context order, for checkpointing.
    pub fn sorted_counts(&self) -> Vec<(&Vec<TokenId>, &Vec<u32>)> {
        let mut rows: Vec<_> = self.counts.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        rows
    }

    pub fn insert_count_row(&mut self, context: Vec<TokenId>, row: Vec<u32>) {
        self.counts.insert(context, row);
    }
}

impl AutoregressiveLm for NGramLm {
    fn vocab(&self) -> &VocabRef {
        &self.vocab
    }

    /// Logits are log smoothed counts, `ln(count + kappa)`. Their softmax
    /// equals the additively smoothed conditional exactly, and seen tokens
    /// get positive logits so per-token repetition divisors act in the
    /// intended direction.
    fn next_token_logits(&self, context: &[TokenId]) -> Vec<f32> {
        let key = self.context_key(context);
        let kappa = self.kappa as f64;
        match self.counts.get(&key) {
            Some(row) => row.iter().map(|&c| (c as f64 + kappa).ln() as f32).collect(),
            None => vec![kappa.ln() as f32; self.vocab.size()],
        }
    }
}

/// Trains the n-gram count tables. Every document contributes one
/// transition per token plus a final EOS target.
pub fn train_ngram(
    vocab: &VocabRef,
    corpus: &[TokenSequence],
    order: usize,
    kappa: f32,
) -> Result<NGramLm> {
    if corpus.is_empty() {
        return Err(Error::config("lm.corpus", "empty training corpus"));
    }
    let mut model = NGramLm::new(vocab.clone(), order, kappa)?;
    let eos = vocab.eos();
    for doc in corpus {
        doc.validate(vocab)?;
        let mut context: Vec<TokenId> = Vec::with_capacity(doc.len());
        for &tok in doc.ids() {
            model.observe(&context, tok);
            context.push(tok);
        }
        model.observe(&context, eos);
    }
    Ok(model)
}

/// Hyperparameters for the tiny neural LM.
#[derive(Debug, Clone)]
pub struct NeuralLmConfig {
    pub context_window: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f32,
}

impl Default for NeuralLmConfig {
    fn default() -> Self {
        NeuralLmConfig {
            context_window: 3,
            embed_dim: 8,
            hidden_dim: 16,
            epochs: 50,
            learning_rate: 0.5,
        }
    }
}

/// Fixed-window neural LM: the last `context_window` token embeddings are
/// concatenated, passed through one tanh hidden layer, then projected to
/// vocabulary logits.
#[derive(Debug, Clone)]
pub struct NeuralLm {
    pub(crate) vocab: VocabRef,
    pub context_window: usize,
    pub embed: Array2<f32>,  // |V| x d
    pub w1: Array2<f32>,     // (c*d) x h
    pub b1: Array1<f32>,     // h
    pub w2: Array2<f32>,     // h x |V|
    pub b2: Array1<f32>,     // |V|
}

impl NeuralLm {
    pub fn init(vocab: VocabRef, cfg: &NeuralLmConfig, rng: &mut ChaCha8Rng) -> Self {
        let v = vocab.size();
        let (c, d, h) = (cfg.context_window, cfg.embed_dim, cfg.hidden_dim);
        let mut draw = |n: usize, m: usize| {
            Array2::from_shape_fn((n, m), |_| rng.gen_range(-0.1..0.1f32))
        };
        let embed = draw(v, d);
        let w1 = draw(c * d, h);
        let w2 = draw(h, v);
        NeuralLm {
            vocab,
            context_window: c,
            embed,
            w1,
            b1: Array1::zeros(h),
            w2,
            b2: Array1::zeros(v),
        }
    }

    fn window(&self, context: &[TokenId]) -> Vec<TokenId> {
        let c = self.context_window;
        let mut win = Vec::with_capacity(c);
        if context.len() < c {
            win.resize(c - context.len(), self.vocab.bos());
        }
        let start = context.len().saturating_sub(c);
        win.extend_from_slice(&context[start..]);
        win
    }

    fn input_vec(&self, window: &[TokenId]) -> Array1<f32> {
        let d = self.embed.ncols();
        let mut x = Array1::zeros(window.len() * d);
        for (slot, &tok) in window.iter().enumerate() {
            let row = self.embed.row(tok as usize);
            x.slice_mut(ndarray::s![slot * d..(slot + 1) * d]).assign(&row);
        }
        x
    }

    fn forward_parts(&self, window: &[TokenId]) -> (Array1<f32>, Array1<f32>, Vec<f32>) {
        let x = self.input_vec(window);
        let hidden = (x.dot(&self.w1) + &self.b1).mapv(f32::tanh);
        let logits = (hidden.dot(&self.w2) + &self.b2).to_vec();
        (x, hidden, logits)
    }

    /// One full-batch gradient-descent epoch over (context, target) pairs.
    /// Returns the mean cross-entropy before the update.
    fn epoch(&mut self, pairs: &[(Vec<TokenId>, TokenId)], lr: f32) -> f32 {
        let d = self.embed.ncols();
        let mut g_embed = Array2::<f32>::zeros(self.embed.raw_dim());
        let mut g_w1 = Array2::<f32>::zeros(self.w1.raw_dim());
        let mut g_b1 = Array1::<f32>::zeros(self.b1.raw_dim());
        let mut g_w2 = Array2::<f32>::zeros(self.w2.raw_dim());
        let mut g_b2 = Array1::<f32>::zeros(self.b2.raw_dim());
        let mut loss = 0.0f64;

        for (window, target) in pairs {
            let (x, hidden, logits) = self.forward_parts(window);
            let log_probs = log_softmax(&logits);
            loss -= log_probs[*target as usize] as f64;

            // dL/dlogits = p - onehot(target)
            let mut d_logits =
                Array1::from_vec(log_probs.iter().map(|lp| lp.exp()).collect::<Vec<f32>>());
            d_logits[*target as usize] -= 1.0;

            g_w2 += &hidden
                .view()
                .insert_axis(ndarray::Axis(1))
                .dot(&d_logits.view().insert_axis(ndarray::Axis(0)));
            g_b2 += &d_logits;

            let d_hidden = self.w2.dot(&d_logits);
            let d_pre = &d_hidden * &hidden.mapv(|t| 1.0 - t * t);
            g_w1 += &x
                .view()
                .insert_axis(ndarray::Axis(1))
                .dot(&d_pre.view().insert_axis(ndarray::Axis(0)));
            g_b1 += &d_pre;

            let d_x = self.w1.dot(&d_pre);
            for (slot, &tok) in window.iter().enumerate() {
                let mut row = g_embed.row_mut(tok as usize);
                row += &d_x.slice(ndarray::s![slot * d..(slot + 1) * d]);
            }
        }

        let scale = lr / pairs.len() as f32;
        self.embed.scaled_add(-scale, &g_embed);
        self.w1.scaled_add(-scale, &g_w1);
        self.b1.scaled_add(-scale, &g_b1);
        self.w2.scaled_add(-scale, &g_w2);
        self.b2.scaled_add(-scale, &g_b2);
        loss as f32 / pairs.len() as f32
    }
}

impl AutoregressiveLm for NeuralLm {
    fn vocab(&self) -> &VocabRef {
        &self.vocab
    }

    fn next_token_logits(&self, context: &[TokenId]) -> Vec<f32> {
        let win = self.window(context);
        self.forward_parts(&win).2
    }
}

/// Trains the neural LM by full-batch gradient descent on next-token
/// cross-entropy. Returns the model and the per-epoch loss trace.
pub fn train_neural_lm(
    vocab: &VocabRef,
    corpus: &[TokenSequence],
    cfg: &NeuralLmConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(NeuralLm, Vec<f32>)> {
    if corpus.is_empty() {
        return Err(Error::config("lm.corpus", "empty training corpus"));
    }
    let mut model = NeuralLm::init(vocab.clone(), cfg, rng);
    let eos = vocab.eos();
    let mut pairs = Vec::new();
    for doc in corpus {
        doc.validate(vocab)?;
        let mut context: Vec<TokenId> = Vec::new();
        for &tok in doc.ids() {
            pairs.push((model.window(&context), tok));
            context.push(tok);
        }
        pairs.push((model.window(&context), eos));
    }
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        trace.push(model.epoch(&pairs, cfg.learning_rate));
    }
    Ok((model, trace))
}

/// Either concrete model kind, for checkpoint round-trips and stage wiring.
#[derive(Debug, Clone)]
pub enum LanguageModel {
    NGram(NGramLm),
    Neural(NeuralLm),
}

impl LanguageModel {
    pub fn as_dyn(&self) -> &dyn AutoregressiveLm {
        match self {
            LanguageModel::NGram(m) => m,
            LanguageModel::Neural(m) => m,
        }
    }
}

impl AutoregressiveLm for LanguageModel {
    fn vocab(&self) -> &VocabRef {
        match self {
            LanguageModel::NGram(m) => m.vocab(),
            LanguageModel::Neural(m) => m.vocab(),
        }
    }

    fn next_token_logits(&self, context: &[TokenId]) -> Vec<f32> {
        match self {
            LanguageModel::NGram(m) => m.next_token_logits(context),
            LanguageModel::Neural(m) => m.next_token_logits(context),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::argmax;
    use crate::rng::stream_rng;
    use crate::vocab::Vocabulary;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn toy_vocab() -> VocabRef {
        Arc::new(Vocabulary::new(&["a", "b", "c"]).unwrap())
    }

    /// Independent count-and-smooth oracle for bigram conditionals.
    fn bigram_oracle(
        corpus: &[Vec<TokenId>],
        vocab: &VocabRef,
        prev: TokenId,
        next: TokenId,
        kappa: f64,
    ) -> f64 {
        let bos = vocab.bos();
        let eos = vocab.eos();
        let mut count = 0u64;
        let mut total = 0u64;
        for doc in corpus {
            let mut padded = vec![bos];
            padded.extend_from_slice(doc);
            padded.push(eos);
            for w in padded.windows(2) {
                if w[0] == prev {
                    total += 1;
                    if w[1] == next {
                        count += 1;
                    }
                }
            }
        }
        (count as f64 + kappa) / (total as f64 + kappa * vocab.size() as f64)
    }

    #[test]
    fn ngram_argmax_after_a_is_b() {
        let vocab = toy_vocab();
        let corpus = vec![vocab.encode("a b a b").unwrap()];
        let model = train_ngram(&vocab, &corpus, 2, 1.0).unwrap();
        let a = vocab.id_of("a").unwrap();
        let b = vocab.id_of("b").unwrap();
        let logits = model.next_token_logits(&[a]);
        assert_eq!(argmax(&logits) as TokenId, b);
    }

    #[test]
    fn untrained_ngram_is_uniform() {
        let vocab = toy_vocab();
        let model = NGramLm::new(vocab.clone(), 2, 1.0).unwrap();
        let logits = model.next_token_logits(&[vocab.id_of("c").unwrap()]);
        assert!(logits.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-7));
    }

    #[test]
    fn unseen_context_with_smoothing_is_uniform() {
        let vocab = toy_vocab();
        let corpus = vec![vocab.encode("a b").unwrap()];
        let model = train_ngram(&vocab, &corpus, 2, 1.0).unwrap();
        // `c` never appears as a context
        let logits = model.next_token_logits(&[vocab.id_of("c").unwrap()]);
        let probs = crate::numeric::softmax(&logits);
        for p in probs {
            assert_abs_diff_eq!(p, 1.0 / vocab.size() as f32, epsilon = 1e-6);
        }
    }

    #[test]
    fn ngram_matches_brute_force_oracle() {
        let vocab = toy_vocab();
        let texts = ["a b c a", "b b a", "c a b c c", "a"];
        let corpus: Vec<TokenSequence> =
            texts.iter().map(|t| vocab.encode(t).unwrap()).collect();
        let raw: Vec<Vec<TokenId>> = corpus.iter().map(|s| s.ids().to_vec()).collect();
        let model = train_ngram(&vocab, &corpus, 2, 1.0).unwrap();
        for prev in 0..vocab.size() as TokenId {
            for next in 0..vocab.size() as TokenId {
                let got = model.conditional_prob(&[prev], next);
                let want = bigram_oracle(&raw, &vocab, prev, next, 1.0);
                assert_abs_diff_eq!(got, want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ngram_probabilities_normalize() {
        let vocab = toy_vocab();
        let corpus = vec![vocab.encode("a b c").unwrap()];
        let model = train_ngram(&vocab, &corpus, 2, 1.0).unwrap();
        let probs = crate::numeric::softmax(&model.next_token_logits(&[vocab.id_of("a").unwrap()]));
        let sum: f32 = probs.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn repeated_sequence_regenerates_greedily() {
        let vocab = toy_vocab();
        let corpus = vec![vocab.encode("a b c").unwrap(); 5];
        let model = train_ngram(&vocab, &corpus, 2, 1.0).unwrap();
        let mut context: Vec<TokenId> = Vec::new();
        let mut out = Vec::new();
        loop {
            let next = argmax(&model.next_token_logits(&context)) as TokenId;
            if next == vocab.eos() || out.len() > 10 {
                break;
            }
            out.push(next);
            context.push(next);
        }
        assert_eq!(out, corpus[0].ids().to_vec());
    }

    #[test]
    fn sequence_log_probs_uniform_model() {
        let vocab = Arc::new(Vocabulary::new(&["a"]).unwrap()); // |V| = 4
        let model = NGramLm::new(vocab.clone(), 2, 1.0).unwrap();
        let cont = TokenSequence::new(vec![3, 3, 3]);
        let lps =
            sequence_token_log_probs(&model, &TokenSequence::new(vec![vocab.bos()]), &cont)
                .unwrap();
        assert_eq!(lps.len(), 3);
        for lp in lps {
            assert_abs_diff_eq!(lp, (0.25f32).ln(), epsilon = 1e-6);
        }
    }

    #[test]
    fn sequence_log_probs_hand_example() {
        // Bigram over {<bos>, <eos>, <sep>, a, b}? Build counts so that
        // p(a | bos) = 0.5 and p(b | a) = 0.25 exactly with kappa = 1.
        let vocab = toy_vocab(); // |V| = 6: bos eos sep a b c
        let a = vocab.id_of("a").unwrap();
        let b = vocab.id_of("b").unwrap();
        let mut model = NGramLm::new(vocab.clone(), 2, 1.0).unwrap();
        // context [bos]: counts such that (c_a + 1) / (total + 6) = 0.5
        // with c_a = 5, total = 6: 6/12 = 0.5
        let mut row = vec![0u32; vocab.size()];
        row[a as usize] = 5;
        row[vocab.eos() as usize] = 1;
        model.insert_count_row(vec![vocab.bos()], row);
        // context [a]: (c_b + 1) / (total + 6) = 0.25 with c_b = 2, total = 6
        let mut row = vec![0u32; vocab.size()];
        row[b as usize] = 2;
        row[vocab.eos() as usize] = 4;
        model.insert_count_row(vec![a], row);

        let lps = sequence_token_log_probs(
            &model,
            &TokenSequence::empty(),
            &TokenSequence::new(vec![a, b]),
        )
        .unwrap();
        assert_abs_diff_eq!(lps[0], -0.6931, epsilon = 1e-4);
        assert_abs_diff_eq!(lps[1], -1.3863, epsilon = 1e-4);
    }

    #[test]
    fn empty_corpus_is_config_error() {
        let vocab = toy_vocab();
        assert!(train_ngram(&vocab, &[], 2, 1.0).is_err());
        let mut rng = stream_rng(0, "lm", 0);
        assert!(train_neural_lm(&vocab, &[], &NeuralLmConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn neural_lm_deterministic_and_loss_decreases() {
        let vocab = toy_vocab();
        let corpus = vec![vocab.encode("a b c a b c").unwrap(), vocab.encode("b c a").unwrap()];
        let cfg = NeuralLmConfig { epochs: 30, ..Default::default() };
        let mut rng1 = stream_rng(11, "lm", 0);
        let (m1, trace1) = train_neural_lm(&vocab, &corpus, &cfg, &mut rng1).unwrap();
        let mut rng2 = stream_rng(11, "lm", 0);
        let (m2, trace2) = train_neural_lm(&vocab, &corpus, &cfg, &mut rng2).unwrap();
        assert_eq!(m1.embed, m2.embed);
        assert_eq!(m1.w1, m2.w1);
        assert_eq!(m1.w2, m2.w2);
        assert_eq!(trace1, trace2);
        for w in trace1.windows(2) {
            assert!(w[1] <= w[0] + 1e-4, "loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn neural_lm_inference_is_pure() {
        let vocab = toy_vocab();
        let mut rng = stream_rng(3, "lm", 0);
        let model = NeuralLm::init(vocab.clone(), &NeuralLmConfig::default(), &mut rng);
        let ctx = [vocab.id_of("a").unwrap(), vocab.id_of("b").unwrap()];
        assert_eq!(model.next_token_logits(&ctx), model.next_token_logits(&ctx));
    }

    #[test]
    fn neural_lm_truncates_long_context() {
        let vocab = toy_vocab();
        let mut rng = stream_rng(3, "lm", 0);
        let model = NeuralLm::init(vocab.clone(), &NeuralLmConfig::default(), &mut rng);
        let a = vocab.id_of("a").unwrap();
        let b = vocab.id_of("b").unwrap();
        let c = vocab.id_of("c").unwrap();
        let long = [b, c, a, b, c];
        let short = [a, b, c]; // last context_window = 3 tokens
        assert_eq!(model.next_token_logits(&long), model.next_token_logits(&short));
    }
}
