//! Tiny classifier: embedding average, one tanh hidden layer, softmax
//! output. Pair inputs are joined by SEP before the forward pass.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::softmax;
use crate::vocab::{TokenSequence, VocabRef};

#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { embed_dim: 16, hidden_dim: 32, n_classes: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierNet {
    pub(crate) vocab: VocabRef,
    pub n_classes: usize,
    pub embed: Array2<f32>, // |V| x d
    pub w1: Array2<f32>,    // d x h
    pub b1: Array1<f32>,    // h
    pub w2: Array2<f32>,    // h x |Y|
    pub b2: Array1<f32>,    // |Y|
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    input: TokenSequence,
    x: Array1<f32>,
    hidden: Array1<f32>,
    pub probs: Vec<f32>,
}

/// Parameter gradients accumulated over a minibatch.
pub struct NetGradients {
    pub embed: Array2<f32>,
    pub w1: Array2<f32>,
    pub b1: Array1<f32>,
    pub w2: Array2<f32>,
    pub b2: Array1<f32>,
}

impl ClassifierNet {
    pub fn init(vocab: VocabRef, cfg: &ClassifierConfig, rng: &mut ChaCha8Rng) -> Self {
        let v = vocab.size();
        let (d, h, y) = (cfg.embed_dim, cfg.hidden_dim, cfg.n_classes);
        let mut draw =
            |n: usize, m: usize| Array2::from_shape_fn((n, m), |_| rng.gen_range(-0.1..0.1f32));
        let embed = draw(v, d);
        let w1 = draw(d, h);
        let w2 = draw(h, y);
        ClassifierNet {
            vocab,
            n_classes: y,
            embed,
            w1,
            b1: Array1::zeros(h),
            w2,
            b2: Array1::zeros(y),
        }
    }

    pub fn vocab(&self) -> &VocabRef {
        &self.vocab
    }

    /// Joins a sequence pair with the SEP token for classifier input.
    pub fn join_pair(&self, first: &TokenSequence, second: &TokenSequence) -> TokenSequence {
        let mut ids = first.ids().to_vec();
        ids.push(self.vocab.sep());
        ids.extend_from_slice(second.ids());
        TokenSequence::new(ids)
    }

    fn embed_average(&self, input: &TokenSequence) -> Array1<f32> {
        let d = self.embed.ncols();
        let mut x = Array1::<f32>::zeros(d);
        for &tok in input.ids() {
            x += &self.embed.row(tok as usize);
        }
        x / input.len() as f32
    }

    pub fn forward_cached(&self, input: &TokenSequence) -> Result<ForwardCache> {
        if input.is_empty() {
            return Err(Error::InvalidSample("empty classifier input".into()));
        }
        input.validate(&self.vocab)?;
        let x = self.embed_average(input);
        let hidden = (x.dot(&self.w1) + &self.b1).mapv(f32::tanh);
        let logits = (hidden.dot(&self.w2) + &self.b2).to_vec();
        let probs = softmax(&logits);
        Ok(ForwardCache { input: input.clone(), x, hidden, probs })
    }

    /// Probability vector over the label space.
    pub fn forward(&self, input: &TokenSequence) -> Result<Vec<f32>> {
        Ok(self.forward_cached(input)?.probs)
    }

    pub fn zero_gradients(&self) -> NetGradients {
        NetGradients {
            embed: Array2::zeros(self.embed.raw_dim()),
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
        }
    }

    /// Backpropagates a loss gradient w.r.t. the output logits into `grads`.
    pub fn accumulate_backward(&self, cache: &ForwardCache, d_logits: &[f32], grads: &mut NetGradients) {
        let d_logits = Array1::from_vec(d_logits.to_vec());
        grads.w2 += &cache
            .hidden
            .view()
            .insert_axis(Axis(1))
            .dot(&d_logits.view().insert_axis(Axis(0)));
        grads.b2 += &d_logits;

        let d_hidden = self.w2.dot(&d_logits);
        let d_pre = &d_hidden * &cache.hidden.mapv(|t| 1.0 - t * t);
        grads.w1 += &cache
            .x
            .view()
            .insert_axis(Axis(1))
            .dot(&d_pre.view().insert_axis(Axis(0)));
        grads.b1 += &d_pre;

        let d_x = self.w1.dot(&d_pre) / cache.input.len() as f32;
        for &tok in cache.input.ids() {
            let mut row = grads.embed.row_mut(tok as usize);
            row += &d_x;
        }
    }

    /// Gradient-descent step: `param -= scale * grad`.
    pub fn apply_gradients(&mut self, grads: &NetGradients, scale: f32) {
        self.embed.scaled_add(-scale, &grads.embed);
        self.w1.scaled_add(-scale, &grads.w1);
        self.b1.scaled_add(-scale, &grads.b1);
        self.w2.scaled_add(-scale, &grads.w2);
        self.b2.scaled_add(-scale, &grads.b2);
    }

    /// Flat view of all parameters, for finite-difference checks.
    pub fn param_mut(&mut self, flat_index: usize) -> &mut f32 {
        let sizes = [
            self.embed.len(),
            self.w1.len(),
            self.b1.len(),
            self.w2.len(),
            self.b2.len(),
        ];
        let mut idx = flat_index;
        if idx < sizes[0] {
            return self.embed.as_slice_mut().unwrap().get_mut(idx).unwrap();
        }
        idx -= sizes[0];
        if idx < sizes[1] {
            return self.w1.as_slice_mut().unwrap().get_mut(idx).unwrap();
        }
        idx -= sizes[1];
        if idx < sizes[2] {
            return self.b1.as_slice_mut().unwrap().get_mut(idx).unwrap();
        }
        idx -= sizes[2];
        if idx < sizes[3] {
            return self.w2.as_slice_mut().unwrap().get_mut(idx).unwrap();
        }
        idx -= sizes[3];
        self.b2.as_slice_mut().unwrap().get_mut(idx).unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.embed.len() + self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Flat gradient entry matching `param_mut` indexing.
    pub fn grad_at(grads: &NetGradients, flat_index: usize) -> f32 {
        let sizes = [grads.embed.len(), grads.w1.len(), grads.b1.len(), grads.w2.len()];
        let mut idx = flat_index;
        if idx < sizes[0] {
            return grads.embed.as_slice().unwrap()[idx];
        }
        idx -= sizes[0];
        if idx < sizes[1] {
            return grads.w1.as_slice().unwrap()[idx];
        }
        idx -= sizes[1];
        if idx < sizes[2] {
            return grads.b1.as_slice().unwrap()[idx];
        }
        idx -= sizes[2];
        if idx < sizes[3] {
            return grads.w2.as_slice().unwrap()[idx];
        }
        idx -= sizes[3];
        grads.b2.as_slice().unwrap()[idx]
    }
}
