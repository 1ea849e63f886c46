//! A compact autoregressive policy π_θ(y | x).
//!
//! The next-token distribution is computed from the source (one embedding
//! slot per source position, or the mean source embedding) concatenated with
//! the embeddings of the last `context_window` output tokens, passed through
//! one tanh hidden layer and a softmax. All parameters live in one flat
//! vector; gradients are computed by hand-written backward passes.

mod checkpoint;
mod net;

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Token};
use crate::seed;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
use net::{Layout, StepCache};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
const RESERVED: [&str; 3] = ["<pad>", "<bos>", "<eos>"];

/// Upper bound on the number of parameters.
pub const PARAM_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("token {0:?} is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("token {0:?} collides with a reserved token")]
    ReservedToken(String),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("architecture needs {needed} parameters, budget is {budget}")]
    OverBudget { needed: usize, budget: usize },
    #[error("source has {len} tokens, the policy accepts at most {max}")]
    SourceTooLong { len: usize, max: usize },
    #[error("invalid temperature {0}")]
    InvalidTemperature(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("objective returned weights for {got} sequences/tokens, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Dense token index with reserved `<pad>`, `<bos>`, `<eos>` at 0, 1, 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<Token>,
    index: HashMap<Token, usize>,
}

impl Vocab {
    /// Reserved tokens followed by `tokens` in order, duplicates dropped.
    pub fn new(tokens: impl IntoIterator<Item = Token>) -> Result<Self, PolicyError> {
        let mut all: Vec<Token> = RESERVED.iter().map(|r| Token::new(*r).expect("reserved names are valid")).collect();
        let mut index: HashMap<Token, usize> = all.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        for t in tokens {
            if RESERVED.contains(&t.as_str()) {
                return Err(PolicyError::ReservedToken(t.to_string()));
            }
            if !index.contains_key(&t) {
                index.insert(t.clone(), all.len());
                all.push(t);
            }
        }
        Ok(Vocab { tokens: all, index })
    }

    /// Sorted union of source and target vocabularies of the given datasets.
    pub fn from_datasets(datasets: &[&Dataset]) -> Result<Self, PolicyError> {
        let mut set = std::collections::BTreeSet::new();
        for d in datasets {
            set.extend(d.source_vocab.iter().cloned());
            set.extend(d.target_vocab.iter().cloned());
        }
        Vocab::new(set)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn id(&self, token: &Token) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn encode(&self, tokens: &[Token]) -> Result<Vec<usize>, PolicyError> {
        tokens.iter().map(|t| self.id(t).ok_or_else(|| PolicyError::OutOfVocabulary(t.to_string()))).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<Token> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    /// Decodes an output sequence, dropping the terminating `<eos>` if present.
    pub fn decode_output(&self, ids: &[usize]) -> Vec<Token> {
        let body = match ids.last() {
            Some(&EOS) => &ids[..ids.len() - 1],
            _ => ids,
        };
        self.decode(body)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceEncoding {
    /// One embedding slot per source position (padded to `max_source_len`).
    #[default]
    Positional,
    /// Mean of the source token embeddings; order-insensitive.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub context_window: usize,
    pub max_output_len: usize,
    pub max_source_len: usize,
    pub source_encoding: SourceEncoding,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            embedding_dim: 16,
            hidden_dim: 128,
            context_window: 5,
            max_output_len: 16,
            max_source_len: 12,
            source_encoding: SourceEncoding::Positional,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self, vocab_len: usize) -> Result<(), PolicyError> {
        let dims = [
            ("embedding_dim", self.embedding_dim),
            ("hidden_dim", self.hidden_dim),
            ("context_window", self.context_window),
            ("max_output_len", self.max_output_len),
            ("max_source_len", self.max_source_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(PolicyError::InvalidArch(format!("{name} must be positive")));
            }
        }
        let needed = Layout::new(self, vocab_len).total;
        if needed > PARAM_BUDGET {
            return Err(PolicyError::OverBudget { needed, budget: PARAM_BUDGET });
        }
        Ok(())
    }

    pub fn param_count(&self, vocab_len: usize) -> usize {
        Layout::new(self, vocab_len).total
    }
}

/// Policy parameters: vocabulary, architecture and the flat weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub vocab: Vocab,
    pub arch: ArchConfig,
    pub values: Vec<f64>,
}

impl PolicyParams {
    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.arch, self.vocab.len())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self += step * direction`.
    pub fn add_scaled(&mut self, direction: &[f64], step: f64) {
        for (v, d) in self.values.iter_mut().zip(direction) {
            *v += step * d;
        }
    }

    fn check_source(&self, source: &[usize]) -> Result<(), PolicyError> {
        if source.len() > self.arch.max_source_len {
            return Err(PolicyError::SourceTooLong { len: source.len(), max: self.arch.max_source_len });
        }
        Ok(())
    }
}

/// Seeded initialization. The output layer starts at zero, so the initial
/// next-token distribution is uniform.
pub fn init_policy(vocab: &Vocab, arch: &ArchConfig, seed: u64) -> Result<PolicyParams, PolicyError> {
    arch.validate(vocab.len())?;
    let layout = Layout::new(arch, vocab.len());
    let mut rng = seed::rng(seed);
    let mut values = vec![0.0; layout.total];
    for v in &mut values[layout.embed..layout.embed + layout.embed_len()] {
        *v = rng.gen_range(-0.5..0.5);
    }
    let bound = (6.0 / (layout.input_dim + arch.hidden_dim) as f64).sqrt();
    for v in &mut values[layout.w1..layout.w1 + layout.input_dim * arch.hidden_dim] {
        *v = rng.gen_range(-bound..bound);
    }
    Ok(PolicyParams { vocab: vocab.clone(), arch: *arch, values })
}

/// Per-token log-probabilities of exactly `output` (no implicit `<eos>`).
pub fn sequence_log_probs(params: &PolicyParams, source: &[usize], output: &[usize]) -> Result<Vec<f64>, PolicyError> {
    params.check_source(source)?;
    let net = net::Net::new(params);
    let (_, caches) = net.forward(source, output);
    Ok(caches.iter().zip(output).map(|(c, &y)| c.log_probs[y]).collect())
}

/// Teacher-forced log-probabilities of `target` followed by `<eos>`; their
/// sum is log π_θ(target | source).
pub fn log_probs(params: &PolicyParams, source: &[Token], target: &[Token]) -> Result<Vec<f64>, PolicyError> {
    let src = params.vocab.encode(source)?;
    let mut out = params.vocab.encode(target)?;
    out.push(EOS);
    sequence_log_probs(params, &src, &out)
}

/// The full next-token distribution after `prefix`, as log-probabilities.
pub fn next_token_log_probs(params: &PolicyParams, source: &[usize], prefix: &[usize]) -> Result<Vec<f64>, PolicyError> {
    params.check_source(source)?;
    let net = net::Net::new(params);
    let src = net.encode_source(source);
    Ok(net.step(&src, prefix).log_probs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    /// Generated ids, ending in `<eos>` unless truncated.
    pub ids: Vec<usize>,
    /// Unscaled log π_θ of each generated id.
    pub logprobs: Vec<f64>,
    pub truncated: bool,
}

impl SampleResult {
    /// Output tokens without the terminating `<eos>`.
    pub fn tokens(&self, vocab: &Vocab) -> Vec<Token> {
        vocab.decode_output(&self.ids)
    }
}

/// Ancestral sampling from softmax(logits / temperature); `temperature == 0`
/// decodes greedily. Recorded log-probabilities are those of the unscaled
/// policy.
pub fn sample(
    params: &PolicyParams,
    source: &[usize],
    temperature: f64,
    seed: u64,
    max_len: usize,
) -> Result<SampleResult, PolicyError> {
    if !(temperature >= 0.0 && temperature.is_finite()) {
        return Err(PolicyError::InvalidTemperature(temperature));
    }
    params.check_source(source)?;
    let net = net::Net::new(params);
    let src = net.encode_source(source);
    let mut rng = seed::rng(seed);
    let mut ids = Vec::new();
    let mut logprobs = Vec::new();
    while ids.len() < max_len {
        let step = net.step(&src, &ids);
        let next = if temperature == 0.0 {
            argmax(&step.log_probs)
        } else {
            draw(&step.logits, temperature, rng.gen::<f64>())
        };
        ids.push(next);
        logprobs.push(step.log_probs[next]);
        if next == EOS {
            return Ok(SampleResult { ids, logprobs, truncated: false });
        }
    }
    Ok(SampleResult { ids, logprobs, truncated: true })
}

/// Greedy decode of `source` up to the architecture's output limit.
pub fn greedy_decode(params: &PolicyParams, source: &[Token]) -> Result<Vec<Token>, PolicyError> {
    let src = params.vocab.encode(source)?;
    let r = sample(params, &src, 0.0, 0, params.arch.max_output_len)?;
    Ok(r.tokens(&params.vocab))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn draw(logits: &[f64], temperature: f64, u: f64) -> usize {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut target = u * total;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            last = i;
            if target < *w {
                return i;
            }
            target -= w;
        }
    }
    last
}

/// A (source, output) pair of id sequences scored by an [`Objective`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub source: Vec<usize>,
    pub output: Vec<usize>,
}

/// A differentiable scalar built from per-token log-probabilities of a fixed
/// set of sequences under the current parameters.
pub trait Objective: Sync {
    fn sequences(&self) -> &[Sequence];

    /// Objective value and its partial derivative with respect to every
    /// per-token log-probability (same shape as `logprobs`).
    fn evaluate(&self, logprobs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>);
}

const CHUNK: usize = 4;

/// Value of `objective` at `params`.
pub fn objective_value(params: &PolicyParams, objective: &impl Objective) -> Result<f64, PolicyError> {
    let seqs = objective.sequences();
    for s in seqs {
        params.check_source(&s.source)?;
    }
    let logprobs: Vec<Vec<f64>> = seqs
        .par_iter()
        .map(|s| sequence_log_probs(params, &s.source, &s.output))
        .collect::<Result<_, _>>()?;
    let (value, _) = objective.evaluate(&logprobs);
    if !value.is_finite() {
        return Err(PolicyError::NonFinite("objective value"));
    }
    Ok(value)
}

/// Exact reverse-mode gradient of `objective` at `params`, with its value.
///
/// Sequences are processed in fixed-size chunks whose partial gradients are
/// summed in order, so the result does not depend on the worker count.
pub fn objective_gradient(params: &PolicyParams, objective: &impl Objective) -> Result<(f64, Vec<f64>), PolicyError> {
    let seqs = objective.sequences();
    for s in seqs {
        params.check_source(&s.source)?;
    }
    let net = net::Net::new(params);
    let forward: Vec<(Vec<f64>, Vec<StepCache>)> = seqs.par_iter().map(|s| net.forward(&s.source, &s.output)).collect();
    let logprobs: Vec<Vec<f64>> = forward
        .iter()
        .zip(seqs)
        .map(|((_, caches), s)| caches.iter().zip(&s.output).map(|(c, &y)| c.log_probs[y]).collect())
        .collect();
    if logprobs.iter().flatten().any(|l| !l.is_finite()) {
        return Err(PolicyError::NonFinite("log-probabilities"));
    }
    let (value, weights) = objective.evaluate(&logprobs);
    if !value.is_finite() {
        return Err(PolicyError::NonFinite("objective value"));
    }
    if weights.len() != seqs.len() {
        return Err(PolicyError::ShapeMismatch { expected: seqs.len(), got: weights.len() });
    }
    for (w, s) in weights.iter().zip(seqs) {
        if w.len() != s.output.len() {
            return Err(PolicyError::ShapeMismatch { expected: s.output.len(), got: w.len() });
        }
    }

    let n = params.values.len();
    let idx: Vec<usize> = (0..seqs.len()).collect();
    let partials: Vec<Vec<f64>> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; n];
            for &i in chunk {
                let (src_x, caches) = &forward[i];
                net.backward(&seqs[i], src_x, caches, &weights[i], &mut grad);
            }
            grad
        })
        .collect();
    let mut grad = vec![0.0; n];
    for p in &partials {
        for (g, v) in grad.iter_mut().zip(p) {
            *g += v;
        }
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(PolicyError::NonFinite("gradient"));
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests;
