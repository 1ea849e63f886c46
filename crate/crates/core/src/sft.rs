//! Teacher-forced warm-up by mini-batch gradient descent on the per-token
//! negative log-likelihood.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example};
use crate::policy::{objective_gradient, objective_value, Objective, PolicyError, PolicyParams, Sequence, Vocab, EOS};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum SftError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid SFT config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig { epochs: 24, batch_size: 32, learning_rate: 1.0, seed: 0, shuffle: true }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<(), SftError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(SftError::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SftError::InvalidConfig(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Source and target ids of `example`, with `<eos>` appended to the target.
pub fn teacher_forced(vocab: &Vocab, example: &Example) -> Result<Sequence, PolicyError> {
    let mut output = vocab.encode(&example.target)?;
    output.push(EOS);
    Ok(Sequence { source: vocab.encode(&example.source)?, output })
}

/// Mean negative log-likelihood per target token, `<eos>` included.
struct TokenNll {
    seqs: Vec<Sequence>,
    n_tokens: f64,
}

impl TokenNll {
    fn new(seqs: Vec<Sequence>) -> Self {
        let n_tokens = seqs.iter().map(|s| s.output.len()).sum::<usize>() as f64;
        TokenNll { seqs, n_tokens }
    }
}

impl Objective for TokenNll {
    fn sequences(&self) -> &[Sequence] {
        &self.seqs
    }

    fn evaluate(&self, logprobs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let w = -1.0 / self.n_tokens;
        let value = w * logprobs.iter().flatten().sum::<f64>();
        (value, logprobs.iter().map(|l| vec![w; l.len()]).collect())
    }
}

/// Mean per-token negative log-likelihood of `dataset` under `params`.
pub fn mean_token_nll(params: &PolicyParams, dataset: &Dataset) -> Result<f64, SftError> {
    let seqs = encode(params, dataset)?;
    Ok(objective_value(params, &TokenNll::new(seqs))?)
}

/// [`mean_token_nll`] and its gradient.
pub fn token_nll_gradient(params: &PolicyParams, dataset: &Dataset) -> Result<(f64, Vec<f64>), SftError> {
    let seqs = encode(params, dataset)?;
    Ok(objective_gradient(params, &TokenNll::new(seqs))?)
}

fn encode(params: &PolicyParams, dataset: &Dataset) -> Result<Vec<Sequence>, SftError> {
    if dataset.is_empty() {
        return Err(SftError::EmptyDataset);
    }
    Ok(dataset.examples.iter().map(|e| teacher_forced(&params.vocab, e)).collect::<Result<_, _>>()?)
}

/// Trains and returns the final parameters with the per-epoch mean loss.
pub fn train_sft(dataset: &Dataset, params: &PolicyParams, config: &SftConfig) -> Result<(PolicyParams, Vec<f64>), SftError> {
    train_sft_with(dataset, params, config, |_, _, _| {})
}

/// As [`train_sft`], calling `on_epoch(epoch, params, mean_loss)` after each
/// epoch (epochs count from 1).
pub fn train_sft_with(
    dataset: &Dataset,
    params: &PolicyParams,
    config: &SftConfig,
    mut on_epoch: impl FnMut(usize, &PolicyParams, f64),
) -> Result<(PolicyParams, Vec<f64>), SftError> {
    config.validate()?;
    let seqs = encode(params, dataset)?;
    let mut params = params.clone();
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut seed::rng(seed::derive(config.seed, &[epoch as u64])));
        }
        let mut loss_sum = 0.0;
        let mut token_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let obj = TokenNll::new(batch.iter().map(|&i| seqs[i].clone()).collect());
            let (loss, grad) = objective_gradient(&params, &obj).map_err(|e| match e {
                PolicyError::NonFinite(_) => SftError::NonFiniteLoss { epoch },
                e => e.into(),
            })?;
            loss_sum += loss * obj.n_tokens;
            token_sum += obj.n_tokens;
            params.add_scaled(&grad, -config.learning_rate);
        }
        let mean = loss_sum / token_sum;
        if !mean.is_finite() {
            return Err(SftError::NonFiniteLoss { epoch });
        }
        trace.push(mean);
        on_epoch(epoch, &params, mean);
    }
    Ok((params, trace))
}

/// `epoch,mean_loss` CSV with six decimals.
pub fn loss_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{},{l:.6}\n", i + 1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Formalism;
    use crate::policy::{greedy_decode, init_policy, SourceEncoding};
    use crate::testutil::{max_fd_error, param_blocks, random_params, toy_arch, toy_dataset, toy_vocab};

    fn fresh() -> PolicyParams {
        init_policy(&toy_vocab(), &toy_arch(SourceEncoding::Positional), 1).unwrap()
    }

    #[test]
    fn initial_loss_is_log_vocab_size() {
        let nll = mean_token_nll(&fresh(), &toy_dataset(10)).unwrap();
        assert!((nll - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn memorizes_a_single_example() {
        let data = toy_dataset(7);
        let one = Dataset::new(vec![data.examples[6].clone()], "one", Formalism::Scan);
        let cfg = SftConfig { epochs: 80, batch_size: 1, learning_rate: 1.0, ..SftConfig::default() };
        let (p, trace) = train_sft(&one, &fresh(), &cfg).unwrap();
        assert!(trace.last().unwrap() < &0.1, "{trace:?}");
        assert_eq!(greedy_decode(&p, &one.examples[0].source).unwrap(), one.examples[0].target);
    }

    #[test]
    fn loss_trace_is_essentially_non_increasing() {
        let cfg = SftConfig { epochs: 25, batch_size: 10, learning_rate: 0.05, shuffle: false, ..SftConfig::default() };
        let (_, trace) = train_sft(&toy_dataset(10), &fresh(), &cfg).unwrap();
        let rises = trace.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(rises <= 1, "{trace:?}");
        assert!(trace.last().unwrap() < &trace[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = SftConfig { epochs: 3, batch_size: 3, ..SftConfig::default() };
        let a = train_sft(&toy_dataset(10), &fresh(), &cfg).unwrap();
        let b = train_sft(&toy_dataset(10), &fresh(), &cfg).unwrap();
        assert_eq!(a, b);
        let c = train_sft(&toy_dataset(10), &fresh(), &SftConfig { seed: 9, ..cfg }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn errors() {
        let mut data = toy_dataset(2);
        data.examples.push(Example::parse("crawl", "CRAWL", Formalism::Scan).unwrap());
        let err = train_sft(&data, &fresh(), &SftConfig::default()).unwrap_err();
        assert!(matches!(err, SftError::Policy(PolicyError::OutOfVocabulary(_))), "{err}");
        let empty = Dataset::new(vec![], "empty", Formalism::Scan);
        assert!(matches!(train_sft(&empty, &fresh(), &SftConfig::default()), Err(SftError::EmptyDataset)));
        let bad = SftConfig { learning_rate: 0.0, ..SftConfig::default() };
        assert!(matches!(train_sft(&toy_dataset(2), &fresh(), &bad), Err(SftError::InvalidConfig(_))));
        let explode = SftConfig { learning_rate: 1e300, epochs: 5, ..SftConfig::default() };
        assert!(matches!(train_sft(&toy_dataset(10), &fresh(), &explode), Err(SftError::NonFiniteLoss { .. })));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let data = toy_dataset(10);
        for seed in 0..3 {
            let p = random_params(SourceEncoding::Positional, 40 + seed);
            let obj = TokenNll::new(encode(&p, &data).unwrap());
            let (_, grad) = objective_gradient(&p, &obj).unwrap();
            let f = |q: &PolicyParams| objective_value(q, &obj).unwrap();
            let err = max_fd_error(&p, f, &grad, &param_blocks(&p), 20, seed);
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn csv_format() {
        assert_eq!(loss_trace_csv(&[2.5, 0.125]), "epoch,mean_loss\n1,2.500000\n2,0.125000\n");
    }
}
