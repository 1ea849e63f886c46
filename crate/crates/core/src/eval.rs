//! Evaluation and behavioral analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::abstraction::FormalismDescriptor;
use crate::corpus::{join, Dataset, Token};
use crate::policy::{greedy_decode, sample, PolicyError, PolicyParams};
use crate::reward::{binary_reward, composition_reward, primitive_reward};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{preds} predictions for {golds} gold outputs")]
    Misaligned { preds: usize, golds: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("prediction {index} equals its gold output")]
    CorrectPrediction { index: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("prediction dump line {line}: {msg}")]
    Dump { line: usize, msg: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

fn aligned<A, B>(preds: &[A], golds: &[B]) -> Result<(), EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::Misaligned { preds: preds.len(), golds: golds.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub exact_match: f64,
    pub prim_accuracy: f64,
    pub comp_accuracy: f64,
    pub n_examples: usize,
}

impl EvalReport {
    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\nexact_match,{:.6}\nprim_accuracy,{:.6}\ncomp_accuracy,{:.6}\nn_examples,{}\n",
            self.exact_match, self.prim_accuracy, self.comp_accuracy, self.n_examples
        )
    }
}

/// Mean binary, primitive and composition rewards of aligned lists.
pub fn evaluate(preds: &[Vec<Token>], golds: &[Vec<Token>], descriptor: &FormalismDescriptor) -> Result<EvalReport, EvalError> {
    aligned(preds, golds)?;
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut em, mut prim, mut comp) = (0.0, 0.0, 0.0);
    for (p, g) in preds.iter().zip(golds) {
        em += binary_reward(p, g);
        prim += primitive_reward(p, g, descriptor);
        comp += composition_reward(p, g, descriptor);
    }
    let n = preds.len() as f64;
    Ok(EvalReport { exact_match: em / n, prim_accuracy: prim / n, comp_accuracy: comp / n, n_examples: preds.len() })
}

/// Greedy decodes of every source in `dataset`.
pub fn greedy_predictions(params: &PolicyParams, dataset: &Dataset) -> Result<Vec<Vec<Token>>, EvalError> {
    Ok(dataset.examples.par_iter().map(|e| greedy_decode(params, &e.source)).collect::<Result<_, _>>()?)
}

/// `k` samples per example; sample j of example i uses seed
/// `derive(seed, [i, j])`, so a prefix of a larger draw is a smaller draw.
pub fn draw_samples(
    params: &PolicyParams,
    dataset: &Dataset,
    k: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<Vec<Vec<Token>>>, EvalError> {
    let max_len = params.arch.max_output_len;
    let out = dataset
        .examples
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let src = params.vocab.encode(&e.source)?;
            (0..k)
                .map(|j| {
                    let s = sample(params, &src, temperature, seed::derive(seed, &[i as u64, j as u64]), max_len)?;
                    Ok(s.tokens(&params.vocab))
                })
                .collect::<Result<Vec<_>, PolicyError>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(out)
}

/// Fraction of examples with an exact match among their first `k` samples.
pub fn pass_at_k_from_samples(samples: &[Vec<Vec<Token>>], golds: &[Vec<Token>], k: usize) -> Result<f64, EvalError> {
    aligned(samples, golds)?;
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    if golds.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = samples.iter().zip(golds).filter(|(s, g)| s.iter().take(k).any(|y| y == *g)).count();
    Ok(hits as f64 / golds.len() as f64)
}

/// pass@k for each requested k from one shared draw of max(k) samples.
pub fn pass_at_ks(
    params: &PolicyParams,
    dataset: &Dataset,
    ks: &[usize],
    temperature: f64,
    seed: u64,
) -> Result<Vec<(usize, f64)>, EvalError> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(EvalError::InvalidK);
    }
    let max_k = *ks.iter().max().expect("non-empty");
    let samples = draw_samples(params, dataset, max_k, temperature, seed)?;
    let golds = dataset.targets();
    ks.iter().map(|&k| Ok((k, pass_at_k_from_samples(&samples, &golds, k)?))).collect()
}

pub fn pass_at_k(params: &PolicyParams, dataset: &Dataset, k: usize, temperature: f64, seed: u64) -> Result<f64, EvalError> {
    Ok(pass_at_ks(params, dataset, &[k], temperature, seed)?[0].1)
}

pub fn pass_at_k_csv(rows: &[(usize, f64)]) -> String {
    let mut out = String::from("k,accuracy\n");
    for (k, a) in rows {
        let _ = writeln!(out, "{k},{a:.6}");
    }
    out
}

pub type Trigram = [Token; 3];

/// Normalized frequencies of token trigrams in training targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrigramTable {
    pub freqs: BTreeMap<Trigram, f64>,
    pub total: usize,
}

impl TrigramTable {
    /// Frequency of `t`; zero when unseen.
    pub fn freq(&self, t: &Trigram) -> f64 {
        self.freqs.get(t).copied().unwrap_or(0.0)
    }
}

fn trigrams(seq: &[Token]) -> impl Iterator<Item = Trigram> + '_ {
    seq.windows(3).map(|w| [w[0].clone(), w[1].clone(), w[2].clone()])
}

pub fn build_trigram_table(targets: &[Vec<Token>]) -> TrigramTable {
    let mut counts: BTreeMap<Trigram, usize> = BTreeMap::new();
    let mut total = 0;
    for t in targets {
        for tri in trigrams(t) {
            *counts.entry(tri).or_default() += 1;
            total += 1;
        }
    }
    let freqs = counts.into_iter().map(|(k, c)| (k, c as f64 / total as f64)).collect();
    TrigramTable { freqs, total }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CopyingScore {
    /// Mean over scored predictions; 0 when none were scored.
    pub mean_freq: f64,
    pub n_scored: usize,
    pub n_skipped: usize,
}

/// Average training frequency of each incorrect prediction's trigrams,
/// ignoring trigrams that occur anywhere in its gold output. Predictions
/// left without trigrams are skipped and counted.
pub fn copying_score(preds: &[Vec<Token>], golds: &[Vec<Token>], table: &TrigramTable) -> Result<CopyingScore, EvalError> {
    aligned(preds, golds)?;
    let mut sum = 0.0;
    let mut n_scored = 0;
    let mut n_skipped = 0;
    for (index, (p, g)) in preds.iter().zip(golds).enumerate() {
        if p == g {
            return Err(EvalError::CorrectPrediction { index });
        }
        let in_gold: BTreeSet<Trigram> = trigrams(g).collect();
        let kept: Vec<f64> = trigrams(p).filter(|t| !in_gold.contains(t)).map(|t| table.freq(&t)).collect();
        if kept.is_empty() {
            n_skipped += 1;
        } else {
            sum += kept.iter().sum::<f64>() / kept.len() as f64;
            n_scored += 1;
        }
    }
    let mean_freq = if n_scored == 0 { 0.0 } else { sum / n_scored as f64 };
    Ok(CopyingScore { mean_freq, n_scored, n_skipped })
}

/// Copying scores of the incorrect predictions of several systems.
pub fn copying_comparison(
    systems: &[(String, Vec<PredictionRecord>)],
    table: &TrigramTable,
) -> Result<Vec<(String, CopyingScore)>, EvalError> {
    systems
        .iter()
        .map(|(name, records)| {
            let (preds, golds): (Vec<_>, Vec<_>) =
                records.iter().filter(|r| r.prediction != r.gold).map(|r| (r.prediction.clone(), r.gold.clone())).unzip();
            Ok((name.clone(), copying_score(&preds, &golds, table)?))
        })
        .collect()
}

pub fn copying_csv(rows: &[(String, CopyingScore)]) -> String {
    let mut out = String::from("system,mean_freq,n_scored,n_skipped\n");
    for (name, s) in rows {
        let _ = writeln!(out, "{name},{:.6},{},{}", s.mean_freq, s.n_scored, s.n_skipped);
    }
    out
}

/// Gold-length buckets 24–26, 27–30, 31–35 and 36+, preceded by an
/// underflow bucket for shorter outputs.
pub const BUCKETS: [(usize, Option<usize>); 5] = [(0, Some(23)), (24, Some(26)), (27, Some(30)), (31, Some(35)), (36, None)];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    pub label: String,
    pub count: usize,
    pub correct: usize,
    /// Exact match within the bucket; 0 for an empty bucket.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthBuckets {
    pub buckets: Vec<Bucket>,
}

impl LengthBuckets {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket,count,accuracy\n");
        for b in &self.buckets {
            let _ = writeln!(out, "{},{},{:.6}", b.label, b.count, b.accuracy);
        }
        out
    }
}

fn bucket_label(lo: usize, hi: Option<usize>) -> String {
    match (lo, hi) {
        (0, Some(h)) => format!("<{}", h + 1),
        (l, Some(h)) => format!("{l}-{h}"),
        (l, None) => format!("{l}+"),
    }
}

pub fn bucket_of(len: usize) -> usize {
    BUCKETS.iter().position(|(lo, hi)| len >= *lo && hi.map_or(true, |h| len <= h)).expect("buckets cover all lengths")
}

pub fn length_bucket_report(preds: &[Vec<Token>], golds: &[Vec<Token>]) -> Result<LengthBuckets, EvalError> {
    aligned(preds, golds)?;
    let mut counts = [(0usize, 0usize); BUCKETS.len()];
    for (p, g) in preds.iter().zip(golds) {
        let b = bucket_of(g.len());
        counts[b].0 += 1;
        if p == g {
            counts[b].1 += 1;
        }
    }
    let buckets = BUCKETS
        .iter()
        .zip(counts)
        .map(|((lo, hi), (count, correct))| Bucket {
            label: bucket_label(*lo, *hi),
            count,
            correct,
            accuracy: if count == 0 { 0.0 } else { correct as f64 / count as f64 },
        })
        .collect();
    Ok(LengthBuckets { buckets })
}

/// One line of a `source<TAB>gold<TAB>prediction` dump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRecord {
    pub source: Vec<Token>,
    pub gold: Vec<Token>,
    pub prediction: Vec<Token>,
}

pub fn parse_prediction_dump(text: &str) -> Result<Vec<PredictionRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(EvalError::Dump { line: i + 1, msg: format!("expected 3 tab-separated fields, found {}", fields.len()) });
        }
        out.push(PredictionRecord {
            source: Token::seq(fields[0]),
            gold: Token::seq(fields[1]),
            prediction: Token::seq(fields[2]),
        });
    }
    if out.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(out)
}

pub fn prediction_dump(dataset: &Dataset, preds: &[Vec<Token>]) -> Result<String, EvalError> {
    aligned(preds, &dataset.examples)?;
    let mut out = String::new();
    for (e, p) in dataset.examples.iter().zip(preds) {
        let _ = writeln!(out, "{}\t{}\t{}", join(&e.source), join(&e.target), join(p));
    }
    Ok(out)
}
