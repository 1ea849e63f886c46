//! Fixtures shared by unit tests.

use rand::Rng;

use crate::corpus::{Dataset, Example, Formalism, Token};
use crate::policy::{init_policy, ArchConfig, PolicyParams, SourceEncoding, Vocab};
use crate::seed;

/// Ten entries including the three reserved tokens.
pub fn toy_vocab() -> Vocab {
    Vocab::new(Token::seq("walk jump twice and WALK JUMP LTURN")).unwrap()
}

pub fn toy_arch(encoding: SourceEncoding) -> ArchConfig {
    ArchConfig {
        embedding_dim: 4,
        hidden_dim: 6,
        context_window: 2,
        max_output_len: 8,
        max_source_len: 5,
        source_encoding: encoding,
    }
}

/// Initialized parameters plus noise on every coordinate, so the output
/// layer is no longer zero.
pub fn random_params(encoding: SourceEncoding, seed: u64) -> PolicyParams {
    let mut p = init_policy(&toy_vocab(), &toy_arch(encoding), seed).unwrap();
    let mut rng = seed::rng(seed ^ 0xabcd);
    for v in &mut p.values {
        *v += rng.gen_range(-0.5..0.5);
    }
    p
}

pub fn ids(vocab: &Vocab, text: &str) -> Vec<usize> {
    vocab.encode(&Token::seq(text)).unwrap()
}

/// Largest relative error between `analytic` and central finite differences
/// of `f` (step 1e-5) over `per_block` random coordinates in each of the
/// given index ranges.
pub fn max_fd_error(
    params: &PolicyParams,
    f: impl Fn(&PolicyParams) -> f64,
    analytic: &[f64],
    blocks: &[std::ops::Range<usize>],
    per_block: usize,
    seed: u64,
) -> f64 {
    const STEP: f64 = 1e-5;
    let mut rng = seed::rng(seed);
    let mut worst: f64 = 0.0;
    for block in blocks {
        for _ in 0..per_block {
            let i = rng.gen_range(block.clone());
            let mut plus = params.clone();
            plus.values[i] += STEP;
            let mut minus = params.clone();
            minus.values[i] -= STEP;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * STEP);
            let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-5);
            worst = worst.max(err);
        }
    }
    worst
}

/// Index ranges of the embedding, W1, b1, W2 and b2 blocks.
pub fn param_blocks(p: &PolicyParams) -> Vec<std::ops::Range<usize>> {
    let v = p.vocab.len();
    let a = &p.arch;
    let e = a.embedding_dim;
    let h = a.hidden_dim;
    let src = match a.source_encoding {
        SourceEncoding::Positional => a.max_source_len * e,
        SourceEncoding::Mean => e,
    };
    let input = src + a.context_window * e;
    let sizes = [v * e, input * h, h, h * v, v];
    let mut out = Vec::new();
    let mut at = 0;
    for s in sizes {
        out.push(at..at + s);
        at += s;
    }
    assert_eq!(at, p.values.len());
    out
}

/// The first `n` (at most 10) commands of a tiny SCAN-like task.
pub fn toy_dataset(n: usize) -> Dataset {
    let pairs = [
        ("walk", "WALK"),
        ("jump", "JUMP"),
        ("walk twice", "WALK WALK"),
        ("jump twice", "JUMP JUMP"),
        ("walk and jump", "WALK JUMP"),
        ("jump and walk", "JUMP WALK"),
        ("walk twice and jump", "WALK WALK JUMP"),
        ("jump and walk twice", "JUMP WALK WALK"),
        ("jump twice and walk", "JUMP JUMP WALK"),
        ("walk and jump twice", "WALK JUMP JUMP"),
    ];
    let ex = pairs[..n].iter().map(|(s, t)| Example::parse(s, t, Formalism::Scan).unwrap()).collect();
    Dataset::new(ex, "train", Formalism::Scan)
}
