use super::*;
use crate::testutil::{ids, max_fd_error, param_blocks, random_params, toy_arch, toy_vocab};
use proptest::prelude::*;

struct LogLik {
    seqs: Vec<Sequence>,
    scale: f64,
}

impl Objective for LogLik {
    fn sequences(&self) -> &[Sequence] {
        &self.seqs
    }

    fn evaluate(&self, logprobs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let value = self.scale * logprobs.iter().flatten().sum::<f64>();
        let grads = logprobs.iter().map(|l| vec![self.scale; l.len()]).collect();
        (value, grads)
    }
}

struct Constant(Vec<Sequence>);

impl Objective for Constant {
    fn sequences(&self) -> &[Sequence] {
        &self.0
    }

    fn evaluate(&self, logprobs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        (3.5, logprobs.iter().map(|l| vec![0.0; l.len()]).collect())
    }
}

fn toy_sequences(vocab: &Vocab) -> Vec<Sequence> {
    let pairs = [
        ("jump twice", "JUMP JUMP"),
        ("walk and jump", "WALK JUMP"),
        ("walk", "WALK"),
        ("", "LTURN"),
        ("jump twice and walk twice", "JUMP JUMP WALK WALK"),
    ];
    pairs
        .iter()
        .map(|(s, t)| {
            let mut output = ids(vocab, t);
            output.push(EOS);
            Sequence { source: ids(vocab, s), output }
        })
        .collect()
}

#[test]
fn vocab_reserves_special_tokens() {
    let v = toy_vocab();
    assert_eq!(v.len(), 10);
    assert_eq!(v.tokens()[PAD].as_str(), "<pad>");
    assert_eq!(v.tokens()[BOS].as_str(), "<bos>");
    assert_eq!(v.tokens()[EOS].as_str(), "<eos>");
    let dup = Vocab::new(Token::seq("a b a")).unwrap();
    assert_eq!(dup.len(), 5);
    assert!(matches!(Vocab::new(Token::seq("a <eos>")), Err(PolicyError::ReservedToken(_))));
    let body = ids(&v, "WALK JUMP");
    let mut out = body.clone();
    out.push(EOS);
    assert_eq!(v.decode_output(&out), Token::seq("WALK JUMP"));
    assert_eq!(v.decode_output(&body), Token::seq("WALK JUMP"));
}

#[test]
fn fresh_policy_is_uniform() {
    let v = toy_vocab();
    for enc in [SourceEncoding::Positional, SourceEncoding::Mean] {
        let p = init_policy(&v, &toy_arch(enc), 3).unwrap();
        let lp = log_probs(&p, &Token::seq("jump twice"), &Token::seq("JUMP JUMP")).unwrap();
        assert_eq!(lp.len(), 3);
        for l in lp {
            assert!((l + 10f64.ln()).abs() < 1e-12);
        }
        let dist = next_token_log_probs(&p, &ids(&v, "walk"), &ids(&v, "WALK")).unwrap();
        for l in dist {
            assert!((l.exp() - 0.1).abs() < 1e-12);
        }
    }
}

#[test]
fn init_is_seeded() {
    let v = toy_vocab();
    let arch = toy_arch(SourceEncoding::Positional);
    assert_eq!(init_policy(&v, &arch, 5).unwrap(), init_policy(&v, &arch, 5).unwrap());
    assert_ne!(init_policy(&v, &arch, 5).unwrap(), init_policy(&v, &arch, 6).unwrap());
}

#[test]
fn arch_limits_are_enforced() {
    let v = toy_vocab();
    let huge = ArchConfig { embedding_dim: 1000, hidden_dim: 10_000, ..toy_arch(SourceEncoding::Positional) };
    assert!(matches!(init_policy(&v, &huge, 0), Err(PolicyError::OverBudget { .. })));
    let zero = ArchConfig { hidden_dim: 0, ..toy_arch(SourceEncoding::Positional) };
    assert!(matches!(init_policy(&v, &zero, 0), Err(PolicyError::InvalidArch(_))));
    let p = init_policy(&v, &toy_arch(SourceEncoding::Positional), 0).unwrap();
    assert_eq!(p.len(), p.arch.param_count(v.len()));
    let long = ids(&v, "walk walk walk walk walk walk");
    assert!(matches!(sample(&p, &long, 1.0, 0, 4), Err(PolicyError::SourceTooLong { len: 6, max: 5 })));
}

#[test]
fn out_of_vocabulary_is_an_error() {
    let p = random_params(SourceEncoding::Positional, 1);
    let err = log_probs(&p, &Token::seq("crawl"), &Token::seq("WALK")).unwrap_err();
    assert_eq!(err, PolicyError::OutOfVocabulary("crawl".into()));
}

#[test]
fn all_mass_on_eos_gives_empty_body() {
    let mut p = random_params(SourceEncoding::Positional, 2);
    let b2 = p.values.len() - p.vocab.len();
    p.values[b2 + EOS] = 100.0;
    let r = sample(&p, &ids(&p.vocab, "walk"), 0.6, 9, 8).unwrap();
    assert_eq!(r.ids, vec![EOS]);
    assert!(r.tokens(&p.vocab).is_empty());
    assert!(!r.truncated);
}

#[test]
fn truncation_is_flagged() {
    let mut p = random_params(SourceEncoding::Positional, 2);
    let b2 = p.values.len() - p.vocab.len();
    let walk = p.vocab.id(&Token::new("WALK").unwrap()).unwrap();
    p.values[b2 + walk] = 100.0;
    let r = sample(&p, &[], 1.0, 0, 5).unwrap();
    assert!(r.truncated);
    assert_eq!(r.ids, vec![walk; 5]);
    assert_eq!(r.logprobs.len(), 5);
}

#[test]
fn greedy_matches_argmax_decoding() {
    let p = random_params(SourceEncoding::Positional, 4);
    let src = ids(&p.vocab, "jump and walk");
    let mut prefix = Vec::new();
    while prefix.len() < 8 {
        let dist = next_token_log_probs(&p, &src, &prefix).unwrap();
        let best = (0..dist.len()).max_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap()).unwrap();
        prefix.push(best);
        if best == EOS {
            break;
        }
    }
    assert_eq!(sample(&p, &src, 0.0, 123, 8).unwrap().ids, prefix);
    assert_eq!(sample(&p, &src, 0.0, 1, 8).unwrap().ids, prefix);
}

#[test]
fn sampling_is_deterministic_and_rejects_negative_temperature() {
    let p = random_params(SourceEncoding::Mean, 5);
    let src = ids(&p.vocab, "walk twice");
    assert_eq!(sample(&p, &src, 0.6, 77, 8).unwrap(), sample(&p, &src, 0.6, 77, 8).unwrap());
    let outs: std::collections::BTreeSet<Vec<usize>> =
        (0..20).map(|s| sample(&p, &src, 1.5, s, 8).unwrap().ids).collect();
    assert!(outs.len() > 1);
    assert_eq!(sample(&p, &src, -1.0, 0, 8).unwrap_err(), PolicyError::InvalidTemperature(-1.0));
}

#[test]
fn finite_difference_gradient_check() {
    for (k, enc) in [SourceEncoding::Positional, SourceEncoding::Mean, SourceEncoding::Positional].into_iter().enumerate() {
        let p = random_params(enc, 10 + k as u64);
        let obj = LogLik { seqs: toy_sequences(&p.vocab), scale: 1.0 };
        let (value, grad) = objective_gradient(&p, &obj).unwrap();
        assert!((value - objective_value(&p, &obj).unwrap()).abs() < 1e-12);
        let f = |q: &PolicyParams| objective_value(q, &obj).unwrap();
        let err = max_fd_error(&p, f, &grad, &param_blocks(&p), 20, k as u64);
        assert!(err < 1e-4, "relative error {err} ({enc:?})");
    }
}

#[test]
fn constant_objective_has_zero_gradient() {
    let p = random_params(SourceEncoding::Positional, 11);
    let (value, grad) = objective_gradient(&p, &Constant(toy_sequences(&p.vocab))).unwrap();
    assert_eq!(value, 3.5);
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn gradient_is_linear_in_the_objective() {
    let p = random_params(SourceEncoding::Positional, 12);
    let seqs = toy_sequences(&p.vocab);
    let (_, g1) = objective_gradient(&p, &LogLik { seqs: seqs.clone(), scale: 1.0 }).unwrap();
    let (_, g3) = objective_gradient(&p, &LogLik { seqs, scale: -2.5 }).unwrap();
    for (a, b) in g1.iter().zip(&g3) {
        assert!((b - -2.5 * a).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn gradient_does_not_depend_on_worker_count() {
    let p = random_params(SourceEncoding::Positional, 13);
    let mut seqs = Vec::new();
    for _ in 0..5 {
        seqs.extend(toy_sequences(&p.vocab));
    }
    let obj = LogLik { seqs, scale: 1.0 };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| objective_gradient(&p, &obj).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn checkpoint_round_trip() {
    let p = random_params(SourceEncoding::Mean, 14);
    let mut bytes = Vec::new();
    write_checkpoint(&p, &mut bytes).unwrap();
    let q = read_checkpoint(bytes.as_slice()).unwrap();
    assert_eq!(p, q);
    let mut again = Vec::new();
    write_checkpoint(&q, &mut again).unwrap();
    assert_eq!(bytes, again);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    save_checkpoint(&p, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), p);

    assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    assert!(read_checkpoint(&b"garbage\n"[..]).is_err());
}

proptest! {
    #[test]
    fn sampled_log_probs_match_evaluation(seed in 0u64..1000, t in 0usize..5, src in prop::collection::vec(3usize..10, 0..5)) {
        let temps = [0.0, 0.3, 0.6, 1.0, 2.0];
        let p = random_params(SourceEncoding::Positional, seed % 7);
        let r = sample(&p, &src, temps[t], seed, 8).unwrap();
        prop_assert_eq!(r.ids.len(), r.logprobs.len());
        prop_assert_eq!(r.truncated, r.ids.last() != Some(&EOS));
        let eval = sequence_log_probs(&p, &src, &r.ids).unwrap();
        for (a, b) in r.logprobs.iter().zip(&eval) {
            prop_assert!(*a <= 0.0);
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn next_token_distributions_are_normalized(seed in 0u64..1000, prefix in prop::collection::vec(0usize..10, 0..6)) {
        let p = random_params(SourceEncoding::Mean, seed);
        let dist = next_token_log_probs(&p, &[3, 4], &prefix).unwrap();
        let total: f64 = dist.iter().map(|l| l.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(dist.iter().all(|l| *l <= 0.0));
    }
}
