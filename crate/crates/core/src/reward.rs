//! Outcome rewards for a predicted sequence against its gold sequence.

use serde::{Deserialize, Serialize};

use crate::abstraction::{extract_skeleton_lenient, FormalismDescriptor};
use crate::corpus::Token;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("invalid reward weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    #[default]
    Binary,
    Composite,
    PrimOnly,
    CompOnly,
}

impl std::str::FromStr for RewardMode {
    type Err = RewardError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(RewardMode::Binary),
            "composite" => Ok(RewardMode::Composite),
            "prim-only" => Ok(RewardMode::PrimOnly),
            "comp-only" => Ok(RewardMode::CompOnly),
            _ => Err(RewardError::InvalidWeights(format!("unknown reward mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    /// Primitive weight.
    pub lambda1: f64,
    /// Composition weight.
    pub lambda2: f64,
    /// Adds the exact-match term to the composite total. Without it a
    /// permuted-but-wrong output can tie an exact match.
    pub include_binary_term: bool,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { lambda1: 0.1, lambda2: 0.2, include_binary_term: true }
    }
}

impl RewardWeights {
    pub fn validate(&self, mode: RewardMode) -> Result<(), RewardError> {
        for (name, w) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(RewardError::InvalidWeights(format!("{name} must be finite and non-negative, got {w}")));
            }
        }
        if mode == RewardMode::Composite && self.lambda1 == 0.0 && self.lambda2 == 0.0 {
            return Err(RewardError::InvalidWeights("composite mode needs a non-zero weight".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub binary: f64,
    pub prim: f64,
    pub comp: f64,
    pub total: f64,
}

pub fn binary_reward(pred: &[Token], gold: &[Token]) -> f64 {
    if pred == gold {
        1.0
    } else {
        0.0
    }
}

/// Fraction of gold primitives present in the prediction (1 for an empty gold set).
pub fn primitive_reward(pred: &[Token], gold: &[Token], descriptor: &FormalismDescriptor) -> f64 {
    let gold_set = descriptor.extract_primitives(gold);
    if gold_set.is_empty() {
        return 1.0;
    }
    let pred_set = descriptor.extract_primitives(pred);
    pred_set.intersection_len(&gold_set) as f64 / gold_set.len() as f64
}

/// Position-wise skeleton agreement over the gold skeleton's length
/// (1 for an empty gold skeleton). Extra predicted positions are ignored.
pub fn composition_reward(pred: &[Token], gold: &[Token], descriptor: &FormalismDescriptor) -> f64 {
    let gold_sk = extract_skeleton_lenient(gold, descriptor);
    if gold_sk.is_empty() {
        return 1.0;
    }
    let pred_sk = extract_skeleton_lenient(pred, descriptor);
    let hits = gold_sk.tokens.iter().zip(&pred_sk.tokens).filter(|(g, p)| g == p).count();
    hits as f64 / gold_sk.len() as f64
}

pub fn composite_reward(
    pred: &[Token],
    gold: &[Token],
    descriptor: &FormalismDescriptor,
    weights: &RewardWeights,
    mode: RewardMode,
) -> Result<RewardBreakdown, RewardError> {
    weights.validate(mode)?;
    let binary = binary_reward(pred, gold);
    // exact matches score 1 on both components without parsing
    let (prim, comp) = if binary == 1.0 {
        (1.0, 1.0)
    } else {
        (primitive_reward(pred, gold, descriptor), composition_reward(pred, gold, descriptor))
    };
    let total = match mode {
        RewardMode::Binary => binary,
        RewardMode::PrimOnly => prim,
        RewardMode::CompOnly => comp,
        RewardMode::Composite => {
            let weighted = weights.lambda1 * prim + weights.lambda2 * comp;
            if weights.include_binary_term {
                binary + weighted
            } else {
                weighted
            }
        }
    };
    Ok(RewardBreakdown { binary, prim, comp, total })
}

/// A validated reward configuration bound to a descriptor.
#[derive(Debug, Clone)]
pub struct Rewarder {
    pub descriptor: FormalismDescriptor,
    pub weights: RewardWeights,
    pub mode: RewardMode,
}

impl Rewarder {
    pub fn new(descriptor: FormalismDescriptor, weights: RewardWeights, mode: RewardMode) -> Result<Self, RewardError> {
        weights.validate(mode)?;
        Ok(Rewarder { descriptor, weights, mode })
    }

    pub fn score(&self, pred: &[Token], gold: &[Token]) -> RewardBreakdown {
        composite_reward(pred, gold, &self.descriptor, &self.weights, self.mode).expect("weights validated on construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Formalism;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn scan() -> FormalismDescriptor {
        FormalismDescriptor::builtin(Formalism::Scan)
    }

    fn t(s: &str) -> Vec<Token> {
        Token::seq(s)
    }

    // Independent oracles: plain string sets and a hand-rolled first-occurrence map.
    fn oracle_prim(pred: &str, gold: &str) -> f64 {
        let p: BTreeSet<&str> = pred.split_whitespace().collect();
        let g: BTreeSet<&str> = gold.split_whitespace().collect();
        if g.is_empty() {
            return 1.0;
        }
        p.intersection(&g).count() as f64 / g.len() as f64
    }

    fn oracle_skeleton(seq: &str) -> Vec<usize> {
        let mut seen: Vec<&str> = Vec::new();
        seq.split_whitespace()
            .map(|w| match seen.iter().position(|s| *s == w) {
                Some(i) => i + 1,
                None => {
                    seen.push(w);
                    seen.len()
                }
            })
            .collect()
    }

    fn oracle_comp(pred: &str, gold: &str) -> f64 {
        let (p, g) = (oracle_skeleton(pred), oracle_skeleton(gold));
        if g.is_empty() {
            return 1.0;
        }
        g.iter().enumerate().filter(|(i, v)| p.get(*i) == Some(v)).count() as f64 / g.len() as f64
    }

    #[test]
    fn binary_cases() {
        assert_eq!(binary_reward(&t("JUMP JUMP LTURN"), &t("JUMP JUMP LTURN")), 1.0);
        assert_eq!(binary_reward(&t("JUMP LTURN LTURN"), &t("JUMP JUMP LTURN")), 0.0);
        assert_eq!(binary_reward(&t("JUMP JUMP LTURN WALK"), &t("JUMP JUMP LTURN")), 0.0);
    }

    #[test]
    fn primitive_cases_match_oracle() {
        for (pred, gold, expected) in
            [("JUMP LTURN", "JUMP JUMP LTURN", 1.0), ("JUMP JUMP", "JUMP JUMP LTURN", 0.5), ("", "JUMP", 0.0)]
        {
            assert_eq!(oracle_prim(pred, gold), expected);
            let got = primitive_reward(&t(pred), &t(gold), &scan());
            assert!((got - expected).abs() < 1e-9, "{pred} vs {gold}: {got}");
        }
    }

    #[test]
    fn composition_cases_match_oracle() {
        for (pred, gold, expected) in [
            ("JUMP JUMP LTURN", "RUN RUN LOOK", 1.0),
            ("JUMP LTURN", "JUMP JUMP LTURN", 1.0 / 3.0),
            ("JUMP JUMP LTURN", "JUMP JUMP LTURN", 1.0),
        ] {
            assert!((oracle_comp(pred, gold) - expected).abs() < 1e-12);
            let got = composition_reward(&t(pred), &t(gold), &scan());
            assert!((got - expected).abs() < 1e-9, "{pred} vs {gold}: {got}");
        }
    }

    #[test]
    fn empty_gold_is_vacuous() {
        assert_eq!(primitive_reward(&t("JUMP"), &[], &scan()), 1.0);
        assert_eq!(composition_reward(&t("JUMP"), &[], &scan()), 1.0);
    }

    #[test]
    fn composite_totals() {
        let g = t("JUMP JUMP LTURN");
        let literal = RewardWeights { include_binary_term: false, ..Default::default() };
        let r = composite_reward(&g, &g, &scan(), &literal, RewardMode::Composite).unwrap();
        assert!((r.total - 0.3).abs() < 1e-9);
        let r = composite_reward(&g, &g, &scan(), &RewardWeights::default(), RewardMode::Composite).unwrap();
        assert!((r.total - 1.3).abs() < 1e-9);
        let p = t("JUMP LTURN");
        for mode in [RewardMode::Binary, RewardMode::PrimOnly, RewardMode::CompOnly] {
            let r = composite_reward(&p, &g, &scan(), &RewardWeights::default(), mode).unwrap();
            let expect = match mode {
                RewardMode::Binary => r.binary,
                RewardMode::PrimOnly => r.prim,
                _ => r.comp,
            };
            assert_eq!(r.total, expect);
        }
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let zero = RewardWeights { lambda1: 0.0, lambda2: 0.0, include_binary_term: true };
        let g = t("JUMP");
        assert!(composite_reward(&g, &g, &scan(), &zero, RewardMode::Composite).is_err());
        assert!(composite_reward(&g, &g, &scan(), &zero, RewardMode::Binary).is_ok());
        let neg = RewardWeights { lambda1: -0.1, ..Default::default() };
        assert!(neg.validate(RewardMode::Binary).is_err());
        assert!("prim-only".parse::<RewardMode>().unwrap() == RewardMode::PrimOnly);
    }

    const ACTIONS: [&str; 6] = ["WALK", "RUN", "JUMP", "LOOK", "LTURN", "RTURN"];

    fn seq() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(0..ACTIONS.len(), 0..9)
    }

    fn render(ids: &[usize], names: &[&str]) -> String {
        ids.iter().map(|&i| names[i]).collect::<Vec<_>>().join(" ")
    }

    proptest! {
        #[test]
        fn rewards_agree_with_oracles_and_bounds(p in seq(), g in seq()) {
            let (ps, gs) = (render(&p, &ACTIONS), render(&g, &ACTIONS));
            let prim = primitive_reward(&t(&ps), &t(&gs), &scan());
            let comp = composition_reward(&t(&ps), &t(&gs), &scan());
            prop_assert!((prim - oracle_prim(&ps, &gs)).abs() < 1e-12);
            prop_assert!((comp - oracle_comp(&ps, &gs)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&prim) && (0.0..=1.0).contains(&comp));
        }

        #[test]
        fn exact_match_dominates(g in seq()) {
            let gs = t(&render(&g, &ACTIONS));
            prop_assert_eq!(binary_reward(&gs, &gs), 1.0);
            prop_assert_eq!(primitive_reward(&gs, &gs, &scan()), 1.0);
            prop_assert_eq!(composition_reward(&gs, &gs, &scan()), 1.0);
        }

        #[test]
        fn primitive_reward_ignores_order_and_duplication(p in seq(), g in seq(), extra in 0usize..3) {
            let mut shuffled = p.clone();
            shuffled.reverse();
            if let Some(&first) = p.first() { shuffled.extend(std::iter::repeat(first).take(extra)); }
            let gs = t(&render(&g, &ACTIONS));
            prop_assert_eq!(
                primitive_reward(&t(&render(&p, &ACTIONS)), &gs, &scan()),
                primitive_reward(&t(&render(&shuffled, &ACTIONS)), &gs, &scan())
            );
        }

        #[test]
        fn composition_reward_ignores_renaming(p in seq(), g in seq(), perm in Just(ACTIONS).prop_shuffle()) {
            let gs = t(&render(&g, &ACTIONS));
            prop_assert_eq!(
                composition_reward(&t(&render(&p, &ACTIONS)), &gs, &scan()),
                composition_reward(&t(&render(&p, &perm)), &gs, &scan())
            );
        }
    }
}
