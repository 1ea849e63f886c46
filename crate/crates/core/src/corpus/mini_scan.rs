//! A small exhaustively enumerated SCAN-style task.
//!
//! Grammar: verbs `walk run jump look`, `turn left`, `turn right`; optional
//! modifier `twice`/`thrice`; clauses chained left-associatively by `and`
//! (`⟦a⟧ ⟦b⟧`) and `after` (`⟦b⟧ ⟦a⟧`). `max_depth` bounds the number of
//! clauses per command.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, Example, Formalism, Token};
use crate::seed;

const VERBS: [(&str, &str); 6] = [
    ("walk", "WALK"),
    ("run", "RUN"),
    ("jump", "JUMP"),
    ("look", "LOOK"),
    ("turn left", "LTURN"),
    ("turn right", "RTURN"),
];
const MODIFIERS: [(&str, usize); 3] = [("", 1), ("twice", 2), ("thrice", 3)];
const CONNECTIVES: [&str; 2] = ["and", "after"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitRule {
    /// Targets of length ≤ threshold go to train, the rest to test.
    ByTargetLength { threshold: usize },
    /// Commands whose [`template_id`] equals `template` go to test.
    ByHeldOutTemplate { template: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiniScanConfig {
    pub max_depth: usize,
    pub split_rule: SplitRule,
    pub seed: u64,
}

/// Depth 3 with threshold 7 puts 85.6% of the enumerated commands in train.
impl Default for MiniScanConfig {
    fn default() -> Self {
        MiniScanConfig { max_depth: 3, split_rule: SplitRule::ByTargetLength { threshold: 7 }, seed: 0 }
    }
}

impl MiniScanConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.max_depth == 0 {
            return Err(CorpusError::InvalidConfig("max_depth must be at least 1".into()));
        }
        if let SplitRule::ByTargetLength { threshold: 0 } = self.split_rule {
            return Err(CorpusError::InvalidConfig("threshold must be at least 1".into()));
        }
        Ok(())
    }
}

fn clauses() -> Vec<String> {
    let mut out = Vec::new();
    for (verb, _) in VERBS {
        for (modifier, _) in MODIFIERS {
            if modifier.is_empty() {
                out.push(verb.to_owned());
            } else {
                out.push(format!("{verb} {modifier}"));
            }
        }
    }
    out
}

/// All commands with 1..=max_depth clauses, in a fixed enumeration order.
fn enumerate(max_depth: usize) -> Vec<String> {
    let clauses = clauses();
    let mut all = Vec::new();
    let mut frontier = clauses.clone();
    for depth in 1..=max_depth {
        all.extend(frontier.iter().cloned());
        if depth == max_depth {
            break;
        }
        let mut next = Vec::with_capacity(frontier.len() * clauses.len() * CONNECTIVES.len());
        for prefix in &frontier {
            for conn in CONNECTIVES {
                for clause in &clauses {
                    next.push(format!("{prefix} {conn} {clause}"));
                }
            }
        }
        frontier = next;
    }
    all
}

fn interpret_clause(words: &[&str]) -> Result<Vec<&'static str>, String> {
    let (verb_len, action) = match words {
        ["turn", "left", ..] => (2, "LTURN"),
        ["turn", "right", ..] => (2, "RTURN"),
        [w, ..] => match VERBS.iter().find(|(v, _)| v == w) {
            Some((_, a)) => (1, *a),
            None => return Err(format!("unknown verb {w:?}")),
        },
        [] => return Err("empty clause".into()),
    };
    let reps = match &words[verb_len..] {
        [] => 1,
        [m] => match MODIFIERS.iter().find(|(name, _)| !name.is_empty() && name == m) {
            Some((_, r)) => *r,
            None => return Err(format!("unknown modifier {m:?}")),
        },
        _ => return Err("too many words in clause".into()),
    };
    Ok(vec![action; reps])
}

/// Executes a mini-SCAN command, e.g. `jump twice after run` → `RUN JUMP JUMP`.
pub fn interpret_command(source: &[Token]) -> Result<Vec<Token>, CorpusError> {
    let words: Vec<&str> = source.iter().map(|t| t.as_str()).collect();
    let fail = |reason: String| CorpusError::Interpret { command: words.join(" "), reason };
    let mut acc: Option<Vec<&'static str>> = None;
    let mut pending: Option<&str> = None;
    for part in words.split_inclusive(|w| CONNECTIVES.contains(w)) {
        let (clause, conn) = match part.split_last() {
            Some((last, rest)) if CONNECTIVES.contains(last) => (rest, Some(*last)),
            _ => (part, None),
        };
        let actions = interpret_clause(clause).map_err(&fail)?;
        acc = Some(match (acc, pending) {
            (None, _) => actions,
            (Some(mut prev), Some("and")) => {
                prev.extend(actions);
                prev
            }
            (Some(prev), Some(_)) => {
                let mut out = actions;
                out.extend(prev);
                out
            }
            (Some(_), None) => unreachable!("clauses are always separated by a connective"),
        });
        pending = conn;
    }
    if pending.is_some() {
        return Err(fail("dangling connective".into()));
    }
    let actions = acc.ok_or_else(|| fail("empty command".into()))?;
    Ok(actions.into_iter().map(|a| Token::new(a).expect("static action names are valid")).collect())
}

/// The command with every verb phrase replaced by `V`, e.g. `V twice after V`.
pub fn template_id(source: &[Token]) -> String {
    let mut out: Vec<&str> = Vec::new();
    let mut i = 0;
    while i < source.len() {
        match source[i].as_str() {
            "turn" if matches!(source.get(i + 1).map(|t| t.as_str()), Some("left" | "right")) => {
                out.push("V");
                i += 2;
            }
            w if VERBS.iter().any(|(v, _)| *v == w) => {
                out.push("V");
                i += 1;
            }
            w => {
                out.push(w);
                i += 1;
            }
        }
    }
    out.join(" ")
}

/// Enumerates every command up to `max_depth`, shuffles with `seed` and splits.
pub fn generate_mini_scan(config: &MiniScanConfig) -> Result<(Dataset, Dataset), CorpusError> {
    config.validate()?;
    let mut examples: Vec<Example> = enumerate(config.max_depth)
        .iter()
        .map(|cmd| {
            let source = Token::seq(cmd);
            let target = interpret_command(&source)?;
            Ok(Example { source, target, formalism: Formalism::Scan })
        })
        .collect::<Result<_, CorpusError>>()?;
    examples.shuffle(&mut seed::rng(config.seed));

    let (train, test): (Vec<Example>, Vec<Example>) = match &config.split_rule {
        SplitRule::ByTargetLength { threshold } => examples.into_iter().partition(|e| e.target.len() <= *threshold),
        SplitRule::ByHeldOutTemplate { template } => {
            examples.into_iter().partition(|e| template_id(&e.source) != *template)
        }
    };
    if train.is_empty() {
        return Err(CorpusError::EmptySplit("train"));
    }
    if test.is_empty() {
        return Err(CorpusError::EmptySplit("test"));
    }
    Ok((Dataset::new(train, "train", Formalism::Scan), Dataset::new(test, "test", Formalism::Scan)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::join;

    fn run(cmd: &str) -> String {
        join(&interpret_command(&Token::seq(cmd)).unwrap())
    }

    #[test]
    fn interprets_connectives() {
        assert_eq!(run("jump twice after run"), "RUN JUMP JUMP");
        assert_eq!(run("run and turn left"), "RUN LTURN");
        assert_eq!(run("jump twice and turn left"), "JUMP JUMP LTURN");
        assert_eq!(run("turn right thrice"), "RTURN RTURN RTURN");
        // left-associative: (walk and run) after look
        assert_eq!(run("walk and run after look"), "LOOK WALK RUN");
    }

    #[test]
    fn rejects_malformed_commands() {
        for bad in ["", "fly", "walk twice thrice", "walk and", "turn", "and walk"] {
            assert!(interpret_command(&Token::seq(bad)).is_err(), "{bad}");
        }
    }

    #[test]
    fn enumeration_sizes() {
        assert_eq!(enumerate(1).len(), 18);
        assert_eq!(enumerate(2).len(), 18 + 18 * 18 * 2);
        assert_eq!(enumerate(3).len(), 18 + 648 + 648 * 36);
    }

    #[test]
    fn template_ids() {
        assert_eq!(template_id(&Token::seq("turn left twice after jump")), "V twice after V");
        assert_eq!(template_id(&Token::seq("walk")), "V");
    }

    #[test]
    fn length_split_partitions_by_target_length() {
        let cfg = MiniScanConfig { max_depth: 2, split_rule: SplitRule::ByTargetLength { threshold: 4 }, seed: 3 };
        let (train, test) = generate_mini_scan(&cfg).unwrap();
        assert_eq!(train.len() + test.len(), 666);
        assert_eq!(train.len(), 450);
        assert!(train.examples.iter().all(|e| e.target.len() <= 4));
        assert!(test.examples.iter().all(|e| e.target.len() > 4));
    }

    #[test]
    fn template_split_holds_out_template() {
        let rule = SplitRule::ByHeldOutTemplate { template: "V twice after V".into() };
        let (train, test) = generate_mini_scan(&MiniScanConfig { max_depth: 2, split_rule: rule, seed: 1 }).unwrap();
        assert_eq!(test.len(), 36);
        assert!(train.examples.iter().all(|e| template_id(&e.source) != "V twice after V"));
    }

    #[test]
    fn empty_split_is_an_error() {
        let cfg = MiniScanConfig { max_depth: 2, split_rule: SplitRule::ByTargetLength { threshold: 6 }, seed: 0 };
        assert!(matches!(generate_mini_scan(&cfg), Err(CorpusError::EmptySplit("test"))));
        let rule = SplitRule::ByHeldOutTemplate { template: "nope".into() };
        assert!(generate_mini_scan(&MiniScanConfig { max_depth: 1, split_rule: rule, seed: 0 }).is_err());
        let bad = MiniScanConfig { max_depth: 0, ..Default::default() };
        assert!(matches!(generate_mini_scan(&bad), Err(CorpusError::InvalidConfig(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = MiniScanConfig::default();
        let (a, b) = generate_mini_scan(&cfg).unwrap();
        let (c, d) = generate_mini_scan(&cfg).unwrap();
        assert_eq!(a.to_tsv(), c.to_tsv());
        assert_eq!(b.to_tsv(), d.to_tsv());
        let other = generate_mini_scan(&MiniScanConfig { seed: 99, ..cfg }).unwrap().0;
        assert_ne!(a.to_tsv(), other.to_tsv());
    }

    #[test]
    fn default_split_keeps_most_commands_in_train() {
        let (train, test) = generate_mini_scan(&MiniScanConfig::default()).unwrap();
        let frac = train.len() as f64 / (train.len() + test.len()) as f64;
        assert!((0.75..0.9).contains(&frac), "{frac}");
        assert!(test.examples.iter().all(|e| e.target.len() > 7));
    }

    #[test]
    fn every_generated_example_reinterprets() {
        let cfg = MiniScanConfig { max_depth: 3, split_rule: SplitRule::ByTargetLength { threshold: 7 }, seed: 5 };
        let (train, test) = generate_mini_scan(&cfg).unwrap();
        for e in train.examples.iter().chain(&test.examples) {
            assert_eq!(interpret_command(&e.source).unwrap(), e.target);
        }
    }
}
