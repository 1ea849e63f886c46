//! Primitive sets and compositional skeletons of target sequences.
//!
//! A skeleton abstracts every primitive into a head label (`V`, `N`, `R`, or
//! a role label such as `V.agent`) applied to placeholder variables, e.g.
//! `JUMP JUMP LTURN` becomes `V(x1) V(x1) V(x2)`. Variables are numbered by
//! first occurrence, so skeletons are invariant under consistent renaming of
//! primitives and of the concrete variable names in a logical form.

mod descriptor;
mod parse;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

pub use descriptor::{FormalismDescriptor, Syntax};

use crate::corpus::Token;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AbstractionError {
    #[error("descriptor line {line}: {msg}")]
    Descriptor { line: usize, msg: String },
    #[error("cannot read descriptor {0}")]
    Io(String),
    #[error("token {token:?} matches rules in several sections: {classes:?}")]
    Ambiguous { token: String, classes: Vec<String> },
    #[error("malformed logical form at token {position}: {reason}")]
    Malformed { position: usize, reason: String },
    #[error("cannot parse skeleton {0:?}")]
    SkeletonSyntax(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PrimitiveCategory {
    Action,
    Entity,
    Relation,
}

impl PrimitiveCategory {
    fn default_head(self) -> &'static str {
        match self {
            PrimitiveCategory::Action => "V",
            PrimitiveCategory::Entity => "N",
            PrimitiveCategory::Relation => "R",
        }
    }
}

impl fmt::Display for PrimitiveCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrimitiveCategory::Action => "action",
            PrimitiveCategory::Entity => "entity",
            PrimitiveCategory::Relation => "relation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenClass {
    Action,
    Entity,
    Relation,
    Structural,
}

impl TokenClass {
    pub fn category(self) -> Option<PrimitiveCategory> {
        match self {
            TokenClass::Action => Some(PrimitiveCategory::Action),
            TokenClass::Entity => Some(PrimitiveCategory::Entity),
            TokenClass::Relation => Some(PrimitiveCategory::Relation),
            TokenClass::Structural => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Primitive {
    pub category: PrimitiveCategory,
    pub name: String,
}

impl Primitive {
    pub fn new(category: PrimitiveCategory, name: impl Into<String>) -> Self {
        Primitive { category, name: name.into() }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.category, self.name)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrimitiveSet(BTreeSet<Primitive>);

impl PrimitiveSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, p: &Primitive) -> bool {
        self.0.contains(p)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Primitive> {
        self.0.iter()
    }

    pub fn intersection_len(&self, other: &PrimitiveSet) -> usize {
        self.0.intersection(&other.0).count()
    }
}

impl IntoIterator for PrimitiveSet {
    type Item = Primitive;
    type IntoIter = std::collections::btree_set::IntoIter<Primitive>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

impl FromIterator<Primitive> for PrimitiveSet {
    fn from_iter<I: IntoIterator<Item = Primitive>>(iter: I) -> Self {
        PrimitiveSet(iter.into_iter().collect())
    }
}

/// Head label of the fixed separator token placed between predicates.
pub const SEPARATOR: &str = "∧";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SkeletonToken {
    pub head: String,
    /// 1-based variable indices.
    pub args: Vec<u32>,
}

impl SkeletonToken {
    pub fn new(head: impl Into<String>, args: Vec<u32>) -> Self {
        SkeletonToken { head: head.into(), args }
    }

    pub fn separator() -> Self {
        SkeletonToken { head: SEPARATOR.to_owned(), args: Vec::new() }
    }

    pub fn is_separator(&self) -> bool {
        self.head == SEPARATOR
    }
}

impl fmt::Display for SkeletonToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.head)?;
        if !self.is_separator() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "x{a}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Skeleton {
    pub tokens: Vec<SkeletonToken>,
}

impl Skeleton {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Renumbers variables by order of first occurrence.
    pub fn renumbered(&self) -> Skeleton {
        let mut map: Vec<(u32, u32)> = Vec::new();
        let tokens = self
            .tokens
            .iter()
            .map(|t| {
                let args = t
                    .args
                    .iter()
                    .map(|a| match map.iter().find(|(from, _)| from == a) {
                        Some((_, to)) => *to,
                        None => {
                            let to = map.len() as u32 + 1;
                            map.push((*a, to));
                            to
                        }
                    })
                    .collect();
                SkeletonToken { head: t.head.clone(), args }
            })
            .collect();
        Skeleton { tokens }
    }
}

impl fmt::Display for Skeleton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for Skeleton {
    type Err = AbstractionError;

    /// Parses the display form, e.g. `N(x4) ∧ N(x1) ∧ V.agent(x2, x1)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AbstractionError::SkeletonSyntax(s.to_owned());
        let mut tokens = Vec::new();
        let mut rest = s.trim();
        while !rest.is_empty() {
            if let Some(r) = rest.strip_prefix(SEPARATOR) {
                tokens.push(SkeletonToken::separator());
                rest = r.trim_start();
                continue;
            }
            let open = rest.find('(').ok_or_else(bad)?;
            let close = rest.find(')').ok_or_else(bad)?;
            if close < open {
                return Err(bad());
            }
            let head = rest[..open].trim();
            if head.is_empty() || head.contains(char::is_whitespace) {
                return Err(bad());
            }
            let inner = rest[open + 1..close].trim();
            let args = if inner.is_empty() {
                Vec::new()
            } else {
                inner
                    .split(',')
                    .map(|a| a.trim().strip_prefix('x').and_then(|n| n.parse::<u32>().ok()).filter(|n| *n >= 1))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(bad)?
            };
            tokens.push(SkeletonToken::new(head, args));
            rest = rest[close + 1..].trim_start();
        }
        Ok(Skeleton { tokens })
    }
}

/// Classifies a token under `descriptor`; unmatched tokens are structural
/// unless the descriptor declares another fallback.
pub fn classify_token(token: &str, descriptor: &FormalismDescriptor) -> TokenClass {
    descriptor.class_of(token).public()
}

/// The set of (category, name) primitives in `target`; order and repetition are ignored.
pub fn extract_primitives(target: &[Token], descriptor: &FormalismDescriptor) -> PrimitiveSet {
    descriptor.extract_primitives(target)
}

/// Strict skeleton extraction for gold outputs; reports the position of
/// malformed logical-form spans.
pub fn extract_skeleton(target: &[Token], descriptor: &FormalismDescriptor) -> Result<Skeleton, AbstractionError> {
    parse::skeleton(target, descriptor, true)
}

/// Skeleton extraction that never fails: unparseable spans are dropped.
/// Used to score sampled predictions.
pub fn extract_skeleton_lenient(target: &[Token], descriptor: &FormalismDescriptor) -> Skeleton {
    parse::skeleton(target, descriptor, false).expect("lenient parsing does not fail")
}

impl FormalismDescriptor {
    pub fn classify(&self, token: &str) -> TokenClass {
        classify_token(token, self)
    }

    pub fn extract_primitives(&self, target: &[Token]) -> PrimitiveSet {
        target
            .iter()
            .filter_map(|t| self.classify(t).category().map(|c| Primitive::new(c, t.as_str())))
            .collect()
    }
}
