//! Compositional datasets: tokens, examples, TSV ingestion and split checks.

mod mini_scan;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::abstraction::{AbstractionError, FormalismDescriptor, Primitive};

pub use mini_scan::{generate_mini_scan, interpret_command, template_id, MiniScanConfig, SplitRule};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no examples")]
    NoExamples,
    #[error("line {line}: expected exactly one tab separating source and target")]
    MissingTab { line: usize },
    #[error("line {line}: empty {side}")]
    EmptySide { line: usize, side: &'static str },
    #[error("invalid token {0:?}")]
    InvalidToken(String),
    #[error("unknown formalism {0:?}")]
    UnknownFormalism(String),
    #[error("formalism mismatch: {0} vs {1}")]
    FormalismMismatch(Formalism, Formalism),
    #[error("invalid mini-SCAN config: {0}")]
    InvalidConfig(String),
    #[error("split produced an empty {0} set")]
    EmptySplit(&'static str),
    #[error("cannot interpret command {command:?}: {reason}")]
    Interpret { command: String, reason: String },
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
}

/// A single whitespace-free, non-empty token. Compared by exact string equality.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self, CorpusError> {
        let text = text.into();
        if text.is_empty() || text.chars().any(char::is_whitespace) {
            return Err(CorpusError::InvalidToken(text));
        }
        Ok(Token(text))
    }

    /// Splits on whitespace. Never fails: split pieces are non-empty and whitespace-free.
    pub fn seq(text: &str) -> Vec<Token> {
        text.split_whitespace().map(|t| Token(t.to_owned())).collect()
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Token {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Token::new(s)
    }
}

impl From<Token> for String {
    fn from(t: Token) -> String {
        t.0
    }
}

impl std::ops::Deref for Token {
    type Target = str;
    fn deref(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Joins tokens with single spaces.
pub fn join(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formalism {
    Scan,
    Cogs,
    Funql,
    Sparql,
}

impl Formalism {
    pub const ALL: [Formalism; 4] = [Formalism::Scan, Formalism::Cogs, Formalism::Funql, Formalism::Sparql];

    pub fn name(self) -> &'static str {
        match self {
            Formalism::Scan => "scan",
            Formalism::Cogs => "cogs",
            Formalism::Funql => "funql",
            Formalism::Sparql => "sparql",
        }
    }
}

impl fmt::Display for Formalism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formalism {
    type Err = CorpusError;

    /// Accepts the formalism names and the benchmark that uses them
    /// (`geoquery` for FunQL, `cfq` for SPARQL).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "scan" => Ok(Formalism::Scan),
            "cogs" => Ok(Formalism::Cogs),
            "funql" | "geoquery" => Ok(Formalism::Funql),
            "sparql" | "cfq" => Ok(Formalism::Sparql),
            _ => Err(CorpusError::UnknownFormalism(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub source: Vec<Token>,
    pub target: Vec<Token>,
    pub formalism: Formalism,
}

impl Example {
    /// Builds an example from space-separated text. Both sides must be non-empty.
    pub fn parse(source: &str, target: &str, formalism: Formalism) -> Result<Self, CorpusError> {
        let source = Token::seq(source);
        let target = Token::seq(target);
        if source.is_empty() {
            return Err(CorpusError::EmptySide { line: 0, side: "source" });
        }
        if target.is_empty() {
            return Err(CorpusError::EmptySide { line: 0, side: "target" });
        }
        Ok(Example { source, target, formalism })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub source_vocab: BTreeSet<Token>,
    pub target_vocab: BTreeSet<Token>,
    pub split_name: String,
    pub formalism: Formalism,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, split_name: impl Into<String>, formalism: Formalism) -> Self {
        let source_vocab = examples.iter().flat_map(|e| e.source.iter().cloned()).collect();
        let target_vocab = examples.iter().flat_map(|e| e.target.iter().cloned()).collect();
        Dataset { examples, source_vocab, target_vocab, split_name: split_name.into(), formalism }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn targets(&self) -> Vec<Vec<Token>> {
        self.examples.iter().map(|e| e.target.clone()).collect()
    }

    /// Serializes to `source<TAB>target` lines in example order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            out.push_str(&join(&e.source));
            out.push('\t');
            out.push_str(&join(&e.target));
            out.push('\n');
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv())
            .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
    }
}

/// Parses TSV text: one `source<TAB>target` example per non-empty line.
pub fn parse_tsv(text: &str, formalism: Formalism, split_name: &str) -> Result<Dataset, CorpusError> {
    let mut examples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut parts = raw.split('\t');
        let (Some(source), Some(target), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(CorpusError::MissingTab { line });
        };
        let source = Token::seq(source);
        let target = Token::seq(target);
        if source.is_empty() {
            return Err(CorpusError::EmptySide { line, side: "source" });
        }
        if target.is_empty() {
            return Err(CorpusError::EmptySide { line, side: "target" });
        }
        examples.push(Example { source, target, formalism });
    }
    if examples.is_empty() {
        return Err(CorpusError::NoExamples);
    }
    Ok(Dataset::new(examples, split_name, formalism))
}

pub fn load_tsv(path: impl AsRef<Path>, formalism: Formalism) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    let split_name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_tsv(&text, formalism, &split_name)
}

/// Primitive and vocabulary coverage of a test split by its training split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageReport {
    pub test_primitives_missing_from_train: BTreeSet<Primitive>,
    pub target_vocab_oov: BTreeSet<Token>,
    pub ok: bool,
}

impl fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "coverage ok: {}", self.ok)?;
        let prims: Vec<String> = self.test_primitives_missing_from_train.iter().map(|p| p.to_string()).collect();
        writeln!(f, "test primitives missing from train: {}", prims.len())?;
        if !prims.is_empty() {
            writeln!(f, "  {}", prims.join(" "))?;
        }
        writeln!(f, "test target tokens missing from train vocab: {}", self.target_vocab_oov.len())?;
        if !self.target_vocab_oov.is_empty() {
            writeln!(f, "  {}", self.target_vocab_oov.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(" "))?;
        }
        Ok(())
    }
}

/// Checks that every primitive and target token of `test` was observed in `train`.
pub fn validate_split(
    train: &Dataset,
    test: &Dataset,
    descriptor: &FormalismDescriptor,
) -> Result<CoverageReport, CorpusError> {
    if train.formalism != test.formalism {
        return Err(CorpusError::FormalismMismatch(train.formalism, test.formalism));
    }
    if descriptor.formalism != train.formalism {
        return Err(CorpusError::FormalismMismatch(descriptor.formalism, train.formalism));
    }
    let primitives = |d: &Dataset| -> BTreeSet<Primitive> {
        d.examples.iter().flat_map(|e| descriptor.extract_primitives(&e.target).into_iter()).collect()
    };
    let train_prims = primitives(train);
    let missing: BTreeSet<Primitive> = primitives(test).difference(&train_prims).cloned().collect();
    let oov: BTreeSet<Token> = test.target_vocab.difference(&train.target_vocab).cloned().collect();
    let ok = missing.is_empty() && oov.is_empty();
    Ok(CoverageReport { test_primitives_missing_from_train: missing, target_vocab_oov: oov, ok })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::PrimitiveCategory;

    fn scan() -> FormalismDescriptor {
        FormalismDescriptor::builtin(Formalism::Scan)
    }

    fn ds(lines: &[(&str, &str)]) -> Dataset {
        let ex = lines.iter().map(|(s, t)| Example::parse(s, t, Formalism::Scan).unwrap()).collect();
        Dataset::new(ex, "t", Formalism::Scan)
    }

    #[test]
    fn parses_a_worked_example_line() {
        let d = parse_tsv("jump twice and turn left\tJUMP JUMP LTURN\n", Formalism::Scan, "x").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.examples[0].source.len(), 5);
        assert_eq!(d.examples[0].target.len(), 3);
        assert_eq!(d.target_vocab.len(), 2);
        assert_eq!(d.source_vocab.len(), 5);
    }

    #[test]
    fn empty_file_is_an_error() {
        let err = parse_tsv("", Formalism::Scan, "x").unwrap_err();
        assert_eq!(err.to_string(), "no examples");
        assert!(matches!(parse_tsv("\n  \n", Formalism::Scan, "x"), Err(CorpusError::NoExamples)));
    }

    #[test]
    fn missing_tab_names_line() {
        let err = parse_tsv("no tab here\n", Formalism::Scan, "x").unwrap_err();
        assert!(matches!(err, CorpusError::MissingTab { line: 1 }));
        assert!(err.to_string().contains("line 1"));
        let err = parse_tsv("a\tB\nb\tC\tD\n", Formalism::Scan, "x").unwrap_err();
        assert!(matches!(err, CorpusError::MissingTab { line: 2 }));
    }

    #[test]
    fn empty_target_is_an_error() {
        let err = parse_tsv("walk\t  \n", Formalism::Scan, "x").unwrap_err();
        assert!(matches!(err, CorpusError::EmptySide { line: 1, side: "target" }));
    }

    #[test]
    fn whitespace_runs_are_normalized() {
        let d = parse_tsv("walk   twice\tWALK  WALK\n", Formalism::Scan, "x").unwrap();
        assert_eq!(d.to_tsv(), "walk twice\tWALK WALK\n");
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(matches!(load_tsv("/nonexistent/x.tsv", Formalism::Scan), Err(CorpusError::Io { .. })));
    }

    #[test]
    fn token_rejects_whitespace_and_empty() {
        assert!(Token::new("").is_err());
        assert!(Token::new("a b").is_err());
        assert!(Token::new("JUMP").is_ok());
    }

    #[test]
    fn formalism_aliases() {
        assert_eq!("CFQ".parse::<Formalism>().unwrap(), Formalism::Sparql);
        assert_eq!("geoquery".parse::<Formalism>().unwrap(), Formalism::Funql);
        assert!("lisp".parse::<Formalism>().is_err());
    }

    #[test]
    fn subset_split_is_ok() {
        let train = ds(&[("jump", "JUMP"), ("turn left", "LTURN"), ("run", "RUN")]);
        let test = ds(&[("jump and turn left", "JUMP LTURN")]);
        let r = validate_split(&train, &test, &scan()).unwrap();
        assert!(r.ok);
        assert!(r.test_primitives_missing_from_train.is_empty());
    }

    #[test]
    fn missing_primitive_is_reported() {
        let train = ds(&[("jump", "JUMP"), ("turn left", "LTURN")]);
        let test = ds(&[("walk and jump", "WALK JUMP")]);
        let r = validate_split(&train, &test, &scan()).unwrap();
        assert!(!r.ok);
        let expected: BTreeSet<Primitive> = [Primitive::new(PrimitiveCategory::Action, "WALK")].into();
        assert_eq!(r.test_primitives_missing_from_train, expected);
        assert_eq!(r.target_vocab_oov.len(), 1);
    }

    #[test]
    fn identical_split_is_ok() {
        let d = ds(&[("jump twice", "JUMP JUMP"), ("walk", "WALK")]);
        assert!(validate_split(&d, &d, &scan()).unwrap().ok);
    }

    #[test]
    fn mismatched_formalisms_are_rejected() {
        let a = ds(&[("walk", "WALK")]);
        let mut b = a.clone();
        b.formalism = Formalism::Cogs;
        assert!(matches!(validate_split(&a, &b, &scan()), Err(CorpusError::FormalismMismatch(..))));
    }
}
