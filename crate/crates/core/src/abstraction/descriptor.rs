//! Formalism descriptor files (`*.fd`).
//!
//! ```text
//! # comment
//! formalism = sparql
//! syntax = triples
//!
//! [heads]
//! entity = N
//!
//! [entities]
//! exact:TOKEN [TOKEN ...]
//! prefix:STR
//! pattern:REGEX
//! ```
//!
//! Rule sections: `actions`, `entities`, `relations`, `structural`,
//! `variables`, `separators`. Key/value sections: `heads`, `arity`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use regex::Regex;

use super::{AbstractionError, PrimitiveCategory, TokenClass};
use crate::corpus::Formalism;

/// Fine-grained token class. Variables and separators are structural to the
/// outside world but drive argument recovery inside the skeleton parsers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) enum Class {
    Action,
    Entity,
    Relation,
    Structural,
    Variable,
    Separator,
}

impl Class {
    fn section(self) -> &'static str {
        match self {
            Class::Action => "actions",
            Class::Entity => "entities",
            Class::Relation => "relations",
            Class::Structural => "structural",
            Class::Variable => "variables",
            Class::Separator => "separators",
        }
    }

    fn from_section(name: &str) -> Option<Class> {
        [Class::Action, Class::Entity, Class::Relation, Class::Structural, Class::Variable, Class::Separator]
            .into_iter()
            .find(|c| c.section() == name)
    }

    pub(crate) fn public(self) -> TokenClass {
        match self {
            Class::Action => TokenClass::Action,
            Class::Entity => TokenClass::Entity,
            Class::Relation => TokenClass::Relation,
            Class::Structural | Class::Variable | Class::Separator => TokenClass::Structural,
        }
    }
}

/// How target sequences are parsed into skeletons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Syntax {
    /// Flat action sequences (SCAN).
    Sequence,
    /// `name ( arg , ... )` conjuncts (COGS).
    Predicate,
    /// Prefix function trees, parenthesized or not (GeoQuery FunQL).
    Funql,
    /// `subject predicate object .` statements inside braces (CFQ SPARQL).
    Triples,
}

impl Syntax {
    fn parse(s: &str) -> Option<Syntax> {
        match s {
            "sequence" => Some(Syntax::Sequence),
            "predicate" => Some(Syntax::Predicate),
            "funql" => Some(Syntax::Funql),
            "triples" => Some(Syntax::Triples),
            _ => None,
        }
    }

    fn required(self) -> &'static [Class] {
        match self {
            Syntax::Sequence => &[Class::Action],
            Syntax::Predicate => &[Class::Entity, Class::Relation, Class::Variable],
            Syntax::Funql => &[Class::Relation],
            Syntax::Triples => &[Class::Entity, Class::Relation, Class::Variable],
        }
    }
}

#[derive(Debug, Clone)]
enum Matcher {
    Prefix(String),
    Pattern(Regex),
}

impl Matcher {
    fn matches(&self, token: &str) -> bool {
        match self {
            Matcher::Prefix(p) => token.starts_with(p.as_str()),
            Matcher::Pattern(re) => re.is_match(token),
        }
    }
}

/// Per-formalism token classification and abstraction rules.
#[derive(Debug, Clone)]
pub struct FormalismDescriptor {
    pub formalism: Formalism,
    pub syntax: Syntax,
    exact: HashMap<String, Class>,
    rules: Vec<(Class, Matcher)>,
    fallback: Class,
    heads: BTreeMap<PrimitiveCategory, String>,
    pub(crate) role_suffix: bool,
    pub(crate) arity: HashMap<String, usize>,
    pub(crate) type_predicate: Option<String>,
}

const SCAN_FD: &str = include_str!("../../descriptors/scan.fd");
const COGS_FD: &str = include_str!("../../descriptors/cogs.fd");
const FUNQL_FD: &str = include_str!("../../descriptors/funql.fd");
const SPARQL_FD: &str = include_str!("../../descriptors/sparql.fd");

impl FormalismDescriptor {
    /// One of the four descriptors shipped with the crate.
    pub fn builtin(formalism: Formalism) -> Self {
        let text = match formalism {
            Formalism::Scan => SCAN_FD,
            Formalism::Cogs => COGS_FD,
            Formalism::Funql => FUNQL_FD,
            Formalism::Sparql => SPARQL_FD,
        };
        Self::parse(text).expect("shipped descriptors are valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AbstractionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| AbstractionError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, AbstractionError> {
        let err = |line: usize, msg: String| AbstractionError::Descriptor { line, msg };
        let mut formalism = None;
        let mut syntax = None;
        let mut fallback = Class::Structural;
        let mut role_suffix = false;
        let mut type_predicate = None;
        let mut heads = BTreeMap::new();
        let mut arity = HashMap::new();
        let mut exact: HashMap<String, Class> = HashMap::new();
        let mut rules = Vec::new();
        let mut seen: BTreeSet<Class> = BTreeSet::new();
        let mut section: Option<String> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let entry = raw.trim();
            if entry.is_empty() || entry.starts_with('#') {
                continue;
            }
            if let Some(name) = entry.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if Class::from_section(name).is_none() && name != "heads" && name != "arity" {
                    return Err(err(line, format!("unknown section [{name}]")));
                }
                section = Some(name.to_owned());
                continue;
            }
            match section.as_deref() {
                None => {
                    let (key, value) = key_value(entry).ok_or_else(|| err(line, "expected key = value".into()))?;
                    match key {
                        "formalism" => {
                            formalism = Some(value.parse::<Formalism>().map_err(|e| err(line, e.to_string()))?)
                        }
                        "syntax" => {
                            syntax = Some(Syntax::parse(value).ok_or_else(|| err(line, format!("unknown syntax {value:?}")))?)
                        }
                        "fallback" => {
                            fallback = match value {
                                "structural" => Class::Structural,
                                "entity" => Class::Entity,
                                "relation" => Class::Relation,
                                "action" => Class::Action,
                                _ => return Err(err(line, format!("invalid fallback {value:?}"))),
                            }
                        }
                        "role_suffix" => {
                            role_suffix = value.parse().map_err(|_| err(line, "role_suffix must be true/false".into()))?
                        }
                        "type_predicate" => type_predicate = Some(value.to_owned()),
                        _ => return Err(err(line, format!("unknown key {key:?}"))),
                    }
                }
                Some("heads") => {
                    let (key, value) = key_value(entry).ok_or_else(|| err(line, "expected category = label".into()))?;
                    let cat = match key {
                        "action" => PrimitiveCategory::Action,
                        "entity" => PrimitiveCategory::Entity,
                        "relation" => PrimitiveCategory::Relation,
                        _ => return Err(err(line, format!("unknown category {key:?}"))),
                    };
                    heads.insert(cat, value.to_owned());
                }
                Some("arity") => {
                    let (key, value) = key_value(entry).ok_or_else(|| err(line, "expected token = arity".into()))?;
                    let n = value.parse().map_err(|_| err(line, format!("invalid arity {value:?}")))?;
                    arity.insert(key.to_owned(), n);
                }
                Some(name) => {
                    let class = Class::from_section(name).expect("section validated above");
                    let (kind, body) = entry.split_once(':').ok_or_else(|| err(line, "expected exact:, prefix: or pattern:".into()))?;
                    match kind {
                        "exact" => {
                            for tok in body.split_whitespace() {
                                if let Some(prev) = exact.insert(tok.to_owned(), class) {
                                    if prev != class {
                                        return Err(err(
                                            line,
                                            format!("token {tok:?} listed in both [{}] and [{}]", prev.section(), class.section()),
                                        ));
                                    }
                                }
                            }
                        }
                        "prefix" => rules.push((class, Matcher::Prefix(body.trim().to_owned()))),
                        "pattern" => {
                            let re = Regex::new(body.trim()).map_err(|e| err(line, format!("bad pattern: {e}")))?;
                            rules.push((class, Matcher::Pattern(re)));
                        }
                        _ => return Err(err(line, format!("unknown rule kind {kind:?}"))),
                    }
                    seen.insert(class);
                }
            }
        }

        let formalism = formalism.ok_or_else(|| err(0, "missing formalism".into()))?;
        let syntax = syntax.ok_or_else(|| err(0, "missing syntax".into()))?;
        for class in syntax.required() {
            if !seen.contains(class) {
                return Err(err(0, format!("syntax requires a non-empty [{}] section", class.section())));
            }
        }
        for class in seen.iter().copied().chain([fallback]) {
            let cat = match class {
                Class::Action => PrimitiveCategory::Action,
                Class::Entity => PrimitiveCategory::Entity,
                Class::Relation => PrimitiveCategory::Relation,
                _ => continue,
            };
            if !heads.contains_key(&cat) {
                return Err(err(0, format!("missing head label for {cat}")));
            }
        }
        // exact entries must not also be claimed by another class's pattern
        for (tok, class) in &exact {
            if let Some((other, _)) = rules.iter().find(|(c, m)| c != class && m.matches(tok)) {
                // exact entries take precedence; only flag collisions between primitive classes
                if class.public() != TokenClass::Structural && other.public() != TokenClass::Structural {
                    return Err(err(
                        0,
                        format!("token {tok:?} is exact in [{}] but matches a [{}] rule", class.section(), other.section()),
                    ));
                }
            }
        }

        Ok(FormalismDescriptor {
            formalism,
            syntax,
            exact,
            rules,
            fallback,
            heads,
            role_suffix,
            arity,
            type_predicate,
        })
    }

    pub(crate) fn class_of(&self, token: &str) -> Class {
        if let Some(c) = self.exact.get(token) {
            return *c;
        }
        self.rules.iter().find(|(_, m)| m.matches(token)).map(|(c, _)| *c).unwrap_or(self.fallback)
    }

    /// Every class whose rules claim `token` (exact matches win outright).
    fn matching_classes(&self, token: &str) -> BTreeSet<Class> {
        if let Some(c) = self.exact.get(token) {
            return [*c].into();
        }
        self.rules.iter().filter(|(_, m)| m.matches(token)).map(|(c, _)| *c).collect()
    }

    /// Checks that every token of a vocabulary classifies uniquely.
    pub fn validate_tokens<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Result<(), AbstractionError> {
        for tok in tokens {
            let classes = self.matching_classes(tok);
            if classes.len() > 1 {
                return Err(AbstractionError::Ambiguous {
                    token: tok.to_owned(),
                    classes: classes.iter().map(|c| c.section().to_owned()).collect(),
                });
            }
        }
        Ok(())
    }

    pub fn head(&self, category: PrimitiveCategory) -> &str {
        self.heads.get(&category).map(String::as_str).unwrap_or(category.default_head())
    }
}

fn key_value(entry: &str) -> Option<(&str, &str)> {
    let (k, v) = entry.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    (!k.is_empty() && !v.is_empty()).then_some((k, v))
}
