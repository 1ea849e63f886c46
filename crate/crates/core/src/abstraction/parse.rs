//! Skeleton parsers for the four target syntaxes.
//!
//! In strict mode malformed spans are reported with their token position.
//! In lenient mode they are skipped, so a garbage prediction yields a short
//! skeleton instead of an error.

use std::collections::HashMap;

use super::descriptor::{Class, Syntax};
use super::{AbstractionError, FormalismDescriptor, PrimitiveCategory, Skeleton, SkeletonToken};
use crate::corpus::Token;

pub(super) fn skeleton(
    target: &[Token],
    descriptor: &FormalismDescriptor,
    strict: bool,
) -> Result<Skeleton, AbstractionError> {
    let mut p = Parser {
        toks: target.iter().map(|t| t.as_str()).collect(),
        d: descriptor,
        strict,
        vars: HashMap::new(),
        next_var: 0,
        preds: Vec::new(),
    };
    match descriptor.syntax {
        Syntax::Sequence => {
            p.sequence();
            return Ok(Skeleton { tokens: p.preds });
        }
        Syntax::Predicate => p.predicates()?,
        Syntax::Funql => p.funql()?,
        Syntax::Triples => p.triples()?,
    }
    let mut tokens = Vec::with_capacity(p.preds.len() * 2);
    for (i, t) in p.preds.into_iter().enumerate() {
        if i > 0 {
            tokens.push(SkeletonToken::separator());
        }
        tokens.push(t);
    }
    Ok(Skeleton { tokens })
}

struct Parser<'a> {
    toks: Vec<&'a str>,
    d: &'a FormalismDescriptor,
    strict: bool,
    vars: HashMap<&'a str, u32>,
    next_var: u32,
    preds: Vec<SkeletonToken>,
}

struct Node {
    at: usize,
    children: Vec<Node>,
}

impl<'a> Parser<'a> {
    fn class(&self, i: usize) -> Class {
        self.d.class_of(self.toks[i])
    }

    fn is(&self, i: usize, s: &str) -> bool {
        self.toks.get(i) == Some(&s)
    }

    fn var(&mut self, ident: &'a str) -> u32 {
        if let Some(v) = self.vars.get(ident) {
            return *v;
        }
        let v = self.fresh();
        self.vars.insert(ident, v);
        v
    }

    fn fresh(&mut self) -> u32 {
        self.next_var += 1;
        self.next_var
    }

    fn malformed(&self, position: usize, reason: impl Into<String>) -> Result<(), AbstractionError> {
        if self.strict {
            Err(AbstractionError::Malformed { position, reason: reason.into() })
        } else {
            Ok(())
        }
    }

    fn head(&self, class: Class, name: &str) -> String {
        let cat = match class {
            Class::Action => PrimitiveCategory::Action,
            Class::Relation => PrimitiveCategory::Relation,
            _ => PrimitiveCategory::Entity,
        };
        let head = self.d.head(cat);
        if class == Class::Relation && self.d.role_suffix {
            if let Some((_, role)) = name.rsplit_once('.') {
                return format!("{head}.{role}");
            }
        }
        head.to_owned()
    }

    fn sequence(&mut self) {
        for i in 0..self.toks.len() {
            if self.class(i) == Class::Action {
                let v = self.var(self.toks[i]);
                let head = self.head(Class::Action, self.toks[i]);
                self.preds.push(SkeletonToken::new(head, vec![v]));
            }
        }
    }

    /// `[*] name ( arg , ... )` conjuncts separated by `;` / `AND`.
    fn predicates(&mut self) -> Result<(), AbstractionError> {
        let n = self.toks.len();
        let mut i = 0;
        while i < n {
            let class = self.class(i);
            if !matches!(class, Class::Entity | Class::Relation) {
                i += 1;
                continue;
            }
            if !self.is(i + 1, "(") {
                self.malformed(i, format!("predicate {:?} without argument list", self.toks[i]))?;
                i += 1;
                continue;
            }
            let mut j = i + 2;
            let mut args = Vec::new();
            let mut ok = false;
            while j < n {
                if self.is(j, ")") && args.is_empty() {
                    ok = true;
                    j += 1;
                    break;
                }
                if !matches!(self.class(j), Class::Variable | Class::Entity) {
                    break;
                }
                args.push(self.toks[j]);
                j += 1;
                if self.is(j, ",") {
                    j += 1;
                } else if self.is(j, ")") {
                    ok = true;
                    j += 1;
                    break;
                } else {
                    break;
                }
            }
            if !ok {
                self.malformed(j.min(n), format!("cannot recover arguments of {:?}", self.toks[i]))?;
                i = j.max(i + 1);
                continue;
            }
            let args = args.into_iter().map(|a| self.var(a)).collect();
            let head = self.head(class, self.toks[i]);
            self.preds.push(SkeletonToken::new(head, args));
            i = j;
        }
        Ok(())
    }

    fn funql(&mut self) -> Result<(), AbstractionError> {
        let parens = self.toks.contains(&"(");
        let mut pos = 0;
        let mut roots = Vec::new();
        while pos < self.toks.len() {
            if !roots.is_empty() {
                self.malformed(pos, "trailing tokens after complete expression")?;
            }
            match self.funql_node(pos, parens)? {
                Some((node, next)) => {
                    roots.push(node);
                    pos = next;
                }
                None => pos += 1,
            }
        }
        for root in &roots {
            self.emit_funql(root);
        }
        Ok(())
    }

    /// Parses one expression at `pos`; returns it and the position after it.
    fn funql_node(&mut self, pos: usize, parens: bool) -> Result<Option<(Node, usize)>, AbstractionError> {
        let n = self.toks.len();
        if pos >= n {
            self.malformed(pos, "missing argument: arity cannot be recovered")?;
            return Ok(None);
        }
        if matches!(self.toks[pos], "(" | ")" | ",") {
            self.malformed(pos, format!("unexpected {:?}", self.toks[pos]))?;
            return Ok(None);
        }
        let mut node = Node { at: pos, children: Vec::new() };
        if parens {
            if !self.is(pos + 1, "(") {
                return Ok(Some((node, pos + 1)));
            }
            let mut p = pos + 2;
            if self.is(p, ")") {
                return Ok(Some((node, p + 1)));
            }
            loop {
                match self.funql_node(p, parens)? {
                    Some((child, next)) => {
                        node.children.push(child);
                        p = next;
                    }
                    None => p += 1,
                }
                if self.is(p, ",") {
                    p += 1;
                } else if self.is(p, ")") {
                    return Ok(Some((node, p + 1)));
                } else {
                    self.malformed(p, "unbalanced parentheses")?;
                    if p >= n {
                        return Ok(Some((node, p)));
                    }
                }
            }
        }
        let class = self.class(pos);
        let arity = match self.d.arity.get(self.toks[pos]) {
            Some(a) => *a,
            None if class == Class::Entity => 0,
            None => 1,
        };
        let mut p = pos + 1;
        for _ in 0..arity {
            if p >= n {
                self.malformed(p, format!("{:?} expects {arity} argument(s): arity cannot be recovered", self.toks[pos]))?;
                break;
            }
            match self.funql_node(p, parens)? {
                Some((child, next)) => {
                    node.children.push(child);
                    p = next;
                }
                None => p += 1,
            }
        }
        Ok(Some((node, p)))
    }

    /// Post-order emission; returns the variable denoting the node's value.
    fn emit_funql(&mut self, node: &Node) -> Option<u32> {
        let child_vars: Vec<u32> = node.children.iter().filter_map(|c| self.emit_funql(c)).collect();
        let tok = self.toks[node.at];
        match self.class(node.at) {
            class @ Class::Entity => {
                let v = self.var(tok);
                let mut args = vec![v];
                args.extend(child_vars);
                let head = self.head(class, tok);
                self.preds.push(SkeletonToken::new(head, args));
                Some(v)
            }
            class @ (Class::Relation | Class::Action) => {
                let v = self.fresh();
                let mut args = vec![v];
                args.extend(child_vars);
                let head = self.head(class, tok);
                self.preds.push(SkeletonToken::new(head, args));
                Some(v)
            }
            Class::Structural | Class::Variable | Class::Separator => child_vars.first().copied(),
        }
    }

    /// `s p o .` statements inside `{ ... }`; FILTER statements are skipped.
    fn triples(&mut self) -> Result<(), AbstractionError> {
        let n = self.toks.len();
        let (start, end) = match self.toks.iter().position(|t| *t == "{") {
            Some(open) => {
                let close = self.toks.iter().rposition(|t| *t == "}").filter(|c| *c > open);
                if close.is_none() {
                    self.malformed(n, "missing closing brace")?;
                }
                (open + 1, close.unwrap_or(n))
            }
            None => {
                self.malformed(0, "missing WHERE block")?;
                (0, n)
            }
        };
        let mut i = start;
        while i < end {
            let stop = (i..end).find(|&k| self.toks[k] == ".").unwrap_or(end);
            if stop > i && self.toks[i] != "FILTER" {
                self.triple(i, stop)?;
            }
            i = stop + 1;
        }
        Ok(())
    }

    fn triple(&mut self, start: usize, stop: usize) -> Result<(), AbstractionError> {
        if stop - start != 3 {
            return self.malformed(start, format!("statement has {} terms, expected 3", stop - start));
        }
        let (s, p, o) = (start, start + 1, start + 2);
        let is_term = |c: Class| matches!(c, Class::Variable | Class::Entity);
        if !is_term(self.class(s)) {
            return self.malformed(s, format!("{:?} is not a subject", self.toks[s]));
        }
        let is_type = self.d.type_predicate.as_deref() == Some(self.toks[p]);
        if is_type {
            if self.class(o) != Class::Entity {
                return self.malformed(o, format!("{:?} is not a class", self.toks[o]));
            }
            let v = self.var(self.toks[s]);
            let head = self.head(Class::Entity, self.toks[o]);
            self.preds.push(SkeletonToken::new(head, vec![v]));
            return Ok(());
        }
        let class = self.class(p);
        if !matches!(class, Class::Relation | Class::Entity) {
            return self.malformed(p, format!("{:?} is not a predicate", self.toks[p]));
        }
        if !is_term(self.class(o)) {
            return self.malformed(o, format!("{:?} is not an object", self.toks[o]));
        }
        let args = vec![self.var(self.toks[s]), self.var(self.toks[o])];
        let head = self.head(class, self.toks[p]);
        self.preds.push(SkeletonToken::new(head, args));
        Ok(())
    }
}
