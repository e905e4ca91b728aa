//! SELECT / basic-graph-pattern / numeric-FILTER subset of SPARQL.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use super::triples::{Term, Triple};
use crate::model::Comparator;

#[derive(Debug, Clone, PartialEq)]
pub enum QueryTerm {
    Var(String),
    Iri(String),
    Literal(String),
    Number(f64),
}

impl QueryTerm {
    fn var(&self) -> Option<&str> {
        match self {
            QueryTerm::Var(v) => Some(v),
            _ => None,
        }
    }

    fn matches(&self, value: &Term) -> bool {
        match (self, value) {
            (QueryTerm::Iri(c) | QueryTerm::Literal(c), Term::Text(t)) => c == t,
            (QueryTerm::Number(c), Term::Number(n)) => c == n,
            _ => false,
        }
    }
}

impl fmt::Display for QueryTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryTerm::Var(v) => write!(f, "?{v}"),
            QueryTerm::Iri(i) => write!(f, "<{i}>"),
            QueryTerm::Literal(l) => {
                f.write_str("\"")?;
                for c in l.chars() {
                    if c == '"' || c == '\\' {
                        f.write_str("\\")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str("\"")
            }
            QueryTerm::Number(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriplePattern {
    pub subject: QueryTerm,
    pub predicate: QueryTerm,
    pub object: QueryTerm,
}

impl TriplePattern {
    pub fn new(subject: QueryTerm, predicate: QueryTerm, object: QueryTerm) -> Self {
        Self {
            subject,
            predicate,
            object,
        }
    }

    fn terms(&self) -> [&QueryTerm; 3] {
        [&self.subject, &self.predicate, &self.object]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub var: String,
    pub op: Comparator,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectQuery {
    pub projected: Vec<String>,
    pub patterns: Vec<TriplePattern>,
    pub filters: Vec<Filter>,
}

pub type Binding = BTreeMap<String, Term>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("syntax error at byte {0}")]
    SyntaxError(usize),
    #[error("filter variable ?{0} does not occur in any pattern")]
    UnboundFilterVariable(String),
    #[error("projected variable ?{0} does not occur in any pattern")]
    UnboundProjection(String),
}

impl SelectQuery {
    fn pattern_vars(&self) -> BTreeSet<&str> {
        self.patterns
            .iter()
            .flat_map(|p| p.terms())
            .filter_map(QueryTerm::var)
            .collect()
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        let vars = self.pattern_vars();
        for f in &self.filters {
            if !vars.contains(f.var.as_str()) {
                return Err(QueryError::UnboundFilterVariable(f.var.clone()));
            }
        }
        for v in &self.projected {
            if !vars.contains(v.as_str()) {
                return Err(QueryError::UnboundProjection(v.clone()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for SelectQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT")?;
        for v in &self.projected {
            write!(f, " ?{v}")?;
        }
        f.write_str(" WHERE {")?;
        for p in &self.patterns {
            write!(f, " {} {} {} .", p.subject, p.predicate, p.object)?;
        }
        for flt in &self.filters {
            write!(f, " FILTER(?{} {} {})", flt.var, flt.op, flt.value)?;
        }
        f.write_str(" }")
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self) -> Result<T, QueryError> {
        Err(QueryError::SyntaxError(self.pos))
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn eat(&mut self, s: &str) -> bool {
        self.ws();
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        self.ws();
        let r = self.rest();
        if r.len() >= kw.len() && r[..kw.len()].eq_ignore_ascii_case(kw) {
            let next = r[kw.len()..].chars().next();
            if next.is_none_or(|c| !c.is_alphanumeric() && c != '_') {
                self.pos += kw.len();
                return true;
            }
        }
        false
    }

    fn expect(&mut self, s: &str) -> Result<(), QueryError> {
        if self.eat(s) {
            Ok(())
        } else {
            self.err()
        }
    }

    fn name(&mut self) -> Result<String, QueryError> {
        let r = self.rest();
        let len = r
            .char_indices()
            .find(|(_, c)| !(c.is_alphanumeric() || *c == '_'))
            .map_or(r.len(), |(i, _)| i);
        if len == 0 {
            return self.err();
        }
        self.pos += len;
        Ok(r[..len].to_string())
    }

    fn variable(&mut self) -> Result<String, QueryError> {
        self.ws();
        if self.peek() != Some('?') {
            return self.err();
        }
        self.pos += 1;
        self.name()
    }

    fn number(&mut self) -> Result<f64, QueryError> {
        self.ws();
        let r = self.rest();
        let len = r
            .char_indices()
            .find(|(_, c)| !(c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E')))
            .map_or(r.len(), |(i, _)| i);
        match r[..len].parse::<f64>() {
            Ok(n) if len > 0 && n.is_finite() => {
                self.pos += len;
                Ok(n)
            }
            _ => self.err(),
        }
    }

    fn term(&mut self) -> Result<QueryTerm, QueryError> {
        self.ws();
        match self.peek() {
            Some('?') => Ok(QueryTerm::Var(self.variable()?)),
            Some('<') => {
                let start = self.pos;
                let body = &self.rest()[1..];
                match body.find('>') {
                    Some(end) if !body[..end].contains(char::is_whitespace) => {
                        self.pos += end + 2;
                        Ok(QueryTerm::Iri(body[..end].to_string()))
                    }
                    _ => Err(QueryError::SyntaxError(start)),
                }
            }
            Some('"') => {
                let start = self.pos;
                let mut out = String::new();
                let mut chars = self.rest()[1..].char_indices();
                while let Some((i, c)) = chars.next() {
                    match c {
                        '"' => {
                            self.pos += 1 + i + 1;
                            return Ok(QueryTerm::Literal(out));
                        }
                        '\\' => match chars.next() {
                            Some((_, e)) => out.push(e),
                            None => break,
                        },
                        c => out.push(c),
                    }
                }
                Err(QueryError::SyntaxError(start))
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                Ok(QueryTerm::Number(self.number()?))
            }
            _ => self.err(),
        }
    }

    fn comparator(&mut self) -> Result<Comparator, QueryError> {
        self.ws();
        for (sym, c) in [
            ("<=", Comparator::Le),
            (">=", Comparator::Ge),
            ("!=", Comparator::Ne),
            ("<", Comparator::Lt),
            (">", Comparator::Gt),
            ("=", Comparator::Eq),
        ] {
            if self.eat(sym) {
                return Ok(c);
            }
        }
        self.err()
    }

    fn query(&mut self) -> Result<SelectQuery, QueryError> {
        if !self.keyword("SELECT") {
            return self.err();
        }
        let mut projected = Vec::new();
        loop {
            self.ws();
            if self.peek() == Some('?') {
                projected.push(self.variable()?);
            } else {
                break;
            }
        }
        if projected.is_empty() || !self.keyword("WHERE") {
            return self.err();
        }
        self.expect("{")?;
        let mut patterns = Vec::new();
        let mut filters = Vec::new();
        loop {
            self.ws();
            if self.eat("}") {
                break;
            }
            if self.keyword("FILTER") {
                self.expect("(")?;
                let var = self.variable()?;
                let op = self.comparator()?;
                let value = self.number()?;
                self.expect(")")?;
                filters.push(Filter { var, op, value });
            } else {
                let s = self.term()?;
                let p = self.term()?;
                let o = self.term()?;
                patterns.push(TriplePattern::new(s, p, o));
            }
            self.eat(".");
        }
        self.ws();
        if self.pos != self.src.len() {
            return self.err();
        }
        Ok(SelectQuery {
            projected,
            patterns,
            filters,
        })
    }
}

pub fn parse_query(text: &str) -> Result<SelectQuery, QueryError> {
    let q = Parser { src: text, pos: 0 }.query()?;
    q.validate()?;
    Ok(q)
}

fn bind(term: &QueryTerm, value: Term, binding: &mut Binding) -> bool {
    match term {
        QueryTerm::Var(v) => match binding.get(v) {
            Some(existing) => *existing == value,
            None => {
                binding.insert(v.clone(), value);
                true
            }
        },
        constant => constant.matches(&value),
    }
}

/// Cheap pre-check against constants and already bound variables.
fn may_fit(term: &QueryTerm, value: &Term, binding: &Binding) -> bool {
    match term {
        QueryTerm::Var(v) => binding.get(v).is_none_or(|b| b == value),
        constant => constant.matches(value),
    }
}

fn may_fit_text(term: &QueryTerm, value: &str, binding: &Binding) -> bool {
    match term {
        QueryTerm::Var(v) => binding.get(v).is_none_or(|b| b.as_text() == Some(value)),
        QueryTerm::Iri(c) | QueryTerm::Literal(c) => c == value,
        QueryTerm::Number(_) => false,
    }
}

/// Conjunctive join of all patterns, then filters, then projection.
/// Rows come back sorted by projected values with duplicates removed.
pub fn evaluate(q: &SelectQuery, store: &[Triple]) -> Vec<Binding> {
    let mut solutions: Vec<Binding> = vec![Binding::new()];
    for pattern in &q.patterns {
        let mut next = Vec::new();
        for sol in &solutions {
            for t in store {
                if !(may_fit_text(&pattern.predicate, &t.predicate, sol)
                    && may_fit_text(&pattern.subject, &t.subject, sol)
                    && may_fit(&pattern.object, &t.object, sol))
                {
                    continue;
                }
                let mut b = sol.clone();
                if bind(&pattern.subject, Term::Text(t.subject.clone()), &mut b)
                    && bind(&pattern.predicate, Term::Text(t.predicate.clone()), &mut b)
                    && bind(&pattern.object, t.object.clone(), &mut b)
                {
                    next.push(b);
                }
            }
        }
        solutions = next;
        if solutions.is_empty() {
            break;
        }
    }
    let rows: BTreeSet<Vec<Term>> = solutions
        .into_iter()
        .filter(|b| {
            q.filters.iter().all(|f| {
                b.get(&f.var)
                    .and_then(Term::as_number)
                    .is_some_and(|v| f.op.holds(v, f.value))
            })
        })
        .map(|b| q.projected.iter().map(|v| b[v].clone()).collect())
        .collect();
    rows.into_iter()
        .map(|row| q.projected.iter().cloned().zip(row).collect())
        .collect()
}
