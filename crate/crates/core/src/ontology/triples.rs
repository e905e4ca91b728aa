use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

use crate::model::{Description, QosField, ServiceDescription, ThingDescription};

/// Predicate IRIs used for the triple view of directory entries.
pub mod pred {
    pub const NAME: &str = "p:name";
    pub const CONCEPT: &str = "p:concept";
    pub const LATITUDE: &str = "p:latitude";
    pub const LONGITUDE: &str = "p:longitude";
    pub const ENDPOINT: &str = "p:endpoint";
    pub const META_PREFIX: &str = "p:meta/";
    pub const THING: &str = "p:thing";
    pub const PATH: &str = "p:path";
    pub const KEYWORD: &str = "p:keyword";
    pub const INPUT: &str = "p:input";
    pub const OUTPUT: &str = "p:output";

    pub fn qos(field: crate::model::QosField) -> String {
        format!("p:{}", field.name())
    }
}

/// Object position of a triple (also the value type of query bindings).
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Text(String),
    Number(f64),
}

impl Term {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Term::Number(n) => Some(*n),
            Term::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Term::Text(s) => Some(s),
            Term::Number(_) => None,
        }
    }
}

impl Eq for Term {}

impl Ord for Term {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Term::Number(a), Term::Number(b)) => a.total_cmp(b),
            (Term::Number(_), Term::Text(_)) => Ordering::Less,
            (Term::Text(_), Term::Number(_)) => Ordering::Greater,
            (Term::Text(a), Term::Text(b)) => a.cmp(b),
        }
    }
}

impl PartialOrd for Term {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Text(s) => f.write_str(s),
            Term::Number(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: Term,
}

impl Triple {
    pub fn new(subject: impl Into<String>, predicate: impl Into<String>, object: Term) -> Self {
        Self {
            subject: subject.into(),
            predicate: predicate.into(),
            object,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("description has no identifier")]
pub struct UnregisteredDescription;

fn text(s: &str) -> Term {
    Term::Text(s.to_string())
}

pub fn thing_triples(t: &ThingDescription) -> Result<Vec<Triple>, UnregisteredDescription> {
    let subject = t.id.ok_or(UnregisteredDescription)?.to_string();
    let mut out = vec![
        Triple::new(&subject, pred::NAME, text(&t.name)),
        Triple::new(&subject, pred::CONCEPT, text(&t.concept)),
        Triple::new(&subject, pred::LATITUDE, Term::Number(t.location.latitude)),
        Triple::new(&subject, pred::LONGITUDE, Term::Number(t.location.longitude)),
        Triple::new(&subject, pred::ENDPOINT, text(&t.endpoint)),
    ];
    for (k, v) in &t.metadata {
        out.push(Triple::new(&subject, format!("{}{k}", pred::META_PREFIX), text(v)));
    }
    Ok(out)
}

pub fn service_triples(s: &ServiceDescription) -> Result<Vec<Triple>, UnregisteredDescription> {
    let subject = s.id.ok_or(UnregisteredDescription)?.to_string();
    let mut out = vec![Triple::new(&subject, pred::CONCEPT, text(&s.functional_concept))];
    if let Some(thing) = s.thing_id {
        out.push(Triple::new(&subject, pred::THING, Term::Text(thing.to_string())));
    }
    out.push(Triple::new(&subject, pred::PATH, text(&s.path)));
    for k in &s.keywords {
        out.push(Triple::new(&subject, pred::KEYWORD, text(k)));
    }
    for i in &s.inputs {
        out.push(Triple::new(&subject, pred::INPUT, text(i)));
    }
    for o in &s.outputs {
        out.push(Triple::new(&subject, pred::OUTPUT, text(o)));
    }
    for field in QosField::ALL {
        out.push(Triple::new(&subject, pred::qos(field), Term::Number(s.qos.get(field))));
    }
    Ok(out)
}

pub fn to_triples(desc: &Description) -> Result<Vec<Triple>, UnregisteredDescription> {
    match desc {
        Description::Thing(t) => thing_triples(t),
        Description::Service(s) => service_triples(s),
    }
}
