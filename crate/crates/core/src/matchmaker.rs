//! Request formulation and semantic matchmaking against a gateway registry.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::directory::Directory;
use crate::model::{Comparator, Identifier, QosField, ServiceDescription};
use crate::ontology::{
    evaluate, pred, service_triples, Filter, QueryTerm, SelectQuery, Taxonomy, TaxonomyError,
    Term, TriplePattern,
};

pub const DEFAULT_MIN_SIMILARITY: f64 = 0.5;
pub const DEFAULT_MAX_RESULTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosConstraint {
    pub field: QosField,
    pub op: Comparator,
    pub bound: f64,
}

impl QosConstraint {
    pub fn new(field: QosField, op: Comparator, bound: f64) -> Self {
        Self { field, op, bound }
    }

    pub fn admits(&self, s: &ServiceDescription) -> bool {
        self.op.holds(s.qos.get(self.field), self.bound)
    }
}

fn default_min_similarity() -> f64 {
    DEFAULT_MIN_SIMILARITY
}

fn default_max_results() -> usize {
    DEFAULT_MAX_RESULTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoveryRequest {
    pub concept: String,
    #[serde(default)]
    pub keywords: BTreeSet<String>,
    #[serde(default)]
    pub qos_constraints: Vec<QosConstraint>,
    #[serde(default = "default_min_similarity")]
    pub min_similarity: f64,
    #[serde(default = "default_max_results")]
    pub max_results: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RequestError {
    #[error("unknown concept {0:?}")]
    UnknownConcept(String),
    #[error("bound for {0} out of range")]
    RangeViolation(QosField),
    #[error("min_similarity must lie in [0, 1]")]
    BadThreshold,
    #[error("bad query parameter {0:?}")]
    BadParameter(String),
    #[error("missing rt parameter")]
    MissingConcept,
}

impl DiscoveryRequest {
    pub fn new(concept: impl Into<String>) -> Self {
        Self {
            concept: concept.into(),
            keywords: BTreeSet::new(),
            qos_constraints: Vec::new(),
            min_similarity: DEFAULT_MIN_SIMILARITY,
            max_results: DEFAULT_MAX_RESULTS,
        }
    }

    pub fn keyword(mut self, k: impl Into<String>) -> Self {
        self.keywords.insert(k.into());
        self
    }

    pub fn constraint(mut self, field: QosField, op: Comparator, bound: f64) -> Self {
        self.qos_constraints.push(QosConstraint::new(field, op, bound));
        self
    }

    pub fn validate(&self, t: &Taxonomy) -> Result<(), RequestError> {
        if !t.contains(&self.concept) {
            return Err(RequestError::UnknownConcept(self.concept.clone()));
        }
        if !(0.0..=1.0).contains(&self.min_similarity) {
            return Err(RequestError::BadThreshold);
        }
        for c in &self.qos_constraints {
            if !c.field.in_range(c.bound) {
                return Err(RequestError::RangeViolation(c.field));
            }
        }
        Ok(())
    }

    /// Renders the request as CoAP query parameters, one per Uri-Query option.
    pub fn to_query_params(&self) -> Vec<String> {
        let mut out = vec![format!("rt={}", self.concept)];
        if !self.keywords.is_empty() {
            let kws: Vec<&str> = self.keywords.iter().map(String::as_str).collect();
            out.push(format!("kw={}", kws.join(",")));
        }
        for c in &self.qos_constraints {
            out.push(format!("q.{}={}{}", c.field, c.op, c.bound));
        }
        if self.min_similarity != DEFAULT_MIN_SIMILARITY {
            out.push(format!("minsim={}", self.min_similarity));
        }
        if self.max_results != DEFAULT_MAX_RESULTS {
            out.push(format!("k={}", self.max_results));
        }
        out
    }
}

/// A discovery request read from query parameters, together with any
/// per-request ranking weights (`w.<field>=<value>`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDiscovery {
    pub request: DiscoveryRequest,
    pub weights: BTreeMap<QosField, f64>,
}

/// Parses `rt=`, `kw=`, `q.<field>=<op><num>`, `minsim=`, `k=` and
/// `w.<field>=` parameters. Parameters may also be joined with `&`.
pub fn parse_discovery_params<S: AsRef<str>>(params: &[S]) -> Result<ParsedDiscovery, RequestError> {
    let mut concept = None;
    let mut request = DiscoveryRequest::new("");
    let mut weights = BTreeMap::new();
    let bad = |p: &str| RequestError::BadParameter(p.to_string());
    for param in params.iter().flat_map(|p| p.as_ref().split('&')) {
        if param.is_empty() {
            continue;
        }
        let (key, value) = param.split_once('=').ok_or_else(|| bad(param))?;
        match key {
            "rt" => concept = Some(value.to_string()),
            "kw" => request
                .keywords
                .extend(value.split(',').filter(|k| !k.is_empty()).map(str::to_string)),
            "minsim" => request.min_similarity = value.parse().map_err(|_| bad(param))?,
            "k" => request.max_results = value.parse().map_err(|_| bad(param))?,
            _ => {
                if let Some(field) = key.strip_prefix("q.") {
                    let field: QosField = field.parse().map_err(|_| bad(param))?;
                    let (op, num) = Comparator::split_prefix(value);
                    let bound: f64 = num.parse().map_err(|_| bad(param))?;
                    request.qos_constraints.push(QosConstraint::new(field, op, bound));
                } else if let Some(field) = key.strip_prefix("w.") {
                    let field: QosField = field.parse().map_err(|_| bad(param))?;
                    let w: f64 = value.parse().map_err(|_| bad(param))?;
                    if !(w.is_finite() && w >= 0.0) {
                        return Err(bad(param));
                    }
                    weights.insert(field, w);
                } else {
                    return Err(bad(param));
                }
            }
        }
    }
    request.concept = concept.ok_or(RequestError::MissingConcept)?;
    Ok(ParsedDiscovery { request, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Degree {
    Exact,
    Plugin,
    Subsume,
    Similar,
    Fail,
}

impl Degree {
    /// Lower is better.
    pub fn rank(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Degree::Exact => "exact",
            Degree::Plugin => "plugin",
            Degree::Subsume => "subsume",
            Degree::Similar => "similar",
            Degree::Fail => "fail",
        }
    }
}

impl fmt::Display for Degree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Degree {
    type Err = RequestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Degree::Exact, Degree::Plugin, Degree::Subsume, Degree::Similar, Degree::Fail]
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| RequestError::BadParameter(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub service_id: Identifier,
    pub gateway: String,
    pub degree: Degree,
    pub score: f64,
}

/// Score weights; concept and keyword weights sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchWeights {
    pub concept: f64,
    pub keywords: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self {
            concept: 0.7,
            keywords: 0.3,
        }
    }
}

fn var(v: &str) -> QueryTerm {
    QueryTerm::Var(v.to_string())
}

fn iri(v: &str) -> QueryTerm {
    QueryTerm::Iri(v.to_string())
}

/// Compiles the concept pattern and the QoS constraints of `r` into a query
/// projecting `?service`. Keywords are left to scoring.
pub fn formulate_query(r: &DiscoveryRequest) -> SelectQuery {
    let mut patterns = vec![TriplePattern::new(var("service"), iri(pred::CONCEPT), var("c"))];
    let mut filters = Vec::new();
    for (i, c) in r.qos_constraints.iter().enumerate() {
        let v = format!("q{i}");
        patterns.push(TriplePattern::new(var("service"), iri(&pred::qos(c.field)), var(&v)));
        filters.push(Filter {
            var: v,
            op: c.op,
            value: c.bound,
        });
    }
    SelectQuery {
        projected: vec!["service".into()],
        patterns,
        filters,
    }
}

pub fn match_degree(
    req_concept: &str,
    svc_concept: &str,
    t: &Taxonomy,
    min_similarity: f64,
) -> Result<Degree, TaxonomyError> {
    let sim = t.similarity(req_concept, svc_concept)?;
    Ok(if req_concept == svc_concept {
        Degree::Exact
    } else if sim < min_similarity {
        Degree::Fail
    } else if t.subsumes(req_concept, svc_concept)? {
        Degree::Plugin
    } else if t.subsumes(svc_concept, req_concept)? {
        Degree::Subsume
    } else {
        Degree::Similar
    })
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn score(
    r: &DiscoveryRequest,
    s: &ServiceDescription,
    t: &Taxonomy,
    w: MatchWeights,
) -> Result<f64, TaxonomyError> {
    let sim = t.similarity(&r.concept, &s.functional_concept)?;
    if r.concept == s.functional_concept {
        return Ok(1.0);
    }
    if r.keywords.is_empty() {
        return Ok(sim);
    }
    Ok(w.concept * sim + w.keywords * jaccard(&r.keywords, &s.keywords))
}

/// Degree and score of one service. A service whose score falls below the
/// threshold is demoted to [`Degree::Fail`].
pub fn assess(
    r: &DiscoveryRequest,
    s: &ServiceDescription,
    t: &Taxonomy,
    w: MatchWeights,
) -> Result<(Degree, f64), TaxonomyError> {
    let degree = match_degree(&r.concept, &s.functional_concept, t, r.min_similarity)?;
    let sc = score(r, s, t, w)?;
    let degree = if sc < r.min_similarity { Degree::Fail } else { degree };
    Ok((degree, sc))
}

/// Sort order of match results: degree, then score descending, then id.
pub fn result_order(a: &MatchResult, b: &MatchResult) -> std::cmp::Ordering {
    a.degree
        .rank()
        .cmp(&b.degree.rank())
        .then(b.score.total_cmp(&a.score))
        .then(a.service_id.cmp(&b.service_id))
        .then(a.gateway.cmp(&b.gateway))
}

/// Matches `r` against the registry through the inverted index.
pub fn matchmake(
    r: &DiscoveryRequest,
    dir: &Directory,
    gateway: &str,
    w: MatchWeights,
) -> Result<Vec<MatchResult>, RequestError> {
    let t = dir.taxonomy();
    r.validate(t)?;
    let unknown = |_| RequestError::UnknownConcept(r.concept.clone());
    let mut candidates = BTreeSet::new();
    for c in t.similar_to(&r.concept, r.min_similarity).map_err(unknown)? {
        candidates.extend(dir.index_lookup(c));
    }
    let descriptions: Vec<&ServiceDescription> =
        candidates.iter().filter_map(|id| dir.service(*id)).collect();
    let admitted = qos_filter(r, &descriptions);
    let mut out = Vec::new();
    for s in descriptions {
        let Some(id) = s.id.filter(|id| admitted.contains(id)) else {
            continue;
        };
        let (degree, sc) = assess(r, s, t, w).map_err(unknown)?;
        if degree != Degree::Fail {
            out.push(MatchResult {
                service_id: id,
                gateway: gateway.to_string(),
                degree,
                score: sc,
            });
        }
    }
    out.sort_by(result_order);
    out.truncate(r.max_results);
    Ok(out)
}

/// Runs the formulated query over the triples of `services` and returns the
/// ids it selects.
fn qos_filter(r: &DiscoveryRequest, services: &[&ServiceDescription]) -> BTreeSet<Identifier> {
    let store: Vec<_> = services
        .iter()
        .filter_map(|s| service_triples(s).ok())
        .flatten()
        .collect();
    evaluate(&formulate_query(r), &store)
        .into_iter()
        .filter_map(|b| match b.get("service") {
            Some(Term::Text(id)) => id.parse().ok(),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Location, QosProfile, ThingDescription};
    use crate::ontology::{load_taxonomy, parse_query};
    use proptest::prelude::*;
    use std::sync::Arc;

    const TAX: &str = "root\nA < root\nB < A\nC < root\nD < C\nE < A\nF < B\nG < F\nH < G\nI < D";

    fn tax() -> Arc<Taxonomy> {
        Arc::new(load_taxonomy(TAX).unwrap())
    }

    fn svc(concept: &str, kws: &[&str]) -> ServiceDescription {
        let mut s = ServiceDescription::new(concept, "/s", QosProfile::identity());
        s.keywords = kws.iter().map(|k| k.to_string()).collect();
        s
    }

    #[test]
    fn formulation_counts() {
        let q = formulate_query(&DiscoveryRequest::new("A"));
        assert_eq!((q.patterns.len(), q.filters.len()), (1, 0));
        let r = DiscoveryRequest::new("A")
            .constraint(QosField::DelayMs, Comparator::Lt, 100.0)
            .constraint(QosField::Price, Comparator::Le, 5.0);
        let q = formulate_query(&r);
        assert_eq!((q.patterns.len(), q.filters.len()), (3, 2));
        assert_eq!(parse_query(&q.to_string()).unwrap(), q);
    }

    #[test]
    fn degrees() {
        let t = tax();
        let d = |a, b| match_degree(a, b, &t, 0.5).unwrap();
        assert_eq!(d("A", "A"), Degree::Exact);
        assert_eq!(d("A", "B"), Degree::Plugin);
        assert_eq!(d("B", "A"), Degree::Subsume);
        assert_eq!(d("B", "E"), Degree::Similar);
        // D and E are depth 3 under different branches: 2/6 < 0.5
        assert_eq!(d("D", "E"), Degree::Fail);
        assert!(match_degree("A", "Z", &t, 0.5).is_err());
    }

    #[test]
    fn scores() {
        let t = tax();
        let w = MatchWeights::default();
        assert_eq!(score(&DiscoveryRequest::new("A"), &svc("A", &[]), &t, w).unwrap(), 1.0);
        // similarity(A, B) = 0.8
        let r = DiscoveryRequest::new("A").keyword("x").keyword("y");
        let half = svc("B", &["x"]);
        assert!((score(&r, &half, &t, w).unwrap() - 0.71).abs() < 1e-12);
        let disjoint = svc("B", &["z"]);
        assert!((score(&r, &disjoint, &t, w).unwrap() - 0.56).abs() < 1e-12);
        assert_eq!(score(&r, &svc("A", &["q"]), &t, w).unwrap(), 1.0);
    }

    fn registry(concepts: &[(usize, f64, f64)]) -> Directory {
        let names: Vec<&str> = t_names();
        let mut d = Directory::new(1, tax());
        let thing = d
            .post_thing(ThingDescription::new("t", "A", Location::new(0.0, 0.0).unwrap()), 0)
            .unwrap();
        for (i, &(c, delay, price)) in concepts.iter().enumerate() {
            let mut s = svc(names[c % names.len()], if i % 3 == 0 { &["x"] } else { &["y", "z"] });
            s.qos.delay_ms = delay;
            s.qos.price = price;
            s.thing_id = Some(thing);
            d.post_service(s).unwrap();
        }
        d
    }

    fn t_names() -> Vec<&'static str> {
        vec!["root", "A", "B", "C", "D", "E", "F", "G", "H", "I"]
    }

    #[test]
    fn empty_registry_and_exact_tie_break() {
        let d = registry(&[]);
        let r = DiscoveryRequest::new("A");
        assert!(matchmake(&r, &d, "gw", MatchWeights::default()).unwrap().is_empty());
        let d = registry(&[(1, 1.0, 1.0), (1, 1.0, 1.0)]);
        let out = matchmake(&r, &d, "gw", MatchWeights::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out[0].service_id < out[1].service_id);
        assert!(out.iter().all(|m| m.degree == Degree::Exact && m.score == 1.0));
    }

    #[test]
    fn unknown_concept_rejected() {
        let d = registry(&[]);
        assert_eq!(
            matchmake(&DiscoveryRequest::new("Q"), &d, "gw", MatchWeights::default()),
            Err(RequestError::UnknownConcept("Q".into()))
        );
    }

    #[test]
    fn query_params_roundtrip() {
        let r = DiscoveryRequest::new("iri:Temp")
            .keyword("indoor")
            .keyword("celsius")
            .constraint(QosField::DelayMs, Comparator::Lt, 100.0)
            .constraint(QosField::Reliability, Comparator::Ge, 0.9);
        let parsed = parse_discovery_params(&r.to_query_params()).unwrap();
        assert_eq!(parsed.request, r);
        assert!(parsed.weights.is_empty());

        let p = parse_discovery_params(&["rt=A&minsim=0.7&k=3&w.price=2&q.price=5"]).unwrap();
        assert_eq!(p.request.min_similarity, 0.7);
        assert_eq!(p.request.max_results, 3);
        assert_eq!(p.weights, BTreeMap::from([(QosField::Price, 2.0)]));
        assert_eq!(p.request.qos_constraints[0].op, Comparator::Eq);
        assert_eq!(parse_discovery_params(&["kw=a"]), Err(RequestError::MissingConcept));
        assert!(parse_discovery_params(&["rt=A", "q.speed=<3"]).is_err());
        assert!(parse_discovery_params(&["rt=A", "bogus"]).is_err());
    }

    /// Full-scan matchmaker written directly from the definitions.
    fn scan(r: &DiscoveryRequest, d: &Directory) -> Vec<MatchResult> {
        let t = d.taxonomy();
        let mut out: Vec<MatchResult> = Vec::new();
        for s in d.services() {
            if !r.qos_constraints.iter().all(|c| c.admits(s)) {
                continue;
            }
            let sim = t.similarity(&r.concept, &s.functional_concept).unwrap();
            let sc = if r.concept == s.functional_concept {
                1.0
            } else if r.keywords.is_empty() {
                sim
            } else {
                0.7 * sim + 0.3 * jaccard(&r.keywords, &s.keywords)
            };
            let degree = if r.concept == s.functional_concept {
                Degree::Exact
            } else if sim < r.min_similarity || sc < r.min_similarity {
                continue;
            } else if t.subsumes(&r.concept, &s.functional_concept).unwrap() {
                Degree::Plugin
            } else if t.subsumes(&s.functional_concept, &r.concept).unwrap() {
                Degree::Subsume
            } else {
                Degree::Similar
            };
            out.push(MatchResult {
                service_id: s.id.unwrap(),
                gateway: "gw".into(),
                degree,
                score: sc,
            });
        }
        out.sort_by(|a, b| {
            (a.degree as u8, -a.score, a.service_id)
                .partial_cmp(&(b.degree as u8, -b.score, b.service_id))
                .unwrap()
        });
        out.truncate(r.max_results);
        out
    }

    fn arb_request() -> impl Strategy<Value = DiscoveryRequest> {
        (
            0..10usize,
            proptest::collection::btree_set(prop_oneof![Just("x"), Just("y"), Just("w")], 0..3),
            proptest::option::of((0.0..100.0f64, prop_oneof![Just(Comparator::Lt), Just(Comparator::Ge)])),
            prop_oneof![Just(0.0), Just(0.3), Just(0.5), Just(0.6), Just(0.8), Just(1.0)],
            1..40usize,
        )
            .prop_map(|(c, kws, qos, minsim, k)| {
                let mut r = DiscoveryRequest::new(t_names()[c]);
                r.keywords = kws.into_iter().map(String::from).collect();
                if let Some((bound, op)) = qos {
                    r = r.constraint(QosField::DelayMs, op, bound);
                }
                r.min_similarity = minsim;
                r.max_results = k;
                r
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn index_path_equals_scan(
            concepts in proptest::collection::vec((0..10usize, 0.0..100.0f64, 0.0..10.0f64), 0..300),
            r in arb_request(),
        ) {
            let d = registry(&concepts);
            prop_assert_eq!(matchmake(&r, &d, "gw", MatchWeights::default()).unwrap(), scan(&r, &d));
        }

        #[test]
        fn raising_threshold_never_adds(
            concepts in proptest::collection::vec((0..10usize, 0.0..100.0f64, 0.0..10.0f64), 0..100),
            r in arb_request(),
            bump in 0.0..0.5f64,
        ) {
            let d = registry(&concepts);
            let mut all = r.clone();
            all.max_results = usize::MAX;
            let mut strict = all.clone();
            strict.min_similarity = (all.min_similarity + bump).min(1.0);
            let loose: BTreeSet<_> = matchmake(&all, &d, "gw", MatchWeights::default()).unwrap()
                .into_iter().map(|m| m.service_id).collect();
            let tight: BTreeSet<_> = matchmake(&strict, &d, "gw", MatchWeights::default()).unwrap()
                .into_iter().map(|m| m.service_id).collect();
            prop_assert!(tight.is_subset(&loose));
        }

        #[test]
        fn results_respect_invariants(
            concepts in proptest::collection::vec((0..10usize, 0.0..100.0f64, 0.0..10.0f64), 0..100),
            r in arb_request(),
        ) {
            let d = registry(&concepts);
            let first = matchmake(&r, &d, "gw", MatchWeights::default()).unwrap();
            prop_assert_eq!(&first, &matchmake(&r, &d, "gw", MatchWeights::default()).unwrap());
            for m in &first {
                prop_assert!(m.score >= r.min_similarity);
                prop_assert!((0.0..=1.0).contains(&m.score));
                if m.degree == Degree::Exact {
                    prop_assert_eq!(m.score, 1.0);
                }
            }
        }
    }
}
