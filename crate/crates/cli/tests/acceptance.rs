//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any of them fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use fogdisc_core::cloud::{
    aggregate_qos, classify, compose, optimize_exhaustive, rank_members, Candidate, CloudConfig, CloudNode,
    CompositionPlan, CompositionRequest, PlanOptions, UtilityScale,
};
use fogdisc_core::coap::{
    decode_message, encode_message, parse_links, serialize_links, CoapMessage, CoapOption, Code, DecodeError,
    LinkEntry, MessageType, CF_JSON,
};
use fogdisc_core::directory::Directory;
use fogdisc_core::gateway::{Gateway, GatewayConfig, HttpRequest, Registered};
use fogdisc_core::matchmaker::{matchmake, Degree, DiscoveryRequest, MatchWeights, QosConstraint};
use fogdisc_core::model::{
    decode_registration, encode_description, encode_registration, Comparator, Description, IdKind, Identifier,
    Location, QosField, QosProfile, ServiceDescription, ThingDescription,
};
use fogdisc_core::net::Timer;
use fogdisc_core::ontology::{evaluate, load_taxonomy, Binding, QueryTerm, SelectQuery, Taxonomy, Term, Triple};
use fogdisc_core::ontology::{Filter, TriplePattern};
use fogdisc_core::overlay::{hash_key, OverlayConfig};
use fogdisc_core::ranking::WeightVector;
use fogdisc_core::sim::ring::{build_ring, distinct_addresses, DhtPeer, RingSnapshot};
use fogdisc_core::sim::{run_scenario, Action, Scenario, VirtualNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("codec round-trips", codec),
        ("query engine oracle", query_engine),
        ("matchmaker oracle", matchmaker),
        ("dht correctness", dht),
        ("churn audit", churn),
        ("end-to-end discovery", end_to_end),
        ("composition oracle", composition),
        ("cache behavior", cache),
        ("proxy parity", proxy_parity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(f).unwrap_or_else(|p| Err(panic_text(p.as_ref())));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn panic_text(p: &(dyn std::any::Any + Send)) -> String {
    let msg = p
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default();
    format!("panicked: {msg}")
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

fn random_bytes(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random()).collect()
}

fn holds(op: Comparator, lhs: f64, rhs: f64) -> bool {
    match op {
        Comparator::Lt => lhs < rhs,
        Comparator::Le => lhs <= rhs,
        Comparator::Gt => lhs > rhs,
        Comparator::Ge => lhs >= rhs,
        Comparator::Eq => lhs == rhs,
        Comparator::Ne => lhs != rhs,
    }
}

fn field_value(q: &QosProfile, f: QosField) -> f64 {
    match f {
        QosField::DelayMs => q.delay_ms,
        QosField::Price => q.price,
        QosField::Reliability => q.reliability,
        QosField::Availability => q.availability,
        QosField::SecurityLevel => f64::from(q.security_level),
    }
}

fn random_qos(rng: &mut ChaCha8Rng) -> QosProfile {
    let delay = f64::from(rng.random_range(1..200u32));
    let price = f64::from(rng.random_range(0..50u32)) / 10.0;
    let rel = f64::from(rng.random_range(50..=100u32)) / 100.0;
    let avail = f64::from(rng.random_range(50..=100u32)) / 100.0;
    QosProfile::new(delay, price, rel, avail, rng.random_range(0..=5)).unwrap()
}

// ---------------------------------------------------------------- codec

fn random_message(rng: &mut ChaCha8Rng) -> CoapMessage {
    let types = [
        MessageType::Confirmable,
        MessageType::NonConfirmable,
        MessageType::Acknowledgement,
        MessageType::Reset,
    ];
    let class = *pick(rng, &[0u8, 2, 4, 5]);
    let code = Code::new(class, rng.random_range(0..32));
    let mut m = CoapMessage::new(*pick(rng, &types), code, rng.random());
    let tkl = rng.random_range(0..=8);
    m.token = random_bytes(rng, tkl);
    let count = rng.random_range(0..8);
    let mut numbers: Vec<u16> = (0..count)
        .map(|_| match rng.random_range(0..3) {
            0 => rng.random_range(0..16),
            1 => rng.random_range(0..600),
            _ => rng.random(),
        })
        .collect();
    numbers.sort_unstable();
    for number in numbers {
        let len = match rng.random_range(0..10) {
            0 => rng.random_range(269..1200),
            1 | 2 => rng.random_range(13..269),
            _ => rng.random_range(0..13),
        };
        let value = random_bytes(rng, len);
        m.options.push(CoapOption { number, value });
    }
    if rng.random_bool(0.6) {
        let len = rng.random_range(1..200);
        m.payload = random_bytes(rng, len);
    }
    m
}

const TOKEN_CHARS: &str = "abcXYZ019!#$%&'*+-.^_`|~";
const VALUE_CHARS: &str = "abz09 \",;<>=\\\t/:é→_-.~";
const TARGET_CHARS: &str = "abz09/:.?=&;,\" é<";

fn random_string(rng: &mut ChaCha8Rng, alphabet: &str, min: usize, max: usize) -> String {
    let chars: Vec<char> = alphabet.chars().collect();
    let n = rng.random_range(min..=max);
    (0..n).map(|_| *pick(rng, &chars)).collect()
}

fn random_links(rng: &mut ChaCha8Rng) -> Vec<LinkEntry> {
    let n = rng.random_range(0..6);
    (0..n)
        .map(|_| {
            let mut e = LinkEntry::new(random_string(rng, TARGET_CHARS, 1, 20));
            for _ in 0..rng.random_range(0..5) {
                let k = random_string(rng, TOKEN_CHARS, 1, 6);
                let v = random_string(rng, VALUE_CHARS, 0, 12);
                e = e.param(k, v);
            }
            e
        })
        .collect()
}

fn decode_error_name(e: &DecodeError) -> &'static str {
    match e {
        DecodeError::Truncated => "truncated",
        DecodeError::BadVersion(_) => "bad-version",
        DecodeError::ReservedTkl(_) => "reserved-tkl",
        DecodeError::PayloadMarkerWithoutPayload => "empty-payload",
        DecodeError::InvalidOption => "invalid-option",
        DecodeError::InvalidCode(_) => "invalid-code",
    }
}

fn codec() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut corpus = Vec::new();
    for i in 0..10_000 {
        let m = random_message(&mut rng);
        let bytes = encode_message(&m).map_err(|e| format!("message {i} failed to encode: {e}"))?;
        let back = decode_message(&bytes).map_err(|e| format!("message {i} failed to decode: {e}"))?;
        ensure!(back == m, "message {i} changed in a round trip");
        if corpus.len() < 1000 {
            corpus.push(bytes);
        }
    }

    for i in 0..1000 {
        let links = random_links(&mut rng);
        let text = serialize_links(&links);
        let back = parse_links(&text).map_err(|e| format!("link list {i} {text:?}: {e}"))?;
        ensure!(back == links, "link list {i} changed in a round trip: {text:?}");
    }

    let mut kinds: BTreeMap<&str, usize> = BTreeMap::new();
    for i in 0..100_000usize {
        let input = if i % 2 == 0 {
            let len = rng.random_range(0..48);
            let mut b = random_bytes(&mut rng, len);
            if let Some(first) = b.first_mut() {
                if rng.random_bool(0.7) {
                    *first = (*first & 0x3F) | 0x40;
                }
            }
            b
        } else {
            let mut b = corpus[i % corpus.len()].clone();
            match rng.random_range(0..3) {
                0 => b.truncate(rng.random_range(0..=b.len())),
                1 => {
                    for _ in 0..rng.random_range(1..4) {
                        let at = rng.random_range(0..b.len());
                        b[at] = rng.random();
                    }
                }
                _ => b.extend(random_bytes(&mut rng, 3)),
            }
            b
        };
        let result = catch_unwind(AssertUnwindSafe(|| decode_message(&input)))
            .map_err(|_| format!("decoder panicked on {input:02x?}"))?;
        match result {
            Ok(m) => {
                let again = encode_message(&m).map_err(|e| format!("decoded value does not re-encode: {e}"))?;
                ensure!(decode_message(&again) == Ok(m), "decoded value is not stable: {input:02x?}");
                *kinds.entry("value").or_default() += 1;
            }
            Err(e) => *kinds.entry(decode_error_name(&e)).or_default() += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1} s");
    let kinds: Vec<String> = kinds.iter().map(|(k, n)| format!("{k} {n}")).collect();
    Ok(format!(
        "10000 messages and 1000 link lists round-trip; fuzz outcomes: {}; {secs:.1} s",
        kinds.join(", ")
    ))
}

// ---------------------------------------------------------------- query engine

const SUBJECTS: [&str; 6] = ["s:a", "s:b", "s:c", "s:d", "s:e", "s:f"];
const PREDICATES: [&str; 4] = ["p:x", "p:y", "p:z", "p:w"];
const LITERALS: [&str; 3] = ["red", "blue", "green"];
const NUMBERS: [f64; 5] = [-1.5, 0.0, 1.0, 2.5, 10.0];

fn random_object(rng: &mut ChaCha8Rng) -> Term {
    match rng.random_range(0..3) {
        0 => Term::Text(pick(rng, &SUBJECTS).to_string()),
        1 => Term::Text(pick(rng, &LITERALS).to_string()),
        _ => Term::Number(*pick(rng, &NUMBERS)),
    }
}

fn random_store(rng: &mut ChaCha8Rng) -> Vec<Triple> {
    let n = rng.random_range(0..=200);
    (0..n)
        .map(|_| {
            let s = pick(rng, &SUBJECTS).to_string();
            let p = pick(rng, &PREDICATES).to_string();
            let o = random_object(rng);
            Triple::new(s, p, o)
        })
        .collect()
}

fn random_select(rng: &mut ChaCha8Rng) -> SelectQuery {
    loop {
        let nvars = rng.random_range(1..=3);
        let var = |rng: &mut ChaCha8Rng| QueryTerm::Var(format!("v{}", rng.random_range(0..nvars)));
        let mut patterns = Vec::new();
        for _ in 0..rng.random_range(1..=3) {
            let subject = if rng.random_bool(0.6) {
                var(rng)
            } else if rng.random_bool(0.9) {
                QueryTerm::Iri(pick(rng, &SUBJECTS).to_string())
            } else {
                QueryTerm::Iri("s:missing".into())
            };
            let predicate = if rng.random_bool(0.3) {
                var(rng)
            } else {
                QueryTerm::Iri(pick(rng, &PREDICATES).to_string())
            };
            let object = if rng.random_bool(0.6) {
                var(rng)
            } else {
                match rng.random_range(0..3) {
                    0 => QueryTerm::Iri(pick(rng, &SUBJECTS).to_string()),
                    1 => QueryTerm::Literal(pick(rng, &LITERALS).to_string()),
                    _ => QueryTerm::Number(*pick(rng, &NUMBERS)),
                }
            };
            patterns.push(TriplePattern::new(subject, predicate, object));
        }
        let used: Vec<String> = patterns
            .iter()
            .flat_map(|p| [&p.subject, &p.predicate, &p.object])
            .filter_map(|t| match t {
                QueryTerm::Var(v) => Some(v.clone()),
                _ => None,
            })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if used.is_empty() {
            continue;
        }
        let mut filters = Vec::new();
        for _ in 0..rng.random_range(0..=2) {
            filters.push(Filter {
                var: pick(rng, &used).clone(),
                op: *pick(rng, &Comparator::ALL),
                value: f64::from(rng.random_range(-4..12i32)) / 2.0,
            });
        }
        let mut projected: Vec<String> = used.iter().filter(|_| rng.random_bool(0.6)).cloned().collect();
        if projected.is_empty() {
            projected.push(pick(rng, &used).clone());
        }
        if rng.random_bool(0.5) {
            projected.reverse();
        }
        return SelectQuery {
            projected,
            patterns,
            filters,
        };
    }
}

/// Tries every assignment of store terms to the query variables, each
/// variable ranging over the terms seen at every position it occurs in.
fn brute_force(q: &SelectQuery, store: &[Triple]) -> Vec<Binding> {
    let facts: BTreeSet<(Term, Term, Term)> = store
        .iter()
        .map(|t| (Term::Text(t.subject.clone()), Term::Text(t.predicate.clone()), t.object.clone()))
        .collect();
    let column = |i: usize| -> BTreeSet<Term> {
        facts
            .iter()
            .map(|f| match i {
                0 => f.0.clone(),
                1 => f.1.clone(),
                _ => f.2.clone(),
            })
            .collect()
    };
    let columns = [column(0), column(1), column(2)];
    let mut domains: BTreeMap<String, BTreeSet<Term>> = BTreeMap::new();
    for p in &q.patterns {
        for (i, t) in [&p.subject, &p.predicate, &p.object].into_iter().enumerate() {
            if let QueryTerm::Var(v) = t {
                let d = domains.entry(v.clone()).or_insert_with(|| columns[i].clone());
                *d = d.intersection(&columns[i]).cloned().collect();
            }
        }
    }
    let vars: Vec<(String, Vec<Term>)> = domains
        .into_iter()
        .map(|(v, d)| (v, d.into_iter().collect()))
        .collect();
    let instantiate = |t: &QueryTerm, a: &BTreeMap<String, Term>| match t {
        QueryTerm::Var(v) => a[v].clone(),
        QueryTerm::Iri(s) | QueryTerm::Literal(s) => Term::Text(s.clone()),
        QueryTerm::Number(n) => Term::Number(*n),
    };
    let mut rows: BTreeSet<Vec<Term>> = BTreeSet::new();
    let mut counters = vec![0usize; vars.len()];
    if vars.iter().any(|(_, d)| d.is_empty()) {
        return Vec::new();
    }
    loop {
        let a: BTreeMap<String, Term> = vars
            .iter()
            .zip(&counters)
            .map(|((v, d), &i)| (v.clone(), d[i].clone()))
            .collect();
        let matched = q.patterns.iter().all(|p| {
            facts.contains(&(
                instantiate(&p.subject, &a),
                instantiate(&p.predicate, &a),
                instantiate(&p.object, &a),
            ))
        });
        let kept = q.filters.iter().all(|f| match &a[&f.var] {
            Term::Number(n) => holds(f.op, *n, f.value),
            Term::Text(_) => false,
        });
        if matched && kept {
            rows.insert(q.projected.iter().map(|v| a[v].clone()).collect());
        }
        let mut j = 0;
        while j < counters.len() {
            counters[j] += 1;
            if counters[j] < vars[j].1.len() {
                break;
            }
            counters[j] = 0;
            j += 1;
        }
        if j == counters.len() {
            break;
        }
    }
    rows.into_iter()
        .map(|row| q.projected.iter().cloned().zip(row).collect())
        .collect()
}

fn query_engine() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut nonempty, mut rows) = (0, 0);
    for s in 0..200 {
        let store = random_store(&mut rng);
        for k in 0..20 {
            let q = random_select(&mut rng);
            ensure!(q.validate().is_ok(), "generated query is invalid: {q}");
            let got = evaluate(&q, &store);
            let want = brute_force(&q, &store);
            ensure!(got == want, "store {s} query {k} ({q}): {} rows, oracle {}", got.len(), want.len());
            nonempty += usize::from(!got.is_empty());
            rows += got.len();
        }
    }
    Ok(format!("4000 queries match the oracle ({nonempty} non-empty, {rows} rows)"))
}

// ---------------------------------------------------------------- trees

/// A concept tree with parent links; the oracle side of taxonomy checks.
struct Tree {
    names: Vec<String>,
    parent: Vec<Option<usize>>,
}

impl Tree {
    fn random(rng: &mut ChaCha8Rng, n: usize, max_depth: u32) -> Self {
        let mut t = Tree {
            names: vec!["K00".into()],
            parent: vec![None],
        };
        while t.names.len() < n {
            let i = t.names.len();
            let p = if rng.random_bool(0.5) {
                rng.random_range(0..i)
            } else {
                rng.random_range(i.saturating_sub(3)..i)
            };
            if t.depth(p) >= max_depth {
                continue;
            }
            t.names.push(format!("K{i:02}"));
            t.parent.push(Some(p));
        }
        t
    }

    fn text(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.names.iter().enumerate() {
            match self.parent[i] {
                None => out.push_str(n),
                Some(p) => out.push_str(&format!("{n} < {}", self.names[p])),
            }
            out.push('\n');
        }
        out
    }

    fn taxonomy(&self) -> Taxonomy {
        load_taxonomy(&self.text()).unwrap()
    }

    fn idx(&self, name: &str) -> usize {
        self.names.iter().position(|n| n == name).unwrap()
    }

    fn depth(&self, i: usize) -> u32 {
        self.parent[i].map_or(1, |p| 1 + self.depth(p))
    }

    /// `i` and everything above it, nearest first.
    fn chain(&self, i: usize) -> Vec<usize> {
        let mut out = vec![i];
        while let Some(p) = self.parent[*out.last().unwrap()] {
            out.push(p);
        }
        out
    }

    fn subsumes(&self, a: usize, d: usize) -> bool {
        self.chain(d).contains(&a)
    }

    fn lca(&self, a: usize, b: usize) -> usize {
        let up = self.chain(b);
        self.chain(a).into_iter().find(|x| up.contains(x)).unwrap()
    }

    fn wu_palmer(&self, a: usize, b: usize) -> f64 {
        2.0 * f64::from(self.depth(self.lca(a, b))) / f64::from(self.depth(a) + self.depth(b))
    }
}

// ---------------------------------------------------------------- matchmaker

const KEYWORDS: [&str; 5] = ["fast", "cheap", "eco", "indoor", "secure"];
const FIELDS: [QosField; 5] = [
    QosField::DelayMs,
    QosField::Price,
    QosField::Reliability,
    QosField::Availability,
    QosField::SecurityLevel,
];

fn random_keywords(rng: &mut ChaCha8Rng, p: f64) -> BTreeSet<String> {
    KEYWORDS.iter().filter(|_| rng.random_bool(p)).map(|k| k.to_string()).collect()
}

fn random_constraint(rng: &mut ChaCha8Rng) -> QosConstraint {
    let field = *pick(rng, &FIELDS);
    let bound = match field {
        QosField::DelayMs => f64::from(rng.random_range(0..200u32)),
        QosField::Price => f64::from(rng.random_range(0..50u32)) / 10.0,
        QosField::Reliability | QosField::Availability => f64::from(rng.random_range(50..=100u32)) / 100.0,
        QosField::SecurityLevel => f64::from(rng.random_range(0..=5u32)),
    };
    QosConstraint::new(field, *pick(rng, &Comparator::ALL), bound)
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

fn rank_of(d: Degree) -> u8 {
    match d {
        Degree::Exact => 0,
        Degree::Plugin => 1,
        Degree::Subsume => 2,
        Degree::Similar => 3,
        Degree::Fail => 4,
    }
}

/// Scans every service without the index.
fn full_scan(tree: &Tree, services: &[ServiceDescription], r: &DiscoveryRequest) -> Vec<(Identifier, Degree, f64)> {
    let a = tree.idx(&r.concept);
    let mut out = Vec::new();
    for s in services {
        if !r
            .qos_constraints
            .iter()
            .all(|c| holds(c.op, field_value(&s.qos, c.field), c.bound))
        {
            continue;
        }
        let b = tree.idx(&s.functional_concept);
        let sim = tree.wu_palmer(a, b);
        let score = if a == b {
            1.0
        } else if r.keywords.is_empty() {
            sim
        } else {
            0.7 * sim + 0.3 * jaccard(&r.keywords, &s.keywords)
        };
        let degree = if a == b {
            Degree::Exact
        } else if sim < r.min_similarity {
            Degree::Fail
        } else if tree.subsumes(a, b) {
            Degree::Plugin
        } else if tree.subsumes(b, a) {
            Degree::Subsume
        } else {
            Degree::Similar
        };
        if degree != Degree::Fail && score >= r.min_similarity {
            out.push((s.id.unwrap(), degree, score));
        }
    }
    out.sort_by(|x, y| {
        rank_of(x.1)
            .cmp(&rank_of(y.1))
            .then(y.2.total_cmp(&x.2))
            .then(x.0.cmp(&y.0))
    });
    out.truncate(r.max_results);
    out
}

fn taxonomy_properties(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut checks = 0;
    for k in 0..100 {
        let n = rng.random_range(2..40);
        let tree = Tree::random(rng, n, 8);
        let t = tree.taxonomy();
        for a in 0..n {
            let (na, da) = (&tree.names[a], tree.depth(a));
            ensure!(t.depth(na).unwrap() == da, "tree {k}: depth of {na}");
            ensure!(t.subsumes(&tree.names[0], na).unwrap(), "tree {k}: root must subsume {na}");
            for b in 0..n {
                let nb = &tree.names[b];
                let sim = t.similarity(na, nb).unwrap();
                ensure!(sim == t.similarity(nb, na).unwrap(), "tree {k}: asymmetric {na} {nb}");
                ensure!((0.0..=1.0).contains(&sim), "tree {k}: out of range {na} {nb}");
                ensure!((sim == 1.0) == (a == b), "tree {k}: similarity 1 iff identical ({na} {nb})");
                ensure!((sim - tree.wu_palmer(a, b)).abs() < 1e-12, "tree {k}: Wu-Palmer {na} {nb}");
                ensure!(t.lca(na, nb).unwrap() == tree.names[tree.lca(a, b)], "tree {k}: lca {na} {nb}");
                let sub = t.subsumes(na, nb).unwrap();
                ensure!(sub == tree.subsumes(a, b), "tree {k}: subsumes {na} {nb}");
                if sub && a != b {
                    ensure!(!t.subsumes(nb, na).unwrap(), "tree {k}: antisymmetry {na} {nb}");
                }
                checks += 1;
            }
            let th = f64::from(rng.random_range(0..=10u32)) / 10.0;
            let got: BTreeSet<&str> = t.similar_to(na, th).unwrap().into_iter().collect();
            let want: BTreeSet<&str> = (0..n)
                .filter(|&b| tree.wu_palmer(a, b) >= th)
                .map(|b| tree.names[b].as_str())
                .collect();
            ensure!(got == want, "tree {k}: similar_to({na}, {th})");
        }
        for _ in 0..200 {
            let (a, b, c) = (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n));
            let (na, nb, nc) = (&tree.names[a], &tree.names[b], &tree.names[c]);
            if t.subsumes(na, nb).unwrap() && t.subsumes(nb, nc).unwrap() {
                ensure!(t.subsumes(na, nc).unwrap(), "tree {k}: transitivity {na} {nb} {nc}");
            }
        }
    }
    Ok(checks)
}

fn matchmaker() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut requests, mut results) = (0, 0);
    for reg in 0..50 {
        let n = rng.random_range(5..40);
        let tree = Tree::random(&mut rng, n, 8);
        let tax = Arc::new(tree.taxonomy());
        let mut dir = Directory::new(1, tax.clone());
        let here = Location::new(45.0, 5.0).unwrap();
        let thing = dir.post_thing(ThingDescription::new("dev", "K00", here), 0).unwrap();
        let count = rng.random_range(0..=300);
        for i in 0..count {
            let concept = pick(&mut rng, &tree.names).clone();
            let mut s = ServiceDescription::new(concept, format!("/s{i}"), random_qos(&mut rng));
            s.thing_id = Some(thing);
            s.keywords = random_keywords(&mut rng, 0.3);
            dir.post_service(s).map_err(|e| e.to_string())?;
        }
        let services: Vec<ServiceDescription> = dir.services().cloned().collect();
        for q in 0..20 {
            let mut r = DiscoveryRequest::new(pick(&mut rng, &tree.names).clone());
            r.keywords = random_keywords(&mut rng, 0.25);
            r.min_similarity = *pick(&mut rng, &[0.0, 0.3, 0.5, 0.5, 0.7, 0.9, 1.0]);
            r.max_results = if rng.random_bool(0.5) { 10 } else { rng.random_range(1..=40) };
            for _ in 0..rng.random_range(0..=2) {
                r.qos_constraints.push(random_constraint(&mut rng));
            }
            let got = matchmake(&r, &dir, "gw", MatchWeights::default()).map_err(|e| e.to_string())?;
            let want = full_scan(&tree, &services, &r);
            ensure!(got.len() == want.len(), "registry {reg} request {q}: {} results, oracle {}", got.len(), want.len());
            for (i, (g, w)) in got.iter().zip(&want).enumerate() {
                ensure!(
                    g.service_id == w.0 && g.degree == w.1 && (g.score - w.2).abs() < 1e-12,
                    "registry {reg} request {q} position {i}: {} {:?} {} vs oracle {} {:?} {}",
                    g.service_id,
                    g.degree,
                    g.score,
                    w.0,
                    w.1,
                    w.2
                );
            }
            requests += 1;
            results += got.len();
        }
    }
    let checks = taxonomy_properties(&mut rng)?;
    Ok(format!(
        "{requests} requests over 50 registries agree with the full scan ({results} results); {checks} pairwise taxonomy checks on 100 trees"
    ))
}

// ---------------------------------------------------------------- dht

fn sorted_successor(ids: &[u64], key: u64) -> u64 {
    ids.iter()
        .copied()
        .filter(|&i| i >= key)
        .min()
        .unwrap_or_else(|| ids.iter().copied().min().unwrap())
}

fn lookup(net: &mut VirtualNet, from: &str, key: u64) -> (u64, u32) {
    let (l, _) = net
        .with_node(from, net.now(), |n, t| {
            let peer = n.as_any_mut().downcast_mut::<DhtPeer>().unwrap();
            peer.overlay.find_successor(key, t).unwrap()
        })
        .unwrap();
    (l.node.id, l.hops)
}

fn hop_bound(n: usize) -> u32 {
    (n as f64).log2().ceil() as u32 + 3
}

fn dht() -> Outcome {
    let (mut total, mut within) = (0usize, 0usize);
    for n in [1usize, 2, 3, 8, 16] {
        let addrs = distinct_addresses("peer", n, 8);
        let config = OverlayConfig {
            m: 8,
            ..OverlayConfig::default()
        };
        let (mut net, _) = build_ring(&addrs, config, 1, 4 * n + 8);
        let ids: Vec<u64> = addrs.iter().map(|a| hash_key(a, 8)).collect();
        for key in 0..256u64 {
            let from = &addrs[key as usize % n];
            let (owner, hops) = lookup(&mut net, from, key);
            ensure!(owner == sorted_successor(&ids, key), "m=8 N={n} key {key}: got {owner}");
            total += 1;
            within += usize::from(hops <= hop_bound(n));
        }
    }
    let addrs = distinct_addresses("gw", 32, 16);
    let config = OverlayConfig {
        m: 16,
        ..OverlayConfig::default()
    };
    let (mut net, _) = build_ring(&addrs, config, 5, 200);
    let ids: Vec<u64> = addrs.iter().map(|a| hash_key(a, 16)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..200 {
        let key = rng.random_range(0..1u64 << 16);
        let (owner, hops) = lookup(&mut net, &addrs[i % 32], key);
        ensure!(owner == sorted_successor(&ids, key), "m=16 N=32 key {key}: got {owner}");
        total += 1;
        within += usize::from(hops <= hop_bound(32));
    }
    let share = within as f64 / total as f64;
    ensure!(share >= 0.99, "only {within} of {total} lookups within the hop bound");
    Ok(format!("{total} lookups match the sorted ring; {within} within ceil(log2 N)+3 hops ({:.1}%)", share * 100.0))
}

// ---------------------------------------------------------------- churn

/// Ring, residency and completeness checks done from scratch.
fn audit_ring(s: &RingSnapshot) -> Result<usize, String> {
    let ids: Vec<u64> = s.nodes.iter().map(|n| n.id).collect();
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    let n = sorted.len();
    ensure!(n > 0, "empty ring");
    let mut records = 0;
    for node in &s.nodes {
        let at = sorted.iter().position(|&i| i == node.id).unwrap();
        ensure!(node.successor.id == sorted[(at + 1) % n], "{} has a wrong successor", node.addr);
        let pred = sorted[(at + n - 1) % n];
        ensure!(
            node.predecessor.as_ref().map(|p| p.id) == Some(pred) || (n == 1 && node.predecessor.is_none()),
            "{} has a wrong predecessor",
            node.addr
        );
        for r in &node.records {
            ensure!(r.key == hash_key(&r.concept, s.m), "{} keyed wrongly", r.concept);
            ensure!(
                sorted_successor(&ids, r.key) == node.id,
                "{} stored on {} instead of its key's successor",
                r.concept,
                node.addr
            );
            records += 1;
        }
    }
    for node in &s.nodes {
        for c in &node.concepts {
            let owner = sorted_successor(&ids, hash_key(c, s.m));
            let held = s
                .nodes
                .iter()
                .filter(|o| o.id == owner)
                .flat_map(|o| &o.records)
                .any(|r| r.concept == *c && r.holders.contains_key(&node.addr));
            ensure!(held, "{c} of {} is not advertised at its owner", node.addr);
        }
    }
    Ok(records)
}

fn churn() -> Outcome {
    let path = scenarios().join("churn.json");
    let s = Scenario::load(&path).map_err(|e| e.to_string())?.scenario;
    let count = |f: fn(&Action) -> bool| s.timeline.iter().filter(|t| f(&t.action)).count();
    let joins = count(|a| matches!(a, Action::JoinGateway { .. }));
    let leaves = count(|a| matches!(a, Action::LeaveGateway { .. }));
    let kills = count(|a| matches!(a, Action::KillGateway { .. }));
    let queries = count(|a| matches!(a, Action::Query { .. }));
    ensure!(
        (s.gateways.len() - joins, joins, leaves, kills, queries) == (8, 5, 3, 1, 100),
        "scenario shape is {} initial, {joins} joins, {leaves} leaves, {kills} kills, {queries} queries",
        s.gateways.len() - joins
    );
    let last_churn = s
        .timeline
        .iter()
        .filter(|t| {
            matches!(
                t.action,
                Action::JoinGateway { .. } | Action::LeaveGateway { .. } | Action::KillGateway { .. }
            )
        })
        .map(|t| t.at_ms)
        .max()
        .unwrap_or(0);
    ensure!(
        s.timeline
            .iter()
            .any(|t| t.at_ms > last_churn && matches!(t.action, Action::Audit { republish: true })),
        "no republishing audit after the last membership change"
    );

    let m = run_scenario(&path, 42).map_err(|e| e.to_string())?;
    let records = audit_ring(&m.ring)?;
    let stable: Vec<_> = m.queries.iter().filter(|q| q.stabilized).collect();
    ensure!(!stable.is_empty(), "no query was issued on a stabilized ring");
    let ok = stable.iter().filter(|q| q.success).count();
    let rate = ok as f64 / stable.len() as f64;
    ensure!(rate >= 0.95, "stabilized success rate {ok}/{} = {rate:.3}", stable.len());
    Ok(format!(
        "{} nodes, {records} pointer records resident and complete; {ok}/{} stabilized queries succeed",
        m.ring.nodes.len(),
        stable.len()
    ))
}

// ---------------------------------------------------------------- end to end

fn end_to_end() -> Outcome {
    let path = scenarios().join("e2e.json");
    let s = Scenario::load(&path).map_err(|e| e.to_string())?.scenario;
    let m_bits = s.gateways[0].overlay_m;
    let devices: BTreeMap<&str, &_> = s.devices.iter().map(|d| (d.name.as_str(), d)).collect();
    let mut registered_at: BTreeMap<String, u64> = BTreeMap::new();
    let mut services = 0;
    for t in &s.timeline {
        if let Action::Register { device } = &t.action {
            let text = devices[device.as_str()].registration.to_string();
            let (_, svcs) = decode_registration(&text).map_err(|e| e.to_string())?;
            services += svcs.len();
            for sv in svcs {
                registered_at.entry(sv.functional_concept).or_insert(t.at_ms);
            }
        }
    }
    let queries = s.timeline.iter().filter(|t| matches!(t.action, Action::Query { .. })).count();
    ensure!(
        (s.gateways.len(), services, queries) == (8, 100, 50),
        "scenario has {} gateways, {services} services, {queries} queries",
        s.gateways.len()
    );

    let a = run_scenario(&path, 42).map_err(|e| e.to_string())?;
    let b = run_scenario(&path, 42).map_err(|e| e.to_string())?;
    ensure!(a.dump() == b.dump(), "two runs with seed 42 differ");
    let mut remote = 0;
    for q in &a.queries {
        let concept = q
            .query
            .split('&')
            .find_map(|p| p.strip_prefix("rt="))
            .ok_or_else(|| format!("query without rt: {}", q.query))?;
        let when = registered_at.get(concept).copied();
        ensure!(when.is_some_and(|w| w < q.at_ms), "{} asks for an unregistered concept", q.query);
        ensure!(q.links >= 1, "{} on {} returned no links", q.query, q.gateway);
        if q.remote {
            remote += 1;
            ensure!(q.overlay_hops <= m_bits, "{} took {} hops", q.query, q.overlay_hops);
        } else {
            ensure!(q.overlay_hops == 0, "local hit {} took {} hops", q.query, q.overlay_hops);
        }
    }
    ensure!(a.queries.len() == 50, "{} queries recorded", a.queries.len());
    Ok(format!(
        "50 queries return links ({remote} remote within {m_bits} hops, {} local with 0 hops); repeat run identical",
        50 - remote
    ))
}

// ---------------------------------------------------------------- composition

fn oracle_aggregate(profiles: &[QosProfile]) -> QosProfile {
    let mut q = QosProfile {
        delay_ms: 0.0,
        price: 0.0,
        reliability: 1.0,
        availability: 1.0,
        security_level: 5,
    };
    for p in profiles {
        q.delay_ms += p.delay_ms;
        q.price += p.price;
        q.reliability *= p.reliability;
        q.availability *= p.availability;
        q.security_level = q.security_level.min(p.security_level);
    }
    q
}

fn close(a: &QosProfile, b: &QosProfile) -> bool {
    FIELDS
        .iter()
        .all(|&f| (field_value(a, f) - field_value(b, f)).abs() <= 1e-9)
}

struct Instance {
    tree: Tree,
    services: Vec<(BTreeSet<usize>, BTreeSet<usize>)>,
    available: BTreeSet<usize>,
    goal: BTreeSet<usize>,
    max_stages: usize,
}

impl Instance {
    fn covered(&self, have: &BTreeSet<usize>, want: &BTreeSet<usize>) -> bool {
        want.iter().all(|&w| have.iter().any(|&h| self.tree.subsumes(w, h)))
    }

    /// Length of the shortest sequence of distinct services that runs and
    /// covers the goal, by exhaustive search.
    fn shortest(&self) -> Option<usize> {
        let mut best = None;
        let mut used = vec![false; self.services.len()];
        self.search(&self.available.clone(), 0, &mut used, &mut best);
        best
    }

    fn search(&self, avail: &BTreeSet<usize>, len: usize, used: &mut [bool], best: &mut Option<usize>) {
        if best.is_some_and(|b| b <= len) {
            return;
        }
        if self.covered(avail, &self.goal) {
            *best = Some(len);
            return;
        }
        if len == self.max_stages {
            return;
        }
        for i in 0..self.services.len() {
            if used[i] || !self.covered(avail, &self.services[i].0) {
                continue;
            }
            used[i] = true;
            let next: BTreeSet<usize> = avail.union(&self.services[i].1).copied().collect();
            self.search(&next, len + 1, used, best);
            used[i] = false;
        }
    }

    fn runs(&self, seq: &[usize]) -> bool {
        let mut avail = self.available.clone();
        for &i in seq {
            if !self.covered(&avail, &self.services[i].0) {
                return false;
            }
            avail.extend(self.services[i].1.iter().copied());
        }
        seq.len() <= self.max_stages && self.covered(&avail, &self.goal)
    }
}

fn names(tree: &Tree, set: &BTreeSet<usize>) -> BTreeSet<String> {
    set.iter().map(|&i| tree.names[i].clone()).collect()
}

fn some_concepts(rng: &mut ChaCha8Rng, n: usize, min: usize, max: usize) -> BTreeSet<usize> {
    let k = rng.random_range(min..=max);
    (0..k).map(|_| rng.random_range(1..n)).collect()
}

/// Every member choice of every plan, as candidate lists.
fn substitutions(p: &PlanOptions) -> Vec<Vec<&Candidate>> {
    let mut out: Vec<Vec<&Candidate>> = vec![Vec::new()];
    for stage in &p.stages {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                stage.iter().map(move |c| {
                    let mut v = prefix.clone();
                    v.push(c);
                    v
                })
            })
            .collect();
    }
    out
}

fn composition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut solvable, mut substitutions_checked) = (0, 0);
    for k in 0..100 {
        let n = rng.random_range(6..16);
        let tree = Tree::random(&mut rng, n, 4);
        let tax = tree.taxonomy();
        let count = rng.random_range(1..=8);
        let mut services: Vec<(BTreeSet<usize>, BTreeSet<usize>)> = Vec::new();
        let mut cands = Vec::new();
        for i in 0..count {
            let (concept, outputs) = if i > 0 && rng.random_bool(0.5) {
                let j = rng.random_range(0..i);
                let c: &Candidate = &cands[j];
                (c.service.functional_concept.clone(), services[j].1.clone())
            } else {
                (tree.names[rng.random_range(1..n)].clone(), some_concepts(&mut rng, n, 1, 2))
            };
            let inputs = some_concepts(&mut rng, n, 0, 2);
            let gw = 1 + i as u32 % 3;
            let id = Identifier::new(IdKind::Service, gw, i as u32 + 1);
            let mut s = ServiceDescription::new(concept, format!("/s{i}"), random_qos(&mut rng));
            s.id = Some(id);
            s.inputs = names(&tree, &inputs);
            s.outputs = names(&tree, &outputs);
            cands.push(Candidate {
                gateway: format!("gw-{gw}"),
                id,
                service: s,
            });
            services.push((inputs, outputs));
        }
        let inst = Instance {
            available: some_concepts(&mut rng, n, 0, 2),
            goal: some_concepts(&mut rng, n, 1, 2),
            max_stages: rng.random_range(1..=4),
            services,
            tree,
        };
        let mut raw = BTreeMap::new();
        for f in FIELDS {
            if rng.random_bool(0.7) {
                raw.insert(f, f64::from(rng.random_range(1..10u32)));
            }
        }
        raw.entry(QosField::DelayMs).or_insert(1.0);
        let w = WeightVector::new(&raw).map_err(|e| e.to_string())?;
        let mut r = CompositionRequest::new(names(&inst.tree, &inst.available), names(&inst.tree, &inst.goal));
        r.max_stages = inst.max_stages;
        r.qos_weights = w;

        let mut clusters = classify(&cands);
        rank_members(&mut clusters, &w);
        let found = compose(&tax, &r, &clusters).ok();
        let shortest = inst.shortest();
        ensure!(
            found.is_some() == shortest.is_some(),
            "instance {k}: compose found a plan: {}, exhaustive search: {}",
            found.is_some(),
            shortest.is_some()
        );
        let Some(plans) = found else { continue };
        solvable += 1;
        let index_of = |c: &Candidate| cands.iter().position(|x| x.id == c.id).unwrap();
        let scale = UtilityScale::new(&plans);
        let mut best = f64::NEG_INFINITY;
        for p in &plans {
            ensure!(Some(p.stages.len()) == shortest, "instance {k}: plan of {} stages, shortest {shortest:?}", p.stages.len());
            for sub in substitutions(p) {
                let seq: Vec<usize> = sub.iter().map(|c| index_of(c)).collect();
                ensure!(inst.runs(&seq), "instance {k}: plan {seq:?} does not run");
                let profiles: Vec<QosProfile> = sub.iter().map(|c| c.service.qos).collect();
                best = best.max(scale.utility(&oracle_aggregate(&profiles), &w));
                substitutions_checked += 1;
            }
        }
        let opt = optimize_exhaustive(&plans, &w).ok_or_else(|| format!("instance {k}: optimizer gave nothing"))?;
        ensure!(
            (opt.utility - best).abs() <= 1e-12,
            "instance {k}: optimizer utility {} vs enumeration maximum {best}",
            opt.utility
        );
        let chosen: Vec<QosProfile> = opt.chosen.iter().map(|c| c.service.qos).collect();
        ensure!(close(&opt.plan.aggregate, &oracle_aggregate(&chosen)), "instance {k}: plan aggregate");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    ensure!(aggregate_qos(&[]).is_err(), "an empty plan must not aggregate");
    for i in 0..1000 {
        let len = rng.random_range(1..=8);
        let profiles: Vec<QosProfile> = (0..len).map(|_| random_qos(&mut rng)).collect();
        let got = aggregate_qos(&profiles).map_err(|e| e.to_string())?;
        ensure!(close(&got, &oracle_aggregate(&profiles)), "aggregate {i} differs: {got:?}");
    }
    Ok(format!(
        "100 instances ({solvable} solvable) agree with exhaustive search; {substitutions_checked} substitutions checked; 1000 aggregates within 1e-9"
    ))
}

// ---------------------------------------------------------------- cache

const CLOUD_TAX: &str = "\
Thing
Data < Thing
Temperature < Data
Celsius < Temperature
Alert < Data
Message < Data
Func < Thing
Sensor < Func
TemperatureSensor < Sensor
Detector < Func
Notifier < Func
";

fn io_service(concept: &str, path: &str, inputs: &[&str], outputs: &[&str], delay: f64) -> ServiceDescription {
    let mut s = ServiceDescription::new(concept, path, QosProfile::new(delay, 1.0, 0.95, 0.95, 3).unwrap());
    s.inputs = inputs.iter().map(|c| c.to_string()).collect();
    s.outputs = outputs.iter().map(|c| c.to_string()).collect();
    s
}

struct World {
    net: VirtualNet,
    gws: Vec<String>,
    t: u64,
}

impl World {
    fn new(n: usize) -> Self {
        let tax = Arc::new(load_taxonomy(CLOUD_TAX).unwrap());
        let mut net = VirtualNet::new(3);
        net.add_cloud_node(Box::new(CloudNode::new(CloudConfig::new("cloud", "inline"), tax.clone())));
        let gws: Vec<String> = (1..=n).map(|i| format!("gw-{i}")).collect();
        let mut t = 0;
        for (i, a) in gws.iter().enumerate() {
            let mut cfg = GatewayConfig::new(i as u32 + 1, a.clone(), "inline");
            cfg.overlay_m = 10;
            cfg.cloud = Some("cloud".into());
            if i > 0 {
                cfg.bootstrap = Some(gws[0].clone());
            }
            net.add_node(Box::new(Gateway::new(cfg, tax.clone())));
            let (res, done) = net
                .with_node(a, t, |n, tr| n.as_any_mut().downcast_mut::<Gateway>().unwrap().boot(tr))
                .unwrap();
            res.unwrap();
            t = done;
        }
        Self { net, gws, t }
    }

    fn call(&mut self, to: &str, req: CoapMessage) -> CoapMessage {
        let (resp, done) = self.net.client_call("client", to, req, self.t);
        self.t = done;
        resp.unwrap()
    }

    fn register(&mut self, gw: usize, services: &[ServiceDescription]) -> Registered {
        let thing = ThingDescription::new("dev", "Sensor", Location::new(45.0, 5.0).unwrap());
        let body = encode_registration(&thing, services);
        let req = CoapMessage::request(Code::POST, "/rd", None).with_payload(CF_JSON, body.into_bytes());
        let resp = self.call(&self.gws[gw].clone(), req);
        assert_eq!(resp.code, Code::CREATED);
        serde_json::from_slice(&resp.payload).unwrap()
    }

    fn remove(&mut self, gw: usize, thing: Identifier) {
        let req = CoapMessage::request(Code::DELETE, &format!("/rd/{thing}"), None);
        let resp = self.call(&self.gws[gw].clone(), req);
        assert_eq!(resp.code, Code::DELETED);
    }

    fn compose(&mut self, r: &CompositionRequest) -> (Code, Option<CompositionPlan>) {
        let body = serde_json::to_vec(r).unwrap();
        let req = CoapMessage::request(Code::POST, "/compose", None).with_payload(CF_JSON, body);
        let resp = self.call("cloud", req);
        let plan = (resp.code == Code::CONTENT).then(|| serde_json::from_slice(&resp.payload).unwrap());
        (resp.code, plan)
    }

    fn cloud(&self) -> &CloudNode {
        self.net.node_as::<CloudNode>("cloud").unwrap()
    }

    /// Gateway fan-out messages seen on the wire.
    fn fanout_on_wire(&self) -> u64 {
        self.net.stats.by_type.get("POST /rd-query").copied().unwrap_or(0)
    }
}

fn cache() -> Outcome {
    let mut w = World::new(3);
    w.register(0, &[io_service("TemperatureSensor", "/temp", &[], &["Celsius"], 10.0)]);
    let fast = w.register(1, &[io_service("Detector", "/detect", &["Temperature"], &["Alert"], 20.0)]);
    let slow = w.register(
        2,
        &[
            io_service("Detector", "/detect", &["Temperature"], &["Alert"], 80.0),
            io_service("Notifier", "/notify", &["Alert"], &["Message"], 15.0),
        ],
    );
    let alert = CompositionRequest::new(Vec::<String>::new(), vec!["Alert".to_string()]);

    let (code, first) = w.compose(&alert);
    ensure!(code == Code::CONTENT, "first composition failed with {code}");
    let first = first.unwrap();
    let (wire, stats) = (w.fanout_on_wire(), w.cloud().stats);
    ensure!(wire > 0 && stats.fanout_messages > 0, "first composition did no fan-out");
    let (_, second) = w.compose(&alert);
    let after = w.cloud().stats;
    ensure!(second.as_ref() == Some(&first), "repeated request returned a different plan");
    ensure!(after.cache_hits == stats.cache_hits + 1, "repeated request was not a cache hit");
    ensure!(
        after.fanout_messages == stats.fanout_messages && w.fanout_on_wire() == wire,
        "cache hit sent {} fan-out messages",
        w.fanout_on_wire() - wire
    );

    w.remove(1, fast.thing);
    ensure!(w.cloud().stats.repairs == 1, "removal with a sibling did not repair");
    let wire = w.fanout_on_wire();
    let (_, repaired) = w.compose(&alert);
    let repaired = repaired.ok_or("repaired plan not served")?;
    ensure!(
        repaired.stages.iter().any(|s| s.service == slow.services[0]),
        "repaired plan does not use the sibling detector"
    );
    ensure!(w.fanout_on_wire() == wire, "repaired plan was recomputed instead of served");

    w.remove(2, slow.thing);
    ensure!(w.cloud().stats.evictions == 1, "removal without a sibling did not evict");
    let misses = w.cloud().stats.cache_misses;
    let (code, _) = w.compose(&alert);
    ensure!(w.cloud().stats.cache_misses == misses + 1, "request after eviction did not miss the cache");
    ensure!(w.fanout_on_wire() > wire, "request after eviction did not fan out");
    ensure!(code == Code::NOT_FOUND, "no detector left, yet got {code}");
    w.register(0, &[io_service("Detector", "/d2", &["Celsius"], &["Alert"], 5.0)]);
    let (code, recomputed) = w.compose(&alert);
    ensure!(code == Code::CONTENT && recomputed.is_some_and(|p| p.satisfied), "recompute failed: {code}");
    Ok("hit with zero fan-out; sibling repair served from cache; eviction then recompute".into())
}

// ---------------------------------------------------------------- proxy parity

const GW_TAX: &str = "\
Thing
Sensor < Thing
TemperatureSensor < Sensor
HumiditySensor < Sensor
Actuator < Thing
Light < Actuator
DimmableLight < Light
Camera < Thing
";

struct Cluster {
    net: VirtualNet,
    gws: Vec<String>,
    t: u64,
}

impl Cluster {
    fn new(n: usize) -> Self {
        let tax = Arc::new(load_taxonomy(GW_TAX).unwrap());
        let mut net = VirtualNet::new(7);
        let gws: Vec<String> = (1..=n).map(|i| format!("gw-{i}")).collect();
        let mut t = 0;
        for (i, a) in gws.iter().enumerate() {
            let mut cfg = GatewayConfig::new(i as u32 + 1, a.clone(), "inline");
            cfg.overlay_m = 12;
            if i > 0 {
                cfg.bootstrap = Some(gws[0].clone());
            }
            net.add_node(Box::new(Gateway::new(cfg, tax.clone())));
            let (res, done) = net
                .with_node(a, t, |n, tr| n.as_any_mut().downcast_mut::<Gateway>().unwrap().boot(tr))
                .unwrap();
            res.unwrap();
            t = done;
        }
        let mut c = Self { net, gws, t };
        for _ in 0..4 {
            for a in c.gws.clone() {
                for timer in [Timer::CheckPredecessor, Timer::Stabilize, Timer::FixFingers] {
                    if let Some(d) = c.net.fire_timer(&a, timer, c.t) {
                        c.t = d;
                    }
                }
            }
        }
        c
    }

    fn on_gateway<T>(&mut self, gw: usize, f: impl FnOnce(&mut Gateway, &mut dyn fogdisc_core::net::Transport) -> T) -> T {
        let addr = self.gws[gw].clone();
        let (out, done) = self
            .net
            .with_node(&addr, self.t, |n, tr| f(n.as_any_mut().downcast_mut::<Gateway>().unwrap(), tr))
            .unwrap();
        self.t = done;
        out
    }
}

fn expected_status(code: Code) -> u16 {
    match (code.class, code.detail) {
        (2, 1) => 201,
        (2, 2) => 202,
        (2, 4) => 204,
        (2, 5) => 200,
        (4, 0) => 400,
        (4, 4) => 404,
        (5, 0) => 500,
        _ => 502,
    }
}

fn method(name: &str) -> Option<Code> {
    match name {
        "GET" => Some(Code::GET),
        "POST" => Some(Code::POST),
        "PUT" => Some(Code::PUT),
        "DELETE" => Some(Code::DELETE),
        _ => None,
    }
}

fn random_exchange(rng: &mut ChaCha8Rng, i: usize) -> (&'static str, String, String, Vec<u8>) {
    let concepts = ["TemperatureSensor", "HumiditySensor", "Light", "DimmableLight", "Camera", "Sensor"];
    let here = Location::new(45.0, 5.0).unwrap();
    let gw = 1 + rng.random_range(0..2);
    let seq = 1 + rng.random_range(0..4);
    if i < 6 {
        let c = concepts[i % concepts.len()];
        let s = ServiceDescription::new(c, format!("/x{i}"), random_qos(rng));
        let body = encode_registration(&ThingDescription::new(format!("dev{i}"), c, here), &[s]);
        return ("POST", "/rd".into(), String::new(), body.into_bytes());
    }
    match rng.random_range(0..10) {
        0..=3 => {
            let c = *pick(rng, &concepts);
            let query = match rng.random_range(0..5) {
                0 => format!("rt={c}"),
                1 => format!("rt={c}&minsim=1"),
                2 => format!("rt={c}&k=1&kw=eco"),
                3 => format!("rt={c}&q.delay_ms=<100"),
                _ => "kw=nothing".into(),
            };
            ("GET", "/rd-lookup".into(), query, Vec::new())
        }
        4 => ("GET", format!("/rd/s-{gw}-{seq}"), String::new(), Vec::new()),
        5 => ("GET", format!("/rd/t-{gw}-{seq}"), String::new(), Vec::new()),
        6 => {
            let mut s = ServiceDescription::new(*pick(rng, &concepts), "/p", random_qos(rng));
            s.thing_id = Some(Identifier::new(IdKind::Thing, 1, seq));
            let body = encode_description(&Description::Service(s));
            ("PUT", format!("/rd/s-1-{seq}"), String::new(), body.into_bytes())
        }
        7 => ("DELETE", format!("/rd/t-1-{seq}"), String::new(), Vec::new()),
        8 => ("POST", "/rd".into(), String::new(), b"{not json".to_vec()),
        _ => (*pick(rng, &["PATCH", "GET", "POST"]), "/nowhere".into(), String::new(), Vec::new()),
    }
}

fn proxy_parity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut via_http = Cluster::new(2);
    let mut native = Cluster::new(2);
    let mut statuses: BTreeMap<u16, usize> = BTreeMap::new();
    for i in 0..50 {
        let (verb, path, query, body) = random_exchange(&mut rng, i);
        let gw = rng.random_range(0..2);
        let target = if query.is_empty() { path.clone() } else { format!("{path}?{query}") };
        let http = HttpRequest::new(verb, &target, body.clone());
        let (resp, inner) = via_http.on_gateway(gw, |g, tr| g.proxy_exchange(&http, tr));
        *statuses.entry(resp.status).or_default() += 1;
        let Some(code) = method(verb) else {
            ensure!(inner.is_none() && resp.status == 405, "{verb} {target}: got {}", resp.status);
            continue;
        };
        let mut req = CoapMessage::request(code, &path, (!query.is_empty()).then_some(query.as_str()));
        if !body.is_empty() {
            req = req.with_payload(CF_JSON, body);
        }
        let direct = native.on_gateway(gw, |g, tr| g.dispatch(&req, tr));
        let inner = inner.ok_or_else(|| format!("{verb} {target}: no internal CoAP response"))?;
        let wire = |m: &CoapMessage| encode_message(m).unwrap();
        ensure!(wire(&inner) == wire(&direct), "{verb} {target}: CoAP responses differ");
        ensure!(
            resp.status == expected_status(direct.code),
            "{verb} {target}: {} for CoAP {}",
            resp.status,
            direct.code
        );
        ensure!(resp.body == direct.payload, "{verb} {target}: body differs from the CoAP payload");
        ensure!(resp.location == direct.location_path(), "{verb} {target}: location differs");
    }
    let statuses: Vec<String> = statuses.iter().map(|(s, n)| format!("{s}x{n}")).collect();
    Ok(format!("50 pairs bit-identical; statuses {}", statuses.join(" ")))
}

// ---------------------------------------------------------------- determinism

fn determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("fogdisc-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let scenario = scenarios().join("smoke.json");
    let mut dumps = Vec::new();
    for run in 0..2 {
        let out = dir.join(format!("metrics-{run}.json"));
        let status = Command::new(env!("CARGO_BIN_EXE_fogdisc"))
            .arg("run")
            .arg(&scenario)
            .args(["--seed", "7", "--dump"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(status.status.success(), "run {run} exited with {}", status.status);
        dumps.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    let _ = std::fs::remove_dir_all(&dir);
    ensure!(dumps[0] == dumps[1], "the two metrics dumps differ");
    Ok(format!("two runs produce identical {}-byte dumps", dumps[0].len()))
}
