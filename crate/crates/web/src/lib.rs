//! Three browser operations over the core crate: concept similarity,
//! ranked discovery over a demo registry, and Chord successor lookups.
//! Each returns a JSON string; errors come back as plain messages.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, OnceLock};

use fogdisc_core::directory::Directory;
use fogdisc_core::matchmaker::{match_degree, matchmake, parse_discovery_params, MatchWeights};
use fogdisc_core::model::{decode_registration, QosField, ServiceDescription};
use fogdisc_core::ontology::{load_taxonomy, Taxonomy};
use fogdisc_core::overlay::{hash_key, ring_successor, OverlayConfig};
use fogdisc_core::ranking::{select_rank, WeightVector};
use fogdisc_core::sim::generate;
use fogdisc_core::sim::ring::{build_ring, distinct_addresses, DhtPeer};
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const FOG_TAXONOMY: &str = include_str!("../../../data/fog.tax");

fn taxonomy() -> &'static Arc<Taxonomy> {
    static T: OnceLock<Arc<Taxonomy>> = OnceLock::new();
    T.get_or_init(|| Arc::new(load_taxonomy(FOG_TAXONOMY).expect("bundled taxonomy parses")))
}

/// The services of the bundled end-to-end scenario, in one registry.
fn registry() -> &'static Directory {
    static D: OnceLock<Directory> = OnceLock::new();
    D.get_or_init(|| {
        let mut d = Directory::new(1, taxonomy().clone());
        for dev in generate::e2e(42).devices {
            let (thing, services) = decode_registration(&dev.registration.to_string()).expect("generated");
            let tid = d.post_thing(thing, 0).expect("known concept");
            for mut s in services {
                s.thing_id = Some(tid);
                d.post_service(s).expect("known concept");
            }
        }
        d
    })
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

#[derive(Serialize)]
struct SimilarityReport<'a> {
    a: &'a str,
    b: &'a str,
    depth_a: u32,
    depth_b: u32,
    lca: &'a str,
    similarity: f64,
    /// Degree of a service of concept `b` for a request for `a`.
    degree: &'static str,
}

pub fn similarity_report(a: &str, b: &str, min_similarity: f64) -> Result<String, String> {
    let t = taxonomy();
    let e = |e: fogdisc_core::ontology::TaxonomyError| e.to_string();
    Ok(json(&SimilarityReport {
        a,
        b,
        depth_a: t.depth(a).map_err(e)?,
        depth_b: t.depth(b).map_err(e)?,
        lca: t.lca(a, b).map_err(e)?,
        similarity: t.similarity(a, b).map_err(e)?,
        degree: match_degree(a, b, t, min_similarity).map_err(e)?.name(),
    }))
}

pub fn concepts() -> String {
    json(&taxonomy().concepts().collect::<Vec<_>>())
}

#[derive(Serialize)]
struct Row {
    id: String,
    concept: String,
    path: String,
    degree: &'static str,
    score: f64,
    utility: f64,
    delay_ms: f64,
    price: f64,
    reliability: f64,
    availability: f64,
    security_level: u8,
}

/// Matchmakes `query` (`rt=...&kw=...`) against the demo registry and ranks
/// the matches by simple additive weighting. `weights` maps QoS field names
/// to non-negative numbers.
pub fn discover(query: &str, weights: &str) -> Result<String, String> {
    let parsed = parse_discovery_params(&[query]).map_err(|e| e.to_string())?;
    let raw: BTreeMap<QosField, f64> = serde_json::from_str(weights).map_err(|e| e.to_string())?;
    let w = WeightVector::new(&raw).map_err(|e| e.to_string())?;
    let d = registry();
    let matches = matchmake(&parsed.request, d, "demo", MatchWeights::default()).map_err(|e| e.to_string())?;
    let with_qos: Vec<_> = matches
        .iter()
        .filter_map(|m| Some((m.clone(), d.service(m.service_id)?.qos)))
        .collect();
    let rows: Vec<Row> = select_rank(&with_qos, &w, parsed.request.max_results)
        .into_iter()
        .filter_map(|r| {
            let s: &ServiceDescription = d.service(r.result.service_id)?;
            Some(Row {
                id: r.result.service_id.to_string(),
                concept: s.functional_concept.clone(),
                path: s.path.clone(),
                degree: r.result.degree.name(),
                score: r.result.score,
                utility: r.utility,
                delay_ms: s.qos.delay_ms,
                price: s.qos.price,
                reliability: s.qos.reliability,
                availability: s.qos.availability,
                security_level: s.qos.security_level,
            })
        })
        .collect();
    Ok(json(&rows))
}

#[derive(Serialize)]
struct RingNode {
    addr: String,
    id: u64,
    successor: u64,
}

#[derive(Serialize)]
struct LookupReport {
    m: u32,
    key: u64,
    nodes: Vec<RingNode>,
    from: String,
    owner: String,
    owner_id: u64,
    expected_id: u64,
    hops: u32,
    fingers: Vec<Option<u64>>,
}

/// Builds and stabilizes a ring of `n` nodes at `m` bits, then looks up the
/// key of `text` starting from node `from` (1-based).
pub fn chord_lookup(n: usize, m: u32, text: &str, from: usize) -> Result<String, String> {
    if !(1..=64).contains(&n) {
        return Err("ring size must lie in 1..=64".into());
    }
    if !(4..=20).contains(&m) || (1u128 << m) < n as u128 {
        return Err("m must lie in 4..=20 and leave room for every node".into());
    }
    if !(1..=n).contains(&from) {
        return Err(format!("start node must lie in 1..={n}"));
    }
    let addrs = distinct_addresses("gw", n, m);
    let config = OverlayConfig {
        m,
        ..OverlayConfig::default()
    };
    let (mut net, _) = build_ring(&addrs, config, 1, 2 * n + 4);
    let key = hash_key(text, m);
    let start = addrs[from - 1].clone();
    let t = net.now();
    let (found, _) = net
        .with_node(&start, t, |node, tr| {
            let peer = node.as_any_mut().downcast_mut::<DhtPeer>().expect("peer");
            peer.overlay.find_successor(key, tr)
        })
        .ok_or("start node missing")?;
    let found = found.map_err(|e| e.to_string())?;
    let mut nodes: Vec<RingNode> = addrs
        .iter()
        .filter_map(|a| {
            let o = net.node(a)?.overlay()?;
            Some(RingNode {
                addr: a.clone(),
                id: o.me().id,
                successor: o.table().successor().id,
            })
        })
        .collect();
    nodes.sort_by_key(|n| n.id);
    let ids: Vec<u64> = nodes.iter().map(|n| n.id).collect();
    let fingers = net
        .node(&start)
        .and_then(|n| n.overlay())
        .map(|o| o.table().fingers.iter().map(|f| f.as_ref().map(|f| f.id)).collect())
        .unwrap_or_default();
    Ok(json(&LookupReport {
        m,
        key,
        nodes,
        from: start,
        owner: found.node.addr,
        owner_id: found.node.id,
        expected_id: ring_successor(&ids, key).unwrap_or_default(),
        hops: found.hops,
        fingers,
    }))
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = concepts)]
pub fn concepts_js() -> String {
    concepts()
}

#[wasm_bindgen(js_name = similarity)]
pub fn similarity_js(a: &str, b: &str, min_similarity: f64) -> Result<String, JsValue> {
    js(similarity_report(a, b, min_similarity))
}

#[wasm_bindgen(js_name = discover)]
pub fn discover_js(query: &str, weights: &str) -> Result<String, JsValue> {
    js(discover(query, weights))
}

#[wasm_bindgen(js_name = chordLookup)]
pub fn chord_lookup_js(n: usize, m: u32, text: &str, from: usize) -> Result<String, JsValue> {
    js(chord_lookup(n, m, text, from))
}

/// Concepts every service in the demo registry is registered under.
pub fn registered_concepts() -> BTreeSet<String> {
    registry().services().map(|s| s.functional_concept.clone()).collect()
}
