//! The cloud node: gateway index, fan-out discovery and service composition
//! with a cache of composite services.

mod cache;
pub mod compose;

use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CachedComposition, CompositeServiceDirectory, MonitorOutcome};
pub use compose::{
    aggregate_qos, classify, compose, optimize, optimize_exhaustive, optimize_greedy, rank_members,
    Candidate, CompositionPlan, CompositionRequest, Optimized, PlanOptions, ServiceCluster, StageRef,
    UtilityScale,
};

use crate::coap::{serialize_links, CoapMessage, Code, CF_LINK_FORMAT};
use crate::gateway::wire::{Announcement, GatewayQuery, MatchList, RemovalNotice};
use crate::gateway::{rank, render_links};
use crate::matchmaker::{parse_discovery_params, result_order, DiscoveryRequest, MatchResult};
use crate::model::{canonical_json, Identifier, Location, ServiceDescription};
use crate::net::{concurrently, json_request, json_response, Node, Transport};
use crate::ontology::Taxonomy;
use crate::ranking::WeightVector;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CloudError {
    #[error("no gateway has announced itself")]
    NoGatewaysKnown,
    #[error("every selected gateway timed out")]
    AllGatewaysTimedOut,
    #[error("no composition satisfies the request")]
    NoPlanFound,
    #[error("a plan needs at least one stage")]
    EmptyPlan,
    #[error("plan fails dataflow validation")]
    InvalidPlan,
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl CloudError {
    pub fn code(&self) -> Code {
        match self {
            CloudError::NoGatewaysKnown => Code::SERVICE_UNAVAILABLE,
            CloudError::AllGatewaysTimedOut => Code::GATEWAY_TIMEOUT,
            CloudError::NoPlanFound => Code::NOT_FOUND,
            CloudError::BadRequest(_) => Code::BAD_REQUEST,
            CloudError::EmptyPlan | CloudError::InvalidPlan => Code::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayInfo {
    pub ordinal: u32,
    pub location: Location,
    pub concepts: BTreeSet<String>,
    pub last_seen: u64,
}

/// Gateways known to the cloud, fed by announcements.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GatewayIndex {
    pub entries: BTreeMap<String, GatewayInfo>,
}

impl GatewayIndex {
    pub fn announce(&mut self, a: &Announcement, now_ms: u64) {
        let last_seen = self
            .entries
            .get(&a.address)
            .map_or(now_ms, |e| e.last_seen.max(now_ms));
        self.entries.insert(
            a.address.clone(),
            GatewayInfo {
                ordinal: a.ordinal,
                location: a.location,
                concepts: a.concepts.iter().cloned().collect(),
                last_seen,
            },
        );
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Gateways advertising the top-level branch of any of `concepts`; all
    /// gateways when none does.
    pub fn select(&self, t: &Taxonomy, concepts: &BTreeSet<String>) -> Vec<String> {
        let branches: BTreeSet<&str> = concepts
            .iter()
            .filter_map(|c| t.top_level_of(c).ok().flatten())
            .collect();
        let picked: Vec<String> = self
            .entries
            .iter()
            .filter(|(_, g)| g.concepts.iter().any(|c| branches.contains(c.as_str())))
            .map(|(a, _)| a.clone())
            .collect();
        if picked.is_empty() {
            self.entries.keys().cloned().collect()
        } else {
            picked
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudConfig {
    pub address: String,
    pub taxonomy_path: String,
    #[serde(default)]
    pub qos_weights: WeightVector,
}

impl CloudConfig {
    pub fn new(address: impl Into<String>, taxonomy_path: impl Into<String>) -> Self {
        Self {
            address: address.into(),
            taxonomy_path: taxonomy_path.into(),
            qos_weights: WeightVector::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudStats {
    /// Requests sent to gateways during fan-out.
    pub fanout_messages: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub repairs: u64,
    pub evictions: u64,
    pub compositions: u64,
    pub discoveries: u64,
}

pub struct CloudNode {
    config: CloudConfig,
    taxonomy: Arc<Taxonomy>,
    pub index: GatewayIndex,
    pub cache: CompositeServiceDirectory,
    pub stats: CloudStats,
}

impl CloudNode {
    pub fn new(config: CloudConfig, taxonomy: Arc<Taxonomy>) -> Self {
        Self {
            cache: CompositeServiceDirectory::new(taxonomy.clone()),
            taxonomy,
            config,
            index: GatewayIndex::default(),
            stats: CloudStats::default(),
        }
    }

    pub fn taxonomy(&self) -> &Arc<Taxonomy> {
        &self.taxonomy
    }

    /// Sends `q` to every gateway in `targets` side by side; gateways that
    /// time out are left out.
    fn fan_out(
        &mut self,
        targets: &[String],
        q: &GatewayQuery,
        net: &mut dyn Transport,
    ) -> Result<Vec<(MatchResult, ServiceDescription)>, CloudError> {
        if targets.is_empty() {
            return Ok(Vec::new());
        }
        let body = canonical_json(q);
        self.stats.fanout_messages += targets.len() as u64;
        let replies = concurrently(net, targets.iter(), |t, g| {
            t.call(g, json_request("/rd-query", &body)).ok()
        });
        if replies.iter().all(Option::is_none) {
            return Err(CloudError::AllGatewaysTimedOut);
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for resp in replies.into_iter().flatten() {
            let Ok(list) = serde_json::from_slice::<MatchList>(&resp.payload) else {
                continue;
            };
            for m in list.matches {
                if let Some((r, s)) = m.decode() {
                    if seen.insert((r.gateway.clone(), r.service_id)) {
                        out.push((r, s));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Discovery across the selected gateways, excluding `skip`.
    pub fn fanout_discover(
        &mut self,
        r: &DiscoveryRequest,
        skip: &str,
        net: &mut dyn Transport,
    ) -> Result<Vec<(MatchResult, ServiceDescription)>, CloudError> {
        if self.index.is_empty() {
            return Err(CloudError::NoGatewaysKnown);
        }
        let targets: Vec<String> = self
            .index
            .select(&self.taxonomy, &BTreeSet::from([r.concept.clone()]))
            .into_iter()
            .filter(|g| g != skip)
            .collect();
        let mut found = self.fan_out(
            &targets,
            &GatewayQuery::Discover { request: r.clone() },
            net,
        )?;
        found.sort_by(|a, b| result_order(&a.0, &b.0));
        Ok(found)
    }

    /// Collects services producing the goal, then the services producing
    /// their missing inputs, one round per possible stage.
    fn gather(
        &mut self,
        r: &CompositionRequest,
        net: &mut dyn Transport,
    ) -> Result<Vec<Candidate>, CloudError> {
        let t = self.taxonomy.clone();
        let mut queried: BTreeSet<String> = BTreeSet::new();
        let mut wanted: BTreeSet<String> = r.goal_outputs.clone();
        let mut out: Vec<Candidate> = Vec::new();
        for round in 0..r.max_stages.max(1) {
            let ask: BTreeSet<String> = wanted.difference(&queried).cloned().collect();
            if ask.is_empty() {
                break;
            }
            let targets = self.index.select(&t, &ask);
            let q = GatewayQuery::Outputs {
                concepts: ask.iter().cloned().collect(),
            };
            let found = match self.fan_out(&targets, &q, net) {
                Ok(f) => f,
                Err(e) if round == 0 => return Err(e),
                Err(_) => Vec::new(),
            };
            queried.extend(ask);
            for (m, s) in found {
                if !out.iter().any(|c| c.gateway == m.gateway && c.id == m.service_id) {
                    out.push(Candidate {
                        gateway: m.gateway,
                        id: m.service_id,
                        service: s,
                    });
                }
            }
            wanted = out
                .iter()
                .flat_map(|c| c.service.inputs.iter())
                .filter(|i| {
                    !r.available_inputs
                        .iter()
                        .any(|a| compose::satisfies(&t, a, i))
                })
                .cloned()
                .collect();
        }
        Ok(out)
    }

    /// Cached plan if any, otherwise fan-out, classify, compose, optimize
    /// and cache.
    pub fn handle_composition(
        &mut self,
        r: &CompositionRequest,
        net: &mut dyn Transport,
    ) -> Result<CompositionPlan, CloudError> {
        r.validate()?;
        self.stats.compositions += 1;
        if let Some(plan) = self.cache.lookup(r) {
            self.stats.cache_hits += 1;
            return Ok(plan.clone());
        }
        self.stats.cache_misses += 1;
        if self.index.is_empty() {
            return Err(CloudError::NoGatewaysKnown);
        }
        let candidates = self.gather(r, net)?;
        let mut clusters = classify(&candidates);
        rank_members(&mut clusters, &r.qos_weights);
        let plans = compose(&self.taxonomy, r, &clusters)?;
        let best = optimize(&plans, &r.qos_weights).ok_or(CloudError::NoPlanFound)?;
        self.cache.store(r, &best)?;
        Ok(best.plan)
    }

    pub fn monitor_event(&mut self, gateway: &str, service: Identifier) -> MonitorOutcome {
        let o = self.cache.monitor_event(gateway, service);
        self.stats.repairs += o.repaired as u64;
        self.stats.evictions += o.evicted as u64;
        o
    }

    fn handle_lookup(&mut self, req: &CoapMessage, from: &str, net: &mut dyn Transport) -> CoapMessage {
        self.stats.discoveries += 1;
        let Ok(parsed) = parse_discovery_params(&req.uri_query()) else {
            return CoapMessage::response_to(req, Code::BAD_REQUEST);
        };
        if parsed.request.validate(&self.taxonomy).is_err() {
            return CoapMessage::response_to(req, Code::NOT_FOUND);
        }
        let weights = if parsed.weights.is_empty() {
            self.config.qos_weights
        } else {
            match WeightVector::new(&parsed.weights) {
                Ok(w) => w,
                Err(_) => return CoapMessage::response_to(req, Code::BAD_REQUEST),
            }
        };
        match self.fanout_discover(&parsed.request, from, net) {
            Ok(found) if !found.is_empty() => {
                let ranked = rank(&found, &weights, parsed.request.max_results);
                let links = render_links(&ranked, &found);
                CoapMessage::response_to(req, Code::CONTENT)
                    .with_payload(CF_LINK_FORMAT, serialize_links(&links).into_bytes())
            }
            Ok(_) => CoapMessage::response_to(req, Code::NOT_FOUND),
            Err(e) => CoapMessage::response_to(req, e.code()),
        }
    }
}

impl Node for CloudNode {
    fn address(&self) -> &str {
        &self.config.address
    }

    fn handle(&mut self, req: &CoapMessage, from: &str, net: &mut dyn Transport) -> CoapMessage {
        let segs = req.path_segments();
        let segs: Vec<&str> = segs.iter().map(String::as_str).collect();
        match (req.code, segs.as_slice()) {
            (Code::POST, ["compose"]) => {
                let r = match serde_json::from_slice::<CompositionRequest>(&req.payload) {
                    Ok(r) => r,
                    Err(_) => return CoapMessage::response_to(req, Code::BAD_REQUEST),
                };
                match self.handle_composition(&r, net) {
                    Ok(plan) => json_response(req, Code::CONTENT, &canonical_json(&plan)),
                    Err(e) => CoapMessage::response_to(req, e.code()),
                }
            }
            (Code::GET, ["rd-lookup"]) => self.handle_lookup(req, from, net),
            (Code::POST, ["gw", "announce"]) => match serde_json::from_slice::<Announcement>(&req.payload) {
                Ok(a) => {
                    self.index.announce(&a, net.now_ms());
                    CoapMessage::response_to(req, Code::CHANGED)
                }
                Err(_) => CoapMessage::response_to(req, Code::BAD_REQUEST),
            },
            (Code::POST, ["gw", "removed"]) => {
                let parsed = serde_json::from_slice::<RemovalNotice>(&req.payload)
                    .ok()
                    .and_then(|n| Some((n.service.parse::<Identifier>().ok()?, n.gateway)));
                match parsed {
                    Some((id, gw)) => {
                        self.monitor_event(&gw, id);
                        CoapMessage::response_to(req, Code::CHANGED)
                    }
                    None => CoapMessage::response_to(req, Code::BAD_REQUEST),
                }
            }
            (_, ["compose"] | ["rd-lookup"] | ["gw", _]) => {
                CoapMessage::response_to(req, Code::METHOD_NOT_ALLOWED)
            }
            _ => CoapMessage::response_to(req, Code::NOT_FOUND),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}
