//! The fog gateway: CoAP endpoints over the directory, the matchmaker, the
//! ranking step and the overlay, plus the HTTP proxy and lease expiry.

mod config;
mod proxy;
pub mod wire;

use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use config::{ConfigError, GatewayConfig};
pub use proxy::{HttpRequest, HttpResponse};

use crate::coap::{serialize_links, CoapMessage, Code, LinkEntry, CF_JSON, CF_LINK_FORMAT};
use crate::directory::{Directory, DirectoryError, EntryKind, ServiceRemoved};
use crate::matchmaker::{
    matchmake, parse_discovery_params, result_order, DiscoveryRequest, MatchResult, RequestError,
};
use crate::model::{
    canonical_json, decode_description, decode_registration, encode_description, Identifier, ServiceDescription,
};
use crate::net::{concurrently, json_request, json_response, Node, Timer, Transport};
use crate::ontology::Taxonomy;
use crate::overlay::{Overlay, OverlayError};
use crate::ranking::{select_rank, Ranked, WeightVector};
use wire::{Announcement, ForwardRequest, GatewayQuery, MatchList, RemoteMatch, RemovalNotice};

/// How the last discovery request was answered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiscoveryTrace {
    pub overlay_hops: u32,
    pub remote: bool,
    pub links: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub registrations: u64,
    pub failed_registrations: u64,
    pub discoveries: u64,
    pub local_hits: u64,
    pub remote_hits: u64,
    pub misses: u64,
    pub cloud_hits: u64,
    pub forwarded_in: u64,
    pub expired_things: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ForwardError {
    NoRemoteMatch,
    Overlay(OverlayError),
}

/// Registration response body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registered {
    pub thing: Identifier,
    pub services: Vec<Identifier>,
}

#[derive(Clone)]
pub struct Gateway {
    config: GatewayConfig,
    directory: Directory,
    overlay: Overlay,
    qos_weights: WeightVector,
    announced: Vec<String>,
    pub last_discovery: Option<DiscoveryTrace>,
    pub stats: GatewayStats,
}

fn respond(req: &CoapMessage, code: Code) -> CoapMessage {
    CoapMessage::response_to(req, code)
}

fn directory_code(e: &DirectoryError) -> Code {
    match e {
        DirectoryError::UnknownConcept(_) | DirectoryError::NotFound(_) => Code::NOT_FOUND,
        _ => Code::BAD_REQUEST,
    }
}

impl Gateway {
    pub fn new(config: GatewayConfig, taxonomy: Arc<Taxonomy>) -> Self {
        let overlay = Overlay::new(&config.address, config.overlay());
        Self {
            directory: Directory::new(config.ordinal, taxonomy),
            qos_weights: config.qos_weights,
            announced: Vec::new(),
            overlay,
            config,
            last_discovery: None,
            stats: GatewayStats::default(),
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn address(&self) -> &str {
        &self.config.address
    }

    pub fn directory(&self) -> &Directory {
        &self.directory
    }

    pub fn overlay_state(&self) -> &Overlay {
        &self.overlay
    }

    pub fn set_bootstrap(&mut self, bootstrap: Option<String>) {
        self.config.bootstrap = bootstrap;
    }

    /// Creates a ring (no bootstrap configured) or joins through the
    /// bootstrap node, then announces itself to the cloud.
    pub fn boot(&mut self, net: &mut dyn Transport) -> Result<(), OverlayError> {
        match self.config.bootstrap.clone() {
            Some(b) if b != self.config.address => self.overlay.join(&b, net)?,
            _ => self.overlay.create(),
        }
        self.announce(net);
        Ok(())
    }

    /// Graceful shutdown: hands pointer records over and leaves the ring.
    pub fn leave(&mut self, net: &mut dyn Transport) {
        self.overlay.leave(net);
    }

    /// Handles a CoAP request exactly as it would arrive over the network.
    pub fn dispatch(&mut self, req: &CoapMessage, net: &mut dyn Transport) -> CoapMessage {
        let segs = req.path_segments();
        let segs: Vec<&str> = segs.iter().map(String::as_str).collect();
        match (req.code, segs.as_slice()) {
            (Code::POST, ["rd"]) => self.handle_registration(req, net),
            (Code::GET, ["rd", id]) => self.handle_get(req, id),
            (Code::PUT, ["rd", id]) => self.handle_put(req, id, net),
            (Code::DELETE, ["rd", id]) => self.handle_delete(req, id, net),
            (Code::GET, ["rd-lookup"]) => self.handle_discovery(req, net),
            (Code::POST, ["rd-query"]) => self.handle_cloud_query(req),
            (Code::POST, ["dht", "forward"]) => self.handle_forwarded(req),
            (_, ["dht", _]) => self
                .overlay
                .handle(req, net.now_ms())
                .unwrap_or_else(|| respond(req, Code::NOT_FOUND)),
            (_, ["rd"] | ["rd", _] | ["rd-lookup"] | ["rd-query"]) => {
                respond(req, Code::METHOD_NOT_ALLOWED)
            }
            _ => respond(req, Code::NOT_FOUND),
        }
    }

    /// Serves an HTTP request through the HTTP-to-CoAP proxy.
    pub fn handle_proxy(&mut self, http: &HttpRequest, net: &mut dyn Transport) -> HttpResponse {
        self.proxy_exchange(http, net).0
    }

    /// Like [`Gateway::handle_proxy`], also returning the internal CoAP
    /// response.
    pub fn proxy_exchange(
        &mut self,
        http: &HttpRequest,
        net: &mut dyn Transport,
    ) -> (HttpResponse, Option<CoapMessage>) {
        proxy::serve(http, |req| self.dispatch(req, net))
    }

    fn handle_registration(&mut self, req: &CoapMessage, net: &mut dyn Transport) -> CoapMessage {
        let outcome = self.register(&req.payload_text(), net);
        match outcome {
            Ok(reg) => {
                self.stats.registrations += 1;
                self.announce_if_changed(net);
                let mut resp = json_response(req, Code::CREATED, &canonical_json(&reg));
                resp.set_location_path(&format!("/rd/{}", reg.thing));
                resp
            }
            Err(code) => {
                self.stats.failed_registrations += 1;
                respond(req, code)
            }
        }
    }

    /// Stores a thing and its services and advertises new concepts; on any
    /// failure the directory and the advertisements are restored.
    fn register(&mut self, payload: &str, net: &mut dyn Transport) -> Result<Registered, Code> {
        let (thing, services) = decode_registration(payload).map_err(|_| Code::BAD_REQUEST)?;
        let saved = self.directory.clone();
        let before = self.directory.local_concepts();
        let result = self.store_registration(thing, services, net.now_ms());
        let reg = match result {
            Ok(r) => r,
            Err(e) => {
                self.directory = saved;
                return Err(directory_code(&e));
            }
        };
        let added: Vec<String> = self
            .directory
            .local_concepts()
            .difference(&before)
            .cloned()
            .collect();
        let mut published = Vec::new();
        for c in &added {
            match self.overlay.publish(c, net) {
                Ok(_) => published.push(c.clone()),
                Err(_) => {
                    self.directory = saved;
                    for p in &published {
                        if self.overlay.unpublish(p, net).is_err() {
                            self.overlay.forget_published(p);
                        }
                    }
                    self.overlay.forget_published(c);
                    return Err(Code::INTERNAL_SERVER_ERROR);
                }
            }
        }
        Ok(reg)
    }

    fn store_registration(
        &mut self,
        thing: crate::model::ThingDescription,
        services: Vec<ServiceDescription>,
        now_ms: u64,
    ) -> Result<Registered, DirectoryError> {
        let thing_id = self.directory.post_thing(thing, now_ms)?;
        let mut ids = Vec::new();
        for mut s in services {
            s.thing_id = Some(thing_id);
            ids.push(self.directory.post_service(s)?);
        }
        Ok(Registered {
            thing: thing_id,
            services: ids,
        })
    }

    fn parse_id(id: &str) -> Option<(EntryKind, Identifier)> {
        let id: Identifier = id.parse().ok()?;
        let kind = match id.kind {
            crate::model::IdKind::Thing => EntryKind::Thing,
            crate::model::IdKind::Service => EntryKind::Service,
            _ => return None,
        };
        Some((kind, id))
    }

    fn handle_get(&self, req: &CoapMessage, id: &str) -> CoapMessage {
        let Some((kind, id)) = Self::parse_id(id) else {
            return respond(req, Code::NOT_FOUND);
        };
        match self.directory.get_entry(kind, id) {
            Ok(d) => json_response(req, Code::CONTENT, &encode_description(&d)),
            Err(e) => respond(req, directory_code(&e)),
        }
    }

    fn handle_put(&mut self, req: &CoapMessage, id: &str, net: &mut dyn Transport) -> CoapMessage {
        let Some((kind, id)) = Self::parse_id(id) else {
            return respond(req, Code::NOT_FOUND);
        };
        if req.payload.is_empty() {
            if kind != EntryKind::Thing {
                return respond(req, Code::BAD_REQUEST);
            }
            return match self.directory.refresh(id, net.now_ms()) {
                Ok(()) => respond(req, Code::CHANGED),
                Err(e) => respond(req, directory_code(&e)),
            };
        }
        let desc = match decode_description(&req.payload_text()) {
            Ok(d) => d,
            Err(_) => return respond(req, Code::BAD_REQUEST),
        };
        let before = self.directory.local_concepts();
        if let Err(e) = self.directory.put_entry(kind, id, desc) {
            return respond(req, directory_code(&e));
        }
        if kind == EntryKind::Thing {
            let _ = self.directory.refresh(id, net.now_ms());
        }
        self.sync_advertisements(&before, net);
        respond(req, Code::CHANGED)
    }

    fn handle_delete(&mut self, req: &CoapMessage, id: &str, net: &mut dyn Transport) -> CoapMessage {
        let Some((kind, id)) = Self::parse_id(id) else {
            return respond(req, Code::NOT_FOUND);
        };
        let before = self.directory.local_concepts();
        match self.directory.delete_entry(kind, id) {
            Ok(events) => {
                self.after_removal(&before, &events, net);
                respond(req, Code::DELETED)
            }
            Err(e) => respond(req, directory_code(&e)),
        }
    }

    /// Publishes concepts that appeared and withdraws those that vanished
    /// since `before`.
    fn sync_advertisements(&mut self, before: &BTreeSet<String>, net: &mut dyn Transport) {
        let after = self.directory.local_concepts();
        for gone in before.difference(&after) {
            let _ = self.overlay.unpublish(gone, net);
        }
        for new in after.difference(before) {
            let _ = self.overlay.publish(new, net);
        }
    }

    fn after_removal(
        &mut self,
        before: &BTreeSet<String>,
        events: &[ServiceRemoved],
        net: &mut dyn Transport,
    ) {
        self.sync_advertisements(before, net);
        self.announce_if_changed(net);
        let Some(cloud) = self.config.cloud.clone() else {
            return;
        };
        for e in events {
            let notice = RemovalNotice {
                gateway: self.config.address.clone(),
                service: e.service.to_string(),
                concept: e.concept.clone(),
            };
            let _ = net.call(&cloud, json_request("/gw/removed", &canonical_json(&notice)));
        }
    }

    /// Removes every thing whose lease ran out, with its services.
    pub fn expire_stale(&mut self, net: &mut dyn Transport) -> Vec<Identifier> {
        let now = net.now_ms();
        let stale = self
            .directory
            .stale_things(now, self.config.lifetime_s * 1000);
        if stale.is_empty() {
            return Vec::new();
        }
        let before = self.directory.local_concepts();
        let mut removed = Vec::new();
        let mut events = Vec::new();
        for t in stale {
            if let Ok(ev) = self.directory.delete_entry(EntryKind::Thing, t) {
                removed.push(t);
                removed.extend(ev.iter().map(|e| e.service));
                events.extend(ev);
                self.stats.expired_things += 1;
            }
        }
        self.after_removal(&before, &events, net);
        removed
    }

    fn weights_for(&self, raw: &BTreeMap<crate::model::QosField, f64>) -> Result<WeightVector, Code> {
        if raw.is_empty() {
            Ok(self.qos_weights)
        } else {
            WeightVector::new(raw).map_err(|_| Code::BAD_REQUEST)
        }
    }

    fn handle_discovery(&mut self, req: &CoapMessage, net: &mut dyn Transport) -> CoapMessage {
        self.stats.discoveries += 1;
        self.last_discovery = None;
        let parsed = match parse_discovery_params(&req.uri_query()) {
            Ok(p) => p,
            Err(_) => return respond(req, Code::BAD_REQUEST),
        };
        let weights = match self.weights_for(&parsed.weights) {
            Ok(w) => w,
            Err(c) => return respond(req, c),
        };
        let mut request = parsed.request;
        if !req.uri_query().iter().any(|q| q.split('&').any(|p| p.starts_with("minsim="))) {
            request.min_similarity = self.config.min_similarity;
        }
        let local = match matchmake(&request, &self.directory, &self.config.address, self.config.score_weights) {
            Ok(l) => l,
            Err(RequestError::UnknownConcept(_)) => return respond(req, Code::NOT_FOUND),
            Err(_) => return respond(req, Code::BAD_REQUEST),
        };
        let (candidates, hops, remote) = if !local.is_empty() {
            let with_qos: Vec<(MatchResult, ServiceDescription)> = local
                .into_iter()
                .filter_map(|m| {
                    let s = self.directory.service(m.service_id)?.clone();
                    Some((m, s))
                })
                .collect();
            self.stats.local_hits += 1;
            (with_qos, 0, false)
        } else {
            match self.forward_request(&request, net) {
                Ok((found, hops)) => {
                    self.stats.remote_hits += 1;
                    (found, hops, true)
                }
                Err(ForwardError::NoRemoteMatch) => {
                    if let Some(resp) = self.ask_cloud(req, request.min_similarity, net) {
                        self.stats.remote_hits += 1;
                        return resp;
                    }
                    self.stats.misses += 1;
                    return respond(req, Code::NOT_FOUND);
                }
                Err(ForwardError::Overlay(_)) => {
                    self.stats.misses += 1;
                    return respond(req, Code::SERVICE_UNAVAILABLE);
                }
            }
        };
        let ranked = rank(&candidates, &weights, request.max_results);
        let links = render_links(&ranked, &candidates);
        self.last_discovery = Some(DiscoveryTrace {
            overlay_hops: hops,
            remote,
            links: ranked.len(),
        });
        CoapMessage::response_to(req, Code::CONTENT)
            .with_payload(CF_LINK_FORMAT, serialize_links(&links).into_bytes())
    }

    /// Relays a discovery the fog layer could not answer to the cloud, with
    /// the threshold this gateway applied; `None` unless the cloud found
    /// something.
    fn ask_cloud(&mut self, req: &CoapMessage, min_similarity: f64, net: &mut dyn Transport) -> Option<CoapMessage> {
        let cloud = self.config.cloud.clone()?;
        let mut out = CoapMessage::request(Code::GET, "/rd-lookup", None);
        for q in req.uri_query() {
            let kept: Vec<&str> = q.split('&').filter(|p| !p.starts_with("minsim=")).collect();
            if !kept.is_empty() {
                out.push_option(crate::coap::OPT_URI_QUERY, kept.join("&").into_bytes());
            }
        }
        out.push_option(crate::coap::OPT_URI_QUERY, format!("minsim={min_similarity}").into_bytes());
        let resp = net.call(&cloud, out).ok()?;
        if resp.code != Code::CONTENT {
            return None;
        }
        self.stats.cloud_hits += 1;
        let links = crate::coap::parse_links(&resp.payload_text()).map_or(0, |l| l.len());
        self.last_discovery = Some(DiscoveryTrace {
            overlay_hops: 0,
            remote: true,
            links,
        });
        Some(CoapMessage::response_to(req, Code::CONTENT).with_payload(CF_LINK_FORMAT, resp.payload))
    }

    /// Asks the holders of `r.concept` (and of its ancestors below the root)
    /// for matches. Hops are the slowest pointer lookup plus the forward.
    pub fn forward_request(
        &mut self,
        r: &DiscoveryRequest,
        net: &mut dyn Transport,
    ) -> Result<(Vec<(MatchResult, ServiceDescription)>, u32), ForwardError> {
        let taxonomy = self.directory.taxonomy().clone();
        let mut concepts: Vec<(u32, String)> = taxonomy
            .ancestors(&r.concept)
            .map_err(|_| ForwardError::NoRemoteMatch)?
            .into_iter()
            .filter_map(|c| {
                let d = taxonomy.depth(c).ok()?;
                (d >= 2).then(|| (d, c.to_string()))
            })
            .collect();
        concepts.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let overlay = &mut self.overlay;
        let lookups = concurrently(net, concepts.iter(), |t, (_, c)| overlay.holders(c, t));
        let mut lookup_hops = 0;
        let mut holders: Vec<String> = Vec::new();
        let mut failures = 0;
        for l in &lookups {
            match l {
                Ok((hs, hops)) => {
                    lookup_hops = lookup_hops.max(*hops);
                    for h in hs {
                        if *h != self.config.address && !holders.contains(h) {
                            holders.push(h.clone());
                        }
                    }
                }
                Err(_) => failures += 1,
            }
        }
        if failures > 0 && failures == lookups.len() {
            return Err(ForwardError::Overlay(OverlayError::LookupTimeout));
        }
        holders.truncate(self.config.fanout);
        if holders.is_empty() {
            return Err(ForwardError::NoRemoteMatch);
        }
        let body = canonical_json(&ForwardRequest {
            request: r.clone(),
            origin: self.config.address.clone(),
        });
        let replies = concurrently(net, holders.iter(), |t, h| {
            t.call(h, json_request("/dht/forward", &body)).ok()
        });
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for resp in replies.into_iter().flatten() {
            let Ok(list) = serde_json::from_slice::<MatchList>(&resp.payload) else {
                continue;
            };
            for rm in list.matches {
                if let Some((m, s)) = rm.decode() {
                    if seen.insert((m.gateway.clone(), m.service_id)) {
                        out.push((m, s));
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(ForwardError::NoRemoteMatch);
        }
        out.sort_by(|a, b| result_order(&a.0, &b.0));
        out.truncate(r.max_results);
        Ok((out, lookup_hops + 1))
    }

    fn local_matches(&self, r: &DiscoveryRequest) -> Vec<RemoteMatch> {
        matchmake(r, &self.directory, &self.config.address, self.config.score_weights)
            .unwrap_or_default()
            .iter()
            .filter_map(|m| Some(RemoteMatch::new(m, self.directory.service(m.service_id)?)))
            .collect()
    }

    fn handle_forwarded(&mut self, req: &CoapMessage) -> CoapMessage {
        let Ok(f) = serde_json::from_slice::<ForwardRequest>(&req.payload) else {
            return respond(req, Code::BAD_REQUEST);
        };
        self.stats.forwarded_in += 1;
        let matches = self.local_matches(&f.request);
        json_response(req, Code::CONTENT, &canonical_json(&MatchList { matches }))
    }

    fn handle_cloud_query(&mut self, req: &CoapMessage) -> CoapMessage {
        let Ok(q) = serde_json::from_slice::<GatewayQuery>(&req.payload) else {
            return respond(req, Code::BAD_REQUEST);
        };
        let matches = match q {
            GatewayQuery::Discover { request } => self.local_matches(&request),
            GatewayQuery::Outputs { concepts } => self.producers(&concepts),
        };
        json_response(req, Code::CONTENT, &canonical_json(&MatchList { matches }))
    }

    /// Services with an output equal to, or more specific than, one of
    /// `concepts`.
    fn producers(&self, concepts: &[String]) -> Vec<RemoteMatch> {
        let t = self.directory.taxonomy();
        let satisfies = |have: &str, want: &str| {
            have == want || t.subsumes(want, have).unwrap_or(false)
        };
        self.directory
            .services()
            .filter(|s| {
                s.outputs
                    .iter()
                    .any(|o| concepts.iter().any(|c| satisfies(o, c)))
            })
            .filter_map(|s| {
                let m = MatchResult {
                    service_id: s.id?,
                    gateway: self.config.address.clone(),
                    degree: crate::matchmaker::Degree::Exact,
                    score: 1.0,
                };
                Some(RemoteMatch::new(&m, s))
            })
            .collect()
    }

    /// Top-level branches of every concept the local services touch.
    pub fn advertised_branches(&self) -> Vec<String> {
        let t = self.directory.taxonomy();
        let mut out = BTreeSet::new();
        for s in self.directory.services() {
            for c in std::iter::once(&s.functional_concept)
                .chain(&s.inputs)
                .chain(&s.outputs)
            {
                if let Ok(Some(top)) = t.top_level_of(c) {
                    out.insert(top.to_string());
                }
            }
        }
        out.into_iter().collect()
    }

    fn announce_if_changed(&mut self, net: &mut dyn Transport) {
        if self.config.cloud.is_some() && self.advertised_branches() != self.announced {
            self.announce(net);
        }
    }

    pub fn announce(&mut self, net: &mut dyn Transport) {
        let Some(cloud) = self.config.cloud.clone() else {
            return;
        };
        self.announced = self.advertised_branches();
        let a = Announcement {
            address: self.config.address.clone(),
            ordinal: self.config.ordinal,
            location: self.config.location,
            concepts: self.announced.clone(),
        };
        let _ = net.call(&cloud, json_request("/gw/announce", &canonical_json(&a)));
    }
}

pub(crate) fn rank(
    candidates: &[(MatchResult, ServiceDescription)],
    w: &WeightVector,
    k: usize,
) -> Vec<Ranked> {
    let input: Vec<_> = candidates.iter().map(|(m, s)| (m.clone(), s.qos)).collect();
    select_rank(&input, w, k)
}

pub(crate) fn render_links(ranked: &[Ranked], candidates: &[(MatchResult, ServiceDescription)]) -> Vec<LinkEntry> {
    ranked
        .iter()
        .filter_map(|r| {
            let (_, s) = candidates
                .iter()
                .find(|(m, _)| m.service_id == r.result.service_id && m.gateway == r.result.gateway)?;
            let path = if s.path.starts_with('/') {
                s.path.clone()
            } else {
                format!("/{}", s.path)
            };
            Some(
                LinkEntry::new(format!("coap://{}{}", r.result.gateway, path))
                    .param("rt", s.functional_concept.clone())
                    .param("deg", r.result.degree.name())
                    .param("score", format!("{:.3}", r.result.score))
                    .param("util", format!("{:.3}", r.utility))
                    .param("id", r.result.service_id.to_string()),
            )
        })
        .collect()
}

impl Node for Gateway {
    fn address(&self) -> &str {
        &self.config.address
    }

    fn handle(&mut self, req: &CoapMessage, _from: &str, net: &mut dyn Transport) -> CoapMessage {
        self.dispatch(req, net)
    }

    fn on_timer(&mut self, timer: Timer, net: &mut dyn Transport) {
        match timer {
            Timer::Stabilize => self.overlay.stabilize(net),
            Timer::FixFingers => self.overlay.fix_fingers(net),
            Timer::CheckPredecessor => self.overlay.check_predecessor(net),
            Timer::Republish => {
                // re-advertise whatever the directory holds, then refresh
                for c in self.directory.local_concepts() {
                    if !self.overlay.published().contains(&c) {
                        let _ = self.overlay.publish(&c, net);
                    }
                }
                self.overlay.republish(net);
            }
            Timer::Expire => {
                self.expire_stale(net);
            }
            Timer::Announce => self.announce(net),
        }
    }

    fn overlay(&self) -> Option<&Overlay> {
        Some(&self.overlay)
    }

    fn local_concepts(&self) -> BTreeSet<String> {
        self.directory.local_concepts()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

/// Content format of a response body.
pub fn is_json(resp: &CoapMessage) -> bool {
    resp.content_format() == Some(CF_JSON)
}

