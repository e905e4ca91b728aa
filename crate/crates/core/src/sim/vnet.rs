use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coap::{decode_message, encode_message, method_name, CoapMessage, Retransmission};
use crate::model::Identifier;
use crate::net::{CallError, Node, Timer, Transport};

/// Latency and loss of a link, in both directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub latency_ms: f64,
    #[serde(default)]
    pub drop_prob: f64,
}

impl LinkSpec {
    pub fn new(latency_ms: f64, drop_prob: f64) -> Self {
        Self {
            latency_ms,
            drop_prob,
        }
    }

    fn latency_us(&self) -> u64 {
        (self.latency_ms * 1000.0).round().max(0.0) as u64
    }
}

pub const FOG_LATENCY_MS: f64 = 5.0;
pub const CLOUD_LATENCY_MS: f64 = 40.0;

/// Message counters. Every transmission attempt is counted once as sent and
/// then once as delivered or dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub bytes: u64,
    /// Request transmissions keyed by `METHOD /first/two` path segments, with
    /// identifiers replaced by `{id}`.
    pub by_type: BTreeMap<String, u64>,
}

/// Deterministic in-process network: nodes, links, a seeded loss stream and
/// a clock in microseconds.
pub struct VirtualNet {
    nodes: BTreeMap<String, Option<Box<dyn Node>>>,
    links: BTreeMap<(String, String), LinkSpec>,
    fog_link: LinkSpec,
    cloud_link: LinkSpec,
    cloud_nodes: BTreeSet<String>,
    dead: BTreeSet<String>,
    rng: ChaCha8Rng,
    clock_us: u64,
    next_mid: u16,
    pub retransmission: Retransmission,
    pub stats: NetStats,
}

impl VirtualNet {
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: BTreeMap::new(),
            links: BTreeMap::new(),
            fog_link: LinkSpec::new(FOG_LATENCY_MS, 0.0),
            cloud_link: LinkSpec::new(CLOUD_LATENCY_MS, 0.0),
            cloud_nodes: BTreeSet::new(),
            dead: BTreeSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            clock_us: 0,
            next_mid: 1,
            retransmission: Retransmission::default(),
            stats: NetStats::default(),
        }
    }

    pub fn set_default_links(&mut self, fog: LinkSpec, cloud: LinkSpec) {
        self.fog_link = fog;
        self.cloud_link = cloud;
    }

    pub fn set_link(&mut self, a: &str, b: &str, spec: LinkSpec) {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.links.insert((key.0.to_string(), key.1.to_string()), spec);
    }

    pub fn link(&self, a: &str, b: &str) -> LinkSpec {
        let key = if a <= b { (a, b) } else { (b, a) };
        if let Some(l) = self.links.get(&(key.0.to_string(), key.1.to_string())) {
            return *l;
        }
        if self.cloud_nodes.contains(a) || self.cloud_nodes.contains(b) {
            self.cloud_link
        } else {
            self.fog_link
        }
    }

    pub fn add_node(&mut self, node: Box<dyn Node>) {
        let addr = node.address().to_string();
        self.dead.remove(&addr);
        self.nodes.insert(addr, Some(node));
    }

    /// Marks `addr` as reached over the fog-to-cloud link.
    pub fn add_cloud_node(&mut self, node: Box<dyn Node>) {
        self.cloud_nodes.insert(node.address().to_string());
        self.add_node(node);
    }

    pub fn remove_node(&mut self, addr: &str) -> Option<Box<dyn Node>> {
        self.nodes.remove(addr).flatten()
    }

    /// Makes `addr` unreachable; its state is kept for inspection.
    pub fn kill(&mut self, addr: &str) {
        self.dead.insert(addr.to_string());
    }

    pub fn is_alive(&self, addr: &str) -> bool {
        self.nodes.contains_key(addr) && !self.dead.contains(addr)
    }

    pub fn addresses(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn live_addresses(&self) -> Vec<String> {
        self.nodes
            .keys()
            .filter(|a| !self.dead.contains(*a))
            .cloned()
            .collect()
    }

    pub fn node(&self, addr: &str) -> Option<&dyn Node> {
        self.nodes.get(addr).and_then(|n| n.as_deref())
    }

    pub fn node_as<T: Node>(&self, addr: &str) -> Option<&T> {
        self.node(addr)?.as_any().downcast_ref()
    }

    pub fn node_as_mut<T: Node>(&mut self, addr: &str) -> Option<&mut T> {
        self.nodes
            .get_mut(addr)?
            .as_deref_mut()?
            .as_any_mut()
            .downcast_mut()
    }

    pub fn now(&self) -> u64 {
        self.clock_us
    }

    /// Advances the global clock; it never moves backwards.
    pub fn advance_to(&mut self, t_us: u64) {
        self.clock_us = self.clock_us.max(t_us);
    }

    fn lost(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.rng.random::<f64>() < p
        }
    }

    fn type_key(req: &CoapMessage) -> String {
        let method = method_name(req.code).unwrap_or("?");
        let segs = req.path_segments();
        let path: Vec<&str> = segs
            .iter()
            .take(2)
            .map(|s| if s.parse::<Identifier>().is_ok() { "{id}" } else { s.as_str() })
            .collect();
        format!("{method} /{}", path.join("/"))
    }

    /// Sends `req` from `from` to `to` as a confirmable exchange starting at
    /// `*cursor`, handling loss with the retransmission schedule. On return
    /// `*cursor` is the time the response arrived or the exchange gave up.
    pub fn rpc(
        &mut self,
        from: &str,
        to: &str,
        mut req: CoapMessage,
        cursor: &mut u64,
    ) -> Result<CoapMessage, CallError> {
        if !self.nodes.contains_key(to) {
            return Err(CallError::UnknownAddress(to.to_string()));
        }
        req.message_id = self.next_mid;
        req.token = self.next_mid.to_be_bytes().to_vec();
        self.next_mid = self.next_mid.wrapping_add(1);
        let bytes = encode_message(&req).expect("locally built requests encode");
        let key = Self::type_key(&req);
        let link = self.link(from, to);
        let latency = link.latency_us();
        let mut cached: Option<(Vec<u8>, u64)> = None;
        for attempt in 0..=self.retransmission.max_retransmit {
            let timeout = self.retransmission.timeout_ms(attempt) * 1000;
            let sent_at = *cursor;
            self.stats.sent += 1;
            self.stats.bytes += bytes.len() as u64;
            *self.stats.by_type.entry(key.clone()).or_default() += 1;
            let busy = matches!(self.nodes.get(to), Some(None));
            if self.dead.contains(to) || busy || self.lost(link.drop_prob) {
                self.stats.dropped += 1;
                *cursor = sent_at + timeout;
                continue;
            }
            self.stats.delivered += 1;
            let (resp_bytes, ready_at) = match &cached {
                Some((b, _)) => (b.clone(), sent_at + latency),
                None => {
                    let decoded = decode_message(&bytes).expect("encoded request decodes");
                    let mut node = self
                        .nodes
                        .get_mut(to)
                        .and_then(Option::take)
                        .expect("node present and idle");
                    let mut ctx = Ctx {
                        net: self,
                        me: to.to_string(),
                        now: sent_at + latency,
                    };
                    let resp = node.handle(&decoded, from, &mut ctx);
                    let done = ctx.now;
                    self.nodes.insert(to.to_string(), Some(node));
                    let b = encode_message(&resp).expect("handler responses encode");
                    cached = Some((b.clone(), done));
                    (b, done)
                }
            };
            self.stats.sent += 1;
            self.stats.bytes += resp_bytes.len() as u64;
            if self.lost(link.drop_prob) {
                self.stats.dropped += 1;
                *cursor = (sent_at + timeout).max(ready_at + latency);
                continue;
            }
            self.stats.delivered += 1;
            *cursor = ready_at + latency;
            return Ok(decode_message(&resp_bytes).expect("encoded response decodes"));
        }
        Err(CallError::Timeout(to.to_string()))
    }

    /// A request from an address outside the simulation (a device or a
    /// test client) issued at time `at_us`. Returns the response and the
    /// completion time.
    pub fn client_call(
        &mut self,
        from: &str,
        to: &str,
        req: CoapMessage,
        at_us: u64,
    ) -> (Result<CoapMessage, CallError>, u64) {
        self.advance_to(at_us);
        let mut cursor = at_us;
        let out = self.rpc(from, to, req, &mut cursor);
        (out, cursor)
    }

    /// Runs `f` on node `addr` as an operation starting at `at_us`; returns
    /// `None` if the node is missing or dead. The second value is the time
    /// the operation finished.
    pub fn with_node<T>(
        &mut self,
        addr: &str,
        at_us: u64,
        f: impl FnOnce(&mut dyn Node, &mut dyn Transport) -> T,
    ) -> Option<(T, u64)> {
        if self.dead.contains(addr) {
            return None;
        }
        self.advance_to(at_us);
        let mut node = self.nodes.get_mut(addr)?.take()?;
        let mut ctx = Ctx {
            net: self,
            me: addr.to_string(),
            now: at_us,
        };
        let out = f(node.as_mut(), &mut ctx);
        let done = ctx.now;
        self.nodes.insert(addr.to_string(), Some(node));
        Some((out, done))
    }

    pub fn fire_timer(&mut self, addr: &str, timer: Timer, at_us: u64) -> Option<u64> {
        self.with_node(addr, at_us, |n, t| n.on_timer(timer, t))
            .map(|(_, done)| done)
    }
}

/// The transport handed to a node while it runs an operation.
struct Ctx<'a> {
    net: &'a mut VirtualNet,
    me: String,
    now: u64,
}

impl Transport for Ctx<'_> {
    fn now(&self) -> u64 {
        self.now
    }

    fn set_now(&mut self, t: u64) {
        self.now = t;
    }

    fn call(&mut self, to: &str, req: CoapMessage) -> Result<CoapMessage, CallError> {
        let me = self.me.clone();
        self.net.rpc(&me, to, req, &mut self.now)
    }
}
