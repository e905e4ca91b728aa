use std::collections::BTreeSet;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::messages::*;
use super::{
    distance, finger_start, hash_key, in_open, in_open_closed, NodeRef, OverlayError,
    PointerRecord, PointerStore, DEFAULT_M,
};
use crate::coap::{CoapMessage, Code};
use crate::model::canonical_json;
use crate::net::{json_request, json_response, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlayConfig {
    pub m: u32,
    /// Length of the successor list.
    pub successors: usize,
    /// Number of pointer holders a request is forwarded to.
    pub fanout: usize,
    pub republish_ms: u64,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        Self {
            m: DEFAULT_M,
            successors: 3,
            fanout: 3,
            republish_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingTable {
    pub me: NodeRef,
    /// Sorted by ring distance from `me`; never empty once joined.
    pub successors: Vec<NodeRef>,
    pub predecessor: Option<NodeRef>,
    pub fingers: Vec<Option<NodeRef>>,
    next_finger: usize,
}

impl RoutingTable {
    fn new(me: NodeRef, m: u32) -> Self {
        Self {
            successors: vec![me.clone()],
            me,
            predecessor: None,
            fingers: vec![None; m as usize],
            next_finger: 0,
        }
    }

    pub fn successor(&self) -> &NodeRef {
        self.successors.first().unwrap_or(&self.me)
    }

    fn forget(&mut self, id: u64) {
        self.successors.retain(|n| n.id != id);
        if self.successors.is_empty() {
            self.successors.push(self.me.clone());
        }
        for f in &mut self.fingers {
            if f.as_ref().is_some_and(|n| n.id == id) {
                *f = None;
            }
        }
        if self.predecessor.as_ref().is_some_and(|p| p.id == id) {
            self.predecessor = None;
        }
    }
}

/// Result of a successor lookup: the node and the number of remote steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lookup {
    pub node: NodeRef,
    pub hops: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverlayStats {
    pub lookups: u64,
    pub lookup_hops: u64,
    pub failed_lookups: u64,
}

enum Step {
    Found(NodeRef),
    Next(NodeRef),
}

/// The overlay half of a gateway.
#[derive(Debug, Clone)]
pub struct Overlay {
    pub config: OverlayConfig,
    table: RoutingTable,
    store: PointerStore,
    /// Concepts this node currently advertises as a holder.
    published: BTreeSet<String>,
    joined: bool,
    pub stats: OverlayStats,
}

fn decode<T: DeserializeOwned>(resp: &CoapMessage) -> Option<T> {
    if !resp.code.is_success() {
        return None;
    }
    serde_json::from_slice(&resp.payload).ok()
}

impl Overlay {
    pub fn new(address: &str, config: OverlayConfig) -> Self {
        let me = NodeRef::new(address, config.m);
        Self {
            table: RoutingTable::new(me, config.m),
            store: PointerStore::default(),
            published: BTreeSet::new(),
            joined: false,
            stats: OverlayStats::default(),
            config,
        }
    }

    pub fn me(&self) -> &NodeRef {
        &self.table.me
    }

    pub fn table(&self) -> &RoutingTable {
        &self.table
    }

    pub fn store(&self) -> &PointerStore {
        &self.store
    }

    pub fn published(&self) -> &BTreeSet<String> {
        &self.published
    }

    pub fn is_joined(&self) -> bool {
        self.joined
    }

    pub fn key_of(&self, concept: &str) -> u64 {
        hash_key(concept, self.config.m)
    }

    /// Starts a new ring with this node alone.
    pub fn create(&mut self) {
        self.table = RoutingTable::new(self.table.me.clone(), self.config.m);
        self.joined = true;
    }

    /// Joins the ring `bootstrap` belongs to, then runs one stabilization
    /// round so the successor learns about us.
    pub fn join(&mut self, bootstrap: &str, net: &mut dyn Transport) -> Result<(), OverlayError> {
        self.table = RoutingTable::new(self.table.me.clone(), self.config.m);
        let start = NodeRef::new(bootstrap, self.config.m);
        let key = self.table.me.id;
        let found = self
            .lookup_from(start, key, &BTreeSet::new(), net)
            .map_err(|_| OverlayError::BootstrapUnreachable)?;
        self.table.successors = vec![found.node];
        self.joined = true;
        self.stabilize(net);
        Ok(())
    }

    fn closest_preceding(&self, key: u64, exclude: &BTreeSet<u64>) -> Option<&NodeRef> {
        let me = self.table.me.id;
        let m = self.config.m;
        self.table
            .fingers
            .iter()
            .flatten()
            .chain(&self.table.successors)
            .filter(|n| !exclude.contains(&n.id) && in_open(n.id, me, key))
            .max_by_key(|n| distance(me, n.id, m))
    }

    fn step(&self, key: u64, exclude: &BTreeSet<u64>) -> Step {
        let me = &self.table.me;
        let succ = self
            .table
            .successors
            .iter()
            .find(|n| !exclude.contains(&n.id))
            .unwrap_or(me);
        if in_open_closed(key, me.id, succ.id) {
            return Step::Found(succ.clone());
        }
        match self.closest_preceding(key, exclude) {
            Some(n) if n.id != me.id => Step::Next(n.clone()),
            _ => Step::Next(succ.clone()),
        }
    }

    /// Iterative lookup driven by this node, starting at `start`.
    fn lookup_from(
        &mut self,
        start: NodeRef,
        key: u64,
        exclude: &BTreeSet<u64>,
        net: &mut dyn Transport,
    ) -> Result<Lookup, OverlayError> {
        let mut exclude = exclude.clone();
        let mut trail: Vec<NodeRef> = Vec::new();
        let mut current = start;
        let mut hops = 0u32;
        let budget = 4 * self.config.m as usize + 4 * self.config.successors + 8;
        for _ in 0..budget {
            let step = if current.id == self.table.me.id {
                self.step(key, &exclude)
            } else {
                let body = canonical_json(&FindRequest {
                    key,
                    exclude: exclude.iter().copied().collect(),
                });
                hops += 1;
                match net.call(&current.addr, json_request("/dht/find", &body)) {
                    Ok(resp) => match decode::<FindResponse>(&resp) {
                        Some(FindResponse { found: true, node }) => Step::Found(node),
                        Some(FindResponse { found: false, node }) => Step::Next(node),
                        None => return Err(OverlayError::LookupTimeout),
                    },
                    Err(_) => {
                        exclude.insert(current.id);
                        self.table.forget(current.id);
                        match trail.pop() {
                            Some(prev) => {
                                current = prev;
                                continue;
                            }
                            None => return Err(OverlayError::LookupTimeout),
                        }
                    }
                }
            };
            match step {
                Step::Found(node) => return Ok(Lookup { node, hops }),
                Step::Next(node) => {
                    trail.push(std::mem::replace(&mut current, node));
                }
            }
        }
        Err(OverlayError::LookupTimeout)
    }

    /// Successor of `key`, skipping the nodes in `exclude`.
    pub fn find_successor_excluding(
        &mut self,
        key: u64,
        exclude: &BTreeSet<u64>,
        net: &mut dyn Transport,
    ) -> Result<Lookup, OverlayError> {
        if !self.joined {
            return Err(OverlayError::NotJoined);
        }
        let me = self.table.me.clone();
        let out = self.lookup_from(me, key, exclude, net);
        self.stats.lookups += 1;
        match &out {
            Ok(l) => self.stats.lookup_hops += u64::from(l.hops),
            Err(_) => self.stats.failed_lookups += 1,
        }
        out
    }

    pub fn find_successor(&mut self, key: u64, net: &mut dyn Transport) -> Result<Lookup, OverlayError> {
        self.find_successor_excluding(key, &BTreeSet::new(), net)
    }

    fn state_of(&mut self, node: &NodeRef, net: &mut dyn Transport) -> Option<StateResponse> {
        if node.id == self.table.me.id {
            return Some(self.state());
        }
        let resp = net.call(&node.addr, json_request("/dht/state", "{}")).ok()?;
        decode(&resp)
    }

    fn state(&self) -> StateResponse {
        StateResponse {
            predecessor: self.table.predecessor.clone(),
            successors: self.table.successors.clone(),
        }
    }

    /// Rebuilds the successor list from `succ` followed by its own list.
    fn adopt_successor_list(&mut self, succ: NodeRef, tail: Vec<NodeRef>) {
        let me = self.table.me.id;
        let mut list: Vec<NodeRef> = Vec::new();
        for n in std::iter::once(succ).chain(tail) {
            if n.id == me {
                break;
            }
            if !list.iter().any(|x| x.id == n.id) {
                list.push(n);
            }
        }
        list.truncate(self.config.successors);
        if list.is_empty() {
            list.push(self.table.me.clone());
        }
        self.table.successors = list;
    }

    /// Verifies the successor, adopts a closer one if it exists, refreshes
    /// the successor list and notifies the successor.
    pub fn stabilize(&mut self, net: &mut dyn Transport) {
        if !self.joined {
            return;
        }
        let me = self.table.me.clone();
        for _ in 0..=self.config.successors {
            let succ = self.table.successor().clone();
            let Some(state) = self.state_of(&succ, net) else {
                self.table.forget(succ.id);
                continue;
            };
            let mut chosen = succ.clone();
            let mut chosen_state = state;
            if let Some(x) = chosen_state.predecessor.clone() {
                if x.id != me.id && in_open(x.id, me.id, succ.id) {
                    if let Some(xs) = self.state_of(&x, net) {
                        chosen = x;
                        chosen_state = xs;
                    }
                }
            }
            self.adopt_successor_list(chosen.clone(), chosen_state.successors);
            if chosen.id == me.id {
                if let Some(p) = self.table.predecessor.clone() {
                    if p.id != me.id {
                        self.table.successors = vec![p];
                        continue;
                    }
                }
                return;
            }
            let body = canonical_json(&NotifyRequest { node: me.clone() });
            match net.call(&chosen.addr, json_request("/dht/notify", &body)) {
                Ok(resp) => {
                    if let Some(r) = decode::<NotifyResponse>(&resp) {
                        self.store.merge(r.records);
                    }
                    return;
                }
                Err(_) => self.table.forget(chosen.id),
            }
        }
    }

    fn on_notify(&mut self, node: NodeRef) -> Vec<PointerRecord> {
        let me = self.table.me.id;
        if node.id == me {
            return Vec::new();
        }
        let adopt = match &self.table.predecessor {
            None => true,
            Some(p) => p.id == me || in_open(node.id, p.id, me),
        };
        if adopt {
            self.table.predecessor = Some(node.clone());
        }
        if self.table.successor().id == me {
            self.table.successors = vec![node.clone()];
        }
        if self.table.predecessor.as_ref().is_some_and(|p| p.id == node.id) {
            self.store.split_off_outside(node.id, me)
        } else {
            Vec::new()
        }
    }

    /// Re-resolves fingers round-robin. Fingers that fall before the
    /// successor are filled without a lookup; at most one lookup is made.
    pub fn fix_fingers(&mut self, net: &mut dyn Transport) {
        if !self.joined {
            return;
        }
        let m = self.config.m;
        let me = self.table.me.id;
        for _ in 0..m {
            let i = self.table.next_finger;
            self.table.next_finger = (i + 1) % m as usize;
            let target = finger_start(me, i as u32, m);
            let succ = self.table.successor().clone();
            if in_open_closed(target, me, succ.id) {
                self.table.fingers[i] = Some(succ);
                continue;
            }
            if let Ok(l) = self.find_successor(target, net) {
                self.table.fingers[i] = Some(l.node);
            }
            return;
        }
    }

    /// Clears the predecessor if it does not answer.
    pub fn check_predecessor(&mut self, net: &mut dyn Transport) {
        let Some(p) = self.table.predecessor.clone() else {
            return;
        };
        if p.id == self.table.me.id {
            return;
        }
        let ping = CoapMessage::request(Code::POST, "/dht/ping", None);
        if net.call(&p.addr, ping).is_err() {
            self.table.predecessor = None;
        }
    }

    /// Graceful departure: records go to the successor, neighbours are told.
    pub fn leave(&mut self, net: &mut dyn Transport) {
        if !self.joined {
            return;
        }
        let me = self.table.me.clone();
        let notice = LeaveNotice {
            node: me.clone(),
            predecessor: self.table.predecessor.clone(),
            successors: self.table.successors.clone(),
            records: self.store.take_all(),
        };
        let body = canonical_json(&notice);
        let succ = self.table.successor().clone();
        if succ.id != me.id {
            let _ = net.call(&succ.addr, json_request("/dht/leave", &body));
        }
        if let Some(p) = &self.table.predecessor {
            if p.id != me.id && p.id != succ.id {
                let _ = net.call(&p.addr, json_request("/dht/leave", &body));
            }
        }
        self.table = RoutingTable::new(me, self.config.m);
        self.published.clear();
        self.joined = false;
    }

    fn on_leave(&mut self, notice: LeaveNotice) {
        let me = self.table.me.clone();
        let leaving = notice.node.id;
        if self.table.predecessor.as_ref().is_some_and(|p| p.id == leaving) {
            self.table.predecessor = notice.predecessor.filter(|p| p.id != me.id && p.id != leaving);
            self.store.merge(notice.records.clone());
        }
        if self.table.successors.iter().any(|s| s.id == leaving) {
            let m = self.config.m;
            let mut candidates: Vec<NodeRef> = self
                .table
                .successors
                .iter()
                .chain(&notice.successors)
                .filter(|s| s.id != leaving)
                .cloned()
                .collect();
            candidates.sort_by_key(|n| (distance(me.id, n.id, m) == 0, distance(me.id, n.id, m)));
            let mut rest = candidates.into_iter();
            if let Some(first) = rest.next() {
                self.adopt_successor_list(first, rest.collect());
            }
        }
        self.table.forget(leaving);
    }

    /// Routes a pointer operation for `concept` to the responsible node,
    /// retrying around unreachable owners. Returns the response and the
    /// lookup hops.
    fn route_pointer(
        &mut self,
        concept: &str,
        op: &PointerOp,
        net: &mut dyn Transport,
    ) -> Result<(PointerResponse, u32), OverlayError> {
        let key = self.key_of(concept);
        let mut exclude = BTreeSet::new();
        for _ in 0..=self.config.successors {
            let l = self.find_successor_excluding(key, &exclude, net)?;
            if l.node.id == self.table.me.id {
                return Ok((self.apply_pointer(op.clone(), net.now_ms()), l.hops));
            }
            let body = canonical_json(op);
            match net.call(&l.node.addr, json_request("/dht/pointer", &body)) {
                Ok(resp) => {
                    let r = decode(&resp).ok_or(OverlayError::LookupTimeout)?;
                    return Ok((r, l.hops));
                }
                Err(_) => {
                    exclude.insert(l.node.id);
                    self.table.forget(l.node.id);
                }
            }
        }
        Err(OverlayError::LookupTimeout)
    }

    fn apply_pointer(&mut self, op: PointerOp, now_ms: u64) -> PointerResponse {
        let concept = match op {
            PointerOp::Publish { concept, holder } => {
                let key = self.key_of(&concept);
                self.store.publish(key, &concept, &holder, now_ms);
                concept
            }
            PointerOp::Unpublish { concept, holder } => {
                self.store.unpublish(&concept, &holder);
                concept
            }
            PointerOp::Get { concept } => concept,
            PointerOp::Transfer { records } => {
                self.store.merge(records);
                return PointerResponse { holders: Vec::new() };
            }
        };
        PointerResponse {
            holders: self
                .store
                .get(&concept)
                .map(|r| r.holders.keys().cloned().collect())
                .unwrap_or_default(),
        }
    }

    /// Advertises this node as a holder of `concept`.
    pub fn publish(&mut self, concept: &str, net: &mut dyn Transport) -> Result<u32, OverlayError> {
        let op = PointerOp::Publish {
            concept: concept.to_string(),
            holder: self.table.me.addr.clone(),
        };
        let (_, hops) = self.route_pointer(concept, &op, net)?;
        self.published.insert(concept.to_string());
        Ok(hops)
    }

    pub fn unpublish(&mut self, concept: &str, net: &mut dyn Transport) -> Result<u32, OverlayError> {
        self.published.remove(concept);
        let op = PointerOp::Unpublish {
            concept: concept.to_string(),
            holder: self.table.me.addr.clone(),
        };
        self.route_pointer(concept, &op, net).map(|(_, h)| h)
    }

    /// Forgets a local advertisement without touching the ring; used to roll
    /// back state when the publish itself failed.
    pub fn forget_published(&mut self, concept: &str) {
        self.published.remove(concept);
    }

    /// Gateways advertising `concept`, and the lookup hops spent.
    pub fn holders(
        &mut self,
        concept: &str,
        net: &mut dyn Transport,
    ) -> Result<(Vec<String>, u32), OverlayError> {
        let op = PointerOp::Get {
            concept: concept.to_string(),
        };
        self.route_pointer(concept, &op, net)
            .map(|(r, hops)| (r.holders, hops))
    }

    /// Soft-state maintenance: re-publishes local concepts, drops holders
    /// that missed three intervals and re-homes records this node is not
    /// responsible for.
    pub fn republish(&mut self, net: &mut dyn Transport) {
        if !self.joined {
            return;
        }
        let concepts: Vec<String> = self.published.iter().cloned().collect();
        for c in concepts {
            let _ = self.publish(&c, net);
        }
        let cutoff = net
            .now_ms()
            .saturating_sub(3 * self.config.republish_ms);
        self.store.expire(cutoff);
        self.rehome(net);
    }

    fn rehome(&mut self, net: &mut dyn Transport) {
        let me = self.table.me.id;
        let Some(pred) = self.table.predecessor.clone() else {
            return;
        };
        let stray = self.store.split_off_outside(pred.id, me);
        for rec in stray {
            let mut delivered = false;
            if let Ok(l) = self.find_successor(rec.key, net) {
                if l.node.id == me {
                    self.store.merge([rec.clone()]);
                    delivered = true;
                } else {
                    let op = PointerOp::Transfer {
                        records: vec![rec.clone()],
                    };
                    let body = canonical_json(&op);
                    delivered = net
                        .call(&l.node.addr, json_request("/dht/pointer", &body))
                        .is_ok();
                }
            }
            if !delivered {
                self.store.merge([rec]);
            }
        }
    }

    /// Serves `/dht/find`, `/dht/state`, `/dht/notify`, `/dht/ping`,
    /// `/dht/pointer` and `/dht/leave`; `None` for any other path.
    pub fn handle(&mut self, req: &CoapMessage, now_ms: u64) -> Option<CoapMessage> {
        let segs = req.path_segments();
        if segs.len() != 2 || segs[0] != "dht" {
            return None;
        }
        if req.code != Code::POST {
            return Some(CoapMessage::response_to(req, Code::METHOD_NOT_ALLOWED));
        }
        let bad = || CoapMessage::response_to(req, Code::BAD_REQUEST);
        let ok = |body: String| json_response(req, Code::CONTENT, &body);
        let resp = match segs[1].as_str() {
            "ping" => CoapMessage::response_to(req, Code::CONTENT),
            "state" => ok(canonical_json(&self.state())),
            "find" => match serde_json::from_slice::<FindRequest>(&req.payload) {
                Ok(f) => {
                    let exclude = f.exclude.into_iter().collect();
                    let (found, node) = match self.step(f.key, &exclude) {
                        Step::Found(n) => (true, n),
                        Step::Next(n) => (false, n),
                    };
                    ok(canonical_json(&FindResponse { found, node }))
                }
                Err(_) => bad(),
            },
            "notify" => match serde_json::from_slice::<NotifyRequest>(&req.payload) {
                Ok(n) => {
                    let records = self.on_notify(n.node);
                    ok(canonical_json(&NotifyResponse { records }))
                }
                Err(_) => bad(),
            },
            "pointer" => match serde_json::from_slice::<PointerOp>(&req.payload) {
                Ok(op) => ok(canonical_json(&self.apply_pointer(op, now_ms))),
                Err(_) => bad(),
            },
            "leave" => match serde_json::from_slice::<LeaveNotice>(&req.payload) {
                Ok(n) => {
                    self.on_leave(n);
                    CoapMessage::response_to(req, Code::CHANGED)
                }
                Err(_) => bad(),
            },
            _ => CoapMessage::response_to(req, Code::NOT_FOUND),
        };
        Some(resp)
    }

    /// Drops every record without handing it over (abrupt failure).
    pub fn crash(&mut self) {
        self.store = PointerStore::default();
        self.table = RoutingTable::new(self.table.me.clone(), self.config.m);
        self.published.clear();
        self.joined = false;
    }
}
