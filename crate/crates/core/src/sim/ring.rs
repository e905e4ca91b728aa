//! Ring inspection: snapshots of every node's overlay state, the global
//! audit, and a bare overlay peer for ring-only experiments.

use std::any::Any;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::VirtualNet;
use crate::coap::{CoapMessage, Code};
use crate::net::{Node, Timer, Transport};
use crate::overlay::{hash_key, ring_successor, NodeRef, Overlay, OverlayConfig, PointerRecord};

/// A node that only takes part in the overlay.
pub struct DhtPeer {
    pub overlay: Overlay,
}

impl DhtPeer {
    pub fn new(addr: &str, config: OverlayConfig) -> Self {
        Self {
            overlay: Overlay::new(addr, config),
        }
    }
}

impl Node for DhtPeer {
    fn address(&self) -> &str {
        &self.overlay.me().addr
    }

    fn handle(&mut self, req: &CoapMessage, _from: &str, net: &mut dyn Transport) -> CoapMessage {
        self.overlay
            .handle(req, net.now_ms())
            .unwrap_or_else(|| CoapMessage::response_to(req, Code::NOT_FOUND))
    }

    fn on_timer(&mut self, timer: Timer, net: &mut dyn Transport) {
        match timer {
            Timer::Stabilize => self.overlay.stabilize(net),
            Timer::FixFingers => self.overlay.fix_fingers(net),
            Timer::CheckPredecessor => self.overlay.check_predecessor(net),
            Timer::Republish => self.overlay.republish(net),
            Timer::Expire | Timer::Announce => {}
        }
    }

    fn overlay(&self) -> Option<&Overlay> {
        Some(&self.overlay)
    }

    fn local_concepts(&self) -> BTreeSet<String> {
        self.overlay.published().clone()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingNodeState {
    pub addr: String,
    pub id: u64,
    pub successor: NodeRef,
    pub predecessor: Option<NodeRef>,
    pub records: Vec<PointerRecord>,
    /// Concepts the node holds services for.
    pub concepts: BTreeSet<String>,
}

/// Overlay state of every live, joined node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSnapshot {
    pub m: u32,
    pub nodes: Vec<RingNodeState>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingAudit {
    pub nodes: usize,
    pub successors_ok: bool,
    pub predecessors_ok: bool,
    /// Every record lives on the successor of its key.
    pub residency_ok: bool,
    /// Every live node's concepts are advertised with it as a holder.
    pub completeness_ok: bool,
    pub misplaced: Vec<String>,
    pub missing: Vec<String>,
}

impl RingAudit {
    pub fn passed(&self) -> bool {
        self.successors_ok && self.predecessors_ok && self.residency_ok && self.completeness_ok
    }
}

pub fn snapshot(net: &VirtualNet) -> RingSnapshot {
    let mut m = crate::overlay::DEFAULT_M;
    let mut nodes = Vec::new();
    for addr in net.live_addresses() {
        let Some(node) = net.node(&addr) else { continue };
        let Some(ov) = node.overlay() else { continue };
        if !ov.is_joined() {
            continue;
        }
        m = ov.config.m;
        nodes.push(RingNodeState {
            addr: addr.clone(),
            id: ov.me().id,
            successor: ov.table().successor().clone(),
            predecessor: ov.table().predecessor.clone(),
            records: ov.store().records().cloned().collect(),
            concepts: node.local_concepts(),
        });
    }
    nodes.sort_by_key(|n| n.id);
    RingSnapshot { m, nodes }
}

/// Checks a snapshot against the sorted ring of its members.
pub fn audit(s: &RingSnapshot) -> RingAudit {
    let ids: Vec<u64> = s.nodes.iter().map(|n| n.id).collect();
    let n = ids.len();
    let mut out = RingAudit {
        nodes: n,
        successors_ok: true,
        predecessors_ok: true,
        residency_ok: true,
        completeness_ok: true,
        ..RingAudit::default()
    };
    for (i, node) in s.nodes.iter().enumerate() {
        let next = ids[(i + 1) % n];
        let prev = ids[(i + n - 1) % n];
        if node.successor.id != next {
            out.successors_ok = false;
        }
        let pred_ok = if n == 1 {
            node.predecessor.as_ref().is_none_or(|p| p.id == node.id)
        } else {
            node.predecessor.as_ref().is_some_and(|p| p.id == prev)
        };
        if !pred_ok {
            out.predecessors_ok = false;
        }
        for r in &node.records {
            if r.key != hash_key(&r.concept, s.m) || ring_successor(&ids, r.key) != Some(node.id) {
                out.residency_ok = false;
                out.misplaced.push(format!("{}@{}", r.concept, node.addr));
            }
        }
    }
    for node in &s.nodes {
        for c in &node.concepts {
            let owner = ring_successor(&ids, hash_key(c, s.m));
            let held = s
                .nodes
                .iter()
                .filter(|o| Some(o.id) == owner)
                .flat_map(|o| &o.records)
                .any(|r| r.concept == *c && r.holders.contains_key(&node.addr));
            if !held {
                out.completeness_ok = false;
                out.missing.push(format!("{c}@{}", node.addr));
            }
        }
    }
    out
}

/// `n` addresses `<prefix>-<i>` whose ids are pairwise distinct at `m` bits.
pub fn distinct_addresses(prefix: &str, n: usize, m: u32) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut i = 1;
    while out.len() < n {
        let addr = format!("{prefix}-{i}");
        if seen.insert(hash_key(&addr, m)) {
            out.push(addr);
        }
        i += 1;
    }
    out
}

/// One maintenance round on every live ring node: stabilize, a full pass of
/// finger repair and a predecessor check. Returns the time it ended.
pub fn maintenance_round(net: &mut VirtualNet, at_us: u64) -> u64 {
    let mut t = at_us;
    let addrs = net.live_addresses();
    for a in &addrs {
        if let Some(done) = net.fire_timer(a, Timer::CheckPredecessor, t) {
            t = t.max(done);
        }
        if let Some(done) = net.fire_timer(a, Timer::Stabilize, t) {
            t = t.max(done);
        }
    }
    let m = snapshot(net).m;
    for a in &addrs {
        for _ in 0..m {
            if let Some(done) = net.fire_timer(a, Timer::FixFingers, t) {
                t = t.max(done);
            }
        }
    }
    t
}

/// Builds a ring of [`DhtPeer`]s joined in listing order through the first
/// address and runs maintenance until every successor and predecessor is
/// right (or `max_rounds` is spent). Returns the net and the rounds used.
pub fn build_ring(addrs: &[String], config: OverlayConfig, seed: u64, max_rounds: usize) -> (VirtualNet, usize) {
    let mut net = VirtualNet::new(seed);
    let mut t = 0;
    for (i, a) in addrs.iter().enumerate() {
        net.add_node(Box::new(DhtPeer::new(a, config)));
        let bootstrap = addrs[0].clone();
        let (_, done) = net
            .with_node(a, t, |n, tr| {
                let peer = n.as_any_mut().downcast_mut::<DhtPeer>().expect("peer");
                if i == 0 {
                    peer.overlay.create();
                } else {
                    peer.overlay.join(&bootstrap, tr).expect("bootstrap reachable");
                }
            })
            .expect("node just added");
        t = done;
    }
    let mut rounds = 0;
    while rounds < max_rounds {
        let a = audit(&snapshot(&net));
        if a.successors_ok && a.predecessors_ok && fingers_settled(&net) {
            break;
        }
        t = maintenance_round(&mut net, t);
        rounds += 1;
    }
    maintenance_round(&mut net, t);
    (net, rounds)
}

fn fingers_settled(net: &VirtualNet) -> bool {
    net.live_addresses().iter().all(|a| {
        net.node(a)
            .and_then(|n| n.overlay())
            .is_none_or(|o| o.table().fingers.iter().all(Option::is_some))
    })
}
