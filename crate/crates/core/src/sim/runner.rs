//! Executes a scenario on the virtual network.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::path::Path;
use std::sync::Arc;

use super::metrics::{Assertion, AuditRecord, CompositionRecord, Metrics, QueryRecord, Tally};
use super::ring::{audit, maintenance_round, snapshot, RingAudit};
use super::scenario::{Action, Expect, Scenario, ScenarioError};
use super::{LinkSpec, VirtualNet};
use crate::cloud::CloudNode;
use crate::coap::{parse_links, CoapMessage, Code, CF_JSON};
use crate::gateway::{Gateway, Registered};
use crate::model::canonical_json;
use crate::net::Timer;
use crate::ontology::Taxonomy;

const CLIENT: &str = "client";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Action(usize),
    Timer(String, Timer),
    Refresh { device: usize, generation: u64 },
}

#[derive(Debug, Clone, Default)]
struct DeviceState {
    thing: Option<String>,
    generation: u64,
}

struct Runner<'a> {
    s: &'a Scenario,
    net: VirtualNet,
    queue: BinaryHeap<Reverse<(u64, u64, Event)>>,
    seq: u64,
    devices: Vec<DeviceState>,
    /// Gateways currently part of the deployment.
    active: BTreeSet<String>,
    metrics: Metrics,
}

/// Loads `path` and runs it with `seed`.
pub fn run_scenario(path: &Path, seed: u64) -> Result<Metrics, ScenarioError> {
    let loaded = Scenario::load(path)?;
    run(&loaded.scenario, &loaded.taxonomies, seed)
}

/// Runs a validated scenario whose taxonomies are already loaded, keyed by
/// the paths the configuration names.
pub fn run(
    s: &Scenario,
    taxonomies: &BTreeMap<String, Arc<Taxonomy>>,
    seed: u64,
) -> Result<Metrics, ScenarioError> {
    s.validate()?;
    let tax = |p: &str| {
        taxonomies.get(p).cloned().ok_or_else(|| ScenarioError::Taxonomy {
            path: p.to_string(),
            msg: "not loaded".into(),
        })
    };
    let mut net = VirtualNet::new(seed);
    net.set_default_links(s.links.fog, s.links.cloud);
    for o in &s.links.overrides {
        net.set_link(&o.a, &o.b, LinkSpec::new(o.latency_ms, o.drop_prob));
    }
    if let Some(c) = &s.cloud {
        net.add_cloud_node(Box::new(CloudNode::new(c.clone(), tax(&c.taxonomy_path)?)));
    }
    let m = s.gateways[0].overlay_m;
    let mut r = Runner {
        s,
        net,
        queue: BinaryHeap::new(),
        seq: 0,
        devices: vec![DeviceState::default(); s.devices.len()],
        active: BTreeSet::new(),
        metrics: Metrics {
            scenario: s.name.clone(),
            seed,
            end_ms: 0,
            registrations: Tally::default(),
            refreshes: Tally::default(),
            removals: Tally::default(),
            queries: Vec::new(),
            compositions: Vec::new(),
            messages: Default::default(),
            cloud: None,
            gateways: BTreeMap::new(),
            audits: Vec::new(),
            ring: super::ring::RingSnapshot { m, nodes: Vec::new() },
            ring_audit: RingAudit::default(),
            assertions: Vec::new(),
        },
    };
    let late = s.late_joiners();
    let mut t = 0;
    for g in &s.gateways {
        r.net.add_node(Box::new(Gateway::new(g.clone(), tax(&g.taxonomy_path)?)));
        if !late.contains(&g.address) {
            t = r.boot(&g.address, t);
        }
    }
    for _ in 0..(2 * r.active.len() + 4) {
        let a = audit(&snapshot(&r.net));
        if a.successors_ok && a.predecessors_ok {
            break;
        }
        t = maintenance_round(&mut r.net, t);
    }
    for (i, a) in s.timeline.iter().enumerate() {
        r.push(a.at_ms * 1000, Event::Action(i));
    }
    let end_ms = s.timeline.last().map_or(0, |a| a.at_ms) + s.settle_ms;
    r.metrics.end_ms = end_ms;
    while let Some(Reverse((at, _, ev))) = r.queue.pop() {
        if at > end_ms * 1000 {
            break;
        }
        r.step(at, ev);
    }
    Ok(r.finish())
}

impl Runner<'_> {
    fn push(&mut self, at_us: u64, ev: Event) {
        self.seq += 1;
        self.queue.push(Reverse((at_us, self.seq, ev)));
    }

    fn periods(&self, addr: &str) -> Vec<(Timer, u64)> {
        let g = self.s.gateway(addr).expect("configured gateway");
        let mt = self.s.maintenance;
        let mut out = vec![
            (Timer::Stabilize, mt.stabilize_ms),
            (Timer::FixFingers, mt.fix_fingers_ms),
            (Timer::CheckPredecessor, mt.check_predecessor_ms),
            (Timer::Expire, mt.expire_ms),
            (Timer::Republish, g.republish_s * 1000),
        ];
        if g.cloud.is_some() {
            out.push((Timer::Announce, g.announce_s * 1000));
        }
        out.retain(|(_, p)| *p > 0);
        out
    }

    /// Boots a gateway: creates the ring when it is the first one up,
    /// otherwise joins through its bootstrap (or the first live gateway).
    fn boot(&mut self, addr: &str, at_us: u64) -> u64 {
        let configured = self.s.gateway(addr).and_then(|g| g.bootstrap.clone());
        let bootstrap = configured
            .filter(|b| self.active.contains(b) && self.net.is_alive(b))
            .or_else(|| {
                self.s
                    .gateways
                    .iter()
                    .map(|g| g.address.clone())
                    .find(|a| self.active.contains(a) && self.net.is_alive(a))
            });
        let Some((_, done)) = self.net.with_node(addr, at_us, |n, tr| {
            let g = n.as_any_mut().downcast_mut::<Gateway>().expect("gateway node");
            g.set_bootstrap(bootstrap);
            g.boot(tr)
        }) else {
            return at_us;
        };
        self.active.insert(addr.to_string());
        for (timer, period) in self.periods(addr) {
            self.push(at_us + period * 1000, Event::Timer(addr.to_string(), timer));
        }
        done
    }

    fn step(&mut self, at: u64, ev: Event) {
        match ev {
            Event::Timer(addr, timer) => {
                if !self.active.contains(&addr) || !self.net.is_alive(&addr) {
                    return;
                }
                self.net.fire_timer(&addr, timer, at);
                if let Some((_, p)) = self.periods(&addr).into_iter().find(|(t, _)| *t == timer) {
                    self.push(at + p * 1000, Event::Timer(addr, timer));
                }
            }
            Event::Refresh { device, generation } => {
                if self.devices[device].generation == generation {
                    self.refresh(device, at);
                    self.schedule_refresh(device, at);
                }
            }
            Event::Action(i) => {
                let action = self.s.timeline[i].action.clone();
                self.act(at, action);
            }
        }
    }

    fn device_index(&self, name: &str) -> usize {
        self.s
            .devices
            .iter()
            .position(|d| d.name == name)
            .expect("validated device")
    }

    fn schedule_refresh(&mut self, device: usize, at: u64) {
        let spec = &self.s.devices[device];
        if !spec.auto_refresh {
            return;
        }
        let lifetime = self.s.gateway(&spec.gateway).map_or(90, |g| g.lifetime_s);
        let period = (lifetime * 1000 / 3).max(1) * 1000;
        let generation = self.devices[device].generation;
        self.push(at + period, Event::Refresh { device, generation });
    }

    fn call(&mut self, from: &str, to: &str, req: CoapMessage, at: u64) -> (Option<CoapMessage>, u64) {
        let (resp, done) = self.net.client_call(from, to, req, at);
        (resp.ok(), done)
    }

    fn register(&mut self, device: usize, at: u64) {
        let spec = &self.s.devices[device];
        let body = spec.registration.to_string();
        let gw = spec.gateway.clone();
        let name = spec.name.clone();
        let req = CoapMessage::request(Code::POST, "/rd", None).with_payload(CF_JSON, body.into_bytes());
        let (resp, _) = self.call(&name, &gw, req, at);
        let reg = resp
            .filter(|r| r.code == Code::CREATED)
            .and_then(|r| serde_json::from_slice::<Registered>(&r.payload).ok());
        self.metrics.registrations.record(reg.is_some());
        if let Some(reg) = reg {
            let d = &mut self.devices[device];
            d.thing = Some(reg.thing.to_string());
            d.generation += 1;
            self.schedule_refresh(device, at);
        }
    }

    fn refresh(&mut self, device: usize, at: u64) {
        let Some(thing) = self.devices[device].thing.clone() else {
            self.metrics.refreshes.record(false);
            return;
        };
        let spec = &self.s.devices[device];
        let (name, gw) = (spec.name.clone(), spec.gateway.clone());
        let req = CoapMessage::request(Code::PUT, &format!("/rd/{thing}"), None);
        let (resp, _) = self.call(&name, &gw, req, at);
        self.metrics
            .refreshes
            .record(resp.is_some_and(|r| r.code == Code::CHANGED));
    }

    fn remove(&mut self, device: usize, at: u64) {
        let d = &mut self.devices[device];
        d.generation += 1;
        let Some(thing) = d.thing.take() else {
            self.metrics.removals.record(false);
            return;
        };
        let spec = &self.s.devices[device];
        let (name, gw) = (spec.name.clone(), spec.gateway.clone());
        let req = CoapMessage::request(Code::DELETE, &format!("/rd/{thing}"), None);
        let (resp, _) = self.call(&name, &gw, req, at);
        self.metrics
            .removals
            .record(resp.is_some_and(|r| r.code == Code::DELETED));
    }

    fn query(&mut self, at: u64, gateway: String, query: String, expect: Option<Expect>) {
        let a = audit(&snapshot(&self.net));
        let stabilized = a.successors_ok && a.predecessors_ok;
        let req = CoapMessage::request(Code::GET, "/rd-lookup", Some(&query));
        let (resp, done) = self.call(CLIENT, &gateway, req, at);
        let trace = self
            .net
            .node_as::<Gateway>(&gateway)
            .and_then(|g| g.last_discovery.clone());
        let (code, links) = match &resp {
            Some(r) => {
                let n = if r.code == Code::CONTENT {
                    parse_links(&r.payload_text()).map_or(0, |l| l.len())
                } else {
                    0
                };
                (r.code.to_string(), n)
            }
            None => ("timeout".to_string(), 0),
        };
        let success = links > 0;
        self.metrics.queries.push(QueryRecord {
            at_ms: at / 1000,
            gateway,
            query,
            code,
            links,
            latency_ms: (done - at) as f64 / 1000.0,
            overlay_hops: trace.as_ref().filter(|_| success).map_or(0, |t| t.overlay_hops),
            remote: success && trace.is_some_and(|t| t.remote),
            success,
            stabilized,
            expect,
        });
    }

    fn compose(&mut self, at: u64, request: &crate::cloud::CompositionRequest, expect: Option<Expect>) {
        let cloud = self.s.cloud.as_ref().expect("validated cloud").address.clone();
        let before = self
            .net
            .node_as::<CloudNode>(&cloud)
            .map(|c| c.stats)
            .unwrap_or_default();
        let body = canonical_json(request);
        let req = CoapMessage::request(Code::POST, "/compose", None).with_payload(CF_JSON, body.into_bytes());
        let (resp, done) = self.call(CLIENT, &cloud, req, at);
        let after = self
            .net
            .node_as::<CloudNode>(&cloud)
            .map(|c| c.stats)
            .unwrap_or_default();
        let plan = resp
            .as_ref()
            .filter(|r| r.code == Code::CONTENT)
            .and_then(|r| serde_json::from_slice::<crate::cloud::CompositionPlan>(&r.payload).ok());
        self.metrics.compositions.push(CompositionRecord {
            at_ms: at / 1000,
            code: resp.map_or("timeout".into(), |r| r.code.to_string()),
            stages: plan.as_ref().map_or(0, |p| p.stages.len()),
            cache_hit: after.cache_hits > before.cache_hits,
            fanout_messages: after.fanout_messages - before.fanout_messages,
            latency_ms: (done - at) as f64 / 1000.0,
            success: plan.is_some(),
            expect,
        });
    }

    fn act(&mut self, at: u64, action: Action) {
        match action {
            Action::Register { device } => {
                let i = self.device_index(&device);
                self.register(i, at);
            }
            Action::Refresh { device } => {
                let i = self.device_index(&device);
                self.refresh(i, at);
            }
            Action::RemoveDevice { device } => {
                let i = self.device_index(&device);
                self.remove(i, at);
            }
            Action::Query { gateway, query, expect } => self.query(at, gateway, query, expect),
            Action::Compose { request, expect } => self.compose(at, &request, expect),
            Action::KillGateway { gateway } => {
                self.net.kill(&gateway);
                self.active.remove(&gateway);
            }
            Action::JoinGateway { gateway } => {
                if !self.active.contains(&gateway) && self.net.is_alive(&gateway) {
                    self.boot(&gateway, at);
                }
            }
            Action::LeaveGateway { gateway } => {
                if self.active.remove(&gateway) {
                    self.net.with_node(&gateway, at, |n, tr| {
                        if let Some(g) = n.as_any_mut().downcast_mut::<Gateway>() {
                            g.leave(tr);
                        }
                    });
                    self.net.kill(&gateway);
                }
            }
            Action::Audit { republish } => {
                if republish {
                    for a in self.active.clone() {
                        self.net.fire_timer(&a, Timer::Republish, at);
                    }
                }
                let audit = audit(&snapshot(&self.net));
                self.metrics.audits.push(AuditRecord { at_ms: at / 1000, audit });
            }
        }
    }

    fn finish(mut self) -> Metrics {
        let m = &mut self.metrics;
        m.ring = snapshot(&self.net);
        m.ring_audit = audit(&m.ring);
        m.messages = self.net.stats.clone();
        if let Some(c) = &self.s.cloud {
            m.cloud = self.net.node_as::<CloudNode>(&c.address).map(|c| c.stats);
        }
        for g in &self.s.gateways {
            if let Some(gw) = self.net.node_as::<Gateway>(&g.address) {
                m.gateways.insert(g.address.clone(), gw.stats);
            }
        }
        m.assertions = assertions(self.s, m);
        self.metrics
    }
}

fn check(name: &str, passed: bool, detail: String) -> Assertion {
    Assertion {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn assertions(s: &Scenario, m: &Metrics) -> Vec<Assertion> {
    let e = &s.expect;
    let mut out = Vec::new();
    let n = &m.messages;
    out.push(check(
        "message_conservation",
        n.sent == n.delivered + n.dropped + n.in_flight,
        format!("sent {} delivered {} dropped {} in flight {}", n.sent, n.delivered, n.dropped, n.in_flight),
    ));
    if e.query_expectations {
        let bad: Vec<String> = m
            .queries
            .iter()
            .filter(|q| match q.expect {
                Some(Expect::Hit) => !q.success,
                Some(Expect::Miss) => q.success,
                None => false,
            })
            .map(|q| format!("{}@{}ms", q.query, q.at_ms))
            .collect();
        let with = m.queries.iter().filter(|q| q.expect.is_some()).count();
        let detail = if bad.is_empty() {
            format!("{with} of {with} as expected")
        } else {
            format!("unexpected: {}", bad.join(" "))
        };
        out.push(check("query_expectations", bad.is_empty(), detail));
    }
    if e.all_queries_succeed {
        let failed = m.queries.iter().filter(|q| !q.success).count();
        out.push(check(
            "all_queries_succeed",
            failed == 0,
            format!("{failed} of {} failed", m.queries.len()),
        ));
    }
    if let Some(min) = e.min_stabilized_success_rate {
        let rate = m.query_success_rate(true);
        out.push(check(
            "min_stabilized_success_rate",
            rate.is_some_and(|r| r >= min),
            format!("rate {rate:?}, required {min}"),
        ));
    }
    if e.hop_bounds {
        let limit = u32::try_from(m.ring.m).unwrap_or(u32::MAX);
        let bad = m
            .queries
            .iter()
            .filter(|q| q.success)
            .filter(|q| if q.remote { q.overlay_hops > limit } else { q.overlay_hops != 0 })
            .count();
        out.push(check("hop_bounds", bad == 0, format!("{bad} queries out of bounds (m = {limit})")));
    }
    if e.composition_expectations {
        let bad = m
            .compositions
            .iter()
            .filter(|c| match c.expect {
                Some(Expect::Hit) => !c.success,
                Some(Expect::Miss) => c.success,
                None => false,
            })
            .count();
        out.push(check("composition_expectations", bad == 0, format!("{bad} unexpected outcomes")));
    }
    if e.final_ring_audit {
        out.push(check(
            "final_ring_audit",
            m.ring_audit.passed(),
            format!("misplaced {:?} missing {:?}", m.ring_audit.misplaced, m.ring_audit.missing),
        ));
    }
    out
}
