//! Composite service directory: optimized plans keyed by their request, kept
//! valid as services disappear.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::model::{canonical_json, Identifier, QosProfile};
use crate::ontology::Taxonomy;

use super::compose::{build_plan, validate_plan, Candidate, CompositionPlan, CompositionRequest, Optimized};
use super::CloudError;

#[derive(Debug, Clone, PartialEq)]
pub struct CachedComposition {
    pub request: CompositionRequest,
    pub plan: CompositionPlan,
    pub chosen: Vec<Candidate>,
    /// Remaining members of each stage's cluster, best first.
    pub alternatives: Vec<Vec<Candidate>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct MonitorOutcome {
    pub repaired: usize,
    pub evicted: usize,
}

#[derive(Debug, Clone)]
pub struct CompositeServiceDirectory {
    taxonomy: Arc<Taxonomy>,
    entries: BTreeMap<String, CachedComposition>,
}

pub fn cache_key(r: &CompositionRequest) -> String {
    canonical_json(r)
}

impl CompositeServiceDirectory {
    pub fn new(taxonomy: Arc<Taxonomy>) -> Self {
        Self {
            taxonomy,
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, r: &CompositionRequest) -> Option<&CompositionPlan> {
        self.entries.get(&cache_key(r)).map(|e| &e.plan)
    }

    pub fn entry(&self, r: &CompositionRequest) -> Option<&CachedComposition> {
        self.entries.get(&cache_key(r))
    }

    fn valid(&self, r: &CompositionRequest, chosen: &[Candidate]) -> bool {
        let stages: Vec<_> = chosen.iter().map(|c| &c.service).collect();
        validate_plan(&self.taxonomy, r, &stages)
    }

    /// Stores an optimized plan; plans that fail dataflow validation are
    /// refused.
    pub fn store(&mut self, r: &CompositionRequest, o: &Optimized) -> Result<(), CloudError> {
        if !self.valid(r, &o.chosen) {
            return Err(CloudError::InvalidPlan);
        }
        let alternatives = o
            .alternatives
            .iter()
            .zip(&o.chosen)
            .map(|(alts, c)| alts.iter().filter(|a| a.id != c.id || a.gateway != c.gateway).cloned().collect())
            .collect();
        self.entries.insert(
            cache_key(r),
            CachedComposition {
                request: r.clone(),
                plan: o.plan.clone(),
                chosen: o.chosen.clone(),
                alternatives,
            },
        );
        Ok(())
    }

    pub fn evict(&mut self, r: &CompositionRequest) -> bool {
        self.entries.remove(&cache_key(r)).is_some()
    }

    /// Drops `service` of `gateway` from every cached plan: a stage that used
    /// it takes the best remaining member of its cluster that still fits;
    /// plans with no such member are evicted.
    pub fn monitor_event(&mut self, gateway: &str, service: Identifier) -> MonitorOutcome {
        let gone = |c: &Candidate| c.gateway == gateway && c.id == service;
        let mut out = MonitorOutcome::default();
        let keys: Vec<String> = self.entries.keys().cloned().collect();
        for key in keys {
            let mut e = self.entries[&key].clone();
            for alts in &mut e.alternatives {
                alts.retain(|a| !gone(a));
            }
            let Some(stage) = e.chosen.iter().position(gone) else {
                self.entries.insert(key, e);
                continue;
            };
            let mut repaired = None;
            for (i, alt) in e.alternatives[stage].iter().enumerate() {
                let mut trial = e.chosen.clone();
                trial[stage] = alt.clone();
                if self.valid(&e.request, &trial) {
                    repaired = Some((i, trial));
                    break;
                }
            }
            match repaired {
                Some((i, trial)) => {
                    e.alternatives[stage].remove(i);
                    let refs: Vec<&Candidate> = trial.iter().collect();
                    e.plan = build_plan(&refs);
                    e.chosen = trial;
                    self.entries.insert(key, e);
                    out.repaired += 1;
                }
                None => {
                    self.entries.remove(&key);
                    out.evicted += 1;
                }
            }
        }
        out
    }

    /// Every cached plan: stages valid, aggregate consistent.
    pub fn audit(&self) -> bool {
        self.entries.values().all(|e| {
            let profiles: Vec<QosProfile> = e.chosen.iter().map(|c| c.service.qos).collect();
            self.valid(&e.request, &e.chosen)
                && e.plan.aggregate == super::compose::plan_aggregate(&profiles)
                && e.plan.stages == e.chosen.iter().map(Candidate::stage_ref).collect::<Vec<_>>()
        })
    }
}
