use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::in_open_closed;

/// Gateways holding services of one concept, with the time (ms) each holder
/// last published.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointerRecord {
    pub key: u64,
    pub concept: String,
    pub holders: BTreeMap<String, u64>,
}

impl PointerRecord {
    fn merge(&mut self, other: PointerRecord) {
        for (h, t) in other.holders {
            let slot = self.holders.entry(h).or_insert(t);
            *slot = (*slot).max(t);
        }
    }
}

/// The pointer records one node is responsible for, keyed by concept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PointerStore {
    records: BTreeMap<String, PointerRecord>,
}

impl PointerStore {
    pub fn publish(&mut self, key: u64, concept: &str, holder: &str, now_ms: u64) {
        let rec = self
            .records
            .entry(concept.to_string())
            .or_insert_with(|| PointerRecord {
                key,
                concept: concept.to_string(),
                holders: BTreeMap::new(),
            });
        let t = rec.holders.entry(holder.to_string()).or_insert(now_ms);
        *t = (*t).max(now_ms);
    }

    pub fn unpublish(&mut self, concept: &str, holder: &str) {
        if let Some(rec) = self.records.get_mut(concept) {
            rec.holders.remove(holder);
            if rec.holders.is_empty() {
                self.records.remove(concept);
            }
        }
    }

    pub fn get(&self, concept: &str) -> Option<&PointerRecord> {
        self.records.get(concept)
    }

    pub fn records(&self) -> impl Iterator<Item = &PointerRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn merge(&mut self, records: impl IntoIterator<Item = PointerRecord>) {
        for r in records {
            match self.records.get_mut(&r.concept) {
                Some(existing) => existing.merge(r),
                None => {
                    self.records.insert(r.concept.clone(), r);
                }
            }
        }
    }

    /// Removes and returns the records whose key falls outside `(lo, hi]`.
    pub fn split_off_outside(&mut self, lo: u64, hi: u64) -> Vec<PointerRecord> {
        let (keep, moved): (BTreeMap<_, _>, BTreeMap<_, _>) = std::mem::take(&mut self.records)
            .into_iter()
            .partition(|(_, r)| in_open_closed(r.key, lo, hi));
        self.records = keep;
        moved.into_values().collect()
    }

    pub fn take_all(&mut self) -> Vec<PointerRecord> {
        std::mem::take(&mut self.records).into_values().collect()
    }

    /// Drops holders that have not published since `cutoff_ms`.
    pub fn expire(&mut self, cutoff_ms: u64) {
        for rec in self.records.values_mut() {
            rec.holders.retain(|_, t| *t >= cutoff_ms);
        }
        self.records.retain(|_, r| !r.holders.is_empty());
    }
}
