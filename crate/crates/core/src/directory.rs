//! Local thing directory, local service registry and the inverted index
//! that discovery reads from.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::model::{
    decode_description, Canonical, Description, IdKind, Identifier, ServiceDescription,
    ThingDescription,
};
use crate::ontology::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Thing,
    Service,
}

impl EntryKind {
    fn id_kind(self) -> IdKind {
        match self {
            EntryKind::Thing => IdKind::Thing,
            EntryKind::Service => IdKind::Service,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DirectoryError {
    #[error("unknown concept {0:?}")]
    UnknownConcept(String),
    #[error("description already carries an identifier")]
    AlreadyHasId,
    #[error("service refers to an unregistered thing")]
    UnknownThing,
    #[error("no entry {0}")]
    NotFound(Identifier),
    #[error("description kind does not match the entry kind")]
    KindMismatch,
    #[error("bad snapshot line {0}")]
    BadSnapshot(usize),
}

/// Emitted whenever a service leaves the registry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ServiceRemoved {
    pub service: Identifier,
    pub thing: Option<Identifier>,
    pub concept: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InvertedIndex {
    /// Each service is listed under its concept and every ancestor of it.
    pub by_concept: BTreeMap<String, BTreeSet<Identifier>>,
    pub by_keyword: BTreeMap<String, BTreeSet<Identifier>>,
}

impl InvertedIndex {
    fn insert(&mut self, taxonomy: &Taxonomy, s: &ServiceDescription, id: Identifier) {
        for a in taxonomy.ancestors(&s.functional_concept).unwrap_or_default() {
            self.by_concept.entry(a.to_string()).or_default().insert(id);
        }
        for k in &s.keywords {
            self.by_keyword.entry(k.clone()).or_default().insert(id);
        }
    }

    fn remove(&mut self, taxonomy: &Taxonomy, s: &ServiceDescription, id: Identifier) {
        for a in taxonomy.ancestors(&s.functional_concept).unwrap_or_default() {
            remove_from(&mut self.by_concept, a, id);
        }
        for k in &s.keywords {
            remove_from(&mut self.by_keyword, k, id);
        }
    }
}

fn remove_from(map: &mut BTreeMap<String, BTreeSet<Identifier>>, key: &str, id: Identifier) {
    if let Some(set) = map.get_mut(key) {
        set.remove(&id);
        if set.is_empty() {
            map.remove(key);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThingEntry {
    pub description: ThingDescription,
    /// Simulated milliseconds of the last registration or refresh.
    pub last_refresh: u64,
}

/// The co-located thing directory and service registry of one gateway.
#[derive(Debug, Clone)]
pub struct Directory {
    gateway: u32,
    taxonomy: Arc<Taxonomy>,
    things: BTreeMap<Identifier, ThingEntry>,
    services: BTreeMap<Identifier, ServiceDescription>,
    sectors: BTreeMap<u32, BTreeSet<Identifier>>,
    index: InvertedIndex,
    next_thing: u32,
    next_service: u32,
    #[cfg(test)]
    skip_next_index_update: bool,
}

impl PartialEq for Directory {
    fn eq(&self, other: &Self) -> bool {
        self.gateway == other.gateway
            && self.things == other.things
            && self.services == other.services
            && self.sectors == other.sectors
            && self.index == other.index
            && self.next_thing == other.next_thing
            && self.next_service == other.next_service
    }
}

/// Sector of a concept: 0 for the root, otherwise 1 + the position of its
/// top-level branch among the sorted top-level concepts.
pub fn assign_sector(taxonomy: &Taxonomy, concept: &str) -> Result<u32, DirectoryError> {
    let top = taxonomy
        .top_level_of(concept)
        .map_err(|_| DirectoryError::UnknownConcept(concept.to_string()))?;
    Ok(match top {
        None => 0,
        Some(t) => {
            let pos = taxonomy
                .top_level_concepts()
                .iter()
                .position(|c| *c == t)
                .unwrap_or(0);
            pos as u32 + 1
        }
    })
}

impl Directory {
    pub fn new(gateway: u32, taxonomy: Arc<Taxonomy>) -> Self {
        Self {
            gateway,
            taxonomy,
            things: BTreeMap::new(),
            services: BTreeMap::new(),
            sectors: BTreeMap::new(),
            index: InvertedIndex::default(),
            next_thing: 1,
            next_service: 1,
            #[cfg(test)]
            skip_next_index_update: false,
        }
    }

    pub fn taxonomy(&self) -> &Arc<Taxonomy> {
        &self.taxonomy
    }

    pub fn gateway(&self) -> u32 {
        self.gateway
    }

    fn check_concept(&self, c: &str) -> Result<(), DirectoryError> {
        if self.taxonomy.contains(c) {
            Ok(())
        } else {
            Err(DirectoryError::UnknownConcept(c.to_string()))
        }
    }

    pub fn assign_sector(&self, concept: &str) -> Result<u32, DirectoryError> {
        assign_sector(&self.taxonomy, concept)
    }

    pub fn post_thing(&mut self, mut d: ThingDescription, now: u64) -> Result<Identifier, DirectoryError> {
        if d.id.is_some() {
            return Err(DirectoryError::AlreadyHasId);
        }
        self.check_concept(&d.concept)?;
        let id = Identifier::new(IdKind::Thing, self.gateway, self.next_thing);
        self.next_thing += 1;
        d.id = Some(id);
        self.things.insert(
            id,
            ThingEntry {
                description: d,
                last_refresh: now,
            },
        );
        Ok(id)
    }

    pub fn post_service(&mut self, mut s: ServiceDescription) -> Result<Identifier, DirectoryError> {
        if s.id.is_some() {
            return Err(DirectoryError::AlreadyHasId);
        }
        match s.thing_id {
            Some(t) if self.things.contains_key(&t) => {}
            _ => return Err(DirectoryError::UnknownThing),
        }
        let sector = self.assign_sector(&s.functional_concept)?;
        let id = Identifier::new(IdKind::Service, self.gateway, self.next_service);
        self.next_service += 1;
        s.id = Some(id);
        s.sector = Some(sector);
        self.insert_service(id, s);
        Ok(id)
    }

    fn insert_service(&mut self, id: Identifier, s: ServiceDescription) {
        #[cfg(test)]
        let skip = std::mem::take(&mut self.skip_next_index_update);
        #[cfg(not(test))]
        let skip = false;
        if !skip {
            self.index.insert(&self.taxonomy, &s, id);
        }
        self.sectors.entry(s.sector.unwrap_or(0)).or_default().insert(id);
        self.services.insert(id, s);
    }

    fn remove_service(&mut self, id: Identifier) -> Option<ServiceRemoved> {
        let s = self.services.remove(&id)?;
        self.index.remove(&self.taxonomy, &s, id);
        let sector = s.sector.unwrap_or(0);
        if let Some(set) = self.sectors.get_mut(&sector) {
            set.remove(&id);
            if set.is_empty() {
                self.sectors.remove(&sector);
            }
        }
        Some(ServiceRemoved {
            service: id,
            thing: s.thing_id,
            concept: s.functional_concept,
        })
    }

    pub fn get_entry(&self, kind: EntryKind, id: Identifier) -> Result<Description, DirectoryError> {
        if id.kind != kind.id_kind() {
            return Err(DirectoryError::NotFound(id));
        }
        match kind {
            EntryKind::Thing => self
                .things
                .get(&id)
                .map(|e| Description::Thing(e.description.clone())),
            EntryKind::Service => self.services.get(&id).cloned().map(Description::Service),
        }
        .ok_or(DirectoryError::NotFound(id))
    }

    pub fn thing(&self, id: Identifier) -> Option<&ThingEntry> {
        self.things.get(&id)
    }

    pub fn service(&self, id: Identifier) -> Option<&ServiceDescription> {
        self.services.get(&id)
    }

    pub fn things(&self) -> impl Iterator<Item = (&Identifier, &ThingEntry)> {
        self.things.iter()
    }

    pub fn services(&self) -> impl Iterator<Item = &ServiceDescription> {
        self.services.values()
    }

    pub fn service_count(&self) -> usize {
        self.services.len()
    }

    pub fn sectors(&self) -> &BTreeMap<u32, BTreeSet<Identifier>> {
        &self.sectors
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    /// Replaces a stored entry and re-indexes it. The identifier (and for
    /// services the sector) are stamped by the directory.
    pub fn put_entry(
        &mut self,
        kind: EntryKind,
        id: Identifier,
        d: Description,
    ) -> Result<(), DirectoryError> {
        if id.kind != kind.id_kind() {
            return Err(DirectoryError::NotFound(id));
        }
        match (kind, d) {
            (EntryKind::Thing, Description::Thing(mut t)) => {
                self.check_concept(&t.concept)?;
                let entry = self.things.get_mut(&id).ok_or(DirectoryError::NotFound(id))?;
                t.id = Some(id);
                entry.description = t;
                Ok(())
            }
            (EntryKind::Service, Description::Service(mut s)) => {
                let old_thing = self
                    .services
                    .get(&id)
                    .ok_or(DirectoryError::NotFound(id))?
                    .thing_id;
                let sector = self.assign_sector(&s.functional_concept)?;
                s.thing_id = s.thing_id.or(old_thing);
                match s.thing_id {
                    Some(t) if self.things.contains_key(&t) => {}
                    _ => return Err(DirectoryError::UnknownThing),
                }
                s.id = Some(id);
                s.sector = Some(sector);
                self.remove_service(id);
                self.insert_service(id, s);
                Ok(())
            }
            _ => Err(DirectoryError::KindMismatch),
        }
    }

    /// Removes an entry. Deleting a thing deletes its services too; one
    /// [`ServiceRemoved`] is returned per removed service.
    pub fn delete_entry(
        &mut self,
        kind: EntryKind,
        id: Identifier,
    ) -> Result<Vec<ServiceRemoved>, DirectoryError> {
        if id.kind != kind.id_kind() {
            return Err(DirectoryError::NotFound(id));
        }
        match kind {
            EntryKind::Thing => {
                self.things.remove(&id).ok_or(DirectoryError::NotFound(id))?;
                let owned: Vec<Identifier> = self
                    .services
                    .iter()
                    .filter(|(_, s)| s.thing_id == Some(id))
                    .map(|(sid, _)| *sid)
                    .collect();
                Ok(owned
                    .into_iter()
                    .filter_map(|sid| self.remove_service(sid))
                    .collect())
            }
            EntryKind::Service => self
                .remove_service(id)
                .map(|e| vec![e])
                .ok_or(DirectoryError::NotFound(id)),
        }
    }

    pub fn refresh(&mut self, thing: Identifier, now: u64) -> Result<(), DirectoryError> {
        let entry = self.things.get_mut(&thing).ok_or(DirectoryError::NotFound(thing))?;
        entry.last_refresh = entry.last_refresh.max(now);
        Ok(())
    }

    /// Things whose lease ran out at `now`.
    pub fn stale_things(&self, now: u64, lifetime_ms: u64) -> Vec<Identifier> {
        self.things
            .iter()
            .filter(|(_, e)| now.saturating_sub(e.last_refresh) > lifetime_ms)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Services whose concept is subsumed by `concept`, read from the index.
    pub fn index_lookup(&self, concept: &str) -> BTreeSet<Identifier> {
        self.index
            .by_concept
            .get(concept)
            .cloned()
            .unwrap_or_default()
    }

    pub fn keyword_lookup(&self, keyword: &str) -> BTreeSet<Identifier> {
        self.index
            .by_keyword
            .get(keyword)
            .cloned()
            .unwrap_or_default()
    }

    /// Distinct functional concepts of the registered services.
    pub fn local_concepts(&self) -> BTreeSet<String> {
        self.services
            .values()
            .map(|s| s.functional_concept.clone())
            .collect()
    }

    /// Rebuilds the index and sector map from the registry and compares.
    pub fn audit_index(&self) -> bool {
        let mut rebuilt = InvertedIndex::default();
        let mut sectors: BTreeMap<u32, BTreeSet<Identifier>> = BTreeMap::new();
        for (id, s) in &self.services {
            rebuilt.insert(&self.taxonomy, s, *id);
            sectors.entry(s.sector.unwrap_or(0)).or_default().insert(*id);
            if !s.thing_id.is_some_and(|t| self.things.contains_key(&t)) {
                return false;
            }
            if s.sector != self.assign_sector(&s.functional_concept).ok() {
                return false;
            }
        }
        rebuilt == self.index && sectors == self.sectors
    }

    #[cfg(test)]
    pub(crate) fn skip_next_index_update(&mut self) {
        self.skip_next_index_update = true;
    }

    /// One canonical line per entry, things first.
    pub fn snapshot_lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .things
            .values()
            .map(|e| e.description.canonical())
            .collect();
        out.extend(self.services.values().map(Canonical::canonical));
        out
    }

    /// Rebuilds a directory from [`Directory::snapshot_lines`] output.
    pub fn from_snapshot<'a>(
        gateway: u32,
        taxonomy: Arc<Taxonomy>,
        lines: impl IntoIterator<Item = &'a str>,
        now: u64,
    ) -> Result<Self, DirectoryError> {
        let mut dir = Self::new(gateway, taxonomy);
        for (n, line) in lines.into_iter().enumerate() {
            let bad = || DirectoryError::BadSnapshot(n + 1);
            match decode_description(line).map_err(|_| bad())? {
                Description::Thing(t) => {
                    let id = t.id.ok_or_else(bad)?;
                    dir.check_concept(&t.concept)?;
                    dir.next_thing = dir.next_thing.max(id.sequence + 1);
                    dir.things.insert(
                        id,
                        ThingEntry {
                            description: t,
                            last_refresh: now,
                        },
                    );
                }
                Description::Service(mut s) => {
                    let id = s.id.ok_or_else(bad)?;
                    if !s.thing_id.is_some_and(|t| dir.things.contains_key(&t)) {
                        return Err(DirectoryError::UnknownThing);
                    }
                    s.sector = Some(dir.assign_sector(&s.functional_concept)?);
                    dir.next_service = dir.next_service.max(id.sequence + 1);
                    dir.insert_service(id, s);
                }
            }
        }
        Ok(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Location, QosProfile};
    use crate::ontology::load_taxonomy;
    use proptest::prelude::*;

    fn taxonomy() -> Arc<Taxonomy> {
        Arc::new(load_taxonomy("root\nA < root\nB < A\nC < root\nD < C\nE < A").unwrap())
    }

    fn thing(concept: &str) -> ThingDescription {
        ThingDescription::new("t", concept, Location::new(0.0, 0.0).unwrap())
    }

    fn service(thing: Identifier, concept: &str) -> ServiceDescription {
        let mut s = ServiceDescription::new(concept, "/x", QosProfile::identity());
        s.thing_id = Some(thing);
        s
    }

    #[test]
    fn thing_ids_count_up_per_gateway() {
        let mut d = Directory::new(3, taxonomy());
        assert_eq!(d.post_thing(thing("A"), 0).unwrap().to_string(), "t-3-1");
        assert_eq!(d.post_thing(thing("A"), 0).unwrap().to_string(), "t-3-2");
        let mut preset = thing("A");
        preset.id = Some(Identifier::new(IdKind::Thing, 3, 9));
        assert_eq!(d.post_thing(preset, 0), Err(DirectoryError::AlreadyHasId));
        assert_eq!(
            d.post_thing(thing("Nope"), 0),
            Err(DirectoryError::UnknownConcept("Nope".into()))
        );
    }

    #[test]
    fn post_service_indexes_ancestor_closure() {
        let mut d = Directory::new(1, taxonomy());
        let bogus = Identifier::new(IdKind::Thing, 1, 42);
        assert_eq!(d.post_service(service(bogus, "B")), Err(DirectoryError::UnknownThing));
        let t = d.post_thing(thing("A"), 0).unwrap();
        let s1 = d.post_service(service(t, "B")).unwrap();
        let s2 = d.post_service(service(t, "B")).unwrap();
        for c in ["B", "A", "root"] {
            assert_eq!(d.index_lookup(c), BTreeSet::from([s1, s2]), "{c}");
        }
        assert!(d.index_lookup("C").is_empty());
        assert!(d.index_lookup("unknown").is_empty());
        assert!(d.audit_index());
    }

    #[test]
    fn sectors_follow_top_level_branch() {
        let d = Directory::new(1, taxonomy());
        assert_eq!(d.assign_sector("root").unwrap(), 0);
        assert_eq!(d.assign_sector("A").unwrap(), 1);
        assert_eq!(d.assign_sector("B").unwrap(), 1);
        assert_eq!(d.assign_sector("E").unwrap(), 1);
        assert_eq!(d.assign_sector("C").unwrap(), 2);
        assert_eq!(d.assign_sector("D").unwrap(), 2);
        assert!(d.assign_sector("Z").is_err());
    }

    #[test]
    fn cascade_delete() {
        let mut d = Directory::new(1, taxonomy());
        let t = d.post_thing(thing("A"), 0).unwrap();
        let other = d.post_thing(thing("C"), 0).unwrap();
        let s1 = d.post_service(service(t, "B")).unwrap();
        let s2 = d.post_service(service(t, "D")).unwrap();
        let s3 = d.post_service(service(other, "D")).unwrap();
        let events = d.delete_entry(EntryKind::Thing, t).unwrap();
        assert_eq!(events.iter().map(|e| e.service).collect::<Vec<_>>(), vec![s1, s2]);
        assert_eq!(d.service_count(), 1);
        assert!(d.service(s3).is_some());
        assert!(d.audit_index());
        assert_eq!(d.get_entry(EntryKind::Thing, t), Err(DirectoryError::NotFound(t)));
        assert_eq!(d.delete_entry(EntryKind::Service, s1), Err(DirectoryError::NotFound(s1)));
    }

    #[test]
    fn get_put_roundtrip() {
        let mut d = Directory::new(1, taxonomy());
        let t = d.post_thing(thing("A"), 0).unwrap();
        let s = d.post_service(service(t, "B")).unwrap();
        let Description::Service(mut stored) = d.get_entry(EntryKind::Service, s).unwrap() else {
            panic!("expected a service");
        };
        assert_eq!(stored.id, Some(s));
        assert_eq!(stored.sector, Some(1));
        stored.functional_concept = "D".into();
        d.put_entry(EntryKind::Service, s, Description::Service(stored)).unwrap();
        assert_eq!(d.service(s).unwrap().sector, Some(2));
        assert!(d.index_lookup("A").is_empty());
        assert_eq!(d.index_lookup("C"), BTreeSet::from([s]));
        assert!(d.audit_index());

        let mut bad = d.service(s).unwrap().clone();
        bad.functional_concept = "Zzz".into();
        assert_eq!(
            d.put_entry(EntryKind::Service, s, Description::Service(bad)),
            Err(DirectoryError::UnknownConcept("Zzz".into()))
        );
        assert_eq!(
            d.put_entry(EntryKind::Thing, t, Description::Service(d.service(s).unwrap().clone())),
            Err(DirectoryError::KindMismatch)
        );
    }

    #[test]
    fn fault_injected_index_fails_audit() {
        let mut d = Directory::new(1, taxonomy());
        assert!(d.audit_index());
        let t = d.post_thing(thing("A"), 0).unwrap();
        d.skip_next_index_update();
        d.post_service(service(t, "B")).unwrap();
        assert!(!d.audit_index());
    }

    #[test]
    fn expiry_candidates() {
        let mut d = Directory::new(1, taxonomy());
        let a = d.post_thing(thing("A"), 0).unwrap();
        let b = d.post_thing(thing("A"), 50_000).unwrap();
        assert!(d.stale_things(90_000, 90_000).is_empty());
        assert_eq!(d.stale_things(90_001, 90_000), vec![a]);
        d.refresh(a, 80_000).unwrap();
        assert!(d.stale_things(140_000, 90_000).is_empty());
        assert_eq!(d.stale_things(170_001, 90_000), vec![a, b]);
    }

    #[test]
    fn snapshot_restores_state() {
        let mut d = Directory::new(2, taxonomy());
        let t = d.post_thing(thing("A"), 0).unwrap();
        d.post_service(service(t, "B")).unwrap();
        d.post_service(service(t, "E")).unwrap();
        let lines = d.snapshot_lines();
        let back = Directory::from_snapshot(2, taxonomy(), lines.iter().map(String::as_str), 0).unwrap();
        assert_eq!(back, d);
    }

    #[derive(Debug, Clone)]
    enum Op {
        AddThing(usize),
        AddService(usize, usize),
        DeleteThing(usize),
        DeleteService(usize),
        Retag(usize, usize),
    }

    const CONCEPTS: [&str; 6] = ["root", "A", "B", "C", "D", "E"];

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0..6usize).prop_map(Op::AddThing),
            (0..8usize, 0..6usize).prop_map(|(t, c)| Op::AddService(t, c)),
            (0..8usize).prop_map(Op::DeleteThing),
            (0..16usize).prop_map(Op::DeleteService),
            (0..16usize, 0..6usize).prop_map(|(s, c)| Op::Retag(s, c)),
        ]
    }

    proptest! {
        #[test]
        fn index_stays_coherent(ops in proptest::collection::vec(op(), 0..100)) {
            let mut d = Directory::new(1, taxonomy());
            for op in ops {
                let things: Vec<Identifier> = d.things().map(|(id, _)| *id).collect();
                let services: Vec<Identifier> = d.services().filter_map(|s| s.id).collect();
                match op {
                    Op::AddThing(c) => { d.post_thing(thing(CONCEPTS[c]), 0).unwrap(); }
                    Op::AddService(t, c) => if let Some(t) = things.get(t % things.len().max(1)) {
                        d.post_service(service(*t, CONCEPTS[c])).unwrap();
                    },
                    Op::DeleteThing(t) => if let Some(t) = things.get(t % things.len().max(1)) {
                        let removed = d.delete_entry(EntryKind::Thing, *t).unwrap();
                        prop_assert!(removed.iter().all(|e| e.thing == Some(*t)));
                        prop_assert!(d.services().all(|s| s.thing_id != Some(*t)));
                    },
                    Op::DeleteService(s) => if let Some(s) = services.get(s % services.len().max(1)) {
                        d.delete_entry(EntryKind::Service, *s).unwrap();
                    },
                    Op::Retag(s, c) => if let Some(s) = services.get(s % services.len().max(1)) {
                        let mut desc = d.service(*s).unwrap().clone();
                        desc.functional_concept = CONCEPTS[c].into();
                        d.put_entry(EntryKind::Service, *s, Description::Service(desc)).unwrap();
                    },
                }
                prop_assert!(d.audit_index());
                let sector_total: usize = d.sectors().values().map(BTreeSet::len).sum();
                prop_assert_eq!(sector_total, d.service_count());
            }
        }

        #[test]
        fn lookup_equals_subsumption_scan(concepts in proptest::collection::vec(0..6usize, 0..60), q in 0..6usize) {
            let tax = taxonomy();
            let mut d = Directory::new(1, tax.clone());
            let t = d.post_thing(thing("A"), 0).unwrap();
            for c in concepts {
                d.post_service(service(t, CONCEPTS[c])).unwrap();
            }
            let scan: BTreeSet<Identifier> = d
                .services()
                .filter(|s| tax.subsumes(CONCEPTS[q], &s.functional_concept).unwrap())
                .filter_map(|s| s.id)
                .collect();
            prop_assert_eq!(d.index_lookup(CONCEPTS[q]), scan);
            prop_assert_eq!(d.index_lookup("root").len(), d.service_count());
        }
    }
}
