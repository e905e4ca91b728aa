//! Service composition: clustering, sequential QoS aggregation,
//! input/output forward chaining and plan optimization.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{Identifier, QosField, QosProfile, ServiceDescription};
use crate::ontology::Taxonomy;
use crate::ranking::{normalize, normalize_value, weighted_sum, WeightVector};

use super::CloudError;

pub const DEFAULT_MAX_STAGES: usize = 5;

/// Above this many member substitutions the optimizer goes greedy.
pub const EXHAUSTIVE_LIMIT: usize = 512;

fn default_max_stages() -> usize {
    DEFAULT_MAX_STAGES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionRequest {
    pub available_inputs: BTreeSet<String>,
    pub goal_outputs: BTreeSet<String>,
    #[serde(default)]
    pub qos_weights: WeightVector,
    #[serde(default = "default_max_stages")]
    pub max_stages: usize,
}

impl CompositionRequest {
    pub fn new<I, S>(available: I, goal: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            available_inputs: available.into_iter().map(Into::into).collect(),
            goal_outputs: goal.into_iter().map(Into::into).collect(),
            qos_weights: WeightVector::default(),
            max_stages: DEFAULT_MAX_STAGES,
        }
    }

    pub fn validate(&self) -> Result<(), CloudError> {
        if self.goal_outputs.is_empty() {
            return Err(CloudError::BadRequest("goal_outputs is empty".into()));
        }
        Ok(())
    }
}

/// A service found on some gateway.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub gateway: String,
    pub id: Identifier,
    pub service: ServiceDescription,
}

impl Candidate {
    pub fn stage_ref(&self) -> StageRef {
        StageRef {
            gateway: self.gateway.clone(),
            service: self.id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRef {
    pub gateway: String,
    pub service: Identifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionPlan {
    pub stages: Vec<StageRef>,
    pub aggregate: QosProfile,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ClusterKey {
    pub concept: String,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceCluster {
    pub key: ClusterKey,
    pub members: Vec<Candidate>,
}

/// Groups candidates by functional concept and output signature.
pub fn classify(candidates: &[Candidate]) -> Vec<ServiceCluster> {
    let mut groups: BTreeMap<ClusterKey, Vec<Candidate>> = BTreeMap::new();
    for c in candidates {
        let key = ClusterKey {
            concept: c.service.functional_concept.clone(),
            outputs: c.service.outputs.iter().cloned().collect(),
        };
        groups.entry(key).or_default().push(c.clone());
    }
    groups
        .into_iter()
        .map(|(key, members)| ServiceCluster { key, members })
        .collect()
}

/// Sorts each cluster's members by SAW utility within the cluster, best
/// first; ties go to the smaller (gateway, id).
pub fn rank_members(clusters: &mut [ServiceCluster], w: &WeightVector) {
    for cl in clusters {
        let profiles: Vec<QosProfile> = cl.members.iter().map(|c| c.service.qos).collect();
        let Ok(rows) = normalize(&profiles) else { continue };
        let mut scored: Vec<(f64, Candidate)> = rows
            .iter()
            .map(|r| weighted_sum(r, w))
            .zip(cl.members.drain(..))
            .collect();
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| a.1.gateway.cmp(&b.1.gateway))
                .then(a.1.id.cmp(&b.1.id))
        });
        cl.members = scored.into_iter().map(|(_, c)| c).collect();
    }
}

/// Sequential aggregation: delay and price add up, reliability and
/// availability multiply, security is the weakest link.
pub fn aggregate_qos(stages: &[QosProfile]) -> Result<QosProfile, CloudError> {
    if stages.is_empty() {
        return Err(CloudError::EmptyPlan);
    }
    Ok(stages.iter().fold(QosProfile::identity(), |acc, q| QosProfile {
        delay_ms: acc.delay_ms + q.delay_ms,
        price: acc.price + q.price,
        reliability: acc.reliability * q.reliability,
        availability: acc.availability * q.availability,
        security_level: acc.security_level.min(q.security_level),
    }))
}

/// Aggregate of a plan; an empty plan has the neutral profile.
pub fn plan_aggregate(stages: &[QosProfile]) -> QosProfile {
    aggregate_qos(stages).unwrap_or_else(|_| QosProfile::identity())
}

/// `have` satisfies `want` when it is the same concept or a specialization.
pub fn satisfies(t: &Taxonomy, have: &str, want: &str) -> bool {
    have == want || t.subsumes(want, have).unwrap_or(false)
}

fn covered(t: &Taxonomy, have: &BTreeSet<String>, want: &BTreeSet<String>) -> bool {
    want.iter().all(|w| have.iter().any(|h| satisfies(t, h, w)))
}

/// True when each stage's inputs are available by the time it runs and the
/// goal is covered at the end.
pub fn validate_plan(t: &Taxonomy, r: &CompositionRequest, stages: &[&ServiceDescription]) -> bool {
    if stages.len() > r.max_stages {
        return false;
    }
    let mut avail = r.available_inputs.clone();
    for s in stages {
        if !covered(t, &avail, &s.inputs) {
            return false;
        }
        avail.extend(s.outputs.iter().cloned());
    }
    covered(t, &avail, &r.goal_outputs)
}

/// A composition skeleton: per stage, the cluster members that can run there,
/// best first.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOptions {
    pub stages: Vec<Vec<Candidate>>,
}

impl PlanOptions {
    /// The plan built from the top member of every stage.
    pub fn plan(&self) -> CompositionPlan {
        let chosen: Vec<&Candidate> = self.stages.iter().map(|s| &s[0]).collect();
        build_plan(&chosen)
    }

    pub fn combinations(&self) -> usize {
        self.stages
            .iter()
            .fold(1usize, |acc, s| acc.saturating_mul(s.len()))
    }
}

pub fn build_plan(chosen: &[&Candidate]) -> CompositionPlan {
    let profiles: Vec<QosProfile> = chosen.iter().map(|c| c.service.qos).collect();
    CompositionPlan {
        stages: chosen.iter().map(|c| c.stage_ref()).collect(),
        aggregate: plan_aggregate(&profiles),
        satisfied: true,
    }
}

fn any_applicable(t: &Taxonomy, avail: &BTreeSet<String>, cl: &ServiceCluster) -> bool {
    cl.members.iter().any(|m| covered(t, avail, &m.service.inputs))
}

fn applicable(t: &Taxonomy, avail: &BTreeSet<String>, cl: &ServiceCluster) -> Vec<Candidate> {
    cl.members
        .iter()
        .filter(|m| covered(t, avail, &m.service.inputs))
        .cloned()
        .collect()
}

/// Orders the clusters of `subset` into stages by forward chaining; `None`
/// if some cluster never becomes applicable or the goal stays uncovered.
fn chain(
    t: &Taxonomy,
    r: &CompositionRequest,
    clusters: &[ServiceCluster],
    subset: &[usize],
) -> Option<PlanOptions> {
    let mut avail = r.available_inputs.clone();
    let mut left: Vec<usize> = subset.to_vec();
    let mut stages = Vec::new();
    while !left.is_empty() {
        let pos = left
            .iter()
            .position(|&i| any_applicable(t, &avail, &clusters[i]))?;
        let i = left.remove(pos);
        let members = applicable(t, &avail, &clusters[i]);
        avail.extend(clusters[i].key.outputs.iter().cloned());
        stages.push(members);
    }
    covered(t, &avail, &r.goal_outputs).then_some(PlanOptions { stages })
}

/// Clusters worth considering: reachable from the available inputs and
/// contributing, directly or through other clusters, to the goal.
fn relevant(t: &Taxonomy, r: &CompositionRequest, clusters: &[ServiceCluster]) -> Vec<usize> {
    let mut avail = r.available_inputs.clone();
    let mut reachable = BTreeSet::new();
    loop {
        let before = reachable.len();
        for (i, cl) in clusters.iter().enumerate() {
            if !reachable.contains(&i) && any_applicable(t, &avail, cl) {
                reachable.insert(i);
                avail.extend(cl.key.outputs.iter().cloned());
            }
        }
        if reachable.len() == before {
            break;
        }
    }
    let mut needed: BTreeSet<String> = r.goal_outputs.clone();
    let mut useful = BTreeSet::new();
    loop {
        let before = useful.len();
        for &i in &reachable {
            let cl = &clusters[i];
            let helps = cl
                .key
                .outputs
                .iter()
                .any(|o| needed.iter().any(|n| satisfies(t, o, n)));
            if helps && useful.insert(i) {
                for m in &cl.members {
                    needed.extend(m.service.inputs.iter().cloned());
                }
            }
        }
        if useful.len() == before {
            break;
        }
    }
    useful.into_iter().collect()
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// All minimal-length satisfied compositions over `clusters`, whose members
/// must already be ranked.
pub fn compose(
    t: &Taxonomy,
    r: &CompositionRequest,
    clusters: &[ServiceCluster],
) -> Result<Vec<PlanOptions>, CloudError> {
    if covered(t, &r.available_inputs, &r.goal_outputs) {
        return Ok(vec![PlanOptions { stages: Vec::new() }]);
    }
    let pool = relevant(t, r, clusters);
    for k in 1..=r.max_stages.min(pool.len()) {
        let mut idx: Vec<usize> = (0..k).collect();
        let mut found = Vec::new();
        loop {
            let subset: Vec<usize> = idx.iter().map(|&i| pool[i]).collect();
            if let Some(p) = chain(t, r, clusters, &subset) {
                found.push(p);
            }
            if !next_combination(&mut idx, pool.len()) {
                break;
            }
        }
        if !found.is_empty() {
            return Ok(found);
        }
    }
    Err(CloudError::NoPlanFound)
}

/// Per-field normalization range for aggregates: the analytic extremes over
/// every substitution of every plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityScale {
    lo: [f64; 5],
    hi: [f64; 5],
}

impl UtilityScale {
    pub fn new(plans: &[PlanOptions]) -> Self {
        let mut lo = [f64::INFINITY; 5];
        let mut hi = [f64::NEG_INFINITY; 5];
        for p in plans {
            for (j, f) in QosField::ALL.into_iter().enumerate() {
                let vals: Vec<(f64, f64)> = p
                    .stages
                    .iter()
                    .map(|s| {
                        let v = s.iter().map(|c| c.service.qos.get(f));
                        let min = v.clone().fold(f64::INFINITY, f64::min);
                        let max = v.fold(f64::NEG_INFINITY, f64::max);
                        (min, max)
                    })
                    .collect();
                let id = QosProfile::identity().get(f);
                let (a, b) = match f {
                    QosField::DelayMs | QosField::Price => vals
                        .iter()
                        .fold((id, id), |(a, b), (x, y)| (a + x, b + y)),
                    QosField::Reliability | QosField::Availability => vals
                        .iter()
                        .fold((id, id), |(a, b), (x, y)| (a * x, b * y)),
                    QosField::SecurityLevel => vals
                        .iter()
                        .fold((id, id), |(a, b), (x, y)| (a.min(*x), b.min(*y))),
                };
                lo[j] = lo[j].min(a);
                hi[j] = hi[j].max(b);
            }
        }
        Self { lo, hi }
    }

    pub fn utility(&self, q: &QosProfile, w: &WeightVector) -> f64 {
        let mut row = [0.0; 5];
        for (j, f) in QosField::ALL.into_iter().enumerate() {
            let (lo, hi) = (self.lo[j], self.hi[j]);
            row[j] = if lo.is_finite() && hi.is_finite() {
                normalize_value(q.get(f), lo, hi, f.direction())
            } else {
                1.0
            };
            row[j] = row[j].clamp(0.0, 1.0);
        }
        weighted_sum(&row, w)
    }
}

/// An optimized plan with the members chosen per stage and the per-stage
/// alternatives it was picked from.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub plan: CompositionPlan,
    pub utility: f64,
    pub chosen: Vec<Candidate>,
    pub alternatives: Vec<Vec<Candidate>>,
    pub exhaustive: bool,
}

fn better(a: (f64, &CompositionPlan), b: (f64, &CompositionPlan)) -> bool {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => {
            (a.1.stages.len(), &a.1.stages) < (b.1.stages.len(), &b.1.stages)
        }
    }
}

fn evaluate(p: &PlanOptions, pick: &[usize], scale: &UtilityScale, w: &WeightVector) -> (f64, CompositionPlan) {
    let chosen: Vec<&Candidate> = p.stages.iter().zip(pick).map(|(s, &i)| &s[i]).collect();
    let plan = build_plan(&chosen);
    (scale.utility(&plan.aggregate, w), plan)
}

fn finish(p: &PlanOptions, pick: &[usize], utility: f64, plan: CompositionPlan, exhaustive: bool) -> Optimized {
    Optimized {
        plan,
        utility,
        chosen: p.stages.iter().zip(pick).map(|(s, &i)| s[i].clone()).collect(),
        alternatives: p.stages.clone(),
        exhaustive,
    }
}

/// Every member substitution of every plan, best utility first.
pub fn optimize_exhaustive(plans: &[PlanOptions], w: &WeightVector) -> Option<Optimized> {
    let scale = UtilityScale::new(plans);
    let mut best: Option<(f64, CompositionPlan, usize, Vec<usize>)> = None;
    for (pi, p) in plans.iter().enumerate() {
        let mut pick = vec![0; p.stages.len()];
        loop {
            let (u, plan) = evaluate(p, &pick, &scale, w);
            if best.as_ref().is_none_or(|b| better((u, &plan), (b.0, &b.1))) {
                best = Some((u, plan, pi, pick.clone()));
            }
            let mut j = 0;
            while j < pick.len() {
                pick[j] += 1;
                if pick[j] < p.stages[j].len() {
                    break;
                }
                pick[j] = 0;
                j += 1;
            }
            if j == pick.len() {
                break;
            }
        }
    }
    best.map(|(u, plan, pi, pick)| finish(&plans[pi], &pick, u, plan, true))
}

/// Starts every plan from its top members and improves one stage at a time
/// until no single substitution helps.
pub fn optimize_greedy(plans: &[PlanOptions], w: &WeightVector) -> Option<Optimized> {
    let scale = UtilityScale::new(plans);
    let mut best: Option<(f64, CompositionPlan, usize, Vec<usize>)> = None;
    for (pi, p) in plans.iter().enumerate() {
        let mut pick = vec![0; p.stages.len()];
        let (mut u, mut plan) = evaluate(p, &pick, &scale, w);
        let mut improved = true;
        while improved {
            improved = false;
            for j in 0..pick.len() {
                for alt in 0..p.stages[j].len() {
                    if alt == pick[j] {
                        continue;
                    }
                    let mut trial = pick.clone();
                    trial[j] = alt;
                    let (tu, tplan) = evaluate(p, &trial, &scale, w);
                    if tu > u {
                        (u, plan, pick) = (tu, tplan, trial);
                        improved = true;
                    }
                }
            }
        }
        if best.as_ref().is_none_or(|b| better((u, &plan), (b.0, &b.1))) {
            best = Some((u, plan, pi, pick));
        }
    }
    best.map(|(u, plan, pi, pick)| finish(&plans[pi], &pick, u, plan, false))
}

/// Exhaustive when there are at most [`EXHAUSTIVE_LIMIT`] substitutions in
/// total, greedy otherwise. `None` only for an empty plan list.
pub fn optimize(plans: &[PlanOptions], w: &WeightVector) -> Option<Optimized> {
    let total = plans
        .iter()
        .fold(0usize, |acc, p| acc.saturating_add(p.combinations()));
    if total <= EXHAUSTIVE_LIMIT {
        optimize_exhaustive(plans, w)
    } else {
        optimize_greedy(plans, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IdKind;
    use crate::ontology::load_taxonomy;

    fn tax() -> Taxonomy {
        load_taxonomy("Thing\nData < Thing\nRaw < Data\nCelsius < Data\nAlert < Data\nUrgentAlert < Alert\nFunc < Thing\nConvert < Func\nNotify < Func")
            .unwrap()
    }

    fn cand(seq: u32, concept: &str, ins: &[&str], outs: &[&str], q: QosProfile) -> Candidate {
        let mut s = ServiceDescription::new(concept, format!("/s{seq}"), q);
        s.inputs = ins.iter().map(|x| x.to_string()).collect();
        s.outputs = outs.iter().map(|x| x.to_string()).collect();
        let id = Identifier::new(IdKind::Service, 1, seq);
        s.id = Some(id);
        Candidate {
            gateway: "gw-1".into(),
            id,
            service: s,
        }
    }

    fn q(delay: f64, rel: f64, sec: u8) -> QosProfile {
        QosProfile::new(delay, 1.0, rel, 0.99, sec).unwrap()
    }

    #[test]
    fn aggregation_arithmetic() {
        assert_eq!(aggregate_qos(&[]), Err(CloudError::EmptyPlan));
        let one = q(7.0, 0.5, 2);
        assert_eq!(aggregate_qos(&[one]).unwrap(), one);
        let a = aggregate_qos(&[q(10.0, 0.9, 3), q(20.0, 0.8, 1), q(0.0, 1.0, 4)]).unwrap();
        assert_eq!(a.delay_ms, 30.0);
        assert!((a.reliability - 0.72).abs() < 1e-12);
        assert_eq!(a.security_level, 1);
        assert_eq!(a.price, 3.0);
    }

    #[test]
    fn classify_groups_by_concept_and_outputs() {
        assert!(classify(&[]).is_empty());
        let cs = [
            cand(1, "Convert", &["Raw"], &["Celsius"], q(1.0, 0.9, 1)),
            cand(2, "Notify", &["Celsius"], &["Alert"], q(1.0, 0.9, 1)),
            cand(3, "Convert", &["Data"], &["Celsius"], q(1.0, 0.9, 1)),
            cand(4, "Notify", &["Celsius"], &["Alert"], q(1.0, 0.9, 1)),
        ];
        let cl = classify(&cs);
        assert_eq!(cl.len(), 2);
        assert_eq!(cl[0].key.concept, "Convert");
        let ids: Vec<u32> = cl[1].members.iter().map(|c| c.id.sequence).collect();
        assert_eq!(ids, [2, 4]);
        let same: Vec<Candidate> = (1..=4).map(|i| cand(i, "Notify", &[], &["Alert"], q(1.0, 0.9, 1))).collect();
        assert_eq!(classify(&same)[0].members.len(), 4);
    }

    #[test]
    fn chaining_examples() {
        let t = tax();
        let mut r = CompositionRequest::new(["Raw"], ["Alert"]);
        let cs = [
            cand(1, "Convert", &["Raw"], &["Celsius"], q(1.0, 0.9, 1)),
            cand(2, "Notify", &["Celsius"], &["UrgentAlert"], q(1.0, 0.9, 1)),
        ];
        let cl = classify(&cs);
        let plans = compose(&t, &r, &cl).unwrap();
        assert_eq!(plans.len(), 1);
        let ids: Vec<u32> = plans[0].plan().stages.iter().map(|s| s.service.sequence).collect();
        assert_eq!(ids, [1, 2]);

        r.available_inputs.insert("UrgentAlert".into());
        let empty = compose(&t, &r, &cl).unwrap();
        assert!(empty[0].stages.is_empty());
        assert_eq!(empty[0].plan().aggregate, QosProfile::identity());

        let r = CompositionRequest::new(["Raw"], ["Alert"]);
        assert_eq!(compose(&t, &r, &classify(&cs[1..])), Err(CloudError::NoPlanFound));
    }

    #[test]
    fn exhaustive_picks_the_hand_computed_best() {
        // two stages, two alternatives each; weights on delay and reliability
        let w = WeightVector::new(&BTreeMap::from([(QosField::DelayMs, 1.0), (QosField::Reliability, 1.0)])).unwrap();
        let p = PlanOptions {
            stages: vec![
                vec![cand(1, "Convert", &[], &["Celsius"], q(10.0, 0.9, 1)), cand(2, "Convert", &[], &["Celsius"], q(30.0, 0.99, 1))],
                vec![cand(3, "Notify", &[], &["Alert"], q(20.0, 0.5, 1)), cand(4, "Notify", &[], &["Alert"], q(5.0, 0.8, 1))],
            ],
        };
        // delay range [15, 50], reliability range [0.45, 0.792]
        let u = |d: f64, r: f64| 0.5 * (50.0 - d) / 35.0 + 0.5 * (r - 0.45) / (0.792 - 0.45);
        let expected = [
            ((1, 3), u(30.0, 0.45)),
            ((1, 4), u(15.0, 0.72)),
            ((2, 3), u(50.0, 0.495)),
            ((2, 4), u(35.0, 0.792)),
        ];
        let best = expected.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        let got = optimize_exhaustive(std::slice::from_ref(&p), &w).unwrap();
        let ids: Vec<u32> = got.chosen.iter().map(|c| c.id.sequence).collect();
        assert_eq!(ids, [best.0 .0, best.0 .1]);
        assert!((got.utility - best.1).abs() < 1e-9);
        assert!(got.exhaustive);
    }
}
