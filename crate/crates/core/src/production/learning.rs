use serde::{Deserialize, Serialize};

use super::{Action, Condition, Production, Source};
use crate::chunk::Symbol;
use crate::memory::MmEntry;
use crate::time::SimTime;

/// Utility learning and production formation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerParams {
    pub alpha: f64,
    /// Reward discount per second between firing and reward.
    pub time_cost: f64,
    pub formation_threshold: f64,
    pub provisional_ttl_s: f64,
    pub formation: bool,
}

impl Default for LearnerParams {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            time_cost: 0.0,
            formation_threshold: 2.0,
            provisional_ttl_s: 60.0,
            formation: true,
        }
    }
}

/// One utility change, as logged in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityUpdate {
    pub production: Symbol,
    pub before: f64,
    pub after: f64,
    pub effective_reward: f64,
    pub made_permanent: bool,
}

/// `U + α(R − U)`.
pub fn td_update(utility: f64, alpha: f64, reward: f64) -> f64 {
    utility + alpha * (reward - utility)
}

/// Tracks firings since the last reward and applies discounted TD updates.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityLearner {
    pub alpha: f64,
    pub time_cost: f64,
    pending: Vec<(Symbol, SimTime)>,
}

impl UtilityLearner {
    pub fn new(alpha: f64, time_cost: f64) -> Self {
        assert!(
            alpha > 0.0 && alpha <= 1.0,
            "learning rate must lie in (0, 1], got {alpha}"
        );
        Self {
            alpha,
            time_cost,
            pending: Vec::new(),
        }
    }

    pub fn from_params(p: &LearnerParams) -> Self {
        Self::new(p.alpha, p.time_cost)
    }

    pub fn record(&mut self, production: Symbol, fired_at: SimTime) {
        self.pending.push((production, fired_at));
    }

    pub fn pending(&self) -> &[(Symbol, SimTime)] {
        &self.pending
    }

    /// Update one production for a firing (or deposit) at `since`. Returns
    /// `None` if the production no longer exists.
    pub fn apply(
        &self,
        productions: &mut [Production],
        name: &Symbol,
        since: SimTime,
        reward: f64,
        at: SimTime,
    ) -> Option<UtilityUpdate> {
        let p = productions.iter_mut().find(|p| &p.name == name)?;
        let effective = reward - self.time_cost * at.secs_since(since);
        let before = p.utility;
        p.utility = td_update(before, self.alpha, effective);
        let made_permanent = !p.permanent && effective > 0.0;
        if made_permanent {
            p.permanent = true;
        }
        Some(UtilityUpdate {
            production: name.clone(),
            before,
            after: p.utility,
            effective_reward: effective,
            made_permanent,
        })
    }

    /// Credit every pending firing with `reward` delivered at `at`, then
    /// clear the pending list.
    pub fn update(&mut self, productions: &mut [Production], reward: f64, at: SimTime) -> Vec<UtilityUpdate> {
        let pending = std::mem::take(&mut self.pending);
        pending
            .iter()
            .filter_map(|(name, t)| self.apply(productions, name, *t, reward, at))
            .collect()
    }
}

/// Propose a provisional production that retrieves `entry` into `buffer`,
/// if the entry is active enough and `owner` has no production retrieving
/// the same pattern yet.
pub fn form_retrieval_production(
    entry: &MmEntry,
    activation: f64,
    owner: &Symbol,
    buffer: &Symbol,
    existing: &[Production],
    threshold: f64,
    now: SimTime,
) -> Option<Production> {
    if activation.is_nan() || activation <= threshold {
        return None;
    }
    let pattern = entry.chunk()?.to_query();
    let duplicate = existing.iter().filter(|p| &p.owner == owner).any(|p| {
        p.conditions
            .iter()
            .any(|c| !c.negated && matches!(c.source, Source::Mm(_)) && c.pattern == pattern)
    });
    if duplicate {
        return None;
    }
    let mut p = Production::new(
        Symbol::lit(&format!("retrieve-{}", entry.id().0)),
        owner.clone(),
        vec![
            Condition::mm(vec![entry.tag().clone()], pattern.clone()),
            // Without this the production would rewrite the same chunk every cycle.
            Condition::buffer(buffer.clone(), pattern.clone()).negate(),
        ],
        vec![Action::WriteBuffer {
            buffer: buffer.clone(),
            template: pattern,
            urgent: false,
        }],
    );
    p.permanent = false;
    p.created_at = Some(now);
    Some(p)
}

/// Remove provisional productions older than `ttl_s` whose utility is not
/// positive; returns the removed ones.
pub fn prune_provisional(productions: &mut Vec<Production>, now: SimTime, ttl_s: f64) -> Vec<Production> {
    let (gone, kept): (Vec<_>, Vec<_>) = std::mem::take(productions)
        .into_iter()
        .partition(|p| !p.permanent && p.utility <= 0.0 && p.created_at.is_some_and(|t| now.secs_since(t) > ttl_s));
    *productions = kept;
    gone
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunk::ChunkContent;
    use crate::memory::{MiddleMemory, MmParams, Payload, WorkingMemory};

    fn s(x: &str) -> Symbol {
        Symbol::lit(x)
    }

    fn named(name: &str) -> Production {
        Production::new(s(name), s("central"), vec![], vec![])
    }

    #[test]
    fn td_arithmetic() {
        let mut ps = vec![named("p")];
        let mut l = UtilityLearner::new(0.2, 0.0);
        l.record(s("p"), SimTime::ZERO);
        l.update(&mut ps, 10.0, SimTime::from_secs(1));
        assert!((ps[0].utility - 2.0).abs() < 1e-12);
        assert!(l.pending().is_empty());
        l.record(s("p"), SimTime::from_secs(1));
        l.update(&mut ps, 10.0, SimTime::from_secs(2));
        assert!((ps[0].utility - 3.6).abs() < 1e-12);
    }

    #[test]
    fn time_cost_discounts_reward() {
        let mut ps = vec![named("p")];
        let mut l = UtilityLearner::new(0.2, 1.0);
        l.record(s("p"), SimTime::from_secs(2));
        let ups = l.update(&mut ps, 10.0, SimTime::from_secs(5));
        assert!((ups[0].effective_reward - 7.0).abs() < 1e-12);
        assert!((ps[0].utility - 1.4).abs() < 1e-12);
    }

    #[test]
    fn closed_form_under_constant_reward() {
        let (alpha, r) = (0.35, -4.0);
        let mut u = 0.0;
        for n in 1..=30 {
            u = td_update(u, alpha, r);
            let closed = r * (1.0 - (1.0f64 - alpha).powi(n));
            assert!((u - closed).abs() < 1e-9);
        }
    }

    #[test]
    fn positive_reward_makes_provisional_permanent() {
        let mut p = named("retrieve-1");
        p.permanent = false;
        p.created_at = Some(SimTime::ZERO);
        let mut ps = vec![p];
        let mut l = UtilityLearner::new(0.2, 0.0);
        l.record(s("retrieve-1"), SimTime::ZERO);
        let ups = l.update(&mut ps, -1.0, SimTime::from_secs(1));
        assert!(!ups[0].made_permanent && !ps[0].permanent);
        l.record(s("retrieve-1"), SimTime::ZERO);
        let ups = l.update(&mut ps, 5.0, SimTime::from_secs(1));
        assert!(ups[0].made_permanent && ps[0].permanent);
    }

    #[test]
    fn missing_production_is_skipped() {
        let mut ps = vec![named("a")];
        let mut l = UtilityLearner::new(0.5, 0.0);
        l.record(s("gone"), SimTime::ZERO);
        l.record(s("a"), SimTime::ZERO);
        let ups = l.update(&mut ps, 2.0, SimTime::ZERO);
        assert_eq!(ups.len(), 1);
        assert_eq!(ps[0].utility, 1.0);
    }

    fn frequent_entry() -> (MiddleMemory, f64) {
        let mut mm = MiddleMemory::new(MmParams::default());
        let content = ChunkContent::parse("landmark", &[("kind", "bridge")]).unwrap();
        // 100 presentations 1 ms apart ending 1 ms before `now`.
        for t in 0..100 {
            mm.deposit(Payload::Chunk(content.clone()), s("vision"), SimTime::from_millis(t))
                .unwrap();
        }
        let now = SimTime::from_millis(100);
        let a = mm
            .activation(crate::memory::EntryId(0), &WorkingMemory::default(), now)
            .unwrap();
        (mm, a)
    }

    #[test]
    fn formation_above_threshold_only() {
        let (mm, a) = frequent_entry();
        // Independent oracle: ln Σ_{k=1..100} (k/1000)^-0.5
        let oracle = (1..=100).map(|k| (k as f64 / 1000.0).powf(-0.5)).sum::<f64>().ln();
        assert!((a - oracle).abs() < 1e-9);
        assert!(a > 2.0);
        let entry = mm.get(crate::memory::EntryId(0)).unwrap();
        let now = SimTime::from_millis(100);
        let p = form_retrieval_production(entry, a, &s("vision"), &s("visual"), &[], 2.0, now).unwrap();
        assert_eq!(p.name, s("retrieve-0"));
        assert!(!p.permanent);
        assert_eq!(p.created_at, Some(now));
        assert_eq!(p.utility, 0.0);
        assert_eq!(p.conditions[0].source, Source::Mm(vec![s("vision")]));
        assert!(p.conditions[1].negated);
        assert!(form_retrieval_production(entry, 1.0, &s("vision"), &s("visual"), &[], 2.0, now).is_none());
        assert!(
            form_retrieval_production(entry, a, &s("vision"), &s("visual"), std::slice::from_ref(&p), 2.0, now)
                .is_none()
        );
        // Another owner may still form its own.
        assert!(form_retrieval_production(entry, a, &s("other"), &s("o"), &[p], 2.0, now).is_some());
    }

    #[test]
    fn prune_rules() {
        let mk = |name: &str, u: f64, permanent: bool| {
            let mut p = named(name);
            p.utility = u;
            p.permanent = permanent;
            p.created_at = Some(SimTime::ZERO);
            p
        };
        let mut ps = vec![
            mk("stale", 0.0, false),
            mk("paid", 1.4, true),
            mk("old", -3.0, true),
            mk("young", 0.0, false),
        ];
        ps[3].created_at = Some(SimTime::from_secs(30));
        let gone = prune_provisional(&mut ps, SimTime::from_secs(61), 60.0);
        assert_eq!(gone.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(), ["stale"]);
        assert_eq!(ps.len(), 3);
    }

    #[test]
    fn learner_params_json_defaults() {
        let p: LearnerParams = serde_json::from_str(r#"{"alpha":0.1}"#).unwrap();
        assert_eq!(p.alpha, 0.1);
        assert_eq!(p.formation_threshold, 2.0);
        assert!(serde_json::from_str::<LearnerParams>(r#"{"beta":1}"#).is_err());
    }
}
