//! Fair selection among enabled agents.
//!
//! Two score disciplines back the m-ary fair parallel operator. The crisp
//! discipline is carpool bookkeeping: with `U = lcm(1..m)`, the executed
//! agent gains `U(n-1)/n` and every other enabled agent loses `U/n`, where
//! `n` is the number of enabled agents — all exact integers, zero-sum by
//! construction. The soft discipline keeps one constraint section per agent,
//! combined with everything that agent has told, and compares sections by
//! their best level.
//!
//! Selection tie-breaks are deterministic everywhere: crisp selection takes
//! the lowest agent id among minimal scores; soft selection breaks blevel
//! ties by lower executed count, then lowest id.
//!
//! A [`FairnessLedger`] runs alongside either discipline and records, per
//! agent, the executed count `E` and the ideal share `I` (the sum of
//! `1/n` over steps where the agent was enabled), from which the `|E - I|`
//! deviation report is produced.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_integer::Integer;
use num_rational::Rational64;
use num_traits::{Signed, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::constraints::{ConstraintError, ConstraintSystem, SoftConstraint};
use crate::semiring::SemiringValue;
use crate::AgentId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("no enabled agent to select from")]
    EmptyEnabledSet,
    #[error("agent {0} is not live in the score vector")]
    UnknownAgent(AgentId),
    #[error("executed agent {0} is not in the enabled set")]
    NotEnabled(AgentId),
    #[error("trip cost overflows for {0} agents")]
    TripCostOverflow(usize),
    #[error("a fair group needs at least one agent")]
    EmptyGroup,
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
}

/// `lcm(1..=m)`: the total trip cost. Chosen so that both `U(n-1)/n` and
/// `U/n` are integers for every `1 <= n <= m`.
pub fn compute_u(m: usize) -> Result<i64, SchedulerError> {
    if m == 0 {
        return Err(SchedulerError::EmptyGroup);
    }
    let mut u: i64 = 1;
    for n in 2..=m as i64 {
        let g = u.gcd(&n);
        u = (u / g)
            .checked_mul(n)
            .ok_or(SchedulerError::TripCostOverflow(m))?;
    }
    Ok(u)
}

/// Integer carpool scores for the live agents of one fair group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrispScoreVector {
    u: i64,
    entries: BTreeMap<AgentId, i64>,
}

impl CrispScoreVector {
    /// Fresh vector for the initial group: every score starts at zero and
    /// `U` is fixed from the initial agent count for the whole run.
    pub fn new(ids: &[AgentId]) -> Result<Self, SchedulerError> {
        let u = compute_u(ids.len())?;
        Ok(CrispScoreVector {
            u,
            entries: ids.iter().map(|id| (*id, 0)).collect(),
        })
    }

    /// Builds a vector from explicit parts; used by tests and replay.
    pub fn from_parts(u: i64, entries: BTreeMap<AgentId, i64>) -> Self {
        CrispScoreVector { u, entries }
    }

    pub fn u(&self) -> i64 {
        self.u
    }

    pub fn entries(&self) -> &BTreeMap<AgentId, i64> {
        &self.entries
    }

    pub fn score(&self, id: AgentId) -> Option<i64> {
        self.entries.get(&id).copied()
    }

    pub fn sum(&self) -> i64 {
        self.entries.values().sum()
    }

    /// The enabled agent with the minimal score; ties go to the lowest id.
    pub fn select(&self, enabled: &[AgentId]) -> Result<AgentId, SchedulerError> {
        let mut best: Option<(i64, AgentId)> = None;
        for id in enabled {
            let score = self
                .entries
                .get(id)
                .copied()
                .ok_or(SchedulerError::UnknownAgent(*id))?;
            let candidate = (score, *id);
            if best.is_none_or(|b| candidate < b) {
                best = Some(candidate);
            }
        }
        best.map(|(_, id)| id)
            .ok_or(SchedulerError::EmptyEnabledSet)
    }

    /// Carpool update: the executed agent gains `U(n-1)/n`, the other
    /// enabled agents lose `U/n`, agents outside the enabled set keep their
    /// score. The deltas cancel exactly.
    pub fn update(&mut self, executed: AgentId, enabled: &[AgentId]) -> Result<(), SchedulerError> {
        if !enabled.contains(&executed) {
            return Err(SchedulerError::NotEnabled(executed));
        }
        for id in enabled {
            if !self.entries.contains_key(id) {
                return Err(SchedulerError::UnknownAgent(*id));
            }
        }
        let n = enabled.len() as i64;
        let alpha = self.u * (n - 1) / n;
        let beta = self.u / n;
        for id in enabled {
            let slot = self.entries.get_mut(id).expect("checked above");
            if *id == executed {
                *slot += alpha;
            } else {
                *slot -= beta;
            }
        }
        Ok(())
    }

    /// Drops an agent's entry; the remaining scores are unchanged.
    pub fn remove(&mut self, id: AgentId) -> Result<(), SchedulerError> {
        self.entries
            .remove(&id)
            .map(|_| ())
            .ok_or(SchedulerError::UnknownAgent(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Which end of the section order soft selection favours.
///
/// `Min` follows the guard literally: the agent whose section is lowest
/// evolves. `Max` is the carpool-consistent reading (the best-served agent
/// has the highest section, so picking the lowest-served means picking the
/// minimal one — under combination-only updates sections can only go down,
/// which makes the most-served agent the *lowest*; `Max` therefore serves
/// the least-served first). Both are selectable and tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SoftPolicy {
    #[default]
    Min,
    Max,
}

/// Per-agent constraint sections for soft fair selection. Each section is
/// the combination of everything the agent has told, starting from the
/// all-one empty-scope constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoftScoreVector {
    entries: BTreeMap<AgentId, SoftConstraint>,
}

impl SoftScoreVector {
    pub fn new(ids: &[AgentId], system: &Arc<ConstraintSystem>) -> Result<Self, SchedulerError> {
        if ids.is_empty() {
            return Err(SchedulerError::EmptyGroup);
        }
        let unit = SoftConstraint::all_one(system.clone(), Vec::new())?;
        Ok(SoftScoreVector {
            entries: ids.iter().map(|id| (*id, unit.clone())).collect(),
        })
    }

    pub fn entries(&self) -> &BTreeMap<AgentId, SoftConstraint> {
        &self.entries
    }

    pub fn section(&self, id: AgentId) -> Option<&SoftConstraint> {
        self.entries.get(&id)
    }

    /// Sections have different scopes across agents, so they are compared by
    /// their best level (projection to the empty scope), which is
    /// scope-independent. Ties break by lower executed count, then lowest
    /// id.
    pub fn select(
        &self,
        enabled: &[AgentId],
        policy: SoftPolicy,
        ledger: &FairnessLedger,
    ) -> Result<AgentId, SchedulerError> {
        let mut best: Option<(SemiringValue, u64, AgentId)> = None;
        for id in enabled {
            let section = self
                .entries
                .get(id)
                .ok_or(SchedulerError::UnknownAgent(*id))?;
            let level = section.blevel();
            let executed = ledger.executed(*id);
            let better = match &best {
                None => true,
                Some((bl, be, bid)) => {
                    let strictly = match policy {
                        SoftPolicy::Min => level.lt(bl).map_err(ConstraintError::from)?,
                        SoftPolicy::Max => bl.lt(&level).map_err(ConstraintError::from)?,
                    };
                    strictly || (level == *bl && (executed, *id) < (*be, *bid))
                }
            };
            if better {
                best = Some((level, executed, *id));
            }
        }
        best.map(|(_, _, id)| id)
            .ok_or(SchedulerError::EmptyEnabledSet)
    }

    /// Combines the told constraint into the executed agent's section; all
    /// other sections are untouched. Steps that tell nothing leave the
    /// vector unchanged (the caller simply does not call this).
    pub fn update(
        &mut self,
        executed: AgentId,
        told: &SoftConstraint,
    ) -> Result<(), SchedulerError> {
        let section = self
            .entries
            .get_mut(&executed)
            .ok_or(SchedulerError::UnknownAgent(executed))?;
        *section = section.combine(told)?;
        Ok(())
    }

    pub fn remove(&mut self, id: AgentId) -> Result<(), SchedulerError> {
        self.entries
            .remove(&id)
            .map(|_| ())
            .ok_or(SchedulerError::UnknownAgent(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Score state attached to one fair group; which variant is live follows
/// the run's fair mode.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum GroupScores {
    /// No scores kept: selection is leftmost-enabled (plain interleaving).
    #[default]
    Unscored,
    Crisp(CrispScoreVector),
    Soft(SoftScoreVector),
}

impl GroupScores {
    pub fn remove(&mut self, id: AgentId) -> Result<(), SchedulerError> {
        match self {
            GroupScores::Unscored => Ok(()),
            GroupScores::Crisp(k) => k.remove(id),
            GroupScores::Soft(k) => k.remove(id),
        }
    }
}

/// Per-agent execution accounting: executed count `E`, ideal share `I`
/// (exact rational) and the number of steps the agent was enabled.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FairnessLedger {
    entries: BTreeMap<AgentId, LedgerEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LedgerEntry {
    pub executed: u64,
    pub ideal: Rational64,
    pub enabled_steps: u64,
}

impl LedgerEntry {
    pub fn deviation(&self) -> Rational64 {
        (Rational64::from_integer(self.executed as i64) - self.ideal).abs()
    }
}

impl FairnessLedger {
    pub fn new() -> Self {
        FairnessLedger::default()
    }

    pub fn entries(&self) -> &BTreeMap<AgentId, LedgerEntry> {
        &self.entries
    }

    pub fn executed(&self, id: AgentId) -> u64 {
        self.entries.get(&id).map_or(0, |e| e.executed)
    }

    /// Records one selection step: the executed agent's `E` grows by one and
    /// every enabled agent's `I` grows by exactly `1/n`.
    pub fn record(&mut self, enabled: &[AgentId], executed: AgentId) -> Result<(), SchedulerError> {
        if !enabled.contains(&executed) {
            return Err(SchedulerError::NotEnabled(executed));
        }
        let share = Rational64::new(1, enabled.len() as i64);
        for id in enabled {
            let entry = self.entries.entry(*id).or_default();
            entry.ideal += share;
            entry.enabled_steps += 1;
        }
        self.entries.entry(executed).or_default().executed += 1;
        Ok(())
    }

    /// Largest current deviation over all agents.
    pub fn max_deviation(&self) -> Rational64 {
        self.entries
            .values()
            .map(LedgerEntry::deviation)
            .max()
            .unwrap_or_else(Rational64::zero)
    }

    /// Builds the serializable report. `final_scores` and `max_abs_score`
    /// come from the engine's run state; `max_deviation_seen` is the running
    /// maximum over the whole run when the caller tracked one, otherwise the
    /// final value stands in.
    pub fn report(
        &self,
        final_scores: Option<ScoreSnapshot>,
        max_abs_score: Option<i64>,
        max_deviation_seen: Option<Rational64>,
    ) -> FairnessReport {
        let agents = self
            .entries
            .iter()
            .map(|(id, e)| {
                (
                    id.0,
                    AgentFairness {
                        e: e.executed,
                        i: e.ideal.to_string(),
                        deviation: e.deviation().to_string(),
                        enabled_steps: e.enabled_steps,
                    },
                )
            })
            .collect();
        let n_bound = self.max_deviation();
        FairnessReport {
            agents,
            n_bound: n_bound.to_string(),
            max_deviation_seen: max_deviation_seen.unwrap_or(n_bound).to_string(),
            final_scores,
            max_abs_score,
        }
    }
}

/// One snapshot of every live score entry, keyed by agent id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum ScoreSnapshot {
    Crisp(BTreeMap<u32, i64>),
    /// Soft sections are summarized by their best level.
    Soft(BTreeMap<u32, String>),
}

/// Fairness report: per-agent `E`, `I` and `|E - I|`, the global bound `N`
/// (the largest final deviation), plus the final score snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FairnessReport {
    pub agents: BTreeMap<u32, AgentFairness>,
    pub n_bound: String,
    pub max_deviation_seen: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_scores: Option<ScoreSnapshot>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_score: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AgentFairness {
    pub e: u64,
    pub i: String,
    pub deviation: String,
    pub enabled_steps: u64,
}

impl FairnessReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reports serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semiring::Semiring;

    fn ids(v: &[u32]) -> Vec<AgentId> {
        v.iter().map(|i| AgentId(*i)).collect()
    }

    fn fuzzy_system() -> Arc<ConstraintSystem> {
        ConstraintSystem::new(
            Semiring::Fuzzy,
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
        )
        .unwrap()
    }

    fn fz(n: i64, d: i64) -> SemiringValue {
        Semiring::Fuzzy
            .from_rational(Rational64::new(n, d))
            .unwrap()
    }

    #[test]
    fn trip_cost_is_lcm() {
        assert_eq!(compute_u(1).unwrap(), 1);
        assert_eq!(compute_u(3).unwrap(), 6);
        assert_eq!(compute_u(4).unwrap(), 12);
        assert!(compute_u(0).is_err());
    }

    #[test]
    fn crisp_select_prefers_low_score_then_low_id() {
        let k = CrispScoreVector::from_parts(
            6,
            [(AgentId(0), 4), (AgentId(1), -2), (AgentId(2), -2)]
                .into_iter()
                .collect(),
        );
        assert_eq!(k.select(&ids(&[0, 1, 2])).unwrap(), AgentId(1));
        assert_eq!(k.select(&ids(&[0])).unwrap(), AgentId(0));
        let zeros = CrispScoreVector::new(&ids(&[0, 1, 2])).unwrap();
        assert_eq!(zeros.select(&ids(&[0, 1, 2])).unwrap(), AgentId(0));
        assert!(zeros.select(&[]).is_err());
    }

    #[test]
    fn crisp_update_examples() {
        let mut k = CrispScoreVector::new(&ids(&[0, 1, 2])).unwrap();
        assert_eq!(k.u(), 6);
        k.update(AgentId(0), &ids(&[0, 1, 2])).unwrap();
        assert_eq!(k.score(AgentId(0)), Some(4));
        assert_eq!(k.score(AgentId(1)), Some(-2));
        assert_eq!(k.score(AgentId(2)), Some(-2));
        assert_eq!(k.sum(), 0);

        let mut k = CrispScoreVector::new(&ids(&[0, 1, 2])).unwrap();
        k.update(AgentId(0), &ids(&[0, 1])).unwrap();
        assert_eq!(k.score(AgentId(0)), Some(3));
        assert_eq!(k.score(AgentId(1)), Some(-3));
        assert_eq!(k.score(AgentId(2)), Some(0));

        // A lone enabled agent pays nothing and earns nothing.
        let mut k = CrispScoreVector::new(&ids(&[0])).unwrap();
        k.update(AgentId(0), &ids(&[0])).unwrap();
        assert_eq!(k.score(AgentId(0)), Some(0));

        let mut k = CrispScoreVector::new(&ids(&[0, 1])).unwrap();
        assert!(k.update(AgentId(0), &ids(&[1])).is_err());
    }

    #[test]
    fn remove_keeps_other_entries() {
        let mut k = CrispScoreVector::from_parts(
            6,
            [(AgentId(0), 4), (AgentId(1), -2), (AgentId(2), -2)]
                .into_iter()
                .collect(),
        );
        k.remove(AgentId(1)).unwrap();
        assert_eq!(k.score(AgentId(0)), Some(4));
        assert_eq!(k.score(AgentId(1)), None);
        assert_eq!(k.score(AgentId(2)), Some(-2));
        k.remove(AgentId(0)).unwrap();
        k.remove(AgentId(2)).unwrap();
        assert!(k.is_empty());
        assert!(k.remove(AgentId(2)).is_err());

        let sys = fuzzy_system();
        let mut s = SoftScoreVector::new(&ids(&[0, 1]), &sys).unwrap();
        s.remove(AgentId(0)).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.section(AgentId(1)).is_some());
    }

    #[test]
    fn soft_select_compares_blevels() {
        let sys = fuzzy_system();
        let x = sys.var("x").unwrap();
        let mut k = SoftScoreVector::new(&ids(&[0, 1, 2]), &sys).unwrap();
        let ledger = FairnessLedger::new();
        // Sections with blevels 1, 3/5, 4/5.
        let c06 = SoftConstraint::new(sys.clone(), vec![x], vec![fz(3, 5), fz(1, 2)]).unwrap();
        let c08 = SoftConstraint::new(sys.clone(), vec![x], vec![fz(4, 5), fz(1, 5)]).unwrap();
        k.update(AgentId(1), &c06).unwrap();
        k.update(AgentId(2), &c08).unwrap();
        assert_eq!(
            k.select(&ids(&[0, 1, 2]), SoftPolicy::Min, &ledger)
                .unwrap(),
            AgentId(1)
        );
        assert_eq!(
            k.select(&ids(&[0, 1, 2]), SoftPolicy::Max, &ledger)
                .unwrap(),
            AgentId(0)
        );

        // Full tie at the initial state goes to the lowest id.
        let fresh = SoftScoreVector::new(&ids(&[0, 1, 2]), &sys).unwrap();
        assert_eq!(
            fresh
                .select(&ids(&[0, 1, 2]), SoftPolicy::Min, &ledger)
                .unwrap(),
            AgentId(0)
        );

        // Ties break by executed count before id.
        let mut ledger = FairnessLedger::new();
        ledger.record(&ids(&[0, 1, 2]), AgentId(0)).unwrap();
        assert_eq!(
            fresh
                .select(&ids(&[0, 1, 2]), SoftPolicy::Min, &ledger)
                .unwrap(),
            AgentId(1)
        );
    }

    #[test]
    fn soft_update_only_touches_executed_section() {
        let sys = fuzzy_system();
        let x = sys.var("x").unwrap();
        let mut k = SoftScoreVector::new(&ids(&[0, 1]), &sys).unwrap();
        let told = SoftConstraint::new(sys.clone(), vec![x], vec![fz(4, 5), fz(1, 2)]).unwrap();
        let before = k.section(AgentId(1)).unwrap().clone();
        k.update(AgentId(0), &told).unwrap();
        // All-one section combined with the told constraint equals it.
        assert_eq!(k.section(AgentId(0)).unwrap(), &told);
        assert_eq!(k.section(AgentId(1)).unwrap(), &before);

        // Telling something lower can only lower the blevel.
        let lower = SoftConstraint::new(sys, vec![x], vec![fz(3, 5), fz(3, 5)]).unwrap();
        k.update(AgentId(0), &lower).unwrap();
        assert!(k
            .section(AgentId(0))
            .unwrap()
            .blevel()
            .leq(&fz(3, 5))
            .unwrap());
    }

    #[test]
    fn ledger_shares_and_deviation() {
        let mut ledger = FairnessLedger::new();
        ledger.record(&ids(&[0, 1, 2]), AgentId(0)).unwrap();
        let e0 = &ledger.entries()[&AgentId(0)];
        assert_eq!(e0.executed, 1);
        assert_eq!(e0.ideal, Rational64::new(1, 3));
        for id in [1, 2] {
            let e = &ledger.entries()[&AgentId(id)];
            assert_eq!(e.executed, 0);
            assert_eq!(e.ideal, Rational64::new(1, 3));
            assert_eq!(e.enabled_steps, 1);
        }

        let mut solo = FairnessLedger::new();
        solo.record(&ids(&[7]), AgentId(7)).unwrap();
        let e = &solo.entries()[&AgentId(7)];
        assert_eq!(e.executed, 1);
        assert_eq!(e.ideal, Rational64::from_integer(1));
        assert_eq!(e.deviation(), Rational64::zero());

        // Nine round-robin steps with three always-enabled agents.
        let mut rr = FairnessLedger::new();
        for step in 0..9u32 {
            rr.record(&ids(&[0, 1, 2]), AgentId(step % 3)).unwrap();
        }
        for id in 0..3 {
            let e = &rr.entries()[&AgentId(id)];
            assert_eq!(e.executed, 3);
            assert_eq!(e.ideal, Rational64::from_integer(3));
        }
        assert_eq!(rr.max_deviation(), Rational64::zero());

        assert!(ledger.record(&ids(&[1, 2]), AgentId(0)).is_err());
    }

    #[test]
    fn report_examples() {
        let empty = FairnessLedger::new();
        let report = empty.report(None, None, None);
        assert!(report.agents.is_empty());
        assert_eq!(report.n_bound, "0");

        // 100 carpool-driven steps with three always-enabled agents keep the
        // deviation within one.
        let mut ledger = FairnessLedger::new();
        let mut k = CrispScoreVector::new(&ids(&[0, 1, 2])).unwrap();
        let everyone = ids(&[0, 1, 2]);
        for _ in 0..100 {
            let chosen = k.select(&everyone).unwrap();
            k.update(chosen, &everyone).unwrap();
            ledger.record(&everyone, chosen).unwrap();
            assert_eq!(k.sum(), 0);
        }
        let report = ledger.report(None, None, None);
        let bound: Rational64 = ledger.max_deviation();
        assert!(bound <= Rational64::from_integer(1));
        assert_eq!(report.n_bound, bound.to_string());
    }

    #[test]
    fn rotation_under_full_enablement() {
        // With everyone always enabled the crisp loop is strict round-robin
        // and returns to all-zero scores every m steps.
        for m in 2..=4usize {
            let all: Vec<AgentId> = (0..m as u32).map(AgentId).collect();
            let mut k = CrispScoreVector::new(&all).unwrap();
            for step in 0..(m * 3) {
                let chosen = k.select(&all).unwrap();
                assert_eq!(chosen, AgentId((step % m) as u32), "m={m} step={step}");
                k.update(chosen, &all).unwrap();
                assert_eq!(k.sum(), 0);
                if (step + 1) % m == 0 {
                    assert!(k.entries().values().all(|s| *s == 0));
                }
            }
        }
    }

    #[test]
    fn scaling_u_preserves_selection() {
        // Argmin invariance: multiplying U by a positive integer scales all
        // scores uniformly and never changes the choice sequence.
        let all = ids(&[0, 1, 2]);
        let mut base = CrispScoreVector::new(&all).unwrap();
        let mut scaled =
            CrispScoreVector::from_parts(base.u() * 5, all.iter().map(|id| (*id, 0)).collect());
        // A fixed but uneven enablement pattern.
        let patterns: Vec<Vec<AgentId>> = vec![
            ids(&[0, 1, 2]),
            ids(&[0, 1]),
            ids(&[1, 2]),
            ids(&[0, 1, 2]),
            ids(&[2]),
            ids(&[0, 2]),
        ];
        for step in 0..600 {
            let enabled = &patterns[step % patterns.len()];
            let a = base.select(enabled).unwrap();
            let b = scaled.select(enabled).unwrap();
            assert_eq!(a, b, "step {step}");
            base.update(a, enabled).unwrap();
            scaled.update(b, enabled).unwrap();
            for id in &all {
                assert_eq!(base.score(*id).unwrap() * 5, scaled.score(*id).unwrap());
            }
        }
    }
}
