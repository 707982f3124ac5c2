//! Agent syntax tree and the substitution machinery.
//!
//! Agents reference constraints by name but carry the resolved table, so a
//! runtime tree never needs the name environment. Fair parallel nodes carry
//! their children's agent ids and the group's score state; both travel with
//! the tree as it is rewritten.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use indexmap::IndexMap;

use crate::constraints::{ConstraintSystem, SoftConstraint, VarId};
use crate::scheduler::GroupScores;
use crate::semiring::SemiringValue;
use crate::AgentId;

use super::LangError;

/// A named constraint occurrence. Renaming rewrites the table but keeps the
/// declared name for reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintRef {
    pub name: String,
    pub value: Arc<SoftConstraint>,
}

impl ConstraintRef {
    fn rename(
        &self,
        map: &BTreeMap<VarId, VarId>,
        system: &Arc<ConstraintSystem>,
    ) -> Result<ConstraintRef, LangError> {
        Ok(ConstraintRef {
            name: self.name.clone(),
            value: Arc::new(self.value.rename(map, system)?),
        })
    }
}

/// Tell/ask threshold. `None` is the eventual interpretation and behaves
/// like a zero level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Threshold {
    None,
    /// Overall consistency cut: the action fails when the relevant blevel
    /// drops strictly below the level.
    Level(SemiringValue),
    /// Pointwise cut: the action fails when the relevant store view is
    /// strictly below the constraint.
    Cut(ConstraintRef),
}

impl Threshold {
    /// A vacuous threshold never fails; this is the eventual interpretation
    /// where the crisp and soft rules coincide.
    pub fn is_vacuous(&self) -> bool {
        match self {
            Threshold::None => true,
            Threshold::Level(a) => a.is_zero(),
            Threshold::Cut(c) => c.value.table().iter().all(SemiringValue::is_zero),
        }
    }

    fn rename(
        &self,
        map: &BTreeMap<VarId, VarId>,
        system: &Arc<ConstraintSystem>,
    ) -> Result<Threshold, LangError> {
        Ok(match self {
            Threshold::None => Threshold::None,
            Threshold::Level(a) => Threshold::Level(*a),
            Threshold::Cut(c) => Threshold::Cut(c.rename(map, system)?),
        })
    }
}

/// One guarded branch of a choice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AskBranch {
    pub constraint: ConstraintRef,
    pub threshold: Threshold,
    pub then: Agent,
}

/// One child of a fair parallel composition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FairChild {
    pub id: AgentId,
    pub agent: Agent,
}

/// An m-ary fair parallel group: ordered live children plus the score state
/// driving selection. Scores are attached by the engine according to the
/// run's fair mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FairGroup {
    pub children: Vec<FairChild>,
    pub scores: GroupScores,
}

impl FairGroup {
    pub fn child_ids(&self) -> Vec<AgentId> {
        self.children.iter().map(|c| c.id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Agent {
    /// Terminal success; `stop` parses to the same node.
    Success,
    /// Terminal failure.
    Fail,
    Tell {
        constraint: ConstraintRef,
        threshold: Threshold,
        then: Box<Agent>,
    },
    /// Non-empty list of ask branches; a bare ask is a one-branch choice.
    Choice(Vec<AskBranch>),
    /// Plain binary interleaving (`A || B`).
    Par(Box<Agent>, Box<Agent>),
    /// Fair m-ary parallel composition (`par(A1, ..., Am)`).
    FairPar(FairGroup),
    Exists {
        var: VarId,
        body: Box<Agent>,
    },
    Call {
        name: String,
        args: Vec<VarId>,
    },
}

impl Agent {
    /// Free variables: constraint scopes and call arguments, with the hiding
    /// operator binding its variable.
    pub fn free_vars(&self) -> BTreeSet<VarId> {
        fn thr_vars(t: &Threshold, out: &mut BTreeSet<VarId>) {
            if let Threshold::Cut(c) = t {
                out.extend(c.value.scope().iter().copied());
            }
        }
        fn walk(agent: &Agent, out: &mut BTreeSet<VarId>) {
            match agent {
                Agent::Success | Agent::Fail => {}
                Agent::Tell {
                    constraint,
                    threshold,
                    then,
                } => {
                    out.extend(constraint.value.scope().iter().copied());
                    thr_vars(threshold, out);
                    walk(then, out);
                }
                Agent::Choice(branches) => {
                    for b in branches {
                        out.extend(b.constraint.value.scope().iter().copied());
                        thr_vars(&b.threshold, out);
                        walk(&b.then, out);
                    }
                }
                Agent::Par(l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
                Agent::FairPar(group) => {
                    for child in &group.children {
                        walk(&child.agent, out);
                    }
                }
                Agent::Exists { var, body } => {
                    let mut inner = BTreeSet::new();
                    walk(body, &mut inner);
                    inner.remove(var);
                    out.extend(inner);
                }
                Agent::Call { args, .. } => out.extend(args.iter().copied()),
            }
        }
        let mut out = BTreeSet::new();
        walk(self, &mut out);
        out
    }

    /// Capture-avoiding parameter substitution. Binders whose variable would
    /// capture an incoming actual are renamed to a fresh variable first.
    pub fn substitute(
        &self,
        formals: &[VarId],
        actuals: &[VarId],
        supply: &mut VarSupply,
    ) -> Result<Agent, LangError> {
        if formals.len() != actuals.len() {
            return Err(LangError::ArityMismatch {
                name: "<substitution>".to_string(),
                expected: formals.len(),
                got: actuals.len(),
            });
        }
        let map: BTreeMap<VarId, VarId> = formals
            .iter()
            .copied()
            .zip(actuals.iter().copied())
            .filter(|(f, a)| f != a)
            .collect();
        self.substitute_map(&map, supply)
    }

    pub(crate) fn substitute_map(
        &self,
        map: &BTreeMap<VarId, VarId>,
        supply: &mut VarSupply,
    ) -> Result<Agent, LangError> {
        if map.is_empty() {
            return Ok(self.clone());
        }
        Ok(match self {
            Agent::Success => Agent::Success,
            Agent::Fail => Agent::Fail,
            Agent::Tell {
                constraint,
                threshold,
                then,
            } => Agent::Tell {
                constraint: constraint.rename(map, supply.system())?,
                threshold: threshold.rename(map, supply.system())?,
                then: Box::new(then.substitute_map(map, supply)?),
            },
            Agent::Choice(branches) => Agent::Choice(
                branches
                    .iter()
                    .map(|b| {
                        Ok(AskBranch {
                            constraint: b.constraint.rename(map, supply.system())?,
                            threshold: b.threshold.rename(map, supply.system())?,
                            then: b.then.substitute_map(map, supply)?,
                        })
                    })
                    .collect::<Result<_, LangError>>()?,
            ),
            Agent::Par(l, r) => Agent::Par(
                Box::new(l.substitute_map(map, supply)?),
                Box::new(r.substitute_map(map, supply)?),
            ),
            Agent::FairPar(group) => Agent::FairPar(FairGroup {
                children: group
                    .children
                    .iter()
                    .map(|c| {
                        Ok(FairChild {
                            id: c.id,
                            agent: c.agent.substitute_map(map, supply)?,
                        })
                    })
                    .collect::<Result<_, LangError>>()?,
                scores: group.scores.clone(),
            }),
            Agent::Exists { var, body } => {
                let mut inner: BTreeMap<VarId, VarId> = map.clone();
                inner.remove(var);
                if inner.is_empty() {
                    return Ok(self.clone());
                }
                let free = body.free_vars();
                let captures = inner
                    .iter()
                    .any(|(from, to)| to == var && free.contains(from));
                if captures {
                    let base = supply.system().var_name(*var).to_string();
                    let fresh = supply.fresh(&base);
                    let mut rebind = BTreeMap::new();
                    rebind.insert(*var, fresh);
                    let body = body.substitute_map(&rebind, supply)?;
                    Agent::Exists {
                        var: fresh,
                        body: Box::new(body.substitute_map(&inner, supply)?),
                    }
                } else {
                    Agent::Exists {
                        var: *var,
                        body: Box::new(body.substitute_map(&inner, supply)?),
                    }
                }
            }
            Agent::Call { name, args } => Agent::Call {
                name: name.clone(),
                args: args
                    .iter()
                    .map(|a| map.get(a).copied().unwrap_or(*a))
                    .collect(),
            },
        })
    }
}

/// Mints fresh variables by extending the constraint system. Fresh names use
/// the reserved `%` namespace, which the surface syntax cannot produce, so
/// they never collide with program variables.
#[derive(Debug, Clone)]
pub struct VarSupply {
    system: Arc<ConstraintSystem>,
    counter: usize,
}

impl VarSupply {
    pub fn new(system: Arc<ConstraintSystem>) -> Self {
        VarSupply { system, counter: 0 }
    }

    pub fn system(&self) -> &Arc<ConstraintSystem> {
        &self.system
    }

    pub fn fresh(&mut self, base: &str) -> VarId {
        loop {
            let name = format!("{base}%{}", self.counter);
            self.counter += 1;
            if let Ok((system, id)) = self.system.extended(name) {
                self.system = system;
                return id;
            }
        }
    }
}

/// A procedure declaration `p(x, ...) = body`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Declaration {
    pub name: String,
    pub params: Vec<VarId>,
    pub body: Agent,
}

/// A parsed, fully resolved program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub system: Arc<ConstraintSystem>,
    pub constraints: IndexMap<String, Arc<SoftConstraint>>,
    pub declarations: IndexMap<String, Declaration>,
    pub main: Agent,
    /// First agent id not used by the parsed tree; runtime instantiation
    /// continues from here.
    pub next_agent_id: u32,
}

impl Program {
    /// True when no threshold in the program can ever fire: the premise of
    /// the eventual-interpretation equivalence.
    pub fn is_threshold_free(&self) -> bool {
        fn check(agent: &Agent) -> bool {
            match agent {
                Agent::Success | Agent::Fail | Agent::Call { .. } => true,
                Agent::Tell {
                    threshold, then, ..
                } => threshold.is_vacuous() && check(then),
                Agent::Choice(branches) => branches
                    .iter()
                    .all(|b| b.threshold.is_vacuous() && check(&b.then)),
                Agent::Par(l, r) => check(l) && check(r),
                Agent::FairPar(group) => group.children.iter().all(|c| check(&c.agent)),
                Agent::Exists { body, .. } => check(body),
            }
        }
        check(&self.main) && self.declarations.values().all(|d| check(&d.body))
    }
}
