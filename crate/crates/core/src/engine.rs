//! Small-step operational semantics.
//!
//! A [`Machine`] holds one configuration: the live agent tree, the store,
//! the fairness ledger and the step counter. Each [`Machine::step`] fires
//! exactly one rule instance and yields a [`TraceEvent`]; identical inputs
//! (program, options, seed) yield identical traces.
//!
//! Rule naming in events: `rule` is the action the selected agent performed
//! (tell and ask variants, choice branches, unfolds, `stop`, `fail`).
//! Steps that pass through a parallel composition additionally carry a
//! structural context — `par-1`/`fair-par-1` for ordinary progress,
//! `par-2`/`fair-par-2` when the step removed a finished or failed child.
//!
//! Failure handling: outside a fair group a failing agent ends the run.
//! Inside a fair group the failed child is removed the way a succeeded one
//! is, the run continues, and the final outcome records the first failure.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_rational::Rational64;
use num_traits::Zero;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::constraints::{ConstraintError, ConstraintSystem, SoftConstraint, Store};
use crate::lang::{Agent, AskBranch, FairGroup, LangError, Program, Threshold, VarSupply};
use crate::scheduler::{
    CrispScoreVector, FairnessLedger, FairnessReport, GroupScores, SchedulerError, ScoreSnapshot,
    SoftPolicy, SoftScoreVector,
};
use crate::semiring::Semiring;
use crate::AgentId;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("cc mode cannot run a program with active thresholds")]
    ThresholdsInCcMode,
    #[error("equivalence check requires a threshold-free program")]
    NotThresholdFree,
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("internal invariant breach: {0}")]
    Internal(String),
}

/// Which rule table governs the run: the plain language or the
/// threshold-aware one. With vacuous thresholds the two coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Cc,
    #[default]
    Scc,
}

/// Scheduling discipline for fair groups. `NoFair` keeps the group's
/// structural semantics but selects the leftmost enabled child.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FairMode {
    #[default]
    NoFair,
    Crisp,
    Soft,
}

/// How a multi-branch choice picks among fireable branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChoicePolicy {
    #[default]
    Leftmost,
    Seeded(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub mode: Mode,
    pub fair: FairMode,
    pub soft_policy: SoftPolicy,
    pub choice: ChoicePolicy,
    pub max_steps: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            mode: Mode::default(),
            fair: FairMode::default(),
            soft_policy: SoftPolicy::default(),
            choice: ChoicePolicy::default(),
            max_steps: 10_000,
        }
    }
}

/// The action rule that fired in one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Tell,
    ValuedTell,
    CutTell,
    Ask,
    ValuedAsk,
    CutAsk,
    ChoiceLeft,
    ChoiceRight,
    Exists,
    Call,
    Stop,
    Fail,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Tell => "tell",
            Rule::ValuedTell => "valued-tell",
            Rule::CutTell => "cut-tell",
            Rule::Ask => "ask",
            Rule::ValuedAsk => "valued-ask",
            Rule::CutAsk => "cut-ask",
            Rule::ChoiceLeft => "choice-left",
            Rule::ChoiceRight => "choice-right",
            Rule::Exists => "exists",
            Rule::Call => "call",
            Rule::Stop => "stop",
            Rule::Fail => "fail",
        }
    }

    /// Folds threshold rule names onto their eventual counterparts; sound
    /// only for vacuous thresholds.
    fn eventualized(self) -> Rule {
        match self {
            Rule::ValuedTell | Rule::CutTell => Rule::Tell,
            Rule::ValuedAsk | Rule::CutAsk => Rule::Ask,
            other => other,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Structural context a step passed through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StructCtx {
    #[serde(rename = "par-1")]
    Par1,
    #[serde(rename = "par-2")]
    Par2,
    #[serde(rename = "fair-par-1")]
    FairPar1,
    #[serde(rename = "fair-par-2")]
    FairPar2,
}

impl StructCtx {
    pub fn name(self) -> &'static str {
        match self {
            StructCtx::Par1 => "par-1",
            StructCtx::Par2 => "par-2",
            StructCtx::FairPar1 => "fair-par-1",
            StructCtx::FairPar2 => "fair-par-2",
        }
    }
}

/// One fair selection: which children were enabled and who was chosen.
/// Nested groups report innermost first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionInfo {
    pub enabled: Vec<AgentId>,
    pub chosen: AgentId,
}

/// One fired rule instance. Serialized as a JSON-lines record with exact
/// rational strings; optional fields are omitted when absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub step: usize,
    pub rule: Rule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ctx: Option<StructCtx>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint: Option<String>,
    pub blevel: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreSnapshot>,
    /// Fair selections taken during this step; diagnostic, not part of the
    /// wire schema.
    #[serde(skip)]
    pub selections: Vec<SelectionInfo>,
}

impl TraceEvent {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace events serialize")
    }

    pub fn pretty(&self) -> String {
        let mut out = format!("[{:>4}] {:<11}", self.step, self.rule.name());
        if let Some(agent) = self.agent {
            out.push_str(&format!(" agent={agent}"));
        }
        if let Some(c) = &self.constraint {
            out.push_str(&format!(" constraint={c}"));
        }
        out.push_str(&format!(" blevel={}", self.blevel));
        if let Some(ctx) = &self.ctx {
            out.push_str(&format!(" via={}", ctx.name()));
        }
        if let Some(scores) = &self.scores {
            match scores {
                ScoreSnapshot::Crisp(m) => {
                    let parts: Vec<String> = m.iter().map(|(id, s)| format!("{id}:{s}")).collect();
                    out.push_str(&format!(" scores={{{}}}", parts.join(", ")));
                }
                ScoreSnapshot::Soft(m) => {
                    let parts: Vec<String> = m.iter().map(|(id, s)| format!("{id}:{s}")).collect();
                    out.push_str(&format!(" sections={{{}}}", parts.join(", ")));
                }
            }
        }
        out
    }

    fn normalized(&self) -> TraceEvent {
        let mut e = self.clone();
        e.rule = e.rule.eventualized();
        e.selections.clear();
        e
    }
}

/// Final state of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum Outcome {
    Success,
    Fail {
        #[serde(skip_serializing_if = "Option::is_none")]
        agent: Option<AgentId>,
        rule: Rule,
    },
    Deadlock {
        suspended: Vec<AgentId>,
    },
    StepLimit,
}

impl Outcome {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("outcomes serialize")
    }

    /// CLI exit code mapping.
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Fail { .. } => 1,
            Outcome::Deadlock { .. } => 2,
            Outcome::StepLimit => 3,
        }
    }

    fn normalized(&self) -> Outcome {
        match self {
            Outcome::Fail { agent, rule } => Outcome::Fail {
                agent: *agent,
                rule: rule.eventualized(),
            },
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: Outcome,
    pub trace: Vec<TraceEvent>,
    pub report: FairnessReport,
}

/// Result of one `Machine::step` call.
#[derive(Debug, Clone)]
pub enum MachineStep {
    Event(Box<TraceEvent>),
    Done(Outcome),
}

/// Enabledness of an agent's head action against the current store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Head {
    /// A rule can fire now.
    Fires,
    /// Suspended: no rule applies but one may later (ask waiting on
    /// entailment).
    Blocked,
    /// The head action's guard is irrecoverably violated; stepping this
    /// agent makes it fail.
    Faulty,
}

struct Act {
    rule: Rule,
    agent: Option<AgentId>,
    constraint: Option<String>,
    told: Option<Arc<SoftConstraint>>,
    ctx: Option<StructCtx>,
    selections: Vec<SelectionInfo>,
}

impl Act {
    fn new(rule: Rule, agent: Option<AgentId>) -> Act {
        Act {
            rule,
            agent,
            constraint: None,
            told: None,
            ctx: None,
            selections: Vec::new(),
        }
    }

    fn with_constraint(mut self, name: &str) -> Act {
        self.constraint = Some(name.to_string());
        self
    }

    /// Innermost structural context wins; outer layers only fill gaps.
    fn default_ctx(mut self, ctx: StructCtx) -> Act {
        self.ctx.get_or_insert(ctx);
        self
    }
}

enum Reduced {
    /// One rule fired; `next` is the rewritten subtree, `None` when the
    /// subtree reached terminal success.
    Step { next: Option<Agent>, act: Act },
    /// The subtree failed (propagates through plain parallel composition).
    Fault { act: Act },
    /// No rule applies anywhere in the subtree; ownership returns.
    Blocked(Agent),
}

/// One run configuration plus everything needed to drive it.
pub struct Machine {
    program: Arc<Program>,
    opts: RunOptions,
    supply: VarSupply,
    store: Store,
    root: Option<Agent>,
    steps: usize,
    next_agent_id: u32,
    first_failure: Option<(Option<AgentId>, Rule)>,
    outcome: Option<Outcome>,
    rng: Option<ChaCha8Rng>,
    max_abs_score: Option<i64>,
    max_deviation_seen: Rational64,
    ledger: FairnessLedger,
}

impl Machine {
    pub fn new(program: Arc<Program>, opts: RunOptions) -> Result<Machine, EngineError> {
        if opts.mode == Mode::Cc && !program.is_threshold_free() {
            return Err(EngineError::ThresholdsInCcMode);
        }
        let rng = match opts.choice {
            ChoicePolicy::Leftmost => None,
            ChoicePolicy::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        let mut machine = Machine {
            supply: VarSupply::new(program.system.clone()),
            store: Store::new(program.system.clone()),
            root: None,
            steps: 0,
            next_agent_id: program.next_agent_id,
            first_failure: None,
            outcome: None,
            rng,
            max_abs_score: match opts.fair {
                FairMode::Crisp => Some(0),
                _ => None,
            },
            max_deviation_seen: Rational64::zero(),
            ledger: FairnessLedger::new(),
            opts,
            program,
        };
        let mut main = machine.program.main.clone();
        machine.prepare_groups(&mut main, false)?;
        machine.root = Some(main);
        Ok(machine)
    }

    pub fn options(&self) -> &RunOptions {
        &self.opts
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn ledger(&self) -> &FairnessLedger {
        &self.ledger
    }

    pub fn root(&self) -> Option<&Agent> {
        self.root.as_ref()
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn system(&self) -> &Arc<ConstraintSystem> {
        self.supply.system()
    }

    /// Attaches score state to fair groups and normalizes single-child
    /// groups away. With `reassign` set, children get fresh agent ids (used
    /// when a procedure body is instantiated).
    fn prepare_groups(&mut self, agent: &mut Agent, reassign: bool) -> Result<(), EngineError> {
        match agent {
            Agent::Success | Agent::Fail | Agent::Call { .. } => Ok(()),
            Agent::Tell { then, .. } => self.prepare_groups(then, reassign),
            Agent::Choice(branches) => {
                for b in branches {
                    self.prepare_groups(&mut b.then, reassign)?;
                }
                Ok(())
            }
            Agent::Par(l, r) => {
                self.prepare_groups(l, reassign)?;
                self.prepare_groups(r, reassign)
            }
            Agent::Exists { body, .. } => self.prepare_groups(body, reassign),
            Agent::FairPar(group) => {
                if reassign {
                    for child in &mut group.children {
                        child.id = AgentId(self.next_agent_id);
                        self.next_agent_id += 1;
                    }
                }
                for child in &mut group.children {
                    self.prepare_groups(&mut child.agent, reassign)?;
                }
                if group.children.len() == 1 {
                    // One-agent groups are the agent itself.
                    let only = group.children.pop().expect("one child");
                    *agent = only.agent;
                    return Ok(());
                }
                let ids = group.child_ids();
                group.scores = match self.opts.fair {
                    FairMode::NoFair => GroupScores::Unscored,
                    FairMode::Crisp => GroupScores::Crisp(CrispScoreVector::new(&ids)?),
                    FairMode::Soft => {
                        GroupScores::Soft(SoftScoreVector::new(&ids, self.supply.system())?)
                    }
                };
                Ok(())
            }
        }
    }

    // ----- guards -------------------------------------------------------

    /// The store view on another constraint's scope: unconstrained scope
    /// variables are padded with all-one before projecting.
    fn view_on(
        &self,
        base: &SoftConstraint,
        shape: &SoftConstraint,
    ) -> Result<SoftConstraint, EngineError> {
        let pad = SoftConstraint::all_one(shape.system().clone(), shape.scope().to_vec())?;
        Ok(base.combine(&pad)?.project(shape.scope()))
    }

    fn tell_guard(
        &self,
        constraint: &SoftConstraint,
        threshold: &Threshold,
    ) -> Result<bool, EngineError> {
        match threshold {
            Threshold::None => Ok(true),
            Threshold::Level(a) => {
                let after = self.store.combination().combine(constraint)?.blevel();
                Ok(!after.lt(a).map_err(ConstraintError::from)?)
            }
            Threshold::Cut(phi) => {
                let after = self.store.combination().combine(constraint)?;
                let view = self.view_on(&after, &phi.value)?;
                Ok(!view.lt(&phi.value)?)
            }
        }
    }

    fn ask_threshold_ok(&self, threshold: &Threshold) -> Result<bool, EngineError> {
        match threshold {
            Threshold::None => Ok(true),
            Threshold::Level(a) => Ok(!self.store.blevel().lt(a).map_err(ConstraintError::from)?),
            Threshold::Cut(phi) => {
                let view = self.view_on(self.store.combination(), &phi.value)?;
                Ok(!view.lt(&phi.value)?)
            }
        }
    }

    fn ask_status(&self, branch: &AskBranch) -> Result<Head, EngineError> {
        let threshold_ok = self.ask_threshold_ok(&branch.threshold)?;
        if self.store.entails(&branch.constraint.value)? && threshold_ok {
            return Ok(Head::Fires);
        }
        // Inconsistency with the store can never recover (the store only
        // tightens), and neither can a violated threshold.
        let with_c = self
            .store
            .combination()
            .combine(&branch.constraint.value)?
            .blevel();
        if with_c.is_zero() || !threshold_ok {
            return Ok(Head::Faulty);
        }
        Ok(Head::Blocked)
    }

    fn head_status(&self, agent: &Agent) -> Result<Head, EngineError> {
        match agent {
            Agent::Success | Agent::Fail => Ok(Head::Fires),
            Agent::Exists { .. } | Agent::Call { .. } => Ok(Head::Fires),
            Agent::Tell {
                constraint,
                threshold,
                ..
            } => Ok(if self.tell_guard(&constraint.value, threshold)? {
                Head::Fires
            } else {
                Head::Faulty
            }),
            Agent::Choice(branches) => {
                let mut all_faulty = true;
                for b in branches {
                    match self.ask_status(b)? {
                        Head::Fires => return Ok(Head::Fires),
                        Head::Blocked => all_faulty = false,
                        Head::Faulty => {}
                    }
                }
                Ok(if all_faulty {
                    Head::Faulty
                } else {
                    Head::Blocked
                })
            }
            Agent::Par(l, r) => {
                // The leftmost non-suspended child is the actor.
                let ls = self.head_status(l)?;
                if ls != Head::Blocked {
                    Ok(ls)
                } else {
                    self.head_status(r)
                }
            }
            Agent::FairPar(group) => {
                // Fair groups absorb child failures as removals, so the
                // group can step whenever any child is not suspended.
                for child in &group.children {
                    if self.head_status(&child.agent)? != Head::Blocked {
                        return Ok(Head::Fires);
                    }
                }
                Ok(Head::Blocked)
            }
        }
    }

    /// Ids of the group's children whose head action can fire now.
    pub fn enabled_set(&self, group: &FairGroup) -> Result<Vec<AgentId>, EngineError> {
        let mut out = Vec::new();
        for child in &group.children {
            if self.head_status(&child.agent)? == Head::Fires {
                out.push(child.id);
            }
        }
        Ok(out)
    }

    // ----- stepping -----------------------------------------------------

    fn tell_rule(threshold: &Threshold) -> Rule {
        match threshold {
            Threshold::None => Rule::Tell,
            Threshold::Level(_) => Rule::ValuedTell,
            Threshold::Cut(_) => Rule::CutTell,
        }
    }

    fn ask_rule(threshold: &Threshold) -> Rule {
        match threshold {
            Threshold::None => Rule::Ask,
            Threshold::Level(_) => Rule::ValuedAsk,
            Threshold::Cut(_) => Rule::CutAsk,
        }
    }

    /// Terminal success is removed in the same step it is produced.
    fn continue_with(agent: Agent) -> Option<Agent> {
        match agent {
            Agent::Success => None,
            other => Some(other),
        }
    }

    fn step_node(&mut self, agent: Agent, attr: Option<AgentId>) -> Result<Reduced, EngineError> {
        match agent {
            Agent::Success => Ok(Reduced::Step {
                next: None,
                act: Act::new(Rule::Stop, attr),
            }),
            Agent::Fail => Ok(Reduced::Fault {
                act: Act::new(Rule::Fail, attr),
            }),
            Agent::Tell {
                constraint,
                threshold,
                then,
            } => {
                let rule = Self::tell_rule(&threshold);
                if !self.tell_guard(&constraint.value, &threshold)? {
                    return Ok(Reduced::Fault {
                        act: Act::new(rule, attr).with_constraint(&constraint.name),
                    });
                }
                self.store = self.store.tell(attr, &constraint.value)?;
                // The plain language fails a tell that makes a crisp store
                // inconsistent; the constraint stays told.
                if self.opts.mode == Mode::Cc
                    && self.store.system().ring() == Semiring::Boolean
                    && self.store.blevel().is_zero()
                {
                    return Ok(Reduced::Fault {
                        act: Act::new(rule, attr).with_constraint(&constraint.name),
                    });
                }
                let mut act = Act::new(rule, attr).with_constraint(&constraint.name);
                act.told = Some(constraint.value.clone());
                Ok(Reduced::Step {
                    next: Self::continue_with(*then),
                    act,
                })
            }
            Agent::Choice(branches) => {
                let mut fireable = Vec::new();
                let mut all_faulty = true;
                for (i, b) in branches.iter().enumerate() {
                    match self.ask_status(b)? {
                        Head::Fires => {
                            fireable.push(i);
                            all_faulty = false;
                        }
                        Head::Blocked => all_faulty = false,
                        Head::Faulty => {}
                    }
                }
                if fireable.is_empty() {
                    if all_faulty {
                        let b = &branches[0];
                        return Ok(Reduced::Fault {
                            act: Act::new(Self::ask_rule(&b.threshold), attr)
                                .with_constraint(&b.constraint.name),
                        });
                    }
                    return Ok(Reduced::Blocked(Agent::Choice(branches)));
                }
                let pick = match &mut self.rng {
                    None => fireable[0],
                    Some(rng) => fireable[rng.gen_range(0..fireable.len())],
                };
                let single = branches.len() == 1;
                let branch = branches
                    .into_iter()
                    .nth(pick)
                    .expect("picked index is in range");
                let rule = if single {
                    Self::ask_rule(&branch.threshold)
                } else if pick == 0 {
                    Rule::ChoiceLeft
                } else {
                    Rule::ChoiceRight
                };
                Ok(Reduced::Step {
                    next: Self::continue_with(branch.then),
                    act: Act::new(rule, attr).with_constraint(&branch.constraint.name),
                })
            }
            Agent::Par(l, r) => {
                let (l, r) = (*l, *r);
                if self.head_status(&l)? != Head::Blocked {
                    return match self.step_node(l, attr)? {
                        Reduced::Step {
                            next: Some(l2),
                            act,
                        } => Ok(Reduced::Step {
                            next: Some(Agent::Par(Box::new(l2), Box::new(r))),
                            act: act.default_ctx(StructCtx::Par1),
                        }),
                        Reduced::Step { next: None, act } => Ok(Reduced::Step {
                            next: Some(r),
                            act: act.default_ctx(StructCtx::Par2),
                        }),
                        Reduced::Fault { act } => Ok(Reduced::Fault { act }),
                        Reduced::Blocked(_) => Err(EngineError::Internal(
                            "non-suspended child refused to step".to_string(),
                        )),
                    };
                }
                match self.step_node(r, attr)? {
                    Reduced::Step {
                        next: Some(r2),
                        act,
                    } => Ok(Reduced::Step {
                        next: Some(Agent::Par(Box::new(l), Box::new(r2))),
                        act: act.default_ctx(StructCtx::Par1),
                    }),
                    Reduced::Step { next: None, act } => Ok(Reduced::Step {
                        next: Some(l),
                        act: act.default_ctx(StructCtx::Par2),
                    }),
                    Reduced::Fault { act } => Ok(Reduced::Fault { act }),
                    Reduced::Blocked(r) => {
                        Ok(Reduced::Blocked(Agent::Par(Box::new(l), Box::new(r))))
                    }
                }
            }
            Agent::FairPar(group) => self.step_fair(group),
            Agent::Exists { var, body } => {
                let base = self.supply.system().var_name(var).to_string();
                let fresh = self.supply.fresh(&base);
                let mut map = BTreeMap::new();
                map.insert(var, fresh);
                let renamed = body.substitute_map(&map, &mut self.supply)?;
                Ok(Reduced::Step {
                    next: Self::continue_with(renamed),
                    act: Act::new(Rule::Exists, attr),
                })
            }
            Agent::Call { name, args } => {
                let decl = self
                    .program
                    .declarations
                    .get(&name)
                    .cloned()
                    .ok_or_else(|| {
                        EngineError::Internal(format!("call to unknown procedure `{name}`"))
                    })?;
                let mut body = decl
                    .body
                    .substitute(&decl.params, &args, &mut self.supply)?;
                self.prepare_groups(&mut body, true)?;
                Ok(Reduced::Step {
                    next: Self::continue_with(body),
                    act: Act::new(Rule::Call, attr),
                })
            }
        }
    }

    fn step_fair(&mut self, mut group: FairGroup) -> Result<Reduced, EngineError> {
        let mut statuses = Vec::with_capacity(group.children.len());
        for child in &group.children {
            statuses.push(self.head_status(&child.agent)?);
        }

        // A guard-violating child fails now: it is removed like a succeeded
        // one, without a final score update or ledger entry.
        if let Some(idx) = statuses.iter().position(|s| *s == Head::Faulty) {
            let child = group.children.remove(idx);
            let id = child.id;
            let act = match self.step_node(child.agent, Some(id))? {
                Reduced::Fault { act } => act,
                _ => {
                    return Err(EngineError::Internal(
                        "faulty child stepped without failing".to_string(),
                    ))
                }
            };
            self.note_failure(&act);
            group.scores.remove(id)?;
            return Ok(Reduced::Step {
                next: Some(Self::ungroup(group)),
                act: act.default_ctx(StructCtx::FairPar2),
            });
        }

        let enabled: Vec<AgentId> = group
            .children
            .iter()
            .zip(&statuses)
            .filter(|(_, s)| **s == Head::Fires)
            .map(|(c, _)| c.id)
            .collect();
        if enabled.is_empty() {
            return Ok(Reduced::Blocked(Agent::FairPar(group)));
        }

        let chosen = match &group.scores {
            GroupScores::Unscored => enabled[0],
            GroupScores::Crisp(k) => k.select(&enabled)?,
            GroupScores::Soft(k) => k.select(&enabled, self.opts.soft_policy, &self.ledger)?,
        };
        let idx = group
            .children
            .iter()
            .position(|c| c.id == chosen)
            .ok_or_else(|| EngineError::Internal("selected id is not a child".to_string()))?;

        let taken = std::mem::replace(&mut group.children[idx].agent, Agent::Success);
        let selection = SelectionInfo {
            enabled: enabled.clone(),
            chosen,
        };
        match self.step_node(taken, Some(chosen))? {
            Reduced::Step {
                next: Some(next),
                act,
            } => {
                group.children[idx].agent = next;
                self.record_selection(&enabled, chosen)?;
                match &mut group.scores {
                    GroupScores::Unscored => {}
                    GroupScores::Crisp(k) => {
                        let sum_before = k.sum();
                        k.update(chosen, &enabled)?;
                        debug_assert_eq!(k.sum(), sum_before, "carpool updates are zero-sum");
                        let peak = k.entries().values().map(|s| s.abs()).max().unwrap_or(0);
                        if let Some(m) = &mut self.max_abs_score {
                            *m = (*m).max(peak);
                        }
                    }
                    GroupScores::Soft(k) => {
                        if let Some(told) = &act.told {
                            k.update(chosen, told)?;
                        }
                    }
                }
                let mut act = act.default_ctx(StructCtx::FairPar1);
                act.selections.push(selection);
                Ok(Reduced::Step {
                    next: Some(Agent::FairPar(group)),
                    act,
                })
            }
            Reduced::Step { next: None, act } => {
                // The child reached success: it leaves in the same step, its
                // score entry is deleted and nobody pays or earns.
                group.children.remove(idx);
                self.record_selection(&enabled, chosen)?;
                group.scores.remove(chosen)?;
                let mut act = act.default_ctx(StructCtx::FairPar2);
                act.selections.push(selection);
                Ok(Reduced::Step {
                    next: Some(Self::ungroup(group)),
                    act,
                })
            }
            Reduced::Fault { act } => {
                // An enabled child can still fail mid-step (a plain tell
                // turning a crisp store inconsistent); treat it like a
                // guard-violating child.
                group.children.remove(idx);
                self.note_failure(&act);
                group.scores.remove(chosen)?;
                Ok(Reduced::Step {
                    next: Some(Self::ungroup(group)),
                    act: act.default_ctx(StructCtx::FairPar2),
                })
            }
            Reduced::Blocked(_) => Err(EngineError::Internal(
                "enabled child refused to step".to_string(),
            )),
        }
    }

    /// A one-child group collapses to the child itself.
    fn ungroup(mut group: FairGroup) -> Agent {
        if group.children.len() == 1 {
            group.children.pop().expect("one child").agent
        } else {
            Agent::FairPar(group)
        }
    }

    fn record_selection(
        &mut self,
        enabled: &[AgentId],
        chosen: AgentId,
    ) -> Result<(), EngineError> {
        self.ledger.record(enabled, chosen)?;
        let dev = self.ledger.max_deviation();
        if dev > self.max_deviation_seen {
            self.max_deviation_seen = dev;
        }
        Ok(())
    }

    fn note_failure(&mut self, act: &Act) {
        if self.first_failure.is_none() {
            self.first_failure = Some((act.agent, act.rule));
        }
    }

    /// Collects the current score entries from every live fair group.
    pub fn score_snapshot(&self) -> Option<ScoreSnapshot> {
        fn walk(agent: &Agent, crisp: &mut BTreeMap<u32, i64>, soft: &mut BTreeMap<u32, String>) {
            match agent {
                Agent::Tell { then, .. } => walk(then, crisp, soft),
                Agent::Choice(bs) => bs.iter().for_each(|b| walk(&b.then, crisp, soft)),
                Agent::Par(l, r) => {
                    walk(l, crisp, soft);
                    walk(r, crisp, soft);
                }
                Agent::Exists { body, .. } => walk(body, crisp, soft),
                Agent::FairPar(group) => {
                    match &group.scores {
                        GroupScores::Crisp(k) => {
                            for (id, s) in k.entries() {
                                crisp.insert(id.0, *s);
                            }
                        }
                        GroupScores::Soft(k) => {
                            for (id, section) in k.entries() {
                                soft.insert(id.0, section.blevel().to_string());
                            }
                        }
                        GroupScores::Unscored => {}
                    }
                    group
                        .children
                        .iter()
                        .for_each(|c| walk(&c.agent, crisp, soft));
                }
                _ => {}
            }
        }
        let mut crisp = BTreeMap::new();
        let mut soft = BTreeMap::new();
        if let Some(root) = &self.root {
            walk(root, &mut crisp, &mut soft);
        }
        match self.opts.fair {
            FairMode::NoFair => None,
            FairMode::Crisp => Some(ScoreSnapshot::Crisp(crisp)),
            FairMode::Soft => Some(ScoreSnapshot::Soft(soft)),
        }
    }

    /// Ids of fair-group children currently suspended on an ask.
    fn suspended_agents(&self, agent: &Agent) -> Result<Vec<AgentId>, EngineError> {
        let mut out = Vec::new();
        let mut stack = vec![agent];
        while let Some(a) = stack.pop() {
            match a {
                Agent::Tell { then, .. } => stack.push(then),
                Agent::Choice(bs) => stack.extend(bs.iter().map(|b| &b.then)),
                Agent::Par(l, r) => {
                    stack.push(l);
                    stack.push(r);
                }
                Agent::Exists { body, .. } => stack.push(body),
                Agent::FairPar(group) => {
                    for child in &group.children {
                        if matches!(child.agent, Agent::FairPar(_)) {
                            stack.push(&child.agent);
                        } else if self.head_status(&child.agent)? == Head::Blocked {
                            out.push(child.id);
                        }
                    }
                }
                _ => {}
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    fn finish(&mut self, outcome: Outcome) -> MachineStep {
        self.outcome = Some(outcome.clone());
        MachineStep::Done(outcome)
    }

    fn failure_outcome(&self) -> Option<Outcome> {
        self.first_failure
            .map(|(agent, rule)| Outcome::Fail { agent, rule })
    }

    /// Fires exactly one rule instance, or resolves the run's outcome.
    pub fn step(&mut self) -> Result<MachineStep, EngineError> {
        if let Some(outcome) = &self.outcome {
            return Ok(MachineStep::Done(outcome.clone()));
        }
        let Some(root) = self.root.take() else {
            let outcome = self.failure_outcome().unwrap_or(Outcome::Success);
            return Ok(self.finish(outcome));
        };
        if self.steps >= self.opts.max_steps {
            self.root = Some(root);
            let outcome = self.failure_outcome().unwrap_or(Outcome::StepLimit);
            return Ok(self.finish(outcome));
        }
        match self.step_node(root, None)? {
            Reduced::Step { next, act } => {
                self.root = next;
                self.steps += 1;
                Ok(MachineStep::Event(Box::new(self.event_for(act))))
            }
            Reduced::Fault { act } => {
                self.note_failure(&act);
                self.root = None;
                self.steps += 1;
                Ok(MachineStep::Event(Box::new(self.event_for(act))))
            }
            Reduced::Blocked(root) => {
                let suspended = self.suspended_agents(&root)?;
                self.root = Some(root);
                let outcome = self
                    .failure_outcome()
                    .unwrap_or(Outcome::Deadlock { suspended });
                Ok(self.finish(outcome))
            }
        }
    }

    fn event_for(&self, act: Act) -> TraceEvent {
        TraceEvent {
            step: self.steps,
            rule: act.rule,
            ctx: act.ctx,
            agent: act.agent,
            constraint: act.constraint,
            blevel: self.store.blevel().to_string(),
            scores: self.score_snapshot(),
            selections: act.selections,
        }
    }

    pub fn report(&self) -> FairnessReport {
        self.ledger.report(
            self.score_snapshot(),
            self.max_abs_score,
            Some(self.max_deviation_seen),
        )
    }
}

/// Runs a program to completion (or to the step budget) and collects the
/// trace and fairness report.
pub fn run(program: Arc<Program>, opts: RunOptions) -> Result<RunResult, EngineError> {
    let mut machine = Machine::new(program, opts)?;
    let mut trace = Vec::new();
    loop {
        match machine.step()? {
            MachineStep::Event(event) => trace.push(*event),
            MachineStep::Done(outcome) => {
                return Ok(RunResult {
                    outcome,
                    report: machine.report(),
                    trace,
                });
            }
        }
    }
}

/// Checks that the threshold-aware and plain rule tables produce identical
/// traces on a threshold-free program (rule names folded onto their
/// eventual counterparts).
pub fn equivalence_check(program: Arc<Program>, opts: RunOptions) -> Result<bool, EngineError> {
    if !program.is_threshold_free() {
        return Err(EngineError::NotThresholdFree);
    }
    let scc = run(
        program.clone(),
        RunOptions {
            mode: Mode::Scc,
            ..opts
        },
    )?;
    let cc = run(
        program,
        RunOptions {
            mode: Mode::Cc,
            ..opts
        },
    )?;
    if scc.outcome.normalized() != cc.outcome.normalized() {
        return Ok(false);
    }
    if scc.trace.len() != cc.trace.len() {
        return Ok(false);
    }
    Ok(scc
        .trace
        .iter()
        .zip(&cc.trace)
        .all(|(a, b)| a.normalized() == b.normalized()))
}
