//! Interpreter and analysis toolkit for fair (soft) concurrent constraint
//! programs.
//!
//! The crate is organised around five layers:
//!
//! - [`semiring`]: the c-semiring algebra preference values live in, with
//!   boolean, fuzzy and weighted instances.
//! - [`constraints`]: finite-domain soft constraints, soft constraint
//!   problems, and the shared constraint store.
//! - [`lang`]: AST, parser and pretty-printer for the agent language,
//!   including the m-ary fair parallel combinator `par(...)`.
//! - [`scheduler`]: carpool-style crisp scores, soft constraint sections,
//!   and the fairness ledger used for |E - I| analysis.
//! - [`engine`]: the small-step operational semantics producing
//!   deterministic traces and fairness reports.

pub mod constraints;
pub mod engine;
pub mod lang;
pub mod scheduler;
pub mod semiring;

use std::fmt;

/// Identity of one agent inside a fair parallel composition.
///
/// Ids are assigned in pre-order at parse time for the initial agent and
/// extended at runtime when procedure bodies are instantiated, so they are
/// unique over a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
