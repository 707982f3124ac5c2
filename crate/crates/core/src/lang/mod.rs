//! The agent language: syntax tree, parser and pretty-printer.
//!
//! Programs declare their semiring, domain, variables and constraint tables
//! in a preamble; agents reference constraints by name and never inline
//! tables. See the workspace README for the full grammar.

mod ast;
mod lexer;
mod parser;
mod pretty;

pub use ast::{
    Agent, AskBranch, ConstraintRef, Declaration, FairChild, FairGroup, Program, Threshold,
    VarSupply,
};
pub use parser::parse;
pub use pretty::{print_agent, print_program};

use thiserror::Error;

use crate::constraints::ConstraintError;
use crate::semiring::SemiringError;

#[derive(Debug, Error)]
pub enum LangError {
    #[error("parse error at {line}:{col}: {message}")]
    Parse {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("unresolved procedure `{name}`")]
    UnresolvedProcedure { name: String },
    #[error("`{name}` expects {expected} argument(s), got {got}")]
    ArityMismatch {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("body of `{name}` uses variable `{var}` outside its parameters")]
    BodyEscapesParams { name: String, var: String },
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Semiring(#[from] SemiringError),
}
