//! Recursive-descent parser for program files.
//!
//! Operator layering, lowest to tightest: `||`, then `+`, then the prefix
//! forms. Continuations after an arrow and hiding bodies parse one prefix
//! unit; parentheses group arbitrary agents. `par(...)` is the m-ary fair
//! composition, `||` the plain binary one.

use std::sync::Arc;

use indexmap::IndexMap;
use num_rational::Rational64;

use crate::constraints::{ConstraintSystem, SoftConstraint, VarId};
use crate::scheduler::GroupScores;
use crate::semiring::{Semiring, SemiringValue};
use crate::AgentId;

use super::ast::{
    Agent, AskBranch, ConstraintRef, Declaration, FairChild, FairGroup, Program, Threshold,
};
use super::lexer::{tokenize, Pos, Tok, Token};
use super::LangError;

const KEYWORDS: &[&str] = &[
    "semiring",
    "domain",
    "vars",
    "constraint",
    "on",
    "default",
    "proc",
    "init",
    "success",
    "stop",
    "fail",
    "tell",
    "ask",
    "par",
    "exists",
    "true",
    "false",
    "inf",
];

pub(crate) struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    system: Option<Arc<ConstraintSystem>>,
    constraints: IndexMap<String, Arc<SoftConstraint>>,
}

pub fn parse(src: &str) -> Result<Program, LangError> {
    let tokens = tokenize(src)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        system: None,
        constraints: IndexMap::new(),
    };
    parser.file()
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn peek_tok(&self) -> &Tok {
        &self.peek().tok
    }

    fn next(&mut self) -> Token {
        let t = self.peek().clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, pos: Pos, message: impl Into<String>) -> Result<T, LangError> {
        Err(LangError::Parse {
            line: pos.line,
            col: pos.col,
            message: message.into(),
        })
    }

    fn err_here<T>(&self, message: impl Into<String>) -> Result<T, LangError> {
        let pos = self.peek().pos;
        self.err(pos, message)
    }

    fn expect(&mut self, want: &Tok) -> Result<Token, LangError> {
        if self.peek_tok() == want {
            Ok(self.next())
        } else {
            let found = self.peek_tok().describe();
            self.err_here(format!("expected {}, found {}", want.describe(), found))
        }
    }

    fn eat(&mut self, want: &Tok) -> bool {
        if self.peek_tok() == want {
            self.next();
            true
        } else {
            false
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Pos), LangError> {
        let pos = self.peek().pos;
        match self.peek_tok().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok((s, pos))
            }
            other => self.err(pos, format!("expected {what}, found {}", other.describe())),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), LangError> {
        let pos = self.peek().pos;
        match self.peek_tok() {
            Tok::Ident(s) if s == kw => {
                self.next();
                Ok(())
            }
            other => self.err(pos, format!("expected `{kw}`, found {}", other.describe())),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek_tok(), Tok::Ident(s) if s == kw)
    }

    fn name(&mut self, what: &str) -> Result<(String, Pos), LangError> {
        let (s, pos) = self.ident(what)?;
        if KEYWORDS.contains(&s.as_str()) {
            return self.err(pos, format!("`{s}` is a keyword and cannot name a {what}"));
        }
        Ok((s, pos))
    }

    fn system(&self) -> &Arc<ConstraintSystem> {
        self.system.as_ref().expect("header parsed first")
    }

    // ----- file structure ---------------------------------------------

    fn file(&mut self) -> Result<Program, LangError> {
        self.header()?;
        let mut declarations: IndexMap<String, Declaration> = IndexMap::new();
        while self.at_keyword("proc") {
            let decl = self.declaration()?;
            if declarations.contains_key(&decl.name) {
                return self.err_here(format!("procedure `{}` declared twice", decl.name));
            }
            declarations.insert(decl.name.clone(), decl);
        }
        self.keyword("init")?;
        let main = self.agent()?;
        self.expect(&Tok::Eof)?;

        let mut program = Program {
            system: self.system().clone(),
            constraints: std::mem::take(&mut self.constraints),
            declarations,
            main,
            next_agent_id: 0,
        };
        finalize(&mut program)?;
        Ok(program)
    }

    fn header(&mut self) -> Result<(), LangError> {
        self.keyword("semiring")?;
        let (ring_name, ring_pos) = self.ident("semiring name")?;
        let ring = match Semiring::by_name(&ring_name) {
            Ok(r) => r,
            Err(e) => return self.err(ring_pos, e.to_string()),
        };
        self.expect(&Tok::Semi)?;

        self.keyword("domain")?;
        self.expect(&Tok::LBrace)?;
        let mut domain = vec![self.value_token()?];
        while self.eat(&Tok::Comma) {
            domain.push(self.value_token()?);
        }
        self.expect(&Tok::RBrace)?;
        self.expect(&Tok::Semi)?;

        self.keyword("vars")?;
        self.expect(&Tok::LBrace)?;
        let mut vars = vec![self.name("variable")?.0];
        while self.eat(&Tok::Comma) {
            vars.push(self.name("variable")?.0);
        }
        self.expect(&Tok::RBrace)?;
        self.expect(&Tok::Semi)?;

        let pos = self.peek().pos;
        match ConstraintSystem::new(ring, domain, vars) {
            Ok(system) => self.system = Some(system),
            Err(e) => return self.err(pos, e.to_string()),
        }

        while self.at_keyword("constraint") {
            self.constraint_def()?;
        }
        Ok(())
    }

    /// A domain value token: an identifier or a numeric literal, kept raw.
    fn value_token(&mut self) -> Result<String, LangError> {
        let pos = self.peek().pos;
        match self.peek_tok().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.next();
                Ok(s)
            }
            Tok::Number(s) => {
                self.next();
                Ok(s)
            }
            other => self.err(
                pos,
                format!("expected domain value, found {}", other.describe()),
            ),
        }
    }

    fn constraint_def(&mut self) -> Result<(), LangError> {
        self.keyword("constraint")?;
        let (name, name_pos) = self.name("constraint")?;
        if self.constraints.contains_key(&name) {
            return self.err(name_pos, format!("constraint `{name}` declared twice"));
        }
        self.keyword("on")?;
        self.expect(&Tok::LParen)?;
        let mut scope = vec![self.scope_var()?];
        while self.eat(&Tok::Comma) {
            scope.push(self.scope_var()?);
        }
        self.expect(&Tok::RParen)?;

        let default = if self.at_keyword("default") {
            self.next();
            Some(self.level()?)
        } else {
            None
        };

        self.expect(&Tok::LBrace)?;
        let mut rows: Vec<(Vec<usize>, SemiringValue, Pos)> = Vec::new();
        if self.peek_tok() != &Tok::RBrace {
            rows.push(self.row(&scope)?);
            while self.eat(&Tok::Comma) {
                rows.push(self.row(&scope)?);
            }
        }
        self.expect(&Tok::RBrace)?;
        self.expect(&Tok::Semi)?;

        let radix = self.system().domain_size();
        let len = radix.pow(scope.len() as u32);
        let mut table: Vec<Option<SemiringValue>> = vec![None; len];
        for (tuple, level, pos) in rows {
            let index = tuple.iter().fold(0, |acc, d| acc * radix + d);
            if table[index].is_some() {
                return self.err(pos, "duplicate row".to_string());
            }
            table[index] = Some(level);
        }
        let table: Vec<SemiringValue> = match default {
            Some(d) => table.into_iter().map(|v| v.unwrap_or(d)).collect(),
            None => {
                let missing = table.iter().filter(|v| v.is_none()).count();
                if missing > 0 {
                    return self.err(
                        name_pos,
                        format!(
                            "constraint `{name}` is missing {missing} row(s); list every tuple or declare a default"
                        ),
                    );
                }
                table.into_iter().map(Option::unwrap).collect()
            }
        };

        match SoftConstraint::new(self.system().clone(), scope, table) {
            Ok(c) => {
                self.constraints.insert(name, Arc::new(c));
                Ok(())
            }
            Err(e) => self.err(name_pos, e.to_string()),
        }
    }

    fn scope_var(&mut self) -> Result<VarId, LangError> {
        let (name, pos) = self.name("variable")?;
        match self.system().var(&name) {
            Some(v) => Ok(v),
            None => self.err(pos, format!("variable `{name}` is not declared in `vars`")),
        }
    }

    /// One table row: `(v1 v2 ...) -> level` with whitespace-separated
    /// values.
    fn row(&mut self, scope: &[VarId]) -> Result<(Vec<usize>, SemiringValue, Pos), LangError> {
        let pos = self.peek().pos;
        self.expect(&Tok::LParen)?;
        let mut tuple = Vec::with_capacity(scope.len());
        while self.peek_tok() != &Tok::RParen {
            let vpos = self.peek().pos;
            let raw = self.value_token()?;
            match self.system().domain_index(&raw) {
                Some(d) => tuple.push(d),
                None => return self.err(vpos, format!("`{raw}` is not a domain value")),
            }
        }
        self.expect(&Tok::RParen)?;
        if tuple.len() != scope.len() {
            return self.err(
                pos,
                format!("row has {} values, scope has {}", tuple.len(), scope.len()),
            );
        }
        self.expect(&Tok::Arrow)?;
        let level = self.level()?;
        Ok((tuple, level, pos))
    }

    /// A preference level literal, validated against the program's semiring.
    fn level(&mut self) -> Result<SemiringValue, LangError> {
        let ring = self.system().ring();
        let pos = self.peek().pos;
        match self.peek_tok().clone() {
            Tok::Ident(s) if s == "true" || s == "false" => {
                self.next();
                ring.from_bool(s == "true")
                    .map_err(|e| self.locate(pos, e.to_string()))
            }
            Tok::Ident(s) if s == "inf" => {
                self.next();
                ring.infinity().map_err(|e| self.locate(pos, e.to_string()))
            }
            Tok::Number(_) => {
                let num = self.rational(pos)?;
                let value = if self.eat(&Tok::Slash) {
                    let dpos = self.peek().pos;
                    let den = self.rational(dpos)?;
                    if den == Rational64::from_integer(0) {
                        return self.err(dpos, "division by zero in level".to_string());
                    }
                    num / den
                } else {
                    num
                };
                ring.from_rational(value)
                    .map_err(|e| self.locate(pos, e.to_string()))
            }
            other => self.err(pos, format!("expected level, found {}", other.describe())),
        }
    }

    fn locate(&self, pos: Pos, message: String) -> LangError {
        LangError::Parse {
            line: pos.line,
            col: pos.col,
            message,
        }
    }

    fn rational(&mut self, pos: Pos) -> Result<Rational64, LangError> {
        let raw = match self.peek_tok().clone() {
            Tok::Number(s) => {
                self.next();
                s
            }
            other => return self.err(pos, format!("expected number, found {}", other.describe())),
        };
        parse_decimal(&raw).ok_or_else(|| self.locate(pos, format!("malformed number `{raw}`")))
    }

    // ----- declarations and agents ------------------------------------

    fn declaration(&mut self) -> Result<Declaration, LangError> {
        self.keyword("proc")?;
        let (name, _) = self.name("procedure")?;
        self.expect(&Tok::LParen)?;
        let mut params = vec![self.scope_var()?];
        while self.eat(&Tok::Comma) {
            params.push(self.scope_var()?);
        }
        self.expect(&Tok::RParen)?;
        let ppos = self.peek().pos;
        for (i, p) in params.iter().enumerate() {
            if params[..i].contains(p) {
                return self.err(ppos, format!("duplicate parameter in `{name}`"));
            }
        }
        self.expect(&Tok::Eq)?;
        let body = self.agent()?;
        self.expect(&Tok::Semi)?;
        Ok(Declaration { name, params, body })
    }

    fn agent(&mut self) -> Result<Agent, LangError> {
        self.par_level()
    }

    fn par_level(&mut self) -> Result<Agent, LangError> {
        let mut agent = self.choice_level()?;
        while self.eat(&Tok::DoubleBar) {
            let rhs = self.choice_level()?;
            agent = Agent::Par(Box::new(agent), Box::new(rhs));
        }
        Ok(agent)
    }

    fn choice_level(&mut self) -> Result<Agent, LangError> {
        let pos = self.peek().pos;
        let first = self.prefix_level()?;
        if self.peek_tok() != &Tok::Plus {
            return Ok(first);
        }
        let mut branches = match first {
            Agent::Choice(bs) => bs,
            _ => {
                return self.err(
                    pos,
                    "only ask branches can be combined with `+`".to_string(),
                )
            }
        };
        while self.eat(&Tok::Plus) {
            let bpos = self.peek().pos;
            match self.prefix_level()? {
                Agent::Choice(bs) => branches.extend(bs),
                _ => {
                    return self.err(
                        bpos,
                        "only ask branches can be combined with `+`".to_string(),
                    )
                }
            }
        }
        Ok(Agent::Choice(branches))
    }

    fn prefix_level(&mut self) -> Result<Agent, LangError> {
        let pos = self.peek().pos;
        match self.peek_tok().clone() {
            Tok::LParen => {
                self.next();
                let inner = self.agent()?;
                self.expect(&Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(kw) => match kw.as_str() {
                "success" | "stop" => {
                    self.next();
                    Ok(Agent::Success)
                }
                "fail" => {
                    self.next();
                    Ok(Agent::Fail)
                }
                "tell" => {
                    self.next();
                    let constraint = self.constraint_ref()?;
                    let threshold = self.threshold()?;
                    let then = self.prefix_level()?;
                    Ok(Agent::Tell {
                        constraint,
                        threshold,
                        then: Box::new(then),
                    })
                }
                "ask" => {
                    self.next();
                    let constraint = self.constraint_ref()?;
                    let threshold = self.threshold()?;
                    let then = self.prefix_level()?;
                    Ok(Agent::Choice(vec![AskBranch {
                        constraint,
                        threshold,
                        then,
                    }]))
                }
                "par" => {
                    self.next();
                    self.expect(&Tok::LParen)?;
                    let mut children = vec![self.agent()?];
                    while self.eat(&Tok::Comma) {
                        children.push(self.agent()?);
                    }
                    self.expect(&Tok::RParen)?;
                    if children.len() < 2 {
                        return self.err(pos, "`par` needs at least two agents".to_string());
                    }
                    Ok(Agent::FairPar(FairGroup {
                        children: children
                            .into_iter()
                            .map(|agent| FairChild {
                                id: AgentId(u32::MAX),
                                agent,
                            })
                            .collect(),
                        scores: GroupScores::Unscored,
                    }))
                }
                "exists" => {
                    self.next();
                    let var = self.scope_var()?;
                    self.expect(&Tok::Dot)?;
                    let body = self.prefix_level()?;
                    Ok(Agent::Exists {
                        var,
                        body: Box::new(body),
                    })
                }
                _ => {
                    let (name, _) = self.name("agent")?;
                    self.expect(&Tok::LParen)?;
                    let mut args = vec![self.scope_var()?];
                    while self.eat(&Tok::Comma) {
                        args.push(self.scope_var()?);
                    }
                    self.expect(&Tok::RParen)?;
                    Ok(Agent::Call { name, args })
                }
            },
            other => self.err(
                pos,
                format!("expected an agent, found {}", other.describe()),
            ),
        }
    }

    fn constraint_ref(&mut self) -> Result<ConstraintRef, LangError> {
        self.expect(&Tok::LParen)?;
        let (name, pos) = self.name("constraint")?;
        self.expect(&Tok::RParen)?;
        match self.constraints.get(&name) {
            Some(value) => Ok(ConstraintRef {
                name,
                value: value.clone(),
            }),
            None => self.err(pos, format!("unresolved constraint `{name}`")),
        }
    }

    fn threshold(&mut self) -> Result<Threshold, LangError> {
        self.expect(&Tok::Arrow)?;
        if self.eat(&Tok::LBracket) {
            let level = self.level()?;
            self.expect(&Tok::RBracket)?;
            Ok(Threshold::Level(level))
        } else if self.eat(&Tok::LBrace) {
            let (name, pos) = self.name("constraint")?;
            self.expect(&Tok::RBrace)?;
            match self.constraints.get(&name) {
                Some(value) => Ok(Threshold::Cut(ConstraintRef {
                    name,
                    value: value.clone(),
                })),
                None => self.err(pos, format!("unresolved constraint `{name}`")),
            }
        } else {
            Ok(Threshold::None)
        }
    }
}

/// Parses an integer or decimal literal into an exact rational.
fn parse_decimal(raw: &str) -> Option<Rational64> {
    match raw.split_once('.') {
        None => raw.parse::<i64>().ok().map(Rational64::from_integer),
        Some((int, frac)) => {
            if frac.is_empty() || frac.len() > 12 {
                return None;
            }
            let scale = 10i64.checked_pow(frac.len() as u32)?;
            let int: i64 = if int.is_empty() { 0 } else { int.parse().ok()? };
            let frac: i64 = frac.parse().ok()?;
            Some(Rational64::new(int.checked_mul(scale)? + frac, scale))
        }
    }
}

/// Post-parse pass: assigns agent ids in a deterministic pre-order (initial
/// agent first, then declaration bodies) and validates call sites and
/// declaration scoping.
fn finalize(program: &mut Program) -> Result<(), LangError> {
    let mut counter: u32 = 0;
    assign_ids(&mut program.main, &mut counter);
    let names: Vec<String> = program.declarations.keys().cloned().collect();
    for name in &names {
        let mut body = program.declarations[name].body.clone();
        assign_ids(&mut body, &mut counter);
        program.declarations[name].body = body;
    }
    program.next_agent_id = counter;

    for decl in program.declarations.values() {
        let free = decl.body.free_vars();
        for v in &free {
            if !decl.params.contains(v) {
                return Err(LangError::BodyEscapesParams {
                    name: decl.name.clone(),
                    var: program.system.var_name(*v).to_string(),
                });
            }
        }
    }

    let decls = program.declarations.clone();
    let check_calls = |agent: &Agent| -> Result<(), LangError> {
        let mut stack = vec![agent];
        while let Some(a) = stack.pop() {
            match a {
                Agent::Call { name, args } => match decls.get(name) {
                    None => {
                        return Err(LangError::UnresolvedProcedure { name: name.clone() });
                    }
                    Some(d) if d.params.len() != args.len() => {
                        return Err(LangError::ArityMismatch {
                            name: name.clone(),
                            expected: d.params.len(),
                            got: args.len(),
                        });
                    }
                    Some(_) => {}
                },
                Agent::Tell { then, .. } => stack.push(then),
                Agent::Choice(bs) => stack.extend(bs.iter().map(|b| &b.then)),
                Agent::Par(l, r) => {
                    stack.push(l);
                    stack.push(r);
                }
                Agent::FairPar(g) => stack.extend(g.children.iter().map(|c| &c.agent)),
                Agent::Exists { body, .. } => stack.push(body),
                Agent::Success | Agent::Fail => {}
            }
        }
        Ok(())
    };
    check_calls(&program.main)?;
    for decl in program.declarations.values() {
        check_calls(&decl.body)?;
    }
    Ok(())
}

fn assign_ids(agent: &mut Agent, counter: &mut u32) {
    match agent {
        Agent::Success | Agent::Fail | Agent::Call { .. } => {}
        Agent::Tell { then, .. } => assign_ids(then, counter),
        Agent::Choice(bs) => {
            for b in bs {
                assign_ids(&mut b.then, counter);
            }
        }
        Agent::Par(l, r) => {
            assign_ids(l, counter);
            assign_ids(r, counter);
        }
        Agent::FairPar(group) => {
            for child in &mut group.children {
                child.id = AgentId(*counter);
                *counter += 1;
            }
            for child in &mut group.children {
                assign_ids(&mut child.agent, counter);
            }
        }
        Agent::Exists { body, .. } => assign_ids(body, counter),
    }
}
