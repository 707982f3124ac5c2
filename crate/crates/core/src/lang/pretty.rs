//! Canonical source rendering; `parse(print(p)) == p` for parsed programs.

use std::fmt::Write;

use super::ast::{Agent, Program, Threshold};

/// Precedence levels, loosest to tightest: `||` (0), `+` (1), prefix (2).
fn level(agent: &Agent) -> u8 {
    match agent {
        Agent::Par(_, _) => 0,
        Agent::Choice(bs) if bs.len() > 1 => 1,
        _ => 2,
    }
}

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    let system = &p.system;
    writeln!(out, "semiring {};", system.ring().name()).unwrap();
    writeln!(out, "domain {{ {} }};", system.domain().join(", ")).unwrap();
    writeln!(out, "vars {{ {} }};", system.vars().join(", ")).unwrap();
    for (name, c) in &p.constraints {
        let rows: Vec<String> = c
            .rows()
            .map(|(tuple, value)| format!("({}) -> {}", tuple.join(" "), value))
            .collect();
        writeln!(
            out,
            "constraint {name} on ({}) {{ {} }};",
            c.scope_names().join(", "),
            rows.join(", ")
        )
        .unwrap();
    }
    for decl in p.declarations.values() {
        let params: Vec<&str> = decl.params.iter().map(|v| system.var_name(*v)).collect();
        writeln!(
            out,
            "proc {}({}) = {};",
            decl.name,
            params.join(", "),
            print_agent(&decl.body, p)
        )
        .unwrap();
    }
    writeln!(out, "init {}", print_agent(&p.main, p)).unwrap();
    out
}

pub fn print_agent(agent: &Agent, p: &Program) -> String {
    let mut out = String::new();
    write_agent(&mut out, agent, p, 0);
    out
}

fn write_agent(out: &mut String, agent: &Agent, p: &Program, min_level: u8) {
    if level(agent) < min_level {
        out.push('(');
        write_agent(out, agent, p, 0);
        out.push(')');
        return;
    }
    let system = &p.system;
    match agent {
        Agent::Success => out.push_str("success"),
        Agent::Fail => out.push_str("fail"),
        Agent::Tell {
            constraint,
            threshold,
            then,
        } => {
            write!(out, "tell({})", constraint.name).unwrap();
            write_threshold(out, threshold);
            out.push(' ');
            write_agent(out, then, p, 2);
        }
        Agent::Choice(branches) => {
            for (i, b) in branches.iter().enumerate() {
                if i > 0 {
                    out.push_str(" + ");
                }
                write!(out, "ask({})", b.constraint.name).unwrap();
                write_threshold(out, &b.threshold);
                out.push(' ');
                write_agent(out, &b.then, p, 2);
            }
        }
        Agent::Par(l, r) => {
            // The parser associates `||` to the left, so left-nested chains
            // print flat and right-nested ones keep their parentheses.
            write_agent(
                out,
                l,
                p,
                if matches!(**l, Agent::Par(_, _)) {
                    0
                } else {
                    1
                },
            );
            out.push_str(" || ");
            write_agent(out, r, p, 1);
        }
        Agent::FairPar(group) => {
            out.push_str("par(");
            for (i, child) in group.children.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_agent(out, &child.agent, p, 0);
            }
            out.push(')');
        }
        Agent::Exists { var, body } => {
            write!(out, "exists {}. ", system.var_name(*var)).unwrap();
            write_agent(out, body, p, 2);
        }
        Agent::Call { name, args } => {
            let args: Vec<&str> = args.iter().map(|v| system.var_name(*v)).collect();
            write!(out, "{name}({})", args.join(", ")).unwrap();
        }
    }
}

fn write_threshold(out: &mut String, threshold: &Threshold) {
    match threshold {
        Threshold::None => out.push_str(" ->"),
        Threshold::Level(a) => write!(out, " ->[{a}]").unwrap(),
        Threshold::Cut(c) => write!(out, " ->{{{}}}", c.name).unwrap(),
    }
}
