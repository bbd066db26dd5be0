use std::fmt::Write;

use crate::logic::Var;

use super::{ModelFile, PatternArg, UpdateArg};

fn binders(vs: &[Var]) -> String {
    vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

/// Canonical text of a model. Declarations are grouped by kind, one per line.
pub fn pretty(m: &ModelFile) -> String {
    let mut out = String::new();
    for s in &m.vocab.sorts {
        writeln!(out, "sort {s}").unwrap();
    }
    if !m.vocab.relations.is_empty() {
        out.push('\n');
    }
    for r in &m.vocab.relations {
        if r.args.is_empty() {
            writeln!(out, "relation {}", r.name).unwrap();
        } else {
            let args: Vec<_> = r.args.iter().map(|s| s.0.as_str()).collect();
            writeln!(out, "relation {}({})", r.name, args.join(", ")).unwrap();
        }
    }
    if !m.vocab.constants.is_empty() {
        out.push('\n');
    }
    for c in &m.vocab.constants {
        writeln!(out, "constant {}: {}", c.name, c.sort).unwrap();
    }
    if !m.init.is_empty() {
        out.push('\n');
    }
    for f in &m.init {
        writeln!(out, "init {f}").unwrap();
    }
    for a in &m.actions {
        writeln!(out, "\naction {}({}) {{", a.name, binders(&a.params)).unwrap();
        for r in &a.requires {
            writeln!(out, "  require {r}").unwrap();
        }
        for u in &a.updates {
            let args: Vec<String> = u
                .args
                .iter()
                .map(|x| match x {
                    UpdateArg::Term(t) => t.to_string(),
                    UpdateArg::Wildcard => "*".into(),
                })
                .collect();
            if args.is_empty() {
                writeln!(out, "  {} := {}", u.relation, u.value).unwrap();
            } else {
                writeln!(out, "  {}({}) := {}", u.relation, args.join(", "), u.value).unwrap();
            }
        }
        out.push_str("}\n");
    }
    if !m.safety.is_empty() {
        out.push('\n');
    }
    for s in &m.safety {
        if s.view.is_empty() {
            writeln!(out, "safety {}", s.formula).unwrap();
        } else {
            writeln!(out, "safety [{}] {}", binders(&s.view), s.formula).unwrap();
        }
    }
    if !m.invariants.is_empty() {
        out.push('\n');
    }
    for f in &m.invariants {
        writeln!(out, "invariant {f}").unwrap();
    }
    if let Some(a) = &m.automaton {
        out.push_str("\nautomaton {\n");
        if !a.view.is_empty() {
            writeln!(out, "  view {}", binders(&a.view)).unwrap();
        }
        for p in &a.phases {
            let init = if p.initial { "init " } else { "" };
            if p.invariants.is_empty() {
                writeln!(out, "  {init}phase {}", p.name).unwrap();
            } else {
                writeln!(out, "  {init}phase {} {{", p.name).unwrap();
                for f in &p.invariants {
                    writeln!(out, "    invariant {f}").unwrap();
                }
                out.push_str("  }\n");
            }
        }
        for e in &a.edges {
            let head = if e.from == e.to {
                format!("self {}", e.from)
            } else {
                format!("{} -> {}", e.from, e.to)
            };
            let pat: Vec<&str> = e
                .pattern
                .iter()
                .map(|p| match p {
                    PatternArg::Wildcard => "*",
                    PatternArg::View(v) | PatternArg::Bind(v) => v.name.as_str(),
                })
                .collect();
            write!(out, "  {head} on {}({})", e.action, pat.join(", ")).unwrap();
            if let Some(g) = &e.guard {
                write!(out, " where {g}").unwrap();
            }
            out.push('\n');
        }
        out.push_str("}\n");
    }
    out
}
