//! Verification conditions of phase automata, their discharge with the
//! solver, and export of the phase structure as constrained Horn clauses.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use serde::{Serialize, Serializer};

use crate::automaton::{AutomatonError, PhaseAutomaton, PhaseStructure};
use crate::logic::{Elem, Formula, Structure, Term, Valuation, Var};
use crate::solver::smt;
use crate::solver::{SatResult, SolverSession};
use crate::system::{Action, TransitionSystem};

#[cfg(test)]
mod tests;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VcKind {
    Initiation,
    Inductiveness { from: usize, to: usize },
    Covering { phase: usize, action: String },
    Safety { phase: usize },
}

/// `hypotheses -> goal`, valid when every free variable is read as an
/// arbitrary constant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub hypotheses: Vec<Formula>,
    pub goal: Formula,
}

impl Query {
    /// The formula whose unsatisfiability establishes the query.
    pub fn negation(&self) -> Formula {
        Formula::and(
            self.hypotheses
                .iter()
                .cloned()
                .chain(std::iter::once(Formula::not(self.goal.clone()))),
        )
    }

    pub fn is_transition(&self) -> bool {
        self.hypotheses.iter().any(Formula::has_primed) || self.goal.has_primed()
    }
}

/// A verification condition: valid when all its queries are.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vc {
    pub kind: VcKind,
    pub name: String,
    pub queries: Vec<Query>,
}

/// Initiation, inductiveness per edge, covering per phase and action, and
/// safety per phase, in that order.
pub fn gen_vcs(ts: &TransitionSystem, a: &PhaseAutomaton) -> Result<Vec<Vc>, AutomatonError> {
    let s = &a.structure;
    s.check_guards()?;
    let mut out = Vec::new();
    out.push(Vc {
        kind: VcKind::Initiation,
        name: "initiation".into(),
        queries: a.eta[s.initial]
            .conjuncts()
            .into_iter()
            .map(|goal| Query {
                hypotheses: vec![ts.init.clone()],
                goal,
            })
            .collect(),
    });
    for e in &s.edges {
        if e.label.entries.is_empty() {
            continue;
        }
        let goals: Vec<Formula> = a.eta[e.to]
            .conjuncts()
            .into_iter()
            .map(|g| g.prime())
            .collect::<Result<_, _>>()?;
        let mut queries = Vec::new();
        for name in e.label.actions() {
            let act = ts.action(name).expect("checked action");
            let ps = act.fresh_params("a");
            let hyps = vec![
                a.eta[e.from].clone(),
                act.body_with(&ps),
                e.label.constraint(name, &ps),
            ];
            for g in &goals {
                queries.push(Query {
                    hypotheses: hyps.clone(),
                    goal: g.clone(),
                });
            }
        }
        out.push(Vc {
            kind: VcKind::Inductiveness { from: e.from, to: e.to },
            name: format!("inductiveness({} -> {})", s.phases[e.from], s.phases[e.to]),
            queries,
        });
    }
    for q in 0..s.phases.len() {
        for vc in edge_cover_vcs(ts, a, q) {
            out.push(vc);
        }
    }
    let safety = ts.safety_formula(&s.view);
    for q in 0..s.phases.len() {
        out.push(Vc {
            kind: VcKind::Safety { phase: q },
            name: format!("safety({})", s.phases[q]),
            queries: safety
                .conjuncts()
                .into_iter()
                .map(|goal| Query {
                    hypotheses: vec![a.eta[q].clone()],
                    goal,
                })
                .collect(),
        });
    }
    Ok(out)
}

/// One covering condition per action: whenever the action is enabled in a
/// state satisfying `eta(q)`, some outgoing edge of `q` accepts it.
pub fn edge_cover_vcs(ts: &TransitionSystem, a: &PhaseAutomaton, q: usize) -> Vec<Vc> {
    let s = &a.structure;
    ts.actions
        .iter()
        .map(|act| {
            let ps = act.fresh_params("a");
            let goal = covering_goal(s, q, &act.name, &ps);
            let enabled = enabled_formula(act, &goal, &ps);
            Vc {
                kind: VcKind::Covering {
                    phase: q,
                    action: act.name.clone(),
                },
                name: format!("covering({}, {})", s.phases[q], act.name),
                queries: vec![Query {
                    hypotheses: vec![a.eta[q].clone(), enabled],
                    goal,
                }],
            }
        })
        .collect()
}

/// Disjunction of the constraints of every outgoing edge of `q` on `action`.
pub fn covering_goal(s: &PhaseStructure, q: usize, action: &str, params: &[Var]) -> Formula {
    Formula::or(s.outgoing(q).map(|e| e.label.constraint(action, params)))
}

/// The hypothesis of a covering query with goal `goal`. Without primed
/// symbols in the goal, the guard stands in for the full transition: every
/// enabled instance has a successor.
pub fn enabled_formula(act: &Action, goal: &Formula, ps: &[Var]) -> Formula {
    if goal.has_primed() {
        act.body_with(ps)
    } else {
        act.guard.rename_vars(&rename(&act.params, ps))
    }
}

fn rename(from: &[Var], to: &[Var]) -> Vec<(Var, Var)> {
    from.iter().cloned().zip(to.iter().cloned()).collect()
}

/// A model of a query's negation.
#[derive(Clone, Debug, Serialize)]
pub struct Countermodel {
    pub pre: Structure,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub post: Option<Structure>,
    #[serde(serialize_with = "serialize_valuation")]
    pub valuation: Valuation,
    /// The goal that fails.
    #[serde(serialize_with = "serialize_display")]
    pub goal: Formula,
}

pub fn serialize_valuation<S: Serializer>(v: &Valuation, s: S) -> Result<S::Ok, S::Error> {
    let named: BTreeMap<&str, &Elem> = v.iter().map(|(k, e)| (k.name.as_str(), e)).collect();
    named.serialize(s)
}

fn serialize_display<S: Serializer, T: fmt::Display>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Clone, Debug)]
pub enum Outcome {
    Valid,
    Invalid(Box<Countermodel>),
    Unknown(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Valid,
    Invalid,
    Inconclusive,
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub results: Vec<(Vc, Outcome)>,
}

impl CheckReport {
    pub fn verdict(&self) -> Verdict {
        if self.results.iter().any(|(_, o)| matches!(o, Outcome::Invalid(_))) {
            Verdict::Invalid
        } else if self.results.iter().any(|(_, o)| matches!(o, Outcome::Unknown(_))) {
            Verdict::Inconclusive
        } else {
            Verdict::Valid
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &(Vc, Outcome)> {
        self.results.iter().filter(|(_, o)| !matches!(o, Outcome::Valid))
    }
}

/// Discharges one query. The model of a satisfiable negation is the
/// countermodel.
pub fn check_query(solver: &mut SolverSession, q: &Query) -> Outcome {
    let neg = q.negation();
    match solver.check(&[&neg]) {
        SatResult::Unsat => Outcome::Valid,
        SatResult::Sat(m) => Outcome::Invalid(Box::new(Countermodel {
            pre: m.pre().clone(),
            post: q.is_transition().then(|| m.post().clone()),
            valuation: m.valuation.clone(),
            goal: q.goal.clone(),
        })),
        SatResult::Unknown(r) => Outcome::Unknown(r),
    }
}

/// Discharges one VC, stopping at its first failing query.
pub fn check_vc(solver: &mut SolverSession, vc: &Vc) -> Outcome {
    let mut unknown = None;
    for q in &vc.queries {
        match check_query(solver, q) {
            Outcome::Valid => {}
            Outcome::Unknown(r) => unknown = unknown.or(Some(r)),
            invalid => return invalid,
        }
    }
    match unknown {
        Some(r) => Outcome::Unknown(r),
        None => Outcome::Valid,
    }
}

/// Checks every VC of `a`.
pub fn check(
    ts: &TransitionSystem,
    a: &PhaseAutomaton,
    solver: &mut SolverSession,
) -> Result<CheckReport, AutomatonError> {
    let vcs = gen_vcs(ts, a)?;
    let results = vcs
        .into_iter()
        .map(|vc| {
            let o = check_vc(solver, &vc);
            (vc, o)
        })
        .collect();
    Ok(CheckReport { results })
}

/// A linear constrained Horn clause system over one unknown per phase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChcSystem {
    /// Unknown names with their parameters (the view).
    pub unknowns: Vec<(String, Vec<Var>)>,
    /// Named clauses `forall V. body -> head`; unknowns appear as relations
    /// named like the unknown, primed when read in the post-state.
    pub clauses: Vec<(String, Formula)>,
}

fn unknown_name(phase: &str) -> String {
    format!("I_{phase}")
}

/// The clauses for initiation, inductiveness per edge, covering per phase
/// and safety per phase.
pub fn emit_chc(ts: &TransitionSystem, s: &PhaseStructure) -> Result<ChcSystem, AutomatonError> {
    s.check_guards()?;
    let view_terms: Vec<Term> = s.view.iter().map(Term::var).collect();
    let app = |q: usize, primed: bool| Formula::Rel {
        name: unknown_name(&s.phases[q]),
        primed,
        args: view_terms.clone(),
    };
    let close = |f: Formula| Formula::forall(s.view.clone(), f);
    let mut clauses = Vec::new();
    clauses.push((
        "initiation".to_string(),
        close(Formula::implies(ts.init.clone(), app(s.initial, false))),
    ));
    for e in &s.edges {
        if e.label.entries.is_empty() {
            continue;
        }
        clauses.push((
            format!("inductiveness_{}_{}", s.phases[e.from], s.phases[e.to]),
            close(Formula::implies(
                Formula::and([app(e.from, false), s.label_formula(ts, e)]),
                app(e.to, true),
            )),
        ));
    }
    let tr = ts.global_tr()?;
    for q in 0..s.phases.len() {
        let out = Formula::or(s.outgoing(q).map(|e| s.label_formula(ts, e)));
        clauses.push((
            format!("covering_{}", s.phases[q]),
            close(Formula::implies(Formula::and([app(q, false), tr.clone()]), out)),
        ));
    }
    let safety = ts.safety_formula(&s.view);
    for q in 0..s.phases.len() {
        clauses.push((
            format!("safety_{}", s.phases[q]),
            close(Formula::implies(app(q, false), safety.clone())),
        ));
    }
    Ok(ChcSystem {
        unknowns: s
            .phases
            .iter()
            .map(|p| (unknown_name(p), s.view.clone()))
            .collect(),
        clauses,
    })
}

impl ChcSystem {
    /// SMT-LIB text in the HORN logic.
    pub fn to_smtlib(&self, ts: &TransitionSystem) -> String {
        let mut out = String::new();
        out.push_str("; Linear CHC system of a phase structure.\n");
        out.push_str("; State symbols: copy 0 is the pre-state, copy 1 the post-state.\n");
        out.push_str("; An unknown I_q is read in the pre-state. |I_q'| is declared separately\n");
        out.push_str("; but denotes the same unknown read in the post-state.\n");
        out.push_str("(set-logic HORN)\n");
        for d in smt::declare_sorts(&ts.vocab) {
            let _ = writeln!(out, "{d}");
        }
        for copy in 0..2 {
            for d in smt::declare_copy(&ts.vocab, copy) {
                let _ = writeln!(out, "{d}");
            }
        }
        for (name, params) in &self.unknowns {
            let sorts: Vec<String> = params.iter().map(|v| smt::sort_sym(&v.sort)).collect();
            let _ = writeln!(out, "(declare-fun {name} ({}) Bool)", sorts.join(" "));
        }
        for (name, params) in &self.unknowns {
            let sorts: Vec<String> = params.iter().map(|v| smt::sort_sym(&v.sort)).collect();
            let _ = writeln!(out, "(declare-fun |{name}'| ({}) Bool)", sorts.join(" "));
        }
        let verbatim: Vec<String> = self.unknowns.iter().map(|(n, _)| n.clone()).collect();
        for (name, f) in &self.clauses {
            let _ = writeln!(
                out,
                "(assert (! {} :named {name}))",
                smt::translate_with(f, 0, &verbatim)
            );
        }
        out.push_str("(check-sat)\n");
        out
    }
}
