//! Phase structures and phase automata: edge labels, trace membership,
//! determinism, determinization and the conversions to and from flat
//! inductive invariants.
//!
//! An edge label is a set of entries, each restricting one action's
//! transition relation by an argument pattern and a guard. Labels are read
//! over action instances: a transition `(pre, post)` taken by action `a` with
//! arguments `args` satisfies an edge when some entry for `a` accepts `args`
//! and no exclusion does. Exclusions are introduced by determinization.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::frontend::{ModelFile, PatternArg};
use crate::logic::{
    eval, eval_two_vocab, Formula, LogicError, QuantifierClass, Structure, Term, Valuation,
    Var,
};
use crate::solver::{SatResult, SolverSession};
use crate::system::{arg_tuples, Action, ActionInstance, SystemError, TransitionSystem};

#[cfg(test)]
mod tests;

#[derive(Debug, Error)]
pub enum AutomatonError {
    #[error("unknown phase `{0}`")]
    UnknownPhase(String),
    #[error("the automaton declares no initial phase")]
    NoInitialPhase,
    #[error("unknown action `{0}` on edge {1}")]
    UnknownAction(String, String),
    #[error("pattern for `{0}` has {1} arguments, the action takes {2}")]
    PatternArity(String, usize, usize),
    #[error("guard of `{action}` on edge {edge} is not alternation-free: {witness}")]
    GuardAlternation {
        edge: String,
        action: String,
        witness: Box<Formula>,
    },
    #[error("determinization order must list every phase exactly once")]
    BadOrder,
    #[error("solver returned unknown: {0}")]
    SolverUnknown(String),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Logic(#[from] LogicError),
}

/// One action restricted by an argument pattern and a guard.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeEntry {
    pub action: String,
    pub pattern: Vec<PatternArg>,
    /// Over the view and the pattern's bound variables.
    pub guard: Formula,
}

impl EdgeEntry {
    /// Constraint on the action parameters `params` for this entry to apply.
    pub fn constraint(&self, params: &[Var]) -> Formula {
        let mut eqs = Vec::new();
        let mut binds = Vec::new();
        for (p, arg) in params.iter().zip(&self.pattern) {
            match arg {
                PatternArg::Wildcard => {}
                PatternArg::View(v) => eqs.push(Formula::eq(Term::var(p), Term::var(v))),
                PatternArg::Bind(b) => binds.push((b.clone(), p.clone())),
            }
        }
        eqs.push(self.guard.rename_vars(&binds));
        Formula::and(eqs)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct EdgeLabel {
    pub entries: Vec<EdgeEntry>,
    /// Labels whose transitions are removed from this one.
    pub exclusions: Vec<EdgeLabel>,
}

impl EdgeLabel {
    /// Constraint on the parameters of `action` for a transition of that
    /// action to satisfy the label. `False` if no entry mentions it.
    pub fn constraint(&self, action: &str, params: &[Var]) -> Formula {
        let pos = Formula::or(
            self.entries
                .iter()
                .filter(|e| e.action == action)
                .map(|e| e.constraint(params)),
        );
        if pos == Formula::False {
            return pos;
        }
        let neg = self
            .exclusions
            .iter()
            .map(|x| Formula::not(x.constraint(action, params)));
        Formula::and(std::iter::once(pos).chain(neg))
    }

    pub fn mentions(&self, action: &str) -> bool {
        self.entries.iter().any(|e| e.action == action)
    }

    /// Actions with at least one entry, in first-mention order.
    pub fn actions(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.action.as_str()) {
                out.push(&e.action);
            }
        }
        out
    }

    fn guards(&self) -> Vec<(&str, &Formula)> {
        let mut out: Vec<(&str, &Formula)> =
            self.entries.iter().map(|e| (e.action.as_str(), &e.guard)).collect();
        for x in &self.exclusions {
            out.extend(x.guards());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub label: EdgeLabel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseStructure {
    pub phases: Vec<String>,
    pub initial: usize,
    pub view: Vec<Var>,
    /// At most one edge per (source, target), sorted by phase indices.
    pub edges: Vec<Edge>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseAutomaton {
    pub structure: PhaseStructure,
    /// Characterization of each phase, over the view.
    pub eta: Vec<Formula>,
}

/// Witness that two outgoing edges of a phase overlap.
#[derive(Clone, Debug)]
pub struct Overlap {
    pub phase: usize,
    pub targets: (usize, usize),
    pub action: String,
    pub pre: Structure,
    pub post: Structure,
    /// View valuation and action arguments.
    pub valuation: Valuation,
}

impl PhaseStructure {
    /// Builds the phase structure declared in `m`, checked against `ts`.
    pub fn from_model(m: &ModelFile, ts: &TransitionSystem) -> Result<Option<Self>, AutomatonError> {
        let Some(decl) = &m.automaton else { return Ok(None) };
        let phases: Vec<String> = decl.phases.iter().map(|p| p.name.clone()).collect();
        let initial = decl
            .phases
            .iter()
            .position(|p| p.initial)
            .ok_or(AutomatonError::NoInitialPhase)?;
        let index = |name: &str| {
            phases
                .iter()
                .position(|p| p == name)
                .ok_or_else(|| AutomatonError::UnknownPhase(name.to_string()))
        };
        let mut labels: BTreeMap<(usize, usize), EdgeLabel> = BTreeMap::new();
        for e in &decl.edges {
            let (from, to) = (index(&e.from)?, index(&e.to)?);
            let edge = format!("{} -> {}", e.from, e.to);
            let action = ts
                .action(&e.action)
                .ok_or_else(|| AutomatonError::UnknownAction(e.action.clone(), edge.clone()))?;
            if e.pattern.len() != action.params.len() {
                return Err(AutomatonError::PatternArity(
                    e.action.clone(),
                    e.pattern.len(),
                    action.params.len(),
                ));
            }
            let guard = e.guard.clone().unwrap_or(Formula::True);
            if let Some(witness) = guard.alternation_witness() {
                return Err(AutomatonError::GuardAlternation {
                    edge,
                    action: e.action.clone(),
                    witness: Box::new(witness),
                });
            }
            labels.entry((from, to)).or_default().entries.push(EdgeEntry {
                action: e.action.clone(),
                pattern: e.pattern.clone(),
                guard,
            });
        }
        Ok(Some(PhaseStructure {
            phases,
            initial,
            view: decl.view.clone(),
            edges: labels
                .into_iter()
                .map(|((from, to), label)| Edge { from, to, label })
                .collect(),
        }))
    }

    pub fn phase_index(&self, name: &str) -> Option<usize> {
        self.phases.iter().position(|p| p == name)
    }

    /// Pairs of phases connected by a non-empty label.
    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .filter(|e| !e.label.entries.is_empty())
            .map(|e| (e.from, e.to))
            .collect()
    }

    pub fn outgoing(&self, q: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == q)
    }

    pub fn incoming(&self, q: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.to == q)
    }

    /// Actions with no outgoing entry at `q`. Every such transition must be
    /// impossible in phase `q`.
    pub fn disabled_actions<'a>(&self, ts: &'a TransitionSystem, q: usize) -> Vec<&'a str> {
        ts.actions
            .iter()
            .filter(|a| !self.outgoing(q).any(|e| e.label.mentions(&a.name)))
            .map(|a| a.name.as_str())
            .collect()
    }

    /// Re-checks that every guard is alternation-free.
    pub fn check_guards(&self) -> Result<(), AutomatonError> {
        for e in &self.edges {
            for (action, g) in e.label.guards() {
                if g.quantifier_class() == QuantifierClass::Unrestricted {
                    return Err(AutomatonError::GuardAlternation {
                        edge: format!("{} -> {}", self.phases[e.from], self.phases[e.to]),
                        action: action.to_string(),
                        witness: Box::new(g.alternation_witness().unwrap_or_else(|| g.clone())),
                    });
                }
            }
        }
        Ok(())
    }

    /// The label of an edge as a two-vocabulary formula over the view.
    pub fn label_formula(&self, ts: &TransitionSystem, edge: &Edge) -> Formula {
        Formula::or(edge.label.actions().into_iter().map(|name| {
            let a = ts.action(name).expect("checked action");
            let ps = a.fresh_params("e");
            Formula::exists(
                ps.clone(),
                Formula::and([a.body_with(&ps), edge.label.constraint(name, &ps)]),
            )
        }))
    }

    /// Whether the action instance `(pre, post)` satisfies `edge` under the
    /// view valuation `v`.
    pub fn instance_satisfies(
        &self,
        ts: &TransitionSystem,
        edge: &Edge,
        pre: &Structure,
        post: &Structure,
        inst: &ActionInstance,
        v: &Valuation,
    ) -> Result<bool, AutomatonError> {
        let a = ts
            .action(&inst.action)
            .ok_or_else(|| SystemError::UnknownAction(inst.action.clone()))?;
        // Parameter names may coincide with view names.
        let ps = a.fresh_params("p");
        let c = edge.label.constraint(&a.name, &ps);
        if c == Formula::False {
            return Ok(false);
        }
        let mut val = v.clone();
        val.extend(ps.into_iter().zip(inst.args.iter().cloned()));
        Ok(eval_two_vocab(pre, post, &val, &c)?)
    }

    /// Checks that no phase has two outgoing edges to distinct targets that
    /// accept a common action instance. Returns a witness otherwise.
    pub fn find_overlap(
        &self,
        ts: &TransitionSystem,
        solver: &mut SolverSession,
    ) -> Result<Option<Overlap>, AutomatonError> {
        for q in 0..self.phases.len() {
            let out: Vec<&Edge> = self.outgoing(q).collect();
            for (i, e1) in out.iter().enumerate() {
                for e2 in &out[i + 1..] {
                    for a in &ts.actions {
                        if !e1.label.mentions(&a.name) || !e2.label.mentions(&a.name) {
                            continue;
                        }
                        let ps = a.fresh_params("p");
                        let query = Formula::and([
                            a.body_with(&ps),
                            e1.label.constraint(&a.name, &ps),
                            e2.label.constraint(&a.name, &ps),
                        ]);
                        match solver.check(&[&query]) {
                            SatResult::Unsat => {}
                            SatResult::Sat(m) => {
                                return Ok(Some(Overlap {
                                    phase: q,
                                    targets: (e1.to, e2.to),
                                    action: a.name.clone(),
                                    pre: m.pre().clone(),
                                    post: m.post().clone(),
                                    valuation: m.valuation.clone(),
                                }))
                            }
                            SatResult::Unknown(r) => return Err(AutomatonError::SolverUnknown(r)),
                        }
                    }
                }
            }
        }
        Ok(None)
    }

    pub fn is_deterministic(
        &self,
        ts: &TransitionSystem,
        solver: &mut SolverSession,
    ) -> Result<bool, AutomatonError> {
        Ok(self.find_overlap(ts, solver)?.is_none())
    }

    /// Removes from each edge `(q, p)` the transitions of the edges `(q, p')`
    /// with `p'` before `p` in `order`.
    pub fn determinize(&self, order: &[usize]) -> Result<PhaseStructure, AutomatonError> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.phases.len()).collect::<Vec<_>>() {
            return Err(AutomatonError::BadOrder);
        }
        let rank = |p: usize| order.iter().position(|&x| x == p).expect("permutation");
        let mut out = self.clone();
        for e in &mut out.edges {
            e.label.exclusions.extend(
                self.outgoing(e.from)
                    .filter(|o| rank(o.to) < rank(e.to))
                    .map(|o| o.label.clone()),
            );
        }
        Ok(out)
    }
}

/// Transitions of a state sequence, as every action instance producing them.
pub type StepInstances = Vec<Vec<ActionInstance>>;

/// For each consecutive pair of `states`, the action instances taking the
/// first to the second.
pub fn step_instances(ts: &TransitionSystem, states: &[Structure]) -> Result<StepInstances, AutomatonError> {
    let mut out = Vec::new();
    for w in states.windows(2) {
        let mut insts = Vec::new();
        for a in &ts.actions {
            for args in arg_tuples(&w[0], &a.params) {
                if ts.step(&w[0], &a.name, &args)?.iter().any(|p| p == &w[1]) {
                    insts.push(ActionInstance {
                        action: a.name.clone(),
                        args,
                    });
                }
            }
        }
        out.push(insts);
    }
    Ok(out)
}

impl PhaseAutomaton {
    /// The declared structure with the conjunction of each phase's
    /// `invariant` clauses as its characterization.
    pub fn from_model(m: &ModelFile, ts: &TransitionSystem) -> Result<Option<Self>, AutomatonError> {
        let Some(structure) = PhaseStructure::from_model(m, ts)? else { return Ok(None) };
        let decl = m.automaton.as_ref().expect("structure implies automaton");
        let eta = decl
            .phases
            .iter()
            .map(|p| Formula::and(p.invariants.iter().cloned()))
            .collect();
        Ok(Some(PhaseAutomaton { structure, eta }))
    }

    /// Single-phase automaton with a self-loop for every action.
    pub fn wrap_invariant(inv: Formula, ts: &TransitionSystem) -> Self {
        let entries = ts
            .actions
            .iter()
            .map(|a| EdgeEntry {
                action: a.name.clone(),
                pattern: vec![PatternArg::Wildcard; a.params.len()],
                guard: Formula::True,
            })
            .collect();
        PhaseAutomaton {
            structure: PhaseStructure {
                phases: vec!["inv".into()],
                initial: 0,
                view: vec![],
                edges: vec![Edge {
                    from: 0,
                    to: 0,
                    label: EdgeLabel {
                        entries,
                        exclusions: vec![],
                    },
                }],
            },
            eta: vec![inv],
        }
    }

    /// `forall V. eta(q_1) | ... | eta(q_n)`.
    pub fn flatten(&self) -> Formula {
        Formula::forall(self.structure.view.clone(), Formula::or(self.eta.iter().cloned()))
    }

    pub fn determinize(&self, order: &[usize]) -> Result<PhaseAutomaton, AutomatonError> {
        Ok(PhaseAutomaton {
            structure: self.structure.determinize(order)?,
            eta: self.eta.clone(),
        })
    }

    /// Searches for a phase trace accepting `states` under the view
    /// valuation `v`, tracking the set of reachable phases per position.
    pub fn trace_member(
        &self,
        ts: &TransitionSystem,
        states: &[Structure],
        v: &Valuation,
    ) -> Result<Option<Vec<usize>>, AutomatonError> {
        let steps = step_instances(ts, states)?;
        self.trace_member_with(ts, states, &steps, v)
    }

    /// As [`trace_member`](Self::trace_member), with the step instances
    /// precomputed.
    pub fn trace_member_with(
        &self,
        ts: &TransitionSystem,
        states: &[Structure],
        steps: &StepInstances,
        v: &Valuation,
    ) -> Result<Option<Vec<usize>>, AutomatonError> {
        let s = &self.structure;
        let Some(first) = states.first() else { return Ok(Some(vec![])) };
        if !eval(first, v, &self.eta[s.initial])? {
            return Ok(None);
        }
        // For each position, reachable phases with one predecessor each.
        let mut layers: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::from([(s.initial, s.initial)])];
        for (i, insts) in steps.iter().enumerate() {
            let (pre, post) = (&states[i], &states[i + 1]);
            let mut next: BTreeMap<usize, usize> = BTreeMap::new();
            let mut eta_ok: BTreeMap<usize, bool> = BTreeMap::new();
            for &q in layers[i].keys() {
                for e in s.outgoing(q) {
                    if next.contains_key(&e.to) {
                        continue;
                    }
                    let mut hit = false;
                    for inst in insts {
                        if s.instance_satisfies(ts, e, pre, post, inst, v)? {
                            hit = true;
                            break;
                        }
                    }
                    if !hit {
                        continue;
                    }
                    let ok = match eta_ok.get(&e.to) {
                        Some(&b) => b,
                        None => {
                            let b = eval(post, v, &self.eta[e.to])?;
                            eta_ok.insert(e.to, b);
                            b
                        }
                    };
                    if ok {
                        next.insert(e.to, q);
                    }
                }
            }
            if next.is_empty() {
                return Ok(None);
            }
            layers.push(next);
        }
        let mut q = *layers.last().expect("nonempty").keys().next().expect("nonempty");
        let mut trace = vec![q];
        for layer in layers[1..].iter().rev() {
            q = layer[&q];
            trace.push(q);
        }
        trace.reverse();
        Ok(Some(trace))
    }
}

/// All valuations of `view` into the domain of `s`.
pub fn view_valuations(s: &Structure, view: &[Var]) -> Vec<Valuation> {
    arg_tuples(s, view)
        .into_iter()
        .map(|t| view.iter().cloned().zip(t).collect())
        .collect()
}

/// Two-vocabulary formula for one action of an edge with the parameters
/// left free: `body(params) & constraint(params)`.
pub fn edge_action_formula(action: &Action, label: &EdgeLabel, params: &[Var]) -> Formula {
    Formula::and([action.body_with(params), label.constraint(&action.name, params)])
}
