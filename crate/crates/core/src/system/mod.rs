//! Transition systems compiled from models: transition formulas per action,
//! an explicit-state executor, and seeded random traces.

use std::collections::BTreeMap;

use itertools::Itertools;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{ModelFile, UpdateArg, UpdateDecl};
use crate::logic::{
    eval, Elem, Formula, LogicError, Sort, Structure, Term, Valuation, Var, Vocabulary,
};
use crate::solver::{QueryOptions, SatResult, SolverSession};

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("the model declares no actions")]
    NoActions,
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("action `{0}` expects {1} arguments, got {2}")]
    Arity(String, usize, usize),
    #[error("no initial state with the requested domain sizes: {0}")]
    NoInitialState(String),
    #[error(transparent)]
    Logic(#[from] LogicError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Action {
    pub name: String,
    pub params: Vec<Var>,
    /// Conjunction of the `require` clauses, over the parameters.
    pub guard: Formula,
    pub updates: Vec<UpdateDecl>,
    /// Two-vocabulary formula over the parameters: the guard, the effect of
    /// the updates, and frame conditions for everything else.
    pub tr_body: Formula,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionSystem {
    pub vocab: Vocabulary,
    pub init: Formula,
    pub actions: Vec<Action>,
    /// Safety properties, each with its own view variables.
    pub safety: Vec<(Vec<Var>, Formula)>,
}

/// `r'(xs) <-> F(xs)` where `F` applies the updates of `r` in order.
fn frame(vocab: &Vocabulary, rel: &str, updates: &[&UpdateDecl]) -> Formula {
    let decl = vocab.relation(rel).expect("checked relation");
    let xs: Vec<Var> = decl
        .args
        .iter()
        .enumerate()
        .map(|(i, s)| Var::new(format!("_x{i}"), s))
        .collect();
    let terms: Vec<Term> = xs.iter().map(Term::var).collect();
    let mut current = Formula::rel(rel, terms.clone());
    for u in updates {
        let matches = Formula::and(u.args.iter().zip(&terms).filter_map(|(a, x)| match a {
            UpdateArg::Term(t) => Some(Formula::eq(x.clone(), t.clone())),
            UpdateArg::Wildcard => None,
        }));
        current = if u.value {
            Formula::or([matches, current])
        } else {
            Formula::and([Formula::not(matches), current])
        };
    }
    let post = Formula::Rel {
        name: rel.to_string(),
        primed: true,
        args: terms,
    };
    Formula::forall(xs, Formula::iff(post, current))
}

/// Compiles a parsed model into a transition system.
pub fn compile(m: &ModelFile) -> Result<TransitionSystem, SystemError> {
    if m.actions.is_empty() {
        return Err(SystemError::NoActions);
    }
    let mut actions = Vec::new();
    for a in &m.actions {
        let guard = Formula::and(a.requires.iter().cloned());
        let mut parts = vec![guard.clone()];
        for r in &m.vocab.relations {
            let ups: Vec<&UpdateDecl> = a.updates.iter().filter(|u| u.relation == r.name).collect();
            parts.push(frame(&m.vocab, &r.name, &ups));
        }
        for c in &m.vocab.constants {
            parts.push(Formula::eq(
                Term::Const {
                    name: c.name.clone(),
                    primed: true,
                },
                Term::constant(c.name.clone()),
            ));
        }
        actions.push(Action {
            name: a.name.clone(),
            params: a.params.clone(),
            guard,
            updates: a.updates.clone(),
            tr_body: Formula::and(parts),
        });
    }
    Ok(TransitionSystem {
        vocab: m.vocab.clone(),
        init: Formula::and(m.init.iter().cloned()),
        actions,
        safety: m
            .safety
            .iter()
            .map(|s| (s.view.clone(), s.formula.clone()))
            .collect(),
    })
}

impl Action {
    /// `tr_body` with the parameters renamed to `params`.
    pub fn body_with(&self, params: &[Var]) -> Formula {
        let pairs: Vec<(Var, Var)> = self.params.iter().cloned().zip(params.iter().cloned()).collect();
        self.tr_body.rename_vars(&pairs)
    }

    /// Fresh internal names for the parameters, `_<prefix><i>`.
    pub fn fresh_params(&self, prefix: &str) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| Var::new(format!("_{prefix}{i}"), &p.sort))
            .collect()
    }
}

/// An action instance with concrete arguments.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionInstance {
    pub action: String,
    pub args: Vec<Elem>,
}

impl TransitionSystem {
    pub fn action(&self, name: &str) -> Option<&Action> {
        self.actions.iter().find(|a| a.name == name)
    }

    /// `exists params. tr_body` with internal parameter names.
    pub fn action_tr(&self, a: &Action) -> Formula {
        let ps = a.fresh_params("t");
        Formula::exists(ps.clone(), a.body_with(&ps))
    }

    /// Disjunction of all action transition formulas.
    pub fn global_tr(&self) -> Result<Formula, SystemError> {
        if self.actions.is_empty() {
            return Err(SystemError::NoActions);
        }
        Ok(Formula::or(self.actions.iter().map(|a| self.action_tr(a))))
    }

    /// The conjunction of all safety properties. View variables that appear
    /// in `view` stay free; any others are universally quantified.
    pub fn safety_formula(&self, view: &[Var]) -> Formula {
        Formula::and(self.safety.iter().map(|(vs, f)| {
            let closed: Vec<Var> = vs.iter().filter(|v| !view.contains(v)).cloned().collect();
            Formula::forall(closed, f.clone())
        }))
    }

    /// Successors of `s` under one action instance (empty if disabled).
    pub fn step(&self, s: &Structure, action: &str, args: &[Elem]) -> Result<Vec<Structure>, SystemError> {
        let a = self
            .action(action)
            .ok_or_else(|| SystemError::UnknownAction(action.to_string()))?;
        if args.len() != a.params.len() {
            return Err(SystemError::Arity(action.into(), a.params.len(), args.len()));
        }
        let val: Valuation = a.params.iter().cloned().zip(args.iter().cloned()).collect();
        for (p, e) in a.params.iter().zip(args) {
            if !s.elems(&p.sort).contains(e) {
                return Err(SystemError::Logic(LogicError::SortMismatch(p.name.clone())));
            }
        }
        if !eval(s, &val, &a.guard)? {
            return Ok(vec![]);
        }
        let mut post = s.clone();
        for u in &a.updates {
            let decl = self.vocab.relation(&u.relation).expect("checked relation");
            let columns: Vec<Vec<Elem>> = u
                .args
                .iter()
                .zip(&decl.args)
                .map(|(arg, sort)| match arg {
                    UpdateArg::Wildcard => s.elems(sort).to_vec(),
                    UpdateArg::Term(Term::Var(v)) => vec![val[v].clone()],
                    UpdateArg::Term(Term::Const { name, .. }) => vec![s.constants[name].clone()],
                })
                .collect();
            if columns.is_empty() {
                post.set(&u.relation, vec![], u.value);
                continue;
            }
            for t in columns.into_iter().multi_cartesian_product() {
                post.set(&u.relation, t, u.value);
            }
        }
        Ok(vec![post])
    }

    /// All enabled action instances of `s`, in action declaration order.
    pub fn enabled(&self, s: &Structure) -> Result<Vec<(ActionInstance, Structure)>, SystemError> {
        let mut out = Vec::new();
        for a in &self.actions {
            for args in arg_tuples(s, &a.params) {
                for post in self.step(s, &a.name, &args)? {
                    out.push((
                        ActionInstance {
                            action: a.name.clone(),
                            args: args.clone(),
                        },
                        post,
                    ));
                }
            }
        }
        Ok(out)
    }
}

/// Every assignment of domain elements to `params`.
pub fn arg_tuples(s: &Structure, params: &[Var]) -> Vec<Vec<Elem>> {
    if params.is_empty() {
        return vec![vec![]];
    }
    params
        .iter()
        .map(|p| s.elems(&p.sort).to_vec())
        .multi_cartesian_product()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomTrace {
    pub states: Vec<Structure>,
    pub steps: Vec<ActionInstance>,
}

fn atoms(vocab: &Vocabulary, s: &Structure) -> Vec<(String, Vec<Elem>)> {
    let mut out = Vec::new();
    for r in &vocab.relations {
        let cols: Vec<Vec<Elem>> = r.args.iter().map(|srt| s.elems(srt).to_vec()).collect();
        if cols.is_empty() {
            out.push((r.name.clone(), vec![]));
            continue;
        }
        for t in cols.into_iter().multi_cartesian_product() {
            out.push((r.name.clone(), t));
        }
    }
    out
}

/// Finds an initial state with exactly the given domain sizes.
///
/// Tries the empty structure and random structures first, then asks the
/// solver, and finally enumerates small structures exhaustively. The state
/// found is then perturbed by a random walk that preserves `init`.
pub fn initial_state(
    ts: &TransitionSystem,
    sizes: &BTreeMap<Sort, usize>,
    rng: &mut ChaCha8Rng,
    solver: Option<&mut SolverSession>,
) -> Result<Structure, SystemError> {
    let base = Structure::with_sizes(&ts.vocab, sizes)?;
    let all_atoms = atoms(&ts.vocab, &base);
    let randomize_constants = |s: &mut Structure, rng: &mut ChaCha8Rng| {
        for c in &ts.vocab.constants {
            let es = s.elems(&c.sort).to_vec();
            s.constants.insert(c.name.clone(), es[rng.random_range(0..es.len())].clone());
        }
    };
    let none = Valuation::new();
    let mut found = None;
    for attempt in 0..200 {
        let mut s = base.clone();
        randomize_constants(&mut s, rng);
        if attempt > 0 {
            let density = [0.1, 0.3, 0.5][attempt % 3];
            for (r, t) in &all_atoms {
                if rng.random_bool(density) {
                    s.set(r, t.clone(), true);
                }
            }
        }
        if eval(&s, &none, &ts.init)? {
            found = Some(s);
            break;
        }
    }
    if found.is_none() {
        if let Some(solver) = solver {
            let opts = QueryOptions {
                minimize: false,
                sizes: Some(sizes.clone()),
            };
            match solver.check_with(&[(&ts.init, 0)], &opts) {
                SatResult::Sat(m) => found = Some(m.states[0].clone()),
                SatResult::Unsat => {
                    return Err(SystemError::NoInitialState("init is unsatisfiable".into()))
                }
                SatResult::Unknown(_) => {}
            }
        }
    }
    if found.is_none() && all_atoms.len() <= 16 {
        for bits in 0u32..(1 << all_atoms.len()) {
            let mut s = base.clone();
            for (i, (r, t)) in all_atoms.iter().enumerate() {
                if bits >> i & 1 == 1 {
                    s.set(r, t.clone(), true);
                }
            }
            if eval(&s, &none, &ts.init)? {
                found = Some(s);
                break;
            }
        }
    }
    let mut s = found.ok_or_else(|| SystemError::NoInitialState(format!("{sizes:?}")))?;
    if !all_atoms.is_empty() {
        for _ in 0..2 * all_atoms.len().min(64) {
            let (r, t) = &all_atoms[rng.random_range(0..all_atoms.len())];
            let mut next = s.clone();
            let v = next.holds(r, t);
            next.set(r, t.clone(), !v);
            if eval(&next, &none, &ts.init)? {
                s = next;
            }
        }
    }
    Ok(s)
}

/// A seeded random execution of at most `length` steps. The trace ends early
/// if a state has no enabled action.
pub fn random_trace(
    ts: &TransitionSystem,
    sizes: &BTreeMap<Sort, usize>,
    length: usize,
    seed: u64,
    solver: Option<&mut SolverSession>,
) -> Result<RandomTrace, SystemError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = initial_state(ts, sizes, &mut rng, solver)?;
    let mut states = vec![s.clone()];
    let mut steps = vec![];
    for _ in 0..length {
        let mut succ = ts.enabled(&s)?;
        if succ.is_empty() {
            break;
        }
        let (inst, post) = succ.swap_remove(rng.random_range(0..succ.len()));
        steps.push(inst);
        states.push(post.clone());
        s = post;
    }
    Ok(RandomTrace { states, steps })
}

#[cfg(test)]
mod tests;
