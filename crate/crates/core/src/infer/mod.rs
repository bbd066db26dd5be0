//! Phase-PDR: inference of universally quantified phase characterizations
//! over a fixed phase structure, with abstract counterexample traces when
//! none exist, and bounded model checking to classify such traces.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::automaton::{AutomatonError, PhaseAutomaton, PhaseStructure};
use crate::logic::{diagram, eval, is_substructure, Diagram, Elem, Formula, LogicError, Structure, Valuation, Var};
use crate::solver::{Model, QueryOptions, SatResult, SolverSession};
use crate::system::{ActionInstance, SystemError, TransitionSystem};
use crate::vcgen::{self, covering_goal, enabled_formula, Verdict};

#[cfg(test)]
mod tests;

#[derive(Debug, Error)]
pub enum InferError {
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error("inferred characterizations fail their own check: {0}")]
    Unsound(String),
    #[error("trace does not match the model: {0}")]
    TraceMismatch(String),
    #[error("bound {bound} is shorter than the trace ({len} states)")]
    BoundTooSmall { bound: usize, len: usize },
}

#[derive(Clone, Debug)]
pub struct InferConfig {
    /// Wall-clock budget for the whole run.
    pub budget: Option<Duration>,
    /// Give up after this many frames.
    pub max_frames: usize,
    /// Seed literal dropping with the union of unsat cores of the blocking
    /// queries.
    pub unsat_cores: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            budget: None,
            max_frames: 64,
            unsat_cores: true,
        }
    }
}

/// A learned clause: in `F_i(phase)` for every `1 <= i <= level`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lemma {
    pub phase: usize,
    pub formula: Formula,
    pub level: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// The final state violates the safety property.
    Safety,
    /// The final state enables this action instance, and no outgoing edge of
    /// the final phase accepts it.
    Uncovered { action: String, args: Vec<Elem> },
}

/// States `states[0] .. states[n-1]` with one view valuation. Each
/// `abstractions[i]` is a substructure of `states[i]` whose successor under
/// `steps[i]` is `states[i+1]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractTrace {
    pub view: Vec<Var>,
    pub valuation: BTreeMap<String, Elem>,
    pub phases: Vec<String>,
    pub states: Vec<Structure>,
    pub abstractions: Vec<Structure>,
    pub steps: Vec<ActionInstance>,
    pub violation: Violation,
}

impl AbstractTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn view_valuation(&self) -> Valuation {
        self.view
            .iter()
            .filter_map(|w| self.valuation.get(&w.name).map(|e| (w.clone(), e.clone())))
            .collect()
    }

    /// Every abstraction step is the identity.
    pub fn is_concrete(&self) -> bool {
        self.abstractions.iter().zip(&self.states).all(|(a, s)| a == s)
    }

    /// Re-checks the trace against the system and structure by direct
    /// evaluation. Returns a description of the first defect.
    pub fn validate(&self, ts: &TransitionSystem, s: &PhaseStructure) -> Result<(), String> {
        let n = self.states.len();
        if n == 0 || self.phases.len() != n || self.abstractions.len() + 1 != n || self.steps.len() + 1 != n {
            return Err("inconsistent lengths".into());
        }
        if self.view != s.view {
            return Err("view differs from the structure".into());
        }
        let v = self.view_valuation();
        if v.len() != self.view.len() {
            return Err("valuation does not bind every view variable".into());
        }
        let qs: Vec<usize> = self
            .phases
            .iter()
            .map(|p| s.phase_index(p).ok_or_else(|| format!("unknown phase {p}")))
            .collect::<Result<_, _>>()?;
        if qs[0] != s.initial {
            return Err("trace does not start in the initial phase".into());
        }
        let err = |e: &dyn std::fmt::Display| e.to_string();
        if !eval(&self.states[0], &v, &ts.init).map_err(|e| err(&e))? {
            return Err("first state is not initial".into());
        }
        for k in 0..n - 1 {
            let (small, big, post) = (&self.abstractions[k], &self.states[k], &self.states[k + 1]);
            if !is_substructure(&ts.vocab, small, &v, big, &v).map_err(|e| err(&e))? {
                return Err(format!("abstraction {k} is not a substructure of state {k}"));
            }
            let inst = &self.steps[k];
            if !ts.step(small, &inst.action, &inst.args).map_err(|e| err(&e))?.contains(post) {
                return Err(format!("step {k} is not a transition of the system"));
            }
            let e = s
                .edges
                .iter()
                .find(|e| e.from == qs[k] && e.to == qs[k + 1])
                .ok_or_else(|| format!("no edge {} -> {}", self.phases[k], self.phases[k + 1]))?;
            if !s.instance_satisfies(ts, e, small, post, inst, &v).map_err(|e| err(&e))? {
                return Err(format!("step {k} does not satisfy its edge label"));
            }
        }
        let last = &self.states[n - 1];
        match &self.violation {
            Violation::Safety => {
                if eval(last, &v, &ts.safety_formula(&s.view)).map_err(|e| err(&e))? {
                    return Err("final state is safe".into());
                }
            }
            Violation::Uncovered { action, args } => {
                let posts = ts.step(last, action, args).map_err(|e| err(&e))?;
                if posts.is_empty() {
                    return Err(format!("{action} is not enabled in the final state"));
                }
                let inst = ActionInstance {
                    action: action.clone(),
                    args: args.clone(),
                };
                for e in s.outgoing(qs[n - 1]) {
                    for post in &posts {
                        if s.instance_satisfies(ts, e, last, post, &inst, &v).map_err(|e| err(&e))? {
                            return Err(format!("edge to {} covers the final transition", s.phases[e.to]));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct InferStats {
    pub frames: usize,
    pub lemmas: usize,
    pub obligations: usize,
    pub pushes: usize,
    pub queries: u64,
    pub elapsed_ms: u128,
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseLemmas {
    pub phase: String,
    pub lemmas: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FrameDump {
    pub index: usize,
    pub phases: Vec<PhaseLemmas>,
}

#[derive(Clone, Debug)]
pub enum InferOutcome {
    Converged(PhaseAutomaton),
    Trace(Box<AbstractTrace>),
    Timeout,
    Inconclusive(String),
}

#[derive(Clone, Debug)]
pub struct InferResult {
    pub outcome: InferOutcome,
    pub stats: InferStats,
    /// Every lemma with its final level.
    pub lemmas: Vec<Lemma>,
    /// The frontier frame index at termination.
    pub frontier: usize,
}

impl InferResult {
    /// `F_1 .. F_frontier` as printed clauses.
    pub fn frames(&self, s: &PhaseStructure) -> Vec<FrameDump> {
        (1..=self.frontier)
            .map(|i| FrameDump {
                index: i,
                phases: s
                    .phases
                    .iter()
                    .enumerate()
                    .map(|(q, name)| PhaseLemmas {
                        phase: name.clone(),
                        lemmas: frame_lemmas(&self.lemmas, q, i).map(|f| f.to_string()).collect(),
                    })
                    .collect(),
            })
            .collect()
    }

    /// The conjunction of `F_i(q)`, for `i >= 1`.
    pub fn frame(&self, q: usize, i: usize) -> Formula {
        Formula::and(frame_lemmas(&self.lemmas, q, i).cloned())
    }
}

fn frame_lemmas(lemmas: &[Lemma], q: usize, i: usize) -> impl Iterator<Item = &Formula> {
    lemmas
        .iter()
        .filter(move |l| l.phase == q && l.level >= i)
        .map(|l| &l.formula)
}

/// The transition from an obligation's state to a superstructure of its
/// parent's state.
#[derive(Clone, Debug)]
struct Link {
    inst: ActionInstance,
    post: Structure,
    /// The full valuation of the predecessor model, including the parent's
    /// diagram variables.
    valuation: Valuation,
}

#[derive(Clone, Debug)]
struct Obligation {
    phase: usize,
    frame: usize,
    state: Structure,
    valuation: Valuation,
    diagram: Diagram,
    parent: Option<usize>,
    link: Option<Link>,
    /// Set on obligations found at the frontier.
    violation: Option<Violation>,
}

enum Stop {
    Trace(Box<AbstractTrace>),
    Timeout,
    Unknown(String),
    Invalid(String),
    Error(InferError),
}

impl<E: Into<InferError>> From<E> for Stop {
    fn from(e: E) -> Self {
        Stop::Error(e.into())
    }
}

/// Infers characterizations for the phases of `s`, or returns an abstract
/// counterexample trace showing that no universal ones exist.
pub fn infer<'a, 'w>(
    ts: &'a TransitionSystem,
    s: &'a PhaseStructure,
    solver: &'a mut SolverSession,
    config: &'a InferConfig,
    log: Option<&'a mut (dyn Write + 'w)>,
) -> Result<InferResult, InferError> {
    s.check_guards()?;
    let queries0 = solver.stats().queries;
    let mut pdr = Pdr {
        ts,
        s,
        solver,
        config,
        log,
        start: Instant::now(),
        lemmas: Vec::new(),
        obligations: Vec::new(),
        queue: BTreeSet::new(),
        seq: 0,
        frontier: 0,
        stats: InferStats::default(),
    };
    let outcome = match pdr.run() {
        Ok(a) => InferOutcome::Converged(a),
        Err(Stop::Trace(t)) => InferOutcome::Trace(t),
        Err(Stop::Timeout) => InferOutcome::Timeout,
        Err(Stop::Unknown(r)) => InferOutcome::Inconclusive(format!("solver returned unknown: {r}")),
        Err(Stop::Invalid(r)) => InferOutcome::Inconclusive(format!("extracted trace failed validation: {r}")),
        Err(Stop::Error(e)) => return Err(e),
    };
    let mut stats = pdr.stats.clone();
    stats.queries = pdr.solver.stats().queries - queries0;
    stats.elapsed_ms = pdr.start.elapsed().as_millis();
    stats.frames = pdr.frontier;
    let kind = match &outcome {
        InferOutcome::Converged(_) => "converged",
        InferOutcome::Trace(_) => "trace",
        InferOutcome::Timeout => "timeout",
        InferOutcome::Inconclusive(_) => "inconclusive",
    };
    pdr.event(json!({"event": "done", "outcome": kind, "stats": stats}));
    Ok(InferResult {
        outcome,
        stats,
        lemmas: pdr.lemmas,
        frontier: pdr.frontier,
    })
}

struct Pdr<'a, 'w> {
    ts: &'a TransitionSystem,
    s: &'a PhaseStructure,
    solver: &'a mut SolverSession,
    config: &'a InferConfig,
    log: Option<&'a mut (dyn Write + 'w)>,
    start: Instant,
    lemmas: Vec<Lemma>,
    obligations: Vec<Obligation>,
    /// (frame, arrival, obligation index).
    queue: BTreeSet<(usize, u64, usize)>,
    seq: u64,
    frontier: usize,
    stats: InferStats,
}

impl Pdr<'_, '_> {
    fn event(&mut self, e: serde_json::Value) {
        if let Some(w) = self.log.as_mut() {
            let _ = writeln!(w, "{e}");
        }
    }

    fn run(&mut self) -> Result<PhaseAutomaton, Stop> {
        let init_phase = self.s.initial;
        if let Some((m, viol)) = self.find_violation(init_phase, 0)? {
            let root = self.new_obligation(&m, init_phase, 0, None, None, Some(viol))?;
            return Err(self.trace_from(root, None));
        }
        self.frontier = 1;
        loop {
            let sizes: Vec<usize> = (0..self.s.phases.len())
                .map(|q| frame_lemmas(&self.lemmas, q, self.frontier).count())
                .collect();
            let f = self.frontier;
            self.event(json!({"event": "frame", "frame": f, "lemmas": sizes}));
            self.block_frontier()?;
            self.push()?;
            if let Some(i) = self.converged() {
                return self.finish(i);
            }
            if self.frontier >= self.config.max_frames {
                return Err(Stop::Timeout);
            }
            self.frontier += 1;
        }
    }

    fn block_frontier(&mut self) -> Result<(), Stop> {
        loop {
            let mut found = None;
            for q in 0..self.s.phases.len() {
                if let Some(v) = self.find_violation(q, self.frontier)? {
                    found = Some((q, v));
                    break;
                }
            }
            let Some((q, (m, viol))) = found else { return Ok(()) };
            let root = self.new_obligation(&m, q, self.frontier, None, None, Some(viol))?;
            self.enqueue(root, self.frontier);
            while let Some(&(i, seq, idx)) = self.queue.iter().next() {
                self.queue.remove(&(i, seq, idx));
                self.obligations[idx].frame = i;
                self.block(idx)?;
            }
        }
    }

    fn enqueue(&mut self, idx: usize, frame: usize) {
        self.seq += 1;
        self.queue.insert((frame, self.seq, idx));
    }

    fn frame_formula(&self, q: usize, i: usize) -> Formula {
        if i == 0 {
            if q == self.s.initial {
                self.ts.init.clone()
            } else {
                Formula::False
            }
        } else {
            Formula::and(frame_lemmas(&self.lemmas, q, i).cloned())
        }
    }

    fn query(
        &mut self,
        parts: &[(&Formula, usize)],
        assumptions: &[(&Formula, usize)],
        minimize: bool,
    ) -> Result<(Option<Model>, Vec<usize>), Stop> {
        if let Some(b) = self.config.budget {
            if self.start.elapsed() > b {
                return Err(Stop::Timeout);
            }
        }
        let opts = QueryOptions {
            minimize,
            sizes: None,
        };
        match self.solver.check_assuming(parts, assumptions, &opts) {
            (SatResult::Sat(m), _) => Ok((Some(*m), vec![])),
            (SatResult::Unsat, core) => Ok((None, core)),
            (SatResult::Unknown(r), _) => Err(Stop::Unknown(r)),
        }
    }

    /// A state in `F_i(q)` that is unsafe or enables an action no outgoing
    /// edge accepts.
    fn find_violation(&mut self, q: usize, i: usize) -> Result<Option<(Model, Violation)>, Stop> {
        let frame = self.frame_formula(q, i);
        for c in self.ts.safety_formula(&self.s.view).conjuncts() {
            let neg = Formula::not(c);
            if let (Some(m), _) = self.query(&[(&frame, 0), (&neg, 0)], &[], true)? {
                return Ok(Some((m, Violation::Safety)));
            }
        }
        for act in &self.ts.actions {
            let ps = act.fresh_params("a");
            let goal = covering_goal(self.s, q, &act.name, &ps);
            if goal == Formula::True {
                continue;
            }
            let enabled = enabled_formula(act, &goal, &ps);
            let neg = Formula::not(goal);
            if let (Some(m), _) = self.query(&[(&frame, 0), (&enabled, 0), (&neg, 0)], &[], true)? {
                let args = ps.iter().map(|p| param_value(&m, p)).collect();
                let viol = Violation::Uncovered {
                    action: act.name.clone(),
                    args,
                };
                return Ok(Some((m, viol)));
            }
        }
        Ok(None)
    }

    fn new_obligation(
        &mut self,
        m: &Model,
        phase: usize,
        frame: usize,
        parent: Option<usize>,
        link: Option<Link>,
        violation: Option<Violation>,
    ) -> Result<usize, Stop> {
        let valuation = m.restrict(&self.s.view);
        let d = diagram(&self.ts.vocab, m.pre(), &valuation)?;
        self.stats.obligations += 1;
        let size = m.pre().size();
        self.event(json!({
            "event": "obligation",
            "phase": self.s.phases[phase],
            "frame": frame,
            "elements": size,
        }));
        self.obligations.push(Obligation {
            phase,
            frame,
            state: m.pre().clone(),
            valuation,
            diagram: d,
            parent,
            link,
            violation,
        });
        Ok(self.obligations.len() - 1)
    }

    /// The predecessor queries of an obligation at phase `q`, frame `i`:
    /// one per incoming edge and action, as (source phase, action name).
    fn predecessor_sources(&self, q: usize, i: usize) -> Vec<(usize, usize, String)> {
        let mut out = Vec::new();
        for (ei, e) in self.s.edges.iter().enumerate() {
            if e.to != q || (i == 1 && e.from != self.s.initial) {
                continue;
            }
            for a in e.label.actions() {
                out.push((ei, e.from, a.to_string()));
            }
        }
        out
    }

    fn block(&mut self, idx: usize) -> Result<(), Stop> {
        let (q, i) = (self.obligations[idx].phase, self.obligations[idx].frame);
        let d = self.obligations[idx].diagram.clone();
        let lits: Vec<Formula> = d.literals.iter().map(|l| d.literal_formula(l)).collect();

        // Already excluded by a lemma learned since it was queued.
        let frame = self.frame_formula(q, i);
        let conj = Formula::and(lits.iter().cloned());
        if self.query(&[(&frame, 0), (&conj, 0)], &[], false)?.0.is_none() {
            if i < self.frontier {
                self.enqueue(idx, i + 1);
            }
            return Ok(());
        }

        let mut cores: BTreeSet<usize> = BTreeSet::new();
        if q == self.s.initial {
            let assumptions: Vec<(&Formula, usize)> = lits.iter().map(|f| (f, 0)).collect();
            let init = self.ts.init.clone();
            match self.query(&[(&init, 0)], &assumptions, false)? {
                (Some(m), _) => {
                    let mut val = m.valuation.clone();
                    val.retain(|v, _| self.s.view.contains(v) || d.elems.iter().any(|(x, _)| x == v));
                    return Err(self.trace_from(idx, Some((m.pre().clone(), val))));
                }
                (None, core) => cores.extend(core),
            }
        }
        for (ei, from, action) in self.predecessor_sources(q, i) {
            let act = self.ts.action(&action).expect("checked action").clone();
            let ps = act.fresh_params("a");
            let step = Formula::and([act.body_with(&ps), self.s.edges[ei].label.constraint(&action, &ps)]);
            let pre = self.frame_formula(from, i - 1);
            let assumptions: Vec<(&Formula, usize)> = lits.iter().map(|f| (f, 1)).collect();
            match self.query(&[(&pre, 0), (&step, 0)], &assumptions, true)? {
                (Some(m), _) => {
                    let inst = ActionInstance {
                        action,
                        args: ps.iter().map(|p| param_value(&m, p)).collect(),
                    };
                    let link = Link {
                        inst,
                        post: m.post().clone(),
                        valuation: m.valuation.clone(),
                    };
                    let child = self.new_obligation(&m, from, i - 1, Some(idx), Some(link), None)?;
                    if i == 1 {
                        return Err(self.trace_from(child, None));
                    }
                    self.enqueue(child, i - 1);
                    self.enqueue(idx, i);
                    return Ok(());
                }
                (None, core) => cores.extend(core),
            }
        }

        let lemma = self.generalize(idx, cores)?;
        self.learn(q, lemma, i);
        if i < self.frontier {
            self.enqueue(idx, i + 1);
        }
        Ok(())
    }

    /// Whether the sub-diagram made of the `keep` literals is unreachable at
    /// `(q, i)`. Returns the union of the unsat cores if so.
    fn blocked(&mut self, idx: usize, keep: &BTreeSet<usize>) -> Result<Option<BTreeSet<usize>>, Stop> {
        let (q, i) = (self.obligations[idx].phase, self.obligations[idx].frame);
        let d = &self.obligations[idx].diagram;
        let order: Vec<usize> = keep.iter().copied().collect();
        let lits: Vec<Formula> = order.iter().map(|&j| d.literal_formula(&d.literals[j])).collect();
        let mut union = BTreeSet::new();
        if q == self.s.initial {
            let assumptions: Vec<(&Formula, usize)> = lits.iter().map(|f| (f, 0)).collect();
            let init = self.ts.init.clone();
            match self.query(&[(&init, 0)], &assumptions, false)? {
                (Some(_), _) => return Ok(None),
                (None, core) => union.extend(core.into_iter().map(|c| order[c])),
            }
        }
        for (ei, from, action) in self.predecessor_sources(q, i) {
            let act = self.ts.action(&action).expect("checked action");
            let ps = act.fresh_params("a");
            let step = Formula::and([act.body_with(&ps), self.s.edges[ei].label.constraint(&action, &ps)]);
            let pre = self.frame_formula(from, i - 1);
            let assumptions: Vec<(&Formula, usize)> = lits.iter().map(|f| (f, 1)).collect();
            match self.query(&[(&pre, 0), (&step, 0)], &assumptions, false)? {
                (Some(_), _) => return Ok(None),
                (None, core) => union.extend(core.into_iter().map(|c| order[c])),
            }
        }
        Ok(Some(union))
    }

    /// Drops diagram literals one at a time, in diagram order, keeping each
    /// drop that leaves the obligation blocked.
    fn generalize(&mut self, idx: usize, cores: BTreeSet<usize>) -> Result<Formula, Stop> {
        let n = self.obligations[idx].diagram.literals.len();
        let mut keep: BTreeSet<usize> = if self.config.unsat_cores {
            cores
        } else {
            (0..n).collect()
        };
        for j in 0..n {
            if !keep.contains(&j) {
                continue;
            }
            let mut candidate = keep.clone();
            candidate.remove(&j);
            if let Some(core) = self.blocked(idx, &candidate)? {
                keep = if self.config.unsat_cores { core } else { candidate };
            }
        }
        let d = &self.obligations[idx].diagram;
        Ok(d.restrict(|j, _| keep.contains(&j)).negation_substituted())
    }

    fn learn(&mut self, q: usize, formula: Formula, level: usize) {
        self.stats.lemmas += 1;
        self.event(json!({
            "event": "lemma",
            "phase": self.s.phases[q],
            "frame": level,
            "lemma": formula.to_string(),
        }));
        if let Some(l) = self.lemmas.iter_mut().find(|l| l.phase == q && l.formula == formula) {
            l.level = l.level.max(level);
        } else {
            self.lemmas.push(Lemma {
                phase: q,
                formula,
                level,
            });
        }
    }

    /// Moves each lemma at level `i` to `i + 1` when every transition into
    /// its phase from `F_i` preserves it.
    fn push(&mut self) -> Result<(), Stop> {
        for i in 1..self.frontier {
            for li in 0..self.lemmas.len() {
                if self.lemmas[li].level != i {
                    continue;
                }
                let q = self.lemmas[li].phase;
                let neg = Formula::not(self.lemmas[li].formula.clone());
                let mut holds = true;
                for (ei, from, action) in self.predecessor_sources(q, i + 1) {
                    let act = self.ts.action(&action).expect("checked action");
                    let ps = act.fresh_params("a");
                    let step = Formula::and([act.body_with(&ps), self.s.edges[ei].label.constraint(&action, &ps)]);
                    let pre = self.frame_formula(from, i);
                    if self.query(&[(&pre, 0), (&step, 0), (&neg, 1)], &[], false)?.0.is_some() {
                        holds = false;
                        break;
                    }
                }
                if holds {
                    self.lemmas[li].level = i + 1;
                    self.stats.pushes += 1;
                }
            }
        }
        Ok(())
    }

    /// The least `i` with `F_i = F_{i+1}`.
    fn converged(&self) -> Option<usize> {
        (1..self.frontier).find(|&i| !self.lemmas.iter().any(|l| l.level == i))
    }

    fn finish(&mut self, i: usize) -> Result<PhaseAutomaton, Stop> {
        let eta = (0..self.s.phases.len()).map(|q| self.frame_formula(q, i)).collect();
        let a = PhaseAutomaton {
            structure: self.s.clone(),
            eta,
        };
        self.event(json!({"event": "converged", "frame": i}));
        let report = vcgen::check(self.ts, &a, self.solver)?;
        match report.verdict() {
            Verdict::Valid => Ok(a),
            Verdict::Inconclusive => Err(Stop::Unknown("while re-checking the result".into())),
            Verdict::Invalid => {
                let names: Vec<String> = report.failures().map(|(vc, _)| vc.name.clone()).collect();
                Err(Stop::Error(InferError::Unsound(names.join(", "))))
            }
        }
    }

    /// Builds and validates the trace from the chain starting at `bottom`.
    /// `init` is an initial state embedding the bottom obligation's state,
    /// with a valuation of the view and the bottom's diagram variables; when
    /// absent the bottom state is itself initial.
    fn trace_from(&mut self, bottom: usize, init: Option<(Structure, Valuation)>) -> Stop {
        let t = self.build_trace(bottom, init);
        match t.validate(self.ts, self.s) {
            Ok(()) => {
                let n = t.len();
                self.event(json!({"event": "trace", "length": n}));
                Stop::Trace(Box::new(t))
            }
            Err(e) => Stop::Invalid(e),
        }
    }

    fn build_trace(&self, bottom: usize, init: Option<(Structure, Valuation)>) -> AbstractTrace {
        let mut chain = vec![bottom];
        while let Some(p) = self.obligations[*chain.last().unwrap()].parent {
            chain.push(p);
        }
        let n = chain.len();
        let ob = |k: usize| &self.obligations[chain[k]];
        let (first, first_val) = init.unwrap_or_else(|| {
            let o = ob(0);
            let mut val = o.valuation.clone();
            val.extend(o.diagram.elems.iter().cloned());
            (o.state.clone(), val)
        });
        let view = &self.s.view;
        let canon: Valuation = first_val.iter().filter(|(w, _)| view.contains(w)).map(|(w, e)| (w.clone(), e.clone())).collect();

        let mut states = vec![first];
        let mut abstractions = Vec::new();
        let mut steps = Vec::new();
        let mut last_val = first_val;
        let mut last_map: BTreeMap<Elem, Elem> = BTreeMap::new();
        for k in 0..n - 1 {
            let o = ob(k);
            let link = o.link.as_ref().expect("non-root obligations carry a link");
            let map = canonical_names(&o.state, &link.valuation, &canon);
            abstractions.push(rename(&o.state, &map));
            states.push(rename(&link.post, &map));
            steps.push(ActionInstance {
                action: link.inst.action.clone(),
                args: link.inst.args.iter().map(|e| map.get(e).cloned().unwrap_or_else(|| e.clone())).collect(),
            });
            last_val = link.valuation.clone();
            last_map = map;
        }
        let root = ob(n - 1);
        let violation = match root.violation.clone().expect("root obligations carry a violation") {
            Violation::Safety => Violation::Safety,
            Violation::Uncovered { action, args } => {
                let args = args
                    .iter()
                    .map(|a| {
                        let var = &root.diagram.elems.iter().find(|(_, e)| e == a).expect("diagram element").0;
                        let e = last_val[var].clone();
                        last_map.get(&e).cloned().unwrap_or(e)
                    })
                    .collect();
                Violation::Uncovered { action, args }
            }
        };
        AbstractTrace {
            view: view.clone(),
            valuation: canon.iter().map(|(w, e)| (w.name.clone(), e.clone())).collect(),
            phases: chain.iter().map(|&i| self.s.phases[self.obligations[i].phase].clone()).collect(),
            states,
            abstractions,
            steps,
            violation,
        }
    }
}

/// The model's value for an action parameter. Parameters the query does not
/// mention are unconstrained and take the first element of their sort.
fn param_value(m: &Model, p: &Var) -> Elem {
    m.valuation
        .get(p)
        .cloned()
        .unwrap_or_else(|| m.pre().elems(&p.sort)[0].clone())
}

/// Renames the elements of a model so the view variables denote the
/// elements named by `canon`, moving clashing elements out of the way.
fn canonical_names(s: &Structure, val: &Valuation, canon: &Valuation) -> BTreeMap<Elem, Elem> {
    let mut map: BTreeMap<Elem, Elem> = BTreeMap::new();
    for (w, target) in canon {
        if let Some(e) = val.get(w) {
            map.insert(e.clone(), target.clone());
        }
    }
    let mut taken: BTreeSet<Elem> = map.values().cloned().collect();
    for elems in s.domain.values() {
        for e in elems {
            if map.contains_key(e) {
                continue;
            }
            let mut name = e.clone();
            while taken.contains(&name) {
                name.push('_');
            }
            taken.insert(name.clone());
            map.insert(e.clone(), name);
        }
    }
    map
}

fn rename(s: &Structure, map: &BTreeMap<Elem, Elem>) -> Structure {
    let f = |e: &Elem| map.get(e).cloned().unwrap_or_else(|| e.clone());
    Structure {
        domain: s
            .domain
            .iter()
            .map(|(sort, es)| (sort.clone(), es.iter().map(f).collect()))
            .collect(),
        relations: s
            .relations
            .iter()
            .map(|(r, ts)| (r.clone(), ts.iter().map(|t| t.iter().map(f).collect()).collect()))
            .collect(),
        constants: s.constants.iter().map(|(c, e)| (c.clone(), f(e))).collect(),
    }
}

#[derive(Clone, Debug)]
pub enum Diagnosis {
    /// A real execution along the trace's phases ending in its violation.
    Concrete(Box<AbstractTrace>),
    /// No such execution exists within the bound.
    Artifact,
    Inconclusive(String),
}

/// Bounded model checking along the phase skeleton of `t`: searches for a
/// concrete trace of the same length that follows the same edges and ends in
/// the same kind of violation.
pub fn diagnose(
    ts: &TransitionSystem,
    s: &PhaseStructure,
    t: &AbstractTrace,
    bound: usize,
    solver: &mut SolverSession,
) -> Result<Diagnosis, InferError> {
    let n = t.len();
    if n == 0 {
        return Err(InferError::TraceMismatch("empty trace".into()));
    }
    if bound < n {
        return Err(InferError::BoundTooSmall { bound, len: n });
    }
    if t.view != s.view {
        return Err(InferError::TraceMismatch("view differs from the structure".into()));
    }
    let qs: Vec<usize> = t
        .phases
        .iter()
        .map(|p| s.phase_index(p).ok_or_else(|| InferError::TraceMismatch(format!("unknown phase {p}"))))
        .collect::<Result<_, _>>()?;
    if qs[0] != s.initial {
        return Err(InferError::TraceMismatch("trace does not start in the initial phase".into()));
    }
    let mut parts: Vec<(Formula, usize)> = vec![(ts.init.clone(), 0)];
    let mut edges = Vec::new();
    for k in 0..n - 1 {
        let e = s
            .edges
            .iter()
            .find(|e| e.from == qs[k] && e.to == qs[k + 1])
            .ok_or_else(|| InferError::TraceMismatch(format!("no edge {} -> {}", t.phases[k], t.phases[k + 1])))?;
        parts.push((s.label_formula(ts, e), k));
        edges.push(e);
    }
    let mut params = Vec::new();
    match &t.violation {
        Violation::Safety => parts.push((Formula::not(ts.safety_formula(&s.view)), n - 1)),
        Violation::Uncovered { action, .. } => {
            let act = ts
                .action(action)
                .ok_or_else(|| InferError::TraceMismatch(format!("unknown action {action}")))?;
            let ps = act.fresh_params("d");
            let goal = covering_goal(s, qs[n - 1], action, &ps);
            parts.push((enabled_formula(act, &goal, &ps), n - 1));
            parts.push((Formula::not(goal), n - 1));
            params = ps;
        }
    }
    let refs: Vec<(&Formula, usize)> = parts.iter().map(|(f, c)| (f, *c)).collect();
    let m = match solver.check_with(&refs, &QueryOptions::default()) {
        SatResult::Unsat => return Ok(Diagnosis::Artifact),
        SatResult::Unknown(r) => return Ok(Diagnosis::Inconclusive(r)),
        SatResult::Sat(m) => m,
    };
    let states: Vec<Structure> = m.states[..n].to_vec();
    let v = m.restrict(&s.view);
    let mut steps = Vec::new();
    for k in 0..n - 1 {
        let inst = ts
            .enabled(&states[k])?
            .into_iter()
            .find(|(inst, post)| {
                post == &states[k + 1]
                    && s.instance_satisfies(ts, edges[k], &states[k], post, inst, &v).unwrap_or(false)
            })
            .map(|(inst, _)| inst);
        match inst {
            Some(inst) => steps.push(inst),
            None => return Ok(Diagnosis::Inconclusive(format!("no action instance explains step {k}"))),
        }
    }
    let violation = match &t.violation {
        Violation::Safety => Violation::Safety,
        Violation::Uncovered { action, .. } => Violation::Uncovered {
            action: action.clone(),
            args: params.iter().map(|p| param_value(&m, p)).collect(),
        },
    };
    Ok(Diagnosis::Concrete(Box::new(AbstractTrace {
        view: s.view.clone(),
        valuation: v.iter().map(|(w, e)| (w.name.clone(), e.clone())).collect(),
        phases: t.phases.clone(),
        abstractions: states[..n - 1].to_vec(),
        states,
        steps,
        violation,
    })))
}
