use std::collections::{BTreeMap, HashSet};

use itertools::Itertools;

use super::*;
use crate::automaton::view_valuations;
use crate::frontend::parse_model;
use crate::logic::Sort;
use crate::solver::tests::test_config;
use crate::system::compile;

const KVR: &str = include_str!("../../../../corpus/kvr.pfz");

const TOKEN: &str = "\
sort node
relation has(node)
relation free
init free
init forall n: node. !has(n)
action take(n: node) {
  require free
  has(n) := true
  free := false
}
action give(n: node) {
  require has(n)
  has(n) := false
  free := true
}
safety [m: node] forall n: node. has(m) & has(n) -> m = n
automaton {
  view m: node
  init phase Idle
  phase Mine
  Idle -> Mine on take(m)
  self Idle on take(x) where x != m
  self Idle on give(x) where x != m
  Mine -> Idle on give(m)
}
";

fn load(src: &str) -> (TransitionSystem, PhaseStructure) {
    let m = parse_model(src).unwrap();
    let ts = compile(&m).unwrap();
    let s = PhaseStructure::from_model(&m, &ts).unwrap().unwrap();
    (ts, s)
}

fn run(ts: &TransitionSystem, s: &PhaseStructure, solver: &mut SolverSession) -> InferResult {
    let mut log = Vec::new();
    let r = infer(ts, s, solver, &InferConfig::default(), Some(&mut log)).unwrap();
    // Every progress line is a JSON object.
    for line in String::from_utf8(log).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["event"].is_string());
    }
    r
}

/// Every structure over the given domain sizes, by enumerating all relation
/// interpretations. Only usable for tiny vocabularies.
fn all_structures(ts: &TransitionSystem, sizes: &BTreeMap<Sort, usize>) -> Vec<Structure> {
    let base = Structure::with_sizes(&ts.vocab, sizes).unwrap();
    let mut atoms = Vec::new();
    for r in &ts.vocab.relations {
        let cols: Vec<Vec<Elem>> = r.args.iter().map(|s| base.elems(s).to_vec()).collect();
        let tuples: Vec<Vec<Elem>> = if cols.is_empty() {
            vec![vec![]]
        } else {
            cols.into_iter().multi_cartesian_product().collect()
        };
        atoms.extend(tuples.into_iter().map(|t| (r.name.clone(), t)));
    }
    assert!(atoms.len() <= 12);
    (0u32..1 << atoms.len())
        .map(|bits| {
            let mut s = base.clone();
            for (i, (r, t)) in atoms.iter().enumerate() {
                s.set(r, t.clone(), bits & (1 << i) != 0);
            }
            s
        })
        .collect()
}

/// `(state, phase)` pairs reachable within `depth` steps along the
/// structure, under the view valuation `v`.
fn reachable(
    ts: &TransitionSystem,
    s: &PhaseStructure,
    inits: &[Structure],
    v: &Valuation,
    depth: usize,
) -> Vec<HashSet<(Structure, usize)>> {
    let mut layers = vec![inits.iter().map(|st| (st.clone(), s.initial)).collect::<HashSet<_>>()];
    for _ in 0..depth {
        let mut next = layers.last().unwrap().clone();
        for (st, q) in layers.last().unwrap() {
            for (inst, post) in ts.enabled(st).unwrap() {
                for e in s.outgoing(*q) {
                    if s.instance_satisfies(ts, e, st, &post, &inst, v).unwrap() {
                        next.insert((post.clone(), e.to));
                    }
                }
            }
        }
        layers.push(next);
    }
    layers
}

#[test]
fn token_structure_converges_and_frames_are_sound() {
    let Some(cfg) = test_config() else { return };
    let (ts, s) = load(TOKEN);
    let mut solver = SolverSession::new(&cfg, &ts.vocab).unwrap();
    let r = run(&ts, &s, &mut solver);
    let InferOutcome::Converged(a) = &r.outcome else { panic!("{:?}", r.outcome) };
    assert_eq!(vcgen::check(&ts, a, &mut solver).unwrap().verdict(), Verdict::Valid);
    assert!(r.stats.lemmas > 0 && r.stats.queries > 0);

    // Lemmas never exclude initial states of the initial phase.
    for l in r.lemmas.iter().filter(|l| l.phase == s.initial) {
        assert!(solver.check(&[&ts.init, &Formula::not(l.formula.clone())]).is_unsat(), "{}", l.formula);
    }

    // Every state reachable at q within i steps satisfies F_i(q).
    for n in 1..=2 {
        let sizes = BTreeMap::from([(Sort::new("node"), n)]);
        let structs = all_structures(&ts, &sizes);
        let inits: Vec<Structure> = structs
            .iter()
            .filter(|st| eval(st, &Valuation::new(), &ts.init).unwrap())
            .cloned()
            .collect();
        for v in view_valuations(&inits[0], &s.view) {
            let layers = reachable(&ts, &s, &inits, &v, r.frontier);
            for (i, layer) in layers.iter().enumerate().take(r.frontier + 1).skip(1) {
                for (st, q) in layer {
                    assert!(eval(st, &v, &r.frame(*q, i)).unwrap(), "F_{i}({}) excludes a reachable state", s.phases[*q]);
                }
            }
        }
    }

    // Monotone by construction: F_{i+1}(q) lemmas are a subset of F_i(q).
    let dump = r.frames(&s);
    for w in dump.windows(2) {
        for (a, b) in w[0].phases.iter().zip(&w[1].phases) {
            assert!(b.lemmas.iter().all(|l| a.lemmas.contains(l)));
        }
    }
}

#[test]
fn trivially_safe_system_converges_with_true() {
    let Some(cfg) = test_config() else { return };
    let src = TOKEN.replace("safety [m: node] forall n: node. has(m) & has(n) -> m = n\n", "");
    let m = parse_model(&src).unwrap();
    let ts = compile(&m).unwrap();
    let wrapped = PhaseAutomaton::wrap_invariant(Formula::True, &ts);
    let mut solver = SolverSession::new(&cfg, &ts.vocab).unwrap();
    let r = run(&ts, &wrapped.structure, &mut solver);
    let InferOutcome::Converged(a) = r.outcome else { panic!("{:?}", r.outcome) };
    assert_eq!(a.eta, vec![Formula::True]);
    assert_eq!(r.stats.lemmas, 0);
    assert_eq!(r.frontier, 2);
}

#[test]
fn unsafe_initial_state_gives_a_one_state_trace() {
    let Some(cfg) = test_config() else { return };
    let src = TOKEN.replace("init forall n: node. !has(n)\n", "");
    let (ts, s) = load(&src);
    let mut solver = SolverSession::new(&cfg, &ts.vocab).unwrap();
    let r = run(&ts, &s, &mut solver);
    let InferOutcome::Trace(t) = r.outcome else { panic!("{:?}", r.outcome) };
    assert_eq!(t.len(), 1);
    assert_eq!(t.violation, Violation::Safety);
    t.validate(&ts, &s).unwrap();
    assert!(t.is_concrete());
    let Diagnosis::Concrete(w) = diagnose(&ts, &s, &t, 1, &mut solver).unwrap() else { panic!() };
    w.validate(&ts, &s).unwrap();
    assert!(matches!(diagnose(&ts, &s, &t, 0, &mut solver), Err(InferError::BoundTooSmall { .. })));
}

#[test]
fn unsafe_reachable_state_is_diagnosed_concrete() {
    let Some(cfg) = test_config() else { return };
    // `take` no longer requires the token.
    let src = TOKEN.replace("  require free\n", "");
    let (ts, s) = load(&src);
    let mut solver = SolverSession::new(&cfg, &ts.vocab).unwrap();
    let r = run(&ts, &s, &mut solver);
    let InferOutcome::Trace(t) = r.outcome else { panic!("{:?}", r.outcome) };
    t.validate(&ts, &s).unwrap();
    assert!(t.len() >= 2);
    let Diagnosis::Concrete(w) = diagnose(&ts, &s, &t, t.len(), &mut solver).unwrap() else { panic!() };
    w.validate(&ts, &s).unwrap();
    assert!(w.is_concrete());
    assert_eq!(w.phases, t.phases);
}

#[test]
fn deleted_edge_gives_an_uncovered_transition() {
    let Some(cfg) = test_config() else { return };
    let line = "  T -> O on recv_transfer_msg(*, *, k, *, *)\n";
    assert!(KVR.contains(line));
    let (ts, s) = load(&KVR.replacen(line, "", 1));
    let mut solver = SolverSession::new(&cfg, &ts.vocab).unwrap();
    let r = run(&ts, &s, &mut solver);
    let InferOutcome::Trace(t) = r.outcome else { panic!("{:?}", r.outcome) };
    t.validate(&ts, &s).unwrap();
    assert!(matches!(&t.violation, Violation::Uncovered { action, .. } if action == "recv_transfer_msg"));
    assert_eq!(t.phases.last().unwrap(), "T");
    // The JSON form round-trips.
    let back: AbstractTrace = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
    assert_eq!(back, *t);
    let Diagnosis::Concrete(w) = diagnose(&ts, &s, &t, t.len(), &mut solver).unwrap() else { panic!() };
    w.validate(&ts, &s).unwrap();
}

#[test]
fn handcrafted_trace_on_a_safe_model_is_an_artifact() {
    let Some(cfg) = test_config() else { return };
    let (ts, s) = load(TOKEN);
    let mut solver = SolverSession::new(&cfg, &ts.vocab).unwrap();
    let mut st = Structure::with_sizes(&ts.vocab, &BTreeMap::from([(Sort::new("node"), 2)])).unwrap();
    st.set("free", vec![], true);
    let inst = ActionInstance {
        action: "take".into(),
        args: vec!["node1".into()],
    };
    let post = ts.step(&st, "take", &inst.args).unwrap().remove(0);
    let t = AbstractTrace {
        view: s.view.clone(),
        valuation: BTreeMap::from([("m".to_string(), "node0".to_string())]),
        phases: vec!["Idle".into(), "Idle".into()],
        states: vec![st.clone(), post],
        abstractions: vec![st],
        steps: vec![inst],
        violation: Violation::Safety,
    };
    // Well formed apart from the violation itself.
    assert_eq!(t.validate(&ts, &s), Err("final state is safe".into()));
    assert!(matches!(diagnose(&ts, &s, &t, 2, &mut solver).unwrap(), Diagnosis::Artifact));
    let mut bad = t.clone();
    bad.phases[1] = "Nowhere".into();
    assert!(matches!(diagnose(&ts, &s, &bad, 2, &mut solver), Err(InferError::TraceMismatch(_))));
}
