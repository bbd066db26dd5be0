use std::collections::BTreeMap;

use itertools::Itertools;

use super::*;
use crate::frontend::parse_model;
use crate::logic::{Elem, Sort};
use crate::system::{compile, random_trace};

const KVR: &str = include_str!("../../../../corpus/kvr.pfz");

/// A token passed between nodes; `hold` is taken from `free`.
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
automaton {
  view m: node
  init phase Idle { invariant !has(m) }
  phase Mine { invariant has(m) }
  Idle -> Mine on take(m)
  self Idle on take(x) where x != m
  self Idle on give(x) where x != m
  Mine -> Idle on give(m)
}
";

fn load(src: &str) -> (TransitionSystem, PhaseAutomaton) {
    let m = parse_model(src).unwrap();
    let ts = compile(&m).unwrap();
    let a = PhaseAutomaton::from_model(&m, &ts).unwrap().unwrap();
    (ts, a)
}

/// Exhaustive search over phase sequences, with edge labels evaluated as
/// closed transition formulas.
fn naive_member(ts: &TransitionSystem, a: &PhaseAutomaton, states: &[Structure], v: &Valuation) -> bool {
    let s = &a.structure;
    let n = states.len();
    if n == 0 {
        return true;
    }
    let label = |q: usize, p: usize| {
        s.edges
            .iter()
            .find(|e| e.from == q && e.to == p)
            .map(|e| s.label_formula(ts, e))
            .unwrap_or(Formula::False)
    };
    let seqs = (1..n).map(|_| 0..s.phases.len()).multi_cartesian_product();
    let seqs: Vec<Vec<usize>> = if n == 1 { vec![vec![]] } else { seqs.collect() };
    seqs.into_iter().any(|rest| {
        let mut qs = vec![s.initial];
        qs.extend(rest);
        qs.iter().zip(states).all(|(&q, st)| eval(st, v, &a.eta[q]).unwrap())
            && (0..n - 1).all(|i| {
                eval_two_vocab(&states[i], &states[i + 1], v, &label(qs[i], qs[i + 1])).unwrap()
            })
    })
}

#[test]
fn kvr_structure() {
    let (ts, a) = load(KVR);
    let s = &a.structure;
    assert_eq!(s.phases, vec!["O", "T"]);
    assert_eq!(s.edge_pairs(), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    assert!(s.disabled_actions(&ts, 0).is_empty());
    assert_eq!(a.flatten().free_vars().len(), 0);
    assert!(matches!(a.flatten(), Formula::Forall(ref vs, _) if vs.len() == 1));
}

#[test]
fn disabled_actions_are_listed() {
    let (ts, a) = load(TOKEN);
    assert!(a.structure.disabled_actions(&ts, 0).is_empty());
    assert_eq!(a.structure.disabled_actions(&ts, 1), vec!["take"]);
}

#[test]
fn bad_guards_and_edges_are_rejected() {
    let bad = TOKEN.replace(
        "where x != m\n  self Idle on give",
        "where forall y: node. exists z: node. has(z) | y = z\n  self Idle on give",
    );
    let m = parse_model(&bad).unwrap();
    let ts = compile(&m).unwrap();
    assert!(matches!(
        PhaseStructure::from_model(&m, &ts),
        Err(AutomatonError::GuardAlternation { .. })
    ));
}

#[test]
fn trace_member_agrees_with_naive_search() {
    for (src, sizes) in [
        (TOKEN, BTreeMap::from([(Sort::new("node"), 2)])),
        (
            KVR,
            BTreeMap::from([
                (Sort::new("key"), 1),
                (Sort::new("value"), 1),
                (Sort::new("node"), 2),
                (Sort::new("seqnum"), 1),
            ]),
        ),
    ] {
        let (ts, a) = load(src);
        for seed in 0..6 {
            let t = random_trace(&ts, &sizes, 4, seed, None).unwrap();
            for v in view_valuations(&t.states[0], &a.structure.view) {
                let got = a.trace_member(&ts, &t.states, &v).unwrap();
                assert_eq!(got.is_some(), naive_member(&ts, &a, &t.states, &v), "seed {seed}");
                if let Some(qs) = got {
                    assert_eq!(qs.len(), t.states.len());
                    assert_eq!(qs[0], a.structure.initial);
                }
            }
        }
    }
}

#[test]
fn trace_member_rejects_a_bad_start() {
    let (ts, a) = load(TOKEN);
    let mut s = Structure::with_sizes(&ts.vocab, &BTreeMap::from([(Sort::new("node"), 1)])).unwrap();
    s.set("has", vec!["node0".into()], true);
    let v = Valuation::from([(a.structure.view[0].clone(), "node0".to_string())]);
    assert_eq!(a.trace_member(&ts, &[s.clone()], &v).unwrap(), None);
    s.set("has", vec!["node0".into()], false);
    assert_eq!(a.trace_member(&ts, &[s], &v).unwrap(), Some(vec![0]));
}

#[test]
fn determinization_removes_overlaps() {
    // `take(m)` is also accepted by the Idle self-loop.
    let src = TOKEN.replace("take(x) where x != m", "take(x)");
    let (ts, a) = load(&src);
    let Some(cfg) = crate::solver::tests::test_config() else { return };
    let mut solver = SolverSession::new(&cfg, &ts.vocab).unwrap();
    let w = a.structure.find_overlap(&ts, &mut solver).unwrap().expect("overlap");
    assert_eq!(w.action, "take");
    // The witness satisfies both labels.
    for p in [w.targets.0, w.targets.1] {
        let e = a.structure.edges.iter().find(|e| e.from == w.phase && e.to == p).unwrap();
        let args: Vec<Elem> = (0..1).map(|i| w.valuation[&Var::new(format!("_p{i}"), &Sort::new("node"))].clone()).collect();
        let inst = ActionInstance { action: "take".into(), args };
        assert!(a.structure.instance_satisfies(&ts, e, &w.pre, &w.post, &inst, &w.valuation).unwrap());
    }
    for order in [vec![0, 1], vec![1, 0]] {
        let d = a.determinize(&order).unwrap();
        assert!(d.structure.is_deterministic(&ts, &mut solver).unwrap());
    }
    let (ts, a) = load(TOKEN);
    assert!(a.structure.is_deterministic(&ts, &mut solver).unwrap());
    assert!(matches!(a.determinize(&[0, 0]), Err(AutomatonError::BadOrder)));
}

#[test]
fn determinize_keeps_the_earlier_edge() {
    let src = TOKEN.replace("take(x) where x != m", "take(x)");
    let (ts, a) = load(&src);
    let mut s = Structure::with_sizes(&ts.vocab, &BTreeMap::from([(Sort::new("node"), 1)])).unwrap();
    s.set("free", vec![], true);
    let post = ts.step(&s, "take", &["node0".into()]).unwrap().remove(0);
    let inst = ActionInstance { action: "take".into(), args: vec!["node0".into()] };
    let v = Valuation::from([(a.structure.view[0].clone(), "node0".to_string())]);
    let accepts = |st: &PhaseStructure, to: usize| {
        let e = st.edges.iter().find(|e| e.from == 0 && e.to == to).unwrap();
        st.instance_satisfies(&ts, e, &s, &post, &inst, &v).unwrap()
    };
    assert!(accepts(&a.structure, 0) && accepts(&a.structure, 1));
    let d = a.structure.determinize(&[0, 1]).unwrap();
    assert!(accepts(&d, 0) && !accepts(&d, 1));
    let d = a.structure.determinize(&[1, 0]).unwrap();
    assert!(!accepts(&d, 0) && accepts(&d, 1));
}

#[test]
fn wrap_invariant_has_one_self_loop() {
    let (ts, _) = load(TOKEN);
    let a = PhaseAutomaton::wrap_invariant(Formula::True, &ts);
    assert_eq!(a.structure.edge_pairs(), vec![(0, 0)]);
    assert!(a.structure.disabled_actions(&ts, 0).is_empty());
    assert_eq!(a.flatten(), Formula::True);
    let t = random_trace(&ts, &BTreeMap::from([(Sort::new("node"), 2)]), 5, 3, None).unwrap();
    assert_eq!(a.trace_member(&ts, &t.states, &Valuation::new()).unwrap(), Some(vec![0; t.states.len()]));
}
