use super::*;
use crate::frontend::parse_model;
use crate::logic::{eval, eval_two_vocab};
use crate::solver::tests::test_config;
use crate::system::compile;

const KVR: &str = include_str!("../../../../corpus/kvr.pfz");
const KVR_FLAT: &str = include_str!("../../../../corpus/kvr_flat.pfz");

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
  init phase Idle {
    invariant !has(m)
    invariant forall n: node. has(n) -> !free
    invariant forall n1: node, n2: node. has(n1) & has(n2) -> n1 = n2
  }
  phase Mine {
    invariant has(m) & !free
    invariant forall n: node. has(n) -> n = m
  }
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

fn count(vcs: &[Vc], pred: impl Fn(&VcKind) -> bool) -> usize {
    vcs.iter().filter(|v| pred(&v.kind)).count()
}

/// The countermodel satisfies the negated query, by direct evaluation.
fn assert_refutes(vc: &Vc, cm: &Countermodel) {
    let post = cm.post.as_ref().unwrap_or(&cm.pre);
    let refuted = vc.queries.iter().any(|q| {
        q.goal == cm.goal
            && eval_two_vocab(&cm.pre, post, &cm.valuation, &q.negation()).unwrap_or(false)
    });
    assert!(refuted, "countermodel does not refute {}", vc.name);
}

#[test]
fn vc_families_are_counted_per_phase_edge_and_action() {
    let (ts, a) = load(KVR);
    let vcs = gen_vcs(&ts, &a).unwrap();
    assert_eq!(count(&vcs, |k| *k == VcKind::Initiation), 1);
    assert_eq!(count(&vcs, |k| matches!(k, VcKind::Inductiveness { .. })), 4);
    assert_eq!(count(&vcs, |k| matches!(k, VcKind::Covering { .. })), 2 * 8);
    assert_eq!(count(&vcs, |k| matches!(k, VcKind::Safety { .. })), 2);
    let wrapped = PhaseAutomaton::wrap_invariant(Formula::True, &ts);
    let vcs = gen_vcs(&ts, &wrapped).unwrap();
    assert_eq!(vcs.len(), 1 + 1 + ts.actions.len() + 1);
    // The single self-loop accepts every action unconditionally.
    for vc in &vcs {
        if let VcKind::Covering { .. } = vc.kind {
            assert_eq!(vc.queries[0].goal, Formula::True);
        }
    }
}

#[test]
fn disabled_actions_give_false_covering_goals() {
    let (ts, a) = load(TOKEN);
    let vcs = edge_cover_vcs(&ts, &a, 1);
    let take = vcs.iter().find(|v| v.name == "covering(Mine, take)").unwrap();
    assert_eq!(take.queries[0].goal, Formula::False);
}

#[test]
fn token_automaton_checks() {
    let Some(cfg) = test_config() else { return };
    let (ts, a) = load(TOKEN);
    let mut solver = SolverSession::new(&cfg, &ts.vocab).unwrap();
    let r = check(&ts, &a, &mut solver).unwrap();
    assert_eq!(r.verdict(), Verdict::Valid, "{:?}", r.failures().collect::<Vec<_>>());

    let flat = PhaseAutomaton::wrap_invariant(a.flatten(), &ts);
    assert_eq!(check(&ts, &flat, &mut solver).unwrap().verdict(), Verdict::Valid);

    let mut none = a.clone();
    none.eta = vec![Formula::False; 2];
    let r = check(&ts, &none, &mut solver).unwrap();
    let (vc, o) = r.failures().next().unwrap();
    assert_eq!(vc.kind, VcKind::Initiation);
    let Outcome::Invalid(cm) = o else { panic!("expected a countermodel") };
    assert!(eval(&cm.pre, &cm.valuation, &ts.init).unwrap());
}

#[test]
fn missing_characterization_breaks_covering() {
    let Some(cfg) = test_config() else { return };
    let line = "    invariant forall src: node, dst: node, v: value, s: seqnum. !(transfer_msg(src, dst, k, v, s) & !seqnum_recvd(dst, src, s))\n";
    assert!(KVR.contains(line));
    let (ts, a) = load(&KVR.replacen(line, "", 1));
    let mut solver = SolverSession::new(&cfg, &ts.vocab).unwrap();
    let r = check(&ts, &a, &mut solver).unwrap();
    assert_eq!(r.verdict(), Verdict::Invalid);
    let failed: Vec<&str> = r.failures().map(|(vc, _)| vc.name.as_str()).collect();
    assert!(failed.contains(&"covering(O, recv_transfer_msg)"), "{failed:?}");
    for (vc, o) in r.failures() {
        let Outcome::Invalid(cm) = o else { panic!("unexpected {o:?}") };
        assert_refutes(vc, cm);
        if vc.name == "covering(O, recv_transfer_msg)" {
            let k = &cm.valuation[&a.structure.view[0]];
            let pending = cm.pre.relations["transfer_msg"].iter().any(|t| {
                &t[2] == k && !cm.pre.holds("seqnum_recvd", &[t[1].clone(), t[0].clone(), t[4].clone()])
            });
            assert!(pending, "no unreceived transfer message for the view key");
        }
    }
}

#[test]
fn kvr_phase_invariant_and_flat_invariant_check() {
    let Some(cfg) = test_config() else { return };
    let (ts, a) = load(KVR);
    let mut solver = SolverSession::new(&cfg, &ts.vocab).unwrap();
    let r = check(&ts, &a, &mut solver).unwrap();
    assert_eq!(r.verdict(), Verdict::Valid, "{:?}", r.failures().map(|f| &f.0.name).collect::<Vec<_>>());

    let m = parse_model(KVR_FLAT).unwrap();
    let ts = compile(&m).unwrap();
    let flat = PhaseAutomaton::wrap_invariant(Formula::and(m.invariants.iter().cloned()), &ts);
    let r = check(&ts, &flat, &mut solver).unwrap();
    assert_eq!(r.verdict(), Verdict::Valid, "{:?}", r.failures().map(|f| &f.0.name).collect::<Vec<_>>());
}

#[test]
fn chc_export_counts_and_stability() {
    let (ts, a) = load(KVR);
    let chc = emit_chc(&ts, &a.structure).unwrap();
    assert_eq!(chc.unknowns.len(), 2);
    assert_eq!(chc.clauses.len(), 1 + 4 + 2 * 2);
    let text = chc.to_smtlib(&ts);
    assert_eq!(text.matches("(declare-fun I_").count(), 2);
    assert_eq!(text.matches("(assert ").count(), 9);
    assert_eq!(text, emit_chc(&ts, &a.structure).unwrap().to_smtlib(&ts));
    let names: Vec<&str> = chc.clauses.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "initiation",
            "inductiveness_O_O",
            "inductiveness_O_T",
            "inductiveness_T_O",
            "inductiveness_T_T",
            "covering_O",
            "covering_T",
            "safety_O",
            "safety_T"
        ]
    );
    assert!(text.contains("(|I_T'| x_k)"));
}

#[test]
fn chc_is_accepted_by_the_solver() {
    // The export should at least be well-formed SMT-LIB for a HORN engine.
    let Some(cfg) = test_config() else { return };
    let (ts, a) = load(TOKEN);
    let text = emit_chc(&ts, &a.structure).unwrap().to_smtlib(&ts);
    assert_eq!(text.matches("(assert ").count(), 1 + 3 + 2 + 2);
    let dir = tempdir();
    let path = dir.join("token.smt2");
    std::fs::write(&path, text.replace("(check-sat)\n", "")).unwrap();
    let out = std::process::Command::new(&cfg.binary).arg(&path).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(!stdout.contains("error"), "{stdout}\n{}", std::fs::read_to_string(&path).unwrap());
    std::fs::remove_dir_all(&dir).ok();
}

fn tempdir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("pf-chc-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
