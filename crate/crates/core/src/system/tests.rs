use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::frontend::parse_model;
use crate::logic::eval_two_vocab;

const KVR: &str = include_str!("../../../../corpus/kvr.pfz");

fn kvr() -> TransitionSystem {
    compile(&parse_model(KVR).unwrap()).unwrap()
}

fn sizes(k: usize, v: usize, n: usize, s: usize) -> BTreeMap<Sort, usize> {
    BTreeMap::from([
        (Sort::new("key"), k),
        (Sort::new("value"), v),
        (Sort::new("node"), n),
        (Sort::new("seqnum"), s),
    ])
}

#[test]
fn later_updates_win() {
    let ts = kvr();
    let mut s = Structure::with_sizes(&ts.vocab, &sizes(1, 3, 1, 1)).unwrap();
    s.set("owner", vec!["node0".into(), "key0".into()], true);
    s.set("table", vec!["node0".into(), "key0".into(), "value0".into()], true);
    s.set("table", vec!["node0".into(), "key0".into(), "value1".into()], true);
    let posts = ts
        .step(&s, "put", &["node0".into(), "key0".into(), "value2".into()])
        .unwrap();
    assert_eq!(posts.len(), 1);
    let table: Vec<_> = posts[0].relations["table"].iter().cloned().collect();
    assert_eq!(table, vec![vec!["node0".to_string(), "key0".into(), "value2".into()]]);
}

#[test]
fn disabled_actions_have_no_successor() {
    let ts = kvr();
    let s = Structure::with_sizes(&ts.vocab, &sizes(1, 1, 1, 1)).unwrap();
    let posts = ts
        .step(&s, "put", &["node0".into(), "key0".into(), "value0".into()])
        .unwrap();
    assert!(posts.is_empty());
    assert!(matches!(
        ts.step(&s, "put", &["node0".into()]),
        Err(SystemError::Arity(..))
    ));
    assert!(matches!(ts.step(&s, "nope", &[]), Err(SystemError::UnknownAction(_))));
}

#[test]
fn global_tr_needs_actions() {
    let m = parse_model("sort a\nrelation r(a)\n").unwrap();
    assert!(matches!(compile(&m), Err(SystemError::NoActions)));
}

#[test]
fn random_traces_are_reproducible_and_start_initial() {
    let ts = kvr();
    let sz = sizes(2, 2, 2, 2);
    let a = random_trace(&ts, &sz, 8, 7, None).unwrap();
    let b = random_trace(&ts, &sz, 8, 7, None).unwrap();
    assert_eq!(a, b);
    assert!(eval(&a.states[0], &Valuation::new(), &ts.init).unwrap());
    assert_eq!(a.states.len(), a.steps.len() + 1);
    for (i, st) in a.steps.iter().enumerate() {
        let posts = ts.step(&a.states[i], &st.action, &st.args).unwrap();
        assert_eq!(posts, vec![a.states[i + 1].clone()]);
    }
}

#[test]
fn solver_finds_initial_states_random_search_misses() {
    let Some(cfg) = crate::solver::tests::test_config() else { return };
    // A total order on three elements is hard to hit by random sampling.
    let m = parse_model(
        "sort n\nrelation le(n, n)\n\
         init forall x: n. le(x, x)\n\
         init forall x: n, y: n. le(x, y) & le(y, x) -> x = y\n\
         init forall x: n, y: n, z: n. le(x, y) & le(y, z) -> le(x, z)\n\
         init forall x: n, y: n. le(x, y) | le(y, x)\n\
         action noop(x: n) {\n  require le(x, x)\n}\n",
    )
    .unwrap();
    let ts = compile(&m).unwrap();
    let mut solver = SolverSession::new(&cfg, &ts.vocab).unwrap();
    let sz = BTreeMap::from([(Sort::new("n"), 3)]);
    let t = random_trace(&ts, &sz, 2, 1, Some(&mut solver)).unwrap();
    assert!(eval(&t.states[0], &Valuation::new(), &ts.init).unwrap());
    assert_eq!(t.states[0].elems(&Sort::new("n")).len(), 3);
}

fn arb_state() -> impl Strategy<Value = (Structure, u64)> {
    (any::<u64>(), any::<u64>()).prop_map(|(bits, pick)| {
        let ts = kvr();
        let mut s = Structure::with_sizes(&ts.vocab, &sizes(2, 2, 2, 1)).unwrap();
        let mut i = 0u32;
        for r in &ts.vocab.relations {
            let cols: Vec<Vec<Elem>> = r.args.iter().map(|srt| s.elems(srt).to_vec()).collect();
            for t in cols.into_iter().multi_cartesian_product() {
                // Sparse random relations: roughly one tuple in four.
                let b = bits.rotate_left(i * 7) ^ pick.rotate_left(i * 3);
                if b & 3 == 0 {
                    s.set(&r.name, t, true);
                }
                i += 1;
            }
        }
        (s, pick)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn executor_agrees_with_transition_formula((s, pick) in arb_state()) {
        let ts = kvr();
        for a in &ts.actions {
            let tuples = arg_tuples(&s, &a.params);
            let args = &tuples[(pick as usize) % tuples.len()];
            let val: Valuation = a.params.iter().cloned().zip(args.iter().cloned()).collect();
            let posts = ts.step(&s, &a.name, args).unwrap();
            let enabled = eval(&s, &val, &a.guard).unwrap();
            prop_assert_eq!(posts.len(), usize::from(enabled));
            for post in &posts {
                prop_assert!(eval_two_vocab(&s, post, &val, &a.tr_body).unwrap());
                // Any other post-state is rejected by the formula.
                let mut other = post.clone();
                other.set("ack_msg", vec!["node0".into(), "node1".into(), "seqnum0".into()],
                    !post.holds("ack_msg", &["node0".into(), "node1".into(), "seqnum0".into()]));
                prop_assert!(!eval_two_vocab(&s, &other, &val, &a.tr_body).unwrap());
            }
            if !enabled {
                prop_assert!(!eval_two_vocab(&s, &s, &val, &a.tr_body).unwrap());
            }
        }
    }
}
