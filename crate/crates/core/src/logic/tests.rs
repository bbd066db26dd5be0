use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use proptest::prelude::*;

use super::*;

fn sort(s: &str) -> Sort {
    Sort::new(s)
}

fn vocab() -> Vocabulary {
    Vocabulary::new(
        vec![sort("a"), sort("b")],
        vec![
            RelationDecl {
                name: "p".into(),
                args: vec![],
            },
            RelationDecl {
                name: "r".into(),
                args: vec![sort("a")],
            },
            RelationDecl {
                name: "s".into(),
                args: vec![sort("a"), sort("b")],
            },
            RelationDecl {
                name: "t".into(),
                args: vec![sort("b"), sort("b")],
            },
        ],
        vec![ConstantDecl {
            name: "c".into(),
            sort: sort("a"),
        }],
    )
    .unwrap()
}

fn x() -> Var {
    Var::new("x", &sort("a"))
}

fn y() -> Var {
    Var::new("y", &sort("b"))
}

fn tuples(vocab: &Vocabulary, s: &Structure, rel: &str) -> Vec<Vec<Elem>> {
    let decl = vocab.relation(rel).unwrap();
    if decl.args.is_empty() {
        return vec![vec![]];
    }
    decl.args
        .iter()
        .map(|srt| s.elems(srt).to_vec())
        .multi_cartesian_product()
        .collect()
}

/// Independent oracle: search all injective sort-preserving maps.
fn embeds(
    vocab: &Vocabulary,
    small: &Structure,
    sv: &Valuation,
    big: &Structure,
    bv: &Valuation,
) -> bool {
    let per_sort: Vec<Vec<Vec<Elem>>> = vocab
        .sorts
        .iter()
        .map(|srt| {
            let k = small.elems(srt).len();
            big.elems(srt).iter().cloned().permutations(k).collect()
        })
        .collect();
    if per_sort.iter().any(|c| c.is_empty()) {
        return false;
    }
    for choice in per_sort.into_iter().multi_cartesian_product() {
        let mut h: BTreeMap<Elem, Elem> = BTreeMap::new();
        for (srt, image) in vocab.sorts.iter().zip(&choice) {
            for (e, f) in small.elems(srt).iter().zip(image) {
                h.insert(e.clone(), f.clone());
            }
        }
        let consts_ok = vocab
            .constants
            .iter()
            .all(|c| h[&small.constants[&c.name]] == big.constants[&c.name]);
        let view_ok = sv.iter().all(|(v, e)| bv.get(v) == Some(&h[e]));
        let rels_ok = vocab.relations.iter().all(|r| {
            tuples(vocab, small, &r.name).iter().all(|t| {
                let image: Vec<Elem> = t.iter().map(|e| h[e].clone()).collect();
                small.holds(&r.name, t) == big.holds(&r.name, &image)
            })
        });
        if consts_ok && view_ok && rels_ok {
            return true;
        }
    }
    false
}

fn arb_structure(prefix: &'static str) -> impl Strategy<Value = Structure> {
    (1usize..=3, 1usize..=3, any::<u64>()).prop_map(move |(na, nb, bits)| {
        let v = vocab();
        let domain = BTreeMap::from([
            (sort("a"), (0..na).map(|i| format!("{prefix}a{i}")).collect()),
            (sort("b"), (0..nb).map(|i| format!("{prefix}b{i}")).collect()),
        ]);
        let mut s = Structure::empty(&v, domain).unwrap();
        let mut bit = 0;
        for r in ["p", "r", "s", "t"] {
            for t in tuples(&v, &s.clone(), r) {
                if bits >> (bit % 64) & 1 == 1 {
                    s.set(r, t, true);
                }
                bit += 1;
            }
        }
        let c = s.elems(&sort("a"))[(bits as usize >> 40) % na].clone();
        s.constants.insert("c".into(), c);
        s
    })
}

#[test]
fn vocabulary_rejects_duplicates_and_unknown_sorts() {
    let err = Vocabulary::new(
        vec![sort("a")],
        vec![RelationDecl {
            name: "r".into(),
            args: vec![sort("z")],
        }],
        vec![],
    );
    assert_eq!(err.unwrap_err(), LogicError::UnknownSort("z".into()));
    let err = Vocabulary::new(vec![sort("a"), sort("a")], vec![], vec![]);
    assert!(matches!(err, Err(LogicError::Duplicate(_))));
}

#[test]
fn empty_sort_is_rejected() {
    let v = vocab();
    let domain = BTreeMap::from([(sort("a"), vec![]), (sort("b"), vec!["b0".to_string()])]);
    assert!(matches!(Structure::empty(&v, domain), Err(LogicError::EmptySort(_))));
}

#[test]
fn free_vars_and_priming() {
    let f = Formula::forall(
        vec![x()],
        Formula::and([
            Formula::rel("r", vec![Term::var(&x())]),
            Formula::rel("s", vec![Term::var(&x()), Term::var(&y())]),
        ]),
    );
    assert_eq!(f.free_vars(), BTreeSet::from([y()]));
    let p = f.prime().unwrap();
    assert!(p.has_primed() && !p.has_unprimed());
    assert_eq!(p.unprime(), f);
    assert!(matches!(p.prime(), Err(LogicError::AlreadyPrimed(_))));
}

#[test]
fn quantifier_classes() {
    let r = Formula::rel("r", vec![Term::var(&x())]);
    let t = Formula::rel("t", vec![Term::var(&y()), Term::var(&y())]);
    let fa = Formula::forall(vec![x()], r.clone());
    let ex = Formula::exists(vec![y()], t.clone());
    assert_eq!(r.quantifier_class(), QuantifierClass::QuantifierFree);
    assert_eq!(fa.quantifier_class(), QuantifierClass::Universal);
    assert_eq!(Formula::not(fa.clone()).quantifier_class(), QuantifierClass::Existential);
    assert_eq!(
        Formula::and([fa.clone(), ex.clone()]).quantifier_class(),
        QuantifierClass::AlternationFree
    );
    let nested = Formula::forall(vec![x()], Formula::and([r, ex.clone()]));
    assert_eq!(nested.quantifier_class(), QuantifierClass::Unrestricted);
    assert!(nested.alternation_witness().is_some());
    // An implication flips polarity of its antecedent.
    let imp = Formula::implies(ex, fa);
    assert_eq!(imp.quantifier_class(), QuantifierClass::Universal);
}

#[test]
fn typecheck_catches_sort_errors_and_shadowing() {
    let v = vocab();
    let bad = Formula::rel("s", vec![Term::var(&y()), Term::var(&y())]);
    assert!(typecheck(&v, &[y()], &bad).is_err());
    let ok = Formula::forall(vec![x()], Formula::rel("s", vec![Term::var(&x()), Term::var(&y())]));
    assert!(typecheck(&v, &[y()], &ok).is_ok());
    assert!(matches!(typecheck(&v, &[], &ok), Err(LogicError::Unbound(_))));
    let shadow = Formula::forall(vec![x()], Formula::forall(vec![x()], Formula::True));
    assert!(matches!(typecheck(&v, &[], &shadow), Err(LogicError::Shadowing(_))));
    let arity = Formula::rel("r", vec![]);
    assert!(matches!(typecheck(&v, &[], &arity), Err(LogicError::Arity(..))));
}

#[test]
fn eval_quantifiers_and_two_vocab() {
    let v = vocab();
    let mut s = Structure::with_sizes(&v, &BTreeMap::from([(sort("a"), 2), (sort("b"), 1)])).unwrap();
    s.set("r", vec!["a0".into()], true);
    let all_r = Formula::forall(vec![x()], Formula::rel("r", vec![Term::var(&x())]));
    let some_r = Formula::exists(vec![x()], Formula::rel("r", vec![Term::var(&x())]));
    let empty = Valuation::new();
    assert!(!eval(&s, &empty, &all_r).unwrap());
    assert!(eval(&s, &empty, &some_r).unwrap());
    let mut post = s.clone();
    post.set("r", vec!["a1".into()], true);
    let grows = Formula::and([some_r.clone(), all_r.prime().unwrap()]);
    assert!(eval_two_vocab(&s, &post, &empty, &grows).unwrap());
    assert!(eval(&s, &empty, &grows).is_err());
    assert!(matches!(
        eval(&s, &empty, &Formula::rel("r", vec![Term::var(&x())])),
        Err(LogicError::Unbound(_))
    ));
}

#[test]
fn diagram_of_structure_holds_in_itself() {
    let v = vocab();
    let mut s = Structure::with_sizes(&v, &BTreeMap::from([(sort("a"), 2), (sort("b"), 2)])).unwrap();
    s.set("s", vec!["a1".into(), "b0".into()], true);
    let val = Valuation::from([(Var::new("k", &sort("b")), "b1".to_string())]);
    let d = diagram(&v, &s, &val).unwrap();
    // 2 distinct + 1 constant + 1 view + p + 2 r + 4 s + 4 t
    assert_eq!(d.literals.len(), 2 + 1 + 1 + 1 + 2 + 4 + 4);
    assert!(eval(&s, &val, &d.to_formula()).unwrap());
    assert!(!eval(&s, &val, &d.negation()).unwrap());
    assert!(d.to_formula().free_vars().iter().all(|w| w.name == "k"));
}

#[test]
fn substructure_rejects_mismatched_views() {
    let v = vocab();
    let s = Structure::with_sizes(&v, &BTreeMap::new()).unwrap();
    let val = Valuation::from([(Var::new("k", &sort("b")), "b0".to_string())]);
    assert!(is_substructure(&v, &s, &val, &s, &Valuation::new()).is_err());
    assert!(is_substructure(&v, &s, &val, &s, &val).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(600))]

    #[test]
    fn substructure_agrees_with_embedding_search(
        small in arb_structure("u"),
        big in arb_structure("w"),
        pick in any::<(usize, usize, bool)>(),
    ) {
        let v = vocab();
        let k = Var::new("k", &sort("b"));
        let (sv, bv) = if pick.2 {
            let se = small.elems(&sort("b"));
            let be = big.elems(&sort("b"));
            (
                Valuation::from([(k.clone(), se[pick.0 % se.len()].clone())]),
                Valuation::from([(k, be[pick.1 % be.len()].clone())]),
            )
        } else {
            (Valuation::new(), Valuation::new())
        };
        let expected = embeds(&v, &small, &sv, &big, &bv);
        prop_assert_eq!(is_substructure(&v, &small, &sv, &big, &bv).unwrap(), expected);
        // The same answer from the existential diagram.
        let d = diagram(&v, &small, &sv).unwrap();
        prop_assert_eq!(eval(&big, &bv, &d.to_formula()).unwrap(), expected);
        prop_assert_eq!(eval(&big, &bv, &d.negation_substituted()).unwrap(), !expected);
        let half = d.restrict(|i, _| i % 2 == 0);
        prop_assert_eq!(
            eval(&big, &bv, &half.negation_substituted()).unwrap(),
            eval(&big, &bv, &half.negation()).unwrap()
        );
        // Every structure embeds into itself.
        prop_assert!(is_substructure(&v, &small, &sv, &small, &sv).unwrap());
    }

    #[test]
    fn nnf_preserves_truth(big in arb_structure("w"), shape in 0u8..6) {
        let v = vocab();
        let r = Formula::rel("r", vec![Term::var(&x())]);
        let s = Formula::rel("s", vec![Term::var(&x()), Term::var(&y())]);
        let c = Formula::eq(Term::var(&x()), Term::constant("c"));
        let f = match shape {
            0 => Formula::forall(vec![x()], Formula::iff(r, Formula::exists(vec![y()], s))),
            1 => Formula::not(Formula::forall(vec![x(), y()], Formula::implies(s, r))),
            2 => Formula::exists(vec![x()], Formula::not(Formula::iff(c, r))),
            3 => Formula::not(Formula::exists(vec![x()], Formula::and([c, Formula::not(r)]))),
            4 => Formula::forall(vec![x()], Formula::or([Formula::not(r), Formula::rel("p", vec![])])),
            _ => Formula::iff(Formula::rel("p", vec![]), Formula::forall(vec![x()], r)),
        };
        let val = Valuation::new();
        prop_assert_eq!(eval(&big, &val, &f).unwrap(), eval(&big, &val, &f.nnf()).unwrap());
        let _ = &v;
    }
}
