//! Translation of formulas and vocabularies to SMT-LIB2 text.
//!
//! A transition formula is translated against two numbered copies of the
//! vocabulary: unprimed symbols use copy `pre`, primed symbols copy `pre + 1`.

use std::fmt::Write;

use crate::logic::{Formula, Sort, Term, Var, Vocabulary};

pub fn sort_sym(s: &Sort) -> String {
    format!("S_{}", s.0)
}

pub fn rel_sym(name: &str, copy: usize) -> String {
    format!("R{copy}_{name}")
}

pub fn const_sym(name: &str, copy: usize) -> String {
    format!("C{copy}_{name}")
}

/// Free variables are translated to constants.
pub fn free_sym(v: &Var) -> String {
    format!("V_{}_{}", v.sort.0, v.name)
}

fn bound_sym(v: &Var) -> String {
    format!("x_{}", v.name)
}

/// Indicator literal of the `i`-th named assumption of a query.
pub fn assumption_sym(i: usize) -> String {
    format!("A_{i}")
}

pub fn assumption_index(sym: &str) -> Option<usize> {
    sym.strip_prefix("A_")?.parse().ok()
}

pub fn elem_sym(s: &Sort, i: usize) -> String {
    format!("E_{}_{}", s.0, i)
}

pub fn declare_sorts(vocab: &Vocabulary) -> Vec<String> {
    vocab
        .sorts
        .iter()
        .map(|s| format!("(declare-sort {} 0)", sort_sym(s)))
        .collect()
}

pub fn declare_copy(vocab: &Vocabulary, copy: usize) -> Vec<String> {
    let mut out = Vec::new();
    for r in &vocab.relations {
        let args: Vec<String> = r.args.iter().map(sort_sym).collect();
        out.push(format!(
            "(declare-fun {} ({}) Bool)",
            rel_sym(&r.name, copy),
            args.join(" ")
        ));
    }
    for c in &vocab.constants {
        out.push(format!(
            "(declare-fun {} () {})",
            const_sym(&c.name, copy),
            sort_sym(&c.sort)
        ));
    }
    out
}

struct Translator<'a> {
    pre: usize,
    /// Relation names rendered as themselves (primed: `|name'|`).
    verbatim: &'a [String],
    bound: Vec<&'a Var>,
    out: String,
}

impl<'a> Translator<'a> {
    fn term(&mut self, t: &Term) {
        match t {
            Term::Var(v) => {
                if self.bound.iter().rev().any(|b| *b == v) {
                    self.out.push_str(&bound_sym(v));
                } else {
                    self.out.push_str(&free_sym(v));
                }
            }
            Term::Const { name, primed } => {
                let copy = self.pre + usize::from(*primed);
                self.out.push_str(&const_sym(name, copy));
            }
        }
    }

    fn nary(&mut self, op: &str, parts: &'a [Formula], empty: &str) {
        match parts.len() {
            0 => self.out.push_str(empty),
            1 => self.formula(&parts[0]),
            _ => {
                write!(self.out, "({op}").unwrap();
                for p in parts {
                    self.out.push(' ');
                    self.formula(p);
                }
                self.out.push(')');
            }
        }
    }

    fn formula(&mut self, f: &'a Formula) {
        match f {
            Formula::True => self.out.push_str("true"),
            Formula::False => self.out.push_str("false"),
            Formula::Rel { name, primed, args } => {
                let sym = if self.verbatim.contains(name) {
                    if *primed { format!("|{name}'|") } else { name.clone() }
                } else {
                    rel_sym(name, self.pre + usize::from(*primed))
                };
                if args.is_empty() {
                    self.out.push_str(&sym);
                } else {
                    write!(self.out, "({sym}").unwrap();
                    for a in args {
                        self.out.push(' ');
                        self.term(a);
                    }
                    self.out.push(')');
                }
            }
            Formula::Eq(a, b) => {
                self.out.push_str("(= ");
                self.term(a);
                self.out.push(' ');
                self.term(b);
                self.out.push(')');
            }
            Formula::Not(g) => {
                self.out.push_str("(not ");
                self.formula(g);
                self.out.push(')');
            }
            Formula::And(gs) => self.nary("and", gs, "true"),
            Formula::Or(gs) => self.nary("or", gs, "false"),
            Formula::Implies(a, b) | Formula::Iff(a, b) => {
                let op = if matches!(f, Formula::Implies(..)) { "=>" } else { "=" };
                write!(self.out, "({op} ").unwrap();
                self.formula(a);
                self.out.push(' ');
                self.formula(b);
                self.out.push(')');
            }
            Formula::Forall(vs, g) | Formula::Exists(vs, g) => {
                let q = if matches!(f, Formula::Forall(..)) { "forall" } else { "exists" };
                write!(self.out, "({q} (").unwrap();
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        self.out.push(' ');
                    }
                    write!(self.out, "({} {})", bound_sym(v), sort_sym(&v.sort)).unwrap();
                }
                self.out.push_str(") ");
                let n = self.bound.len();
                self.bound.extend(vs.iter());
                self.formula(g);
                self.bound.truncate(n);
                self.out.push(')');
            }
        }
    }
}

/// SMT-LIB2 text of `f`, with unprimed symbols in copy `pre`.
pub fn translate(f: &Formula, pre: usize) -> String {
    translate_with(f, pre, &[])
}

/// As [`translate`], leaving the relations in `verbatim` unrenamed.
pub fn translate_with(f: &Formula, pre: usize, verbatim: &[String]) -> String {
    let mut t = Translator {
        pre,
        verbatim,
        bound: Vec::new(),
        out: String::new(),
    };
    t.formula(f);
    t.out
}

/// `forall x: s. x = e_0 | ... | x = e_{k-1}`.
pub fn at_most(sort: &Sort, k: usize) -> String {
    let s = sort_sym(sort);
    let eqs: Vec<String> = (0..k).map(|i| format!("(= x {})", elem_sym(sort, i))).collect();
    let body = if eqs.len() == 1 {
        eqs[0].clone()
    } else {
        format!("(or {})", eqs.join(" "))
    };
    format!("(forall ((x {s})) {body})")
}

/// The first `k` element constants of `sort` are pairwise distinct.
pub fn at_least(sort: &Sort, k: usize) -> Option<String> {
    if k < 2 {
        return None;
    }
    let names: Vec<String> = (0..k).map(|i| elem_sym(sort, i)).collect();
    Some(format!("(distinct {})", names.join(" ")))
}
