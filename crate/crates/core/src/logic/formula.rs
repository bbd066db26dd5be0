use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::LogicError;

/// A sort name.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sort(pub String);

impl Sort {
    pub fn new(name: impl Into<String>) -> Self {
        Sort(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A sorted variable. Two variables are the same iff name and sort agree.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var {
    pub name: String,
    pub sort: Sort,
}

impl Var {
    pub fn new(name: impl Into<String>, sort: &Sort) -> Self {
        Var {
            name: name.into(),
            sort: sort.clone(),
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name, self.sort)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(Var),
    Const { name: String, primed: bool },
}

impl Term {
    pub fn var(v: &Var) -> Term {
        Term::Var(v.clone())
    }

    pub fn constant(name: impl Into<String>) -> Term {
        Term::Const {
            name: name.into(),
            primed: false,
        }
    }
}

/// First-order formulas over a many-sorted relational vocabulary.
///
/// Relation and constant symbols carry a `primed` flag; a formula with primed
/// symbols is a two-vocabulary (transition) formula.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    True,
    False,
    Rel {
        name: String,
        primed: bool,
        args: Vec<Term>,
    },
    Eq(Term, Term),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Iff(Box<Formula>, Box<Formula>),
    Forall(Vec<Var>, Box<Formula>),
    Exists(Vec<Var>, Box<Formula>),
}

/// Quantifier-alternation class, computed on negation normal form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantifierClass {
    QuantifierFree,
    Universal,
    Existential,
    AlternationFree,
    Unrestricted,
}

impl Formula {
    pub fn rel(name: impl Into<String>, args: Vec<Term>) -> Formula {
        Formula::Rel {
            name: name.into(),
            primed: false,
            args,
        }
    }

    pub fn eq(a: Term, b: Term) -> Formula {
        Formula::Eq(a, b)
    }

    pub fn neq(a: Term, b: Term) -> Formula {
        Formula::Not(Box::new(Formula::Eq(a, b)))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        match f {
            Formula::True => Formula::False,
            Formula::False => Formula::True,
            f => Formula::Not(Box::new(f)),
        }
    }

    /// Conjunction with trivial simplification of `true`/`false` and flattening
    /// of directly nested conjunctions.
    pub fn and(parts: impl IntoIterator<Item = Formula>) -> Formula {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Formula::True => {}
                Formula::False => return Formula::False,
                Formula::And(inner) => out.extend(inner),
                p => out.push(p),
            }
        }
        match out.len() {
            0 => Formula::True,
            1 => out.pop().unwrap(),
            _ => Formula::And(out),
        }
    }

    pub fn or(parts: impl IntoIterator<Item = Formula>) -> Formula {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Formula::False => {}
                Formula::True => return Formula::True,
                Formula::Or(inner) => out.extend(inner),
                p => out.push(p),
            }
        }
        match out.len() {
            0 => Formula::False,
            1 => out.pop().unwrap(),
            _ => Formula::Or(out),
        }
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn iff(a: Formula, b: Formula) -> Formula {
        Formula::Iff(Box::new(a), Box::new(b))
    }

    pub fn forall(vars: Vec<Var>, body: Formula) -> Formula {
        if vars.is_empty() {
            body
        } else {
            Formula::Forall(vars, Box::new(body))
        }
    }

    pub fn exists(vars: Vec<Var>, body: Formula) -> Formula {
        if vars.is_empty() {
            body
        } else {
            Formula::Exists(vars, Box::new(body))
        }
    }

    /// Variables occurring free, in sorted order.
    pub fn free_vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        let mut bound = Vec::new();
        self.collect_free(&mut bound, &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<Var>, out: &mut BTreeSet<Var>) {
        let mut term = |t: &Term, bound: &Vec<Var>| {
            if let Term::Var(v) = t {
                if !bound.contains(v) {
                    out.insert(v.clone());
                }
            }
        };
        match self {
            Formula::True | Formula::False => {}
            Formula::Rel { args, .. } => args.iter().for_each(|t| term(t, bound)),
            Formula::Eq(a, b) => {
                term(a, bound);
                term(b, bound);
            }
            Formula::Not(f) => f.collect_free(bound, out),
            Formula::And(fs) | Formula::Or(fs) => {
                fs.iter().for_each(|f| f.collect_free(bound, out))
            }
            Formula::Implies(a, b) | Formula::Iff(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            Formula::Forall(vs, f) | Formula::Exists(vs, f) => {
                let n = bound.len();
                bound.extend(vs.iter().cloned());
                f.collect_free(bound, out);
                bound.truncate(n);
            }
        }
    }

    /// True if any relation or constant symbol occurs primed.
    pub fn has_primed(&self) -> bool {
        let mut found = false;
        self.visit_symbols(&mut |_, primed| found |= primed);
        found
    }

    /// True if any relation or constant symbol occurs unprimed.
    pub fn has_unprimed(&self) -> bool {
        let mut found = false;
        self.visit_symbols(&mut |_, primed| found |= !primed);
        found
    }

    /// Calls `f(name, primed)` for every relation and constant occurrence.
    pub fn visit_symbols(&self, f: &mut impl FnMut(&str, bool)) {
        let term = |t: &Term, f: &mut dyn FnMut(&str, bool)| {
            if let Term::Const { name, primed } = t {
                f(name, *primed)
            }
        };
        match self {
            Formula::True | Formula::False => {}
            Formula::Rel { name, primed, args } => {
                f(name, *primed);
                args.iter().for_each(|t| term(t, f));
            }
            Formula::Eq(a, b) => {
                term(a, f);
                term(b, f);
            }
            Formula::Not(g) => g.visit_symbols(f),
            Formula::And(gs) | Formula::Or(gs) => gs.iter().for_each(|g| g.visit_symbols(f)),
            Formula::Implies(a, b) | Formula::Iff(a, b) => {
                a.visit_symbols(f);
                b.visit_symbols(f);
            }
            Formula::Forall(_, g) | Formula::Exists(_, g) => g.visit_symbols(f),
        }
    }

    /// Primes every relation and constant. Fails on an already primed symbol.
    pub fn prime(&self) -> Result<Formula, LogicError> {
        if self.has_primed() {
            let mut name = String::new();
            self.visit_symbols(&mut |n, p| {
                if p && name.is_empty() {
                    name = n.to_string();
                }
            });
            return Err(LogicError::AlreadyPrimed(name));
        }
        Ok(self.map_primes(&|_| true))
    }

    /// Removes all primes.
    pub fn unprime(&self) -> Formula {
        self.map_primes(&|_| false)
    }

    fn map_primes(&self, g: &dyn Fn(bool) -> bool) -> Formula {
        let term = |t: &Term| match t {
            Term::Const { name, primed } => Term::Const {
                name: name.clone(),
                primed: g(*primed),
            },
            t => t.clone(),
        };
        match self {
            Formula::True => Formula::True,
            Formula::False => Formula::False,
            Formula::Rel { name, primed, args } => Formula::Rel {
                name: name.clone(),
                primed: g(*primed),
                args: args.iter().map(term).collect(),
            },
            Formula::Eq(a, b) => Formula::Eq(term(a), term(b)),
            Formula::Not(f) => Formula::Not(Box::new(f.map_primes(g))),
            Formula::And(fs) => Formula::And(fs.iter().map(|f| f.map_primes(g)).collect()),
            Formula::Or(fs) => Formula::Or(fs.iter().map(|f| f.map_primes(g)).collect()),
            Formula::Implies(a, b) => {
                Formula::Implies(Box::new(a.map_primes(g)), Box::new(b.map_primes(g)))
            }
            Formula::Iff(a, b) => {
                Formula::Iff(Box::new(a.map_primes(g)), Box::new(b.map_primes(g)))
            }
            Formula::Forall(vs, f) => Formula::Forall(vs.clone(), Box::new(f.map_primes(g))),
            Formula::Exists(vs, f) => Formula::Exists(vs.clone(), Box::new(f.map_primes(g))),
        }
    }

    /// Replaces free occurrences of variables by terms.
    ///
    /// Callers are responsible for avoiding capture: replacement terms must not
    /// mention variables bound inside `self`.
    pub fn substitute(&self, map: &dyn Fn(&Var) -> Option<Term>) -> Formula {
        self.subst_inner(map, &mut Vec::new())
    }

    fn subst_inner(&self, map: &dyn Fn(&Var) -> Option<Term>, bound: &mut Vec<Var>) -> Formula {
        let term = |t: &Term, bound: &Vec<Var>| match t {
            Term::Var(v) if !bound.contains(v) => map(v).unwrap_or_else(|| t.clone()),
            t => t.clone(),
        };
        match self {
            Formula::True => Formula::True,
            Formula::False => Formula::False,
            Formula::Rel { name, primed, args } => Formula::Rel {
                name: name.clone(),
                primed: *primed,
                args: args.iter().map(|t| term(t, bound)).collect(),
            },
            Formula::Eq(a, b) => Formula::Eq(term(a, bound), term(b, bound)),
            Formula::Not(f) => Formula::Not(Box::new(f.subst_inner(map, bound))),
            Formula::And(fs) => {
                Formula::And(fs.iter().map(|f| f.subst_inner(map, bound)).collect())
            }
            Formula::Or(fs) => Formula::Or(fs.iter().map(|f| f.subst_inner(map, bound)).collect()),
            Formula::Implies(a, b) => Formula::Implies(
                Box::new(a.subst_inner(map, bound)),
                Box::new(b.subst_inner(map, bound)),
            ),
            Formula::Iff(a, b) => Formula::Iff(
                Box::new(a.subst_inner(map, bound)),
                Box::new(b.subst_inner(map, bound)),
            ),
            Formula::Forall(vs, f) | Formula::Exists(vs, f) => {
                let n = bound.len();
                bound.extend(vs.iter().cloned());
                let body = f.subst_inner(map, bound);
                bound.truncate(n);
                if matches!(self, Formula::Forall(..)) {
                    Formula::Forall(vs.clone(), Box::new(body))
                } else {
                    Formula::Exists(vs.clone(), Box::new(body))
                }
            }
        }
    }

    /// Renames free variables according to `pairs`.
    pub fn rename_vars(&self, pairs: &[(Var, Var)]) -> Formula {
        self.substitute(&|v| {
            pairs
                .iter()
                .find(|(from, _)| from == v)
                .map(|(_, to)| Term::Var(to.clone()))
        })
    }

    /// Negation normal form: implications and biconditionals are expanded and
    /// negations pushed to atoms.
    pub fn nnf(&self) -> Formula {
        self.nnf_pol(true)
    }

    fn nnf_pol(&self, positive: bool) -> Formula {
        match self {
            Formula::True => {
                if positive {
                    Formula::True
                } else {
                    Formula::False
                }
            }
            Formula::False => {
                if positive {
                    Formula::False
                } else {
                    Formula::True
                }
            }
            Formula::Rel { .. } | Formula::Eq(..) => {
                if positive {
                    self.clone()
                } else {
                    Formula::Not(Box::new(self.clone()))
                }
            }
            Formula::Not(f) => f.nnf_pol(!positive),
            Formula::And(fs) | Formula::Or(fs) => {
                let parts: Vec<Formula> = fs.iter().map(|f| f.nnf_pol(positive)).collect();
                let conj = matches!(self, Formula::And(_)) == positive;
                if conj {
                    Formula::And(parts)
                } else {
                    Formula::Or(parts)
                }
            }
            Formula::Implies(a, b) => {
                let parts = vec![a.nnf_pol(!positive), b.nnf_pol(positive)];
                if positive {
                    Formula::Or(parts)
                } else {
                    Formula::And(parts)
                }
            }
            Formula::Iff(a, b) => {
                // a <-> b  ==  (!a | b) & (a | !b)
                // !(a <-> b) == (a | b) & (!a | !b)
                if positive {
                    Formula::And(vec![
                        Formula::Or(vec![a.nnf_pol(false), b.nnf_pol(true)]),
                        Formula::Or(vec![a.nnf_pol(true), b.nnf_pol(false)]),
                    ])
                } else {
                    Formula::And(vec![
                        Formula::Or(vec![a.nnf_pol(true), b.nnf_pol(true)]),
                        Formula::Or(vec![a.nnf_pol(false), b.nnf_pol(false)]),
                    ])
                }
            }
            Formula::Forall(vs, f) => {
                let body = Box::new(f.nnf_pol(positive));
                if positive {
                    Formula::Forall(vs.clone(), body)
                } else {
                    Formula::Exists(vs.clone(), body)
                }
            }
            Formula::Exists(vs, f) => {
                let body = Box::new(f.nnf_pol(positive));
                if positive {
                    Formula::Exists(vs.clone(), body)
                } else {
                    Formula::Forall(vs.clone(), body)
                }
            }
        }
    }

    /// Classifies the quantifier structure of the formula.
    pub fn quantifier_class(&self) -> QuantifierClass {
        let nnf = self.nnf();
        let mut has_forall = false;
        let mut has_exists = false;
        let mut alternation = false;
        fn walk(
            f: &Formula,
            ctx: Option<bool>,
            fa: &mut bool,
            ex: &mut bool,
            alt: &mut bool,
        ) {
            match f {
                Formula::And(fs) | Formula::Or(fs) => {
                    fs.iter().for_each(|g| walk(g, ctx, fa, ex, alt))
                }
                Formula::Not(g) => walk(g, ctx, fa, ex, alt),
                Formula::Forall(_, g) => {
                    *fa = true;
                    if ctx == Some(false) {
                        *alt = true;
                    }
                    walk(g, Some(true), fa, ex, alt)
                }
                Formula::Exists(_, g) => {
                    *ex = true;
                    if ctx == Some(true) {
                        *alt = true;
                    }
                    walk(g, Some(false), fa, ex, alt)
                }
                _ => {}
            }
        }
        walk(&nnf, None, &mut has_forall, &mut has_exists, &mut alternation);
        match (has_forall, has_exists, alternation) {
            (_, _, true) => QuantifierClass::Unrestricted,
            (false, false, _) => QuantifierClass::QuantifierFree,
            (true, false, _) => QuantifierClass::Universal,
            (false, true, _) => QuantifierClass::Existential,
            (true, true, _) => QuantifierClass::AlternationFree,
        }
    }

    /// Finds a subformula whose quantifier prefix alternates, if any.
    pub fn alternation_witness(&self) -> Option<Formula> {
        fn walk(f: &Formula, ctx: Option<bool>) -> Option<Formula> {
            match f {
                Formula::And(fs) | Formula::Or(fs) => fs.iter().find_map(|g| walk(g, ctx)),
                Formula::Not(g) => walk(g, ctx),
                Formula::Forall(_, g) => {
                    if ctx == Some(false) {
                        Some(f.clone())
                    } else {
                        walk(g, Some(true))
                    }
                }
                Formula::Exists(_, g) => {
                    if ctx == Some(true) {
                        Some(f.clone())
                    } else {
                        walk(g, Some(false))
                    }
                }
                _ => None,
            }
        }
        walk(&self.nnf(), None)
    }

    /// Splits a top-level conjunction into its conjuncts.
    pub fn conjuncts(&self) -> Vec<Formula> {
        match self {
            Formula::True => vec![],
            Formula::And(fs) => fs.iter().flat_map(|f| f.conjuncts()).collect(),
            f => vec![f.clone()],
        }
    }

    /// Splits a top-level disjunction into its disjuncts.
    pub fn disjuncts(&self) -> Vec<Formula> {
        match self {
            Formula::False => vec![],
            Formula::Or(fs) => fs.iter().flat_map(|f| f.disjuncts()).collect(),
            f => vec![f.clone()],
        }
    }

    pub fn is_universal(&self) -> bool {
        matches!(
            self.quantifier_class(),
            QuantifierClass::Universal | QuantifierClass::QuantifierFree
        )
    }
}

// Printing uses the surface syntax accepted by the frontend. Precedence levels:
// 0 quantifier / iff, 1 implies, 2 or, 3 and, 4 unary.
impl Formula {
    fn prec(&self) -> u8 {
        match self {
            Formula::Forall(..) | Formula::Exists(..) => 0,
            Formula::Iff(..) => 0,
            Formula::Implies(..) => 1,
            Formula::Or(fs) if fs.len() >= 2 => 2,
            Formula::And(fs) if fs.len() >= 2 => 3,
            _ => 4,
        }
    }

    fn write_prec(&self, f: &mut fmt::Formatter<'_>, min: u8, tail: bool) -> fmt::Result {
        let p = self.prec();
        // Quantifiers extend to the right as far as possible, so they only
        // stand unparenthesized in tail position.
        let needs = p < min || (p == 0 && !tail && min > 0);
        if needs {
            f.write_str("(")?;
            self.write_inner(f, true)?;
            f.write_str(")")
        } else {
            self.write_inner(f, tail)
        }
    }

    fn write_inner(&self, f: &mut fmt::Formatter<'_>, tail: bool) -> fmt::Result {
        match self {
            Formula::True => f.write_str("true"),
            Formula::False => f.write_str("false"),
            Formula::Rel { name, primed, args } => {
                f.write_str(name)?;
                if *primed {
                    f.write_str("'")?;
                }
                if !args.is_empty() {
                    f.write_str("(")?;
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        write!(f, "{a}")?;
                    }
                    f.write_str(")")?;
                }
                Ok(())
            }
            Formula::Eq(a, b) => write!(f, "{a} = {b}"),
            Formula::Not(g) => match g.as_ref() {
                Formula::Eq(a, b) => write!(f, "{a} != {b}"),
                g => {
                    f.write_str("!")?;
                    g.write_prec(f, 4, tail)
                }
            },
            Formula::And(fs) | Formula::Or(fs) if fs.is_empty() => {
                let empty = if matches!(self, Formula::And(_)) { "true" } else { "false" };
                f.write_str(empty)
            }
            Formula::And(fs) | Formula::Or(fs) if fs.len() == 1 => fs[0].write_inner(f, tail),
            Formula::And(fs) | Formula::Or(fs) => {
                let (op, p) = if matches!(self, Formula::And(_)) {
                    (" & ", 3)
                } else {
                    (" | ", 2)
                };
                for (i, g) in fs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(op)?;
                    }
                    // Nested operators of the same kind keep their grouping.
                    g.write_prec(f, p + 1, tail && i + 1 == fs.len())?;
                }
                Ok(())
            }
            Formula::Implies(a, b) => {
                a.write_prec(f, 2, false)?;
                f.write_str(" -> ")?;
                b.write_prec(f, 1, tail)
            }
            Formula::Iff(a, b) => {
                a.write_prec(f, 1, false)?;
                f.write_str(" <-> ")?;
                b.write_prec(f, 1, tail)
            }
            Formula::Forall(vs, g) | Formula::Exists(vs, g) => {
                let q = if matches!(self, Formula::Forall(..)) { "forall" } else { "exists" };
                write!(f, "{q} ")?;
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str(". ")?;
                g.write_prec(f, 0, true)
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => f.write_str(&v.name),
            Term::Const { name, primed } => {
                f.write_str(name)?;
                if *primed {
                    f.write_str("'")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_prec(f, 0, true)
    }
}
