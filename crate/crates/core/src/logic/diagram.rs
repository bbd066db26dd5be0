use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;

use super::{Elem, Formula, LogicError, Sort, Structure, Term, Valuation, Var, Vocabulary};

/// One conjunct of a diagram. Element variables are referred to by index
/// into [`Diagram::elems`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Literal {
    Distinct(usize, usize),
    /// The element equals a constant or a view variable.
    Equals(usize, Term),
    Rel {
        name: String,
        args: Vec<usize>,
        positive: bool,
    },
}

impl Literal {
    pub fn mentions(&self, i: usize) -> bool {
        match self {
            Literal::Distinct(a, b) => *a == i || *b == i,
            Literal::Equals(a, _) => *a == i,
            Literal::Rel { args, .. } => args.contains(&i),
        }
    }
}

/// The existential characterization of a finite structure under a view
/// valuation: one variable per element, pairwise distinctness within each
/// sort, identities for constants and view variables, and the full positive
/// and negative relation table.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Diagram {
    pub elems: Vec<(Var, Elem)>,
    pub literals: Vec<Literal>,
}

/// Picks variable names for the elements of `s` that clash with neither the
/// vocabulary nor the given view variables.
fn element_vars(vocab: &Vocabulary, s: &Structure, view: &[&Var]) -> Vec<(Var, Elem)> {
    let mut taken: BTreeSet<String> = view.iter().map(|v| v.name.clone()).collect();
    let mut out = Vec::new();
    for sort in &vocab.sorts {
        let mut stem: String = sort.0.clone();
        if let Some(c) = stem.get(0..1) {
            stem.replace_range(0..1, &c.to_uppercase());
        }
        for (i, e) in s.elems(sort).iter().enumerate() {
            let mut name = format!("{stem}{i}");
            while taken.contains(&name) || vocab.is_symbol(&name) {
                name.push('_');
            }
            taken.insert(name.clone());
            out.push((Var::new(name, sort), e.clone()));
        }
    }
    out
}

/// Computes the diagram of `s` under the view valuation `v`.
pub fn diagram(vocab: &Vocabulary, s: &Structure, v: &Valuation) -> Result<Diagram, LogicError> {
    s.validate(vocab)?;
    let view: Vec<&Var> = v.keys().collect();
    let elems = element_vars(vocab, s, &view);
    let index = |e: &str| elems.iter().position(|(_, x)| x == e);
    let mut literals = Vec::new();
    for [i, j] in (0..elems.len()).array_combinations::<2>() {
        if elems[i].0.sort == elems[j].0.sort {
            literals.push(Literal::Distinct(i, j));
        }
    }
    for c in &vocab.constants {
        let e = &s.constants[&c.name];
        let i = index(e).ok_or_else(|| LogicError::Malformed(format!("constant {}", c.name)))?;
        literals.push(Literal::Equals(i, Term::constant(c.name.clone())));
    }
    for (w, e) in v {
        let i = index(e).ok_or_else(|| {
            LogicError::Malformed(format!("view variable {} maps outside the domain", w.name))
        })?;
        if elems[i].0.sort != w.sort {
            return Err(LogicError::SortMismatch(w.name.clone()));
        }
        literals.push(Literal::Equals(i, Term::Var(w.clone())));
    }
    let mut rels: Vec<_> = vocab.relations.iter().collect();
    rels.sort_by(|a, b| a.name.cmp(&b.name));
    for r in rels {
        let columns: Vec<Vec<usize>> = r
            .args
            .iter()
            .map(|sort| {
                (0..elems.len())
                    .filter(|&i| &elems[i].0.sort == sort)
                    .collect()
            })
            .collect();
        let tuples: Vec<Vec<usize>> = if columns.is_empty() {
            vec![vec![]]
        } else {
            columns.into_iter().multi_cartesian_product().collect()
        };
        for args in tuples {
            let tuple: Vec<Elem> = args.iter().map(|&i| elems[i].1.clone()).collect();
            literals.push(Literal::Rel {
                name: r.name.clone(),
                positive: s.holds(&r.name, &tuple),
                args,
            });
        }
    }
    Ok(Diagram { elems, literals })
}

impl Diagram {
    fn var(&self, i: usize) -> Term {
        Term::Var(self.elems[i].0.clone())
    }

    pub fn literal_formula(&self, l: &Literal) -> Formula {
        match l {
            Literal::Distinct(a, b) => Formula::neq(self.var(*a), self.var(*b)),
            Literal::Equals(a, t) => Formula::eq(self.var(*a), t.clone()),
            Literal::Rel {
                name,
                args,
                positive,
            } => {
                let atom = Formula::rel(name.clone(), args.iter().map(|&i| self.var(i)).collect());
                if *positive {
                    atom
                } else {
                    Formula::Not(Box::new(atom))
                }
            }
        }
    }

    /// Element variables mentioned by at least one literal.
    pub fn used_vars(&self) -> Vec<Var> {
        (0..self.elems.len())
            .filter(|&i| self.literals.iter().any(|l| l.mentions(i)))
            .map(|i| self.elems[i].0.clone())
            .collect()
    }

    /// `exists x. psi_distinct & psi_identity & psi_rels`. Variables that no
    /// literal mentions are omitted from the prefix; domains are nonempty, so
    /// this does not change the meaning.
    pub fn to_formula(&self) -> Formula {
        let body = Formula::and(self.literals.iter().map(|l| self.literal_formula(l)));
        Formula::exists(self.used_vars(), body)
    }

    /// The negation of the diagram as a universally quantified clause.
    pub fn negation(&self) -> Formula {
        let body = Formula::or(
            self.literals
                .iter()
                .map(|l| Formula::not(self.literal_formula(l)).nnf()),
        );
        Formula::forall(self.used_vars(), body)
    }

    /// [`negation`](Self::negation) with every element that equals a constant
    /// or view variable replaced by it, so that element is not quantified.
    pub fn negation_substituted(&self) -> Formula {
        let mut subst: BTreeMap<&Var, &Term> = BTreeMap::new();
        let mut used = BTreeSet::new();
        for (k, l) in self.literals.iter().enumerate() {
            if let Literal::Equals(i, t) = l {
                let v = &self.elems[*i].0;
                if !subst.contains_key(v) {
                    subst.insert(v, t);
                    used.insert(k);
                }
            }
        }
        let body = Formula::or(
            self.literals
                .iter()
                .enumerate()
                .filter(|(k, _)| !used.contains(k))
                .map(|(_, l)| {
                    Formula::not(self.literal_formula(l))
                        .nnf()
                        .substitute(&|v| subst.get(v).map(|t| (*t).clone()))
                }),
        );
        let vars: Vec<Var> = self.used_vars().into_iter().filter(|v| !subst.contains_key(v)).collect();
        // Rename the remaining variables to the first names of their sort, so
        // clauses equal up to element choice print alike.
        let mut pairs = Vec::new();
        let mut next: BTreeMap<&Sort, usize> = BTreeMap::new();
        for v in &vars {
            let j = next.entry(&v.sort).or_default();
            let name = self.elems.iter().filter(|(w, _)| w.sort == v.sort).nth(*j).expect("element").0.clone();
            *j += 1;
            pairs.push((v.clone(), name));
        }
        let renamed = pairs.iter().map(|(_, to)| to.clone()).collect();
        Formula::forall(renamed, body.rename_vars(&pairs))
    }

    /// Keeps only the literals selected by `keep`.
    pub fn restrict(&self, keep: impl Fn(usize, &Literal) -> bool) -> Diagram {
        Diagram {
            elems: self.elems.clone(),
            literals: self
                .literals
                .iter()
                .enumerate()
                .filter(|(i, l)| keep(*i, l))
                .map(|(_, l)| l.clone())
                .collect(),
        }
    }

    /// Removes every literal mentioning element `i`.
    pub fn drop_element(&self, i: usize) -> Diagram {
        self.restrict(|_, l| !l.mentions(i))
    }
}

/// True iff `(small, small_val)` is isomorphic to a substructure of
/// `(big, big_val)` by an embedding that respects constants and the view.
pub fn is_substructure(
    vocab: &Vocabulary,
    small: &Structure,
    small_val: &Valuation,
    big: &Structure,
    big_val: &Valuation,
) -> Result<bool, LogicError> {
    if small_val.keys().ne(big_val.keys()) {
        return Err(LogicError::Malformed(
            "valuations bind different view variables".into(),
        ));
    }
    small.validate(vocab)?;
    big.validate(vocab)?;

    // Elements whose image is forced by the view or a constant.
    let mut forced: Vec<(Elem, Elem)> = small_val
        .iter()
        .map(|(w, e)| (e.clone(), big_val[w].clone()))
        .collect();
    for c in &vocab.constants {
        forced.push((small.constants[&c.name].clone(), big.constants[&c.name].clone()));
    }
    let mut order: Vec<Elem> = Vec::new();
    let mut map: BTreeMap<Elem, Elem> = BTreeMap::new();
    for (a, b) in forced {
        match map.get(&a) {
            Some(x) if *x != b => return Ok(false),
            Some(_) => {}
            None => {
                if small.sort_of(&a) != big.sort_of(&b) || map.values().any(|x| *x == b) {
                    return Ok(false);
                }
                order.push(a.clone());
                map.insert(a, b);
            }
        }
    }
    let fixed = order.len();
    for sort in &vocab.sorts {
        order.extend(small.elems(sort).iter().filter(|e| !map.contains_key(*e)).cloned());
    }
    let pos: BTreeMap<&Elem, usize> = order.iter().enumerate().map(|(i, e)| (e, i)).collect();

    // Each tuple of `small` is checked once its last element is placed.
    let mut checks: Vec<Vec<(&str, Vec<Elem>)>> = vec![Vec::new(); order.len() + 1];
    for r in &vocab.relations {
        let cols: Vec<Vec<Elem>> = r.args.iter().map(|s| small.elems(s).to_vec()).collect();
        let tuples: Vec<Vec<Elem>> = if cols.is_empty() {
            vec![vec![]]
        } else {
            cols.into_iter().multi_cartesian_product().collect()
        };
        for t in tuples {
            let last = t.iter().map(|e| pos[e] + 1).max().unwrap_or(0);
            checks[last].push((r.name.as_str(), t));
        }
    }
    let consistent = |map: &BTreeMap<Elem, Elem>, k: usize| {
        checks[k].iter().all(|(r, t)| {
            let image: Vec<Elem> = t.iter().map(|e| map[e].clone()).collect();
            small.holds(r, t) == big.holds(r, &image)
        })
    };
    if !(0..=fixed).all(|k| consistent(&map, k)) {
        return Ok(false);
    }
    fn extend(
        k: usize,
        order: &[Elem],
        small: &Structure,
        big: &Structure,
        map: &mut BTreeMap<Elem, Elem>,
        used: &mut BTreeSet<Elem>,
        consistent: &dyn Fn(&BTreeMap<Elem, Elem>, usize) -> bool,
    ) -> bool {
        if k == order.len() {
            return true;
        }
        let e = &order[k];
        let sort = small.sort_of(e).expect("validated");
        for b in big.elems(sort) {
            if used.contains(b) {
                continue;
            }
            map.insert(e.clone(), b.clone());
            used.insert(b.clone());
            if consistent(map, k + 1) && extend(k + 1, order, small, big, map, used, consistent) {
                return true;
            }
            used.remove(b);
            map.remove(e);
        }
        false
    }
    let mut used: BTreeSet<Elem> = map.values().cloned().collect();
    Ok(extend(fixed, &order, small, big, &mut map, &mut used, &consistent))
}
