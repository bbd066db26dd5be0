use super::{Formula, LogicError, Structure, Term, Valuation, Var};

/// Evaluates a single-vocabulary formula. Primed symbols are rejected.
pub fn eval(s: &Structure, v: &Valuation, f: &Formula) -> Result<bool, LogicError> {
    if f.has_primed() {
        return Err(LogicError::Malformed(
            "primed symbol in single-vocabulary evaluation".into(),
        ));
    }
    Evaluator {
        pre: s,
        post: s,
        val: v,
        env: Vec::new(),
    }
    .formula(f)
}

/// Evaluates a two-vocabulary formula: unprimed symbols are read from `pre`,
/// primed symbols from `post`. Both structures must share a domain.
pub fn eval_two_vocab(
    pre: &Structure,
    post: &Structure,
    v: &Valuation,
    f: &Formula,
) -> Result<bool, LogicError> {
    if pre.domain != post.domain {
        return Err(LogicError::Malformed(
            "pre and post states have different domains".into(),
        ));
    }
    Evaluator {
        pre,
        post,
        val: v,
        env: Vec::new(),
    }
    .formula(f)
}

struct Evaluator<'a> {
    pre: &'a Structure,
    post: &'a Structure,
    val: &'a Valuation,
    env: Vec<(&'a Var, &'a str)>,
}

impl<'a> Evaluator<'a> {
    fn term(&self, t: &Term) -> Result<&'a str, LogicError> {
        match t {
            Term::Var(v) => {
                if let Some((_, e)) = self.env.iter().rev().find(|(w, _)| *w == v) {
                    return Ok(e);
                }
                self.val
                    .get(v)
                    .map(|e| e.as_str())
                    .ok_or_else(|| LogicError::Unbound(v.name.clone()))
            }
            Term::Const { name, primed } => {
                let s = if *primed { self.post } else { self.pre };
                s.constants
                    .get(name)
                    .map(|e| e.as_str())
                    .ok_or_else(|| LogicError::UnknownSymbol(name.clone()))
            }
        }
    }

    fn formula(&mut self, f: &'a Formula) -> Result<bool, LogicError> {
        match f {
            Formula::True => Ok(true),
            Formula::False => Ok(false),
            Formula::Rel { name, primed, args } => {
                let s = if *primed { self.post } else { self.pre };
                let tuples = s
                    .relations
                    .get(name)
                    .ok_or_else(|| LogicError::UnknownSymbol(name.clone()))?;
                let mut tuple = Vec::with_capacity(args.len());
                for a in args {
                    tuple.push(self.term(a)?.to_string());
                }
                Ok(tuples.contains(&tuple))
            }
            Formula::Eq(a, b) => Ok(self.term(a)? == self.term(b)?),
            Formula::Not(g) => Ok(!self.formula(g)?),
            Formula::And(gs) => {
                for g in gs {
                    if !self.formula(g)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Formula::Or(gs) => {
                for g in gs {
                    if self.formula(g)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Formula::Implies(a, b) => Ok(!self.formula(a)? || self.formula(b)?),
            Formula::Iff(a, b) => Ok(self.formula(a)? == self.formula(b)?),
            Formula::Forall(vs, g) => self.quant(vs, g, true),
            Formula::Exists(vs, g) => self.quant(vs, g, false),
        }
    }

    /// Universal (`all = true`) or existential quantification over `vs`.
    fn quant(&mut self, vs: &'a [Var], body: &'a Formula, all: bool) -> Result<bool, LogicError> {
        let Some((first, rest)) = vs.split_first() else {
            return self.formula(body);
        };
        let elems = self
            .pre
            .domain
            .get(&first.sort)
            .ok_or_else(|| LogicError::UnknownSort(first.sort.0.clone()))?;
        for e in elems {
            self.env.push((first, e.as_str()));
            let r = self.quant(rest, body, all);
            self.env.pop();
            if r? != all {
                return Ok(!all);
            }
        }
        Ok(all)
    }
}
