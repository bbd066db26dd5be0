//! Many-sorted first-order logic: formulas, finite structures, evaluation,
//! diagrams and the substructure order.

mod diagram;
mod eval;
mod formula;
mod structure;

use thiserror::Error;

pub use diagram::{diagram, is_substructure, Diagram, Literal};
pub use eval::{eval, eval_two_vocab};
pub use formula::{Formula, QuantifierClass, Sort, Term, Var};
pub use structure::{ConstantDecl, Elem, RelationDecl, Structure, Valuation, Vocabulary};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LogicError {
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("unknown sort `{0}`")]
    UnknownSort(String),
    #[error("duplicate declaration of `{0}`")]
    Duplicate(String),
    #[error("sort mismatch at `{0}`")]
    SortMismatch(String),
    #[error("`{0}` applied to {1} arguments, expected {2}")]
    Arity(String, usize, usize),
    #[error("variable `{0}` is not bound")]
    Unbound(String),
    #[error("variable `{0}` shadows an enclosing binding")]
    Shadowing(String),
    #[error("symbol `{0}` is already primed")]
    AlreadyPrimed(String),
    #[error("sort `{0}` has an empty domain")]
    EmptySort(String),
    #[error("malformed structure: {0}")]
    Malformed(String),
}

/// Checks that `f` is well-sorted over `vocab`, that every free variable is in
/// `scope`, and that no quantifier shadows an enclosing binding.
pub fn typecheck(vocab: &Vocabulary, scope: &[Var], f: &Formula) -> Result<(), LogicError> {
    fn term_sort(vocab: &Vocabulary, bound: &[Var], t: &Term) -> Result<Sort, LogicError> {
        match t {
            Term::Var(v) => {
                if bound.iter().any(|b| b == v) {
                    Ok(v.sort.clone())
                } else if bound.iter().any(|b| b.name == v.name) {
                    Err(LogicError::SortMismatch(v.name.clone()))
                } else {
                    Err(LogicError::Unbound(v.name.clone()))
                }
            }
            Term::Const { name, .. } => vocab
                .constant(name)
                .map(|c| c.sort.clone())
                .ok_or_else(|| LogicError::UnknownSymbol(name.clone())),
        }
    }
    fn go(vocab: &Vocabulary, bound: &mut Vec<Var>, f: &Formula) -> Result<(), LogicError> {
        match f {
            Formula::True | Formula::False => Ok(()),
            Formula::Rel { name, args, .. } => {
                let decl = vocab
                    .relation(name)
                    .ok_or_else(|| LogicError::UnknownSymbol(name.clone()))?;
                if decl.args.len() != args.len() {
                    return Err(LogicError::Arity(name.clone(), args.len(), decl.args.len()));
                }
                for (a, s) in args.iter().zip(&decl.args) {
                    if &term_sort(vocab, bound, a)? != s {
                        return Err(LogicError::SortMismatch(format!("{a} in {name}")));
                    }
                }
                Ok(())
            }
            Formula::Eq(a, b) => {
                if term_sort(vocab, bound, a)? != term_sort(vocab, bound, b)? {
                    return Err(LogicError::SortMismatch(format!("{a} = {b}")));
                }
                Ok(())
            }
            Formula::Not(g) => go(vocab, bound, g),
            Formula::And(gs) | Formula::Or(gs) => gs.iter().try_for_each(|g| go(vocab, bound, g)),
            Formula::Implies(a, b) | Formula::Iff(a, b) => {
                go(vocab, bound, a)?;
                go(vocab, bound, b)
            }
            Formula::Forall(vs, g) | Formula::Exists(vs, g) => {
                let n = bound.len();
                for v in vs {
                    if !vocab.has_sort(&v.sort) {
                        return Err(LogicError::UnknownSort(v.sort.0.clone()));
                    }
                    if bound.iter().any(|b| b.name == v.name) {
                        return Err(LogicError::Shadowing(v.name.clone()));
                    }
                    bound.push(v.clone());
                }
                let r = go(vocab, bound, g);
                bound.truncate(n);
                r
            }
        }
    }
    go(vocab, &mut scope.to_vec(), f)
}

#[cfg(test)]
mod tests;
