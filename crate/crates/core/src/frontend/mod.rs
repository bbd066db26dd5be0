//! The `.pfz` model language: abstract syntax, parser and canonical printer.
//!
//! A model file declares a vocabulary, initial conditions, actions, safety
//! properties and optionally a phase automaton. `parse_model(&pretty(m))`
//! reproduces `m` exactly.

mod lexer;
mod parser;
mod printer;

use std::fmt;

use crate::logic::{Formula, Term, Var, Vocabulary};

pub use parser::parse_model;
pub use printer::pretty;

/// Words that cannot be used as identifiers.
pub const KEYWORDS: &[&str] = &[
    "sort",
    "relation",
    "constant",
    "init",
    "action",
    "require",
    "safety",
    "invariant",
    "automaton",
    "phase",
    "view",
    "on",
    "where",
    "self",
    "forall",
    "exists",
    "true",
    "false",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelFile {
    pub vocab: Vocabulary,
    pub init: Vec<Formula>,
    pub actions: Vec<ActionDecl>,
    pub safety: Vec<SafetyDecl>,
    /// Top-level invariant clauses, checked as a flat invariant.
    pub invariants: Vec<Formula>,
    pub automaton: Option<AutomatonDecl>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionDecl {
    pub name: String,
    pub params: Vec<Var>,
    pub requires: Vec<Formula>,
    pub updates: Vec<UpdateDecl>,
}

/// `r(args) := value`. Updates apply in order; a later update wins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateDecl {
    pub relation: String,
    pub args: Vec<UpdateArg>,
    pub value: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UpdateArg {
    Term(Term),
    /// `*`: the update applies to every element in this position.
    Wildcard,
}

/// A safety property whose free variables are the listed view variables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SafetyDecl {
    pub view: Vec<Var>,
    pub formula: Formula,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AutomatonDecl {
    pub view: Vec<Var>,
    pub phases: Vec<PhaseDecl>,
    pub edges: Vec<EdgeDecl>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseDecl {
    pub name: String,
    pub initial: bool,
    /// Characterization clauses; empty means no characterization given.
    pub invariants: Vec<Formula>,
}

/// `from -> to on action(pattern) where guard`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeDecl {
    pub from: String,
    pub to: String,
    pub action: String,
    pub pattern: Vec<PatternArg>,
    pub guard: Option<Formula>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum PatternArg {
    Wildcard,
    /// The parameter equals this view variable.
    View(Var),
    /// The parameter is named for use in the guard.
    Bind(Var),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
    pub expected: Vec<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)?;
        if !self.expected.is_empty() {
            write!(f, " (expected {})", self.expected.join(" or "))?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseError {}

impl ModelFile {
    pub fn action(&self, name: &str) -> Option<&ActionDecl> {
        self.actions.iter().find(|a| a.name == name)
    }
}

#[cfg(test)]
mod tests;
