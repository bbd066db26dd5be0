use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{LogicError, Sort, Var};

/// Element names. Names are unique across all sorts of a structure.
pub type Elem = String;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationDecl {
    pub name: String,
    pub args: Vec<Sort>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConstantDecl {
    pub name: String,
    pub sort: Sort,
}

/// Sorts, relation symbols and constant symbols, in declaration order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocabulary {
    pub sorts: Vec<Sort>,
    pub relations: Vec<RelationDecl>,
    pub constants: Vec<ConstantDecl>,
}

impl Vocabulary {
    pub fn new(
        sorts: Vec<Sort>,
        relations: Vec<RelationDecl>,
        constants: Vec<ConstantDecl>,
    ) -> Result<Self, LogicError> {
        let mut seen = BTreeSet::new();
        for s in &sorts {
            if !seen.insert(s.0.clone()) {
                return Err(LogicError::Duplicate(s.0.clone()));
            }
        }
        let mut symbols = BTreeSet::new();
        for r in &relations {
            if !symbols.insert(r.name.clone()) {
                return Err(LogicError::Duplicate(r.name.clone()));
            }
            for s in &r.args {
                if !sorts.contains(s) {
                    return Err(LogicError::UnknownSort(s.0.clone()));
                }
            }
        }
        for c in &constants {
            if !symbols.insert(c.name.clone()) {
                return Err(LogicError::Duplicate(c.name.clone()));
            }
            if !sorts.contains(&c.sort) {
                return Err(LogicError::UnknownSort(c.sort.0.clone()));
            }
        }
        Ok(Vocabulary {
            sorts,
            relations,
            constants,
        })
    }

    pub fn relation(&self, name: &str) -> Option<&RelationDecl> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn constant(&self, name: &str) -> Option<&ConstantDecl> {
        self.constants.iter().find(|c| c.name == name)
    }

    pub fn has_sort(&self, sort: &Sort) -> bool {
        self.sorts.contains(sort)
    }

    /// True if `name` is a relation, constant or sort name.
    pub fn is_symbol(&self, name: &str) -> bool {
        self.relation(name).is_some()
            || self.constant(name).is_some()
            || self.sorts.iter().any(|s| s.0 == name)
    }
}

/// A finite first-order structure over a vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Structure {
    pub domain: BTreeMap<Sort, Vec<Elem>>,
    pub relations: BTreeMap<String, BTreeSet<Vec<Elem>>>,
    #[serde(default)]
    pub constants: BTreeMap<String, Elem>,
}

impl Structure {
    /// Builds a structure with the given domains and empty relations.
    /// Constants default to the first element of their sort.
    pub fn empty(
        vocab: &Vocabulary,
        domain: BTreeMap<Sort, Vec<Elem>>,
    ) -> Result<Structure, LogicError> {
        let relations = vocab
            .relations
            .iter()
            .map(|r| (r.name.clone(), BTreeSet::new()))
            .collect();
        let mut constants = BTreeMap::new();
        for c in &vocab.constants {
            let first = domain
                .get(&c.sort)
                .and_then(|d| d.first())
                .ok_or_else(|| LogicError::EmptySort(c.sort.0.clone()))?;
            constants.insert(c.name.clone(), first.clone());
        }
        let s = Structure {
            domain,
            relations,
            constants,
        };
        s.validate(vocab)?;
        Ok(s)
    }

    /// Builds a structure with `sizes[s]` elements per sort, named `<sort><i>`.
    pub fn with_sizes(
        vocab: &Vocabulary,
        sizes: &BTreeMap<Sort, usize>,
    ) -> Result<Structure, LogicError> {
        let domain = vocab
            .sorts
            .iter()
            .map(|s| {
                let n = sizes.get(s).copied().unwrap_or(1);
                (s.clone(), (0..n).map(|i| format!("{}{}", s.0, i)).collect())
            })
            .collect();
        Structure::empty(vocab, domain)
    }

    /// Checks that the structure interprets exactly the vocabulary, that every
    /// sort is nonempty, and that tuples and constants are well-sorted.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), LogicError> {
        let mut owner: BTreeMap<&str, &Sort> = BTreeMap::new();
        for s in &vocab.sorts {
            let elems = self
                .domain
                .get(s)
                .ok_or_else(|| LogicError::EmptySort(s.0.clone()))?;
            if elems.is_empty() {
                return Err(LogicError::EmptySort(s.0.clone()));
            }
            for e in elems {
                if owner.insert(e, s).is_some() {
                    return Err(LogicError::Malformed(format!("element {e} occurs twice")));
                }
            }
        }
        if self.domain.len() != vocab.sorts.len() {
            return Err(LogicError::Malformed("domain has undeclared sorts".into()));
        }
        for r in &vocab.relations {
            let tuples = self
                .relations
                .get(&r.name)
                .ok_or_else(|| LogicError::Malformed(format!("relation {} missing", r.name)))?;
            for t in tuples {
                if t.len() != r.args.len()
                    || t.iter().zip(&r.args).any(|(e, s)| owner.get(e.as_str()) != Some(&s))
                {
                    return Err(LogicError::Malformed(format!(
                        "ill-sorted tuple {:?} in {}",
                        t, r.name
                    )));
                }
            }
        }
        if self.relations.len() != vocab.relations.len() {
            return Err(LogicError::Malformed("structure has undeclared relations".into()));
        }
        for c in &vocab.constants {
            let e = self
                .constants
                .get(&c.name)
                .ok_or_else(|| LogicError::Malformed(format!("constant {} missing", c.name)))?;
            if owner.get(e.as_str()) != Some(&&c.sort) {
                return Err(LogicError::Malformed(format!("ill-sorted constant {}", c.name)));
            }
        }
        if self.constants.len() != vocab.constants.len() {
            return Err(LogicError::Malformed("structure has undeclared constants".into()));
        }
        Ok(())
    }

    pub fn elems(&self, sort: &Sort) -> &[Elem] {
        self.domain.get(sort).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn sort_of(&self, elem: &str) -> Option<&Sort> {
        self.domain
            .iter()
            .find(|(_, es)| es.iter().any(|e| e == elem))
            .map(|(s, _)| s)
    }

    pub fn holds(&self, rel: &str, tuple: &[Elem]) -> bool {
        self.relations
            .get(rel)
            .is_some_and(|ts| ts.contains(tuple))
    }

    pub fn set(&mut self, rel: &str, tuple: Vec<Elem>, value: bool) {
        let ts = self.relations.entry(rel.to_string()).or_default();
        if value {
            ts.insert(tuple);
        } else {
            ts.remove(&tuple);
        }
    }

    pub fn size(&self) -> usize {
        self.domain.values().map(|v| v.len()).sum()
    }

    /// Number of elements per sort.
    pub fn sizes(&self) -> BTreeMap<Sort, usize> {
        self.domain.iter().map(|(s, v)| (s.clone(), v.len())).collect()
    }
}

/// An assignment of elements to variables.
pub type Valuation = BTreeMap<Var, Elem>;
