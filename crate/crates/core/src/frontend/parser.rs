use crate::logic::{
    typecheck, ConstantDecl, Formula, RelationDecl, Sort, Term, Var, Vocabulary,
};

use super::lexer::{lex, Tok, Token};
use super::{
    ActionDecl, AutomatonDecl, EdgeDecl, ModelFile, ParseError, PatternArg, PhaseDecl,
    SafetyDecl, UpdateArg, UpdateDecl, KEYWORDS,
};

/// Parses a `.pfz` model.
pub fn parse_model(src: &str) -> Result<ModelFile, ParseError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        vocab: Vocabulary::default(),
    };
    p.model()
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    vocab: Vocabulary,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, t: &Token, message: impl Into<String>, expected: &[&str]) -> ParseError {
        ParseError {
            line: t.line,
            col: t.col,
            message: message.into(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn unexpected(&self, expected: &[&str]) -> ParseError {
        let t = self.peek();
        self.error_at(t, format!("unexpected {}", t.tok.describe()), expected)
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(&self.peek().tok, Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.unexpected(&[&format!("`{p}`")]))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.unexpected(&[&format!("`{kw}`")]))
        }
    }

    /// A non-keyword identifier.
    fn ident(&mut self) -> PResult<(String, Token)> {
        match &self.peek().tok {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                Ok((s, self.bump()))
            }
            Tok::Ident(s) => {
                let msg = format!("`{s}` is a keyword");
                Err(self.error_at(self.peek(), msg, &["identifier"]))
            }
            _ => Err(self.unexpected(&["identifier"])),
        }
    }

    fn sort(&mut self) -> PResult<Sort> {
        let (name, tok) = self.ident()?;
        let s = Sort::new(name.clone());
        if !self.vocab.has_sort(&s) {
            return Err(self.error_at(&tok, format!("unknown sort `{name}`"), &[]));
        }
        Ok(s)
    }

    fn fresh_name(&self, name: &str, tok: &Token) -> PResult<()> {
        if self.vocab.is_symbol(name) {
            return Err(self.error_at(tok, format!("`{name}` is already declared"), &[]));
        }
        Ok(())
    }

    /// `x: s, y: t` (at least one binder).
    fn binders(&mut self, scope: &[Var]) -> PResult<Vec<Var>> {
        let mut out: Vec<Var> = Vec::new();
        loop {
            let (name, tok) = self.ident()?;
            if self.vocab.is_symbol(&name) {
                return Err(self.error_at(&tok, format!("`{name}` names a declared symbol"), &[]));
            }
            if out.iter().chain(scope).any(|v| v.name == name) {
                return Err(self.error_at(&tok, format!("variable `{name}` is already bound"), &[]));
            }
            self.expect_punct(":")?;
            let sort = self.sort()?;
            out.push(Var::new(name, &sort));
            if !self.eat_punct(",") {
                return Ok(out);
            }
        }
    }

    fn model(&mut self) -> PResult<ModelFile> {
        let mut m = ModelFile {
            vocab: Vocabulary::default(),
            init: vec![],
            actions: vec![],
            safety: vec![],
            invariants: vec![],
            automaton: None,
        };
        let mut automaton_tok = None;
        loop {
            let t = self.peek().clone();
            let kw = match &t.tok {
                Tok::Eof => break,
                Tok::Ident(s) => s.clone(),
                _ => String::new(),
            };
            match kw.as_str() {
                "sort" => {
                    self.bump();
                    let (name, tok) = self.ident()?;
                    self.fresh_name(&name, &tok)?;
                    self.vocab.sorts.push(Sort::new(name));
                }
                "relation" => {
                    self.bump();
                    let (name, tok) = self.ident()?;
                    self.fresh_name(&name, &tok)?;
                    let mut args = vec![];
                    if self.eat_punct("(") {
                        if !self.is_punct(")") {
                            loop {
                                args.push(self.sort()?);
                                if !self.eat_punct(",") {
                                    break;
                                }
                            }
                        }
                        self.expect_punct(")")?;
                    }
                    self.vocab.relations.push(RelationDecl { name, args });
                }
                "constant" => {
                    self.bump();
                    let (name, tok) = self.ident()?;
                    self.fresh_name(&name, &tok)?;
                    self.expect_punct(":")?;
                    let sort = self.sort()?;
                    self.vocab.constants.push(ConstantDecl { name, sort });
                }
                "init" => {
                    self.bump();
                    m.init.push(self.checked_formula(&[])?);
                }
                "action" => {
                    self.bump();
                    let a = self.action()?;
                    if m.actions.iter().any(|b| b.name == a.name) {
                        return Err(self.error_at(&t, format!("duplicate action `{}`", a.name), &[]));
                    }
                    m.actions.push(a);
                }
                "safety" => {
                    self.bump();
                    let view = if self.eat_punct("[") {
                        let v = self.binders(&[])?;
                        self.expect_punct("]")?;
                        v
                    } else {
                        vec![]
                    };
                    let formula = self.checked_formula(&view)?;
                    m.safety.push(SafetyDecl { view, formula });
                }
                "invariant" => {
                    self.bump();
                    m.invariants.push(self.checked_formula(&[])?);
                }
                "automaton" => {
                    if m.automaton.is_some() {
                        return Err(self.error_at(&t, "only one automaton block is allowed", &[]));
                    }
                    self.bump();
                    m.automaton = Some(self.automaton(&m.actions, &t)?);
                    automaton_tok = Some(t);
                }
                _ => {
                    return Err(self.unexpected(&[
                        "`sort`",
                        "`relation`",
                        "`constant`",
                        "`init`",
                        "`action`",
                        "`safety`",
                        "`invariant`",
                        "`automaton`",
                    ]))
                }
            }
        }
        if let (Some(a), Some(t)) = (&m.automaton, &automaton_tok) {
            for s in &m.safety {
                if let Some(v) = s.view.iter().find(|v| !a.view.contains(v)) {
                    return Err(self.error_at(
                        t,
                        format!("safety view variable `{}` is not in the automaton view", v.name),
                        &[],
                    ));
                }
            }
        }
        m.vocab = Vocabulary::new(
            self.vocab.sorts.clone(),
            self.vocab.relations.clone(),
            self.vocab.constants.clone(),
        )
        .map_err(|e| self.error_at(self.peek(), e.to_string(), &[]))?;
        Ok(m)
    }

    fn action(&mut self) -> PResult<ActionDecl> {
        let (name, _) = self.ident()?;
        let mut params = vec![];
        if self.eat_punct("(") {
            if !self.is_punct(")") {
                params = self.binders(&[])?;
            }
            self.expect_punct(")")?;
        }
        let open = self.peek().clone();
        self.expect_punct("{")?;
        let mut requires = vec![];
        let mut updates = vec![];
        loop {
            if self.eat_punct("}") {
                break;
            }
            if matches!(self.peek().tok, Tok::Eof) {
                return Err(self.error_at(
                    self.peek(),
                    format!("unterminated action block opened at line {}", open.line),
                    &["`}`"],
                ));
            }
            if self.eat_kw("require") {
                requires.push(self.checked_formula(&params)?);
                continue;
            }
            let (rel, tok) = match self.ident() {
                Ok(x) => x,
                Err(_) => return Err(self.unexpected(&["`require`", "relation update", "`}`"])),
            };
            let decl = self
                .vocab
                .relation(&rel)
                .cloned()
                .ok_or_else(|| self.error_at(&tok, format!("unknown relation `{rel}`"), &[]))?;
            let mut args = vec![];
            if self.eat_punct("(") {
                loop {
                    if self.eat_punct("*") {
                        args.push(UpdateArg::Wildcard);
                    } else {
                        let (arg, atok) = self.ident()?;
                        let (term, sort) = self.resolve_term(&arg, &params, &atok)?;
                        if args.len() >= decl.args.len() {
                            return Err(self.error_at(
                                &tok,
                                format!("`{rel}` takes {} arguments", decl.args.len()),
                                &[],
                            ));
                        }
                        if decl.args[args.len()] != sort {
                            return Err(self.error_at(
                                &atok,
                                format!("argument `{arg}` has the wrong sort for `{rel}`"),
                                &[],
                            ));
                        }
                        args.push(UpdateArg::Term(term));
                    }
                    if !self.eat_punct(",") {
                        break;
                    }
                }
                self.expect_punct(")")?;
            }
            if args.len() != decl.args.len() {
                return Err(self.error_at(
                    &tok,
                    format!("`{rel}` takes {} arguments, got {}", decl.args.len(), args.len()),
                    &[],
                ));
            }
            self.expect_punct(":=")?;
            let value = if self.eat_kw("true") {
                true
            } else if self.eat_kw("false") {
                false
            } else {
                return Err(self.unexpected(&["`true`", "`false`"]));
            };
            updates.push(UpdateDecl {
                relation: rel,
                args,
                value,
            });
        }
        Ok(ActionDecl {
            name,
            params,
            requires,
            updates,
        })
    }

    fn automaton(&mut self, actions: &[ActionDecl], start: &Token) -> PResult<AutomatonDecl> {
        self.expect_punct("{")?;
        let mut view = vec![];
        if self.eat_kw("view") {
            view = self.binders(&[])?;
        }
        let mut phases: Vec<PhaseDecl> = vec![];
        let mut edges = vec![];
        loop {
            if self.eat_punct("}") {
                break;
            }
            let t = self.peek().clone();
            if matches!(t.tok, Tok::Eof) {
                return Err(self.error_at(
                    &t,
                    format!("unterminated automaton block opened at line {}", start.line),
                    &["`}`"],
                ));
            }
            if self.is_kw("init") || self.is_kw("phase") {
                let initial = self.eat_kw("init");
                self.expect_kw("phase")?;
                let (name, tok) = self.ident()?;
                if phases.iter().any(|p| p.name == name) {
                    return Err(self.error_at(&tok, format!("duplicate phase `{name}`"), &[]));
                }
                let mut invariants = vec![];
                if self.eat_punct("{") {
                    while !self.eat_punct("}") {
                        if !self.eat_kw("invariant") {
                            return Err(self.unexpected(&["`invariant`", "`}`"]));
                        }
                        invariants.push(self.checked_formula(&view)?);
                    }
                }
                phases.push(PhaseDecl {
                    name,
                    initial,
                    invariants,
                });
                continue;
            }
            let (from, to) = if self.eat_kw("self") {
                let (q, tok) = self.ident()?;
                self.known_phase(&phases, &q, &tok)?;
                (q.clone(), q)
            } else if matches!(&t.tok, Tok::Ident(_)) && self.peek_at(1) == &Tok::Punct("->") {
                let (q, tok) = self.ident()?;
                self.known_phase(&phases, &q, &tok)?;
                self.expect_punct("->")?;
                let (p, tok) = self.ident()?;
                self.known_phase(&phases, &p, &tok)?;
                (q, p)
            } else {
                return Err(self.unexpected(&["`phase`", "`init`", "`self`", "edge", "`}`"]));
            };
            self.expect_kw("on")?;
            edges.push(self.edge(from, to, &view, actions)?);
        }
        match phases.iter().filter(|p| p.initial).count() {
            1 => {}
            0 => return Err(self.error_at(start, "automaton has no `init phase`", &[])),
            _ => return Err(self.error_at(start, "automaton has more than one `init phase`", &[])),
        }
        Ok(AutomatonDecl {
            view,
            phases,
            edges,
        })
    }

    fn known_phase(&self, phases: &[PhaseDecl], q: &str, tok: &Token) -> PResult<()> {
        if phases.iter().any(|p| p.name == q) {
            Ok(())
        } else {
            Err(self.error_at(tok, format!("unknown phase `{q}`"), &[]))
        }
    }

    fn edge(
        &mut self,
        from: String,
        to: String,
        view: &[Var],
        actions: &[ActionDecl],
    ) -> PResult<EdgeDecl> {
        let (action, tok) = self.ident()?;
        let decl = actions
            .iter()
            .find(|a| a.name == action)
            .ok_or_else(|| self.error_at(&tok, format!("unknown action `{action}`"), &[]))?;
        let mut pattern = vec![];
        let mut binds: Vec<Var> = vec![];
        if self.eat_punct("(") {
            if !self.is_punct(")") {
                loop {
                    let Some(param) = decl.params.get(pattern.len()) else {
                        return Err(self.error_at(
                            self.peek(),
                            format!("`{action}` takes {} arguments", decl.params.len()),
                            &[],
                        ));
                    };
                    if self.eat_punct("*") {
                        pattern.push(PatternArg::Wildcard);
                    } else {
                        let (name, atok) = self.ident()?;
                        if let Some(v) = view.iter().find(|v| v.name == name) {
                            if v.sort != param.sort {
                                return Err(self.error_at(
                                    &atok,
                                    format!("view variable `{name}` has sort {}, parameter expects {}", v.sort, param.sort),
                                    &[],
                                ));
                            }
                            pattern.push(PatternArg::View(v.clone()));
                        } else {
                            if self.vocab.is_symbol(&name) || binds.iter().any(|b| b.name == name) {
                                return Err(self.error_at(
                                    &atok,
                                    format!("`{name}` cannot be bound here"),
                                    &[],
                                ));
                            }
                            let v = Var::new(name, &param.sort);
                            binds.push(v.clone());
                            pattern.push(PatternArg::Bind(v));
                        }
                    }
                    if !self.eat_punct(",") {
                        break;
                    }
                }
            }
            self.expect_punct(")")?;
        }
        if pattern.len() != decl.params.len() {
            return Err(self.error_at(
                &tok,
                format!("`{action}` takes {} arguments, got {}", decl.params.len(), pattern.len()),
                &[],
            ));
        }
        let guard = if self.eat_kw("where") {
            let scope: Vec<Var> = view.iter().chain(&binds).cloned().collect();
            Some(self.checked_formula(&scope)?)
        } else {
            None
        };
        Ok(EdgeDecl {
            from,
            to,
            action,
            pattern,
            guard,
        })
    }

    fn resolve_term(&self, name: &str, scope: &[Var], tok: &Token) -> PResult<(Term, Sort)> {
        if let Some(v) = scope.iter().rev().find(|v| v.name == name) {
            return Ok((Term::Var(v.clone()), v.sort.clone()));
        }
        if let Some(c) = self.vocab.constant(name) {
            return Ok((Term::constant(name), c.sort.clone()));
        }
        Err(self.error_at(tok, format!("unknown identifier `{name}`"), &[]))
    }

    fn checked_formula(&mut self, scope: &[Var]) -> PResult<Formula> {
        let start = self.peek().clone();
        let mut stack = scope.to_vec();
        let f = self.formula(&mut stack)?;
        typecheck(&self.vocab, scope, &f).map_err(|e| self.error_at(&start, e.to_string(), &[]))?;
        Ok(f)
    }

    fn formula(&mut self, scope: &mut Vec<Var>) -> PResult<Formula> {
        let lhs = self.implication(scope)?;
        if self.eat_punct("<->") {
            let rhs = self.implication(scope)?;
            return Ok(Formula::iff(lhs, rhs));
        }
        Ok(lhs)
    }

    fn implication(&mut self, scope: &mut Vec<Var>) -> PResult<Formula> {
        let lhs = self.disjunction(scope)?;
        if self.eat_punct("->") {
            let rhs = self.implication(scope)?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self, scope: &mut Vec<Var>) -> PResult<Formula> {
        let mut parts = vec![self.conjunction(scope)?];
        while self.eat_punct("|") {
            parts.push(self.conjunction(scope)?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Formula::Or(parts)
        })
    }

    fn conjunction(&mut self, scope: &mut Vec<Var>) -> PResult<Formula> {
        let mut parts = vec![self.unary(scope)?];
        while self.eat_punct("&") {
            parts.push(self.unary(scope)?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Formula::And(parts)
        })
    }

    fn unary(&mut self, scope: &mut Vec<Var>) -> PResult<Formula> {
        if self.eat_punct("!") {
            return Ok(Formula::Not(Box::new(self.unary(scope)?)));
        }
        self.primary(scope)
    }

    fn primary(&mut self, scope: &mut Vec<Var>) -> PResult<Formula> {
        if self.eat_punct("(") {
            let f = self.formula(scope)?;
            self.expect_punct(")")?;
            return Ok(f);
        }
        if self.eat_kw("true") {
            return Ok(Formula::True);
        }
        if self.eat_kw("false") {
            return Ok(Formula::False);
        }
        if self.is_kw("forall") || self.is_kw("exists") {
            let universal = self.eat_kw("forall");
            if !universal {
                self.bump();
            }
            let vars = self.binders(scope)?;
            self.expect_punct(".")?;
            let n = scope.len();
            scope.extend(vars.iter().cloned());
            let body = self.formula(scope);
            scope.truncate(n);
            let body = Box::new(body?);
            return Ok(if universal {
                Formula::Forall(vars, body)
            } else {
                Formula::Exists(vars, body)
            });
        }
        let (name, tok) = match self.ident() {
            Ok(x) => x,
            Err(_) => {
                return Err(self.unexpected(&["formula"]));
            }
        };
        if self.is_punct("(") {
            if self.vocab.relation(&name).is_none() {
                return Err(self.error_at(&tok, format!("unknown relation `{name}`"), &[]));
            }
            self.bump();
            let mut args = vec![];
            if !self.is_punct(")") {
                loop {
                    let (arg, atok) = self.ident()?;
                    args.push(self.resolve_term(&arg, scope, &atok)?.0);
                    if !self.eat_punct(",") {
                        break;
                    }
                }
            }
            self.expect_punct(")")?;
            return Ok(Formula::rel(name, args));
        }
        let is_term = scope.iter().any(|v| v.name == name) || self.vocab.constant(&name).is_some();
        if !is_term {
            if self.vocab.relation(&name).is_some() {
                return Ok(Formula::rel(name, vec![]));
            }
            return Err(self.error_at(&tok, format!("unknown identifier `{name}`"), &[]));
        }
        let lhs = self.resolve_term(&name, scope, &tok)?.0;
        let negated = if self.eat_punct("=") {
            false
        } else if self.eat_punct("!=") {
            true
        } else {
            return Err(self.unexpected(&["`=`", "`!=`"]));
        };
        let (rname, rtok) = self.ident()?;
        let rhs = self.resolve_term(&rname, scope, &rtok)?.0;
        Ok(if negated {
            Formula::neq(lhs, rhs)
        } else {
            Formula::eq(lhs, rhs)
        })
    }
}
