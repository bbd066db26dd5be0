//! S-expressions as printed by SMT solvers, and evaluation of the function
//! definitions that make up a model.

use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

impl Sexp {
    pub fn atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom(a) => Some(a),
            Sexp::List(_) => None,
        }
    }

    pub fn list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::List(l) => Some(l),
            Sexp::Atom(_) => None,
        }
    }
}

/// Parses all top-level s-expressions in `text`. `;` starts a comment.
pub fn parse_all(text: &str) -> Result<Vec<Sexp>, String> {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let mut stack: Vec<Vec<Sexp>> = vec![vec![]];
    while i < chars.len() {
        let c = chars[i];
        match c {
            ';' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '(' => {
                stack.push(vec![]);
                i += 1;
            }
            ')' => {
                let done = stack.pop().ok_or("unbalanced `)`")?;
                stack
                    .last_mut()
                    .ok_or("unbalanced `)`")?
                    .push(Sexp::List(done));
                i += 1;
            }
            c if c.is_whitespace() => i += 1,
            '"' => {
                let start = i;
                i += 1;
                while i < chars.len() {
                    if chars[i] == '"' {
                        if chars.get(i + 1) == Some(&'"') {
                            i += 2;
                            continue;
                        }
                        break;
                    }
                    i += 1;
                }
                i += 1;
                let s: String = chars[start..i.min(chars.len())].iter().collect();
                stack.last_mut().unwrap().push(Sexp::Atom(s));
            }
            '|' => {
                let start = i + 1;
                i += 1;
                while i < chars.len() && chars[i] != '|' {
                    i += 1;
                }
                let s: String = chars[start..i.min(chars.len())].iter().collect();
                i += 1;
                stack.last_mut().unwrap().push(Sexp::Atom(s));
            }
            _ => {
                let start = i;
                while i < chars.len()
                    && !chars[i].is_whitespace()
                    && !matches!(chars[i], '(' | ')' | ';')
                {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                stack.last_mut().unwrap().push(Sexp::Atom(s));
            }
        }
    }
    if stack.len() != 1 {
        return Err("unbalanced `(`".into());
    }
    Ok(stack.pop().unwrap())
}

/// Net parenthesis depth of a chunk of solver output, ignoring comments,
/// strings and quoted symbols.
pub fn paren_depth(text: &str) -> i64 {
    let mut depth = 0;
    let mut in_str = false;
    let mut in_quote = false;
    let mut in_comment = false;
    for c in text.chars() {
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        if in_str {
            if c == '"' {
                in_str = false;
            }
            continue;
        }
        if in_quote {
            if c == '|' {
                in_quote = false;
            }
            continue;
        }
        match c {
            ';' => in_comment = true,
            '"' => in_str = true,
            '|' => in_quote = true,
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
    }
    depth
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Value {
    Bool(bool),
    Elem(String),
}

/// A function definition from a model: parameter names and body.
#[derive(Clone, Debug)]
pub struct FunDef {
    pub params: Vec<String>,
    pub body: Sexp,
}

/// Evaluates model expressions. `funs` holds every `define-fun` of the model;
/// universe elements evaluate to themselves.
pub struct ModelEval<'a> {
    pub funs: &'a BTreeMap<String, FunDef>,
}

impl ModelEval<'_> {
    pub fn eval(&self, e: &Sexp, env: &[(String, Value)]) -> Result<Value, String> {
        self.eval_depth(e, env, 0)
    }

    fn eval_depth(&self, e: &Sexp, env: &[(String, Value)], depth: usize) -> Result<Value, String> {
        if depth > 10_000 {
            return Err("model evaluation too deep".into());
        }
        match e {
            Sexp::Atom(a) => {
                if let Some((_, v)) = env.iter().rev().find(|(n, _)| n == a) {
                    return Ok(v.clone());
                }
                match a.as_str() {
                    "true" => Ok(Value::Bool(true)),
                    "false" => Ok(Value::Bool(false)),
                    _ => {
                        if let Some(f) = self.funs.get(a) {
                            if f.params.is_empty() {
                                return self.eval_depth(&f.body, &[], depth + 1);
                            }
                        }
                        Ok(Value::Elem(a.clone()))
                    }
                }
            }
            Sexp::List(items) => {
                let head = items
                    .first()
                    .and_then(|h| h.atom())
                    .ok_or_else(|| format!("cannot evaluate {e:?}"))?;
                let args = &items[1..];
                let b = |v: Value| match v {
                    Value::Bool(b) => Ok(b),
                    Value::Elem(x) => Err(format!("expected Boolean, got {x}")),
                };
                match head {
                    "and" => {
                        for a in args {
                            if !b(self.eval_depth(a, env, depth + 1)?)? {
                                return Ok(Value::Bool(false));
                            }
                        }
                        Ok(Value::Bool(true))
                    }
                    "or" => {
                        for a in args {
                            if b(self.eval_depth(a, env, depth + 1)?)? {
                                return Ok(Value::Bool(true));
                            }
                        }
                        Ok(Value::Bool(false))
                    }
                    "not" => Ok(Value::Bool(!b(self.eval_depth(&args[0], env, depth + 1)?)?)),
                    "=>" => {
                        let p = b(self.eval_depth(&args[0], env, depth + 1)?)?;
                        let q = b(self.eval_depth(&args[1], env, depth + 1)?)?;
                        Ok(Value::Bool(!p || q))
                    }
                    "xor" => {
                        let p = b(self.eval_depth(&args[0], env, depth + 1)?)?;
                        let q = b(self.eval_depth(&args[1], env, depth + 1)?)?;
                        Ok(Value::Bool(p != q))
                    }
                    "=" => {
                        let vs: Vec<Value> = args
                            .iter()
                            .map(|a| self.eval_depth(a, env, depth + 1))
                            .collect::<Result<_, _>>()?;
                        Ok(Value::Bool(vs.windows(2).all(|w| w[0] == w[1])))
                    }
                    "distinct" => {
                        let vs: Vec<Value> = args
                            .iter()
                            .map(|a| self.eval_depth(a, env, depth + 1))
                            .collect::<Result<_, _>>()?;
                        let all = (0..vs.len()).all(|i| (i + 1..vs.len()).all(|j| vs[i] != vs[j]));
                        Ok(Value::Bool(all))
                    }
                    "ite" => {
                        if b(self.eval_depth(&args[0], env, depth + 1)?)? {
                            self.eval_depth(&args[1], env, depth + 1)
                        } else {
                            self.eval_depth(&args[2], env, depth + 1)
                        }
                    }
                    "let" => {
                        let binds = args[0].list().ok_or("malformed let")?;
                        let mut inner = env.to_vec();
                        for bnd in binds {
                            let pair = bnd.list().ok_or("malformed let binding")?;
                            let name = pair[0].atom().ok_or("malformed let binding")?;
                            let v = self.eval_depth(&pair[1], env, depth + 1)?;
                            inner.push((name.to_string(), v));
                        }
                        self.eval_depth(&args[1], &inner, depth + 1)
                    }
                    f => {
                        let def = self
                            .funs
                            .get(f)
                            .ok_or_else(|| format!("unknown function `{f}` in model"))?;
                        if def.params.len() != args.len() {
                            return Err(format!("arity mismatch calling `{f}`"));
                        }
                        let mut inner = Vec::with_capacity(args.len());
                        for (p, a) in def.params.iter().zip(args) {
                            inner.push((p.clone(), self.eval_depth(a, env, depth + 1)?));
                        }
                        self.eval_depth(&def.body, &inner, depth + 1)
                    }
                }
            }
        }
    }
}
