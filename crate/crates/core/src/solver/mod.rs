//! Satisfiability of (two-vocabulary) formulas through an external SMT solver
//! speaking SMT-LIB2 over stdin/stdout.
//!
//! A [`SolverSession`] owns one solver process. Every query runs inside a
//! `push`/`pop` scope; declarations are global. Models are read back with
//! `get-model`, turned into [`Structure`]s, and re-checked with the logic
//! evaluator before they are returned.

mod sexp;
pub mod smt;

use std::collections::{BTreeMap, BTreeSet};
use std::hash::{DefaultHasher, Hasher};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::logic::{eval_two_vocab, Formula, Sort, Structure, Valuation, Var, Vocabulary};
use sexp::{parse_all, paren_depth, FunDef, ModelEval, Sexp, Value};

/// Environment variable consulted when no solver path is given explicitly.
pub const SOLVER_ENV: &str = "PHASEFORGE_SOLVER";

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solver binary `{0}` not found")]
    NotFound(String),
    #[error("failed to start solver `{0}`: {1}")]
    Spawn(String, String),
    #[error("cannot write transcript: {0}")]
    Transcript(String),
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub binary: PathBuf,
    /// Per-query timeout.
    pub timeout_ms: u64,
    pub seed: u64,
    /// If set, every command sent to the solver is appended to this file.
    pub transcript: Option<PathBuf>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            binary: PathBuf::from("z3"),
            timeout_ms: 60_000,
            seed: 0,
            transcript: None,
        }
    }
}

impl SolverConfig {
    /// Resolves the solver path: explicit flag, then `PHASEFORGE_SOLVER`,
    /// then `z3` on `PATH`.
    pub fn resolve_binary(explicit: Option<&str>) -> PathBuf {
        explicit
            .map(PathBuf::from)
            .or_else(|| std::env::var_os(SOLVER_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("z3"))
    }
}

/// Finds an executable either at the given path or on `PATH`.
pub fn locate_binary(binary: &Path) -> Result<PathBuf, SolverError> {
    if binary.components().count() > 1 {
        return if binary.is_file() {
            Ok(binary.to_path_buf())
        } else {
            Err(SolverError::NotFound(binary.display().to_string()))
        };
    }
    let path = std::env::var_os("PATH").unwrap_or_default();
    std::env::split_paths(&path)
        .map(|d| d.join(binary))
        .find(|p| p.is_file())
        .ok_or_else(|| SolverError::NotFound(binary.display().to_string()))
}

/// A satisfying assignment: one structure per vocabulary copy, all sharing a
/// domain, plus values for the free variables of the query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Model {
    pub states: Vec<Structure>,
    pub valuation: Valuation,
}

impl Model {
    pub fn pre(&self) -> &Structure {
        &self.states[0]
    }

    pub fn post(&self) -> &Structure {
        &self.states[1]
    }

    /// The valuation restricted to the given variables.
    pub fn restrict(&self, vars: &[Var]) -> Valuation {
        self.valuation
            .iter()
            .filter(|(v, _)| vars.contains(v))
            .map(|(v, e)| (v.clone(), e.clone()))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub enum SatResult {
    Sat(Box<Model>),
    Unsat,
    Unknown(String),
}

impl SatResult {
    pub fn is_unsat(&self) -> bool {
        matches!(self, SatResult::Unsat)
    }
}

#[derive(Clone, Debug, Default)]
pub struct QueryOptions {
    /// Shrink the model sort by sort, in vocabulary order.
    pub minimize: bool,
    /// Exact domain sizes.
    pub sizes: Option<BTreeMap<Sort, usize>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolverStats {
    pub queries: u64,
    pub sat: u64,
    pub unsat: u64,
    pub unknown: u64,
    pub restarts: u64,
}

struct Proc {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

enum Fault {
    Timeout,
    Died,
    Protocol(String),
}

impl Fault {
    fn reason(&self) -> String {
        match self {
            Fault::Timeout => "timeout".into(),
            Fault::Died => "solver process died".into(),
            Fault::Protocol(m) => format!("protocol error: {m}"),
        }
    }
}

pub struct SolverSession {
    config: SolverConfig,
    vocab: Vocabulary,
    proc: Option<Proc>,
    declared: BTreeSet<String>,
    copies: usize,
    elems: BTreeMap<Sort, usize>,
    transcript: Option<std::fs::File>,
    digest: DefaultHasher,
    stats: SolverStats,
}

impl SolverSession {
    pub fn new(config: &SolverConfig, vocab: &Vocabulary) -> Result<Self, SolverError> {
        let binary = locate_binary(&config.binary)?;
        let transcript = match &config.transcript {
            Some(p) => Some(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| SolverError::Transcript(e.to_string()))?,
            ),
            None => None,
        };
        let mut s = SolverSession {
            config: SolverConfig {
                binary,
                ..config.clone()
            },
            vocab: vocab.clone(),
            proc: None,
            declared: BTreeSet::new(),
            copies: 0,
            elems: BTreeMap::new(),
            transcript,
            digest: DefaultHasher::new(),
            stats: SolverStats::default(),
        };
        s.start()?;
        Ok(s)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn stats(&self) -> SolverStats {
        self.stats
    }

    /// Hash of every command sent so far.
    pub fn transcript_digest(&self) -> u64 {
        self.digest.finish()
    }

    fn start(&mut self) -> Result<(), SolverError> {
        let bin = self.config.binary.display().to_string();
        let mut child = Command::new(&self.config.binary)
            .arg("-in")
            .arg("-smt2")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| SolverError::Spawn(bin.clone(), e.to_string()))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        self.proc = Some(Proc {
            child,
            stdin,
            lines: rx,
        });
        self.declared.clear();
        self.copies = 0;
        self.elems.clear();
        let mut init = vec![
            "(set-option :print-success true)".to_string(),
            "(set-option :global-declarations true)".to_string(),
            "(set-option :produce-models true)".to_string(),
            "(set-option :produce-unsat-cores true)".to_string(),
            format!("(set-option :timeout {})", self.config.timeout_ms),
            format!("(set-option :random-seed {})", self.config.seed),
        ];
        init.extend(smt::declare_sorts(&self.vocab));
        for cmd in init {
            self.command(&cmd)
                .map_err(|f| SolverError::Spawn(bin.clone(), f.reason()))?;
        }
        self.ensure_copies(2)
            .map_err(|f| SolverError::Spawn(bin, f.reason()))?;
        Ok(())
    }

    fn kill(&mut self) {
        if let Some(mut p) = self.proc.take() {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
    }

    fn record(&mut self, cmd: &str) {
        self.digest.write(cmd.as_bytes());
        self.digest.write_u8(b'\n');
        if let Some(f) = &mut self.transcript {
            let _ = writeln!(f, "{cmd}");
        }
    }

    fn send(&mut self, cmd: &str, wait: Duration) -> Result<String, Fault> {
        self.record(cmd);
        let proc = self.proc.as_mut().ok_or(Fault::Died)?;
        if writeln!(proc.stdin, "{cmd}").is_err() || proc.stdin.flush().is_err() {
            return Err(Fault::Died);
        }
        let deadline = Instant::now() + wait;
        let mut buf = String::new();
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match proc.lines.recv_timeout(left) {
                Ok(line) => {
                    buf.push_str(&line);
                    buf.push('\n');
                    if !buf.trim().is_empty() && paren_depth(&buf) <= 0 {
                        return Ok(buf.trim().to_string());
                    }
                }
                Err(RecvTimeoutError::Timeout) => return Err(Fault::Timeout),
                Err(RecvTimeoutError::Disconnected) => return Err(Fault::Died),
            }
        }
    }

    /// Sends a command that must answer `success`.
    fn command(&mut self, cmd: &str) -> Result<(), Fault> {
        let r = self.send(cmd, Duration::from_secs(60))?;
        if r == "success" {
            Ok(())
        } else {
            Err(Fault::Protocol(format!("`{cmd}` answered `{r}`")))
        }
    }

    fn declare(&mut self, cmd: String) -> Result<(), Fault> {
        if self.declared.contains(&cmd) {
            return Ok(());
        }
        self.command(&cmd)?;
        self.declared.insert(cmd);
        Ok(())
    }

    fn ensure_copies(&mut self, n: usize) -> Result<(), Fault> {
        while self.copies < n {
            for cmd in smt::declare_copy(&self.vocab, self.copies) {
                self.declare(cmd)?;
            }
            self.copies += 1;
        }
        Ok(())
    }

    fn ensure_elems(&mut self, sort: &Sort, n: usize) -> Result<(), Fault> {
        let have = self.elems.get(sort).copied().unwrap_or(0);
        for i in have..n {
            self.declare(format!(
                "(declare-fun {} () {})",
                smt::elem_sym(sort, i),
                smt::sort_sym(sort)
            ))?;
        }
        if n > have {
            self.elems.insert(sort.clone(), n);
        }
        Ok(())
    }

    /// Checks the conjunction of two-vocabulary formulas.
    pub fn check(&mut self, formulas: &[&Formula]) -> SatResult {
        let parts: Vec<(&Formula, usize)> = formulas.iter().map(|f| (*f, 0)).collect();
        self.check_with(&parts, &QueryOptions::default())
    }

    /// Checks `base & probe`; the scope of `base` ends with the query.
    pub fn with_assumptions(&mut self, base: &[Formula], probe: &Formula) -> SatResult {
        let mut all: Vec<&Formula> = base.iter().collect();
        all.push(probe);
        self.check(&all)
    }

    /// Checks the conjunction of `parts`, where each formula's unprimed
    /// symbols refer to the given copy of the vocabulary and its primed
    /// symbols to the next one.
    pub fn check_with(&mut self, parts: &[(&Formula, usize)], opts: &QueryOptions) -> SatResult {
        self.check_assuming(parts, &[], opts).0
    }

    /// As [`check_with`](Self::check_with), with `assumptions` asserted as
    /// named literals. On unsat, also returns the indices of an unsat core
    /// among the assumptions.
    pub fn check_assuming(
        &mut self,
        parts: &[(&Formula, usize)],
        assumptions: &[(&Formula, usize)],
        opts: &QueryOptions,
    ) -> (SatResult, Vec<usize>) {
        self.stats.queries += 1;
        let r = self.check_inner(parts, assumptions, opts);
        let (r, core) = match r {
            Ok(r) => r,
            Err(f) => {
                self.kill();
                self.stats.restarts += 1;
                // A failed restart surfaces on the next query as `Died`.
                let _ = self.start();
                (SatResult::Unknown(f.reason()), vec![])
            }
        };
        match &r {
            SatResult::Sat(_) => self.stats.sat += 1,
            SatResult::Unsat => self.stats.unsat += 1,
            SatResult::Unknown(_) => self.stats.unknown += 1,
        }
        (r, core)
    }

    fn check_inner(
        &mut self,
        parts: &[(&Formula, usize)],
        assumptions: &[(&Formula, usize)],
        opts: &QueryOptions,
    ) -> Result<(SatResult, Vec<usize>), Fault> {
        if self.proc.is_none() {
            return Err(Fault::Died);
        }
        let all: Vec<(&Formula, usize)> = parts.iter().chain(assumptions).copied().collect();
        let copies = all.iter().map(|(_, c)| c + 2).max().unwrap_or(2);
        self.ensure_copies(copies)?;
        let mut free: BTreeSet<Var> = BTreeSet::new();
        for (f, _) in &all {
            free.extend(f.free_vars());
        }
        for i in 0..assumptions.len() {
            self.declare(format!("(declare-fun {} () Bool)", smt::assumption_sym(i)))?;
        }
        for v in &free {
            self.declare(format!(
                "(declare-fun {} () {})",
                smt::free_sym(v),
                smt::sort_sym(&v.sort)
            ))?;
        }
        self.command("(push 1)")?;
        let result = self.scoped_query(parts, assumptions, opts, copies, &free);
        self.command("(pop 1)")?;
        let (result, core) = result?;
        if let SatResult::Sat(m) = &result {
            for (f, c) in &all {
                match eval_two_vocab(&m.states[*c], &m.states[*c + 1], &m.valuation, f) {
                    Ok(true) => {}
                    Ok(false) => {
                        return Ok((
                            SatResult::Unknown("model does not satisfy the query".into()),
                            vec![],
                        ))
                    }
                    Err(e) => {
                        return Ok((SatResult::Unknown(format!("model check failed: {e}")), vec![]))
                    }
                }
            }
        }
        Ok((result, core))
    }

    fn scoped_query(
        &mut self,
        parts: &[(&Formula, usize)],
        assumptions: &[(&Formula, usize)],
        opts: &QueryOptions,
        copies: usize,
        free: &BTreeSet<Var>,
    ) -> Result<(SatResult, Vec<usize>), Fault> {
        for (f, c) in parts {
            let text = smt::translate(f, *c);
            self.command(&format!("(assert {text})"))?;
        }
        for (i, (f, c)) in assumptions.iter().enumerate() {
            let text = smt::translate(f, *c);
            self.command(&format!("(assert (=> {} {text}))", smt::assumption_sym(i)))?;
        }
        if let Some(sizes) = &opts.sizes {
            for (sort, &n) in sizes {
                self.ensure_elems(sort, n)?;
                self.command(&format!("(assert {})", smt::at_most(sort, n)))?;
                if let Some(d) = smt::at_least(sort, n) {
                    self.command(&format!("(assert {d})"))?;
                }
            }
        }
        let answer = if assumptions.is_empty() {
            self.check_sat()?
        } else {
            let names: Vec<String> = (0..assumptions.len()).map(smt::assumption_sym).collect();
            self.check_sat_cmd(&format!("(check-sat-assuming ({}))", names.join(" ")))?
        };
        let mut model = match answer {
            Some(false) => {
                let core = if assumptions.is_empty() { vec![] } else { self.unsat_core()? };
                return Ok((SatResult::Unsat, core));
            }
            None => {
                let reason = self.reason_unknown()?;
                return Ok((SatResult::Unknown(reason), vec![]));
            }
            Some(true) => self.get_model(copies, free)?,
        };
        if opts.minimize && !assumptions.is_empty() {
            // Minimization uses plain check-sat: fix the assumptions first.
            for i in 0..assumptions.len() {
                self.command(&format!("(assert {})", smt::assumption_sym(i)))?;
            }
        }
        if opts.minimize {
            let mut kept = 0;
            let sorts = self.vocab.sorts.clone();
            for sort in &sorts {
                let n = model.states[0].elems(sort).len();
                for k in 1..n {
                    self.ensure_elems(sort, k)?;
                    self.command("(push 1)")?;
                    self.command(&format!("(assert {})", smt::at_most(sort, k)))?;
                    if self.check_sat()? == Some(true) {
                        model = self.get_model(copies, free)?;
                        kept += 1;
                        break;
                    }
                    self.command("(pop 1)")?;
                }
            }
            if kept > 0 {
                self.command(&format!("(pop {kept})"))?;
            }
        }
        Ok((SatResult::Sat(Box::new(model)), vec![]))
    }

    /// `Some(true)` for sat, `Some(false)` for unsat, `None` for unknown.
    fn check_sat(&mut self) -> Result<Option<bool>, Fault> {
        self.check_sat_cmd("(check-sat)")
    }

    fn check_sat_cmd(&mut self, cmd: &str) -> Result<Option<bool>, Fault> {
        let wait = Duration::from_millis(self.config.timeout_ms) + Duration::from_secs(10);
        match self.send(cmd, wait)?.as_str() {
            "sat" => Ok(Some(true)),
            "unsat" => Ok(Some(false)),
            "unknown" => Ok(None),
            other => Err(Fault::Protocol(format!("check-sat answered `{other}`"))),
        }
    }

    fn unsat_core(&mut self) -> Result<Vec<usize>, Fault> {
        let text = self.send("(get-unsat-core)", Duration::from_secs(60))?;
        let top = parse_all(&text).map_err(Fault::Protocol)?;
        let Some(Sexp::List(items)) = top.first() else {
            return Err(Fault::Protocol(format!("unexpected unsat core `{text}`")));
        };
        let mut core: Vec<usize> = items
            .iter()
            .filter_map(|i| i.atom().and_then(smt::assumption_index))
            .collect();
        core.sort_unstable();
        Ok(core)
    }

    fn reason_unknown(&mut self) -> Result<String, Fault> {
        let r = self.send("(get-info :reason-unknown)", Duration::from_secs(60))?;
        Ok(r.trim_matches(|c| c == '(' || c == ')')
            .trim_start_matches(":reason-unknown")
            .trim()
            .trim_matches('"')
            .to_string())
    }

    fn get_model(&mut self, copies: usize, free: &BTreeSet<Var>) -> Result<Model, Fault> {
        let text = self.send("(get-model)", Duration::from_secs(120))?;
        read_model(&self.vocab, &text, copies, free).map_err(Fault::Protocol)
    }
}

impl Drop for SolverSession {
    fn drop(&mut self) {
        if let Some(p) = &mut self.proc {
            let _ = writeln!(p.stdin, "(exit)");
            let _ = p.stdin.flush();
        }
        self.kill();
    }
}

/// Builds structures for `copies` vocabulary copies from `get-model` output.
fn read_model(
    vocab: &Vocabulary,
    text: &str,
    copies: usize,
    free: &BTreeSet<Var>,
) -> Result<Model, String> {
    let top = parse_all(text)?;
    let entries: Vec<Sexp> = match top.as_slice() {
        [Sexp::List(items)] => items.clone(),
        _ => return Err(format!("unexpected model text: {text}")),
    };
    let mut funs = BTreeMap::new();
    let mut universe: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for e in &entries {
        let Some(items) = e.list() else { continue };
        match items.first().and_then(|h| h.atom()) {
            Some("define-fun") if items.len() == 5 => {
                let name = items[1].atom().ok_or("bad define-fun")?.to_string();
                let params = items[2]
                    .list()
                    .ok_or("bad define-fun")?
                    .iter()
                    .map(|p| {
                        p.list()
                            .and_then(|p| p.first())
                            .and_then(|n| n.atom())
                            .map(str::to_string)
                            .ok_or("bad parameter")
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                funs.insert(
                    name,
                    FunDef {
                        params,
                        body: items[4].clone(),
                    },
                );
            }
            Some("declare-fun") if items.len() == 4 => {
                let name = items[1].atom().ok_or("bad declare-fun")?.to_string();
                let sort = items[3].atom().ok_or("bad declare-fun")?.to_string();
                universe.entry(sort).or_default().push(name);
            }
            _ => {}
        }
    }
    let ev = ModelEval { funs: &funs };
    // Solver element name -> structure element name.
    let mut rename: BTreeMap<String, String> = BTreeMap::new();
    let mut domain: BTreeMap<Sort, Vec<String>> = BTreeMap::new();
    for sort in &vocab.sorts {
        let mut elems = universe.remove(&smt::sort_sym(sort)).unwrap_or_default();
        let index = |e: &String| {
            e.rsplit('!')
                .next()
                .and_then(|n| n.parse::<u64>().ok())
                .unwrap_or(u64::MAX)
        };
        elems.sort_by_key(|e| (index(e), e.clone()));
        if elems.is_empty() {
            elems.push(format!("{}!val!0", smt::sort_sym(sort)));
        }
        let names: Vec<String> = (0..elems.len()).map(|i| format!("{}{}", sort.0, i)).collect();
        for (e, n) in elems.iter().zip(&names) {
            rename.insert(e.clone(), n.clone());
        }
        domain.insert(sort.clone(), names);
    }
    let elem_of = |v: Value, sort: &Sort| -> Result<String, String> {
        match v {
            Value::Elem(e) => rename
                .get(&e)
                .cloned()
                .ok_or_else(|| format!("element `{e}` outside the universe")),
            Value::Bool(_) => Err(format!("expected an element of {sort}")),
        }
    };
    let mut states = Vec::with_capacity(copies);
    for c in 0..copies {
        let mut s = Structure::empty(vocab, domain.clone()).map_err(|e| e.to_string())?;
        for r in &vocab.relations {
            let sym = smt::rel_sym(&r.name, c);
            if !funs.contains_key(&sym) {
                continue;
            }
            let cols: Vec<Vec<(String, String)>> = r
                .args
                .iter()
                .map(|srt| {
                    let zs: Vec<&String> = rename
                        .iter()
                        .filter(|(_, n)| domain[srt].contains(n))
                        .map(|(z, _)| z)
                        .collect();
                    zs.into_iter()
                        .map(|z| (z.clone(), rename[z].clone()))
                        .collect()
                })
                .collect();
            let tuples: Vec<Vec<(String, String)>> = if cols.is_empty() {
                vec![vec![]]
            } else {
                itertools::Itertools::multi_cartesian_product(cols.into_iter()).collect()
            };
            for t in tuples {
                let mut call = vec![Sexp::Atom(sym.clone())];
                call.extend(t.iter().map(|(z, _)| Sexp::Atom(z.clone())));
                let e = if t.is_empty() {
                    Sexp::Atom(sym.clone())
                } else {
                    Sexp::List(call)
                };
                if ev.eval(&e, &[])? == Value::Bool(true) {
                    s.set(&r.name, t.into_iter().map(|(_, n)| n).collect(), true);
                }
            }
        }
        for k in &vocab.constants {
            let sym = smt::const_sym(&k.name, c);
            if funs.contains_key(&sym) {
                let v = ev.eval(&Sexp::Atom(sym), &[])?;
                s.constants.insert(k.name.clone(), elem_of(v, &k.sort)?);
            }
        }
        states.push(s);
    }
    let mut valuation = Valuation::new();
    for v in free {
        let sym = smt::free_sym(v);
        let e = if funs.contains_key(&sym) {
            elem_of(ev.eval(&Sexp::Atom(sym), &[])?, &v.sort)?
        } else {
            domain[&v.sort][0].clone()
        };
        valuation.insert(v.clone(), e);
    }
    Ok(Model { states, valuation })
}
