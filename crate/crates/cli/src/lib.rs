//! The `phaseforge` command line: checking phase automata, inferring phase
//! characterizations, diagnosing abstract counterexample traces and
//! exporting phase structures as Horn clauses.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use thiserror::Error;

use phaseforge::automaton::{AutomatonError, PhaseAutomaton, PhaseStructure};
use phaseforge::frontend::{parse_model, pretty, ModelFile, ParseError};
use phaseforge::infer::{self, AbstractTrace, Diagnosis, InferConfig, InferError, InferOutcome};
use phaseforge::logic::{Formula, Structure};
use phaseforge::solver::{SolverConfig, SolverError, SolverSession};
use phaseforge::system::{compile, SystemError, TransitionSystem};
use phaseforge::vcgen::{self, Outcome, VcKind, Verdict};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_ERROR: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "phaseforge", version, about = "Phase invariants for first-order transition systems")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Path of the z3 binary. Falls back to PHASEFORGE_SOLVER, then `z3`.
    #[arg(long, global = true)]
    pub solver: Option<String>,
    /// Per-query solver timeout.
    #[arg(long, global = true, default_value_t = 60_000)]
    pub timeout_ms: u64,
    /// Wall-clock budget for inference.
    #[arg(long, global = true)]
    pub budget_s: Option<u64>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Determinize the automaton first, optionally with a comma-separated
    /// phase order (declaration order by default).
    #[arg(
        long,
        global = true,
        num_args = 0..=1,
        require_equals = true,
        default_missing_value = "",
        value_name = "ORDER"
    )]
    pub determinize: Option<String>,
    /// Unrolling bound for `diagnose`; defaults to the trace length.
    #[arg(long, global = true)]
    pub bmc_bound: Option<usize>,
    /// Append inference progress as JSON lines to this file (`-` for stderr).
    #[arg(long, global = true, value_name = "FILE")]
    pub log: Option<PathBuf>,
    /// Append every command sent to the solver to this file.
    #[arg(long, global = true, value_name = "FILE")]
    pub transcript: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the verification conditions of the model's phase automaton, or
    /// of its top-level invariant when it declares no automaton.
    Check { model: PathBuf },
    /// Infer characterizations for the model's phase structure.
    Infer {
        model: PathBuf,
        /// Where to write the inferred model (default `<stem>.out.pfz`).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Classify an abstract counterexample trace by bounded model checking.
    Diagnose { trace: PathBuf, model: PathBuf },
    /// Write the phase structure as a linear Horn clause system.
    ExportChc {
        model: PathBuf,
        /// Output file (default stdout).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{source}", path.display())]
    Parse { path: PathBuf, source: ParseError },
    #[error("{}: {message}", path.display())]
    Trace { path: PathBuf, message: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Infer(#[from] InferError),
}

/// Validated global settings.
#[derive(Clone, Debug)]
pub struct Config {
    pub solver: SolverConfig,
    pub budget: Option<Duration>,
    pub format: Format,
    pub determinize: Option<Vec<String>>,
    pub bmc_bound: Option<usize>,
    pub log: Option<PathBuf>,
}

impl Config {
    pub fn from_args(g: &GlobalArgs) -> Result<Config, CliError> {
        if g.timeout_ms == 0 {
            return Err(CliError::Config("--timeout-ms must be positive".into()));
        }
        if let Some(b) = g.budget_s {
            if b.saturating_mul(1000) < g.timeout_ms {
                return Err(CliError::Config(format!(
                    "--budget-s {b} is shorter than the per-query timeout ({} ms)",
                    g.timeout_ms
                )));
            }
        }
        let determinize = g.determinize.as_ref().map(|o| {
            o.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        });
        Ok(Config {
            solver: SolverConfig {
                binary: SolverConfig::resolve_binary(g.solver.as_deref()),
                timeout_ms: g.timeout_ms,
                seed: g.seed,
                transcript: g.transcript.clone(),
            },
            budget: g.budget_s.map(Duration::from_secs),
            format: g.format,
            determinize,
            bmc_bound: g.bmc_bound,
            log: g.log.clone(),
        })
    }
}

/// Runs one command, writing its report to `out`. Errors are reported on
/// `err` and map to exit status 3.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = Config::from_args(&cli.global).and_then(|cfg| match &cli.command {
        Command::Check { model } => cmd_check(model, &cfg, out),
        Command::Infer { model, output } => cmd_infer(model, output.as_deref(), &cfg, out),
        Command::Diagnose { trace, model } => cmd_diagnose(trace, model, &cfg, out),
        Command::ExportChc { model, output } => cmd_export_chc(model, output.as_deref(), &cfg, out),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            if cli.global.format == Format::Json {
                let _ = writeln!(out, "{}", json!({ "error": e.to_string() }));
            }
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io(e: std::io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

pub fn load(path: &Path) -> Result<(ModelFile, TransitionSystem), CliError> {
    let src = read(path)?;
    let m = parse_model(&src).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let ts = compile(&m)?;
    Ok((m, ts))
}

fn phase_order(s: &PhaseStructure, names: &[String]) -> Result<Vec<usize>, CliError> {
    if names.is_empty() {
        return Ok((0..s.phases.len()).collect());
    }
    names
        .iter()
        .map(|n| {
            s.phase_index(n)
                .ok_or_else(|| CliError::Config(format!("unknown phase `{n}` in --determinize")))
        })
        .collect()
}

/// The automaton checked by `check`: the declared one, or the top-level
/// invariant wrapped in a single phase.
fn checked_automaton(m: &ModelFile, ts: &TransitionSystem) -> Result<PhaseAutomaton, CliError> {
    match PhaseAutomaton::from_model(m, ts)? {
        Some(a) => Ok(a),
        None if !m.invariants.is_empty() => Ok(PhaseAutomaton::wrap_invariant(
            Formula::and(m.invariants.iter().cloned()),
            ts,
        )),
        None => Err(CliError::Config(
            "model declares neither an automaton nor an invariant".into(),
        )),
    }
}

fn kind_name(k: &VcKind) -> &'static str {
    match k {
        VcKind::Initiation => "initiation",
        VcKind::Inductiveness { .. } => "inductiveness",
        VcKind::Covering { .. } => "covering",
        VcKind::Safety { .. } => "safety",
    }
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Valid => "valid",
        Verdict::Invalid => "invalid",
        Verdict::Inconclusive => "inconclusive",
    }
}

/// One line per sort and one per nonempty relation.
pub fn render_structure(s: &Structure, indent: &str) -> String {
    let mut out = String::new();
    for (sort, elems) in &s.domain {
        let _ = writeln!(out, "{indent}{sort}: {}", elems.join(" "));
    }
    for (c, e) in &s.constants {
        let _ = writeln!(out, "{indent}{c} = {e}");
    }
    for (r, tuples) in &s.relations {
        if tuples.is_empty() {
            continue;
        }
        let facts: Vec<String> = tuples
            .iter()
            .map(|t| if t.is_empty() { r.clone() } else { format!("{r}({})", t.join(", ")) })
            .collect();
        let _ = writeln!(out, "{indent}{}", facts.join(" "));
    }
    out
}

pub fn cmd_check(model: &Path, cfg: &Config, out: &mut dyn Write) -> Result<i32, CliError> {
    let start = Instant::now();
    let (m, ts) = load(model)?;
    let mut a = checked_automaton(&m, &ts)?;
    let mut solver = SolverSession::new(&cfg.solver, &ts.vocab)?;
    let mut deterministic = None;
    if let Some(names) = &cfg.determinize {
        a = a.determinize(&phase_order(&a.structure, names)?)?;
        deterministic = Some(a.structure.is_deterministic(&ts, &mut solver)?);
    }
    let report = vcgen::check(&ts, &a, &mut solver)?;
    let mut verdict = report.verdict();
    if deterministic == Some(false) && verdict == Verdict::Valid {
        verdict = Verdict::Invalid;
    }
    let elapsed = start.elapsed();
    let queries = solver.stats().queries;

    match cfg.format {
        Format::Json => {
            let vcs: Vec<Value> = report
                .results
                .iter()
                .map(|(vc, o)| {
                    let mut v = json!({ "name": vc.name, "kind": kind_name(&vc.kind) });
                    match o {
                        Outcome::Valid => v["outcome"] = json!("valid"),
                        Outcome::Invalid(cm) => {
                            v["outcome"] = json!("invalid");
                            v["countermodel"] = serde_json::to_value(cm).expect("serializable");
                        }
                        Outcome::Unknown(r) => {
                            v["outcome"] = json!("unknown");
                            v["reason"] = json!(r);
                        }
                    }
                    v
                })
                .collect();
            let doc = json!({
                "command": "check",
                "model": model.display().to_string(),
                "verdict": verdict_name(verdict),
                "deterministic": deterministic,
                "vcs": vcs,
                "stats": {
                    "vcs": report.results.len(),
                    "queries": queries,
                    "elapsed_ms": elapsed.as_millis() as u64,
                },
            });
            writeln!(out, "{doc}").map_err(io)?;
        }
        Format::Text => {
            for (vc, o) in &report.results {
                match o {
                    Outcome::Valid => writeln!(out, "valid    {}", vc.name),
                    Outcome::Unknown(r) => writeln!(out, "unknown  {} ({r})", vc.name),
                    Outcome::Invalid(cm) => {
                        writeln!(out, "INVALID  {}", vc.name).map_err(io)?;
                        writeln!(out, "  failing goal: {}", cm.goal).map_err(io)?;
                        if !cm.valuation.is_empty() {
                            let vals: Vec<String> =
                                cm.valuation.iter().map(|(k, e)| format!("{} = {e}", k.name)).collect();
                            writeln!(out, "  valuation: {}", vals.join(", ")).map_err(io)?;
                        }
                        writeln!(out, "  pre-state:").map_err(io)?;
                        write!(out, "{}", render_structure(&cm.pre, "    ")).map_err(io)?;
                        if let Some(post) = &cm.post {
                            writeln!(out, "  post-state:").map_err(io)?;
                            write!(out, "{}", render_structure(post, "    ")).map_err(io)?;
                        }
                        Ok(())
                    }
                }
                .map_err(io)?;
            }
            if let Some(d) = deterministic {
                writeln!(out, "deterministic: {d}").map_err(io)?;
            }
            writeln!(
                out,
                "{}: {} VCs, {queries} solver queries, {:.2} s",
                verdict_name(verdict),
                report.results.len(),
                elapsed.as_secs_f64()
            )
            .map_err(io)?;
        }
    }
    Ok(match verdict {
        Verdict::Valid => EXIT_OK,
        Verdict::Invalid => EXIT_FAIL,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
    })
}

fn sibling(model: &Path, suffix: &str) -> PathBuf {
    let stem = model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    model.with_file_name(format!("{stem}{suffix}"))
}

/// The structure used by `infer` and `diagnose`: the declared one, or a
/// single phase accepting every action.
fn inferred_structure(m: &ModelFile, ts: &TransitionSystem, cfg: &Config) -> Result<PhaseStructure, CliError> {
    let s = match PhaseStructure::from_model(m, ts)? {
        Some(s) => s,
        None => PhaseAutomaton::wrap_invariant(Formula::True, ts).structure,
    };
    match &cfg.determinize {
        Some(names) => Ok(s.determinize(&phase_order(&s, names)?)?),
        None => Ok(s),
    }
}

/// `m` with the characterizations of `a` in place of its own.
pub fn with_characterizations(m: &ModelFile, a: &PhaseAutomaton) -> ModelFile {
    let mut m = m.clone();
    let clauses = |f: &Formula| -> Vec<Formula> {
        f.conjuncts().into_iter().filter(|c| *c != Formula::True).collect()
    };
    match &mut m.automaton {
        Some(decl) => {
            for (p, eta) in decl.phases.iter_mut().zip(&a.eta) {
                p.invariants = clauses(eta);
            }
        }
        None => m.invariants = clauses(&a.eta[0]),
    }
    m
}

pub fn cmd_infer(
    model: &Path,
    output: Option<&Path>,
    cfg: &Config,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let start = Instant::now();
    let (m, ts) = load(model)?;
    let s = inferred_structure(&m, &ts, cfg)?;
    let mut solver = SolverSession::new(&cfg.solver, &ts.vocab)?;
    let icfg = InferConfig {
        budget: cfg.budget,
        ..InferConfig::default()
    };
    let mut log_file: Option<Box<dyn Write + '_>> = match &cfg.log {
        None => None,
        Some(p) if p.as_os_str() == "-" => Some(Box::new(std::io::stderr())),
        Some(p) => Some(Box::new(
            fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|source| CliError::Io {
                    path: p.clone(),
                    source,
                })?,
        )),
    };
    let result = infer::infer(&ts, &s, &mut solver, &icfg, log_file.as_deref_mut())?;
    let stats = serde_json::to_value(&result.stats).expect("serializable");
    let frames = result.frames(&s);

    match result.outcome {
        InferOutcome::Converged(a) => {
            let path = output.map(Path::to_path_buf).unwrap_or_else(|| sibling(model, ".out.pfz"));
            let text = format!(
                "# Inferred by phaseforge {} from {}\n# seed {}, wall time {:.2} s\n\n{}",
                env!("CARGO_PKG_VERSION"),
                model.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
                cfg.solver.seed,
                start.elapsed().as_secs_f64(),
                pretty(&with_characterizations(&m, &a))
            );
            write_file(&path, &text)?;

            // Re-check the written file as `check` would.
            let (m2, ts2) = load(&path)?;
            let mut a2 = checked_automaton(&m2, &ts2)?;
            if let Some(names) = &cfg.determinize {
                a2 = a2.determinize(&phase_order(&a2.structure, names)?)?;
            }
            let verdict = vcgen::check(&ts2, &a2, &mut solver)?.verdict();
            let code = match verdict {
                Verdict::Valid => EXIT_OK,
                Verdict::Inconclusive => EXIT_INCONCLUSIVE,
                Verdict::Invalid => {
                    return Err(CliError::Infer(InferError::Unsound(format!(
                        "{} fails its check",
                        path.display()
                    ))))
                }
            };
            let phases: Vec<Value> = a
                .structure
                .phases
                .iter()
                .zip(&a.eta)
                .map(|(p, eta)| json!({ "phase": p, "characterization": eta.to_string() }))
                .collect();
            match cfg.format {
                Format::Json => {
                    let doc = json!({
                        "command": "infer",
                        "outcome": if code == EXIT_OK { "converged" } else { "inconclusive" },
                        "output": path.display().to_string(),
                        "recheck": verdict_name(verdict),
                        "phases": phases,
                        "stats": stats,
                    });
                    writeln!(out, "{doc}").map_err(io)?;
                }
                Format::Text => {
                    for (p, eta) in a.structure.phases.iter().zip(&a.eta) {
                        writeln!(out, "phase {p}:").map_err(io)?;
                        for c in eta.conjuncts() {
                            writeln!(out, "  {c}").map_err(io)?;
                        }
                    }
                    writeln!(
                        out,
                        "converged: {} lemmas, {} frames, {} solver queries, {:.2} s; re-check {}; wrote {}",
                        result.stats.lemmas,
                        result.stats.frames,
                        result.stats.queries,
                        start.elapsed().as_secs_f64(),
                        verdict_name(verdict),
                        path.display()
                    )
                    .map_err(io)?;
                }
            }
            Ok(code)
        }
        InferOutcome::Trace(t) => {
            let path = sibling(model, ".trace.json");
            let body = serde_json::to_string_pretty(&t).expect("serializable");
            write_file(&path, &format!("{body}\n"))?;
            match cfg.format {
                Format::Json => {
                    let doc = json!({
                        "command": "infer",
                        "outcome": "trace",
                        "output": path.display().to_string(),
                        "trace": t,
                        "stats": stats,
                    });
                    writeln!(out, "{doc}").map_err(io)?;
                }
                Format::Text => {
                    write!(out, "{}", render_trace(&t)).map_err(io)?;
                    writeln!(
                        out,
                        "no universal characterization: abstract trace of {} states written to {}",
                        t.len(),
                        path.display()
                    )
                    .map_err(io)?;
                }
            }
            Ok(EXIT_FAIL)
        }
        outcome @ (InferOutcome::Timeout | InferOutcome::Inconclusive(_)) => {
            let reason = match outcome {
                InferOutcome::Inconclusive(r) => r,
                _ => "budget exhausted".to_string(),
            };
            match cfg.format {
                Format::Json => {
                    let doc = json!({
                        "command": "infer",
                        "outcome": "timeout",
                        "reason": reason,
                        "frames": frames,
                        "stats": stats,
                    });
                    writeln!(out, "{doc}").map_err(io)?;
                }
                Format::Text => {
                    for f in &frames {
                        writeln!(out, "frame {}:", f.index).map_err(io)?;
                        for p in &f.phases {
                            writeln!(out, "  {}: {} lemmas", p.phase, p.lemmas.len()).map_err(io)?;
                            for l in &p.lemmas {
                                writeln!(out, "    {l}").map_err(io)?;
                            }
                        }
                    }
                    writeln!(out, "gave up: {reason}").map_err(io)?;
                }
            }
            Ok(EXIT_INCONCLUSIVE)
        }
    }
}

pub fn render_trace(t: &AbstractTrace) -> String {
    let mut out = String::new();
    if !t.valuation.is_empty() {
        let vals: Vec<String> = t.valuation.iter().map(|(k, e)| format!("{k} = {e}")).collect();
        let _ = writeln!(out, "view: {}", vals.join(", "));
    }
    for (i, st) in t.states.iter().enumerate() {
        let _ = writeln!(out, "state {i} in phase {}:", t.phases[i]);
        out.push_str(&render_structure(st, "  "));
        if let Some(step) = t.steps.get(i) {
            if t.abstractions[i] != *st {
                let _ = writeln!(out, "  abstracted to:");
                out.push_str(&render_structure(&t.abstractions[i], "    "));
            }
            let _ = writeln!(out, "  --{}({})-->", step.action, step.args.join(", "));
        }
    }
    let _ = match &t.violation {
        infer::Violation::Safety => writeln!(out, "violation: safety"),
        infer::Violation::Uncovered { action, args } => {
            writeln!(out, "violation: {action}({}) is not covered", args.join(", "))
        }
    };
    out
}

pub fn cmd_diagnose(trace: &Path, model: &Path, cfg: &Config, out: &mut dyn Write) -> Result<i32, CliError> {
    let (m, ts) = load(model)?;
    let s = inferred_structure(&m, &ts, cfg)?;
    let t: AbstractTrace = serde_json::from_str(&read(trace)?).map_err(|e| CliError::Trace {
        path: trace.to_path_buf(),
        message: e.to_string(),
    })?;
    let bound = cfg.bmc_bound.unwrap_or(t.len());
    let mut solver = SolverSession::new(&cfg.solver, &ts.vocab)?;
    let (verdict, witness, reason, code) = match infer::diagnose(&ts, &s, &t, bound, &mut solver)? {
        Diagnosis::Concrete(w) => ("concrete-counterexample", Some(w), None, EXIT_FAIL),
        Diagnosis::Artifact => ("artifact-within-bound", None, None, EXIT_OK),
        Diagnosis::Inconclusive(r) => ("inconclusive", None, Some(r), EXIT_INCONCLUSIVE),
    };
    match cfg.format {
        Format::Json => {
            let mut doc = json!({ "command": "diagnose", "verdict": verdict, "bound": bound });
            if let Some(w) = &witness {
                doc["witness"] = serde_json::to_value(w).expect("serializable");
            }
            if let Some(r) = &reason {
                doc["reason"] = json!(r);
            }
            writeln!(out, "{doc}").map_err(io)?;
        }
        Format::Text => {
            if let Some(w) = &witness {
                write!(out, "{}", render_trace(w)).map_err(io)?;
            }
            match reason {
                Some(r) => writeln!(out, "{verdict} (bound {bound}): {r}"),
                None => writeln!(out, "{verdict} (bound {bound})"),
            }
            .map_err(io)?;
        }
    }
    Ok(code)
}

pub fn cmd_export_chc(
    model: &Path,
    output: Option<&Path>,
    cfg: &Config,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let (m, ts) = load(model)?;
    let Some(mut s) = PhaseStructure::from_model(&m, &ts)? else {
        return Err(CliError::Config(format!("{} declares no automaton", model.display())));
    };
    if let Some(names) = &cfg.determinize {
        s = s.determinize(&phase_order(&s, names)?)?;
    }
    let chc = vcgen::emit_chc(&ts, &s)?;
    let text = chc.to_smtlib(&ts);
    match output {
        Some(p) => {
            write_file(p, &text)?;
            match cfg.format {
                Format::Json => writeln!(
                    out,
                    "{}",
                    json!({
                        "command": "export-chc",
                        "output": p.display().to_string(),
                        "unknowns": chc.unknowns.len(),
                        "clauses": chc.clauses.len(),
                    })
                ),
                Format::Text => writeln!(
                    out,
                    "wrote {} unknowns and {} clauses to {}",
                    chc.unknowns.len(),
                    chc.clauses.len(),
                    p.display()
                ),
            }
            .map_err(io)?;
        }
        None => out.write_all(text.as_bytes()).map_err(io)?,
    }
    Ok(EXIT_OK)
}
