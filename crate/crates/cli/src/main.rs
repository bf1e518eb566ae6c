use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use pmc_core::case1::{self, ApproxOptions};
use pmc_core::case2::{self, project_counter, Case2ApproxOptions, Case2Options, GOptions};
use pmc_core::coverability::{witness_is_safe, CoverOptions};
use pmc_core::finite_chain::DEFAULT_EXACT_CAP;
use pmc_core::martingale;
use pmc_core::model::{mask_indices, mask_of};
use pmc_core::report::{config_value, Value};
use pmc_core::sim;
use pmc_core::{
    classify_criterion, is_safe_prefix, parse_pmc, write_report, AnalysisReport, Configuration, CriterionClass,
    Error, Pmc, StoppingCriterion, UndecidableReason, Verdict,
};

#[derive(Parser, Debug)]
#[command(name = "pmc", version, about = "Zero-reachability analysis for probabilistic multi-counter automata")]
struct Cli {
    /// Print the report as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Largest bottom component solved in rational arithmetic.
    #[arg(long, global = true, default_value_t = DEFAULT_EXACT_CAP)]
    exact_cap: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and validate a model file.
    Validate { file: PathBuf },
    /// Classify a stopping criterion such as `{{1},{2}}`.
    Classify {
        file: PathBuf,
        #[arg(long)]
        criterion: String,
    },
    /// Qualitative analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Approximation of the stopping probability.
    #[command(subcommand)]
    Approx(ApproxCmd),
    /// Analyses with one counter left unwatched.
    #[command(subcommand)]
    Case2(Case2Cmd),
    /// Monte Carlo estimate of the stopping probability.
    Simulate {
        #[command(flatten)]
        start: StartArgs,
        /// `all`, `minus:I`, `none` or an explicit set family like `{{1},{3}}`.
        #[arg(long, default_value = "all")]
        criterion: String,
        #[arg(long, default_value_t = 10_000)]
        runs: u64,
        #[arg(long, default_value_t = 100_000)]
        max_steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand, Debug)]
enum AnalyzeCmd {
    /// Does some counter reach zero almost surely?
    #[command(name = "case1-qual")]
    Case1Qual {
        #[command(flatten)]
        start: StartArgs,
    },
    /// Qualitative analysis for an arbitrary criterion.
    Qual {
        #[command(flatten)]
        start: StartArgs,
        #[arg(long)]
        criterion: String,
        /// Depth bound of the certificate search when one counter is free.
        #[arg(long)]
        bound: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum ApproxCmd {
    /// Approximate the probability that some counter reaches zero.
    Case1 {
        #[command(flatten)]
        start: StartArgs,
        #[arg(long)]
        eps: f64,
        /// Interpret `--eps` as a relative error.
        #[arg(long)]
        relative: bool,
    },
}

#[derive(Subcommand, Debug)]
enum Case2Cmd {
    /// Qualitative analysis with counter I free, plus the one-counter constants.
    Analyze {
        #[command(flatten)]
        start: StartArgs,
        #[arg(long)]
        free_counter: usize,
        #[arg(long)]
        bound: Option<usize>,
    },
    /// Approximate the stopping probability with counter I free.
    Approx {
        #[command(flatten)]
        start: StartArgs,
        #[arg(long)]
        free_counter: usize,
        #[arg(long)]
        eps: f64,
    },
}

#[derive(Args, Debug)]
struct StartArgs {
    file: PathBuf,
    /// Initial control state; defaults to the first declared state.
    #[arg(long)]
    state: Option<String>,
    /// Comma-separated initial counters; defaults to all ones.
    #[arg(long, value_delimiter = ',')]
    counters: Option<Vec<u64>>,
}

/// Process failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let code = match &e {
            Error::Parse(_) | Error::InvalidModel(_) | Error::InvalidCriterion(_) => 2,
            Error::Precondition(_) | Error::NotIrreducible | Error::CounterOverflow { .. } | Error::DisconnectedPath(_) => 4,
            Error::ResourceExhausted(_) | Error::Numeric(_) | Error::BudgetUnderflow(_) => 5,
        };
        Failure { code, message: e.to_string() }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

struct Loaded {
    pmc: Pmc,
    hash: String,
}

fn load(path: &Path) -> Result<Loaded, Failure> {
    let bytes = std::fs::read(path).map_err(|e| fail(2, format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| fail(2, format!("{}: not UTF-8", path.display())))?;
    let pmc = parse_pmc(&text).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })?;
    let hash: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    Ok(Loaded { pmc, hash })
}

fn start_config(pmc: &Pmc, args: &StartArgs) -> Result<Configuration, Failure> {
    let state = match &args.state {
        Some(s) => s.clone(),
        None => pmc.state_name(0).to_string(),
    };
    let counters = args.counters.clone().unwrap_or_else(|| vec![1; pmc.dimension()]);
    let cfg = pmc.config(&state, counters).map_err(|e| fail(1, e.to_string()))?;
    Ok(cfg)
}

/// Parses `all`, `none`, `minus:I` or a family like `{{1,2},{3}}`.
fn parse_criterion(text: &str, d: usize) -> Result<Option<StoppingCriterion>, Failure> {
    let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if t == "all" {
        return Ok(Some(StoppingCriterion::all(d)));
    }
    if t == "none" {
        return Ok(None);
    }
    if let Some(i) = t.strip_prefix("minus:") {
        let i: usize = i.parse().map_err(|_| fail(1, format!("bad counter in criterion {text:?}")))?;
        if i == 0 || i > d {
            return Err(Error::InvalidCriterion(format!("counter {i} out of range 1..={d}")).into());
        }
        return Ok(Some(StoppingCriterion::minus(d, i)));
    }
    let bad = || fail(1, format!("cannot read criterion {text:?}; use all, none, minus:I or {{{{1}},{{2}}}}"));
    let inner = t.strip_prefix('{').and_then(|s| s.strip_suffix('}')).ok_or_else(bad)?;
    let mut sets = Vec::new();
    let mut rest = inner;
    while !rest.is_empty() {
        let body = rest.strip_prefix('{').ok_or_else(bad)?;
        let end = body.find('}').ok_or_else(bad)?;
        let mut idx = Vec::new();
        for part in body[..end].split(',').filter(|p| !p.is_empty()) {
            let k: usize = part.parse().map_err(|_| bad())?;
            if k == 0 || k > d {
                return Err(Error::InvalidCriterion(format!("counter {k} out of range 1..={d}")).into());
            }
            idx.push(k);
        }
        sets.push(mask_of(&idx));
        rest = &body[end + 1..];
        rest = rest.strip_prefix(',').unwrap_or(rest);
    }
    let z = StoppingCriterion::new(sets);
    z.validate(d)?;
    Ok(Some(z))
}

fn criterion_text(z: &StoppingCriterion) -> String {
    let sets: Vec<String> = z
        .sets()
        .iter()
        .map(|&s| {
            let idx: Vec<String> = mask_indices(s).iter().map(|k| k.to_string()).collect();
            format!("{{{}}}", idx.join(","))
        })
        .collect();
    format!("{{{}}}", sets.join(","))
}

fn undecidable(z: &StoppingCriterion, why: UndecidableReason) -> Failure {
    let reason = match why {
        UndecidableReason::A => "a member has more than one element",
        UndecidableReason::B => "two counters are outside every member",
    };
    fail(3, format!("almost-sure stopping is undecidable for criterion {}: {reason}", criterion_text(z)))
}

fn names(pmc: &Pmc, states: impl IntoIterator<Item = usize>) -> Value {
    Value::List(states.into_iter().map(|q| Value::from(pmc.state_name(q))).collect())
}

fn path_value(pmc: &Pmc, path: &[Configuration]) -> Value {
    Value::List(path.iter().map(|c| config_value(pmc, c)).collect())
}

fn opt_level(v: &[Option<u64>]) -> Value {
    Value::List(v.iter().map(|x| x.map_or(Value::from("inf"), Value::from)).collect())
}

fn base_report(query: &str, loaded: &Loaded, start: Option<&Configuration>) -> AnalysisReport {
    let mut r = AnalysisReport::new(query);
    r.model = Some(loaded.hash.clone());
    r.initial = start.map(|c| config_value(&loaded.pmc, c));
    r
}

fn verdict_code(v: Verdict) -> u8 {
    if v == Verdict::Unknown {
        5
    } else {
        0
    }
}

fn case1_qual(loaded: &Loaded, start: &Configuration, exact_cap: usize) -> Result<(AnalysisReport, u8), Failure> {
    let pmc = &loaded.pmc;
    let opts = CoverOptions { exact_cap, ..CoverOptions::default() };
    let q = case1::qualitative_case1_with(pmc, start, &opts)?;
    let mut r = base_report("case1-qual", loaded, Some(start));
    r.result = Value::map().with("verdict", q.verdict.as_str()).with("criterion", criterion_text(&StoppingCriterion::all(pmc.dimension())));
    for (k, a) in q.analyses.iter().enumerate() {
        let botfin: Vec<Value> = a.botfin.iter().map(|b| opt_level(b)).collect();
        r.constant(
            &format!("bscc{k}"),
            Value::map()
                .with("states", names(pmc, a.component.iter().copied()))
                .with("trend", a.trend.clone())
                .with("mu", a.mu.clone())
                .with("botfin", Value::List(botfin))
                .with("diverging", a.diverging.clone()),
        );
    }
    if let Some(w) = &q.witness {
        let mut wv = Value::map()
            .with("kind", "diverging_cycle")
            .with("bscc", names(pmc, w.component.iter().copied()))
            .with("state", pmc.state_name(w.state))
            .with("cycle_states", names(pmc, w.cycle.states.iter().copied()));
        if let Some(flow) = &w.cycle.flow {
            wv = wv.with("cycle_flow", flow.clone());
        }
        if let Some(p) = &w.path {
            let ok = witness_is_safe(pmc, p)?;
            wv = wv.with("path", path_value(pmc, p)).with("validated", ok);
        }
        r.witnesses.push(wv);
    }
    r.constant("tree_nodes", q.tree_nodes);
    r.diagnostics = q.diagnostics;
    Ok((r, verdict_code(q.verdict)))
}

fn case2_qual(
    loaded: &Loaded,
    start: &Configuration,
    i: usize,
    bound: Option<usize>,
    exact_cap: usize,
    with_constants: bool,
) -> Result<(AnalysisReport, u8), Failure> {
    let pmc = &loaded.pmc;
    let mut opts = Case2Options { exact_cap, ..Case2Options::default() };
    if let Some(b) = bound {
        opts.search_bound = b;
    }
    let q = case2::qualitative_case2_with(pmc, start, i, &opts)?;
    let norm = &q.normalized.pmc;
    let mut r = base_report("case2-qual", loaded, Some(start));
    r.result = Value::map()
        .with("verdict", q.verdict.as_str())
        .with("criterion", criterion_text(&StoppingCriterion::minus(pmc.dimension(), i)))
        .with("free_counter", i);
    if q.verdict == Verdict::Unknown {
        r.result = r.result.with("bound_exhausted", true);
    }
    r.constant("g_residual", q.g_residual);
    r.constant("pruned_mass", q.pruned_mass);
    r.constant("explored", q.explored);
    let counters: Vec<usize> = (0..pmc.dimension().saturating_sub(1)).map(|k| case2::reward_counter(i, k)).collect();
    for (k, a) in q.oc.iter().enumerate() {
        let botinf: Vec<Value> = a.botinf.iter().map(|b| opt_level(b)).collect();
        r.constant(
            &format!("oc{k}"),
            Value::map()
                .with("states", names(norm, a.component.iter().copied()))
                .with("reward_counters", counters.clone())
                .with("t_oc", a.t_oc.clone())
                .with("e", a.e.clone())
                .with("mu", a.mu.clone())
                .with("botinf", Value::List(botinf))
                .with("diverging", a.diverging.clone()),
        );
    }
    for (k, a) in q.floor.iter().enumerate() {
        r.constant(
            &format!("floor{k}"),
            Value::map().with("states", names(norm, a.component.iter().copied())).with("trend", a.trend.clone()),
        );
    }
    let mut diagnostics = q.diagnostics.clone();
    if with_constants {
        match martingale_constants(norm, i, &q, &mut r) {
            Ok(true) => diagnostics.push("bump constants c′ and a were estimated by simulation".into()),
            Ok(false) => {}
            Err(e) => diagnostics.push(format!("martingale constants skipped: {e}")),
        }
    }
    if let Some(w) = &q.witness {
        let ok = is_safe_prefix(norm, &w.path, &StoppingCriterion::minus(pmc.dimension(), i))?;
        r.witnesses.push(
            Value::map()
                .with("kind", w.kind.as_str())
                .with("component", names(norm, w.component.iter().copied()))
                .with("path", path_value(norm, &w.path))
                .with("loop_start", w.loop_start)
                .with("validated", ok),
        );
    }
    r.diagnostics = diagnostics;
    Ok((r, verdict_code(q.verdict)))
}

/// Adds `h₀`, `A₀`, `n` for the first reward with positive oc-trend.
/// Returns whether estimated constants were used.
fn martingale_constants(
    norm: &Pmc,
    i: usize,
    q: &case2::QualitativeCase2,
    r: &mut AnalysisReport,
) -> pmc_core::Result<bool> {
    let Some((a, coord)) = q
        .oc
        .iter()
        .find_map(|a| (0..a.t_oc.len()).find(|&c| a.positive(c)).map(|c| (a, c)))
    else {
        return Ok(false);
    };
    let b = project_counter(norm, i)?;
    let md = martingale::martingale_data(&b, &a.component, coord, &GOptions::default())?;
    let bump = martingale::estimate_bump_constants(&b, &a.component, 4000, 100_000, 1)?;
    let tail = martingale::tail_constants(md.t, md.c, &bump, norm.dimension())?;
    r.constant(
        "martingale",
        Value::map()
            .with("reward_counter", case2::reward_counter(i, coord))
            .with("t", md.t)
            .with("c", md.c)
            .with("g0", md.g0.clone())
            .with("c_prime", bump.c_prime)
            .with("a", bump.a)
            .with("bump_provenance", bump.provenance.as_str())
            .with("h0", tail.h0)
            .with("n", tail.n)
            .with("ln_a0", tail.ln_a0)
            .with("a0", tail.a0),
    );
    Ok(true)
}

fn run(cli: Cli) -> Result<(AnalysisReport, u8), Failure> {
    match cli.command {
        Command::Validate { file } => {
            let loaded = load(&file)?;
            let pmc = &loaded.pmc;
            let mut r = base_report("validate", &loaded, None);
            r.result = Value::map()
                .with("valid", true)
                .with("name", pmc.name())
                .with("dimension", pmc.dimension())
                .with("states", pmc.num_states())
                .with("rules", pmc.rules().len())
                .with("kind", format!("{:?}", pmc.kind()).to_lowercase());
            Ok((r, 0))
        }
        Command::Classify { file, criterion } => {
            let loaded = load(&file)?;
            let d = loaded.pmc.dimension();
            let z = parse_criterion(&criterion, d)?.ok_or_else(|| fail(1, "classify needs a stopping criterion"))?;
            match classify_criterion(d, &z)? {
                CriterionClass::Undecidable(why) => Err(undecidable(&z, why)),
                class => {
                    let mut r = base_report("classify", &loaded, None);
                    let (name, free) = match class {
                        CriterionClass::CaseII(i) => ("one_free_counter", Some(i)),
                        _ => ("all_counters", None),
                    };
                    r.result = Value::map().with("criterion", criterion_text(&z)).with("class", name).with("free_counter", free);
                    Ok((r, 0))
                }
            }
        }
        Command::Analyze(AnalyzeCmd::Case1Qual { start }) => {
            let loaded = load(&start.file)?;
            let s = start_config(&loaded.pmc, &start)?;
            case1_qual(&loaded, &s, cli.exact_cap)
        }
        Command::Analyze(AnalyzeCmd::Qual { start, criterion, bound }) => {
            let loaded = load(&start.file)?;
            let d = loaded.pmc.dimension();
            let s = start_config(&loaded.pmc, &start)?;
            let z = parse_criterion(&criterion, d)?.ok_or_else(|| fail(1, "qual needs a stopping criterion"))?;
            match classify_criterion(d, &z)? {
                CriterionClass::Undecidable(why) => Err(undecidable(&z, why)),
                CriterionClass::CaseI => case1_qual(&loaded, &s, cli.exact_cap),
                CriterionClass::CaseII(i) => case2_qual(&loaded, &s, i, bound, cli.exact_cap, false),
            }
        }
        Command::Approx(ApproxCmd::Case1 { start, eps, relative }) => {
            let loaded = load(&start.file)?;
            let s = start_config(&loaded.pmc, &start)?;
            let opts = ApproxOptions {
                relative,
                cover: CoverOptions { exact_cap: cli.exact_cap, ..CoverOptions::default() },
                ..ApproxOptions::default()
            };
            let a = case1::approx_case1_with(&loaded.pmc, &s, eps, &opts)?;
            let mut r = base_report("approx-case1", &loaded, Some(&s));
            r.result = Value::map()
                .with("nu", a.nu)
                .with("eps", a.eps_abs)
                .with("relative", relative)
                .with("qualitative", a.qualitative.as_str());
            r.constant("unfold_steps", a.unfold_steps);
            r.constant("explored", a.explored);
            r.diagnostics = a.diagnostics;
            Ok((r, 0))
        }
        Command::Case2(Case2Cmd::Analyze { start, free_counter, bound }) => {
            let loaded = load(&start.file)?;
            let s = start_config(&loaded.pmc, &start)?;
            case2_qual(&loaded, &s, free_counter, bound, cli.exact_cap, true)
        }
        Command::Case2(Case2Cmd::Approx { start, free_counter, eps }) => {
            let loaded = load(&start.file)?;
            let s = start_config(&loaded.pmc, &start)?;
            let mut opts = Case2ApproxOptions::default();
            opts.case1.cover.exact_cap = cli.exact_cap;
            opts.qualitative.exact_cap = cli.exact_cap;
            let a = case2::approx_case2_with(&loaded.pmc, &s, free_counter, eps, &opts)?;
            let mut r = base_report("approx-case2", &loaded, Some(&s));
            r.result = Value::map()
                .with("nu", a.nu)
                .with("eps", a.eps)
                .with("free_counter", free_counter)
                .with("qualitative", a.qualitative.as_str());
            r.constant("k_bound", a.k_bound);
            r.constant("h_bound", a.h_bound);
            r.constant("rounds", a.rounds);
            r.constant("explored", a.explored);
            r.diagnostics = a.diagnostics;
            Ok((r, 0))
        }
        Command::Simulate { start, criterion, runs, max_steps, seed } => {
            let loaded = load(&start.file)?;
            let s = start_config(&loaded.pmc, &start)?;
            let z = parse_criterion(&criterion, loaded.pmc.dimension())?;
            let mut r = base_report("simulate", &loaded, Some(&s));
            match &z {
                Some(z) => {
                    let e = sim::estimate_probability(&loaded.pmc, &s, z, max_steps, runs, seed)?;
                    r.result = Value::map()
                        .with("criterion", criterion_text(z))
                        .with("estimate", e.estimate)
                        .with("ci_low", e.ci_low)
                        .with("ci_high", e.ci_high)
                        .with("sigma", e.sigma())
                        .with("runs", e.runs)
                        .with("stopped", e.stopped)
                        .with("censored", e.censored);
                }
                None => {
                    let freq = sim::transition_frequencies(&loaded.pmc, &s, max_steps, runs, seed)?;
                    let k = loaded.pmc.rules().len();
                    let mean: Vec<f64> = (0..k)
                        .map(|j| freq.iter().map(|f| f[j]).sum::<f64>() / freq.len().max(1) as f64)
                        .collect();
                    r.result = Value::map()
                        .with("criterion", "none")
                        .with("runs", runs)
                        .with("steps", max_steps)
                        .with("mean_rule_frequencies", mean);
                }
            }
            r.constant("seed", seed);
            r.constant("max_steps", max_steps);
            Ok((r, 0))
        }
    }
}

fn render_text(v: &Value, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match v {
        Value::Map(m) => {
            for (k, x) in m {
                match x {
                    Value::Map(inner) if !inner.is_empty() => {
                        out.push_str(&format!("{pad}{k}:\n"));
                        render_text(x, indent + 1, out);
                    }
                    Value::List(l) if l.iter().any(|e| matches!(e, Value::Map(_))) => {
                        out.push_str(&format!("{pad}{k}:\n"));
                        for e in l {
                            out.push_str(&format!("{pad}  -\n"));
                            render_text(e, indent + 2, out);
                        }
                    }
                    _ => out.push_str(&format!("{pad}{k}: {}\n", inline(x))),
                }
            }
        }
        other => out.push_str(&format!("{pad}{}\n", inline(other))),
    }
}

fn inline(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::Bool(b) => b.to_string(),
        Value::Int(i) => i.to_string(),
        Value::Float(f) => format!("{f}"),
        Value::Rational(r) => r.to_string(),
        Value::Str(s) => s.clone(),
        Value::List(l) => format!("[{}]", l.iter().map(inline).collect::<Vec<_>>().join(", ")),
        Value::Map(m) => {
            let parts: Vec<String> = m.iter().map(|(k, x)| format!("{k}={}", inline(x))).collect();
            format!("{{{}}}", parts.join(", "))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let json = cli.json;
    match run(cli) {
        Ok((report, code)) => {
            if json {
                println!("{}", write_report(&report));
            } else {
                let mut out = String::new();
                render_text(&report.to_value(), 0, &mut out);
                print!("{out}");
            }
            if code == 5 {
                eprintln!("pmc: search bound exhausted, verdict unknown");
            }
            ExitCode::from(code)
        }
        Err(f) => {
            eprintln!("pmc: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
