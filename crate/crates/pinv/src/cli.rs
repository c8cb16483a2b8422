//! Command-line front end.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pinv_core::cegis::{run_exact, run_sub, Mode, Outcome, RunConfig, RunReport};
use pinv_core::features::get_features;
use pinv_core::model_tree::RoundingScheme;
use pinv_core::print::expr_to_string;
use pinv_core::sampler::Domain;
use pinv_core::verify::{check_exact, check_sub, expectations_equivalent, VerifyConfig};
use pinv_core::{parse_expr, parse_program, Expr, Program};
use rayon::prelude::*;

use crate::dataset::{write_exact, write_sub};
use crate::registry::{lookup, registry, BenchmarkEntry};
use crate::report::{to_json, CheckReport, SynthesisReport, SystemClock};

pub const EXIT_VERIFIED: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_TIMEOUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pinv", version, about = "Synthesize and check expectation invariants of probabilistic loops")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize an exact invariant.
    Exact {
        file: PathBuf,
        #[arg(long)]
        post: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Synthesize a sub-invariant lower-bounding the expected value of POST.
    Sub {
        file: PathBuf,
        #[arg(long)]
        pre: String,
        #[arg(long)]
        post: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the built-in benchmarks.
    Bench(BenchArgs),
    /// Check a candidate invariant.
    Verify {
        file: PathBuf,
        #[arg(long)]
        post: String,
        #[arg(long)]
        candidate: String,
        /// Check the sub-invariant conditions for this pre-expectation instead.
        #[arg(long)]
        pre: Option<String>,
        #[arg(long)]
        domain: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Extra feature; may be repeated.
        #[arg(long = "feature")]
        features: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, default_value_t = 500)]
    pub nruns: usize,
    #[arg(long, default_value_t = 500)]
    pub nstates: usize,
    /// Budget in seconds for each attempt.
    #[arg(long, default_value_t = 600.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Extra feature; may be repeated.
    #[arg(long = "feature")]
    pub features: Vec<String>,
    /// Ranges such as `int=0:20,p=0.2:0.8`.
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub copies: usize,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Attempts with seeds SEED, SEED+1, ... until one verifies.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// Rounding schemes to try, in order.
    #[arg(long, value_delimiter = ',', value_enum)]
    pub schemes: Option<Vec<SchemeArg>>,
    /// Depth of the soft trees in sub mode.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Training epochs of the soft trees in sub mode.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// JSON report path, `-` for stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Writes the final data set in text form.
    #[arg(long)]
    pub data_out: Option<PathBuf>,
    /// Leaves phase timings out of the report.
    #[arg(long)]
    pub no_timings: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Int,
    #[value(name = "1-digit")]
    OneDigit,
    #[value(name = "2-digit")]
    TwoDigit,
}

impl From<SchemeArg> for RoundingScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Int => RoundingScheme::Int,
            SchemeArg::OneDigit => RoundingScheme::OneDigit,
            SchemeArg::TwoDigit => RoundingScheme::TwoDigit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Sub,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Only the named benchmark.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    pub mode: ModeArg,
    /// Include programs that are not expected to be solved.
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value_t = 500)]
    pub nruns: usize,
    #[arg(long, default_value_t = 500)]
    pub nstates: usize,
    #[arg(long, default_value_t = 600.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// Parallel jobs; defaults to the number of cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Directory for per-benchmark JSON reports.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_timings: bool,
}

impl RunArgs {
    pub fn config(&self, mode: Mode, domain: Domain) -> Result<RunConfig> {
        let mut cfg = RunConfig {
            mode,
            nruns: self.nruns,
            nstates: self.nstates,
            timeout: self.timeout,
            seed: self.seed,
            domain,
            copies: self.copies,
            max_iterations: self.max_iterations,
            timings: !self.no_timings,
            ..RunConfig::default()
        };
        if let Some(s) = &self.schemes {
            cfg.schemes = s.iter().map(|&s| s.into()).collect();
        }
        if let Some(d) = self.depth {
            cfg.soft.depth = d;
        }
        if let Some(e) = self.epochs {
            cfg.soft.epochs = e;
        }
        if self.restarts == 0 {
            bail!("--restarts must be at least 1");
        }
        Ok(cfg)
    }
}

fn read_program(path: &Path, features: &[String]) -> Result<Program> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut prog = parse_program(&text).with_context(|| format!("in {}", path.display()))?;
    for f in features {
        prog.features.push(parse_expr(f, &prog.vars).with_context(|| format!("in feature `{f}`"))?);
    }
    Ok(prog)
}

fn expr(prog: &Program, text: &str, what: &str) -> Result<Expr> {
    parse_expr(text, &prog.vars).with_context(|| format!("in {what} `{text}`"))
}

fn domain(base: Domain, spec: Option<&str>) -> Result<Domain> {
    let mut d = base;
    if let Some(s) = spec {
        d.apply_spec(s)?;
    }
    Ok(d)
}

/// Where the human-readable summary goes: stderr when the report takes stdout.
fn summary_sink(out: Option<&Path>) -> Box<dyn Write> {
    if out.is_some_and(|p| p.as_os_str() == "-") {
        Box::new(io::stderr())
    } else {
        Box::new(io::stdout())
    }
}

fn emit(out: Option<&Path>, json: &str) -> Result<()> {
    match out {
        Some(p) if p.as_os_str() == "-" => print!("{json}"),
        Some(p) => fs::write(p, json).with_context(|| format!("cannot write {}", p.display()))?,
        None => {}
    }
    Ok(())
}

/// A synthesis task with everything parsed.
pub struct Task {
    pub name: String,
    pub prog: Program,
    pub pre: Option<Expr>,
    pub post: Expr,
    pub cfg: RunConfig,
    pub restarts: usize,
}

impl Task {
    pub fn run(&self) -> Result<SynthesisReport> {
        let mut attempts = Vec::new();
        for k in 0..self.restarts {
            let mut cfg = self.cfg.clone();
            cfg.seed = self.cfg.seed.wrapping_add(k as u64);
            let clock = SystemClock::new();
            let r = match &self.pre {
                Some(pre) => run_sub(&self.prog, pre, &self.post, &cfg, &clock)?,
                None => run_exact(&self.prog, &self.post, &cfg, &clock)?,
            };
            let done = r.is_verified();
            attempts.push(r);
            if done {
                break;
            }
        }
        let vars = &self.prog.vars;
        let (lin, mul) = {
            let mut pexp: Vec<Expr> = self.pre.iter().cloned().collect();
            pexp.push(self.post.clone());
            get_features(&self.prog, &pexp)?
        };
        let mut features = lin.names();
        features.extend(mul.names().into_iter().filter(|n| !lin.names().contains(n)));
        Ok(SynthesisReport {
            program: self.name.clone(),
            mode: self.cfg.mode,
            post: expr_to_string(&self.post, vars),
            pre: self.pre.as_ref().map(|e| expr_to_string(e, vars)),
            features,
            domain: self.cfg.domain.to_string(),
            config: self.cfg.clone(),
            invariant: attempts.last().and_then(|r| r.invariant.as_ref()).map(|e| expr_to_string(e, vars)),
            attempts,
        })
    }
}

fn exit_code(last: Option<&RunReport>) -> i32 {
    match last.map(|r| &r.outcome) {
        Some(Outcome::Verified { .. }) => EXIT_VERIFIED,
        _ => EXIT_TIMEOUT,
    }
}

fn synthesize(file: &Path, pre: Option<&str>, post: &str, run: &RunArgs) -> Result<i32> {
    let prog = read_program(file, &run.features)?;
    let post = expr(&prog, post, "post-expectation")?;
    let pre = pre.map(|p| expr(&prog, p, "pre-expectation")).transpose()?;
    let mode = if pre.is_some() { Mode::Sub } else { Mode::Exact };
    let cfg = run.config(mode, domain(Domain::default(), run.domain.as_deref())?)?;
    let task = Task { name: file.display().to_string(), prog, pre, post, cfg, restarts: run.restarts };
    let report = task.run()?;
    let last = report.attempts.last();
    let mut say = summary_sink(run.out.as_deref());
    match (last.map(|r| &r.outcome), &report.invariant) {
        (Some(Outcome::Verified { verdict, .. }), Some(inv)) => {
            writeln!(say, "verified ({:?}): {}", verdict.status, inv)?;
            for c in &verdict.side_conditions {
                writeln!(say, "  assuming {c}")?;
            }
        }
        (Some(Outcome::IterationLimit), _) => writeln!(say, "no invariant within the iteration limit")?,
        _ => writeln!(say, "timeout: no invariant found")?,
    }
    if let (Some(path), Some(r)) = (&run.data_out, last) {
        let text = match (&r.exact_data, &r.sub_data) {
            (Some(d), _) => write_exact(&task.prog.vars, d),
            (_, Some(d)) => write_sub(&task.prog.vars, d),
            _ => String::new(),
        };
        fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    emit(run.out.as_deref(), &to_json(&report))?;
    Ok(exit_code(last))
}

fn check(
    file: &Path,
    post: &str,
    candidate: &str,
    pre: Option<&str>,
    dom: Option<&str>,
    seed: u64,
    features: &[String],
    out: Option<&Path>,
) -> Result<i32> {
    let prog = read_program(file, features)?;
    let post_e = expr(&prog, post, "post-expectation")?;
    let cand = expr(&prog, candidate, "candidate")?;
    let cfg = VerifyConfig { domain: domain(Domain::default(), dom)?, seed, ..VerifyConfig::default() };
    let verdict = match pre {
        Some(p) => check_sub(&cand, &prog, &expr(&prog, p, "pre-expectation")?, &post_e, &cfg),
        None => check_exact(&cand, &prog, &post_e, &cfg),
    };
    let mut say = summary_sink(out);
    writeln!(say, "{:?}", verdict.status)?;
    for c in &verdict.side_conditions {
        writeln!(say, "  assuming {c}")?;
    }
    for c in &verdict.counterexamples {
        writeln!(say, "  counterexample {} violation {}", pinv_core::sampler::format_state(&prog.vars, &c.state), c.violation)?;
    }
    let code = if verdict.status.is_verified() { EXIT_VERIFIED } else { EXIT_FAILED };
    let report = CheckReport {
        program: file.display().to_string(),
        post: expr_to_string(&post_e, &prog.vars),
        pre: pre.map(str::to_string),
        candidate: expr_to_string(&cand, &prog.vars),
        domain: cfg.domain.to_string(),
        verdict,
    };
    emit(out, &to_json(&report))?;
    Ok(code)
}

/// Synthesis tasks for the selected benchmarks. Each pre-expectation of a
/// benchmark is a separate task in sub mode.
pub fn bench_tasks(args: &BenchArgs) -> Result<Vec<(Task, &'static BenchmarkEntry, Option<&'static str>)>> {
    let entries: Vec<&'static BenchmarkEntry> = match &args.name {
        Some(n) => vec![lookup(n)?],
        None => registry().iter().collect(),
    };
    let run = RunArgs {
        nruns: args.nruns,
        nstates: args.nstates,
        timeout: args.timeout,
        seed: args.seed,
        features: Vec::new(),
        domain: None,
        copies: 10,
        max_iterations: None,
        restarts: args.restarts,
        schemes: None,
        depth: None,
        epochs: None,
        out: None,
        data_out: None,
        no_timings: args.no_timings,
    };
    let mut tasks = Vec::new();
    for b in entries {
        let single = args.name.is_some();
        match args.mode {
            ModeArg::Exact => {
                if !(args.all || single || b.synthesis_target) {
                    continue;
                }
                let prog = b.program()?;
                let post = b.expr(&prog, b.post)?;
                let cfg = run.config(Mode::Exact, b.domain())?;
                tasks.push((
                    Task { name: b.name.to_string(), prog, pre: None, post, cfg, restarts: args.restarts },
                    b,
                    b.expected,
                ));
            }
            ModeArg::Sub => {
                for (i, c) in b.sub.iter().enumerate() {
                    if !(args.all || single || c.expected.is_some()) {
                        continue;
                    }
                    let prog = b.program_with(c.features)?;
                    let post = b.expr(&prog, b.post)?;
                    let pre = b.expr(&prog, c.pre)?;
                    let cfg = run.config(Mode::Sub, b.domain())?;
                    tasks.push((
                        Task { name: format!("{}#{}", b.name, i), prog, pre: Some(pre), post, cfg, restarts: args.restarts },
                        b,
                        c.expected,
                    ));
                }
            }
        }
    }
    Ok(tasks)
}

fn bench_one(t: &Task, b: &BenchmarkEntry, expected: Option<&str>, out_dir: Option<&Path>) -> Result<i32> {
    let name = &t.name;
    let rep = match t.run() {
        Ok(r) => r,
        Err(e) => {
            println!("{name:<12} error     {e:#}");
            return Ok(EXIT_FAILED);
        }
    };
    let inv = rep.attempts.last().and_then(|a| a.invariant.as_ref());
    let note = match (inv, expected) {
        (Some(inv), Some(want)) => {
            let w = b.expr(&t.prog, want)?;
            if expectations_equivalent(inv, &w, &t.prog.vars) {
                " (matches expected)"
            } else {
                " (differs from expected)"
            }
        }
        _ => "",
    };
    let times: Vec<f64> = rep.attempts.iter().filter_map(|a| a.timings.map(|t| t.total)).collect();
    let time = if times.is_empty() { String::new() } else { format!("  [{:.2}s]", times.iter().sum::<f64>()) };
    match &rep.invariant {
        Some(inv) => println!("{name:<12} verified  {inv}{note}{time}"),
        None => println!("{name:<12} failed{time}"),
    }
    if let Some(d) = out_dir {
        let file = d.join(format!("{}-{:?}.json", name.replace('#', "-"), rep.mode).to_lowercase());
        fs::write(&file, to_json(&rep)).with_context(|| format!("cannot write {}", file.display()))?;
    }
    Ok(exit_code(rep.attempts.last()))
}

fn bench(args: &BenchArgs) -> Result<i32> {
    let tasks = bench_tasks(args)?;
    if let Some(d) = &args.out_dir {
        fs::create_dir_all(d).with_context(|| format!("cannot create {}", d.display()))?;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs.unwrap_or(0)).build()?;
    let codes: Vec<Result<i32>> = pool.install(|| {
        tasks.par_iter().map(|(t, b, expected)| bench_one(t, b, *expected, args.out_dir.as_deref())).collect()
    });
    let mut code = EXIT_VERIFIED;
    for c in codes {
        code = code.max(c?);
    }
    Ok(code)
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let res = match &cli.command {
        Command::Exact { file, post, run } => synthesize(file, None, post, run),
        Command::Sub { file, pre, post, run } => synthesize(file, Some(pre), post, run),
        Command::Bench(args) => bench(args),
        Command::Verify { file, post, candidate, pre, domain, seed, features, out } => {
            check(file, post, candidate, pre.as_deref(), domain.as_deref(), *seed, features, out.as_deref())
        }
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILED
        }
    }
}
