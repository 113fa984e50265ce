//! Command-line frontend: `analyze`, `instrument`, `run`, `bench`, `check`.

pub mod bench;
pub mod check;
pub mod corpus;
pub mod pipeline;

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::extras::{ExtrasOptions, InstrumentSet, Rule};
use crate::instrument::{emit_instrumented, full_set, instrument_program, parse_instrumented};
use crate::scope::{emit_methods_file, parse_methods_file, ScopeOptions};
use crate::tir::{validate_program, MethodSig};
use crate::vm::{run, Halt, RunConfig, DEFAULT_BUDGET};

use pipeline::{analyze_program, load_program, load_seeds, read_text, PipelineError, PipelineOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VIOLATIONS: i32 = 2;
pub const EXIT_RUN_ERROR: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "taintweave", version, about = "Partial instrumentation for dynamic taint tracking")]
pub struct Cli {
    /// Seeds file with `[sources]` and `[sinks]` sections.
    #[arg(long, global = true)]
    pub seeds: Option<PathBuf>,
    /// Write the primary output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the methods file for a program.
    Analyze(AnalyzeArgs),
    /// Rewrite a program for the methods in a methods file.
    Instrument(InstrumentArgs),
    /// Execute a plain or instrumented program.
    Run(RunArgs),
    /// Instruction counts at none, partial and full instrumentation.
    Bench(BenchArgs),
    /// Acceptance checks over a corpus.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub program: PathBuf,
    /// Print why a method is in the set.
    #[arg(long, value_name = "SIG")]
    pub explain: Vec<String>,
    #[arg(long)]
    pub dump_facts: bool,
    #[arg(long)]
    pub source_caller_closure: bool,
    #[arg(long = "rule1-global")]
    pub rule1_global: bool,
    #[arg(long)]
    pub no_extras: bool,
}

#[derive(Debug, Args)]
pub struct InstrumentArgs {
    pub program: PathBuf,
    /// Methods file; ignored with `--full` or `--none`.
    pub methods: Option<PathBuf>,
    #[arg(long, conflicts_with = "none")]
    pub full: bool,
    #[arg(long)]
    pub none: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub program: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub input: Vec<i64>,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: u64,
    #[arg(long)]
    pub fail_on_violation: bool,
    #[arg(long)]
    pub trace_calls: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub corpus: PathBuf,
    #[arg(long)]
    pub no_extras: bool,
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

struct Ctx<'a> {
    seeds: Option<PathBuf>,
    out_path: Option<PathBuf>,
    json: bool,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

enum Failure {
    Usage(String),
    Exit(i32),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl Ctx<'_> {
    /// Primary output: the `--out` file if given, else stdout.
    fn emit(&mut self, text: &str) -> Result<(), Failure> {
        match &self.out_path {
            Some(p) => write_atomic(p, text.as_bytes()).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
            None => self.out.write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let mut ctx = Ctx { seeds: cli.seeds, out_path: cli.out, json: cli.json, out, err };
    let result = match cli.command {
        Command::Analyze(a) => cmd_analyze(&mut ctx, a),
        Command::Instrument(a) => cmd_instrument(&mut ctx, a),
        Command::Run(a) => cmd_run(&mut ctx, a),
        Command::Bench(a) => cmd_bench(&mut ctx, a),
        Command::Check(a) => cmd_check(&mut ctx, a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Exit(code)) => code,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(ctx.err, "error: {msg}");
            EXIT_USAGE
        }
    }
}

fn cmd_analyze(ctx: &mut Ctx<'_>, a: AnalyzeArgs) -> Result<(), Failure> {
    let p = load_program(&a.program)?;
    let seeds = load_seeds(ctx.seeds.as_deref())?;
    let opts = PipelineOptions {
        scope: ScopeOptions { source_caller_closure: a.source_caller_closure },
        extras: ExtrasOptions { rule1_global: a.rule1_global },
        no_extras: a.no_extras,
    };
    let analysis = analyze_program(&p, &seeds, opts).map_err(PipelineError::from)?;
    if a.dump_facts {
        ctx.out.write_all(analysis.facts.dump().as_bytes())?;
    }
    let text = if ctx.json {
        let members: Vec<serde_json::Value> = analysis
            .set
            .methods
            .iter()
            .map(|m| serde_json::json!({"method": m.to_string(), "rule": analysis.set.provenance[m].as_str()}))
            .collect();
        format!("{}\n", serde_json::Value::Array(members))
    } else {
        emit_methods_file(&analysis.set.methods)
    };
    ctx.emit(&text)?;
    for s in &a.explain {
        let sig = MethodSig::parse(s.trim()).map_err(|m| Failure::Usage(format!("--explain: {m}")))?;
        let line = analysis.set.explain(&sig).unwrap_or_else(|| format!("{sig}  not instrumented"));
        writeln!(ctx.out, "{line}")?;
    }
    Ok(())
}

fn cmd_instrument(ctx: &mut Ctx<'_>, a: InstrumentArgs) -> Result<(), Failure> {
    let p = load_program(&a.program)?;
    let set = if a.full {
        full_set(&p)
    } else if a.none {
        InstrumentSet::default()
    } else {
        let path =
            a.methods.ok_or_else(|| Failure::Usage("a methods file is required without --full or --none".into()))?;
        let methods =
            parse_methods_file(&read_text(&path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        InstrumentSet::from_methods(methods, Rule::Intersection)
    };
    let ip = instrument_program(&p, &set).map_err(|e| Failure::Usage(e.to_string()))?;
    ctx.emit(&emit_instrumented(&ip))
}

fn cmd_run(ctx: &mut Ctx<'_>, a: RunArgs) -> Result<(), Failure> {
    if a.budget == 0 {
        return Err(Failure::Usage("--budget must be positive".into()));
    }
    let text = read_text(&a.program)?;
    let ip = parse_instrumented(&text).map_err(|e| Failure::Usage(format!("{}: {e}", a.program.display())))?;
    let errors = validate_program(&ip.program);
    if !errors.is_empty() {
        return Err(PipelineError::Invalid { path: a.program, errors }.into());
    }
    let cfg = RunConfig {
        input: a.input,
        seeds: load_seeds(ctx.seeds.as_deref())?,
        budget: a.budget,
        trace_calls: a.trace_calls,
    };
    let report = run(&ip, &cfg);
    ctx.emit(&format!("{}\n", report.to_json()))?;
    match report.halted {
        Halt::Normal if a.fail_on_violation && !report.violations.is_empty() => Err(Failure::Exit(EXIT_VIOLATIONS)),
        Halt::Normal => Ok(()),
        other => {
            writeln!(ctx.err, "{other}")?;
            Err(Failure::Exit(EXIT_RUN_ERROR))
        }
    }
}

fn cmd_bench(ctx: &mut Ctx<'_>, a: BenchArgs) -> Result<(), Failure> {
    let seeds = load_seeds(ctx.seeds.as_deref())?;
    let mut rows = Vec::new();
    let mut failed = false;
    let started = Instant::now();
    for dir in corpus::corpus_dirs(&a.corpus)? {
        let row = corpus::load_entry(&dir)
            .map_err(|e| e.to_string())
            .and_then(|entry| bench::bench_program(&entry, &seeds, a.iterations));
        match row {
            Ok(r) => rows.push(r),
            Err(e) => {
                failed = true;
                writeln!(ctx.err, "{}: {e}", dir.display())?;
            }
        }
    }
    let text = if ctx.json {
        format!("{}\n", serde_json::to_string(&rows).expect("rows serialize"))
    } else {
        bench::rows_to_text(&rows)
    };
    ctx.emit(&text)?;
    if let Some(p) = &a.csv {
        write_atomic(p, bench::rows_to_csv(&rows).as_bytes())
            .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
    }
    writeln!(ctx.err, "wall clock {:.1} ms", started.elapsed().as_secs_f64() * 1000.0)?;
    if failed {
        return Err(Failure::Exit(EXIT_USAGE));
    }
    Ok(())
}

fn cmd_check(ctx: &mut Ctx<'_>, a: CheckArgs) -> Result<(), Failure> {
    let seeds = load_seeds(ctx.seeds.as_deref())?;
    let opts = PipelineOptions { no_extras: a.no_extras, ..PipelineOptions::default() };
    let entries = corpus::load_corpus(&a.corpus)?;
    let outcomes: Vec<_> = entries.iter().map(|e| check::check_program(e, &seeds, opts)).collect();
    let text = if ctx.json {
        format!("{}\n", serde_json::to_string(&outcomes).expect("outcomes serialize"))
    } else {
        check::render_matrix(&outcomes)
    };
    ctx.emit(&text)?;
    if outcomes.iter().all(check::CheckOutcome::passed) {
        Ok(())
    } else {
        Err(Failure::Exit(EXIT_USAGE))
    }
}
