//! Deterministic interpreter for plain and instrumented programs.
//!
//! Intrinsic `stdlib.*` methods are native. Their taint-aware variants read
//! source labels from the seed configuration and record a violation when a
//! tainted value reaches a sink. Every executed program instruction counts
//! toward the reported total, which is the overhead metric.

mod machine;

use std::fmt;

use serde::Serialize;

use crate::facts::CallEdge;
use crate::instrument::{InstrumentedProgram, ReflectionEntry, ReflectionTable};
use crate::scope::SeedConfig;
use crate::tir::{MethodSig, Program};

pub const DEFAULT_BUDGET: u64 = 100_000_000;

/// Frames deeper than this halt the run.
pub const MAX_CALL_DEPTH: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    /// Values consumed in order by `stdlib.In` intrinsics.
    pub input: Vec<i64>,
    pub seeds: SeedConfig,
    pub budget: u64,
    pub trace_calls: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { input: vec![], seeds: SeedConfig::default(), budget: DEFAULT_BUDGET, trace_calls: false }
    }
}

impl RunConfig {
    pub fn with_input(input: Vec<i64>) -> Self {
        RunConfig { input, ..RunConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ViolationRecord {
    pub sink: MethodSig,
    pub mask: u64,
    /// 1-based count of sink calls up to and including this one.
    pub ordinal: u64,
    pub call_stack: Vec<MethodSig>,
}

impl ViolationRecord {
    /// The identity used when comparing runs: call stacks differ between
    /// partial and complete instrumentation and are left out.
    pub fn key(&self) -> (String, u64, u64) {
        (self.sink.to_string(), self.mask, self.ordinal)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Halt {
    Normal,
    BudgetExceeded,
    RunError(String),
}

impl Halt {
    pub fn as_str(&self) -> &'static str {
        match self {
            Halt::Normal => "normal",
            Halt::BudgetExceeded => "budget-exceeded",
            Halt::RunError(_) => "run-error",
        }
    }
}

impl fmt::Display for Halt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Halt::RunError(m) => write!(f, "run-error: {m}"),
            other => f.write_str(other.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub output: Vec<i64>,
    pub violations: Vec<ViolationRecord>,
    pub instructions: u64,
    /// Distinct (caller, callee) pairs, when tracing was requested.
    pub calls: Option<Vec<CallEdge>>,
    pub halted: Halt,
}

#[derive(Serialize)]
struct ViolationJson {
    sink: String,
    mask: u64,
    ordinal: u64,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    output: &'a [i64],
    violations: Vec<ViolationJson>,
    instructions: u64,
    halted: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    calls: Option<Vec<[String; 2]>>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let doc = ReportJson {
            output: &self.output,
            violations: self
                .violations
                .iter()
                .map(|v| ViolationJson { sink: v.sink.to_string(), mask: v.mask, ordinal: v.ordinal })
                .collect(),
            instructions: self.instructions,
            halted: self.halted.as_str(),
            message: match &self.halted {
                Halt::RunError(m) => Some(m),
                _ => None,
            },
            calls: self
                .calls
                .as_ref()
                .map(|c| c.iter().map(|e| [e.caller.to_string(), e.callee.to_string()]).collect()),
        };
        serde_json::to_string(&doc).expect("report serializes")
    }

    pub fn violation_keys(&self) -> Vec<(String, u64, u64)> {
        self.violations.iter().map(ViolationRecord::key).collect()
    }
}

/// Runs `ip` from its entry.
pub fn run(ip: &InstrumentedProgram, cfg: &RunConfig) -> RunReport {
    machine::Machine::load(ip, cfg).map_or_else(
        |msg| RunReport {
            output: vec![],
            violations: vec![],
            instructions: 0,
            calls: cfg.trace_calls.then(Vec::new),
            halted: Halt::RunError(msg),
        },
        |m| m.execute(),
    )
}

/// Runs an uninstrumented program.
pub fn run_program(p: &Program, cfg: &RunConfig) -> RunReport {
    run(&InstrumentedProgram::plain(p.clone()), cfg)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no method {name} with {arity} arguments on {class}")]
pub struct DispatchError {
    pub class: String,
    pub name: String,
    pub arity: usize,
}

/// Resolves a reflective call. `chain` is the receiver class followed by its
/// superclasses. Instrumented callers get the mangled twin when one exists;
/// everyone else gets the original signature, which is a stub for
/// instrumented methods.
pub fn dispatch_dynamic<'t>(
    table: &'t ReflectionTable,
    chain: &[&str],
    name: &str,
    arity: usize,
    caller_in_set: bool,
) -> Result<(&'t MethodSig, &'t ReflectionEntry), DispatchError> {
    let entry = table.lookup(chain.iter().copied(), name, arity).ok_or_else(|| DispatchError {
        class: chain.first().copied().unwrap_or("?").to_string(),
        name: name.to_string(),
        arity,
    })?;
    let sig = match (&entry.mangled, caller_in_set) {
        (Some(m), true) => m,
        _ => &entry.original,
    };
    Ok((sig, entry))
}

#[cfg(test)]
mod tests;
