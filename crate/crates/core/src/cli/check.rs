//! Per-program acceptance checks over a corpus.

use std::fmt::Write;

use serde::Serialize;

use crate::scope::SeedConfig;
use crate::tir::validate_program;
use crate::vm::{run, Halt, RunConfig, RunReport};

use super::corpus::CorpusEntry;
use super::pipeline::{analyze_program, build_levels, PipelineOptions};

pub const PROPERTIES: [&str; 4] = ["detection", "semantics", "linker", "overhead"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckOutcome {
    pub program: String,
    /// One entry per property, in `PROPERTIES` order; `None` means pass.
    pub failures: [Option<String>; 4],
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures.iter().all(Option::is_none)
    }

    pub fn failure(&self, property: &str) -> Option<&str> {
        PROPERTIES.iter().position(|p| *p == property).and_then(|i| self.failures[i].as_deref())
    }
}

fn sorted_keys(r: &RunReport) -> Vec<(String, u64, u64)> {
    let mut k = r.violation_keys();
    k.sort_by_key(|k| k.2);
    k
}

pub fn check_program(entry: &CorpusEntry, seeds: &SeedConfig, opts: PipelineOptions) -> CheckOutcome {
    let mut out = CheckOutcome { program: entry.name.clone(), failures: Default::default() };
    let fail_all = |out: &mut CheckOutcome, why: String| {
        for f in &mut out.failures {
            *f = Some(why.clone());
        }
    };
    let analysis = match analyze_program(&entry.program, seeds, opts) {
        Ok(a) => a,
        Err(e) => {
            fail_all(&mut out, format!("analysis failed: {e}"));
            return out;
        }
    };
    let levels = match build_levels(&entry.program, &analysis.set) {
        Ok(l) => l,
        Err(e) => {
            fail_all(&mut out, format!("instrumentation failed: {e}"));
            return out;
        }
    };

    let linker: Vec<String> = [("partial", &levels.partial), ("full", &levels.full)]
        .iter()
        .flat_map(|(label, ip)| validate_program(&ip.program).into_iter().map(move |e| format!("{label}: {e}")))
        .collect();
    if !linker.is_empty() {
        out.failures[2] = Some(linker.join("; "));
    }

    let cfg = RunConfig { input: entry.fixture.input.clone(), seeds: seeds.clone(), ..RunConfig::default() };
    let none = run(&levels.none, &cfg);
    let partial = run(&levels.partial, &cfg);
    let full = run(&levels.full, &cfg);
    let halted: Vec<String> = [("none", &none), ("partial", &partial), ("full", &full)]
        .iter()
        .filter(|(_, r)| r.halted != Halt::Normal)
        .map(|(label, r)| format!("{label} run {}", r.halted))
        .collect();

    let expected = entry.fixture.expected_keys();
    let (pk, fk) = (sorted_keys(&partial), sorted_keys(&full));
    if !halted.is_empty() {
        out.failures[0] = Some(halted.join("; "));
    } else if pk != expected || fk != expected {
        out.failures[0] = Some(format!("expected {expected:?}, partial {pk:?}, full {fk:?}"));
    }

    if !halted.is_empty() {
        out.failures[1] = Some(halted.join("; "));
    } else if none.output != partial.output || none.output != full.output {
        out.failures[1] =
            Some(format!("output none {:?}, partial {:?}, full {:?}", none.output, partial.output, full.output));
    }

    if !halted.is_empty() {
        out.failures[3] = Some(halted.join("; "));
    } else if !(none.instructions <= partial.instructions && partial.instructions <= full.instructions) {
        out.failures[3] = Some(format!(
            "instructions none {}, partial {}, full {}",
            none.instructions, partial.instructions, full.instructions
        ));
    }
    out
}

/// Pass/fail matrix followed by one line per failure.
pub fn render_matrix(outcomes: &[CheckOutcome]) -> String {
    let width = outcomes.iter().map(|o| o.program.len()).chain(["program".len()]).max().unwrap_or(7);
    let mut s = format!("{:<width$}", "program");
    for p in PROPERTIES {
        let _ = write!(s, "  {p:<9}");
    }
    let mut s = s.trim_end().to_string();
    s.push('\n');
    for o in outcomes {
        let mut l = format!("{:<width$}", o.program);
        for f in &o.failures {
            let _ = write!(l, "  {:<9}", if f.is_none() { "pass" } else { "FAIL" });
        }
        s.push_str(l.trim_end());
        s.push('\n');
    }
    for o in outcomes {
        for (p, f) in PROPERTIES.iter().zip(&o.failures) {
            if let Some(why) = f {
                let _ = writeln!(s, "{}: {p}: {why}", o.program);
            }
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    let _ = writeln!(s, "{} programs, {} failed", outcomes.len(), failed);
    s
}
