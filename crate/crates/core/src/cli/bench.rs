//! Instruction-count benchmark over a corpus: none, partial and full
//! instrumentation side by side.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::scope::SeedConfig;
use crate::vm::{run, Halt, RunConfig};

use super::corpus::CorpusEntry;
use super::pipeline::{analyze_program, build_levels, PipelineOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub program: String,
    pub instructions_none: u64,
    pub instructions_partial: u64,
    pub overhead_partial: f64,
    pub instructions_full: u64,
    pub overhead_full: f64,
    pub methods_total: usize,
    pub methods_instrumented_partial: usize,
}

/// Percentage over `base`, rounded to two decimals so that printed rows
/// parse back to the same value.
pub fn overhead(base: u64, x: u64) -> f64 {
    if base == 0 {
        return 0.0;
    }
    let pct = (x as f64 - base as f64) / base as f64 * 100.0;
    (pct * 100.0).round() / 100.0
}

impl BenchRow {
    pub fn new(program: &str, none: u64, partial: u64, full: u64, total: usize, instrumented: usize) -> Self {
        BenchRow {
            program: program.to_string(),
            instructions_none: none,
            instructions_partial: partial,
            overhead_partial: overhead(none, partial),
            instructions_full: full,
            overhead_full: overhead(none, full),
            methods_total: total,
            methods_instrumented_partial: instrumented,
        }
    }
}

/// Runs one corpus program at all three levels, `iterations` times each,
/// and keeps the last iteration's counts.
pub fn bench_program(entry: &CorpusEntry, seeds: &SeedConfig, iterations: usize) -> Result<BenchRow, String> {
    let analysis = analyze_program(&entry.program, seeds, PipelineOptions::default()).map_err(|e| e.to_string())?;
    let levels = build_levels(&entry.program, &analysis.set).map_err(|e| e.to_string())?;
    let cfg = RunConfig { input: entry.fixture.input.clone(), seeds: seeds.clone(), ..RunConfig::default() };
    let mut counts = [0u64; 3];
    for (slot, (label, ip)) in
        counts.iter_mut().zip([("none", &levels.none), ("partial", &levels.partial), ("full", &levels.full)])
    {
        for _ in 0..iterations.max(1) {
            let report = run(ip, &cfg);
            if report.halted != Halt::Normal {
                return Err(format!("{label} run halted: {}", report.halted));
            }
            *slot = report.instructions;
        }
    }
    Ok(BenchRow::new(&entry.name, counts[0], counts[1], counts[2], entry.program.methods().count(), analysis.set.len()))
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    if rows.is_empty() {
        w.write_record([
            "program",
            "instructions_none",
            "instructions_partial",
            "overhead_partial",
            "instructions_full",
            "overhead_full",
            "methods_total",
            "methods_instrumented_partial",
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

pub fn rows_from_csv(text: &str) -> Result<Vec<BenchRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

const TEXT_HEADER: [&str; 8] = ["program", "none", "partial", "partial%", "full", "full%", "methods", "instrumented"];

/// Aligned table: one header line, then one line per row.
pub fn rows_to_text(rows: &[BenchRow]) -> String {
    let cells: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            [
                r.program.clone(),
                r.instructions_none.to_string(),
                r.instructions_partial.to_string(),
                format!("{:.2}", r.overhead_partial),
                r.instructions_full.to_string(),
                format!("{:.2}", r.overhead_full),
                r.methods_total.to_string(),
                r.methods_instrumented_partial.to_string(),
            ]
        })
        .collect();
    let mut widths = TEXT_HEADER.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cols: Vec<&str>| {
        let mut l = String::new();
        for (i, (c, w)) in cols.iter().zip(widths).enumerate() {
            if i == 0 {
                let _ = write!(l, "{c:<w$}");
            } else {
                let _ = write!(l, "  {c:>w$}");
            }
        }
        out.push_str(l.trim_end());
        out.push('\n');
    };
    line(TEXT_HEADER.to_vec());
    for row in &cells {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

pub fn rows_from_text(text: &str) -> Result<Vec<BenchRow>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.split_whitespace().eq(TEXT_HEADER) => {}
        _ => return Err("missing table header".into()),
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            let [program, none, partial, op, full, of, total, inst] = f[..] else {
                return Err(format!("row {}: expected 8 columns", i + 1));
            };
            let bad = |c: &str| format!("row {}: bad {c}", i + 1);
            Ok(BenchRow {
                program: program.to_string(),
                instructions_none: none.parse().map_err(|_| bad("none"))?,
                instructions_partial: partial.parse().map_err(|_| bad("partial"))?,
                overhead_partial: op.parse().map_err(|_| bad("partial%"))?,
                instructions_full: full.parse().map_err(|_| bad("full"))?,
                overhead_full: of.parse().map_err(|_| bad("full%"))?,
                methods_total: total.parse().map_err(|_| bad("methods"))?,
                methods_instrumented_partial: inst.parse().map_err(|_| bad("instrumented"))?,
            })
        })
        .collect()
}
