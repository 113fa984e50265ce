//! Text form of an instrumented program: the TIR program followed by the
//! embedded `reflection-table` and `instrument-set` sections.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use crate::tir::{emit_program, parse_program, MethodSig, ParseError};

use super::{InstrumentedProgram, ReflectionEntry, ReflectionTable};

const TABLE_HEADER: &str = "reflection-table {";
const SET_HEADER: &str = "instrument-set {";

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{0}")]
    Parse(#[from] ParseError),
    #[error("line {line}: {message}")]
    Section { line: usize, message: String },
}

pub fn emit_instrumented(ip: &InstrumentedProgram) -> String {
    let mut out = emit_program(&ip.program);
    out.push('\n');
    out.push_str(TABLE_HEADER);
    out.push('\n');
    for ((class, name, arity), e) in &ip.table.entries {
        let mangled = e.mangled.as_ref().map_or_else(|| "-".to_string(), ToString::to_string);
        let _ = writeln!(out, "  ({class},{name},{arity}) -> {} | {mangled}", e.original);
    }
    out.push_str("}\n\n");
    out.push_str(SET_HEADER);
    out.push('\n');
    for m in &ip.set {
        let _ = writeln!(out, "  {m}");
    }
    out.push_str("}\n");
    out
}

/// Parses an instrumented artifact. A plain program without sections is
/// accepted as uninstrumented.
pub fn parse_instrumented(text: &str) -> Result<InstrumentedProgram, ArtifactError> {
    let mut program_text = String::with_capacity(text.len());
    let mut table = None;
    let mut set = None;
    let mut lines = text.lines().enumerate();
    while let Some((i, line)) = lines.next() {
        let header = line.trim();
        if header != TABLE_HEADER && header != SET_HEADER {
            program_text.push_str(line);
            program_text.push('\n');
            continue;
        }
        // keep line numbers stable for program parse errors
        program_text.push('\n');
        let mut body = Vec::new();
        loop {
            let Some((j, l)) = lines.next() else {
                return Err(ArtifactError::Section { line: i + 1, message: format!("unterminated `{header}`") });
            };
            program_text.push('\n');
            if l.trim() == "}" {
                break;
            }
            if !l.trim().is_empty() {
                body.push((j + 1, l.trim()));
            }
        }
        if header == TABLE_HEADER {
            table = Some(parse_table(&body)?);
        } else {
            set = Some(parse_set(&body)?);
        }
    }
    let program = parse_program(&program_text)?;
    match (table, set) {
        (None, None) => Ok(InstrumentedProgram::plain(program)),
        (table, set) => {
            Ok(InstrumentedProgram { program, table: table.unwrap_or_default(), set: set.unwrap_or_default() })
        }
    }
}

fn sig_at(line: usize, s: &str) -> Result<MethodSig, ArtifactError> {
    MethodSig::parse(s.trim()).map_err(|message| ArtifactError::Section { line, message })
}

fn parse_table(body: &[(usize, &str)]) -> Result<ReflectionTable, ArtifactError> {
    let mut entries = BTreeMap::new();
    for &(line, l) in body {
        let err = |m: &str| ArtifactError::Section { line, message: m.to_string() };
        let (key, rest) = l.split_once(") -> ").ok_or_else(|| err("expected `(Class,name,arity) -> ...`"))?;
        let key = key.strip_prefix('(').ok_or_else(|| err("expected `(`"))?;
        let mut parts = key.split(',');
        let (Some(class), Some(name), Some(arity), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(err("key must be (Class,name,arity)"));
        };
        let arity: usize = arity.trim().parse().map_err(|_| err("arity is not a number"))?;
        let (orig, mangled) = rest.rsplit_once(" | ").ok_or_else(|| err("expected `<sig> | <sig>`"))?;
        let mangled = match mangled.trim() {
            "-" => None,
            m => Some(sig_at(line, m)?),
        };
        entries.insert(
            (class.trim().to_string(), name.trim().to_string(), arity),
            ReflectionEntry { original: sig_at(line, orig)?, mangled },
        );
    }
    Ok(ReflectionTable { entries })
}

fn parse_set(body: &[(usize, &str)]) -> Result<BTreeSet<MethodSig>, ArtifactError> {
    body.iter().map(|&(line, l)| sig_at(line, l)).collect()
}
