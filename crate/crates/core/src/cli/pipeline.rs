//! The analyze → instrument → run pipeline shared by every command.

use std::fs;
use std::path::{Path, PathBuf};

use crate::extras::{close_instrument_set, ExtrasOptions, InstrumentSet, Rule};
use crate::facts::{analyze, FactBase, FactsError};
use crate::instrument::{full_set, instrument_program, InstrumentError, InstrumentedProgram};
use crate::scope::{compute_scope, ScopeOptions, ScopeResult, SeedConfig, SeedError};
use crate::tir::{parse_program, validate_program, LinkError, ParseError, Program};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: ParseError },
    #[error("{}: {}", path.display(), errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))]
    Invalid { path: PathBuf, errors: Vec<LinkError> },
    #[error("{}: {source}", path.display())]
    Seeds { path: PathBuf, source: SeedError },
    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },
    #[error(transparent)]
    Facts(#[from] FactsError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
}

pub fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

/// Parses and validates a plain program file.
pub fn load_program(path: &Path) -> Result<Program, PipelineError> {
    let text = read_text(path)?;
    let p = parse_program(&text).map_err(|source| PipelineError::Parse { path: path.to_path_buf(), source })?;
    let errors = validate_program(&p);
    if !errors.is_empty() {
        return Err(PipelineError::Invalid { path: path.to_path_buf(), errors });
    }
    Ok(p)
}

/// The seeds in `path`, or the builtin defaults.
pub fn load_seeds(path: Option<&Path>) -> Result<SeedConfig, PipelineError> {
    match path {
        None => Ok(SeedConfig::default()),
        Some(p) => {
            SeedConfig::parse(&read_text(p)?).map_err(|source| PipelineError::Seeds { path: p.to_path_buf(), source })
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineOptions {
    pub scope: ScopeOptions,
    pub extras: ExtrasOptions,
    /// Stop at the intersection and skip the closure rules.
    pub no_extras: bool,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub facts: FactBase,
    pub scope: ScopeResult,
    pub set: InstrumentSet,
}

pub fn analyze_program(p: &Program, seeds: &SeedConfig, opts: PipelineOptions) -> Result<Analysis, FactsError> {
    let facts = analyze(p)?;
    let scope = compute_scope(&facts.edges, seeds, opts.scope);
    let set = if opts.no_extras {
        InstrumentSet::from_methods(scope.intersection.iter().cloned(), Rule::Intersection)
    } else {
        close_instrument_set(&facts, &scope, opts.extras)
    };
    Ok(Analysis { facts, scope, set })
}

/// The three instrumentation levels of one program.
#[derive(Debug, Clone)]
pub struct Levels {
    pub none: InstrumentedProgram,
    pub partial: InstrumentedProgram,
    pub full: InstrumentedProgram,
}

pub fn build_levels(p: &Program, partial: &InstrumentSet) -> Result<Levels, InstrumentError> {
    Ok(Levels {
        none: InstrumentedProgram::plain(p.clone()),
        partial: instrument_program(p, partial)?,
        full: instrument_program(p, &full_set(p))?,
    })
}
