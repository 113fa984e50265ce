//! Corpus layout: one directory per program holding `program.tir` and
//! `fixture.toml` with the run input and the expected violations.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::tir::Program;

use super::pipeline::{load_program, read_text, PipelineError};

pub const PROGRAM_FILE: &str = "program.tir";
pub const FIXTURE_FILE: &str = "fixture.toml";

/// Tag marking programs whose instrument set leaves most methods out.
pub const SCOPE_SPARSE: &str = "scope-sparse";

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedViolation {
    pub sink: String,
    pub mask: u64,
    pub ordinal: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    #[serde(default)]
    pub input: Vec<i64>,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub expected: Vec<ExpectedViolation>,
}

impl Fixture {
    pub fn expected_keys(&self) -> Vec<(String, u64, u64)> {
        let mut keys: Vec<_> = self.expected.iter().map(|e| (e.sink.clone(), e.mask, e.ordinal)).collect();
        keys.sort_by_key(|k| k.2);
        keys
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub name: String,
    pub dir: PathBuf,
    pub program: Program,
    pub fixture: Fixture,
}

pub fn load_entry(dir: &Path) -> Result<CorpusEntry, PipelineError> {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let program = load_program(&dir.join(PROGRAM_FILE))?;
    let fixture_path = dir.join(FIXTURE_FILE);
    let fixture = toml::from_str(&read_text(&fixture_path)?)
        .map_err(|e| PipelineError::Input { path: fixture_path, message: e.to_string() })?;
    Ok(CorpusEntry { name, dir: dir.to_path_buf(), program, fixture })
}

/// Program directories under `dir`, sorted by name.
pub fn corpus_dirs(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let io = |source| PipelineError::Io { path: dir.to_path_buf(), source };
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.join(PROGRAM_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusEntry>, PipelineError> {
    corpus_dirs(dir)?.iter().map(|d| load_entry(d)).collect()
}
