use std::collections::BTreeSet;
use std::fmt::Write;

use crate::builtins;
use crate::tir::MethodSig;

/// Source and sink seeds. A source seed's label bit is its index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedConfig {
    pub sources: Vec<MethodSig>,
    pub sinks: Vec<MethodSig>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct SeedError {
    pub line: usize,
    pub message: String,
}

const MAX_LABELS: usize = 64;

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { sources: builtins::default_sources(), sinks: builtins::default_sinks() }
    }
}

impl SeedConfig {
    pub fn new(sources: Vec<MethodSig>, sinks: Vec<MethodSig>) -> Result<Self, SeedError> {
        let cfg = SeedConfig { sources, sinks };
        cfg.check(0)?;
        Ok(cfg)
    }

    fn check(&self, line: usize) -> Result<(), SeedError> {
        let err = |message: String| Err(SeedError { line, message });
        if self.sources.len() > MAX_LABELS {
            return err(format!("at most {MAX_LABELS} source seeds"));
        }
        for list in [&self.sources, &self.sinks] {
            let mut seen = BTreeSet::new();
            for s in list {
                if !seen.insert(s) {
                    return err(format!("duplicate seed {s}"));
                }
            }
        }
        Ok(())
    }

    pub fn label_bit(&self, source: &MethodSig) -> Option<u32> {
        self.sources.iter().position(|s| s == source).map(|i| i as u32)
    }

    pub fn is_sink(&self, sig: &MethodSig) -> bool {
        self.sinks.contains(sig)
    }

    /// Parses `[sources]` / `[sinks]` sections, one signature per line.
    pub fn parse(text: &str) -> Result<Self, SeedError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Sources,
            Sinks,
        }
        let mut section = Section::None;
        let mut cfg = SeedConfig { sources: vec![], sinks: vec![] };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| SeedError { line, message };
            let l = strip_comment(raw).trim();
            if l.is_empty() {
                continue;
            }
            if let Some(name) = l.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                section = match name.trim() {
                    "sources" => Section::Sources,
                    "sinks" => Section::Sinks,
                    other => return Err(err(format!("unknown section [{other}]"))),
                };
                continue;
            }
            let sig = MethodSig::parse(l).map_err(|m| err(format!("malformed signature: {m}")))?;
            let list = match section {
                Section::Sources => &mut cfg.sources,
                Section::Sinks => &mut cfg.sinks,
                Section::None => return Err(err("signature outside a section".into())),
            };
            list.push(sig);
            cfg.check(line)?;
        }
        Ok(cfg)
    }

    pub fn emit(&self) -> String {
        let mut out = String::from("[sources]\n");
        for s in &self.sources {
            let _ = writeln!(out, "{s}");
        }
        out.push_str("\n[sinks]\n");
        for s in &self.sinks {
            let _ = writeln!(out, "{s}");
        }
        out
    }
}

// signatures never contain '#', so the first one starts a comment
fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: malformed signature: {message}")]
pub struct MethodsFileError {
    pub line: usize,
    pub message: String,
}

/// One signature per line, sorted, LF-terminated.
pub fn emit_methods_file<'a>(methods: impl IntoIterator<Item = &'a MethodSig>) -> String {
    let sorted: BTreeSet<&MethodSig> = methods.into_iter().collect();
    let mut out = String::new();
    for m in sorted {
        let _ = writeln!(out, "{m}");
    }
    out
}

pub fn parse_methods_file(text: &str) -> Result<BTreeSet<MethodSig>, MethodsFileError> {
    let mut out = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let l = strip_comment(raw).trim();
        if l.is_empty() {
            continue;
        }
        let sig = MethodSig::parse(l).map_err(|message| MethodsFileError { line: i + 1, message })?;
        out.insert(sig);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn methods_file_examples() {
        assert_eq!(emit_methods_file(&BTreeSet::new()), "");
        let one: BTreeSet<MethodSig> = ["<Main: void main()>".parse().unwrap()].into();
        assert_eq!(emit_methods_file(&one), "<Main: void main()>\n");
        assert_eq!(parse_methods_file("<Main: void main()>\n").unwrap(), one);
    }

    #[test]
    fn methods_file_sorted_and_commented() {
        let text = "# header\n<B: void g()>\n\n<A: int f(int)>\n";
        let set = parse_methods_file(text).unwrap();
        assert_eq!(emit_methods_file(&set), "<A: int f(int)>\n<B: void g()>\n");
    }

    #[test]
    fn methods_file_error_line() {
        let e = parse_methods_file("<A: void f()>\n\nnot a sig\n").unwrap_err();
        assert_eq!(e.line, 3);
    }

    #[test]
    fn seeds_round_trip_and_labels() {
        let cfg = SeedConfig::default();
        let again = SeedConfig::parse(&cfg.emit()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(cfg.label_bit(&"<stdlib.In: void readBuf(int[])>".parse().unwrap()), Some(1));
    }

    #[test]
    fn seeds_errors() {
        assert_eq!(SeedConfig::parse("<A: void f()>\n").unwrap_err().line, 1);
        assert_eq!(SeedConfig::parse("[sources]\n\n<A: void f(>\n").unwrap_err().line, 3);
        assert_eq!(SeedConfig::parse("[oops]\n").unwrap_err().line, 1);
        let dup = "[sources]\n<A: int f()>\n<A: int f()>\n";
        assert_eq!(SeedConfig::parse(dup).unwrap_err().line, 3);
    }
}
