//! Partial instrumentation of a program.
//!
//! Members of the instrument set get shadow registers and, when their
//! signature carries primitive state, a mangled twin plus a stub under the
//! original signature. Everything else is copied unchanged, so the empty set
//! is the identity.

mod artifact;
mod body;
mod signature;

use std::collections::{BTreeMap, BTreeSet};

pub use artifact::{emit_instrumented, parse_instrumented, ArtifactError};
pub use body::{box_fields, callee_in_set, instrument_method, lift_sig, lower_sig, rewrite_call_site, ShadowFrame};
pub use signature::{lift_multidim, shadow_type, transform_signature, SignatureTransform};

use crate::extras::{InstrumentSet, Rule};
use crate::tir::{
    validate_program, ClassDef, FieldDef, Hierarchy, Instruction, LinkError, MethodSig, Program, TypeConflict,
};

#[derive(Debug, thiserror::Error)]
pub enum InstrumentError {
    #[error("program does not validate: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<LinkError>),
    #[error("unknown methods in instrument set: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))]
    UnknownMethods(Vec<MethodSig>),
    #[error(transparent)]
    Types(TypeConflict),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Key of a reflective lookup: (class, method name, arity).
pub type ReflectionKey = (String, String, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReflectionEntry {
    pub original: MethodSig,
    pub mangled: Option<MethodSig>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReflectionTable {
    pub entries: BTreeMap<ReflectionKey, ReflectionEntry>,
}

impl ReflectionTable {
    /// Walks `chain` (a class followed by its superclasses) for the first
    /// entry matching `name` and `arity`.
    pub fn lookup<'a>(
        &self,
        chain: impl IntoIterator<Item = &'a str>,
        name: &str,
        arity: usize,
    ) -> Option<&ReflectionEntry> {
        chain.into_iter().find_map(|c| self.entries.get(&(c.to_string(), name.to_string(), arity)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrumentedProgram {
    pub program: Program,
    pub table: ReflectionTable,
    pub set: BTreeSet<MethodSig>,
}

impl InstrumentedProgram {
    /// An uninstrumented program with its (all-original) reflection table.
    pub fn plain(program: Program) -> Self {
        let table = build_reflection_table(&program, &InstrumentSet::default());
        InstrumentedProgram { program, table, set: BTreeSet::new() }
    }

    /// Whether a frame running `sig` carries shadow state.
    pub fn is_instrumented(&self, sig: &MethodSig) -> bool {
        sig.is_mangled() || self.set.contains(sig)
    }
}

/// One entry per application instance method; the first overload of a given
/// arity wins.
pub fn build_reflection_table(p: &Program, set: &InstrumentSet) -> ReflectionTable {
    let mut entries = BTreeMap::new();
    for c in &p.classes {
        for m in c.methods.iter().filter(|m| !m.is_static) {
            let key = (c.name.clone(), m.sig.name.clone(), m.sig.params.len());
            let mangled = if set.contains(&m.sig) { transform_signature(&m.sig).mangled } else { None };
            entries.entry(key).or_insert(ReflectionEntry { original: m.sig.clone(), mangled });
        }
    }
    ReflectionTable { entries }
}

/// Classes whose fields instrumented code reads or writes: owners of set
/// members and declaring classes of the fields they access.
fn touched_classes(h: &Hierarchy<'_>, p: &Program, set: &InstrumentSet) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for m in p.methods().filter(|m| set.contains(&m.sig)) {
        out.insert(m.sig.owner.clone());
        for i in m.instructions() {
            if let Instruction::Get { field, .. } | Instruction::Put { field, .. } = i {
                if let Some((decl, _)) = h.resolve_field(&field.class, &field.field) {
                    out.insert(decl.name.clone());
                }
            }
        }
    }
    out
}

/// Adds `f$$taint` for each primitive field and `g$$taintArr` for each
/// primitive 1-dim array field, when `touched`.
pub fn add_shadow_fields(c: &ClassDef, touched: bool) -> ClassDef {
    let mut out = c.clone();
    if !touched {
        return out;
    }
    for f in &c.fields {
        if let Some(ty) = shadow_type(&f.ty) {
            let suffix = if f.ty.is_primitive() { body::TAINT_FIELD_SUFFIX } else { body::TAINT_ARR_FIELD_SUFFIX };
            out.fields.push(FieldDef { name: format!("{}{suffix}", f.name), ty });
        }
    }
    out
}

pub fn instrument_program(p: &Program, set: &InstrumentSet) -> Result<InstrumentedProgram, InstrumentError> {
    let errors = validate_program(p);
    if !errors.is_empty() {
        return Err(InstrumentError::Invalid(errors));
    }
    let unknown: Vec<MethodSig> = set.methods.iter().filter(|m| p.method(m).is_none()).cloned().collect();
    if !unknown.is_empty() {
        return Err(InstrumentError::UnknownMethods(unknown));
    }
    let h = Hierarchy::new(p);
    let touched = touched_classes(&h, p, set);
    let mut classes = Vec::with_capacity(p.classes.len());
    for c in &p.classes {
        let mut nc = add_shadow_fields(c, touched.contains(&c.name));
        nc.methods.clear();
        for m in &c.methods {
            if set.contains(&m.sig) {
                nc.methods.extend(instrument_method(&h, m, set)?);
            } else {
                nc.methods.push(m.clone());
            }
        }
        classes.push(nc);
    }
    Ok(InstrumentedProgram {
        program: Program { entry: p.entry.clone(), classes },
        table: build_reflection_table(p, set),
        set: set.methods.clone(),
    })
}

/// Every application method, for the complete-instrumentation baseline.
pub fn full_set(p: &Program) -> InstrumentSet {
    InstrumentSet::from_methods(p.method_sigs(), Rule::Intersection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tir::{emit_program, parse_program};

    fn sig(s: &str) -> MethodSig {
        s.parse().unwrap()
    }

    fn set(list: &[&str]) -> InstrumentSet {
        InstrumentSet::from_methods(list.iter().map(|s| sig(s)), Rule::Intersection)
    }

    const EX1: &str = "entry <Main: void main()>

class Main {
  method static <Main: void main()> regs 1 {
    scall r0, <stdlib.In: int read()>
    scall _, <H: void h(int)>, r0
    ret
  }
}

class H {
  method static <H: void h(int)> regs 1 {
    scall _, <stdlib.Out: void write(int)>, r0
    ret
  }
}
";

    const EX1_PARTIAL: &str = "entry <Main: void main()>

class Main {
  method static <Main: void main()> regs 3 {
    scall r2, <stdlib.In: runtime.TaintedInt read$$INVIVO_PC()>
    get r0, r2, runtime.TaintedInt.val
    get r1, r2, runtime.TaintedInt.taint
    scall _, <H: void h$$INVIVO_PC(int,int)>, r0, r1
    ret
  }
}

class H {
  method static <H: void h(int)> regs 2 {
    const r1, 0
    scall _, <H: void h$$INVIVO_PC(int,int)>, r0, r1
    ret
  }
  method static <H: void h$$INVIVO_PC(int,int)> regs 2 {
    scall _, <stdlib.Out: void write$$INVIVO_PC(int,int)>, r0, r1
    ret
  }
}
";

    #[test]
    fn ex1_golden() {
        let p = parse_program(EX1).unwrap();
        let ip = instrument_program(&p, &set(&["<Main: void main()>", "<H: void h(int)>"])).unwrap();
        assert_eq!(emit_program(&ip.program), EX1_PARTIAL);
        assert!(validate_program(&ip.program).is_empty());
    }

    #[test]
    fn empty_set_is_identity() {
        let p = parse_program(EX1).unwrap();
        let ip = instrument_program(&p, &InstrumentSet::default()).unwrap();
        assert_eq!(ip.program, p);
        assert!(ip.table.entries.is_empty());
    }

    #[test]
    fn object_only_method_has_no_stub() {
        let src = "entry <Main: void main()>\nclass A {\n method <A: void f(A)> regs 2 {\n ret\n }\n}\nclass Main {\n method static <Main: void main()> regs 1 {\n ret\n }\n}\n";
        let p = parse_program(src).unwrap();
        let ip = instrument_program(&p, &set(&["<A: void f(A)>"])).unwrap();
        let a = ip.program.class("A").unwrap();
        assert_eq!(a.methods.len(), 1);
        assert_eq!(a.methods[0].sig, sig("<A: void f(A)>"));
    }

    #[test]
    fn boxed_return_and_stub_unboxing() {
        let src = "entry <Main: void main()>\nclass A {\n method static <A: int g()> regs 1 {\n const r0, 3\n ret r0\n }\n}\nclass Main {\n method static <Main: void main()> regs 1 {\n scall r0, <A: int g()>\n ret\n }\n}\n";
        let p = parse_program(src).unwrap();
        let ip = instrument_program(&p, &set(&["<A: int g()>"])).unwrap();
        let text = emit_program(&ip.program);
        assert!(text.contains("method static <A: runtime.TaintedInt g$$INVIVO_PC()>"), "{text}");
        assert!(text.contains("new r2, runtime.TaintedInt"), "{text}");
        assert!(text.contains("get r1, r0, runtime.TaintedInt.val\n    ret r1"), "{text}");
        // uninstrumented main keeps calling the original signature
        assert!(text.contains("scall r0, <A: int g()>"), "{text}");
        assert!(validate_program(&ip.program).is_empty());
    }

    #[test]
    fn shadow_fields_only_for_touched_classes() {
        let d = ClassDef {
            name: "D".into(),
            superclass: None,
            fields: vec![
                FieldDef { name: "buf".into(), ty: "int[]".parse().unwrap() },
                FieldDef { name: "o".into(), ty: "D".parse().unwrap() },
            ],
            methods: vec![],
        };
        assert_eq!(add_shadow_fields(&d, false), d);
        let names: Vec<String> = add_shadow_fields(&d, true).fields.into_iter().map(|f| f.name).collect();
        assert_eq!(names, vec!["buf", "o", "buf$$taintArr"]);
    }

    #[test]
    fn reflection_entries() {
        let src = "entry <Main: void main()>\nclass A {\n method <A: int f(int)> regs 2 {\n ret r1\n }\n method <A: int f(int,int)> regs 3 {\n ret r1\n }\n}\nclass Main {\n method static <Main: void main()> regs 1 {\n ret\n }\n}\n";
        let p = parse_program(src).unwrap();
        let none = build_reflection_table(&p, &InstrumentSet::default());
        assert_eq!(none.entries.len(), 2);
        assert!(none.entries.values().all(|e| e.mangled.is_none()));
        let t = build_reflection_table(&p, &set(&["<A: int f(int)>"]));
        let e = &t.entries[&("A".to_string(), "f".to_string(), 1)];
        assert_eq!(e.mangled.as_ref().unwrap().to_string(), "<A: runtime.TaintedInt f$$INVIVO_PC(int,int)>");
        assert!(t.entries[&("A".to_string(), "f".to_string(), 2)].mangled.is_none());
    }

    #[test]
    fn unknown_member_is_rejected() {
        let p = parse_program(EX1).unwrap();
        assert!(matches!(instrument_program(&p, &set(&["<Nope: void x()>"])), Err(InstrumentError::UnknownMethods(_))));
    }
}
