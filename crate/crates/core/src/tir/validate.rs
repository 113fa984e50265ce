use std::collections::HashSet;
use std::fmt;

use super::{Hierarchy, Instruction, MethodDef, MethodSig, Program, Stmt, TypeDesc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinkErrorKind {
    UnresolvedMethod,
    UnresolvedField,
    UnresolvedClass,
    BadRegister,
    BadLabel,
    /// Argument count, destination or return operand disagrees with a signature.
    BadCall,
    MissingEntry,
    BadHierarchy,
}

impl LinkErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkErrorKind::UnresolvedMethod => "unresolved-method",
            LinkErrorKind::UnresolvedField => "unresolved-field",
            LinkErrorKind::UnresolvedClass => "unresolved-class",
            LinkErrorKind::BadRegister => "bad-register",
            LinkErrorKind::BadLabel => "bad-label",
            LinkErrorKind::BadCall => "bad-call",
            LinkErrorKind::MissingEntry => "missing-entry",
            LinkErrorKind::BadHierarchy => "bad-hierarchy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkError {
    pub kind: LinkErrorKind,
    pub method: Option<MethodSig>,
    pub message: String,
}

impl fmt::Display for LinkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.method {
            Some(m) => write!(f, "{}: {m}: {}", self.kind.as_str(), self.message),
            None => write!(f, "{}: {}", self.kind.as_str(), self.message),
        }
    }
}

struct Checker<'p> {
    h: Hierarchy<'p>,
    errors: Vec<LinkError>,
}

impl Checker<'_> {
    fn push(&mut self, kind: LinkErrorKind, method: Option<&MethodSig>, message: String) {
        self.errors.push(LinkError { kind, method: method.cloned(), message });
    }

    fn check_type(&mut self, t: &TypeDesc, method: Option<&MethodSig>, what: &str) {
        if !self.h.type_exists(t) {
            self.push(LinkErrorKind::UnresolvedClass, method, format!("{what} type `{t}` names no class"));
        }
    }
}

/// Checks that every reference in `p` resolves. Returns all problems found;
/// an empty list means the program may be analyzed, instrumented or run.
pub fn validate_program(p: &Program) -> Vec<LinkError> {
    let mut ck = Checker { h: Hierarchy::new(p), errors: Vec::new() };

    match &p.entry {
        None => ck.push(LinkErrorKind::MissingEntry, None, "no entry declared".into()),
        Some(entry) => match p.method(entry) {
            Some(m) if m.is_static && m.sig.params.is_empty() && m.sig.ret.is_none() => {}
            Some(_) => ck.push(
                LinkErrorKind::MissingEntry,
                Some(entry),
                "entry must be a static, parameterless void method".into(),
            ),
            None => ck.push(LinkErrorKind::MissingEntry, Some(entry), "entry method is not declared".into()),
        },
    }

    for class in &p.classes {
        check_class(&mut ck, class);
    }
    ck.errors
}

fn check_class(ck: &mut Checker<'_>, class: &super::ClassDef) {
    if super::is_intrinsic_class(&class.name) {
        ck.push(LinkErrorKind::BadHierarchy, None, format!("class `{}` uses a reserved package", class.name));
    }
    if let Some(sup) = &class.superclass {
        if !ck.h.contains(sup) {
            ck.push(LinkErrorKind::UnresolvedClass, None, format!("`{}` extends unknown `{sup}`", class.name));
        } else if ck.h.has_cycle(&class.name) {
            ck.push(LinkErrorKind::BadHierarchy, None, format!("superclass cycle through `{}`", class.name));
        }
    }
    for f in &class.fields {
        ck.check_type(&f.ty, None, &format!("field {}.{}", class.name, f.name));
    }
    for m in &class.methods {
        check_override(ck, class, m);
        check_method(ck, m);
    }
}

fn check_override(ck: &mut Checker<'_>, class: &super::ClassDef, m: &MethodDef) {
    let Some(sup) = &class.superclass else { return };
    if ck.h.has_cycle(&class.name) {
        return;
    }
    if let Some((_, inherited)) = ck.h.resolve_method(sup, &m.sig.name, &m.sig.params) {
        if inherited.sig.ret != m.sig.ret || inherited.is_static != m.is_static {
            ck.push(LinkErrorKind::BadHierarchy, Some(&m.sig), format!("incompatible override of {}", inherited.sig));
        }
    }
}

fn check_method(ck: &mut Checker<'_>, m: &MethodDef) {
    let sig = &m.sig;
    for p in &sig.params {
        ck.check_type(p, Some(sig), "parameter");
    }
    if let Some(r) = &sig.ret {
        ck.check_type(r, Some(sig), "return");
    }
    if m.regs < m.arg_slots() {
        ck.push(
            LinkErrorKind::BadRegister,
            Some(sig),
            format!("{} registers cannot hold {} arguments", m.regs, m.arg_slots()),
        );
    }

    let mut labels = HashSet::new();
    for stmt in &m.body {
        if let Stmt::Label(l) = stmt {
            if !labels.insert(l.as_str()) {
                ck.push(LinkErrorKind::BadLabel, Some(sig), format!("duplicate label `{l}`"));
            }
        }
    }
    match m.instructions().last() {
        Some(last) if last.is_terminator() => {}
        _ => ck.push(LinkErrorKind::BadLabel, Some(sig), "control falls off the end of the body".into()),
    }
    if matches!(m.body.last(), Some(Stmt::Label(_))) {
        ck.push(LinkErrorKind::BadLabel, Some(sig), "label at end of body".into());
    }

    for instr in m.instructions() {
        for r in instr.registers() {
            if r.0 >= m.regs {
                ck.push(
                    LinkErrorKind::BadRegister,
                    Some(sig),
                    format!("{r} out of range in `{}`", super::emit_stmt(&Stmt::Instr(instr.clone()))),
                );
            }
        }
        check_instruction(ck, m, instr, &labels);
    }
}

fn check_instruction(ck: &mut Checker<'_>, m: &MethodDef, instr: &Instruction, labels: &HashSet<&str>) {
    let sig = &m.sig;
    match instr {
        Instruction::New { class, .. } => {
            if !ck.h.contains(class) {
                ck.push(LinkErrorKind::UnresolvedClass, Some(sig), format!("new of unknown class `{class}`"));
            }
        }
        Instruction::NewArr { ty, .. } => ck.check_type(ty, Some(sig), "array"),
        Instruction::Get { field, .. } | Instruction::Put { field, .. } => {
            if ck.h.resolve_field(&field.class, &field.field).is_none() {
                ck.push(LinkErrorKind::UnresolvedField, Some(sig), format!("no field {field}"));
            }
        }
        Instruction::SCall { dst, target, args } => check_call(ck, sig, target, true, *dst, args.len()),
        Instruction::VCall { dst, target, args, .. } => check_call(ck, sig, target, false, *dst, args.len()),
        Instruction::DynCall { args, taint: Some(t), .. } if t.args.len() != args.len() => {
            ck.push(LinkErrorKind::BadCall, Some(sig), "dyncall shadow operand count mismatch".into())
        }
        Instruction::Ret { src } => {
            if src.is_some() != sig.ret.is_some() {
                ck.push(LinkErrorKind::BadCall, Some(sig), "return operand does not match signature".into());
            }
        }
        Instruction::Jmp { label } | Instruction::Br { label, .. } if !labels.contains(label.as_str()) => {
            ck.push(LinkErrorKind::BadLabel, Some(sig), format!("unknown label `{label}`"));
        }
        _ => {}
    }
}

fn check_call(
    ck: &mut Checker<'_>,
    caller: &MethodSig,
    target: &MethodSig,
    is_static: bool,
    dst: Option<super::Reg>,
    argc: usize,
) {
    match ck.h.resolve_sig(target) {
        None => ck.push(LinkErrorKind::UnresolvedMethod, Some(caller), format!("no method {target}")),
        Some(m) if m.is_static != is_static => ck.push(
            LinkErrorKind::UnresolvedMethod,
            Some(caller),
            format!("{target} is {}static", if m.is_static { "" } else { "not " }),
        ),
        Some(_) => {
            if argc != target.params.len() {
                ck.push(
                    LinkErrorKind::BadCall,
                    Some(caller),
                    format!("{target} expects {} arguments, got {argc}", target.params.len()),
                );
            }
            if dst.is_some() && target.ret.is_none() {
                ck.push(LinkErrorKind::BadCall, Some(caller), format!("void {target} has a destination"));
            }
        }
    }
}
