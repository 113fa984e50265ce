//! Relational facts about a program and the flattened caller→callee graph.
//!
//! Every call site becomes an [`InvocationFact`]. Flattening resolves each
//! site to its possible callees (class hierarchy analysis for virtual calls,
//! local string constants for reflective calls) and records plain
//! `(caller, callee)` pairs, which is all the scope queries consume.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write};

use crate::builtins;
use crate::tir::{
    infer_register_types, validate_program, Hierarchy, Instruction, LinkError, MethodDef, MethodSig, Program, Reg,
    RegTy, TypeDesc,
};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteId {
    pub method: MethodSig,
    /// Index among the method's instructions (labels not counted).
    pub index: usize,
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.method, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CallKind {
    Static,
    Virtual,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvocationFact {
    pub site: SiteId,
    pub caller: MethodSig,
    pub kind: CallKind,
    /// Absent for dynamic sites.
    pub declared: Option<MethodSig>,
    /// Number of arguments, receiver excluded.
    pub arity: usize,
    /// String constants that may name the callee of a dynamic site; `None`
    /// when the name is not a local constant.
    pub dyn_names: Option<BTreeSet<String>>,
    /// Static type of the receiver register, when known.
    pub receiver_class: Option<String>,
    /// Possible callees, filled in by [`flatten_call_edges`].
    pub targets: BTreeSet<MethodSig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CallEdge {
    pub caller: MethodSig,
    pub callee: MethodSig,
}

impl CallEdge {
    pub fn new(caller: MethodSig, callee: MethodSig) -> Self {
        CallEdge { caller, callee }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OverrideFact {
    pub sub: MethodSig,
    pub sup: MethodSig,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArrayFieldWriteFact {
    pub method: MethodSig,
    pub class: String,
    pub field: String,
}

/// Any read or write of a field; the class is the declaring class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldAccessFact {
    pub method: MethodSig,
    pub class: String,
    pub field: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Via {
    Param,
    Return,
}

impl Via {
    pub fn as_str(self) -> &'static str {
        match self {
            Via::Param => "param",
            Via::Return => "return",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiDimBoundaryFact {
    pub callee: MethodSig,
    pub via: Via,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FactBase {
    pub invocations: Vec<InvocationFact>,
    pub edges: BTreeSet<CallEdge>,
    pub overrides: BTreeSet<OverrideFact>,
    pub array_field_writes: BTreeSet<ArrayFieldWriteFact>,
    pub field_accesses: BTreeSet<FieldAccessFact>,
    pub multidim_boundaries: BTreeSet<MultiDimBoundaryFact>,
    pub stdlib_called: BTreeSet<MethodSig>,
    /// Every application method, in canonical order.
    pub methods: BTreeSet<MethodSig>,
}

#[derive(Debug, thiserror::Error)]
pub enum FactsError {
    #[error("program does not validate: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<LinkError>),
    #[error("unresolved call target {0}")]
    Unresolved(MethodSig),
}

/// Extracts invocation, override, field and multi-dimensional boundary facts.
/// Edges are left empty; see [`flatten_call_edges`].
pub fn extract_facts(p: &Program) -> Result<FactBase, FactsError> {
    let errors = validate_program(p);
    if !errors.is_empty() {
        return Err(FactsError::Invalid(errors));
    }
    let h = Hierarchy::new(p);
    let mut fb = FactBase::default();
    for class in &p.classes {
        for m in &class.methods {
            fb.methods.insert(m.sig.clone());
            method_facts(&h, m, &mut fb);
        }
    }
    Ok(fb)
}

fn method_facts(h: &Hierarchy<'_>, m: &MethodDef, fb: &mut FactBase) {
    let sig = &m.sig;
    // override pairs against every ancestor declaring the same method
    for ancestor in h.ancestry(&sig.owner).into_iter().skip(1) {
        if let Some(sup) = ancestor.method(&sig.name, &sig.params) {
            if sup.sig.ret == sig.ret {
                fb.overrides.insert(OverrideFact { sub: sig.clone(), sup: sup.sig.clone() });
            }
        }
    }
    if sig.params.iter().any(TypeDesc::is_multidim) {
        fb.multidim_boundaries.insert(MultiDimBoundaryFact { callee: sig.clone(), via: Via::Param });
    }
    if sig.ret.as_ref().is_some_and(TypeDesc::is_multidim) {
        fb.multidim_boundaries.insert(MultiDimBoundaryFact { callee: sig.clone(), via: Via::Return });
    }

    // register types only bound reflective edges; a conflict just widens them
    let reg_types = infer_register_types(h, m).ok();
    let receiver_class = |r: Reg| -> Option<String> {
        match reg_types.as_ref()?.get(r.index())?.as_ref()? {
            RegTy::Ref(TypeDesc::Class(c)) => Some(c.clone()),
            _ => None,
        }
    };

    for (index, instr) in m.instructions().enumerate() {
        let site = SiteId { method: sig.clone(), index };
        match instr {
            Instruction::SCall { target, args, .. } => fb.invocations.push(InvocationFact {
                site,
                caller: sig.clone(),
                kind: CallKind::Static,
                declared: Some(target.clone()),
                arity: args.len(),
                dyn_names: None,
                receiver_class: None,
                targets: BTreeSet::new(),
            }),
            Instruction::VCall { target, receiver, args, .. } => fb.invocations.push(InvocationFact {
                site,
                caller: sig.clone(),
                kind: CallKind::Virtual,
                declared: Some(target.clone()),
                arity: args.len(),
                dyn_names: None,
                receiver_class: receiver_class(*receiver),
                targets: BTreeSet::new(),
            }),
            Instruction::DynCall { name, receiver, args, .. } => fb.invocations.push(InvocationFact {
                site,
                caller: sig.clone(),
                kind: CallKind::Dynamic,
                declared: None,
                arity: args.len(),
                dyn_names: constant_names(m, *name),
                receiver_class: receiver_class(*receiver),
                targets: BTreeSet::new(),
            }),
            Instruction::Get { field, .. } | Instruction::Put { field, .. } => {
                if let Some((decl, f)) = h.resolve_field(&field.class, &field.field) {
                    fb.field_accesses.insert(FieldAccessFact {
                        method: sig.clone(),
                        class: decl.name.clone(),
                        field: f.name.clone(),
                    });
                    if matches!(instr, Instruction::Put { .. }) && f.ty.dims() > 0 {
                        fb.array_field_writes.insert(ArrayFieldWriteFact {
                            method: sig.clone(),
                            class: decl.name.clone(),
                            field: f.name.clone(),
                        });
                    }
                }
            }
            _ => {}
        }
    }
}

/// String constants reaching `reg`, when every definition of `reg` in the
/// body is an `sconst`.
fn constant_names(m: &MethodDef, reg: Reg) -> Option<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    let is_param = reg.0 < m.arg_slots();
    if is_param {
        return None;
    }
    for instr in m.instructions() {
        if instr.def() == Some(reg) {
            match instr {
                Instruction::SConst { value, .. } => {
                    names.insert(value.clone());
                }
                _ => return None,
            }
        }
        if let Instruction::DynCall { taint: Some(t), .. } = instr {
            if t.dst == Some(reg) {
                return None;
            }
        }
    }
    (!names.is_empty()).then_some(names)
}

/// The declared method plus every override in transitive subclasses of the
/// declared owner.
pub fn cha_targets(p: &Program, declared: &MethodSig) -> Result<BTreeSet<MethodSig>, FactsError> {
    cha_targets_in(&Hierarchy::new(p), declared)
}

pub(crate) fn cha_targets_in(h: &Hierarchy<'_>, declared: &MethodSig) -> Result<BTreeSet<MethodSig>, FactsError> {
    let resolved = h.resolve_sig(declared).ok_or_else(|| FactsError::Unresolved(declared.clone()))?;
    let mut out = BTreeSet::from([resolved.sig.clone()]);
    for sub in h.subclasses(&declared.owner) {
        if let Some(m) = h.class(sub).and_then(|c| c.method(&declared.name, &declared.params)) {
            if m.sig.ret == declared.ret {
                out.insert(m.sig.clone());
            }
        }
    }
    Ok(out)
}

/// Resolves every invocation to its callees and records the flat edges.
/// Intrinsics that invoke callbacks become callers of every override of the
/// callback signature.
pub fn flatten_call_edges(mut fb: FactBase, p: &Program) -> Result<FactBase, FactsError> {
    let h = Hierarchy::new(p);
    let app_methods: Vec<&MethodDef> = p.methods().collect();
    for inv in &mut fb.invocations {
        inv.targets = match (&inv.kind, &inv.declared) {
            (CallKind::Static, Some(d)) => {
                let m = h.resolve_sig(d).ok_or_else(|| FactsError::Unresolved(d.clone()))?;
                BTreeSet::from([m.sig.clone()])
            }
            (CallKind::Virtual, Some(d)) => cha_targets_in(&h, d)?,
            _ => dynamic_targets(&h, &app_methods, inv),
        };
        for t in &inv.targets {
            fb.edges.insert(CallEdge::new(inv.caller.clone(), t.clone()));
        }
    }
    let called: BTreeSet<MethodSig> = fb.edges.iter().map(|e| e.callee.clone()).collect();
    for cb in builtins::callback_uses() {
        if !called.contains(&cb.intrinsic) {
            continue;
        }
        for t in cha_targets_in(&h, &cb.callback)? {
            fb.edges.insert(CallEdge::new(cb.intrinsic.clone(), t));
        }
    }
    Ok(fb)
}

fn dynamic_targets(h: &Hierarchy<'_>, app: &[&MethodDef], inv: &InvocationFact) -> BTreeSet<MethodSig> {
    let instance = app.iter().filter(|m| !m.is_static);
    match (&inv.dyn_names, &inv.receiver_class) {
        (Some(names), _) => instance.filter(|m| names.contains(&m.sig.name)).map(|m| m.sig.clone()).collect(),
        (None, Some(class)) => {
            let mut cone: BTreeSet<&str> = h.ancestry(class).iter().map(|c| c.name.as_str()).collect();
            cone.extend(h.subclasses(class));
            instance.filter(|m| cone.contains(m.sig.owner.as_str())).map(|m| m.sig.clone()).collect()
        }
        (None, None) => instance.map(|m| m.sig.clone()).collect(),
    }
}

/// Marks application methods that override a stdlib callback signature and
/// are called from an intrinsic.
pub fn mark_stdlib_called(mut fb: FactBase, p: &Program) -> FactBase {
    let h = Hierarchy::new(p);
    let callbacks = builtins::callback_signatures();
    fb.stdlib_called = fb
        .edges
        .iter()
        .filter(|e| e.caller.owner.starts_with("stdlib.") && !e.callee.is_intrinsic())
        .filter(|e| callbacks.iter().any(|cb| h.overrides(&e.callee, cb)))
        .map(|e| e.callee.clone())
        .collect();
    fb
}

/// Runs extraction, flattening and stdlib marking.
pub fn analyze(p: &Program) -> Result<FactBase, FactsError> {
    let fb = extract_facts(p)?;
    let fb = flatten_call_edges(fb, p)?;
    Ok(mark_stdlib_called(fb, p))
}

impl FactBase {
    /// Successor lists over the flattened edges.
    pub fn callees(&self) -> BTreeMap<&MethodSig, Vec<&MethodSig>> {
        let mut out: BTreeMap<&MethodSig, Vec<&MethodSig>> = BTreeMap::new();
        for e in &self.edges {
            out.entry(&e.caller).or_default().push(&e.callee);
        }
        out
    }

    /// One fact per line: `EDGE`, `OVERRIDE`, `ARRFIELD`, `MDIM`, `STDLIBCB`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let _ = writeln!(out, "EDGE {} -> {}", e.caller, e.callee);
        }
        for o in &self.overrides {
            let _ = writeln!(out, "OVERRIDE {} over {}", o.sub, o.sup);
        }
        for a in &self.array_field_writes {
            let _ = writeln!(out, "ARRFIELD {} writes {}.{}", a.method, a.class, a.field);
        }
        for m in &self.multidim_boundaries {
            let _ = writeln!(out, "MDIM {} via {}", m.callee, m.via.as_str());
        }
        for s in &self.stdlib_called {
            let _ = writeln!(out, "STDLIBCB {s}");
        }
        out
    }
}
