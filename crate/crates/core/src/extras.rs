//! Closes the intersection set under the rules that keep a partially
//! instrumented program consistent.
//!
//! Skipping any of these methods leaves instrumented and uninstrumented code
//! disagreeing about a shadow array, a mangled override, a callback the
//! standard library invokes in its taint-aware form, or the lifted layout of
//! a multi-dimensional array.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::facts::{CallKind, FactBase};
use crate::instrument::transform_signature;
use crate::scope::ScopeResult;
use crate::tir::MethodSig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    Intersection,
    ArrayField,
    Override,
    StdlibCallback,
    MultiDimBoundary,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Intersection => "intersection",
            Rule::ArrayField => "array-field",
            Rule::Override => "override",
            Rule::StdlibCallback => "stdlib-callback",
            Rule::MultiDimBoundary => "multidim-boundary",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InstrumentSet {
    pub methods: BTreeSet<MethodSig>,
    /// The first rule that added each member.
    pub provenance: BTreeMap<MethodSig, Rule>,
}

impl InstrumentSet {
    /// A set with every member attributed to `rule`, for sets that were not
    /// derived by closure (methods files, full instrumentation).
    pub fn from_methods(methods: impl IntoIterator<Item = MethodSig>, rule: Rule) -> Self {
        let methods: BTreeSet<MethodSig> = methods.into_iter().collect();
        let provenance = methods.iter().map(|m| (m.clone(), rule)).collect();
        InstrumentSet { methods, provenance }
    }

    pub fn contains(&self, m: &MethodSig) -> bool {
        self.methods.contains(m)
    }

    pub fn len(&self) -> usize {
        self.methods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.methods.is_empty()
    }

    /// `<sig>  rule=<tag>`, or `None` when `m` is not a member.
    pub fn explain(&self, m: &MethodSig) -> Option<String> {
        self.provenance.get(m).map(|r| format!("{m}  rule={r}"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtrasOptions {
    /// Add every array-field writer, whether or not the set observes the field.
    pub rule1_global: bool,
}

/// Writers of array fields the current set can observe: the field's class
/// has a member in `current`, or a member of `current` accesses the field.
pub fn infer_array_field_methods(
    fb: &FactBase,
    current: &BTreeSet<MethodSig>,
    opts: ExtrasOptions,
) -> BTreeSet<MethodSig> {
    let observed = |class: &str, field: &str| {
        current.iter().any(|m| m.owner == class)
            || fb.field_accesses.iter().any(|a| a.class == class && a.field == field && current.contains(&a.method))
    };
    fb.array_field_writes
        .iter()
        .filter(|w| !current.contains(&w.method))
        .filter(|w| opts.rule1_global || observed(&w.class, &w.field))
        .map(|w| w.method.clone())
        .collect()
}

/// Overrides of members, plus the rest of the dispatch cone of any virtual
/// call an instrumented method makes through a changed signature.
pub fn infer_override_closure(fb: &FactBase, current: &BTreeSet<MethodSig>) -> BTreeSet<MethodSig> {
    let mut out: BTreeSet<MethodSig> = fb
        .overrides
        .iter()
        .filter(|o| current.contains(&o.sup) && !current.contains(&o.sub))
        .map(|o| o.sub.clone())
        .collect();
    for inv in &fb.invocations {
        let (CallKind::Virtual, Some(declared)) = (inv.kind, &inv.declared) else { continue };
        if !current.contains(&inv.caller) || !transform_signature(declared).changes() {
            continue;
        }
        if declared.is_intrinsic() || inv.targets.iter().any(|t| current.contains(t)) {
            out.extend(inv.targets.iter().filter(|t| !t.is_intrinsic() && !current.contains(*t)).cloned());
        }
    }
    out
}

/// Callbacks the standard library may invoke whose signature changes under
/// instrumentation.
pub fn infer_stdlib_callbacks(fb: &FactBase, current: &BTreeSet<MethodSig>) -> BTreeSet<MethodSig> {
    fb.stdlib_called.iter().filter(|m| !current.contains(*m) && transform_signature(m).changes()).cloned().collect()
}

/// Callees with a multi-dimensional array parameter or return that an
/// instrumented method calls.
pub fn infer_multidim_boundary(fb: &FactBase, current: &BTreeSet<MethodSig>) -> BTreeSet<MethodSig> {
    let boundary: BTreeSet<&MethodSig> = fb.multidim_boundaries.iter().map(|b| &b.callee).collect();
    fb.edges
        .iter()
        .filter(|e| current.contains(&e.caller) && boundary.contains(&e.callee) && !current.contains(&e.callee))
        .map(|e| e.callee.clone())
        .collect()
}

pub fn close_instrument_set(fb: &FactBase, scope: &ScopeResult, opts: ExtrasOptions) -> InstrumentSet {
    close_from(fb, &scope.intersection, opts)
}

/// Applies every rule to `start` until none adds a member.
pub fn close_from(fb: &FactBase, start: &BTreeSet<MethodSig>, opts: ExtrasOptions) -> InstrumentSet {
    let mut set = InstrumentSet::default();
    let add = |set: &mut InstrumentSet, ms: BTreeSet<MethodSig>, rule: Rule| {
        let mut grew = false;
        for m in ms.into_iter().filter(|m| !m.is_intrinsic()) {
            if set.methods.insert(m.clone()) {
                set.provenance.insert(m, rule);
                grew = true;
            }
        }
        grew
    };
    add(&mut set, start.clone(), Rule::Intersection);
    loop {
        let mut grew = false;
        let found = infer_array_field_methods(fb, &set.methods, opts);
        grew |= add(&mut set, found, Rule::ArrayField);
        let found = infer_override_closure(fb, &set.methods);
        grew |= add(&mut set, found, Rule::Override);
        let found = infer_stdlib_callbacks(fb, &set.methods);
        grew |= add(&mut set, found, Rule::StdlibCallback);
        let found = infer_multidim_boundary(fb, &set.methods);
        grew |= add(&mut set, found, Rule::MultiDimBoundary);
        if !grew {
            return set;
        }
    }
}
