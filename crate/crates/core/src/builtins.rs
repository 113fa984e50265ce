//! Implicitly declared classes: `stdlib.*` intrinsics and `runtime.*` builtins.
//!
//! Intrinsic methods have no body; the VM implements them natively. The
//! taint-aware variants of every intrinsic are declared alongside the plain
//! ones because the standard library counts as fully instrumented.

use once_cell::sync::Lazy;

use crate::tir::{ClassDef, FieldDef, MethodDef, MethodSig, TypeDesc};

pub const TAINTED_INT: &str = "runtime.TaintedInt";
pub const TAINTED_BOOL: &str = "runtime.TaintedBool";
pub const TAINTED_INT_ARRAY: &str = "runtime.TaintedIntArray";
pub const TAINT_HELPERS: &str = "runtime.Taint";
pub const FN_CLASS: &str = "stdlib.Fn";
pub const ACT_CLASS: &str = "stdlib.Act";

/// Deepest primitive array the lifting helpers support.
pub const MAX_LIFT_DIMS: u32 = 4;

fn sig(s: &str) -> MethodSig {
    s.parse().expect("builtin signature")
}

fn intrinsic(s: &str, is_static: bool) -> MethodDef {
    MethodDef::new(sig(s), is_static, 0, vec![])
}

fn abstract_method(s: &str) -> MethodDef {
    MethodDef { is_abstract: true, ..intrinsic(s, false) }
}

fn field(name: &str, ty: &str) -> FieldDef {
    FieldDef { name: name.into(), ty: ty.parse().expect("builtin type") }
}

fn class(name: &str, fields: Vec<FieldDef>, methods: Vec<MethodDef>) -> ClassDef {
    ClassDef { name: name.into(), superclass: None, fields, methods }
}

static CLASSES: Lazy<Vec<ClassDef>> = Lazy::new(|| {
    let mut taint_helpers = vec![
        intrinsic("<runtime.Taint: int[] zeros(int[])>", true),
        intrinsic("<runtime.Taint: bool[] zeros(bool[])>", true),
    ];
    for elem in [TypeDesc::Int, TypeDesc::Bool] {
        for dims in 2..=MAX_LIFT_DIMS {
            let raw = TypeDesc::array(elem.clone(), dims);
            let lifted = lift_type(&raw);
            taint_helpers.push(MethodDef::new(
                MethodSig::new(TAINT_HELPERS, Some(lifted.clone()), "lift", vec![raw.clone()]),
                true,
                0,
                vec![],
            ));
            taint_helpers.push(MethodDef::new(
                MethodSig::new(TAINT_HELPERS, Some(raw), "lower", vec![lifted]),
                true,
                0,
                vec![],
            ));
        }
    }
    vec![
        class(
            "stdlib.In",
            vec![],
            vec![
                intrinsic("<stdlib.In: int read()>", true),
                intrinsic("<stdlib.In: runtime.TaintedInt read$$INVIVO_PC()>", true),
                intrinsic("<stdlib.In: void readBuf(int[])>", true),
                intrinsic("<stdlib.In: void readBuf$$INVIVO_PC(int[],int[])>", true),
            ],
        ),
        class(
            "stdlib.Out",
            vec![],
            vec![
                intrinsic("<stdlib.Out: void write(int)>", true),
                intrinsic("<stdlib.Out: void write$$INVIVO_PC(int,int)>", true),
                intrinsic("<stdlib.Out: void print(int)>", true),
                intrinsic("<stdlib.Out: void print$$INVIVO_PC(int,int)>", true),
            ],
        ),
        class(
            "stdlib.Sys",
            vec![],
            vec![
                intrinsic("<stdlib.Sys: void exec(int)>", true),
                intrinsic("<stdlib.Sys: void exec$$INVIVO_PC(int,int)>", true),
            ],
        ),
        class(
            FN_CLASS,
            vec![],
            vec![
                abstract_method("<stdlib.Fn: int apply(int)>"),
                abstract_method("<stdlib.Fn: runtime.TaintedInt apply$$INVIVO_PC(int,int)>"),
            ],
        ),
        class(ACT_CLASS, vec![], vec![abstract_method("<stdlib.Act: void run()>")]),
        class(
            "stdlib.Hof",
            vec![],
            vec![
                intrinsic("<stdlib.Hof: int map(stdlib.Fn,int)>", true),
                intrinsic("<stdlib.Hof: runtime.TaintedInt map$$INVIVO_PC(stdlib.Fn,int,int)>", true),
                intrinsic("<stdlib.Hof: void invoke(stdlib.Act)>", true),
            ],
        ),
        class(TAINTED_INT, vec![field("val", "int"), field("taint", "int")], vec![]),
        class(TAINTED_BOOL, vec![field("val", "bool"), field("taint", "int")], vec![]),
        class(TAINTED_INT_ARRAY, vec![field("arr", "int[]"), field("taintArr", "int[]")], vec![]),
        class(TAINT_HELPERS, vec![], taint_helpers),
    ]
});

/// All implicitly declared classes.
pub fn classes() -> &'static [ClassDef] {
    &CLASSES
}

pub fn is_box_class(name: &str) -> bool {
    matches!(name, TAINTED_INT | TAINTED_BOOL | TAINTED_INT_ARRAY)
}

/// Box class wrapping a returned primitive (or primitive 1-dim array) of type `t`.
pub fn box_class_for(t: &TypeDesc) -> Option<&'static str> {
    match t {
        TypeDesc::Int => Some(TAINTED_INT),
        TypeDesc::Bool => Some(TAINTED_BOOL),
        t if t.is_primitive_array_1d() => Some(TAINTED_INT_ARRAY),
        _ => None,
    }
}

/// Multi-dimensional primitive arrays become arrays of `runtime.TaintedIntArray`
/// with one dimension fewer; every other type is unchanged.
pub fn lift_type(t: &TypeDesc) -> TypeDesc {
    if t.is_multidim_primitive() {
        TypeDesc::array(TypeDesc::class(TAINTED_INT_ARRAY), t.dims() - 1)
    } else {
        t.clone()
    }
}

/// A (caller intrinsic, callback signature) pair: the intrinsic invokes the
/// callback on an application object it was handed.
#[derive(Debug, Clone)]
pub struct CallbackUse {
    pub intrinsic: MethodSig,
    pub callback: MethodSig,
}

static CALLBACKS: Lazy<Vec<CallbackUse>> = Lazy::new(|| {
    vec![
        CallbackUse {
            intrinsic: sig("<stdlib.Hof: int map(stdlib.Fn,int)>"),
            callback: sig("<stdlib.Fn: int apply(int)>"),
        },
        CallbackUse {
            intrinsic: sig("<stdlib.Hof: runtime.TaintedInt map$$INVIVO_PC(stdlib.Fn,int,int)>"),
            callback: sig("<stdlib.Fn: int apply(int)>"),
        },
        CallbackUse {
            intrinsic: sig("<stdlib.Hof: void invoke(stdlib.Act)>"),
            callback: sig("<stdlib.Act: void run()>"),
        },
    ]
});

pub fn callback_uses() -> &'static [CallbackUse] {
    &CALLBACKS
}

/// Callback signatures declared by `stdlib.*` classes.
pub fn callback_signatures() -> Vec<&'static MethodSig> {
    let mut out: Vec<&MethodSig> = CALLBACKS.iter().map(|c| &c.callback).collect();
    out.sort();
    out.dedup();
    out
}

pub fn default_sources() -> Vec<MethodSig> {
    vec![sig("<stdlib.In: int read()>"), sig("<stdlib.In: void readBuf(int[])>")]
}

pub fn default_sinks() -> Vec<MethodSig> {
    vec![sig("<stdlib.Out: void write(int)>"), sig("<stdlib.Sys: void exec(int)>")]
}
