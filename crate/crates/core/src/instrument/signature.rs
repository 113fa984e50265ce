use crate::builtins;
use crate::tir::{MethodSig, TypeDesc, MANGLE_SUFFIX};

/// How an instrumented method's signature differs from the original.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureTransform {
    pub original: MethodSig,
    /// `None` when the signature is unchanged.
    pub mangled: Option<MethodSig>,
    /// For each original parameter, the index of its shadow parameter in the
    /// mangled signature.
    pub shadow_params: Vec<Option<usize>>,
    /// Box class wrapping the returned value, when the return is boxed.
    pub boxed_return: Option<&'static str>,
}

impl SignatureTransform {
    pub fn changes(&self) -> bool {
        self.mangled.is_some()
    }

    /// The signature instrumented callers target.
    pub fn target(&self) -> &MethodSig {
        self.mangled.as_ref().unwrap_or(&self.original)
    }
}

/// Type of the shadow parameter carrying the taint of a value of type `t`.
pub fn shadow_type(t: &TypeDesc) -> Option<TypeDesc> {
    if t.is_primitive() {
        Some(TypeDesc::Int)
    } else if t.is_primitive_array_1d() {
        Some(TypeDesc::array(TypeDesc::Int, 1))
    } else {
        None
    }
}

/// Arrays of primitives with more than one dimension become arrays of
/// `runtime.TaintedIntArray` with one dimension fewer.
pub fn lift_multidim(t: &TypeDesc) -> TypeDesc {
    builtins::lift_type(t)
}

pub fn transform_signature(s: &MethodSig) -> SignatureTransform {
    let mut params: Vec<TypeDesc> = s.params.iter().map(lift_multidim).collect();
    let mut shadow_params = Vec::with_capacity(s.params.len());
    for p in &s.params {
        match shadow_type(p) {
            Some(t) => {
                shadow_params.push(Some(params.len()));
                params.push(t);
            }
            None => shadow_params.push(None),
        }
    }
    let boxed_return = s.ret.as_ref().and_then(builtins::box_class_for);
    let ret = match (&s.ret, boxed_return) {
        (_, Some(b)) => Some(TypeDesc::class(b)),
        (Some(t), None) => Some(lift_multidim(t)),
        (None, None) => None,
    };
    let changes = boxed_return.is_some()
        || shadow_params.iter().any(Option::is_some)
        || s.params.iter().any(TypeDesc::is_multidim_primitive)
        || s.ret.as_ref().is_some_and(TypeDesc::is_multidim_primitive);
    let mangled = changes.then(|| MethodSig::new(s.owner.clone(), ret, format!("{}{MANGLE_SUFFIX}", s.name), params));
    SignatureTransform { original: s.clone(), mangled, shadow_params, boxed_return }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> SignatureTransform {
        transform_signature(&s.parse().unwrap())
    }

    #[test]
    fn object_params_unchanged() {
        assert_eq!(t("<A: void f(A)>").mangled, None);
        assert_eq!(t("<A: void run()>").mangled, None);
    }

    #[test]
    fn prim_param_appends_shadow() {
        let x = t("<A: void f(int)>");
        assert_eq!(x.mangled.unwrap().to_string(), "<A: void f$$INVIVO_PC(int,int)>");
        assert_eq!(x.shadow_params, vec![Some(1)]);
    }

    #[test]
    fn prim_return_is_boxed() {
        let x = t("<A: int g()>");
        assert_eq!(x.mangled.unwrap().to_string(), "<A: runtime.TaintedInt g$$INVIVO_PC()>");
        assert_eq!(x.boxed_return, Some("runtime.TaintedInt"));
        assert_eq!(t("<A: bool b()>").boxed_return, Some("runtime.TaintedBool"));
    }

    #[test]
    fn mixed_and_array_params() {
        let x = t("<A: int[] f(A,int[],bool)>");
        assert_eq!(x.mangled.unwrap().to_string(), "<A: runtime.TaintedIntArray f$$INVIVO_PC(A,int[],bool,int[],int)>");
        assert_eq!(x.shadow_params, vec![None, Some(3), Some(4)]);
    }

    #[test]
    fn multidim_is_lifted() {
        let x = t("<M: int[][] mk(int)>");
        assert_eq!(x.mangled.unwrap().to_string(), "<M: runtime.TaintedIntArray[] mk$$INVIVO_PC(int,int)>");
        let y = t("<M: void eat(int[][])>");
        assert_eq!(y.mangled.unwrap().to_string(), "<M: void eat$$INVIVO_PC(runtime.TaintedIntArray[])>");
        assert_eq!(y.shadow_params, vec![None]);
    }

    #[test]
    fn intrinsic_variants_match_builtins() {
        let h = crate::tir::Program::default();
        let h = crate::tir::Hierarchy::new(&h);
        for s in crate::builtins::default_sources().iter().chain(&crate::builtins::default_sinks()) {
            let m = transform_signature(s).mangled.unwrap();
            assert!(h.resolve_sig(&m).is_some(), "{m}");
        }
    }
}
