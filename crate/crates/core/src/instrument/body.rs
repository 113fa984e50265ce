//! Per-method rewriting: shadow registers, call-site cases, stubs.

use crate::builtins::{self, TAINTED_INT_ARRAY, TAINT_HELPERS};
use crate::extras::InstrumentSet;
use crate::tir::{
    infer_register_types, FieldRef, Hierarchy, Instruction, Literal, MethodDef, MethodSig, Reg, ShadowKind, Stmt,
    TypeDesc, MANGLE_SUFFIX,
};

use super::signature::{transform_signature, SignatureTransform};
use super::InstrumentError;

pub(crate) const TAINT_FIELD_SUFFIX: &str = "$$taint";
pub(crate) const TAINT_ARR_FIELD_SUFFIX: &str = "$$taintArr";

/// Field names of a box class: (value, taint).
pub fn box_fields(class: &str) -> (&'static str, &'static str) {
    if class == TAINTED_INT_ARRAY {
        ("arr", "taintArr")
    } else {
        ("val", "taint")
    }
}

fn zeros_sig() -> MethodSig {
    MethodSig::new(
        TAINT_HELPERS,
        Some(TypeDesc::array(TypeDesc::Int, 1)),
        "zeros",
        vec![TypeDesc::array(TypeDesc::Int, 1)],
    )
}

fn check_liftable(t: &TypeDesc) -> Result<(), InstrumentError> {
    if t.dims() > builtins::MAX_LIFT_DIMS {
        return Err(InstrumentError::Unsupported(format!(
            "arrays deeper than {} dimensions: {t}",
            builtins::MAX_LIFT_DIMS
        )));
    }
    Ok(())
}

/// `<runtime.Taint: lifted lift(raw)>` for a multi-dimensional primitive array.
pub fn lift_sig(raw: &TypeDesc) -> Result<MethodSig, InstrumentError> {
    check_liftable(raw)?;
    Ok(MethodSig::new(TAINT_HELPERS, Some(builtins::lift_type(raw)), "lift", vec![raw.clone()]))
}

pub fn lower_sig(raw: &TypeDesc) -> Result<MethodSig, InstrumentError> {
    check_liftable(raw)?;
    Ok(MethodSig::new(TAINT_HELPERS, Some(raw.clone()), "lower", vec![builtins::lift_type(raw)]))
}

/// Whether an instrumented caller reaches `target` through its taint-aware
/// form. Standard-library intrinsics always count as instrumented.
pub fn callee_in_set(h: &Hierarchy<'_>, set: &InstrumentSet, target: &MethodSig) -> bool {
    if target.owner.starts_with("runtime.") {
        return false;
    }
    if target.is_intrinsic() {
        return true;
    }
    h.resolve_sig(target).is_some_and(|m| set.contains(&m.sig))
}

/// Register layout of an instrumented frame: the shadow of `rN` is
/// `r(N + regs)`, temporaries follow the shadow block.
#[derive(Debug, Clone)]
pub struct ShadowFrame {
    pub regs: u32,
    pub kinds: Vec<ShadowKind>,
    temps_used: u32,
}

impl ShadowFrame {
    pub fn new(regs: u32, kinds: Vec<ShadowKind>) -> Self {
        ShadowFrame { regs, kinds, temps_used: 0 }
    }

    pub fn s(&self, r: Reg) -> Reg {
        Reg(r.0 + self.regs)
    }

    pub fn kind(&self, r: Reg) -> ShadowKind {
        self.kinds.get(r.index()).copied().unwrap_or(ShadowKind::None)
    }

    fn tmp(&mut self, i: u32) -> Reg {
        self.temps_used = self.temps_used.max(i + 1);
        Reg(2 * self.regs + i)
    }

    pub fn total_regs(&self) -> u32 {
        2 * self.regs + self.temps_used
    }
}

/// Rewrites a call made by an instrumented frame. Calls made by
/// uninstrumented frames are never rewritten: they keep targeting original
/// signatures, which are stubs when the callee is instrumented.
pub fn rewrite_call_site(
    h: &Hierarchy<'_>,
    set: &InstrumentSet,
    frame: &mut ShadowFrame,
    call: &Instruction,
) -> Vec<Instruction> {
    match call {
        Instruction::SCall { dst, target, args } => rewrite_direct(h, set, frame, *dst, target, None, args),
        Instruction::VCall { dst, target, receiver, args } => {
            rewrite_direct(h, set, frame, *dst, target, Some(*receiver), args)
        }
        Instruction::DynCall { dst, name, receiver, args, .. } => {
            let taint =
                crate::tir::DynTaint { dst: dst.map(|d| frame.s(d)), args: args.iter().map(|a| frame.s(*a)).collect() };
            vec![Instruction::DynCall {
                dst: *dst,
                name: *name,
                receiver: *receiver,
                args: args.clone(),
                taint: Some(taint),
            }]
        }
        other => vec![other.clone()],
    }
}

fn make_call(dst: Option<Reg>, target: MethodSig, receiver: Option<Reg>, args: Vec<Reg>) -> Instruction {
    match receiver {
        Some(receiver) => Instruction::VCall { dst, target, receiver, args },
        None => Instruction::SCall { dst, target, args },
    }
}

fn rewrite_direct(
    h: &Hierarchy<'_>,
    set: &InstrumentSet,
    frame: &mut ShadowFrame,
    dst: Option<Reg>,
    target: &MethodSig,
    receiver: Option<Reg>,
    args: &[Reg],
) -> Vec<Instruction> {
    let tr = transform_signature(target);
    let mangled = tr
        .mangled
        .as_ref()
        // application twins are created by this pass; intrinsic ones must already exist
        .filter(|m| callee_in_set(h, set, target) && (!target.is_intrinsic() || h.resolve_sig(m).is_some()));
    let mut out = Vec::new();
    match mangled {
        Some(m) => {
            let mut call_args = args.to_vec();
            for (i, sh) in tr.shadow_params.iter().enumerate() {
                if sh.is_some() {
                    call_args.push(frame.s(args[i]));
                }
            }
            let boxed = tr.boxed_return.filter(|_| dst.is_some());
            let call_dst = if boxed.is_some() { Some(frame.tmp(0)) } else { dst };
            out.push(make_call(call_dst, m.clone(), receiver, call_args));
            if let (Some(d), Some(b), Some(t)) = (dst, boxed, call_dst) {
                let (vf, tf) = box_fields(b);
                out.push(Instruction::Get { dst: d, object: t, field: FieldRef::new(b, vf) });
                out.push(Instruction::Get { dst: frame.s(d), object: t, field: FieldRef::new(b, tf) });
            }
        }
        None => {
            out.push(make_call(dst, target.clone(), receiver, args.to_vec()));
            if let (Some(d), Some(ret)) = (dst, &target.ret) {
                if ret.is_primitive() {
                    out.push(Instruction::Const { dst: frame.s(d), value: Literal::Int(0) });
                } else if ret.is_primitive_array_1d() {
                    out.push(Instruction::SCall { dst: Some(frame.s(d)), target: zeros_sig(), args: vec![d] });
                }
            }
        }
    }
    out
}

struct BodyRewriter<'a, 'p> {
    h: &'a Hierarchy<'p>,
    set: &'a InstrumentSet,
    frame: ShadowFrame,
    out: Vec<Stmt>,
}

impl BodyRewriter<'_, '_> {
    fn emit(&mut self, i: Instruction) {
        self.out.push(Stmt::Instr(i));
    }

    fn s(&self, r: Reg) -> Reg {
        self.frame.s(r)
    }

    fn shadow_field(&self, field: &FieldRef) -> Option<(FieldRef, TypeDesc)> {
        let (_, f) = self.h.resolve_field(&field.class, &field.field)?;
        let suffix = if f.ty.is_primitive() {
            TAINT_FIELD_SUFFIX
        } else if f.ty.is_primitive_array_1d() {
            TAINT_ARR_FIELD_SUFFIX
        } else {
            return None;
        };
        Some((FieldRef::new(field.class.clone(), format!("{}{suffix}", field.field)), f.ty.clone()))
    }

    fn field_type(&self, field: &FieldRef) -> Option<TypeDesc> {
        self.h.resolve_field(&field.class, &field.field).map(|(_, f)| f.ty.clone())
    }

    fn translate(&mut self, instr: &Instruction, boxed_return: Option<&'static str>) -> Result<(), InstrumentError> {
        use Instruction::*;
        match instr {
            Const { dst, value } => {
                match (self.frame.kind(*dst), value) {
                    (ShadowKind::Prim, _) => self.emit(Const { dst: self.s(*dst), value: Literal::Int(0) }),
                    (ShadowKind::PrimArray, _) => self.emit(Const { dst: self.s(*dst), value: Literal::Null }),
                    _ => {}
                }
                self.emit(instr.clone());
            }
            Move { dst, src } => {
                if matches!(self.frame.kind(*dst), ShadowKind::Prim | ShadowKind::PrimArray) {
                    self.emit(Move { dst: self.s(*dst), src: self.s(*src) });
                }
                self.emit(instr.clone());
            }
            Bin { dst, lhs, rhs, .. } => {
                self.emit(Bin { op: crate::tir::BinOp::Or, dst: self.s(*dst), lhs: self.s(*lhs), rhs: self.s(*rhs) });
                self.emit(instr.clone());
            }
            NewArr { dst, ty, len } => {
                if ty.is_primitive_array_1d() {
                    self.emit(NewArr { dst: self.s(*dst), ty: TypeDesc::array(TypeDesc::Int, 1), len: *len });
                    self.emit(instr.clone());
                } else if ty.is_multidim_primitive() {
                    check_liftable(ty)?;
                    self.emit(NewArr { dst: *dst, ty: builtins::lift_type(ty), len: *len });
                } else {
                    self.emit(instr.clone());
                }
            }
            ALoad { dst, array, index } => match self.frame.kind(*array) {
                ShadowKind::PrimArray => {
                    self.emit(ALoad { dst: self.s(*dst), array: self.s(*array), index: *index });
                    self.emit(instr.clone());
                }
                ShadowKind::MultiDim(2) => {
                    let t = self.frame.tmp(0);
                    let (vf, tf) = box_fields(TAINTED_INT_ARRAY);
                    self.emit(ALoad { dst: t, array: *array, index: *index });
                    self.emit(Get { dst: *dst, object: t, field: FieldRef::new(TAINTED_INT_ARRAY, vf) });
                    self.emit(Get { dst: self.s(*dst), object: t, field: FieldRef::new(TAINTED_INT_ARRAY, tf) });
                }
                _ => self.emit(instr.clone()),
            },
            AStore { array, index, src } => match self.frame.kind(*array) {
                ShadowKind::PrimArray => {
                    self.emit(AStore { array: self.s(*array), index: *index, src: self.s(*src) });
                    self.emit(instr.clone());
                }
                ShadowKind::MultiDim(2) => {
                    let t = self.frame.tmp(0);
                    let (vf, tf) = box_fields(TAINTED_INT_ARRAY);
                    self.emit(New { dst: t, class: TAINTED_INT_ARRAY.into() });
                    self.emit(Put { object: t, field: FieldRef::new(TAINTED_INT_ARRAY, vf), src: *src });
                    self.emit(Put { object: t, field: FieldRef::new(TAINTED_INT_ARRAY, tf), src: self.s(*src) });
                    self.emit(AStore { array: *array, index: *index, src: t });
                }
                _ => self.emit(instr.clone()),
            },
            Get { dst, object, field } => {
                let ty = self.field_type(field);
                if let Some((shadow, _)) = self.shadow_field(field) {
                    self.emit(Get { dst: self.s(*dst), object: *object, field: shadow });
                    self.emit(instr.clone());
                } else if let Some(ty) = ty.filter(TypeDesc::is_multidim_primitive) {
                    let t = self.frame.tmp(0);
                    self.emit(Get { dst: t, object: *object, field: field.clone() });
                    self.emit(SCall { dst: Some(*dst), target: lift_sig(&ty)?, args: vec![t] });
                } else {
                    self.emit(instr.clone());
                }
            }
            Put { object, field, src } => {
                let ty = self.field_type(field);
                if let Some((shadow, _)) = self.shadow_field(field) {
                    self.emit(Put { object: *object, field: shadow, src: self.s(*src) });
                    self.emit(instr.clone());
                } else if let Some(ty) = ty.filter(TypeDesc::is_multidim_primitive) {
                    let t = self.frame.tmp(0);
                    self.emit(SCall { dst: Some(t), target: lower_sig(&ty)?, args: vec![*src] });
                    self.emit(Put { object: *object, field: field.clone(), src: t });
                } else {
                    self.emit(instr.clone());
                }
            }
            SCall { .. } | VCall { .. } | DynCall { .. } => {
                for i in rewrite_call_site(self.h, self.set, &mut self.frame, instr) {
                    self.emit(i);
                }
            }
            Ret { src: Some(r) } if boxed_return.is_some() => {
                let b = boxed_return.unwrap_or_default();
                let (vf, tf) = box_fields(b);
                let t = self.frame.tmp(0);
                self.emit(New { dst: t, class: b.into() });
                self.emit(Put { object: t, field: FieldRef::new(b, vf), src: *r });
                self.emit(Put { object: t, field: FieldRef::new(b, tf), src: self.s(*r) });
                self.emit(Ret { src: Some(t) });
            }
            SConst { .. } | New { .. } | Ret { .. } | Jmp { .. } | Br { .. } => self.emit(instr.clone()),
        }
        Ok(())
    }
}

/// Instruments `m`. Returns the instrumented method alone when its signature
/// is unchanged, otherwise the original-signature stub followed by the
/// mangled method.
pub fn instrument_method(
    h: &Hierarchy<'_>,
    m: &MethodDef,
    set: &InstrumentSet,
) -> Result<Vec<MethodDef>, InstrumentError> {
    let tr = transform_signature(&m.sig);
    let kinds = infer_register_types(h, m)
        .map_err(InstrumentError::Types)?
        .into_iter()
        .map(|t| t.map_or(ShadowKind::None, |t| t.shadow_kind()))
        .collect();
    let mut rw = BodyRewriter { h, set, frame: ShadowFrame::new(m.regs, kinds), out: Vec::new() };

    let off = u32::from(!m.is_static);
    if tr.changes() {
        for (i, sh) in tr.shadow_params.iter().enumerate().rev() {
            if let Some(k) = sh {
                let incoming = Reg(off + *k as u32);
                let dst = rw.s(Reg(off + i as u32));
                if dst != incoming {
                    rw.emit(Instruction::Move { dst, src: incoming });
                }
            }
        }
        // incoming shadow arguments land in what the original body treats as locals
        for k in tr.shadow_params.iter().flatten() {
            let slot = off + *k as u32;
            if slot < m.regs {
                rw.emit(Instruction::Const { dst: Reg(slot), value: Literal::Int(0) });
            }
        }
    }
    for stmt in &m.body {
        match stmt {
            Stmt::Label(l) => rw.out.push(Stmt::Label(l.clone())),
            Stmt::Instr(i) => rw.translate(i, tr.boxed_return)?,
        }
    }
    let instrumented = MethodDef {
        sig: tr.target().clone(),
        is_static: m.is_static,
        is_abstract: false,
        regs: rw.frame.total_regs(),
        body: rw.out,
    };
    if tr.changes() {
        Ok(vec![stub(m, &tr)?, instrumented])
    } else {
        Ok(vec![instrumented])
    }
}

/// Forwards to the mangled method with zero taints and unwraps the result.
fn stub(m: &MethodDef, tr: &SignatureTransform) -> Result<MethodDef, InstrumentError> {
    let mangled = tr.mangled.clone().expect("stub needs a mangled target");
    debug_assert!(mangled.name.ends_with(MANGLE_SUFFIX));
    let off = u32::from(!m.is_static);
    let mut next = m.arg_slots();
    let mut fresh = || {
        next += 1;
        Reg(next - 1)
    };
    let mut body = Vec::new();
    let mut args = Vec::new();
    for (i, p) in m.sig.params.iter().enumerate() {
        let r = Reg(off + i as u32);
        if p.is_multidim_primitive() {
            let t = fresh();
            body.push(Instruction::SCall { dst: Some(t), target: lift_sig(p)?, args: vec![r] });
            args.push(t);
        } else {
            args.push(r);
        }
    }
    for (i, p) in m.sig.params.iter().enumerate() {
        if tr.shadow_params[i].is_none() {
            continue;
        }
        let r = Reg(off + i as u32);
        let t = fresh();
        if p.is_primitive() {
            body.push(Instruction::Const { dst: t, value: Literal::Int(0) });
        } else {
            body.push(Instruction::SCall { dst: Some(t), target: zeros_sig(), args: vec![r] });
        }
        args.push(t);
    }
    let dst = m.sig.ret.as_ref().map(|_| fresh());
    body.push(if m.is_static {
        Instruction::SCall { dst, target: mangled, args }
    } else {
        Instruction::VCall { dst, target: mangled, receiver: Reg(0), args }
    });
    match (dst, tr.boxed_return, &m.sig.ret) {
        (Some(d), Some(b), _) => {
            let v = fresh();
            body.push(Instruction::Get { dst: v, object: d, field: FieldRef::new(b, box_fields(b).0) });
            body.push(Instruction::Ret { src: Some(v) });
        }
        (Some(d), None, Some(ret)) if ret.is_multidim_primitive() => {
            let v = fresh();
            body.push(Instruction::SCall { dst: Some(v), target: lower_sig(ret)?, args: vec![d] });
            body.push(Instruction::Ret { src: Some(v) });
        }
        (d, _, _) => body.push(Instruction::Ret { src: d }),
    }
    Ok(MethodDef {
        sig: m.sig.clone(),
        is_static: m.is_static,
        is_abstract: false,
        regs: next,
        body: body.into_iter().map(Stmt::Instr).collect(),
    })
}
