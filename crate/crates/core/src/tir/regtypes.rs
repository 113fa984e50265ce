//! Flow-insensitive register typing, used to decide which shadow registers an
//! instrumented body needs and to bound reflective call edges.

use super::{Hierarchy, Instruction, Literal, MethodDef, Reg, TypeDesc};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegTy {
    Prim,
    Str,
    Null,
    /// A class or array reference.
    Ref(TypeDesc),
}

/// How a register participates in taint tracking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShadowKind {
    /// Untracked: objects, object arrays, strings, unknown.
    None,
    /// Shadow register holds an `int` mask.
    Prim,
    /// Shadow register holds a parallel `int[]`.
    PrimArray,
    /// Primitive array with more than one dimension, carried in lifted form.
    MultiDim(u32),
}

impl RegTy {
    pub fn of(t: &TypeDesc) -> RegTy {
        if t.is_primitive() {
            RegTy::Prim
        } else {
            RegTy::Ref(t.clone())
        }
    }

    pub fn shadow_kind(&self) -> ShadowKind {
        match self {
            RegTy::Prim => ShadowKind::Prim,
            RegTy::Ref(t) if t.is_primitive_array_1d() => ShadowKind::PrimArray,
            RegTy::Ref(t) if t.is_multidim_primitive() => ShadowKind::MultiDim(t.dims()),
            _ => ShadowKind::None,
        }
    }

    pub fn as_type(&self) -> Option<&TypeDesc> {
        match self {
            RegTy::Ref(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{method}: register {reg} used as both {first:?} and {second:?}")]
pub struct TypeConflict {
    pub method: String,
    pub reg: Reg,
    pub first: RegTy,
    pub second: RegTy,
}

fn unify(a: &RegTy, b: &RegTy) -> Result<RegTy, ()> {
    use RegTy::*;
    match (a, b) {
        (x, y) if x == y => Ok(x.clone()),
        (Null, other) | (other, Null) if *other != Prim => Ok(other.clone()),
        (Ref(x), Ref(y)) => {
            if RegTy::Ref(x.clone()).shadow_kind() != RegTy::Ref(y.clone()).shadow_kind() {
                return Err(());
            }
            // int[] and bool[] are the same at run time; keep the first seen
            Ok(Ref(x.clone()))
        }
        (Str, Ref(t)) | (Ref(t), Str) if RegTy::Ref(t.clone()).shadow_kind() == ShadowKind::None => Ok(Ref(t.clone())),
        _ => Err(()),
    }
}

struct Typing<'a> {
    method: &'a MethodDef,
    tys: Vec<Option<RegTy>>,
    changed: bool,
}

impl Typing<'_> {
    fn get(&self, r: Reg) -> Option<&RegTy> {
        self.tys.get(r.index()).and_then(Option::as_ref)
    }

    fn set(&mut self, r: Reg, t: RegTy) -> Result<(), TypeConflict> {
        let Some(slot) = self.tys.get_mut(r.index()) else { return Ok(()) };
        match slot {
            None => {
                *slot = Some(t);
                self.changed = true;
            }
            Some(cur) => {
                let merged = unify(cur, &t).map_err(|_| TypeConflict {
                    method: self.method.sig.to_string(),
                    reg: r,
                    first: cur.clone(),
                    second: t.clone(),
                })?;
                if merged != *cur {
                    *cur = merged;
                    self.changed = true;
                }
            }
        }
        Ok(())
    }

    fn set_opt(&mut self, r: Option<Reg>, t: Option<&TypeDesc>) -> Result<(), TypeConflict> {
        if let (Some(r), Some(t)) = (r, t) {
            self.set(r, RegTy::of(t))?;
        }
        Ok(())
    }
}

/// Infers one type per register from definitions and uses. Registers never
/// constrained stay `None`. A register used with incompatible shadow kinds is
/// a [`TypeConflict`].
pub fn infer_register_types(h: &Hierarchy<'_>, m: &MethodDef) -> Result<Vec<Option<RegTy>>, TypeConflict> {
    let mut t = Typing { method: m, tys: vec![None; m.regs as usize], changed: true };
    let mut next = 0u32;
    if !m.is_static {
        t.set(Reg(0), RegTy::Ref(TypeDesc::class(m.sig.owner.clone())))?;
        next = 1;
    }
    for (i, p) in m.sig.params.iter().enumerate() {
        t.set(Reg(next + i as u32), RegTy::of(p))?;
    }
    while t.changed {
        t.changed = false;
        for instr in m.instructions() {
            step(h, &mut t, instr)?;
        }
    }
    Ok(t.tys)
}

fn step(h: &Hierarchy<'_>, t: &mut Typing<'_>, instr: &Instruction) -> Result<(), TypeConflict> {
    use Instruction::*;
    match instr {
        Const { dst, value: Literal::Int(_) } => t.set(*dst, RegTy::Prim)?,
        Const { dst, value: Literal::Null } => t.set(*dst, RegTy::Null)?,
        SConst { dst, .. } => t.set(*dst, RegTy::Str)?,
        Move { dst, src } => {
            if let Some(ty) = t.get(*src).cloned() {
                t.set(*dst, ty)?;
            }
            if let Some(ty) = t.get(*dst).cloned() {
                t.set(*src, ty)?;
            }
        }
        Bin { dst, lhs, rhs, .. } => {
            for r in [dst, lhs, rhs] {
                t.set(*r, RegTy::Prim)?;
            }
        }
        New { dst, class } => t.set(*dst, RegTy::Ref(TypeDesc::class(class.clone())))?,
        NewArr { dst, ty, len } => {
            t.set(*dst, RegTy::Ref(ty.clone()))?;
            t.set(*len, RegTy::Prim)?;
        }
        ALoad { dst, array, index } => {
            t.set(*index, RegTy::Prim)?;
            if let Some(elem) = t.get(*array).and_then(RegTy::as_type).and_then(TypeDesc::element) {
                t.set(*dst, RegTy::of(&elem))?;
            }
        }
        AStore { array, index, src } => {
            t.set(*index, RegTy::Prim)?;
            if let Some(elem) = t.get(*array).and_then(RegTy::as_type).and_then(TypeDesc::element) {
                t.set(*src, RegTy::of(&elem))?;
            }
        }
        Get { dst, object, field } => {
            t.set(*object, RegTy::Ref(TypeDesc::class(field.class.clone())))?;
            if let Some((_, f)) = h.resolve_field(&field.class, &field.field) {
                t.set(*dst, RegTy::of(&f.ty))?;
            }
        }
        Put { object, field, src } => {
            t.set(*object, RegTy::Ref(TypeDesc::class(field.class.clone())))?;
            if let Some((_, f)) = h.resolve_field(&field.class, &field.field) {
                t.set(*src, RegTy::of(&f.ty))?;
            }
        }
        SCall { dst, target, args } => {
            t.set_opt(*dst, target.ret.as_ref())?;
            for (a, p) in args.iter().zip(&target.params) {
                t.set(*a, RegTy::of(p))?;
            }
        }
        VCall { dst, target, receiver, args } => {
            t.set_opt(*dst, target.ret.as_ref())?;
            t.set(*receiver, RegTy::Ref(TypeDesc::class(target.owner.clone())))?;
            for (a, p) in args.iter().zip(&target.params) {
                t.set(*a, RegTy::of(p))?;
            }
        }
        DynCall { name, .. } => t.set(*name, RegTy::Str)?,
        Ret { src: Some(r) } => t.set_opt(Some(*r), t.method.sig.ret.clone().as_ref())?,
        Br { cond, .. } => t.set(*cond, RegTy::Prim)?,
        Ret { src: None } | Jmp { .. } => {}
    }
    Ok(())
}
