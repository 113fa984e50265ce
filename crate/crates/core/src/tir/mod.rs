//! The textual intermediate representation (TIR).
//!
//! A TIR program is a list of classes. Each class owns fields and methods, and
//! each method body is a register-based instruction list with labels. Method
//! signatures render in the `<Owner: ret name(p1,p2)>` form, which is also the
//! line format of seeds and methods files.

mod emit;
mod hierarchy;
mod parse;
mod regtypes;
mod validate;

use std::cmp::Ordering;
use std::fmt;
use std::iter;
use std::str::FromStr;

pub use emit::{emit_program, emit_stmt};
pub use hierarchy::Hierarchy;
pub use parse::{parse_program, parse_type, ParseError};
pub use regtypes::{infer_register_types, RegTy, ShadowKind, TypeConflict};
pub use validate::{validate_program, LinkError, LinkErrorKind};

/// Suffix appended to the name of every taint-aware method variant.
pub const MANGLE_SUFFIX: &str = "$$INVIVO_PC";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypeDesc {
    Int,
    Bool,
    Class(String),
    /// `elem` is never itself an array; `dims` encodes nesting.
    Array {
        elem: Box<TypeDesc>,
        dims: u32,
    },
}

impl TypeDesc {
    pub fn class(name: impl Into<String>) -> Self {
        TypeDesc::Class(name.into())
    }

    /// Builds `elem` with `dims` array dimensions; `dims == 0` returns `elem`.
    pub fn array(elem: TypeDesc, dims: u32) -> Self {
        match (elem, dims) {
            (elem, 0) => elem,
            (TypeDesc::Array { elem, dims: inner }, d) => TypeDesc::Array { elem, dims: inner + d },
            (elem, d) => TypeDesc::Array { elem: Box::new(elem), dims: d },
        }
    }

    pub fn is_primitive(&self) -> bool {
        matches!(self, TypeDesc::Int | TypeDesc::Bool)
    }

    pub fn dims(&self) -> u32 {
        match self {
            TypeDesc::Array { dims, .. } => *dims,
            _ => 0,
        }
    }

    /// `int[]` or `bool[]`.
    pub fn is_primitive_array_1d(&self) -> bool {
        matches!(self, TypeDesc::Array { elem, dims: 1 } if elem.is_primitive())
    }

    /// A primitive array with more than one dimension.
    pub fn is_multidim_primitive(&self) -> bool {
        matches!(self, TypeDesc::Array { elem, dims } if *dims > 1 && elem.is_primitive())
    }

    pub fn is_multidim(&self) -> bool {
        self.dims() > 1
    }

    /// Type of one element of an array, `None` for non-arrays.
    pub fn element(&self) -> Option<TypeDesc> {
        match self {
            TypeDesc::Array { elem, dims } => Some(TypeDesc::array((**elem).clone(), dims - 1)),
            _ => None,
        }
    }

    /// The innermost non-array type.
    pub fn base(&self) -> &TypeDesc {
        match self {
            TypeDesc::Array { elem, .. } => elem,
            t => t,
        }
    }
}

impl fmt::Display for TypeDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeDesc::Int => f.write_str("int"),
            TypeDesc::Bool => f.write_str("bool"),
            TypeDesc::Class(name) => f.write_str(name),
            TypeDesc::Array { elem, dims } => {
                write!(f, "{elem}")?;
                for _ in 0..*dims {
                    f.write_str("[]")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for TypeDesc {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_type(s).map_err(|msg| ParseError::new(1, 1, msg))
    }
}

/// A method signature. Ordering is lexicographic on the canonical rendering.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MethodSig {
    pub owner: String,
    /// `None` is `void`.
    pub ret: Option<TypeDesc>,
    pub name: String,
    pub params: Vec<TypeDesc>,
}

impl MethodSig {
    pub fn new(
        owner: impl Into<String>,
        ret: Option<TypeDesc>,
        name: impl Into<String>,
        params: Vec<TypeDesc>,
    ) -> Self {
        MethodSig { owner: owner.into(), ret, name: name.into(), params }
    }

    /// Same name and parameter list, the pair a subclass method must share to override.
    pub fn same_selector(&self, other: &MethodSig) -> bool {
        self.name == other.name && self.params == other.params
    }

    pub fn with_owner(&self, owner: &str) -> MethodSig {
        MethodSig { owner: owner.to_string(), ..self.clone() }
    }

    pub fn is_mangled(&self) -> bool {
        self.name.ends_with(MANGLE_SUFFIX)
    }

    /// Owned by a `stdlib.*` intrinsic class or a `runtime.*` builtin.
    pub fn is_intrinsic(&self) -> bool {
        is_intrinsic_class(&self.owner)
    }

    pub fn parse(text: &str) -> Result<MethodSig, String> {
        parse::parse_sig(text)
    }
}

pub fn is_intrinsic_class(name: &str) -> bool {
    name.starts_with("stdlib.") || name.starts_with("runtime.")
}

impl fmt::Display for MethodSig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}: ", self.owner)?;
        match &self.ret {
            Some(t) => write!(f, "{t}")?,
            None => f.write_str("void")?,
        }
        write!(f, " {}(", self.name)?;
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{p}")?;
        }
        f.write_str(")>")
    }
}

impl FromStr for MethodSig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse::parse_sig(s)
    }
}

impl PartialOrd for MethodSig {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MethodSig {
    fn cmp(&self, other: &Self) -> Ordering {
        if self == other {
            return Ordering::Equal;
        }
        // Field by field, each followed by its separator in the rendering.
        with_separator(&self.owner, &other.owner, b':')
            .then_with(|| {
                if self.ret == other.ret {
                    Ordering::Equal
                } else {
                    self.ret_bytes().chain(iter::once(b' ')).cmp(other.ret_bytes().chain(iter::once(b' ')))
                }
            })
            .then_with(|| with_separator(&self.name, &other.name, b'('))
            .then_with(|| self.param_bytes().cmp(other.param_bytes()))
    }
}

/// Orders `a` and `b` as they compare when both are followed by `sep`.
fn with_separator(a: &str, b: &str, sep: u8) -> Ordering {
    let (a, b) = (a.as_bytes(), b.as_bytes());
    let n = a.len().min(b.len());
    a[..n].cmp(&b[..n]).then_with(|| a.get(n).unwrap_or(&sep).cmp(b.get(n).unwrap_or(&sep)))
}

impl TypeDesc {
    fn rendered(&self) -> impl Iterator<Item = u8> + '_ {
        let (base, dims) = match self {
            TypeDesc::Array { elem, dims } => (&**elem, *dims as usize),
            t => (t, 0),
        };
        let name = match base {
            TypeDesc::Int => "int",
            TypeDesc::Bool => "bool",
            TypeDesc::Class(name) => name,
            TypeDesc::Array { .. } => unreachable!("array element is never an array"),
        };
        name.bytes().chain("[]".bytes().cycle().take(2 * dims))
    }
}

impl MethodSig {
    fn ret_bytes(&self) -> impl Iterator<Item = u8> + '_ {
        let void = if self.ret.is_none() { "void" } else { "" };
        self.ret.iter().flat_map(TypeDesc::rendered).chain(void.bytes())
    }

    /// The rendered parameter list with its closing parenthesis.
    fn param_bytes(&self) -> impl Iterator<Item = u8> + '_ {
        self.params
            .iter()
            .enumerate()
            .flat_map(|(i, p)| (i > 0).then_some(b',').into_iter().chain(p.rendered()))
            .chain(iter::once(b')'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(pub u32);

impl Reg {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Or,
    And,
    Xor,
    Lt,
    Eq,
}

impl BinOp {
    pub const ALL: [BinOp; 9] =
        [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Or, BinOp::And, BinOp::Xor, BinOp::Lt, BinOp::Eq];

    pub fn as_str(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Or => "or",
            BinOp::And => "and",
            BinOp::Xor => "xor",
            BinOp::Lt => "lt",
            BinOp::Eq => "eq",
        }
    }

    pub fn from_name(s: &str) -> Option<BinOp> {
        BinOp::ALL.into_iter().find(|op| op.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Literal {
    Int(i64),
    Null,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldRef {
    pub class: String,
    pub field: String,
}

impl FieldRef {
    pub fn new(class: impl Into<String>, field: impl Into<String>) -> Self {
        FieldRef { class: class.into(), field: field.into() }
    }
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.class, self.field)
    }
}

/// Shadow operands of a taint-aware `dyncall`: one shadow register per
/// argument plus the destination's shadow.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DynTaint {
    pub dst: Option<Reg>,
    pub args: Vec<Reg>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Instruction {
    Const {
        dst: Reg,
        value: Literal,
    },
    SConst {
        dst: Reg,
        value: String,
    },
    Move {
        dst: Reg,
        src: Reg,
    },
    Bin {
        op: BinOp,
        dst: Reg,
        lhs: Reg,
        rhs: Reg,
    },
    New {
        dst: Reg,
        class: String,
    },
    /// `ty` is the type of the created array.
    NewArr {
        dst: Reg,
        ty: TypeDesc,
        len: Reg,
    },
    ALoad {
        dst: Reg,
        array: Reg,
        index: Reg,
    },
    AStore {
        array: Reg,
        index: Reg,
        src: Reg,
    },
    Get {
        dst: Reg,
        object: Reg,
        field: FieldRef,
    },
    Put {
        object: Reg,
        field: FieldRef,
        src: Reg,
    },
    SCall {
        dst: Option<Reg>,
        target: MethodSig,
        args: Vec<Reg>,
    },
    VCall {
        dst: Option<Reg>,
        target: MethodSig,
        receiver: Reg,
        args: Vec<Reg>,
    },
    DynCall {
        dst: Option<Reg>,
        name: Reg,
        receiver: Reg,
        args: Vec<Reg>,
        taint: Option<DynTaint>,
    },
    Ret {
        src: Option<Reg>,
    },
    Jmp {
        label: String,
    },
    /// Jumps when `cond` is non-zero, falls through otherwise.
    Br {
        cond: Reg,
        label: String,
    },
}

impl Instruction {
    pub fn opcode(&self) -> &'static str {
        match self {
            Instruction::Const { .. } => "const",
            Instruction::SConst { .. } => "sconst",
            Instruction::Move { .. } => "move",
            Instruction::Bin { .. } => "bin",
            Instruction::New { .. } => "new",
            Instruction::NewArr { .. } => "newarr",
            Instruction::ALoad { .. } => "aload",
            Instruction::AStore { .. } => "astore",
            Instruction::Get { .. } => "get",
            Instruction::Put { .. } => "put",
            Instruction::SCall { .. } => "scall",
            Instruction::VCall { .. } => "vcall",
            Instruction::DynCall { .. } => "dyncall",
            Instruction::Ret { .. } => "ret",
            Instruction::Jmp { .. } => "jmp",
            Instruction::Br { .. } => "br",
        }
    }

    /// Every register the instruction names, reads and writes alike.
    pub fn registers(&self) -> Vec<Reg> {
        use Instruction::*;
        match self {
            Const { dst, .. } | SConst { dst, .. } | New { dst, .. } => vec![*dst],
            Move { dst, src } => vec![*dst, *src],
            Bin { dst, lhs, rhs, .. } => vec![*dst, *lhs, *rhs],
            NewArr { dst, len, .. } => vec![*dst, *len],
            ALoad { dst, array, index } => vec![*dst, *array, *index],
            AStore { array, index, src } => vec![*array, *index, *src],
            Get { dst, object, .. } => vec![*dst, *object],
            Put { object, src, .. } => vec![*object, *src],
            SCall { dst, args, .. } => dst.iter().chain(args).copied().collect(),
            VCall { dst, receiver, args, .. } => {
                dst.iter().chain(std::iter::once(receiver)).chain(args).copied().collect()
            }
            DynCall { dst, name, receiver, args, taint } => {
                let mut regs: Vec<Reg> = dst.iter().copied().collect();
                regs.push(*name);
                regs.push(*receiver);
                regs.extend(args);
                if let Some(t) = taint {
                    regs.extend(t.dst);
                    regs.extend(&t.args);
                }
                regs
            }
            Ret { src } => src.iter().copied().collect(),
            Jmp { .. } => vec![],
            Br { cond, .. } => vec![*cond],
        }
    }

    /// The register written by this instruction, if any. Shadow destinations
    /// of a taint-aware `dyncall` are not included.
    pub fn def(&self) -> Option<Reg> {
        use Instruction::*;
        match self {
            Const { dst, .. }
            | SConst { dst, .. }
            | Move { dst, .. }
            | Bin { dst, .. }
            | New { dst, .. }
            | NewArr { dst, .. }
            | ALoad { dst, .. }
            | Get { dst, .. } => Some(*dst),
            SCall { dst, .. } | VCall { dst, .. } | DynCall { dst, .. } => *dst,
            AStore { .. } | Put { .. } | Ret { .. } | Jmp { .. } | Br { .. } => None,
        }
    }

    /// True for instructions after which control never falls through.
    pub fn is_terminator(&self) -> bool {
        matches!(self, Instruction::Ret { .. } | Instruction::Jmp { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Stmt {
    Label(String),
    Instr(Instruction),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodDef {
    pub sig: MethodSig,
    pub is_static: bool,
    /// Abstract methods have no body; only builtin classes declare them.
    pub is_abstract: bool,
    pub regs: u32,
    pub body: Vec<Stmt>,
}

impl MethodDef {
    pub fn new(sig: MethodSig, is_static: bool, regs: u32, body: Vec<Stmt>) -> Self {
        MethodDef { sig, is_static, is_abstract: false, regs, body }
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.body.iter().filter_map(|s| match s {
            Stmt::Instr(i) => Some(i),
            Stmt::Label(_) => None,
        })
    }

    /// Number of registers occupied by incoming arguments (receiver included).
    pub fn arg_slots(&self) -> u32 {
        self.sig.params.len() as u32 + u32::from(!self.is_static)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDef {
    pub name: String,
    pub ty: TypeDesc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDef {
    pub name: String,
    pub superclass: Option<String>,
    pub fields: Vec<FieldDef>,
    pub methods: Vec<MethodDef>,
}

impl ClassDef {
    pub fn new(name: impl Into<String>, superclass: Option<String>) -> Self {
        ClassDef { name: name.into(), superclass, fields: vec![], methods: vec![] }
    }

    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn method(&self, name: &str, params: &[TypeDesc]) -> Option<&MethodDef> {
        self.methods.iter().find(|m| m.sig.name == name && m.sig.params == params)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub entry: Option<MethodSig>,
    pub classes: Vec<ClassDef>,
}

impl Program {
    pub fn class(&self, name: &str) -> Option<&ClassDef> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn methods(&self) -> impl Iterator<Item = &MethodDef> {
        self.classes.iter().flat_map(|c| c.methods.iter())
    }

    /// Signatures of every method declared by the program, in declaration order.
    pub fn method_sigs(&self) -> Vec<MethodSig> {
        self.methods().map(|m| m.sig.clone()).collect()
    }

    pub fn method(&self, sig: &MethodSig) -> Option<&MethodDef> {
        self.class(&sig.owner)?.methods.iter().find(|m| m.sig == *sig)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_owner_signature_parses() {
        let sig: MethodSig = "<com.ibm.icu.util.ULocale$IDParser: void append(char)>".parse().unwrap();
        assert_eq!(sig.owner, "com.ibm.icu.util.ULocale$IDParser");
        assert_eq!(sig.ret, None);
        assert_eq!(sig.name, "append");
        assert_eq!(sig.params, vec![TypeDesc::class("char")]);
        assert_eq!(sig.to_string(), "<com.ibm.icu.util.ULocale$IDParser: void append(char)>");
    }

    #[test]
    fn array_types_render() {
        let t = TypeDesc::array(TypeDesc::Int, 2);
        assert_eq!(t.to_string(), "int[][]");
        assert_eq!(t.element().unwrap().to_string(), "int[]");
        assert!(t.is_multidim_primitive());
        assert!(TypeDesc::array(TypeDesc::Bool, 1).is_primitive_array_1d());
        assert_eq!(TypeDesc::array(t, 1).to_string(), "int[][][]");
    }

    #[test]
    fn sig_order_is_textual() {
        let a: MethodSig = "<A: void z()>".parse().unwrap();
        let b: MethodSig = "<B: void a()>".parse().unwrap();
        assert!(a < b);
    }

    #[test]
    fn sig_order_matches_rendering() {
        let sigs: Vec<MethodSig> = [
            "<A: void f()>",
            "<A: void f(int)>",
            "<A: void f(int[])>",
            "<A: void f(int,int)>",
            "<A: int[][] f()>",
            "<A: int f()>",
            "<A.B: void f()>",
            "<A$C: void f()>",
            "<AB: bool g(A,int)>",
            "<stdlib.Out: void write(int)>",
        ]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
        for a in &sigs {
            for b in &sigs {
                assert_eq!(a.cmp(b), a.to_string().cmp(&b.to_string()), "{a} vs {b}");
            }
        }
    }
}
