use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

use crate::builtins::{self, TAINTED_INT};
use crate::facts::CallEdge;
use crate::instrument::{transform_signature, InstrumentedProgram, ReflectionTable};
use crate::tir::{
    validate_program, BinOp, DynTaint, Hierarchy, Instruction, Literal, MethodDef, MethodSig, Reg, Stmt, TypeDesc,
};

use super::{dispatch_dynamic, Halt, RunConfig, RunReport, ViolationRecord, MAX_CALL_DEPTH};

/// Arrays longer than this are refused rather than allocated.
const MAX_ARRAY_LEN: i64 = 1 << 24;

type ClassId = usize;

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Int(i64),
    Str(Rc<str>),
    Ref(usize),
    Null,
}

#[derive(Debug)]
enum Obj {
    Object { class: ClassId, fields: Vec<Value> },
    Array { elem: Rc<TypeDesc>, data: Vec<Value> },
}

#[derive(Debug)]
struct ClassInfo {
    name: String,
    parent: Option<ClassId>,
    is_box: bool,
    layout: Vec<(String, TypeDesc)>,
}

#[derive(Debug, Clone)]
enum Intr {
    Read {
        tainted: bool,
        mask: u64,
    },
    ReadBuf {
        tainted: bool,
        mask: u64,
    },
    /// `write`, `print`, `exec`; `sink` is set for sink seeds.
    Emit {
        tainted: bool,
        sink: Option<Rc<MethodSig>>,
    },
    Map {
        tainted: bool,
    },
    Invoke,
    Zeros,
    Lift(u32),
    Lower(u32),
}

#[derive(Debug, Clone)]
enum Callee {
    App(usize),
    Intr(Intr, Rc<MethodSig>),
    Abstract(Rc<MethodSig>),
}

#[derive(Debug)]
enum Op {
    Const(Reg, Value),
    Move(Reg, Reg),
    Bin(BinOp, Reg, Reg, Reg),
    New(Reg, ClassId),
    NewArr(Reg, Rc<TypeDesc>, Reg),
    ALoad(Reg, Reg, Reg),
    AStore(Reg, Reg, Reg),
    Get(Reg, Reg, ClassId, usize),
    Put(Reg, ClassId, usize, Reg),
    SCall(Option<Reg>, Callee, Vec<Reg>),
    VCall(Option<Reg>, usize, Reg, Vec<Reg>),
    DynCall { dst: Option<Reg>, name: Reg, recv: Reg, args: Vec<Reg>, taint: Option<DynTaint> },
    Ret(Option<Reg>),
    Jmp(usize),
    Br(Reg, usize),
}

#[derive(Debug)]
struct MethodInfo {
    sig: Rc<MethodSig>,
    regs: u32,
    code: Vec<Op>,
    instrumented: bool,
}

#[derive(Debug)]
struct VSite {
    declared: MethodSig,
    owner: ClassId,
}

/// Where a returning call delivers its value in the caller frame.
#[derive(Debug, Clone, Copy)]
enum RetAction {
    Discard,
    Store(Reg),
    Unbox {
        val: Reg,
        taint: Option<Reg>,
    },
    WithShadow {
        dst: Reg,
        shadow: Reg,
    },
    /// Wraps a plain int result in an untainted `runtime.TaintedInt`.
    BoxInt(Reg),
}

impl RetAction {
    fn store(dst: Option<Reg>) -> Self {
        dst.map_or(RetAction::Discard, RetAction::Store)
    }
}

#[derive(Debug)]
struct Frame {
    method: usize,
    pc: usize,
    regs: Vec<Value>,
    ret: RetAction,
    instrumented: bool,
}

enum Stop {
    Budget,
    Error(String),
}

impl From<String> for Stop {
    fn from(s: String) -> Self {
        Stop::Error(s)
    }
}

type Step<T = ()> = Result<T, Stop>;

fn err<T>(msg: impl Into<String>) -> Step<T> {
    Err(Stop::Error(msg.into()))
}

pub(super) struct Machine<'p> {
    h: Hierarchy<'p>,
    table: &'p ReflectionTable,
    cfg: &'p RunConfig,
    classes: Vec<ClassInfo>,
    class_ids: HashMap<String, ClassId>,
    methods: Rc<Vec<MethodInfo>>,
    method_ids: HashMap<MethodSig, usize>,
    sites: Vec<VSite>,
    vcache: HashMap<(usize, ClassId), Callee>,
    entry: usize,

    heap: Vec<Obj>,
    frames: Vec<Frame>,
    input_pos: usize,
    output: Vec<i64>,
    violations: Vec<ViolationRecord>,
    sink_calls: u64,
    count: u64,
    trace: Option<BTreeSet<CallEdge>>,
}

impl<'p> Machine<'p> {
    pub(super) fn load(ip: &'p InstrumentedProgram, cfg: &'p RunConfig) -> Result<Self, String> {
        let errors = validate_program(&ip.program);
        if let Some(e) = errors.first() {
            return Err(format!("invalid program: {e}"));
        }
        if cfg.budget == 0 {
            return Err("instruction budget must be positive".into());
        }
        let h = Hierarchy::new(&ip.program);
        let mut m = Machine {
            h,
            table: &ip.table,
            cfg,
            classes: Vec::new(),
            class_ids: HashMap::new(),
            methods: Rc::new(Vec::new()),
            method_ids: HashMap::new(),
            sites: Vec::new(),
            vcache: HashMap::new(),
            entry: 0,
            heap: Vec::new(),
            frames: Vec::new(),
            input_pos: 0,
            output: Vec::new(),
            violations: Vec::new(),
            sink_calls: 0,
            count: 0,
            trace: cfg.trace_calls.then(BTreeSet::new),
        };
        m.load_classes(ip);
        let defs: Vec<&MethodDef> = ip.program.methods().collect();
        for (i, d) in defs.iter().enumerate() {
            m.method_ids.insert(d.sig.clone(), i);
        }
        let mut methods = Vec::with_capacity(defs.len());
        for d in &defs {
            let code = m.compile(d)?;
            methods.push(MethodInfo {
                sig: Rc::new(d.sig.clone()),
                regs: d.regs,
                code,
                instrumented: ip.is_instrumented(&d.sig),
            });
        }
        m.methods = Rc::new(methods);
        let entry = ip.program.entry.as_ref().ok_or("no entry")?;
        m.entry = *m.method_ids.get(entry).ok_or("entry is not a program method")?;
        Ok(m)
    }

    fn load_classes(&mut self, ip: &InstrumentedProgram) {
        let names: Vec<String> = builtins::classes()
            .iter()
            .map(|c| c.name.clone())
            .chain(ip.program.classes.iter().map(|c| c.name.clone()))
            .collect();
        for n in &names {
            let id = self.classes.len();
            if self.class_ids.insert(n.clone(), id).is_some() {
                continue;
            }
            let layout = self.h.instance_fields(n).into_iter().map(|(_, f)| (f.name.clone(), f.ty.clone())).collect();
            self.classes.push(ClassInfo { name: n.clone(), parent: None, is_box: builtins::is_box_class(n), layout });
        }
        for id in 0..self.classes.len() {
            let parent = self
                .h
                .class(&self.classes[id].name)
                .and_then(|c| c.superclass.as_deref())
                .and_then(|s| self.class_ids.get(s).copied());
            self.classes[id].parent = parent;
        }
    }

    fn class_id(&self, name: &str) -> Result<ClassId, String> {
        self.class_ids.get(name).copied().ok_or_else(|| format!("unknown class {name}"))
    }

    fn field_slot(&self, class: &str, field: &str) -> Result<(ClassId, usize), String> {
        let id = self.class_id(class)?;
        let (decl, _) = self.h.resolve_field(class, field).ok_or_else(|| format!("no field {class}.{field}"))?;
        let slot = self
            .h
            .instance_fields(class)
            .iter()
            .position(|(owner, f)| *owner == decl.name && f.name == field)
            .ok_or_else(|| format!("no slot for {class}.{field}"))?;
        Ok((id, slot))
    }

    fn intrinsic(&self, sig: &MethodSig) -> Option<Intr> {
        let tainted = sig.is_mangled();
        let plain = sig.name.trim_end_matches(crate::tir::MANGLE_SUFFIX);
        let plain_sig = |params: usize, ret: Option<TypeDesc>| {
            MethodSig::new(sig.owner.clone(), ret, plain, sig.params[..params].to_vec())
        };
        let label = |s: &MethodSig| self.cfg.seeds.label_bit(s).map_or(0, |b| 1u64 << b);
        Some(match (sig.owner.as_str(), plain) {
            ("stdlib.In", "read") => Intr::Read { tainted, mask: label(&plain_sig(0, Some(TypeDesc::Int))) },
            ("stdlib.In", "readBuf") => Intr::ReadBuf { tainted, mask: label(&plain_sig(1, None)) },
            ("stdlib.Out", "write" | "print") | ("stdlib.Sys", "exec") => {
                let p = plain_sig(1, None);
                Intr::Emit { tainted, sink: self.cfg.seeds.is_sink(&p).then(|| Rc::new(p)) }
            }
            ("stdlib.Hof", "map") => Intr::Map { tainted },
            ("stdlib.Hof", "invoke") => Intr::Invoke,
            ("runtime.Taint", "zeros") => Intr::Zeros,
            ("runtime.Taint", "lift") => Intr::Lift(sig.params[0].dims()),
            ("runtime.Taint", "lower") => Intr::Lower(sig.ret.as_ref().map_or(0, TypeDesc::dims)),
            _ => return None,
        })
    }

    /// The method `sig` resolves to when looked up from `class`.
    fn resolve_from(&self, class: &str, sig: &MethodSig) -> Result<Callee, String> {
        let def = self
            .h
            .resolve_method(class, &sig.name, &sig.params)
            .map(|(_, m)| m)
            .filter(|m| m.sig.ret == sig.ret)
            .ok_or_else(|| format!("no method {} in {class}", sig))?;
        if def.is_abstract {
            return Ok(Callee::Abstract(Rc::new(def.sig.clone())));
        }
        if def.sig.is_intrinsic() {
            let intr = self.intrinsic(&def.sig).ok_or_else(|| format!("no native code for {}", def.sig))?;
            return Ok(Callee::Intr(intr, Rc::new(def.sig.clone())));
        }
        self.method_ids.get(&def.sig).map(|&i| Callee::App(i)).ok_or_else(|| format!("no body for {}", def.sig))
    }

    fn compile(&mut self, d: &MethodDef) -> Result<Vec<Op>, String> {
        let mut labels = HashMap::new();
        let mut pc = 0;
        for s in &d.body {
            match s {
                Stmt::Label(l) => {
                    labels.insert(l.as_str(), pc);
                }
                Stmt::Instr(_) => pc += 1,
            }
        }
        let label = |l: &str| labels.get(l).copied().ok_or_else(|| format!("unknown label {l}"));
        let mut code = Vec::with_capacity(pc);
        for i in d.instructions() {
            code.push(match i {
                Instruction::Const { dst, value } => Op::Const(
                    *dst,
                    match value {
                        Literal::Int(v) => Value::Int(*v),
                        Literal::Null => Value::Null,
                    },
                ),
                Instruction::SConst { dst, value } => Op::Const(*dst, Value::Str(Rc::from(value.as_str()))),
                Instruction::Move { dst, src } => Op::Move(*dst, *src),
                Instruction::Bin { op, dst, lhs, rhs } => Op::Bin(*op, *dst, *lhs, *rhs),
                Instruction::New { dst, class } => Op::New(*dst, self.class_id(class)?),
                Instruction::NewArr { dst, ty, len } => {
                    let elem = ty.element().ok_or_else(|| format!("newarr of non-array {ty}"))?;
                    Op::NewArr(*dst, Rc::new(elem), *len)
                }
                Instruction::ALoad { dst, array, index } => Op::ALoad(*dst, *array, *index),
                Instruction::AStore { array, index, src } => Op::AStore(*array, *index, *src),
                Instruction::Get { dst, object, field } => {
                    let (c, slot) = self.field_slot(&field.class, &field.field)?;
                    Op::Get(*dst, *object, c, slot)
                }
                Instruction::Put { object, field, src } => {
                    let (c, slot) = self.field_slot(&field.class, &field.field)?;
                    Op::Put(*object, c, slot, *src)
                }
                Instruction::SCall { dst, target, args } => {
                    Op::SCall(*dst, self.resolve_from(&target.owner, target)?, args.clone())
                }
                Instruction::VCall { dst, target, receiver, args } => {
                    self.sites.push(VSite { declared: target.clone(), owner: self.class_id(&target.owner)? });
                    Op::VCall(*dst, self.sites.len() - 1, *receiver, args.clone())
                }
                Instruction::DynCall { dst, name, receiver, args, taint } => {
                    Op::DynCall { dst: *dst, name: *name, recv: *receiver, args: args.clone(), taint: taint.clone() }
                }
                Instruction::Ret { src } => Op::Ret(*src),
                Instruction::Jmp { label: l } => Op::Jmp(label(l)?),
                Instruction::Br { cond, label: l } => Op::Br(*cond, label(l)?),
            });
        }
        Ok(code)
    }

    pub(super) fn execute(mut self) -> RunReport {
        let halted = match self.run_loop() {
            Ok(()) => Halt::Normal,
            Err(Stop::Budget) => Halt::BudgetExceeded,
            Err(Stop::Error(m)) => Halt::RunError(m),
        };
        RunReport {
            output: self.output,
            violations: self.violations,
            instructions: self.count,
            calls: self.trace.map(|t| t.into_iter().collect()),
            halted,
        }
    }

    fn run_loop(&mut self) -> Step {
        let methods = Rc::clone(&self.methods);
        self.enter(self.entry, vec![], RetAction::Discard)?;
        while let Some(frame) = self.frames.last_mut() {
            let code = &methods[frame.method].code;
            let Some(op) = code.get(frame.pc) else {
                return err(format!("fell off the end of {}", methods[frame.method].sig));
            };
            frame.pc += 1;
            self.count += 1;
            if self.count > self.cfg.budget {
                self.count = self.cfg.budget;
                return Err(Stop::Budget);
            }
            self.step(op)?;
        }
        Ok(())
    }

    fn frame(&self) -> &Frame {
        self.frames.last().expect("active frame")
    }

    fn get(&self, r: Reg) -> Step<Value> {
        self.frame().regs.get(r.index()).cloned().ok_or_else(|| Stop::Error(format!("register {r} out of range")))
    }

    fn int(&self, r: Reg) -> Step<i64> {
        match self.get(r)? {
            Value::Int(v) => Ok(v),
            other => err(format!("expected int in {r}, found {}", self.describe(&other))),
        }
    }

    fn describe(&self, v: &Value) -> String {
        match v {
            Value::Int(i) => format!("int {i}"),
            Value::Str(s) => format!("string {s:?}"),
            Value::Null => "null".into(),
            Value::Ref(i) => match &self.heap[*i] {
                Obj::Object { class, .. } => format!("object of {}", self.classes[*class].name),
                Obj::Array { elem, .. } => format!("{elem}[] array"),
            },
        }
    }

    fn is_boxed(&self, v: &Value) -> bool {
        match v {
            Value::Ref(i) => match &self.heap[*i] {
                Obj::Object { class, .. } => self.classes[*class].is_box,
                Obj::Array { elem, .. } => matches!(elem.base(), TypeDesc::Class(c) if builtins::is_box_class(c)),
            },
            _ => false,
        }
    }

    fn set(&mut self, r: Reg, v: Value) -> Step {
        let frame = self.frames.last().expect("active frame");
        if !frame.instrumented && self.is_boxed(&v) {
            return err(format!(
                "boundary: {} reached uninstrumented {}",
                self.describe(&v),
                self.methods[frame.method].sig
            ));
        }
        let frame = self.frames.last_mut().expect("active frame");
        match frame.regs.get_mut(r.index()) {
            Some(slot) => {
                *slot = v;
                Ok(())
            }
            None => err(format!("register {r} out of range")),
        }
    }

    fn alloc(&mut self, o: Obj) -> Value {
        self.heap.push(o);
        Value::Ref(self.heap.len() - 1)
    }

    fn is_sub(&self, mut c: ClassId, sup: ClassId) -> bool {
        loop {
            if c == sup {
                return true;
            }
            match self.classes[c].parent {
                Some(p) if p != c => c = p,
                _ => return false,
            }
        }
    }

    fn object(&self, v: &Value) -> Step<(usize, ClassId)> {
        match v {
            Value::Ref(i) => match &self.heap[*i] {
                Obj::Object { class, .. } => Ok((*i, *class)),
                Obj::Array { .. } => err(format!("expected object, found {}", self.describe(v))),
            },
            Value::Null => err("null dereference"),
            other => err(format!("expected object, found {}", self.describe(other))),
        }
    }

    fn array(&self, v: &Value) -> Step<usize> {
        match v {
            Value::Ref(i) if matches!(self.heap[*i], Obj::Array { .. }) => Ok(*i),
            Value::Null => err("null dereference"),
            other => err(format!("expected array, found {}", self.describe(other))),
        }
    }

    fn array_len(&self, a: usize) -> usize {
        match &self.heap[a] {
            Obj::Array { data, .. } => data.len(),
            Obj::Object { .. } => 0,
        }
    }

    fn new_array(&mut self, elem: Rc<TypeDesc>, len: usize) -> Value {
        let fill = if elem.is_primitive() { Value::Int(0) } else { Value::Null };
        self.alloc(Obj::Array { elem, data: vec![fill; len] })
    }

    fn new_object(&mut self, class: ClassId) -> Value {
        let fields = self.classes[class]
            .layout
            .iter()
            .map(|(_, t)| if t.is_primitive() { Value::Int(0) } else { Value::Null })
            .collect();
        self.alloc(Obj::Object { class, fields })
    }

    fn elem_ok(&self, elem: &TypeDesc, v: &Value) -> bool {
        match v {
            Value::Int(_) => elem.is_primitive(),
            Value::Null => !elem.is_primitive(),
            Value::Str(_) => !elem.is_primitive() && elem.dims() == 0,
            Value::Ref(i) => {
                if elem.is_primitive() {
                    return false;
                }
                match (&self.heap[*i], elem) {
                    (Obj::Array { elem: e, .. }, TypeDesc::Array { .. }) => {
                        elem.element()
                            .is_some_and(|want| want.is_primitive() == e.is_primitive() && e.dims() == want.dims())
                            || !matches!(elem.base(), TypeDesc::Int | TypeDesc::Bool)
                    }
                    (Obj::Array { .. }, _) => false,
                    (Obj::Object { class, .. }, TypeDesc::Class(c)) => {
                        self.class_ids.get(c).is_none_or(|&want| self.is_sub(*class, want))
                    }
                    (Obj::Object { .. }, _) => false,
                }
            }
        }
    }

    fn step(&mut self, op: &Op) -> Step {
        match op {
            Op::Const(d, v) => self.set(*d, v.clone()),
            Op::Move(d, s) => {
                let v = self.get(*s)?;
                self.set(*d, v)
            }
            Op::Bin(op, d, l, r) => {
                let (a, b) = (self.int(*l)?, self.int(*r)?);
                let v = match op {
                    BinOp::Add => a.wrapping_add(b),
                    BinOp::Sub => a.wrapping_sub(b),
                    BinOp::Mul => a.wrapping_mul(b),
                    BinOp::Div if b == 0 => return err("division by zero"),
                    BinOp::Div => a.wrapping_div(b),
                    BinOp::Or => a | b,
                    BinOp::And => a & b,
                    BinOp::Xor => a ^ b,
                    BinOp::Lt => i64::from(a < b),
                    BinOp::Eq => i64::from(a == b),
                };
                self.set(*d, Value::Int(v))
            }
            Op::New(d, c) => {
                let v = self.new_object(*c);
                self.set(*d, v)
            }
            Op::NewArr(d, elem, len) => {
                let n = self.int(*len)?;
                if !(0..=MAX_ARRAY_LEN).contains(&n) {
                    return err(format!("bad array length {n}"));
                }
                let v = self.new_array(Rc::clone(elem), n as usize);
                self.set(*d, v)
            }
            Op::ALoad(d, a, i) => {
                let arr = self.array(&self.get(*a)?)?;
                let idx = self.int(*i)?;
                let Obj::Array { data, .. } = &self.heap[arr] else { unreachable!() };
                let v = usize::try_from(idx)
                    .ok()
                    .and_then(|k| data.get(k))
                    .cloned()
                    .ok_or_else(|| Stop::Error(format!("index {idx} out of bounds for length {}", data.len())))?;
                self.set(*d, v)
            }
            Op::AStore(a, i, s) => {
                let arr = self.array(&self.get(*a)?)?;
                let idx = self.int(*i)?;
                let v = self.get(*s)?;
                let Obj::Array { elem, .. } = &self.heap[arr] else { unreachable!() };
                if !self.elem_ok(elem, &v) {
                    return err(format!("cannot store {} into {elem}[] array", self.describe(&v)));
                }
                let Obj::Array { data, .. } = &mut self.heap[arr] else { unreachable!() };
                let len = data.len();
                let slot = usize::try_from(idx)
                    .ok()
                    .and_then(|k| data.get_mut(k))
                    .ok_or_else(|| Stop::Error(format!("index {idx} out of bounds for length {len}")))?;
                *slot = v;
                Ok(())
            }
            Op::Get(d, o, c, slot) => {
                let (obj, class) = self.object(&self.get(*o)?)?;
                if !self.is_sub(class, *c) {
                    return err(format!("field of {} read from {}", self.classes[*c].name, self.classes[class].name));
                }
                let Obj::Object { fields, .. } = &self.heap[obj] else { unreachable!() };
                let v = fields[*slot].clone();
                self.set(*d, v)
            }
            Op::Put(o, c, slot, s) => {
                let (obj, class) = self.object(&self.get(*o)?)?;
                if !self.is_sub(class, *c) {
                    return err(format!("field of {} written on {}", self.classes[*c].name, self.classes[class].name));
                }
                let v = self.get(*s)?;
                let ty = &self.classes[class].layout[*slot].1;
                if !self.elem_ok(ty, &v) {
                    return err(format!("cannot store {} into field of type {ty}", self.describe(&v)));
                }
                let Obj::Object { fields, .. } = &mut self.heap[obj] else { unreachable!() };
                fields[*slot] = v;
                Ok(())
            }
            Op::SCall(d, callee, args) => {
                let vals = args.iter().map(|a| self.get(*a)).collect::<Step<Vec<_>>>()?;
                self.call(callee.clone(), vals, RetAction::store(*d))
            }
            Op::VCall(d, site, recv, args) => {
                let rv = self.get(*recv)?;
                let (_, class) = self.object(&rv)?;
                let callee = self.virtual_target(*site, class)?;
                let mut vals = vec![rv];
                for a in args {
                    vals.push(self.get(*a)?);
                }
                self.call(callee, vals, RetAction::store(*d))
            }
            Op::DynCall { dst, name, recv, args, taint } => self.dyncall(*dst, *name, *recv, args, taint.as_ref()),
            Op::Ret(src) => {
                let v = src.map(|r| self.get(r)).transpose()?;
                let frame = self.frames.pop().expect("active frame");
                if self.frames.is_empty() {
                    return Ok(());
                }
                self.deliver(frame.ret, v)
            }
            Op::Jmp(t) => {
                self.frames.last_mut().expect("active frame").pc = *t;
                Ok(())
            }
            Op::Br(c, t) => {
                if self.int(*c)? != 0 {
                    self.frames.last_mut().expect("active frame").pc = *t;
                }
                Ok(())
            }
        }
    }

    fn virtual_target(&mut self, site: usize, class: ClassId) -> Step<Callee> {
        if let Some(c) = self.vcache.get(&(site, class)) {
            return Ok(c.clone());
        }
        let s = &self.sites[site];
        if !self.is_sub(class, s.owner) {
            return err(format!("receiver of {} is a {}", s.declared, self.classes[class].name));
        }
        let callee = self.resolve_from(&self.classes[class].name, &s.declared)?;
        self.vcache.insert((site, class), callee.clone());
        Ok(callee)
    }

    fn callee_sig(&self, c: &Callee) -> Rc<MethodSig> {
        match c {
            Callee::App(i) => Rc::clone(&self.methods[*i].sig),
            Callee::Intr(_, s) | Callee::Abstract(s) => Rc::clone(s),
        }
    }

    fn record_call(&mut self, caller: Rc<MethodSig>, callee: &Callee) {
        if self.trace.is_some() {
            let edge = CallEdge::new((*caller).clone(), (*self.callee_sig(callee)).clone());
            if let Some(t) = self.trace.as_mut() {
                t.insert(edge);
            }
        }
    }

    fn call(&mut self, callee: Callee, args: Vec<Value>, ret: RetAction) -> Step {
        let caller = Rc::clone(&self.methods[self.frame().method].sig);
        self.record_call(caller, &callee);
        match callee {
            Callee::App(i) => self.enter(i, args, ret),
            Callee::Intr(intr, sig) => self.native(&intr, &sig, args, ret),
            Callee::Abstract(sig) => err(format!("abstract method {sig} has no implementation")),
        }
    }

    fn enter(&mut self, method: usize, args: Vec<Value>, ret: RetAction) -> Step {
        if self.frames.len() >= MAX_CALL_DEPTH {
            return err("call depth exceeded");
        }
        let info = &self.methods[method];
        let instrumented = info.instrumented;
        if !instrumented {
            if let Some(v) = args.iter().find(|v| self.is_boxed(v)) {
                return err(format!("boundary: {} passed to uninstrumented {}", self.describe(v), info.sig));
            }
        }
        let mut regs = vec![Value::Int(0); info.regs as usize];
        if args.len() > regs.len() {
            return err(format!("{} arguments for {}", args.len(), info.sig));
        }
        for (slot, v) in regs.iter_mut().zip(args) {
            *slot = v;
        }
        self.frames.push(Frame { method, pc: 0, regs, ret, instrumented });
        Ok(())
    }

    fn deliver(&mut self, ret: RetAction, v: Option<Value>) -> Step {
        match ret {
            RetAction::Discard => Ok(()),
            RetAction::Store(d) => self.set(d, v.unwrap_or(Value::Int(0))),
            RetAction::Unbox { val, taint } => {
                let (obj, _) = self.object(&v.unwrap_or(Value::Null))?;
                let Obj::Object { fields, .. } = &self.heap[obj] else { unreachable!() };
                let (a, b) = (fields[0].clone(), fields[1].clone());
                self.set(val, a)?;
                match taint {
                    Some(t) => self.set(t, b),
                    None => Ok(()),
                }
            }
            RetAction::BoxInt(d) => {
                let b = self.tainted_int(v.unwrap_or(Value::Int(0)), 0)?;
                self.set(d, b)
            }
            RetAction::WithShadow { dst, shadow } => {
                let v = v.unwrap_or(Value::Int(0));
                let sv = self.default_shadow(&v);
                self.set(dst, v)?;
                self.set(shadow, sv)
            }
        }
    }

    fn tainted_int(&mut self, v: Value, taint: u64) -> Step<Value> {
        let c = self.class_id(TAINTED_INT)?;
        let b = self.new_object(c);
        if let Value::Ref(i) = b {
            if let Obj::Object { fields, .. } = &mut self.heap[i] {
                fields[0] = v;
                fields[1] = Value::Int(taint as i64);
            }
        }
        Ok(b)
    }

    /// Zero taint for a value arriving from code that tracks none.
    fn default_shadow(&mut self, v: &Value) -> Value {
        match v {
            Value::Ref(i) => match &self.heap[*i] {
                Obj::Array { elem, data } if elem.is_primitive() => {
                    let n = data.len();
                    self.new_array(Rc::new(TypeDesc::Int), n)
                }
                _ => Value::Int(0),
            },
            _ => Value::Int(0),
        }
    }

    fn dyncall(&mut self, dst: Option<Reg>, name: Reg, recv: Reg, args: &[Reg], taint: Option<&DynTaint>) -> Step {
        let name = match self.get(name)? {
            Value::Str(s) => s,
            other => return err(format!("dyncall name is {}", self.describe(&other))),
        };
        let rv = self.get(recv)?;
        let (_, class) = self.object(&rv)?;
        let chain: Vec<&str> = self.h.ancestry(&self.classes[class].name).iter().map(|c| c.name.as_str()).collect();
        let (sig, entry) = dispatch_dynamic(self.table, &chain, &name, args.len(), taint.is_some())
            .map_err(|e| Stop::Error(format!("unresolved reflective call: {e}")))?;
        let mangled = sig != &entry.original;
        let callee = self
            .method_ids
            .get(sig)
            .map(|&i| Callee::App(i))
            .ok_or_else(|| Stop::Error(format!("reflection table names missing {sig}")))?;
        let mut vals = vec![rv];
        for a in args {
            vals.push(self.get(*a)?);
        }
        let ret = match (taint, mangled) {
            (Some(t), true) => {
                let tr = transform_signature(&entry.original);
                for (i, sh) in tr.shadow_params.iter().enumerate() {
                    if sh.is_some() {
                        vals.push(self.get(t.args[i])?);
                    }
                }
                match (dst, tr.boxed_return) {
                    (Some(d), Some(_)) => RetAction::Unbox { val: d, taint: t.dst },
                    _ => RetAction::store(dst),
                }
            }
            (Some(DynTaint { dst: Some(s), .. }), false) => match dst {
                Some(d) => RetAction::WithShadow { dst: d, shadow: *s },
                None => RetAction::Discard,
            },
            _ => RetAction::store(dst),
        };
        self.call(callee, vals, ret)
    }

    fn next_input(&mut self) -> Option<i64> {
        let v = self.cfg.input.get(self.input_pos).copied();
        if v.is_some() {
            self.input_pos += 1;
        }
        v
    }

    fn native(&mut self, intr: &Intr, sig: &Rc<MethodSig>, args: Vec<Value>, ret: RetAction) -> Step {
        match intr {
            Intr::Read { tainted, mask } => {
                let (v, t) = match self.next_input() {
                    Some(v) => (v, *mask),
                    None => (0, 0),
                };
                if *tainted {
                    let b = self.tainted_int(Value::Int(v), t)?;
                    self.deliver(ret, Some(b))
                } else {
                    self.deliver(ret, Some(Value::Int(v)))
                }
            }
            Intr::ReadBuf { tainted, mask } => {
                let arr = self.array(&args[0])?;
                let shadow = if *tainted { Some(self.array(&args[1])?) } else { None };
                for k in 0..self.array_len(arr) {
                    let (v, t) = match self.next_input() {
                        Some(v) => (v, *mask),
                        None => (0, 0),
                    };
                    if let Obj::Array { data, .. } = &mut self.heap[arr] {
                        data[k] = Value::Int(v);
                    }
                    if let Some(s) = shadow {
                        if let Obj::Array { data, .. } = &mut self.heap[s] {
                            if let Some(slot) = data.get_mut(k) {
                                *slot = Value::Int(t as i64);
                            }
                        }
                    }
                }
                self.deliver(ret, None)
            }
            Intr::Emit { tainted, sink } => {
                let v = match &args[0] {
                    Value::Int(v) => *v,
                    other => return err(format!("{sig} given {}", self.describe(other))),
                };
                self.output.push(v);
                if let Some(sink) = sink {
                    self.sink_calls += 1;
                    let t = match args.get(1) {
                        Some(Value::Int(t)) if *tainted => *t as u64,
                        _ => 0,
                    };
                    if t != 0 {
                        let call_stack = self.frames.iter().map(|f| (*self.methods[f.method].sig).clone()).collect();
                        self.violations.push(ViolationRecord {
                            sink: (**sink).clone(),
                            mask: t,
                            ordinal: self.sink_calls,
                            call_stack,
                        });
                    }
                }
                self.deliver(ret, None)
            }
            Intr::Map { tainted } => {
                let (_, class) = self.object(&args[0])?;
                let cname = self.classes[class].name.clone();
                let plain: MethodSig = "<stdlib.Fn: int apply(int)>".parse().expect("builtin");
                let mangled = transform_signature(&plain).mangled.expect("apply changes");
                let twin = self.resolve_from(&cname, &mangled).ok().filter(|c| matches!(c, Callee::App(_)));
                let (callee, vals, ret) = match (tainted, twin) {
                    (true, Some(c)) => (c, args, ret),
                    (true, None) => {
                        let ret = match ret {
                            RetAction::Store(d) => RetAction::BoxInt(d),
                            other => other,
                        };
                        (self.resolve_from(&cname, &plain)?, vec![args[0].clone(), args[1].clone()], ret)
                    }
                    (false, Some(c)) => {
                        let ret = match ret {
                            RetAction::Store(d) => RetAction::Unbox { val: d, taint: None },
                            other => other,
                        };
                        (c, vec![args[0].clone(), args[1].clone(), Value::Int(0)], ret)
                    }
                    (false, None) => (self.resolve_from(&cname, &plain)?, args, ret),
                };
                self.record_call(Rc::clone(sig), &callee);
                self.dispatch_native_callback(callee, vals, ret)
            }
            Intr::Invoke => {
                let (_, class) = self.object(&args[0])?;
                let cname = self.classes[class].name.clone();
                let run: MethodSig = "<stdlib.Act: void run()>".parse().expect("builtin");
                let callee = self.resolve_from(&cname, &run)?;
                self.record_call(Rc::clone(sig), &callee);
                self.dispatch_native_callback(callee, args, ret)
            }
            Intr::Zeros => {
                let v = match &args[0] {
                    Value::Null => Value::Null,
                    a => {
                        let n = self.array_len(self.array(a)?);
                        self.new_array(Rc::new(TypeDesc::Int), n)
                    }
                };
                self.deliver(ret, Some(v))
            }
            Intr::Lift(dims) => {
                let v = self.lift(&args[0], *dims)?;
                self.deliver(ret, Some(v))
            }
            Intr::Lower(dims) => {
                let v = self.lower(&args[0], *dims)?;
                self.deliver(ret, Some(v))
            }
        }
    }

    fn dispatch_native_callback(&mut self, callee: Callee, args: Vec<Value>, ret: RetAction) -> Step {
        match callee {
            Callee::App(i) => self.enter(i, args, ret),
            Callee::Intr(intr, sig) => self.native(&intr, &sig, args, ret),
            Callee::Abstract(sig) => err(format!("abstract method {sig} has no implementation")),
        }
    }

    fn array_items(&self, a: usize) -> (Rc<TypeDesc>, Vec<Value>) {
        match &self.heap[a] {
            Obj::Array { elem, data } => (Rc::clone(elem), data.clone()),
            Obj::Object { .. } => unreachable!("checked by array()"),
        }
    }

    /// Wraps each innermost primitive row in a `runtime.TaintedIntArray`
    /// sharing the row and carrying a zero shadow row.
    fn lift(&mut self, v: &Value, dims: u32) -> Step<Value> {
        if *v == Value::Null {
            return Ok(Value::Null);
        }
        let a = self.array(v)?;
        let (_, items) = self.array_items(a);
        let tia = self.class_id(builtins::TAINTED_INT_ARRAY)?;
        let elem = builtins::lift_type(&TypeDesc::array(TypeDesc::Int, dims - 1));
        let elem = if dims == 2 { TypeDesc::class(builtins::TAINTED_INT_ARRAY) } else { elem };
        let mut out = Vec::with_capacity(items.len());
        for item in &items {
            out.push(if dims == 2 {
                match item {
                    Value::Null => Value::Null,
                    row => {
                        let n = self.array_len(self.array(row)?);
                        let shadow = self.new_array(Rc::new(TypeDesc::Int), n);
                        let b = self.new_object(tia);
                        if let Value::Ref(i) = b {
                            if let Obj::Object { fields, .. } = &mut self.heap[i] {
                                fields[0] = row.clone();
                                fields[1] = shadow;
                            }
                        }
                        b
                    }
                }
            } else {
                self.lift(item, dims - 1)?
            });
        }
        Ok(self.alloc(Obj::Array { elem: Rc::new(elem), data: out }))
    }

    fn lower(&mut self, v: &Value, dims: u32) -> Step<Value> {
        if *v == Value::Null {
            return Ok(Value::Null);
        }
        let a = self.array(v)?;
        let (_, items) = self.array_items(a);
        let mut out = Vec::with_capacity(items.len());
        for item in &items {
            out.push(if dims == 2 {
                match item {
                    Value::Null => Value::Null,
                    b => {
                        let (obj, _) = self.object(b)?;
                        let Obj::Object { fields, .. } = &self.heap[obj] else { unreachable!() };
                        fields[0].clone()
                    }
                }
            } else {
                self.lower(item, dims - 1)?
            });
        }
        let elem = TypeDesc::array(TypeDesc::Int, dims - 1);
        Ok(self.alloc(Obj::Array { elem: Rc::new(elem), data: out }))
    }
}
