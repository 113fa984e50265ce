use std::fmt::Write;

use super::{DynTaint, Instruction, Literal, MethodDef, Program, Reg, Stmt};

fn opt_reg(r: Option<Reg>) -> String {
    r.map_or_else(|| "_".to_string(), |r| r.to_string())
}

fn join_regs(out: &mut String, regs: &[Reg]) {
    for r in regs {
        let _ = write!(out, ", {r}");
    }
}

/// Renders one instruction or label without indentation.
pub fn emit_stmt(stmt: &Stmt) -> String {
    let instr = match stmt {
        Stmt::Label(l) => return format!("{l}:"),
        Stmt::Instr(i) => i,
    };
    let mut s = String::new();
    match instr {
        Instruction::Const { dst, value } => match value {
            Literal::Int(v) => write!(s, "const {dst}, {v}"),
            Literal::Null => write!(s, "const {dst}, null"),
        }
        .unwrap(),
        Instruction::SConst { dst, value } => write!(s, "sconst {dst}, \"{value}\"").unwrap(),
        Instruction::Move { dst, src } => write!(s, "move {dst}, {src}").unwrap(),
        Instruction::Bin { op, dst, lhs, rhs } => write!(s, "bin {}, {dst}, {lhs}, {rhs}", op.as_str()).unwrap(),
        Instruction::New { dst, class } => write!(s, "new {dst}, {class}").unwrap(),
        Instruction::NewArr { dst, ty, len } => write!(s, "newarr {dst}, {ty}, {len}").unwrap(),
        Instruction::ALoad { dst, array, index } => write!(s, "aload {dst}, {array}, {index}").unwrap(),
        Instruction::AStore { array, index, src } => write!(s, "astore {array}, {index}, {src}").unwrap(),
        Instruction::Get { dst, object, field } => write!(s, "get {dst}, {object}, {field}").unwrap(),
        Instruction::Put { object, field, src } => write!(s, "put {object}, {field}, {src}").unwrap(),
        Instruction::SCall { dst, target, args } => {
            write!(s, "scall {}, {target}", opt_reg(*dst)).unwrap();
            join_regs(&mut s, args);
        }
        Instruction::VCall { dst, target, receiver, args } => {
            write!(s, "vcall {}, {target}, {receiver}", opt_reg(*dst)).unwrap();
            join_regs(&mut s, args);
        }
        Instruction::DynCall { dst, name, receiver, args, taint } => match taint {
            None => {
                write!(s, "dyncall {}, {name}, {receiver}", opt_reg(*dst)).unwrap();
                join_regs(&mut s, args);
            }
            Some(DynTaint { dst: dst_shadow, args: shadows }) => {
                write!(s, "dyncall {}/{}, {name}, {receiver}", opt_reg(*dst), opt_reg(*dst_shadow)).unwrap();
                for (a, sh) in args.iter().zip(shadows) {
                    write!(s, ", {a}/{sh}").unwrap();
                }
            }
        },
        Instruction::Ret { src: None } => s.push_str("ret"),
        Instruction::Ret { src: Some(r) } => write!(s, "ret {r}").unwrap(),
        Instruction::Jmp { label } => write!(s, "jmp {label}").unwrap(),
        Instruction::Br { cond, label } => write!(s, "br {cond}, {label}").unwrap(),
    }
    s
}

pub(crate) fn emit_method(out: &mut String, m: &MethodDef) {
    let stat = if m.is_static { "static " } else { "" };
    let _ = writeln!(out, "  method {stat}{} regs {} {{", m.sig, m.regs);
    for stmt in &m.body {
        let indent = if matches!(stmt, Stmt::Label(_)) { "  " } else { "    " };
        let _ = writeln!(out, "{indent}{}", emit_stmt(stmt));
    }
    out.push_str("  }\n");
}

/// Canonical text for a program. Deterministic; re-parses to an equal program.
pub fn emit_program(p: &Program) -> String {
    let mut out = String::new();
    if let Some(entry) = &p.entry {
        let _ = writeln!(out, "entry {entry}");
    }
    for class in &p.classes {
        if !out.is_empty() {
            out.push('\n');
        }
        match &class.superclass {
            Some(sup) => {
                let _ = writeln!(out, "class {} extends {sup} {{", class.name);
            }
            None => {
                let _ = writeln!(out, "class {} {{", class.name);
            }
        }
        for f in &class.fields {
            let _ = writeln!(out, "  field {} : {}", f.name, f.ty);
        }
        for m in &class.methods {
            emit_method(&mut out, m);
        }
        out.push_str("}\n");
    }
    out
}
