use std::collections::HashSet;
use std::fmt;

use super::{
    BinOp, ClassDef, DynTaint, FieldDef, FieldRef, Instruction, Literal, MethodDef, MethodSig, Program, Reg, Stmt,
    TypeDesc,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, column: usize, message: impl Into<String>) -> Self {
        ParseError { line, column, message: message.into() }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

fn is_class_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

fn valid_class_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(is_class_char)
        && !s.starts_with('.')
        && !s.ends_with('.')
        && !s.contains("..")
        && !s.starts_with(|c: char| c.is_ascii_digit())
}

fn valid_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_ident_char) && !s.starts_with(|c: char| c.is_ascii_digit())
}

/// Parses a type such as `int`, `A`, or `int[][]`.
pub fn parse_type(s: &str) -> Result<TypeDesc, String> {
    let s = s.trim();
    let mut base = s;
    let mut dims = 0;
    while let Some(rest) = base.strip_suffix("[]") {
        base = rest;
        dims += 1;
    }
    let elem = match base {
        "int" => TypeDesc::Int,
        "bool" => TypeDesc::Bool,
        "void" => return Err("`void` is not a value type".into()),
        b if valid_class_name(b) => TypeDesc::Class(b.to_string()),
        _ => return Err(format!("malformed type `{s}`")),
    };
    Ok(TypeDesc::array(elem, dims))
}

/// Parses `<Owner: ret name(p1,p2)>`.
pub(crate) fn parse_sig(text: &str) -> Result<MethodSig, String> {
    let bad = || format!("malformed signature `{text}`");
    let inner = text.trim().strip_prefix('<').and_then(|t| t.strip_suffix('>')).ok_or_else(bad)?;
    let (owner, rest) = inner.split_once(':').ok_or_else(bad)?;
    let owner = owner.trim();
    if !valid_class_name(owner) {
        return Err(bad());
    }
    let rest = rest.trim_start();
    let open = rest.find('(').ok_or_else(bad)?;
    let params_text = rest[open + 1..].strip_suffix(')').ok_or_else(bad)?;
    let (ret, name) = rest[..open].trim().split_once(' ').ok_or_else(bad)?;
    let name = name.trim();
    if !valid_ident(name) {
        return Err(bad());
    }
    let ret = match ret.trim() {
        "void" => None,
        t => Some(parse_type(t)?),
    };
    let params = if params_text.trim().is_empty() {
        vec![]
    } else {
        params_text.split(',').map(parse_type).collect::<Result<Vec<_>, _>>()?
    };
    Ok(MethodSig { owner: owner.to_string(), ret, name: name.to_string(), params })
}

/// Splits an operand list on top-level commas; `<...>` and `"..."` stay whole.
fn split_operands(text: &str) -> Result<Vec<(usize, String)>, (usize, String)> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut in_str = false;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '"' => in_str = !in_str,
            '<' if !in_str => depth += 1,
            '>' if !in_str => depth -= 1,
            ',' if !in_str && depth == 0 => {
                out.push((start, text[start..i].to_string()));
                start = i + 1;
            }
            _ => {}
        }
    }
    if in_str || depth != 0 {
        return Err((start, "unbalanced operand".into()));
    }
    let last = &text[start..];
    if !last.trim().is_empty() || !out.is_empty() {
        out.push((start, last.to_string()));
    }
    Ok(out
        .into_iter()
        .map(|(off, s)| {
            let lead = s.len() - s.trim_start().len();
            (off + lead, s.trim().to_string())
        })
        .collect())
}

struct LineCtx<'a> {
    line: usize,
    /// Column (1-based) where the operand text starts.
    base: usize,
    ops: &'a [(usize, String)],
}

impl LineCtx<'_> {
    fn err(&self, idx: usize, msg: impl Into<String>) -> ParseError {
        let col = self.ops.get(idx).map(|(o, _)| self.base + o).unwrap_or(self.base);
        ParseError::new(self.line, col, msg)
    }

    fn expect_count(&self, n: usize, opcode: &str) -> Result<(), ParseError> {
        if self.ops.len() != n {
            return Err(self.err(0, format!("`{opcode}` takes {n} operands, found {}", self.ops.len())));
        }
        Ok(())
    }

    fn text(&self, idx: usize) -> Result<&str, ParseError> {
        self.ops.get(idx).map(|(_, s)| s.as_str()).ok_or_else(|| self.err(idx, "missing operand"))
    }

    fn reg(&self, idx: usize) -> Result<Reg, ParseError> {
        let t = self.text(idx)?;
        parse_reg(t).ok_or_else(|| self.err(idx, format!("expected register, found `{t}`")))
    }

    fn opt_reg(&self, idx: usize) -> Result<Option<Reg>, ParseError> {
        if self.text(idx)? == "_" {
            Ok(None)
        } else {
            self.reg(idx).map(Some)
        }
    }

    fn sig(&self, idx: usize) -> Result<MethodSig, ParseError> {
        parse_sig(self.text(idx)?).map_err(|m| self.err(idx, m))
    }

    fn ty(&self, idx: usize) -> Result<TypeDesc, ParseError> {
        parse_type(self.text(idx)?).map_err(|m| self.err(idx, m))
    }

    fn field(&self, idx: usize) -> Result<FieldRef, ParseError> {
        let t = self.text(idx)?;
        match t.rsplit_once('.') {
            Some((class, field)) if valid_class_name(class) && valid_ident(field) => Ok(FieldRef::new(class, field)),
            _ => Err(self.err(idx, format!("expected Class.field, found `{t}`"))),
        }
    }

    fn label(&self, idx: usize) -> Result<String, ParseError> {
        let t = self.text(idx)?;
        if valid_ident(t) {
            Ok(t.to_string())
        } else {
            Err(self.err(idx, format!("bad label `{t}`")))
        }
    }

    fn regs_from(&self, idx: usize) -> Result<Vec<Reg>, ParseError> {
        (idx..self.ops.len()).map(|i| self.reg(i)).collect()
    }
}

fn parse_reg(t: &str) -> Option<Reg> {
    let digits = t.strip_prefix('r')?;
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok().map(Reg)
}

/// `rA/rB` pair of a taint-aware dyncall; `_/_` for a void destination.
fn split_pair(t: &str) -> Option<(&str, &str)> {
    t.split_once('/')
}

fn parse_instruction(line: usize, col: usize, text: &str) -> Result<Instruction, ParseError> {
    let (opcode, rest) = match text.find(char::is_whitespace) {
        Some(i) => (&text[..i], &text[i..]),
        None => (text, ""),
    };
    let rest_trim = rest.trim_start();
    let base = col + opcode.len() + (rest.len() - rest_trim.len());
    let ops = split_operands(rest_trim).map_err(|(off, m)| ParseError::new(line, base + off, m))?;
    let cx = LineCtx { line, base, ops: &ops };
    let instr = match opcode {
        "const" => {
            cx.expect_count(2, opcode)?;
            let value = match cx.text(1)? {
                "null" => Literal::Null,
                t => Literal::Int(t.parse().map_err(|_| cx.err(1, format!("bad literal `{t}`")))?),
            };
            Instruction::Const { dst: cx.reg(0)?, value }
        }
        "sconst" => {
            cx.expect_count(2, opcode)?;
            let t = cx.text(1)?;
            let value = t
                .strip_prefix('"')
                .and_then(|s| s.strip_suffix('"'))
                .filter(|s| !s.contains('"'))
                .ok_or_else(|| cx.err(1, "expected string literal"))?;
            Instruction::SConst { dst: cx.reg(0)?, value: value.to_string() }
        }
        "move" => {
            cx.expect_count(2, opcode)?;
            Instruction::Move { dst: cx.reg(0)?, src: cx.reg(1)? }
        }
        "bin" => {
            cx.expect_count(4, opcode)?;
            let op =
                BinOp::from_name(cx.text(0)?).ok_or_else(|| cx.err(0, format!("unknown bin op `{}`", cx.ops[0].1)))?;
            Instruction::Bin { op, dst: cx.reg(1)?, lhs: cx.reg(2)?, rhs: cx.reg(3)? }
        }
        "new" => {
            cx.expect_count(2, opcode)?;
            let class = cx.text(1)?;
            if !valid_class_name(class) {
                return Err(cx.err(1, format!("bad class name `{class}`")));
            }
            Instruction::New { dst: cx.reg(0)?, class: class.to_string() }
        }
        "newarr" => {
            cx.expect_count(3, opcode)?;
            let ty = cx.ty(1)?;
            if ty.dims() == 0 {
                return Err(cx.err(1, "newarr needs an array type"));
            }
            Instruction::NewArr { dst: cx.reg(0)?, ty, len: cx.reg(2)? }
        }
        "aload" => {
            cx.expect_count(3, opcode)?;
            Instruction::ALoad { dst: cx.reg(0)?, array: cx.reg(1)?, index: cx.reg(2)? }
        }
        "astore" => {
            cx.expect_count(3, opcode)?;
            Instruction::AStore { array: cx.reg(0)?, index: cx.reg(1)?, src: cx.reg(2)? }
        }
        "get" => {
            cx.expect_count(3, opcode)?;
            Instruction::Get { dst: cx.reg(0)?, object: cx.reg(1)?, field: cx.field(2)? }
        }
        "put" => {
            cx.expect_count(3, opcode)?;
            Instruction::Put { object: cx.reg(0)?, field: cx.field(1)?, src: cx.reg(2)? }
        }
        "scall" => {
            if ops.len() < 2 {
                return Err(cx.err(0, "scall needs a destination and a target"));
            }
            Instruction::SCall { dst: cx.opt_reg(0)?, target: cx.sig(1)?, args: cx.regs_from(2)? }
        }
        "vcall" => {
            if ops.len() < 3 {
                return Err(cx.err(0, "vcall needs a destination, a target and a receiver"));
            }
            Instruction::VCall { dst: cx.opt_reg(0)?, target: cx.sig(1)?, receiver: cx.reg(2)?, args: cx.regs_from(3)? }
        }
        "dyncall" => {
            if ops.len() < 3 {
                return Err(cx.err(0, "dyncall needs a destination, a name and a receiver"));
            }
            parse_dyncall(&cx)?
        }
        "ret" => match ops.len() {
            0 => Instruction::Ret { src: None },
            1 => Instruction::Ret { src: Some(cx.reg(0)?) },
            _ => return Err(cx.err(1, "ret takes at most one operand")),
        },
        "jmp" => {
            cx.expect_count(1, opcode)?;
            Instruction::Jmp { label: cx.label(0)? }
        }
        "br" => {
            cx.expect_count(2, opcode)?;
            Instruction::Br { cond: cx.reg(0)?, label: cx.label(1)? }
        }
        other => return Err(ParseError::new(line, col, format!("unknown opcode `{other}`"))),
    };
    Ok(instr)
}

fn parse_dyncall(cx: &LineCtx<'_>) -> Result<Instruction, ParseError> {
    let dst_text = cx.text(0)?;
    let tainted = split_pair(dst_text).is_some();
    let reg_or_none = |idx: usize, t: &str| -> Result<Option<Reg>, ParseError> {
        if t == "_" {
            Ok(None)
        } else {
            parse_reg(t).map(Some).ok_or_else(|| cx.err(idx, format!("expected register, found `{t}`")))
        }
    };
    if !tainted {
        return Ok(Instruction::DynCall {
            dst: cx.opt_reg(0)?,
            name: cx.reg(1)?,
            receiver: cx.reg(2)?,
            args: cx.regs_from(3)?,
            taint: None,
        });
    }
    let (d, ds) = split_pair(dst_text).unwrap();
    let dst = reg_or_none(0, d)?;
    let dst_shadow = reg_or_none(0, ds)?;
    if dst.is_some() != dst_shadow.is_some() {
        return Err(cx.err(0, "destination and its shadow must both be present or both `_`"));
    }
    let mut args = Vec::new();
    let mut shadows = Vec::new();
    for idx in 3..cx.ops.len() {
        let t = cx.text(idx)?;
        let (a, s) = split_pair(t).ok_or_else(|| cx.err(idx, "expected `rA/rS` pair"))?;
        args.push(parse_reg(a).ok_or_else(|| cx.err(idx, "expected register"))?);
        shadows.push(parse_reg(s).ok_or_else(|| cx.err(idx, "expected register"))?);
    }
    Ok(Instruction::DynCall {
        dst,
        name: cx.reg(1)?,
        receiver: cx.reg(2)?,
        args,
        taint: Some(DynTaint { dst: dst_shadow, args: shadows }),
    })
}

enum Frame {
    Top,
    Class(ClassDef),
    Method(ClassDef, MethodDef),
}

/// Parses TIR source text into a [`Program`].
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut program = Program::default();
    let mut class_names = HashSet::new();
    let mut frame = Frame::Top;

    for (line, col, trimmed) in fragments(text) {
        let trimmed = trimmed.as_str();
        frame = match frame {
            Frame::Top => {
                if let Some(rest) = trimmed.strip_prefix("entry ") {
                    if program.entry.is_some() {
                        return Err(ParseError::new(line, col, "duplicate entry declaration"));
                    }
                    let sig = parse_sig(rest).map_err(|m| ParseError::new(line, col + 6, m))?;
                    program.entry = Some(sig);
                    Frame::Top
                } else if let Some(rest) = trimmed.strip_prefix("class ") {
                    let header = rest
                        .strip_suffix('{')
                        .ok_or_else(|| ParseError::new(line, col, "expected `{` after class header"))?;
                    let mut words = header.split_whitespace();
                    let name = words.next().unwrap_or_default();
                    if !valid_class_name(name) {
                        return Err(ParseError::new(line, col + 6, format!("bad class name `{name}`")));
                    }
                    let superclass = match (words.next(), words.next(), words.next()) {
                        (None, _, _) => None,
                        (Some("extends"), Some(s), None) if valid_class_name(s) => Some(s.to_string()),
                        _ => return Err(ParseError::new(line, col, "malformed class header")),
                    };
                    if !class_names.insert(name.to_string()) {
                        return Err(ParseError::new(line, col + 6, format!("duplicate class `{name}`")));
                    }
                    Frame::Class(ClassDef::new(name, superclass))
                } else {
                    return Err(ParseError::new(line, col, format!("unexpected `{trimmed}`")));
                }
            }
            Frame::Class(mut class) => {
                if trimmed == "}" {
                    program.classes.push(class);
                    Frame::Top
                } else if let Some(rest) = trimmed.strip_prefix("field ") {
                    let (name, ty) = rest
                        .split_once(':')
                        .ok_or_else(|| ParseError::new(line, col, "expected `field name : type`"))?;
                    let name = name.trim();
                    if !valid_ident(name) {
                        return Err(ParseError::new(line, col + 6, format!("bad field name `{name}`")));
                    }
                    if class.field(name).is_some() {
                        return Err(ParseError::new(line, col + 6, format!("duplicate field `{name}`")));
                    }
                    let ty = parse_type(ty).map_err(|m| ParseError::new(line, col, m))?;
                    class.fields.push(FieldDef { name: name.to_string(), ty });
                    Frame::Class(class)
                } else if let Some(rest) = trimmed.strip_prefix("method ") {
                    let method = parse_method_header(line, col, rest)?;
                    if method.sig.owner != class.name {
                        return Err(ParseError::new(
                            line,
                            col,
                            format!("method owner `{}` differs from class `{}`", method.sig.owner, class.name),
                        ));
                    }
                    if class.method(&method.sig.name, &method.sig.params).is_some() {
                        return Err(ParseError::new(line, col, format!("duplicate method {}", method.sig)));
                    }
                    Frame::Method(class, method)
                } else {
                    return Err(ParseError::new(line, col, format!("unexpected `{trimmed}` in class body")));
                }
            }
            Frame::Method(mut class, mut method) => {
                if trimmed == "}" {
                    if method.regs == u32::MAX {
                        method.regs = implied_registers(&method);
                    }
                    class.methods.push(method);
                    Frame::Class(class)
                } else if let Some(label) = trimmed.strip_suffix(':').filter(|l| valid_ident(l)) {
                    method.body.push(Stmt::Label(label.to_string()));
                    Frame::Method(class, method)
                } else {
                    method.body.push(Stmt::Instr(parse_instruction(line, col, trimmed)?));
                    Frame::Method(class, method)
                }
            }
        };
    }
    match frame {
        Frame::Top => Ok(program),
        _ => Err(ParseError::new(text.lines().count().max(1), 1, "unexpected end of input, missing `}`")),
    }
}

fn implied_registers(m: &MethodDef) -> u32 {
    m.instructions()
        .flat_map(|i| i.registers())
        .map(|r| r.0 + 1)
        .chain(std::iter::once(m.arg_slots()))
        .max()
        .unwrap_or(0)
}

/// Splits source into `(line, column, text)` fragments: comments stripped, and
/// each `{` ends a fragment while each `}` stands alone, so one-line class
/// bodies read the same as multi-line ones.
fn fragments(text: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let mut content = raw;
        let mut in_str = false;
        for (i, c) in raw.char_indices() {
            match c {
                '"' => in_str = !in_str,
                '#' if !in_str => {
                    content = &raw[..i];
                    break;
                }
                _ => {}
            }
        }
        let mut start = 0;
        let mut in_str = false;
        let mut push = |from: usize, to: usize| {
            let piece = &content[from..to];
            let trimmed = piece.trim();
            if !trimmed.is_empty() {
                let lead = piece.len() - piece.trim_start().len();
                out.push((idx + 1, from + lead + 1, trimmed.to_string()));
            }
        };
        for (i, c) in content.char_indices() {
            match c {
                '"' => in_str = !in_str,
                '{' if !in_str => {
                    push(start, i + 1);
                    start = i + 1;
                }
                '}' if !in_str => {
                    push(start, i);
                    push(i, i + 1);
                    start = i + 1;
                }
                _ => {}
            }
        }
        push(start, content.len());
    }
    out
}

fn parse_method_header(line: usize, col: usize, rest: &str) -> Result<MethodDef, ParseError> {
    let (is_static, rest) = match rest.strip_prefix("static ") {
        Some(r) => (true, r.trim_start()),
        None => (false, rest),
    };
    let close = rest.find('>').ok_or_else(|| ParseError::new(line, col, "expected method signature"))?;
    let sig = parse_sig(&rest[..=close]).map_err(|m| ParseError::new(line, col, m))?;
    let tail = rest[close + 1..].trim();
    let header_err = || ParseError::new(line, col, "expected `[regs <n>] {` after signature");
    let tail = tail.strip_suffix('{').ok_or_else(header_err)?.trim();
    // a missing register count is filled in from the body once it closes
    let regs = match tail.strip_prefix("regs") {
        Some(n) => Some(n.trim().parse::<u32>().map_err(|_| header_err())?),
        None if tail.is_empty() => None,
        None => return Err(header_err()),
    };
    Ok(MethodDef::new(sig, is_static, regs.unwrap_or(u32::MAX), vec![]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_empty_program() {
        let p = parse_program("").unwrap();
        assert!(p.classes.is_empty());
        assert!(p.entry.is_none());
    }

    #[test]
    fn minimal_program() {
        let p = parse_program("class Main { \n method static <Main: void main()> regs 0 {\n ret\n }\n}\n").unwrap();
        assert_eq!(p.classes.len(), 1);
        assert_eq!(p.classes[0].methods.len(), 1);
    }

    #[test]
    fn one_line_class_parses() {
        let p = parse_program("class Main { method <Main: void main()> { ret } }").unwrap();
        assert_eq!(p.classes.len(), 1);
        assert_eq!(p.classes[0].methods.len(), 1);
        assert_eq!(p.classes[0].methods[0].regs, 1);
    }

    #[test]
    fn unterminated_class() {
        let err = parse_program("class A {\n field x : int\n").unwrap_err();
        assert!(err.message.contains("missing `}`"));
    }

    #[test]
    fn unknown_opcode_reports_column() {
        let src = "class A {\n  method static <A: void f()> regs 1 {\n    frob r0\n  }\n}\n";
        let err = parse_program(src).unwrap_err();
        assert_eq!((err.line, err.column), (3, 5));
        assert!(err.message.contains("unknown opcode"));
    }

    #[test]
    fn duplicates_are_rejected() {
        let dup_class = "class A {\n}\nclass A {\n}\n";
        assert!(parse_program(dup_class).unwrap_err().message.contains("duplicate class"));
        let dup_field = "class A {\n field x : int\n field x : bool\n}\n";
        assert!(parse_program(dup_field).unwrap_err().message.contains("duplicate field"));
        let dup_method =
            "class A {\n method <A: void f()> regs 0 {\n ret\n }\n method <A: int f()> regs 0 {\n ret\n }\n}\n";
        assert!(parse_program(dup_method).unwrap_err().message.contains("duplicate method"));
    }

    #[test]
    fn operands_with_signatures() {
        let i = parse_instruction(1, 1, "scall r1, <A: int f(int,int[])>, r0, r2").unwrap();
        match i {
            Instruction::SCall { dst, target, args } => {
                assert_eq!(dst, Some(Reg(1)));
                assert_eq!(target.params.len(), 2);
                assert_eq!(args, vec![Reg(0), Reg(2)]);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn taint_aware_dyncall() {
        let i = parse_instruction(1, 1, "dyncall r3/r9, r1, r2, r0/r8").unwrap();
        let Instruction::DynCall { dst, taint: Some(t), args, .. } = i else { panic!() };
        assert_eq!(dst, Some(Reg(3)));
        assert_eq!(t.dst, Some(Reg(9)));
        assert_eq!(args, vec![Reg(0)]);
        assert_eq!(t.args, vec![Reg(8)]);
        let void = parse_instruction(1, 1, "dyncall _/_, r1, r2").unwrap();
        assert!(matches!(void, Instruction::DynCall { taint: Some(_), dst: None, .. }));
    }

    #[test]
    fn bad_signatures() {
        for bad in ["<A void f()>", "<A: f()>", "A: void f()", "<A: void f(>", "<A: void 1f()>", "<: void f()>"] {
            assert!(parse_sig(bad).is_err(), "{bad}");
        }
    }
}
