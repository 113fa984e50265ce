//! Shared helpers for the integration tests: corpus loading and a seeded
//! generator of valid, terminating TIR programs.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fmt::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use taintweave::cli::corpus::{load_corpus, CorpusEntry};

pub const WRITE: &str = "<stdlib.Out: void write(int)>";
pub const PRINT: &str = "<stdlib.Out: void print(int)>";
pub const EXEC: &str = "<stdlib.Sys: void exec(int)>";
pub const READ: &str = "<stdlib.In: int read()>";
pub const READ_BUF: &str = "<stdlib.In: void readBuf(int[])>";
pub const MAP: &str = "<stdlib.Hof: int map(stdlib.Fn,int)>";

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn corpus() -> Vec<CorpusEntry> {
    load_corpus(&corpus_dir()).expect("corpus loads")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Int,
    Bool,
    Arr,
    Grid,
}

impl Ty {
    fn text(self) -> &'static str {
        match self {
            Ty::Int => "int",
            Ty::Bool => "bool",
            Ty::Arr => "int[]",
            Ty::Grid => "int[][]",
        }
    }
}

#[derive(Debug, Clone)]
struct Method {
    class: usize,
    name: String,
    is_static: bool,
    params: Vec<Ty>,
    ret: Option<Ty>,
    /// Calls only go to methods with a larger rank, so every run terminates.
    rank: usize,
}

impl Method {
    fn sig(&self, classes: &[Class]) -> String {
        let params: Vec<&str> = self.params.iter().map(|t| t.text()).collect();
        format!(
            "<{}: {} {}({})>",
            classes[self.class].name,
            self.ret.map_or("void", Ty::text),
            self.name,
            params.join(",")
        )
    }
}

#[derive(Debug, Clone)]
struct Class {
    name: String,
    parent: Option<usize>,
    fields: Vec<(String, Ty)>,
}

struct Gen<'r> {
    rng: &'r mut ChaCha8Rng,
    classes: Vec<Class>,
    methods: Vec<Method>,
    /// Rank of the `apply` callback, when the program has one.
    callback: Option<usize>,
}

/// Per-method register allocation: ints, arrays and one grid are pooled,
/// every object and name string gets a fresh register.
struct Frame {
    ints: Vec<u32>,
    arrs: Vec<u32>,
    grid: u32,
    next: u32,
    labels: usize,
    calls: usize,
}

impl Frame {
    fn fresh(&mut self) -> u32 {
        self.next += 1;
        self.next - 1
    }
}

impl Gen<'_> {
    fn ancestors(&self, mut c: usize) -> Vec<usize> {
        let mut out = vec![c];
        while let Some(p) = self.classes[c].parent {
            out.push(p);
            c = p;
        }
        out
    }

    fn descendants(&self, c: usize) -> Vec<usize> {
        (0..self.classes.len()).filter(|&d| self.ancestors(d).contains(&c)).collect()
    }

    fn fields_of(&self, c: usize) -> Vec<(usize, String, Ty)> {
        self.ancestors(c)
            .into_iter()
            .flat_map(|a| self.classes[a].fields.iter().map(move |(n, t)| (a, n.clone(), *t)))
            .collect()
    }

    /// Every method a call through `m`'s name on class `c` or below could reach.
    fn cone_ranks(&self, m: &Method) -> Vec<usize> {
        let cone = self.descendants(m.class);
        self.methods.iter().filter(|o| o.name == m.name && cone.contains(&o.class)).map(|o| o.rank).collect()
    }

    fn pick_ty(&mut self, weights: &[(Ty, u32)]) -> Ty {
        let total: u32 = weights.iter().map(|w| w.1).sum();
        let mut x = self.rng.gen_range(0..total);
        for &(t, w) in weights {
            if x < w {
                return t;
            }
            x -= w;
        }
        weights[0].0
    }

    fn layout(&mut self) {
        let n = self.rng.gen_range(2..=5);
        for i in 0..n {
            let parent = (i > 0 && self.rng.gen_bool(0.5)).then(|| self.rng.gen_range(0..i));
            let mut fields = Vec::new();
            for k in 0..self.rng.gen_range(0..=2) {
                let t = if self.rng.gen_bool(0.6) { Ty::Int } else { Ty::Arr };
                fields.push((format!("f{i}_{k}"), t));
            }
            self.classes.push(Class { name: format!("C{i}"), parent, fields });
        }
        let mut fresh = 0;
        let mut base = Vec::new();
        for c in 0..n {
            for _ in 0..self.rng.gen_range(1..=3) {
                let params = (0..self.rng.gen_range(0..=2))
                    .map(|_| self.pick_ty(&[(Ty::Int, 12), (Ty::Arr, 5), (Ty::Grid, 2)]))
                    .collect();
                let ret = if self.rng.gen_bool(0.3) {
                    None
                } else {
                    Some(self.pick_ty(&[(Ty::Int, 10), (Ty::Bool, 3), (Ty::Arr, 3), (Ty::Grid, 1)]))
                };
                base.push(Method {
                    class: c,
                    name: format!("m{fresh}"),
                    is_static: self.rng.gen_bool(0.4),
                    params,
                    ret,
                    rank: 0,
                });
                fresh += 1;
            }
        }
        let mut all = base.clone();
        for m in base.iter().filter(|m| !m.is_static) {
            for d in self.descendants(m.class) {
                if d != m.class && self.rng.gen_bool(0.5) {
                    all.push(Method { class: d, ..m.clone() });
                }
            }
        }
        if self.rng.gen_bool(0.4) {
            let c = self.classes.len();
            self.classes.push(Class { name: format!("Fn{c}"), parent: None, fields: vec![] });
            all.push(Method {
                class: c,
                name: "apply".into(),
                is_static: false,
                params: vec![Ty::Int],
                ret: Some(Ty::Int),
                rank: 0,
            });
        }
        all.shuffle(self.rng);
        for (i, m) in all.iter_mut().enumerate() {
            m.rank = i + 1;
        }
        self.callback = all.iter().find(|m| m.name == "apply").map(|m| m.rank);
        self.methods = all;
    }

    fn int(&mut self, f: &Frame) -> u32 {
        *f.ints.choose(self.rng).unwrap()
    }

    fn arr(&mut self, f: &Frame) -> u32 {
        *f.arrs.choose(self.rng).unwrap()
    }

    fn reg_of(&mut self, f: &Frame, t: Ty) -> u32 {
        match t {
            Ty::Int | Ty::Bool => self.int(f),
            Ty::Arr => self.arr(f),
            Ty::Grid => f.grid,
        }
    }

    fn call(&mut self, out: &mut String, f: &mut Frame, rank: usize) {
        let callable: Vec<Method> = self
            .methods
            .iter()
            .filter(|m| m.rank > rank && m.name != "apply")
            .filter(|m| m.is_static || self.cone_ranks(m).iter().all(|&r| r > rank))
            .cloned()
            .collect();
        let Some(m) = callable.choose(self.rng).cloned() else { return };
        f.calls += 1;
        let args: Vec<String> = m.params.clone().into_iter().map(|t| format!("r{}", self.reg_of(f, t))).collect();
        let dst = match m.ret {
            None => "_".to_string(),
            Some(t) => format!("r{}", self.reg_of(f, t)),
        };
        let tail = if args.is_empty() { String::new() } else { format!(", {}", args.join(", ")) };
        let sig = m.sig(&self.classes);
        if m.is_static {
            let _ = writeln!(out, "    scall {dst}, {sig}{tail}");
            return;
        }
        let cone = self.descendants(m.class);
        let recv_class = *cone.choose(self.rng).unwrap();
        let recv = f.fresh();
        let _ = writeln!(out, "    new r{recv}, {}", self.classes[recv_class].name);
        if self.rng.gen_bool(0.3) {
            let name = f.fresh();
            let _ = writeln!(out, "    sconst r{name}, \"{}\"", m.name);
            let _ = writeln!(out, "    dyncall {dst}, r{name}, r{recv}{tail}");
        } else {
            let _ = writeln!(out, "    vcall {dst}, {sig}, r{recv}{tail}");
        }
    }

    fn stmt(&mut self, out: &mut String, f: &mut Frame, m: &Method) {
        let roll = self.rng.gen_range(0..100);
        match roll {
            0..=17 => {
                let ops = ["add", "sub", "mul", "and", "or", "xor", "lt", "eq"];
                let op = ops.choose(self.rng).unwrap();
                let (d, a, b) = (self.int(f), self.int(f), self.int(f));
                let _ = writeln!(out, "    bin {op}, r{d}, r{a}, r{b}");
            }
            18..=22 => {
                let d = self.int(f);
                let _ = writeln!(out, "    const r{d}, {}", self.rng.gen_range(-5..20));
            }
            23..=29 => {
                let d = self.int(f);
                let _ = writeln!(out, "    scall r{d}, {READ}");
            }
            30..=39 => {
                let sink = [WRITE, WRITE, EXEC, PRINT].choose(self.rng).copied().unwrap();
                let a = self.int(f);
                let _ = writeln!(out, "    scall _, {sink}, r{a}");
            }
            40..=43 => {
                let a = self.arr(f);
                let _ = writeln!(out, "    scall _, {READ_BUF}, r{a}");
            }
            44..=51 => {
                let (i, a, v) = (self.int(f), self.arr(f), self.int(f));
                let _ = writeln!(out, "    const r{i}, {}", self.rng.gen_range(0..3));
                if self.rng.gen_bool(0.5) {
                    let _ = writeln!(out, "    aload r{v}, r{a}, r{i}");
                } else {
                    let _ = writeln!(out, "    astore r{a}, r{i}, r{v}");
                }
            }
            52..=55 => {
                let (i, a) = (self.int(f), self.arr(f));
                let _ = writeln!(out, "    const r{i}, {}", self.rng.gen_range(0..3));
                if self.rng.gen_bool(0.5) {
                    let _ = writeln!(out, "    aload r{a}, r{}, r{i}", f.grid);
                } else {
                    let _ = writeln!(out, "    astore r{}, r{i}, r{a}", f.grid);
                }
            }
            56..=63 => self.field_stmt(out, f, m),
            64..=67 if self.callback.is_some_and(|r| r > m.rank) => {
                let cls = self.methods.iter().find(|x| x.name == "apply").unwrap().class;
                let recv = f.fresh();
                let (d, a) = (self.int(f), self.int(f));
                let _ = writeln!(out, "    new r{recv}, {}", self.classes[cls].name);
                let _ = writeln!(out, "    scall r{d}, {MAP}, r{recv}, r{a}");
            }
            68..=73 => {
                let c = self.int(f);
                let l = f.labels;
                f.labels += 1;
                let _ = writeln!(out, "    br r{c}, skip{l}");
                if self.rng.gen_bool(0.5) && f.calls < 2 {
                    self.call(out, f, m.rank);
                } else {
                    let (d, a) = (self.int(f), self.int(f));
                    let _ = writeln!(out, "    bin add, r{d}, r{d}, r{a}");
                }
                let _ = writeln!(out, "  skip{l}:");
            }
            _ if f.calls < 2 => self.call(out, f, m.rank),
            _ => {
                let a = self.int(f);
                let _ = writeln!(out, "    scall _, {PRINT}, r{a}");
            }
        }
    }

    fn field_stmt(&mut self, out: &mut String, f: &mut Frame, m: &Method) {
        let own = if m.is_static { vec![] } else { self.fields_of(m.class) };
        if !own.is_empty() && self.rng.gen_bool(0.5) {
            let (decl, name, t) = own.choose(self.rng).cloned().unwrap();
            let field = format!("{}.{name}", self.classes[decl].name);
            match t {
                Ty::Int if self.rng.gen_bool(0.5) => {
                    let d = self.int(f);
                    let _ = writeln!(out, "    get r{d}, r0, {field}");
                }
                // array fields of the receiver may still be null, so only store
                Ty::Arr => {
                    let a = self.arr(f);
                    let _ = writeln!(out, "    put r0, {field}, r{a}");
                }
                _ => {
                    let v = self.int(f);
                    let _ = writeln!(out, "    put r0, {field}, r{v}");
                }
            }
            return;
        }
        let c = self.rng.gen_range(0..self.classes.len());
        let fields = self.fields_of(c);
        let Some((decl, name, t)) = fields.choose(self.rng).cloned() else { return };
        let field = format!("{}.{name}", self.classes[decl].name);
        let o = f.fresh();
        let _ = writeln!(out, "    new r{o}, {}", self.classes[c].name);
        match t {
            Ty::Arr => {
                let (a, b) = (self.arr(f), self.arr(f));
                let _ = writeln!(out, "    put r{o}, {field}, r{a}");
                let _ = writeln!(out, "    get r{b}, r{o}, {field}");
            }
            _ => {
                let (v, d) = (self.int(f), self.int(f));
                let _ = writeln!(out, "    put r{o}, {field}, r{v}");
                let _ = writeln!(out, "    get r{d}, r{o}, {field}");
            }
        }
    }

    fn body(&mut self, m: &Method) -> (u32, String) {
        let mut next = u32::from(!m.is_static);
        let mut ints = Vec::new();
        let mut arrs = Vec::new();
        let mut grid = None;
        for &p in &m.params {
            match p {
                Ty::Int | Ty::Bool => ints.push(next),
                Ty::Arr => arrs.push(next),
                Ty::Grid => grid = Some(next),
            }
            next += 1;
        }
        let mut out = String::new();
        let pool_ints: Vec<u32> = (next..next + 3).collect();
        next += 3;
        let pool_arrs: Vec<u32> = (next..next + 2).collect();
        next += 2;
        let _ = writeln!(out, "    const r{}, 3", pool_ints[0]);
        for &a in &pool_arrs {
            let _ = writeln!(out, "    newarr r{a}, int[], r{}", pool_ints[0]);
        }
        let grid = match grid {
            Some(g) => g,
            None => {
                let g = next;
                next += 1;
                let _ = writeln!(out, "    newarr r{g}, int[][], r{}", pool_ints[0]);
                for k in 0..3 {
                    let _ = writeln!(out, "    const r{}, {k}", pool_ints[1]);
                    let _ = writeln!(out, "    astore r{g}, r{}, r{}", pool_ints[1], pool_arrs[k % 2]);
                }
                g
            }
        };
        for &r in &pool_ints[1..] {
            let _ = writeln!(out, "    const r{r}, {}", self.rng.gen_range(0..10));
        }
        ints.extend(&pool_ints);
        arrs.extend(&pool_arrs);
        let mut f = Frame { ints, arrs, grid, next, labels: 0, calls: 0 };
        let n = if m.rank == 0 { self.rng.gen_range(6..=14) } else { self.rng.gen_range(2..=8) };
        for _ in 0..n {
            self.stmt(&mut out, &mut f, m);
        }
        if m.name == "apply" {
            let d = self.int(&f);
            let p = f.ints[0];
            let _ = writeln!(out, "    bin add, r{d}, r{d}, r{p}");
        }
        match m.ret {
            None => out.push_str("    ret\n"),
            Some(Ty::Int) => {
                let r = self.int(&f);
                let _ = writeln!(out, "    ret r{r}");
            }
            Some(Ty::Bool) => {
                let (d, a, b) = (self.int(&f), self.int(&f), self.int(&f));
                let _ = writeln!(out, "    bin lt, r{d}, r{a}, r{b}");
                let _ = writeln!(out, "    ret r{d}");
            }
            Some(Ty::Arr) => {
                let r = self.arr(&f);
                let _ = writeln!(out, "    ret r{r}");
            }
            Some(Ty::Grid) => {
                let _ = writeln!(out, "    ret r{}", f.grid);
            }
        }
        (f.next, out)
    }

    fn program(&mut self) -> String {
        self.layout();
        let main =
            Method { class: usize::MAX, name: "main".into(), is_static: true, params: vec![], ret: None, rank: 0 };
        let mut bodies: Vec<Vec<String>> = vec![Vec::new(); self.classes.len()];
        let methods = self.methods.clone();
        for m in &methods {
            let (regs, body) = self.body(m);
            let kw = if m.is_static { "static " } else { "" };
            bodies[m.class].push(format!("  method {kw}{} regs {regs} {{\n{body}  }}\n", m.sig(&self.classes)));
        }
        let (regs, body) = self.body(&main);
        let mut out = String::from("entry <Main: void main()>\n");
        for (c, ms) in self.classes.iter().zip(&bodies) {
            let ext = match c.parent {
                Some(p) => format!(" extends {}", self.classes[p].name),
                None if c.name.starts_with("Fn") => " extends stdlib.Fn".to_string(),
                None => String::new(),
            };
            let _ = writeln!(out, "\nclass {}{ext} {{", c.name);
            for (n, t) in &c.fields {
                let _ = writeln!(out, "  field {n} : {}", t.text());
            }
            for m in ms {
                out.push_str(m);
            }
            out.push_str("}\n");
        }
        let _ = write!(out, "\nclass Main {{\n  method static <Main: void main()> regs {regs} {{\n{body}  }}\n}}\n");
        out
    }
}

/// A random program that validates and terminates on every input.
pub fn gen_program(rng: &mut ChaCha8Rng) -> String {
    Gen { rng, classes: vec![], methods: vec![], callback: None }.program()
}

/// Random digraph over `n` nodes with independent edge probability `p`.
pub fn gen_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> BTreeSet<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for a in 0..n {
        for b in 0..n {
            if rng.gen_bool(p) {
                edges.insert((a, b));
            }
        }
    }
    edges
}
