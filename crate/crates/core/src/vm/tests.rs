use super::*;
use crate::extras::{close_instrument_set, ExtrasOptions, InstrumentSet, Rule};
use crate::facts::analyze;
use crate::instrument::{full_set, instrument_program};
use crate::scope::{compute_scope, ScopeOptions};
use crate::tir::parse_program;

const EX1: &str = "entry <Main: void main()>
class Main {
  method static <Main: void main()> regs 1 {
    scall r0, <stdlib.In: int read()>
    scall _, <H: void h(int)>, r0
    ret
  }
}
class H {
  method static <H: void h(int)> regs 1 {
    scall _, <stdlib.Out: void write(int)>, r0
    ret
  }
}
";

const REFLECT: &str = "entry <Main: void main()>
class A {
  method <A: int f(int)> regs 2 {
    scall _, <stdlib.Out: void write(int)>, r1
    ret r1
  }
}
class B extends A {
}
class Main {
  method static <Main: void main()> regs 4 {
    new r0, B
    sconst r1, \"f\"
    scall r2, <stdlib.In: int read()>
    dyncall r3, r1, r0, r2
    scall _, <stdlib.Out: void print(int)>, r3
    ret
  }
}
";

fn levels(src: &str) -> [InstrumentedProgram; 3] {
    let p = parse_program(src).unwrap();
    let fb = analyze(&p).unwrap();
    let scope = compute_scope(&fb.edges, &SeedConfig::default(), ScopeOptions::default());
    let set = close_instrument_set(&fb, &scope, ExtrasOptions::default());
    [
        InstrumentedProgram::plain(p.clone()),
        instrument_program(&p, &set).unwrap(),
        instrument_program(&p, &full_set(&p)).unwrap(),
    ]
}

fn write_sig() -> MethodSig {
    "<stdlib.Out: void write(int)>".parse().unwrap()
}

#[test]
fn print_only_program() {
    let src = "entry <Main: void main()>
class Main {
  method static <Main: void main()> regs 1 {
    const r0, 7
    scall _, <stdlib.Out: void print(int)>, r0
    ret
  }
}
";
    for ip in levels(src) {
        let r = run(&ip, &RunConfig::default());
        assert_eq!(r.output, vec![7]);
        assert!(r.violations.is_empty());
        assert_eq!(r.halted, Halt::Normal);
    }
}

#[test]
fn ex1_violations() {
    let [none, partial, full] = levels(EX1);
    let cfg = RunConfig::with_input(vec![5]);
    let plain = run(&none, &cfg);
    assert_eq!(plain.output, vec![5]);
    assert!(plain.violations.is_empty());
    let f = run(&full, &cfg);
    assert_eq!(f.halted, Halt::Normal);
    assert_eq!(f.violation_keys(), vec![(write_sig().to_string(), 1, 1)]);
    assert_eq!(f.violations[0].call_stack.len(), 2);
    let p = run(&partial, &cfg);
    assert_eq!(p.violation_keys(), f.violation_keys());
    assert_eq!(p.output, f.output);
    assert!(plain.instructions <= p.instructions && p.instructions <= f.instructions);
}

#[test]
fn exhausted_input_is_untainted() {
    let [_, partial, _] = levels(EX1);
    let r = run(&partial, &RunConfig::default());
    assert_eq!(r.output, vec![0]);
    assert!(r.violations.is_empty());
}

#[test]
fn deterministic() {
    let [_, partial, _] = levels(REFLECT);
    let cfg = RunConfig { trace_calls: true, ..RunConfig::with_input(vec![3]) };
    assert_eq!(run(&partial, &cfg), run(&partial, &cfg));
}

#[test]
fn reflection_dispatch_levels() {
    let [none, partial, full] = levels(REFLECT);
    assert!(partial.set.contains(&"<A: int f(int)>".parse().unwrap()));
    let cfg = RunConfig::with_input(vec![9]);
    assert!(run(&none, &cfg).violations.is_empty());
    for ip in [&partial, &full] {
        let r = run(ip, &cfg);
        assert_eq!(r.halted, Halt::Normal, "{}", crate::instrument::emit_instrumented(ip));
        assert_eq!(r.output, vec![9, 9]);
        assert_eq!(r.violation_keys(), vec![(write_sig().to_string(), 1, 1)]);
    }
}

#[test]
fn uninstrumented_caller_gets_stub() {
    let p = parse_program(REFLECT).unwrap();
    let set = InstrumentSet::from_methods(["<A: int f(int)>".parse().unwrap()], Rule::Intersection);
    let ip = instrument_program(&p, &set).unwrap();
    let r = run(&ip, &RunConfig::with_input(vec![4]));
    assert_eq!(r.halted, Halt::Normal);
    assert_eq!(r.output, vec![4, 4]);
    assert!(r.violations.is_empty());
}

#[test]
fn dispatch_walks_superclasses() {
    let p = parse_program(REFLECT).unwrap();
    let set = InstrumentSet::from_methods(["<A: int f(int)>".parse().unwrap()], Rule::Intersection);
    let ip = instrument_program(&p, &set).unwrap();
    let (sig, _) = dispatch_dynamic(&ip.table, &["B", "A"], "f", 1, true).unwrap();
    assert_eq!(sig.to_string(), "<A: runtime.TaintedInt f$$INVIVO_PC(int,int)>");
    let (sig, _) = dispatch_dynamic(&ip.table, &["B", "A"], "f", 1, false).unwrap();
    assert_eq!(sig.to_string(), "<A: int f(int)>");
    assert!(dispatch_dynamic(&ip.table, &["B", "A"], "f", 2, true).is_err());
}

#[test]
fn budget_exceeded() {
    let src = "entry <Main: void main()>
class Main {
  method static <Main: void main()> regs 1 {
  top:
    jmp top
  }
}
";
    let p = parse_program(src).unwrap();
    let r = run_program(&p, &RunConfig { budget: 10, ..RunConfig::default() });
    assert_eq!(r.halted, Halt::BudgetExceeded);
    assert_eq!(r.instructions, 10);
}

#[test]
fn run_errors() {
    let div = "entry <Main: void main()>
class Main {
  method static <Main: void main()> regs 2 {
    const r0, 1
    const r1, 0
    bin div, r0, r0, r1
    ret
  }
}
";
    let r = run_program(&parse_program(div).unwrap(), &RunConfig::default());
    assert!(matches!(r.halted, Halt::RunError(ref m) if m.contains("division")), "{:?}", r.halted);
    let oob = "entry <Main: void main()>
class Main {
  method static <Main: void main()> regs 3 {
    const r0, 2
    newarr r1, int[], r0
    aload r2, r1, r0
    ret
  }
}
";
    let r = run_program(&parse_program(oob).unwrap(), &RunConfig::default());
    assert!(matches!(r.halted, Halt::RunError(ref m) if m.contains("out of bounds")), "{:?}", r.halted);
}

#[test]
fn json_layout() {
    let [_, partial, _] = levels(EX1);
    let r = run(&partial, &RunConfig::with_input(vec![5]));
    let json = r.to_json();
    assert!(json.starts_with(
        "{\"output\":[5],\"violations\":[{\"sink\":\"<stdlib.Out: void write(int)>\",\"mask\":1,\"ordinal\":1}],\"instructions\":"
    ), "{json}");
    assert!(json.ends_with(",\"halted\":\"normal\"}"));
}

#[test]
fn traced_calls_are_static_edges() {
    let p = parse_program(REFLECT).unwrap();
    let fb = analyze(&p).unwrap();
    let r = run_program(&p, &RunConfig { trace_calls: true, ..RunConfig::with_input(vec![1]) });
    let calls = r.calls.unwrap();
    assert!(!calls.is_empty());
    for e in &calls {
        assert!(fb.edges.contains(e), "{e:?}");
    }
}
