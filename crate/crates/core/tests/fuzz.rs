mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taintweave::cli::pipeline::{analyze_program, build_levels, PipelineOptions};
use taintweave::extras::{InstrumentSet, Rule};
use taintweave::facts::analyze;
use taintweave::instrument::{emit_instrumented, instrument_program, parse_instrumented};
use taintweave::scope::SeedConfig;
use taintweave::tir::{emit_program, parse_program, validate_program, Program};
use taintweave::vm::{run, Halt, RunConfig};

fn program(seed: u64) -> (String, Program) {
    let text = common::gen_program(&mut ChaCha8Rng::seed_from_u64(seed));
    let p = parse_program(&text).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{text}"));
    let errors = validate_program(&p);
    assert!(errors.is_empty(), "seed {seed}: {errors:?}\n{text}");
    (text, p)
}

#[test]
fn generated_programs_round_trip() {
    for seed in 0..50 {
        let (_, p) = program(seed);
        assert_eq!(parse_program(&emit_program(&p)).unwrap(), p, "seed {seed}");
    }
}

#[test]
fn random_subsets_stay_linkable() {
    for seed in 0..100 {
        let (text, p) = program(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        let subset = p.method_sigs().into_iter().filter(|_| rng.gen_bool(0.5));
        let set = InstrumentSet::from_methods(subset, Rule::Intersection);
        let ip = instrument_program(&p, &set).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{text}"));
        let errors = validate_program(&ip.program);
        assert!(errors.is_empty(), "seed {seed}: {errors:?}\n{}", emit_instrumented(&ip));
        assert_eq!(parse_instrumented(&emit_instrumented(&ip)).unwrap(), ip, "seed {seed}");
    }
}

#[test]
fn instrumentation_preserves_output() {
    let seeds = SeedConfig::default();
    let mut ran = 0;
    for seed in 0..150 {
        let (text, p) = program(seed);
        let analysis = analyze_program(&p, &seeds, PipelineOptions::default()).unwrap();
        let levels = build_levels(&p, &analysis.set).unwrap();
        let cfg = RunConfig { input: (1..=16).collect(), budget: 2_000_000, ..RunConfig::default() };
        let none = run(&levels.none, &cfg);
        if none.halted == Halt::BudgetExceeded {
            continue;
        }
        assert_eq!(none.halted, Halt::Normal, "seed {seed}\n{text}");
        ran += 1;
        for (label, ip) in [("partial", &levels.partial), ("full", &levels.full)] {
            let r = run(ip, &cfg);
            assert_eq!(r.halted, Halt::Normal, "seed {seed} {label}\n{}", emit_instrumented(ip));
            assert_eq!(r.output, none.output, "seed {seed} {label}\n{}", emit_instrumented(ip));
            assert!(r.instructions >= none.instructions, "seed {seed} {label}");
        }
        assert!(levels.partial.set.is_subset(&levels.full.set));
    }
    assert!(ran >= 100, "only {ran} programs ran to completion");
}

#[test]
fn traced_calls_are_static_edges() {
    for seed in 0..60 {
        let (text, p) = program(seed);
        let fb = analyze(&p).unwrap();
        let cfg = RunConfig { input: vec![3, 1, 4], trace_calls: true, budget: 2_000_000, ..RunConfig::default() };
        let r = run(&taintweave::instrument::InstrumentedProgram::plain(p.clone()), &cfg);
        for e in r.calls.unwrap() {
            assert!(fb.edges.contains(&e), "seed {seed}: {e:?} missing\n{text}");
        }
    }
}

#[test]
fn partial_flows_are_a_subset_of_full_flows() {
    let seeds = SeedConfig::default();
    let mut flows = 0;
    for seed in 0..150 {
        let (_, p) = program(seed);
        let analysis = analyze_program(&p, &seeds, PipelineOptions::default()).unwrap();
        let levels = build_levels(&p, &analysis.set).unwrap();
        let cfg = RunConfig { input: (1..=16).collect(), budget: 2_000_000, ..RunConfig::default() };
        let (partial, full) = (run(&levels.partial, &cfg), run(&levels.full, &cfg));
        if full.halted != Halt::Normal {
            continue;
        }
        flows += usize::from(!full.violations.is_empty());
        for v in &partial.violations {
            let hit = full.violations.iter().find(|f| f.ordinal == v.ordinal && f.sink == v.sink);
            assert!(hit.is_some_and(|f| f.mask & v.mask == v.mask), "seed {seed}: {v:?} not in {:?}", full.violations);
        }
    }
    assert!(flows >= 20, "only {flows} programs had a flow");
}
