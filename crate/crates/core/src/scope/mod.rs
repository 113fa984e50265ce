//! Source, sink and intersection sets over the flattened call graph.
//!
//! Source membership flows from callers of a source seed down to their
//! callees; sink membership flows from callers of a sink seed up to their
//! callers. Seeds are intrinsics, so they never appear in the results.

mod files;

use std::collections::{BTreeSet, HashMap};

pub use files::{emit_methods_file, parse_methods_file, MethodsFileError, SeedConfig, SeedError};

use crate::facts::CallEdge;
use crate::tir::MethodSig;

/// Least fixpoint of `step` from `base`, evaluated semi-naively: each round
/// applies `step` only to the members derived in the previous round.
pub fn fixpoint<T, I>(base: impl IntoIterator<Item = T>, mut step: impl FnMut(&T) -> I) -> BTreeSet<T>
where
    T: Ord + Clone,
    I: IntoIterator<Item = T>,
{
    let mut all = BTreeSet::new();
    let mut delta: Vec<T> = Vec::new();
    for x in base {
        if all.insert(x.clone()) {
            delta.push(x);
        }
    }
    while !delta.is_empty() {
        let mut next = Vec::new();
        for x in &delta {
            for y in step(x) {
                if all.insert(y.clone()) {
                    next.push(y);
                }
            }
        }
        delta = next;
    }
    all
}

/// Adjacency view of a set of edges, with each signature interned once.
#[derive(Debug, Default)]
pub struct CallGraph<'e> {
    nodes: Vec<&'e MethodSig>,
    index: HashMap<&'e MethodSig, usize>,
    succ: Vec<Vec<usize>>,
    pred: Vec<Vec<usize>>,
}

impl<'e> CallGraph<'e> {
    pub fn new(edges: impl IntoIterator<Item = &'e CallEdge>) -> Self {
        let mut g = CallGraph::default();
        for e in edges {
            let (a, b) = (g.intern(&e.caller), g.intern(&e.callee));
            g.succ[a].push(b);
            g.pred[b].push(a);
        }
        g
    }

    fn intern(&mut self, m: &'e MethodSig) -> usize {
        *self.index.entry(m).or_insert_with(|| {
            self.nodes.push(m);
            self.succ.push(Vec::new());
            self.pred.push(Vec::new());
            self.nodes.len() - 1
        })
    }

    fn id(&self, m: &MethodSig) -> Option<usize> {
        self.index.get(m).copied()
    }

    pub fn callees(&self, m: &MethodSig) -> impl Iterator<Item = &'e MethodSig> + '_ {
        self.id(m).into_iter().flat_map(|i| self.succ[i].iter().map(|&j| self.nodes[j]))
    }

    pub fn callers(&self, m: &MethodSig) -> impl Iterator<Item = &'e MethodSig> + '_ {
        self.id(m).into_iter().flat_map(|i| self.pred[i].iter().map(|&j| self.nodes[j]))
    }

    fn callers_of_all(&self, seeds: &[MethodSig]) -> Vec<usize> {
        seeds.iter().filter_map(|s| self.id(s)).flat_map(|i| self.pred[i].iter().copied()).collect()
    }

    /// Members of `ids` that are application methods.
    fn application_only(&self, ids: BTreeSet<usize>) -> BTreeSet<MethodSig> {
        ids.into_iter().map(|i| self.nodes[i]).filter(|m| !m.is_intrinsic()).cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScopeOptions {
    /// Also propagate source membership from callee to caller, so tainted
    /// return values reach callers that never call a source themselves.
    pub source_caller_closure: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScopeResult {
    pub source: BTreeSet<MethodSig>,
    pub sink: BTreeSet<MethodSig>,
    pub intersection: BTreeSet<MethodSig>,
}

pub fn compute_source_set(edges: &BTreeSet<CallEdge>, seeds: &SeedConfig) -> BTreeSet<MethodSig> {
    compute_source_set_with(edges, seeds, ScopeOptions::default())
}

pub fn compute_source_set_with(
    edges: &BTreeSet<CallEdge>,
    seeds: &SeedConfig,
    opts: ScopeOptions,
) -> BTreeSet<MethodSig> {
    let g = CallGraph::new(edges);
    let set = fixpoint(g.callers_of_all(&seeds.sources), |&m| {
        let mut out = g.succ[m].clone();
        if opts.source_caller_closure {
            out.extend_from_slice(&g.pred[m]);
        }
        out
    });
    g.application_only(set)
}

pub fn compute_sink_set(edges: &BTreeSet<CallEdge>, seeds: &SeedConfig) -> BTreeSet<MethodSig> {
    let g = CallGraph::new(edges);
    let set = fixpoint(g.callers_of_all(&seeds.sinks), |&m| g.pred[m].clone());
    g.application_only(set)
}

pub fn compute_intersection(source: BTreeSet<MethodSig>, sink: BTreeSet<MethodSig>) -> ScopeResult {
    let intersection = source.intersection(&sink).cloned().collect();
    ScopeResult { source, sink, intersection }
}

/// All three sets in one call.
pub fn compute_scope(edges: &BTreeSet<CallEdge>, seeds: &SeedConfig, opts: ScopeOptions) -> ScopeResult {
    compute_intersection(compute_source_set_with(edges, seeds, opts), compute_sink_set(edges, seeds))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(name: &str) -> MethodSig {
        format!("<G: void {name}()>").parse().unwrap()
    }

    fn read() -> MethodSig {
        "<stdlib.In: int read()>".parse().unwrap()
    }

    fn write() -> MethodSig {
        "<stdlib.Out: void write(int)>".parse().unwrap()
    }

    fn edges(pairs: &[(MethodSig, MethodSig)]) -> BTreeSet<CallEdge> {
        pairs.iter().map(|(a, b)| CallEdge::new(a.clone(), b.clone())).collect()
    }

    fn seeds() -> SeedConfig {
        SeedConfig::new(vec![read()], vec![write()]).unwrap()
    }

    fn set(names: &[&str]) -> BTreeSet<MethodSig> {
        names.iter().map(|n| m(n)).collect()
    }

    #[test]
    fn fixpoint_trivia() {
        assert!(fixpoint(Vec::<u32>::new(), |x| vec![*x + 1]).is_empty());
        assert_eq!(fixpoint([7u32], |x| vec![*x]), BTreeSet::from([7]));
        assert_eq!(fixpoint([0u32], |x| if *x < 5 { vec![x + 1] } else { vec![] }).len(), 6);
    }

    #[test]
    fn empty_graph() {
        let e = BTreeSet::new();
        assert!(compute_source_set(&e, &seeds()).is_empty());
        assert!(compute_sink_set(&e, &seeds()).is_empty());
    }

    #[test]
    fn ex1_sets() {
        let e = edges(&[(m("main"), read()), (m("main"), m("h")), (m("h"), write())]);
        assert_eq!(compute_source_set(&e, &seeds()), set(&["main", "h"]));
        assert_eq!(compute_sink_set(&e, &seeds()), set(&["h", "main"]));
        let r = compute_scope(&e, &seeds(), ScopeOptions::default());
        assert_eq!(r.intersection, set(&["main", "h"]));
    }

    #[test]
    fn cycle_terminates() {
        let e = edges(&[(m("a"), m("b")), (m("b"), m("a")), (m("a"), read())]);
        assert_eq!(compute_source_set(&e, &seeds()), set(&["a", "b"]));
    }

    #[test]
    fn sink_excludes_unrelated() {
        let e = edges(&[(m("main"), m("g")), (m("g"), write()), (m("k"), m("k2"))]);
        assert_eq!(compute_sink_set(&e, &seeds()), set(&["g", "main"]));
    }

    #[test]
    fn source_asymmetry_and_flag() {
        // r calls read and returns to main; main never calls a source itself
        let e = edges(&[(m("main"), m("r")), (m("r"), read()), (m("main"), write())]);
        assert_eq!(compute_source_set(&e, &seeds()), set(&["r"]));
        let opts = ScopeOptions { source_caller_closure: true };
        assert_eq!(compute_source_set_with(&e, &seeds(), opts), set(&["main", "r"]));
    }

    #[test]
    fn intersection_algebra() {
        let r = compute_intersection(set(&["a", "b", "c"]), set(&["b", "c", "d"]));
        assert_eq!(r.intersection, set(&["b", "c"]));
        assert!(compute_intersection(set(&["a"]), set(&["b"])).intersection.is_empty());
    }
}
