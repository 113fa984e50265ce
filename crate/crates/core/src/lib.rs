//! Dynamic taint tracking through partial instrumentation.
//!
//! The pipeline extracts call-graph facts from a TIR program, computes the
//! methods that lie between taint sources and sinks, closes that set under the
//! rules that keep partially instrumented code consistent, rewrites only those
//! methods with shadow taint state, and runs the result on an interpreter that
//! records sink violations and counts executed instructions.

pub mod builtins;
pub mod cli;
pub mod extras;
pub mod facts;
pub mod instrument;
pub mod scope;
pub mod tir;
pub mod vm;
