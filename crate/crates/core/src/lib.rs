//! Phase structures and phase invariants for first-order transition systems.
//!
//! The crate parses `.pfz` models, generates the verification conditions of a
//! phase automaton, discharges them with an external SMT solver, and infers
//! phase characterizations with a phase-aware PDR.

pub mod logic;
pub mod frontend;
pub mod solver;
pub mod system;
pub mod automaton;
pub mod vcgen;
pub mod infer;
