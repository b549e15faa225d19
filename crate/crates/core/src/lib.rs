//! Synthesis and simulation toolkit for intermittently powered designs.
//!
//! The library covers the full flow from a gate-level or task-graph
//! description to an energy-harvesting execution report:
//!
//! 1. [`parse`] reads `.bench`, structural BLIF, or task-graph JSON into a
//!    [`graph::CircuitGraph`] and levelizes it.
//! 2. [`energy`] attaches per-node power/delay features from a
//!    [`library::GateLibrary`] and evaluates cluster-level energy.
//! 3. [`policy`] reshapes the levelized graph into power-bounded clusters
//!    (split, merge, or both).
//! 4. [`placement`] chooses non-volatile checkpoint frontiers under an
//!    energy budget.
//! 5. [`codegen`] emits the checkpoint-staged netlist and validates it.
//! 6. [`sim`] runs the power-management state machine against a harvested
//!    energy trace.
//! 7. [`eval`] compares backup schemes over a benchmark/trace/seed matrix.
//!
//! All public entry points are deterministic: identical inputs (including
//! seeds) produce byte-identical serialized outputs.

pub mod cluster;
pub mod codegen;
pub mod energy;
pub mod eval;
pub mod graph;
pub mod library;
pub mod par;
pub mod parse;
pub mod placement;
pub mod policy;
pub mod sim;
pub mod units;

pub use cluster::ClusterGraph;
pub use energy::{AnnotatedGraph, FeatureRecord};
pub use eval::{EvalConfig, Evaluation, Scheme};
pub use graph::{CircuitGraph, GateKind, GateNode};
pub use library::GateLibrary;
pub use placement::{NvmParams, NvmPlan, PlacementWeights};
pub use policy::PolicyConfig;
pub use sim::{EnergyConfig, HarvestTrace, RunLimit, SimReport, WorkloadPlan};
