//! Levelized circuit graphs.
//!
//! A [`CircuitGraph`] is a DAG of gates between primary inputs and primary
//! outputs.  Sequential elements (DFFs) cut the graph: a DFF output acts as
//! a pseudo primary input and a DFF input as a pseudo primary output, so
//! cycles through registers are legal while combinational cycles are not.
//! Every constructor path funnels through [`CircuitGraph::validate`]; no
//! partially valid graph escapes this module.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Maximum fan-in accepted for a single gate.
pub const MAX_GATE_ARITY: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("duplicate definition of signal `{0}`")]
    DuplicateSignal(String),
    #[error("signal `{0}` is consumed but never driven")]
    Undriven(String),
    #[error("combinational cycle through `{0}`")]
    CombinationalCycle(String),
    #[error("gate `{name}`: kind {kind:?} expects {expected}, got {got} inputs")]
    Arity {
        name: String,
        kind: GateKind,
        expected: &'static str,
        got: usize,
    },
    #[error("gate `{name}`: fan-in {got} exceeds the supported maximum of {MAX_GATE_ARITY}")]
    ArityLimit { name: String, got: usize },
    #[error("node `{name}`: declared output `{output}` does not match the node name")]
    OutputMismatch { name: String, output: String },
    #[error("primary output `{0}` is not driven by any node or primary input")]
    OutputUndriven(String),
}

/// Gate kinds understood by the parsers and the energy model.
///
/// `Lut` covers task-graph operands and BLIF `.names` cover functions whose
/// logic is irrelevant here; only arity, power and delay matter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GateKind {
    And,
    Nand,
    Or,
    Nor,
    Xor,
    Xnor,
    Not,
    Buf,
    Dff,
    Lut,
}

impl GateKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GateKind::And => "AND",
            GateKind::Nand => "NAND",
            GateKind::Or => "OR",
            GateKind::Nor => "NOR",
            GateKind::Xor => "XOR",
            GateKind::Xnor => "XNOR",
            GateKind::Not => "NOT",
            GateKind::Buf => "BUF",
            GateKind::Dff => "DFF",
            GateKind::Lut => "LUT",
        }
    }

    pub fn from_str_upper(s: &str) -> Option<GateKind> {
        Some(match s {
            "AND" => GateKind::And,
            "NAND" => GateKind::Nand,
            "OR" => GateKind::Or,
            "NOR" => GateKind::Nor,
            "XOR" => GateKind::Xor,
            "XNOR" => GateKind::Xnor,
            "NOT" | "INV" => GateKind::Not,
            "BUF" | "BUFF" => GateKind::Buf,
            "DFF" => GateKind::Dff,
            "LUT" => GateKind::Lut,
            _ => return None,
        })
    }

    /// (min, max) legal fan-in, plus the human-readable expectation.
    fn arity_bounds(&self) -> (usize, usize, &'static str) {
        match self {
            GateKind::Not | GateKind::Buf | GateKind::Dff => (1, 1, "exactly 1"),
            GateKind::Lut => (1, MAX_GATE_ARITY, "at least 1"),
            _ => (2, MAX_GATE_ARITY, "at least 2"),
        }
    }
}

/// One gate or operand.  `name` doubles as the driven signal, so `output`
/// always equals `name`; both are kept so serialized graphs stay explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateNode {
    pub name: String,
    pub kind: GateKind,
    pub inputs: Vec<String>,
    pub output: String,
}

impl GateNode {
    pub fn new(name: impl Into<String>, kind: GateKind, inputs: Vec<String>) -> GateNode {
        let name = name.into();
        GateNode {
            output: name.clone(),
            name,
            kind,
            inputs,
        }
    }
}

/// A validated netlist.  `levels` is filled by [`CircuitGraph::levelize`]
/// and maps every signal (primary inputs included) to its distance from the
/// input boundary along the longest combinational path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitGraph {
    pub name: String,
    pub primary_inputs: Vec<String>,
    pub primary_outputs: Vec<String>,
    pub nodes: Vec<GateNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<BTreeMap<String, u32>>,
}

impl CircuitGraph {
    /// Builds and validates a graph in one step.
    pub fn new(
        name: impl Into<String>,
        primary_inputs: Vec<String>,
        primary_outputs: Vec<String>,
        nodes: Vec<GateNode>,
    ) -> Result<CircuitGraph, GraphError> {
        let g = CircuitGraph {
            name: name.into(),
            primary_inputs,
            primary_outputs,
            nodes,
            levels: None,
        };
        g.validate()?;
        Ok(g)
    }

    /// Index of nodes by name.
    pub fn node_index(&self) -> BTreeMap<&str, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.name.as_str(), i))
            .collect()
    }

    pub fn node(&self, name: &str) -> Option<&GateNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Consumers of each signal, including a virtual consumer entry for
    /// primary outputs (`None` in the caller's terms is not needed; POs are
    /// reported separately by `is_output`).
    pub fn consumers(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut map: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for n in &self.nodes {
            for i in &n.inputs {
                map.entry(i.as_str()).or_default().push(n.name.as_str());
            }
        }
        map
    }

    pub fn is_input(&self, signal: &str) -> bool {
        self.primary_inputs.iter().any(|s| s == signal)
    }

    pub fn is_output(&self, signal: &str) -> bool {
        self.primary_outputs.iter().any(|s| s == signal)
    }

    /// Structural checks: unique drivers, no undriven sinks, arity bounds,
    /// and acyclicity of the combinational subgraph (DFF outputs are
    /// sources, DFF inputs are sinks).
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut driven: BTreeSet<&str> = BTreeSet::new();
        for pi in &self.primary_inputs {
            if !driven.insert(pi.as_str()) {
                return Err(GraphError::DuplicateSignal(pi.clone()));
            }
        }
        for n in &self.nodes {
            if n.output != n.name {
                return Err(GraphError::OutputMismatch {
                    name: n.name.clone(),
                    output: n.output.clone(),
                });
            }
            if !driven.insert(n.name.as_str()) {
                return Err(GraphError::DuplicateSignal(n.name.clone()));
            }
        }
        let mut seen_po: BTreeSet<&str> = BTreeSet::new();
        for po in &self.primary_outputs {
            if !seen_po.insert(po.as_str()) {
                return Err(GraphError::DuplicateSignal(po.clone()));
            }
            if !driven.contains(po.as_str()) {
                return Err(GraphError::OutputUndriven(po.clone()));
            }
        }
        for n in &self.nodes {
            let (lo, hi, expected) = n.kind.arity_bounds();
            if n.inputs.len() > MAX_GATE_ARITY {
                return Err(GraphError::ArityLimit {
                    name: n.name.clone(),
                    got: n.inputs.len(),
                });
            }
            if n.inputs.len() < lo || n.inputs.len() > hi {
                return Err(GraphError::Arity {
                    name: n.name.clone(),
                    kind: n.kind,
                    expected,
                    got: n.inputs.len(),
                });
            }
            for i in &n.inputs {
                if !driven.contains(i.as_str()) {
                    return Err(GraphError::Undriven(i.clone()));
                }
            }
        }
        self.check_combinational_cycles()?;
        Ok(())
    }

    /// Kahn's algorithm over the combinational subgraph.  DFF nodes are
    /// seeded as sources and their inputs ignored, so register loops do not
    /// count as cycles.
    fn check_combinational_cycles(&self) -> Result<(), GraphError> {
        let index = self.node_index();
        let mut indegree: Vec<usize> = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            if n.kind == GateKind::Dff {
                indegree.push(0);
                continue;
            }
            let d = n
                .inputs
                .iter()
                .filter(|i| {
                    index
                        .get(i.as_str())
                        .map(|&j| self.nodes[j].kind != GateKind::Dff)
                        .unwrap_or(false)
                })
                .count();
            indegree.push(d);
        }
        let mut ready: Vec<usize> = indegree
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(i, _)| i)
            .collect();
        let mut consumers: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.kind == GateKind::Dff {
                continue;
            }
            for input in &n.inputs {
                if let Some(&j) = index.get(input.as_str()) {
                    if self.nodes[j].kind != GateKind::Dff {
                        consumers.entry(j).or_default().push(i);
                    }
                }
            }
        }
        let mut visited = 0usize;
        while let Some(i) = ready.pop() {
            visited += 1;
            if let Some(out) = consumers.get(&i) {
                for &c in out {
                    indegree[c] -= 1;
                    if indegree[c] == 0 {
                        ready.push(c);
                    }
                }
            }
        }
        if visited != self.nodes.len() {
            // Deterministic sample node for the error message.
            let sample = self
                .nodes
                .iter()
                .enumerate()
                .filter(|(i, _)| indegree[*i] > 0)
                .map(|(_, n)| n.name.clone())
                .min()
                .unwrap_or_default();
            return Err(GraphError::CombinationalCycle(sample));
        }
        Ok(())
    }

    /// Longest-path levelization.  Primary inputs and DFF outputs sit at
    /// level 0; a gate sits one past its deepest input.  The result is
    /// stored on the graph and returned.  Deterministic regardless of node
    /// declaration order.
    pub fn levelize(&mut self) -> Result<&BTreeMap<String, u32>, GraphError> {
        self.validate()?;
        let mut levels: BTreeMap<String, u32> = BTreeMap::new();
        for pi in &self.primary_inputs {
            levels.insert(pi.clone(), 0);
        }
        for n in &self.nodes {
            if n.kind == GateKind::Dff {
                levels.insert(n.name.clone(), 0);
            }
        }
        // Repeated relaxation in topological fashion: simple worklist over a
        // DAG terminates after each node resolves once all inputs resolve.
        let mut pending: Vec<&GateNode> = self
            .nodes
            .iter()
            .filter(|n| n.kind != GateKind::Dff)
            .collect();
        while !pending.is_empty() {
            let before = pending.len();
            pending.retain(|n| {
                let mut max = 0u32;
                for i in &n.inputs {
                    match levels.get(i.as_str()) {
                        Some(&l) => max = max.max(l),
                        None => return true,
                    }
                }
                levels.insert(n.name.clone(), max + 1);
                false
            });
            assert!(
                pending.len() < before,
                "levelize stalled on an acyclic graph"
            );
        }
        self.levels = Some(levels);
        Ok(self.levels.as_ref().unwrap())
    }

    /// Level of a signal; requires a prior `levelize` call.
    pub fn level_of(&self, signal: &str) -> Option<u32> {
        self.levels.as_ref().and_then(|m| m.get(signal).copied())
    }

    /// Names of combinational (non-DFF) nodes.
    pub fn combinational_nodes(&self) -> Vec<&GateNode> {
        self.nodes
            .iter()
            .filter(|n| n.kind != GateKind::Dff)
            .collect()
    }

    /// Names of sequential (DFF) nodes.
    pub fn sequential_nodes(&self) -> Vec<&GateNode> {
        self.nodes
            .iter()
            .filter(|n| n.kind == GateKind::Dff)
            .collect()
    }
}
