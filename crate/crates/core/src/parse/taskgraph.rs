//! Task-graph JSON dialect.
//!
//! The format describes operand-level dataflow: each node is a function
//! block named after the signal it produces, with optional explicit energy
//! and delay figures that override any gate library during annotation.
//! `schemas/taskgraph.schema.json` in the repository root documents the
//! shape.  Checkpoint-staged netlists emitted by code generation extend
//! nodes with `stage` and `nvm` fields; the reader accepts and preserves
//! them so those files round-trip.

use super::ParseError;
use crate::graph::{CircuitGraph, GateKind, GateNode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskNode {
    pub name: String,
    #[serde(default)]
    pub inputs: Vec<String>,
    /// Energy per activation in mJ; overrides the gate library.
    #[serde(rename = "power_mJ", default, skip_serializing_if = "Option::is_none")]
    pub power_mj: Option<f64>,
    /// Delay in ms; overrides the gate library.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<f64>,
    /// Checkpoint stage index, present only in generated netlists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<u32>,
    /// True when the node's outputs are stored non-volatilely.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nvm: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskGraphDoc {
    #[serde(default)]
    pub name: Option<String>,
    pub primary_inputs: Vec<String>,
    pub primary_outputs: Vec<String>,
    pub nodes: Vec<TaskNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl TaskGraphDoc {
    pub fn into_graph(self) -> Result<CircuitGraph, ParseError> {
        let nodes = self
            .nodes
            .iter()
            .map(|t| GateNode::new(&t.name, GateKind::Lut, t.inputs.clone()))
            .collect();
        let mut g = CircuitGraph::new(
            self.name.clone().unwrap_or_else(|| "taskgraph".into()),
            self.primary_inputs.clone(),
            self.primary_outputs.clone(),
            nodes,
        )?;
        g.levelize()?;
        Ok(g)
    }
}

/// Parses the JSON dialect into a validated, levelized graph.  Per-node
/// overrides are re-read later by annotation via [`parse_taskgraph_doc`].
pub fn parse_taskgraph_json(text: &str) -> Result<CircuitGraph, ParseError> {
    parse_taskgraph_doc(text)?.into_graph()
}

/// Parses only the document, keeping overrides and metadata.
pub fn parse_taskgraph_doc(text: &str) -> Result<TaskGraphDoc, ParseError> {
    let doc: TaskGraphDoc = serde_json::from_str(text)?;
    for node in &doc.nodes {
        if node.inputs.is_empty() {
            return Err(ParseError::Schema(format!(
                "node `{}` has no inputs; source values belong in primary_inputs",
                node.name
            )));
        }
        if let Some(p) = node.power_mj {
            if !(p.is_finite() && p >= 0.0) {
                return Err(ParseError::Schema(format!(
                    "node `{}`: power_mJ must be finite and non-negative",
                    node.name
                )));
            }
        }
        if let Some(d) = node.delay_ms {
            if !(d.is_finite() && d >= 0.0) {
                return Err(ParseError::Schema(format!(
                    "node `{}`: delay_ms must be finite and non-negative",
                    node.name
                )));
            }
        }
    }
    Ok(doc)
}
