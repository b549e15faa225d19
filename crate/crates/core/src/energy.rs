//! Per-node features and cluster energy evaluation.
//!
//! Annotation attaches a [`FeatureRecord`] to every node: structural fan
//! counts, level, energy per activation (mJ) and delay (ns).  Library
//! gates derive their energy from the switching model
//! `2 * delay * dynamic_power`; task-graph nodes may override energy and
//! delay explicitly, in which case their static contribution is folded
//! into the override and treated as zero separately.
//!
//! Cluster energy combines member records:
//! * dynamic energy is additive across members;
//! * static energy charges every member's static power for the cluster's
//!   critical-path delay (CDP), except the single busiest gate, which is
//!   considered active rather than idle (a lone gate therefore wastes
//!   nothing);
//! * fan counts collapse to boundary signals only.

use crate::graph::{CircuitGraph, GateKind};
use crate::library::{GateLibrary, LibraryError};
use crate::parse::TaskGraphDoc;
use crate::units::MJ_PER_NS_UW;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error("node `{0}` is not part of the graph")]
    UnknownNode(String),
    #[error("override for `{0}` names a node that does not exist")]
    DanglingOverride(String),
}

/// Features of one node or one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub fan_in: usize,
    pub fan_out: usize,
    pub level: u32,
    /// Energy per activation, mJ.
    #[serde(rename = "power_mJ")]
    pub power_mj: f64,
    /// Delay per activation, ns.
    pub delay_ns: f64,
}

/// Explicit per-node energy/delay overrides, usually from task-graph JSON.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeOverride {
    pub power_mj: Option<f64>,
    pub delay_ms: Option<f64>,
}

pub type Overrides = BTreeMap<String, NodeOverride>;

/// Extracts the override map from a parsed task-graph document.
pub fn overrides_from_doc(doc: &TaskGraphDoc) -> Overrides {
    doc.nodes
        .iter()
        .filter(|n| n.power_mj.is_some() || n.delay_ms.is_some())
        .map(|n| {
            (
                n.name.clone(),
                NodeOverride {
                    power_mj: n.power_mj,
                    delay_ms: n.delay_ms,
                },
            )
        })
        .collect()
}

/// Energy decomposition of one node, kept alongside the public record so
/// cluster aggregation can separate switching energy from idle power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct EnergyParts {
    dynamic_mj: f64,
    static_uw: f64,
    delay_ns: f64,
}

/// A levelized circuit with features on every node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotatedGraph {
    pub circuit: CircuitGraph,
    pub features: BTreeMap<String, FeatureRecord>,
    /// Name and content hash of the library used for annotation.
    pub library_name: String,
    pub library_hash: String,
    /// Workload scale factor applied by [`AnnotatedGraph::amplify`].
    pub amplified_by: f64,
    parts: BTreeMap<String, EnergyParts>,
    /// Nodes whose energy came from an explicit override.
    override_nodes: BTreeSet<String>,
}

/// Attaches features from `lib` (and `overrides`, which win) to every node.
pub fn annotate(
    mut graph: CircuitGraph,
    lib: &GateLibrary,
    lib_source: &str,
    overrides: &Overrides,
) -> Result<AnnotatedGraph, EnergyError> {
    graph.levelize()?;
    for name in overrides.keys() {
        if graph.node(name).is_none() {
            return Err(EnergyError::DanglingOverride(name.clone()));
        }
    }
    let consumers = graph.consumers();
    let mut features = BTreeMap::new();
    let mut parts = BTreeMap::new();
    let mut override_nodes = BTreeSet::new();
    for node in &graph.nodes {
        let ov = overrides.get(&node.name).copied().unwrap_or_default();
        let cell = lib.resolve(node.kind, node.inputs.len());
        let (dynamic_mj, static_uw, delay_ns) = match (ov.power_mj, cell) {
            (Some(p), cell) => {
                // Explicit energy subsumes the static share; delay falls
                // back to the library entry when only energy is given.
                override_nodes.insert(node.name.clone());
                let delay = match ov.delay_ms {
                    Some(ms) => ms * 1e6,
                    None => cell.map(|c| c.delay_ns).unwrap_or(0.0),
                };
                (p, 0.0, delay)
            }
            (None, Ok(cell)) => {
                let delay = ov.delay_ms.map(|ms| ms * 1e6).unwrap_or(cell.delay_ns);
                (
                    2.0 * cell.delay_ns * cell.dyn_uW * MJ_PER_NS_UW,
                    cell.static_uW,
                    delay,
                )
            }
            (None, Err(e)) => return Err(e.into()),
        };
        let fan_out = consumers.get(node.name.as_str()).map_or(0, |v| v.len())
            + graph
                .primary_outputs
                .iter()
                .filter(|po| **po == node.name)
                .count();
        features.insert(
            node.name.clone(),
            FeatureRecord {
                fan_in: node.inputs.len(),
                fan_out,
                level: graph.level_of(&node.name).unwrap_or(0),
                power_mj: dynamic_mj,
                delay_ns,
            },
        );
        parts.insert(
            node.name.clone(),
            EnergyParts {
                dynamic_mj,
                static_uw,
                delay_ns,
            },
        );
    }
    Ok(AnnotatedGraph {
        circuit: graph,
        features,
        library_name: lib.name.clone(),
        library_hash: GateLibrary::content_hash(lib_source),
        amplified_by: 1.0,
        parts,
        override_nodes,
    })
}

impl AnnotatedGraph {
    /// Scales every node's energy and delay by `k`, modelling `k`
    /// back-to-back activations folded into one larger task.
    pub fn amplify(&mut self, k: f64) {
        assert!(k.is_finite() && k >= 1.0, "amplification must be >= 1");
        if k == 1.0 {
            return;
        }
        for f in self.features.values_mut() {
            f.power_mj *= k;
            f.delay_ns *= k;
        }
        for p in self.parts.values_mut() {
            p.dynamic_mj *= k;
            p.delay_ns *= k;
        }
        self.amplified_by *= k;
    }

    /// True when the node's energy may be subdivided: explicit operands and
    /// amplified workloads are repetitions of smaller work, while a plain
    /// gate is indivisible.
    pub fn is_divisible(&self, node: &str) -> bool {
        self.amplified_by > 1.0
            || self
                .circuit
                .node(node)
                .map(|n| n.kind == GateKind::Lut)
                .unwrap_or(false)
    }

    pub fn feature(&self, node: &str) -> Result<&FeatureRecord, EnergyError> {
        self.features
            .get(node)
            .ok_or_else(|| EnergyError::UnknownNode(node.to_string()))
    }

    /// Total switching energy of the combinational workload, mJ.
    pub fn workload_energy_mj(&self) -> f64 {
        self.circuit
            .combinational_nodes()
            .iter()
            .map(|n| self.parts[&n.name].dynamic_mj)
            .sum()
    }

    fn part(&self, node: &str) -> Result<EnergyParts, EnergyError> {
        self.parts
            .get(node)
            .copied()
            .ok_or_else(|| EnergyError::UnknownNode(node.to_string()))
    }

    /// Registers a synthesized node (used by operand subdivision).  The
    /// caller is responsible for keeping `circuit` valid; this only wires
    /// up the bookkeeping maps.
    pub(crate) fn insert_synthesized(
        &mut self,
        name: &str,
        record: FeatureRecord,
        divisible: bool,
    ) {
        self.parts.insert(
            name.to_string(),
            EnergyParts {
                dynamic_mj: record.power_mj,
                static_uw: 0.0,
                delay_ns: record.delay_ns,
            },
        );
        self.features.insert(name.to_string(), record);
        if divisible {
            self.override_nodes.insert(name.to_string());
        }
    }

    pub(crate) fn remove_node_records(&mut self, name: &str) {
        self.parts.remove(name);
        self.features.remove(name);
        self.override_nodes.remove(name);
    }

    /// Re-levelizes the circuit after a rewrite and refreshes the level
    /// stored in every record.  Fan counts of untouched nodes are not
    /// affected by the rewrites we perform (consumers keep their arity).
    pub(crate) fn refresh_levels(&mut self) -> Result<(), EnergyError> {
        self.circuit.levelize()?;
        for (name, f) in self.features.iter_mut() {
            f.level = self.circuit.level_of(name).unwrap_or(0);
        }
        Ok(())
    }
}

/// Switching energy of a set of gates: `2 * sum(delay_i * dyn_power_i)`,
/// with explicit operand energies standing in for their own term.
pub fn dynamic_energy(graph: &AnnotatedGraph, members: &BTreeSet<String>) -> Result<f64, EnergyError> {
    let mut total = 0.0;
    for m in members {
        total += graph.part(m)?.dynamic_mj;
    }
    Ok(total)
}

/// Critical-path delay through the induced subgraph, ns.  Disconnected
/// member sets yield the maximum over components.
pub fn critical_path_delay(
    graph: &AnnotatedGraph,
    members: &BTreeSet<String>,
) -> Result<f64, EnergyError> {
    let mut order: Vec<&String> = members.iter().collect();
    for m in &order {
        graph.part(m)?;
    }
    order.sort_by_key(|m| (graph.features[*m].level, (*m).clone()));
    let mut path: BTreeMap<&str, f64> = BTreeMap::new();
    let mut cdp: f64 = 0.0;
    for m in order {
        let node = graph
            .circuit
            .node(m)
            .ok_or_else(|| EnergyError::UnknownNode(m.clone()))?;
        let upstream = node
            .inputs
            .iter()
            .filter_map(|i| path.get(i.as_str()).copied())
            .fold(0.0, f64::max);
        let d = upstream + graph.parts[m].delay_ns;
        path.insert(m.as_str(), d);
        cdp = cdp.max(d);
    }
    Ok(cdp)
}

/// Idle energy of a set of gates: every member leaks for the cluster's
/// critical-path delay except the single largest contributor, which is
/// counted as active.  A one-gate cluster therefore wastes exactly zero.
pub fn static_energy(graph: &AnnotatedGraph, members: &BTreeSet<String>) -> Result<f64, EnergyError> {
    if members.len() <= 1 {
        for m in members {
            graph.part(m)?;
        }
        return Ok(0.0);
    }
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for m in members {
        let s = graph.part(m)?.static_uw;
        sum += s;
        max = max.max(s);
    }
    let cdp = critical_path_delay(graph, members)?;
    Ok(cdp * (sum - max) * MJ_PER_NS_UW)
}

/// Distinct signals entering (from outside the set) and leaving (consumed
/// outside the set, or primary outputs) a member set.
pub fn boundary_signals(
    graph: &AnnotatedGraph,
    members: &BTreeSet<String>,
) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut fan_in = BTreeSet::new();
    let mut fan_out = BTreeSet::new();
    let consumers = graph.circuit.consumers();
    for m in members {
        if let Some(node) = graph.circuit.node(m) {
            for i in &node.inputs {
                if !members.contains(i) {
                    fan_in.insert(i.clone());
                }
            }
            let external_use = consumers
                .get(m.as_str())
                .map(|cs| cs.iter().any(|c| !members.contains(*c)))
                .unwrap_or(false);
            if external_use || graph.circuit.is_output(m) {
                fan_out.insert(m.clone());
            }
        }
    }
    (fan_in, fan_out)
}

/// True when the induced subgraph is weakly connected.
pub fn is_connected(graph: &AnnotatedGraph, members: &BTreeSet<String>) -> bool {
    if members.len() <= 1 {
        return true;
    }
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for m in members {
        if let Some(node) = graph.circuit.node(m) {
            for i in &node.inputs {
                if members.contains(i) {
                    adj.entry(m.as_str()).or_default().push(i.as_str());
                    adj.entry(i.as_str()).or_default().push(m.as_str());
                }
            }
        }
    }
    let start = members.iter().next().unwrap().as_str();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut stack = vec![start];
    while let Some(s) = stack.pop() {
        if !seen.insert(s) {
            continue;
        }
        if let Some(next) = adj.get(s) {
            stack.extend(next.iter().copied());
        }
    }
    seen.len() == members.len()
}

/// Aggregate record of a member set treated as one cluster.
///
/// The level reported is the deepest member level; cluster graphs
/// re-levelize over their own DAG.
pub fn cluster_power(
    graph: &AnnotatedGraph,
    members: &BTreeSet<String>,
) -> Result<FeatureRecord, EnergyError> {
    let dynamic = dynamic_energy(graph, members)?;
    let stat = static_energy(graph, members)?;
    let cdp = critical_path_delay(graph, members)?;
    let (fi, fo) = boundary_signals(graph, members);
    let level = members
        .iter()
        .map(|m| graph.features[m].level)
        .max()
        .unwrap_or(0);
    Ok(FeatureRecord {
        fan_in: fi.len(),
        fan_out: fo.len(),
        level,
        power_mj: dynamic + stat,
        delay_ns: cdp,
    })
}
