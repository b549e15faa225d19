//! Staged netlist generation and validation.
//!
//! Code generation binds a clustered graph to a checkpoint plan: every
//! cluster gets a stage index (the number of cuts below its level), and
//! every cut becomes a stage boundary with a stored signal set.  The
//! result serializes to task-graph JSON with `stage` and `nvm` markers so
//! downstream tooling can see exactly where state is persisted.
//!
//! [`NvNetlist::validate`] re-derives the safety argument from scratch:
//! structure, stage monotonicity, per-stage energy, optional timing, and
//! restore consistency.  A clean pipeline yields no diagnostics.  All
//! fields are public so tests can inject faults and watch them surface.

use crate::cluster::ClusterGraph;
use crate::parse::{TaskGraphDoc, TaskNode};
use crate::placement::NvmPlan;
use crate::policy::PolicyConfig;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Provenance of a generated netlist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetlistMetadata {
    pub tool_version: String,
    pub library_name: String,
    pub library_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyConfig>,
}

/// A clustered graph bound to a checkpoint plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NvNetlist {
    pub clusters: ClusterGraph,
    pub plan: NvmPlan,
    /// Cluster name to stage index.
    pub stage_of: BTreeMap<String, u32>,
    pub metadata: NetlistMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiagnosticKind {
    /// The base circuit or the cluster partition is broken.
    InvalidStructure,
    /// A cluster is missing its stage, or an edge runs to a lower stage.
    StageRegression,
    /// Restoring, replaying and backing up a stage exceeds the usable budget.
    StageOverBudget,
    /// Stage delay plus checkpoint write latency misses the clock period.
    ClockViolation,
    /// A cross-stage signal is absent from the cut it must be restored from.
    MissingRestore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// Cluster, signal or stage the finding is about.
    pub subject: String,
    pub message: String,
}

impl Diagnostic {
    fn new(kind: DiagnosticKind, subject: impl Into<String>, message: String) -> Diagnostic {
        Diagnostic {
            kind,
            subject: subject.into(),
            message,
        }
    }
}

/// Binds clusters to a plan, assigning stage indices.
pub fn generate(clusters: ClusterGraph, plan: NvmPlan) -> NvNetlist {
    let stage_of = clusters
        .clusters
        .values()
        .map(|c| (c.name.clone(), plan.stage_of_level(c.record.level)))
        .collect();
    let metadata = NetlistMetadata {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        library_name: clusters.base.library_name.clone(),
        library_hash: clusters.base.library_hash.clone(),
        policy: clusters.policy.clone(),
    };
    NvNetlist {
        clusters,
        plan,
        stage_of,
        metadata,
    }
}

impl NvNetlist {
    /// Re-checks the netlist from first principles.  Returns one
    /// diagnostic per finding; an empty vector means the pipeline is
    /// sound.  Without a clock period the timing check is skipped with an
    /// informational log line only.
    pub fn validate(&self, clock_period_ns: Option<f64>) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if let Err(e) = self.clusters.base.circuit.validate() {
            out.push(Diagnostic::new(
                DiagnosticKind::InvalidStructure,
                self.clusters.base.circuit.name.clone(),
                format!("base circuit: {e}"),
            ));
        }
        if let Err(e) = self.clusters.validate() {
            out.push(Diagnostic::new(
                DiagnosticKind::InvalidStructure,
                self.clusters.base.circuit.name.clone(),
                format!("cluster partition: {e}"),
            ));
        }
        if !out.is_empty() {
            // Downstream checks assume sound structure.
            return out;
        }
        self.check_stage_grading(&mut out);
        self.check_stage_energy(&mut out);
        self.check_timing(clock_period_ns, &mut out);
        self.check_restore_consistency(&mut out);
        out
    }

    fn stage(&self, cluster: &str) -> Option<u32> {
        self.stage_of.get(cluster).copied()
    }

    /// Every cluster has a stage and no quotient edge descends.
    fn check_stage_grading(&self, out: &mut Vec<Diagnostic>) {
        for name in self.clusters.clusters.keys() {
            if self.stage(name).is_none() {
                out.push(Diagnostic::new(
                    DiagnosticKind::StageRegression,
                    name.clone(),
                    format!("cluster `{name}` has no stage index"),
                ));
            }
        }
        for (a, b) in &self.clusters.edges {
            if let (Some(sa), Some(sb)) = (self.stage(a), self.stage(b)) {
                if sa > sb {
                    out.push(Diagnostic::new(
                        DiagnosticKind::StageRegression,
                        b.clone(),
                        format!(
                            "edge {a} -> {b} runs from stage {sa} back to stage {sb}"
                        ),
                    ));
                }
            }
        }
    }

    /// Restore + replay-cone + backup of every stage fits the usable
    /// budget.  Recomputed here directly over the quotient DAG rather
    /// than through the planner.
    fn check_stage_energy(&self, out: &mut Vec<Diagnostic>) {
        let effective = self.plan.alpha * self.plan.budget_mj;
        let cut_below: BTreeMap<u32, &crate::placement::CutRecord> = self
            .plan
            .cuts
            .iter()
            .enumerate()
            .map(|(i, c)| (i as u32 + 1, c))
            .collect();
        let backup_of_stage: BTreeMap<u32, f64> = self
            .plan
            .cuts
            .iter()
            .enumerate()
            .map(|(i, c)| (i as u32, c.backup_cost_mj))
            .collect();
        for (name, cluster) in &self.clusters.clusters {
            let Some(stage) = self.stage(name) else { continue };
            let restore = cut_below.get(&stage).map_or(0.0, |c| c.restore_cost_mj);
            let backup = backup_of_stage.get(&stage).copied().unwrap_or(0.0);
            let mut replay = cluster.record.power_mj;
            let mut seen = BTreeSet::new();
            let mut stack = vec![name.clone()];
            while let Some(c) = stack.pop() {
                for p in self.clusters.predecessors(&c) {
                    if self.stage(p) == Some(stage) && seen.insert(p.to_string()) {
                        replay += self.clusters.clusters[p].record.power_mj;
                        stack.push(p.to_string());
                    }
                }
            }
            let total = restore + replay + backup;
            if total > effective {
                out.push(Diagnostic::new(
                    DiagnosticKind::StageOverBudget,
                    name.clone(),
                    format!(
                        "stage {stage}: restoring ({restore} mJ), replaying up to \
                         `{name}` ({replay} mJ) and backing up ({backup} mJ) needs \
                         {total} mJ but only {effective} mJ is usable"
                    ),
                ));
            }
        }
    }

    /// Longest delay path through each stage plus the checkpoint write
    /// latency must fit the clock period.
    fn check_timing(&self, clock_period_ns: Option<f64>, out: &mut Vec<Diagnostic>) {
        let Some(clock) = clock_period_ns else {
            log::info!("no clock period supplied; skipping the timing check");
            return;
        };
        let mut stage_paths: BTreeMap<u32, BTreeMap<String, f64>> = BTreeMap::new();
        // Clusters in level order so predecessors are finished first.
        let mut order: Vec<&crate::cluster::Cluster> = self.clusters.clusters.values().collect();
        order.sort_by_key(|c| (c.record.level, c.name.clone()));
        for cluster in order {
            let Some(stage) = self.stage(&cluster.name) else { continue };
            let upstream = self
                .clusters
                .predecessors(&cluster.name)
                .into_iter()
                .filter(|p| self.stage(p) == Some(stage))
                .filter_map(|p| stage_paths.get(&stage).and_then(|m| m.get(p)).copied())
                .fold(0.0, f64::max);
            stage_paths
                .entry(stage)
                .or_default()
                .insert(cluster.name.clone(), upstream + cluster.record.delay_ns);
        }
        for (i, cut) in self.plan.cuts.iter().enumerate() {
            let stage = i as u32;
            let cdp = stage_paths
                .get(&stage)
                .map(|m| m.values().copied().fold(0.0, f64::max))
                .unwrap_or(0.0);
            let write =
                cut.stored_signals.len() as f64 * self.plan.nvm.write_latency_ns_per_word;
            if cdp + write > clock {
                out.push(Diagnostic::new(
                    DiagnosticKind::ClockViolation,
                    format!("stage {stage}"),
                    format!(
                        "stage {stage} needs {cdp} ns of logic plus {write} ns of \
                         checkpoint writes, exceeding the {clock} ns clock period"
                    ),
                ));
            }
        }
        if let Some((stage, paths)) = stage_paths.last_key_value() {
            if *stage == self.plan.cuts.len() as u32 {
                let cdp = paths.values().copied().fold(0.0, f64::max);
                if cdp > clock {
                    out.push(Diagnostic::new(
                        DiagnosticKind::ClockViolation,
                        format!("stage {stage}"),
                        format!(
                            "final stage {stage} needs {cdp} ns of logic, exceeding \
                             the {clock} ns clock period"
                        ),
                    ));
                }
            }
        }
    }

    /// Every signal a stage consumes is a primary input, a register
    /// output, produced in the same stage, or present in the cut the
    /// stage restores from.
    fn check_restore_consistency(&self, out: &mut Vec<Diagnostic>) {
        let circuit = &self.clusters.base.circuit;
        let registers: BTreeSet<&str> = circuit
            .sequential_nodes()
            .iter()
            .map(|n| n.name.as_str())
            .collect();
        for (name, cluster) in &self.clusters.clusters {
            let Some(stage) = self.stage(name) else { continue };
            let stored_below: Option<&Vec<String>> = (stage > 0)
                .then(|| self.plan.cuts.get(stage as usize - 1))
                .flatten()
                .map(|c| &c.stored_signals);
            for m in &cluster.members {
                let Some(node) = circuit.node(m) else { continue };
                for input in &node.inputs {
                    if circuit.is_input(input) || registers.contains(input.as_str()) {
                        continue;
                    }
                    let same_stage = self
                        .clusters
                        .cluster_of(input)
                        .and_then(|c| self.stage(c))
                        == Some(stage);
                    if same_stage {
                        continue;
                    }
                    let restorable = stored_below
                        .map(|s| s.iter().any(|x| x == input))
                        .unwrap_or(false);
                    if !restorable {
                        out.push(Diagnostic::new(
                            DiagnosticKind::MissingRestore,
                            input.clone(),
                            format!(
                                "stage {stage} cluster `{name}` reads `{input}`, \
                                 which is not restored by the cut below it"
                            ),
                        ));
                    }
                }
            }
        }
    }

    /// Serializes the staged design as task-graph JSON.  Gate kinds
    /// flatten to generic operands; `stage` and `nvm` markers carry the
    /// checkpoint structure, and the document metadata records the plan.
    pub fn emit_staged_doc(&self) -> TaskGraphDoc {
        let circuit = &self.clusters.base.circuit;
        let stored: BTreeSet<&str> = self
            .plan
            .cuts
            .iter()
            .flat_map(|c| c.stored_signals.iter().map(String::as_str))
            .collect();
        let nodes = circuit
            .nodes
            .iter()
            .map(|n| {
                let feature = self.clusters.base.features.get(&n.name);
                let stage = self
                    .clusters
                    .cluster_of(&n.name)
                    .and_then(|c| self.stage(c));
                TaskNode {
                    name: n.name.clone(),
                    inputs: n.inputs.clone(),
                    power_mj: feature.map(|f| f.power_mj),
                    delay_ms: feature.map(|f| f.delay_ns * 1e-6),
                    stage,
                    nvm: stored.contains(n.name.as_str()).then_some(true),
                }
            })
            .collect();
        TaskGraphDoc {
            name: Some(circuit.name.clone()),
            primary_inputs: circuit.primary_inputs.clone(),
            primary_outputs: circuit.primary_outputs.clone(),
            nodes,
            metadata: Some(serde_json::json!({
                "tool_version": self.metadata.tool_version,
                "library_name": self.metadata.library_name,
                "library_hash": self.metadata.library_hash,
                "cut_levels": self.plan.cut_levels(),
                "budget_mJ": self.plan.budget_mj,
                "alpha": self.plan.alpha,
                "nvm": self.plan.nvm.name,
            })),
        }
    }

    pub fn emit_staged_json(&self) -> String {
        serde_json::to_string_pretty(&self.emit_staged_doc()).expect("doc serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{annotate, NodeOverride, Overrides};
    use crate::graph::{CircuitGraph, GateKind, GateNode};
    use crate::library::GateLibrary;
    use crate::placement::{place_with_alpha, NvmParams, PlacementWeights};

    fn lib() -> (GateLibrary, String) {
        let text = r#"{
            "name": "flat", "voltage_V": 1.0,
            "gates": {"LUT": {
                "1": {"dyn_uW": 1.0, "static_uW": 0.0, "delay_ns": 10.0}
            }}
        }"#;
        (GateLibrary::from_json(text).unwrap(), text.to_string())
    }

    fn unit_nvm() -> NvmParams {
        NvmParams {
            name: "unit".into(),
            write_energy_mj_per_word: 1.0,
            read_energy_mj_per_word: 1.0,
            write_latency_ns_per_word: 10.0,
            word_bits: 32,
        }
    }

    /// Five-cluster chain with cuts after levels 2 and 4.
    fn staged_chain() -> NvNetlist {
        let (l, src) = lib();
        let mut nodes = Vec::new();
        let mut ov = Overrides::new();
        let mut prev = "a".to_string();
        for i in 0..5 {
            let name = format!("n{i}");
            nodes.push(GateNode::new(&name, GateKind::Lut, vec![prev.clone()]));
            ov.insert(
                name.clone(),
                NodeOverride {
                    power_mj: Some(5.0),
                    delay_ms: None,
                },
            );
            prev = name;
        }
        let g = CircuitGraph::new("chain5", vec!["a".into()], vec![prev], nodes).unwrap();
        let cg =
            crate::cluster::ClusterGraph::singletons(annotate(g, &l, &src, &ov).unwrap()).unwrap();
        let plan =
            place_with_alpha(&cg, &unit_nvm(), 12.0, &PlacementWeights::default(), 1.0).unwrap();
        generate(cg, plan)
    }

    #[test]
    fn generated_stages_follow_the_cuts() {
        let net = staged_chain();
        let stages: Vec<u32> = (0..5).map(|i| net.stage_of[&format!("n{i}")]).collect();
        assert_eq!(stages, vec![0, 0, 1, 1, 2]);
        assert_eq!(net.metadata.library_name, "flat");
        assert_eq!(net.metadata.library_hash.len(), 64);
    }

    #[test]
    fn clean_pipeline_validates_without_diagnostics() {
        let net = staged_chain();
        assert_eq!(net.validate(None), Vec::new());
        // A generous clock passes the timing check too.
        assert_eq!(net.validate(Some(1e9)), Vec::new());
    }

    #[test]
    fn stage_regression_is_detected() {
        let mut net = staged_chain();
        net.stage_of.insert("n3".into(), 0);
        let d = net.validate(None);
        assert!(d
            .iter()
            .any(|x| x.kind == DiagnosticKind::StageRegression && x.subject == "n3"));
    }

    #[test]
    fn budget_corruption_is_detected() {
        let mut net = staged_chain();
        net.plan.budget_mj = 4.0;
        let d = net.validate(None);
        assert!(d.iter().any(|x| x.kind == DiagnosticKind::StageOverBudget));
    }

    #[test]
    fn missing_stored_signal_is_detected() {
        let mut net = staged_chain();
        // The cut after level 2 stores n1; drop it.
        net.plan.cuts[0].stored_signals.clear();
        let d = net.validate(None);
        assert!(d
            .iter()
            .any(|x| x.kind == DiagnosticKind::MissingRestore && x.subject == "n1"));
    }

    #[test]
    fn broken_base_graph_is_detected_first() {
        let mut net = staged_chain();
        // Rewire n0 to read n4: a combinational cycle.
        net.clusters.base.circuit.nodes[0].inputs = vec!["n4".into()];
        let d = net.validate(None);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::InvalidStructure);
    }

    #[test]
    fn clock_violations_are_detected() {
        let net = staged_chain();
        // Stage 0 runs 20 ns of logic plus one 10 ns word write.
        let d = net.validate(Some(25.0));
        assert!(d.iter().any(|x| x.kind == DiagnosticKind::ClockViolation));
        let d = net.validate(Some(30.0));
        assert!(d.is_empty());
    }

    #[test]
    fn emitted_json_round_trips_with_markers() {
        let net = staged_chain();
        let json = net.emit_staged_json();
        let doc = crate::parse::parse_taskgraph_doc(&json).unwrap();
        let n2 = doc.nodes.iter().find(|n| n.name == "n2").unwrap();
        assert_eq!(n2.stage, Some(1));
        let n1 = doc.nodes.iter().find(|n| n.name == "n1").unwrap();
        assert_eq!(n1.nvm, Some(true));
        assert_eq!(n2.nvm, None);
        let meta = doc.metadata.unwrap();
        assert_eq!(meta["cut_levels"], serde_json::json!([2, 4]));
        assert_eq!(meta["library_hash"], net.metadata.library_hash);
    }

    #[test]
    fn netlist_serde_round_trip() {
        let net = staged_chain();
        let json = serde_json::to_string(&net).unwrap();
        let back: NvNetlist = serde_json::from_str(&json).unwrap();
        assert_eq!(back.stage_of, net.stage_of);
        assert_eq!(back.plan, net.plan);
        assert_eq!(back.validate(None), Vec::new());
    }
}
