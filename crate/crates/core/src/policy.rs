//! Cluster sizing policies.
//!
//! Policies reshape a cluster partition so every cluster's energy fits the
//! harvester's usable window:
//!
//! * policy 1 splits clusters above the upper bound, cutting along
//!   internal level frontiers; an oversized explicit operand (or an
//!   amplified node) is subdivided into a chain of equal parts, and an
//!   oversized primitive gate is a hard error;
//! * policy 2 merges adjacent clusters whose energy sits below the lower
//!   bound, preferring merges that land near the middle of the window;
//! * policy 3 runs both, split first.
//!
//! All choices are deterministic: ties break on the smallest power, then
//! lexicographic names, so the same graph always produces the same
//! partition.

use crate::cluster::{ClusterError, ClusterGraph};
use crate::energy::{cluster_power, AnnotatedGraph, EnergyError, FeatureRecord};
use crate::graph::{GateKind, GateNode};
use crate::units::capacitor_energy_mj;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("bad policy config: {0}")]
    BadConfig(String),
    #[error(
        "gate `{node}` needs {power_mj} mJ but the upper bound is {upper_mj} mJ \
         and a primitive gate cannot be subdivided"
    )]
    IndivisibleNode {
        node: String,
        power_mj: f64,
        upper_mj: f64,
    },
    #[error("subdividing `{0}` would clash with an existing node name")]
    NameClash(String),
}

/// Storage element the energy window was derived from, kept for reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacitorSpec {
    pub capacitance_mf: f64,
    pub v_peak: f64,
    pub v_th: f64,
}

impl CapacitorSpec {
    /// Energy available between the peak and cutoff voltages, mJ.
    pub fn usable_energy_mj(&self) -> f64 {
        capacitor_energy_mj(self.capacitance_mf, self.v_peak)
            - capacitor_energy_mj(self.capacitance_mf, self.v_th)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// No cluster may need more than this per activation, mJ.
    pub upper_mj: f64,
    /// Clusters below this are merge candidates, mJ.
    pub lower_mj: f64,
    /// Reporting knob: clusters above `n_percent * upper_mj` are flagged
    /// as near the limit.
    pub n_percent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacitor: Option<CapacitorSpec>,
}

impl PolicyConfig {
    pub fn new(upper_mj: f64, lower_mj: f64) -> Result<PolicyConfig, PolicyError> {
        if !(upper_mj.is_finite() && upper_mj > 0.0) {
            return Err(PolicyError::BadConfig(
                "upper bound must be positive".into(),
            ));
        }
        if !(lower_mj.is_finite() && (0.0..=upper_mj).contains(&lower_mj)) {
            return Err(PolicyError::BadConfig(
                "lower bound must lie in [0, upper]".into(),
            ));
        }
        Ok(PolicyConfig {
            upper_mj,
            lower_mj,
            n_percent: 0.8,
            capacitor: None,
        })
    }

    /// Derives the upper bound from a capacitor's usable energy window.
    pub fn from_capacitor(
        spec: CapacitorSpec,
        lower_mj: f64,
    ) -> Result<PolicyConfig, PolicyError> {
        let mut cfg = PolicyConfig::new(spec.usable_energy_mj(), lower_mj)?;
        cfg.capacitor = Some(spec);
        Ok(cfg)
    }

    pub fn with_n_percent(mut self, n: f64) -> Result<PolicyConfig, PolicyError> {
        if !(n.is_finite() && n > 0.0 && n <= 1.0) {
            return Err(PolicyError::BadConfig("n_percent must be in (0, 1]".into()));
        }
        self.n_percent = n;
        Ok(self)
    }
}

/// Splits every cluster whose energy exceeds the upper bound.
pub fn apply_policy1(cg: &mut ClusterGraph, cfg: &PolicyConfig) -> Result<(), PolicyError> {
    let mut sets: Vec<BTreeSet<String>> = cg
        .clusters
        .values()
        .map(|c| c.members.clone())
        .collect();
    loop {
        let mut oversized: Option<(String, usize, f64)> = None;
        for (i, s) in sets.iter().enumerate() {
            let p = cluster_power(&cg.base, s)?.power_mj;
            if p > cfg.upper_mj {
                let name = s.iter().next().unwrap();
                if oversized.as_ref().map(|(n, _, _)| name < n).unwrap_or(true) {
                    oversized = Some((name.clone(), i, p));
                }
            }
        }
        let Some((_, idx, power)) = oversized else { break };
        let set = sets.swap_remove(idx);
        if set.len() >= 2 {
            sets.extend(split_cluster(&cg.base, &set)?);
        } else {
            let node = set.iter().next().unwrap().clone();
            if !cg.base.is_divisible(&node) {
                return Err(PolicyError::IndivisibleNode {
                    node,
                    power_mj: power,
                    upper_mj: cfg.upper_mj,
                });
            }
            let k = (power / cfg.upper_mj).ceil() as usize;
            let parts = subdivide(&mut cg.base, &node, k.max(2))?;
            sets.extend(parts.into_iter().map(|p| BTreeSet::from([p])));
        }
    }
    cg.assign(sets)?;
    cg.policy = Some(cfg.clone());
    Ok(())
}

/// Cuts one oversized multi-gate cluster.  A cluster spanning several
/// levels is cut at the internal level frontier that minimizes the larger
/// half (ties: fewer crossing signals, then lexicographic lower half); a
/// single-level cluster dissolves into singletons.
fn split_cluster(
    base: &AnnotatedGraph,
    set: &BTreeSet<String>,
) -> Result<Vec<BTreeSet<String>>, PolicyError> {
    let levels: BTreeSet<u32> = set.iter().map(|m| base.features[m].level).collect();
    if levels.len() < 2 {
        return Ok(set.iter().map(|m| BTreeSet::from([m.clone()])).collect());
    }
    let consumers = base.circuit.consumers();
    let mut best: Option<(f64, usize, Vec<String>, [BTreeSet<String>; 2])> = None;
    for cut in levels.iter().take(levels.len() - 1) {
        let lower: BTreeSet<String> = set
            .iter()
            .filter(|m| base.features[*m].level <= *cut)
            .cloned()
            .collect();
        let upper: BTreeSet<String> = set.difference(&lower).cloned().collect();
        let p_lo = cluster_power(base, &lower)?.power_mj;
        let p_hi = cluster_power(base, &upper)?.power_mj;
        let crossing = lower
            .iter()
            .filter(|m| {
                consumers
                    .get(m.as_str())
                    .map(|cs| cs.iter().any(|c| upper.contains(*c)))
                    .unwrap_or(false)
            })
            .count();
        let key_members: Vec<String> = lower.iter().cloned().collect();
        let candidate = (p_lo.max(p_hi), crossing, key_members, [lower, upper]);
        let better = match &best {
            None => true,
            Some((p, c, k, _)) => {
                (candidate.0, candidate.1, &candidate.2) < (*p, *c, k)
            }
        };
        if better {
            best = Some(candidate);
        }
    }
    let (_, _, _, halves) = best.expect("a multi-level cluster has at least one frontier");
    Ok(halves.into_iter().collect())
}

/// Rewrites one divisible node into a chain of `k` equal parts named
/// `node#0 .. node#k-1`, rewiring consumers and outputs to the last part.
fn subdivide(
    base: &mut AnnotatedGraph,
    node: &str,
    k: usize,
) -> Result<Vec<String>, PolicyError> {
    let record = base.feature(node)?.clone();
    let names: Vec<String> = (0..k).map(|i| format!("{node}#{i}")).collect();
    for n in &names {
        if base.circuit.node(n).is_some() {
            return Err(PolicyError::NameClash(n.clone()));
        }
    }
    let idx = base
        .circuit
        .nodes
        .iter()
        .position(|n| n.name == node)
        .expect("feature implies presence");
    let inputs = base.circuit.nodes[idx].inputs.clone();
    let last = names.last().unwrap().clone();
    for n in &mut base.circuit.nodes {
        for i in &mut n.inputs {
            if i == node {
                *i = last.clone();
            }
        }
    }
    for po in &mut base.circuit.primary_outputs {
        if po == node {
            *po = last.clone();
        }
    }
    let chain: Vec<GateNode> = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let ins = if i == 0 {
                inputs.clone()
            } else {
                vec![names[i - 1].clone()]
            };
            GateNode::new(name, GateKind::Lut, ins)
        })
        .collect();
    base.circuit.nodes.splice(idx..=idx, chain);
    base.remove_node_records(node);
    for (i, name) in names.iter().enumerate() {
        base.insert_synthesized(
            name,
            FeatureRecord {
                fan_in: if i == 0 { inputs.len() } else { 1 },
                fan_out: if i + 1 == k { record.fan_out } else { 1 },
                level: 0,
                power_mj: record.power_mj / k as f64,
                delay_ns: record.delay_ns / k as f64,
            },
            true,
        );
    }
    base.refresh_levels()?;
    Ok(names)
}

/// Merges adjacent clusters that both sit below the lower bound, while
/// the union stays within the upper bound and the quotient stays acyclic.
/// The smallest candidate merges first, choosing the partner whose union
/// lands closest to the middle of the energy window.
pub fn apply_policy2(cg: &mut ClusterGraph, cfg: &PolicyConfig) -> Result<(), PolicyError> {
    let mut sets: Vec<BTreeSet<String>> = cg
        .clusters
        .values()
        .map(|c| c.members.clone())
        .collect();
    let mid = (cfg.lower_mj + cfg.upper_mj) / 2.0;
    loop {
        let powers: Vec<f64> = sets
            .iter()
            .map(|s| cluster_power(&cg.base, s).map(|r| r.power_mj))
            .collect::<Result<_, _>>()?;
        let adjacency = quotient_adjacency(&cg.base, &sets);
        let mut candidates: Vec<usize> = (0..sets.len())
            .filter(|i| powers[*i] < cfg.lower_mj)
            .collect();
        candidates.sort_by(|a, b| {
            powers[*a]
                .partial_cmp(&powers[*b])
                .unwrap()
                .then_with(|| sets[*a].iter().next().cmp(&sets[*b].iter().next()))
        });
        let mut merged = None;
        'outer: for &i in &candidates {
            let mut best: Option<(f64, &String, usize, f64)> = None;
            for &j in adjacency.get(&i).into_iter().flatten() {
                if powers[j] >= cfg.lower_mj {
                    continue;
                }
                let union: BTreeSet<String> = sets[i].union(&sets[j]).cloned().collect();
                let p = cluster_power(&cg.base, &union)?.power_mj;
                if p > cfg.upper_mj || !merge_keeps_quotient_acyclic(&cg.base, &sets, i, j) {
                    continue;
                }
                let dist = (p - mid).abs();
                let name = sets[j].iter().next().unwrap();
                if best
                    .as_ref()
                    .map(|(d, n, _, _)| (dist, name) < (*d, n))
                    .unwrap_or(true)
                {
                    best = Some((dist, name, j, p));
                }
            }
            if let Some((_, _, j, _)) = best {
                merged = Some((i, j));
                break 'outer;
            }
        }
        let Some((i, j)) = merged else { break };
        let (lo, hi) = (i.min(j), i.max(j));
        let other = sets.remove(hi);
        sets[lo].extend(other);
    }
    cg.assign(sets)?;
    cg.policy = Some(cfg.clone());
    Ok(())
}

/// Split first, then merge.
pub fn apply_policy3(cg: &mut ClusterGraph, cfg: &PolicyConfig) -> Result<(), PolicyError> {
    apply_policy1(cg, cfg)?;
    apply_policy2(cg, cfg)?;
    Ok(())
}

/// Quotient adjacency (either direction) between member sets, by index.
fn quotient_adjacency(
    base: &AnnotatedGraph,
    sets: &[BTreeSet<String>],
) -> BTreeMap<usize, BTreeSet<usize>> {
    let owner = owner_map(sets);
    let mut adj: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (driver, consumers) in base.circuit.consumers() {
        let Some(&a) = owner.get(driver) else { continue };
        for c in consumers {
            if let Some(&b) = owner.get(c) {
                if a != b {
                    adj.entry(a).or_default().insert(b);
                    adj.entry(b).or_default().insert(a);
                }
            }
        }
    }
    adj
}

fn owner_map(sets: &[BTreeSet<String>]) -> BTreeMap<&str, usize> {
    let mut owner = BTreeMap::new();
    for (i, s) in sets.iter().enumerate() {
        for m in s {
            owner.insert(m.as_str(), i);
        }
    }
    owner
}

/// Would merging sets `i` and `j` keep the quotient graph acyclic?
fn merge_keeps_quotient_acyclic(
    base: &AnnotatedGraph,
    sets: &[BTreeSet<String>],
    i: usize,
    j: usize,
) -> bool {
    let mut owner = owner_map(sets);
    for m in &sets[j] {
        owner.insert(m.as_str(), i);
    }
    let mut succs: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    let mut indegree: BTreeMap<usize, usize> = BTreeMap::new();
    for idx in 0..sets.len() {
        if idx != j {
            indegree.insert(idx, 0);
        }
    }
    for (driver, consumers) in base.circuit.consumers() {
        let Some(&a) = owner.get(driver) else { continue };
        for c in consumers {
            if let Some(&b) = owner.get(c) {
                if a != b && succs.entry(a).or_default().insert(b) {
                    *indegree.get_mut(&b).unwrap() += 1;
                }
            }
        }
    }
    let mut ready: Vec<usize> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(k, _)| *k)
        .collect();
    let mut done = 0;
    while let Some(n) = ready.pop() {
        done += 1;
        if let Some(next) = succs.get(&n) {
            for &m in next.clone().iter() {
                let d = indegree.get_mut(&m).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(m);
                }
            }
        }
    }
    done == indegree.len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo_mj: f64,
    pub hi_mj: f64,
    pub count: usize,
}

/// Summary of a clustering against a policy window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyReport {
    pub cluster_count: usize,
    pub gate_count: usize,
    pub min_power_mj: f64,
    pub max_power_mj: f64,
    pub mean_cluster_power_mj: f64,
    pub mean_gate_power_mj: f64,
    pub histogram: Vec<HistogramBin>,
    /// Clusters above the upper bound (policy violations).
    pub over_upper: Vec<String>,
    /// Clusters above `n_percent * upper`, worth watching.
    pub near_upper: Vec<String>,
    /// Clusters below the lower bound that no legal merge can absorb.
    pub below_lower_unmergeable: Vec<String>,
    pub config: PolicyConfig,
}

pub fn policy_report(cg: &ClusterGraph, cfg: &PolicyConfig) -> PolicyReport {
    let powers: BTreeMap<&String, f64> = cg
        .clusters
        .iter()
        .map(|(n, c)| (n, c.record.power_mj))
        .collect();
    let n = powers.len().max(1);
    let min = powers.values().copied().fold(f64::INFINITY, f64::min);
    let max = powers.values().copied().fold(0.0f64, f64::max);
    let total: f64 = powers.values().sum();
    let gate_count: usize = cg.clusters.values().map(|c| c.members.len()).sum();
    let gate_total: f64 = cg
        .clusters
        .values()
        .flat_map(|c| c.members.iter())
        .map(|m| cg.base.features[m].power_mj)
        .sum();
    let bins = 8usize;
    let width = ((max - min) / bins as f64).max(f64::MIN_POSITIVE);
    let mut histogram: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo_mj: min + i as f64 * width,
            hi_mj: min + (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &p in powers.values() {
        let slot = (((p - min) / width) as usize).min(bins - 1);
        histogram[slot].count += 1;
    }
    let sets: Vec<BTreeSet<String>> = cg.clusters.values().map(|c| c.members.clone()).collect();
    let set_powers: Vec<f64> = sets
        .iter()
        .map(|s| cluster_power(&cg.base, s).map(|r| r.power_mj).unwrap_or(0.0))
        .collect();
    let adjacency = quotient_adjacency(&cg.base, &sets);
    let mut unmergeable = Vec::new();
    for (i, s) in sets.iter().enumerate() {
        if set_powers[i] >= cfg.lower_mj {
            continue;
        }
        let can_merge = adjacency.get(&i).into_iter().flatten().any(|&j| {
            set_powers[j] < cfg.lower_mj
                && cluster_power(&cg.base, &s.union(&sets[j]).cloned().collect())
                    .map(|r| r.power_mj <= cfg.upper_mj)
                    .unwrap_or(false)
                && merge_keeps_quotient_acyclic(&cg.base, &sets, i, j)
        });
        if !can_merge {
            unmergeable.push(s.iter().next().unwrap().clone());
        }
    }
    unmergeable.sort();
    PolicyReport {
        cluster_count: powers.len(),
        gate_count,
        min_power_mj: if powers.is_empty() { 0.0 } else { min },
        max_power_mj: max,
        mean_cluster_power_mj: total / n as f64,
        mean_gate_power_mj: gate_total / gate_count.max(1) as f64,
        histogram,
        over_upper: powers
            .iter()
            .filter(|(_, p)| **p > cfg.upper_mj)
            .map(|(n, _)| (*n).clone())
            .collect(),
        near_upper: powers
            .iter()
            .filter(|(_, p)| **p > cfg.n_percent * cfg.upper_mj && **p <= cfg.upper_mj)
            .map(|(n, _)| (*n).clone())
            .collect(),
        below_lower_unmergeable: unmergeable,
        config: cfg.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{annotate, NodeOverride, Overrides};
    use crate::graph::CircuitGraph;
    use crate::library::GateLibrary;
    use crate::parse::parse_taskgraph_doc;

    fn tiny_lib() -> (GateLibrary, String) {
        let text = r#"{
            "name": "flat", "voltage_V": 1.0,
            "gates": {
                "NOT": {"1": {"dyn_uW": 1.0, "static_uW": 0.0, "delay_ns": 10.0}},
                "LUT": {
                    "1": {"dyn_uW": 1.0, "static_uW": 0.0, "delay_ns": 10.0},
                    "2": {"dyn_uW": 1.0, "static_uW": 0.0, "delay_ns": 10.0}
                }
            }
        }"#;
        (GateLibrary::from_json(text).unwrap(), text.to_string())
    }

    /// Chain of LUTs with explicit energies, one PI, PO at the end.
    fn lut_chain(powers: &[f64]) -> ClusterGraph {
        let (lib, src) = tiny_lib();
        let mut nodes = Vec::new();
        let mut ov = Overrides::new();
        let mut prev = "a".to_string();
        for (i, p) in powers.iter().enumerate() {
            let name = format!("g{i}");
            nodes.push(GateNode::new(&name, GateKind::Lut, vec![prev.clone()]));
            ov.insert(
                name.clone(),
                NodeOverride {
                    power_mj: Some(*p),
                    delay_ms: Some(1.0),
                },
            );
            prev = name;
        }
        let g = CircuitGraph::new("chain", vec!["a".into()], vec![prev], nodes).unwrap();
        ClusterGraph::singletons(annotate(g, &lib, &src, &ov).unwrap()).unwrap()
    }

    fn members(cg: &ClusterGraph, name: &str) -> Vec<String> {
        cg.clusters[name].members.iter().cloned().collect()
    }

    fn cfg(upper: f64, lower: f64) -> PolicyConfig {
        PolicyConfig::new(upper, lower).unwrap()
    }

    #[test]
    fn window_from_capacitor_voltages() {
        let spec = CapacitorSpec {
            capacitance_mf: 2.0,
            v_peak: 5.0,
            v_th: 3.0,
        };
        assert!((spec.usable_energy_mj() - 16.0).abs() < 1e-12);
        let c = PolicyConfig::from_capacitor(spec, 4.0).unwrap();
        assert!((c.upper_mj - 16.0).abs() < 1e-12);
    }

    #[test]
    fn bad_windows_are_rejected() {
        assert!(PolicyConfig::new(0.0, 0.0).is_err());
        assert!(PolicyConfig::new(5.0, 6.0).is_err());
        assert!(cfg(5.0, 1.0).with_n_percent(0.0).is_err());
    }

    #[test]
    fn split_cuts_at_the_frontier_minimizing_the_larger_half() {
        let mut cg = lut_chain(&[3.0, 4.0, 5.0]);
        let all: BTreeSet<String> = ["g0", "g1", "g2"].iter().map(|s| s.to_string()).collect();
        cg.assign(vec![all]).unwrap();
        apply_policy1(&mut cg, &cfg(8.0, 0.0)).unwrap();
        // {g0,g1} = 7 beats {g1,g2} = 9.
        assert_eq!(members(&cg, "g0"), vec!["g0", "g1"]);
        assert_eq!(members(&cg, "g2"), vec!["g2"]);
    }

    #[test]
    fn split_recurses_until_every_cluster_fits() {
        let mut cg = lut_chain(&[3.0, 4.0, 5.0]);
        let all: BTreeSet<String> = ["g0", "g1", "g2"].iter().map(|s| s.to_string()).collect();
        cg.assign(vec![all]).unwrap();
        apply_policy1(&mut cg, &cfg(5.0, 0.0)).unwrap();
        assert_eq!(cg.clusters.len(), 3);
        for c in cg.clusters.values() {
            assert!(c.record.power_mj <= 5.0);
        }
    }

    #[test]
    fn single_level_cluster_dissolves_into_singletons() {
        let (lib, src) = tiny_lib();
        let g = CircuitGraph::new(
            "pair",
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            vec![
                GateNode::new("x", GateKind::Lut, vec!["a".into()]),
                GateNode::new("y", GateKind::Lut, vec!["b".into()]),
            ],
        )
        .unwrap();
        let mut ov = Overrides::new();
        for n in ["x", "y"] {
            ov.insert(
                n.into(),
                NodeOverride {
                    power_mj: Some(6.0),
                    delay_ms: None,
                },
            );
        }
        let ann = annotate(g, &lib, &src, &ov).unwrap();
        let mut cg = ClusterGraph::from_assignment(
            ann,
            vec![["x", "y"].iter().map(|s| s.to_string()).collect()],
        )
        .unwrap();
        apply_policy1(&mut cg, &cfg(10.0, 0.0)).unwrap();
        assert_eq!(cg.clusters.len(), 2);
    }

    #[test]
    fn oversized_operand_subdivides_into_a_chain() {
        let mut cg = lut_chain(&[30.0]);
        apply_policy1(&mut cg, &cfg(25.0, 0.0)).unwrap();
        assert_eq!(cg.clusters.len(), 2);
        assert!((cg.clusters["g0#0"].record.power_mj - 15.0).abs() < 1e-12);
        assert!((cg.clusters["g0#1"].record.power_mj - 15.0).abs() < 1e-12);
        // The chain replaces the node in the base graph as well.
        assert!(cg.base.circuit.node("g0").is_none());
        assert_eq!(cg.base.circuit.primary_outputs, vec!["g0#1".to_string()]);
        assert_eq!(cg.level_of("g0#0"), Some(1));
        assert_eq!(cg.level_of("g0#1"), Some(2));
    }

    #[test]
    fn oversized_primitive_gate_is_a_hard_error() {
        let (lib, src) = tiny_lib();
        let g = CircuitGraph::new(
            "inv",
            vec!["a".into()],
            vec!["n".into()],
            vec![GateNode::new("n", GateKind::Not, vec!["a".into()])],
        )
        .unwrap();
        let mut ov = Overrides::new();
        ov.insert(
            "n".into(),
            NodeOverride {
                power_mj: Some(30.0),
                delay_ms: None,
            },
        );
        let ann = annotate(g, &lib, &src, &ov).unwrap();
        let mut cg = ClusterGraph::singletons(ann).unwrap();
        let err = apply_policy1(&mut cg, &cfg(25.0, 0.0)).unwrap_err();
        assert!(matches!(err, PolicyError::IndivisibleNode { node, .. } if node == "n"));
    }

    #[test]
    fn merge_combines_small_neighbors_toward_the_window_middle() {
        // Star: c feeds p1 and p2; c=2, p1=3, p2=6; window [8, 20], mid 14.
        let (lib, src) = tiny_lib();
        let g = CircuitGraph::new(
            "star",
            vec!["a".into(), "b".into(), "d".into()],
            vec!["p1".into(), "p2".into()],
            vec![
                GateNode::new("c", GateKind::Lut, vec!["a".into()]),
                GateNode::new("p1", GateKind::Lut, vec!["c".into(), "b".into()]),
                GateNode::new("p2", GateKind::Lut, vec!["c".into(), "d".into()]),
            ],
        )
        .unwrap();
        let mut ov = Overrides::new();
        for (n, p) in [("c", 2.0), ("p1", 3.0), ("p2", 6.0)] {
            ov.insert(
                n.into(),
                NodeOverride {
                    power_mj: Some(p),
                    delay_ms: None,
                },
            );
        }
        let ann = annotate(g, &lib, &src, &ov).unwrap();
        let mut cg = ClusterGraph::singletons(ann).unwrap();
        apply_policy2(&mut cg, &cfg(20.0, 8.0)).unwrap();
        // c picks p2 (union 8, distance 6) over p1 (union 5, distance 9);
        // p1 is then left without a small partner.
        assert_eq!(members(&cg, "c"), vec!["c", "p2"]);
        assert_eq!(members(&cg, "p1"), vec!["p1"]);
    }

    #[test]
    fn merge_never_exceeds_the_upper_bound() {
        let mut cg = lut_chain(&[7.0, 7.0]);
        apply_policy2(&mut cg, &cfg(10.0, 8.0)).unwrap();
        assert_eq!(cg.clusters.len(), 2);
    }

    #[test]
    fn merge_refuses_to_create_quotient_cycles() {
        // a -> x and a -> b, x -> b: merging {a,b} would cycle with {x}.
        let (lib, src) = tiny_lib();
        let g = CircuitGraph::new(
            "tri",
            vec!["i".into()],
            vec!["b".into()],
            vec![
                GateNode::new("a", GateKind::Lut, vec!["i".into()]),
                GateNode::new("x", GateKind::Lut, vec!["a".into()]),
                GateNode::new("b", GateKind::Lut, vec!["a".into(), "x".into()]),
            ],
        )
        .unwrap();
        let mut ov = Overrides::new();
        for (n, p) in [("a", 1.0), ("x", 50.0), ("b", 1.0)] {
            ov.insert(
                n.into(),
                NodeOverride {
                    power_mj: Some(p),
                    delay_ms: None,
                },
            );
        }
        let ann = annotate(g, &lib, &src, &ov).unwrap();
        let mut cg = ClusterGraph::singletons(ann).unwrap();
        apply_policy2(&mut cg, &cfg(60.0, 5.0)).unwrap();
        assert_eq!(cg.clusters.len(), 3, "a+b would trap x in a cycle");
        let report = policy_report(&cg, &cfg(60.0, 5.0));
        assert_eq!(report.below_lower_unmergeable, vec!["a", "b"]);
    }

    #[test]
    fn reference_operand_tree_policy3_walkthrough() {
        let doc = parse_taskgraph_doc(include_str!("../assets/benchmarks/ftree8.json")).unwrap();
        let ov = crate::energy::overrides_from_doc(&doc);
        let g = doc.into_graph().unwrap();
        let lib = GateLibrary::bundled();
        let ann = annotate(g, &lib, crate::library::BUNDLED_LIBRARY_JSON, &ov).unwrap();
        let mut cg = ClusterGraph::singletons(ann).unwrap();
        apply_policy3(&mut cg, &cfg(25.0, 20.0)).unwrap();
        let got: Vec<(String, Vec<String>)> = cg
            .clusters
            .iter()
            .map(|(n, c)| (n.clone(), c.members.iter().cloned().collect()))
            .collect();
        let want = vec![
            ("F1".to_string(), vec!["F1".to_string()]),
            ("F2#0".to_string(), vec!["F2#0".to_string()]),
            ("F2#1".to_string(), vec!["F2#1".to_string()]),
            ("F3".to_string(), vec!["F3".to_string()]),
            ("F4".to_string(), vec!["F4".to_string()]),
            (
                "F5".to_string(),
                vec![
                    "F5".to_string(),
                    "F6".to_string(),
                    "F7".to_string(),
                    "F8".to_string(),
                ],
            ),
        ];
        assert_eq!(got, want);
        for c in cg.clusters.values() {
            assert!(c.record.power_mj <= 25.0);
        }
        assert!((cg.clusters["F5"].record.power_mj - 23.0).abs() < 1e-12);
    }

    #[test]
    fn report_summarizes_the_window() {
        let mut cg = lut_chain(&[2.0, 9.0, 22.0]);
        let c = cfg(25.0, 5.0);
        cg.policy = Some(c.clone());
        let report = policy_report(&cg, &c);
        assert_eq!(report.cluster_count, 3);
        assert_eq!(report.gate_count, 3);
        assert_eq!(report.min_power_mj, 2.0);
        assert_eq!(report.max_power_mj, 22.0);
        assert!((report.mean_cluster_power_mj - 11.0).abs() < 1e-12);
        assert!((report.mean_gate_power_mj - 11.0).abs() < 1e-12);
        assert!(report.over_upper.is_empty());
        assert_eq!(report.near_upper, vec!["g2"]);
        // g0 is below the bound and its only neighbor is not.
        assert_eq!(report.below_lower_unmergeable, vec!["g0"]);
        assert_eq!(report.histogram.iter().map(|b| b.count).sum::<usize>(), 3);
    }

    #[test]
    fn policies_are_deterministic() {
        let run = || {
            let mut cg = lut_chain(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
            apply_policy3(&mut cg, &cfg(9.0, 7.0)).unwrap();
            cg.clusters
                .values()
                .map(|c| c.members.iter().cloned().collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
