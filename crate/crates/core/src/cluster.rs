//! Cluster graphs: partitions of the combinational nodes into groups that
//! execute atomically between checkpoint opportunities.
//!
//! A cluster graph owns its annotated base graph (policies may rewrite it
//! when subdividing operands) plus a partition of the combinational nodes.
//! Every cluster carries an aggregate [`FeatureRecord`]; edges are the
//! quotient of the signal edges, and levels are recomputed over the
//! cluster DAG by longest path, sources at level 1.
//!
//! Registers never join clusters: their outputs act as level-0 sources and
//! their inputs are latched at cycle end, outside any cut.

use crate::energy::{cluster_power, AnnotatedGraph, EnergyError, FeatureRecord};
use crate::policy::PolicyConfig;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("cluster member `{0}` is not a combinational node of the base graph")]
    UnknownMember(String),
    #[error("node `{0}` appears in more than one cluster")]
    DuplicatedNode(String),
    #[error("combinational node `{0}` belongs to no cluster")]
    UncoveredNode(String),
    #[error("clusters must be non-empty")]
    EmptyCluster,
    #[error("cluster `{name}` should be named after its smallest member `{expected}`")]
    WrongName { name: String, expected: String },
    #[error("cluster quotient is cyclic near `{0}`; clusters must be convex")]
    QuotientCycle(String),
}

/// One group of combinational nodes, named after its smallest member.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cluster {
    pub name: String,
    pub members: BTreeSet<String>,
    /// Aggregate features; `level` is the cluster-DAG level.
    pub record: FeatureRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterGraph {
    pub base: AnnotatedGraph,
    pub clusters: BTreeMap<String, Cluster>,
    /// Quotient edges, driver cluster to consumer cluster.
    pub edges: BTreeSet<(String, String)>,
    member_of: BTreeMap<String, String>,
    /// Policy that produced this clustering, if any.
    pub policy: Option<PolicyConfig>,
}

impl ClusterGraph {
    /// One cluster per combinational node.
    pub fn singletons(base: AnnotatedGraph) -> Result<ClusterGraph, ClusterError> {
        let sets: Vec<BTreeSet<String>> = base
            .circuit
            .combinational_nodes()
            .iter()
            .map(|n| BTreeSet::from([n.name.clone()]))
            .collect();
        ClusterGraph::from_assignment(base, sets)
    }

    /// Builds a cluster graph from explicit member sets, which must
    /// partition the combinational nodes and quotient to a DAG.
    pub fn from_assignment(
        base: AnnotatedGraph,
        sets: Vec<BTreeSet<String>>,
    ) -> Result<ClusterGraph, ClusterError> {
        let mut cg = ClusterGraph {
            base,
            clusters: BTreeMap::new(),
            edges: BTreeSet::new(),
            member_of: BTreeMap::new(),
            policy: None,
        };
        cg.assign(sets)?;
        Ok(cg)
    }

    /// Replaces the partition and recomputes records, edges and levels.
    pub fn assign(&mut self, sets: Vec<BTreeSet<String>>) -> Result<(), ClusterError> {
        let comb: BTreeSet<String> = self
            .base
            .circuit
            .combinational_nodes()
            .iter()
            .map(|n| n.name.clone())
            .collect();
        let mut member_of = BTreeMap::new();
        for set in &sets {
            let name = set.iter().next().ok_or(ClusterError::EmptyCluster)?.clone();
            for m in set {
                if !comb.contains(m) {
                    return Err(ClusterError::UnknownMember(m.clone()));
                }
                if member_of.insert(m.clone(), name.clone()).is_some() {
                    return Err(ClusterError::DuplicatedNode(m.clone()));
                }
            }
        }
        if let Some(missing) = comb.iter().find(|n| !member_of.contains_key(*n)) {
            return Err(ClusterError::UncoveredNode(missing.clone()));
        }
        let mut clusters = BTreeMap::new();
        for set in sets {
            let name = set.iter().next().unwrap().clone();
            let record = cluster_power(&self.base, &set)?;
            clusters.insert(
                name.clone(),
                Cluster {
                    name,
                    members: set,
                    record,
                },
            );
        }
        self.clusters = clusters;
        self.member_of = member_of;
        self.rebuild_edges();
        self.relevel()?;
        Ok(())
    }

    fn rebuild_edges(&mut self) {
        let mut edges = BTreeSet::new();
        let consumers = self.base.circuit.consumers();
        for (node, cluster) in &self.member_of {
            if let Some(cs) = consumers.get(node.as_str()) {
                for c in cs {
                    if let Some(dst) = self.member_of.get(*c) {
                        if dst != cluster {
                            edges.insert((cluster.clone(), dst.clone()));
                        }
                    }
                }
            }
        }
        self.edges = edges;
    }

    /// Longest-path levels over the quotient DAG, sources at 1.  Fails on
    /// a cyclic quotient (non-convex clusters).
    fn relevel(&mut self) -> Result<(), ClusterError> {
        let mut indegree: BTreeMap<&str, usize> =
            self.clusters.keys().map(|k| (k.as_str(), 0)).collect();
        let mut succs: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (a, b) in &self.edges {
            *indegree.get_mut(b.as_str()).unwrap() += 1;
            succs.entry(a.as_str()).or_default().push(b.as_str());
        }
        let mut level: BTreeMap<String, u32> = BTreeMap::new();
        let mut ready: Vec<&str> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(k, _)| *k)
            .collect();
        for r in &ready {
            level.insert(r.to_string(), 1);
        }
        let mut done = 0usize;
        while let Some(c) = ready.pop() {
            done += 1;
            let lc = level[c];
            if let Some(next) = succs.get(c) {
                for n in next {
                    let e = level.entry(n.to_string()).or_insert(0);
                    *e = (*e).max(lc + 1);
                    let d = indegree.get_mut(n).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        ready.push(n);
                    }
                }
            }
        }
        if done != self.clusters.len() {
            let stuck = indegree
                .iter()
                .filter(|(_, d)| **d > 0)
                .map(|(k, _)| *k)
                .min()
                .unwrap_or("");
            return Err(ClusterError::QuotientCycle(stuck.to_string()));
        }
        for (name, cluster) in &mut self.clusters {
            cluster.record.level = level[name];
        }
        Ok(())
    }

    /// Checks the stored partition against the base graph, recomputing
    /// the derived structures.
    pub fn validate(&self) -> Result<(), ClusterError> {
        let comb: BTreeSet<String> = self
            .base
            .circuit
            .combinational_nodes()
            .iter()
            .map(|n| n.name.clone())
            .collect();
        let mut seen: BTreeSet<&String> = BTreeSet::new();
        for (key, cluster) in &self.clusters {
            let expected = cluster.members.iter().next().ok_or(ClusterError::EmptyCluster)?;
            if key != &cluster.name || expected != key {
                return Err(ClusterError::WrongName {
                    name: cluster.name.clone(),
                    expected: expected.clone(),
                });
            }
            for m in &cluster.members {
                if !comb.contains(m) {
                    return Err(ClusterError::UnknownMember(m.clone()));
                }
                if !seen.insert(m) {
                    return Err(ClusterError::DuplicatedNode(m.clone()));
                }
                if self.member_of.get(m) != Some(key) {
                    return Err(ClusterError::UncoveredNode(m.clone()));
                }
            }
        }
        if let Some(missing) = comb.iter().find(|n| !seen.contains(n)) {
            return Err(ClusterError::UncoveredNode(missing.clone()));
        }
        // Levels are consistent iff a fresh levelization succeeds and the
        // quotient is acyclic.
        let mut copy = self.clone();
        copy.relevel()?;
        for (name, c) in &copy.clusters {
            if self.clusters[name].record.level != c.record.level {
                return Err(ClusterError::QuotientCycle(name.clone()));
            }
        }
        Ok(())
    }

    pub fn cluster_of(&self, node: &str) -> Option<&str> {
        self.member_of.get(node).map(String::as_str)
    }

    pub fn level_of(&self, cluster: &str) -> Option<u32> {
        self.clusters.get(cluster).map(|c| c.record.level)
    }

    pub fn max_level(&self) -> u32 {
        self.clusters
            .values()
            .map(|c| c.record.level)
            .max()
            .unwrap_or(0)
    }

    pub fn clusters_at_level(&self, level: u32) -> Vec<&Cluster> {
        self.clusters
            .values()
            .filter(|c| c.record.level == level)
            .collect()
    }

    pub fn predecessors(&self, cluster: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|(_, b)| b == cluster)
            .map(|(a, _)| a.as_str())
            .collect()
    }

    pub fn successors(&self, cluster: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|(a, _)| a == cluster)
            .map(|(_, b)| b.as_str())
            .collect()
    }

    /// True when `a` and `b` share a quotient edge in either direction.
    pub fn adjacent(&self, a: &str, b: &str) -> bool {
        self.edges.contains(&(a.to_string(), b.to_string()))
            || self.edges.contains(&(b.to_string(), a.to_string()))
    }
}
