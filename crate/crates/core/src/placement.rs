//! Checkpoint placement: choosing which level frontiers back up to
//! non-volatile memory.
//!
//! A cut at level `l` means: once every cluster at level `l` or below has
//! finished, write the signals still needed above `l` to NVM.  After a
//! power failure, execution restores from the nearest cut below and
//! replays the clusters above it.  The planner keeps every such replay,
//! plus the backup that ends it, within the usable energy budget.
//!
//! Primary inputs and register outputs are not stored by cuts (they
//! already live in the register file), and neither are signals feeding
//! only registers or primary outputs (those latch at cycle end).

use crate::cluster::ClusterGraph;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Fraction of the budget the planner actually spends; the rest absorbs
/// model error and leakage.
pub const ALPHA_DEFAULT: f64 = 0.9;

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("bad placement parameters: {0}")]
    BadParams(String),
    #[error(
        "no cut keeps cluster `{cluster}` (level {level}) within budget: \
         it needs {needed_mj} mJ but only {effective_mj} mJ is usable"
    )]
    InfeasibleBudget {
        cluster: String,
        level: u32,
        needed_mj: f64,
        effective_mj: f64,
    },
}

/// Non-volatile memory cost model, per stored word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NvmParams {
    pub name: String,
    pub write_energy_mj_per_word: f64,
    pub read_energy_mj_per_word: f64,
    pub write_latency_ns_per_word: f64,
    pub word_bits: u32,
}

impl NvmParams {
    pub fn mram() -> NvmParams {
        NvmParams {
            name: "MRAM".into(),
            write_energy_mj_per_word: 0.001,
            read_energy_mj_per_word: 0.0002,
            write_latency_ns_per_word: 10.0,
            word_bits: 32,
        }
    }

    /// Resistive RAM: cheaper cells, but writes cost 4.4x MRAM.
    pub fn reram() -> NvmParams {
        NvmParams {
            name: "ReRAM".into(),
            write_energy_mj_per_word: 0.0044,
            read_energy_mj_per_word: 0.00025,
            write_latency_ns_per_word: 50.0,
            word_bits: 32,
        }
    }
}

/// Relative importance of depth, accumulated energy and connectivity when
/// ranking candidate frontiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementWeights {
    pub w_level: f64,
    pub w_power: f64,
    pub w_fan: f64,
}

impl Default for PlacementWeights {
    fn default() -> Self {
        PlacementWeights {
            w_level: 1.0,
            w_power: 1.0,
            w_fan: 1.0,
        }
    }
}

/// One chosen frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutRecord {
    pub level: u32,
    /// Signals written at this cut, sorted; one word each.
    pub stored_signals: Vec<String>,
    pub backup_cost_mj: f64,
    pub restore_cost_mj: f64,
}

/// A complete placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NvmPlan {
    /// Cuts in ascending level order.
    pub cuts: Vec<CutRecord>,
    pub budget_mj: f64,
    pub alpha: f64,
    pub nvm: NvmParams,
    /// Worst-case replay cost under the final cuts, mJ.
    pub max_accumulation_mj: f64,
}

impl NvmPlan {
    pub fn cut_levels(&self) -> Vec<u32> {
        self.cuts.iter().map(|c| c.level).collect()
    }

    /// Words written by one complete pass over all cuts.
    pub fn words_per_pass(&self) -> u64 {
        self.cuts.iter().map(|c| c.stored_signals.len() as u64).sum()
    }

    /// Stage index of a cluster level: the number of cuts strictly below.
    pub fn stage_of_level(&self, level: u32) -> u32 {
        self.cuts.iter().filter(|c| c.level < level).count() as u32
    }
}

/// Aggregate cost of running a plan `repeats` times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanCost {
    pub word_writes: u64,
    pub backup_energy_mj: f64,
    pub restore_energy_mj: f64,
}

pub fn plan_cost(plan: &NvmPlan, repeats: u64) -> PlanCost {
    PlanCost {
        word_writes: plan.words_per_pass() * repeats,
        backup_energy_mj: plan.cuts.iter().map(|c| c.backup_cost_mj).sum::<f64>()
            * repeats as f64,
        restore_energy_mj: plan.cuts.iter().map(|c| c.restore_cost_mj).sum::<f64>()
            * repeats as f64,
    }
}

/// Signals that must be stored when cutting after `level`: driven by a
/// cluster at or below it, consumed by a cluster above it.  Signals that
/// only feed registers or primary outputs latch at cycle end instead.
pub fn stored_signals(cg: &ClusterGraph, level: u32) -> Vec<String> {
    let mut stored = BTreeSet::new();
    let consumers = cg.base.circuit.consumers();
    for cluster in cg.clusters.values() {
        if cluster.record.level > level {
            continue;
        }
        for m in &cluster.members {
            let needed_above = consumers
                .get(m.as_str())
                .into_iter()
                .flatten()
                .any(|c| cg.cluster_of(c).and_then(|k| cg.level_of(k)).unwrap_or(0) > level);
            if needed_above {
                stored.insert(m.clone());
            }
        }
    }
    stored.into_iter().collect()
}

fn backup_cost(cg: &ClusterGraph, level: u32, nvm: &NvmParams) -> f64 {
    stored_signals(cg, level).len() as f64 * nvm.write_energy_mj_per_word
}

fn restore_cost(cg: &ClusterGraph, level: u32, nvm: &NvmParams) -> f64 {
    stored_signals(cg, level).len() as f64 * nvm.read_energy_mj_per_word
}

/// Worst-case replay cost attributed to each cluster under a cut set:
/// restoring from the nearest cut below, re-running every ancestor above
/// that cut, then the cluster itself.  With `nvm` absent, restores are
/// free and the result is the pure compute accumulation.
pub fn accumulate(
    cg: &ClusterGraph,
    cuts: &BTreeSet<u32>,
    nvm: Option<&NvmParams>,
) -> BTreeMap<String, f64> {
    let mut restore_at: BTreeMap<u32, f64> = BTreeMap::new();
    if let Some(nvm) = nvm {
        for &c in cuts {
            restore_at.insert(c, restore_cost(cg, c, nvm));
        }
    }
    let mut acc = BTreeMap::new();
    for (name, cluster) in &cg.clusters {
        let level = cluster.record.level;
        let floor = cuts.iter().filter(|c| **c < level).max().copied();
        let restore = floor.map_or(0.0, |f| restore_at.get(&f).copied().unwrap_or(0.0));
        let cone = open_ancestors(cg, name, floor.unwrap_or(0));
        let work: f64 = cone
            .iter()
            .map(|a| cg.clusters[a].record.power_mj)
            .sum::<f64>()
            + cluster.record.power_mj;
        acc.insert(name.clone(), restore + work);
    }
    acc
}

/// Ancestors of `cluster` in the quotient DAG with level above `floor`.
fn open_ancestors(cg: &ClusterGraph, cluster: &str, floor: u32) -> BTreeSet<String> {
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut stack = vec![cluster.to_string()];
    while let Some(c) = stack.pop() {
        for p in cg.predecessors(&c) {
            if cg.level_of(p).unwrap_or(0) > floor && seen.insert(p.to_string()) {
                stack.push(p.to_string());
            }
        }
    }
    seen
}

/// Per-cluster desirability of holding a checkpoint boundary: deep,
/// energy-laden, well-connected clusters score high.  Each term is
/// normalized to [0, 1] over the current graph.
pub fn cluster_scores(
    cg: &ClusterGraph,
    cuts: &BTreeSet<u32>,
    nvm: Option<&NvmParams>,
    weights: &PlacementWeights,
) -> BTreeMap<String, f64> {
    let acc = accumulate(cg, cuts, nvm);
    let l_max = cg.max_level().max(1) as f64;
    let p_max = acc.values().copied().fold(0.0f64, f64::max);
    let f_max = cg
        .clusters
        .values()
        .map(|c| c.record.fan_in + c.record.fan_out)
        .max()
        .unwrap_or(0) as f64;
    cg.clusters
        .iter()
        .map(|(name, c)| {
            let lt = c.record.level as f64 / l_max;
            let pt = if p_max > 0.0 { acc[name] / p_max } else { 0.0 };
            let fan = (c.record.fan_in + c.record.fan_out) as f64;
            let ft = if f_max > 0.0 { fan / f_max } else { 0.0 };
            (
                name.clone(),
                weights.w_level * lt + weights.w_power * pt + weights.w_fan * ft,
            )
        })
        .collect()
}

/// Mean member score per level frontier.
pub fn frontier_scores(
    cg: &ClusterGraph,
    cuts: &BTreeSet<u32>,
    nvm: Option<&NvmParams>,
    weights: &PlacementWeights,
) -> BTreeMap<u32, f64> {
    let scores = cluster_scores(cg, cuts, nvm, weights);
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (name, c) in &cg.clusters {
        let e = sums.entry(c.record.level).or_insert((0.0, 0));
        e.0 += scores[name];
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(l, (s, n))| (l, s / n as f64))
        .collect()
}

/// Chooses cuts with the default safety margin ([`ALPHA_DEFAULT`]).
pub fn place(
    cg: &ClusterGraph,
    nvm: &NvmParams,
    budget_mj: f64,
    weights: &PlacementWeights,
) -> Result<NvmPlan, PlacementError> {
    place_with_alpha(cg, nvm, budget_mj, weights, ALPHA_DEFAULT)
}

/// Chooses cuts so every restore-replay-backup segment fits within
/// `alpha * budget`.  Greedy: while some cluster's replay exceeds the
/// usable budget, cut at the highest-scoring feasible frontier below it
/// (ties prefer the deeper frontier).
pub fn place_with_alpha(
    cg: &ClusterGraph,
    nvm: &NvmParams,
    budget_mj: f64,
    weights: &PlacementWeights,
    alpha: f64,
) -> Result<NvmPlan, PlacementError> {
    if !(budget_mj.is_finite() && budget_mj > 0.0) {
        return Err(PlacementError::BadParams("budget must be positive".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0 && alpha <= 1.0) {
        return Err(PlacementError::BadParams("alpha must be in (0, 1]".into()));
    }
    let effective = alpha * budget_mj;
    let mut cuts: BTreeSet<u32> = BTreeSet::new();
    loop {
        let acc = accumulate(cg, &cuts, Some(nvm));
        let violation = acc
            .iter()
            .filter(|(_, a)| **a > effective)
            .map(|(n, a)| (cg.clusters[n].record.level, n.clone(), *a))
            .min_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        let Some((v_level, v_name, v_acc)) = violation else { break };
        let floor = cuts.iter().filter(|c| **c < v_level).max().copied().unwrap_or(0);
        let scores = frontier_scores(cg, &cuts, Some(nvm), weights);
        let candidate = ((floor + 1)..v_level)
            .filter(|l| !cuts.contains(l) && scores.contains_key(l))
            .filter(|l| {
                let seg_max = acc
                    .iter()
                    .filter(|(n, _)| {
                        let cl = cg.clusters[*n].record.level;
                        cl > floor && cl <= *l
                    })
                    .map(|(_, a)| *a)
                    .fold(0.0f64, f64::max);
                seg_max + backup_cost(cg, *l, nvm) <= effective
            })
            .max_by(|a, b| {
                (scores[a], *a)
                    .partial_cmp(&(scores[b], *b))
                    .expect("scores are finite")
            });
        let Some(level) = candidate else {
            return Err(PlacementError::InfeasibleBudget {
                cluster: v_name,
                level: v_level,
                needed_mj: v_acc,
                effective_mj: effective,
            });
        };
        cuts.insert(level);
    }
    let acc = accumulate(cg, &cuts, Some(nvm));
    let records = cuts
        .iter()
        .map(|&level| {
            let stored = stored_signals(cg, level);
            CutRecord {
                backup_cost_mj: stored.len() as f64 * nvm.write_energy_mj_per_word,
                restore_cost_mj: stored.len() as f64 * nvm.read_energy_mj_per_word,
                level,
                stored_signals: stored,
            }
        })
        .collect();
    Ok(NvmPlan {
        cuts: records,
        budget_mj,
        alpha,
        nvm: nvm.clone(),
        max_accumulation_mj: acc.values().copied().fold(0.0f64, f64::max),
    })
}
