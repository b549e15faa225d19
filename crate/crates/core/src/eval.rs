//! Four-scheme backup comparison over a benchmark/trace/seed matrix.
//!
//! Each benchmark is amplified until one pass exceeds the capacitor, so a
//! single duty cycle never completes on stored charge alone, then run
//! under four checkpoint schemes:
//!
//! * `NvBased` writes the whole register file at every cluster boundary
//!   and on every power-failure backup (every flip-flop is non-volatile).
//! * `NvClustering` writes a fixed fraction of the file instead (grouped
//!   latch-enable flops, half by default).
//! * `Diac` restricts writes to placed cut frontiers, safe zone off.
//! * `OptDiac` is `Diac` with the safe zone enabled.
//!
//! The matrix is embarrassingly parallel: every (benchmark, scheme,
//! trace, seed) cell is one simulator run.  Cells run through
//! [`par::run_cells`], so reports come back in input order and the
//! reduction below is deterministic; identical inputs give byte-identical
//! CSV, JSON, and gnuplot output.
//!
//! Comparisons default to a deterministic cost model (zero operation-cost
//! uncertainty): seeds vary the harvest traces, not the device, so scheme
//! orderings reflect checkpoint structure rather than draw luck.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterError, ClusterGraph};
use crate::codegen::{self, NvNetlist};
use crate::energy::{self, AnnotatedGraph, EnergyError};
use crate::library::{GateLibrary, BUNDLED_LIBRARY_JSON};
use crate::par::{self, Mode};
use crate::parse::{self, ParseError};
use crate::placement::{
    self, CutRecord, NvmParams, NvmPlan, PlacementError, PlacementWeights, PlanCost,
};
use crate::policy::{self, PolicyConfig, PolicyError};
use crate::sim::{
    self, BackupWords, EnergyConfig, HarvestTrace, RunLimit, SimError, SimOptions, SimReport,
    StageMark, WorkloadPlan,
};

/// Sense cost ahead of the workload, mJ.
const SE_COST_MJ: f64 = 2.0;
/// Transmit cost after the workload, mJ.
const TR_COST_MJ: f64 = 9.0;
/// Transmit runs at the same per-tick rate as compute (see below).
const TR_DURATION_MS: f64 = 4.5;
/// Nominal compute power; the workload runs at this rate, mJ per ms.
/// Matching the slice rate to the brown-out affordability scale keeps
/// the suspend point of a zone-less scheme within one tick of the safe
/// zone's, so scheme comparisons measure checkpoint traffic rather than
/// lost slices.
const CP_POWER_MW: f64 = 2.0;
/// Relative amplitude of per-seed trace jitter.
const TRACE_JITTER: f64 = 0.15;

const BENCH_S27: &str = include_str!("../assets/benchmarks/s27.bench");
const BENCH_CHAIN12: &str = include_str!("../assets/benchmarks/chain12.json");
const BENCH_DIAMOND: &str = include_str!("../assets/benchmarks/diamond.json");
const BENCH_WIDE: &str = include_str!("../assets/benchmarks/wide.json");

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("evaluation: {0}")]
    Config(String),
    #[error("write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Backup scheme under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    NvBased,
    NvClustering,
    Diac,
    OptDiac,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::NvBased,
        Scheme::NvClustering,
        Scheme::Diac,
        Scheme::OptDiac,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Scheme::NvBased => "nv_based",
            Scheme::NvClustering => "nv_clustering",
            Scheme::Diac => "diac",
            Scheme::OptDiac => "opt_diac",
        }
    }

    pub fn from_label(s: &str) -> Option<Scheme> {
        Scheme::ALL.into_iter().find(|x| x.label() == s)
    }

    fn safe_zone(self) -> bool {
        matches!(self, Scheme::OptDiac)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Matrix-wide knobs.  Defaults reproduce the bundled comparison.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Capacitor capacity; also the amplification capacity, mJ.
    pub e_max_mj: f64,
    /// Placement budget per stage, mJ.
    pub budget_mj: f64,
    /// Cluster power ceiling for the merge/split policy, mJ.
    pub upper_mj: f64,
    /// Merge-candidate floor, mJ.
    pub lower_mj: f64,
    /// Fraction of the register file the grouped-latch baseline writes.
    pub clustering_ratio: f64,
    pub leakage_mw: f64,
    /// Operation cost spread; zero keeps comparisons deterministic.
    pub uncertainty: f64,
    pub nvm: NvmParams,
    pub weights: PlacementWeights,
    /// Seeds per (benchmark, scheme, trace family) cell.
    pub seeds: u64,
    /// Simulated wall time per run, ms.
    pub run_ms: f64,
    pub mode: Mode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            e_max_mj: 25.0,
            budget_mj: 18.0,
            upper_mj: 12.0,
            lower_mj: 8.0,
            clustering_ratio: 0.5,
            leakage_mw: 0.5,
            uncertainty: 0.0,
            nvm: NvmParams::mram(),
            weights: PlacementWeights::default(),
            seeds: 10,
            run_ms: 20_000.0,
            mode: Mode::Parallel,
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<(), EvalError> {
        if !(self.e_max_mj > 0.0 && self.budget_mj > 0.0 && self.run_ms > 0.0) {
            return Err(EvalError::Config(
                "capacity, budget, and run length must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.clustering_ratio) {
            return Err(EvalError::Config(
                "clustering ratio must be within [0, 1]".into(),
            ));
        }
        if self.seeds == 0 {
            return Err(EvalError::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}

/// Smallest repetition count whose total energy exceeds the capacity:
/// a workload that fits in one charge would never exercise checkpoints.
pub fn amplify_workload(graph_energy_mj: f64, capacity_mj: f64) -> u64 {
    if !(graph_energy_mj > 0.0) || !(capacity_mj > 0.0) {
        return 1;
    }
    (capacity_mj / graph_energy_mj).floor() as u64 + 1
}

/// Power-delay product: average energy per completed cycle times average
/// cycle latency.  Runs that never complete a cycle return infinity and
/// are excluded from normalized summaries.
pub fn compute_pdp(report: &SimReport) -> f64 {
    if report.completed_cycles == 0 {
        return f64::INFINITY;
    }
    let cycles = report.completed_cycles as f64;
    (report.energy.consumed_mj() / cycles) * (report.makespan_ms / cycles)
}

/// A benchmark ready for scheme builds: parsed, annotated, amplified.
#[derive(Debug, Clone)]
pub struct BenchCase {
    pub name: String,
    pub graph: AnnotatedGraph,
    /// Repetitions folded into the node energies.
    pub amplification: u64,
}

impl BenchCase {
    pub fn from_annotated(name: &str, mut graph: AnnotatedGraph, capacity_mj: f64) -> BenchCase {
        let k = amplify_workload(graph.workload_energy_mj(), capacity_mj);
        if k > 1 {
            graph.amplify(k as f64);
        }
        BenchCase {
            name: name.into(),
            graph,
            amplification: k,
        }
    }
}

/// Everything one scheme needs to simulate one benchmark.
#[derive(Debug, Clone)]
pub struct SchemeBuild {
    pub bench: String,
    pub scheme: Scheme,
    pub netlist: NvNetlist,
    pub workload: WorkloadPlan,
    pub sim: EnergyConfig,
    pub cost: PlanCost,
}

/// Operand registers a full-file backup covers: primary inputs plus every
/// task output and architected flip-flop.
fn register_file_words(graph: &AnnotatedGraph) -> u64 {
    let state = graph
        .circuit
        .nodes
        .iter()
        .filter(|n| matches!(n.kind, crate::GateKind::Dff | crate::GateKind::Lut))
        .count();
    (graph.circuit.primary_inputs.len() + state) as u64
}

/// Cumulative cluster energy up to and including each level, mJ.
fn level_prefix_mj(cg: &ClusterGraph) -> BTreeMap<u32, f64> {
    let mut by_level: BTreeMap<u32, f64> = BTreeMap::new();
    for c in cg.clusters.values() {
        *by_level.entry(c.record.level).or_insert(0.0) += c.record.power_mj;
    }
    let mut acc = 0.0;
    by_level
        .into_iter()
        .map(|(level, p)| {
            acc += p;
            (level, acc)
        })
        .collect()
}

/// A cut at every cluster boundary, including the final write-back.
fn boundary_plan(cg: &ClusterGraph, cfg: &EvalConfig) -> NvmPlan {
    let levels: BTreeSet<u32> = (1..=cg.max_level()).collect();
    let cuts: Vec<CutRecord> = levels
        .iter()
        .map(|&level| {
            let stored_signals = placement::stored_signals(cg, level);
            let words = stored_signals.len() as f64;
            CutRecord {
                level,
                stored_signals,
                backup_cost_mj: words * cfg.nvm.write_energy_mj_per_word,
                restore_cost_mj: words * cfg.nvm.read_energy_mj_per_word,
            }
        })
        .collect();
    let max_accumulation_mj = placement::accumulate(cg, &levels, Some(&cfg.nvm))
        .values()
        .fold(0.0_f64, |a, &b| a.max(b));
    NvmPlan {
        cuts,
        budget_mj: cfg.budget_mj,
        alpha: 1.0,
        nvm: cfg.nvm.clone(),
        max_accumulation_mj,
    }
}

/// Marks at the cumulative stage energies, mapped onto the common cycle
/// axis by `scale` (1 when the cluster total already is the cycle's
/// compute energy).
fn marks_at_levels(
    cg: &ClusterGraph,
    levels: &[u32],
    scale: f64,
    words_of: impl Fn(u32) -> u64,
) -> Vec<StageMark> {
    let prefix = level_prefix_mj(cg);
    levels
        .iter()
        .map(|&level| StageMark {
            at_mj: SE_COST_MJ + prefix[&level] * scale,
            words: words_of(level),
        })
        .collect()
}

/// Clusters, cuts, stage marks, and a simulator config for one scheme.
pub fn build_scheme(
    bench: &BenchCase,
    scheme: Scheme,
    cfg: &EvalConfig,
) -> Result<SchemeBuild, EvalError> {
    let file_words = register_file_words(&bench.graph);
    let mut cg = ClusterGraph::singletons(bench.graph.clone())?;
    // Every scheme runs the same silicon, so the cycle's compute energy is
    // the unclustered total; merged cluster graphs (whose aggregate power
    // shifts with shared idle time) only shape where the marks sit.
    let workload_mj: f64 = cg.clusters.values().map(|c| c.record.power_mj).sum();
    let (plan, marks, backup_words) = match scheme {
        Scheme::NvBased | Scheme::NvClustering => {
            let plan = boundary_plan(&cg, cfg);
            let (per_mark, backup) = if scheme == Scheme::NvBased {
                (file_words, BackupWords::FullFile)
            } else {
                (
                    (cfg.clustering_ratio * file_words as f64).ceil() as u64,
                    BackupWords::Fraction(cfg.clustering_ratio),
                )
            };
            let levels = plan.cut_levels();
            let marks = marks_at_levels(&cg, &levels, 1.0, |_| per_mark);
            (plan, marks, backup)
        }
        Scheme::Diac | Scheme::OptDiac => {
            let policy = PolicyConfig::new(cfg.upper_mj, cfg.lower_mj)?;
            policy::apply_policy3(&mut cg, &policy)?;
            let plan = placement::place(&cg, &cfg.nvm, cfg.budget_mj, &cfg.weights)?;
            let words: BTreeMap<u32, u64> = plan
                .cuts
                .iter()
                .map(|c| (c.level, c.stored_signals.len() as u64))
                .collect();
            let levels = plan.cut_levels();
            let merged_total: f64 = cg.clusters.values().map(|c| c.record.power_mj).sum();
            let marks = marks_at_levels(&cg, &levels, workload_mj / merged_total, |l| words[&l]);
            (plan, marks, BackupWords::LastCut)
        }
    };
    let sim = EnergyConfig {
        e_max_mj: cfg.e_max_mj,
        leakage_mw: cfg.leakage_mw,
        se_cost_mj: SE_COST_MJ,
        cp_cost_mj: workload_mj,
        tr_cost_mj: TR_COST_MJ,
        cp_duration_ms: workload_mj / CP_POWER_MW,
        tr_duration_ms: TR_DURATION_MS,
        uncertainty: cfg.uncertainty,
        safe_zone: scheme.safe_zone(),
        nvm: cfg.nvm.clone(),
        // Sample slower than a cycle completes so every run is pacing-bound:
        // all schemes finish cycle N on the same tick and the comparison
        // isolates checkpoint traffic instead of dispatch-gate phase drift.
        timer_base_ms: 30.0,
        ..EnergyConfig::default()
    };
    let workload = WorkloadPlan {
        name: format!("{}:{}", bench.name, scheme.label()),
        stage_marks: marks,
        register_file_words: file_words,
        backup_words,
    };
    let cost = placement::plan_cost(&plan, 1);
    let netlist = codegen::generate(cg, plan);
    Ok(SchemeBuild {
        bench: bench.name.clone(),
        scheme,
        netlist,
        workload,
        sim,
        cost,
    })
}

/// One simulator run in the matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub bench: String,
    pub scheme: Scheme,
    pub trace: String,
    pub seed: u64,
    pub cycles: u64,
    pub pdp_mj_ms: f64,
    pub consumed_mj: f64,
    pub makespan_ms: f64,
    pub backups: u64,
    pub restores: u64,
    pub shutdowns: u64,
    pub safe_zone_entries: u64,
    pub nvm_word_writes: u64,
    pub checkpoint_word_writes: u64,
    pub nvm_word_reads: u64,
}

/// Per-scheme aggregate for one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeStats {
    pub scheme: Scheme,
    pub runs: u64,
    /// Runs that never completed a cycle; excluded from the means.
    pub unfinished: u64,
    pub mean_pdp: f64,
    pub std_pdp: f64,
    /// Mean PDP relative to the first scheme in the table.
    pub norm_pdp: f64,
    pub mean_word_writes: f64,
    pub mean_cycles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub bench: String,
    /// Scheme used as the normalization base (first listed).
    pub base: Scheme,
    pub schemes: Vec<SchemeStats>,
}

/// Full matrix outcome: one row per run plus per-benchmark tables.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub rows: Vec<CellRow>,
    pub tables: Vec<BenchTable>,
    pub traces: Vec<String>,
    pub seeds: u64,
}

pub fn builtin_traces() -> Vec<HarvestTrace> {
    vec![
        HarvestTrace::constant("steady", 6.5, 250.0),
        // Outages long enough to suspend mid-operation from a full charge
        // but short enough to recover without crossing the backup band.
        HarvestTrace::square_wave("pulse", 10.0, 40.0, 0.0, 12.0, 3),
        HarvestTrace::reference_burst(),
    ]
}

/// The bundled comparison suite: one sequential gate-level circuit and
/// three task graphs spanning chain, fork/join, and wide topologies.
pub fn builtin_suite(cfg: &EvalConfig) -> Result<Vec<BenchCase>, EvalError> {
    let lib = GateLibrary::bundled();
    let mut out = Vec::new();
    let circuit = parse::parse(BENCH_S27, parse::Format::Bench, "s27")?;
    let annotated = energy::annotate(circuit, &lib, BUNDLED_LIBRARY_JSON, &BTreeMap::new())?;
    out.push(BenchCase::from_annotated("s27", annotated, cfg.e_max_mj));
    for text in [BENCH_CHAIN12, BENCH_DIAMOND, BENCH_WIDE] {
        let doc = parse::parse_taskgraph_doc(text)?;
        let overrides = energy::overrides_from_doc(&doc);
        let graph = doc.into_graph()?;
        let name = graph.name.clone();
        let annotated = energy::annotate(graph, &lib, BUNDLED_LIBRARY_JSON, &overrides)?;
        out.push(BenchCase::from_annotated(&name, annotated, cfg.e_max_mj));
    }
    Ok(out)
}

/// Runs the bundled suite under the bundled trace families.
pub fn evaluate(cfg: &EvalConfig) -> Result<Evaluation, EvalError> {
    let benches = builtin_suite(cfg)?;
    evaluate_with(&benches, &builtin_traces(), cfg)
}

/// Runs `benches x schemes x families x seeds`, aggregating per benchmark.
pub fn evaluate_with(
    benches: &[BenchCase],
    families: &[HarvestTrace],
    cfg: &EvalConfig,
) -> Result<Evaluation, EvalError> {
    cfg.validate()?;
    if benches.is_empty() || families.is_empty() {
        return Err(EvalError::Config(
            "need at least one benchmark and one trace family".into(),
        ));
    }
    let mut builds = Vec::with_capacity(benches.len() * Scheme::ALL.len());
    for bench in benches {
        for scheme in Scheme::ALL {
            builds.push(build_scheme(bench, scheme, cfg)?);
        }
    }
    // One jittered trace per (family, seed), shared across schemes so
    // comparisons are paired.
    let variants: Vec<Vec<HarvestTrace>> = families
        .iter()
        .enumerate()
        .map(|(f, fam)| {
            (0..cfg.seeds)
                .map(|seed| fam.jittered(7919 * f as u64 + 104_729 * seed + 1, TRACE_JITTER))
                .collect()
        })
        .collect();

    struct Cell {
        build: usize,
        family: usize,
        seed: u64,
    }
    let mut cells = Vec::with_capacity(builds.len() * families.len() * cfg.seeds as usize);
    for build in 0..builds.len() {
        for family in 0..families.len() {
            for seed in 0..cfg.seeds {
                cells.push(Cell {
                    build,
                    family,
                    seed,
                });
            }
        }
    }
    let outcomes = par::run_cells(&cells, cfg.mode, |cell| {
        let build = &builds[cell.build];
        let trace = &variants[cell.family][cell.seed as usize];
        sim::run(
            &build.workload,
            trace,
            &build.sim,
            cell.seed,
            RunLimit::Duration(cfg.run_ms),
            SimOptions::default(),
        )
        .map(|report| CellRow {
            bench: build.bench.clone(),
            scheme: build.scheme,
            trace: families[cell.family].name.clone(),
            seed: cell.seed,
            cycles: report.completed_cycles,
            pdp_mj_ms: compute_pdp(&report),
            consumed_mj: report.energy.consumed_mj(),
            makespan_ms: report.makespan_ms,
            backups: report.backups,
            restores: report.restores,
            shutdowns: report.shutdowns,
            safe_zone_entries: report.safe_zone_entries,
            nvm_word_writes: report.nvm_word_writes,
            checkpoint_word_writes: report.checkpoint_word_writes,
            nvm_word_reads: report.nvm_word_reads,
        })
    });
    let mut rows = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        rows.push(outcome?);
    }
    let tables = aggregate(benches, &rows);
    for table in &tables {
        for s in &table.schemes {
            if s.unfinished > 0 {
                log::warn!(
                    "{}/{}: {} of {} runs completed no cycle and were excluded from the means",
                    table.bench,
                    s.scheme,
                    s.unfinished,
                    s.runs
                );
            }
        }
    }
    Ok(Evaluation {
        rows,
        tables,
        traces: families.iter().map(|f| f.name.clone()).collect(),
        seeds: cfg.seeds,
    })
}

fn aggregate(benches: &[BenchCase], rows: &[CellRow]) -> Vec<BenchTable> {
    benches
        .iter()
        .map(|bench| {
            let mut schemes = Vec::with_capacity(Scheme::ALL.len());
            let mut base_mean = f64::NAN;
            for scheme in Scheme::ALL {
                let cell_rows: Vec<&CellRow> = rows
                    .iter()
                    .filter(|r| r.bench == bench.name && r.scheme == scheme)
                    .collect();
                let finite: Vec<f64> = cell_rows
                    .iter()
                    .map(|r| r.pdp_mj_ms)
                    .filter(|p| p.is_finite())
                    .collect();
                let mean_pdp = mean(&finite);
                if schemes.is_empty() {
                    base_mean = mean_pdp;
                }
                schemes.push(SchemeStats {
                    scheme,
                    runs: cell_rows.len() as u64,
                    unfinished: (cell_rows.len() - finite.len()) as u64,
                    mean_pdp,
                    std_pdp: stddev(&finite),
                    norm_pdp: mean_pdp / base_mean,
                    mean_word_writes: mean(
                        &cell_rows
                            .iter()
                            .map(|r| r.nvm_word_writes as f64)
                            .collect::<Vec<_>>(),
                    ),
                    mean_cycles: mean(
                        &cell_rows
                            .iter()
                            .map(|r| r.cycles as f64)
                            .collect::<Vec<_>>(),
                    ),
                });
            }
            BenchTable {
                bench: bench.name.clone(),
                base: Scheme::ALL[0],
                schemes,
            }
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl Evaluation {
    pub fn table(&self, bench: &str) -> Option<&BenchTable> {
        self.tables.iter().find(|t| t.bench == bench)
    }

    pub fn stats(&self, bench: &str, scheme: Scheme) -> Option<&SchemeStats> {
        self.table(bench)?.schemes.iter().find(|s| s.scheme == scheme)
    }

    /// Long-form per-run table.
    pub fn results_csv(&self) -> String {
        let mut out = String::from(
            "bench,scheme,trace,seed,cycles,pdp_mj_ms,consumed_mj,makespan_ms,backups,\
             restores,shutdowns,safe_zone_entries,nvm_word_writes,checkpoint_word_writes,\
             nvm_word_reads\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.bench,
                r.scheme,
                r.trace,
                r.seed,
                r.cycles,
                r.pdp_mj_ms,
                r.consumed_mj,
                r.makespan_ms,
                r.backups,
                r.restores,
                r.shutdowns,
                r.safe_zone_entries,
                r.nvm_word_writes,
                r.checkpoint_word_writes,
                r.nvm_word_reads
            ));
        }
        out
    }

    /// Per-benchmark summary, PDP relative to the first scheme.
    pub fn normalized_csv(&self) -> String {
        let mut out = String::from(
            "bench,scheme,runs,unfinished,mean_pdp_mj_ms,std_pdp_mj_ms,norm_pdp,\
             mean_word_writes,mean_cycles\n",
        );
        for t in &self.tables {
            for s in &t.schemes {
                out.push_str(&format!(
                    "{},{},{},{},{:.6},{:.6},{:.6},{:.3},{:.3}\n",
                    t.bench,
                    s.scheme,
                    s.runs,
                    s.unfinished,
                    s.mean_pdp,
                    s.std_pdp,
                    s.norm_pdp,
                    s.mean_word_writes,
                    s.mean_cycles
                ));
            }
        }
        out
    }

    /// Normalized PDP per benchmark, one column per scheme.
    pub fn gnuplot_dat(&self) -> String {
        let mut out = String::from("# bench");
        for scheme in Scheme::ALL {
            out.push(' ');
            out.push_str(scheme.label());
        }
        out.push('\n');
        for t in &self.tables {
            out.push_str(&t.bench);
            for s in &t.schemes {
                out.push_str(&format!(" {:.6}", s.norm_pdp));
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            seeds: u64,
            traces: &'a [String],
            tables: &'a [BenchTable],
        }
        serde_json::to_string_pretty(&Summary {
            seeds: self.seeds,
            traces: &self.traces,
            tables: &self.tables,
        })
        .expect("summary serialization cannot fail")
    }

    /// Writes `results.csv`, `normalized.csv`, `summary.json`, `pdp.dat`.
    pub fn write_all(&self, dir: &Path) -> Result<(), EvalError> {
        let write = |name: &str, content: String| -> Result<(), EvalError> {
            let path = dir.join(name);
            std::fs::write(&path, content).map_err(|source| EvalError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        write("results.csv", self.results_csv())?;
        write("normalized.csv", self.normalized_csv())?;
        write("summary.json", self.summary_json())?;
        write("pdp.dat", self.gnuplot_dat())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Thresholds;

    fn chain12_case(cfg: &EvalConfig) -> BenchCase {
        let doc = parse::parse_taskgraph_doc(BENCH_CHAIN12).unwrap();
        let overrides = energy::overrides_from_doc(&doc);
        let graph = doc.into_graph().unwrap();
        let annotated = energy::annotate(
            graph,
            &GateLibrary::bundled(),
            BUNDLED_LIBRARY_JSON,
            &overrides,
        )
        .unwrap();
        BenchCase::from_annotated("chain12", annotated, cfg.e_max_mj)
    }

    #[test]
    fn amplification_is_the_smallest_overflowing_count() {
        assert_eq!(amplify_workload(3.0, 25.0), 9);
        assert_eq!(amplify_workload(30.0, 25.0), 1);
        assert_eq!(amplify_workload(25.0, 25.0), 2);
        assert_eq!(amplify_workload(12.5, 25.0), 3);
        // 8 * 3.125 = exactly the capacity, so one more pass is needed.
        assert_eq!(amplify_workload(3.125, 25.0), 9);
    }

    fn report_with(cycles: u64, consumed_mj: f64, makespan_ms: f64) -> SimReport {
        SimReport {
            workload: "w".into(),
            trace: "t".into(),
            seed: 0,
            ticks: 0,
            duration_ms: makespan_ms,
            completed_cycles: cycles,
            backups: 0,
            restores: 0,
            shutdowns: 0,
            safe_zone_entries: 0,
            nvm_word_writes: 0,
            checkpoint_word_writes: 0,
            nvm_word_reads: 0,
            energy: crate::sim::EnergyLedger {
                harvested_mj: consumed_mj,
                clipped_mj: 0.0,
                leaked_mj: 0.0,
                compute_mj: consumed_mj,
                nvm_write_mj: 0.0,
                nvm_read_mj: 0.0,
                stored_mj: 0.0,
            },
            makespan_ms,
            thresholds: Thresholds {
                th_off: 0.5,
                th_bk: 0.6,
                th_safe: 2.6,
                th_se: 4.8,
                th_cp: 7.0,
                th_tr: 12.5,
            },
            states: None,
        }
    }

    #[test]
    fn pdp_is_energy_per_cycle_times_latency_per_cycle() {
        let r = report_with(10, 50.0, 1000.0);
        assert!((compute_pdp(&r) - 500.0).abs() < 1e-12);
        assert!(compute_pdp(&report_with(0, 50.0, 1000.0)).is_infinite());
    }

    #[test]
    fn baseline_schemes_mark_every_boundary() {
        let cfg = EvalConfig::default();
        let case = chain12_case(&cfg);
        let file = register_file_words(&case.graph);
        assert_eq!(file, 16);

        let nvb = build_scheme(&case, Scheme::NvBased, &cfg).unwrap();
        let levels = ClusterGraph::singletons(case.graph.clone())
            .unwrap()
            .max_level();
        assert_eq!(nvb.workload.stage_marks.len(), levels as usize);
        assert!(nvb.workload.stage_marks.iter().all(|m| m.words == file));
        assert_eq!(nvb.workload.backup_words, BackupWords::FullFile);
        assert!(!nvb.sim.safe_zone);

        let nvcl = build_scheme(&case, Scheme::NvClustering, &cfg).unwrap();
        assert_eq!(nvcl.workload.stage_marks.len(), levels as usize);
        assert!(nvcl
            .workload
            .stage_marks
            .iter()
            .all(|m| m.words == (0.5_f64 * file as f64).ceil() as u64));
        assert_eq!(
            nvcl.workload.backup_words,
            BackupWords::Fraction(cfg.clustering_ratio)
        );
    }

    #[test]
    fn placed_schemes_mark_only_their_cuts() {
        let cfg = EvalConfig::default();
        let case = chain12_case(&cfg);
        let diac = build_scheme(&case, Scheme::Diac, &cfg).unwrap();
        let opt = build_scheme(&case, Scheme::OptDiac, &cfg).unwrap();
        let boundaries = ClusterGraph::singletons(case.graph.clone())
            .unwrap()
            .max_level() as usize;
        assert!(!diac.netlist.plan.cuts.is_empty());
        assert!(diac.netlist.plan.cuts.len() < boundaries);
        assert_eq!(diac.workload.stage_marks.len(), diac.netlist.plan.cuts.len());
        for (mark, cut) in diac
            .workload
            .stage_marks
            .iter()
            .zip(diac.netlist.plan.cuts.iter())
        {
            assert_eq!(mark.words, cut.stored_signals.len() as u64);
        }
        assert_eq!(diac.workload.backup_words, BackupWords::LastCut);
        // The optimized variant differs only in the safe zone.
        assert_eq!(
            diac.netlist.plan.cut_levels(),
            opt.netlist.plan.cut_levels()
        );
        assert!(!diac.sim.safe_zone && opt.sim.safe_zone);
        assert_eq!(diac.workload.stage_marks, opt.workload.stage_marks);
    }

    #[test]
    fn three_stage_chain_gets_three_baseline_cut_points() {
        let text = r#"{
            "name": "tri",
            "primary_inputs": ["x"],
            "primary_outputs": ["n3"],
            "nodes": [
                {"name": "n1", "inputs": ["x"], "power_mJ": 9.0, "delay_ms": 1.0},
                {"name": "n2", "inputs": ["n1"], "power_mJ": 9.0, "delay_ms": 1.0},
                {"name": "n3", "inputs": ["n2"], "power_mJ": 9.0, "delay_ms": 1.0}
            ]
        }"#;
        let doc = parse::parse_taskgraph_doc(text).unwrap();
        let overrides = energy::overrides_from_doc(&doc);
        let graph = doc.into_graph().unwrap();
        let annotated = energy::annotate(
            graph,
            &GateLibrary::bundled(),
            BUNDLED_LIBRARY_JSON,
            &overrides,
        )
        .unwrap();
        let case = BenchCase::from_annotated("tri", annotated, 25.0);
        assert_eq!(case.amplification, 1);
        let nvb = build_scheme(&case, Scheme::NvBased, &EvalConfig::default()).unwrap();
        assert_eq!(nvb.netlist.plan.cut_levels(), vec![1, 2, 3]);
        assert_eq!(nvb.workload.stage_marks.len(), 3);
        // Marks sit at the cumulative stage energies, offset by the sense
        // cost, with the final write-back inside the compute span.
        let marks: Vec<f64> = nvb.workload.stage_marks.iter().map(|m| m.at_mj).collect();
        assert_eq!(marks, vec![11.0, 20.0, 29.0]);
    }

    #[test]
    fn small_matrix_is_deterministic_and_normalized() {
        let cfg = EvalConfig {
            seeds: 2,
            run_ms: 3_000.0,
            ..EvalConfig::default()
        };
        let benches = vec![chain12_case(&cfg)];
        let families = vec![HarvestTrace::constant("steady", 6.5, 250.0)];
        let a = evaluate_with(&benches, &families, &cfg).unwrap();
        let b = evaluate_with(&benches, &families, &cfg).unwrap();
        assert_eq!(a.results_csv(), b.results_csv());
        assert_eq!(a.normalized_csv(), b.normalized_csv());
        assert_eq!(a.rows.len(), 4 * 2);
        assert!(a.rows.iter().all(|r| r.cycles > 0));
        let table = a.table("chain12").unwrap();
        assert_eq!(table.base, Scheme::NvBased);
        assert!((table.schemes[0].norm_pdp - 1.0).abs() < 1e-12);
        for s in &table.schemes {
            assert_eq!(s.runs, 2);
            assert_eq!(s.unfinished, 0);
            assert!(s.mean_pdp.is_finite() && s.mean_pdp > 0.0);
        }
    }

    #[test]
    fn sequential_and_parallel_modes_agree() {
        let base = EvalConfig {
            seeds: 1,
            run_ms: 2_000.0,
            ..EvalConfig::default()
        };
        let benches = vec![chain12_case(&base)];
        let families = vec![HarvestTrace::square_wave("pulse", 10.0, 9.0, 0.0, 3.0, 6)];
        let seq = EvalConfig {
            mode: Mode::Sequential,
            ..base.clone()
        };
        let a = evaluate_with(&benches, &families, &base).unwrap();
        let b = evaluate_with(&benches, &families, &seq).unwrap();
        assert_eq!(a.results_csv(), b.results_csv());
    }

    #[test]
    fn writers_emit_complete_files() {
        let cfg = EvalConfig {
            seeds: 1,
            run_ms: 2_000.0,
            ..EvalConfig::default()
        };
        let benches = vec![chain12_case(&cfg)];
        let families = vec![HarvestTrace::constant("steady", 6.5, 250.0)];
        let eval = evaluate_with(&benches, &families, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        eval.write_all(dir.path()).unwrap();
        let results = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(results.lines().count(), eval.rows.len() + 1);
        assert!(results.starts_with("bench,scheme,trace,seed,"));
        let normalized = std::fs::read_to_string(dir.path().join("normalized.csv")).unwrap();
        let base_line = normalized
            .lines()
            .find(|l| l.contains(",nv_based,"))
            .unwrap();
        let norm: f64 = base_line.split(',').nth(6).unwrap().parse().unwrap();
        assert!((norm - 1.0).abs() < 1e-9);
        let dat = std::fs::read_to_string(dir.path().join("pdp.dat")).unwrap();
        assert!(dat.starts_with("# bench nv_based nv_clustering diac opt_diac"));
        assert_eq!(dat.lines().count(), 2);
        let summary = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&summary).unwrap();
        assert_eq!(parsed["seeds"], 1);
        assert_eq!(parsed["tables"][0]["bench"], "chain12");
    }

    #[test]
    fn builtin_suite_amplifies_every_case_past_capacity() {
        let cfg = EvalConfig::default();
        let suite = builtin_suite(&cfg).unwrap();
        let names: Vec<&str> = suite.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, vec!["s27", "chain12", "diamond", "wide"]);
        for case in &suite {
            assert!(case.graph.workload_energy_mj() > cfg.e_max_mj);
            assert!(case.amplification >= 1);
            assert!(register_file_words(&case.graph) > 0);
        }
        // The gate-level circuit needs many repetitions, the task graphs
        // are already heavier than one charge.
        assert!(suite[0].amplification > 1);
        assert!(suite[1..].iter().all(|c| c.amplification == 1));
        assert_eq!(builtin_traces().len(), 3);
    }
}
