//! Energy-harvesting execution model.
//!
//! A device runs a sense → compute → transmit duty cycle off a capacitor
//! fed by an unreliable harvester.  A finite-state controller decides each
//! tick whether to execute, suspend, back volatile state up into NVM,
//! shut down, or wake and restore.  Progress through the cycle is tracked
//! on a nominal energy axis; a staged workload places marks on that axis
//! where intermediate frontiers are written through to NVM, so a reboot
//! resumes from the deepest crossed mark instead of the cycle start.
//!
//! The per-tick order is fixed and observable: harvest, leak, then exactly
//! one of {off/wake, backup, shutdown, execute/idle}, then the cycle timer,
//! then re-arming the backup trigger.  Every tick reports the state it
//! performed, which is what the equivalence tests replay.

pub mod trace;

pub use trace::{HarvestTrace, TraceError, TraceSegment};

use crate::placement::NvmParams;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("bad workload: {0}")]
    BadWorkload(String),
}

/// Progress register: which step of the duty cycle is pending.
pub const FLAG_IDLE: u8 = 0b000;
pub const FLAG_SENSE: u8 = 0b100;
pub const FLAG_COMPUTE: u8 = 0b010;
pub const FLAG_TRANSMIT: u8 = 0b001;

/// What a tick performed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FsmState {
    /// Powered but not executing: idle between cycles, waiting for a
    /// dispatch threshold, or suspended mid-operation.
    Sp,
    /// Sensing (atomic, one tick).
    Se,
    /// Computing (sliced across ticks).
    Cp,
    /// Transmitting (sliced across ticks).
    Tr,
    /// Backing volatile state up into NVM.
    Bk,
    /// Dark.  Wake-up and restore happen on the last Off tick's successor.
    Off,
}

/// How many words a power-failure backup writes beyond the progress flag
/// and live operands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BackupWords {
    /// The whole register file every time.
    FullFile,
    /// A fixed fraction of the register file, rounded up.
    Fraction(f64),
    /// Only the frontier of the deepest crossed mark (nothing if the
    /// cycle has not reached a mark yet).
    LastCut,
}

/// A point on the cycle's nominal energy axis where a stage frontier is
/// written through to NVM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageMark {
    /// Position in nominal cycle millijoules, exclusive of zero.
    pub at_mj: f64,
    /// Frontier size written when execution crosses the mark.
    pub words: u64,
}

/// The workload one duty cycle executes, plus its persistence layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadPlan {
    pub name: String,
    /// Marks in ascending `at_mj` order, all within the cycle energy.
    pub stage_marks: Vec<StageMark>,
    /// Architectural state in words; the unit a `FullFile` backup writes.
    pub register_file_words: u64,
    pub backup_words: BackupWords,
}

impl WorkloadPlan {
    /// A plan with no staging: nothing is persisted mid-cycle and every
    /// backup writes the full register file.
    pub fn unstaged(name: &str, register_file_words: u64) -> WorkloadPlan {
        WorkloadPlan {
            name: name.into(),
            stage_marks: Vec::new(),
            register_file_words,
            backup_words: BackupWords::FullFile,
        }
    }

    /// Words a single power-failure backup writes: progress flag, live
    /// operands for the given flag, and the frontier for `backup_words`.
    pub fn backup_volume(&self, flag: u8, deepest_mark: Option<usize>) -> u64 {
        1 + data_words(flag) + self.frontier_words(deepest_mark)
    }

    fn frontier_words(&self, deepest_mark: Option<usize>) -> u64 {
        match self.backup_words {
            BackupWords::FullFile => self.register_file_words,
            BackupWords::Fraction(r) => (r * self.register_file_words as f64).ceil() as u64,
            BackupWords::LastCut => deepest_mark
                .and_then(|i| self.stage_marks.get(i))
                .map(|m| m.words)
                .unwrap_or(0),
        }
    }

    /// Worst-case backup volume, used to derive the backup threshold.
    pub fn max_backup_words(&self) -> u64 {
        let worst_frontier = match self.backup_words {
            BackupWords::FullFile | BackupWords::Fraction(_) => self.frontier_words(None),
            BackupWords::LastCut => self
                .stage_marks
                .iter()
                .map(|m| m.words)
                .max()
                .unwrap_or(0),
        };
        1 + 1 + worst_frontier
    }

    fn validate(&self, cycle_mj: f64) -> Result<(), SimError> {
        let mut prev = 0.0;
        for m in &self.stage_marks {
            if !(m.at_mj.is_finite() && m.at_mj > prev) {
                return Err(SimError::BadWorkload(
                    "stage marks must be finite, positive, and strictly ascending".into(),
                ));
            }
            if m.at_mj >= cycle_mj {
                return Err(SimError::BadWorkload(format!(
                    "stage mark at {} mJ is not inside the {} mJ cycle",
                    m.at_mj, cycle_mj
                )));
            }
            prev = m.at_mj;
        }
        if let BackupWords::Fraction(r) = self.backup_words {
            if !(r.is_finite() && (0.0..=1.0).contains(&r)) {
                return Err(SimError::BadWorkload("fraction must be in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Live operands that exist at each progress-flag value: a sample after
/// sensing, a result after computing.
fn data_words(flag: u8) -> u64 {
    match flag {
        FLAG_COMPUTE | FLAG_TRANSMIT => 1,
        _ => 0,
    }
}

/// Device parameters.  Thresholds derive from these once per run and stay
/// fixed; only the cycle timer adapts to the harvest rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    /// Capacitor capacity; inflow past it is shed.
    pub e_max_mj: f64,
    /// Always-on drain, charged every tick including while off.
    pub leakage_mw: f64,
    pub tick_ms: f64,
    pub se_cost_mj: f64,
    pub cp_cost_mj: f64,
    pub tr_cost_mj: f64,
    /// Nominal wall time of one compute step; sets its slice power.
    pub cp_duration_ms: f64,
    pub tr_duration_ms: f64,
    /// Half-width of the per-operation cost perturbation.
    pub uncertainty: f64,
    /// Below this the device browns out.
    pub th_off_mj: f64,
    /// Suspend instead of running to the backup threshold.
    pub safe_zone: bool,
    /// Gap between the backup and suspend thresholds when the safe zone
    /// is on.
    pub safe_zone_margin_mj: f64,
    /// Dispatch headroom multiplier over an operation's nominal cost.
    pub dispatch_margin: f64,
    /// Headroom multiplier over the worst-case backup cost.
    pub backup_margin: f64,
    /// Cycle timer base period.
    pub timer_base_ms: f64,
    /// Harvest rate at which the timer runs at its base period.
    pub timer_target_mw: f64,
    pub nvm: NvmParams,
}

impl Default for EnergyConfig {
    fn default() -> EnergyConfig {
        EnergyConfig {
            e_max_mj: 25.0,
            leakage_mw: 0.5,
            tick_ms: 1.0,
            se_cost_mj: 2.0,
            cp_cost_mj: 4.0,
            tr_cost_mj: 9.0,
            cp_duration_ms: 2.0,
            tr_duration_ms: 5.0,
            uncertainty: 0.1,
            th_off_mj: 0.5,
            safe_zone: true,
            safe_zone_margin_mj: 2.0,
            dispatch_margin: 1.1,
            backup_margin: 1.2,
            timer_base_ms: 10.0,
            timer_target_mw: 5.0,
            nvm: NvmParams::mram(),
        }
    }
}

impl EnergyConfig {
    pub fn cycle_energy_mj(&self) -> f64 {
        self.se_cost_mj + self.cp_cost_mj + self.tr_cost_mj
    }

    pub fn derive_thresholds(&self, plan: &WorkloadPlan) -> Thresholds {
        let full_backup_mj = plan.max_backup_words() as f64 * self.nvm.write_energy_mj_per_word;
        let th_bk = self.th_off_mj + self.backup_margin * full_backup_mj;
        // The ladder is the same whether or not the safe zone is enforced;
        // disabling the zone only changes the in-flight suspension floor,
        // never the dispatch levels, so paired runs stay comparable.
        let th_safe = th_bk + self.safe_zone_margin_mj;
        // Dispatch levels cannot exceed the capacitor: an operation whose
        // headroom target is unreachable (its cost rivals the capacity)
        // dispatches from a near-full charge and relies on suspension.
        let cap = 0.95 * self.e_max_mj;
        let gate = |cost: f64| (th_safe + self.dispatch_margin * cost).min(cap).max(th_safe);
        Thresholds {
            th_off: self.th_off_mj,
            th_bk,
            th_safe,
            th_se: gate(self.se_cost_mj),
            th_cp: gate(self.cp_cost_mj),
            th_tr: gate(self.tr_cost_mj),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("e_max_mj", self.e_max_mj),
            ("tick_ms", self.tick_ms),
            ("se_cost_mj", self.se_cost_mj),
            ("cp_cost_mj", self.cp_cost_mj),
            ("tr_cost_mj", self.tr_cost_mj),
            ("cp_duration_ms", self.cp_duration_ms),
            ("tr_duration_ms", self.tr_duration_ms),
            ("th_off_mj", self.th_off_mj),
            ("timer_base_ms", self.timer_base_ms),
            ("timer_target_mw", self.timer_target_mw),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::BadConfig(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.uncertainty) {
            return Err(SimError::BadConfig("uncertainty must be in [0, 1)".into()));
        }
        if self.leakage_mw < 0.0 || self.safe_zone_margin_mj < 0.0 {
            return Err(SimError::BadConfig("negative drain or margin".into()));
        }
        if self.dispatch_margin < 1.0 || self.backup_margin < 1.0 {
            return Err(SimError::BadConfig("margins must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fixed decision levels for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub th_off: f64,
    pub th_bk: f64,
    pub th_safe: f64,
    pub th_se: f64,
    pub th_cp: f64,
    pub th_tr: f64,
}

impl Thresholds {
    fn dispatch(&self, flag: u8) -> f64 {
        match flag {
            FLAG_SENSE => self.th_se,
            FLAG_COMPUTE => self.th_cp,
            FLAG_TRANSMIT => self.th_tr,
            _ => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RunLimit {
    /// Simulate this much wall time.
    Duration(f64),
    /// Stop once this many duty cycles completed.
    Cycles(u64),
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Hard tick cap regardless of the run limit.
    pub max_ticks: u64,
    /// Record the per-tick performed state in the report.
    pub record_states: bool,
}

impl Default for SimOptions {
    fn default() -> SimOptions {
        SimOptions {
            max_ticks: 2_000_000,
            record_states: false,
        }
    }
}

/// Where the run's energy went, plus what is left on the capacitor.
/// All categories are compensated sums; `conservation_error_mj` should
/// sit at numerical noise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub harvested_mj: f64,
    /// Inflow shed because the capacitor was full.
    pub clipped_mj: f64,
    pub leaked_mj: f64,
    pub compute_mj: f64,
    pub nvm_write_mj: f64,
    pub nvm_read_mj: f64,
    pub stored_mj: f64,
}

impl EnergyLedger {
    pub fn consumed_mj(&self) -> f64 {
        self.leaked_mj + self.compute_mj + self.nvm_write_mj + self.nvm_read_mj
    }

    pub fn conservation_error_mj(&self) -> f64 {
        (self.harvested_mj - self.consumed_mj() - self.stored_mj).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub workload: String,
    pub trace: String,
    pub seed: u64,
    pub ticks: u64,
    pub duration_ms: f64,
    pub completed_cycles: u64,
    pub backups: u64,
    pub restores: u64,
    pub shutdowns: u64,
    pub safe_zone_entries: u64,
    /// Words written by power-failure backups.
    pub nvm_word_writes: u64,
    /// Words written by stage-mark crossings.
    pub checkpoint_word_writes: u64,
    pub nvm_word_reads: u64,
    pub energy: EnergyLedger,
    /// Time of the last completed cycle (the full duration if none).
    pub makespan_ms: f64,
    pub thresholds: Thresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<FsmState>>,
}

/// Compensated accumulator; keeps long tick sums at ~1 ulp.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

/// State that survives a power failure: the restore target.
#[derive(Debug, Clone, Copy)]
struct Commit {
    progress_mj: f64,
    flag: u8,
    /// Perturbation of the in-flight operation, when the commit captured
    /// one (backups do; mark crossings do not).
    op_u: Option<f64>,
    /// Words a restore must read back.
    words: u64,
    /// Index of the deepest crossed mark at commit time.
    deepest_mark: Option<usize>,
}

impl Commit {
    fn cycle_start() -> Commit {
        Commit {
            progress_mj: 0.0,
            flag: FLAG_IDLE,
            op_u: None,
            words: 1,
            deepest_mark: None,
        }
    }
}

/// An operation being executed, with its once-per-instance perturbation.
#[derive(Debug, Clone, Copy)]
struct OpRun {
    u: f64,
    /// Effective millijoules still to consume.
    remaining_mj: f64,
}

struct Machine<'a> {
    cfg: &'a EnergyConfig,
    plan: &'a WorkloadPlan,
    trace: &'a HarvestTrace,
    th: Thresholds,
    rng: ChaCha8Rng,

    energy: Kahan,
    off: bool,
    armed: bool,
    flag: u8,
    /// Nominal position inside the duty cycle, in [0, cycle_energy].
    progress_mj: f64,
    op: Option<OpRun>,
    commit: Commit,
    deepest_mark: Option<usize>,
    timer_count: i64,
    inflow_sum_mw: f64,
    prev_performed: FsmState,

    // Ledger.
    harvested: Kahan,
    clipped: Kahan,
    leaked: Kahan,
    compute: Kahan,
    nvm_write: Kahan,
    nvm_read: Kahan,

    // Counters.
    completed_cycles: u64,
    backups: u64,
    restores: u64,
    shutdowns: u64,
    safe_zone_entries: u64,
    nvm_word_writes: u64,
    checkpoint_word_writes: u64,
    nvm_word_reads: u64,
    last_cycle_end_ms: Option<f64>,
}

impl<'a> Machine<'a> {
    fn new(
        cfg: &'a EnergyConfig,
        plan: &'a WorkloadPlan,
        trace: &'a HarvestTrace,
        seed: u64,
    ) -> Machine<'a> {
        Machine {
            cfg,
            plan,
            trace,
            th: cfg.derive_thresholds(plan),
            rng: ChaCha8Rng::seed_from_u64(seed),
            energy: Kahan::default(),
            off: false,
            armed: false,
            flag: FLAG_IDLE,
            progress_mj: 0.0,
            op: None,
            commit: Commit::cycle_start(),
            deepest_mark: None,
            // Fires at the end of tick 0 so work starts immediately.
            timer_count: 0,
            inflow_sum_mw: 0.0,
            prev_performed: FsmState::Sp,
            harvested: Kahan::default(),
            clipped: Kahan::default(),
            leaked: Kahan::default(),
            compute: Kahan::default(),
            nvm_write: Kahan::default(),
            nvm_read: Kahan::default(),
            completed_cycles: 0,
            backups: 0,
            restores: 0,
            shutdowns: 0,
            safe_zone_entries: 0,
            nvm_word_writes: 0,
            checkpoint_word_writes: 0,
            nvm_word_reads: 0,
            last_cycle_end_ms: None,
        }
    }

    fn draw_u(&mut self) -> f64 {
        let a = self.cfg.uncertainty;
        if a == 0.0 {
            0.0
        } else {
            self.rng.gen_range(-a..=a)
        }
    }

    /// Nominal start of the flagged operation on the cycle axis.
    fn op_span(&self, flag: u8) -> (f64, f64) {
        let se = self.cfg.se_cost_mj;
        let cp = self.cfg.cp_cost_mj;
        match flag {
            FLAG_SENSE => (0.0, se),
            FLAG_COMPUTE => (se, se + cp),
            FLAG_TRANSMIT => (se + cp, se + cp + self.cfg.tr_cost_mj),
            _ => (0.0, 0.0),
        }
    }

    /// Advance nominal progress, paying write-through for every mark
    /// crossed on the way.  Crossing commits the mark as the restore
    /// target (the in-flight perturbation is volatile and not captured).
    fn advance(&mut self, delta_nominal_mj: f64) {
        let from = self.progress_mj;
        let to = from + delta_nominal_mj;
        let start = self.deepest_mark.map(|i| i + 1).unwrap_or(0);
        for i in start..self.plan.stage_marks.len() {
            let m = self.plan.stage_marks[i];
            if m.at_mj > from && m.at_mj <= to {
                let cost = m.words as f64 * self.cfg.nvm.write_energy_mj_per_word;
                let paid = cost.min(self.energy.value().max(0.0));
                self.energy.add(-paid);
                self.nvm_write.add(paid);
                self.checkpoint_word_writes += m.words;
                self.deepest_mark = Some(i);
                self.commit = Commit {
                    progress_mj: m.at_mj,
                    flag: self.flag,
                    op_u: None,
                    words: m.words + 1,
                    deepest_mark: Some(i),
                };
            } else if m.at_mj > to {
                break;
            }
        }
        self.progress_mj = to;
    }

    /// Finish the flagged operation: advance the flag, and close the
    /// cycle when the transmit step retires.
    fn complete_op(&mut self, now_ms: f64) {
        self.op = None;
        self.flag = match self.flag {
            FLAG_SENSE => FLAG_COMPUTE,
            FLAG_COMPUTE => FLAG_TRANSMIT,
            FLAG_TRANSMIT => {
                self.completed_cycles += 1;
                self.last_cycle_end_ms = Some(now_ms);
                self.progress_mj = 0.0;
                self.deepest_mark = None;
                self.commit = Commit::cycle_start();
                FLAG_IDLE
            }
            f => f,
        };
    }

    fn restore_cost_mj(&self) -> f64 {
        self.commit.words as f64 * self.cfg.nvm.read_energy_mj_per_word
    }

    /// One tick.  Returns the performed state.
    fn tick(&mut self, tick_index: u64) -> FsmState {
        let cfg = self.cfg;
        let t_ms = tick_index as f64 * cfg.tick_ms;

        // Harvest, shedding inflow past the capacitor limit.
        let inflow_mw = self.trace.power_at(t_ms);
        self.inflow_sum_mw += inflow_mw;
        let inflow_mj = inflow_mw * cfg.tick_ms;
        let room = (cfg.e_max_mj - self.energy.value()).max(0.0);
        let absorbed = inflow_mj.min(room);
        self.energy.add(absorbed);
        self.harvested.add(absorbed);
        self.clipped.add(inflow_mj - absorbed);

        // Leakage, clamped at an empty capacitor.
        let leak = (cfg.leakage_mw * cfg.tick_ms).min(self.energy.value().max(0.0));
        self.energy.add(-leak);
        self.leaked.add(leak);

        let performed = if self.off {
            self.off_tick(t_ms)
        } else if self.energy.value() < self.th.th_bk && self.armed {
            self.backup_tick()
        } else if self.energy.value() < self.th.th_off {
            self.off = true;
            self.shutdowns += 1;
            // Volatile state is gone; the commit record is the survivor.
            self.op = None;
            FsmState::Off
        } else {
            self.execute_tick(t_ms)
        };

        // Cycle timer, suppressed while dark and on the wake tick.
        if !self.off && !(performed == FsmState::Sp && self.prev_performed == FsmState::Off) {
            self.timer_count -= 1;
            if self.flag == FLAG_IDLE && self.timer_count <= 0 {
                self.flag = FLAG_SENSE;
                self.timer_count = self.timer_interval_ticks(tick_index + 1);
            }
        }

        // Re-arm the backup trigger once the supply recovers.
        if !self.off && self.energy.value() >= self.th.th_bk {
            self.armed = true;
        }

        self.prev_performed = performed;
        performed
    }

    fn off_tick(&mut self, _t_ms: f64) -> FsmState {
        let cost = self.restore_cost_mj();
        if self.energy.value() > self.th.th_bk + cost {
            self.energy.add(-cost);
            self.nvm_read.add(cost);
            self.nvm_word_reads += self.commit.words;
            self.restores += 1;
            self.off = false;
            self.flag = self.commit.flag;
            self.progress_mj = self.commit.progress_mj;
            self.deepest_mark = self.commit.deepest_mark;
            self.op = self.commit.op_u.map(|u| {
                let (_, end) = self.op_span(self.commit.flag);
                OpRun {
                    u,
                    remaining_mj: (end - self.commit.progress_mj) * (1.0 + u),
                }
            });
            FsmState::Sp
        } else {
            FsmState::Off
        }
    }

    fn backup_tick(&mut self) -> FsmState {
        let words = self.plan.backup_volume(self.flag, self.deepest_mark);
        let cost =
            (words as f64 * self.cfg.nvm.write_energy_mj_per_word).min(self.energy.value().max(0.0));
        self.energy.add(-cost);
        self.nvm_write.add(cost);
        self.nvm_word_writes += words;
        self.backups += 1;
        self.armed = false;
        self.commit = Commit {
            progress_mj: self.progress_mj,
            flag: self.flag,
            op_u: self.op.map(|o| o.u),
            words,
            deepest_mark: self.deepest_mark,
        };
        FsmState::Bk
    }

    fn execute_tick(&mut self, t_ms: f64) -> FsmState {
        match self.flag {
            FLAG_SENSE => self.sense_tick(t_ms),
            FLAG_COMPUTE => self.slice_tick(t_ms, FsmState::Cp),
            FLAG_TRANSMIT => self.slice_tick(t_ms, FsmState::Tr),
            _ => FsmState::Sp,
        }
    }

    /// Sensing runs to completion within one tick.
    fn sense_tick(&mut self, t_ms: f64) -> FsmState {
        if self.energy.value() <= self.th.th_se {
            return FsmState::Sp;
        }
        let (start, end) = self.op_span(FLAG_SENSE);
        let u = self.draw_u();
        let remaining_nominal = end - self.progress_mj.max(start);
        let cost = remaining_nominal * (1.0 + u);
        self.energy.add(-cost);
        self.compute.add(cost);
        self.advance(remaining_nominal);
        self.complete_op(t_ms);
        FsmState::Se
    }

    /// Compute and transmit are sliced at their nominal power.  A slice
    /// runs only above the suspend threshold and only if it cannot drag
    /// the supply below the brown-out floor; otherwise the operation
    /// suspends in place, keeping volatile progress.
    fn slice_tick(&mut self, t_ms: f64, label: FsmState) -> FsmState {
        let (span_start, span_end) = self.op_span(self.flag);
        let in_flight = self.op.is_some() || self.progress_mj > span_start;
        // With the safe zone off, an in-flight op keeps slicing down into
        // the backup band; the brown-out affordability check below is then
        // the only thing that pauses it.
        let gate = if in_flight {
            if self.cfg.safe_zone {
                self.th.th_safe
            } else {
                self.th.th_bk
            }
        } else {
            self.th.dispatch(self.flag)
        };
        if self.energy.value() <= gate {
            if self.cfg.safe_zone
                && in_flight
                && matches!(self.prev_performed, FsmState::Cp | FsmState::Tr)
                && self.energy.value() >= self.th.th_bk
                && self.energy.value() < self.th.th_safe
            {
                self.safe_zone_entries += 1;
            }
            return FsmState::Sp;
        }
        if self.op.is_none() {
            // Fresh dispatch, or resumption of rolled-back partial work;
            // either way this instance gets its own perturbation.
            let u = self.draw_u();
            self.op = Some(OpRun {
                u,
                remaining_mj: (span_end - self.progress_mj.max(span_start)) * (1.0 + u),
            });
        }
        let op = self.op.unwrap();
        let (nominal_cost, duration) = match label {
            FsmState::Cp => (self.cfg.cp_cost_mj, self.cfg.cp_duration_ms),
            _ => (self.cfg.tr_cost_mj, self.cfg.tr_duration_ms),
        };
        let rate = nominal_cost / duration * self.cfg.tick_ms;
        let slice = rate.min(op.remaining_mj);
        // Affordability is judged at nominal draw even for a short final
        // slice: the device still peaks at op power for part of the tick.
        if self.energy.value() - rate < self.th.th_off {
            // A full slice would brown the device out mid-operation.
            if self.cfg.safe_zone
                && in_flight
                && matches!(self.prev_performed, FsmState::Cp | FsmState::Tr)
                && self.energy.value() >= self.th.th_bk
                && self.energy.value() < self.th.th_safe
            {
                self.safe_zone_entries += 1;
            }
            return FsmState::Sp;
        }
        self.energy.add(-slice);
        self.compute.add(slice);
        self.advance(slice / (1.0 + op.u));
        let rem = op.remaining_mj - slice;
        if rem <= 1e-12 {
            // Snap accumulated rounding so the next span starts clean.
            self.progress_mj = span_end;
            self.complete_op(t_ms);
        } else {
            self.op = Some(OpRun {
                u: op.u,
                remaining_mj: rem,
            });
        }
        label
    }

    fn timer_interval_ticks(&self, ticks_so_far: u64) -> i64 {
        let base = (self.cfg.timer_base_ms / self.cfg.tick_ms).max(1.0);
        let avg = self.inflow_sum_mw / ticks_so_far.max(1) as f64;
        let ratio = if avg > 0.0 {
            (self.cfg.timer_target_mw / avg).clamp(1.0, 10.0)
        } else {
            10.0
        };
        (base * ratio).round() as i64
    }
}

/// Runs the controller over a trace.  Deterministic in `seed`.
pub fn run(
    plan: &WorkloadPlan,
    trace: &HarvestTrace,
    cfg: &EnergyConfig,
    seed: u64,
    limit: RunLimit,
    options: SimOptions,
) -> Result<SimReport, SimError> {
    cfg.validate()?;
    plan.validate(cfg.cycle_energy_mj())?;

    let mut m = Machine::new(cfg, plan, trace, seed);
    let mut states = options.record_states.then(Vec::new);
    let mut ticks = 0u64;
    while ticks < options.max_ticks {
        match limit {
            RunLimit::Duration(ms) => {
                if ticks as f64 * cfg.tick_ms >= ms {
                    break;
                }
            }
            RunLimit::Cycles(n) => {
                if m.completed_cycles >= n {
                    break;
                }
            }
        }
        let s = m.tick(ticks);
        if let Some(v) = states.as_mut() {
            v.push(s);
        }
        ticks += 1;
    }

    let duration_ms = ticks as f64 * cfg.tick_ms;
    Ok(SimReport {
        workload: plan.name.clone(),
        trace: trace.name.clone(),
        seed,
        ticks,
        duration_ms,
        completed_cycles: m.completed_cycles,
        backups: m.backups,
        restores: m.restores,
        shutdowns: m.shutdowns,
        safe_zone_entries: m.safe_zone_entries,
        nvm_word_writes: m.nvm_word_writes,
        checkpoint_word_writes: m.checkpoint_word_writes,
        nvm_word_reads: m.nvm_word_reads,
        energy: EnergyLedger {
            harvested_mj: m.harvested.value(),
            clipped_mj: m.clipped.value(),
            leaked_mj: m.leaked.value(),
            compute_mj: m.compute.value(),
            nvm_write_mj: m.nvm_write.value(),
            nvm_read_mj: m.nvm_read.value(),
            stored_mj: m.energy.value(),
        },
        makespan_ms: m.last_cycle_end_ms.unwrap_or(duration_ms),
        thresholds: m.th,
        states,
    })
}
