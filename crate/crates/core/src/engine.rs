//! Edge-accurate simulation of the TMR shift register.
//!
//! Each stage holds three flip-flops feeding a majority voter; the voter of
//! stage `s - 1` (or the input pin for stage 0) drives all three flip-flops of
//! stage `s`. FF1 samples its input at the rising edge `t_k`, FF2 at
//! `t_k - delta` and FF3 at `t_k - 2 delta`, so a glitch on the driving net
//! shorter than `delta` reaches at most one replica.
//!
//! Time ordering at a single instant `t`:
//! 1. asynchronous events at `t` (upset onsets, voter glitch starts, stuck
//!    onsets) take effect and are visible to samples taken at `t`;
//! 2. samples taken at `t` read the signal;
//! 3. if `t` is a clock edge, all flip-flops capture. Captured values become
//!    visible strictly after `t`, so every stage shifts from pre-edge values.
//!
//! Fault semantics:
//! * `IllumUpset` on a flip-flop inverts its stored state once at `t0` and
//!   inverts every value it captures at edges inside `[t0, t0 + d)`.
//! * `VoterSet` inverts the voter output over `[t0, t0 + d)`.
//! * `StuckState` forces the flip-flop to a value from `from_ns` onwards.
//!
//! The output trace bit for edge `k` is the majority of the last stage's
//! flip-flops right after the edge.
//!
//! State is bit-packed (64 stages per word); only stages adjacent to a fault
//! are evaluated individually, the rest shift as whole words.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::layout::{CellId, CellKind, RegisterLayout};
use crate::time::{to_fs, Femtos};
use crate::{Error, Result};

/// 1 iff at least two inputs are 1.
pub fn majority(a: bool, b: bool, c: bool) -> bool {
    (a & b) | (a & c) | (b & c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingParams {
    pub clock_period_ns: f64,
    /// Time of the first rising edge, in `[0, clock_period_ns)`.
    pub phase_ns: f64,
    /// Sampling skew unit: FF2 samples `delta` early, FF3 `2 delta` early.
    pub delta_ns: f64,
}

impl TimingParams {
    pub fn new(clock_period_ns: f64, phase_ns: f64, delta_ns: f64) -> Result<Self> {
        let t = TimingParams { clock_period_ns, phase_ns, delta_ns };
        t.validate()?;
        Ok(t)
    }

    pub fn from_mhz(freq_mhz: f64, phase_ns: f64, delta_ns: f64) -> Result<Self> {
        if !(freq_mhz.is_finite() && freq_mhz > 0.0) {
            return Err(Error::invalid("freq_mhz", "must be positive"));
        }
        Self::new(1.0e3 / freq_mhz, phase_ns, delta_ns)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clock_period_ns.is_finite() && self.clock_period_ns > 0.0) {
            return Err(Error::invalid("timing.clock_period_ns", "must be positive"));
        }
        if !(self.phase_ns >= 0.0 && self.phase_ns < self.clock_period_ns) {
            return Err(Error::invalid("timing.phase_ns", "must lie in [0, clock_period_ns)"));
        }
        if !(self.delta_ns.is_finite() && self.delta_ns > 0.0) {
            return Err(Error::invalid("timing.delta_ns", "must be positive"));
        }
        if 2.0 * self.delta_ns >= self.clock_period_ns {
            return Err(Error::invalid("timing.delta_ns", "2 * delta_ns must be below the clock period"));
        }
        Ok(())
    }

    pub fn edge_time_ns(&self, k: usize) -> f64 {
        self.phase_ns + k as f64 * self.clock_period_ns
    }

    pub(crate) fn edge_fs(&self, k: usize) -> Femtos {
        to_fs(self.phase_ns) + k as Femtos * to_fs(self.clock_period_ns)
    }
}

/// Whether a stuck flip-flop recovers after a power cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StuckUntil {
    /// Cleared by a power cycle (stuck-at).
    Reset,
    /// Survives power cycles (permanent).
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FaultVariant {
    IllumUpset { t0_ns: f64, duration_ns: f64 },
    VoterSet { t0_ns: f64, duration_ns: f64 },
    StuckState { value: bool, from_ns: f64, until: StuckUntil },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub cell: CellId,
    #[serde(flatten)]
    pub variant: FaultVariant,
}

impl FaultEvent {
    pub fn illum_upset(cell: CellId, t0_ns: f64, duration_ns: f64) -> Self {
        FaultEvent { cell, variant: FaultVariant::IllumUpset { t0_ns, duration_ns } }
    }

    pub fn voter_set(cell: CellId, t0_ns: f64, duration_ns: f64) -> Self {
        FaultEvent { cell, variant: FaultVariant::VoterSet { t0_ns, duration_ns } }
    }

    pub fn stuck(cell: CellId, value: bool, from_ns: f64, until: StuckUntil) -> Self {
        FaultEvent { cell, variant: FaultVariant::StuckState { value, from_ns, until } }
    }

    pub fn is_persistent(&self) -> bool {
        matches!(self.variant, FaultVariant::StuckState { .. })
    }

    /// Checks the event against the layout; returns the stage and kind it hits.
    pub fn validate(&self, layout: &RegisterLayout) -> Result<(usize, CellKind)> {
        let cell = layout.cell(self.cell).ok_or(Error::UnknownCell(self.cell))?;
        let (wants_ff, expected) = match self.variant {
            FaultVariant::IllumUpset { t0_ns, duration_ns } | FaultVariant::VoterSet { t0_ns, duration_ns } => {
                if !(duration_ns.is_finite() && duration_ns > 0.0) {
                    return Err(Error::invalid("fault.duration_ns", "must be positive"));
                }
                if !t0_ns.is_finite() {
                    return Err(Error::invalid("fault.t0_ns", "must be finite"));
                }
                match self.variant {
                    FaultVariant::VoterSet { .. } => (false, "VOTER"),
                    _ => (true, "flip-flop"),
                }
            }
            FaultVariant::StuckState { from_ns, .. } => {
                if !from_ns.is_finite() {
                    return Err(Error::invalid("fault.from_ns", "must be finite"));
                }
                (true, "flip-flop")
            }
        };
        if cell.kind.is_ff() != wants_ff {
            return Err(Error::KindMismatch { cell: self.cell, kind: cell.kind.name(), expected });
        }
        Ok((cell.stage, cell.kind))
    }
}

/// Value held by the register before the first edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialFill {
    /// Pre-filled with the first input bit (constant-input experiments).
    #[default]
    FirstInput,
    Zero,
}

/// Cyclic input bit pattern. Bit `j` is launched onto the input pin right
/// after edge `j` and captured by stage 0 at edge `j + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputStream {
    pattern: Vec<bool>,
    #[serde(default)]
    fill: InitialFill,
}

impl InputStream {
    pub fn constant(bit: bool) -> Self {
        InputStream { pattern: vec![bit], fill: InitialFill::FirstInput }
    }

    pub fn pattern(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::invalid("input_stream", "pattern must not be empty"));
        }
        Ok(InputStream { pattern: bits, fill: InitialFill::FirstInput })
    }

    pub fn with_fill(mut self, fill: InitialFill) -> Self {
        self.fill = fill;
        self
    }

    pub fn fill_value(&self) -> bool {
        match self.fill {
            InitialFill::FirstInput => self.pattern.first().copied().unwrap_or(false),
            InitialFill::Zero => false,
        }
    }

    /// Input bit `j`; negative indices are the initial fill.
    pub fn bit(&self, j: i64) -> bool {
        if j < 0 || self.pattern.is_empty() {
            self.fill_value()
        } else {
            self.pattern[j as usize % self.pattern.len()]
        }
    }

    pub fn as_constant(&self) -> Option<bool> {
        let first = *self.pattern.first()?;
        (self.pattern.iter().all(|&b| b == first) && self.fill_value() == first).then_some(first)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputTrace {
    pub bits: Vec<bool>,
    pub edge_times_ns: Vec<f64>,
    pub timing: TimingParams,
}

impl OutputTrace {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
struct FfPlan {
    /// `[t0, end)` windows.
    upsets: Vec<(Femtos, Femtos)>,
    /// `(from, value)`, sorted by `from`.
    stuck: Vec<(Femtos, bool)>,
}

impl FfPlan {
    fn is_empty(&self) -> bool {
        self.upsets.is_empty() && self.stuck.is_empty()
    }

    fn stuck_at(&self, t: Femtos) -> Option<bool> {
        self.stuck.iter().rev().find(|(from, _)| *from <= t).map(|&(_, v)| v)
    }

    fn upset_covers(&self, t: Femtos) -> bool {
        self.upsets.iter().any(|&(a, b)| a <= t && t < b)
    }

    fn onsets_in(&self, after: Femtos, upto: Femtos) -> usize {
        self.upsets.iter().filter(|&&(a, _)| after < a && a <= upto).count()
    }
}

#[derive(Debug, Clone, Default)]
struct StagePlan {
    ffs: [FfPlan; 3],
    voter_sets: Vec<(Femtos, Femtos)>,
}

impl StagePlan {
    fn is_empty(&self) -> bool {
        self.voter_sets.is_empty() && self.ffs.iter().all(FfPlan::is_empty)
    }
}

#[inline]
fn get_bit(words: &[u64], s: usize) -> bool {
    (words[s >> 6] >> (s & 63)) & 1 == 1
}

#[inline]
fn put_bit(words: &mut [u64], s: usize, v: bool) {
    let m = 1u64 << (s & 63);
    if v {
        words[s >> 6] |= m;
    } else {
        words[s >> 6] &= !m;
    }
}

/// Stepwise simulator; [`run`] drives it to completion.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    input: &'a InputStream,
    timing: TimingParams,
    stages: usize,
    delta: Femtos,
    q: [Vec<u64>; 3],
    next: [Vec<u64>; 3],
    plans: Vec<StagePlan>,
    /// Stages that must be evaluated bit by bit: faulted themselves or
    /// driven by a faulted stage.
    touched: Vec<usize>,
    edge: usize,
}

impl<'a> Simulator<'a> {
    pub fn new(
        layout: &RegisterLayout,
        input: &'a InputStream,
        timing: TimingParams,
        faults: &[FaultEvent],
    ) -> Result<Self> {
        timing.validate()?;
        let stages = layout.stages();
        let mut plans = vec![StagePlan::default(); stages];
        for f in faults {
            let (stage, kind) = f.validate(layout)?;
            let plan = &mut plans[stage];
            match f.variant {
                FaultVariant::IllumUpset { t0_ns, duration_ns } => {
                    let t0 = to_fs(t0_ns);
                    plan.ffs[kind.index()].upsets.push((t0, t0 + to_fs(duration_ns)));
                }
                FaultVariant::VoterSet { t0_ns, duration_ns } => {
                    let t0 = to_fs(t0_ns);
                    plan.voter_sets.push((t0, t0 + to_fs(duration_ns)));
                }
                FaultVariant::StuckState { value, from_ns, .. } => {
                    let ff = &mut plan.ffs[kind.index()];
                    ff.stuck.push((to_fs(from_ns), value));
                    ff.stuck.sort_by_key(|&(from, _)| from);
                }
            }
        }
        let touched = (0..stages)
            .filter(|&s| !plans[s].is_empty() || (s > 0 && !plans[s - 1].is_empty()))
            .collect();

        let words = stages.div_ceil(64);
        let fill = if input.fill_value() { u64::MAX } else { 0 };
        let mut q: [Vec<u64>; 3] = core::array::from_fn(|_| vec![fill; words]);
        let tail = stages % 64;
        if tail != 0 {
            for w in &mut q {
                w[words - 1] &= (1u64 << tail) - 1;
            }
        }
        Ok(Simulator {
            input,
            timing,
            stages,
            delta: to_fs(timing.delta_ns),
            next: q.clone(),
            q,
            plans,
            touched,
            edge: 0,
        })
    }

    /// Index of the edge the next [`Simulator::step`] will process.
    pub fn next_edge(&self) -> usize {
        self.edge
    }

    /// Stored value of flip-flop `ff` (0-based) of `stage` after the last
    /// processed edge.
    pub fn stored(&self, stage: usize, ff: usize) -> bool {
        get_bit(&self.q[ff], stage)
    }

    fn prev_edge_fs(&self) -> Femtos {
        if self.edge == 0 {
            Femtos::MIN
        } else {
            self.timing.edge_fs(self.edge - 1)
        }
    }

    /// State of flip-flop `ff` of `stage` at time `t` inside the current cycle.
    fn ff_value(&self, stage: usize, ff: usize, t: Femtos) -> bool {
        let plan = &self.plans[stage].ffs[ff];
        if let Some(v) = plan.stuck_at(t) {
            return v;
        }
        let flips = plan.onsets_in(self.prev_edge_fs(), t);
        get_bit(&self.q[ff], stage) ^ (flips & 1 == 1)
    }

    /// Value of the net driving `stage` at time `t` inside the current cycle.
    fn driver(&self, stage: usize, t: Femtos) -> bool {
        if stage == 0 {
            return self.input.bit(self.edge as i64 - 1);
        }
        let up = stage - 1;
        let maj = majority(self.ff_value(up, 0, t), self.ff_value(up, 1, t), self.ff_value(up, 2, t));
        let set = self.plans[up].voter_sets.iter().any(|&(a, b)| a <= t && t < b);
        maj ^ set
    }

    /// Value flip-flop `ff` (1, 2 or 3) of `stage` samples for the upcoming
    /// edge: the driving net read `(ff - 1) * delta` before the edge.
    pub fn stage_input(&self, stage: usize, ff: usize) -> Result<bool> {
        if stage >= self.stages {
            return Err(Error::StageOutOfRange { stage, stages: self.stages });
        }
        if !(1..=3).contains(&ff) {
            return Err(Error::invalid("ff", "flip-flop index must be 1, 2 or 3"));
        }
        let t = self.timing.edge_fs(self.edge) - (ff as Femtos - 1) * self.delta;
        Ok(self.driver(stage, t))
    }

    /// Processes the next rising edge and returns the register output.
    pub fn step(&mut self) -> bool {
        let t = self.timing.edge_fs(self.edge);
        let words = self.q[0].len();

        // Fault-free shift: every flip-flop of stage s takes maj(stage s - 1).
        let pin = self.input.bit(self.edge as i64 - 1) as u64;
        let mut carry = pin;
        for w in 0..words {
            let (a, b, c) = (self.q[0][w], self.q[1][w], self.q[2][w]);
            let m = (a & b) | (a & c) | (b & c);
            let shifted = (m << 1) | carry;
            carry = m >> 63;
            for ff in 0..3 {
                self.next[ff][w] = shifted;
            }
        }
        let tail = self.stages % 64;
        if tail != 0 {
            for ff in 0..3 {
                self.next[ff][words - 1] &= (1u64 << tail) - 1;
            }
        }

        for idx in 0..self.touched.len() {
            let s = self.touched[idx];
            for ff in 0..3 {
                let mut v = self.driver(s, t - ff as Femtos * self.delta);
                let plan = &self.plans[s].ffs[ff];
                if plan.upset_covers(t) {
                    v = !v;
                }
                if let Some(stuck) = plan.stuck_at(t) {
                    v = stuck;
                }
                put_bit(&mut self.next[ff], s, v);
            }
        }

        core::mem::swap(&mut self.q, &mut self.next);
        self.edge += 1;
        let last = self.stages - 1;
        majority(get_bit(&self.q[0], last), get_bit(&self.q[1], last), get_bit(&self.q[2], last))
    }
}

/// Simulates `num_edges` rising edges with the given faults.
pub fn run(
    layout: &RegisterLayout,
    input: &InputStream,
    timing: TimingParams,
    faults: &[FaultEvent],
    num_edges: usize,
) -> Result<OutputTrace> {
    if num_edges == 0 {
        return Err(Error::invalid("num_edges", "must be at least 1"));
    }
    let mut sim = Simulator::new(layout, input, timing, faults)?;
    let bits = (0..num_edges).map(|_| sim.step()).collect();
    let edge_times_ns = (0..num_edges).map(|k| timing.edge_time_ns(k)).collect();
    Ok(OutputTrace { bits, edge_times_ns, timing })
}

/// Fault-free reference run.
pub fn golden_run(layout: &RegisterLayout, input: &InputStream, timing: TimingParams, num_edges: usize) -> Result<OutputTrace> {
    run(layout, input, timing, &[], num_edges)
}
