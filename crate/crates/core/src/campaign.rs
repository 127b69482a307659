//! Attack scenarios, shot classification, repeatability and threshold
//! calibration.
//!
//! A shot is one `(power, duration)` point of a scenario fired `R` times. Each
//! repetition draws its own clock phase from a stream keyed by the repetition
//! index, so repetition `r` sees the same phase at every grid point and the
//! fault-free reference trace can be computed once per repetition.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

use crate::engine::{self, FaultEvent, FaultVariant, InputStream, OutputTrace, StuckUntil, TimingParams};
use crate::layout::{CellId, CellKind, RegisterLayout};
use crate::optics::{self, LaserPulse, ObjectiveProfile, ThresholdModel, Thresholds};
use crate::rng;
use crate::{Error, Result};

/// Where the spot is aimed relative to the target stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    VoterOnly,
    TwoFf,
    WholeCell,
    Custom { x_um: f64, y_um: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseSampling {
    Fixed {
        phase_ns: f64,
    },
    /// Clock phase `center + U(-spread/2, spread/2)` per repetition, which
    /// models trigger jitter against the register clock. `center` defaults
    /// to half a period and `seed` to the campaign seed.
    UniformRandom {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center_ns: Option<f64>,
        #[serde(default = "default_spread")]
        spread_ns: f64,
    },
}

fn default_spread() -> f64 {
    10.0
}

impl Default for PhaseSampling {
    fn default() -> Self {
        PhaseSampling::UniformRandom { seed: None, center_ns: None, spread_ns: default_spread() }
    }
}

/// Pulse trigger time, absolute or in clock cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerTime {
    Ns(f64),
    Cycles(f64),
}

impl Default for TriggerTime {
    fn default() -> Self {
        TriggerTime::Cycles(4.35)
    }
}

impl TriggerTime {
    pub fn resolve_ns(self, clock_period_ns: f64) -> f64 {
        match self {
            TriggerTime::Ns(t) => t,
            TriggerTime::Cycles(c) => c * clock_period_ns,
        }
    }
}

/// Power grid `0, 5, ..., 100`.
pub fn default_power_grid() -> Vec<f64> {
    (0..=20).map(|i| 5.0 * i as f64).collect()
}

fn default_repetitions() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub kind: ScenarioKind,
    pub target_stage: usize,
    pub objective: String,
    #[serde(default = "default_power_grid")]
    pub powers_pct: Vec<f64>,
    pub durations_ns: Vec<f64>,
    pub freq_mhz: f64,
    pub input_bit: bool,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub phase: PhaseSampling,
    #[serde(default)]
    pub trigger: TriggerTime,
    /// Edges simulated per shot; derived from the trigger, the longest pulse
    /// and the register length when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_edges: Option<usize>,
    /// Faults added to every repetition on top of the laser-induced ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub injected: Vec<FaultEvent>,
}

fn check_grid(field: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(field, "must not be empty"));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(field, "must be finite"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(field, "must be sorted strictly ascending"));
    }
    Ok(())
}

impl ScenarioSpec {
    pub fn validate(&self, layout: &RegisterLayout) -> Result<()> {
        check_grid("powers_pct", &self.powers_pct)?;
        check_grid("durations_ns", &self.durations_ns)?;
        if self.powers_pct[0] < 0.0 || self.powers_pct[self.powers_pct.len() - 1] > 100.0 {
            return Err(Error::invalid("powers_pct", "must lie in [0, 100]"));
        }
        if self.durations_ns[0] <= 0.0 {
            return Err(Error::invalid("durations_ns", "must be positive"));
        }
        if !(self.freq_mhz.is_finite() && self.freq_mhz > 0.0) {
            return Err(Error::invalid("freq_mhz", "must be positive"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions", "must be at least 1"));
        }
        if self.target_stage >= layout.stages() {
            return Err(Error::StageOutOfRange { stage: self.target_stage, stages: layout.stages() });
        }
        if let PhaseSampling::UniformRandom { spread_ns, center_ns, .. } = self.phase {
            if !(spread_ns.is_finite() && spread_ns >= 0.0) {
                return Err(Error::invalid("phase.spread_ns", "must be non-negative"));
            }
            if center_ns.is_some_and(|c| !c.is_finite()) {
                return Err(Error::invalid("phase.center_ns", "must be finite"));
            }
        }
        if self.num_edges == Some(0) {
            return Err(Error::invalid("num_edges", "must be at least 1"));
        }
        for f in &self.injected {
            f.validate(layout)?;
        }
        Ok(())
    }

    pub fn clock_period_ns(&self) -> f64 {
        1.0e3 / self.freq_mhz
    }

    /// Copy restricted to one grid point.
    pub fn at_point(&self, power_pct: f64, duration_ns: f64) -> ScenarioSpec {
        ScenarioSpec { powers_pct: vec![power_pct], durations_ns: vec![duration_ns], ..self.clone() }
    }
}

/// Spot center for a scenario.
pub fn resolve_target(spec: &ScenarioSpec, layout: &RegisterLayout) -> Result<(f64, f64)> {
    let stage = spec.target_stage;
    match spec.kind {
        ScenarioKind::VoterOnly => Ok(layout.stage_cell(stage, CellKind::Voter)?.centroid()),
        ScenarioKind::TwoFf => {
            let a = layout.stage_cell(stage, CellKind::Ff1)?;
            let b = layout.stage_cell(stage, CellKind::Ff2)?;
            let (left, right) = if a.x <= b.x { (a, b) } else { (b, a) };
            Ok(((left.x + left.w + right.x) / 2.0, (left.y + left.h / 2.0 + right.y + right.h / 2.0) / 2.0))
        }
        ScenarioKind::WholeCell => {
            let (x0, y0, x1, y1) = layout.stage_bbox(stage)?;
            Ok(((x0 + x1) / 2.0, (y0 + y1) / 2.0))
        }
        ScenarioKind::Custom { x_um, y_um } => {
            layout.stage_bbox(stage)?;
            Ok((x_um, y_um))
        }
    }
}

/// Fault class without its payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultKind {
    NoInjection,
    Masked,
    TransientBitSet,
    TransientBitReset,
    StuckAt,
    Permanent,
    Mixed,
}

impl FaultKind {
    pub fn name(self) -> &'static str {
        match self {
            FaultKind::NoInjection => "NoInjection",
            FaultKind::Masked => "Masked",
            FaultKind::TransientBitSet => "TransientBitSet",
            FaultKind::TransientBitReset => "TransientBitReset",
            FaultKind::StuckAt => "StuckAt",
            FaultKind::Permanent => "Permanent",
            FaultKind::Mixed => "Mixed",
        }
    }

    /// Whether the output differed from the reference.
    pub fn is_fault(self) -> bool {
        !matches!(self, FaultKind::NoInjection | FaultKind::Masked)
    }
}

impl core::fmt::Display for FaultKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class")]
pub enum FaultClass {
    NoInjection,
    Masked,
    TransientBitSet { burst_len: usize },
    TransientBitReset { burst_len: usize },
    StuckAt,
    Permanent,
    Mixed,
}

impl FaultClass {
    pub fn kind(self) -> FaultKind {
        match self {
            FaultClass::NoInjection => FaultKind::NoInjection,
            FaultClass::Masked => FaultKind::Masked,
            FaultClass::TransientBitSet { .. } => FaultKind::TransientBitSet,
            FaultClass::TransientBitReset { .. } => FaultKind::TransientBitReset,
            FaultClass::StuckAt => FaultKind::StuckAt,
            FaultClass::Permanent => FaultKind::Permanent,
            FaultClass::Mixed => FaultKind::Mixed,
        }
    }

    pub fn burst_len(self) -> Option<usize> {
        match self {
            FaultClass::TransientBitSet { burst_len } | FaultClass::TransientBitReset { burst_len } => Some(burst_len),
            _ => None,
        }
    }

    pub fn is_fault(self) -> bool {
        self.kind().is_fault()
    }
}

/// Re-runs used to tell a lasting fault from a transient one.
#[derive(Debug, Clone, PartialEq)]
pub struct StuckProbe {
    /// Persistent faults only, no laser pulse.
    pub rerun: OutputTrace,
    /// Same after a power cycle: only faults that survive it remain.
    pub after_power_cycle: OutputTrace,
}

fn check_len(golden: &OutputTrace, observed: &OutputTrace) -> Result<()> {
    if golden.len() != observed.len() {
        return Err(Error::LengthMismatch { golden: golden.len(), observed: observed.len() });
    }
    Ok(())
}

/// Classifies an observed trace against the reference.
pub fn classify(
    golden: &OutputTrace,
    observed: &OutputTrace,
    induced: usize,
    probe: Option<&StuckProbe>,
) -> Result<FaultClass> {
    check_len(golden, observed)?;
    let (mut set, mut reset) = (0usize, 0usize);
    for (&g, &o) in golden.bits.iter().zip(&observed.bits) {
        match (g, o) {
            (false, true) => set += 1,
            (true, false) => reset += 1,
            _ => {}
        }
    }
    if set + reset == 0 {
        return Ok(if induced == 0 { FaultClass::NoInjection } else { FaultClass::Masked });
    }
    let last_differs = golden.bits.last() != observed.bits.last();
    if let (true, Some(p)) = (last_differs, probe) {
        check_len(golden, &p.rerun)?;
        check_len(golden, &p.after_power_cycle)?;
        if p.rerun.bits.last() != golden.bits.last() {
            let survives = p.after_power_cycle.bits.last() != golden.bits.last();
            return Ok(if survives { FaultClass::Permanent } else { FaultClass::StuckAt });
        }
    }
    Ok(match (set, reset) {
        (n, 0) => FaultClass::TransientBitSet { burst_len: n },
        (0, n) => FaultClass::TransientBitReset { burst_len: n },
        _ => FaultClass::Mixed,
    })
}

/// Edge indices at which two traces differ.
pub fn diff_edges(golden: &OutputTrace, observed: &OutputTrace) -> Vec<usize> {
    golden
        .bits
        .iter()
        .zip(&observed.bits)
        .enumerate()
        .filter(|(_, (g, o))| g != o)
        .map(|(k, _)| k)
        .collect()
}

/// Fraction of diffs equal to the most common one, and the index of that
/// diff's first occurrence. Ties go to the diff seen first.
pub fn repeatability(diffs: &[Vec<usize>]) -> (f64, usize) {
    if diffs.is_empty() {
        return (1.0, 0);
    }
    let mut best = (0usize, 0usize);
    for (i, d) in diffs.iter().enumerate() {
        if diffs[..i].contains(d) {
            continue;
        }
        let n = diffs[i..].iter().filter(|e| *e == d).count();
        if n > best.0 {
            best = (n, i);
        }
    }
    (best.0 as f64 / diffs.len() as f64, best.1)
}

/// Everything a shot needs besides the scenario itself.
#[derive(Debug, Clone, Copy)]
pub struct CampaignContext<'a> {
    pub layout: &'a RegisterLayout,
    pub objectives: &'a [ObjectiveProfile],
    pub thresholds: ThresholdModel,
    pub delta_ns: f64,
    pub seed: u64,
}

impl CampaignContext<'_> {
    pub fn with_thresholds(&self, thresholds: ThresholdModel) -> Self {
        CampaignContext { thresholds, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotResult {
    pub scenario: String,
    pub stage: usize,
    pub freq_mhz: f64,
    pub input_bit: bool,
    pub objective: String,
    pub power_pct: f64,
    pub duration_ns: f64,
    /// Clock phase of the repetition whose diff is reported.
    pub phase_ns: f64,
    pub n_faults: usize,
    pub class: FaultClass,
    pub repeatability: f64,
    pub repetitions: usize,
    pub faulting_reps: usize,
    /// Classes seen over all repetitions.
    pub kinds: Vec<FaultKind>,
}

impl ShotResult {
    pub fn faulted(&self) -> bool {
        self.faulting_reps > 0
    }
}

struct Repetition {
    phase_ns: f64,
    timing: TimingParams,
    golden: OutputTrace,
}

/// A scenario prepared for firing: target resolved, phases drawn and
/// reference traces computed.
pub struct ScenarioRunner<'a> {
    ctx: CampaignContext<'a>,
    spec: ScenarioSpec,
    input: InputStream,
    center: (f64, f64),
    objective: ObjectiveProfile,
    trigger_ns: f64,
    num_edges: usize,
    reps: Vec<Repetition>,
}

impl<'a> ScenarioRunner<'a> {
    pub fn new(ctx: CampaignContext<'a>, spec: &ScenarioSpec) -> Result<Self> {
        spec.validate(ctx.layout)?;
        ctx.thresholds.validate()?;
        let objective = optics::find_objective(ctx.objectives, &spec.objective)?.clone();
        objective.validate()?;
        let center = resolve_target(spec, ctx.layout)?;
        let period = spec.clock_period_ns();
        let trigger_ns = spec.trigger.resolve_ns(period);
        if !(trigger_ns.is_finite() && trigger_ns >= 0.0) {
            return Err(Error::invalid("trigger", "must resolve to a non-negative time"));
        }
        let longest = spec.durations_ns[spec.durations_ns.len() - 1];
        let num_edges = match spec.num_edges {
            Some(n) => n,
            None => libm::ceil((trigger_ns + longest) / period) as usize + ctx.layout.stages() + 3,
        };
        let input = InputStream::constant(spec.input_bit);

        let draws = match spec.phase {
            PhaseSampling::Fixed { .. } => 1,
            PhaseSampling::UniformRandom { .. } => spec.repetitions,
        };
        let mut reps = Vec::with_capacity(draws);
        for r in 0..draws {
            let phase_ns = draw_phase(&spec.phase, ctx.seed, r, period);
            let timing = TimingParams::from_mhz(spec.freq_mhz, phase_ns, ctx.delta_ns)?;
            let golden = engine::golden_run(ctx.layout, &input, timing, num_edges)?;
            reps.push(Repetition { phase_ns, timing, golden });
        }
        Ok(ScenarioRunner { ctx, spec: spec.clone(), input, center, objective, trigger_ns, num_edges, reps })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn trigger_ns(&self) -> f64 {
        self.trigger_ns
    }

    /// Clock phase of each simulated repetition.
    pub fn phases(&self) -> Vec<f64> {
        self.reps.iter().map(|r| r.phase_ns).collect()
    }

    /// Grid points in canonical order: durations outer, powers inner.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        self.spec
            .durations_ns
            .iter()
            .flat_map(|&d| self.spec.powers_pct.iter().map(move |&p| (p, d)))
            .collect()
    }

    pub fn pulse(&self, power_pct: f64, duration_ns: f64) -> LaserPulse {
        LaserPulse {
            center: self.center,
            objective: self.objective.clone(),
            power_pct,
            duration_ns,
            trigger_ns: self.trigger_ns,
        }
    }

    pub fn induced(&self, power_pct: f64, duration_ns: f64) -> Result<Vec<FaultEvent>> {
        let pulse = self.pulse(power_pct, duration_ns);
        pulse.validate()?;
        Ok(optics::induce_faults(&pulse, self.ctx.layout, &self.ctx.thresholds))
    }

    /// Fires one grid point `R` times.
    pub fn shot(&self, power_pct: f64, duration_ns: f64) -> Result<ShotResult> {
        let induced = self.induced(power_pct, duration_ns)?;
        self.shot_with(power_pct, duration_ns, &induced)
    }

    fn shot_with(&self, power_pct: f64, duration_ns: f64, induced: &[FaultEvent]) -> Result<ShotResult> {
        let mut faults = induced.to_vec();
        faults.extend_from_slice(&self.spec.injected);
        let persistent: Vec<FaultEvent> = faults.iter().filter(|f| f.is_persistent()).copied().collect();

        let mut classes = Vec::with_capacity(self.reps.len());
        let mut diffs = Vec::with_capacity(self.reps.len());
        for rep in &self.reps {
            if faults.is_empty() {
                classes.push(FaultClass::NoInjection);
                diffs.push(Vec::new());
                continue;
            }
            let observed = engine::run(self.ctx.layout, &self.input, rep.timing, &faults, self.num_edges)?;
            let probe = if persistent.is_empty() {
                None
            } else {
                let rerun = engine::run(self.ctx.layout, &self.input, rep.timing, &persistent, self.num_edges)?;
                let lasting: Vec<FaultEvent> = persistent
                    .iter()
                    .filter(|f| matches!(f.variant, FaultVariant::StuckState { until: StuckUntil::Never, .. }))
                    .copied()
                    .collect();
                let after_power_cycle = engine::run(self.ctx.layout, &self.input, rep.timing, &lasting, self.num_edges)?;
                Some(StuckProbe { rerun, after_power_cycle })
            };
            classes.push(classify(&rep.golden, &observed, faults.len(), probe.as_ref())?);
            diffs.push(diff_edges(&rep.golden, &observed));
        }

        let (mut repeat, modal) = repeatability(&diffs);
        let mut faulting = classes.iter().filter(|c| c.is_fault()).count();
        if self.reps.len() < self.spec.repetitions {
            // Fixed phase: every repetition is identical to the one simulated.
            repeat = 1.0;
            faulting *= self.spec.repetitions;
        }
        let kinds: BTreeSet<FaultKind> = classes.iter().map(|c| c.kind()).collect();
        Ok(ShotResult {
            scenario: self.spec.name.clone(),
            stage: self.spec.target_stage,
            freq_mhz: self.spec.freq_mhz,
            input_bit: self.spec.input_bit,
            objective: self.spec.objective.clone(),
            power_pct,
            duration_ns,
            phase_ns: self.reps[modal].phase_ns,
            n_faults: faults.len(),
            class: classes[modal],
            repeatability: repeat,
            repetitions: self.spec.repetitions,
            faulting_reps: faulting,
            kinds: kinds.into_iter().collect(),
        })
    }

    /// Runs the full grid serially, in [`ScenarioRunner::grid`] order.
    pub fn run_all(&self) -> Result<Vec<ShotResult>> {
        self.grid().into_iter().map(|(p, d)| self.shot(p, d)).collect()
    }

    /// Number of repetitions that show any output difference for a given
    /// set of faults.
    fn faulting_reps(&self, faults: &[FaultEvent]) -> Result<usize> {
        let mut n = 0;
        for rep in &self.reps {
            let observed = engine::run(self.ctx.layout, &self.input, rep.timing, faults, self.num_edges)?;
            n += (observed.bits != rep.golden.bits) as usize;
        }
        Ok(n)
    }
}

fn draw_phase(sampling: &PhaseSampling, campaign_seed: u64, rep: usize, period: f64) -> f64 {
    let phase = match *sampling {
        PhaseSampling::Fixed { phase_ns } => phase_ns,
        PhaseSampling::UniformRandom { seed, center_ns, spread_ns } => {
            let mut stream = rng::stream(seed.unwrap_or(campaign_seed), rep as u64);
            let u = rng::unit_f64(&mut stream);
            center_ns.unwrap_or(period / 2.0) + (u - 0.5) * spread_ns
        }
    };
    let r = libm::fmod(phase, period);
    let p = if r < 0.0 { r + period } else { r };
    // Adding the period to a tiny negative remainder can round to `period`.
    if p >= period {
        0.0
    } else {
        p
    }
}

/// Fires a single grid point of a scenario.
pub fn run_shot(ctx: CampaignContext<'_>, spec: &ScenarioSpec, power_pct: f64, duration_ns: f64) -> Result<ShotResult> {
    ScenarioRunner::new(ctx, &spec.at_point(power_pct, duration_ns))?.shot(power_pct, duration_ns)
}

/// Per-duration aggregate inside one summary cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationRow {
    pub duration_ns: f64,
    pub min_power_pct: Option<f64>,
    pub max_power_pct: Option<f64>,
    pub fault_types: Vec<FaultKind>,
    pub shots: usize,
    pub faulting_shots: usize,
    /// Lowest repeatability among faulting shots.
    pub min_repeatability: Option<f64>,
}

impl DurationRow {
    fn empty(duration_ns: f64) -> Self {
        DurationRow {
            duration_ns,
            min_power_pct: None,
            max_power_pct: None,
            fault_types: Vec::new(),
            shots: 0,
            faulting_shots: 0,
            min_repeatability: None,
        }
    }

    fn merge(&mut self, other: &DurationRow) {
        self.min_power_pct = min_opt(self.min_power_pct, other.min_power_pct);
        self.max_power_pct = max_opt(self.max_power_pct, other.max_power_pct);
        self.min_repeatability = min_opt(self.min_repeatability, other.min_repeatability);
        let mut types: BTreeSet<FaultKind> = self.fault_types.iter().copied().collect();
        types.extend(other.fault_types.iter().copied());
        self.fault_types = types.into_iter().collect();
        self.shots += other.shots;
        self.faulting_shots += other.faulting_shots;
    }
}

fn min_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn max_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// All shots sharing frequency, input value and objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub freq_mhz: f64,
    pub input_bit: bool,
    pub objective: String,
    /// Sorted by duration.
    pub rows: Vec<DurationRow>,
}

impl SummaryCell {
    /// Lowest faulting power over all durations.
    pub fn min_power_pct(&self) -> Option<f64> {
        self.rows.iter().fold(None, |m, r| min_opt(m, r.min_power_pct))
    }

    pub fn fault_types(&self) -> Vec<FaultKind> {
        let set: BTreeSet<FaultKind> = self.rows.iter().flat_map(|r| r.fault_types.iter().copied()).collect();
        set.into_iter().collect()
    }

    pub fn row(&self, duration_ns: f64) -> Option<&DurationRow> {
        self.rows.iter().find(|r| r.duration_ns == duration_ns)
    }
}

/// Order-independent aggregate of shot results.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    /// Sorted by frequency, input value, objective name.
    pub cells: Vec<SummaryCell>,
}

impl CampaignSummary {
    pub fn from_shots<'s>(shots: impl IntoIterator<Item = &'s ShotResult>) -> Self {
        let mut s = CampaignSummary::default();
        for shot in shots {
            s.absorb(shot);
        }
        s
    }

    pub fn absorb(&mut self, shot: &ShotResult) {
        let faulted = shot.faulted();
        let row = DurationRow {
            duration_ns: shot.duration_ns,
            min_power_pct: faulted.then_some(shot.power_pct),
            max_power_pct: faulted.then_some(shot.power_pct),
            fault_types: shot.kinds.iter().copied().filter(|k| k.is_fault()).collect(),
            shots: 1,
            faulting_shots: faulted as usize,
            min_repeatability: faulted.then_some(shot.repeatability),
        };
        let cell = SummaryCell {
            freq_mhz: shot.freq_mhz,
            input_bit: shot.input_bit,
            objective: shot.objective.clone(),
            rows: vec![row],
        };
        self.merge_cell(&cell);
    }

    pub fn merge(&mut self, other: &CampaignSummary) {
        for cell in &other.cells {
            self.merge_cell(cell);
        }
    }

    fn merge_cell(&mut self, cell: &SummaryCell) {
        let key = |c: &SummaryCell| (c.freq_mhz, c.input_bit, c.objective.clone());
        let ord = |a: &SummaryCell, b: &SummaryCell| {
            a.freq_mhz.total_cmp(&b.freq_mhz).then(a.input_bit.cmp(&b.input_bit)).then(a.objective.cmp(&b.objective))
        };
        let at = match self.cells.binary_search_by(|c| ord(c, cell)) {
            Ok(i) => i,
            Err(i) => {
                debug_assert!(self.cells.get(i).is_none_or(|c| key(c) != key(cell)));
                self.cells.insert(
                    i,
                    SummaryCell {
                        freq_mhz: cell.freq_mhz,
                        input_bit: cell.input_bit,
                        objective: cell.objective.clone(),
                        rows: Vec::new(),
                    },
                );
                i
            }
        };
        let rows = &mut self.cells[at].rows;
        for r in &cell.rows {
            match rows.binary_search_by(|x| x.duration_ns.total_cmp(&r.duration_ns)) {
                Ok(i) => rows[i].merge(r),
                Err(i) => {
                    let mut fresh = DurationRow::empty(r.duration_ns);
                    fresh.merge(r);
                    rows.insert(i, fresh);
                }
            }
        }
    }

    pub fn cell(&self, freq_mhz: f64, input_bit: bool, objective: &str) -> Option<&SummaryCell> {
        self.cells
            .iter()
            .find(|c| c.freq_mhz == freq_mhz && c.input_bit == input_bit && c.objective == objective)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub shots: Vec<ShotResult>,
    pub summary: CampaignSummary,
}

/// Runs the full power × duration grid of a scenario serially.
pub fn run_campaign(ctx: CampaignContext<'_>, spec: &ScenarioSpec) -> Result<CampaignResult> {
    let shots = ScenarioRunner::new(ctx, spec)?.run_all()?;
    let summary = CampaignSummary::from_shots(&shots);
    Ok(CampaignResult { shots, summary })
}

/// One observed minimum faulting power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub freq_mhz: f64,
    pub objective: String,
    pub duration_ns: f64,
    pub input_bit: bool,
    pub min_power_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResidual {
    pub target: CalibrationTarget,
    pub simulated_min_pct: Option<f64>,
    /// Simulated minus observed; a target that never faults counts as one
    /// grid step above the top of the grid.
    pub residual_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub model: ThresholdModel,
    pub residuals: Vec<TargetResidual>,
    pub tolerance_pct: f64,
}

impl Calibration {
    pub fn worst_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.residual_pct.abs()).fold(0.0, f64::max)
    }

    pub fn is_feasible(&self) -> bool {
        self.worst_residual() <= self.tolerance_pct + 1e-9
    }
}

/// One target prepared for the threshold search. Flip-flop faults depend on
/// the thresholds only through `level = max(power, dose / duration)`, so the
/// minimum faulting power is a step function of that level.
struct PreparedTarget<'a> {
    runner: ScenarioRunner<'a>,
    duration_ns: f64,
    /// Sorted distinct levels at which the induced set changes.
    breakpoints: Vec<f64>,
    /// Minimum faulting power for each open interval between breakpoints;
    /// one more entry than `breakpoints`.
    minima: Vec<Option<f64>>,
}

impl PreparedTarget<'_> {
    fn min_power(&self, level: f64) -> Option<f64> {
        let i = self.breakpoints.partition_point(|&b| b < level);
        self.minima[i]
    }
}

fn voter_events(
    runner: &ScenarioRunner<'_>,
    voters: &[(CellId, f64)],
    thresholds: Thresholds,
    power_pct: f64,
    duration_ns: f64,
) -> Vec<FaultEvent> {
    voters
        .iter()
        .filter(|&&(_, e)| thresholds.triggers(e * power_pct / 100.0, duration_ns))
        .map(|&(id, _)| FaultEvent::voter_set(id, runner.trigger_ns, duration_ns))
        .collect()
}

fn prepare_target<'a>(
    ctx: CampaignContext<'a>,
    template: &ScenarioSpec,
    target: &CalibrationTarget,
) -> Result<PreparedTarget<'a>> {
    let spec = ScenarioSpec {
        name: format!("{}@{}MHz/{}/{}ns", template.name, target.freq_mhz, target.objective, target.duration_ns),
        objective: target.objective.clone(),
        freq_mhz: target.freq_mhz,
        input_bit: target.input_bit,
        durations_ns: vec![target.duration_ns],
        ..template.clone()
    };
    let runner = ScenarioRunner::new(ctx, &spec)?;
    let d = target.duration_ns;
    let full = optics::exposure(&runner.pulse(100.0, d), ctx.layout);
    let ffs: Vec<(CellId, f64)> =
        full.iter().filter(|(_, k, e)| k.is_ff() && *e > 0.0).map(|&(id, _, e)| (id, e)).collect();
    let voters: Vec<(CellId, f64)> =
        full.iter().filter(|(_, k, e)| !k.is_ff() && *e > 0.0).map(|&(id, _, e)| (id, e)).collect();

    let mut breakpoints: Vec<f64> = spec
        .powers_pct
        .iter()
        .filter(|&&p| p > 0.0)
        .flat_map(|&p| ffs.iter().map(move |&(_, e)| e * p / 100.0))
        .collect();
    sort_levels(&mut breakpoints);

    let mut cache: BTreeMap<Vec<u32>, bool> = BTreeMap::new();
    let mut minima = Vec::with_capacity(breakpoints.len() + 1);
    for i in 0..=breakpoints.len() {
        let level = match i {
            0 => breakpoints.first().map_or(0.5, |b| b / 2.0),
            _ if i == breakpoints.len() => breakpoints[i - 1] + 1.0,
            _ => (breakpoints[i - 1] + breakpoints[i]) / 2.0,
        };
        let mut found = None;
        for &p in &spec.powers_pct {
            let mut faults: Vec<FaultEvent> = ffs
                .iter()
                .filter(|&&(_, e)| e * p / 100.0 > level)
                .map(|&(id, _)| FaultEvent::illum_upset(id, runner.trigger_ns, d))
                .collect();
            faults.extend(voter_events(&runner, &voters, ctx.thresholds.voter, p, d));
            if faults.is_empty() {
                continue;
            }
            faults.extend_from_slice(&spec.injected);
            let mut key: Vec<u32> = faults.iter().map(|f| f.cell.0).collect();
            key.sort_unstable();
            let faulted = match cache.get(&key) {
                Some(&f) => f,
                None => {
                    let f = runner.faulting_reps(&faults)? > 0;
                    cache.insert(key, f);
                    f
                }
            };
            if faulted {
                found = Some(p);
                break;
            }
        }
        minima.push(found);
    }
    Ok(PreparedTarget { runner, duration_ns: d, breakpoints, minima })
}

/// Sorts and merges levels closer than rounding noise, so that no search
/// candidate falls between two copies of the same physical level.
fn sort_levels(values: &mut Vec<f64>) {
    values.sort_by(f64::total_cmp);
    values.dedup_by(|b, a| *b - *a <= 1e-9 * a.abs().max(1.0));
}

fn midpoints(mut values: Vec<f64>, upper: Option<f64>) -> Vec<f64> {
    sort_levels(&mut values);
    let mut out = vec![0.0];
    out.extend(values.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    if let (Some(u), Some(&last)) = (upper, values.last()) {
        out.push(u.max(last + 1.0));
    }
    out
}

fn grid_step(powers: &[f64]) -> f64 {
    powers.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Fits the flip-flop power and dose thresholds so that the simulated
/// minimum faulting power of every target lands within one power-grid step
/// of the observed one. `template` supplies the scenario geometry, power
/// grid, repetitions, phase sampling and trigger; each target overrides
/// frequency, objective, input value and duration. Voter thresholds are
/// taken from the context unchanged.
pub fn calibrate(ctx: CampaignContext<'_>, template: &ScenarioSpec, targets: &[CalibrationTarget]) -> Result<Calibration> {
    if targets.is_empty() {
        return Err(Error::invalid("calibration.targets", "need at least one target"));
    }
    let step = grid_step(&template.powers_pct);
    let tolerance = if step.is_finite() { step } else { 0.0 };
    let top = template.powers_pct.last().copied().unwrap_or(100.0);
    let prepared = targets.iter().map(|t| prepare_target(ctx, template, t)).collect::<Result<Vec<_>>>()?;

    let powers = midpoints(prepared.iter().flat_map(|t| t.breakpoints.iter().copied()).collect(), None);
    let doses = midpoints(
        prepared.iter().flat_map(|t| t.breakpoints.iter().map(move |b| b * t.duration_ns)).collect(),
        Some(0.0),
    );

    let residual = |t: &CalibrationTarget, sim: Option<f64>| sim.unwrap_or(top + tolerance) - t.min_power_pct;
    // Ranked by worst residual, total residual, then the number of targets
    // whose observed minimum the model fails to fault at.
    let mut best_score = (f64::INFINITY, f64::INFINITY, usize::MAX);
    let mut best: Vec<(f64, f64)> = Vec::new();
    for &tp in &powers {
        for &td in &doses {
            let mut worst = 0.0f64;
            let mut total = 0.0;
            let mut above = 0;
            for (t, p) in targets.iter().zip(&prepared) {
                let r = residual(t, p.min_power(tp.max(td / p.duration_ns)));
                worst = worst.max(r.abs());
                total += r.abs();
                above += (r > 0.0) as usize;
            }
            let score = (worst, total, above);
            if score < best_score {
                best_score = score;
                best.clear();
            }
            if score == best_score {
                best.push((tp, td));
            }
        }
    }
    // Among equally good fits prefer the highest power threshold, then the
    // middle of the remaining dose range.
    let top_power = best.iter().map(|b| b.0).fold(f64::NEG_INFINITY, f64::max);
    best.retain(|b| b.0 == top_power);
    let (tp, td) = best[best.len() / 2];
    let model = ThresholdModel { ff: Thresholds { power: tp, dose: td }, voter: ctx.thresholds.voter };

    let mut residuals = Vec::with_capacity(targets.len());
    for (t, p) in targets.iter().zip(&prepared) {
        let predicted = p.min_power(tp.max(td / p.duration_ns));
        let simulated = simulate_min_power(ctx.with_thresholds(model), p)?;
        if simulated != predicted {
            return Err(Error::Internal(format!(
                "threshold search predicted {predicted:?} but the campaign gives {simulated:?} for {}",
                p.runner.spec().name
            )));
        }
        residuals.push(TargetResidual { target: t.clone(), simulated_min_pct: simulated, residual_pct: residual(t, simulated) });
    }
    let calibration = Calibration { model, residuals, tolerance_pct: tolerance };
    if calibration.is_feasible() {
        Ok(calibration)
    } else {
        Err(Error::CalibrationInfeasible(alloc::boxed::Box::new(calibration)))
    }
}

fn simulate_min_power(ctx: CampaignContext<'_>, target: &PreparedTarget<'_>) -> Result<Option<f64>> {
    let runner = ScenarioRunner::new(ctx, target.runner.spec())?;
    for &p in &runner.spec().powers_pct {
        if runner.shot(p, target.duration_ns)?.faulted() {
            return Ok(Some(p));
        }
    }
    Ok(None)
}
