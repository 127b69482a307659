//! Brute-force reference simulator.
//!
//! Every net is stepped on a fine uniform time grid. Flip-flops hold a
//! physical state that upset onsets toggle and stuck faults override; voter
//! outputs are recomputed at every grid point and replicas sample the driving
//! net at the grid points `t_k - i * delta`. Nothing here is shared with the
//! event-driven engine beyond the data types.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::engine::{FaultEvent, FaultVariant, InputStream, OutputTrace, TimingParams};
use crate::layout::RegisterLayout;
use crate::time::{to_fs, Femtos};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub time_step_ns: f64,
    pub max_stages: usize,
    pub max_edges: usize,
}

impl OracleConfig {
    /// Sixteen grid steps per `delta`.
    pub fn for_delta(delta_ns: f64) -> Self {
        OracleConfig { time_step_ns: delta_ns / 16.0, max_stages: 8, max_edges: 4096 }
    }

    pub fn with_time_step(mut self, time_step_ns: f64) -> Self {
        self.time_step_ns = time_step_ns;
        self
    }
}

#[derive(Debug, Clone, Copy)]
struct Window {
    stage: usize,
    slot: usize,
    start: Femtos,
    end: Femtos,
}

#[derive(Debug, Clone, Copy)]
struct Stuck {
    stage: usize,
    slot: usize,
    from: Femtos,
    value: bool,
}

fn vote(a: bool, b: bool, c: bool) -> bool {
    (a as u8 + b as u8 + c as u8) >= 2
}

fn grid_multiple(what: &str, value: Femtos, step: Femtos) -> Result<Femtos> {
    if value % step != 0 {
        return Err(Error::OracleLimit(format!("{what} is not a multiple of the oracle time step")));
    }
    Ok(value / step)
}

/// Simulates `num_edges` edges on the fine grid and returns the same trace
/// shape as the engine.
pub fn oracle_run(
    layout: &RegisterLayout,
    input: &InputStream,
    timing: TimingParams,
    faults: &[FaultEvent],
    num_edges: usize,
    cfg: OracleConfig,
) -> Result<OutputTrace> {
    timing.validate()?;
    let n = layout.stages();
    if n > cfg.max_stages {
        return Err(Error::OracleLimit(format!("{n} stages exceed the oracle limit of {}", cfg.max_stages)));
    }
    if num_edges == 0 || num_edges > cfg.max_edges {
        return Err(Error::OracleLimit(format!("num_edges must lie in 1..={}", cfg.max_edges)));
    }
    if !(cfg.time_step_ns.is_finite() && cfg.time_step_ns > 0.0) {
        return Err(Error::invalid("oracle.time_step_ns", "must be positive"));
    }
    let ratio = timing.delta_ns / cfg.time_step_ns;
    if (ratio - libm::round(ratio)).abs() > 1e-9 * ratio {
        return Err(Error::OracleLimit("delta is not a multiple of the oracle time step".into()));
    }

    let h = to_fs(cfg.time_step_ns);
    if h <= 0 {
        return Err(Error::OracleLimit("time step below one femtosecond".into()));
    }
    let period = to_fs(timing.clock_period_ns);
    let steps_per_period = grid_multiple("clock period", period, h)?;
    let steps_per_delta = grid_multiple("delta", to_fs(timing.delta_ns), h)?;
    let first_edge = to_fs(timing.phase_ns);

    let mut upsets = Vec::new();
    let mut sets = Vec::new();
    let mut stucks = Vec::new();
    for f in faults {
        let (stage, kind) = f.validate(layout)?;
        let slot = kind.index();
        match f.variant {
            FaultVariant::IllumUpset { t0_ns, duration_ns } => {
                let start = to_fs(t0_ns);
                upsets.push(Window { stage, slot, start, end: start + to_fs(duration_ns) });
            }
            FaultVariant::VoterSet { t0_ns, duration_ns } => {
                let start = to_fs(t0_ns);
                sets.push(Window { stage, slot, start, end: start + to_fs(duration_ns) });
            }
            FaultVariant::StuckState { value, from_ns, .. } => {
                stucks.push(Stuck { stage, slot, from: to_fs(from_ns), value });
            }
        }
    }
    // Later onsets win when several stuck faults hit one flip-flop.
    stucks.sort_by_key(|s| s.from);

    let fill = input.fill_value();
    let mut state = vec![[fill; 3]; n];
    let mut samples = vec![[false; 3]; n];
    let mut bits = Vec::with_capacity(num_edges);

    // The grid starts one period before the first edge; step j sits at
    // origin + j * h and edge k at step (k + 1) * steps_per_period.
    let origin = first_edge - period;
    let last_step = (num_edges as i64) * steps_per_period;
    let mut prev = Femtos::MIN;
    for j in 0..=last_step {
        let tau = origin + j * h;

        for u in &upsets {
            if prev < u.start && u.start <= tau {
                state[u.stage][u.slot] = !state[u.stage][u.slot];
            }
        }
        for s in &stucks {
            if s.from <= tau {
                state[s.stage][s.slot] = s.value;
            }
        }

        // Which edge the current step leads up to, and how far before it.
        let k = (j + steps_per_period - 1) / steps_per_period - 1;
        let before = (k + 1) * steps_per_period - j;
        let pin = input.bit(k - 1);

        if before % steps_per_delta == 0 && before / steps_per_delta <= 2 && k >= 0 {
            let replica = (before / steps_per_delta) as usize;
            for s in 0..n {
                let net = if s == 0 {
                    pin
                } else {
                    let up = state[s - 1];
                    let glitch = sets.iter().filter(|w| w.stage == s - 1 && w.start <= tau && tau < w.end).count();
                    vote(up[0], up[1], up[2]) ^ (glitch % 2 == 1)
                };
                samples[s][replica] = net;
            }
        }

        if before == 0 && k >= 0 {
            for s in 0..n {
                for slot in 0..3 {
                    let hit = upsets
                        .iter()
                        .filter(|u| u.stage == s && u.slot == slot && u.start <= tau && tau < u.end)
                        .count();
                    state[s][slot] = samples[s][slot] ^ (hit % 2 == 1);
                }
            }
            for st in &stucks {
                if st.from <= tau {
                    state[st.stage][st.slot] = st.value;
                }
            }
            let out = state[n - 1];
            bits.push(vote(out[0], out[1], out[2]));
        }
        prev = tau;
    }

    let edge_times_ns = (0..num_edges).map(|k| timing.edge_time_ns(k)).collect();
    Ok(OutputTrace { bits, edge_times_ns, timing })
}
