//! Laser pulse to cell-level fault events.
//!
//! A pulse delivers `power_pct / 100 * coverage * (1 - occlusion)` to each
//! cell, in normalized units. A cell faults when that effective power reaches
//! the power threshold of its class and the effective dose (effective power
//! times pulse duration) reaches the dose threshold. Both comparisons are
//! inclusive.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

use crate::engine::FaultEvent;
use crate::layout::{CellId, CellKind, RegisterLayout, SpotProfile};
use crate::{Error, Result};

/// Absolute slack on threshold comparisons so that exact ties survive
/// floating-point rounding of the coverage integral.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveProfile {
    pub name: String,
    pub spot_diameter_um: f64,
    #[serde(default)]
    pub profile: SpotProfile,
    /// Metadata only; no wavelength-dependent absorption is modeled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_nm: Option<f64>,
}

impl ObjectiveProfile {
    pub fn new(name: impl Into<String>, spot_diameter_um: f64) -> Self {
        ObjectiveProfile { name: name.into(), spot_diameter_um, profile: SpotProfile::Uniform, wavelength_nm: None }
    }

    /// Assumed spot sizes: the single-mode spot fits inside a voter, the 20x
    /// spot spans FF1 and FF2 but not FF3, the 5x spot covers a whole stage.
    pub fn defaults() -> Vec<ObjectiveProfile> {
        vec![
            ObjectiveProfile { wavelength_nm: Some(808.0), ..Self::new("single-mode", 2.0) },
            ObjectiveProfile { wavelength_nm: Some(1064.0), ..Self::new("20x", 20.0) },
            ObjectiveProfile { wavelength_nm: Some(1064.0), ..Self::new("5x", 60.0) },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spot_diameter_um.is_finite() && self.spot_diameter_um > 0.0) {
            return Err(Error::invalid(
                "objective.spot_diameter_um",
                format!("objective `{}` needs a positive spot diameter", self.name),
            ));
        }
        Ok(())
    }
}

/// Looks up an objective by name.
pub fn find_objective<'a>(objectives: &'a [ObjectiveProfile], name: &str) -> Result<&'a ObjectiveProfile> {
    objectives
        .iter()
        .find(|o| o.name == name)
        .ok_or_else(|| Error::UnknownObjective(name.into()))
}

/// Checks names are unique and every profile is valid.
pub fn validate_objectives(objectives: &[ObjectiveProfile]) -> Result<()> {
    for (i, o) in objectives.iter().enumerate() {
        o.validate()?;
        if objectives[..i].iter().any(|p| p.name == o.name) {
            return Err(Error::invalid("objectives", format!("duplicate objective name `{}`", o.name)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserPulse {
    pub center: (f64, f64),
    pub objective: ObjectiveProfile,
    /// Source power in the bench software's percent unit.
    pub power_pct: f64,
    pub duration_ns: f64,
    pub trigger_ns: f64,
}

impl LaserPulse {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if !(0.0..=100.0).contains(&self.power_pct) {
            return Err(Error::invalid("power_pct", format!("must lie in [0, 100], got {}", self.power_pct)));
        }
        if !(self.duration_ns.is_finite() && self.duration_ns > 0.0) {
            return Err(Error::invalid("duration_ns", "must be positive"));
        }
        if !(self.trigger_ns.is_finite() && self.trigger_ns >= 0.0) {
            return Err(Error::invalid("trigger_ns", "must be non-negative"));
        }
        if !(self.center.0.is_finite() && self.center.1.is_finite()) {
            return Err(Error::invalid("center", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Minimum effective power fraction, in `[0, 1]`.
    pub power: f64,
    /// Minimum effective power times duration, in fraction·ns.
    pub dose: f64,
}

impl Thresholds {
    /// Whether a cell receiving `effective` for `duration_ns` faults.
    pub fn triggers(&self, effective: f64, duration_ns: f64) -> bool {
        effective > 0.0 && effective + TIE_EPS >= self.power && effective * duration_ns + TIE_EPS >= self.dose
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub ff: Thresholds,
    pub voter: Thresholds,
}

impl Default for ThresholdModel {
    /// Uncalibrated starting point. The voter dose is out of reach of any
    /// 5x pulse shorter than 300 ns.
    fn default() -> Self {
        ThresholdModel {
            ff: Thresholds { power: 0.3, dose: 40.0 },
            voter: Thresholds { power: 0.5, dose: 150.0 },
        }
    }
}

impl ThresholdModel {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("thresholds.ff", self.ff), ("thresholds.voter", self.voter)] {
            if !(0.0..=1.0).contains(&t.power) {
                return Err(Error::invalid(name, "power threshold must lie in [0, 1]"));
            }
            if !(t.dose.is_finite() && t.dose >= 0.0) {
                return Err(Error::invalid(name, "dose threshold must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn for_kind(&self, kind: CellKind) -> Thresholds {
        if kind.is_ff() {
            self.ff
        } else {
            self.voter
        }
    }
}

fn attenuation(pulse: &LaserPulse, coverage: f64, occlusion: f64) -> f64 {
    (pulse.power_pct / 100.0) * coverage * (1.0 - occlusion)
}

/// Effective power fraction delivered to one cell.
pub fn effective_power(pulse: &LaserPulse, cell: CellId, layout: &RegisterLayout) -> Result<f64> {
    let c = layout.cell(cell).ok_or(Error::UnknownCell(cell))?;
    let coverage = layout
        .coverage(cell, pulse.center, pulse.objective.spot_diameter_um, pulse.objective.profile)
        .unwrap_or(0.0);
    Ok(attenuation(pulse, coverage, c.occlusion))
}

/// Effective power per hit cell, ordered by cell id.
pub fn exposure(pulse: &LaserPulse, layout: &RegisterLayout) -> Vec<(CellId, CellKind, f64)> {
    layout
        .cells_hit_with(pulse.center, pulse.objective.spot_diameter_um, pulse.objective.profile)
        .into_iter()
        .filter_map(|(id, coverage)| {
            let c = layout.cell(id)?;
            Some((id, c.kind, attenuation(pulse, coverage, c.occlusion)))
        })
        .collect()
}

/// Fault events caused by one pulse: an `IllumUpset` per flip-flop and a
/// `VoterSet` per voter that crosses its thresholds, all sharing the pulse
/// window.
pub fn induce_faults(pulse: &LaserPulse, layout: &RegisterLayout, model: &ThresholdModel) -> Vec<FaultEvent> {
    exposure(pulse, layout)
        .into_iter()
        .filter(|&(_, kind, eff)| model.for_kind(kind).triggers(eff, pulse.duration_ns))
        .map(|(id, kind, _)| {
            if kind.is_ff() {
                FaultEvent::illum_upset(id, pulse.trigger_ns, pulse.duration_ns)
            } else {
                FaultEvent::voter_set(id, pulse.trigger_ns, pulse.duration_ns)
            }
        })
        .collect()
}
