//! Declarative experiment description.
//!
//! One JSON file carries everything needed to reproduce a run: register
//! layout, timing, optics, scenarios, output location and the global seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tmrfi_core::campaign::{
    default_power_grid, CalibrationTarget, PhaseSampling, ScenarioKind, ScenarioSpec, TriggerTime,
};
use tmrfi_core::layout::{build_register, GeometryParams, OcclusionSpec, RegisterLayout};
use tmrfi_core::optics::{validate_objectives, ObjectiveProfile, ThresholdModel};

use crate::error::AppError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSection {
    pub stages: usize,
    pub geometry: GeometryParams,
    #[serde(default)]
    pub occlusion: OcclusionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    #[serde(default = "default_delta")]
    pub delta_ns: f64,
}

fn default_delta() -> f64 {
    1.0
}

impl Default for TimingSection {
    fn default() -> Self {
        TimingSection { delta_ns: default_delta() }
    }
}

fn default_stage_choice() -> ScenarioKind {
    ScenarioKind::TwoFf
}

fn default_reps() -> usize {
    20
}

/// Observed minima plus the scenario shape used to reproduce them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub targets: Vec<CalibrationTarget>,
    #[serde(default = "default_stage_choice")]
    pub kind: ScenarioKind,
    /// Defaults to the middle stage.
    #[serde(default)]
    pub target_stage: Option<usize>,
    #[serde(default = "default_power_grid")]
    pub powers_pct: Vec<f64>,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default)]
    pub phase: PhaseSampling,
    #[serde(default)]
    pub trigger: TriggerTime,
}

impl CalibrationSection {
    /// Scenario skeleton that each target specializes.
    pub fn template(&self, stages: usize) -> ScenarioSpec {
        let first = self.targets.first();
        ScenarioSpec {
            name: "calibration".into(),
            kind: self.kind,
            target_stage: self.target_stage.unwrap_or(stages / 2),
            objective: first.map(|t| t.objective.clone()).unwrap_or_default(),
            powers_pct: self.powers_pct.clone(),
            durations_ns: vec![first.map_or(1.0, |t| t.duration_ns)],
            freq_mhz: first.map_or(1.0, |t| t.freq_mhz),
            input_bit: false,
            repetitions: self.repetitions,
            phase: self.phase,
            trigger: self.trigger,
            num_edges: None,
            injected: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsSection {
    #[serde(default = "ObjectiveProfile::defaults")]
    pub objectives: Vec<ObjectiveProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ThresholdModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSection>,
}

impl Default for OpticsSection {
    fn default() -> Self {
        OpticsSection { objectives: ObjectiveProfile::defaults(), thresholds: None, calibration: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_prefix() -> String {
    "run".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_dir(), prefix: default_prefix() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub layout: LayoutSection,
    #[serde(default)]
    pub timing: TimingSection,
    #[serde(default)]
    pub optics: OpticsSection,
    #[serde(default)]
    pub scenarios: Vec<ScenarioSpec>,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            AppError::Config(msg) => AppError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, AppError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Cross-section checks that serde cannot express.
    pub fn check(&self) -> Result<(), AppError> {
        if self.layout.stages == 0 {
            return Err(AppError::Config("layout.stages must be at least 1".into()));
        }
        self.layout.geometry.validate()?;
        validate_objectives(&self.optics.objectives)?;
        if let Some(t) = &self.optics.thresholds {
            t.validate()?;
        }
        if !(self.timing.delta_ns.is_finite() && self.timing.delta_ns > 0.0) {
            return Err(AppError::Config("timing.delta_ns must be positive".into()));
        }
        let known = |name: &str| self.optics.objectives.iter().any(|o| o.name == name);
        for (i, s) in self.scenarios.iter().enumerate() {
            if !known(&s.objective) {
                return Err(AppError::Config(format!("scenarios[{i}].objective `{}` is not defined", s.objective)));
            }
            if s.target_stage >= self.layout.stages {
                return Err(AppError::Config(format!(
                    "scenarios[{i}].target_stage {} is outside the {}-stage register",
                    s.target_stage, self.layout.stages
                )));
            }
            if self.scenarios[..i].iter().any(|o| o.name == s.name) {
                return Err(AppError::Config(format!("scenarios[{i}].name `{}` is not unique", s.name)));
            }
        }
        if let Some(c) = &self.optics.calibration {
            if c.targets.is_empty() {
                return Err(AppError::Config("optics.calibration.targets must not be empty".into()));
            }
            for (i, t) in c.targets.iter().enumerate() {
                if !known(&t.objective) {
                    return Err(AppError::Config(format!(
                        "optics.calibration.targets[{i}].objective `{}` is not defined",
                        t.objective
                    )));
                }
            }
            if c.target_stage.is_some_and(|s| s >= self.layout.stages) {
                return Err(AppError::Config("optics.calibration.target_stage is outside the register".into()));
            }
        }
        Ok(())
    }

    pub fn build_layout(&self) -> Result<RegisterLayout, AppError> {
        Ok(build_register(self.layout.stages, self.layout.geometry.clone(), &self.layout.occlusion)?)
    }

    pub fn scenario(&self, name: Option<&str>) -> Result<&ScenarioSpec, AppError> {
        match name {
            Some(n) => self
                .scenarios
                .iter()
                .find(|s| s.name == n)
                .ok_or_else(|| AppError::Config(format!("no scenario named `{n}`"))),
            None => self.scenarios.first().ok_or_else(|| AppError::Config("config defines no scenarios".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "layout": { "stages": 4, "geometry": {} },
        "scenarios": [{
            "name": "a", "kind": "two_ff", "target_stage": 1, "objective": "20x",
            "durations_ns": [130], "freq_mhz": 10, "input_bit": false
        }]
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.timing.delta_ns, 1.0);
        assert_eq!(c.optics.objectives.len(), 3);
        assert_eq!(c.scenarios[0].powers_pct.len(), 21);
        assert_eq!(c.scenarios[0].repetitions, 20);
        assert_eq!(c.build_layout().unwrap().ff_count(), 12);
    }

    #[test]
    fn missing_geometry_is_named() {
        let err = RunConfig::from_json(r#"{ "layout": { "stages": 4 } }"#).unwrap_err();
        assert!(err.to_string().contains("geometry"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn cross_references_are_checked() {
        let bad = MINIMAL.replace("\"20x\"", "\"50x\"");
        assert!(RunConfig::from_json(&bad).unwrap_err().to_string().contains("50x"));
        let bad = MINIMAL.replace("\"target_stage\": 1", "\"target_stage\": 4");
        assert!(RunConfig::from_json(&bad).unwrap_err().to_string().contains("target_stage"));
        let bad = MINIMAL.replace("\"geometry\": {}", "\"geometry\": { \"voter_width_um\": -1 }");
        assert!(RunConfig::from_json(&bad).unwrap_err().to_string().contains("voter_width_um"));
    }
}
