//! Loads an experiment and fans its shots out over a worker pool.
//!
//! Shots are pure functions of the experiment and their grid point, and the
//! results are collected in grid order, so the output does not depend on the
//! number of workers.

use std::path::Path;

use rayon::prelude::*;
use tmrfi_core::campaign::{
    calibrate, CampaignContext, CampaignResult, CampaignSummary, Calibration, ScenarioRunner, ScenarioSpec, ShotResult,
};
use tmrfi_core::layout::RegisterLayout;
use tmrfi_core::optics::ThresholdModel;

use crate::config::RunConfig;
use crate::error::AppError;

/// A validated config together with the layout it describes.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub layout: RegisterLayout,
}

/// Where the flip-flop thresholds of a run came from.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSource {
    Explicit(ThresholdModel),
    Calibrated(Calibration),
    Default(ThresholdModel),
}

impl ThresholdSource {
    pub fn model(&self) -> ThresholdModel {
        match self {
            ThresholdSource::Explicit(m) | ThresholdSource::Default(m) => *m,
            ThresholdSource::Calibrated(c) => c.model,
        }
    }
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self, AppError> {
        Self::new(RunConfig::load(path)?)
    }

    pub fn new(config: RunConfig) -> Result<Self, AppError> {
        let layout = config.build_layout()?;
        Ok(Experiment { config, layout })
    }

    pub fn context(&self, thresholds: ThresholdModel) -> CampaignContext<'_> {
        CampaignContext {
            layout: &self.layout,
            objectives: &self.config.optics.objectives,
            thresholds,
            delta_ns: self.config.timing.delta_ns,
            seed: self.config.seed,
        }
    }

    fn base_thresholds(&self) -> ThresholdModel {
        self.config.optics.thresholds.unwrap_or_default()
    }

    /// Fits the flip-flop thresholds to the config's calibration targets.
    pub fn calibrate(&self) -> Result<Calibration, AppError> {
        let section = self
            .config
            .optics
            .calibration
            .as_ref()
            .ok_or_else(|| AppError::Config("optics.calibration is required for calibration".into()))?;
        let template = section.template(self.layout.stages());
        Ok(calibrate(self.context(self.base_thresholds()), &template, &section.targets)?)
    }

    /// Explicit thresholds win, then calibration targets, then the defaults.
    pub fn thresholds(&self) -> Result<ThresholdSource, AppError> {
        if let Some(t) = self.config.optics.thresholds {
            return Ok(ThresholdSource::Explicit(t));
        }
        if self.config.optics.calibration.is_some() {
            return Ok(ThresholdSource::Calibrated(self.calibrate()?));
        }
        Ok(ThresholdSource::Default(ThresholdModel::default()))
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, AppError> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

/// Worker count used when none is given.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs every grid point of every scenario. `workers == 1` stays on the
/// calling thread.
pub fn run_scenarios(
    ctx: CampaignContext<'_>,
    scenarios: &[ScenarioSpec],
    workers: usize,
) -> Result<CampaignResult, AppError> {
    let runners = scenarios.iter().map(|s| ScenarioRunner::new(ctx, s)).collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, f64, f64)> = runners
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.grid().into_iter().map(move |(p, d)| (i, p, d)))
        .collect();
    let fire = |&(i, p, d): &(usize, f64, f64)| runners[i].shot(p, d);
    let shots: Vec<ShotResult> = if workers <= 1 {
        jobs.iter().map(fire).collect::<Result<_, _>>()?
    } else {
        pool(workers)?.install(|| jobs.par_iter().map(fire).collect::<Result<_, _>>())?
    };
    let summary = CampaignSummary::from_shots(&shots);
    Ok(CampaignResult { shots, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn experiment() -> Experiment {
        let cfg = RunConfig::from_json(
            r#"{
            "seed": 11,
            "layout": { "stages": 16, "geometry": {} },
            "scenarios": [
                { "name": "a", "kind": "two_ff", "target_stage": 5, "objective": "20x",
                  "durations_ns": [50, 80], "freq_mhz": 50, "input_bit": false, "repetitions": 5 },
                { "name": "b", "kind": "two_ff", "target_stage": 9, "objective": "5x",
                  "durations_ns": [80], "freq_mhz": 10, "input_bit": true, "repetitions": 3 }
            ]
        }"#,
        )
        .unwrap();
        Experiment::new(cfg).unwrap()
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let e = experiment();
        let ctx = e.context(ThresholdModel::default());
        let serial = run_scenarios(ctx, &e.config.scenarios, 1).unwrap();
        let parallel = run_scenarios(ctx, &e.config.scenarios, 4).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(serial.shots.len(), 21 * 3);
        assert_eq!(serial.shots[0].scenario, "a");
        assert_eq!(serial.shots[62].scenario, "b");
    }

    #[test]
    fn threshold_precedence() {
        let e = experiment();
        assert_eq!(e.thresholds().unwrap(), ThresholdSource::Default(ThresholdModel::default()));
        assert!(matches!(e.calibrate(), Err(AppError::Config(_))));
    }
}
