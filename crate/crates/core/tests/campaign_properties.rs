use proptest::prelude::*;
use tmrfi_core::campaign::{
    default_power_grid, run_campaign, run_shot, CampaignContext, CampaignSummary, FaultClass, FaultKind, PhaseSampling,
    ScenarioKind, ScenarioSpec, ShotResult, SummaryCell, TriggerTime,
};
use tmrfi_core::layout::{build_register, CellKind, GeometryParams, OcclusionSpec, RegisterLayout};
use tmrfi_core::optics::{ObjectiveProfile, ThresholdModel, Thresholds};

fn layout(n: usize) -> RegisterLayout {
    build_register(n, GeometryParams::default(), &OcclusionSpec::default()).unwrap()
}

fn scenario(kind: ScenarioKind, stage: usize, objective: &str, freq: f64, bit: bool, durations: Vec<f64>) -> ScenarioSpec {
    ScenarioSpec {
        name: "s".into(),
        kind,
        target_stage: stage,
        objective: objective.into(),
        powers_pct: default_power_grid(),
        durations_ns: durations,
        freq_mhz: freq,
        input_bit: bit,
        repetitions: 20,
        phase: PhaseSampling::default(),
        trigger: TriggerTime::default(),
        num_edges: None,
        injected: Vec::new(),
    }
}

fn fitted() -> ThresholdModel {
    ThresholdModel { ff: Thresholds { power: 0.372486, dose: 46.997020 }, ..ThresholdModel::default() }
}

#[test]
fn calibrated_ten_megahertz_shot_sets_the_bit() {
    let l = layout(1024);
    let objectives = ObjectiveProfile::defaults();
    let ctx = CampaignContext { layout: &l, objectives: &objectives, thresholds: fitted(), delta_ns: 1.0, seed: 2024 };
    let s = scenario(ScenarioKind::TwoFf, 512, "20x", 10.0, false, vec![130.0]);
    let r = run_shot(ctx, &s, 40.0, 130.0).unwrap();
    assert!(matches!(r.class, FaultClass::TransientBitSet { .. }), "{r:?}");
    assert_eq!(r.repeatability, 1.0);
    assert_eq!(r.n_faults, 2);
    let below = run_shot(ctx, &s, 35.0, 130.0).unwrap();
    assert!(!below.faulted());
}

#[test]
fn fifty_megahertz_shots_are_not_repeatable() {
    let l = layout(1024);
    let objectives = ObjectiveProfile::defaults();
    let thresholds = ThresholdModel { ff: Thresholds { power: 0.3, dose: 30.0 }, ..ThresholdModel::default() };
    let ctx = CampaignContext { layout: &l, objectives: &objectives, thresholds, delta_ns: 1.0, seed: 2024 };
    let s = scenario(ScenarioKind::TwoFf, 512, "20x", 50.0, false, vec![50.0]);
    let r = run_shot(ctx, &s, 80.0, 50.0).unwrap();
    assert!(r.faulted());
    assert_eq!(r.class.kind(), FaultKind::TransientBitSet);
    assert!(r.repeatability > 0.0 && r.repeatability < 1.0, "{}", r.repeatability);
}

#[test]
fn a_spot_on_one_flip_flop_is_always_masked() {
    let l = layout(8);
    let ff1 = l.stage_cell(3, CellKind::Ff1).unwrap();
    let (x, y) = (ff1.x + ff1.w / 2.0, ff1.y + ff1.h / 2.0);
    let objectives = vec![ObjectiveProfile::new("pin", 1.0)];
    let thresholds = ThresholdModel { ff: Thresholds { power: 0.0, dose: 0.0 }, ..ThresholdModel::default() };
    let ctx = CampaignContext { layout: &l, objectives: &objectives, thresholds, delta_ns: 1.0, seed: 9 };
    for freq in [10.0, 50.0] {
        for bit in [false, true] {
            let mut s = scenario(ScenarioKind::Custom { x_um: x, y_um: y }, 3, "pin", freq, bit, vec![1.0, 50.0, 280.0]);
            s.repetitions = 5;
            for shot in run_campaign(ctx, &s).unwrap().shots {
                assert!(matches!(shot.class, FaultClass::Masked | FaultClass::NoInjection), "{shot:?}");
                assert!(shot.n_faults <= 1);
                assert_eq!(shot.n_faults == 0, shot.power_pct == 0.0);
            }
        }
    }
}

#[test]
fn same_pulse_needs_no_less_power_at_higher_clock() {
    let l = layout(64);
    let objectives = ObjectiveProfile::defaults();
    for thresholds in [ThresholdModel::default(), fitted()] {
        let ctx = CampaignContext { layout: &l, objectives: &objectives, thresholds, delta_ns: 1.0, seed: 3 };
        for objective in ["20x", "5x"] {
            for d in [50.0, 80.0, 130.0] {
                let min = |freq| {
                    let mut s = scenario(ScenarioKind::TwoFf, 32, objective, freq, false, vec![d]);
                    s.repetitions = 4;
                    run_campaign(ctx, &s).unwrap().summary.cells[0].min_power_pct()
                };
                match (min(10.0), min(50.0)) {
                    (Some(slow), Some(fast)) => assert!(fast >= slow, "{objective} {d}: {fast} < {slow}"),
                    (None, fast) => assert_eq!(fast, None, "{objective} {d}"),
                    _ => {}
                }
            }
        }
    }
}

fn shots() -> Vec<ShotResult> {
    let l = layout(16);
    let objectives = ObjectiveProfile::defaults();
    let ctx = CampaignContext { layout: &l, objectives: &objectives, thresholds: fitted(), delta_ns: 1.0, seed: 1 };
    let mut out = Vec::new();
    for (freq, obj, bit) in [(10.0, "20x", false), (50.0, "5x", true), (10.0, "5x", true)] {
        let mut s = scenario(ScenarioKind::TwoFf, 8, obj, freq, bit, vec![50.0, 130.0]);
        s.repetitions = 3;
        s.powers_pct = vec![0.0, 40.0, 60.0, 100.0];
        out.extend(run_campaign(ctx, &s).unwrap().shots);
    }
    out
}

fn sorted(summary: CampaignSummary) -> Vec<SummaryCell> {
    let mut cells = summary.cells;
    cells.sort_by(|a, b| (a.freq_mhz, a.input_bit, &a.objective).partial_cmp(&(b.freq_mhz, b.input_bit, &b.objective)).unwrap());
    cells
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn summary_ignores_shot_order(perm in Just(shots()).prop_shuffle(), split in 0usize..24) {
        let want = sorted(CampaignSummary::from_shots(&shots()));
        let cells = sorted(CampaignSummary::from_shots(&perm));
        prop_assert_eq!(&cells, &want);

        let mut left = CampaignSummary::from_shots(&perm[..split]);
        left.merge(&CampaignSummary::from_shots(&perm[split..]));
        prop_assert_eq!(&sorted(left), &want);
    }
}
