use proptest::prelude::*;
use tmrfi_core::engine::{golden_run, run, FaultEvent, InitialFill, InputStream, StuckUntil, TimingParams};
use tmrfi_core::layout::{build_register, CellId, GeometryParams, OcclusionSpec, RegisterLayout};
use tmrfi_core::oracle::{oracle_run, OracleConfig};

fn layout(n: usize) -> RegisterLayout {
    build_register(n, GeometryParams::default(), &OcclusionSpec::default()).unwrap()
}

fn ff(stage: usize, i: usize) -> CellId {
    CellId((4 * stage + i) as u32)
}

fn voter(stage: usize) -> CellId {
    CellId((4 * stage + 3) as u32)
}

fn diff(a: &[bool], b: &[bool]) -> Vec<usize> {
    (0..a.len()).filter(|&k| a[k] != b[k]).collect()
}

fn pattern() -> impl Strategy<Value = InputStream> {
    (prop::collection::vec(any::<bool>(), 1..9), any::<bool>()).prop_map(|(bits, zero)| {
        let s = InputStream::pattern(bits).unwrap();
        if zero {
            s.with_fill(InitialFill::Zero)
        } else {
            s
        }
    })
}

/// Times snap to an eighth of a nanosecond half of the time so that faults
/// regularly coincide with edges and sampling instants.
fn instant(max: f64) -> impl Strategy<Value = f64> {
    prop_oneof![0.0..max, (0..(max * 8.0) as i64).prop_map(|i| i as f64 / 8.0)]
}

fn fault(stages: usize, horizon: f64) -> impl Strategy<Value = FaultEvent> {
    let dur = prop_oneof![0.125f64..4.0, 4.0f64..300.0];
    prop_oneof![
        (0..stages, 0..3usize, instant(horizon), dur.clone())
            .prop_map(|(s, i, t0, d)| FaultEvent::illum_upset(ff(s, i), t0, d)),
        (0..stages, instant(horizon), dur).prop_map(|(s, t0, d)| FaultEvent::voter_set(voter(s), t0, d)),
        (0..stages, 0..3usize, any::<bool>(), instant(horizon), any::<bool>()).prop_map(|(s, i, v, t, never)| {
            FaultEvent::stuck(ff(s, i), v, t, if never { StuckUntil::Never } else { StuckUntil::Reset })
        }),
    ]
}

fn timing() -> impl Strategy<Value = TimingParams> {
    (prop_oneof![Just(20.0), Just(37.5), Just(100.0)], prop_oneof![Just(0.5), Just(1.0)], 0.0f64..1.0)
        .prop_map(|(p, d, u): (f64, f64, f64)| TimingParams::new(p, (u * p * 8.0).floor() / 8.0, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn golden_output_is_input_delayed_by_register_length(n in 1usize..70, input in pattern(), t in timing()) {
        let edges = n + 20;
        let g = golden_run(&layout(n), &input, t, edges).unwrap();
        for k in 0..edges {
            prop_assert_eq!(g.bits[k], input.bit(k as i64 - n as i64));
        }
    }

    #[test]
    fn single_flip_flop_upsets_are_masked(
        n in 1usize..10, input in pattern(), t in timing(),
        s in 0usize..10, i in 0usize..3, t0 in 0.0f64..800.0, d in 0.1f64..400.0,
    ) {
        let s = s % n;
        let l = layout(n);
        let g = golden_run(&l, &input, t, 40).unwrap();
        let o = run(&l, &input, t, &[FaultEvent::illum_upset(ff(s, i), t0, d)], 40).unwrap();
        prop_assert_eq!(g, o);
    }

    #[test]
    fn glitches_shorter_than_delta_are_filtered(
        n in 2usize..10, input in pattern(), t in timing(),
        s in 0usize..10, t0 in 0.0f64..800.0, frac in 0.01f64..0.999,
    ) {
        let s = s % (n - 1);
        let l = layout(n);
        let g = golden_run(&l, &input, t, 40).unwrap();
        let f = [FaultEvent::voter_set(voter(s), t0, frac * t.delta_ns)];
        prop_assert_eq!(g, run(&l, &input, t, &f, 40).unwrap());
    }

    #[test]
    fn runs_are_deterministic(n in 1usize..12, input in pattern(), t in timing(), faults in prop::collection::vec(fault(12, 600.0), 0..5)) {
        let faults: Vec<FaultEvent> = faults.into_iter().filter(|f| (f.cell.0 as usize) < 4 * n).collect();
        let l = layout(n);
        let a = run(&l, &input, t, &faults, 30).unwrap();
        let b = run(&l, &input, t, &faults, 30).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn engine_matches_oracle(
        n in 1usize..=8, input in pattern(), t in timing(),
        faults in prop::collection::vec(fault(8, 900.0), 1..5),
    ) {
        let faults: Vec<FaultEvent> = faults.into_iter().filter(|f| (f.cell.0 as usize) < 4 * n).collect();
        let l = layout(n);
        let edges = 900.0f64.div_euclid(t.clock_period_ns) as usize + n + 4;
        let e = run(&l, &input, t, &faults, edges).unwrap();
        let o = oracle_run(&l, &input, t, &faults, edges, OracleConfig::for_delta(t.delta_ns)).unwrap();
        prop_assert_eq!(e, o, "faults {:?}", faults);
    }
}

/// Output diff predicted for FF1+FF2 upsets on stage `s` of an `n`-stage
/// register: the stage's voter stays inverted from `t0` through the first
/// edge at or after `t0 + d`, stage `s + 1` latches the error at every edge
/// whose FF1 and FF2 samples both fall inside that span, and each later
/// stage adds one edge of delay. A last-stage upset shows only at the edges
/// inside the window.
fn predicted_burst(t: &TimingParams, n: usize, s: usize, t0: f64, d: f64, edges: usize) -> Vec<usize> {
    let edge = |k: usize| t.phase_ns + k as f64 * t.clock_period_ns;
    if s + 1 == n {
        return (0..edges).filter(|&k| edge(k) >= t0 && edge(k) < t0 + d).collect();
    }
    let end = (0..).map(edge).find(|&e| e >= t0 + d).unwrap();
    (0..edges)
        .filter(|&k| edge(k) - t.delta_ns >= t0 && edge(k) <= end)
        .map(|k| k + n - s - 2)
        .filter(|&k| k < edges)
        .collect()
}

#[test]
fn two_flip_flop_burst_law() {
    let n = 6;
    let l = layout(n);
    for (period, delta) in [(100.0, 1.0), (20.0, 1.0), (37.5, 0.5)] {
        let t = TimingParams::new(period, 0.25 * period, delta).unwrap();
        let edges = 60;
        for s in 0..n {
            for bit in [false, true] {
                let input = InputStream::constant(bit);
                let g = golden_run(&l, &input, t, edges).unwrap();
                for step in 0..24 {
                    let t0 = t.phase_ns + period + step as f64 * period / 8.0 + 0.01;
                    for d in [0.3 * period, period, 1.3 * period, 2.8 * period] {
                        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
                            let f = [FaultEvent::illum_upset(ff(s, a), t0, d), FaultEvent::illum_upset(ff(s, b), t0, d)];
                            let o = run(&l, &input, t, &f, edges).unwrap();
                            let got = diff(&g.bits, &o.bits);
                            assert_eq!(got, predicted_burst(&t, n, s, t0, d, edges), "P {period} s {s} t0 {t0} d {d}");
                            assert!(got.iter().all(|&k| o.bits[k] == !bit));
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn direction_law_on_small_registers() {
    for n in 1..=4 {
        let l = layout(n);
        let t = TimingParams::new(100.0, 0.0, 1.0).unwrap();
        for bit in [false, true] {
            let input = InputStream::constant(bit);
            let g = golden_run(&l, &input, t, 20).unwrap();
            for s in 0..n {
                for pair in [(0, 1), (0, 2), (1, 2)] {
                    for step in 0..64 {
                        let t0 = 100.0 + step as f64 * 200.0 / 64.0;
                        for d in [0.5, 1.5, 30.0, 130.0, 280.0] {
                            let mut f = vec![FaultEvent::illum_upset(ff(s, pair.0), t0, d), FaultEvent::illum_upset(ff(s, pair.1), t0, d)];
                            if s > 0 {
                                f.push(FaultEvent::voter_set(voter(s - 1), t0, d));
                            }
                            let o = run(&l, &input, t, &f, 20).unwrap();
                            for k in diff(&g.bits, &o.bits) {
                                assert_eq!(o.bits[k], !bit, "n {n} s {s} t0 {t0} d {d}");
                            }
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn oracle_is_stable_under_halving_its_step() {
    let l = layout(5);
    let t = TimingParams::new(20.0, 7.0, 1.0).unwrap();
    let input = InputStream::pattern(vec![true, false, false]).unwrap();
    let cases = [
        vec![FaultEvent::illum_upset(ff(2, 0), 51.3, 44.0), FaultEvent::illum_upset(ff(2, 2), 51.3, 44.0)],
        vec![FaultEvent::voter_set(voter(1), 66.0, 1.0)],
        vec![FaultEvent::voter_set(voter(3), 85.5, 2.5), FaultEvent::stuck(ff(4, 1), true, 90.0, StuckUntil::Reset)],
    ];
    for f in &cases {
        let coarse = oracle_run(&l, &input, t, f, 16, OracleConfig::for_delta(1.0).with_time_step(0.25)).unwrap();
        let fine = oracle_run(&l, &input, t, f, 16, OracleConfig::for_delta(1.0)).unwrap();
        let finer = oracle_run(&l, &input, t, f, 16, OracleConfig::for_delta(1.0).with_time_step(1.0 / 32.0)).unwrap();
        assert_eq!(coarse, fine);
        assert_eq!(fine, finer);
    }
}
