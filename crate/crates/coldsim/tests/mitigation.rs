//! End-to-end policy verification: retention-aware refresh and PRVR
//! soundness, failure visibility when a policy is underpowered, and safety
//! monotonicity of the refresh period.

mod common;

use coldsim::array::{build_array, DataPattern};
use coldsim::characterize::{bisect_time_to_first_flip, profile_disturbance, ExperimentSpec};
use coldsim::engine::Temperature;
use coldsim::mitigate::{
    classify_weak_rows, verify_policy, weak_row_indices, PrvrConfig, RaidrConfig, RefreshPolicy,
    WeakSetVariant,
};
use coldsim::stream::{single_aggressor_counted, CommandStream, TimingParams};
use coldsim::units::MS;
use common::{constant_profile, geometry, immortalize, worst_case_init};

fn aggression(bank: usize, row: usize, t: &TimingParams, duration: f64) -> CommandStream {
    let mut s = single_aggressor_counted(bank, row, t, (duration / t.loop_period()) as u64);
    s.extend_to(duration);
    s
}

fn base_spec(duration: f64) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(TimingParams::default(), Temperature::reference(), duration);
    s.victim_pattern = Some(DataPattern::ALL_ONE);
    // 16-row subarrays: the default +-8 guardband would swallow them.
    s.exclusion_radius = 2;
    s
}

#[test]
fn periodic_refresh_slower_than_weakest_cell_fails() {
    // Weakest flip time under the press is ~20 ms; a 64 ms-period refresh
    // must let at least one flip through, a 4 ms one must not.
    let g = geometry(3, 16, 8);
    let t = TimingParams::default();
    let duration = 200.0 * MS;
    let build = || {
        let mut a = build_array(g, &constant_profile(20.0, 100.0, None), 3).unwrap();
        worst_case_init(&mut a, 24);
        a
    };
    let agg = aggression(0, 24, &t, duration);

    let mut arr = build();
    let slow = verify_policy(
        &mut arr,
        &agg,
        &RefreshPolicy::Periodic { window: 512.0 * MS },
        duration,
        &t,
        &Temperature::reference(),
    )
    .unwrap();
    assert!(!slow.is_sound(), "under-refreshing must be caught");

    let mut arr = build();
    let fast = verify_policy(
        &mut arr,
        &agg,
        &RefreshPolicy::Periodic { window: 4.0 * MS },
        duration,
        &t,
        &Temperature::reference(),
    )
    .unwrap();
    assert!(fast.is_sound(), "{} flips", fast.flips.len());
    assert!(fast.conflicts > 0, "refresh lands inside open windows");
}

#[test]
fn shrinking_the_refresh_period_never_adds_flips() {
    // Steady-state observation: the horizon spans several windows so every
    // row sees full rotation gaps. Retention (140 ms) straddles the window
    // range, so the flip sets shrink strictly as the window shrinks.
    let g = geometry(3, 16, 8);
    let t = TimingParams::default();
    let duration = 2048.0 * MS;
    for seed in [1u64, 5, 9] {
        let mut previous: Option<Vec<(usize, usize, usize)>> = None;
        let mut sizes = Vec::new();
        for window in [512.0 * MS, 256.0 * MS, 128.0 * MS, 64.0 * MS] {
            let mut arr = build_array(g, &constant_profile(30.0, 140.0, None), seed).unwrap();
            worst_case_init(&mut arr, 24);
            let agg = aggression(0, 24, &t, duration);
            let v = verify_policy(
                &mut arr,
                &agg,
                &RefreshPolicy::Periodic { window },
                duration,
                &t,
                &Temperature::reference(),
            )
            .unwrap();
            let mut flips: Vec<_> = v
                .flips
                .records
                .iter()
                .map(|r| (r.subarray, r.row, r.col))
                .collect();
            flips.sort_unstable();
            if let Some(prev) = &previous {
                for f in &flips {
                    assert!(
                        prev.contains(f),
                        "seed {seed}, window {window}: new flip {f:?} at a shorter period"
                    );
                }
            }
            sizes.push(flips.len());
            previous = Some(flips);
        }
        assert!(
            sizes[0] > sizes[3],
            "seed {seed}: expected strictly fewer flips at 64 ms than 512 ms, got {sizes:?}"
        );
    }
}

#[test]
fn exact_raidr_is_sound_and_bloom_overrefreshes() {
    let g = geometry(3, 16, 8);
    let t = TimingParams::default();
    let duration = 300.0 * MS;
    let t_weak = 64.0 * MS;
    let t_strong = 256.0 * MS;
    // Flip times comfortably above t_weak so weak-rate refresh holds them.
    let dist = constant_profile(90.0, 400.0, None);
    let template = build_array(g, &dist, 21).unwrap();
    let spec = base_spec(duration);
    let profile = profile_disturbance(&template, 0, t_strong, &spec).unwrap();
    assert!(
        !weak_row_indices(&profile, t_strong).is_empty(),
        "scenario must classify some weak rows"
    );

    let mut counts = Vec::new();
    for variant in [WeakSetVariant::Bitmap, WeakSetVariant::Bloom] {
        let weak = classify_weak_rows(&profile, t_strong, variant);
        let mut arr = template.clone();
        worst_case_init(&mut arr, 24);
        let agg = aggression(0, 24, &t, duration);
        let v = verify_policy(
            &mut arr,
            &agg,
            &RefreshPolicy::Raidr(RaidrConfig::new(weak, t_weak, t_strong).unwrap()),
            duration,
            &t,
            &Temperature::reference(),
        )
        .unwrap();
        assert!(v.is_sound(), "{variant:?}: {} flips", v.flips.len());
        counts.push(v.ref_row_count);
    }
    assert!(
        counts[1] >= counts[0],
        "bloom ({}) must refresh at least as many rows as bitmap ({})",
        counts[1],
        counts[0]
    );
}

#[test]
fn adequately_parameterized_prvr_is_sound() {
    let g = geometry(3, 16, 8);
    let t = TimingParams::default();
    let duration = 300.0 * MS;
    let template = build_array(g, &constant_profile(40.0, 200.0, None), 33).unwrap();

    // Measure the time to the first flip, then budget half of it.
    let mut scratch = template.clone();
    let spec = base_spec(duration);
    let measured = bisect_time_to_first_flip(&mut scratch, 0, &spec, 1)
        .unwrap()
        .time_to_first_flip
        .expect("aggression flips something");
    let mut arr = template.clone();
    worst_case_init(&mut arr, 24);
    let agg = aggression(0, 24, &t, duration);
    let v = verify_policy(
        &mut arr,
        &agg,
        &RefreshPolicy::Prvr(PrvrConfig {
            t_first: measured / 2.0,
            trigger_fraction: 0.5,
        }),
        duration,
        &t,
        &Temperature::reference(),
    )
    .unwrap();
    assert!(v.is_sound(), "{} flips", v.flips.len());
    assert!(v.ref_row_count > 0);
}

#[test]
fn overstated_prvr_budget_reports_flips() {
    // Claiming twice the real time to the first flip makes the pass too
    // slow; the violation must be reported, not masked.
    let g = geometry(3, 16, 8);
    let t = TimingParams::default();
    let duration = 300.0 * MS;
    let template = {
        let mut a = build_array(g, &constant_profile(1.0, 1.0, None), 17).unwrap();
        immortalize(&mut a);
        // One victim that fails mid-pass when the budget is overstated.
        let mut p = *a.profile(0, 20, 2);
        p.t_flip_gnd = 30.0 * MS;
        p.t_flip_half = f64::INFINITY;
        p.t_flip_vdd = f64::INFINITY;
        a.set_profile(0, 20, 2, p);
        a
    };
    let mut arr = template.clone();
    worst_case_init(&mut arr, 24);
    let agg = aggression(0, 24, &t, duration);
    let v = verify_policy(
        &mut arr,
        &agg,
        &RefreshPolicy::Prvr(PrvrConfig {
            t_first: 62.0 * MS, // roughly 2x the true ~30 ms
            trigger_fraction: 0.5,
        }),
        duration,
        &t,
        &Temperature::reference(),
    )
    .unwrap();
    assert!(!v.is_sound(), "overstated budget must be caught");

    // The honest budget protects the same cell.
    let mut arr = template.clone();
    worst_case_init(&mut arr, 24);
    let v = verify_policy(
        &mut arr,
        &agg,
        &RefreshPolicy::Prvr(PrvrConfig {
            t_first: 15.0 * MS,
            trigger_fraction: 0.5,
        }),
        duration,
        &t,
        &Temperature::reference(),
    )
    .unwrap();
    assert!(v.is_sound(), "{} flips", v.flips.len());
}

#[test]
fn classify_weak_rows_examples() {
    // Build a profile by hand: all cells above T except one at 500 ms.
    let g = geometry(1, 8, 4);
    let arr = build_array(g, &constant_profile(2000.0, 4000.0, None), 2).unwrap();
    let spec = base_spec(64.0 * MS);
    let profile = profile_disturbance(&arr, 0, 1024.0 * MS, &spec).unwrap();
    let weak = weak_row_indices(&profile, 1024.0 * MS);
    assert!(
        weak.is_empty(),
        "all flip times exceed the window: {weak:?}"
    );

    let mut arr2 = build_array(g, &constant_profile(2000.0, 4000.0, None), 2).unwrap();
    let mut p = *arr2.profile(0, 5, 1);
    p.t_flip_gnd = 200.0 * MS;
    p.t_flip_half = 500.0 * MS;
    arr2.set_profile(0, 5, 1, p);
    let profile = profile_disturbance(&arr2, 0, 1024.0 * MS, &spec).unwrap();
    let weak = weak_row_indices(&profile, 1024.0 * MS);
    assert_eq!(weak, vec![5]);
    let set = classify_weak_rows(&profile, 1024.0 * MS, WeakSetVariant::Bitmap);
    assert!(set.query(5));
    assert!(!set.query(4));
}

#[test]
fn verify_policy_counts_refresh_ops() {
    let g = geometry(1, 8, 4);
    let t = TimingParams::default();
    let duration = 64.0 * MS;
    let mut arr = build_array(g, &constant_profile(5000.0, 9000.0, None), 2).unwrap();
    arr.init_all(DataPattern::ALL_ONE);
    let idle = coldsim::stream::idle_stream(0, duration);
    let v = verify_policy(
        &mut arr,
        &idle,
        &RefreshPolicy::Periodic { window: 32.0 * MS },
        duration,
        &t,
        &Temperature::reference(),
    )
    .unwrap();
    // 64 ms / (32 ms / 8192) = 16384 refresh commands.
    assert_eq!(v.ref_all_count, 16_384);
    assert_eq!(v.ref_row_count, 0);
    assert_eq!(v.conflicts, 0);
}
