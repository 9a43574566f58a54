use std::collections::HashSet;

use collapse_walk::process::{simulate, EventKind, StopCondition, WalkerState};
use collapse_walk::{rng, stats, Bond, ModelParams, Site};
use proptest::prelude::*;

fn params_strategy() -> impl Strategy<Value = ModelParams> {
    (
        0.1f64..5.0,
        prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0],
        0.1f64..5.0,
        1usize..=3,
    )
        .prop_map(|(l, p, m, d)| ModelParams::new(l, p, m, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Replays the event log against an independent bookkeeping of position
    /// and broken bonds.
    #[test]
    fn event_log_is_consistent(params in params_strategy(), seed in any::<u64>()) {
        let traj = simulate(&params, seed, StopCondition::Events(400)).unwrap();
        let mut pos = Site::origin(params.dim);
        let mut broken: HashSet<Bond> = HashSet::new();
        let mut last_time = 0.0;
        let mut attempts = 0;
        for e in &traj.events {
            prop_assert!(e.time > last_time);
            last_time = e.time;
            let before = broken.len();
            match &e.kind {
                EventKind::Jump { bond, direction, broke } => {
                    attempts += 1;
                    prop_assert_eq!(bond, &Bond::incident(&pos, *direction));
                    prop_assert!(!broken.contains(bond));
                    pos.shift(*direction);
                    if *broke {
                        prop_assert!(params.p > 0.0);
                        broken.insert(bond.clone());
                    }
                }
                EventKind::Blocked => {
                    attempts += 1;
                    for axis in 0..params.dim {
                        for positive in [true, false] {
                            let d = collapse_walk::Direction { axis, positive };
                            prop_assert!(broken.contains(&Bond::incident(&pos, d)));
                        }
                    }
                }
                EventKind::Repair { bond } => {
                    prop_assert!(broken.remove(bond));
                }
            }
            prop_assert!(broken.len().abs_diff(before) <= 1);
            prop_assert_eq!(e.broken_count, broken.len());
            prop_assert_eq!(e.attempts, attempts);
            prop_assert!(pos.l1_norm() <= attempts);
            if params.p == 0.0 {
                prop_assert!(broken.is_empty());
            }
        }
        prop_assert_eq!(&traj.final_state.position, &pos);
    }

    #[test]
    fn replay_is_deterministic(params in params_strategy(), seed in any::<u64>()) {
        let a = simulate(&params, seed, StopCondition::Horizon(20.0)).unwrap();
        let b = simulate(&params, seed, StopCondition::Horizon(20.0)).unwrap();
        prop_assert_eq!(a.events, b.events);
        prop_assert_eq!(a.final_state, b.final_state);
    }

    /// Positions on a dense grid follow the event log piecewise.
    #[test]
    fn dense_sampling_matches_log(seed in any::<u64>()) {
        let params = ModelParams::line(1.0, 0.7, 2.0).unwrap();
        let traj = simulate(&params, seed, StopCondition::Horizon(30.0)).unwrap();
        let times: Vec<f64> = (0..=3000).map(|i| i as f64 * 0.01).collect();
        let got = traj.sample_positions(&times).unwrap();
        let mut pos = Site::origin(1);
        let mut k = 0;
        for (t, site) in times.iter().zip(&got) {
            while k < traj.events.len() && traj.events[k].time <= *t {
                if let EventKind::Jump { direction, .. } = traj.events[k].kind {
                    pos.shift(direction);
                }
                k += 1;
            }
            prop_assert_eq!(site, &pos);
        }
    }
}

#[test]
fn fixed_seed_replay_at_high_repair_rate() {
    let params = ModelParams::line(1.0, 1.0, 10.0).unwrap();
    let a = simulate(&params, 42, StopCondition::Horizon(1000.0)).unwrap();
    let b = simulate(&params, 42, StopCondition::Horizon(1000.0)).unwrap();
    assert_eq!(a.events, b.events);
}

/// Holding times at a fixed broken count are exponential with rate
/// `lambda + k mu`.
#[test]
fn holding_time_means() {
    let params = ModelParams::line(1.0, 0.5, 1.0).unwrap();
    let mut rng = rng::stream(2024);
    let mut state = WalkerState::new(1);
    let mut holds: [Vec<f64>; 3] = Default::default();
    let target = 100_000;
    while holds.iter().any(|h| h.len() < target) {
        let (k, t0) = (state.broken_count(), state.clock);
        let e = state.step(&params, &mut rng);
        if k < 3 && holds[k].len() < target {
            holds[k].push(e.time - t0);
        }
    }
    for (k, h) in holds.iter().enumerate() {
        let want = 1.0 / (params.lambda + k as f64 * params.mu);
        let (m, se) = (stats::mean(h), stats::std_error(h));
        assert!((m - want).abs() <= 4.0 * se, "k={k}: {m} vs {want} (se {se})");
    }
}

/// In 2D with every incident bond but one broken, the walker takes the
/// remaining one.
#[test]
fn planar_walker_uses_last_intact_bond() {
    let params = ModelParams::new(1.0, 0.0, 1e-9, 2).unwrap();
    let mut state = WalkerState::new(2);
    let origin = Site::origin(2);
    let open = collapse_walk::Direction {
        axis: 1,
        positive: false,
    };
    for axis in 0..2 {
        for positive in [true, false] {
            let d = collapse_walk::Direction { axis, positive };
            if d != open {
                state.broken.insert(Bond::incident(&origin, d));
            }
        }
    }
    let mut rng = rng::stream(1);
    // Repairs are negligible at this rate, so the first event is an attempt.
    let e = state.step(&params, &mut rng);
    assert!(matches!(e.kind, EventKind::Jump { direction, .. } if direction == open));
    assert_eq!(state.position, Site::from_coords(&[0, -1]));
}
