use std::collections::BTreeSet;
use std::path::PathBuf;

use swarmform::engine::rng::{stream, Subsystem};
use swarmform::engine::trace::{MemorySink, Trace};
use swarmform::engine::Simulation;
use swarmform::protocol::Phase;
use swarmform::{load_scenario, EstimatorKind, Pose, ScenarioConfig};

use rand::Rng;

fn arrowhead() -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/arrowhead36.json");
    load_scenario(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

fn record(config: ScenarioConfig) -> (swarmform::engine::RunReport, Vec<String>) {
    let mut sink = MemorySink::default();
    let report = Simulation::new(config).unwrap().run_with(&mut sink).unwrap();
    (report, sink.lines)
}

#[test]
fn empty_world_only_advances_the_clock() {
    let mut sim = Simulation::new(ScenarioConfig::default()).unwrap();
    for k in 0..3 {
        assert_eq!(sim.tick(), k);
        assert!(sim.step().unwrap().is_empty());
    }
    assert_eq!(sim.tick(), 3);
    assert!((sim.clock() - 3.0 * 0.05).abs() < 1e-15);
}

#[test]
fn robot_on_its_target_finishes_at_tick_one_without_moving() {
    let config = ScenarioConfig {
        initial_poses: vec![Pose::new(0.5, 0.25, 0.0).unwrap()],
        targets: vec![[0.5, 0.25]],
        ..Default::default()
    };
    let (report, lines) = record(config);
    assert_eq!(report.completion_tick, Some(1));
    assert_eq!(report.total_distance(), 0.0);
    assert_eq!(lines.len(), 2);
}

#[test]
fn short_budget_reports_a_timeout_instead_of_failing() {
    let mut config = arrowhead();
    config.sim.max_ticks = 1;
    let (report, lines) = record(config);
    assert!(report.timeout);
    assert_eq!(report.completion_tick, None);
    assert_eq!(report.ticks, 1);
    assert_eq!(lines.len(), 1 + 36);
}

#[test]
fn trace_invariants_hold_over_a_partial_run() {
    let mut config = arrowhead();
    config.sim.max_ticks = 1500;
    config.sim.seed = 3;
    let (v_max, dt) = (config.robot.v_max, config.sim.dt);
    let (report, lines) = record(config.clone());

    // Digest: FNV-1a over every line plus its newline.
    let digest = lines.iter().fold(0xcbf2_9ce4_8422_2325, |h, l| fnv1a(b"\n", fnv1a(l.as_bytes(), h)));
    assert_eq!(digest, report.digest);

    let trace = Trace::read(lines.join("\n").as_bytes()).unwrap();
    assert_eq!(trace.header.seed, 3);
    assert_eq!(trace.header.config, config);

    let ids: BTreeSet<usize> = (0..36).collect();
    let mut prev = config.initial_poses.clone();
    for (tick, slice) in trace.events.chunks(36).enumerate() {
        // Conservation and (tick, id) ordering.
        assert!(slice.iter().all(|e| e.tick == tick as u64));
        assert_eq!(slice.iter().map(|e| e.robot).collect::<Vec<_>>(), ids.iter().copied().collect::<Vec<_>>());
        for e in slice {
            let p = &mut prev[e.robot];
            let step = (e.true_pose[0] - p.x).hypot(e.true_pose[1] - p.y);
            assert!(step <= v_max * dt + 1e-12, "robot {} moved {step} at tick {tick}", e.robot);
            p.x = e.true_pose[0];
            p.y = e.true_pose[1];
        }
    }
    assert_eq!(trace.events.len(), 36 * 1500);
    assert_eq!(trace.transitions(), report.transitions);
}

#[test]
fn every_row_uses_the_documented_phases_in_order() {
    let mut config = arrowhead();
    config.sim.seed = 5;
    let (report, _) = record(config);
    assert!(report.completion_tick.is_some());
    let rank = |p: Phase| match p {
        Phase::Phase0Check => 0,
        Phase::WaitRowUnlock => 1,
        Phase::Phase1ToStart => 2,
        Phase::StagedDelay => 3,
        Phase::Phase2ToTarget => 4,
        Phase::Done => 5,
    };
    for t in &report.transitions {
        assert!(rank(t.to) > rank(t.from), "{t:?}");
    }
}

#[test]
fn ekf_mode_completes_the_arrowhead() {
    let mut config = arrowhead();
    config.sim.estimator = EstimatorKind::Ekf;
    config.sim.seed = 21;
    let (report, _) = record(config);
    assert!(report.completion_tick.is_some());
    assert_eq!(report.collisions, 0);
    assert!(report.max_terminal_error <= 0.05);
}

#[test]
fn subsystem_streams_do_not_share_draws() {
    let mut enc = stream(4, 2, Subsystem::Encoders);
    let alone: Vec<u64> = (0..16).map(|_| enc.random()).collect();
    let mut enc = stream(4, 2, Subsystem::Encoders);
    let mut gps = stream(4, 2, Subsystem::Gps);
    let interleaved: Vec<u64> = (0..16)
        .map(|_| {
            let _: f64 = gps.random();
            enc.random()
        })
        .collect();
    assert_eq!(alone, interleaved);
}
