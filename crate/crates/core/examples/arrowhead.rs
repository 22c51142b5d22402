//! Prints the bundled 36-robot arrowhead scenario as JSON.
//!
//! The robots start in two rectangular blocks of 6 columns by 3 levels, below
//! and outside the shape, one per side, facing up. The generator checks that
//! the planned assignment keeps every robot on its own side and never parks a
//! later row above an earlier one in the same column.
//!
//! With `--prepositioned` every robot starts on a target cell instead, which
//! exercises the early formation-complete check.
//!
//! Usage: `cargo run --example arrowhead [-- --prepositioned] > scenarios/<name>.json`.

use std::f64::consts::FRAC_PI_2;

use swarmform::protocol::{Plan, Side};
use swarmform::{Pose, ScenarioConfig};

/// Cell abscissae of each arrowhead row, in cell units from the left edge.
const ROWS: [(f64, &[i32]); 6] = [
    (1.25, &[4, 5]),
    (1.0, &[3, 4, 5, 6]),
    (0.75, &[2, 3, 4, 5, 6, 7]),
    (0.5, &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]),
    (0.25, &[0, 1, 2, 3, 6, 7, 8, 9]),
    (0.0, &[0, 1, 2, 7, 8, 9]),
];

fn main() {
    let c = 0.25;
    let targets: Vec<[f64; 2]> = ROWS
        .iter()
        .flat_map(|&(y, xs)| xs.iter().map(move |&i| [c * f64::from(i), y]))
        .collect();

    let spacing = 0.35;
    let mut poses = Vec::new();
    for level in 0..3 {
        let y = -0.5 - spacing * f64::from(level);
        for col in 0..6 {
            let dx = spacing * f64::from(col);
            poses.push(Pose::new(3.25 + dx, y, FRAC_PI_2).unwrap());
            poses.push(Pose::new(-1.0 - dx, y, FRAC_PI_2).unwrap());
        }
    }

    if std::env::args().any(|a| a == "--prepositioned") {
        poses = targets.iter().map(|t| Pose::new(t[0], t[1], FRAC_PI_2).unwrap()).collect();
    }

    let mut config = ScenarioConfig {
        initial_poses: poses,
        targets,
        ..Default::default()
    };
    config.sim.seed = 1;
    config.validate().expect("generated scenario is valid");

    let p = &config.protocol;
    let plan = Plan::new(&config.shape().unwrap(), &config.initial_poses, p.k_row_size, p.start_offset, p.epsilon_pos)
        .unwrap();
    for a in plan.assignments.iter().filter(|a| config.initial_poses[a.robot].position() != a.target) {
        let x = config.initial_poses[a.robot].x;
        let own_side = match a.side {
            Side::Right => x > plan.x_right,
            Side::Left => x < plan.x_left,
        };
        assert!(own_side, "robot {} starts on the wrong side of row {}", a.robot, a.row);
        for b in &plan.assignments {
            let q = config.initial_poses[b.robot];
            let above = (q.x - x).abs() < 1e-9 && q.y > config.initial_poses[a.robot].y;
            assert!(!above || b.row <= a.row, "robot {} (row {}) blocks robot {} (row {})", b.robot, b.row, a.robot, a.row);
        }
    }
    println!("{}", config.to_json());
}
