//! Batch experiments: the straight-run estimation study and parameter sweeps.

use nalgebra::SymmetricEigen;
use serde::Serialize;

use crate::engine::rng::{stream, Subsystem};
use crate::engine::{MetricsRow, RunReport, Simulation};
use crate::localization::{sample_gps, ComplementaryFilter, PoseEkf};
use crate::locomotion::{integrate_pose, odometry_step, simulate_encoders, EncoderModel, OdometryState, WheelCommand};
use crate::par::Execution;
use crate::world::{Pose, ScenarioConfig};
use crate::{Error, Result};

/// Pooled position errors of each estimator over a set of straight runs.
#[derive(Debug, Clone, Serialize)]
pub struct EstimationStudy {
    pub runs: usize,
    /// Error samples per estimator, taken at every GPS fix.
    pub samples: usize,
    pub rmse_gps: f64,
    pub rmse_dead_reckoning: f64,
    pub rmse_complementary: f64,
    pub rmse_ekf: f64,
    /// Largest |Σ − Σᵀ| entry seen at any step.
    pub max_asymmetry: f64,
    /// Smallest covariance eigenvalue seen at any step.
    pub min_eigenvalue: f64,
}

#[derive(Debug, Default, Clone, Copy)]
struct SquaredErrors {
    n: usize,
    gps: f64,
    dr: f64,
    comp: f64,
    ekf: f64,
    asym: f64,
    min_eig: f64,
}

/// Drives one robot straight along +x for `distance` meters at `v_max` and
/// scores every estimator against the truth at each GPS fix.
///
/// All estimators see the same encoder stream and the same fixes.
pub fn estimation_study(config: &ScenarioConfig, distance: f64, seeds: &[u64], exec: Execution) -> Result<EstimationStudy> {
    if seeds.is_empty() || !(distance > 0.0) {
        return Err(Error::domain("estimation study needs seeds and a positive distance"));
    }
    let per_seed: Vec<Result<SquaredErrors>> = exec.map(seeds, |&seed| straight_run(config, distance, seed));
    let mut total = SquaredErrors { min_eig: f64::INFINITY, ..Default::default() };
    for s in per_seed {
        let s = s?;
        total.n += s.n;
        total.gps += s.gps;
        total.dr += s.dr;
        total.comp += s.comp;
        total.ekf += s.ekf;
        total.asym = total.asym.max(s.asym);
        total.min_eig = total.min_eig.min(s.min_eig);
    }
    let rmse = |sum: f64| (sum / total.n as f64).sqrt();
    Ok(EstimationStudy {
        runs: seeds.len(),
        samples: total.n,
        rmse_gps: rmse(total.gps),
        rmse_dead_reckoning: rmse(total.dr),
        rmse_complementary: rmse(total.comp),
        rmse_ekf: rmse(total.ekf),
        max_asymmetry: total.asym,
        min_eigenvalue: total.min_eig,
    })
}

fn straight_run(config: &ScenarioConfig, distance: f64, seed: u64) -> Result<SquaredErrors> {
    let (robot, sensing, dt) = (&config.robot, &config.sensing, config.sim.dt);
    let model = EncoderModel {
        wheel_radius: robot.wheel_radius,
        wheelbase: robot.wheelbase,
        k1: sensing.k1,
        k2: sensing.k2,
    };
    let start = Pose::new(0.0, 0.0, 0.0)?;
    let mut truth = start;
    let mut dr = OdometryState::new(start, sensing.k1, sensing.k2);
    let mut comp = ComplementaryFilter::new(start, sensing.alpha, sensing.k1, sensing.k2)?;
    let mut ekf = PoseEkf::new(start, sensing.sigma_gps, sensing.k1, sensing.k2);
    let mut enc_rng = stream(seed, 0, Subsystem::Encoders);
    let mut gps_rng = stream(seed, 0, Subsystem::Gps);
    let ticks = (distance / (robot.v_max * dt)).round() as u64;
    let cmd = WheelCommand::new(robot.v_max, 0.0);

    let mut acc = SquaredErrors { min_eig: f64::INFINITY, ..Default::default() };
    for tick in 1..=ticks {
        truth = integrate_pose(&truth, cmd, dt)?;
        let (r, l) = simulate_encoders(cmd, dt, &model, &mut enc_rng);
        dr = odometry_step(&dr, r, l, robot.wheel_radius, robot.wheelbase);
        comp.on_encoders(r, l, robot.wheel_radius, robot.wheelbase);
        ekf.on_encoders(r, l, robot.wheel_radius, robot.wheelbase, dt);
        if tick.is_multiple_of(u64::from(sensing.gps_every_ticks)) {
            let fix = sample_gps(truth.position(), sensing.sigma_gps, tick as f64 * dt, &mut gps_rng);
            comp.on_gps(fix);
            ekf.on_gps(fix)?;
            acc.n += 1;
            acc.gps += truth.distance_to(fix.position()).powi(2);
            acc.dr += truth.distance_to(dr.pose.position()).powi(2);
            acc.comp += truth.distance_to(comp.estimate().position()).powi(2);
            acc.ekf += truth.distance_to(ekf.estimate().position()).powi(2);
        }
        let sigma = ekf.state().sigma;
        acc.asym = acc.asym.max((sigma - sigma.transpose()).amax());
        let eig = SymmetricEigen::new(sigma).eigenvalues.min();
        acc.min_eig = acc.min_eig.min(eig);
    }
    Ok(acc)
}

/// One sweep cell: the metrics row plus the full report when the run succeeded.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub row: MetricsRow,
    pub report: Option<RunReport>,
}

/// Runs the cross product of loss values and seeds.
///
/// Rows come back loss-major, seed-minor, whatever the schedule. A run that
/// fails outright is recorded in its row and the sweep carries on.
pub fn sweep(base: &ScenarioConfig, losses: &[f64], seeds: &[u64], exec: Execution) -> Result<Vec<SweepRun>> {
    if losses.is_empty() || seeds.is_empty() {
        return Err(Error::domain("sweep grid is empty"));
    }
    let grid: Vec<(f64, u64)> = losses.iter().flat_map(|&p| seeds.iter().map(move |&s| (p, s))).collect();
    Ok(exec.map(&grid, |&(loss, seed)| {
        let mut config = base.clone();
        config.comms.loss_probability = loss;
        config.sim.seed = seed;
        match Simulation::new(config).and_then(Simulation::run) {
            Ok(report) => SweepRun { row: report.metrics(), report: Some(report) },
            Err(e) => SweepRun {
                row: MetricsRow {
                    seed,
                    loss_probability: loss,
                    completion_tick: None,
                    collisions: 0,
                    messages_sent: 0,
                    messages_lost: 0,
                    max_terminal_error_m: f64::NAN,
                    timeout_flag: false,
                    error: e.to_string(),
                },
                report: None,
            },
        }
    }))
}
