mod common;

use common::{assert_symmetric_psd, nav_world, nees_envelope, rms, run_navigation};
use proptest::prelude::*;
use reefsurvey::vehicle::{
    simulate_sensors, step_dynamics, wrap_angle, Command, DynamicsConfig, EkfConfig, EkfEstimate, Measurement,
    SensorConfig, VehicleState,
};
use reefsurvey::rng::{substream, Domain};

#[test]
fn exact_sensors_reproduce_dead_reckoning() {
    let world = nav_world();
    let sensors = SensorConfig { usbl_period_s: None, ..SensorConfig::noiseless() };
    let ekf = EkfConfig::matching(&sensors);
    let dynamics = DynamicsConfig::default();
    let dt = 0.05;
    let mut truth = VehicleState::at(10.0, 10.0, 5.0, 0.5);
    let mut est = EkfEstimate::initial(truth.x, truth.y, truth.z, truth.heading, &ekf);
    // independent integration of the commanded trajectory
    let (mut x, mut y, mut psi) = (truth.x, truth.y, truth.heading);
    let mut rng = substream(0, Domain::Sensors, 0);
    for k in 1..=2000 {
        let t = k as f64 * dt;
        let command = Command { surge: 0.3 + 0.1 * (t / 7.0).cos(), sway: 0.05, heave: 0.0, yaw_rate: 0.2 * (t / 11.0).sin() };
        let before = truth;
        truth = step_dynamics(&truth, &command, dt, &dynamics).unwrap();
        x += (truth.surge * before.heading.cos() - truth.sway * before.heading.sin()) * dt;
        y += (truth.surge * before.heading.sin() + truth.sway * before.heading.cos()) * dt;
        psi = wrap_angle(psi + truth.yaw_rate * dt);
        let r = simulate_sensors(&truth, &world, &sensors, t, &mut rng);
        est = est.predict(r.dvl_velocity, r.imu_yaw_rate, dt, &ekf).unwrap();
    }
    assert!((est.mean[0] - x).abs() < 1e-9 && (est.mean[1] - y).abs() < 1e-9);
    assert!((est.mean[0] - truth.x).abs() < 1e-9 && (est.mean[1] - truth.y).abs() < 1e-9);
    assert!(wrap_angle(est.mean[3] - psi).abs() < 1e-9);
}

#[test]
fn usbl_bounds_steady_state_error() {
    let world = nav_world();
    let sensors = SensorConfig::default();
    let samples = run_navigation(&world, &sensors, 1, 300.0, assert_symmetric_psd);
    let steady = rms(samples.iter().filter(|s| s.t >= 30.0).map(|s| s.position_error()));
    assert!(steady <= 2.0 * sensors.usbl_std, "steady-state rms {steady}");
}

#[test]
fn dead_reckoning_error_grows_without_usbl() {
    let world = nav_world();
    let sensors = SensorConfig { usbl_period_s: None, ..SensorConfig::default() };
    let runs: Vec<_> = (0..30).map(|seed| run_navigation(&world, &sensors, seed, 600.0, |_| ())).collect();
    let at = |t: f64| rms(runs.iter().map(|r| r.iter().find(|s| (s.t - t).abs() < 1e-6).unwrap().position_error()));
    assert!(at(600.0) > at(60.0), "{} vs {}", at(600.0), at(60.0));
}

#[test]
fn monte_carlo_nees_is_consistent() {
    let world = nav_world();
    let sensors = SensorConfig::default();
    let runs = 100;
    let all: Vec<_> = (0..runs as u64).map(|seed| run_navigation(&world, &sensors, 100 + seed, 60.0, |_| ())).collect();
    let (lo, hi) = nees_envelope(4, runs);
    let checks = all[0].len();
    let inside = (0..checks)
        .filter(|&i| {
            let mean = all.iter().map(|r| r[i].nees()).sum::<f64>() / runs as f64;
            mean >= lo && mean <= hi
        })
        .count();
    assert!(inside as f64 >= 0.9 * checks as f64, "{inside}/{checks} inside [{lo:.3}, {hi:.3}]");
}

fn arb_measurement() -> impl Strategy<Value = (Measurement, Vec<f64>)> {
    prop_oneof![
        (-50.0..50.0f64, -50.0..50.0f64, 0.01..4.0f64, -0.5..0.5f64).prop_map(|(x, y, r, c)| {
            let off = c * r;
            (Measurement::Usbl { x, y }, vec![r, off, off, r])
        }),
        (0.0..20.0f64, 1e-4..1.0f64).prop_map(|(z, r)| (Measurement::Depth(z), vec![r])),
        (-10.0..10.0f64, 1e-5..1.0f64).prop_map(|(h, r)| (Measurement::Heading(h), vec![r])),
    ]
}

#[derive(Debug, Clone)]
enum Op {
    Predict([f64; 3], f64, f64),
    Update(Measurement, Vec<f64>),
}

fn arb_op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (prop::array::uniform3(-2.0..2.0f64), -1.0..1.0f64, 0.001..1.0f64).prop_map(|(v, r, dt)| Op::Predict(v, r, dt)),
        arb_measurement().prop_map(|(m, r)| Op::Update(m, r)),
    ]
}

proptest! {
    #[test]
    fn covariance_stays_symmetric_psd(ops in prop::collection::vec(arb_op(), 1..60), heading in -4.0..4.0f64) {
        let cfg = EkfConfig { random_walk_std: 0.01, ..EkfConfig::default() };
        let mut est = EkfEstimate::initial(1.0, 2.0, 3.0, heading, &cfg);
        for op in ops {
            let before = est.trace();
            est = match op {
                Op::Predict(v, r, dt) => {
                    let next = est.predict(v, r, dt, &cfg).unwrap();
                    // with the motion Jacobian at identity the covariance can only grow
                    let still = est.predict([0.0; 3], r, dt, &cfg).unwrap();
                    prop_assert!(still.trace() >= before - 1e-12);
                    next
                }
                Op::Update(m, r) => {
                    let next = est.update(m, &r).unwrap();
                    prop_assert!(next.trace() <= before * (1.0 + 1e-9) + 1e-12);
                    next
                }
            };
            assert_symmetric_psd(&est);
            prop_assert!(est.mean[3] > -std::f64::consts::PI && est.mean[3] <= std::f64::consts::PI);
        }
    }

    #[test]
    fn heading_measurement_is_periodic(h in -3.2..3.2f64, mean in -3.2..3.2f64, r in 1e-4..1.0f64) {
        let est = EkfEstimate::initial(0.0, 0.0, 0.0, mean, &EkfConfig::default());
        let a = est.update(Measurement::Heading(h), &[r]).unwrap();
        let b = est.update(Measurement::Heading(h + std::f64::consts::TAU), &[r]).unwrap();
        prop_assert!(wrap_angle(a.mean[3] - b.mean[3]).abs() < 1e-12);
        prop_assert_eq!(a.cov, b.cov);
    }

    #[test]
    fn dynamics_keep_heading_wrapped_and_speed_limited(
        cmds in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, -1.0..1.0f64, -2.0..2.0f64), 1..100),
        dt in 0.01..0.5f64,
    ) {
        let cfg = DynamicsConfig::default();
        let mut s = VehicleState::at(0.0, 0.0, 5.0, 3.0);
        for (u, v, w, r) in cmds {
            s = step_dynamics(&s, &Command { surge: u, sway: v, heave: w, yaw_rate: r }, dt, &cfg).unwrap();
            prop_assert!(s.heading > -std::f64::consts::PI && s.heading <= std::f64::consts::PI);
            prop_assert!(s.ground_speed() <= cfg.max_speed + 1e-12);
            prop_assert!(s.z >= 0.0);
        }
    }
}
