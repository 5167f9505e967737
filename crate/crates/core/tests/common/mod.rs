#![allow(dead_code)]

use rand_distr::{Distribution, StandardNormal};
use reefsurvey::mission::filter_step;
use reefsurvey::rng::{substream, Domain};
use reefsurvey::vehicle::{
    simulate_sensors, step_dynamics, Command, DynamicsConfig, EkfConfig, EkfEstimate, SensorConfig, VehicleState,
};
use reefsurvey::world::{generate_world, GridWorld, WorldConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub struct NavSample {
    pub t: f64,
    pub truth: VehicleState,
    pub estimate: EkfEstimate,
}

impl NavSample {
    pub fn position_error(&self) -> f64 {
        (self.truth.x - self.estimate.mean[0]).hypot(self.truth.y - self.estimate.mean[1])
    }

    pub fn nees(&self) -> f64 {
        self.estimate.nees([self.truth.x, self.truth.y, self.truth.z, self.truth.heading])
    }
}

pub fn nav_world() -> GridWorld {
    generate_world(&WorldConfig { width_m: 50.0, height_m: 50.0, ..WorldConfig::default() }, 0).unwrap()
}

/// Drives a weaving survey-like trajectory and runs the filter on simulated
/// sensors, sampling once per second. `step_check` sees every step.
pub fn run_navigation(
    world: &GridWorld,
    sensors: &SensorConfig,
    seed: u64,
    duration_s: f64,
    mut step_check: impl FnMut(&EkfEstimate),
) -> Vec<NavSample> {
    let dt = 0.05;
    let dynamics = DynamicsConfig::default();
    let ekf = EkfConfig::matching(sensors);
    let mut rng = substream(seed, Domain::Experiment, 0);
    let mut truth = VehicleState::at(25.0, 25.0, 7.0, 0.0);
    let mut draw = |s: f64| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        s * z
    };
    let mut est = EkfEstimate::initial(
        truth.x + draw(ekf.initial_position_std),
        truth.y + draw(ekf.initial_position_std),
        truth.z + draw(ekf.initial_depth_std),
        truth.heading + draw(ekf.initial_heading_std),
        &ekf,
    );
    let mut sensor_rng = substream(seed, Domain::Sensors, 0);
    let steps = (duration_s / dt).round() as usize;
    let per_sample = (1.0 / dt).round() as usize;
    let mut out = Vec::new();
    for k in 1..=steps {
        let t = k as f64 * dt;
        let command = Command {
            surge: 0.4,
            sway: 0.0,
            heave: 0.05 * (t / 20.0).sin(),
            yaw_rate: 0.12 * (std::f64::consts::TAU * t / 90.0).sin(),
        };
        truth = step_dynamics(&truth, &command, dt, &dynamics).unwrap();
        let readings = simulate_sensors(&truth, world, sensors, t, &mut sensor_rng);
        est = filter_step(&est, &readings, sensors, &ekf, dt).unwrap();
        step_check(&est);
        if k % per_sample == 0 {
            out.push(NavSample { t, truth, estimate: est });
        }
    }
    out
}

/// Two-sided 95% bounds for the mean of `runs` independent chi-square(dof) draws.
pub fn nees_envelope(dof: usize, runs: usize) -> (f64, f64) {
    let chi = ChiSquared::new((dof * runs) as f64).unwrap();
    (chi.inverse_cdf(0.025) / runs as f64, chi.inverse_cdf(0.975) / runs as f64)
}

pub fn assert_symmetric_psd(est: &EkfEstimate) {
    let p = est.covariance();
    let asym = (p - p.transpose()).amax();
    assert!(asym <= 1e-9, "asymmetry {asym}");
    let min_eig = p.symmetric_eigenvalues().min();
    assert!(min_eig >= -1e-9, "eigenvalue {min_eig}");
}

pub fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    (sum / n as f64).sqrt()
}

/// Maximum one-to-one matching of sorted event times within `tol` seconds.
pub fn match_events(truth: &[f64], detected: &[f64], tol: f64) -> usize {
    let (mut i, mut j, mut hits) = (0, 0, 0);
    while i < truth.len() && j < detected.len() {
        let d = detected[j] - truth[i];
        if d.abs() <= tol {
            hits += 1;
            i += 1;
            j += 1;
        } else if d < 0.0 {
            j += 1;
        } else {
            i += 1;
        }
    }
    hits
}

/// Pooled recall and precision of the detector on synthetic windows with
/// Poisson snaps at the given SNR.
pub fn detector_scores(snr_db: f64, rate: f64, windows: usize, seed: u64) -> (f64, f64) {
    use reefsurvey::acoustics::{detect_window, DetectorConfig};
    use reefsurvey::world::{audio, AudioParams};
    let cfg = DetectorConfig::default();
    let base = AudioParams::default();
    let params = AudioParams { snap_amplitude: base.amplitude_for_snr(snr_db, 96_000, cfg.window), ..base };
    let (mut truth_n, mut det_n, mut hits) = (0, 0, 0);
    for w in 0..windows {
        let mut rng = substream(seed, Domain::Audio, w as u64);
        let window = audio::synthesize(&params, rate, 10.0, 96_000, false, &mut rng).unwrap();
        let det = detect_window(&window, &cfg).unwrap();
        truth_n += window.truth_snap_times.len();
        det_n += det.count;
        hits += match_events(&window.truth_snap_times, &det.times, 2e-3);
    }
    (hits as f64 / truth_n as f64, hits as f64 / det_n.max(1) as f64)
}
