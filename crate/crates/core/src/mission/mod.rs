//! Lawnmower survey planning and mission execution.
//!
//! The vehicle transits between waypoints under altitude hold, imaging the
//! seafloor at a fixed period, and drifts with thrusters off at waypoints to
//! record clean audio. Everything lands in a [`MissionLog`].

mod log;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use log::{
    AbortMarker, AudioRef, DriftWindow, LogHeader, LogRecord, MissionLog, Mode, AUDIO_DIR, LOG_FILE, LOG_FORMAT,
    LOG_VERSION,
};

use crate::rng::{substream, Domain};
use crate::vehicle::{
    altitude_hold_command, control::depth_hold_heave, simulate_sensors, step_dynamics, waypoint_command,
    AltitudeCommand, DynamicsConfig, EkfConfig, EkfEstimate, GuidanceConfig, Measurement, SensorConfig,
    SensorReadings, VehicleError, VehicleState,
};
use crate::world::{GridWorld, WorldError};

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("invalid mission plan: {0}")]
    Plan(String),
    #[error("invalid mission config: {0}")]
    Config(String),
    #[error("mission log: {0}")]
    Format(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Survey rectangle in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    /// Whether the vehicle drifts on arrival.
    pub drift: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionPlan {
    pub waypoints: Vec<Waypoint>,
    pub altitude_m: f64,
    pub drift_duration_s: f64,
    pub drift_at_every_waypoint: bool,
    pub imaging_period_s: f64,
    pub audio_fs: u32,
}

impl MissionPlan {
    pub fn validate(&self) -> Result<(), MissionError> {
        let bad = |m: &str| Err(MissionError::Plan(m.to_string()));
        if self.waypoints.is_empty() {
            return bad("at least one waypoint is required");
        }
        if self.waypoints.iter().any(|w| !(w.x.is_finite() && w.y.is_finite())) {
            return bad("waypoints must be finite");
        }
        if !(self.drift_duration_s >= 0.0 && self.drift_duration_s.is_finite()) {
            return bad("drift_duration_s must be non-negative");
        }
        if !(self.altitude_m > 0.0) {
            return bad("altitude setpoint must be positive");
        }
        if !(self.imaging_period_s > 0.0) {
            return bad("imaging period must be positive");
        }
        if self.audio_fs < 48_000 {
            return bad("audio sample rate must be at least 48 kHz");
        }
        Ok(())
    }

    pub fn n_drifts(&self) -> usize {
        if self.drift_duration_s > 0.0 {
            self.waypoints.iter().filter(|w| w.drift).count()
        } else {
            0
        }
    }
}

/// Survey-level settings that `plan_lawnmower` copies into the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurveyConfig {
    pub bounds: Option<Bounds>,
    pub leg_spacing_m: f64,
    /// Spacing of intermediate waypoints along each leg; `None` keeps only leg ends.
    pub along_track_spacing_m: Option<f64>,
    pub drift_duration_s: f64,
    pub drift_at_every_waypoint: bool,
    pub altitude_m: f64,
    pub imaging_period_s: f64,
    pub audio_fs: u32,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        Self {
            bounds: None,
            leg_spacing_m: 5.0,
            along_track_spacing_m: None,
            drift_duration_s: 10.0,
            drift_at_every_waypoint: true,
            altitude_m: 1.0,
            imaging_period_s: 0.5,
            audio_fs: 96_000,
        }
    }
}

impl SurveyConfig {
    pub fn plan(&self, default_bounds: Bounds) -> Result<MissionPlan, MissionError> {
        let mut plan = plan_lawnmower(
            self.bounds.unwrap_or(default_bounds),
            self.leg_spacing_m,
            self.drift_duration_s,
            self.altitude_m,
            self.along_track_spacing_m,
        )?;
        plan.imaging_period_s = self.imaging_period_s;
        plan.audio_fs = self.audio_fs;
        if !self.drift_at_every_waypoint {
            plan.drift_at_every_waypoint = false;
            let per_leg = plan.waypoints.len() / legs(self.bounds.unwrap_or(default_bounds).width(), self.leg_spacing_m);
            for (i, w) in plan.waypoints.iter_mut().enumerate() {
                w.drift = (i + 1) % per_leg == 0;
            }
        }
        plan.validate()?;
        Ok(plan)
    }
}

fn steps_across(extent: f64, spacing: f64) -> usize {
    (extent / spacing + 1e-9).floor() as usize + 1
}

fn legs(width: f64, spacing: f64) -> usize {
    steps_across(width, spacing)
}

/// Boustrophedon survey: north-south legs `leg_spacing` apart, starting at
/// the south-west corner. Each leg contributes its two end points, or points
/// every `along_track_spacing` when given.
pub fn plan_lawnmower(
    bounds: Bounds,
    leg_spacing: f64,
    drift_duration_s: f64,
    altitude_m: f64,
    along_track_spacing: Option<f64>,
) -> Result<MissionPlan, MissionError> {
    let bad = |m: String| Err(MissionError::Plan(m));
    if !(bounds.width() > 0.0 && bounds.height() > 0.0) || ![bounds.x_min, bounds.x_max, bounds.y_min, bounds.y_max].iter().all(|v| v.is_finite()) {
        return bad(format!("degenerate bounds {bounds:?}"));
    }
    if !(leg_spacing > 0.0) {
        return bad(format!("leg spacing must be positive, got {leg_spacing}"));
    }
    if leg_spacing > bounds.width() {
        return bad(format!("leg spacing {leg_spacing} m exceeds the survey width {} m", bounds.width()));
    }
    let along: Vec<f64> = match along_track_spacing {
        Some(s) if !(s > 0.0) => return bad(format!("along-track spacing must be positive, got {s}")),
        Some(s) if s > bounds.height() => {
            return bad(format!("along-track spacing {s} m exceeds the survey height {} m", bounds.height()))
        }
        Some(s) => (0..steps_across(bounds.height(), s)).map(|j| bounds.y_min + j as f64 * s).collect(),
        None => vec![bounds.y_min, bounds.y_max],
    };
    let mut waypoints = Vec::new();
    for i in 0..legs(bounds.width(), leg_spacing) {
        let x = bounds.x_min + i as f64 * leg_spacing;
        let ys: Box<dyn Iterator<Item = &f64>> = if i % 2 == 0 { Box::new(along.iter()) } else { Box::new(along.iter().rev()) };
        waypoints.extend(ys.map(|&y| Waypoint { x, y, drift: true }));
    }
    let plan = MissionPlan {
        waypoints,
        altitude_m,
        drift_duration_s,
        drift_at_every_waypoint: true,
        imaging_period_s: 0.5,
        audio_fs: 96_000,
    };
    plan.validate()?;
    Ok(plan)
}

/// Vehicle, sensor and execution settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissionConfig {
    pub dt: f64,
    pub words_per_image: usize,
    pub dynamics: DynamicsConfig,
    pub sensors: SensorConfig,
    /// Filter noise model; defaults to the simulated sensor noise.
    pub ekf: Option<EkfConfig>,
    pub guidance: GuidanceConfig,
    /// Constant world-frame current carrying the vehicle while it drifts.
    pub drift_current: [f64; 2],
    /// Record saturated audio alongside transit images.
    pub record_transit_audio: bool,
    /// Time allowed per waypoint; `None` scales with leg length.
    pub waypoint_timeout_s: Option<f64>,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            words_per_image: 50,
            dynamics: DynamicsConfig::default(),
            sensors: SensorConfig::default(),
            ekf: None,
            guidance: GuidanceConfig::default(),
            drift_current: [0.0, 0.0],
            record_transit_audio: false,
            waypoint_timeout_s: None,
        }
    }
}

impl MissionConfig {
    pub fn ekf_config(&self) -> EkfConfig {
        self.ekf.clone().unwrap_or_else(|| EkfConfig::matching(&self.sensors))
    }

    pub fn validate(&self) -> Result<(), MissionError> {
        let bad = |m: &str| Err(MissionError::Config(m.to_string()));
        if !(self.dt > 0.0 && self.dt <= 0.5) {
            return bad("dt must lie in (0, 0.5]");
        }
        if self.words_per_image == 0 {
            return bad("words_per_image must be at least 1");
        }
        if !(self.dynamics.time_constant_s > 0.0 && self.dynamics.max_speed > 0.0) {
            return bad("dynamics time constant and speed limit must be positive");
        }
        if !(self.guidance.cruise_speed > 0.0 && self.guidance.capture_radius_m > 0.0) {
            return bad("cruise speed and capture radius must be positive");
        }
        if !self.drift_current.iter().all(|v| v.is_finite()) {
            return bad("drift current must be finite");
        }
        self.sensors.validate()?;
        Ok(())
    }
}

fn period_steps(period: f64, dt: f64, what: &str) -> Result<usize, MissionError> {
    let n = (period / dt).round();
    if n < 1.0 || (n * dt - period).abs() > 1e-9 * period.max(1.0) {
        return Err(MissionError::Config(format!("{what} {period} s is not a multiple of dt = {dt} s")));
    }
    Ok(n as usize)
}

fn variance(std: f64) -> f64 {
    std.powi(2).max(1e-12)
}

enum Phase {
    Transit { steps: usize, limit: usize, since_image: usize },
    Drift { index: usize, step: usize, total: usize },
}

/// Runs the survey. A waypoint that cannot be reached in time, or a vehicle
/// leaving the world, ends the mission early with an abort marker.
pub fn execute(plan: &MissionPlan, world: &GridWorld, config: &MissionConfig, seed: u64) -> Result<MissionLog, MissionError> {
    plan.validate()?;
    config.validate()?;
    for w in &plan.waypoints {
        if !world.grid.contains(w.x, w.y) {
            return Err(MissionError::Plan(format!("waypoint ({}, {}) is outside the world", w.x, w.y)));
        }
    }
    let dt = config.dt;
    let image_steps = period_steps(plan.imaging_period_s, dt, "imaging period")?;
    let drift_steps = if plan.drift_duration_s > 0.0 { period_steps(plan.drift_duration_s, dt, "drift duration")? } else { 0 };
    let ekf_cfg = config.ekf_config();

    let mut sensor_rng = substream(seed, Domain::Sensors, 0);
    let mut image_rng = substream(seed, Domain::Imaging, 0);

    let start = plan.waypoints[0];
    let start_depth = world.depth_clamped(start.x, start.y) - plan.altitude_m;
    let heading0 = plan.waypoints.get(1).map_or(0.0, |w| (w.y - start.y).atan2(w.x - start.x));
    let mut truth = VehicleState::at(start.x, start.y, start_depth.max(0.0), heading0);
    let mut est = {
        let mut draw = |std: f64| -> f64 { let z: f64 = StandardNormal.sample(&mut sensor_rng); std * z };
        let offset = [
            draw(ekf_cfg.initial_position_std),
            draw(ekf_cfg.initial_position_std),
            draw(ekf_cfg.initial_depth_std),
            draw(ekf_cfg.initial_heading_std),
        ];
        EkfEstimate::initial(truth.x + offset[0], truth.y + offset[1], truth.z + offset[2], truth.heading + offset[3], &ekf_cfg)
    };
    let mut readings = simulate_sensors(&truth, world, &config.sensors, 0.0, &mut sensor_rng);

    let mut log = MissionLog {
        header: LogHeader {
            format: LOG_FORMAT.to_string(),
            version: LOG_VERSION,
            seed,
            dt,
            imaging_period_s: plan.imaging_period_s,
            drift_duration_s: plan.drift_duration_s,
            audio_fs: plan.audio_fs,
            grid: world.grid,
            vocab_size: world.vocab_size(),
            waypoints: plan.waypoints.iter().map(|w| [w.x, w.y]).collect(),
        },
        records: Vec::new(),
        audio: Vec::new(),
        abort: None,
    };

    let timeout_steps = |from: [f64; 2], to: Waypoint| -> usize {
        let seconds = config.waypoint_timeout_s.unwrap_or_else(|| {
            let d = (to.x - from[0]).hypot(to.y - from[1]);
            60.0 + 3.0 * d / config.guidance.cruise_speed
        });
        (seconds / dt).ceil() as usize
    };

    let mut target = 0usize;
    let mut n_drifts = 0usize;
    let mut n_transit_audio = 0usize;
    let mut hold_depth: Option<f64> = None;
    let mut phase = Phase::Transit { steps: 0, limit: timeout_steps([truth.x, truth.y], start), since_image: 0 };
    let mut step: u64 = 0;

    loop {
        let t = step as f64 * dt;

        // decide what to do at this instant
        if let Phase::Transit { steps, limit, since_image } = &mut phase {
            let wp = plan.waypoints[target];
            let guidance = waypoint_command(&est, [wp.x, wp.y], &config.guidance);
            if guidance.arrived {
                if wp.drift && drift_steps > 0 {
                    let cell = world.cell_at(truth.x, truth.y)?;
                    let mut audio_rng = substream(seed, Domain::Audio, n_drifts as u64);
                    let mut window =
                        world.synthesize_audio(truth.x, truth.y, plan.drift_duration_s, plan.audio_fs, false, &mut audio_rng)?;
                    window.start_time = t;
                    log.records.push(LogRecord {
                        t,
                        mode: Mode::Drift,
                        truth,
                        estimate: est,
                        cell,
                        waypoint: target,
                        drift: Some(n_drifts),
                        words: None,
                        audio: Some(audio_ref(&window, format!("{AUDIO_DIR}/drift_{n_drifts:04}.wav"))),
                    });
                    log.audio.push(window);
                    // thrusters off: the vehicle stops and moves only with the current
                    truth = drift_state(&truth, config.drift_current);
                    phase = Phase::Drift { index: n_drifts, step: 0, total: drift_steps };
                    n_drifts += 1;
                } else {
                    target += 1;
                    if target == plan.waypoints.len() {
                        break;
                    }
                    let next = plan.waypoints[target];
                    *limit = timeout_steps([wp.x, wp.y], next);
                    *steps = 0;
                    continue;
                }
            } else {
                if *steps >= *limit {
                    log.abort = Some(AbortMarker {
                        t,
                        waypoint: target,
                        reason: format!("waypoint {target} not reached within {:.1} s", *limit as f64 * dt),
                    });
                    break;
                }
                if *since_image == image_steps {
                    *since_image = 0;
                    let cell = world.cell_at(truth.x, truth.y)?;
                    let words = world.sample_image_words(truth.x, truth.y, config.words_per_image, &mut image_rng)?;
                    let audio = if config.record_transit_audio {
                        let mut audio_rng = substream(seed, Domain::Audio, (1 << 40) | n_transit_audio as u64);
                        let mut window =
                            world.synthesize_audio(truth.x, truth.y, plan.imaging_period_s, plan.audio_fs, true, &mut audio_rng)?;
                        window.start_time = t;
                        let r = audio_ref(&window, format!("{AUDIO_DIR}/transit_{n_transit_audio:06}.wav"));
                        log.audio.push(window);
                        n_transit_audio += 1;
                        Some(r)
                    } else {
                        None
                    };
                    log.records.push(LogRecord {
                        t,
                        mode: Mode::Transit,
                        truth,
                        estimate: est,
                        cell,
                        waypoint: target,
                        drift: None,
                        words: Some(words),
                        audio,
                    });
                }
                let mut command = guidance.command;
                command.heave = match altitude_hold_command(readings.dvl_altitude, plan.altitude_m, &config.guidance) {
                    AltitudeCommand::Heave(h) => {
                        hold_depth = None;
                        h
                    }
                    AltitudeCommand::HoldDepth => {
                        let target_depth = *hold_depth.get_or_insert(est.mean[2]);
                        depth_hold_heave(est.mean[2], target_depth, &config.guidance)
                    }
                };
                truth = step_dynamics(&truth, &command, dt, &config.dynamics)?;
                *steps += 1;
                *since_image += 1;
            }
        }

        let mut drift_record = None;
        if let Phase::Drift { index, step: k, total } = &mut phase {
            if *k == *total {
                target += 1;
                if target == plan.waypoints.len() {
                    break;
                }
                let here = plan.waypoints[target - 1];
                phase = Phase::Transit { steps: 0, limit: timeout_steps([here.x, here.y], plan.waypoints[target]), since_image: 0 };
                continue;
            }
            truth = drift_step(&truth, dt);
            *k += 1;
            if *k % image_steps == 0 || *k == *total {
                drift_record = Some(*index);
            }
        }

        // sensors and navigation filter for the new instant
        step += 1;
        let t = step as f64 * dt;
        if !world.grid.contains(truth.x, truth.y) {
            log.abort = Some(AbortMarker { t, waypoint: target, reason: "vehicle left the world".into() });
            break;
        }
        readings = simulate_sensors(&truth, world, &config.sensors, t, &mut sensor_rng);
        est = filter_step(&est, &readings, &config.sensors, &ekf_cfg, dt)?;
        if let Some(index) = drift_record {
            log.records.push(LogRecord {
                t,
                mode: Mode::Drift,
                truth,
                estimate: est,
                cell: world.cell_at(truth.x, truth.y)?,
                waypoint: target,
                drift: Some(index),
                words: None,
                audio: None,
            });
        }
    }
    log.validate()?;
    Ok(log)
}

fn audio_ref(window: &crate::world::AudioWindow, file: String) -> AudioRef {
    AudioRef {
        file,
        start_time: window.start_time,
        n_samples: window.samples.len(),
        fs: window.fs,
        saturated: window.saturated,
        truth_snap_times: window.truth_snap_times.clone(),
    }
}

/// Body velocities of a vehicle at rest in a world-frame current.
fn drift_state(truth: &VehicleState, current: [f64; 2]) -> VehicleState {
    let (s, c) = truth.heading.sin_cos();
    VehicleState {
        surge: current[0] * c + current[1] * s,
        sway: -current[0] * s + current[1] * c,
        heave: 0.0,
        yaw_rate: 0.0,
        ..*truth
    }
}

fn drift_step(truth: &VehicleState, dt: f64) -> VehicleState {
    let (s, c) = truth.heading.sin_cos();
    VehicleState {
        x: truth.x + (truth.surge * c - truth.sway * s) * dt,
        y: truth.y + (truth.surge * s + truth.sway * c) * dt,
        ..*truth
    }
}

/// One predict/update cycle driven by a set of sensor readings.
pub fn filter_step(
    est: &EkfEstimate,
    readings: &SensorReadings,
    sensors: &SensorConfig,
    ekf: &EkfConfig,
    dt: f64,
) -> Result<EkfEstimate, VehicleError> {
    let mut est = est.predict(readings.dvl_velocity, readings.imu_yaw_rate, dt, ekf)?;
    est = est.update(Measurement::Depth(readings.depth), &[variance(sensors.depth_std)])?;
    est = est.update(Measurement::Heading(readings.imu_heading), &[variance(sensors.imu_heading_std)])?;
    if let Some([x, y]) = readings.usbl {
        let r = variance(sensors.usbl_std);
        est = est.update(Measurement::Usbl { x, y }, &[r, 0.0, 0.0, r])?;
    }
    Ok(est)
}
