//! Vehicle kinematics, sensors, navigation filter and low-level guidance.
//!
//! Frames: world `x` east, `y` north, depth `z` positive down. Heading is
//! measured counter-clockwise from `+x` and kept in `(-pi, pi]`. Body surge
//! points along the heading, sway points to the left of it, heave is positive
//! upward (so `dz/dt = -heave`).

pub mod control;
pub mod ekf;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::GridWorld;

pub use control::{altitude_hold_command, waypoint_command, AltitudeCommand, GuidanceConfig, WaypointCommand};
pub use ekf::{EkfConfig, EkfEstimate, Measurement};

#[derive(Debug, Error, PartialEq)]
pub enum VehicleError {
    #[error("time step {0} s outside (0, 0.5]")]
    TimeStep(f64),
    #[error("non-finite command {0:?}")]
    NonFiniteCommand(Command),
    #[error("measurement noise covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("invalid vehicle config: {0}")]
    Config(String),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Depth, metres, positive down.
    pub z: f64,
    pub heading: f64,
    pub surge: f64,
    pub sway: f64,
    /// Vertical speed, positive up.
    pub heave: f64,
    pub yaw_rate: f64,
}

impl VehicleState {
    pub fn at(x: f64, y: f64, z: f64, heading: f64) -> Self {
        Self { x, y, z, heading: wrap_angle(heading), ..Self::default() }
    }

    /// Height above the seafloor.
    pub fn altitude(&self, world: &GridWorld) -> f64 {
        world.depth_clamped(self.x, self.y) - self.z
    }

    pub fn ground_speed(&self) -> f64 {
        self.surge.hypot(self.sway)
    }
}

/// Velocity setpoints. Sign conventions as for [`VehicleState`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub surge: f64,
    pub sway: f64,
    pub heave: f64,
    pub yaw_rate: f64,
}

impl Command {
    pub fn is_finite(&self) -> bool {
        [self.surge, self.sway, self.heave, self.yaw_rate].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    /// First-order velocity response time constant.
    pub time_constant_s: f64,
    /// Horizontal speed limit.
    pub max_speed: f64,
    pub max_heave: f64,
    pub max_yaw_rate: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { time_constant_s: 0.5, max_speed: 1.0, max_heave: 0.5, max_yaw_rate: 0.8 }
    }
}

/// Advances the true vehicle by `dt`: velocities relax toward the setpoints,
/// then the position integrates the new body velocities rotated by the heading
/// held at the start of the step.
pub fn step_dynamics(
    state: &VehicleState,
    command: &Command,
    dt: f64,
    config: &DynamicsConfig,
) -> Result<VehicleState, VehicleError> {
    if !(dt > 0.0 && dt <= 0.5) {
        return Err(VehicleError::TimeStep(dt));
    }
    if !command.is_finite() {
        return Err(VehicleError::NonFiniteCommand(*command));
    }
    let gain = 1.0 - (-dt / config.time_constant_s).exp();
    let relax = |current: f64, target: f64| current + (target - current) * gain;

    let mut surge = relax(state.surge, command.surge);
    let mut sway = relax(state.sway, command.sway);
    let speed = surge.hypot(sway);
    if speed > config.max_speed {
        surge *= config.max_speed / speed;
        sway *= config.max_speed / speed;
    }
    let heave = relax(state.heave, command.heave).clamp(-config.max_heave, config.max_heave);
    let yaw_rate = relax(state.yaw_rate, command.yaw_rate).clamp(-config.max_yaw_rate, config.max_yaw_rate);

    let (s, c) = state.heading.sin_cos();
    Ok(VehicleState {
        x: state.x + (surge * c - sway * s) * dt,
        y: state.y + (surge * s + sway * c) * dt,
        z: (state.z - heave * dt).max(0.0),
        heading: wrap_angle(state.heading + yaw_rate * dt),
        surge,
        sway,
        heave,
        yaw_rate,
    })
}

/// Per-channel zero-mean Gaussian noise levels and sensor limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub dvl_velocity_std: f64,
    pub dvl_altitude_std: f64,
    pub dvl_max_range_m: f64,
    pub imu_heading_std: f64,
    pub imu_yaw_rate_std: f64,
    pub depth_std: f64,
    pub usbl_std: f64,
    /// Seconds between USBL fixes; `None` disables USBL.
    pub usbl_period_s: Option<f64>,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            dvl_velocity_std: 0.02,
            dvl_altitude_std: 0.02,
            dvl_max_range_m: 1.5,
            imu_heading_std: 0.03,
            imu_yaw_rate_std: 0.005,
            depth_std: 0.05,
            usbl_std: 0.5,
            usbl_period_s: Some(1.0),
        }
    }
}

impl SensorConfig {
    pub fn noiseless() -> Self {
        Self {
            dvl_velocity_std: 0.0,
            dvl_altitude_std: 0.0,
            imu_heading_std: 0.0,
            imu_yaw_rate_std: 0.0,
            depth_std: 0.0,
            usbl_std: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), VehicleError> {
        let stds = [
            self.dvl_velocity_std,
            self.dvl_altitude_std,
            self.imu_heading_std,
            self.imu_yaw_rate_std,
            self.depth_std,
            self.usbl_std,
        ];
        if stds.iter().any(|s| !(*s >= 0.0)) || !(self.dvl_max_range_m > 0.0) {
            return Err(VehicleError::Config("sensor noise levels must be non-negative".into()));
        }
        if let Some(p) = self.usbl_period_s {
            if !(p > 0.0) {
                return Err(VehicleError::Config("usbl_period_s must be positive".into()));
            }
        }
        Ok(())
    }

    /// Whether a USBL fix is due at mission time `t` (positive multiples of the period).
    pub fn usbl_due(&self, t: f64) -> bool {
        match self.usbl_period_s {
            Some(p) if t > 0.0 => {
                let k = (t / p).round();
                k >= 1.0 && (t - k * p).abs() <= 1e-9 * t.max(1.0)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReadings {
    pub t: f64,
    /// Body-frame (surge, sway, heave) from the DVL.
    pub dvl_velocity: [f64; 3],
    /// Altitude over the seafloor; `None` when beyond DVL range.
    pub dvl_altitude: Option<f64>,
    pub imu_heading: f64,
    pub imu_yaw_rate: f64,
    pub depth: f64,
    pub usbl: Option<[f64; 2]>,
}

fn noisy(value: f64, std: f64, rng: &mut impl Rng) -> f64 {
    if std > 0.0 {
        value + Normal::new(0.0, std).expect("finite std").sample(rng)
    } else {
        value
    }
}

/// Corrupts the true state into one set of sensor readings at time `t`.
pub fn simulate_sensors(
    truth: &VehicleState,
    world: &GridWorld,
    config: &SensorConfig,
    t: f64,
    rng: &mut impl Rng,
) -> SensorReadings {
    let dvl_velocity = [
        noisy(truth.surge, config.dvl_velocity_std, rng),
        noisy(truth.sway, config.dvl_velocity_std, rng),
        noisy(truth.heave, config.dvl_velocity_std, rng),
    ];
    let altitude = truth.altitude(world);
    let altitude_reading = noisy(altitude, config.dvl_altitude_std, rng).max(0.0);
    let dvl_altitude = (altitude <= config.dvl_max_range_m).then_some(altitude_reading);
    let imu_heading = wrap_angle(noisy(truth.heading, config.imu_heading_std, rng));
    let imu_yaw_rate = noisy(truth.yaw_rate, config.imu_yaw_rate_std, rng);
    let depth = noisy(truth.z, config.depth_std, rng);
    let usbl = config
        .usbl_due(t)
        .then(|| [noisy(truth.x, config.usbl_std, rng), noisy(truth.y, config.usbl_std, rng)]);
    SensorReadings { t, dvl_velocity, dvl_altitude, imu_heading, imu_yaw_rate, depth, usbl }
}
