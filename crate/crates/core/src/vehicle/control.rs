//! Altitude hold and waypoint guidance.

use serde::{Deserialize, Serialize};

use super::{wrap_angle, Command, EkfEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub altitude_gain: f64,
    pub max_heave: f64,
    pub heading_gain: f64,
    pub max_yaw_rate: f64,
    pub distance_gain: f64,
    pub cruise_speed: f64,
    pub capture_radius_m: f64,
    /// Depth-hold gain used when the altitude reading is invalid.
    pub depth_gain: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            altitude_gain: 0.5,
            max_heave: 0.3,
            heading_gain: 1.0,
            max_yaw_rate: 0.5,
            distance_gain: 0.5,
            cruise_speed: 0.5,
            capture_radius_m: 0.5,
            depth_gain: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AltitudeCommand {
    /// Vertical speed setpoint, positive up.
    Heave(f64),
    /// No usable altitude; the caller should hold its current depth.
    HoldDepth,
}

/// Proportional altitude hold. Below the setpoint the vehicle ascends.
pub fn altitude_hold_command(altitude: Option<f64>, setpoint: f64, config: &GuidanceConfig) -> AltitudeCommand {
    match altitude {
        Some(a) if a.is_finite() && a >= 0.0 => {
            AltitudeCommand::Heave((config.altitude_gain * (setpoint - a)).clamp(-config.max_heave, config.max_heave))
        }
        _ => AltitudeCommand::HoldDepth,
    }
}

/// Heave that returns the vehicle to `target_depth`.
pub fn depth_hold_heave(depth: f64, target_depth: f64, config: &GuidanceConfig) -> f64 {
    (config.depth_gain * (depth - target_depth)).clamp(-config.max_heave, config.max_heave)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointCommand {
    pub command: Command,
    pub arrived: bool,
    pub distance: f64,
}

/// Turn toward the waypoint and close the distance, slowing as the bearing
/// error grows. Within the capture radius (inclusive) the vehicle has arrived.
pub fn waypoint_command(est: &EkfEstimate, waypoint: [f64; 2], config: &GuidanceConfig) -> WaypointCommand {
    let dx = waypoint[0] - est.mean[0];
    let dy = waypoint[1] - est.mean[1];
    let distance = dx.hypot(dy);
    if distance <= config.capture_radius_m {
        return WaypointCommand { command: Command::default(), arrived: true, distance };
    }
    let bearing_error = wrap_angle(dy.atan2(dx) - est.mean[3]);
    let yaw_rate = (config.heading_gain * bearing_error).clamp(-config.max_yaw_rate, config.max_yaw_rate);
    let surge = (config.distance_gain * distance).clamp(0.0, config.cruise_speed) * bearing_error.cos().max(0.0);
    WaypointCommand {
        command: Command { surge, sway: 0.0, heave: 0.0, yaw_rate },
        arrived: false,
        distance,
    }
}
