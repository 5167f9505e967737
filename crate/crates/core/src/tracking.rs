//! Visual animal following: target motion, pinhole projection, a noisy
//! bounding-box tracker and the image-space servo that steers the vehicle.
//!
//! Image coordinates put the origin at the top-left corner, `u` to the right
//! and `v` down. The camera looks along the vehicle heading with no pitch.

use std::fmt::Write as _;

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{substream, Domain};
use crate::vehicle::{step_dynamics, wrap_angle, Command, DynamicsConfig, VehicleError, VehicleState};
use crate::world::GridWorld;

pub const TRACK_LOG_FORMAT: &str = "reefsurvey-track-log";
pub const TRACK_LOG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("invalid tracking config: {0}")]
    Config(String),
    #[error("target is at zero range from the camera")]
    ZeroRange,
    #[error("episode duration must be positive, got {0}")]
    Duration(f64),
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Camera {
    pub width_px: u32,
    pub height_px: u32,
    pub hfov_deg: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self { width_px: 640, height_px: 360, hfov_deg: 90.0 }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<(), TrackingError> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(TrackingError::Config("camera frame must be non-empty".into()));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(TrackingError::Config(format!("hfov_deg must lie in (0, 180), got {}", self.hfov_deg)));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        0.5 * self.width_px as f64 / (0.5 * self.hfov_deg.to_radians()).tan()
    }

    fn w(&self) -> f64 {
        self.width_px as f64
    }

    fn h(&self) -> f64 {
        self.height_px as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub frame_w: f64,
    pub frame_h: f64,
}

impl BBox {
    pub fn is_valid(&self) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && self.cx + 0.5 * self.w > 0.0
            && self.cx - 0.5 * self.w < self.frame_w
            && self.cy + 0.5 * self.h > 0.0
            && self.cy - 0.5 * self.h < self.frame_h
    }

    /// Distance of the box centre from the image centre, pixels.
    pub fn centering_error(&self) -> f64 {
        (self.cx - 0.5 * self.frame_w).hypot(self.cy - 0.5 * self.frame_h)
    }

    pub fn width_ratio(&self) -> f64 {
        self.w / self.frame_w
    }

    /// Centre inside the middle half of the frame in both axes (a quarter of
    /// the frame area).
    pub fn in_central_quarter(&self) -> bool {
        (self.cx - 0.5 * self.frame_w).abs() <= 0.25 * self.frame_w
            && (self.cy - 0.5 * self.frame_h).abs() <= 0.25 * self.frame_h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum BodyShape {
    /// Sphere whose diameter is the body length.
    Sphere,
    /// Ellipsoid with the body length along the heading.
    Ellipsoid { width_m: f64, height_m: f64 },
}

/// Apparent extent of a target body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub length_m: f64,
    pub shape: BodyShape,
    pub heading: f64,
}

/// Pinhole projection of `target` seen from the vehicle's camera. `None`
/// when the centre is behind the camera or outside the frame.
pub fn project_target(
    camera: &Camera,
    vehicle: &VehicleState,
    target: [f64; 3],
    body: &Body,
) -> Result<Option<BBox>, TrackingError> {
    let d = [target[0] - vehicle.x, target[1] - vehicle.y, target[2] - vehicle.z];
    let range = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if range < 1e-9 {
        return Err(TrackingError::ZeroRange);
    }
    let (s, c) = vehicle.heading.sin_cos();
    let forward = d[0] * c + d[1] * s;
    if forward <= 0.0 {
        return Ok(None);
    }
    let right = d[0] * s - d[1] * c;
    let down = d[2];
    let f = camera.focal_px();
    let cx = 0.5 * camera.w() + f * right / forward;
    let cy = 0.5 * camera.h() + f * down / forward;
    if !(0.0..=camera.w()).contains(&cx) || !(0.0..=camera.h()).contains(&cy) {
        return Ok(None);
    }
    let (extent_w, extent_h) = match body.shape {
        BodyShape::Sphere => (body.length_m, body.length_m),
        BodyShape::Ellipsoid { width_m, height_m } => {
            let a = 0.5 * body.length_m;
            let b = 0.5 * width_m;
            // angle between the body axis and the line of sight
            let phi = body.heading - d[1].atan2(d[0]);
            (2.0 * (a * a * phi.sin().powi(2) + b * b * phi.cos().powi(2)).sqrt(), height_m)
        }
    };
    Ok(Some(BBox {
        cx,
        cy,
        w: f * extent_w / forward,
        h: f * extent_h / forward,
        frame_w: camera.w(),
        frame_h: camera.h(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub pixel_noise_px: f64,
    pub dropout_prob: f64,
    pub frame_rate_hz: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { pixel_noise_px: 3.0, dropout_prob: 0.05, frame_rate_hz: 15.0 }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackingError> {
        if !(self.pixel_noise_px >= 0.0 && self.pixel_noise_px.is_finite()) {
            return Err(TrackingError::Config("pixel_noise_px must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(TrackingError::Config("dropout_prob must lie in [0, 1]".into()));
        }
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz <= 100.0) {
            return Err(TrackingError::Config("frame_rate_hz must lie in (0, 100]".into()));
        }
        Ok(())
    }
}

/// Companion animal that can steal the tracker's lock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistractorConfig {
    /// Offset from the target in its body frame: forward, left, down.
    pub offset_m: [f64; 3],
    pub body_length_m: f64,
    pub switch_rate_per_s: f64,
    pub mean_lock_s: f64,
}

impl Default for DistractorConfig {
    fn default() -> Self {
        Self { offset_m: [0.2, 0.5, -0.1], body_length_m: 0.3, switch_rate_per_s: 0.02, mean_lock_s: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackerState {
    /// End of the current distractor lock.
    pub locked_until: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LockChange {
    Locked,
    Released,
}

/// One tracker frame at time `t`. While a distractor lock lasts the
/// distractor's box is reported; otherwise the true box, perturbed by
/// Gaussian pixel noise, unless the frame drops out.
pub fn simulate_tracker(
    config: &TrackerConfig,
    state: &mut TrackerState,
    t: f64,
    truth: Option<&BBox>,
    distractor: Option<(&BBox, &DistractorConfig)>,
    rng: &mut impl Rng,
) -> (Option<BBox>, Option<LockChange>) {
    let mut change = None;
    if state.locked_until.is_some_and(|until| t >= until) {
        state.locked_until = None;
        change = Some(LockChange::Released);
    }
    if state.locked_until.is_none() {
        if let Some((_, d)) = distractor {
            let p = 1.0 - (-d.switch_rate_per_s / config.frame_rate_hz).exp();
            if rng.random::<f64>() < p {
                let hold = Exp::new(1.0 / d.mean_lock_s).map_or(d.mean_lock_s, |e| e.sample(rng));
                state.locked_until = Some(t + hold);
                change = Some(LockChange::Locked);
            }
        }
    }
    let source = if state.locked_until.is_some() { distractor.map(|(b, _)| b) } else { truth };
    let Some(source) = source else {
        return (None, change);
    };
    if config.dropout_prob > 0.0 && rng.random::<f64>() < config.dropout_prob {
        return (None, change);
    }
    let s = config.pixel_noise_px;
    if s == 0.0 {
        return (Some(*source), change);
    }
    let mut n = || -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        s * z
    };
    let b = BBox {
        cx: (source.cx + n()).clamp(0.0, source.frame_w),
        cy: (source.cy + n()).clamp(0.0, source.frame_h),
        w: (source.w + n()).max(1.0),
        h: (source.h + n()).max(1.0),
        ..*source
    };
    (Some(b), change)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServoGains {
    /// Yaw rate at full horizontal offset, rad/s.
    pub yaw: f64,
    /// Vertical speed at full vertical offset, m/s.
    pub heave: f64,
    /// Surge per unit width-ratio error, m/s.
    pub surge: f64,
    /// Width of the box as a fraction of the frame width to hold.
    pub width_ratio_setpoint: f64,
}

impl Default for ServoGains {
    fn default() -> Self {
        Self { yaw: 0.8, heave: 0.4, surge: 1.0, width_ratio_setpoint: 0.15 }
    }
}

/// Image-space servo output. `yaw_rate` is positive for a right turn and
/// `heave` positive for descending.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ServoCommand {
    pub yaw_rate: f64,
    pub heave: f64,
    pub surge: f64,
}

impl ServoCommand {
    /// Vehicle setpoints: heading counter-clockwise and heave positive up.
    pub fn to_vehicle(&self) -> Command {
        Command { surge: self.surge, sway: 0.0, heave: -self.heave, yaw_rate: -self.yaw_rate }
    }
}

pub fn servo_command(bbox: &BBox, gains: &ServoGains, limits: &DynamicsConfig) -> ServoCommand {
    let half_w = 0.5 * bbox.frame_w;
    let half_h = 0.5 * bbox.frame_h;
    ServoCommand {
        yaw_rate: (gains.yaw * (bbox.cx - half_w) / half_w).clamp(-limits.max_yaw_rate, limits.max_yaw_rate),
        heave: (gains.heave * (bbox.cy - half_h) / half_h).clamp(-limits.max_heave, limits.max_heave),
        surge: (gains.surge * (gains.width_ratio_setpoint - bbox.w / bbox.frame_w)).clamp(-limits.max_speed, limits.max_speed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// Straight line at constant velocity in the water column.
    MidwaterCruiser,
    /// Wandering heading close above the seafloor.
    BenthicGlider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub kind: TargetKind,
    /// Start position; `None` puts the target at the world centre, 4 m deep
    /// for a cruiser or at the altitude setpoint for a glider.
    pub start: Option<[f64; 3]>,
    pub speed: f64,
    pub max_speed: f64,
    pub heading_deg: f64,
    pub body_length_m: f64,
    pub shape: BodyShape,
    /// Heading diffusion of a glider, rad per sqrt(s).
    pub turn_noise: f64,
    pub altitude_setpoint_m: f64,
    pub altitude_min_m: f64,
    pub altitude_max_m: f64,
    pub distractor: Option<DistractorConfig>,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self::cruiser()
    }
}

impl TargetConfig {
    pub fn cruiser() -> Self {
        Self {
            kind: TargetKind::MidwaterCruiser,
            start: None,
            speed: 0.5,
            max_speed: 0.5,
            heading_deg: 45.0,
            body_length_m: 1.0,
            shape: BodyShape::Sphere,
            turn_noise: 0.0,
            altitude_setpoint_m: 0.5,
            altitude_min_m: 0.2,
            altitude_max_m: 1.0,
            distractor: None,
        }
    }

    pub fn glider() -> Self {
        Self {
            kind: TargetKind::BenthicGlider,
            speed: 0.2,
            max_speed: 0.5,
            heading_deg: 30.0,
            body_length_m: 0.8,
            turn_noise: 0.15,
            distractor: Some(DistractorConfig::default()),
            ..Self::cruiser()
        }
    }

    pub fn validate(&self) -> Result<(), TrackingError> {
        let bad = |m: &str| Err(TrackingError::Config(m.to_string()));
        if !(self.speed >= 0.0 && self.speed <= self.max_speed) {
            return bad("target speed must lie in [0, max_speed]");
        }
        if !(self.body_length_m > 0.0) {
            return bad("body_length_m must be positive");
        }
        if let BodyShape::Ellipsoid { width_m, height_m } = self.shape {
            if !(width_m > 0.0 && height_m > 0.0) {
                return bad("ellipsoid axes must be positive");
            }
        }
        if !(0.0 < self.altitude_min_m && self.altitude_min_m <= self.altitude_setpoint_m && self.altitude_setpoint_m <= self.altitude_max_m) {
            return bad("need 0 < altitude_min_m <= altitude_setpoint_m <= altitude_max_m");
        }
        if !(self.turn_noise >= 0.0) {
            return bad("turn_noise must be non-negative");
        }
        if let Some(d) = &self.distractor {
            if !(d.body_length_m > 0.0 && d.switch_rate_per_s >= 0.0 && d.mean_lock_s > 0.0) {
                return bad("distractor needs positive size and lock time and a non-negative switch rate");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub position: [f64; 3],
    pub heading: f64,
    pub speed: f64,
    pub altitude: f64,
}

impl TargetState {
    pub fn initial(config: &TargetConfig, world: &GridWorld) -> Self {
        let [x, y, z] = config.start.unwrap_or_else(|| {
            let (x, y) = (0.5 * world.width_m, 0.5 * world.height_m);
            let z = match config.kind {
                TargetKind::MidwaterCruiser => 4.0,
                TargetKind::BenthicGlider => world.depth_clamped(x, y) - config.altitude_setpoint_m,
            };
            [x, y, z]
        });
        Self {
            position: [x, y, z],
            heading: wrap_angle(config.heading_deg.to_radians()),
            speed: config.speed.min(config.max_speed),
            altitude: world.depth_clamped(x, y) - z,
        }
    }

    pub fn body(&self, config: &TargetConfig) -> Body {
        Body { length_m: config.body_length_m, shape: config.shape, heading: self.heading }
    }

    pub fn velocity(&self) -> [f64; 3] {
        [self.speed * self.heading.cos(), self.speed * self.heading.sin(), 0.0]
    }

    pub fn step(&mut self, config: &TargetConfig, world: &GridWorld, dt: f64, rng: &mut impl Rng) {
        match config.kind {
            TargetKind::MidwaterCruiser => {
                let v = self.velocity();
                for (p, v) in self.position.iter_mut().zip(v) {
                    *p += v * dt;
                }
            }
            TargetKind::BenthicGlider => {
                let dh: f64 = StandardNormal.sample(rng);
                self.heading = wrap_angle(self.heading + config.turn_noise * dt.sqrt() * dh);
                let da: f64 = StandardNormal.sample(rng);
                // altitude relaxes toward the setpoint with small jitter
                self.altitude += (config.altitude_setpoint_m - self.altitude) * (dt / 5.0) + 0.05 * dt.sqrt() * da;
                self.altitude = self.altitude.clamp(config.altitude_min_m, config.altitude_max_m);
                let v = self.velocity();
                self.position[0] += v[0] * dt;
                self.position[1] += v[1] * dt;
                self.position[2] = world.depth_clamped(self.position[0], self.position[1]) - self.altitude;
            }
        }
    }

    pub fn distractor_position(&self, d: &DistractorConfig) -> [f64; 3] {
        let (s, c) = self.heading.sin_cos();
        let [fwd, left, down] = d.offset_m;
        [self.position[0] + fwd * c - left * s, self.position[1] + fwd * s + left * c, self.position[2] + down]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingConfig {
    pub camera: Camera,
    pub gains: ServoGains,
    pub tracker: TrackerConfig,
    pub dynamics: DynamicsConfig,
    /// Dynamics integration step; commands are held between tracker frames.
    pub dt: f64,
    /// Time the last command is held after the box disappears.
    pub grace_s: f64,
    /// Time without a box after which the target is declared lost.
    pub reacquire_s: f64,
    /// The vehicle does not descend below this altitude.
    pub min_altitude_m: f64,
    /// Initial range to the target; `None` starts at the standoff range.
    pub initial_range_m: Option<f64>,
    /// Direction from the vehicle to the target at the start.
    pub initial_look_deg: f64,
    /// Vehicle heading offset from the look direction at the start.
    pub initial_heading_offset_deg: f64,
    /// Vehicle starts this far above the target.
    pub initial_height_offset_m: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            camera: Camera::default(),
            gains: ServoGains::default(),
            tracker: TrackerConfig::default(),
            dynamics: DynamicsConfig::default(),
            dt: 0.05,
            grace_s: 1.0,
            reacquire_s: 3.0,
            min_altitude_m: 0.3,
            initial_range_m: None,
            initial_look_deg: 0.0,
            initial_heading_offset_deg: 0.0,
            initial_height_offset_m: 0.0,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<(), TrackingError> {
        self.camera.validate()?;
        self.tracker.validate()?;
        let bad = |m: &str| Err(TrackingError::Config(m.to_string()));
        if !(self.dt > 0.0 && self.dt <= 0.5) {
            return bad("dt must lie in (0, 0.5]");
        }
        if !(self.gains.width_ratio_setpoint > 0.0 && self.gains.width_ratio_setpoint < 1.0) {
            return bad("width_ratio_setpoint must lie in (0, 1)");
        }
        if !(self.gains.yaw >= 0.0 && self.gains.heave >= 0.0 && self.gains.surge >= 0.0) {
            return bad("servo gains must be non-negative");
        }
        if !(self.grace_s >= 0.0 && self.reacquire_s >= self.grace_s) {
            return bad("need 0 <= grace_s <= reacquire_s");
        }
        if self.initial_range_m.is_some_and(|r| !(r > 0.0)) {
            return bad("initial_range_m must be positive");
        }
        Ok(())
    }

    /// Range at which a body of `length_m` fills the width-ratio setpoint.
    pub fn standoff_range(&self, length_m: f64) -> f64 {
        self.camera.focal_px() * length_m / (self.gains.width_ratio_setpoint * self.camera.w())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrackStatus {
    Tracking,
    /// Box missing; last command held.
    Holding,
    /// Box missing beyond the grace period; commands zeroed.
    Searching,
    Lost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub t: f64,
    pub vehicle: VehicleState,
    pub target: [f64; 3],
    pub true_box: Option<BBox>,
    pub observed: Option<BBox>,
    pub distractor_lock: bool,
    pub command: ServoCommand,
    pub status: TrackStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrackEventKind {
    Lost,
    Reacquired,
    DistractorLock,
    DistractorRelease,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackEvent {
    pub t: f64,
    pub kind: TrackEventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub duration_s: f64,
    pub frame_rate_hz: f64,
    pub camera: Camera,
    pub target: TargetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackLog {
    pub header: TrackHeader,
    pub frames: Vec<TrackFrame>,
    pub events: Vec<TrackEvent>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TrackLine {
    Header(TrackHeader),
    Frame(TrackFrame),
    Event(TrackEvent),
}

/// Closed-loop following episode. The tracker and servo run at the frame
/// rate; the vehicle and target integrate at `config.dt` with the last
/// command held in between.
pub fn run_tracking_episode(
    world: &GridWorld,
    config: &TrackingConfig,
    target_config: &TargetConfig,
    duration_s: f64,
    seed: u64,
) -> Result<TrackLog, TrackingError> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(TrackingError::Duration(duration_s));
    }
    config.validate()?;
    target_config.validate()?;
    let mut target_rng = substream(seed, Domain::Target, 0);
    let mut tracker_rng = substream(seed, Domain::Tracking, 0);

    let mut target = TargetState::initial(target_config, world);
    let range = config.initial_range_m.unwrap_or_else(|| config.standoff_range(target_config.body_length_m));
    let look = config.initial_look_deg.to_radians();
    let mut vehicle = VehicleState::at(
        target.position[0] - range * look.cos(),
        target.position[1] - range * look.sin(),
        (target.position[2] - config.initial_height_offset_m).max(0.0),
        look + config.initial_heading_offset_deg.to_radians(),
    );

    let frame_period = 1.0 / config.tracker.frame_rate_hz;
    let n_steps = (duration_s / config.dt).round() as usize;
    let mut next_frame = 0usize;
    let mut tracker = TrackerState::default();
    let mut command = ServoCommand::default();
    let mut last_seen = 0.0;
    let mut lost = false;
    let mut frames = Vec::new();
    let mut events = Vec::new();

    for step in 0..=n_steps {
        let t = step as f64 * config.dt;
        while next_frame as f64 * frame_period <= t + 1e-9 {
            let body = target.body(target_config);
            let true_box = project_target(&config.camera, &vehicle, target.position, &body)?;
            let distractor = match &target_config.distractor {
                Some(d) => {
                    let b = Body { length_m: d.body_length_m, shape: BodyShape::Sphere, heading: target.heading };
                    project_target(&config.camera, &vehicle, target.distractor_position(d), &b)?.map(|b| (b, d))
                }
                None => None,
            };
            let (observed, change) = simulate_tracker(
                &config.tracker,
                &mut tracker,
                t,
                true_box.as_ref(),
                distractor.as_ref().map(|(b, d)| (b, *d)),
                &mut tracker_rng,
            );
            match change {
                Some(LockChange::Locked) => events.push(TrackEvent { t, kind: TrackEventKind::DistractorLock }),
                Some(LockChange::Released) => events.push(TrackEvent { t, kind: TrackEventKind::DistractorRelease }),
                None => {}
            }
            let status = match &observed {
                Some(b) => {
                    if lost {
                        lost = false;
                        events.push(TrackEvent { t, kind: TrackEventKind::Reacquired });
                    }
                    last_seen = t;
                    command = servo_command(b, &config.gains, &config.dynamics);
                    TrackStatus::Tracking
                }
                None => {
                    let gap = t - last_seen;
                    if gap > config.grace_s {
                        command = ServoCommand::default();
                    }
                    if gap > config.reacquire_s && !lost {
                        lost = true;
                        events.push(TrackEvent { t, kind: TrackEventKind::Lost });
                    }
                    if lost {
                        TrackStatus::Lost
                    } else if gap > config.grace_s {
                        TrackStatus::Searching
                    } else {
                        TrackStatus::Holding
                    }
                }
            };
            frames.push(TrackFrame {
                t: next_frame as f64 * frame_period,
                vehicle,
                target: target.position,
                true_box,
                observed,
                distractor_lock: tracker.locked_until.is_some(),
                command,
                status,
            });
            next_frame += 1;
        }
        if step == n_steps {
            break;
        }
        let mut cmd = command.to_vehicle();
        if vehicle.altitude(world) < config.min_altitude_m {
            cmd.heave = cmd.heave.max(0.0);
        }
        vehicle = step_dynamics(&vehicle, &cmd, config.dt, &config.dynamics)?;
        target.step(target_config, world, config.dt, &mut target_rng);
    }

    Ok(TrackLog {
        header: TrackHeader {
            format: TRACK_LOG_FORMAT.into(),
            version: TRACK_LOG_VERSION,
            seed,
            duration_s,
            frame_rate_hz: config.tracker.frame_rate_hz,
            camera: config.camera,
            target: target_config.clone(),
        },
        frames,
        events,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackMetrics {
    pub frames: usize,
    pub visible_frames: usize,
    /// Fraction of all frames whose true box centre lies in the central
    /// quarter of the frame.
    pub centered_fraction: f64,
    pub centering_p50_px: f64,
    pub centering_p90_px: f64,
    pub centering_p99_px: f64,
    pub loss_count: usize,
    pub distractor_locks: usize,
    /// Lost at the end of the episode.
    pub permanently_lost: bool,
    /// Time until the first loss, or the episode length.
    pub track_duration_s: f64,
    pub final_centering_px: Option<f64>,
    pub final_width_ratio: Option<f64>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

impl TrackLog {
    pub fn metrics(&self) -> TrackMetrics {
        let mut errors: Vec<f64> = self.frames.iter().filter_map(|f| f.true_box.map(|b| b.centering_error())).collect();
        errors.sort_by(f64::total_cmp);
        let centered = self.frames.iter().filter(|f| f.true_box.is_some_and(|b| b.in_central_quarter())).count();
        let count = |k: TrackEventKind| self.events.iter().filter(|e| e.kind == k).count();
        let last_box = self.frames.last().and_then(|f| f.true_box);
        TrackMetrics {
            frames: self.frames.len(),
            visible_frames: errors.len(),
            centered_fraction: centered as f64 / self.frames.len().max(1) as f64,
            centering_p50_px: percentile(&errors, 0.5),
            centering_p90_px: percentile(&errors, 0.9),
            centering_p99_px: percentile(&errors, 0.99),
            loss_count: count(TrackEventKind::Lost),
            distractor_locks: count(TrackEventKind::DistractorLock),
            permanently_lost: self.frames.last().is_some_and(|f| f.status == TrackStatus::Lost),
            track_duration_s: self
                .events
                .iter()
                .find(|e| e.kind == TrackEventKind::Lost)
                .map_or(self.header.duration_s, |e| e.t),
            final_centering_px: last_box.map(|b| b.centering_error()),
            final_width_ratio: last_box.map(|b| b.width_ratio()),
        }
    }

    pub fn to_jsonl(&self) -> Result<String, TrackingError> {
        let mut out = serde_json::to_string(&TrackLine::Header(self.header.clone()))?;
        out.push('\n');
        for f in &self.frames {
            out.push_str(&serde_json::to_string(&TrackLine::Frame(f.clone()))?);
            out.push('\n');
        }
        for e in &self.events {
            out.push_str(&serde_json::to_string(&TrackLine::Event(*e))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, TrackingError> {
        let mut header = None;
        let (mut frames, mut events) = (Vec::new(), Vec::new());
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                TrackLine::Header(h) => header = Some(h),
                TrackLine::Frame(f) => frames.push(f),
                TrackLine::Event(e) => events.push(e),
            }
        }
        let header = header.ok_or_else(|| TrackingError::Config("track log has no header".into()))?;
        if header.format != TRACK_LOG_FORMAT || header.version != TRACK_LOG_VERSION {
            return Err(TrackingError::Config(format!("unsupported track log {} v{}", header.format, header.version)));
        }
        Ok(Self { header, frames, events })
    }

    /// Top-down view of vehicle (solid) and target (dashed) paths.
    pub fn trajectory_svg(&self) -> String {
        let pts = self.frames.iter().flat_map(|f| [[f.vehicle.x, f.vehicle.y], [f.target[0], f.target[1]]]);
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for [x, y] in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let span = (x1 - x0).max(y1 - y0).max(1.0);
        let (size, pad) = (480.0, 20.0);
        let sx = |x: f64| pad + (x - x0) / span * (size - 2.0 * pad);
        let sy = |y: f64| size - pad - (y - y0) / span * (size - 2.0 * pad);
        let line = |xy: &dyn Fn(&TrackFrame) -> (f64, f64)| {
            self.frames
                .iter()
                .map(|f| {
                    let (x, y) = xy(f);
                    format!("{:.2},{:.2}", sx(x), sy(y))
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut out = String::new();
        let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#);
        let _ = writeln!(out, r#"<rect width="{size}" height="{size}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="black" stroke-width="1.5" points="{}"/>"#,
            line(&|f| (f.vehicle.x, f.vehicle.y))
        );
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="darkorange" stroke-width="1.5" stroke-dasharray="5 3" points="{}"/>"#,
            line(&|f| (f.target[0], f.target[1]))
        );
        for e in self.events.iter().filter(|e| e.kind == TrackEventKind::Lost) {
            if let Some(f) = self.frames.iter().find(|f| f.t >= e.t) {
                let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="red"/>"#, sx(f.vehicle.x), sy(f.vehicle.y));
            }
        }
        out.push_str("</svg>\n");
        out
    }
}

impl TrackMetrics {
    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let rows = [
            ("frames", self.frames.to_string()),
            ("visible_frames", self.visible_frames.to_string()),
            ("centered_fraction", self.centered_fraction.to_string()),
            ("centering_p50_px", self.centering_p50_px.to_string()),
            ("centering_p90_px", self.centering_p90_px.to_string()),
            ("centering_p99_px", self.centering_p99_px.to_string()),
            ("loss_count", self.loss_count.to_string()),
            ("distractor_locks", self.distractor_locks.to_string()),
            ("permanently_lost", self.permanently_lost.to_string()),
            ("track_duration_s", self.track_duration_s.to_string()),
            ("final_centering_px", opt(self.final_centering_px)),
            ("final_width_ratio", opt(self.final_width_ratio)),
        ];
        let mut out = String::from("metric,value\n");
        for (k, v) in rows {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }
}

/// Largest yaw gain for which the sampled, linearized bearing loop is
/// stable with the default frame and integration rates. The loop holds the
/// command between frames and relaxes the yaw rate with the vehicle time
/// constant; stability is checked on the map over one common period.
pub fn yaw_gain_stability_bound(config: &TrackingConfig) -> f64 {
    let radius = |k: f64| spectral_radius(&yaw_loop_map(config, k));
    let (mut lo, mut hi) = (0.0, 1.0);
    while radius(hi) < 1.0 && hi < 1e4 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if radius(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Map of (bearing, yaw rate, held command) over the steps up to the first
/// time frame and integration clocks coincide again.
fn yaw_loop_map(config: &TrackingConfig, gain: f64) -> Matrix3<f64> {
    let dt = config.dt;
    let period = 1.0 / config.tracker.frame_rate_hz;
    let relax = 1.0 - (-dt / config.dynamics.time_constant_s).exp();
    // normalized offset per radian of bearing near the optical axis
    let k = gain / (0.5 * config.camera.hfov_deg.to_radians()).tan();
    let mut steps = 1;
    while ((steps as f64 * dt / period).round() * period - steps as f64 * dt).abs() > 1e-9 && steps < 1000 {
        steps += 1;
    }
    let mut map = Matrix3::identity();
    let mut next_frame = 0usize;
    for s in 0..steps {
        let t = s as f64 * dt;
        let mut m = Matrix3::identity();
        while next_frame as f64 * period <= t + 1e-9 {
            // a target to the right (positive bearing) commands a right turn,
            // i.e. negative counter-clockwise yaw
            m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -k, 0.0, 0.0) * m;
            next_frame += 1;
        }
        // yaw rate relaxes toward the command; bearing follows the new rate
        let dynamics = Matrix3::new(1.0, dt * (1.0 - relax), dt * relax, 0.0, 1.0 - relax, relax, 0.0, 0.0, 1.0);
        map = dynamics * m * map;
    }
    map
}

fn spectral_radius(m: &Matrix3<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, WorldConfig};

    fn world() -> GridWorld {
        generate_world(&WorldConfig { width_m: 60.0, height_m: 60.0, cell_size_m: 5.0, ..Default::default() }, 1).unwrap()
    }

    fn sphere(d: f64) -> Body {
        Body { length_m: d, shape: BodyShape::Sphere, heading: 0.0 }
    }

    #[test]
    fn on_axis_target_is_centred() {
        let cam = Camera::default();
        let v = VehicleState::at(0.0, 0.0, 5.0, 0.3);
        let b = project_target(&cam, &v, [3.0 * 0.3f64.cos(), 3.0 * 0.3f64.sin(), 5.0], &sphere(1.0)).unwrap().unwrap();
        assert!((b.cx - 320.0).abs() < 1e-9 && (b.cy - 180.0).abs() < 1e-9);
        assert!((b.w - 320.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn behind_and_zero_range() {
        let cam = Camera::default();
        let v = VehicleState::at(0.0, 0.0, 5.0, 0.0);
        assert_eq!(project_target(&cam, &v, [-2.0, 0.0, 5.0], &sphere(1.0)).unwrap(), None);
        assert!(matches!(project_target(&cam, &v, [0.0, 0.0, 5.0], &sphere(1.0)), Err(TrackingError::ZeroRange)));
        // a target to the right (negative y when facing +x) lands right of centre
        let b = project_target(&cam, &v, [3.0, -1.0, 6.0], &sphere(1.0)).unwrap().unwrap();
        assert!(b.cx > 320.0 && b.cy > 180.0);
    }

    #[test]
    fn servo_signs() {
        let g = ServoGains::default();
        let lim = DynamicsConfig::default();
        let centred = BBox { cx: 320.0, cy: 180.0, w: 96.0, h: 96.0, frame_w: 640.0, frame_h: 360.0 };
        assert_eq!(servo_command(&centred, &g, &lim), ServoCommand::default());
        let right = BBox { cx: 640.0, ..centred };
        assert!((servo_command(&right, &g, &lim).yaw_rate - 0.8).abs() < 1e-12);
        assert!(servo_command(&right, &g, &lim).to_vehicle().yaw_rate < 0.0);
        let big = BBox { w: 192.0, ..centred };
        assert!(servo_command(&big, &g, &lim).surge < 0.0);
    }

    #[test]
    fn zero_noise_tracker_is_identity() {
        let cfg = TrackerConfig { pixel_noise_px: 0.0, dropout_prob: 0.0, frame_rate_hz: 15.0 };
        let b = BBox { cx: 100.0, cy: 50.0, w: 20.0, h: 10.0, frame_w: 640.0, frame_h: 360.0 };
        let mut rng = substream(0, Domain::Tracking, 0);
        let mut st = TrackerState::default();
        for i in 0..100 {
            assert_eq!(simulate_tracker(&cfg, &mut st, i as f64, Some(&b), None, &mut rng).0, Some(b));
        }
        let never = TrackerConfig { dropout_prob: 1.0, ..cfg };
        for i in 0..100 {
            assert_eq!(simulate_tracker(&never, &mut st, i as f64, Some(&b), None, &mut rng).0, None);
        }
    }

    #[test]
    fn episode_rejects_bad_duration_and_is_deterministic() {
        let w = world();
        let cfg = TrackingConfig::default();
        assert!(matches!(
            run_tracking_episode(&w, &cfg, &TargetConfig::cruiser(), 0.0, 1),
            Err(TrackingError::Duration(_))
        ));
        let a = run_tracking_episode(&w, &cfg, &TargetConfig::glider(), 20.0, 3).unwrap();
        let b = run_tracking_episode(&w, &cfg, &TargetConfig::glider(), 20.0, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frames.len(), 301);
        let back = TrackLog::parse_jsonl(&a.to_jsonl().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn stability_bound_is_finite_and_above_default() {
        let cfg = TrackingConfig::default();
        let bound = yaw_gain_stability_bound(&cfg);
        assert!(bound.is_finite() && bound > cfg.gains.yaw, "{bound}");
        assert!(spectral_radius(&yaw_loop_map(&cfg, 0.5 * bound)) < 1.0);
        assert!(spectral_radius(&yaw_loop_map(&cfg, 1.5 * bound)) > 1.0);
    }
}
