//! Extended Kalman filter over `[x, y, z, heading]`.
//!
//! DVL body velocities and the IMU yaw rate drive the prediction as inputs;
//! USBL position, depth and IMU heading arrive as linear measurements.

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};
use serde::{Deserialize, Serialize};

use super::{wrap_angle, SensorConfig, VehicleError};

/// Filter mean and covariance, stored as plain arrays so estimates serialize
/// into mission logs unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EkfEstimate {
    pub mean: [f64; 4],
    pub cov: [[f64; 4]; 4],
}

/// Input noise levels assumed by the filter. By default they mirror the
/// simulated sensor noise so the filter is statistically consistent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfConfig {
    pub velocity_std: f64,
    pub yaw_rate_std: f64,
    /// Extra random-walk density on every state, per second.
    pub random_walk_std: f64,
    pub initial_position_std: f64,
    pub initial_depth_std: f64,
    pub initial_heading_std: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self::matching(&SensorConfig::default())
    }
}

impl EkfConfig {
    pub fn matching(sensors: &SensorConfig) -> Self {
        Self {
            velocity_std: sensors.dvl_velocity_std,
            yaw_rate_std: sensors.imu_yaw_rate_std,
            random_walk_std: 0.0,
            initial_position_std: 0.5,
            initial_depth_std: 0.1,
            initial_heading_std: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measurement {
    Usbl { x: f64, y: f64 },
    Depth(f64),
    Heading(f64),
}

impl EkfEstimate {
    pub fn new(mean: [f64; 4], cov: Matrix4<f64>) -> Self {
        let mut mean = mean;
        mean[3] = wrap_angle(mean[3]);
        Self { mean, cov: to_rows(&cov) }
    }

    pub fn initial(x: f64, y: f64, z: f64, heading: f64, config: &EkfConfig) -> Self {
        let cov = Matrix4::from_diagonal(&Vector4::new(
            config.initial_position_std.powi(2),
            config.initial_position_std.powi(2),
            config.initial_depth_std.powi(2),
            config.initial_heading_std.powi(2),
        ));
        Self::new([x, y, z, heading], cov)
    }

    pub fn covariance(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.cov[i][j])
    }

    pub fn mean_vector(&self) -> Vector4<f64> {
        Vector4::from(self.mean)
    }

    pub fn trace(&self) -> f64 {
        (0..4).map(|i| self.cov[i][i]).sum()
    }

    /// Normalized estimation error squared against the true state.
    pub fn nees(&self, truth: [f64; 4]) -> f64 {
        let mut e = Vector4::from(truth) - self.mean_vector();
        e[3] = wrap_angle(e[3]);
        let p = self.covariance();
        match p.cholesky() {
            Some(ch) => e.dot(&ch.solve(&e)),
            None => f64::INFINITY,
        }
    }

    /// Dead-reckoning prediction with body velocity `(surge, sway, heave)`
    /// and yaw rate applied for `dt`.
    pub fn predict(&self, velocity: [f64; 3], yaw_rate: f64, dt: f64, config: &EkfConfig) -> Result<Self, VehicleError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(VehicleError::TimeStep(dt));
        }
        let [u, v, w] = velocity;
        let [x, y, z, psi] = self.mean;
        let (s, c) = psi.sin_cos();
        let mean = [
            x + (u * c - v * s) * dt,
            y + (u * s + v * c) * dt,
            z - w * dt,
            wrap_angle(psi + yaw_rate * dt),
        ];

        let mut f = Matrix4::identity();
        f[(0, 3)] = (-u * s - v * c) * dt;
        f[(1, 3)] = (u * c - v * s) * dt;

        // input Jacobian, columns (surge, sway, heave, yaw rate)
        let g = Matrix4::new(
            c * dt, -s * dt, 0.0, 0.0, //
            s * dt, c * dt, 0.0, 0.0, //
            0.0, 0.0, -dt, 0.0, //
            0.0, 0.0, 0.0, dt,
        );
        let vs = config.velocity_std.powi(2);
        let input = Matrix4::from_diagonal(&Vector4::new(vs, vs, vs, config.yaw_rate_std.powi(2)));
        let q = g * input * g.transpose()
            + Matrix4::identity() * (config.random_walk_std.powi(2) * dt);

        let p = f * self.covariance() * f.transpose() + q;
        Ok(Self::new(mean, symmetrize(p)))
    }

    /// Kalman update with noise covariance `r` (1x1 or 2x2, row-major).
    pub fn update(&self, measurement: Measurement, r: &[f64]) -> Result<Self, VehicleError> {
        match measurement {
            Measurement::Usbl { x, y } => {
                let r = matrix_from::<2>(r)?;
                let mut h = SMatrix::<f64, 2, 4>::zeros();
                h[(0, 0)] = 1.0;
                h[(1, 1)] = 1.0;
                let innovation = SVector::<f64, 2>::new(x - self.mean[0], y - self.mean[1]);
                self.apply(&h, innovation, r)
            }
            Measurement::Depth(z) => {
                let r = matrix_from::<1>(r)?;
                let h = SMatrix::<f64, 1, 4>::new(0.0, 0.0, 1.0, 0.0);
                self.apply(&h, SVector::<f64, 1>::new(z - self.mean[2]), r)
            }
            Measurement::Heading(psi) => {
                let r = matrix_from::<1>(r)?;
                let h = SMatrix::<f64, 1, 4>::new(0.0, 0.0, 0.0, 1.0);
                self.apply(&h, SVector::<f64, 1>::new(wrap_angle(psi - self.mean[3])), r)
            }
        }
    }

    fn apply<const M: usize>(
        &self,
        h: &SMatrix<f64, M, 4>,
        innovation: SVector<f64, M>,
        r: SMatrix<f64, M, M>,
    ) -> Result<Self, VehicleError> {
        let p = self.covariance();
        let s = h * p * h.transpose() + r;
        let s_inv = s.cholesky().ok_or(VehicleError::NotPositiveDefinite)?.inverse();
        let k = p * h.transpose() * s_inv;
        let mean = self.mean_vector() + k * innovation;
        // Joseph form keeps P symmetric positive semi-definite
        let ikh = Matrix4::identity() - k * h;
        let p = ikh * p * ikh.transpose() + k * r * k.transpose();
        Ok(Self::new([mean[0], mean[1], mean[2], mean[3]], symmetrize(p)))
    }
}

fn matrix_from<const M: usize>(r: &[f64]) -> Result<SMatrix<f64, M, M>, VehicleError> {
    if r.len() != M * M || r.iter().any(|v| !v.is_finite()) {
        return Err(VehicleError::NotPositiveDefinite);
    }
    let m = SMatrix::<f64, M, M>::from_row_slice(r);
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) || m.cholesky().is_none() {
        return Err(VehicleError::NotPositiveDefinite);
    }
    Ok(m)
}

fn symmetrize(p: Matrix4<f64>) -> Matrix4<f64> {
    (p + p.transpose()) * 0.5
}

fn to_rows(p: &Matrix4<f64>) -> [[f64; 4]; 4] {
    let mut rows = [[0.0; 4]; 4];
    for (i, row) in rows.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = p[(i, j)];
        }
    }
    rows
}
