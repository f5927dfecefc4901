//! Orientation-only error-state Kalman filter.
//!
//! Nominal state: sensor orientation `R_IS` (unit quaternion) and gyro bias.
//! Error state: `[δθ, δb]` with `δθ` a local (right) attitude perturbation,
//! `R_true = R_nominal·Exp(δθ)`.
//!
//! The IMU world frame `I` is z-up along gravity with x along horizontal
//! magnetic north. Per high-rate sample the filter records the current
//! estimate, then applies (when gated in) a gravity update and a ZUPT bias
//! refinement before propagating with the gyro sample. At every keyframe the
//! heading-only magnetometer update runs first.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Matrix6, Rotation3, SMatrix, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{ImuNoiseParams, CONSUMER_MEMS};
use crate::so3::skew;
use crate::synth::{RawImuStream, GRAVITY};

/// Stationarity detector shared by the gravity gate and the ZUPT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZuptConfig {
    /// rad/s
    pub gyro_norm_thresh: f64,
    /// Allowed `|‖f‖ − g|`, m/s².
    pub accel_dev_thresh: f64,
    /// Samples.
    pub window: usize,
}

impl Default for ZuptConfig {
    fn default() -> Self {
        ZuptConfig {
            gyro_norm_thresh: 0.02,
            accel_dev_thresh: 0.1,
            window: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EskfConfig {
    /// Per-sample gyro white noise, rad/s.
    pub gyro_white_std: f64,
    /// rad/s/√s
    pub gyro_bias_walk: f64,
    /// Per-sample accelerometer white noise, m/s².
    pub accel_white_std: f64,
    pub mag_white_std: f64,
    /// Gravity update noise is `(gravity_noise_scale·accel_white_std)²`.
    pub gravity_noise_scale: f64,
    /// Heading update noise is `(mag_noise_scale·mag_white_std)²`.
    pub mag_noise_scale: f64,
    /// rad²
    pub init_attitude_var: f64,
    /// (rad/s)²
    pub init_bias_var: f64,
    pub use_mag: bool,
    pub use_zupt: bool,
    pub zupt: ZuptConfig,
}

impl Default for EskfConfig {
    fn default() -> Self {
        EskfConfig::from_noise(&ImuNoiseParams::from_densities(&CONSUMER_MEMS, 180.0, 0))
    }
}

impl EskfConfig {
    /// Filter tuned to the given per-sample sensor noise.
    pub fn from_noise(noise: &ImuNoiseParams) -> Self {
        EskfConfig {
            gyro_white_std: noise.gyro_white_std,
            gyro_bias_walk: noise.gyro_bias_walk,
            accel_white_std: noise.accel_white_std,
            mag_white_std: noise.mag_white_std,
            gravity_noise_scale: 5.0,
            mag_noise_scale: 3.0,
            init_attitude_var: 1e-2,
            init_bias_var: 1e-4,
            use_mag: true,
            use_zupt: true,
            zupt: ZuptConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let z = &self.zupt;
        if !(z.gyro_norm_thresh > 0.0 && z.accel_dev_thresh > 0.0 && z.window >= 1) {
            return Err(Error::InvalidInput("zupt thresholds must be > 0 and window >= 1".into()));
        }
        let nonneg = [
            self.gyro_white_std,
            self.gyro_bias_walk,
            self.accel_white_std,
            self.mag_white_std,
            self.gravity_noise_scale,
            self.mag_noise_scale,
            self.init_attitude_var,
            self.init_bias_var,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("eskf noise settings must be finite and >= 0".into()));
        }
        Ok(())
    }

    // Floors keep the updates well posed for noise-free tuning.
    fn gravity_var(&self) -> f64 {
        (self.gravity_noise_scale * self.accel_white_std).powi(2).max(1e-6)
    }

    fn heading_var(&self) -> f64 {
        (self.mag_noise_scale * self.mag_white_std).powi(2).max(1e-6)
    }

    fn zupt_var(&self) -> f64 {
        (self.gyro_white_std.powi(2) / self.zupt.window as f64).max(1e-10)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EskfState {
    /// `R_IS`
    pub orientation: UnitQuaternion<f64>,
    pub gyro_bias: Vector3<f64>,
    /// Covariance of `[δθ, δb]`.
    pub cov: Matrix6<f64>,
}

type Gain<const M: usize> = SMatrix<f64, 6, M>;

impl EskfState {
    pub fn rotation(&self) -> Rotation3<f64> {
        self.orientation.to_rotation_matrix()
    }

    /// TRIAD initialization: gravity fixes roll and pitch, the horizontal
    /// projection of the magnetometer fixes heading.
    pub fn init(first_accel: &Vector3<f64>, first_mag: &Vector3<f64>, cfg: &EskfConfig) -> Result<Self> {
        let fnorm = first_accel.norm();
        if !(fnorm >= 0.5 * GRAVITY && fnorm <= 1.5 * GRAVITY) {
            return Err(Error::FilterInit(format!(
                "accelerometer norm {fnorm:.3} m/s² outside [0.5g, 1.5g]"
            )));
        }
        let mnorm = first_mag.norm();
        if !(mnorm > 1e-9) || !mnorm.is_finite() {
            return Err(Error::FilterInit("magnetometer sample is degenerate".into()));
        }
        let up = first_accel / fnorm;
        let mag = first_mag / mnorm;
        let angle = up.dot(&mag).clamp(-1.0, 1.0).acos();
        let min_angle = 5f64.to_radians();
        if angle < min_angle || angle > std::f64::consts::PI - min_angle {
            return Err(Error::FilterInit(
                "magnetometer is within 5° of the gravity direction".into(),
            ));
        }
        let north = (mag - up * up.dot(&mag)).normalize();
        let west = up.cross(&north);
        // Rows are the world axes expressed in the sensor frame.
        let r = Matrix3::from_rows(&[north.transpose(), west.transpose(), up.transpose()]);
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        let mut cov = Matrix6::zeros();
        for i in 0..3 {
            cov[(i, i)] = cfg.init_attitude_var;
            cov[(i + 3, i + 3)] = cfg.init_bias_var;
        }
        Ok(EskfState {
            orientation: rotation,
            gyro_bias: Vector3::zeros(),
            cov,
        })
    }

    /// Propagates with one gyro sample over `dt` seconds.
    pub fn predict(&mut self, cfg: &EskfConfig, gyro: &Vector3<f64>, dt: f64) {
        let w = gyro - self.gyro_bias;
        let step = w * dt;
        self.orientation = self.orientation * UnitQuaternion::from_scaled_axis(step);
        self.orientation.renormalize();

        let mut f = Matrix6::identity();
        f.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(UnitQuaternion::from_scaled_axis(-step).to_rotation_matrix().matrix());
        f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Matrix3::identity() * -dt));
        let mut q = Matrix6::zeros();
        let qa = (cfg.gyro_white_std * dt).powi(2);
        let qb = cfg.gyro_bias_walk.powi(2) * dt;
        for i in 0..3 {
            q[(i, i)] = qa;
            q[(i + 3, i + 3)] = qb;
        }
        self.cov = f * self.cov * f.transpose() + q;
        symmetrize(&mut self.cov);
    }

    fn correct<const M: usize>(
        &mut self,
        h: &SMatrix<f64, M, 6>,
        innovation: &SMatrix<f64, M, 1>,
        noise: &SMatrix<f64, M, M>,
    ) -> bool {
        let s = h * self.cov * h.transpose() + noise;
        let Some(s_inv) = s.try_inverse() else {
            return false;
        };
        let k: Gain<M> = self.cov * h.transpose() * s_inv;
        let dx: Vector6<f64> = k * innovation;
        let ikh = Matrix6::identity() - k * h;
        self.cov = ikh * self.cov * ikh.transpose() + k * noise * k.transpose();
        self.inject(&dx);
        true
    }

    fn inject(&mut self, dx: &Vector6<f64>) {
        let dtheta = Vector3::new(dx[0], dx[1], dx[2]);
        self.orientation = self.orientation * UnitQuaternion::from_scaled_axis(dtheta);
        self.orientation.renormalize();
        self.gyro_bias += Vector3::new(dx[3], dx[4], dx[5]);
        let mut g = Matrix6::identity();
        g.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Matrix3::identity() - skew(&(dtheta * 0.5))));
        self.cov = g * self.cov * g.transpose();
        symmetrize(&mut self.cov);
    }

    /// Accelerometer as a gravity reference, `h = Rᵀ·(0, 0, g)`. Skipped when
    /// `|‖f‖ − g|` exceeds the stationarity threshold. Returns whether it ran.
    pub fn update_gravity(&mut self, cfg: &EskfConfig, accel: &Vector3<f64>) -> bool {
        if (accel.norm() - GRAVITY).abs() >= cfg.zupt.accel_dev_thresh {
            return false;
        }
        let predicted = self.orientation.inverse() * Vector3::new(0.0, 0.0, GRAVITY);
        let mut h = SMatrix::<f64, 3, 6>::zeros();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&predicted));
        let noise = Matrix3::identity() * cfg.gravity_var();
        self.correct(&h, &(accel - predicted), &noise)
    }

    /// Heading-only magnetometer update. The measured field is rotated into
    /// the world frame with the nominal attitude and its horizontal heading
    /// is driven to zero (north = +x). Only the world-yaw direction of the
    /// error state is observed. Skipped for near-vertical fields.
    pub fn update_mag(&mut self, cfg: &EskfConfig, mag: &Vector3<f64>) -> bool {
        let world = self.orientation * mag;
        let horizontal = world.x.hypot(world.y);
        if horizontal < 0.1 {
            return false;
        }
        let heading = world.y.atan2(world.x);
        let up_in_sensor = self.orientation.inverse() * Vector3::z();
        let mut h = SMatrix::<f64, 1, 6>::zeros();
        h[(0, 0)] = up_in_sensor.x;
        h[(0, 1)] = up_in_sensor.y;
        h[(0, 2)] = up_in_sensor.z;
        let innovation = SMatrix::<f64, 1, 1>::new(-heading);
        let noise = SMatrix::<f64, 1, 1>::new(cfg.heading_var());
        self.correct(&h, &innovation, &noise)
    }

    /// Zero-velocity update: when every sample of the window is stationary,
    /// the windowed gyro mean is taken as a direct measurement of the bias.
    pub fn zupt(&mut self, cfg: &EskfConfig, window: &[(Vector3<f64>, Vector3<f64>)]) -> bool {
        if window.len() < cfg.zupt.window || !is_stationary(&cfg.zupt, window) {
            return false;
        }
        let mean = window.iter().map(|(g, _)| g).sum::<Vector3<f64>>() / window.len() as f64;
        let mut h = SMatrix::<f64, 3, 6>::zeros();
        h.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        let noise = Matrix3::identity() * cfg.zupt_var();
        self.correct(&h, &(mean - self.gyro_bias), &noise)
    }
}

/// All samples below both stationarity thresholds.
pub fn is_stationary(cfg: &ZuptConfig, window: &[(Vector3<f64>, Vector3<f64>)]) -> bool {
    window.iter().all(|(g, a)| {
        g.norm() < cfg.gyro_norm_thresh && (a.norm() - GRAVITY).abs() < cfg.accel_dev_thresh
    })
}

fn symmetrize(m: &mut Matrix6<f64>) {
    *m = (*m + m.transpose()) * 0.5;
}

/// Update counts and the final bias estimate of a fusion run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FusionStats {
    pub gravity_updates: usize,
    pub mag_updates: usize,
    pub zupt_updates: usize,
    pub final_gyro_bias: Vector3<f64>,
}

/// Fuses a noisy stream into `R_IS` at every high-rate sample.
pub fn fuse_stream(noisy: &RawImuStream, cfg: &EskfConfig) -> Result<Vec<Rotation3<f64>>> {
    fuse_stream_with_stats(noisy, cfg).map(|(r, _)| r)
}

pub fn fuse_stream_with_stats(
    noisy: &RawImuStream,
    cfg: &EskfConfig,
) -> Result<(Vec<Rotation3<f64>>, FusionStats)> {
    cfg.validate()?;
    noisy.validate()?;
    let n = noisy.substeps;
    let dt = noisy.dt();
    let mut state = EskfState::init(&noisy.accel[0], &noisy.mag[0], cfg)?;
    let mut stats = FusionStats::default();
    let mut window: VecDeque<(Vector3<f64>, Vector3<f64>)> = VecDeque::with_capacity(cfg.zupt.window);
    let mut since_zupt = 0usize;
    let mut out = Vec::with_capacity(noisy.accel.len());
    for (k, (accel, gyro)) in noisy.accel.iter().zip(&noisy.gyro).enumerate() {
        if cfg.use_mag && k % n == 0 && state.update_mag(cfg, &noisy.mag[k / n]) {
            stats.mag_updates += 1;
        }
        if state.update_gravity(cfg, accel) {
            stats.gravity_updates += 1;
        }
        if window.len() == cfg.zupt.window {
            window.pop_front();
        }
        window.push_back((*gyro, *accel));
        since_zupt += 1;
        if cfg.use_zupt && since_zupt >= cfg.zupt.window {
            let (a, b) = window.as_slices();
            let samples: Vec<_> = a.iter().chain(b).copied().collect();
            if state.zupt(cfg, &samples) {
                stats.zupt_updates += 1;
                since_zupt = 0;
            }
        }
        out.push(state.rotation());
        state.predict(cfg, gyro, dt);
    }
    stats.final_gyro_bias = state.gyro_bias;
    Ok((out, stats))
}
