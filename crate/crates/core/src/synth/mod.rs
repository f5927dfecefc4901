//! Clean raw IMU synthesis from a keyframe-rate sensor trajectory.
//!
//! The accelerometer and gyroscope run `n` times faster than the keyframes
//! (180 Hz for 60 fps input with `n = 3`); the magnetometer runs at the
//! keyframe rate. Sample `k` of the fast streams belongs to time `k·Δt`.

pub mod accel;
pub mod gyro;

use nalgebra::{Rotation3, Vector3};

pub use accel::{integrate_keyframe_positions, solve_accelerations, AccelSolution, AccelSolveConfig};
pub use gyro::{replay_orientations, solve_angular_velocities, GyroSolveConfig};

use crate::error::{Error, Result};
use crate::trajectory::SensorTrajectory;

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

/// World gravity vector for a z-up frame.
pub fn gravity_vector() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}

/// Magnetic north in the world frame: horizontal, along +x, no dip.
pub fn magnetic_north() -> Vector3<f64> {
    Vector3::x()
}

/// Keyframe ranges `(start, end)` (inclusive) covering `m` keyframes, each at
/// most `window` intervals long and sharing its first keyframe with the
/// previous window's last.
pub(crate) fn windows(m: usize, window: Option<usize>) -> Vec<(usize, usize)> {
    let size = window.unwrap_or(usize::MAX).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < m - 1 {
        let end = start.saturating_add(size).min(m - 1);
        out.push((start, end));
        start = end;
    }
    out
}

/// High-rate accelerometer/gyroscope plus keyframe-rate magnetometer samples,
/// all in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImuStream {
    /// Keyframe (magnetometer) rate, Hz.
    pub keyframe_rate: f64,
    pub substeps: usize,
    /// Specific force, m/s².
    pub accel: Vec<Vector3<f64>>,
    /// Angular velocity, rad/s.
    pub gyro: Vec<Vector3<f64>>,
    /// Unit magnetic field direction.
    pub mag: Vec<Vector3<f64>>,
    /// World gravity, m/s².
    pub gravity: Vector3<f64>,
}

impl RawImuStream {
    pub fn sample_rate(&self) -> f64 {
        self.keyframe_rate * self.substeps as f64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate()
    }

    pub fn keyframes(&self) -> usize {
        self.mag.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 || !(self.keyframe_rate > 0.0) {
            return Err(Error::InvalidInput("stream rate and substeps must be positive".into()));
        }
        if self.accel.len() != self.gyro.len() {
            return Err(Error::LengthMismatch { left: self.accel.len(), right: self.gyro.len() });
        }
        let m = self.mag.len();
        let expected = self.substeps * m.saturating_sub(1);
        if m < 2 || self.accel.len() != expected {
            return Err(Error::LengthMismatch { left: self.accel.len(), right: expected });
        }
        Ok(())
    }
}

/// `f_S = R_WSᵀ·(a_WS − g_W)` for each substep.
pub fn specific_force(
    world_accels: &[Vector3<f64>],
    orientations: &[Rotation3<f64>],
    gravity: &Vector3<f64>,
) -> Result<Vec<Vector3<f64>>> {
    if world_accels.len() != orientations.len() {
        return Err(Error::LengthMismatch { left: world_accels.len(), right: orientations.len() });
    }
    Ok(world_accels
        .iter()
        .zip(orientations)
        .map(|(a, r)| r.inverse() * (a - gravity))
        .collect())
}

/// `m_i = R_WS,iᵀ·north` at every keyframe.
pub fn synth_magnetometer(traj: &SensorTrajectory) -> Vec<Vector3<f64>> {
    let north = magnetic_north();
    traj.rotations().map(|r| r.inverse() * north).collect()
}

/// A clean stream together with the substep orientations it was built from.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub stream: RawImuStream,
    /// `R_WS` at every high-rate sample, replayed from the solved rates.
    pub orientations: Vec<Rotation3<f64>>,
    pub world_accels: Vec<Vector3<f64>>,
    pub keyframe_velocities: Vec<Vector3<f64>>,
}

/// Runs both energy solves and assembles the clean raw stream.
pub fn synthesize(
    traj: &SensorTrajectory,
    accel_cfg: &AccelSolveConfig,
    gyro_cfg: &GyroSolveConfig,
) -> Result<Synthesis> {
    if accel_cfg.substeps != gyro_cfg.substeps {
        return Err(Error::InvalidInput(format!(
            "accel substeps {} differ from gyro substeps {}",
            accel_cfg.substeps, gyro_cfg.substeps
        )));
    }
    let n = accel_cfg.substeps;
    let gyro = solve_angular_velocities(traj, gyro_cfg)?;
    let acc = solve_accelerations(traj, accel_cfg)?;
    let orientations = replay_orientations(traj, &gyro, n);
    let gravity = gravity_vector();
    let accel = specific_force(&acc.accels, &orientations, &gravity)?;
    Ok(Synthesis {
        stream: RawImuStream {
            keyframe_rate: traj.frame_rate(),
            substeps: n,
            accel,
            gyro,
            mag: synth_magnetometer(traj),
            gravity,
        },
        orientations,
        world_accels: acc.accels,
        keyframe_velocities: acc.keyframe_velocities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::exp_so3;
    use crate::trajectory::Pose;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn window_partition() {
        assert_eq!(windows(2, None), vec![(0, 1)]);
        assert_eq!(windows(10, None), vec![(0, 9)]);
        assert_eq!(windows(10, Some(4)), vec![(0, 4), (4, 8), (8, 9)]);
        assert_eq!(windows(9, Some(4)), vec![(0, 4), (4, 8)]);
    }

    #[test]
    fn rest_specific_force() {
        let f = specific_force(&[Vector3::zeros()], &[Rotation3::identity()], &gravity_vector()).unwrap();
        assert_eq!(f[0], Vector3::new(0.0, 0.0, 9.81));
    }

    #[test]
    fn pitched_sensor_sees_gravity_on_x() {
        // Sensor x axis points up: world z maps to sensor x.
        let r = exp_so3(&Vector3::new(0.0, -FRAC_PI_2, 0.0));
        let f = specific_force(&[Vector3::zeros()], &[r], &gravity_vector()).unwrap();
        assert_relative_eq!(f[0], Vector3::new(9.81, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn free_fall_is_weightless() {
        let g = gravity_vector();
        let f = specific_force(&[g], &[exp_so3(&Vector3::new(0.3, 0.2, 0.1))], &g).unwrap();
        assert!(f[0].norm() < 1e-15);
    }

    #[test]
    fn specific_force_length_mismatch() {
        assert!(specific_force(&[Vector3::zeros(); 2], &[Rotation3::identity()], &gravity_vector()).is_err());
    }

    #[test]
    fn magnetometer_examples() {
        let samples = vec![
            Pose::new(Vector3::zeros(), Rotation3::identity()),
            Pose::new(Vector3::zeros(), exp_so3(&Vector3::new(0.0, 0.0, FRAC_PI_2))),
        ];
        let traj = SensorTrajectory::new(60.0, samples).unwrap();
        let m = synth_magnetometer(&traj);
        assert_eq!(m[0], Vector3::x());
        assert_relative_eq!(m[1], Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn static_stream_lengths() {
        let samples = vec![Pose::new(Vector3::new(1.0, 2.0, 3.0), Rotation3::identity()); 2];
        let traj = SensorTrajectory::new(60.0, samples).unwrap();
        let s = synthesize(&traj, &AccelSolveConfig::default(), &GyroSolveConfig::default()).unwrap();
        s.stream.validate().unwrap();
        assert_eq!(s.stream.accel, vec![Vector3::new(0.0, 0.0, 9.81); 3]);
        assert_eq!(s.stream.gyro, vec![Vector3::zeros(); 3]);
        assert_eq!(s.stream.mag.len(), 2);
    }

    proptest! {
        #[test]
        fn magnetometer_inverts_rotation(x in -3.0..3.0f64, y in -3.0..3.0f64, z in -3.0..3.0f64) {
            let r = exp_so3(&Vector3::new(x, y, z));
            let samples = vec![Pose::new(Vector3::zeros(), r); 2];
            let traj = SensorTrajectory::new(60.0, samples).unwrap();
            let m = synth_magnetometer(&traj)[0];
            prop_assert!((m.norm() - 1.0).abs() < 1e-9);
            prop_assert!((r * m - Vector3::x()).norm() < 1e-12);
        }
    }
}
