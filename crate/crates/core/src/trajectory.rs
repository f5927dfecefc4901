//! Bone pose sequences and per-sensor 6DoF trajectories.
//!
//! A sensor rigidly mounted on a bone follows
//! `p_WS = p_WB + R_WB·p_BS` and `R_WS = R_WB·R_BS`. Real sensors slide on
//! the skin, so the perturbed trajectory adds a translational random walk
//! `δp_BS` inside the bone frame and a rotational walk `δR_BS` on the sensor
//! side of `R_BS`.

use nalgebra::{Rotation3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::exp_so3;

/// Upper bound on a body-mounted sensor offset, meters.
pub const MAX_MOUNT_OFFSET: f64 = 0.5;

/// Position and orientation of a frame in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Rotation3<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, rotation: Rotation3<f64>) -> Self {
        Pose { position, rotation }
    }
}

fn validate_samples(frame_rate: f64, samples: &[Pose]) -> Result<()> {
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(Error::InvalidInput(format!("frame rate {frame_rate} must be positive")));
    }
    if samples.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: samples.len() });
    }
    let finite = samples
        .iter()
        .all(|s| s.position.iter().chain(s.rotation.matrix().iter()).all(|v| v.is_finite()));
    if !finite {
        return Err(Error::InvalidInput("non-finite pose sample".into()));
    }
    Ok(())
}

/// World-frame poses of one body segment sampled at a uniform rate.
#[derive(Debug, Clone, PartialEq)]
pub struct BonePoseSequence {
    frame_rate: f64,
    samples: Vec<Pose>,
}

impl BonePoseSequence {
    pub fn new(frame_rate: f64, samples: Vec<Pose>) -> Result<Self> {
        validate_samples(frame_rate, &samples)?;
        Ok(BonePoseSequence { frame_rate, samples })
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn samples(&self) -> &[Pose] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Where a sensor sits on its bone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MountingSpec {
    /// `p_BS`, meters, bone frame.
    pub offset: Vector3<f64>,
    /// `R_BS`
    pub rotation: Rotation3<f64>,
}

impl MountingSpec {
    pub fn new(offset: Vector3<f64>, rotation: Rotation3<f64>) -> Result<Self> {
        if !(offset.norm() < MAX_MOUNT_OFFSET) {
            return Err(Error::InvalidInput(format!(
                "mount offset {:.3} m exceeds {MAX_MOUNT_OFFSET} m",
                offset.norm()
            )));
        }
        Ok(MountingSpec { offset, rotation })
    }

    pub fn identity() -> Self {
        MountingSpec {
            offset: Vector3::zeros(),
            rotation: Rotation3::identity(),
        }
    }
}

/// Skin-sliding random walks. Rates are the RMS growth of the walk norm per
/// `√s`, so after `t` seconds `E‖δ‖² ≈ rate²·t` on top of the initial error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlidingNoiseParams {
    /// Expected norm of the initial position error, meters.
    pub initial_pos_error_mean: f64,
    pub pos_walk_rate: f64,
    pub rot_walk_rate: f64,
    pub seed: u64,
}

impl Default for SlidingNoiseParams {
    fn default() -> Self {
        SlidingNoiseParams {
            initial_pos_error_mean: 1e-2,
            pos_walk_rate: 1e-3,
            rot_walk_rate: 1e-2,
            seed: 0,
        }
    }
}

impl SlidingNoiseParams {
    pub fn zero() -> Self {
        SlidingNoiseParams {
            initial_pos_error_mean: 0.0,
            pos_walk_rate: 0.0,
            rot_walk_rate: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.initial_pos_error_mean, self.pos_walk_rate, self.rot_walk_rate]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("sliding noise rates must be finite and >= 0".into()))
        }
    }
}

/// World-frame 6DoF trajectory of one sensor, same timing as its bone.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrajectory {
    frame_rate: f64,
    samples: Vec<Pose>,
}

impl SensorTrajectory {
    pub fn new(frame_rate: f64, samples: Vec<Pose>) -> Result<Self> {
        validate_samples(frame_rate, &samples)?;
        Ok(SensorTrajectory { frame_rate, samples })
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn samples(&self) -> &[Pose] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.samples.iter().map(|s| &s.position)
    }

    pub fn rotations(&self) -> impl Iterator<Item = &Rotation3<f64>> {
        self.samples.iter().map(|s| &s.rotation)
    }

    /// Applies a world-frame rigid transform to every sample.
    pub fn transformed(&self, rotation: &Rotation3<f64>, translation: &Vector3<f64>) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|s| Pose::new(rotation * s.position + translation, rotation * s.rotation))
            .collect();
        SensorTrajectory { frame_rate: self.frame_rate, samples }
    }
}

/// Rigid-mount sensor trajectory.
pub fn ideal_sensor_trajectory(bones: &BonePoseSequence, mount: &MountingSpec) -> SensorTrajectory {
    let samples = bones
        .samples()
        .iter()
        .map(|b| {
            Pose::new(
                b.position + b.rotation * mount.offset,
                b.rotation * mount.rotation,
            )
        })
        .collect();
    SensorTrajectory {
        frame_rate: bones.frame_rate(),
        samples,
    }
}

/// Draws the initial sliding offset: uniform direction, half-normal magnitude
/// with the requested mean.
fn initial_offset(rng: &mut ChaCha8Rng, mean: f64) -> Vector3<f64> {
    let sigma = mean * (std::f64::consts::PI / 2.0).sqrt();
    let dir = random_unit_vector(rng);
    let mag: f64 = rng.sample::<f64, _>(StandardNormal).abs() * sigma;
    dir * mag
}

pub(crate) fn random_unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn isotropic_step(rng: &mut ChaCha8Rng, per_axis_std: f64) -> Vector3<f64> {
    Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ) * per_axis_std
}

/// Sensor trajectory with skin-sliding random walks applied to the mount.
///
/// The position walk starts at a random offset of expected norm
/// `initial_pos_error_mean`; the rotation walk starts at identity.
pub fn perturbed_sensor_trajectory(
    bones: &BonePoseSequence,
    mount: &MountingSpec,
    noise: &SlidingNoiseParams,
) -> Result<SensorTrajectory> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let dt = 1.0 / bones.frame_rate();
    let pos_std = noise.pos_walk_rate * (dt / 3.0).sqrt();
    let rot_std = noise.rot_walk_rate * (dt / 3.0).sqrt();

    let mut dp = initial_offset(&mut rng, noise.initial_pos_error_mean);
    let mut dphi = Vector3::zeros();
    let mut samples = Vec::with_capacity(bones.len());
    for (k, b) in bones.samples().iter().enumerate() {
        if k > 0 {
            dp += isotropic_step(&mut rng, pos_std);
            dphi += isotropic_step(&mut rng, rot_std);
        }
        samples.push(Pose::new(
            b.position + b.rotation * (mount.offset + dp),
            b.rotation * mount.rotation * exp_so3(&dphi),
        ));
    }
    Ok(SensorTrajectory {
        frame_rate: bones.frame_rate(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::geodesic_angle;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn wobbling_bones(frames: usize) -> BonePoseSequence {
        let samples = (0..frames)
            .map(|k| {
                let t = k as f64 / 60.0;
                Pose::new(
                    Vector3::new(t.sin(), 0.3 * t, 1.0 + 0.1 * (3.0 * t).cos()),
                    exp_so3(&Vector3::new(0.2 * t.sin(), 0.1, 0.5 * t)),
                )
            })
            .collect();
        BonePoseSequence::new(60.0, samples).unwrap()
    }

    #[test]
    fn rejects_short_and_bad_sequences() {
        let p = Pose::new(Vector3::zeros(), Rotation3::identity());
        assert!(matches!(
            BonePoseSequence::new(60.0, vec![p]),
            Err(Error::TooShort { needed: 2, got: 1 })
        ));
        assert!(BonePoseSequence::new(0.0, vec![p, p]).is_err());
        let bad = Pose::new(Vector3::new(f64::NAN, 0.0, 0.0), Rotation3::identity());
        assert!(BonePoseSequence::new(60.0, vec![p, bad]).is_err());
        assert!(MountingSpec::new(Vector3::new(0.6, 0.0, 0.0), Rotation3::identity()).is_err());
    }

    #[test]
    fn identity_mount_reproduces_bone() {
        let bones = wobbling_bones(20);
        let traj = ideal_sensor_trajectory(&bones, &MountingSpec::identity());
        assert_eq!(traj.samples(), bones.samples());
    }

    #[test]
    fn hand_evaluated_offset() {
        let bone = Pose::new(Vector3::new(0.0, 0.0, 1.0), exp_so3(&Vector3::new(0.0, 0.0, FRAC_PI_2)));
        let bones = BonePoseSequence::new(60.0, vec![bone, bone]).unwrap();
        let mount = MountingSpec::new(Vector3::new(0.1, 0.0, 0.0), Rotation3::identity()).unwrap();
        let traj = ideal_sensor_trajectory(&bones, &mount);
        assert_relative_eq!(traj.samples()[0].position, Vector3::new(0.0, 0.1, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn mount_recovered_by_algebraic_inverse() {
        let bones = wobbling_bones(30);
        let mount = MountingSpec::new(
            Vector3::new(0.05, -0.12, 0.2),
            exp_so3(&Vector3::new(0.3, -1.1, 0.4)),
        )
        .unwrap();
        let traj = ideal_sensor_trajectory(&bones, &mount);
        for (b, s) in bones.samples().iter().zip(traj.samples()) {
            let offset = b.rotation.inverse() * (s.position - b.position);
            assert_relative_eq!(offset, mount.offset, epsilon = 1e-14);
            assert!(geodesic_angle(&(b.rotation.inverse() * s.rotation), &mount.rotation) < 1e-12);
        }
    }

    #[test]
    fn zero_noise_is_ideal_limit() {
        let bones = wobbling_bones(40);
        let mount = MountingSpec::new(Vector3::new(0.1, 0.02, -0.03), exp_so3(&Vector3::new(0.1, 0.2, 0.3))).unwrap();
        let noise = SlidingNoiseParams { seed: 9, ..SlidingNoiseParams::zero() };
        let perturbed = perturbed_sensor_trajectory(&bones, &mount, &noise).unwrap();
        assert_eq!(perturbed, ideal_sensor_trajectory(&bones, &mount));
    }

    #[test]
    fn deterministic_per_seed() {
        let bones = wobbling_bones(40);
        let mount = MountingSpec::identity();
        let noise = SlidingNoiseParams { seed: 1234, ..Default::default() };
        let a = perturbed_sensor_trajectory(&bones, &mount, &noise).unwrap();
        let b = perturbed_sensor_trajectory(&bones, &mount, &noise).unwrap();
        assert_eq!(a, b);
        let c = perturbed_sensor_trajectory(&bones, &mount, &SlidingNoiseParams { seed: 1235, ..noise }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn position_deviation_bounded_by_walk_norm() {
        let bones = wobbling_bones(120);
        let mount = MountingSpec::new(Vector3::new(0.1, 0.0, 0.0), Rotation3::identity()).unwrap();
        let noise = SlidingNoiseParams { seed: 5, ..Default::default() };
        let ideal = ideal_sensor_trajectory(&bones, &mount);
        let pert = perturbed_sensor_trajectory(&bones, &mount, &noise).unwrap();
        for ((b, i), p) in bones.samples().iter().zip(ideal.samples()).zip(pert.samples()) {
            let walk = b.rotation.inverse() * (p.position - b.position) - mount.offset;
            assert!((p.position - i.position).norm() <= walk.norm() + 1e-12);
        }
    }

    #[test]
    fn rotation_walk_variance_grows_linearly() {
        let frames = 301;
        let bones = wobbling_bones(frames);
        let mount = MountingSpec::identity();
        let ideal = ideal_sensor_trajectory(&bones, &mount);
        let rate = 1e-2;
        let seeds = 200;
        let checkpoints = [60usize, 150, 300];
        let mut sum_sq = [0.0; 3];
        for seed in 0..seeds {
            let noise = SlidingNoiseParams {
                initial_pos_error_mean: 0.0,
                pos_walk_rate: 0.0,
                rot_walk_rate: rate,
                seed,
            };
            let pert = perturbed_sensor_trajectory(&bones, &mount, &noise).unwrap();
            for (c, &k) in checkpoints.iter().enumerate() {
                let angle = geodesic_angle(&pert.samples()[k].rotation, &ideal.samples()[k].rotation);
                sum_sq[c] += angle * angle;
            }
        }
        for (c, &k) in checkpoints.iter().enumerate() {
            let t = k as f64 / 60.0;
            let mean_sq = sum_sq[c] / seeds as f64;
            let expected = rate * rate * t;
            assert!((mean_sq / expected - 1.0).abs() < 0.2, "t={t}: {mean_sq} vs {expected}");
        }
    }

    #[test]
    fn initial_error_mean_matches_configuration() {
        let bones = wobbling_bones(2);
        let mount = MountingSpec::identity();
        let n = 10_000;
        let mut total = 0.0;
        for seed in 0..n {
            let noise = SlidingNoiseParams { seed, ..Default::default() };
            let pert = perturbed_sensor_trajectory(&bones, &mount, &noise).unwrap();
            let b = &bones.samples()[0];
            total += (b.rotation.inverse() * (pert.samples()[0].position - b.position)).norm();
        }
        let mean = total / n as f64;
        assert!((mean / 1e-2 - 1.0).abs() < 0.05, "mean initial error {mean}");
    }
}
