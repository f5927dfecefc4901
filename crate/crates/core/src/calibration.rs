//! Sensor-to-bone alignment.
//!
//! A fused orientation `R_IS` (sensor in the IMU world frame `I`) maps to the
//! bone orientation in the mocap world `W` through
//! `R_WB = R_IWᵀ·R_IS·R_BSᵀ`.

use std::collections::BTreeMap;

use nalgebra::{Rotation3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{exp_so3, yaw_rotation};
use crate::trajectory::random_unit_vector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationMatrices {
    /// IMU world frame expressed in the mocap world frame.
    pub r_iw: Rotation3<f64>,
    /// Sensor frame expressed in the bone frame.
    pub r_bs: Rotation3<f64>,
}

impl CalibrationMatrices {
    pub fn identity() -> Self {
        CalibrationMatrices {
            r_iw: Rotation3::identity(),
            r_bs: Rotation3::identity(),
        }
    }
}

/// Mean perturbation angles applied to a calibration, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationErrorParams {
    pub iw_angle_mean: f64,
    pub bs_angle_mean: f64,
    pub seed: u64,
}

impl Default for CalibrationErrorParams {
    fn default() -> Self {
        CalibrationErrorParams {
            iw_angle_mean: 0.01,
            bs_angle_mean: 0.1,
            seed: 0,
        }
    }
}

impl CalibrationErrorParams {
    pub fn zero() -> Self {
        CalibrationErrorParams {
            iw_angle_mean: 0.0,
            bs_angle_mean: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.iw_angle_mean) && ok(self.bs_angle_mean)) {
            return Err(Error::InvalidInput("calibration error means must be finite and >= 0".into()));
        }
        Ok(())
    }
}

pub fn bone_orientation(r_is: &Rotation3<f64>, calib: &CalibrationMatrices) -> Rotation3<f64> {
    calib.r_iw.inverse() * r_is * calib.r_bs.inverse()
}

/// The sampled perturbation angles of a [`perturb_calibration_with_angles`] draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationAngles {
    pub iw: f64,
    pub bs: f64,
}

/// Right-multiplies both matrices by a random rotation whose angle is
/// half-normal with the configured mean and whose axis is uniform.
pub fn perturb_calibration(
    calib: &CalibrationMatrices,
    params: &CalibrationErrorParams,
) -> Result<CalibrationMatrices> {
    perturb_calibration_with_angles(calib, params).map(|(c, _)| c)
}

pub fn perturb_calibration_with_angles(
    calib: &CalibrationMatrices,
    params: &CalibrationErrorParams,
) -> Result<(CalibrationMatrices, PerturbationAngles)> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (iw_rot, iw) = half_normal_rotation(&mut rng, params.iw_angle_mean);
    let (bs_rot, bs) = half_normal_rotation(&mut rng, params.bs_angle_mean);
    Ok((
        CalibrationMatrices {
            r_iw: calib.r_iw * iw_rot,
            r_bs: calib.r_bs * bs_rot,
        },
        PerturbationAngles { iw, bs },
    ))
}

fn half_normal_rotation(rng: &mut ChaCha8Rng, mean: f64) -> (Rotation3<f64>, f64) {
    let axis = random_unit_vector(rng);
    let sigma = mean * (std::f64::consts::PI / 2.0).sqrt();
    let angle = rng.sample::<f64, _>(StandardNormal).abs() * sigma;
    (exp_so3(&(axis * angle)), angle)
}

/// Heading of the horizontal projection of `v`, radians from +x toward +y.
fn heading(v: &Vector3<f64>) -> Result<f64> {
    if v.x.hypot(v.y) < 1e-6 {
        return Err(Error::InvalidInput("reference axis is vertical; heading undefined".into()));
    }
    Ok(v.y.atan2(v.x))
}

/// Yaw-only `R_IW` from the root sensor at the reference pose, assuming its
/// x axis points along the subject's facing direction, which has heading
/// `facing_heading` in the mocap world.
pub fn estimate_r_iw(root_r_is: &Rotation3<f64>, facing_heading: f64) -> Result<Rotation3<f64>> {
    let in_imu = heading(&(root_r_is * Vector3::x()))?;
    Ok(yaw_rotation(in_imu - facing_heading))
}

/// `R_BS` that makes `bone_orientation(r_is_ref)` reproduce `r_wb_ref` exactly.
pub fn solve_r_bs(
    r_is_ref: &Rotation3<f64>,
    r_wb_ref: &Rotation3<f64>,
    r_iw: &Rotation3<f64>,
) -> Rotation3<f64> {
    r_wb_ref.inverse() * r_iw.inverse() * r_is_ref
}

/// Orientations of one sensor and its bone at the calibration instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TposeReference {
    pub r_is: Rotation3<f64>,
    pub r_wb: Rotation3<f64>,
}

/// Simulated T-pose calibration of every sensor. `R_IW` is shared and comes
/// from the root sensor; each `R_BS` is then solved in closed form.
pub fn simulate_tpose_calibration(
    references: &BTreeMap<String, TposeReference>,
    root_id: &str,
    facing_heading: f64,
) -> Result<BTreeMap<String, CalibrationMatrices>> {
    let root = references
        .get(root_id)
        .ok_or_else(|| Error::MissingRootSensor(root_id.to_string()))?;
    let r_iw = estimate_r_iw(&root.r_is, facing_heading)?;
    Ok(references
        .iter()
        .map(|(id, r)| {
            let calib = CalibrationMatrices { r_iw, r_bs: solve_r_bs(&r.r_is, &r.r_wb, &r_iw) };
            (id.clone(), calib)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{geodesic_angle, log_so3};
    use proptest::prelude::*;

    fn rot(x: f64, y: f64, z: f64) -> Rotation3<f64> {
        exp_so3(&Vector3::new(x, y, z))
    }

    fn arb_rot() -> impl Strategy<Value = Rotation3<f64>> {
        (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| rot(x, y, z))
    }

    #[test]
    fn identity_calibration_is_passthrough() {
        let r = rot(0.3, -0.2, 1.1);
        assert_eq!(bone_orientation(&r, &CalibrationMatrices::identity()), r);
    }

    #[test]
    fn zero_means_leave_calibration_unchanged() {
        let c = CalibrationMatrices { r_iw: rot(0.1, 0.0, 0.2), r_bs: rot(0.0, 0.5, 0.0) };
        let (p, angles) = perturb_calibration_with_angles(&c, &CalibrationErrorParams::zero()).unwrap();
        assert_eq!(angles, PerturbationAngles { iw: 0.0, bs: 0.0 });
        let r_is = rot(0.4, 0.4, 0.4);
        assert!(geodesic_angle(&bone_orientation(&r_is, &p), &bone_orientation(&r_is, &c)) < 1e-15);
    }

    #[test]
    fn perturbation_is_deterministic() {
        let c = CalibrationMatrices::identity();
        let params = CalibrationErrorParams { seed: 9, ..Default::default() };
        assert_eq!(perturb_calibration(&c, &params).unwrap(), perturb_calibration(&c, &params).unwrap());
    }

    #[test]
    fn perturbation_angle_is_the_sampled_angle() {
        let c = CalibrationMatrices { r_iw: rot(0.2, 0.1, -0.3), r_bs: rot(-1.0, 0.4, 0.2) };
        for seed in 0..50 {
            let params = CalibrationErrorParams { seed, ..Default::default() };
            let (p, a) = perturb_calibration_with_angles(&c, &params).unwrap();
            assert!((geodesic_angle(&p.r_iw, &c.r_iw) - a.iw).abs() < 1e-12);
            assert!((geodesic_angle(&p.r_bs, &c.r_bs) - a.bs).abs() < 1e-12);
            // Right side: the local difference has exactly the sampled angle.
            assert!((log_so3(&(c.r_bs.inverse() * p.r_bs)).norm() - a.bs).abs() < 1e-12);
        }
    }

    #[test]
    fn perturbation_means_match_configuration() {
        let c = CalibrationMatrices::identity();
        let n = 10_000;
        let (mut iw, mut bs) = (0.0, 0.0);
        for seed in 0..n {
            let params = CalibrationErrorParams { seed, ..Default::default() };
            let (_, a) = perturb_calibration_with_angles(&c, &params).unwrap();
            iw += a.iw;
            bs += a.bs;
        }
        let (iw, bs) = (iw / n as f64, bs / n as f64);
        assert!((iw - 0.01).abs() < 0.05 * 0.01, "iw mean {iw}");
        assert!((bs - 0.1).abs() < 0.05 * 0.1, "bs mean {bs}");
    }

    #[test]
    fn tpose_recovers_ground_truth() {
        let facing = 0.7;
        let true_iw = yaw_rotation(0.25);
        let mounts = [("pelvis", yaw_rotation(0.0)), ("head", rot(0.3, -0.2, 0.9)), ("arm", rot(1.2, 0.1, -0.4))];
        let bones = [yaw_rotation(facing), rot(0.1, 0.05, 0.6), rot(-0.2, 1.0, 0.3)];
        let refs: BTreeMap<_, _> = mounts
            .iter()
            .zip(&bones)
            .map(|((id, mount), wb)| {
                (id.to_string(), TposeReference { r_is: true_iw * wb * mount, r_wb: *wb })
            })
            .collect();
        let calib = simulate_tpose_calibration(&refs, "pelvis", facing).unwrap();
        for ((id, mount), wb) in mounts.iter().zip(&bones) {
            let c = &calib[*id];
            assert!(geodesic_angle(&c.r_iw, &true_iw) < 1e-9);
            assert!(geodesic_angle(&c.r_bs, mount) < 1e-9);
            let back = bone_orientation(&refs[*id].r_is, c);
            assert!(geodesic_angle(&back, wb) < 1e-9);
        }
    }

    #[test]
    fn tpose_bone_error_is_absorbed_by_r_bs() {
        let mount = rot(0.3, -0.2, 0.9);
        let wb = rot(0.1, 0.05, 0.6);
        let err = rot(0.0, 5f64.to_radians(), 0.0);
        let r_is = wb * mount;
        let r_bs = solve_r_bs(&r_is, &(wb * err), &Rotation3::identity());
        assert!((geodesic_angle(&r_bs, &mount).to_degrees() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn tpose_requires_root() {
        let refs = BTreeMap::from([(
            "head".to_string(),
            TposeReference { r_is: Rotation3::identity(), r_wb: Rotation3::identity() },
        )]);
        assert!(matches!(
            simulate_tpose_calibration(&refs, "pelvis", 0.0),
            Err(Error::MissingRootSensor(_))
        ));
    }

    proptest! {
        #[test]
        fn round_trip(r_iw in arb_rot(), r_wb in arb_rot(), r_bs in arb_rot()) {
            let c = CalibrationMatrices { r_iw, r_bs };
            let back = bone_orientation(&(r_iw * r_wb * r_bs), &c);
            prop_assert!(geodesic_angle(&back, &r_wb) < 1e-12);
        }

        #[test]
        fn bone_error_bounded_by_perturbation(
            r_iw in arb_rot(), r_wb in arb_rot(), r_bs in arb_rot(), seed in 0u64..1000,
        ) {
            let c = CalibrationMatrices { r_iw, r_bs };
            let params = CalibrationErrorParams { iw_angle_mean: 0.05, bs_angle_mean: 0.08, seed };
            let (p, a) = perturb_calibration_with_angles(&c, &params).unwrap();
            prop_assume!(a.iw < 0.3 && a.bs < 0.3);
            let err = geodesic_angle(&bone_orientation(&(r_iw * r_wb * r_bs), &p), &r_wb);
            prop_assert!(err <= a.iw + a.bs + 1e-12);
        }
    }
}
