use nalgebra::{Rotation3, Vector3};

use imusynth::calibration::{bone_orientation, simulate_tpose_calibration, TposeReference};
use imusynth::eskf::{fuse_stream, EskfConfig, EskfState};
use imusynth::motion::{band_limited_poses, MotionSpec};
use imusynth::noninertial::{corrected_leaf_acceleration, fictitious_acceleration, root_frame_quantities, RootDynamics};
use imusynth::so3::{exp_so3, geodesic_angle, yaw_rotation};
use imusynth::synth::RawImuStream;
use imusynth::trajectory::Pose;

fn still_stream(keyframes: usize, r: &Rotation3<f64>) -> RawImuStream {
    let len = 3 * (keyframes - 1);
    RawImuStream {
        keyframe_rate: 60.0,
        substeps: 3,
        accel: vec![r.inverse() * Vector3::new(0.0, 0.0, 9.81); len],
        gyro: vec![Vector3::zeros(); len],
        mag: vec![r.inverse() * Vector3::x(); keyframes],
        gravity: Vector3::new(0.0, 0.0, -9.81),
    }
}

fn leaf_around(root: &[Pose]) -> Vec<Pose> {
    root.iter()
        .enumerate()
        .map(|(i, r)| {
            let t = i as f64 / 180.0;
            let p = Vector3::new(0.3 + 0.05 * (2.0 * t).sin(), 0.1, -0.2 * (1.5 * t).cos());
            Pose::new(r.position + r.rotation * p, r.rotation * exp_so3(&Vector3::new(0.0, 0.4 * t, 0.0)))
        })
        .collect()
}

#[test]
fn root_frame_quantities_ignore_world_rotation() {
    let spec = MotionSpec { duration: 1.0, frame_rate: 180.0, seed: 4, ..Default::default() };
    let root = band_limited_poses(&spec, &Pose::new(Vector3::new(0.0, 0.0, 1.0), Rotation3::identity()));
    let leaf = leaf_around(&root);
    let g = exp_so3(&Vector3::new(0.7, -1.1, 2.3));
    let shift = Vector3::new(3.0, -2.0, 0.5);
    let moved = |p: &[Pose]| -> Vec<Pose> {
        p.iter().map(|x| Pose::new(g * x.position + shift, g * x.rotation)).collect()
    };
    let a = root_frame_quantities(180.0, &root, &leaf).unwrap();
    let b = root_frame_quantities(180.0, &moved(&root), &moved(&leaf)).unwrap();
    for (qa, qb) in a.iter().zip(&b) {
        let fa = fictitious_acceleration(&qa.root, &qa.leaf.position, &qa.leaf.velocity);
        let fb = fictitious_acceleration(&qb.root, &qb.leaf.position, &qb.leaf.velocity);
        assert!((qa.leaf.position - qb.leaf.position).norm() < 1e-9);
        assert!((qa.leaf.velocity - qb.leaf.velocity).norm() < 1e-9);
        assert!((fa - fb).norm() < 1e-9);
        let (pa, pb) = (corrected_leaf_acceleration(&qa.root, &qa.leaf), corrected_leaf_acceleration(&qb.root, &qb.leaf));
        assert!((pa - pb).norm() < 1e-9 * pa.norm().max(1.0));
    }
}

#[test]
fn vanishing_rotation_leaves_linear_term() {
    let a_rr = Vector3::new(0.4, -1.2, 2.0);
    let (p, v) = (Vector3::new(0.3, 0.2, -0.5), Vector3::new(1.0, -0.4, 0.2));
    let mut prev = f64::INFINITY;
    for scale in [1e-1, 1e-3, 1e-5, 0.0] {
        let root = RootDynamics {
            accel: a_rr,
            angular_velocity: Vector3::new(1.0, 2.0, -1.0) * scale,
            angular_accel: Vector3::new(-3.0, 0.5, 1.0) * scale,
        };
        let gap = (fictitious_acceleration(&root, &p, &v) + a_rr).norm();
        assert!(gap <= prev);
        prev = gap;
    }
    assert_eq!(prev, 0.0);
}

#[test]
fn yaw_is_unobservable_without_magnetometer() {
    let cfg = EskfConfig { use_mag: false, ..Default::default() };
    let truth = yaw_rotation(1.0);
    let mut stream = still_stream(301, &truth);
    // Initialization still reads the magnetometer, here off by 0.5 rad.
    stream.mag = vec![yaw_rotation(1.5).inverse() * Vector3::x(); stream.mag.len()];
    let est = fuse_stream(&stream, &cfg).unwrap();
    let last = est.last().unwrap();
    assert!((geodesic_angle(last, &truth).to_degrees() - 0.5f64.to_degrees()).abs() < 1e-6);
}

#[test]
fn magnetometer_pulls_yaw_back() {
    let truth = yaw_rotation(1.0);
    let stream = still_stream(601, &truth);
    let mut state = EskfState::init(&stream.accel[0], &(yaw_rotation(1.3).inverse() * Vector3::x()), &EskfConfig::default())
        .unwrap();
    let cfg = EskfConfig::default();
    let start = geodesic_angle(&state.rotation(), &truth);
    for m in &stream.mag {
        state.update_mag(&cfg, m);
    }
    assert!(geodesic_angle(&state.rotation(), &truth) < 0.1 * start);
}

#[test]
fn gravity_gate_admits_fewer_updates_as_it_tightens() {
    let mut stream = still_stream(121, &Rotation3::identity());
    for (k, f) in stream.accel.iter_mut().enumerate() {
        f.z += 0.3 * (k as f64 * 0.37).sin();
    }
    let counts: Vec<usize> = [0.4, 0.2, 0.1, 0.05]
        .iter()
        .map(|&thresh| {
            let mut cfg = EskfConfig { use_zupt: false, ..Default::default() };
            cfg.zupt.accel_dev_thresh = thresh;
            imusynth::eskf::fuse_stream_with_stats(&stream, &cfg).unwrap().1.gravity_updates
        })
        .collect();
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
    assert!(counts[0] > counts[3]);
}

#[test]
fn constant_spin_is_tracked() {
    let w = Vector3::new(0.0, 0.0, 0.8);
    let keyframes = 181;
    let dt = 1.0 / 180.0;
    let len = 3 * (keyframes - 1);
    let r = |k: usize| exp_so3(&(w * (k as f64 * dt)));
    let stream = RawImuStream {
        keyframe_rate: 60.0,
        substeps: 3,
        accel: (0..len).map(|k| r(k).inverse() * Vector3::new(0.0, 0.0, 9.81)).collect(),
        gyro: vec![w; len],
        mag: (0..keyframes).map(|i| r(3 * i).inverse() * Vector3::x()).collect(),
        gravity: Vector3::new(0.0, 0.0, -9.81),
    };
    let est = fuse_stream(&stream, &EskfConfig::default()).unwrap();
    for (k, e) in est.iter().enumerate() {
        assert!(geodesic_angle(e, &r(k)).to_degrees() < 0.05, "sample {k}");
    }
}

#[test]
fn tpose_calibration_recovers_bone_orientations() {
    let facing = 0.4;
    let mounts = [
        ("pelvis", Rotation3::identity(), exp_so3(&Vector3::new(0.0, 0.0, 0.3))),
        ("arm", exp_so3(&Vector3::new(0.2, 0.1, -0.4)), exp_so3(&Vector3::new(1.2, 0.0, 0.5))),
    ];
    let r_iw = yaw_rotation(0.9);
    let mut refs = std::collections::BTreeMap::new();
    for (id, r_wb, r_bs) in &mounts {
        // The root sensor's x axis points along the facing direction.
        let r_wb = if *id == "pelvis" { yaw_rotation(facing) * r_bs.inverse() } else { *r_wb };
        let r_is = r_iw * r_wb * r_bs;
        refs.insert(id.to_string(), TposeReference { r_is, r_wb });
    }
    let cal = simulate_tpose_calibration(&refs, "pelvis", facing).unwrap();
    for (id, reference) in &refs {
        let back = bone_orientation(&reference.r_is, &cal[id]);
        assert!(geodesic_angle(&back, &reference.r_wb) < 1e-9, "{id}");
        assert!(geodesic_angle(&cal[id].r_iw, &r_iw) < 1e-9, "{id}");
    }
}
