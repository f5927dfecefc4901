use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::{Rotation3, Vector3};

use imusynth::io::{read_raw_stream, write_bone_csv};
use imusynth::trajectory::Pose;

fn imusynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imusynth")).args(args).output().expect("binary runs")
}

fn static_setup(dir: &Path, root: &str) -> String {
    let pose = Pose::new(Vector3::new(0.0, 0.0, 1.0), Rotation3::identity());
    write_bone_csv(&dir.join("still.csv"), 60.0, &[pose, pose]).unwrap();
    let config = dir.join("config.toml");
    fs::write(
        &config,
        format!("seed = 3\nroot_sensor = \"{root}\"\n\n[[sensors]]\nid = \"still\"\nbone_file = \"still.csv\"\n"),
    )
    .unwrap();
    config.to_string_lossy().into_owned()
}

#[test]
fn missing_config_is_an_io_error() {
    let out = imusynth(&["synth", "--config", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn missing_root_sensor_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = static_setup(dir.path(), "pelvis");
    let out = imusynth(&["synth", "--config", &config, "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(imusynth(&["synth"]).status.code(), Some(2));
    assert_eq!(imusynth(&["eval", "a.csv"]).status.code(), Some(2));
}

#[test]
fn two_static_frames_give_gravity_only_streams() {
    let dir = tempfile::tempdir().unwrap();
    let config = static_setup(dir.path(), "still");
    let run = dir.path().join("run");
    let out = imusynth(&["synth", "--config", &config, "--out", run.to_str().unwrap(), "--no-noise"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let clean = read_raw_stream(&run.join("still/imu_clean.csv"), &run.join("still/mag_clean.csv")).unwrap();
    assert_eq!(clean.accel.len(), 3);
    assert_eq!(clean.mag.len(), 2);
    for (f, w) in clean.accel.iter().zip(&clean.gyro) {
        assert!((f - Vector3::new(0.0, 0.0, 9.81)).norm() < 1e-9);
        assert!(w.norm() < 1e-12);
    }
}

#[test]
fn same_seed_is_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = static_setup(dir.path(), "still");
    let runs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|name| {
            let out_dir = dir.path().join(name);
            let out = imusynth(&["synth", "--config", &config, "--out", out_dir.to_str().unwrap()]);
            assert!(out.status.success());
            fs::read(out_dir.join("still/imu.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);

    let other = dir.path().join("c");
    assert!(imusynth(&["synth", "--config", &config, "--out", other.to_str().unwrap(), "--seed", "4"]).status.success());
    assert_ne!(runs[0], fs::read(other.join("still/imu.csv")).unwrap());
}

#[test]
fn eval_rejects_signals_too_short_for_a_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let config = static_setup(dir.path(), "still");
    let run = dir.path().join("run");
    assert!(imusynth(&["synth", "--config", &config, "--out", run.to_str().unwrap()]).status.success());
    let imu = run.join("still/imu.csv");
    let out = imusynth(&["eval", imu.to_str().unwrap(), imu.to_str().unwrap()]);
    // Three samples are too few for a spectrum.
    assert_eq!(out.status.code(), Some(3));
}
