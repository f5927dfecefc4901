//! Writes the bundled example trajectories: a pelvis following a rest/move
//! pattern and three limbs moving relative to it.
//!
//! `cargo run --example make_example_data -- data/example`

use std::path::PathBuf;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use imusynth::io::write_bone_csv;
use imusynth::motion::{activity, mixed_motion, BandLimitedSignal, MotionSpec};
use imusynth::so3::exp_so3;
use imusynth::trajectory::Pose;

fn main() -> imusynth::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/example".into()));
    let spec = MotionSpec { duration: 20.0, seed: 7, ..Default::default() };
    let pelvis = mixed_motion(&spec);
    write_bone_csv(&dir.join("pelvis.csv"), spec.frame_rate, &pelvis)?;

    let limbs = [
        ("head", Vector3::new(0.0, 0.0, 0.6), 1),
        ("left_forearm", Vector3::new(0.1, 0.35, 0.2), 2),
        ("right_lower_leg", Vector3::new(0.0, -0.12, -0.6), 3),
    ];
    for (name, offset, seed) in limbs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wobble = BandLimitedSignal::random(&mut rng, 3, 2.0, 1.0, 2);
        let swing = BandLimitedSignal::random(&mut rng, 3, 2.0, 0.8, 1);
        let poses: Vec<Pose> = pelvis
            .iter()
            .enumerate()
            .map(|(i, root)| {
                let t = i as f64 / spec.frame_rate;
                let e = activity(t);
                let local = offset + wobble.value(t) * e;
                Pose::new(
                    root.position + root.rotation * local,
                    root.rotation * exp_so3(&(swing.value(t) * e)),
                )
            })
            .collect();
        write_bone_csv(&dir.join(format!("{name}.csv")), spec.frame_rate, &poses)?;
    }
    println!("wrote example trajectories to {}", dir.display());
    Ok(())
}
