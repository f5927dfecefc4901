//! Seeded synthetic motion for demos and tests: smooth band-limited pose
//! sequences, and a rest/move alternation resembling everyday activity.

use std::f64::consts::TAU;

use nalgebra::{Rotation3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::so3::{exp_so3, yaw_rotation};
use crate::trajectory::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSpec {
    /// Seconds.
    pub duration: f64,
    pub frame_rate: f64,
    /// Highest frequency present, Hz.
    pub max_hz: f64,
    /// Peak linear acceleration per sinusoid, m/s².
    pub accel_amplitude: f64,
    /// Peak angular rate per sinusoid, rad/s.
    pub rate_amplitude: f64,
    /// Sinusoids per axis.
    pub harmonics: usize,
    pub seed: u64,
}

impl Default for MotionSpec {
    fn default() -> Self {
        MotionSpec {
            duration: 10.0,
            frame_rate: 60.0,
            max_hz: 3.0,
            accel_amplitude: 1.5,
            rate_amplitude: 0.8,
            harmonics: 3,
            seed: 0,
        }
    }
}

impl MotionSpec {
    pub fn frames(&self) -> usize {
        (self.duration * self.frame_rate).round() as usize + 1
    }
}

#[derive(Debug, Clone, Copy)]
struct Sinusoid {
    amplitude: f64,
    hz: f64,
    phase: f64,
}

/// Sum of sinusoids on each of three axes.
#[derive(Debug, Clone)]
pub struct BandLimitedSignal {
    axes: [Vec<Sinusoid>; 3],
}

impl BandLimitedSignal {
    /// Random frequencies in `[0.1, max_hz]`; each component's amplitude is
    /// `peak / (2πf)^order` so that its `order`-th derivative peaks at `peak`.
    pub fn random(rng: &mut ChaCha8Rng, harmonics: usize, max_hz: f64, peak: f64, order: i32) -> Self {
        let lo = 0.1f64.min(max_hz);
        let mut axis = || {
            (0..harmonics)
                .map(|_| {
                    let hz = rng.random_range(lo..=max_hz);
                    Sinusoid {
                        amplitude: peak * rng.random_range(0.3..=1.0) / (TAU * hz).powi(order),
                        hz,
                        phase: rng.random_range(0.0..TAU),
                    }
                })
                .collect::<Vec<_>>()
        };
        BandLimitedSignal { axes: [axis(), axis(), axis()] }
    }

    pub fn value(&self, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|i, _| {
            self.axes[i].iter().map(|s| s.amplitude * (TAU * s.hz * t + s.phase).sin()).sum()
        })
    }
}

fn sample_times(spec: &MotionSpec) -> impl Iterator<Item = f64> + '_ {
    (0..spec.frames()).map(move |i| i as f64 / spec.frame_rate)
}

/// Band-limited position and rotation-vector signals around `origin`.
pub fn band_limited_poses(spec: &MotionSpec, origin: &Pose) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pos = BandLimitedSignal::random(&mut rng, spec.harmonics, spec.max_hz, spec.accel_amplitude, 2);
    let rot = BandLimitedSignal::random(&mut rng, spec.harmonics, spec.max_hz, spec.rate_amplitude, 1);
    sample_times(spec)
        .map(|t| Pose::new(origin.position + pos.value(t), origin.rotation * exp_so3(&rot.value(t))))
        .collect()
}

/// Smooth 0→1 ramp over `[0, 1]` with zero first and second derivatives at
/// both ends.
fn smootherstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (x * (6.0 * x - 15.0) + 10.0)
}

/// Activity level in `[0, 1]`: rest for `rest` s, ramp up over `ramp` s,
/// move, ramp down, repeat with period `rest + move_time + 2·ramp`.
fn envelope(t: f64, rest: f64, move_time: f64, ramp: f64) -> f64 {
    let period = rest + move_time + 2.0 * ramp;
    let u = t.rem_euclid(period);
    if u < rest {
        0.0
    } else if u < rest + ramp {
        smootherstep((u - rest) / ramp)
    } else if u < rest + ramp + move_time {
        1.0
    } else {
        1.0 - smootherstep((u - rest - ramp - move_time) / ramp)
    }
}

/// Activity level of [`mixed_motion`] at time `t`: 2 s still, 4 s moving,
/// with 0.75 s smooth ramps in between.
pub fn activity(t: f64) -> f64 {
    envelope(t, 2.0, 4.0, 0.75)
}

/// Rest/move alternation following [`activity`]. Every rest period has a
/// different heading, since the accumulated turning is not undone.
pub fn mixed_motion(spec: &MotionSpec) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pos = BandLimitedSignal::random(&mut rng, spec.harmonics, spec.max_hz, spec.accel_amplitude, 2);
    let rot = BandLimitedSignal::random(&mut rng, spec.harmonics, spec.max_hz, spec.rate_amplitude, 1);
    let turn_rate = rng.random_range(-0.6..0.6);
    let dt = 1.0 / spec.frame_rate;
    let mut heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    sample_times(spec)
        .map(|t| {
            let e = activity(t);
            heading += turn_rate * e * dt;
            let rotation: Rotation3<f64> = yaw_rotation(heading) * exp_so3(&(rot.value(t) * e));
            Pose::new(pos.value(t) * e + Vector3::new(0.0, 0.0, 1.0), rotation)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::log_so3;

    #[test]
    fn frame_count_and_determinism() {
        let spec = MotionSpec { duration: 2.0, ..Default::default() };
        let a = mixed_motion(&spec);
        assert_eq!(a.len(), 121);
        assert_eq!(a, mixed_motion(&spec));
        let b = band_limited_poses(&spec, &Pose::new(Vector3::zeros(), Rotation3::identity()));
        assert_eq!(b.len(), 121);
    }

    #[test]
    fn mixed_motion_rests_then_moves() {
        let spec = MotionSpec { duration: 8.0, ..Default::default() };
        let poses = mixed_motion(&spec);
        let step = |i: usize| {
            log_so3(&(poses[i].rotation.inverse() * poses[i + 1].rotation)).norm()
                + (poses[i + 1].position - poses[i].position).norm()
        };
        assert!((0..115).all(|i| step(i) == 0.0));
        assert!((200..300).any(|i| step(i) > 1e-3));
    }

    #[test]
    fn envelope_is_continuous() {
        let mut prev = envelope(0.0, 2.0, 4.0, 0.75);
        for i in 1..20_000 {
            let e = envelope(i as f64 * 1e-3, 2.0, 4.0, 0.75);
            assert!((e - prev).abs() < 5e-3);
            prev = e;
        }
    }
}
