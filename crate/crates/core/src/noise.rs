//! Measurement noise for clean raw IMU streams: a Brownian bias plus white
//! noise on the inertial channels, white noise on the magnetometer.
//!
//! Every (stream, channel) pair draws from its own ChaCha substream, so
//! changing the parameters of one channel never changes another channel's
//! realization, and two sensors with different stream ids are independent.

use nalgebra::Vector3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::RawImuStream;

/// Continuous-time densities of a typical consumer MEMS IMU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDensities {
    /// rad/s/√Hz
    pub gyro_noise_density: f64,
    /// m/s²/√Hz
    pub accel_noise_density: f64,
    /// rad/s·√s⁻¹ (bias random walk)
    pub gyro_random_walk: f64,
    /// m/s²·√s⁻¹
    pub accel_random_walk: f64,
    /// Per-sample magnetometer std (unit field).
    pub mag_white_std: f64,
}

/// Named profile `consumer-mems`.
pub const CONSUMER_MEMS: NoiseDensities = NoiseDensities {
    gyro_noise_density: 1.7e-4,
    accel_noise_density: 2.0e-3,
    gyro_random_walk: 1.9e-5,
    accel_random_walk: 3.0e-3,
    mag_white_std: 0.01,
};

/// Per-sample noise parameters of one stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuNoiseParams {
    /// m/s², per high-rate sample.
    pub accel_white_std: f64,
    /// rad/s, per high-rate sample.
    pub gyro_white_std: f64,
    /// Per keyframe sample, unit field.
    pub mag_white_std: f64,
    /// m/s²/√s
    pub accel_bias_walk: f64,
    /// rad/s/√s
    pub gyro_bias_walk: f64,
    pub seed: u64,
}

impl Default for ImuNoiseParams {
    fn default() -> Self {
        ImuNoiseParams::from_densities(&CONSUMER_MEMS, 180.0, 0)
    }
}

impl ImuNoiseParams {
    pub fn zero() -> Self {
        ImuNoiseParams {
            accel_white_std: 0.0,
            gyro_white_std: 0.0,
            mag_white_std: 0.0,
            accel_bias_walk: 0.0,
            gyro_bias_walk: 0.0,
            seed: 0,
        }
    }

    /// Converts densities to per-sample std at `sample_rate` (`std = density·√rate`).
    pub fn from_densities(d: &NoiseDensities, sample_rate: f64, seed: u64) -> Self {
        let root = sample_rate.sqrt();
        ImuNoiseParams {
            accel_white_std: d.accel_noise_density * root,
            gyro_white_std: d.gyro_noise_density * root,
            mag_white_std: d.mag_white_std,
            accel_bias_walk: d.accel_random_walk,
            gyro_bias_walk: d.gyro_random_walk,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let values = [
            self.accel_white_std,
            self.gyro_white_std,
            self.mag_white_std,
            self.accel_bias_walk,
            self.gyro_bias_walk,
        ];
        if values.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidInput("noise parameters must be finite and >= 0".into()))
        }
    }
}

/// Sensor biases at one high-rate sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BiasState {
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
}

#[derive(Clone, Copy)]
enum Channel {
    Accel = 0,
    Gyro = 1,
    Mag = 2,
}

fn channel_rng(seed: u64, stream_id: u64, channel: Channel) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id.wrapping_mul(4).wrapping_add(channel as u64));
    rng
}

fn gaussian3(rng: &mut ChaCha8Rng, std: f64) -> Vector3<f64> {
    Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ) * std
}

/// Bias walk plus white noise on one inertial channel; returns the bias at each sample.
fn corrupt_inertial(
    samples: &mut [Vector3<f64>],
    white_std: f64,
    walk: f64,
    dt: f64,
    mut rng: ChaCha8Rng,
) -> Vec<Vector3<f64>> {
    if white_std == 0.0 && walk == 0.0 {
        return vec![Vector3::zeros(); samples.len()];
    }
    let step_std = walk * dt.sqrt();
    let mut bias = gaussian3(&mut rng, 10.0 * walk);
    let mut trace = Vec::with_capacity(samples.len());
    for s in samples.iter_mut() {
        let white = gaussian3(&mut rng, white_std);
        *s += bias + white;
        trace.push(bias);
        bias += gaussian3(&mut rng, step_std);
    }
    trace
}

/// Adds bias random walks and white noise to a clean stream.
///
/// `stream_id` selects an independent substream (one per sensor).
pub fn add_noise(
    clean: &RawImuStream,
    params: &ImuNoiseParams,
    stream_id: u64,
) -> Result<(RawImuStream, Vec<BiasState>)> {
    params.validate()?;
    let dt = clean.dt();
    let mut noisy = clean.clone();
    let accel_bias = corrupt_inertial(
        &mut noisy.accel,
        params.accel_white_std,
        params.accel_bias_walk,
        dt,
        channel_rng(params.seed, stream_id, Channel::Accel),
    );
    let gyro_bias = corrupt_inertial(
        &mut noisy.gyro,
        params.gyro_white_std,
        params.gyro_bias_walk,
        dt,
        channel_rng(params.seed, stream_id, Channel::Gyro),
    );
    if params.mag_white_std > 0.0 {
        let mut rng = channel_rng(params.seed, stream_id, Channel::Mag);
        for m in noisy.mag.iter_mut() {
            let perturbed = *m + gaussian3(&mut rng, params.mag_white_std);
            *m = perturbed.normalize();
        }
    }
    let trace = accel_bias
        .into_iter()
        .zip(gyro_bias)
        .map(|(accel_bias, gyro_bias)| BiasState { accel_bias, gyro_bias })
        .collect();
    Ok((noisy, trace))
}
