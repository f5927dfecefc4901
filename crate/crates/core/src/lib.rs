//! Raw IMU synthesis from low-rate 6DoF trajectories, error-state Kalman
//! fusion, calibration-error modeling and fictitious accelerations in a
//! non-inertial root frame.

pub mod calibration;
pub mod config;
pub mod error;
pub mod eskf;
pub mod evaluation;
pub mod io;
pub mod lsqr;
pub mod motion;
pub mod noise;
pub mod noninertial;
pub mod pipeline;
pub mod so3;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
