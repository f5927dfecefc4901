//! Leaf-joint kinematics in the non-inertial root (pelvis) frame.
//!
//! With `p_RL = R_WRᵀ·(p_WL − p_WR)` and body rate `Ṙ_WR = R_WR·[ω]×`, the
//! second derivative of the root-frame leaf position splits into the leaf's
//! world acceleration seen from the root plus the fictitious acceleration
//! `a_fic = −(a_RR + ω×(ω×p) + 2ω×ṗ + ω̇×p)` (linear, centrifugal, Coriolis
//! and Euler terms, all per unit mass).

use nalgebra::{Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::so3::log_so3;
use crate::trajectory::Pose;

/// Root motion expressed in the root frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RootDynamics {
    /// `R_WRᵀ·p̈_WR`, m/s².
    pub accel: Vector3<f64>,
    /// rad/s
    pub angular_velocity: Vector3<f64>,
    /// rad/s²
    pub angular_accel: Vector3<f64>,
}

/// Leaf joint relative to the root, in the root frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafState {
    /// `p_RL`, m.
    pub position: Vector3<f64>,
    /// `ṗ_RL`, m/s.
    pub velocity: Vector3<f64>,
    /// `R_WRᵀ·p̈_WL`, m/s².
    pub accel: Vector3<f64>,
    /// `R_RL`
    pub rotation: Rotation3<f64>,
}

pub fn fictitious_acceleration(
    root: &RootDynamics,
    position: &Vector3<f64>,
    velocity: &Vector3<f64>,
) -> Vector3<f64> {
    let w = &root.angular_velocity;
    let linear = root.accel;
    let centrifugal = w.cross(&w.cross(position));
    let coriolis = 2.0 * w.cross(velocity);
    let euler = root.angular_accel.cross(position);
    -(linear + centrifugal + coriolis + euler)
}

/// `p̈_RL = a_RL + a_fic`.
pub fn corrected_leaf_acceleration(root: &RootDynamics, leaf: &LeafState) -> Vector3<f64> {
    leaf.accel + fictitious_acceleration(root, &leaf.position, &leaf.velocity)
}

/// Root and leaf quantities at one input frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameQuantities {
    /// Index into the input sequences.
    pub frame: usize,
    pub root: RootDynamics,
    pub leaf: LeafState,
}

/// Minimum sequence length for [`root_frame_quantities`].
pub const MIN_FRAMES: usize = 5;

/// Root-frame quantities at every interior frame of uniformly sampled world
/// trajectories. Body rates come from `Log(R_iᵀR_{i+1})/Δt` at midpoints;
/// world velocities and accelerations from central differences.
pub fn root_frame_quantities(
    frame_rate: f64,
    root: &[Pose],
    leaf: &[Pose],
) -> Result<Vec<FrameQuantities>> {
    if root.len() != leaf.len() {
        return Err(Error::LengthMismatch { left: root.len(), right: leaf.len() });
    }
    if root.len() < MIN_FRAMES {
        return Err(Error::TooShort { needed: MIN_FRAMES, got: root.len() });
    }
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(Error::InvalidInput(format!("frame rate {frame_rate} must be positive")));
    }
    let dt = 1.0 / frame_rate;
    let mid_rates: Vec<Vector3<f64>> = root
        .windows(2)
        .map(|w| log_so3(&(w[0].rotation.inverse() * w[1].rotation)) / dt)
        .collect();
    let velocity = |p: &[Pose], i: usize| (p[i + 1].position - p[i - 1].position) / (2.0 * dt);
    let accel = |p: &[Pose], i: usize| {
        (p[i + 1].position - 2.0 * p[i].position + p[i - 1].position) / (dt * dt)
    };

    Ok((1..root.len() - 1)
        .map(|i| {
            let r_wr_t = root[i].rotation.inverse();
            let w = (mid_rates[i - 1] + mid_rates[i]) * 0.5;
            let dynamics = RootDynamics {
                accel: r_wr_t * accel(root, i),
                angular_velocity: w,
                angular_accel: (mid_rates[i] - mid_rates[i - 1]) / dt,
            };
            let position = r_wr_t * (leaf[i].position - root[i].position);
            let rel_velocity = r_wr_t * (velocity(leaf, i) - velocity(root, i));
            let state = LeafState {
                position,
                velocity: rel_velocity - w.cross(&position),
                accel: r_wr_t * accel(leaf, i),
                rotation: r_wr_t * leaf[i].rotation,
            };
            FrameQuantities { frame: i, root: dynamics, leaf: state }
        })
        .collect())
}
