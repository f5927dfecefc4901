//! Rotation-group primitives: skew operator, exponential and logarithm maps,
//! quaternion conversions at I/O boundaries and the geodesic distance.
//!
//! Rotations are carried as [`Rotation3`] (an orthonormal matrix) everywhere
//! inside the crate. Quaternions only appear when reading or writing files,
//! always in `(w, x, y, z)` order.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Below this angle the Rodrigues coefficients switch to their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Above `π - NEAR_PI` the logarithm extracts the axis from the symmetric part.
const NEAR_PI: f64 = 1e-3;

/// Tolerated deviation from unit norm for quaternions read from files.
pub const QUAT_NORM_TOL: f64 = 0.01;

/// Matrix `[v]×` such that `skew(v) * w == v.cross(&w)`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
#[inline]
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Exponential map `ℝ³ → SO(3)` (Rodrigues formula).
pub fn exp_so3(phi: &Vector3<f64>) -> Rotation3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation3::from_matrix_unchecked(Matrix3::identity() + k * a + k * k * b)
}

/// Logarithm map `SO(3) → ℝ³`, returning the axis-angle vector with norm in `[0, π]`.
///
/// At exactly π the axis sign is ambiguous; the returned vector is still a
/// valid preimage under [`exp_so3`].
pub fn log_so3(r: &Rotation3<f64>) -> Vector3<f64> {
    let m = r.matrix();
    let w = vee(m);
    let sin_theta = w.norm();
    let cos_theta = (0.5 * (m.trace() - 1.0)).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < SMALL_ANGLE {
        return w * (1.0 + theta * theta / 6.0);
    }
    if theta < std::f64::consts::PI - NEAR_PI {
        return w * (theta / sin_theta);
    }

    // (R + Rᵀ)/2 - cosθ·I = (1 - cosθ)·aaᵀ; take the column with the largest diagonal.
    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
    let mut k = 0;
    for i in 1..3 {
        if sym[(i, i)] > sym[(k, k)] {
            k = i;
        }
    }
    let mut axis: Vector3<f64> = sym.column(k).into();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Rotation angle of `r1ᵀ·r2`, in radians.
pub fn geodesic_angle(r1: &Rotation3<f64>, r2: &Rotation3<f64>) -> f64 {
    log_so3(&(r1.inverse() * r2)).norm()
}

/// Right Jacobian of SO(3): `Exp(φ + δ) ≈ Exp(φ)·Exp(J_r(φ)·δ)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    if theta < 1e-5 {
        return Matrix3::identity() - k * 0.5 + k * k / 6.0;
    }
    Matrix3::identity() - k * ((1.0 - theta.cos()) / theta2)
        + k * k * ((theta - theta.sin()) / (theta2 * theta))
}

/// Inverse of [`right_jacobian`]: `Log(Exp(φ)·Exp(δ)) ≈ φ + J_r⁻¹(φ)·δ`.
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    if theta < 1e-5 {
        return Matrix3::identity() + k * 0.5 + k * k / 12.0;
    }
    let coeff = 1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + k * 0.5 + k * k * coeff
}

/// Rotation about the world z axis.
pub fn yaw_rotation(angle: f64) -> Rotation3<f64> {
    exp_so3(&Vector3::new(0.0, 0.0, angle))
}

/// Reads a `(w, x, y, z)` quaternion, normalizing it when its norm is within
/// [`QUAT_NORM_TOL`] of one.
pub fn rotation_from_wxyz(q: [f64; 4]) -> Result<Rotation3<f64>> {
    let [w, x, y, z] = q;
    let norm = (w * w + x * x + y * y + z * z).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > QUAT_NORM_TOL {
        return Err(Error::InvalidQuaternion { norm });
    }
    let uq = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
    Ok(uq.to_rotation_matrix())
}

/// Writes a rotation as a `(w, x, y, z)` unit quaternion with `w ≥ 0`.
pub fn rotation_to_wxyz(r: &Rotation3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(r);
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.w, s * q.i, s * q.j, s * q.k]
}

/// Re-orthonormalizes a matrix that has drifted from SO(3).
pub fn orthonormalize(r: &Rotation3<f64>) -> Rotation3<f64> {
    let mut out = *r;
    out.renormalize();
    out
}
