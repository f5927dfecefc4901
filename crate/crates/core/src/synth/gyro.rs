//! Gyroscope synthesis: Gauss–Newton over the substep body rates `ω_ij`.
//!
//! Residuals per keyframe interval `i`:
//!
//! * rotation: `√λ_R · Log(R_{i+1}ᵀ·R_i·∏_j Exp(ω_ij·Δt))`
//! * smoothness, per consecutive pair of substeps: `√λ_ω · Δt·(ω_ij − ω_ij^prev)`
//!
//! The `Δt` on the smoothness term puts both residuals in radians.
//! Perturbing `ω_ik` by `δ` moves the rotation residual by
//! `J_r⁻¹(r_i)·S_kᵀ·J_r(ω_ik·Δt)·Δt·δ`, with `S_k` the product of the
//! substep rotations after `k`.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::windows;
use crate::error::{Error, Result};
use crate::lsqr::{lsqr, LsqrOptions, SparseBuilder};
use crate::so3::{exp_so3, log_so3, right_jacobian, right_jacobian_inv};
use crate::trajectory::SensorTrajectory;

const MAX_HALVINGS: usize = 10;
const STEP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GyroSolveConfig {
    pub lambda_r: f64,
    pub lambda_w: f64,
    pub substeps: usize,
    pub gn_max_iters: usize,
    /// Converged once `‖Jᵀr‖` drops below this.
    pub gn_tol: f64,
    pub window: Option<usize>,
}

impl Default for GyroSolveConfig {
    fn default() -> Self {
        GyroSolveConfig {
            lambda_r: 1.0,
            lambda_w: 1.0,
            substeps: 3,
            gn_max_iters: 20,
            gn_tol: 1e-9,
            window: None,
        }
    }
}

impl GyroSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_r, self.lambda_w].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("gyro weights must be finite and >= 0".into()));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidInput("substeps must be >= 1".into()));
        }
        if self.window == Some(0) {
            return Err(Error::InvalidInput("window must be >= 1 interval".into()));
        }
        Ok(())
    }
}

/// Per-window solver state.
struct Problem<'a> {
    keyframes: &'a [Rotation3<f64>],
    n: usize,
    dt: f64,
    wr: f64,
    ww: f64,
}

impl Problem<'_> {
    fn intervals(&self) -> usize {
        self.keyframes.len() - 1
    }

    fn unknowns(&self) -> usize {
        3 * self.n * self.intervals()
    }

    fn omega(x: &[f64], k: usize) -> Vector3<f64> {
        Vector3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2])
    }

    fn rotation_residual(&self, x: &[f64], i: usize) -> Vector3<f64> {
        let mut prod = self.keyframes[i + 1].inverse() * self.keyframes[i];
        for j in 0..self.n {
            prod *= exp_so3(&(Self::omega(x, i * self.n + j) * self.dt));
        }
        log_so3(&prod)
    }

    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let mut r = Vec::with_capacity(3 * self.intervals() + self.unknowns());
        for i in 0..self.intervals() {
            let ri = self.rotation_residual(x, i) * self.wr;
            r.extend_from_slice(ri.as_slice());
        }
        let total = self.n * self.intervals();
        for k in 1..total {
            let d = (Self::omega(x, k) - Self::omega(x, k - 1)) * (self.ww * self.dt);
            r.extend_from_slice(d.as_slice());
        }
        r
    }

    fn jacobian(&self, x: &[f64]) -> crate::lsqr::SparseMatrix {
        let mut b = SparseBuilder::new(self.unknowns());
        for i in 0..self.intervals() {
            let r = self.rotation_residual(x, i);
            let jr_inv = right_jacobian_inv(&r);
            let steps: Vec<Vector3<f64>> = (0..self.n).map(|j| Self::omega(x, i * self.n + j) * self.dt).collect();
            // suffix[j] = ∏_{l>j} Exp(ω_l Δt)
            let mut suffix = vec![Rotation3::identity(); self.n];
            for j in (0..self.n.saturating_sub(1)).rev() {
                suffix[j] = exp_so3(&steps[j + 1]) * suffix[j + 1];
            }
            let blocks: Vec<Matrix3<f64>> = (0..self.n)
                .map(|j| jr_inv * suffix[j].inverse().matrix() * right_jacobian(&steps[j]) * (self.dt * self.wr))
                .collect();
            for row in 0..3 {
                let entries = (0..self.n).flat_map(|j| {
                    let col0 = 3 * (i * self.n + j);
                    let blk = blocks[j];
                    (0..3).map(move |c| (col0 + c, blk[(row, c)]))
                });
                b.push_row(entries);
            }
        }
        let total = self.n * self.intervals();
        let s = self.ww * self.dt;
        for k in 1..total {
            for c in 0..3 {
                b.push_row([(3 * k + c, s), (3 * (k - 1) + c, -s)]);
            }
        }
        b.build()
    }

    fn initial_guess(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.unknowns());
        for i in 0..self.intervals() {
            let w = log_so3(&(self.keyframes[i].inverse() * self.keyframes[i + 1])) / (self.n as f64 * self.dt);
            for _ in 0..self.n {
                x.extend_from_slice(w.as_slice());
            }
        }
        x
    }
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Outcome of one windowed Gauss–Newton run.
#[derive(Debug, Clone, PartialEq)]
pub struct GyroReport {
    /// Objective value after each accepted iteration (first entry: initialization).
    pub objective_trace: Vec<f64>,
    pub gradient_trace: Vec<f64>,
}

fn gauss_newton(problem: &Problem, cfg: &GyroSolveConfig) -> Result<(Vec<f64>, GyroReport)> {
    let mut x = problem.initial_guess();
    let mut r = problem.residuals(&x);
    let mut f = sum_sq(&r);
    let mut report = GyroReport {
        objective_trace: vec![f],
        gradient_trace: Vec::new(),
    };
    let mut grad = vec![0.0; x.len()];
    for _ in 0..=cfg.gn_max_iters {
        let jac = problem.jacobian(&x);
        jac.mul_transpose_vec(&r, &mut grad);
        let gnorm = sum_sq(&grad).sqrt();
        report.gradient_trace.push(gnorm);
        if gnorm < cfg.gn_tol {
            return Ok((x, report));
        }
        if report.gradient_trace.len() > cfg.gn_max_iters {
            break;
        }
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let step = lsqr(&jac, &neg_r, &LsqrOptions { tol: 1e-12, max_iters: 50_000 })?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&step.x).map(|(a, d)| a + scale * d).collect();
            let rt = problem.residuals(&trial);
            let ft = sum_sq(&rt);
            if ft < f {
                x = trial;
                r = rt;
                f = ft;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        report.objective_trace.push(f);
        if !accepted {
            // No representable decrease left: accept when the model step is negligible.
            let step_norm = sum_sq(&step.x).sqrt();
            if step_norm <= STEP_TOL * (1.0 + sum_sq(&x).sqrt()) || f == 0.0 {
                return Ok((x, report));
            }
            break;
        }
    }
    Err(Error::GaussNewton {
        trace: report.gradient_trace,
    })
}

/// Solves the angular-velocity energy. Output is `n·(m−1)` body-frame rates.
pub fn solve_angular_velocities(traj: &SensorTrajectory, cfg: &GyroSolveConfig) -> Result<Vec<Vector3<f64>>> {
    solve_angular_velocities_with_report(traj, cfg).map(|(w, _)| w)
}

pub fn solve_angular_velocities_with_report(
    traj: &SensorTrajectory,
    cfg: &GyroSolveConfig,
) -> Result<(Vec<Vector3<f64>>, Vec<GyroReport>)> {
    cfg.validate()?;
    let m = traj.len();
    if m < 2 {
        return Err(Error::TooShort { needed: 2, got: m });
    }
    let n = cfg.substeps;
    let dt = 1.0 / (traj.frame_rate() * n as f64);
    let rotations: Vec<Rotation3<f64>> = traj.rotations().copied().collect();
    let mut out = Vec::with_capacity(n * (m - 1));
    let mut reports = Vec::new();
    for (start, end) in windows(m, cfg.window) {
        let problem = Problem {
            keyframes: &rotations[start..=end],
            n,
            dt,
            wr: cfg.lambda_r.sqrt(),
            ww: cfg.lambda_w.sqrt(),
        };
        let (x, report) = gauss_newton(&problem, cfg)?;
        out.extend(x.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])));
        reports.push(report);
    }
    Ok((out, reports))
}

/// Orientation at every substep, obtained by replaying the body rates from
/// each keyframe: `R_ij = R_i·∏_{l<j} Exp(ω_il·Δt)`.
pub fn replay_orientations(traj: &SensorTrajectory, gyro: &[Vector3<f64>], substeps: usize) -> Vec<Rotation3<f64>> {
    let dt = 1.0 / (traj.frame_rate() * substeps as f64);
    let mut out = Vec::with_capacity(gyro.len());
    for (key, chunk) in traj.rotations().zip(gyro.chunks(substeps)) {
        let mut r = *key;
        for w in chunk {
            out.push(r);
            r *= exp_so3(&(w * dt));
        }
    }
    out
}

/// Orientation reached at the end of each interval when replaying the rates.
pub fn replay_keyframe_ends(traj: &SensorTrajectory, gyro: &[Vector3<f64>], substeps: usize) -> Vec<Rotation3<f64>> {
    let dt = 1.0 / (traj.frame_rate() * substeps as f64);
    traj.rotations()
        .zip(gyro.chunks(substeps))
        .map(|(key, chunk)| chunk.iter().fold(*key, |r, w| r * exp_so3(&(w * dt))))
        .collect()
}
