//! Accelerometer synthesis: recover a smooth high-rate world acceleration
//! sequence whose double integral replays the keyframe positions.
//!
//! Free variables are the substep accelerations `a_ij` and one velocity
//! `v_i` per keyframe. Inside interval `i` the substep velocities chain as
//! `v_ij = v_i + Δt·Σ_{k≤j} a_ik`, which makes the energy a linear least
//! squares problem with a banded matrix. The three energy terms are:
//!
//! * position: `Σ_j v_ij·Δt + p_i − p_{i+1}`
//! * velocity: `Δt·(Σ_j a_ij·Δt + v_i − v_{i+1})`
//! * smoothness: `Δt²·(a_ij − a_ij^prev)`
//!
//! The `Δt` and `Δt²` factors express every residual in meters, so the
//! dimensionless weights `λ_p, λ_v, λ_a` compare like with like. Sample
//! `a_ij` belongs to time `t_i + j·Δt` (zero-based `j`).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::windows;
use crate::error::{Error, Result};
use crate::lsqr::{lsqr, LsqrOptions, SparseBuilder, SparseMatrix};
use crate::trajectory::SensorTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccelSolveConfig {
    pub lambda_p: f64,
    pub lambda_v: f64,
    pub lambda_a: f64,
    /// Substeps per keyframe interval.
    pub substeps: usize,
    pub solver_tol: f64,
    pub max_iters: usize,
    /// Solve in windows of this many keyframe intervals (sharing one keyframe).
    pub window: Option<usize>,
}

impl Default for AccelSolveConfig {
    fn default() -> Self {
        AccelSolveConfig {
            lambda_p: 1.0,
            lambda_v: 0.5,
            lambda_a: 1.3,
            substeps: 3,
            solver_tol: 1e-8,
            max_iters: 200_000,
            window: None,
        }
    }
}

impl AccelSolveConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_p, self.lambda_v, self.lambda_a];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("accel weights must be finite and >= 0".into()));
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

#[derive(Debug, Clone, PartialEq)]
pub struct AccelSolution {
    /// World-frame accelerations (gravity excluded), `n·(m−1)` samples.
    pub accels: Vec<Vector3<f64>>,
    /// World-frame velocities at the keyframes, `m` samples.
    pub keyframe_velocities: Vec<Vector3<f64>>,
}

/// Layout of the unknown vector for one window of `m` keyframes.
struct Layout {
    keyframes: usize,
    n: usize,
}

impl Layout {
    fn unknowns(&self) -> usize {
        (self.keyframes - 1) * (self.n + 1) + 1
    }

    fn v(&self, i: usize) -> usize {
        i * (self.n + 1)
    }

    fn a(&self, i: usize, j: usize) -> usize {
        i * (self.n + 1) + 1 + j
    }
}

fn build_system(layout: &Layout, cfg: &AccelSolveConfig, dt: f64) -> SparseMatrix {
    let n = layout.n;
    let intervals = layout.keyframes - 1;
    let wp = cfg.lambda_p.sqrt();
    let wv = cfg.lambda_v.sqrt() * dt;
    let wa = cfg.lambda_a.sqrt() * dt * dt;
    let mut b = SparseBuilder::new(layout.unknowns());
    for i in 0..intervals {
        let mut row = vec![(layout.v(i), wp * n as f64 * dt)];
        row.extend((0..n).map(|j| (layout.a(i, j), wp * dt * dt * (n - j) as f64)));
        b.push_row(row);

        let mut row = vec![(layout.v(i), wv), (layout.v(i + 1), -wv)];
        row.extend((0..n).map(|j| (layout.a(i, j), wv * dt)));
        b.push_row(row);
    }
    let mut prev: Option<usize> = None;
    for i in 0..intervals {
        for j in 0..n {
            let cur = layout.a(i, j);
            if let Some(p) = prev {
                b.push_row([(cur, wa), (p, -wa)]);
            }
            prev = Some(cur);
        }
    }
    b.build()
}

/// Finite-difference starting point: central-difference keyframe velocities
/// and a constant acceleration per interval.
fn finite_difference_init(positions: &[f64], layout: &Layout, dt: f64) -> Vec<f64> {
    let m = positions.len();
    let h = layout.n as f64 * dt;
    let mut x = vec![0.0; layout.unknowns()];
    for i in 0..m {
        let v = if i == 0 {
            (positions[1] - positions[0]) / h
        } else if i == m - 1 {
            (positions[m - 1] - positions[m - 2]) / h
        } else {
            (positions[i + 1] - positions[i - 1]) / (2.0 * h)
        };
        x[layout.v(i)] = v;
    }
    for i in 0..m - 1 {
        let a = (x[layout.v(i + 1)] - x[layout.v(i)]) / h;
        for j in 0..layout.n {
            x[layout.a(i, j)] = a;
        }
    }
    x
}

fn rhs(positions: &[f64], layout: &Layout, cfg: &AccelSolveConfig) -> Vec<f64> {
    let wp = cfg.lambda_p.sqrt();
    let intervals = layout.keyframes - 1;
    let mut b = Vec::with_capacity(2 * intervals);
    for i in 0..intervals {
        b.push(wp * (positions[i + 1] - positions[i]));
        b.push(0.0);
    }
    b.resize(b.len() + intervals * layout.n - 1, 0.0);
    b
}

/// Weighted energy `Σ residual²` at `x` for one axis.
fn objective(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let mut ax = vec![0.0; a.rows()];
    a.mul_vec(x, &mut ax);
    ax.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum()
}

struct AxisSolve {
    x: Vec<f64>,
    initial_energy: f64,
    final_energy: f64,
}

fn solve_axis(
    a: &SparseMatrix,
    positions: &[f64],
    layout: &Layout,
    cfg: &AccelSolveConfig,
    dt: f64,
) -> Result<AxisSolve> {
    let b = rhs(positions, layout, cfg);
    let x0 = finite_difference_init(positions, layout, dt);
    let mut ax0 = vec![0.0; a.rows()];
    a.mul_vec(&x0, &mut ax0);
    let r0: Vec<f64> = b.iter().zip(&ax0).map(|(p, q)| p - q).collect();
    let opts = LsqrOptions {
        tol: cfg.solver_tol,
        max_iters: cfg.max_iters,
    };
    let dx = lsqr(a, &r0, &opts)?;
    let x: Vec<f64> = x0.iter().zip(&dx.x).map(|(p, q)| p + q).collect();
    Ok(AxisSolve {
        initial_energy: objective(a, &x0, &b),
        final_energy: objective(a, &x, &b),
        x,
    })
}

/// Diagnostics returned alongside [`solve_accelerations_with_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelReport {
    /// Energy of the finite-difference initialization, summed over axes and windows.
    pub initial_energy: f64,
    pub final_energy: f64,
}

/// Solves the acceleration energy for a sensor trajectory.
pub fn solve_accelerations(traj: &SensorTrajectory, cfg: &AccelSolveConfig) -> Result<AccelSolution> {
    solve_accelerations_with_report(traj, cfg).map(|(s, _)| s)
}

pub fn solve_accelerations_with_report(
    traj: &SensorTrajectory,
    cfg: &AccelSolveConfig,
) -> Result<(AccelSolution, AccelReport)> {
    cfg.validate()?;
    let m = traj.len();
    if m < 2 {
        return Err(Error::TooShort { needed: 2, got: m });
    }
    let n = cfg.substeps;
    let dt = 1.0 / (traj.frame_rate() * n as f64);
    let positions: Vec<Vector3<f64>> = traj.positions().copied().collect();

    let mut accels = Vec::with_capacity(n * (m - 1));
    let mut velocities = Vec::with_capacity(m);
    let mut report = AccelReport { initial_energy: 0.0, final_energy: 0.0 };
    for (w, (start, end)) in windows(m, cfg.window).into_iter().enumerate() {
        let layout = Layout { keyframes: end - start + 1, n };
        let system = build_system(&layout, cfg, dt);
        let mut per_axis = Vec::with_capacity(3);
        for axis in 0..3 {
            let p: Vec<f64> = positions[start..=end].iter().map(|v| v[axis]).collect();
            let s = solve_axis(&system, &p, &layout, cfg, dt)?;
            report.initial_energy += s.initial_energy;
            report.final_energy += s.final_energy;
            per_axis.push(s.x);
        }
        let pick = |idx: usize| Vector3::new(per_axis[0][idx], per_axis[1][idx], per_axis[2][idx]);
        let first_v = if w == 0 { 0 } else { 1 };
        for i in first_v..layout.keyframes {
            velocities.push(pick(layout.v(i)));
        }
        for i in 0..layout.keyframes - 1 {
            for j in 0..n {
                accels.push(pick(layout.a(i, j)));
            }
        }
    }
    Ok((
        AccelSolution {
            accels,
            keyframe_velocities: velocities,
        },
        report,
    ))
}

/// Integrates substep accelerations with the solver's chaining rule
/// (`v ← v + a·Δt`, then `p ← p + v·Δt`) and returns the position at every
/// keyframe.
pub fn integrate_keyframe_positions(
    p0: Vector3<f64>,
    v0: Vector3<f64>,
    accels: &[Vector3<f64>],
    substeps: usize,
    dt: f64,
) -> Vec<Vector3<f64>> {
    let mut p = p0;
    let mut v = v0;
    let mut out = vec![p0];
    for chunk in accels.chunks(substeps) {
        for a in chunk {
            v += a * dt;
            p += v * dt;
        }
        out.push(p);
    }
    out
}
