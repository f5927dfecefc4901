//! Sparse matrices and the LSQR iterative least-squares solver.
//!
//! LSQR (Paige & Saunders) minimizes `‖A·x − b‖₂` using only products with
//! `A` and `Aᵀ`. For the banded systems built by the synthesis solvers each
//! product is `O(nnz)`. Columns are equilibrated to unit norm before the
//! iteration, which matters here because the unknowns mix very different
//! scales (accelerations enter with `Δt²`, velocities with `Δt`).

use crate::error::{Error, Result};

/// Row-major sparse matrix built from `(row, col, value)` triplets.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Incremental row-by-row builder for [`SparseMatrix`].
#[derive(Debug, Clone)]
pub struct SparseBuilder {
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseBuilder {
    pub fn new(cols: usize) -> Self {
        SparseBuilder {
            cols,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Appends a row given as `(column, value)` pairs. Zero entries are dropped.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (c, v) in entries {
            debug_assert!(c < self.cols);
            if v != 0.0 {
                self.col_idx.push(c);
                self.values.push(v);
            }
        }
        self.row_ptr.push(self.col_idx.len());
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn build(self) -> SparseMatrix {
        SparseMatrix {
            rows: self.row_ptr.len() - 1,
            cols: self.cols,
            row_ptr: self.row_ptr,
            col_idx: self.col_idx,
            values: self.values,
        }
    }
}

impl SparseMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `out = A·x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *o = acc;
        }
    }

    /// `out = Aᵀ·y`
    pub fn mul_transpose_vec(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.col_idx[k]] += self.values[k] * yr;
            }
        }
    }

    fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.cols];
        for (k, &c) in self.col_idx.iter().enumerate() {
            sq[c] += self.values[k] * self.values[k];
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    fn scale_columns(&mut self, scale: &[f64]) {
        for (k, &c) in self.col_idx.iter().enumerate() {
            self.values[k] *= scale[c];
        }
    }
}

/// Stopping rule and iteration cap for [`lsqr`].
#[derive(Debug, Clone, Copy)]
pub struct LsqrOptions {
    /// Relative tolerance on the normal-equation residual `‖Aᵀr‖ / (‖A‖‖r‖)`
    /// and on the data misfit.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for LsqrOptions {
    fn default() -> Self {
        LsqrOptions {
            tol: 1e-8,
            max_iters: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsqrSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖b − A·x‖`
    pub residual_norm: f64,
    /// `‖Aᵀ(b − A·x)‖` in the equilibrated column scaling.
    pub normal_residual: f64,
}

/// Column-equilibrated LSQR. Returns the minimum-norm least-squares solution
/// (in the scaled variables) when `A` is rank deficient.
pub fn lsqr(a: &SparseMatrix, b: &[f64], opts: &LsqrOptions) -> Result<LsqrSolution> {
    assert_eq!(b.len(), a.rows(), "rhs length must match matrix rows");
    let n = a.cols();
    let norms = a.column_norms();
    let scale: Vec<f64> = norms
        .iter()
        .map(|&c| if c > 0.0 { 1.0 / c } else { 1.0 })
        .collect();
    let mut scaled = a.clone();
    scaled.scale_columns(&scale);

    let mut y = vec![0.0; n];
    let mut u = b.to_vec();
    let bnorm = norm(&u);
    if bnorm == 0.0 {
        return Ok(LsqrSolution {
            x: y,
            iterations: 0,
            residual_norm: 0.0,
            normal_residual: 0.0,
        });
    }
    let mut beta = bnorm;
    scal(&mut u, 1.0 / beta);
    let mut v = vec![0.0; n];
    scaled.mul_transpose_vec(&u, &mut v);
    let mut alpha = norm(&v);
    if alpha == 0.0 {
        return Ok(LsqrSolution {
            x: y,
            iterations: 0,
            residual_norm: bnorm,
            normal_residual: 0.0,
        });
    }
    scal(&mut v, 1.0 / alpha);
    let mut w = v.clone();
    let mut phibar = beta;
    let mut rhobar = alpha;
    let mut anorm_sq = 0.0;

    let mut tmp_m = vec![0.0; a.rows()];
    let mut tmp_n = vec![0.0; n];
    let mut rnorm = beta;
    let mut arnorm = alpha * beta;

    for it in 1..=opts.max_iters {
        scaled.mul_vec(&v, &mut tmp_m);
        for (ui, ti) in u.iter_mut().zip(&tmp_m) {
            *ui = ti - alpha * *ui;
        }
        beta = norm(&u);
        if beta > 0.0 {
            scal(&mut u, 1.0 / beta);
            anorm_sq += alpha * alpha + beta * beta;
            scaled.mul_transpose_vec(&u, &mut tmp_n);
            for (vi, ti) in v.iter_mut().zip(&tmp_n) {
                *vi = ti - beta * *vi;
            }
            alpha = norm(&v);
            if alpha > 0.0 {
                scal(&mut v, 1.0 / alpha);
            }
        } else {
            anorm_sq += alpha * alpha;
        }

        let rho = rhobar.hypot(beta);
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;

        let t1 = phi / rho;
        let t2 = -theta / rho;
        for ((yi, wi), vi) in y.iter_mut().zip(w.iter_mut()).zip(&v) {
            *yi += t1 * *wi;
            *wi = vi + t2 * *wi;
        }

        rnorm = phibar;
        arnorm = phibar * alpha * c.abs();
        let anorm = anorm_sq.sqrt();
        let xnorm = norm(&y);

        let consistent = rnorm <= opts.tol * bnorm + opts.tol * anorm * xnorm;
        let normal = anorm * rnorm > 0.0 && arnorm / (anorm * rnorm) <= opts.tol;
        if consistent || normal || alpha == 0.0 || beta == 0.0 && rnorm == 0.0 {
            let x = y.iter().zip(&scale).map(|(yi, s)| yi * s).collect();
            return Ok(LsqrSolution {
                x,
                iterations: it,
                residual_norm: rnorm,
                normal_residual: arnorm,
            });
        }
    }
    Err(Error::NotConverged {
        solver: "lsqr",
        iterations: opts.max_iters,
        residual: rnorm.max(arnorm),
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn scal(v: &mut [f64], s: f64) {
    v.iter_mut().for_each(|x| *x *= s);
}
