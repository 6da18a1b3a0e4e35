//! Sparse matrices and Krylov solvers.
//!
//! Everything here works on plain `Vec<f64>` / `&[f64]` storage. Matrices are
//! assembled from triplets into compressed sparse row form; duplicates are summed.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Accumulates `(row, col, value)` entries for a square matrix.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, value));
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *yi = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&k| self.cols[k] == i)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }

    /// Position of each diagonal entry in the value array (`None` if structurally absent).
    pub fn diagonal_slots(&self) -> Vec<Option<usize>> {
        (0..self.n)
            .map(|i| (self.row_ptr[i]..self.row_ptr[i + 1]).find(|&k| self.cols[k] == i))
            .collect()
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        (self.row_ptr[row]..self.row_ptr[row + 1])
            .find(|&k| self.cols[k] == col)
            .map_or(0.0, |k| self.vals[k])
    }

    /// Largest |a_ij - a_ji| relative to the largest |a_ij|.
    pub fn asymmetry(&self) -> f64 {
        let mut scale: f64 = 0.0;
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                scale = scale.max(self.vals[k].abs());
                worst = worst.max((self.vals[k] - self.get(j, i)).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }
}

/// Linear operator abstraction so the Stokes Schur complement can reuse CG.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()>;
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.matvec(x, y);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub rel_tol: f64,
    /// Absolute floor on the residual norm; protects against zero right-hand sides.
    pub abs_tol: f64,
    pub max_iter: usize,
    /// Remove the constant vector from iterates and residuals (singular
    /// consistent systems with a constant null space).
    pub project_mean: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-300,
            max_iter: 20_000,
            project_mean: false,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }

    pub fn projected(mut self) -> Self {
        self.project_mean = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn remove_mean(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}

/// Preconditioned conjugate gradients.
///
/// `precond` holds the inverse of a diagonal scaling (pass `None` for plain CG).
/// `x` carries the initial guess in and the solution out.
pub fn conjugate_gradient<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    x: &mut [f64],
    precond: Option<&[f64]>,
    opts: SolverOptions,
) -> Result<SolveStats> {
    let n = a.dim();
    let mut rhs = b.to_vec();
    if opts.project_mean {
        remove_mean(&mut rhs);
        remove_mean(x);
    }
    let b_norm = norm2(&rhs);
    let target = (opts.rel_tol * b_norm).max(opts.abs_tol);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }

    let mut ax = vec![0.0; n];
    a.apply(x, &mut ax)?;
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
    if opts.project_mean {
        remove_mean(&mut r);
    }
    let apply_precond = |r: &[f64], z: &mut [f64]| match precond {
        Some(m) => z.iter_mut().zip(r.iter().zip(m)).for_each(|(z, (r, m))| *z = r * m),
        None => z.copy_from_slice(r),
    };
    let mut z = vec![0.0; n];
    apply_precond(&r, &mut z);
    if opts.project_mean {
        remove_mean(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = norm2(&r);

    for it in 0..opts.max_iter {
        if res <= target {
            return Ok(SolveStats {
                iterations: it,
                residual: res / b_norm,
            });
        }
        a.apply(&p, &mut ap)?;
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Solver {
                solver: "conjugate gradient (operator not positive definite)",
                iterations: it,
                residual: res / b_norm,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if opts.project_mean {
            remove_mean(&mut r);
        }
        res = norm2(&r);
        apply_precond(&r, &mut z);
        if opts.project_mean {
            remove_mean(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if opts.project_mean {
        remove_mean(x);
    }
    if res <= target {
        return Ok(SolveStats {
            iterations: opts.max_iter,
            residual: res / b_norm,
        });
    }
    Err(Error::Solver {
        solver: "conjugate gradient",
        iterations: opts.max_iter,
        residual: res / b_norm,
    })
}

/// Jacobi-scaled BiCGSTAB for nonsymmetric systems.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    opts: SolverOptions,
) -> Result<SolveStats> {
    let n = a.dim();
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let target = (opts.rel_tol * b_norm).max(opts.abs_tol);
    let mut r: Vec<f64> = {
        let ax = a.mul(x);
        b.iter().zip(&ax).map(|(b, ax)| b - ax).collect()
    };
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = norm2(&r);
    for it in 0..opts.max_iter {
        if res <= target {
            return Ok(SolveStats {
                iterations: it,
                residual: res / b_norm,
            });
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * inv_diag[i];
        }
        a.matvec(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) <= target {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(SolveStats {
                iterations: it + 1,
                residual: norm2(&s) / b_norm,
            });
        }
        for i in 0..n {
            z[i] = s[i] * inv_diag[i];
        }
        a.matvec(&z, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm2(&r);
    }
    if res <= target {
        return Ok(SolveStats {
            iterations: opts.max_iter,
            residual: res / b_norm,
        });
    }
    Err(Error::Solver {
        solver: "BiCGSTAB",
        iterations: opts.max_iter,
        residual: res / b_norm,
    })
}

/// Solves `a x = b`, choosing Jacobi-CG for symmetric matrices and BiCGSTAB otherwise.
pub fn solve(a: &CsrMatrix, b: &[f64], x: &mut [f64], opts: SolverOptions) -> Result<SolveStats> {
    if a.asymmetry() <= 1e-14 {
        let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
        conjugate_gradient(a, b, x, Some(&inv_diag), opts)
    } else {
        bicgstab(a, b, x, opts)
    }
}
