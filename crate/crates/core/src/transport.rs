//! Pieces shared by the micro and macro steppers: staggered face velocities,
//! explicit upwind advection and the implicit reaction-diffusion solve.

use crate::error::{Error, Result};
use crate::kinetics::{RateLaw, Resolution};
use crate::linalg::{bicgstab, conjugate_gradient, CsrMatrix, SolverOptions};

/// Normal velocities on the faces of a uniform `nx × nx` grid of spacing `h`.
///
/// `ux[j·(nx+1) + i]` sits on x = i·h (left face of cell i),
/// `uy[j·nx + i]` on y = j·h (bottom face of cell row j).
#[derive(Debug, Clone, PartialEq)]
pub struct FaceVelocity {
    nx: usize,
    h: f64,
    ux: Vec<f64>,
    uy: Vec<f64>,
}

impl FaceVelocity {
    pub fn zeros(nx: usize, h: f64) -> Self {
        Self {
            nx,
            h,
            ux: vec![0.0; (nx + 1) * nx],
            uy: vec![0.0; nx * (nx + 1)],
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Velocity on the face x = i·h of row j.
    pub fn x_face(&self, i: usize, j: usize) -> f64 {
        self.ux[j * (self.nx + 1) + i]
    }

    /// Velocity on the face y = j·h of column i.
    pub fn y_face(&self, i: usize, j: usize) -> f64 {
        self.uy[j * self.nx + i]
    }

    pub fn set_x_face(&mut self, i: usize, j: usize, q: f64) {
        self.ux[j * (self.nx + 1) + i] = q;
    }

    pub fn set_y_face(&mut self, i: usize, j: usize, q: f64) {
        self.uy[j * self.nx + i] = q;
    }

    pub fn is_zero(&self) -> bool {
        self.ux.iter().chain(&self.uy).all(|q| *q == 0.0)
    }

    /// ‖q‖_∞ over all faces.
    pub fn max_abs(&self) -> f64 {
        self.ux.iter().chain(&self.uy).fold(0.0, |m, q| m.max(q.abs()))
    }

    /// Discrete divergence of cell (i, j).
    pub fn divergence(&self, i: usize, j: usize) -> f64 {
        (self.x_face(i + 1, j) - self.x_face(i, j) + self.y_face(i, j + 1) - self.y_face(i, j))
            / self.h
    }

    /// Largest per-cell outflow Courant number dt·Σ_out |q| / h over active cells.
    pub fn outflow_courant(&self, dt: f64, active: &[Option<usize>]) -> f64 {
        let nx = self.nx;
        let mut worst: f64 = 0.0;
        for j in 0..nx {
            for i in 0..nx {
                if active[j * nx + i].is_none() {
                    continue;
                }
                let out = self.x_face(i + 1, j).max(0.0)
                    + (-self.x_face(i, j)).max(0.0)
                    + self.y_face(i, j + 1).max(0.0)
                    + (-self.y_face(i, j)).max(0.0);
                worst = worst.max(dt * out / self.h);
            }
        }
        worst
    }
}

/// One explicit first-order upwind step.
///
/// `dof_of` maps cell j·nx + i to its unknown (None for solid cells). Faces
/// touching a solid cell carry no flux. Values entering through ∂Ω are zero.
/// Returns the advected field and the mass that left through ∂Ω.
pub fn upwind_advect(
    vel: &FaceVelocity,
    dof_of: &[Option<usize>],
    u: &[f64],
    dt: f64,
) -> (Vec<f64>, f64) {
    let nx = vel.nx;
    let h = vel.h;
    let mut out = u.to_vec();
    if vel.is_zero() {
        return (out, 0.0);
    }
    let cell_mass = h * h;
    let mut boundary_outflow = 0.0;
    let mut transfer = |from: Option<usize>, to: Option<usize>, q: f64| {
        // q ≥ 0 is the speed from `from` into `to`; None means outside Ω.
        let value = from.map_or(0.0, |a| u[a]);
        let m = dt * q * h * value;
        if let Some(a) = from {
            out[a] -= m / cell_mass;
        }
        match to {
            Some(b) => out[b] += m / cell_mass,
            None => boundary_outflow += m,
        }
    };
    for j in 0..nx {
        for i in 0..=nx {
            let q = vel.x_face(i, j);
            if q == 0.0 {
                continue;
            }
            let left = (i > 0).then(|| dof_of[j * nx + i - 1]);
            let right = (i < nx).then(|| dof_of[j * nx + i]);
            if matches!(left, Some(None)) || matches!(right, Some(None)) {
                continue;
            }
            let (l, r) = (left.flatten(), right.flatten());
            if q > 0.0 {
                transfer(l, r, q);
            } else {
                transfer(r, l, -q);
            }
        }
    }
    for j in 0..=nx {
        for i in 0..nx {
            let q = vel.y_face(i, j);
            if q == 0.0 {
                continue;
            }
            let below = (j > 0).then(|| dof_of[(j - 1) * nx + i]);
            let above = (j < nx).then(|| dof_of[j * nx + i]);
            if matches!(below, Some(None)) || matches!(above, Some(None)) {
                continue;
            }
            let (b, a) = (below.flatten(), above.flatten());
            if q > 0.0 {
                transfer(b, a, q);
            } else {
                transfer(a, b, -q);
            }
        }
    }
    (out, boundary_outflow)
}

/// Tolerances of the semismooth Newton iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Stop when ‖F‖_∞ ≤ rel_tol·max(‖rhs‖_∞, c‖v‖_∞).
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Relative tolerance of each inner linear solve.
    pub linear_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-13,
            max_iter: 60,
            linear_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NewtonStats {
    pub iterations: usize,
    pub linear_iterations: usize,
    /// Final residual relative to the same scale.
    pub residual: f64,
}

/// Implicit reaction-diffusion problem
///
/// `A u + c · Σ_{g: owner(g) = a} Δv_g(u_a) = rhs`,
///
/// where Δv_g(u) is the change of the surface value v_g over one step with u
/// frozen at the new level. A must be an M-matrix; Δv is nondecreasing in u,
/// so the system is monotone and has a unique solution.
pub struct ReactionSystem<'a> {
    pub matrix: &'a CsrMatrix,
    pub symmetric: bool,
    pub rhs: &'a [f64],
    pub owner: &'a [usize],
    pub v: &'a [f64],
    /// Storage weight c of one site.
    pub weight: f64,
    pub law: &'a RateLaw,
    pub resolution: Resolution,
    pub dt: f64,
}

impl ReactionSystem<'_> {
    fn residual(&self, u: &[f64], f: &mut [f64]) -> Result<()> {
        self.matrix.matvec(u, f);
        for (fi, b) in f.iter_mut().zip(self.rhs) {
            *fi -= b;
        }
        for (g, &a) in self.owner.iter().enumerate() {
            let step = self.resolution.step(self.law, u[a], self.v[g], self.dt)?;
            f[a] += self.weight * (step.v_new - self.v[g]);
        }
        Ok(())
    }

    /// Updated surface values for the converged `u`.
    pub fn surface_update(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.owner
            .iter()
            .zip(self.v)
            .map(|(&a, &v)| Ok(self.resolution.step(self.law, u[a], v, self.dt)?.v_new))
            .collect()
    }

    /// Solves in place; `u` carries the initial guess.
    pub fn solve(&self, u: &mut [f64], opts: NewtonOptions) -> Result<NewtonStats> {
        let n = u.len();
        let scale = inf_norm(self.rhs).max(self.weight * inf_norm(self.v));
        let target = opts.rel_tol * scale;
        let slots = self.matrix.diagonal_slots();
        let mut f = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut f_trial = vec![0.0; n];
        let mut delta = vec![0.0; n];
        let mut stats = NewtonStats::default();
        self.residual(u, &mut f)?;
        let mut f_norm = inf_norm(&f);
        for it in 0..opts.max_iter {
            stats.iterations = it;
            if f_norm <= target || f_norm == 0.0 {
                stats.residual = if scale > 0.0 { f_norm / scale } else { 0.0 };
                return Ok(stats);
            }
            let mut jac = self.matrix.clone();
            {
                let vals = jac.values_mut();
                for (g, &a) in self.owner.iter().enumerate() {
                    let s = self.resolution.step_slope(self.law, u[a], self.v[g], self.dt);
                    let slot = slots[a].ok_or_else(|| {
                        Error::Assembly(format!("row {a} has no diagonal entry"))
                    })?;
                    vals[slot] += self.weight * s;
                }
            }
            let neg_f: Vec<f64> = f.iter().map(|x| -x).collect();
            delta.iter_mut().for_each(|d| *d = 0.0);
            let lin = SolverOptions::with_tol(opts.linear_tol);
            let ls = if self.symmetric {
                let inv_diag: Vec<f64> = jac.diagonal().iter().map(|d| 1.0 / d).collect();
                conjugate_gradient(&jac, &neg_f, &mut delta, Some(&inv_diag), lin)?
            } else {
                bicgstab(&jac, &neg_f, &mut delta, lin)?
            };
            stats.linear_iterations += ls.iterations;
            // Backtracking on ‖F‖_∞; the full step is almost always accepted.
            let mut t = 1.0;
            loop {
                for i in 0..n {
                    trial[i] = u[i] + t * delta[i];
                }
                self.residual(&trial, &mut f_trial)?;
                let trial_norm = inf_norm(&f_trial);
                if trial_norm < f_norm || t < 1e-6 {
                    u.copy_from_slice(&trial);
                    std::mem::swap(&mut f, &mut f_trial);
                    let stalled = trial_norm >= f_norm;
                    f_norm = trial_norm;
                    if stalled {
                        return self.finish_stalled(f_norm, scale, it + 1, stats);
                    }
                    break;
                }
                t *= 0.5;
            }
        }
        self.finish_stalled(f_norm, scale, opts.max_iter, stats)
    }

    fn finish_stalled(
        &self,
        f_norm: f64,
        scale: f64,
        iterations: usize,
        mut stats: NewtonStats,
    ) -> Result<NewtonStats> {
        let rel = if scale > 0.0 { f_norm / scale } else { f_norm };
        // Round-off floor: accept a stall that is already within a few ulps of the data.
        if rel <= 1e-11 {
            stats.iterations = iterations;
            stats.residual = rel;
            return Ok(stats);
        }
        Err(Error::Solver {
            solver: "semismooth Newton",
            iterations,
            residual: rel,
        })
    }
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}
