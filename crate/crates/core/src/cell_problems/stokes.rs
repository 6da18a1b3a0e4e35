//! Periodic Stokes cell problems on a staggered (MAC) grid.
//!
//! Velocities live on cell faces, pressure at fluid-cell centres. A face carries an
//! unknown only when both adjacent cells are fluid; every other face has zero
//! velocity (normal component on the grain, or inside it). Tangential no-slip on
//! a grain wall half a cell away is imposed with a mirrored ghost value.
//!
//! The saddle-point system
//!
//! ```text
//! A u − Bᵀ p = F,    B u = 0
//! ```
//!
//! is reduced to the pressure Schur complement `B A⁻¹ Bᵀ p = −B A⁻¹ F`, solved by
//! conjugate gradients with an inner Jacobi-CG solve for every application of A⁻¹.
//! The cell problem is −Δχ = ∇Π + e_j, so Π = −p.

use crate::error::{Error, Result};
use crate::geometry::UnitCell;
use crate::linalg::{
    conjugate_gradient, dot, CsrMatrix, LinearOperator, SolveStats, SolverOptions, TripletBuilder,
};

/// Velocity/pressure numbering of the staggered unit-cell grid.
#[derive(Debug, Clone)]
pub(crate) struct MacLayout {
    n: usize,
    /// Unknown index of x-face (i, j) = left edge of cell (i, j).
    pub ux: Vec<Option<usize>>,
    /// Unknown index of y-face (i, j) = bottom edge of cell (i, j); offset after the x-faces.
    pub uy: Vec<Option<usize>>,
    pub n_vel: usize,
    /// Number of x-face unknowns; y-face unknowns follow.
    pub n_x: usize,
    pub p_of: Vec<Option<usize>>,
    pub n_p: usize,
}

impl MacLayout {
    pub fn new(cell: &UnitCell) -> Self {
        let n = cell.n();
        let solid = |i: usize, j: usize| cell.is_solid(i % n, j % n);
        let mut ux = vec![None; n * n];
        let mut uy = vec![None; n * n];
        let mut count = 0;
        for j in 0..n {
            for i in 0..n {
                if !solid(i, j) && !solid(i + n - 1, j) {
                    ux[j * n + i] = Some(count);
                    count += 1;
                }
            }
        }
        let n_x = count;
        for j in 0..n {
            for i in 0..n {
                if !solid(i, j) && !solid(i, j + n - 1) {
                    uy[j * n + i] = Some(count);
                    count += 1;
                }
            }
        }
        let mut p_of = vec![None; n * n];
        let mut n_p = 0;
        for j in 0..n {
            for i in 0..n {
                if !solid(i, j) {
                    p_of[j * n + i] = Some(n_p);
                    n_p += 1;
                }
            }
        }
        Self {
            n,
            ux,
            uy,
            n_vel: count,
            n_x,
            p_of,
            n_p,
        }
    }

    fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.n as isize) as usize
    }

    fn idx(&self, i: isize, j: isize) -> usize {
        self.wrap(j) * self.n + self.wrap(i)
    }

    /// Vector Laplacian (scaled by h², i.e. the discrete Dirichlet form).
    fn laplacian(&self, cell: &UnitCell) -> CsrMatrix {
        let n = self.n as isize;
        let solid = |i: isize, j: isize| cell.is_solid(self.wrap(i), self.wrap(j));
        let mut t = TripletBuilder::new(self.n_vel);
        for j in 0..n {
            for i in 0..n {
                // x-face (i, j): neighbours along x are x-faces at distance h; along y
                // the wall may sit half a cell away.
                if let Some(row) = self.ux[self.idx(i, j)] {
                    for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                        let nb = self.ux[self.idx(i + di, j + dj)];
                        match nb {
                            Some(col) => {
                                t.add(row, row, 1.0);
                                t.add(row, col, -1.0);
                            }
                            None if dj != 0 && solid(i - 1, j + dj) && solid(i, j + dj) => {
                                t.add(row, row, 2.0)
                            }
                            None => t.add(row, row, 1.0),
                        }
                    }
                }
                if let Some(row) = self.uy[self.idx(i, j)] {
                    for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                        let nb = self.uy[self.idx(i + di, j + dj)];
                        match nb {
                            Some(col) => {
                                t.add(row, row, 1.0);
                                t.add(row, col, -1.0);
                            }
                            None if di != 0 && solid(i + di, j - 1) && solid(i + di, j) => {
                                t.add(row, row, 2.0)
                            }
                            None => t.add(row, row, 1.0),
                        }
                    }
                }
            }
        }
        t.build()
    }

    /// (B u)_c = h (u_E − u_W + u_N − u_S): flux divergence of cell c times h².
    fn divergence(&self, h: f64, u: &[f64], out: &mut [f64]) {
        let n = self.n as isize;
        let get = |slot: Option<usize>| slot.map_or(0.0, |k| u[k]);
        for j in 0..n {
            for i in 0..n {
                if let Some(c) = self.p_of[self.idx(i, j)] {
                    let e = get(self.ux[self.idx(i + 1, j)]);
                    let w = get(self.ux[self.idx(i, j)]);
                    let nn = get(self.uy[self.idx(i, j + 1)]);
                    let s = get(self.uy[self.idx(i, j)]);
                    out[c] = h * (e - w + nn - s);
                }
            }
        }
    }

    /// Bᵀ p
    fn divergence_transpose(&self, h: f64, p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let n = self.n as isize;
        for j in 0..n {
            for i in 0..n {
                let Some(c) = self.p_of[self.idx(i, j)] else {
                    continue;
                };
                let pc = h * p[c];
                if let Some(k) = self.ux[self.idx(i + 1, j)] {
                    out[k] += pc;
                }
                if let Some(k) = self.ux[self.idx(i, j)] {
                    out[k] -= pc;
                }
                if let Some(k) = self.uy[self.idx(i, j + 1)] {
                    out[k] += pc;
                }
                if let Some(k) = self.uy[self.idx(i, j)] {
                    out[k] -= pc;
                }
            }
        }
    }
}

struct Schur<'a> {
    layout: &'a MacLayout,
    a: &'a CsrMatrix,
    inv_diag: &'a [f64],
    h: f64,
    inner: SolverOptions,
}

impl Schur<'_> {
    fn solve_velocity(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.layout.n_vel];
        conjugate_gradient(self.a, rhs, &mut y, Some(self.inv_diag), self.inner)?;
        Ok(y)
    }
}

impl LinearOperator for Schur<'_> {
    fn dim(&self) -> usize {
        self.layout.n_p
    }

    fn apply(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let mut z = vec![0.0; self.layout.n_vel];
        self.layout.divergence_transpose(self.h, p, &mut z);
        let y = self.solve_velocity(&z)?;
        self.layout.divergence(self.h, &y, out);
        Ok(())
    }
}

/// Tolerances for the Stokes saddle-point solve.
#[derive(Debug, Clone, Copy)]
pub struct StokesOptions {
    pub inner: SolverOptions,
    pub outer: SolverOptions,
}

impl Default for StokesOptions {
    fn default() -> Self {
        Self {
            inner: SolverOptions::with_tol(1e-13),
            outer: SolverOptions::with_tol(1e-11),
        }
    }
}

/// χ^j on the staggered unit-cell grid and Π^j at fluid-cell centres.
#[derive(Debug, Clone)]
pub struct StokesCellSolution {
    pub direction: usize,
    /// Velocity per unknown face (x-faces first, then y-faces).
    pub velocity: Vec<f64>,
    /// Π^j per fluid cell, zero mean.
    pub pressure: Vec<f64>,
    pub outer_stats: SolveStats,
    /// max |∇·χ| over fluid cells.
    pub max_divergence: f64,
    /// ‖A χ − Bᵀ p − F‖ / ‖F‖.
    pub momentum_residual: f64,
    pub(crate) layout: MacLayout,
    pub(crate) stiffness: CsrMatrix,
    h: f64,
}

impl StokesCellSolution {
    pub fn n(&self) -> usize {
        self.layout.n
    }

    /// χ_x on x-face (i, j) (left edge of cell (i, j)); zero on blocked faces.
    pub fn x_velocity(&self, i: usize, j: usize) -> f64 {
        let n = self.layout.n;
        self.layout.ux[(j % n) * n + i % n].map_or(0.0, |k| self.velocity[k])
    }

    /// χ_y on y-face (i, j) (bottom edge of cell (i, j)).
    pub fn y_velocity(&self, i: usize, j: usize) -> f64 {
        let n = self.layout.n;
        self.layout.uy[(j % n) * n + i % n].map_or(0.0, |k| self.velocity[k])
    }

    /// ∫_Y χ_i dy with face quadrature.
    pub fn mean_flow(&self, i: usize) -> f64 {
        let h2 = self.h * self.h;
        let slots = if i == 0 { &self.layout.ux } else { &self.layout.uy };
        slots.iter().flatten().map(|&k| self.velocity[k]).sum::<f64>() * h2
    }

    /// ∫_Y ∇χ^self : ∇χ^other.
    pub fn gradient_inner(&self, other: &StokesCellSolution) -> f64 {
        dot(&self.velocity, &self.stiffness.mul(&other.velocity))
    }
}

pub fn solve_stokes_cell(cell: &UnitCell, dir: usize) -> Result<StokesCellSolution> {
    solve_stokes_cell_with(cell, dir, StokesOptions::default())
}

pub fn solve_stokes_cell_with(
    cell: &UnitCell,
    dir: usize,
    opts: StokesOptions,
) -> Result<StokesCellSolution> {
    if dir >= 2 {
        return Err(Error::Parameter(format!("direction {dir} out of range for d = 2")));
    }
    if !cell.is_perforated() {
        return Err(Error::Degenerate(
            "cell problem has no no-slip boundary; permeability undefined".into(),
        ));
    }
    let h = cell.h();
    let layout = MacLayout::new(cell);
    let a = layout.laplacian(cell);
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();

    let n_x = layout.n_x;
    let mut force = vec![0.0; layout.n_vel];
    let range = if dir == 0 { 0..n_x } else { n_x..layout.n_vel };
    force[range].iter_mut().for_each(|f| *f = h * h);

    let schur = Schur {
        layout: &layout,
        a: &a,
        inv_diag: &inv_diag,
        h,
        inner: opts.inner,
    };
    let u0 = schur.solve_velocity(&force)?;
    let mut rhs = vec![0.0; layout.n_p];
    layout.divergence(h, &u0, &mut rhs);
    rhs.iter_mut().for_each(|v| *v = -*v);
    let mut p = vec![0.0; layout.n_p];
    let outer_stats = conjugate_gradient(&schur, &rhs, &mut p, None, opts.outer.projected())?;

    let mut bt_p = vec![0.0; layout.n_vel];
    layout.divergence_transpose(h, &p, &mut bt_p);
    let full_rhs: Vec<f64> = force.iter().zip(&bt_p).map(|(f, g)| f + g).collect();
    let velocity = schur.solve_velocity(&full_rhs)?;

    let mut div = vec![0.0; layout.n_p];
    layout.divergence(h, &velocity, &mut div);
    let max_divergence = div.iter().fold(0.0f64, |m, d| m.max(d.abs())) / (h * h);
    let av = a.mul(&velocity);
    let res: f64 = av
        .iter()
        .zip(&full_rhs)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let momentum_residual = res / crate::linalg::norm2(&force);

    let pressure = p.iter().map(|v| -v).collect();
    Ok(StokesCellSolution {
        direction: dir,
        velocity,
        pressure,
        outer_stats,
        max_divergence,
        momentum_residual,
        layout,
        stiffness: a,
        h,
    })
}
