//! Periodic diffusion cell problems on the fluid part Y of the unit cell.
//!
//! Cell-centred finite volumes with two-point fluxes. For direction i the
//! corrector ξ_i solves −Δξ_i = 0 in Y, ∂_ν ξ_i = −ν·e_i on Γ_G (zero total flux of
//! e_i + ∇ξ_i through the grain), periodic on ∂Z, zero mean.

use crate::error::{Error, Result};
use crate::geometry::{Normal, UnitCell};
use crate::linalg::{conjugate_gradient, SolveStats, SolverOptions, TripletBuilder};

/// Fluid-cell numbering of the unit cell plus its interior face list.
#[derive(Debug, Clone)]
pub(crate) struct CellDofs {
    pub n: usize,
    pub dof_of: Vec<Option<usize>>,
    pub cells: Vec<[usize; 2]>,
    /// Fluid–fluid faces (a, b, axis) with b the +axis neighbour of a (periodic).
    pub faces: Vec<(usize, usize, usize)>,
}

impl CellDofs {
    pub fn new(cell: &UnitCell) -> Self {
        let n = cell.n();
        let mut dof_of = vec![None; n * n];
        let mut cells = Vec::new();
        for j in 0..n {
            for i in 0..n {
                if !cell.is_solid(i, j) {
                    dof_of[cell.flat(i, j)] = Some(cells.len());
                    cells.push([i, j]);
                }
            }
        }
        let mut faces = Vec::new();
        for (a, &[i, j]) in cells.iter().enumerate() {
            for axis in 0..2 {
                let (ni, nj) = cell.neighbor(i, j, Normal { axis, sign: 1 });
                if let Some(b) = dof_of[cell.flat(ni, nj)] {
                    faces.push((a, b, axis));
                }
            }
        }
        Self {
            n,
            dof_of,
            cells,
            faces,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }
}

/// Corrector ξ_i at the fluid-cell centres of the unit cell.
#[derive(Debug, Clone)]
pub struct CellScalarField {
    pub direction: usize,
    /// Values per fluid cell, ordered row-major over the unit cell.
    pub values: Vec<f64>,
    pub periodic: bool,
    pub zero_mean: bool,
    pub stats: SolveStats,
    /// Set when the cell has no perforation and ξ ≡ 0 trivially.
    pub degenerate: bool,
    pub(crate) dofs: CellDofs,
    h: f64,
    porosity: f64,
}

impl CellScalarField {
    pub fn n(&self) -> usize {
        self.dofs.n
    }

    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        self.dofs.dof_of[j * self.dofs.n + i].map(|d| self.values[d])
    }

    /// Face-quadrature ∫_Y ∂_{y_j} ξ_i.
    pub fn gradient_integral(&self, j: usize) -> f64 {
        self.dofs
            .faces
            .iter()
            .filter(|f| f.2 == j)
            .map(|&(a, b, _)| self.values[b] - self.values[a])
            .sum::<f64>()
            * self.h
    }

    /// ∫_Y |∇ξ_i|² (discrete Dirichlet energy).
    pub fn energy(&self) -> f64 {
        self.dofs
            .faces
            .iter()
            .map(|&(a, b, _)| (self.values[b] - self.values[a]).powi(2))
            .sum()
    }

    /// Face-quadrature ∫_Y (e_i + ∇ξ_i)·(e_j + ∇ξ_j) with `other` = ξ_j.
    pub fn quadratic_form(&self, other: &CellScalarField) -> f64 {
        let h = self.h;
        self.dofs
            .faces
            .iter()
            .map(|&(a, b, axis)| {
                let gi = h * delta(self.direction, axis) + self.values[b] - self.values[a];
                let gj = h * delta(other.direction, axis) + other.values[b] - other.values[a];
                gi * gj
            })
            .sum()
    }

    /// Face-quadrature ∫_Y ∂_{y_j} y_i = δ_ij · (fluid faces normal to e_j) · h².
    pub(crate) fn identity_integral(&self, j: usize) -> f64 {
        if self.direction != j {
            return 0.0;
        }
        self.dofs.faces.iter().filter(|f| f.2 == j).count() as f64 * self.h * self.h
    }

    pub fn porosity(&self) -> f64 {
        self.porosity
    }
}

fn delta(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

/// Right-hand side −h Σ_{grain faces of a} ν·e_i and the boundary integral
/// ∮_{Γ_G} (ν·e_i) ξ.
fn neumann_data(cell: &UnitCell, dofs: &CellDofs, dir: usize) -> Vec<f64> {
    let h = cell.h();
    let mut b = vec![0.0; dofs.len()];
    for f in cell.ref_faces() {
        let a = dofs.dof_of[cell.flat(f.cell[0], f.cell[1])].expect("owner is fluid");
        b[a] -= h * f.normal.component(dir);
    }
    b
}

/// ∮_{Γ_G} (ν·e_i) ξ dσ with the owner-cell trace.
pub fn boundary_moment(cell: &UnitCell, field: &CellScalarField) -> f64 {
    let h = cell.h();
    cell.ref_faces()
        .iter()
        .map(|f| {
            let v = field.value(f.cell[0], f.cell[1]).expect("owner is fluid");
            h * f.normal.component(field.direction) * v
        })
        .sum()
}

pub fn solve_diffusion_cell(cell: &UnitCell, dir: usize) -> Result<CellScalarField> {
    solve_diffusion_cell_with(cell, dir, SolverOptions::with_tol(1e-10))
}

pub fn solve_diffusion_cell_with(
    cell: &UnitCell,
    dir: usize,
    opts: SolverOptions,
) -> Result<CellScalarField> {
    if dir >= 2 {
        return Err(Error::Parameter(format!("direction {dir} out of range for d = 2")));
    }
    let dofs = CellDofs::new(cell);
    let h = cell.h();
    if !cell.is_perforated() {
        log::info!("diffusion cell problem without perforation: corrector is identically zero");
        return Ok(CellScalarField {
            direction: dir,
            values: vec![0.0; dofs.len()],
            periodic: true,
            zero_mean: true,
            stats: SolveStats {
                iterations: 0,
                residual: 0.0,
            },
            degenerate: true,
            dofs,
            h,
            porosity: cell.porosity(),
        });
    }
    let mut t = TripletBuilder::new(dofs.len());
    for &(a, b, _) in &dofs.faces {
        t.add(a, a, 1.0);
        t.add(b, b, 1.0);
        t.add(a, b, -1.0);
        t.add(b, a, -1.0);
    }
    let lap = t.build();
    let rhs = neumann_data(cell, &dofs, dir);
    let inv_diag: Vec<f64> = lap.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut x = vec![0.0; dofs.len()];
    let stats = conjugate_gradient(&lap, &rhs, &mut x, Some(&inv_diag), opts.projected())?;
    Ok(CellScalarField {
        direction: dir,
        values: x,
        periodic: true,
        zero_mean: true,
        stats,
        degenerate: false,
        dofs,
        h,
        porosity: cell.porosity(),
    })
}
