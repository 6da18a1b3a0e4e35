//! Periodic perforated geometry on a structured grid.
//!
//! The reference cell Z = (0,1)² contains one axis-aligned square grain Y₀ whose
//! edges lie on grid lines, so the grain boundary Γ_G is a union of grid faces.
//! Tiling Z with cells of size ε gives the perforated domain Ω^ε ⊂ Ω = (0,1)².

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial dimension of every grid in this crate.
pub const DIM: usize = 2;

const ALIGN_TOL: f64 = 1e-9;

/// Axis-aligned unit normal: `axis` is 0 (x₁) or 1 (x₂), `sign` is ±1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Normal {
    pub axis: usize,
    pub sign: i8,
}

impl Normal {
    pub const DIRECTIONS: [Normal; 4] = [
        Normal { axis: 0, sign: 1 },
        Normal { axis: 0, sign: -1 },
        Normal { axis: 1, sign: 1 },
        Normal { axis: 1, sign: -1 },
    ];

    pub fn vector(self) -> [f64; 2] {
        let mut v = [0.0; 2];
        v[self.axis] = f64::from(self.sign);
        v
    }

    /// ν·e_i
    pub fn component(self, i: usize) -> f64 {
        if self.axis == i {
            f64::from(self.sign)
        } else {
            0.0
        }
    }
}

/// A grain face of the reference cell, seen from its fluid owner cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefFace {
    /// Local (i, j) index of the fluid cell owning the face.
    pub cell: [usize; 2],
    /// Points from the fluid cell into the grain.
    pub normal: Normal,
    /// Face midpoint y ∈ Γ_G.
    pub y: [f64; 2],
}

/// Reference cell Z = (0,1)² with a square perforation of side `hole_side`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCell {
    hole_side: f64,
    hole_center: [f64; 2],
    n: usize,
    hole_lo: [usize; 2],
    hole_cells: usize,
    ref_faces: Vec<RefFace>,
}

/// Validates and builds a unit cell.
///
/// `hole_side = 0` is accepted and produces the unperforated cell, which is the
/// degenerate limit used by the cell problems.
pub fn build_unit_cell(hole_side: f64, hole_center: [f64; 2], n: usize) -> Result<UnitCell> {
    if n == 0 {
        return Err(Error::Geometry("resolution n must be positive".into()));
    }
    if !hole_side.is_finite() || hole_side < 0.0 {
        return Err(Error::Geometry(format!(
            "hole side must be a finite non-negative number, got {hole_side}"
        )));
    }
    let nf = n as f64;
    if hole_side == 0.0 {
        return Ok(UnitCell {
            hole_side,
            hole_center,
            n,
            hole_lo: [0, 0],
            hole_cells: 0,
            ref_faces: Vec::new(),
        });
    }
    for (axis, c) in hole_center.iter().enumerate() {
        let lo = c - hole_side / 2.0;
        let hi = c + hole_side / 2.0;
        if lo <= ALIGN_TOL || hi >= 1.0 - ALIGN_TOL {
            return Err(Error::Geometry(format!(
                "containment: hole [{lo}, {hi}] along axis {axis} must lie strictly inside (0, 1)"
            )));
        }
    }
    let side_cells = nf * hole_side;
    if (side_cells - side_cells.round()).abs() > ALIGN_TOL {
        return Err(Error::Geometry(format!(
            "alignment: n * hole_side = {side_cells} is not an integer"
        )));
    }
    let mut hole_lo = [0usize; 2];
    for (axis, c) in hole_center.iter().enumerate() {
        let corner = nf * (c - hole_side / 2.0);
        if (corner - corner.round()).abs() > ALIGN_TOL {
            return Err(Error::Geometry(format!(
                "alignment: hole corner n * (center - side/2) = {corner} along axis {axis} is not an integer"
            )));
        }
        hole_lo[axis] = corner.round() as usize;
    }
    let mut cell = UnitCell {
        hole_side,
        hole_center,
        n,
        hole_lo,
        hole_cells: side_cells.round() as usize,
        ref_faces: Vec::new(),
    };
    cell.ref_faces = cell.enumerate_faces();
    Ok(cell)
}

impl UnitCell {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn hole_side(&self) -> f64 {
        self.hole_side
    }

    pub fn hole_center(&self) -> [f64; 2] {
        self.hole_center
    }

    pub fn is_perforated(&self) -> bool {
        self.hole_cells > 0
    }

    pub fn is_solid(&self, i: usize, j: usize) -> bool {
        let [i0, j0] = self.hole_lo;
        let m = self.hole_cells;
        i >= i0 && i < i0 + m && j >= j0 && j < j0 + m
    }

    /// |Y| = 1 − a².
    pub fn porosity(&self) -> f64 {
        let m = self.hole_cells as f64 * self.h();
        1.0 - m * m
    }

    /// |Γ_G| = 4a.
    pub fn surface(&self) -> f64 {
        4.0 * self.hole_cells as f64 * self.h()
    }

    pub fn ref_faces(&self) -> &[RefFace] {
        &self.ref_faces
    }

    /// Local flat index `j * n + i`.
    pub fn flat(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    /// Periodic neighbour of (i, j) in direction `dir`.
    pub fn neighbor(&self, i: usize, j: usize, dir: Normal) -> (usize, usize) {
        let n = self.n;
        match (dir.axis, dir.sign) {
            (0, 1) => ((i + 1) % n, j),
            (0, _) => ((i + n - 1) % n, j),
            (_, 1) => (i, (j + 1) % n),
            _ => (i, (j + n - 1) % n),
        }
    }

    fn enumerate_faces(&self) -> Vec<RefFace> {
        let h = self.h();
        let mut faces = Vec::with_capacity(4 * self.hole_cells);
        for j in 0..self.n {
            for i in 0..self.n {
                if self.is_solid(i, j) {
                    continue;
                }
                for dir in Normal::DIRECTIONS {
                    let (ni, nj) = self.neighbor(i, j, dir);
                    if self.is_solid(ni, nj) {
                        let mut y = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
                        y[dir.axis] += 0.5 * h * f64::from(dir.sign);
                        faces.push(RefFace {
                            cell: [i, j],
                            normal: dir,
                            y,
                        });
                    }
                }
            }
        }
        faces
    }
}

/// Which outer edges of Ω carry the homogeneous Dirichlet condition (Γ_D).
/// The remaining edges form Γ_N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSet {
    pub left: bool,
    pub right: bool,
    pub bottom: bool,
    pub top: bool,
}

impl Default for EdgeSet {
    fn default() -> Self {
        Self::LEFT
    }
}

impl EdgeSet {
    pub const NONE: EdgeSet = EdgeSet {
        left: false,
        right: false,
        bottom: false,
        top: false,
    };
    pub const LEFT: EdgeSet = EdgeSet {
        left: true,
        ..EdgeSet::NONE
    };

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut set = EdgeSet::NONE;
        for name in names {
            match name.as_ref() {
                "left" => set.left = true,
                "right" => set.right = true,
                "bottom" => set.bottom = true,
                "top" => set.top = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown edge `{other}` (valid: left, right, bottom, top)"
                    )))
                }
            }
        }
        Ok(set)
    }

    pub fn names(&self) -> Vec<String> {
        [
            ("left", self.left),
            ("right", self.right),
            ("bottom", self.bottom),
            ("top", self.top),
        ]
        .iter()
        .filter(|(_, on)| *on)
        .map(|(n, _)| n.to_string())
        .collect()
    }

    /// Whether the outer edge crossed by leaving a boundary cell in `dir` is Dirichlet.
    pub fn contains(&self, dir: Normal) -> bool {
        match (dir.axis, dir.sign) {
            (0, 1) => self.right,
            (0, _) => self.left,
            (_, 1) => self.top,
            _ => self.bottom,
        }
    }

    pub fn is_closed_box(&self) -> bool {
        *self == EdgeSet::NONE
    }
}

/// Grain-boundary face of the tiled domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    /// Fluid degree-of-freedom index of the owner cell.
    pub owner: usize,
    /// Points from the fluid owner into the grain.
    pub normal: Normal,
    /// Face length (h in 2D).
    pub measure: f64,
    /// ε-cell index k = (k₁, k₂).
    pub cell_k: [usize; 2],
    /// Index into the unit cell's reference faces.
    pub ref_face: usize,
    /// Reference location y ∈ Γ_G.
    pub y: [f64; 2],
}

/// ε-tiled grid of Ω = (0,1)² with fluid/solid classification.
#[derive(Debug, Clone)]
pub struct PerforatedGrid {
    eps: f64,
    cells_per_side_eps: usize,
    cell: UnitCell,
    nx: usize,
    h: f64,
    solid: Vec<bool>,
    dof_of: Vec<Option<usize>>,
    fluid_cells: Vec<usize>,
    faces: Vec<BoundaryFace>,
    dirichlet: EdgeSet,
}

/// Checks 1/ε ∈ ℕ and returns 1/ε.
pub fn inverse_eps(eps: f64) -> Result<usize> {
    if !(eps.is_finite() && eps > 0.0 && eps <= 1.0) {
        return Err(Error::Geometry(format!(
            "1/eps must be a positive integer (eps = {eps})"
        )));
    }
    let m = (1.0 / eps).round();
    if (m * eps - 1.0).abs() > ALIGN_TOL {
        return Err(Error::Geometry(format!(
            "1/eps must be a positive integer (eps = {eps})"
        )));
    }
    Ok(m as usize)
}

/// Tiles Ω with (1/ε)² copies of the ε-scaled cell; Γ_D defaults to the left edge.
pub fn tile_domain(cell: &UnitCell, eps: f64) -> Result<PerforatedGrid> {
    PerforatedGrid::new(cell.clone(), eps, EdgeSet::default())
}

/// Summary measures of a perforated grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measures {
    /// |Y|
    pub porosity: f64,
    /// |Γ_G|
    pub surface_density: f64,
    /// |Ω^ε|
    pub fluid_volume: f64,
    /// |Γ_G^ε|
    pub surface_measure: f64,
}

impl PerforatedGrid {
    pub fn new(cell: UnitCell, eps: f64, dirichlet: EdgeSet) -> Result<Self> {
        let m = inverse_eps(eps)?;
        let n = cell.n();
        let nx = m * n;
        let h = 1.0 / nx as f64;
        let mut solid = vec![false; nx * nx];
        for jg in 0..nx {
            for ig in 0..nx {
                solid[jg * nx + ig] = cell.is_solid(ig % n, jg % n);
            }
        }
        let mut dof_of = vec![None; nx * nx];
        let mut fluid_cells = Vec::new();
        for (g, s) in solid.iter().enumerate() {
            if !s {
                dof_of[g] = Some(fluid_cells.len());
                fluid_cells.push(g);
            }
        }
        let mut faces = Vec::with_capacity(m * m * cell.ref_faces().len());
        for ky in 0..m {
            for kx in 0..m {
                for (r, rf) in cell.ref_faces().iter().enumerate() {
                    let ig = kx * n + rf.cell[0];
                    let jg = ky * n + rf.cell[1];
                    let owner = dof_of[jg * nx + ig].expect("reference face owner is fluid");
                    faces.push(BoundaryFace {
                        owner,
                        normal: rf.normal,
                        measure: h,
                        cell_k: [kx, ky],
                        ref_face: r,
                        y: rf.y,
                    });
                }
            }
        }
        let grid = PerforatedGrid {
            eps: 1.0 / m as f64,
            cells_per_side_eps: m,
            cell,
            nx,
            h,
            solid,
            dof_of,
            fluid_cells,
            faces,
            dirichlet,
        };
        if !grid.fluid_is_connected() {
            return Err(Error::Geometry("fluid region is not connected".into()));
        }
        Ok(grid)
    }

    pub fn with_dirichlet(mut self, dirichlet: EdgeSet) -> Self {
        self.dirichlet = dirichlet;
        self
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// 1/ε.
    pub fn eps_cells_per_side(&self) -> usize {
        self.cells_per_side_eps
    }

    pub fn unit_cell(&self) -> &UnitCell {
        &self.cell
    }

    /// Cells per side of Ω.
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dirichlet(&self) -> EdgeSet {
        self.dirichlet
    }

    pub fn is_solid(&self, i: usize, j: usize) -> bool {
        self.solid[j * self.nx + i]
    }

    pub fn classification(&self) -> &[bool] {
        &self.solid
    }

    pub fn n_fluid(&self) -> usize {
        self.fluid_cells.len()
    }

    pub fn n_solid(&self) -> usize {
        self.solid.len() - self.fluid_cells.len()
    }

    /// Global flat index (j·N + i) of fluid dof `d`.
    pub fn fluid_cell(&self, d: usize) -> usize {
        self.fluid_cells[d]
    }

    /// (i, j) of fluid dof `d`.
    pub fn fluid_ij(&self, d: usize) -> (usize, usize) {
        let g = self.fluid_cells[d];
        (g % self.nx, g / self.nx)
    }

    pub fn dof(&self, i: usize, j: usize) -> Option<usize> {
        self.dof_of[j * self.nx + i]
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [(i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h]
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.faces
    }

    /// Grain faces per ε-cell (= number of reference faces).
    pub fn faces_per_eps_cell(&self) -> usize {
        self.cell.ref_faces().len()
    }

    /// Maps a global cell to (flat ε-cell index k₂·(1/ε) + k₁, local unit-cell index).
    pub fn eps_cell_of(&self, i: usize, j: usize) -> (usize, usize) {
        let n = self.cell.n();
        let k = (j / n) * self.cells_per_side_eps + i / n;
        (k, self.cell.flat(i % n, j % n))
    }

    pub fn face_center(&self, face: &BoundaryFace) -> [f64; 2] {
        let g = self.fluid_cells[face.owner];
        let (i, j) = (g % self.nx, g / self.nx);
        let mut c = self.cell_center(i, j);
        c[face.normal.axis] += 0.5 * self.h * f64::from(face.normal.sign);
        c
    }

    /// Outer-edge directions of the boundary of Ω crossed from cell (i, j).
    pub fn outer_edges(&self, i: usize, j: usize) -> impl Iterator<Item = Normal> + '_ {
        let last = self.nx - 1;
        Normal::DIRECTIONS.into_iter().filter(move |d| match (d.axis, d.sign) {
            (0, 1) => i == last,
            (0, _) => i == 0,
            (_, 1) => j == last,
            _ => j == 0,
        })
    }

    pub fn measures(&self) -> Measures {
        Measures {
            porosity: self.cell.porosity(),
            surface_density: self.cell.surface(),
            fluid_volume: self.n_fluid() as f64 * self.h * self.h,
            surface_measure: self.faces.iter().map(|f| f.measure).sum(),
        }
    }

    fn fluid_is_connected(&self) -> bool {
        let Some(&start) = self.fluid_cells.first() else {
            return false;
        };
        let nx = self.nx;
        let mut seen = vec![false; nx * nx];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 0usize;
        while let Some(g) = stack.pop() {
            count += 1;
            let (i, j) = (g % nx, g / nx);
            let mut push = |ii: usize, jj: usize| {
                let gg = jj * nx + ii;
                if !self.solid[gg] && !seen[gg] {
                    seen[gg] = true;
                    stack.push(gg);
                }
            };
            if i + 1 < nx {
                push(i + 1, j);
            }
            if i > 0 {
                push(i - 1, j);
            }
            if j + 1 < nx {
                push(i, j + 1);
            }
            if j > 0 {
                push(i, j - 1);
            }
        }
        count == self.fluid_cells.len()
    }
}

/// `measures` as a free function, matching the other geometry entry points.
pub fn measures(grid: &PerforatedGrid) -> Measures {
    grid.measures()
}
