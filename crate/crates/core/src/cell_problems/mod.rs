//! Cell problems and effective coefficients.
//!
//! * S_ij = D [δ_ij + |Y|⁻¹ ∫_Y ∂_{y_j} ξ_i dy] from the diffusion correctors ξ_i.
//! * K_ij = |Y|⁻¹ ∫_Y χ_i^j dy from the Stokes cell velocities χ^j.
//!
//! Both tensors are symmetrized; the asymmetry before symmetrization is kept in
//! the provenance as a convergence check of the cell solves.

mod diffusion;
mod stokes;

pub use diffusion::{
    boundary_moment, solve_diffusion_cell, solve_diffusion_cell_with, CellScalarField,
};
pub use stokes::{solve_stokes_cell, solve_stokes_cell_with, StokesCellSolution, StokesOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UnitCell;
use crate::linalg::SolverOptions;

pub type Tensor2 = [[f64; 2]; 2];

/// A symmetrized 2×2 tensor with its asymmetry residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssembledTensor {
    pub tensor: Tensor2,
    /// |t₁₂ − t₂₁| / max |t_ij| before symmetrization.
    pub asymmetry: f64,
}

/// Eigenvalues of a symmetric 2×2 tensor, ascending.
pub fn eigenvalues(t: &Tensor2) -> [f64; 2] {
    let tr = t[0][0] + t[1][1];
    let diff = t[0][0] - t[1][1];
    let disc = (0.25 * diff * diff + t[0][1] * t[1][0]).max(0.0).sqrt();
    [0.5 * tr - disc, 0.5 * tr + disc]
}

fn symmetrize(raw: Tensor2) -> AssembledTensor {
    let scale = raw.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let asymmetry = if scale > 0.0 {
        (raw[0][1] - raw[1][0]).abs() / scale
    } else {
        0.0
    };
    let off = 0.5 * (raw[0][1] + raw[1][0]);
    AssembledTensor {
        tensor: [[raw[0][0], off], [off, raw[1][1]]],
        asymmetry,
    }
}

/// Assembles the effective diffusion tensor from the two correctors.
pub fn assemble_s(
    cell: &UnitCell,
    fields: &[CellScalarField; 2],
    diffusivity: f64,
    asym_tol: f64,
) -> Result<AssembledTensor> {
    if fields.iter().any(|f| f.n() != cell.n()) {
        return Err(Error::Assembly("correctors solved on a different cell".into()));
    }
    if fields[0].direction != 0 || fields[1].direction != 1 {
        return Err(Error::Assembly("correctors must be ordered by direction".into()));
    }
    let y = cell.porosity();
    let mut raw = [[0.0; 2]; 2];
    for (i, f) in fields.iter().enumerate() {
        for (j, s) in raw[i].iter_mut().enumerate() {
            *s = diffusivity * (f.identity_integral(j) + f.gradient_integral(j)) / y;
        }
    }
    let t = symmetrize(raw);
    if t.asymmetry > asym_tol {
        return Err(Error::Assembly(format!(
            "S asymmetry {:.3e} exceeds {asym_tol:.1e}; cell solve not converged",
            t.asymmetry
        )));
    }
    let ev = eigenvalues(&t.tensor);
    if ev[0] <= 0.0 {
        return Err(Error::Assembly(format!("S not positive definite (eigenvalues {ev:?})")));
    }
    for i in 0..2 {
        if t.tensor[i][i] > diffusivity * (1.0 + 1e-12) {
            return Err(Error::Assembly(format!(
                "s_{i}{i} = {} exceeds D = {diffusivity}",
                t.tensor[i][i]
            )));
        }
    }
    Ok(t)
}

/// Assembles the permeability tensor from the two Stokes cell solutions.
pub fn assemble_k(
    cell: &UnitCell,
    solutions: &[StokesCellSolution; 2],
    spd_tol: f64,
) -> Result<AssembledTensor> {
    if solutions.iter().any(|s| s.n() != cell.n()) {
        return Err(Error::Assembly("Stokes solutions solved on a different cell".into()));
    }
    let y = cell.porosity();
    let mut raw = [[0.0; 2]; 2];
    for (j, sol) in solutions.iter().enumerate() {
        for (i, row) in raw.iter_mut().enumerate() {
            row[j] = sol.mean_flow(i) / y;
        }
    }
    let t = symmetrize(raw);
    if t.asymmetry > spd_tol {
        return Err(Error::Assembly(format!(
            "K asymmetry {:.3e} exceeds {spd_tol:.1e}",
            t.asymmetry
        )));
    }
    let ev = eigenvalues(&t.tensor);
    if ev[0] <= 0.0 {
        return Err(Error::Assembly(format!("K not positive definite (eigenvalues {ev:?})")));
    }
    Ok(t)
}

/// Solver settings and residuals behind an [`EffectiveTensors`] value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub n: usize,
    pub solver_tol: f64,
    pub s_asymmetry: f64,
    pub k_asymmetry: f64,
    /// Relative residuals of the two diffusion cell solves.
    pub diffusion_residual: [f64; 2],
    /// max |∇·χ^j| of the two Stokes solves.
    pub stokes_divergence: [f64; 2],
    /// Whether K was computed (false for an unperforated cell).
    pub has_permeability: bool,
}

/// Effective diffusion S and permeability K of a unit cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTensors {
    pub s: Tensor2,
    pub k: Tensor2,
    /// Smallest eigenvalue of S.
    pub alpha_s: f64,
    pub diffusivity: f64,
    /// |Y|
    pub porosity: f64,
    /// |Γ_G|
    pub surface: f64,
    pub provenance: Provenance,
}

impl EffectiveTensors {
    /// |Γ_G| / |Y|, the storage factor of the upscaled model.
    pub fn storage_factor(&self) -> f64 {
        self.surface / self.porosity
    }

    pub fn s_is_spd(&self) -> bool {
        eigenvalues(&self.s)[0] > 0.0
    }

    pub fn k_is_spd(&self) -> bool {
        eigenvalues(&self.k)[0] > 0.0
    }
}

/// Tolerances for [`compute_effective_tensors`].
#[derive(Debug, Clone, Copy)]
pub struct CellOptions {
    pub diffusion: SolverOptions,
    pub stokes: StokesOptions,
    pub asym_tol: f64,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self {
            diffusion: SolverOptions::with_tol(1e-10),
            stokes: StokesOptions::default(),
            asym_tol: 1e-8,
        }
    }
}

/// All cell solves of a unit cell.
#[derive(Debug, Clone)]
pub struct CellSolutions {
    pub correctors: [CellScalarField; 2],
    /// `None` for an unperforated cell.
    pub stokes: Option<[StokesCellSolution; 2]>,
    pub tensors: EffectiveTensors,
}

/// Solves the four cell problems (in parallel) and assembles S and K.
pub fn compute_effective_tensors(
    cell: &UnitCell,
    diffusivity: f64,
    opts: CellOptions,
) -> Result<CellSolutions> {
    if !(diffusivity > 0.0 && diffusivity.is_finite()) {
        return Err(Error::Parameter(format!("diffusivity must be > 0, got {diffusivity}")));
    }
    let ((xi0, xi1), (chi0, chi1)) = rayon::join(
        || {
            rayon::join(
                || solve_diffusion_cell_with(cell, 0, opts.diffusion),
                || solve_diffusion_cell_with(cell, 1, opts.diffusion),
            )
        },
        || {
            if !cell.is_perforated() {
                return (None, None);
            }
            let (a, b) = rayon::join(
                || solve_stokes_cell_with(cell, 0, opts.stokes),
                || solve_stokes_cell_with(cell, 1, opts.stokes),
            );
            (Some(a), Some(b))
        },
    );
    let correctors = [xi0?, xi1?];
    let s = assemble_s(cell, &correctors, diffusivity, opts.asym_tol)?;
    let stokes = match (chi0, chi1) {
        (Some(a), Some(b)) => Some([a?, b?]),
        _ => None,
    };
    let (k, k_asym, divergence) = match &stokes {
        Some(sols) => {
            let k = assemble_k(cell, sols, opts.asym_tol)?;
            (
                k.tensor,
                k.asymmetry,
                [sols[0].max_divergence, sols[1].max_divergence],
            )
        }
        None => ([[0.0; 2]; 2], 0.0, [0.0; 2]),
    };
    let tensors = EffectiveTensors {
        s: s.tensor,
        k,
        alpha_s: eigenvalues(&s.tensor)[0],
        diffusivity,
        porosity: cell.porosity(),
        surface: cell.surface(),
        provenance: Provenance {
            n: cell.n(),
            solver_tol: opts.diffusion.rel_tol,
            s_asymmetry: s.asymmetry,
            k_asymmetry: k_asym,
            diffusion_residual: [correctors[0].stats.residual, correctors[1].stats.residual],
            stokes_divergence: divergence,
            has_permeability: stokes.is_some(),
        },
    };
    Ok(CellSolutions {
        correctors,
        stokes,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_unit_cell;

    #[test]
    fn eigenvalues_of_diagonal_and_rotated() {
        assert_eq!(eigenvalues(&[[2.0, 0.0], [0.0, 1.0]]), [1.0, 2.0]);
        let ev = eigenvalues(&[[2.0, 1.0], [1.0, 2.0]]);
        assert!((ev[0] - 1.0).abs() < 1e-15 && (ev[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn unperforated_cell_gives_identity() {
        let c = build_unit_cell(0.0, [0.5, 0.5], 8).unwrap();
        let sol = compute_effective_tensors(&c, 1.0, CellOptions::default()).unwrap();
        let s = sol.tensors.s;
        assert!((s[0][0] - 1.0).abs() < 1e-10 && (s[1][1] - 1.0).abs() < 1e-10);
        assert!(s[0][1].abs() < 1e-10);
        assert!(sol.stokes.is_none());
    }

    #[test]
    fn s_is_linear_in_diffusivity() {
        let c = build_unit_cell(0.5, [0.5, 0.5], 16).unwrap();
        let xi = [
            solve_diffusion_cell(&c, 0).unwrap(),
            solve_diffusion_cell(&c, 1).unwrap(),
        ];
        let s1 = assemble_s(&c, &xi, 1.0, 1e-8).unwrap().tensor;
        let s2 = assemble_s(&c, &xi, 2.0, 1e-8).unwrap().tensor;
        for i in 0..2 {
            for j in 0..2 {
                assert!((s2[i][j] - 2.0 * s1[i][j]).abs() < 1e-15);
            }
        }
        assert!(s1[0][0] > 0.0 && s1[0][0] < 1.0);
        assert!((s1[0][0] - s1[1][1]).abs() < 1e-10);
    }

    #[test]
    fn mismatched_fields_are_rejected() {
        let c8 = build_unit_cell(0.5, [0.5, 0.5], 8).unwrap();
        let c16 = build_unit_cell(0.5, [0.5, 0.5], 16).unwrap();
        let xi = [
            solve_diffusion_cell(&c8, 0).unwrap(),
            solve_diffusion_cell(&c8, 1).unwrap(),
        ];
        assert!(assemble_s(&c16, &xi, 1.0, 1e-8).is_err());
        let swapped = [xi[1].clone(), xi[0].clone()];
        assert!(assemble_s(&c8, &swapped, 1.0, 1e-8).is_err());
    }
}
