//! Measuring micro → macro convergence.
//!
//! Micro fields are compared with the upscaled ones on the ε-partition of Ω:
//! u through a mean-value extension into the grains, v through the boundary
//! unfolding T^ε f(x, y) = f(ε⌊x/ε⌋ + εy).

use rayon::prelude::*;
use serde::Serialize;

use crate::cell_problems::{compute_effective_tensors, CellOptions, EffectiveTensors};
use crate::error::{Error, Result};
use crate::geometry::{PerforatedGrid, UnitCell};
use crate::kinetics::RateLaw;
use crate::macro_sim::{self, MacroConfig, MacroRun, MacroState, MacroVelocity};
use crate::micro_sim::{self, difference_quotient_norm, MicroConfig, MicroState, VelocityMode};

/// A micro field extended to every cell of Ω.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedField {
    pub nx: usize,
    /// Row-major over all nx × nx cells.
    pub values: Vec<f64>,
}

/// Fills the solid cells of each ε-cell with the mean of its fluid cells.
pub fn extend(u: &[f64], grid: &PerforatedGrid) -> Result<ExtendedField> {
    if u.len() != grid.n_fluid() {
        return Err(Error::State(format!(
            "field has {} values, grid has {} fluid cells",
            u.len(),
            grid.n_fluid()
        )));
    }
    let nx = grid.nx();
    let m = grid.eps_cells_per_side();
    // Mean as base + mean offset from the first value, exact for constant fields.
    let mut base = vec![f64::NAN; m * m];
    let mut sum = vec![0.0; m * m];
    let mut count = vec![0usize; m * m];
    for (d, &val) in u.iter().enumerate() {
        let (i, j) = grid.fluid_ij(d);
        let (k, _) = grid.eps_cell_of(i, j);
        if count[k] == 0 {
            base[k] = val;
        }
        sum[k] += val - base[k];
        count[k] += 1;
    }
    let mut values = vec![0.0; nx * nx];
    for j in 0..nx {
        for i in 0..nx {
            values[j * nx + i] = match grid.dof(i, j) {
                Some(d) => u[d],
                None => {
                    let (k, _) = grid.eps_cell_of(i, j);
                    base[k] + sum[k] / count[k] as f64
                }
            };
        }
    }
    Ok(ExtendedField { nx, values })
}

/// A grain-face field indexed by (ε-cell k, reference face).
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedTrace {
    pub t: f64,
    pub eps: f64,
    /// 1/ε
    pub cells_per_side: usize,
    pub faces_per_cell: usize,
    /// Measure of one reference face.
    pub ref_face_measure: f64,
    /// `values[k · faces_per_cell + r]`
    pub values: Vec<f64>,
}

impl UnfoldedTrace {
    pub fn value(&self, k: usize, r: usize) -> f64 {
        self.values[k * self.faces_per_cell + r]
    }

    /// ∫_Ω ∫_{Γ_G} |T^ε f|² dσ dx.
    pub fn norm_sq(&self) -> f64 {
        let cell_area = self.eps * self.eps;
        self.values.iter().map(|v| v * v).sum::<f64>() * cell_area * self.ref_face_measure
    }

    /// ε-cells on which the trace is nonzero.
    pub fn support(&self) -> Vec<usize> {
        (0..self.cells_per_side * self.cells_per_side)
            .filter(|&k| (0..self.faces_per_cell).any(|r| self.value(k, r) != 0.0))
            .collect()
    }
}

/// ε ∫_{Γ_G^ε} |f|² dσ.
pub fn surface_norm_sq(f: &[f64], grid: &PerforatedGrid) -> f64 {
    grid.eps()
        * grid
            .boundary_faces()
            .iter()
            .zip(f)
            .map(|(face, v)| v * v * face.measure)
            .sum::<f64>()
}

/// Unfolds a grain-face field and checks the isometry
/// ∫_Ω∫_{Γ_G} |T^ε f|² = ε ∫_{Γ_G^ε} |f|².
pub fn unfold(f: &[f64], grid: &PerforatedGrid, t: f64) -> Result<UnfoldedTrace> {
    let faces = grid.boundary_faces();
    if f.len() != faces.len() {
        return Err(Error::State(format!(
            "field has {} values, grid has {} grain faces",
            f.len(),
            faces.len()
        )));
    }
    let m = grid.eps_cells_per_side();
    let nf = grid.faces_per_eps_cell();
    let mut values = vec![0.0; m * m * nf];
    for (face, &val) in faces.iter().zip(f) {
        let k = face.cell_k[1] * m + face.cell_k[0];
        values[k * nf + face.ref_face] = val;
    }
    let trace = UnfoldedTrace {
        t,
        eps: grid.eps(),
        cells_per_side: m,
        faces_per_cell: nf,
        ref_face_measure: grid.unit_cell().h(),
        values,
    };
    let lhs = trace.norm_sq();
    let rhs = surface_norm_sq(f, grid);
    if (lhs - rhs).abs() > 1e-12 * lhs.max(rhs).max(f64::MIN_POSITIVE) {
        return Err(Error::Invariant {
            t,
            message: format!("unfolding isometry fails: {lhs:e} vs {rhs:e}"),
        });
    }
    Ok(trace)
}

/// One row of the oscillation-lemma table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscillationRow {
    pub eps: f64,
    /// ε Σ_{Γ_G^ε} f(x, x/ε) h
    pub micro: f64,
    /// ∫_Ω ∫_{Γ_G} f(x, y) dσ dx
    pub product: f64,
    pub error: f64,
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    let n = order;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out
}

/// ∫_Ω ∫_{Γ_G} f(x, y) dσ(y) dx, composite Gauss-Legendre in x and the
/// exact face sum in y.
pub fn product_quadrature(f: &dyn Fn([f64; 2], [f64; 2]) -> f64, cell: &UnitCell) -> f64 {
    let rule = gauss_legendre(10);
    let panels = 8;
    let ph = 1.0 / panels as f64;
    let mut total = 0.0;
    for rf in cell.ref_faces() {
        let mut s = 0.0;
        for py in 0..panels {
            for px in 0..panels {
                for &(xa, wa) in &rule {
                    for &(xb, wb) in &rule {
                        let x = [(px as f64 + xa) * ph, (py as f64 + xb) * ph];
                        s += wa * wb * f(x, rf.y);
                    }
                }
            }
        }
        total += s * ph * ph * cell.h();
    }
    total
}

/// Compares ε Σ_{Γ_G^ε} f(x, x/ε) h with the product quadrature for each ε.
pub fn oscillation_check(
    f: &dyn Fn([f64; 2], [f64; 2]) -> f64,
    cell: &UnitCell,
    eps_list: &[f64],
) -> Result<Vec<OscillationRow>> {
    let product = product_quadrature(f, cell);
    eps_list
        .iter()
        .map(|&eps| {
            let grid = PerforatedGrid::new(cell.clone(), eps, Default::default())?;
            let micro = grid.eps()
                * grid
                    .boundary_faces()
                    .iter()
                    .map(|face| f(grid.face_center(face), face.y) * face.measure)
                    .sum::<f64>();
            Ok(OscillationRow {
                eps: grid.eps(),
                micro,
                product,
                error: (micro - product).abs(),
            })
        })
        .collect()
}

/// Errors of one micro run against the macro run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    /// ‖ũ^ε − u‖_{L²(Ω×(0,T))}
    pub err_u: f64,
    /// ‖T^ε v^ε − v‖_{L²(Ω×Γ_G×(0,T))}
    pub err_v: f64,
    /// ‖r(ũ^ε) − r(u)‖_{L²(Ω×(0,T))}
    pub err_r: f64,
    pub order_u: Option<f64>,
    pub order_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
}

/// ln(e₁/e₂) / ln(ε₁/ε₂); `None` when either error is at or below `floor`.
pub fn observed_order(eps1: f64, e1: f64, eps2: f64, e2: f64, floor: f64) -> Option<f64> {
    (e1 > floor && e2 > floor && eps1 != eps2).then(|| (e1 / e2).ln() / (eps1 / eps2).ln())
}

/// Order from three values on grids refined by a factor 2 each time.
pub fn richardson_order(coarse: f64, mid: f64, fine: f64) -> Option<f64> {
    let (a, b) = (coarse - mid, mid - fine);
    (a != 0.0 && b != 0.0 && a / b > 0.0).then(|| (a / b).log2())
}

impl ConvergenceReport {
    /// Builds the report and fills the observed orders between consecutive rows.
    pub fn new(mut rows: Vec<ConvergenceRow>, floor: f64) -> Self {
        for i in 1..rows.len() {
            let (a, b) = (rows[i - 1], rows[i]);
            rows[i].order_u = observed_order(a.eps, a.err_u, b.eps, b.err_u, floor);
            rows[i].order_v = observed_order(a.eps, a.err_v, b.eps, b.err_v, floor);
        }
        Self { rows }
    }

    pub fn u_strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].err_u < w[0].err_u)
    }

    pub fn v_strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].err_v < w[0].err_v)
    }
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Means of an `nm × nm` field over `m × m` blocks, as first value plus mean offset.
fn block_means(f: &[f64], nm: usize, block: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * m];
    for (k, mean) in out.iter_mut().enumerate() {
        let (k1, k2) = (k % m, k / m);
        let first = f[k2 * block * nm + k1 * block];
        let mut sum = 0.0;
        for j in k2 * block..(k2 + 1) * block {
            for i in k1 * block..(k1 + 1) * block {
                sum += f[j * nm + i] - first;
            }
        }
        *mean = first + sum / (block * block) as f64;
    }
    out
}

/// Volume, unfolded-boundary and rate errors of a micro trajectory against a
/// macro trajectory on an `macro_n × macro_n` grid.
pub fn two_scale_errors(
    micro: &[MicroState],
    macro_traj: &[MacroState],
    grid: &PerforatedGrid,
    macro_n: usize,
    law: &RateLaw,
) -> Result<ConvergenceRow> {
    let m = grid.eps_cells_per_side();
    if macro_n % m != 0 {
        return Err(Error::Config(format!(
            "macro resolution {macro_n} is not a multiple of 1/eps = {m}"
        )));
    }
    if micro.len() != macro_traj.len() {
        return Err(Error::Config(format!(
            "time grids differ: {} micro vs {} macro snapshots",
            micro.len(),
            macro_traj.len()
        )));
    }
    for (a, b) in micro.iter().zip(macro_traj) {
        if (a.t - b.t).abs() > 1e-9 * a.t.abs().max(1.0) {
            return Err(Error::Config(format!(
                "time grids differ: micro t = {} vs macro t = {}",
                a.t, b.t
            )));
        }
        if b.u.len() != macro_n * macro_n {
            return Err(Error::Config("macro state does not match its resolution".into()));
        }
    }
    let nx = grid.nx();
    let h2 = grid.h() * grid.h();
    let eps2 = grid.eps() * grid.eps();
    let block = macro_n / m;
    let nf = grid.faces_per_eps_cell();
    let ref_measure = grid.unit_cell().h();
    let mut eu = Vec::with_capacity(micro.len());
    let mut ev = Vec::with_capacity(micro.len());
    let mut er = Vec::with_capacity(micro.len());
    for (ms, cs) in micro.iter().zip(macro_traj) {
        let u_bar = block_means(&cs.u, macro_n, block, m);
        let v_bar = block_means(&cs.v, macro_n, block, m);
        let ext = extend(&ms.u, grid)?;
        let (mut su, mut sr) = (0.0, 0.0);
        for j in 0..nx {
            for i in 0..nx {
                let (k, _) = grid.eps_cell_of(i, j);
                let x = ext.values[j * nx + i];
                su += (x - u_bar[k]).powi(2);
                sr += (law.rate(x) - law.rate(u_bar[k])).powi(2);
            }
        }
        let trace = unfold(&ms.v, grid, ms.t)?;
        let mut sv = 0.0;
        for k in 0..m * m {
            for r in 0..nf {
                sv += (trace.value(k, r) - v_bar[k]).powi(2);
            }
        }
        eu.push(su * h2);
        er.push(sr * h2);
        ev.push(sv * eps2 * ref_measure);
    }
    let times: Vec<f64> = micro.iter().map(|s| s.t).collect();
    let norm = |v: &[f64]| {
        if times.len() == 1 {
            v[0].sqrt()
        } else {
            trapezoid(&times, v).max(0.0).sqrt()
        }
    };
    Ok(ConvergenceRow {
        eps: grid.eps(),
        err_u: norm(&eu),
        err_v: norm(&ev),
        err_r: norm(&er),
        order_u: None,
        order_v: None,
    })
}

/// Everything the ε-sweep needs besides the list of ε.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub cell: UnitCell,
    pub dirichlet: crate::geometry::EdgeSet,
    /// Micro settings; D, kinetics, time grid and initial data are shared with the macro run.
    pub micro: MicroConfig,
    pub macro_n: usize,
    pub cell_options: CellOptions,
    /// Errors at or below this value get no observed order.
    pub error_floor: f64,
    /// Lag of the difference-quotient diagnostic (a multiple of the output spacing).
    pub dq_lag: Option<f64>,
}

/// Per-ε diagnostics collected alongside the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepDiagnostics {
    pub eps: f64,
    pub max_mass_drift: f64,
    /// sup_t of the difference-quotient norm (NaN without a lag).
    pub max_difference_quotient: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub report: ConvergenceReport,
    pub tensors: EffectiveTensors,
    pub macro_run: MacroRun,
    pub diagnostics: Vec<SweepDiagnostics>,
}

/// Macro configuration matching a micro configuration.
pub fn matching_macro_config(
    micro: &MicroConfig,
    tensors: &EffectiveTensors,
    dirichlet: crate::geometry::EdgeSet,
    macro_n: usize,
) -> Result<MacroConfig> {
    let velocity = match micro.velocity {
        VelocityMode::Zero => MacroVelocity::Zero,
        VelocityMode::Reconstructed { pressure_gradient } => {
            if pressure_gradient[1] != 0.0 {
                return Err(Error::Config(
                    "the macro Darcy problem drives flow along x1 only; pressure_gradient[1] must be 0"
                        .into(),
                ));
            }
            MacroVelocity::Darcy {
                pressure_left: 0.0,
                pressure_right: pressure_gradient[0],
            }
        }
    };
    let mut cfg = MacroConfig::from_tensors(tensors);
    cfg.law = micro.law;
    cfg.resolution = micro.resolution;
    cfg.n = macro_n;
    cfg.dt = micro.dt;
    cfg.t_final = micro.t_final;
    cfg.velocity = velocity;
    cfg.dirichlet = dirichlet;
    cfg.u_init = micro.u_init;
    cfg.v_init = micro.v_init;
    cfg.output_every = micro.output_every;
    cfg.newton = micro.newton;
    cfg.invariant_slack = micro.invariant_slack;
    Ok(cfg)
}

/// Checks that ε decreases strictly and 1/ε is an integer.
pub fn check_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::Config("eps_list is empty".into()));
    }
    for &e in eps_list {
        crate::geometry::inverse_eps(e).map_err(|e| Error::Config(e.to_string()))?;
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("eps_list must be strictly decreasing".into()));
    }
    Ok(())
}

/// Cell problems once, the macro model once, the micro model for every ε.
pub fn sweep(cfg: &SweepConfig, eps_list: &[f64]) -> Result<SweepResult> {
    check_eps_list(eps_list)?;
    let cells = compute_effective_tensors(&cfg.cell, cfg.micro.diffusivity, cfg.cell_options)?;
    let tensors = cells.tensors;
    let macro_cfg = matching_macro_config(&cfg.micro, &tensors, cfg.dirichlet, cfg.macro_n)?;
    let macro_run = macro_sim::run(&macro_cfg)?;
    let rows: Vec<Result<(ConvergenceRow, SweepDiagnostics)>> = eps_list
        .par_iter()
        .map(|&eps| {
            let grid = PerforatedGrid::new(cfg.cell.clone(), eps, cfg.dirichlet)?;
            let run = micro_sim::run(&cfg.micro, &grid, cells.stokes.as_ref())?;
            let row = two_scale_errors(
                &run.trajectory,
                &macro_run.trajectory,
                &grid,
                cfg.macro_n,
                &cfg.micro.law,
            )?;
            let max_dq = match cfg.dq_lag {
                Some(lag) => difference_quotient_norm(&run.trajectory, &grid, lag)?
                    .iter()
                    .fold(0.0f64, |m, (_, v)| m.max(*v)),
                None => f64::NAN,
            };
            let diag = SweepDiagnostics {
                eps: grid.eps(),
                max_mass_drift: run.mass.iter().fold(0.0f64, |m, r| m.max(r.drift.abs())),
                max_difference_quotient: max_dq,
            };
            Ok((row, diag))
        })
        .collect();
    let mut report_rows = Vec::with_capacity(rows.len());
    let mut diagnostics = Vec::with_capacity(rows.len());
    for r in rows {
        let (row, diag) = r?;
        report_rows.push(row);
        diagnostics.push(diag);
    }
    Ok(SweepResult {
        report: ConvergenceReport::new(report_rows, cfg.error_floor),
        tensors,
        macro_run,
        diagnostics,
    })
}
