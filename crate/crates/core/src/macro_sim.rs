//! Darcy-scale solver on a uniform N × N grid of Ω.
//!
//! Unknowns u, v, w live on every cell. The step mirrors the micro scheme:
//! upwind advection with the Darcy velocity, then an implicit solve of
//!
//! `H² (u − u_adv) + dt L_S u + γ H² Δv(u) = 0`,  γ = |Γ_G| / |Y|,
//!
//! where L_S is the flux-form discretisation of −∇·(S ∇u) and Δv(u) is the
//! event-exact change of v over the step. The total Σ (u + γ v) H² changes only
//! through ∂Ω.

use serde::Serialize;

use crate::cell_problems::{eigenvalues, EffectiveTensors, Tensor2};
use crate::error::{Error, Result};
use crate::geometry::EdgeSet;
use crate::kinetics::{dissolution_rate, RateLaw, Resolution};
use crate::linalg::{solve, CsrMatrix, SolverOptions, TripletBuilder};
use crate::micro_sim::{box_bound, step_count, InitialProfile, MassRecord};
use crate::transport::{upwind_advect, FaceVelocity, NewtonOptions, ReactionSystem};

/// Source of the macroscopic velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MacroVelocity {
    Zero,
    /// Darcy flow driven by fixed pressures on the left and right edges.
    Darcy { pressure_left: f64, pressure_right: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroConfig {
    /// Effective diffusion tensor (already contains D).
    pub s: Tensor2,
    /// Permeability.
    pub k: Tensor2,
    /// |Y|
    pub porosity: f64,
    /// |Γ_G|
    pub surface: f64,
    pub law: RateLaw,
    pub resolution: Resolution,
    /// Cells per side N.
    pub n: usize,
    pub dt: f64,
    pub t_final: f64,
    pub velocity: MacroVelocity,
    /// Edges with u = 0.
    pub dirichlet: EdgeSet,
    pub u_init: InitialProfile,
    pub v_init: InitialProfile,
    pub output_every: usize,
    pub newton: NewtonOptions,
    pub invariant_slack: f64,
    /// Relative tolerance of the Darcy pressure solve.
    pub darcy_tol: f64,
}

impl MacroConfig {
    /// Defaults with the coefficients of a computed unit cell.
    pub fn from_tensors(t: &EffectiveTensors) -> Self {
        Self {
            s: t.s,
            k: t.k,
            porosity: t.porosity,
            surface: t.surface,
            law: RateLaw::default(),
            resolution: Resolution::Exact,
            n: 64,
            dt: 1e-3,
            t_final: 0.1,
            velocity: MacroVelocity::Zero,
            dirichlet: EdgeSet::LEFT,
            u_init: InitialProfile::Constant(0.0),
            v_init: InitialProfile::Constant(0.5),
            output_every: 10,
            newton: NewtonOptions::default(),
            invariant_slack: 1e-10,
            darcy_tol: 1e-13,
        }
    }

    /// γ = |Γ_G| / |Y|.
    pub fn storage_factor(&self) -> f64 {
        self.surface / self.porosity
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.law.validate()?;
        self.resolution.validate()?;
        if self.n == 0 {
            return Err(Error::Parameter("macro resolution must be >= 1".into()));
        }
        check_spd("S", &self.s)?;
        if matches!(self.velocity, MacroVelocity::Darcy { .. }) {
            check_spd("K", &self.k)?;
        }
        if !(self.porosity > 0.0 && self.porosity <= 1.0) || !(self.surface >= 0.0) {
            return Err(Error::Parameter(format!(
                "geometry factors |Y| = {}, |Gamma_G| = {} are not admissible",
                self.porosity, self.surface
            )));
        }
        step_count(self.dt, self.t_final)?;
        if self.output_every == 0 {
            return Err(Error::Parameter("output_every must be >= 1".into()));
        }
        for (name, p) in [("u_init", self.u_init), ("v_init", self.v_init)] {
            if p.range().0 < 0.0 {
                return Err(Error::Parameter(format!("{name} = {p} takes negative values")));
            }
        }
        let m0 = self.u_init.range().1.max(self.v_init.range().1);
        let m = box_bound(&self.law, m0, self.t_final);
        let kin = self.dt * self.law.k * self.law.lipschitz_on(m);
        if kin > 1.0 {
            return Err(Error::Parameter(format!(
                "kinetic step bound violated: dt*k*L_r = {kin:.4} > 1"
            )));
        }
        Ok(())
    }
}

fn check_spd(name: &str, t: &Tensor2) -> Result<()> {
    let asym = (t[0][1] - t[1][0]).abs();
    if asym > 1e-8 * t[0][0].abs().max(t[1][1].abs()) {
        return Err(Error::Parameter(format!("{name} is not symmetric")));
    }
    let ev = eigenvalues(t);
    if !(ev[0] > 0.0) {
        return Err(Error::Parameter(format!(
            "{name} is not positive definite (eigenvalues {ev:?})"
        )));
    }
    Ok(())
}

/// Fixed values on the four edges (left, right, bottom, top); `None` is no flux.
pub type EdgeValues = [Option<f64>; 4];

fn edge_values(dirichlet: EdgeSet, value: f64) -> EdgeValues {
    [
        dirichlet.left.then_some(value),
        dirichlet.right.then_some(value),
        dirichlet.bottom.then_some(value),
        dirichlet.top.then_some(value),
    ]
}

/// Flux through one face, integrated over its length: Σ coeff·u + constant.
#[derive(Debug, Default)]
struct FaceFlux {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

/// Flux-form discretisation of −∇·(T∇u) on the N × N grid.
///
/// Normal derivatives are two-point; the tangential derivative on a face is the
/// mean of the central differences of its two cells (one-sided at ∂Ω). Faces on
/// an edge with a fixed value use the half-cell distance and no tangential part.
#[derive(Debug, Clone)]
pub struct TensorOperator {
    n: usize,
    tensor: Tensor2,
    edges: EdgeValues,
    /// Row a of `matrix`·u − `rhs` is the net outward flux of cell a.
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

impl TensorOperator {
    /// Off-diagonal entries below 1e-12 of the diagonal are treated as zero, so
    /// cells with mirror symmetry get the symmetric five-point operator.
    pub fn new(n: usize, mut tensor: Tensor2, edges: EdgeValues) -> Self {
        let scale = tensor[0][0].abs().max(tensor[1][1].abs());
        for (a, b) in [(0, 1), (1, 0)] {
            if tensor[a][b].abs() <= 1e-12 * scale {
                tensor[a][b] = 0.0;
            }
        }
        let mut op = Self {
            n,
            tensor,
            edges,
            matrix: TripletBuilder::new(n * n).build(),
            rhs: vec![0.0; n * n],
        };
        let mut t = TripletBuilder::new(n * n);
        let mut rhs = vec![0.0; n * n];
        for axis in 0..2 {
            for (j, i) in op.faces() {
                let f = op.face_flux(axis, i, j);
                let (lower, upper) = op.face_cells(axis, i, j);
                // Outward flux of the lower cell is +F, of the upper cell −F.
                for (cell, sign) in [(lower, 1.0), (upper, -1.0)] {
                    if let Some(c) = cell {
                        for &(col, w) in &f.terms {
                            t.add(c, col, sign * w);
                        }
                        rhs[c] -= sign * f.constant;
                    }
                }
            }
        }
        op.matrix = t.build();
        op.rhs = rhs;
        op
    }

    pub fn is_symmetric(&self) -> bool {
        self.tensor[0][1] == 0.0 && self.tensor[1][0] == 0.0
    }

    /// Faces normal to either axis as (line j, index i along the axis).
    fn faces(&self) -> impl Iterator<Item = (usize, usize)> {
        let n = self.n;
        (0..n).flat_map(move |j| (0..=n).map(move |i| (j, i)))
    }

    fn cell(&self, axis: usize, along: usize, across: usize) -> usize {
        if axis == 0 {
            across * self.n + along
        } else {
            along * self.n + across
        }
    }

    /// Cells below and above face `i` (along `axis`) in line `j`.
    fn face_cells(&self, axis: usize, i: usize, j: usize) -> (Option<usize>, Option<usize>) {
        let lower = (i > 0).then(|| self.cell(axis, i - 1, j));
        let upper = (i < self.n).then(|| self.cell(axis, i, j));
        (lower, upper)
    }

    /// H × tangential derivative at cell (along, across) as weighted cell values.
    fn tangential(&self, axis: usize, along: usize, across: usize) -> Vec<(usize, f64)> {
        let n = self.n;
        let lo = across.checked_sub(1);
        let hi = (across + 1 < n).then_some(across + 1);
        match (lo, hi) {
            (Some(l), Some(h)) => vec![
                (self.cell(axis, along, h), 0.5),
                (self.cell(axis, along, l), -0.5),
            ],
            (None, Some(h)) => vec![
                (self.cell(axis, along, h), 1.0),
                (self.cell(axis, along, across), -1.0),
            ],
            (Some(l), None) => vec![
                (self.cell(axis, along, across), 1.0),
                (self.cell(axis, along, l), -1.0),
            ],
            (None, None) => Vec::new(),
        }
    }

    fn face_flux(&self, axis: usize, i: usize, j: usize) -> FaceFlux {
        let n = self.n;
        let other = 1 - axis;
        let t_nn = self.tensor[axis][axis];
        let t_nt = self.tensor[axis][other];
        let mut f = FaceFlux::default();
        let edge = |lower_side: bool| self.edges[2 * axis + usize::from(!lower_side)];
        if i == 0 || i == n {
            let inside = if i == 0 { 0 } else { n - 1 };
            let Some(g) = edge(i == 0) else {
                return f;
            };
            let c = self.cell(axis, inside, j);
            // Outward normal derivative towards the wall at half a cell.
            let s = if i == 0 { 1.0 } else { -1.0 };
            f.terms.push((c, -2.0 * t_nn * s));
            f.constant = 2.0 * t_nn * s * g;
            return f;
        }
        let (l, r) = (self.cell(axis, i - 1, j), self.cell(axis, i, j));
        f.terms.push((r, -t_nn));
        f.terms.push((l, t_nn));
        if t_nt != 0.0 {
            for cell_along in [i - 1, i] {
                for (c, w) in self.tangential(axis, cell_along, j) {
                    f.terms.push((c, -t_nt * 0.5 * w));
                }
            }
        }
        f
    }

    /// Face fluxes (per unit length) of `u` as a velocity field.
    pub fn flux_field(&self, u: &[f64]) -> FaceVelocity {
        let n = self.n;
        let h = 1.0 / n as f64;
        let mut vel = FaceVelocity::zeros(n, h);
        for axis in 0..2 {
            for (j, i) in self.faces() {
                let f = self.face_flux(axis, i, j);
                let flux = f.terms.iter().map(|&(c, w)| w * u[c]).sum::<f64>() + f.constant;
                if axis == 0 {
                    vel.set_x_face(i, j, flux / h);
                } else {
                    vel.set_y_face(j, i, flux / h);
                }
            }
        }
        vel
    }

    /// Net outward boundary flux of `u`, integrated over ∂Ω.
    pub fn boundary_outflow(&self, u: &[f64]) -> f64 {
        let n = self.n;
        let mut total = 0.0;
        for axis in 0..2 {
            for j in 0..n {
                for (i, sign) in [(0, -1.0), (n, 1.0)] {
                    let f = self.face_flux(axis, i, j);
                    let flux = f.terms.iter().map(|&(c, w)| w * u[c]).sum::<f64>() + f.constant;
                    total += sign * flux;
                }
            }
        }
        total
    }
}

/// Darcy pressure and velocity.
#[derive(Debug, Clone)]
pub struct DarcySolution {
    pub pressure: Vec<f64>,
    pub velocity: FaceVelocity,
    /// max over cells of |∇·q|.
    pub max_divergence: f64,
    pub iterations: usize,
}

/// Solves ∇·(K∇P) = 0 with P fixed on the left and right edges, no flow on
/// the others, and returns q = −K∇P on the faces.
pub fn darcy_solve(
    k: &Tensor2,
    n: usize,
    pressure_left: f64,
    pressure_right: f64,
    tol: f64,
) -> Result<DarcySolution> {
    check_spd("K", k)?;
    let op = TensorOperator::new(n, *k, [Some(pressure_left), Some(pressure_right), None, None]);
    let mut p = vec![0.5 * (pressure_left + pressure_right); n * n];
    let stats = solve(&op.matrix, &op.rhs, &mut p, SolverOptions::with_tol(tol))?;
    let velocity = op.flux_field(&p);
    let mut max_divergence: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            max_divergence = max_divergence.max(velocity.divergence(i, j).abs());
        }
    }
    Ok(DarcySolution {
        pressure: p,
        velocity,
        max_divergence,
        iterations: stats.iterations,
    })
}

/// Upscaled state on the macro grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl MacroState {
    pub fn initial(cfg: &MacroConfig) -> Self {
        let n = cfg.n;
        let h = cfg.h();
        let centre = |c: usize| [((c % n) as f64 + 0.5) * h, ((c / n) as f64 + 0.5) * h];
        let u: Vec<f64> = (0..n * n).map(|c| cfg.u_init.eval(centre(c))).collect();
        let v: Vec<f64> = (0..n * n).map(|c| cfg.v_init.eval(centre(c))).collect();
        Self::from_fields(cfg, 0.0, u, v).expect("sizes match")
    }

    pub fn from_fields(cfg: &MacroConfig, t: f64, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let cells = cfg.n * cfg.n;
        if u.len() != cells || v.len() != cells {
            return Err(Error::State(format!(
                "field sizes ({}, {}) do not match the {}x{} macro grid",
                u.len(),
                v.len(),
                cfg.n,
                cfg.n
            )));
        }
        let w = u
            .iter()
            .zip(&v)
            .map(|(&u, &v)| cfg.resolution.rate(&cfg.law, u, v))
            .collect();
        Ok(Self { t, u, v, w })
    }
}

/// Time stepper owning the state of one macro run.
pub struct MacroSolver {
    cfg: MacroConfig,
    diffusion: TensorOperator,
    matrix: CsrMatrix,
    owner: Vec<usize>,
    dof_of: Vec<Option<usize>>,
    velocity: FaceVelocity,
    darcy: Option<DarcySolution>,
    state: MacroState,
    bound: f64,
    initial_total: f64,
    outflow: f64,
    steps_taken: usize,
    n_steps: usize,
}

impl MacroSolver {
    pub fn new(cfg: MacroConfig, initial: MacroState) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n;
        let h = cfg.h();
        let n_steps = step_count(cfg.dt, cfg.t_final)?;
        if initial.u.len() != n * n || initial.v.len() != n * n {
            return Err(Error::State("initial state does not match the macro grid".into()));
        }
        let darcy = match cfg.velocity {
            MacroVelocity::Zero => None,
            MacroVelocity::Darcy {
                pressure_left,
                pressure_right,
            } => Some(darcy_solve(&cfg.k, n, pressure_left, pressure_right, cfg.darcy_tol)?),
        };
        let velocity = darcy
            .as_ref()
            .map_or_else(|| FaceVelocity::zeros(n, h), |d| d.velocity.clone());
        let dof_of: Vec<Option<usize>> = (0..n * n).map(Some).collect();
        let courant = velocity.outflow_courant(cfg.dt, &dof_of);
        if courant > 1.0 + 1e-12 {
            return Err(Error::Parameter(format!(
                "per-cell outflow Courant number {courant:.4} exceeds 1; reduce dt"
            )));
        }
        if initial.u.iter().chain(&initial.v).any(|x| !(*x >= 0.0)) {
            return Err(Error::State("initial data must be nonnegative".into()));
        }
        let diffusion = TensorOperator::new(n, cfg.s, edge_values(cfg.dirichlet, 0.0));
        let mut t = TripletBuilder::new(n * n);
        for a in 0..n * n {
            t.add(a, a, h * h);
            for (c, w) in diffusion.matrix.row(a) {
                t.add(a, c, cfg.dt * w);
            }
        }
        let m0 = initial.u.iter().chain(&initial.v).fold(0.0f64, |m, x| m.max(*x));
        let gamma = cfg.storage_factor();
        let initial_total: f64 = initial
            .u
            .iter()
            .zip(&initial.v)
            .map(|(u, v)| (u + gamma * v) * h * h)
            .sum();
        Ok(Self {
            bound: box_bound(&cfg.law, m0, cfg.t_final),
            matrix: t.build(),
            owner: (0..n * n).collect(),
            dof_of,
            velocity,
            darcy,
            diffusion,
            state: initial,
            initial_total,
            outflow: 0.0,
            steps_taken: 0,
            n_steps,
            cfg,
        })
    }

    pub fn state(&self) -> &MacroState {
        &self.state
    }

    pub fn darcy(&self) -> Option<&DarcySolution> {
        self.darcy.as_ref()
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn is_finished(&self) -> bool {
        self.steps_taken >= self.n_steps
    }

    pub fn record(&self, previous: Option<&MacroState>, newton_iterations: usize) -> MassRecord {
        let s = &self.state;
        let h2 = self.cfg.h() * self.cfg.h();
        let gamma = self.cfg.storage_factor();
        let mass_u = s.u.iter().sum::<f64>() * h2;
        let mass_v = gamma * s.v.iter().sum::<f64>() * h2;
        let fold = |x: &[f64]| {
            x.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
        };
        let (min_u, max_u) = fold(&s.u);
        let (min_v, max_v) = fold(&s.v);
        let l1 = |a: &MacroState, b: Option<&MacroState>| {
            let get = |x: &[f64], i: usize| b.map_or(0.0, |_| x[i]);
            let bu = b.map_or(&[][..], |b| &b.u[..]);
            let bv = b.map_or(&[][..], |b| &b.v[..]);
            (0..a.u.len())
                .map(|i| ((a.u[i] - get(bu, i)).abs() + gamma * (a.v[i] - get(bv, i)).abs()) * h2)
                .sum::<f64>()
        };
        MassRecord {
            t: s.t,
            mass_u,
            mass_v,
            mass_total: mass_u + mass_v,
            boundary_outflow: self.outflow,
            drift: mass_u + mass_v + self.outflow - self.initial_total,
            min_u,
            max_u,
            min_v,
            max_v,
            l1_norm: l1(s, None),
            l1_change: previous.map_or(0.0, |p| l1(s, Some(p))),
            newton_iterations,
        }
    }

    pub fn step(&mut self) -> Result<MassRecord> {
        let dt = self.cfg.dt;
        let h2 = self.cfg.h() * self.cfg.h();
        let (u_adv, adv_out) = upwind_advect(&self.velocity, &self.dof_of, &self.state.u, dt);
        let rhs: Vec<f64> = u_adv.iter().map(|x| x * h2).collect();
        let system = ReactionSystem {
            matrix: &self.matrix,
            symmetric: self.diffusion.is_symmetric(),
            rhs: &rhs,
            owner: &self.owner,
            v: &self.state.v,
            weight: self.cfg.storage_factor() * h2,
            law: &self.cfg.law,
            resolution: self.cfg.resolution,
            dt,
        };
        let mut u = u_adv.clone();
        let stats = system.solve(&mut u, self.cfg.newton)?;
        let v = system.surface_update(&u)?;
        self.outflow += adv_out + dt * self.diffusion.boundary_outflow(&u);
        let t = (self.steps_taken + 1) as f64 * dt;
        let next = MacroState::from_fields(&self.cfg, t, u, v)?;
        self.check_invariants(&next)?;
        let previous = std::mem::replace(&mut self.state, next);
        self.steps_taken += 1;
        Ok(self.record(Some(&previous), stats.iterations))
    }

    fn check_invariants(&self, s: &MacroState) -> Result<()> {
        let slack = self.cfg.invariant_slack;
        let fail = |message: String| Err(Error::Invariant { t: s.t, message });
        for (c, &u) in s.u.iter().enumerate() {
            if !(u >= -slack && u <= self.bound + slack) {
                return fail(format!("u = {u:.6e} in macro cell {c} outside [0, {:.6e}]", self.bound));
            }
        }
        for (c, (&v, &w)) in s.v.iter().zip(&s.w).enumerate() {
            if !(v >= 0.0) || v > self.bound + slack {
                return fail(format!("v = {v:.6e} in macro cell {c} outside [0, {:.6e}]", self.bound));
            }
            if !(0.0..=1.0).contains(&w) {
                return fail(format!("w = {w} in macro cell {c} outside [0, 1]"));
            }
            if self.cfg.resolution == Resolution::Exact && w != dissolution_rate(&self.cfg.law, s.u[c], v) {
                return fail(format!("w = {w} in macro cell {c} differs from the selection"));
            }
        }
        Ok(())
    }
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct MacroRun {
    pub trajectory: Vec<MacroState>,
    pub mass: Vec<MassRecord>,
    pub darcy: Option<DarcySolution>,
    pub bound: f64,
}

pub fn run(cfg: &MacroConfig) -> Result<MacroRun> {
    run_from(cfg, MacroState::initial(cfg))
}

pub fn run_from(cfg: &MacroConfig, initial: MacroState) -> Result<MacroRun> {
    let mut solver = MacroSolver::new(cfg.clone(), initial)?;
    let mut trajectory = vec![solver.state().clone()];
    let mut mass = vec![solver.record(None, 0)];
    while !solver.is_finished() {
        mass.push(solver.step()?);
        if solver.steps_taken() % cfg.output_every == 0 || solver.is_finished() {
            trajectory.push(solver.state().clone());
        }
    }
    Ok(MacroRun {
        trajectory,
        mass,
        darcy: solver.darcy.take(),
        bound: solver.bound,
    })
}

/// L² norms of the differences of two runs at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapSample {
    pub t: f64,
    pub u_l2: f64,
    pub v_l2: f64,
}

/// ‖U(t)‖ and ‖V(t)‖ for two trajectories that differ only in their initial data.
pub fn stability_gap(a: &[MacroState], b: &[MacroState], n: usize) -> Result<Vec<GapSample>> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "trajectories have {} and {} states",
            a.len(),
            b.len()
        )));
    }
    let h2 = 1.0 / (n * n) as f64;
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if (x.t - y.t).abs() > 1e-12 * x.t.abs().max(1.0) || x.u.len() != n * n || y.u.len() != n * n
            {
                return Err(Error::Config("trajectories are on different grids".into()));
            }
            let l2 = |p: &[f64], q: &[f64]| {
                (p.iter().zip(q).map(|(p, q)| (p - q).powi(2)).sum::<f64>() * h2).sqrt()
            };
            Ok(GapSample {
                t: x.t,
                u_l2: l2(&x.u, &y.u),
                v_l2: l2(&x.v, &y.v),
            })
        })
        .collect()
}

/// Exponential envelope g(t) ≤ g(0) e^{λt}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthFit {
    pub c: f64,
    pub lambda: f64,
}

/// Smallest λ with g(t) ≤ g(0) e^{λt} at every sample with t > 0.
pub fn fit_growth(samples: &[(f64, f64)]) -> Result<GrowthFit> {
    let (t0, g0) = *samples
        .first()
        .ok_or_else(|| Error::Parameter("no samples to fit".into()))?;
    if !(g0 > 0.0) {
        return Err(Error::Parameter("initial gap is zero; growth rate undefined".into()));
    }
    let mut lambda = f64::NEG_INFINITY;
    for &(t, g) in &samples[1..] {
        let dt = t - t0;
        if dt > 0.0 {
            let ratio = if g > 0.0 { (g / g0).ln() } else { f64::NEG_INFINITY };
            lambda = lambda.max(ratio / dt);
        }
    }
    if !lambda.is_finite() {
        return Err(Error::Parameter("growth rate is not finite".into()));
    }
    Ok(GrowthFit { c: g0, lambda })
}
