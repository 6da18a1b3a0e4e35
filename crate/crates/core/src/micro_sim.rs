//! Pore-scale solver on the perforated grid.
//!
//! Each step is split into
//!
//! 1. explicit upwind advection of u with the face velocity,
//! 2. an implicit solve for u in which diffusion (zero Dirichlet on Γ_D, no flux
//!    on Γ_N) and the grain flux `-D ∂_ν u = ε ∂_t v` are coupled through the
//!    event-exact surface step, so that v_new = max(0, v + k dt (r(u_new) − 1)),
//! 3. the surface update of v and the selection of w.
//!
//! Step 2 is a monotone nonlinear system solved with semismooth Newton. The
//! discrete total mass Σ u h² + ε Σ v h changes only through ∂Ω.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cell_problems::StokesCellSolution;
use crate::error::{Error, Result};
use crate::geometry::{Normal, PerforatedGrid};
use crate::kinetics::{dissolution_rate, RateLaw, Resolution};
use crate::linalg::{CsrMatrix, TripletBuilder};
pub use crate::transport::{FaceVelocity, NewtonOptions, NewtonStats};
use crate::transport::{upwind_advect, ReactionSystem};

/// Spatial profile of initial data, evaluated at cell or face centres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialProfile {
    Constant(f64),
    /// base + amp · sin(πx₁) sin(πx₂)
    Bump { base: f64, amp: f64 },
    /// left + (right − left) · x₁
    LinearX { left: f64, right: f64 },
}

impl InitialProfile {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        use std::f64::consts::PI;
        match *self {
            InitialProfile::Constant(c) => c,
            InitialProfile::Bump { base, amp } => {
                base + amp * (PI * x[0]).sin() * (PI * x[1]).sin()
            }
            InitialProfile::LinearX { left, right } => left + (right - left) * x[0],
        }
    }

    /// (min, max) over the closed unit square.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            InitialProfile::Constant(c) => (c, c),
            InitialProfile::Bump { base, amp } => (base.min(base + amp), base.max(base + amp)),
            InitialProfile::LinearX { left, right } => (left.min(right), left.max(right)),
        }
    }

    pub fn is_constant(&self) -> bool {
        match *self {
            InitialProfile::Constant(_) => true,
            InitialProfile::Bump { amp, .. } => amp == 0.0,
            InitialProfile::LinearX { left, right } => left == right,
        }
    }
}

impl fmt::Display for InitialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            InitialProfile::Constant(c) => write!(f, "const:{c}"),
            InitialProfile::Bump { base, amp } => write!(f, "bump:{base},{amp}"),
            InitialProfile::LinearX { left, right } => write!(f, "linear_x:{left},{right}"),
        }
    }
}

impl FromStr for InitialProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "bad initial profile '{s}' (expected const:c, bump:base,amp or linear_x:left,right)"
            ))
        };
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        if nums.iter().any(|x| !x.is_finite()) {
            return Err(bad());
        }
        match (kind.trim(), nums.as_slice()) {
            ("const", [c]) => Ok(InitialProfile::Constant(*c)),
            ("bump", [base, amp]) => Ok(InitialProfile::Bump {
                base: *base,
                amp: *amp,
            }),
            ("linear_x", [left, right]) => Ok(InitialProfile::LinearX {
                left: *left,
                right: *right,
            }),
            _ => Err(bad()),
        }
    }
}

impl Serialize for InitialProfile {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for InitialProfile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Source of the micro-scale velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocityMode {
    Zero,
    /// q^ε(x) = Σ_j χ^j(x/ε) (−G_j) from the Stokes cell solutions.
    Reconstructed { pressure_gradient: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroConfig {
    pub diffusivity: f64,
    pub law: RateLaw,
    pub resolution: Resolution,
    pub velocity: VelocityMode,
    pub dt: f64,
    pub t_final: f64,
    pub u_init: InitialProfile,
    pub v_init: InitialProfile,
    /// Declared bound M_q on ‖q^ε‖_∞, used for the advective CFL check.
    pub max_velocity: f64,
    /// Keep every `output_every`-th state in the trajectory.
    pub output_every: usize,
    pub newton: NewtonOptions,
    /// Slack on the box-bound check.
    pub invariant_slack: f64,
}

impl Default for MicroConfig {
    fn default() -> Self {
        Self {
            diffusivity: 1.0,
            law: RateLaw::default(),
            resolution: Resolution::Exact,
            velocity: VelocityMode::Zero,
            dt: 1e-3,
            t_final: 0.1,
            u_init: InitialProfile::Constant(0.0),
            v_init: InitialProfile::Constant(0.5),
            max_velocity: 0.0,
            output_every: 10,
            newton: NewtonOptions::default(),
            invariant_slack: 1e-10,
        }
    }
}

/// Number of steps of length `dt` covering `[0, t_final]`.
pub fn step_count(dt: f64, t_final: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("dt must be > 0, got {dt}")));
    }
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::Parameter(format!("t_final must be >= 0, got {t_final}")));
    }
    let n = (t_final / dt).round();
    if (n * dt - t_final).abs() > 1e-9 * t_final.max(dt) {
        return Err(Error::Parameter(format!(
            "t_final = {t_final} is not a multiple of dt = {dt}"
        )));
    }
    Ok(n as usize)
}

/// M₀ from the initial data and the a-priori bound M on [0, T].
///
/// u stays below max(M₀, u^*); v can only grow where r(u) > 1, by at most
/// k T (r(max(M₀, u^*)) − 1).
pub fn box_bound(law: &RateLaw, m0: f64, t_final: f64) -> f64 {
    let mu = m0.max(law.solubility);
    let mv = m0 + law.k * t_final * (law.rate(mu) - 1.0).max(0.0);
    mu.max(mv)
}

impl MicroConfig {
    /// Checks every constraint that does not need the velocity field itself.
    pub fn validate(&self, grid: &PerforatedGrid) -> Result<()> {
        self.law.validate()?;
        self.resolution.validate()?;
        if !(self.diffusivity > 0.0 && self.diffusivity.is_finite()) {
            return Err(Error::Parameter(format!(
                "diffusivity must be > 0, got {}",
                self.diffusivity
            )));
        }
        step_count(self.dt, self.t_final)?;
        if self.output_every == 0 {
            return Err(Error::Parameter("output_every must be >= 1".into()));
        }
        for (name, p) in [("u_init", self.u_init), ("v_init", self.v_init)] {
            let (lo, _) = p.range();
            if lo < 0.0 {
                return Err(Error::Parameter(format!(
                    "{name} = {p} takes negative values; initial data must lie in [0, M0]"
                )));
            }
        }
        if !(self.max_velocity >= 0.0) {
            return Err(Error::Parameter("max_velocity must be >= 0".into()));
        }
        let cfl = self.dt * self.max_velocity / grid.h();
        if cfl > 1.0 {
            return Err(Error::Parameter(format!(
                "advective CFL violated: dt*M_q/h = {cfl:.4} > 1"
            )));
        }
        let m = box_bound(&self.law, self.initial_bound(), self.t_final);
        let kin = self.dt * self.law.k * self.law.lipschitz_on(m);
        if kin > 1.0 {
            return Err(Error::Parameter(format!(
                "kinetic step bound violated: dt*k*L_r = {kin:.4} > 1"
            )));
        }
        Ok(())
    }

    /// M₀ = max of the initial data.
    pub fn initial_bound(&self) -> f64 {
        self.u_init.range().1.max(self.v_init.range().1)
    }
}

/// Micro velocity from the two Stokes cell solutions and a macroscopic pressure gradient G.
///
/// Every face of the global grid is the periodic copy of a unit-cell face; faces
/// touching a grain inherit the no-slip zero.
pub fn reconstruct_velocity(
    grid: &PerforatedGrid,
    stokes: &[StokesCellSolution; 2],
    pressure_gradient: [f64; 2],
) -> Result<FaceVelocity> {
    let n = grid.unit_cell().n();
    if stokes.iter().any(|s| s.n() != n) || stokes[0].direction != 0 || stokes[1].direction != 1
    {
        return Err(Error::Config(
            "Stokes cell solutions do not match the grid's unit cell".into(),
        ));
    }
    let nx = grid.nx();
    let mut vel = FaceVelocity::zeros(nx, grid.h());
    let g = [-pressure_gradient[0], -pressure_gradient[1]];
    for j in 0..nx {
        for i in 0..=nx {
            let (li, lj) = (i % n, j % n);
            let q = g[0] * stokes[0].x_velocity(li, lj) + g[1] * stokes[1].x_velocity(li, lj);
            vel.set_x_face(i, j, q);
        }
    }
    for j in 0..=nx {
        for i in 0..nx {
            let (li, lj) = (i % n, j % n);
            let q = g[0] * stokes[0].y_velocity(li, lj) + g[1] * stokes[1].y_velocity(li, lj);
            vel.set_y_face(i, j, q);
        }
    }
    Ok(vel)
}

/// State of the pore-scale model at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroState {
    pub t: f64,
    /// Per fluid cell (grid dof order).
    pub u: Vec<f64>,
    /// Per grain face (grid face order).
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl MicroState {
    /// Samples the initial profiles: u at cell centres, v at face centres.
    pub fn initial(cfg: &MicroConfig, grid: &PerforatedGrid) -> Self {
        let u = (0..grid.n_fluid())
            .map(|d| {
                let (i, j) = grid.fluid_ij(d);
                cfg.u_init.eval(grid.cell_center(i, j))
            })
            .collect();
        let v = grid
            .boundary_faces()
            .iter()
            .map(|f| cfg.v_init.eval(grid.face_center(f)))
            .collect();
        Self::from_fields(grid, &cfg.law, cfg.resolution, 0.0, u, v)
            .expect("profiles sampled on the grid have matching sizes")
    }

    /// Builds a state from arbitrary fields; w is the resolver's selection.
    pub fn from_fields(
        grid: &PerforatedGrid,
        law: &RateLaw,
        resolution: Resolution,
        t: f64,
        u: Vec<f64>,
        v: Vec<f64>,
    ) -> Result<Self> {
        if u.len() != grid.n_fluid() || v.len() != grid.boundary_faces().len() {
            return Err(Error::State(format!(
                "field sizes ({}, {}) do not match the grid ({}, {})",
                u.len(),
                v.len(),
                grid.n_fluid(),
                grid.boundary_faces().len()
            )));
        }
        let w = grid
            .boundary_faces()
            .iter()
            .zip(&v)
            .map(|(f, &vg)| resolution.rate(law, u[f.owner], vg))
            .collect();
        Ok(Self { t, u, v, w })
    }

    /// Σ u h²
    pub fn mass_u(&self, grid: &PerforatedGrid) -> f64 {
        let h = grid.h();
        self.u.iter().sum::<f64>() * h * h
    }

    /// ε Σ v h
    pub fn mass_v(&self, grid: &PerforatedGrid) -> f64 {
        grid.eps() * self.v.iter().sum::<f64>() * grid.h()
    }
}

/// Per-step bookkeeping of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassRecord {
    pub t: f64,
    pub mass_u: f64,
    pub mass_v: f64,
    pub mass_total: f64,
    /// Cumulative mass that left through ∂Ω (diffusive plus advective).
    pub boundary_outflow: f64,
    /// mass_total + boundary_outflow − initial total.
    pub drift: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub min_v: f64,
    pub max_v: f64,
    /// Σ|u|h² + εΣ|v|h.
    pub l1_norm: f64,
    /// l1 distance to the previous step.
    pub l1_change: f64,
    pub newton_iterations: usize,
}

/// Mismatch of the initial data against the grain-face compatibility condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompatibilityReport {
    /// max over grain faces of |−D ν·∇u_I − ε (r(u_I) − w_I)|.
    pub max_mismatch: f64,
    pub satisfied: bool,
}

/// Checks `−D ν·∇u_I = ε (r(u_I) − w_I)` on Γ_G^ε and warns when it fails.
pub fn check_compatibility(cfg: &MicroConfig, grid: &PerforatedGrid) -> CompatibilityReport {
    let h = grid.h();
    let mut worst: f64 = 0.0;
    for f in grid.boundary_faces() {
        let x = grid.face_center(f);
        let nu = f.normal.vector();
        let plus = [x[0] + 0.5 * h * nu[0], x[1] + 0.5 * h * nu[1]];
        let minus = [x[0] - 0.5 * h * nu[0], x[1] - 0.5 * h * nu[1]];
        let dnu = (cfg.u_init.eval(plus) - cfg.u_init.eval(minus)) / h;
        let u = cfg.u_init.eval(x);
        let v = cfg.v_init.eval(x);
        let w = cfg.resolution.rate(&cfg.law, u, v);
        let lhs = -cfg.diffusivity * dnu;
        let rhs = grid.eps() * (cfg.law.rate(u) - w);
        worst = worst.max((lhs - rhs).abs());
    }
    let satisfied = worst <= 1e-8;
    if !satisfied {
        warn!("initial data violate the grain-face compatibility condition (max mismatch {worst:.3e})");
    }
    CompatibilityReport {
        max_mismatch: worst,
        satisfied,
    }
}

/// Fluid dof of every cell of the grid (None for solid cells).
fn dof_table(grid: &PerforatedGrid) -> Vec<Option<usize>> {
    let nx = grid.nx();
    (0..nx * nx).map(|c| grid.dof(c % nx, c / nx)).collect()
}

/// h² I + dt D L with L the fluid-cell graph Laplacian, Dirichlet faces weighted 2.
fn assemble_operator(grid: &PerforatedGrid, diffusivity: f64, dt: f64) -> CsrMatrix {
    let nx = grid.nx();
    let h = grid.h();
    let c = dt * diffusivity;
    let dirichlet = grid.dirichlet();
    let mut t = TripletBuilder::new(grid.n_fluid());
    for a in 0..grid.n_fluid() {
        let (i, j) = grid.fluid_ij(a);
        t.add(a, a, h * h);
        for dir in Normal::DIRECTIONS {
            match neighbour(nx, i, j, dir) {
                Some((ii, jj)) => {
                    if let Some(b) = grid.dof(ii, jj) {
                        t.add(a, a, c);
                        t.add(a, b, -c);
                    }
                }
                None => {
                    if dirichlet.contains(dir) {
                        t.add(a, a, 2.0 * c);
                    }
                }
            }
        }
    }
    t.build()
}

fn neighbour(nx: usize, i: usize, j: usize, dir: Normal) -> Option<(usize, usize)> {
    let (ii, jj) = (i as isize, j as isize);
    let (ii, jj) = match (dir.axis, dir.sign) {
        (0, s) => (ii + s as isize, jj),
        (_, s) => (ii, jj + s as isize),
    };
    let n = nx as isize;
    (ii >= 0 && jj >= 0 && ii < n && jj < n).then(|| (ii as usize, jj as usize))
}

/// Number of Dirichlet outer faces of each fluid dof.
fn dirichlet_face_counts(grid: &PerforatedGrid) -> Vec<(usize, f64)> {
    let d = grid.dirichlet();
    (0..grid.n_fluid())
        .filter_map(|a| {
            let (i, j) = grid.fluid_ij(a);
            let count = grid.outer_edges(i, j).filter(|e| d.contains(*e)).count();
            (count > 0).then_some((a, count as f64))
        })
        .collect()
}

/// Σ_fluid |u_a − u_b| h² + ε Σ_faces |v_a − v_b| h.
pub fn l1_distance(a: &MicroState, b: &MicroState, grid: &PerforatedGrid) -> Result<f64> {
    if a.u.len() != grid.n_fluid()
        || b.u.len() != grid.n_fluid()
        || a.v.len() != grid.boundary_faces().len()
        || b.v.len() != grid.boundary_faces().len()
    {
        return Err(Error::State("states do not belong to this grid".into()));
    }
    let h = grid.h();
    let du: f64 = a.u.iter().zip(&b.u).map(|(x, y)| (x - y).abs()).sum();
    let dv: f64 = a.v.iter().zip(&b.v).map(|(x, y)| (x - y).abs()).sum();
    Ok(du * h * h + grid.eps() * dv * h)
}

fn l1_norm(s: &MicroState, grid: &PerforatedGrid) -> f64 {
    let h = grid.h();
    s.u.iter().map(|x| x.abs()).sum::<f64>() * h * h
        + grid.eps() * s.v.iter().map(|x| x.abs()).sum::<f64>() * h
}

/// `(t, ∫|Δ_h u| + ε∫|Δ_h v|)` at every stored time, with the trajectory
/// extended to negative times by its first state.
pub fn difference_quotient_norm(
    traj: &[MicroState],
    grid: &PerforatedGrid,
    h_lag: f64,
) -> Result<Vec<(f64, f64)>> {
    let lag = lag_in_outputs(traj.iter().map(|s| s.t), h_lag)?;
    traj.iter()
        .enumerate()
        .map(|(i, s)| {
            let back = &traj[i.saturating_sub(lag)];
            Ok((s.t, l1_distance(s, back, grid)? / h_lag))
        })
        .collect()
}

/// Checks that the stored times are uniform and `h_lag` is a multiple of their spacing.
pub(crate) fn lag_in_outputs(times: impl Iterator<Item = f64>, h_lag: f64) -> Result<usize> {
    let times: Vec<f64> = times.collect();
    if times.len() < 2 {
        return Err(Error::Parameter(
            "difference quotient needs at least two stored states".into(),
        ));
    }
    let spacing = times[1] - times[0];
    for w in times.windows(2) {
        if ((w[1] - w[0]) - spacing).abs() > 1e-9 * spacing {
            return Err(Error::Parameter("stored times are not uniformly spaced".into()));
        }
    }
    let m = (h_lag / spacing).round();
    if !(h_lag > 0.0) || m < 1.0 || (m * spacing - h_lag).abs() > 1e-9 * h_lag {
        return Err(Error::Parameter(format!(
            "lag {h_lag} is not a positive multiple of the output spacing {spacing}"
        )));
    }
    Ok(m as usize)
}

/// Time stepper owning the state of one run.
pub struct MicroSolver<'g> {
    cfg: MicroConfig,
    grid: &'g PerforatedGrid,
    dof_of: Vec<Option<usize>>,
    matrix: CsrMatrix,
    owner: Vec<usize>,
    dirichlet_faces: Vec<(usize, f64)>,
    velocity: FaceVelocity,
    state: MicroState,
    bound: f64,
    initial_total: f64,
    outflow: f64,
    steps_taken: usize,
    n_steps: usize,
}

impl<'g> MicroSolver<'g> {
    /// Prepares a run from `initial`; `velocity` defaults to zero.
    pub fn new(
        cfg: MicroConfig,
        grid: &'g PerforatedGrid,
        velocity: Option<FaceVelocity>,
        initial: MicroState,
    ) -> Result<Self> {
        cfg.validate(grid)?;
        let n_steps = step_count(cfg.dt, cfg.t_final)?;
        if initial.u.len() != grid.n_fluid() || initial.v.len() != grid.boundary_faces().len() {
            return Err(Error::State("initial state does not match the grid".into()));
        }
        let dof_of = dof_table(grid);
        let velocity = velocity.unwrap_or_else(|| FaceVelocity::zeros(grid.nx(), grid.h()));
        if velocity.nx() != grid.nx() {
            return Err(Error::Config("velocity field does not match the grid".into()));
        }
        let qmax = velocity.max_abs();
        if qmax > cfg.max_velocity * (1.0 + 1e-12) {
            warn!(
                "velocity sup-norm {qmax:.4e} exceeds the declared bound M_q = {:.4e}",
                cfg.max_velocity
            );
        }
        let courant = velocity.outflow_courant(cfg.dt, &dof_of);
        if courant > 1.0 + 1e-12 {
            return Err(Error::Parameter(format!(
                "per-cell outflow Courant number {courant:.4} exceeds 1; reduce dt"
            )));
        }
        let u_min = initial.u.iter().chain(&initial.v).fold(f64::INFINITY, |m, x| m.min(*x));
        if u_min < 0.0 {
            return Err(Error::State(format!("initial data take the negative value {u_min}")));
        }
        let m0 = initial.u.iter().chain(&initial.v).fold(0.0f64, |m, x| m.max(*x));
        let bound = box_bound(&cfg.law, m0, cfg.t_final);
        let matrix = assemble_operator(grid, cfg.diffusivity, cfg.dt);
        let owner = grid.boundary_faces().iter().map(|f| f.owner).collect();
        let initial_total = initial.mass_u(grid) + initial.mass_v(grid);
        Ok(Self {
            dirichlet_faces: dirichlet_face_counts(grid),
            cfg,
            grid,
            dof_of,
            matrix,
            owner,
            velocity,
            state: initial,
            bound,
            initial_total,
            outflow: 0.0,
            steps_taken: 0,
            n_steps,
        })
    }

    pub fn state(&self) -> &MicroState {
        &self.state
    }

    pub fn config(&self) -> &MicroConfig {
        &self.cfg
    }

    pub fn velocity(&self) -> &FaceVelocity {
        &self.velocity
    }

    /// The a-priori bound M checked after every step.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn is_finished(&self) -> bool {
        self.steps_taken >= self.n_steps
    }

    /// Record of the current state without advancing.
    pub fn record(&self, previous: Option<&MicroState>, newton_iterations: usize) -> MassRecord {
        let s = &self.state;
        let mass_u = s.mass_u(self.grid);
        let mass_v = s.mass_v(self.grid);
        let fold = |x: &[f64]| {
            x.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
        };
        let (min_u, max_u) = fold(&s.u);
        let (min_v, max_v) = if s.v.is_empty() { (0.0, 0.0) } else { fold(&s.v) };
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
            l1_norm: l1_norm(s, self.grid),
            l1_change: previous.map_or(0.0, |p| {
                l1_distance(s, p, self.grid).expect("states share the grid")
            }),
            newton_iterations,
        }
    }

    /// Advances one step and returns its record.
    pub fn step(&mut self) -> Result<MassRecord> {
        let dt = self.cfg.dt;
        let h = self.grid.h();
        let (u_adv, adv_out) = upwind_advect(&self.velocity, &self.dof_of, &self.state.u, dt);
        let rhs: Vec<f64> = u_adv.iter().map(|x| x * h * h).collect();
        let system = ReactionSystem {
            matrix: &self.matrix,
            symmetric: true,
            rhs: &rhs,
            owner: &self.owner,
            v: &self.state.v,
            weight: self.grid.eps() * h,
            law: &self.cfg.law,
            resolution: self.cfg.resolution,
            dt,
        };
        let mut u = u_adv.clone();
        let stats = system.solve(&mut u, self.cfg.newton)?;
        let v = system.surface_update(&u)?;
        let diff_out: f64 = self
            .dirichlet_faces
            .iter()
            .map(|&(a, count)| 2.0 * self.cfg.diffusivity * count * u[a] * dt)
            .sum();
        self.outflow += adv_out + diff_out;
        let t = (self.steps_taken + 1) as f64 * dt;
        let next = MicroState::from_fields(self.grid, &self.cfg.law, self.cfg.resolution, t, u, v)?;
        self.check_invariants(&next)?;
        let previous = std::mem::replace(&mut self.state, next);
        self.steps_taken += 1;
        Ok(self.record(Some(&previous), stats.iterations))
    }

    fn check_invariants(&self, s: &MicroState) -> Result<()> {
        let slack = self.cfg.invariant_slack;
        let fail = |message: String| Err(Error::Invariant { t: s.t, message });
        for (a, &u) in s.u.iter().enumerate() {
            if !(u >= -slack && u <= self.bound + slack) {
                let (i, j) = self.grid.fluid_ij(a);
                return fail(format!(
                    "u = {u:.6e} at cell ({i}, {j}) outside [0, {:.6e}]",
                    self.bound
                ));
            }
        }
        for (g, (&v, &w)) in s.v.iter().zip(&s.w).enumerate() {
            if !(v >= 0.0) || v > self.bound + slack {
                return fail(format!("v = {v:.6e} on grain face {g} outside [0, {:.6e}]", self.bound));
            }
            if !(0.0..=1.0).contains(&w) {
                return fail(format!("w = {w} on grain face {g} outside [0, 1]"));
            }
            if self.cfg.resolution == Resolution::Exact {
                let expect = dissolution_rate(&self.cfg.law, s.u[self.owner[g]], v);
                if w != expect {
                    return fail(format!("w = {w} on grain face {g} differs from the selection {expect}"));
                }
            }
        }
        Ok(())
    }
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct MicroRun {
    /// States at t = 0 and every `output_every` steps (the final state is always kept).
    pub trajectory: Vec<MicroState>,
    /// One record per step, starting with the initial state.
    pub mass: Vec<MassRecord>,
    pub bound: f64,
    pub compatibility: CompatibilityReport,
}

/// Velocity for the configured mode.
pub fn velocity_for(
    cfg: &MicroConfig,
    grid: &PerforatedGrid,
    stokes: Option<&[StokesCellSolution; 2]>,
) -> Result<FaceVelocity> {
    match cfg.velocity {
        VelocityMode::Zero => Ok(FaceVelocity::zeros(grid.nx(), grid.h())),
        VelocityMode::Reconstructed { pressure_gradient } => {
            let stokes = stokes.ok_or_else(|| {
                Error::Config("reconstructed velocity needs the Stokes cell solutions".into())
            })?;
            reconstruct_velocity(grid, stokes, pressure_gradient)
        }
    }
}

/// Runs from the configured initial profiles.
pub fn run(
    cfg: &MicroConfig,
    grid: &PerforatedGrid,
    stokes: Option<&[StokesCellSolution; 2]>,
) -> Result<MicroRun> {
    let initial = MicroState::initial(cfg, grid);
    run_from(cfg, grid, stokes, initial)
}

/// Runs from an explicit initial state.
pub fn run_from(
    cfg: &MicroConfig,
    grid: &PerforatedGrid,
    stokes: Option<&[StokesCellSolution; 2]>,
    initial: MicroState,
) -> Result<MicroRun> {
    let compatibility = check_compatibility(cfg, grid);
    let velocity = velocity_for(cfg, grid, stokes)?;
    let mut solver = MicroSolver::new(cfg.clone(), grid, Some(velocity), initial)?;
    let mut trajectory = vec![solver.state().clone()];
    let mut mass = vec![solver.record(None, 0)];
    while !solver.is_finished() {
        mass.push(solver.step()?);
        if solver.steps_taken() % cfg.output_every == 0 || solver.is_finished() {
            trajectory.push(solver.state().clone());
        }
    }
    Ok(MicroRun {
        trajectory,
        mass,
        bound: solver.bound(),
        compatibility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_unit_cell, EdgeSet};

    fn grid(eps: f64, dirichlet: EdgeSet) -> PerforatedGrid {
        let cell = build_unit_cell(0.5, [0.5, 0.5], 4).unwrap();
        PerforatedGrid::new(cell, eps, dirichlet).unwrap()
    }

    #[test]
    fn profile_round_trip() {
        for s in ["const:0.5", "bump:0.1,0.2", "linear_x:0,1"] {
            let p: InitialProfile = s.parse().unwrap();
            assert_eq!(p.to_string().parse::<InitialProfile>().unwrap(), p);
        }
        assert!("const:".parse::<InitialProfile>().is_err());
        assert!("wave:1".parse::<InitialProfile>().is_err());
    }

    #[test]
    fn zero_data_stay_zero() {
        let g = grid(0.5, EdgeSet::LEFT);
        let cfg = MicroConfig {
            v_init: InitialProfile::Constant(0.0),
            t_final: 0.02,
            dt: 0.01,
            ..Default::default()
        };
        let run = run(&cfg, &g, None).unwrap();
        let last = run.trajectory.last().unwrap();
        assert!(last.u.iter().chain(&last.v).chain(&last.w).all(|x| *x == 0.0));
    }

    #[test]
    fn equilibrium_is_fixed_in_a_closed_box() {
        let g = grid(0.5, EdgeSet::NONE);
        let cfg = MicroConfig {
            u_init: InitialProfile::Constant(1.0),
            v_init: InitialProfile::Constant(0.3),
            t_final: 0.05,
            dt: 0.01,
            ..Default::default()
        };
        let run = run(&cfg, &g, None).unwrap();
        let last = run.trajectory.last().unwrap();
        assert!(last.u.iter().all(|x| (x - 1.0).abs() < 1e-13));
        assert!(last.v.iter().all(|x| (x - 0.3).abs() < 1e-13));
    }

    #[test]
    fn t_final_zero_gives_initial_state() {
        let g = grid(0.5, EdgeSet::LEFT);
        let cfg = MicroConfig {
            t_final: 0.0,
            ..Default::default()
        };
        let run = run(&cfg, &g, None).unwrap();
        assert_eq!(run.trajectory.len(), 1);
        assert_eq!(run.trajectory[0], MicroState::initial(&cfg, &g));
    }

    #[test]
    fn cfl_violations_are_reported() {
        let g = grid(0.5, EdgeSet::LEFT);
        let cfg = MicroConfig {
            max_velocity: 1000.0,
            ..Default::default()
        };
        let err = cfg.validate(&g).unwrap_err().to_string();
        assert!(err.contains("CFL"), "{err}");
        let cfg = MicroConfig {
            dt: 1.0,
            t_final: 1.0,
            ..Default::default()
        };
        let err = cfg.validate(&g).unwrap_err().to_string();
        assert!(err.contains("dt*k*L_r"), "{err}");
    }

    #[test]
    fn l1_distance_of_constant_shift() {
        let g = grid(0.5, EdgeSet::LEFT);
        let cfg = MicroConfig::default();
        let a = MicroState::initial(&cfg, &g);
        let mut b = a.clone();
        b.u.iter_mut().for_each(|x| *x += 0.25);
        let d = l1_distance(&a, &b, &g).unwrap();
        assert!((d - 0.25 * g.measures().fluid_volume).abs() < 1e-15);
        assert_eq!(l1_distance(&a, &a, &g).unwrap(), 0.0);
    }

    #[test]
    fn difference_quotient_rejects_bad_lag() {
        let g = grid(0.5, EdgeSet::LEFT);
        let cfg = MicroConfig {
            dt: 0.01,
            t_final: 0.04,
            output_every: 1,
            ..Default::default()
        };
        let run = run(&cfg, &g, None).unwrap();
        assert!(difference_quotient_norm(&run.trajectory, &g, 0.015).is_err());
        let dq = difference_quotient_norm(&run.trajectory, &g, 0.02).unwrap();
        assert_eq!(dq[0].1, 0.0);
        assert_eq!(dq.len(), 5);
    }
}
