//! Run configuration.
//!
//! A config is a TOML file with flat sections (`[geometry]`, `[kinetics]`,
//! `[micro]`, `[macro]`, `[sweep]`, `[tolerances]`, `[output]`). Every key has a
//! default; unknown keys are rejected. [`RunConfig::resolved_toml`] writes the
//! fully-defaulted config back out, and a run can be reproduced from it alone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell_problems::CellOptions;
use crate::error::{Error, Result};
use crate::geometry::{build_unit_cell, inverse_eps, EdgeSet, PerforatedGrid, UnitCell};
use crate::homogenize::{check_eps_list, SweepConfig};
use crate::kinetics::{RateLaw, Resolution};
use crate::linalg::SolverOptions;
use crate::macro_sim::{MacroConfig, MacroVelocity};
use crate::micro_sim::{InitialProfile, MicroConfig, VelocityMode};
use crate::transport::NewtonOptions;
use crate::EffectiveTensors;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub dim: usize,
    pub eps: f64,
    /// Unit-cell resolution n.
    pub n: usize,
    pub hole_side: f64,
    pub hole_center: [f64; 2],
    pub dirichlet_edges: Vec<String>,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            dim: 2,
            eps: 0.25,
            n: 8,
            hole_side: 0.5,
            hole_center: [0.5, 0.5],
            dirichlet_edges: vec!["left".into()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionMode {
    #[default]
    Exact,
    Regularized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KineticsSection {
    /// Onset u_* below which r vanishes.
    pub u_star: f64,
    /// Solubility product u^* with r(u^*) = 1.
    pub u_solubility: f64,
    pub exponent: f64,
    pub k: f64,
    pub resolution_mode: ResolutionMode,
    /// Ramp width of the regularized mode.
    pub delta: f64,
}

impl Default for KineticsSection {
    fn default() -> Self {
        let law = RateLaw::default();
        Self {
            u_star: law.onset,
            u_solubility: law.solubility,
            exponent: law.exponent,
            k: law.k,
            resolution_mode: ResolutionMode::Exact,
            delta: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MicroVelocityMode {
    #[default]
    Zero,
    Reconstructed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MicroSection {
    pub diffusivity: f64,
    pub velocity_mode: MicroVelocityMode,
    /// Macroscopic pressure gradient G driving the reconstructed velocity.
    pub pressure_gradient: [f64; 2],
    /// Declared bound M_q on the velocity.
    pub max_velocity: f64,
    pub dt: f64,
    pub t_final: f64,
    pub output_every: usize,
    pub u_init: InitialProfile,
    pub v_init: InitialProfile,
}

impl Default for MicroSection {
    fn default() -> Self {
        Self {
            diffusivity: 1.0,
            velocity_mode: MicroVelocityMode::Zero,
            pressure_gradient: [-1.0, 0.0],
            max_velocity: 0.0,
            dt: 0.01,
            t_final: 0.5,
            output_every: 5,
            u_init: InitialProfile::Constant(0.0),
            v_init: InitialProfile::Constant(0.2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MacroVelocityMode {
    #[default]
    Zero,
    Darcy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacroSection {
    pub resolution: usize,
    /// Defaults to the micro time step.
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub output_every: Option<usize>,
    pub velocity_mode: MacroVelocityMode,
    pub pressure_left: f64,
    pub pressure_right: f64,
    pub u_init: Option<InitialProfile>,
    pub v_init: Option<InitialProfile>,
    /// Effective tensors to read instead of solving the cell problems.
    pub tensors_file: Option<String>,
}

impl Default for MacroSection {
    fn default() -> Self {
        Self {
            resolution: 64,
            dt: None,
            t_final: None,
            output_every: None,
            velocity_mode: MacroVelocityMode::Zero,
            pressure_left: 1.0,
            pressure_right: 0.0,
            u_init: None,
            v_init: None,
            tensors_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub eps_list: Vec<f64>,
    /// Lag of the difference-quotient diagnostic; defaults to the output spacing.
    pub dq_lag: Option<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            eps_list: vec![0.25, 0.125, 0.0625],
            dq_lag: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TolerancesSection {
    /// Relative tolerance of the linear cell solves.
    pub linear_solve: f64,
    pub stokes_inner: f64,
    pub stokes_outer: f64,
    pub newton: f64,
    pub darcy: f64,
    /// Slack on the box-bound checks.
    pub invariant_slack: f64,
    /// Tolerance of the tensor symmetry check.
    pub spd_check: f64,
    /// Errors at or below this get no observed order.
    pub error_floor: f64,
}

impl Default for TolerancesSection {
    fn default() -> Self {
        Self {
            linear_solve: 1e-10,
            stokes_inner: 1e-13,
            stokes_outer: 1e-11,
            newton: 1e-13,
            darcy: 1e-13,
            invariant_slack: 1e-8,
            spd_check: 1e-8,
            error_floor: 1e-14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    /// Write field dumps for every stored snapshot.
    pub write_fields: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "output".into(),
            write_fields: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: GeometrySection,
    pub kinetics: KineticsSection,
    pub micro: MicroSection,
    #[serde(rename = "macro")]
    pub macro_: MacroSection,
    pub sweep: SweepSection,
    pub tolerances: TolerancesSection,
    pub output: OutputSection,
}

impl RunConfig {
    /// Reads and validates a config file.
    pub fn parse(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fills the inherited macro settings so the echoed config is explicit.
    fn resolve(&mut self) {
        let m = &mut self.macro_;
        m.dt.get_or_insert(self.micro.dt);
        m.t_final.get_or_insert(self.micro.t_final);
        m.output_every.get_or_insert(self.micro.output_every);
        m.u_init.get_or_insert(self.micro.u_init);
        m.v_init.get_or_insert(self.micro.v_init);
        self.sweep
            .dq_lag
            .get_or_insert(self.micro.dt * self.micro.output_every as f64);
    }

    /// Checks all cross-field constraints; every failure is reported as a config error.
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })
    }

    fn check(&self) -> Result<()> {
        if self.geometry.dim != 2 {
            return Err(Error::Config(format!(
                "only dim = 2 is supported, got {}",
                self.geometry.dim
            )));
        }
        inverse_eps(self.geometry.eps)?;
        let grid = self.grid()?;
        self.micro_config()?.validate(&grid)?;
        if self.micro.velocity_mode == MicroVelocityMode::Reconstructed && !(self.micro.max_velocity > 0.0)
        {
            return Err(Error::Config(
                "micro.max_velocity (M_q) must be > 0 for the reconstructed velocity".into(),
            ));
        }
        if self.macro_.resolution == 0 {
            return Err(Error::Config("macro.resolution must be >= 1".into()));
        }
        check_eps_list(&self.sweep.eps_list)?;
        for &eps in &self.sweep.eps_list {
            let m = inverse_eps(eps)?;
            if self.macro_.resolution % m != 0 {
                return Err(Error::Config(format!(
                    "macro.resolution = {} is not a multiple of 1/eps = {m} (sweep eps = {eps})",
                    self.macro_.resolution
                )));
            }
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("linear_solve", t.linear_solve),
            ("stokes_inner", t.stokes_inner),
            ("stokes_outer", t.stokes_outer),
            ("newton", t.newton),
            ("darcy", t.darcy),
            ("spd_check", t.spd_check),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("tolerances.{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(t.invariant_slack >= 0.0) || !(t.error_floor >= 0.0) {
            return Err(Error::Config("tolerance slacks must be >= 0".into()));
        }
        Ok(())
    }

    /// The config with every default written out.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn unit_cell(&self) -> Result<UnitCell> {
        let g = &self.geometry;
        build_unit_cell(g.hole_side, g.hole_center, g.n)
    }

    pub fn dirichlet(&self) -> Result<EdgeSet> {
        EdgeSet::from_names(&self.geometry.dirichlet_edges)
    }

    pub fn grid(&self) -> Result<PerforatedGrid> {
        self.grid_for(self.geometry.eps)
    }

    pub fn grid_for(&self, eps: f64) -> Result<PerforatedGrid> {
        PerforatedGrid::new(self.unit_cell()?, eps, self.dirichlet()?)
    }

    pub fn rate_law(&self) -> Result<RateLaw> {
        let k = &self.kinetics;
        RateLaw::new(k.u_star, k.u_solubility, k.exponent, k.k)
    }

    pub fn resolution(&self) -> Result<Resolution> {
        let r = match self.kinetics.resolution_mode {
            ResolutionMode::Exact => Resolution::Exact,
            ResolutionMode::Regularized => Resolution::Regularized {
                delta: self.kinetics.delta,
            },
        };
        r.validate()?;
        Ok(r)
    }

    fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            rel_tol: self.tolerances.newton,
            ..NewtonOptions::default()
        }
    }

    pub fn cell_options(&self) -> CellOptions {
        let t = &self.tolerances;
        let mut opts = CellOptions {
            diffusion: SolverOptions::with_tol(t.linear_solve),
            asym_tol: t.spd_check,
            ..CellOptions::default()
        };
        opts.stokes.inner = SolverOptions::with_tol(t.stokes_inner);
        opts.stokes.outer = SolverOptions::with_tol(t.stokes_outer);
        opts
    }

    pub fn micro_config(&self) -> Result<MicroConfig> {
        let m = &self.micro;
        Ok(MicroConfig {
            diffusivity: m.diffusivity,
            law: self.rate_law()?,
            resolution: self.resolution()?,
            velocity: match m.velocity_mode {
                MicroVelocityMode::Zero => VelocityMode::Zero,
                MicroVelocityMode::Reconstructed => VelocityMode::Reconstructed {
                    pressure_gradient: m.pressure_gradient,
                },
            },
            dt: m.dt,
            t_final: m.t_final,
            u_init: m.u_init,
            v_init: m.v_init,
            max_velocity: m.max_velocity,
            output_every: m.output_every,
            newton: self.newton(),
            invariant_slack: self.tolerances.invariant_slack,
        })
    }

    pub fn macro_config(&self, tensors: &EffectiveTensors) -> Result<MacroConfig> {
        let m = &self.macro_;
        let mut cfg = MacroConfig::from_tensors(tensors);
        cfg.law = self.rate_law()?;
        cfg.resolution = self.resolution()?;
        cfg.n = m.resolution;
        cfg.dt = m.dt.unwrap_or(self.micro.dt);
        cfg.t_final = m.t_final.unwrap_or(self.micro.t_final);
        cfg.output_every = m.output_every.unwrap_or(self.micro.output_every);
        cfg.velocity = match m.velocity_mode {
            MacroVelocityMode::Zero => MacroVelocity::Zero,
            MacroVelocityMode::Darcy => MacroVelocity::Darcy {
                pressure_left: m.pressure_left,
                pressure_right: m.pressure_right,
            },
        };
        cfg.dirichlet = self.dirichlet()?;
        cfg.u_init = m.u_init.unwrap_or(self.micro.u_init);
        cfg.v_init = m.v_init.unwrap_or(self.micro.v_init);
        cfg.newton = self.newton();
        cfg.invariant_slack = self.tolerances.invariant_slack;
        cfg.darcy_tol = self.tolerances.darcy;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sweep_config(&self) -> Result<SweepConfig> {
        Ok(SweepConfig {
            cell: self.unit_cell()?,
            dirichlet: self.dirichlet()?,
            micro: self.micro_config()?,
            macro_n: self.macro_.resolution,
            cell_options: self.cell_options(),
            error_floor: self.tolerances.error_floor,
            dq_lag: self.sweep.dq_lag,
        })
    }
}
