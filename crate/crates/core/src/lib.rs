//! Numerical toolkit for reactive transport with precipitation and
//! dissolution in periodically perforated media.
//!
//! The crate covers the whole pipeline:
//!
//! * [`geometry`]: the unit cell with a square grain and its ε-tiling of Ω = (0,1)².
//! * [`kinetics`]: the precipitation rate, the Heaviside dissolution selection and
//!   the event-exact surface ODE.
//! * [`cell_problems`]: periodic diffusion and Stokes cell problems and the
//!   effective tensors S and K.
//! * [`micro_sim`] / [`macro_sim`]: pore-scale and Darcy-scale time integrators.
//! * [`homogenize`]: extension, unfolding, oscillation quadrature and the ε-sweep.
//! * [`config`] / [`io`]: run configuration and file formats.

pub mod cell_problems;
pub mod config;
pub mod error;
pub mod geometry;
pub mod homogenize;
pub mod io;
pub mod kinetics;
pub mod linalg;
pub mod macro_sim;
pub mod micro_sim;
pub mod transport;

pub use cell_problems::{EffectiveTensors, StokesCellSolution};
pub use error::{Error, Result};
pub use geometry::{BoundaryFace, EdgeSet, PerforatedGrid, UnitCell};
pub use kinetics::{RateLaw, Resolution};


pub use macro_sim::{MacroConfig, MacroState};
pub use micro_sim::{MicroConfig, MicroState};
