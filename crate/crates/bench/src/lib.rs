//! Fixtures shared by the benchmarks.

use precip_core::geometry::build_unit_cell;
use precip_core::micro_sim::{MicroConfig, MicroSolver};
use precip_core::{EdgeSet, MicroState, PerforatedGrid, UnitCell};

/// Centred square grain of side 0.5 on an `n × n` cell.
pub fn centred_cell(n: usize) -> UnitCell {
    build_unit_cell(0.5, [0.5, 0.5], n).expect("valid cell")
}

pub fn grid(n: usize, eps: f64) -> PerforatedGrid {
    PerforatedGrid::new(centred_cell(n), eps, EdgeSet::LEFT).expect("valid grid")
}

/// A dissolving micro run with enough steps to keep a benchmark busy.
pub fn micro_solver(grid: &PerforatedGrid) -> MicroSolver<'_> {
    let cfg = MicroConfig {
        dt: 1e-3,
        t_final: 10.0,
        v_init: "const:0.2".parse().expect("profile"),
        ..MicroConfig::default()
    };
    let initial = MicroState::initial(&cfg, grid);
    MicroSolver::new(cfg, grid, None, initial).expect("valid run")
}
