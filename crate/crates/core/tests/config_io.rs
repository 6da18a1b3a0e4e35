use precip_core::cell_problems::{compute_effective_tensors, CellOptions};
use precip_core::config::RunConfig;
use precip_core::geometry::build_unit_cell;
use precip_core::homogenize::{ConvergenceReport, ConvergenceRow};
use precip_core::io::{self, GridDump};
use precip_core::micro_sim::{self, MicroConfig};
use precip_core::{EdgeSet, PerforatedGrid};

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(
        &path,
        "[geometry]\neps = 0.25\nn = 8\n\n[kinetics]\nk = 2.0\n\n[micro]\ndt = 0.005\n",
    )
    .unwrap();
    let cfg = RunConfig::parse(&path).unwrap();
    assert_eq!(cfg.kinetics.k, 2.0);
    assert_eq!(cfg.macro_.dt, Some(0.005));
    let echoed = dir.path().join("resolved.toml");
    std::fs::write(&echoed, cfg.resolved_toml()).unwrap();
    assert_eq!(RunConfig::parse(&echoed).unwrap(), cfg);
}

#[test]
fn config_errors_name_the_problem() {
    let bad = |text: &str| RunConfig::from_toml_str(text).unwrap_err().to_string();
    assert!(bad("[geometry]\neps = 0.3\n").contains("1/eps must be a positive integer"));
    assert!(bad("[micro]\nspeed = 1\n").contains("diffusivity"));
    let cfl = bad(
        "[micro]\nvelocity_mode = \"reconstructed\"\nmax_velocity = 1000.0\ndt = 0.01\n",
    );
    assert!(cfl.contains("dt*M_q/h"), "{cfl}");
    assert!(bad("[kinetics]\nk = 200.0\n").contains("dt*k*L_r"));
    assert!(bad("[sweep]\neps_list = [0.125, 0.25]\n").contains("strictly decreasing"));
    assert!(bad("[macro]\nresolution = 12\n[sweep]\neps_list = [0.125]\n").contains("multiple"));
}

#[test]
fn tensor_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cell = build_unit_cell(0.5, [0.5, 0.5], 8).unwrap();
    let t = compute_effective_tensors(&cell, 1.0, CellOptions::default()).unwrap().tensors;
    let path = dir.path().join("effective_tensors.csv");
    io::write_effective_tensors(&path, &t).unwrap();
    assert_eq!(io::read_effective_tensors(&path).unwrap(), t);
}

#[test]
fn convergence_report_leaves_missing_orders_empty() {
    let dir = tempfile::tempdir().unwrap();
    let row = |eps: f64, e: f64| ConvergenceRow {
        eps,
        err_u: e,
        err_v: e / 10.0,
        err_r: e / 2.0,
        order_u: None,
        order_v: None,
    };
    let report = ConvergenceReport::new(vec![row(0.5, 0.04), row(0.25, 0.02)], 1e-14);
    let path = dir.path().join("convergence_report.csv");
    io::write_convergence_report(&path, &report).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "eps,err_u_L2,err_v_unfolded_L2,err_r_L2,order_u,order_v");
    assert_eq!(lines[1], "0.5,0.04,0.004,0.02,,");
    assert_eq!(lines[2], "0.25,0.02,0.002,0.01,1.0,1.0");
}

#[test]
fn micro_snapshots_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cell = build_unit_cell(0.5, [0.5, 0.5], 4).unwrap();
    let grid = PerforatedGrid::new(cell, 0.5, EdgeSet::LEFT).unwrap();
    let cfg = MicroConfig {
        t_final: 0.02,
        u_init: "linear_x:0,1".parse().unwrap(),
        ..MicroConfig::default()
    };
    let run = micro_sim::run(&cfg, &grid, None).unwrap();
    let state = run.trajectory.last().unwrap();

    let faces = dir.path().join("faces.csv");
    io::write_faces(&faces, state, &grid).unwrap();
    assert_eq!(io::read_faces(&faces, &grid).unwrap(), state.v);

    let other = PerforatedGrid::new(build_unit_cell(0.5, [0.5, 0.5], 4).unwrap(), 0.25, EdgeSet::LEFT)
        .unwrap();
    assert!(io::read_faces(&faces, &other).is_err());

    let dump = GridDump {
        name: "u".into(),
        t: state.t,
        nx: grid.nx(),
        ny: grid.nx(),
        spacing: [grid.h(), grid.h()],
        values: io::micro_field(&state.u, &grid),
    };
    let path = dir.path().join("u.grid");
    io::write_grid(&path, &dump).unwrap();
    let back = io::read_grid(&path).unwrap();
    assert_eq!(back.values.iter().filter(|v| v.is_nan()).count(), grid.n_solid());
    for d in 0..grid.n_fluid() {
        assert_eq!(back.values[grid.fluid_cell(d)].to_bits(), state.u[d].to_bits());
    }

    let series = dir.path().join("series.csv");
    io::write_table(&series, &run.mass).unwrap();
    let text = std::fs::read_to_string(&series).unwrap();
    assert!(text.starts_with("t,mass_u,mass_v,mass_total,boundary_outflow,drift,"));
    assert_eq!(text.lines().count(), run.mass.len() + 1);
}
