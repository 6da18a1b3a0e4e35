use precip_core::cell_problems::{compute_effective_tensors, CellOptions};
use precip_core::geometry::build_unit_cell;
use precip_core::macro_sim::{self, darcy_solve, stability_gap, MacroVelocity};
use precip_core::micro_sim::InitialProfile;
use precip_core::{EdgeSet, MacroConfig, MacroState};

fn base() -> MacroConfig {
    let cell = build_unit_cell(0.5, [0.5, 0.5], 8).unwrap();
    let t = compute_effective_tensors(&cell, 1.0, CellOptions::default()).unwrap().tensors;
    let mut cfg = MacroConfig::from_tensors(&t);
    cfg.n = 16;
    cfg.dt = 0.01;
    cfg.t_final = 0.2;
    cfg.output_every = 1;
    cfg
}

#[test]
fn darcy_linear_drop_is_exact() {
    let kappa = 0.02;
    let n = 16;
    let d = darcy_solve(&[[kappa, 0.0], [0.0, kappa]], n, 3.0, 1.0, 1e-13).unwrap();
    for j in 0..n {
        for i in 0..=n {
            assert!((d.velocity.x_face(i, j) - kappa * 2.0).abs() < 1e-10);
        }
    }
    for j in 0..=n {
        for i in 0..n {
            assert!(d.velocity.y_face(i, j).abs() < 1e-10);
        }
    }
    let flat = darcy_solve(&[[kappa, 0.0], [0.0, kappa]], n, 1.0, 1.0, 1e-13).unwrap();
    assert!(flat.velocity.max_abs() < 1e-12);
}

#[test]
fn anisotropic_darcy_is_divergence_free() {
    let d = darcy_solve(&[[0.03, 0.01], [0.01, 0.02]], 24, 1.0, 0.0, 1e-13).unwrap();
    assert!(d.max_divergence < 1e-10, "{}", d.max_divergence);
    assert!(d.velocity.max_abs() > 0.0);
}

#[test]
fn zero_data_and_equilibrium() {
    let mut cfg = base();
    cfg.v_init = InitialProfile::Constant(0.0);
    let run = macro_sim::run(&cfg).unwrap();
    assert!(run.trajectory.iter().all(|s| s.u.iter().chain(&s.v).all(|x| *x == 0.0)));

    cfg.dirichlet = EdgeSet::NONE;
    cfg.u_init = InitialProfile::Constant(1.0);
    cfg.v_init = InitialProfile::Constant(0.4);
    let run = macro_sim::run(&cfg).unwrap();
    let last = run.trajectory.last().unwrap();
    assert!(last.u.iter().all(|u| (u - 1.0).abs() < 1e-13));
    assert!(last.v.iter().all(|v| (v - 0.4).abs() < 1e-13));
}

#[test]
fn closed_box_storage_is_conserved() {
    let mut cfg = base();
    cfg.dirichlet = EdgeSet::NONE;
    cfg.u_init = "bump:0.0,0.5".parse().unwrap();
    cfg.v_init = InitialProfile::Constant(0.2);
    let gamma = cfg.storage_factor();
    let h2 = cfg.h() * cfg.h();
    let total = |s: &MacroState| s.u.iter().zip(&s.v).map(|(u, v)| u + gamma * v).sum::<f64>() * h2;
    let run = macro_sim::run(&cfg).unwrap();
    let m0 = total(&run.trajectory[0]);
    for s in &run.trajectory {
        assert!((total(s) - m0).abs() <= 1e-12 * m0);
    }
}

#[test]
fn time_self_convergence() {
    let mut cfg = base();
    cfg.velocity = MacroVelocity::Darcy {
        pressure_left: 20.0,
        pressure_right: 0.0,
    };
    cfg.u_init = "bump:0.1,0.6".parse().unwrap();
    cfg.v_init = InitialProfile::Constant(0.1);
    let final_u = |dt: f64| {
        let mut c = cfg.clone();
        c.dt = dt;
        macro_sim::run(&c).unwrap().trajectory.pop().unwrap()
    };
    let reference = final_u(0.02 / 8.0);
    let err = |s: &MacroState| {
        s.u.iter().zip(&reference.u).map(|(a, b)| (a - b).abs()).sum::<f64>()
            + s.v.iter().zip(&reference.v).map(|(a, b)| (a - b).abs()).sum::<f64>()
    };
    let e1 = err(&final_u(0.02));
    let e2 = err(&final_u(0.01));
    let order = (e1 / e2).log2();
    assert!(order >= 1.0, "observed order {order}");
}

#[test]
fn replay_and_identical_gap() {
    let cfg = base();
    let a = macro_sim::run(&cfg).unwrap();
    let b = macro_sim::run(&cfg).unwrap();
    let gap = stability_gap(&a.trajectory, &b.trajectory, cfg.n).unwrap();
    assert!(gap.iter().all(|g| g.u_l2 == 0.0 && g.v_l2 == 0.0));
}

#[test]
fn precipitate_perturbation_stays_bounded() {
    let cfg = base();
    let start = MacroState::initial(&cfg);
    let mut bumped = start.v.clone();
    let n = cfg.n;
    for (c, v) in bumped.iter_mut().enumerate() {
        if (c % n) > n / 2 {
            *v += 1e-3;
        }
    }
    let other = MacroState::from_fields(&cfg, 0.0, start.u.clone(), bumped).unwrap();
    let a = macro_sim::run_from(&cfg, start).unwrap();
    let b = macro_sim::run_from(&cfg, other).unwrap();
    let gamma = cfg.storage_factor();
    let h2 = cfg.h() * cfg.h();
    let functional = |x: &MacroState, y: &MacroState| {
        let du: f64 = x.u.iter().zip(&y.u).map(|(p, q)| (p - q).abs()).sum();
        let dv: f64 = x.v.iter().zip(&y.v).map(|(p, q)| (p - q).abs()).sum();
        (du + gamma * dv) * h2
    };
    let initial = functional(&a.trajectory[0], &b.trajectory[0]);
    for (x, y) in a.trajectory.iter().zip(&b.trajectory) {
        assert!(functional(x, y) <= initial * (1.0 + 1e-8));
    }
}
