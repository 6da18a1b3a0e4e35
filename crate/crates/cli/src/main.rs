use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use precip_core::cell_problems::compute_effective_tensors;
use precip_core::config::RunConfig;
use precip_core::homogenize::{self, unfold};
use precip_core::io::{self, GridDump, Manifest};
use precip_core::macro_sim;
use precip_core::micro_sim::{self, MicroSolver};
use precip_core::{EffectiveTensors, MicroState, PerforatedGrid, Result};

#[derive(Parser, Debug)]
#[command(name = "precip", version, about = "Reactive transport with precipitation and dissolution in perforated media")]
struct Cli {
    /// TOML run configuration; defaults are used for everything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Solve the cell problems and write effective_tensors.csv.
    Cell,
    /// Run the pore-scale model on the configured ε.
    Micro,
    /// Run the upscaled model.
    Macro,
    /// ε-sweep: micro runs against one macro run.
    Converge,
    /// Unfold a stored grain-face snapshot.
    Unfold {
        /// Face file written by `micro` (faces_*.csv).
        #[arg(long)]
        faces: PathBuf,
        /// Time stamp of the snapshot.
        #[arg(long, default_value_t = 0.0)]
        t: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Cell => "cell",
            Command::Micro => "micro",
            Command::Macro => "macro",
            Command::Converge => "converge",
            Command::Unfold { .. } => "unfold",
        }
    }
}

/// Collects the names of the files written into the output directory.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = std::env::var("PRECIP_NUM_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("cannot size the thread pool: {e}");
        }
    }

    let cfg = match cli.config.as_deref() {
        Some(p) => RunConfig::parse(p),
        None => RunConfig::from_toml_str(""),
    };
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.as_ref().ok().map(|c| PathBuf::from(&c.output.dir)))
        .unwrap_or_else(|| PathBuf::from("output"));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return ExitCode::from(2);
    }
    let mut out = Output {
        dir: out_dir,
        files: Vec::new(),
    };
    let result = cfg.and_then(|cfg| dispatch(&cli.command, &cfg, &mut out));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let path = out.dir.join("error.json");
            if let Err(w) = io::write_json(&path, &io::ErrorRecord::from(&e)) {
                eprintln!("error: cannot write {}: {w}", path.display());
            }
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: &Command, cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let stale = out.dir.join("error.json");
    if stale.exists() {
        std::fs::remove_file(&stale)?;
    }
    let resolved = cfg.resolved_toml();
    std::fs::write(out.path("resolved_config.toml"), &resolved)?;
    match cmd {
        Command::Cell => run_cell(cfg, out)?,
        Command::Micro => run_micro(cfg, out)?,
        Command::Macro => run_macro(cfg, out)?,
        Command::Converge => run_converge(cfg, out)?,
        Command::Unfold { faces, t } => run_unfold(cfg, faces, *t, out)?,
    }
    let manifest = Manifest {
        tool: "precip".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: cmd.name().into(),
        config: resolved,
        files: out.files.clone(),
    };
    io::write_json(&out.dir.join("manifest.json"), &manifest)
}

fn run_cell(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let cell = cfg.unit_cell()?;
    let sol = compute_effective_tensors(&cell, cfg.micro.diffusivity, cfg.cell_options())?;
    let t = &sol.tensors;
    info!(
        "S = [[{:.6e}, {:.6e}], [{:.6e}, {:.6e}]], K = [[{:.6e}, {:.6e}], [{:.6e}, {:.6e}]]",
        t.s[0][0], t.s[0][1], t.s[1][0], t.s[1][1], t.k[0][0], t.k[0][1], t.k[1][0], t.k[1][1]
    );
    io::write_effective_tensors(&out.path("effective_tensors.csv"), t)
}

fn tensors_for_macro(cfg: &RunConfig) -> Result<EffectiveTensors> {
    match &cfg.macro_.tensors_file {
        Some(path) => io::read_effective_tensors(Path::new(path)),
        None => {
            let cell = cfg.unit_cell()?;
            Ok(compute_effective_tensors(&cell, cfg.micro.diffusivity, cfg.cell_options())?.tensors)
        }
    }
}

fn snapshot_name(prefix: &str, index: usize, ext: &str) -> String {
    format!("{prefix}_{index:04}.{ext}")
}

fn snapshot_tag(index: usize) -> String {
    format!("{index:04}")
}

fn write_micro_snapshot(
    state: &MicroState,
    grid: &PerforatedGrid,
    tag: &str,
    out: &mut Output,
) -> Result<()> {
    let dump = GridDump {
        name: "u".into(),
        t: state.t,
        nx: grid.nx(),
        ny: grid.nx(),
        spacing: [grid.h(), grid.h()],
        values: io::micro_field(&state.u, grid),
    };
    io::write_grid(&out.path(&format!("u_{tag}.grid")), &dump)?;
    io::write_faces(&out.path(&format!("faces_{tag}.csv")), state, grid)
}

fn run_micro(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let grid = cfg.grid()?;
    let mcfg = cfg.micro_config()?;
    let stokes = match mcfg.velocity {
        micro_sim::VelocityMode::Zero => None,
        micro_sim::VelocityMode::Reconstructed { .. } => {
            compute_effective_tensors(grid.unit_cell(), mcfg.diffusivity, cfg.cell_options())?.stokes
        }
    };
    micro_sim::check_compatibility(&mcfg, &grid);
    let velocity = micro_sim::velocity_for(&mcfg, &grid, stokes.as_ref())?;
    let initial = MicroState::initial(&mcfg, &grid);
    let mut solver = MicroSolver::new(mcfg.clone(), &grid, Some(velocity), initial)?;
    info!(
        "micro: eps = {}, {} fluid cells, {} grain faces, {} steps, M = {:.4e}",
        grid.eps(),
        grid.n_fluid(),
        grid.boundary_faces().len(),
        solver.n_steps(),
        solver.bound()
    );
    let write_fields = cfg.output.write_fields;
    let mut records = vec![solver.record(None, 0)];
    let mut snapshot = 0;
    if write_fields {
        write_micro_snapshot(solver.state(), &grid, &snapshot_tag(snapshot), out)?;
    }
    while !solver.is_finished() {
        match solver.step() {
            Ok(r) => records.push(r),
            Err(e) => {
                // Keep what was computed so far for post-mortem inspection.
                io::write_table(&out.path("series.csv"), &records)?;
                write_micro_snapshot(solver.state(), &grid, "last_valid", out)?;
                return Err(e);
            }
        }
        if write_fields && (solver.steps_taken() % mcfg.output_every == 0 || solver.is_finished()) {
            snapshot += 1;
            write_micro_snapshot(solver.state(), &grid, &snapshot_tag(snapshot), out)?;
        }
    }
    let last = records.last().expect("initial record");
    info!("micro: done at t = {}, mass drift {:.3e}", last.t, last.drift);
    io::write_table(&out.path("series.csv"), &records)
}

fn run_macro(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let tensors = tensors_for_macro(cfg)?;
    let mcfg = cfg.macro_config(&tensors)?;
    let run = macro_sim::run(&mcfg)?;
    if let Some(d) = &run.darcy {
        info!(
            "macro: Darcy solve in {} iterations, max divergence {:.3e}",
            d.iterations, d.max_divergence
        );
    }
    io::write_table(&out.path("series.csv"), &run.mass)?;
    if cfg.output.write_fields {
        let h = mcfg.h();
        for (index, s) in run.trajectory.iter().enumerate() {
            for (name, values) in [("u", &s.u), ("v", &s.v)] {
                let dump = GridDump {
                    name: name.into(),
                    t: s.t,
                    nx: mcfg.n,
                    ny: mcfg.n,
                    spacing: [h, h],
                    values: values.clone(),
                };
                io::write_grid(&out.path(&snapshot_name(name, index, "grid")), &dump)?;
            }
        }
    }
    Ok(())
}

fn run_converge(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let scfg = cfg.sweep_config()?;
    let result = homogenize::sweep(&scfg, &cfg.sweep.eps_list)?;
    for r in &result.report.rows {
        info!(
            "eps = {:<8} err_u = {:.4e} err_v = {:.4e} err_r = {:.4e} order_u = {}",
            r.eps,
            r.err_u,
            r.err_v,
            r.err_r,
            r.order_u.map_or("-".to_string(), |o| format!("{o:.3}"))
        );
    }
    io::write_effective_tensors(&out.path("effective_tensors.csv"), &result.tensors)?;
    io::write_convergence_report(&out.path("convergence_report.csv"), &result.report)?;
    io::write_table(&out.path("sweep_diagnostics.csv"), &result.diagnostics)?;
    io::write_table(&out.path("macro_series.csv"), &result.macro_run.mass)
}

#[derive(Serialize)]
struct UnfoldRow {
    k1: usize,
    k2: usize,
    ref_face: usize,
    value: f64,
}

#[derive(Serialize)]
struct UnfoldSummary {
    t: f64,
    eps: f64,
    unfolded_norm_sq: f64,
    surface_norm_sq: f64,
}

fn run_unfold(cfg: &RunConfig, faces: &Path, t: f64, out: &mut Output) -> Result<()> {
    let grid = cfg.grid()?;
    let v = io::read_faces(faces, &grid)?;
    let trace = unfold(&v, &grid, t)?;
    let m = trace.cells_per_side;
    let rows: Vec<UnfoldRow> = (0..m * m)
        .flat_map(|k| {
            let trace = &trace;
            (0..trace.faces_per_cell).map(move |r| UnfoldRow {
                k1: k % m,
                k2: k / m,
                ref_face: r,
                value: trace.value(k, r),
            })
        })
        .collect();
    io::write_table(&out.path("unfolded_trace.csv"), &rows)?;
    let summary = UnfoldSummary {
        t,
        eps: grid.eps(),
        unfolded_norm_sq: trace.norm_sq(),
        surface_norm_sq: homogenize::surface_norm_sq(&v, &grid),
    };
    io::write_json(&out.path("unfold_summary.json"), &summary)
}
