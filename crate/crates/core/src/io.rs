//! File formats.
//!
//! * CSV tables with a header row and a fixed column order (`effective_tensors.csv`,
//!   `series.csv`, `convergence_report.csv`, grain-face dumps).
//! * Structured-grid text dumps of cell fields:
//!
//!   ```text
//!   # precip grid
//!   name u
//!   t 0.5
//!   dims 32 32
//!   spacing 0.03125 0.03125
//!   origin 0 0
//!   <32 rows of 32 values, row j = 0 first; solid cells are "nan">
//!   ```
//!
//! Floats are written in shortest round-trip form, so identical runs give
//! byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell_problems::{EffectiveTensors, Provenance};
use crate::error::{Error, Result};
use crate::geometry::PerforatedGrid;
use crate::homogenize::ConvergenceReport;
use crate::micro_sim::MicroState;

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

/// Writes `rows` as CSV with a header taken from the field names.
pub fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

/// One row of `effective_tensors.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorRow {
    pub n: usize,
    pub diffusivity: f64,
    pub porosity: f64,
    pub surface: f64,
    pub s11: f64,
    pub s12: f64,
    pub s21: f64,
    pub s22: f64,
    pub k11: f64,
    pub k12: f64,
    pub k21: f64,
    pub k22: f64,
    pub alpha_s: f64,
    pub s_asymmetry: f64,
    pub k_asymmetry: f64,
    pub s_spd: bool,
    pub k_spd: bool,
    pub diffusion_residual_1: f64,
    pub diffusion_residual_2: f64,
    pub stokes_divergence_1: f64,
    pub stokes_divergence_2: f64,
    pub solver_tol: f64,
    pub has_permeability: bool,
}

impl From<&EffectiveTensors> for TensorRow {
    fn from(t: &EffectiveTensors) -> Self {
        let p = &t.provenance;
        Self {
            n: p.n,
            diffusivity: t.diffusivity,
            porosity: t.porosity,
            surface: t.surface,
            s11: t.s[0][0],
            s12: t.s[0][1],
            s21: t.s[1][0],
            s22: t.s[1][1],
            k11: t.k[0][0],
            k12: t.k[0][1],
            k21: t.k[1][0],
            k22: t.k[1][1],
            alpha_s: t.alpha_s,
            s_asymmetry: p.s_asymmetry,
            k_asymmetry: p.k_asymmetry,
            s_spd: t.s_is_spd(),
            k_spd: t.k_is_spd(),
            diffusion_residual_1: p.diffusion_residual[0],
            diffusion_residual_2: p.diffusion_residual[1],
            stokes_divergence_1: p.stokes_divergence[0],
            stokes_divergence_2: p.stokes_divergence[1],
            solver_tol: p.solver_tol,
            has_permeability: p.has_permeability,
        }
    }
}

impl From<&TensorRow> for EffectiveTensors {
    fn from(r: &TensorRow) -> Self {
        Self {
            s: [[r.s11, r.s12], [r.s21, r.s22]],
            k: [[r.k11, r.k12], [r.k21, r.k22]],
            alpha_s: r.alpha_s,
            diffusivity: r.diffusivity,
            porosity: r.porosity,
            surface: r.surface,
            provenance: Provenance {
                n: r.n,
                solver_tol: r.solver_tol,
                s_asymmetry: r.s_asymmetry,
                k_asymmetry: r.k_asymmetry,
                diffusion_residual: [r.diffusion_residual_1, r.diffusion_residual_2],
                stokes_divergence: [r.stokes_divergence_1, r.stokes_divergence_2],
                has_permeability: r.has_permeability,
            },
        }
    }
}

pub fn write_effective_tensors(path: &Path, t: &EffectiveTensors) -> Result<()> {
    write_table(path, &[TensorRow::from(t)])
}

pub fn read_effective_tensors(path: &Path) -> Result<EffectiveTensors> {
    let rows: Vec<TensorRow> = read_table(path)?;
    match rows.as_slice() {
        [row] => Ok(row.into()),
        _ => Err(Error::Config(format!(
            "{}: expected exactly one tensor row, found {}",
            path.display(),
            rows.len()
        ))),
    }
}

/// One row of `convergence_report.csv`; missing orders are empty cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCsvRow {
    pub eps: f64,
    #[serde(rename = "err_u_L2")]
    pub err_u_l2: f64,
    #[serde(rename = "err_v_unfolded_L2")]
    pub err_v_unfolded_l2: f64,
    #[serde(rename = "err_r_L2")]
    pub err_r_l2: f64,
    pub order_u: Option<f64>,
    pub order_v: Option<f64>,
}

pub fn write_convergence_report(path: &Path, report: &ConvergenceReport) -> Result<()> {
    let rows: Vec<ConvergenceCsvRow> = report
        .rows
        .iter()
        .map(|r| ConvergenceCsvRow {
            eps: r.eps,
            err_u_l2: r.err_u,
            err_v_unfolded_l2: r.err_v,
            err_r_l2: r.err_r,
            order_u: r.order_u,
            order_v: r.order_v,
        })
        .collect();
    write_table(path, &rows)
}

/// A structured-grid field dump.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDump {
    pub name: String,
    pub t: f64,
    pub nx: usize,
    pub ny: usize,
    pub spacing: [f64; 2],
    /// Row-major, row j = 0 first; NaN marks solid cells.
    pub values: Vec<f64>,
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

pub fn write_grid(path: &Path, dump: &GridDump) -> Result<()> {
    if dump.values.len() != dump.nx * dump.ny {
        return Err(Error::State("grid dump size mismatch".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# precip grid")?;
    writeln!(w, "name {}", dump.name)?;
    writeln!(w, "t {}", dump.t)?;
    writeln!(w, "dims {} {}", dump.nx, dump.ny)?;
    writeln!(w, "spacing {} {}", dump.spacing[0], dump.spacing[1])?;
    writeln!(w, "origin 0 0")?;
    for row in dump.values.chunks(dump.nx) {
        let line: Vec<String> = row.iter().map(|v| fmt_value(*v)).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<GridDump> {
    let bad = |what: &str| Error::Config(format!("{}: malformed grid dump ({what})", path.display()));
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let mut header = |key: &str| -> Result<Vec<String>> {
        let line = lines.next().ok_or_else(|| bad(key))??;
        let mut parts = line.split_whitespace().map(str::to_string);
        if parts.next().as_deref() != Some(key) {
            return Err(bad(key));
        }
        Ok(parts.collect())
    };
    header("#")?;
    let name = header("name")?.join(" ");
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(s));
    let t = num(&header("t")?.first().cloned().unwrap_or_default())?;
    let dims = header("dims")?;
    let (nx, ny) = match dims.as_slice() {
        [a, b] => (
            a.parse::<usize>().map_err(|_| bad("dims"))?,
            b.parse::<usize>().map_err(|_| bad("dims"))?,
        ),
        _ => return Err(bad("dims")),
    };
    let sp = header("spacing")?;
    let spacing = match sp.as_slice() {
        [a, b] => [num(a)?, num(b)?],
        _ => return Err(bad("spacing")),
    };
    header("origin")?;
    let mut values = Vec::with_capacity(nx * ny);
    for line in lines {
        for tok in line?.split_whitespace() {
            values.push(if tok == "nan" { f64::NAN } else { num(tok)? });
        }
    }
    if values.len() != nx * ny {
        return Err(bad("value count"));
    }
    Ok(GridDump {
        name,
        t,
        nx,
        ny,
        spacing,
        values,
    })
}

/// u of a micro state on every cell of Ω, NaN in the grains.
pub fn micro_field(state_u: &[f64], grid: &PerforatedGrid) -> Vec<f64> {
    let nx = grid.nx();
    (0..nx * nx)
        .map(|c| grid.dof(c % nx, c / nx).map_or(f64::NAN, |d| state_u[d]))
        .collect()
}

/// One grain face of a micro snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceRow {
    pub k1: usize,
    pub k2: usize,
    pub ref_face: usize,
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub y2: f64,
    pub v: f64,
    pub w: f64,
}

pub fn write_faces(path: &Path, state: &MicroState, grid: &PerforatedGrid) -> Result<()> {
    let rows: Vec<FaceRow> = grid
        .boundary_faces()
        .iter()
        .enumerate()
        .map(|(g, f)| {
            let x = grid.face_center(f);
            FaceRow {
                k1: f.cell_k[0],
                k2: f.cell_k[1],
                ref_face: f.ref_face,
                x1: x[0],
                x2: x[1],
                y1: f.y[0],
                y2: f.y[1],
                v: state.v[g],
                w: state.w[g],
            }
        })
        .collect();
    write_table(path, &rows)
}

/// Reads a face dump written for `grid`; returns v in grid face order.
pub fn read_faces(path: &Path, grid: &PerforatedGrid) -> Result<Vec<f64>> {
    let rows: Vec<FaceRow> = read_table(path)?;
    let faces = grid.boundary_faces();
    if rows.len() != faces.len() {
        return Err(Error::Config(format!(
            "{}: {} faces, the configured grid has {}",
            path.display(),
            rows.len(),
            faces.len()
        )));
    }
    rows.iter()
        .zip(faces)
        .map(|(r, f)| {
            if [r.k1, r.k2] != f.cell_k || r.ref_face != f.ref_face {
                return Err(Error::Config(format!(
                    "{}: face order does not match the configured geometry",
                    path.display()
                )));
            }
            Ok(r.v)
        })
        .collect()
}

/// Machine-readable record of a failed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    pub t: Option<f64>,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        Self {
            kind: e.kind().to_string(),
            message: e.to_string(),
            t: match e {
                Error::Invariant { t, .. } => Some(*t),
                _ => None,
            },
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("cannot encode {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Run metadata written next to the data files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: String,
    pub files: Vec<String>,
}
