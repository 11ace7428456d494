//! Parameter sweeps. Cells are independent runs on a bounded worker pool;
//! rows are collected in cell order and written once, so the output does not
//! depend on the number of workers.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use nalgebra::Vector3;
use quasimeas::measurement::run_measurement;
use quasimeas::{Branch, DrivingProfile, MeasurementRecord, Mode};
use rayon::prelude::*;

use crate::config::{DrivingSpec, Job, LoadedConfig, Overrides, Range, Shape, SweepSpec};
use crate::error::CliError;
use crate::output::{csv_text, push_num, write_file, SWEEP_SCHEMA};

pub struct Cell {
    pub branch: Branch,
    pub shape: Shape,
    pub job: Job,
}

/// Outcome of one cell; errors are kept as text for the row.
pub struct CellResult {
    pub theta_angle: f64,
    pub near_critical: bool,
    pub outcome: Result<MeasurementRecord, String>,
}

fn axis(name: &str, r: &Option<Range>) -> Result<Option<Vec<f64>>, CliError> {
    match r {
        None => Ok(None),
        Some(r) => {
            let v = r.values();
            if v.is_empty() {
                Err(CliError::Usage(format!("sweep.{name}: empty range")))
            } else {
                Ok(Some(v))
            }
        }
    }
}

/// Unit vector at angle `theta` from `w` in the plane of `w` and `base`.
fn tilt(w: Vector3<f64>, base: Vector3<f64>, theta: f64) -> Vector3<f64> {
    let mut perp = base - w * w.dot(&base);
    if perp.norm() < 1e-12 {
        // Base is parallel to ω̂; any perpendicular will do.
        let e = if w.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        perp = e - w * w.dot(&e);
    }
    w * theta.cos() + perp.normalize() * theta.sin()
}

/// Direction of ĝ for one cell.
#[derive(Clone, Copy)]
enum Orientation {
    Base,
    Polar(f64, f64),
    Axis([f64; 3]),
}

/// Drops parameters the shape does not use, so a shape axis can share one base section.
fn keep_used(d: &mut DrivingSpec) {
    match d.shape {
        Shape::Im => (d.t_on, d.t_off, d.ramp, d.samples) = (None, None, None, None),
        Shape::Window => (d.kappa, d.samples) = (None, None),
        Shape::Tabulated => {
            (d.g0, d.kappa, d.t_on, d.t_off, d.ramp) = (None, None, None, None, None)
        }
    }
}

/// Expands the grid. Order: branch, shape, direction, g0, kappa (last varies fastest).
pub fn cells(cfg: &LoadedConfig, spec: &SweepSpec) -> Result<Vec<Cell>, CliError> {
    if spec.branches.is_empty() {
        return Err(CliError::Usage("sweep.branches: empty list".into()));
    }
    if spec.shape.as_ref().is_some_and(Vec::is_empty) {
        return Err(CliError::Usage("sweep.shape: empty list".into()));
    }
    let theta_angle = axis("theta_angle", &spec.theta_angle)?;
    let theta = axis("theta", &spec.theta)?;
    let phi = axis("phi", &spec.phi)?;
    if theta_angle.is_some() && (theta.is_some() || phi.is_some()) {
        return Err(CliError::Usage(
            "sweep: theta_angle cannot be combined with theta or phi".into(),
        ));
    }
    let g0 = axis("g0", &spec.g0)?;
    let kappa = axis("kappa", &spec.kappa)?;

    let base = cfg.job()?;
    let base_driving = &cfg.config.driving;
    let w = base.scenario.observable.unit();
    let g = base.scenario.direction.unit();

    let directions: Vec<Orientation> = if let Some(th) = theta_angle {
        th.iter()
            .map(|&t| {
                let v = tilt(w, g, t);
                Orientation::Axis([v.x, v.y, v.z])
            })
            .collect()
    } else if theta.is_some() || phi.is_some() {
        let d = base.scenario.direction;
        let th = theta.unwrap_or(vec![d.theta]);
        let ph = phi.unwrap_or(vec![d.phi]);
        th.iter()
            .flat_map(|&t| ph.iter().map(move |&p| Orientation::Polar(t, p)))
            .collect()
    } else {
        vec![Orientation::Base]
    };
    let shapes = spec.shape.clone().unwrap_or(vec![base_driving.shape]);
    let g0s: Vec<Option<f64>> = g0.map_or(vec![None], |v| v.into_iter().map(Some).collect());
    let kappas: Vec<Option<f64>> = kappa.map_or(vec![None], |v| v.into_iter().map(Some).collect());

    let mut out = Vec::new();
    for &branch in &spec.branches {
        for &shape in &shapes {
            for &orientation in &directions {
                for &g0 in &g0s {
                    for &kappa in &kappas {
                        let mut d = base_driving.clone();
                        d.shape = shape;
                        match orientation {
                            Orientation::Base => {}
                            Orientation::Polar(t, p) => {
                                (d.theta, d.phi, d.axis) = (Some(t), Some(p), None)
                            }
                            Orientation::Axis(v) => {
                                (d.theta, d.phi, d.axis) = (None, None, Some(v))
                            }
                        }
                        d.g0 = g0.or(d.g0);
                        d.kappa = kappa.or(d.kappa);
                        keep_used(&mut d);
                        let mut job = cfg.job_with(&d)?;
                        job.mode = Mode::Conditioned(branch);
                        out.push(Cell { branch, shape, job });
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn run_cell(cell: &Cell, band: f64) -> CellResult {
    let theta_angle = cell.job.scenario.theta().theta;
    CellResult {
        theta_angle,
        near_critical: (theta_angle - FRAC_PI_2).abs() <= band,
        outcome: run_measurement(&cell.job.scenario, cell.job.mode).map_err(|e| e.to_string()),
    }
}

pub fn run_cells(cells: &[Cell], band: f64, jobs: usize) -> Result<Vec<CellResult>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(|c| run_cell(c, band)).collect()))
}

pub const SWEEP_COLUMNS: &str = "cell,branch,shape,theta_angle,theta,phi,g0,kappa,n_x,n_y,n_z,error,converged,near_critical,crossings,status";

pub fn sweep_csv(cells: &[Cell], results: &[CellResult]) -> String {
    let mut out = format!("# schema: {SWEEP_SCHEMA}\n{SWEEP_COLUMNS}\n");
    for (i, (cell, r)) in cells.iter().zip(results).enumerate() {
        let s = &cell.job.scenario;
        out.push_str(&format!("{i},{},{},", cell.branch, cell.shape));
        for v in [r.theta_angle, s.direction.theta, s.direction.phi] {
            push_num(&mut out, v);
            out.push(',');
        }
        let (g0, kappa) = match s.profile {
            DrivingProfile::InvertedMorse { g0, kappa } => (Some(g0), Some(kappa)),
            DrivingProfile::Window { g0, .. } => (Some(g0), None),
            DrivingProfile::Tabulated { .. } => (None, None),
        };
        for v in [g0, kappa] {
            if let Some(v) = v {
                push_num(&mut out, v);
            }
            out.push(',');
        }
        match &r.outcome {
            Ok(rec) => {
                for v in rec
                    .final_bloch
                    .components()
                    .into_iter()
                    .chain([rec.final_error])
                {
                    push_num(&mut out, v);
                    out.push(',');
                }
                out.push_str(&format!(
                    "{},{},{},ok\n",
                    rec.converged,
                    r.near_critical,
                    rec.trajectory.crossings.len()
                ));
            }
            Err(e) => {
                out.push_str(&format!(
                    ",,,,false,{},,{}\n",
                    r.near_critical,
                    csv_text(&format!("error: {e}"))
                ));
            }
        }
    }
    out
}

pub fn cmd_sweep(
    config: &Path,
    out: &Path,
    jobs: usize,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let mut cfg = LoadedConfig::from_file(config)?;
    cfg.apply(overrides);
    let spec = cfg
        .config
        .sweep
        .clone()
        .ok_or_else(|| CliError::Usage(format!("{}: no [sweep] table", cfg.path)))?;
    if !(spec.near_critical_band >= 0.0) {
        return Err(cfg
            .invalid("sweep", "near_critical_band", "must be non-negative")
            .into());
    }
    let cells = cells(&cfg, &spec)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let results = run_cells(&cells, spec.near_critical_band, jobs)?;
    write_file(&out.join("sweep.csv"), &sweep_csv(&cells, &results))?;

    let errors = results.iter().filter(|r| r.outcome.is_err()).count();
    let unconverged = results
        .iter()
        .filter(|r| !r.near_critical && matches!(&r.outcome, Ok(rec) if !rec.converged))
        .count();
    let exempt = results.iter().filter(|r| r.near_critical).count();
    println!(
        "sweep: {} cells, {errors} failed, {unconverged} unconverged outside the near-critical band, {exempt} inside it",
        cells.len()
    );
    if errors > 0 {
        return Err(CliError::Cells(format!(
            "{errors} sweep cells failed; see sweep.csv"
        )));
    }
    if unconverged > 0 {
        return Err(CliError::Physics(format!(
            "{unconverged} cells outside the near-critical band did not converge"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tilt_sets_the_angle() {
        let w = Vector3::new(0.75, 3f64.sqrt() / 4.0, 0.5);
        let g = Vector3::new(0.25, -(3f64.sqrt()) / 4.0, 3f64.sqrt() / 2.0);
        for t in [0.0, 0.2, 1.0, FRAC_PI_2, 3.0] {
            let v = tilt(w, g, t);
            assert!((v.norm() - 1.0).abs() < 1e-14);
            assert!((v.dot(&w).clamp(-1.0, 1.0).acos() - t).abs() < 1e-7);
        }
        let v = tilt(w, w, 1.0);
        assert!((v.dot(&w) - 1f64.cos()).abs() < 1e-14);
    }
}
