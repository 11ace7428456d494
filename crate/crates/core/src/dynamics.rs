//! Time integration of the branch dynamics along three routes:
//!
//! * the density-matrix equation `dρ/dt = -i[Ω,ρ] + {G,ρ} - 2ρ Tr(Gρ)`,
//! * the Bloch-vector form `dn/dt = ω×n + λg - λ(g·n)n`,
//! * the linear propagator `dK/dt = (-iΩ + G)K`, `K(0) = I`.
//!
//! All three share the same adaptive Dormand–Prince engine and output grid,
//! so their samples can be compared pointwise.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{observable_matrix, Branch, DrivingGenerator, Observable};
use crate::linalg::{validate_density, BlochState, Operator2, C64};
use crate::ode::{Dopri5, StepFailure, StepOptions, StepStats};

/// Propagator matrices are renormalized when their Frobenius norm leaves this band.
pub const RENORM_BAND: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputSpacing {
    Geometric,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationControls {
    pub rtol: f64,
    pub atol: f64,
    /// `None` picks a horizon from the driving profile.
    pub t_end: Option<f64>,
    pub output_points: usize,
    pub output_spacing: OutputSpacing,
    /// First sample of a geometric grid.
    pub t_first_output: f64,
    pub max_steps: u64,
    /// Largest precession angle `|ω| h` allowed in one step, in radians.
    /// Near a fixed point the error estimate alone lets the step grow until
    /// the precession is barely resolved.
    pub max_step_phase: f64,
}

impl Default for IntegrationControls {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            t_end: None,
            output_points: 400,
            output_spacing: OutputSpacing::Geometric,
            t_first_output: 1e-10,
            max_steps: 500_000_000,
            max_step_phase: 1.0,
        }
    }
}

impl IntegrationControls {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.rtol) {
            return Err(Error::param("rtol", "must be positive"));
        }
        if !pos(self.atol) {
            return Err(Error::param("atol", "must be positive"));
        }
        if let Some(t) = self.t_end {
            if !pos(t) {
                return Err(Error::param("t_end", "must be positive"));
            }
        }
        if self.output_points < 2 {
            return Err(Error::param("output_points", "need at least two points"));
        }
        if self.output_spacing == OutputSpacing::Geometric && !pos(self.t_first_output) {
            return Err(Error::param(
                "t_first_output",
                "must be positive for a geometric grid",
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::param("max_steps", "must be positive"));
        }
        if !(self.max_step_phase > 0.0) {
            return Err(Error::param("max_step_phase", "must be positive"));
        }
        Ok(())
    }

    pub fn resolve_t_end(&self, gen: &DrivingGenerator) -> f64 {
        self.t_end.unwrap_or_else(|| gen.profile.default_t_end())
    }

    /// Sample times for a run ending at `t_end`.
    pub fn output_grid(&self, t_end: f64) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.output_points;
        let grid = match self.output_spacing {
            OutputSpacing::Linear => (0..n)
                .map(|k| t_end * k as f64 / (n - 1) as f64)
                .collect::<Vec<_>>(),
            OutputSpacing::Geometric => {
                let t0 = self.t_first_output;
                if t0 >= t_end {
                    return Err(Error::param("t_first_output", "must precede t_end"));
                }
                let ratio = (t_end / t0).ln();
                (0..n)
                    .map(|k| t0 * (ratio * k as f64 / (n - 1) as f64).exp())
                    .collect()
            }
        };
        let mut grid = grid;
        *grid.last_mut().expect("n >= 2") = t_end;
        Ok(grid)
    }

    fn step_options(&self, obs: &Observable) -> StepOptions {
        StepOptions {
            max_step: self.max_step_phase / obs.magnitude(),
            rtol: self.rtol,
            atol: self.atol,
            max_steps: self.max_steps,
        }
    }
}

/// Sampled branch evolution in Bloch form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub branch: Branch,
    pub times: Vec<f64>,
    pub bloch: Vec<BlochState>,
    pub norm: Vec<f64>,
    /// `|dn/dt|` from the right-hand side at each sample, in 1/s.
    pub rate: Vec<f64>,
    pub epsilon: Option<Vec<f64>>,
    /// Times where `ω² = g(t)²`.
    pub crossings: Vec<f64>,
    #[serde(skip)]
    pub stats: StepStats,
}

impl Trajectory {
    pub fn final_state(&self) -> BlochState {
        *self.bloch.last().expect("trajectory has samples")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Largest `||n(t)| - 1|` over the samples.
    pub fn purity_drift(&self) -> f64 {
        self.norm
            .iter()
            .map(|r| (r - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest pointwise Bloch distance to another trajectory on the same grid.
    pub fn max_distance(&self, other: &[BlochState]) -> f64 {
        self.bloch
            .iter()
            .zip(other)
            .map(|(a, b)| a.distance(b))
            .fold(0.0, f64::max)
    }
}

/// `K(t)` up to a positive scale: the true propagator is `exp(log_scale) · matrix`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propagator {
    pub matrix: Operator2,
    pub log_scale: f64,
    pub t: f64,
}

impl Propagator {
    pub fn identity() -> Self {
        Self {
            matrix: Operator2::identity(),
            log_scale: 0.0,
            t: 0.0,
        }
    }

    pub fn from_matrix(matrix: Operator2, t: f64) -> Self {
        Self {
            matrix,
            log_scale: 0.0,
            t,
        }
    }
}

/// Density-route output: Bloch trajectory plus the raw matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEvolution {
    pub trajectory: Trajectory,
    pub densities: Vec<Operator2>,
}

impl DensityEvolution {
    pub fn max_trace_drift(&self) -> f64 {
        self.densities
            .iter()
            .map(|r| (r.trace() - C64::new(1.0, 0.0)).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_purity_drift(&self) -> f64 {
        self.densities
            .iter()
            .map(|r| ((*r * *r).trace().re - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Precomputed pieces of the generators, shared by all right-hand sides.
#[derive(Clone)]
struct Model<'a> {
    omega: Vector3<f64>,
    /// λ ĝ
    lambda_dir: Vector3<f64>,
    gen: &'a DrivingGenerator,
}

impl<'a> Model<'a> {
    fn new(obs: &Observable, gen: &'a DrivingGenerator) -> Self {
        Self {
            omega: obs.vector(),
            lambda_dir: gen.direction.unit() * gen.lambda(),
            gen,
        }
    }

    #[inline]
    fn g(&self, t: f64) -> f64 {
        self.gen.profile.eval(t.max(0.0))
    }

    #[inline]
    fn bloch_rhs(&self, t: f64, n: &[f64; 3]) -> [f64; 3] {
        let n = Vector3::from(*n);
        let lg = self.lambda_dir * self.g(t);
        let d = self.omega.cross(&n) + lg - n * lg.dot(&n);
        [d.x, d.y, d.z]
    }

    /// `(λ/2) g ĝ·σ` as a matrix.
    #[inline]
    fn generator(&self, t: f64) -> Operator2 {
        let v = self.lambda_dir * (0.5 * self.g(t));
        Operator2::dot_sigma([v.x, v.y, v.z])
    }
}

fn pack(m: &Operator2) -> [f64; 8] {
    let e = m.rows();
    [
        e[0][0].re, e[0][0].im, e[0][1].re, e[0][1].im, e[1][0].re, e[1][0].im, e[1][1].re,
        e[1][1].im,
    ]
}

fn unpack(y: &[f64; 8]) -> Operator2 {
    Operator2::from_rows([
        [C64::new(y[0], y[1]), C64::new(y[2], y[3])],
        [C64::new(y[4], y[5]), C64::new(y[6], y[7])],
    ])
}

fn density_rhs_matrix(rho: &Operator2, omega_op: &Operator2, g_op: &Operator2) -> Operator2 {
    let tr_g_rho = (*g_op * *rho).trace();
    omega_op.commutator(rho) * C64::new(0.0, -1.0) + g_op.anticommutator(rho)
        - *rho * (tr_g_rho * 2.0)
}

/// Right-hand side of the density-matrix equation (ħ = 1, `t >= 0`).
pub fn rhs_density(rho: &Operator2, t: f64, obs: &Observable, gen: &DrivingGenerator) -> Operator2 {
    let model = Model::new(obs, gen);
    density_rhs_matrix(rho, &observable_matrix(obs), &model.generator(t))
}

/// Right-hand side of the Bloch equation `ω×n + λgĝ - λ(gĝ·n)n` (ħ = 1).
pub fn rhs_bloch(n: &BlochState, t: f64, obs: &Observable, gen: &DrivingGenerator) -> [f64; 3] {
    Model::new(obs, gen).bloch_rhs(t, &n.components())
}

/// Right-hand side of the propagator equation, `(-iΩ + G(t)) K`.
pub fn rhs_propagator(
    k: &Propagator,
    t: f64,
    obs: &Observable,
    gen: &DrivingGenerator,
) -> Operator2 {
    let model = Model::new(obs, gen);
    propagator_generator(&observable_matrix(obs), &model.generator(t)) * k.matrix
}

#[inline]
fn propagator_generator(omega_op: &Operator2, g_op: &Operator2) -> Operator2 {
    *omega_op * C64::new(0.0, -1.0) + *g_op
}

fn failure<const N: usize>(solver_t: f64, y: &[f64; N], why: StepFailure) -> Error {
    Error::IntegrationFailure {
        t: solver_t,
        state: y.to_vec(),
        reason: why.to_string(),
    }
}

/// Finds times in `[a, b]` where `ω - g(t)` changes sign.
fn scan_crossings(model: &Model<'_>, omega: f64, a: f64, b: f64, out: &mut Vec<f64>) {
    let f = |t: f64| omega - model.g(t);
    let (fa, fb) = (f(a), f(b));
    if fb == 0.0 && fa != 0.0 {
        out.push(b);
        return;
    }
    if fa * fb >= 0.0 {
        return;
    }
    let (mut lo, mut hi, mut flo) = (a, b, fa);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    out.push(0.5 * (lo + hi));
}

/// Adds a tangential touch `g(t_peak) = ω`, which has no sign change.
fn touch_crossing(gen: &DrivingGenerator, omega: f64, t_end: f64, out: &mut Vec<f64>) {
    let (t_peak, g_peak) = gen.profile.peak();
    if (g_peak - omega).abs() <= 1e-9 * omega && t_peak <= t_end {
        let near = out.iter().any(|&c| (c - t_peak).abs() <= 1e-9 * t_end);
        if !near {
            out.push(t_peak);
        }
    }
    out.sort_by(f64::total_cmp);
}

/// Generic driver: integrates, samples on the grid, and lets `after_step`
/// touch the solver between steps.
fn drive<F, const N: usize>(
    mut solver: Dopri5<F, N>,
    grid: &[f64],
    mut sample: impl FnMut(f64, [f64; N]),
    mut after_step: impl FnMut(&mut Dopri5<F, N>, f64, f64),
) -> Result<StepStats>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let mut next = 0;
    while next < grid.len() && grid[next] <= solver.t() {
        sample(grid[next], *solver.y());
        next += 1;
    }
    while !solver.finished() {
        if let Err(why) = solver.step() {
            return Err(failure(solver.t(), solver.y(), why));
        }
        if solver.y().iter().any(|v| !v.is_finite()) {
            return Err(failure(solver.t(), solver.y(), StepFailure::NonFinite));
        }
        while next < grid.len() && grid[next] <= solver.t() {
            sample(grid[next], solver.interpolate(grid[next]));
            next += 1;
        }
        let (a, b) = (solver.step_start(), solver.t());
        after_step(&mut solver, a, b);
    }
    Ok(solver.stats())
}

/// Integrates the Bloch equation and samples it on the output grid.
pub fn integrate_bloch(
    n0: &BlochState,
    obs: &Observable,
    gen: &DrivingGenerator,
    controls: &IntegrationControls,
) -> Result<Trajectory> {
    BlochState::new(n0.components())?;
    let t_end = controls.resolve_t_end(gen);
    let grid = controls.output_grid(t_end)?;
    let model = Model::new(obs, gen);
    let omega = obs.magnitude();

    let mut traj = Trajectory {
        branch: gen.branch,
        times: Vec::with_capacity(grid.len()),
        bloch: Vec::with_capacity(grid.len()),
        norm: Vec::with_capacity(grid.len()),
        rate: Vec::with_capacity(grid.len()),
        epsilon: None,
        crossings: Vec::new(),
        stats: StepStats::default(),
    };
    let solver = Dopri5::new(
        |t, y: &[f64; 3]| model.bloch_rhs(t, y),
        0.0,
        n0.components(),
        t_end,
        controls.step_options(obs),
    );
    let mut crossings = Vec::new();
    let stats = drive(
        solver,
        &grid,
        |t, y| {
            let d = Vector3::from(model.bloch_rhs(t, &y));
            traj.times.push(t);
            traj.bloch.push(BlochState::from_raw(y));
            traj.norm.push(Vector3::from(y).norm());
            traj.rate.push(d.norm());
        },
        |_, a, b| scan_crossings(&model, omega, a, b, &mut crossings),
    )?;
    touch_crossing(gen, omega, t_end, &mut crossings);
    traj.crossings = crossings;
    traj.stats = stats;
    Ok(traj)
}

/// Integrates the density-matrix equation directly.
pub fn evolve_density(
    rho0: &Operator2,
    obs: &Observable,
    gen: &DrivingGenerator,
    controls: &IntegrationControls,
) -> Result<DensityEvolution> {
    validate_density(rho0)?;
    let t_end = controls.resolve_t_end(gen);
    let grid = controls.output_grid(t_end)?;
    let model = Model::new(obs, gen);
    let omega_op = observable_matrix(obs);
    let omega = obs.magnitude();

    let rhs = |t: f64, y: &[f64; 8]| {
        pack(&density_rhs_matrix(
            &unpack(y),
            &omega_op,
            &model.generator(t),
        ))
    };
    let mut densities = Vec::with_capacity(grid.len());
    let mut traj = Trajectory {
        branch: gen.branch,
        times: Vec::with_capacity(grid.len()),
        bloch: Vec::with_capacity(grid.len()),
        norm: Vec::with_capacity(grid.len()),
        rate: Vec::with_capacity(grid.len()),
        epsilon: None,
        crossings: Vec::new(),
        stats: StepStats::default(),
    };
    let solver = Dopri5::new(rhs, 0.0, pack(rho0), t_end, controls.step_options(obs));
    let mut crossings = Vec::new();
    let stats = drive(
        solver,
        &grid,
        |t, y| {
            let rho = unpack(&y);
            let n = rho.pauli_components();
            let dn = unpack(&rhs(t, &y)).pauli_components();
            densities.push(rho);
            traj.times.push(t);
            traj.bloch.push(BlochState::from_raw(n));
            traj.norm.push(Vector3::from(n).norm());
            traj.rate.push(Vector3::from(dn).norm());
        },
        |_, a, b| scan_crossings(&model, omega, a, b, &mut crossings),
    )?;
    touch_crossing(gen, omega, t_end, &mut crossings);
    traj.crossings = crossings;
    traj.stats = stats;
    Ok(DensityEvolution {
        trajectory: traj,
        densities,
    })
}

/// Integrates `dK/dt = (-iΩ + G)K` from `K(0) = I`, dividing out the
/// Frobenius norm whenever it leaves [`RENORM_BAND`].
pub fn integrate_propagator(
    obs: &Observable,
    gen: &DrivingGenerator,
    controls: &IntegrationControls,
) -> Result<Vec<Propagator>> {
    let t_end = controls.resolve_t_end(gen);
    let grid = controls.output_grid(t_end)?;
    let model = Model::new(obs, gen);
    let omega_op = observable_matrix(obs);

    let rhs = |t: f64, y: &[f64; 8]| {
        pack(&(propagator_generator(&omega_op, &model.generator(t)) * unpack(y)))
    };
    let mut samples = Vec::with_capacity(grid.len());
    let solver = Dopri5::new(
        rhs,
        0.0,
        pack(&Operator2::identity()),
        t_end,
        controls.step_options(obs),
    );
    // Accumulated log of divided-out norms, shared by both callbacks.
    let scale = std::cell::Cell::new(0.0f64);
    drive(
        solver,
        &grid,
        |t, y| {
            samples.push(Propagator {
                matrix: unpack(&y),
                log_scale: scale.get(),
                t,
            })
        },
        |solver, _, _| {
            let norm = unpack(solver.y()).frobenius_norm();
            if !(RENORM_BAND.0..=RENORM_BAND.1).contains(&norm) && norm > 0.0 {
                solver.rescale(1.0 / norm);
                scale.set(scale.get() + norm.ln());
            }
        },
    )?;
    Ok(samples)
}
