//! Property checks that return measured residuals instead of panicking.
//!
//! All residuals use the Frobenius norm on density matrices, which is half
//! the Euclidean distance between Bloch vectors.

use nalgebra::Vector3;
use rand::Rng;
use serde::Serialize;

use crate::dynamics::{
    evolve_density, integrate_bloch, integrate_propagator, DensityEvolution, Propagator,
};
use crate::error::{Error, Result};
use crate::generators::{Branch, DrivingGenerator};
use crate::linalg::{bloch_to_density, validate_density, BlochState, Operator2};
use crate::measurement::{epsilon_of_t, kraus_trajectory, Scenario};

/// Residuals below this count as identical reconstructions of `ρ₀`.
pub const DECOMPOSITION_TOL: f64 = 1e-12;

pub fn frobenius_residual(a: &Operator2, b: &Operator2) -> f64 {
    a.distance(b)
}

/// Result of a check that may legitimately run into an extinct branch.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome<R> {
    Completed(R),
    /// A component state has no weight left on the selected branch.
    BranchExtinct {
        t: f64,
        ratio: f64,
    },
}

impl<R> Outcome<R> {
    pub fn completed(self) -> Option<R> {
        match self {
            Outcome::Completed(r) => Some(r),
            Outcome::BranchExtinct { .. } => None,
        }
    }
}

fn catch_extinction<R>(r: Result<R>) -> Result<Outcome<R>> {
    match r {
        Ok(v) => Ok(Outcome::Completed(v)),
        Err(Error::BranchExtinction { t, ratio }) => Ok(Outcome::BranchExtinct { t, ratio }),
        Err(e) => Err(e),
    }
}

/// One scenario and branch with the propagator integrated up front, so
/// several initial states can be evolved against the same `K(t)`.
#[derive(Debug, Clone)]
pub struct BranchEvolver {
    scenario: Scenario,
    generator: DrivingGenerator,
    propagators: Vec<Propagator>,
}

impl BranchEvolver {
    pub fn new(scenario: &Scenario, branch: Branch) -> Result<Self> {
        scenario.validate()?;
        let generator = scenario.generator(branch);
        let propagators =
            integrate_propagator(&scenario.observable, &generator, &scenario.controls)?;
        Ok(Self {
            scenario: scenario.clone(),
            generator,
            propagators,
        })
    }

    pub fn times(&self) -> Vec<f64> {
        self.propagators.iter().map(|k| k.t).collect()
    }

    pub fn propagators(&self) -> &[Propagator] {
        &self.propagators
    }

    /// `Φ_t(ρ₀)` from the density-matrix equation.
    pub fn evolve(&self, rho0: &Operator2) -> Result<DensityEvolution> {
        evolve_density(
            rho0,
            &self.scenario.observable,
            &self.generator,
            &self.scenario.controls,
        )
    }

    /// `ε(t)` for `ρ₀ = ε₀ρ_a0 + (1-ε₀)ρ_b0`.
    pub fn epsilon(&self, rho_a0: &Operator2, rho0: &Operator2, eps0: f64) -> Result<Vec<f64>> {
        self.propagators
            .iter()
            .map(|k| epsilon_of_t(k, rho_a0, rho0, eps0))
            .collect()
    }

    /// Evolves both parts of a decomposition and rebuilds the mixture.
    fn reconstruct(&self, d: &Decomposition) -> Result<(Vec<Operator2>, Vec<f64>)> {
        let rho0 = d.mixture();
        let eps = self.epsilon(&d.a, &rho0, d.weight)?;
        let a = self.evolve(&d.a)?.densities;
        let b = self.evolve(&d.b)?.densities;
        let mix = eps
            .iter()
            .zip(a.iter().zip(&b))
            .map(|(&e, (ra, rb))| *ra * e + *rb * (1.0 - e))
            .collect();
        Ok((mix, eps))
    }
}

/// `ρ₀ = weight · a + (1 - weight) · b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub a: Operator2,
    pub b: Operator2,
    pub weight: f64,
}

impl Decomposition {
    pub fn new(a: Operator2, b: Operator2, weight: f64) -> Result<Self> {
        validate_density(&a)?;
        validate_density(&b)?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::param("eps0", "must lie in [0, 1]"));
        }
        Ok(Self { a, b, weight })
    }

    pub fn mixture(&self) -> Operator2 {
        self.a * self.weight + self.b * (1.0 - self.weight)
    }

    /// Random split of `n0`: `a` is uniform in the ball, `b` lies on the ray
    /// from `a` through `n0`, at a random fraction of the way to the sphere.
    pub fn random_split(n0: &BlochState, rng: &mut impl Rng) -> Result<Self> {
        let n = n0.vector();
        let m_a = loop {
            let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            if v.norm_squared() <= 1.0 {
                break v;
            }
        };
        let d = n - m_a;
        // Largest s with |n + s d| <= 1.
        let (qa, qb, qc) = (d.norm_squared(), 2.0 * n.dot(&d), n.norm_squared() - 1.0);
        let s_max = if qa > 0.0 {
            (-qb + (qb * qb - 4.0 * qa * qc).max(0.0).sqrt()) / (2.0 * qa)
        } else {
            1.0
        };
        let s = rng.random_range(0.05..0.95) * s_max;
        let m_b = n + d * s;
        Self::new(
            bloch_to_density(&BlochState::from(m_a))?,
            bloch_to_density(&BlochState::from(m_b))?,
            s / (1.0 + s),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasilinearityReport {
    pub times: Vec<f64>,
    /// `‖Φ_t(mix) - [εΦ_t(ρ_a0) + (1-ε)Φ_t(ρ_b0)]‖` per sample.
    pub residual: Vec<f64>,
    pub max_residual: f64,
    pub epsilon: Vec<f64>,
    /// Largest distance of ε(t) outside `[0, 1]`.
    pub max_epsilon_violation: f64,
}

/// Compares the evolved mixture with the ε(t)-weighted mixture of the
/// evolved components.
pub fn check_quasilinearity(
    decomposition: &Decomposition,
    evolver: &BranchEvolver,
) -> Result<Outcome<QuasilinearityReport>> {
    catch_extinction((|| {
        let (rebuilt, epsilon) = evolver.reconstruct(decomposition)?;
        let direct = evolver.evolve(&decomposition.mixture())?.densities;
        let residual: Vec<f64> = direct
            .iter()
            .zip(&rebuilt)
            .map(|(a, b)| frobenius_residual(a, b))
            .collect();
        let max_epsilon_violation = epsilon
            .iter()
            .map(|&e| (-e).max(e - 1.0).max(0.0))
            .fold(0.0, f64::max);
        Ok(QuasilinearityReport {
            times: evolver.times(),
            max_residual: residual.iter().copied().fold(0.0, f64::max),
            residual,
            epsilon,
            max_epsilon_violation,
        })
    })())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub times: Vec<f64>,
    pub residual: Vec<f64>,
    pub max_residual: f64,
}

/// Evolves two decompositions of one `ρ₀` and compares the rebuilt states.
pub fn check_ensemble_equivalence(
    first: &Decomposition,
    second: &Decomposition,
    evolver: &BranchEvolver,
) -> Result<Outcome<EnsembleReport>> {
    let gap = frobenius_residual(&first.mixture(), &second.mixture());
    if gap > DECOMPOSITION_TOL {
        return Err(Error::Usage(format!(
            "decompositions describe different states (gap {gap:e})"
        )));
    }
    catch_extinction((|| {
        let (x, _) = evolver.reconstruct(first)?;
        let (y, _) = evolver.reconstruct(second)?;
        let residual: Vec<f64> = x
            .iter()
            .zip(&y)
            .map(|(a, b)| frobenius_residual(a, b))
            .collect();
        Ok(EnsembleReport {
            times: evolver.times(),
            max_residual: residual.iter().copied().fold(0.0, f64::max),
            residual,
        })
    })())
}

/// Pairwise Bloch-vector gaps between the three integration routes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValidationReport {
    pub branch: Branch,
    pub times: Vec<f64>,
    pub bloch_density: Vec<f64>,
    pub bloch_propagator: Vec<f64>,
    pub density_propagator: Vec<f64>,
    pub max_bloch_density: f64,
    pub max_bloch_propagator: f64,
    pub max_density_propagator: f64,
    /// Set when Θ is close to π/2; the gaps are then informational only.
    pub near_critical: bool,
    pub conservation: ConservationReport,
}

impl CrossValidationReport {
    pub fn max_discrepancy(&self) -> f64 {
        self.max_bloch_density
            .max(self.max_bloch_propagator)
            .max(self.max_density_propagator)
    }
}

/// Drift of the conserved quantities along the density route.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationReport {
    pub max_trace_drift: f64,
    /// `max_t ||n(t)| - 1|`; only meaningful for pure initial states.
    pub max_purity_drift: Option<f64>,
    /// Largest `|n(t)|` seen on any route.
    pub max_bloch_norm: f64,
}

fn pointwise(a: &[BlochState], b: &[BlochState]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x.distance(y)).collect()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Runs the Bloch, density and propagator routes for one branch.
pub fn cross_validate(scenario: &Scenario, branch: Branch) -> Result<CrossValidationReport> {
    scenario.validate()?;
    let gen = scenario.generator(branch);
    let obs = &scenario.observable;
    let n0 = scenario.initial.bloch();
    let rho0 = scenario.initial.density();
    let bloch = integrate_bloch(&n0, obs, &gen, &scenario.controls)?;
    let density = evolve_density(&rho0, obs, &gen, &scenario.controls)?;
    let props = integrate_propagator(obs, &gen, &scenario.controls)?;
    let kraus = kraus_trajectory(&props, &rho0)?;

    let bd = pointwise(&bloch.bloch, &density.trajectory.bloch);
    let bp = pointwise(&bloch.bloch, &kraus);
    let dp = pointwise(&density.trajectory.bloch, &kraus);
    let pure = (n0.norm() - 1.0).abs() < 1e-12;
    let max_bloch_norm = bloch
        .norm
        .iter()
        .chain(&density.trajectory.norm)
        .chain(
            kraus
                .iter()
                .map(BlochState::norm)
                .collect::<Vec<_>>()
                .iter(),
        )
        .copied()
        .fold(0.0, f64::max);
    let conservation = ConservationReport {
        max_trace_drift: density.max_trace_drift(),
        max_purity_drift: pure.then(|| bloch.purity_drift().max(density.trajectory.purity_drift())),
        max_bloch_norm,
    };
    Ok(CrossValidationReport {
        branch,
        times: bloch.times,
        max_bloch_density: max_of(&bd),
        max_bloch_propagator: max_of(&bp),
        max_density_propagator: max_of(&dp),
        bloch_density: bd,
        bloch_propagator: bp,
        density_propagator: dp,
        near_critical: scenario.theta().near_critical,
        conservation,
    })
}
