//! Selective measurement pipeline: Born-rule branch choice, the conditional
//! quasilinear evolution, the Kraus-form state map and ε(t), and the
//! von Neumann update the evolution is compared against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_bloch, integrate_propagator, IntegrationControls, Propagator};
use crate::error::{Error, Result};
use crate::generators::{
    theta_angle, Branch, Direction, DrivingGenerator, DrivingProfile, Observable,
    NEAR_CRITICAL_THRESHOLD,
};
use crate::linalg::{
    bloch_to_density_unchecked, density_to_bloch, validate_density, validate_hermitian_unit_trace,
    BlochState, Operator2,
};

/// Probabilities below this are treated as an impossible outcome.
pub const ZERO_PROBABILITY: f64 = 1e-14;
/// `Tr(Kρ₀K†)/|K|²` below this means the branch has no weight left.
pub const EXTINCTION_RATIO: f64 = 1e-14;
/// Default `|n(t_end) - λω̂|` bound for the `converged` flag.
pub const CONVERGENCE_TOL: f64 = 1e-5;
/// ε(t) outside `[0, 1]` by less than this is clamped.
pub const EPSILON_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialState {
    Bloch(BlochState),
    Density(Operator2),
}

impl InitialState {
    pub fn density(&self) -> Operator2 {
        match self {
            InitialState::Bloch(n) => bloch_to_density_unchecked(n.components()),
            InitialState::Density(rho) => *rho,
        }
    }

    pub fn bloch(&self) -> BlochState {
        match self {
            InitialState::Bloch(n) => *n,
            InitialState::Density(rho) => BlochState::from_raw(rho.pauli_components()),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            InitialState::Bloch(n) => BlochState::new(n.components()).map(drop),
            InitialState::Density(rho) => validate_density(rho),
        }
    }
}

/// Everything needed to run one measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub observable: Observable,
    pub direction: Direction,
    pub profile: DrivingProfile,
    pub initial: InitialState,
    pub controls: IntegrationControls,
    pub seed: u64,
    pub convergence_tol: f64,
    pub near_critical_threshold: f64,
}

impl Scenario {
    pub fn new(
        observable: Observable,
        direction: Direction,
        profile: DrivingProfile,
        initial: InitialState,
    ) -> Self {
        Self {
            observable,
            direction,
            profile,
            initial,
            controls: IntegrationControls::default(),
            seed: 0,
            convergence_tol: CONVERGENCE_TOL,
            near_critical_threshold: NEAR_CRITICAL_THRESHOLD,
        }
    }

    pub fn with_initial(mut self, initial: InitialState) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_controls(mut self, controls: IntegrationControls) -> Self {
        self.controls = controls;
        self
    }

    pub fn generator(&self, branch: Branch) -> DrivingGenerator {
        DrivingGenerator::new(branch, self.direction, self.profile.clone())
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        self.controls.validate()?;
        self.initial.validate()?;
        if !(self.convergence_tol > 0.0) {
            return Err(Error::param("convergence_tol", "must be positive"));
        }
        Ok(())
    }

    pub fn theta(&self) -> crate::generators::ThetaAngle {
        theta_angle(
            &self.observable,
            &self.direction,
            self.near_critical_threshold,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "branch")]
pub enum Mode {
    /// Draw λ from the Born rule using the scenario seed.
    Sampled,
    /// Force the branch.
    Conditioned(Branch),
}

/// Outcome of one selective measurement run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub branch: Branch,
    pub probability: f64,
    pub trajectory: crate::dynamics::Trajectory,
    pub final_bloch: BlochState,
    /// Bloch vector of the projective (von Neumann) post-measurement state.
    pub vn_reference: BlochState,
    pub final_error: f64,
    pub converged: bool,
    pub theta: f64,
    pub near_critical: bool,
    /// Largest Bloch distance between the Bloch-equation and propagator routes.
    pub route_discrepancy: Option<f64>,
}

/// `(p_+, p_-)` with `p_λ = Tr(Π_λ ρ₀) = (1 + λ ω̂·n₀)/2`.
pub fn born_probabilities(rho0: &Operator2, obs: &Observable) -> Result<(f64, f64)> {
    validate_density(rho0)?;
    let n = density_to_bloch(rho0)?.vector();
    let p_plus = 0.5 * (1.0 + obs.unit().dot(&n));
    let p_plus = p_plus.clamp(0.0, 1.0);
    // 1 - p rounds so that the pair sums to exactly one.
    Ok((p_plus, 1.0 - p_plus))
}

/// Born-rule draw. The uniform variate is the first `f64` from a ChaCha8
/// stream seeded with `seed`, so results are reproducible across platforms.
pub fn sample_branch(rho0: &Operator2, obs: &Observable, seed: u64) -> Result<Branch> {
    let (p_plus, _) = born_probabilities(rho0, obs)?;
    let u: f64 = ChaCha8Rng::seed_from_u64(seed).random();
    Ok(if u < p_plus {
        Branch::Plus
    } else {
        Branch::Minus
    })
}

/// `Πρ₀Π / Tr(Πρ₀)`.
pub fn von_neumann_update(rho0: &Operator2, projector: &Operator2) -> Result<Operator2> {
    validate_hermitian_unit_trace(rho0)?;
    if !projector.is_hermitian(1e-12) || (*projector * *projector).distance(projector) > 1e-12 {
        return Err(Error::InvalidOperator("not an orthogonal projector".into()));
    }
    let p = (*projector * *rho0).trace().re;
    if !(p > ZERO_PROBABILITY) {
        return Err(Error::ZeroProbabilityBranch(p));
    }
    Ok(projector.sandwich(rho0) * (1.0 / p))
}

/// `Tr(Kρ₀K†)` with an extinction check relative to `|K|²`.
pub(crate) fn kraus_weight(k: &Propagator, rho: &Operator2) -> Result<(Operator2, f64)> {
    let num = k.matrix.sandwich(rho);
    let tr = num.trace().re;
    let scale = k.matrix.frobenius_norm().powi(2);
    let ratio = tr / scale;
    if !(ratio > EXTINCTION_RATIO) || !tr.is_finite() {
        return Err(Error::BranchExtinction { t: k.t, ratio });
    }
    Ok((num, tr))
}

/// `Kρ₀K† / Tr(Kρ₀K†)`; independent of any positive rescaling of `K`.
pub fn kraus_state(k: &Propagator, rho0: &Operator2) -> Result<Operator2> {
    let (num, tr) = kraus_weight(k, rho0)?;
    Ok(num * (1.0 / tr))
}

/// `ε(t) = ε₀ Tr(Kρ_a0K†) / Tr(Kρ₀K†)`.
///
/// Values within [`EPSILON_SLACK`] of `[0, 1]` are clamped; anything further
/// out is returned as is so callers can report it.
pub fn epsilon_of_t(
    k: &Propagator,
    rho_a0: &Operator2,
    rho0: &Operator2,
    eps0: f64,
) -> Result<f64> {
    let (_, tr_mix) = kraus_weight(k, rho0)?;
    let tr_a = k.matrix.sandwich(rho_a0).trace().re;
    let eps = eps0 * tr_a / tr_mix;
    Ok(if (-EPSILON_SLACK..0.0).contains(&eps) {
        0.0
    } else if eps > 1.0 && eps <= 1.0 + EPSILON_SLACK {
        1.0
    } else {
        eps
    })
}

/// Bloch vectors of `kraus_state(K(t), ρ₀)` along a propagator path.
pub fn kraus_trajectory(props: &[Propagator], rho0: &Operator2) -> Result<Vec<BlochState>> {
    props
        .iter()
        .map(|k| kraus_state(k, rho0).map(|r| BlochState::from_raw(r.pauli_components())))
        .collect()
}

/// Splits `ρ₀` into its two eigenprojectors: `ρ₀ = ε₀ ρ_a + (1-ε₀) ρ_b`.
/// For the maximally mixed state the split is along `fallback`.
pub fn eigen_decomposition(n0: &BlochState, fallback: [f64; 3]) -> (Operator2, Operator2, f64) {
    let r = n0.norm();
    let axis = if r > 1e-12 {
        n0.vector() / r
    } else {
        nalgebra::Vector3::from(fallback).normalize()
    };
    let a = bloch_to_density_unchecked([axis.x, axis.y, axis.z]);
    let b = bloch_to_density_unchecked([-axis.x, -axis.y, -axis.z]);
    (a, b, 0.5 * (1.0 + r))
}

pub fn select_branch(rho0: &Operator2, obs: &Observable, mode: Mode, seed: u64) -> Result<Branch> {
    match mode {
        Mode::Conditioned(b) => Ok(b),
        Mode::Sampled => sample_branch(rho0, obs, seed),
    }
}

/// Runs the full pipeline for a single qubit.
pub fn run_measurement(scenario: &Scenario, mode: Mode) -> Result<MeasurementRecord> {
    measure(scenario, mode).map(|(record, _)| record)
}

/// [`run_measurement`] that also hands back the propagator samples.
pub(crate) fn measure(
    scenario: &Scenario,
    mode: Mode,
) -> Result<(MeasurementRecord, Vec<Propagator>)> {
    scenario.validate()?;
    let obs = &scenario.observable;
    let rho0 = scenario.initial.density();
    let n0 = scenario.initial.bloch();
    let (p_plus, p_minus) = born_probabilities(&rho0, obs)?;
    let branch = select_branch(&rho0, obs, mode, scenario.seed)?;
    let probability = match branch {
        Branch::Plus => p_plus,
        Branch::Minus => p_minus,
    };
    if probability <= ZERO_PROBABILITY {
        return Err(Error::ZeroProbabilityBranch(probability));
    }

    let gen = scenario.generator(branch);
    let mut trajectory = integrate_bloch(&n0, obs, &gen, &scenario.controls)?;
    let props = integrate_propagator(obs, &gen, &scenario.controls)?;
    let kraus = kraus_trajectory(&props, &rho0)?;
    let route_discrepancy = trajectory.max_distance(&kraus);

    let omega_hat = obs.unit();
    let (rho_a, _, eps0) = eigen_decomposition(&n0, [omega_hat.x, omega_hat.y, omega_hat.z]);
    let epsilon = props
        .iter()
        .map(|k| epsilon_of_t(k, &rho_a, &rho0, eps0))
        .collect::<Result<Vec<_>>>()?;
    trajectory.epsilon = Some(epsilon);

    let final_bloch = trajectory.final_state();
    let vn_reference = obs.eigenstate(branch);
    let final_error = final_bloch.distance(&vn_reference);
    let theta = scenario.theta();
    let record = MeasurementRecord {
        branch,
        probability,
        trajectory,
        final_bloch,
        vn_reference,
        final_error,
        converged: final_error < scenario.convergence_tol,
        theta: theta.theta,
        near_critical: theta.near_critical,
        route_discrepancy: Some(route_discrepancy),
    };
    Ok((record, props))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::bloch_to_density;
    use crate::testutil::{random_bloch, random_op};
    use std::f64::consts::PI;

    fn fig2_obs() -> Observable {
        Observable::from_polar(1e9, PI / 3.0, PI / 6.0).unwrap()
    }

    fn fig2_n0() -> BlochState {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        BlochState::new([-s * s, 0.0, -s * s]).unwrap()
    }

    #[test]
    fn born_rule_cases() {
        let obs = fig2_obs();
        let (p, m) = born_probabilities(&(Operator2::identity() * 0.5), &obs).unwrap();
        assert_eq!((p, m), (0.5, 0.5));
        let (p, m) = born_probabilities(&obs.projector(Branch::Plus), &obs).unwrap();
        assert!((p - 1.0).abs() < 1e-15 && m.abs() < 1e-15);

        // ω̂·n₀ = -5/8 for the figure-2 initial state.
        let rho0 = bloch_to_density(&fig2_n0()).unwrap();
        let (p, m) = born_probabilities(&rho0, &obs).unwrap();
        assert!((p - 3.0 / 16.0).abs() < 1e-15, "{p}");
        assert!((m - 13.0 / 16.0).abs() < 1e-15, "{m}");
        assert_eq!(p + m, 1.0);
    }

    #[test]
    fn born_pair_sums_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let obs = fig2_obs();
        for _ in 0..1000 {
            let rho = bloch_to_density(&random_bloch(&mut rng, false)).unwrap();
            let (p, m) = born_probabilities(&rho, &obs).unwrap();
            assert_eq!(p + m, 1.0);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_respects_certainty() {
        let obs = fig2_obs();
        let plus = obs.projector(Branch::Plus);
        for seed in 0..200 {
            assert_eq!(sample_branch(&plus, &obs, seed).unwrap(), Branch::Plus);
        }
        let mixed = Operator2::identity() * 0.5;
        let a = sample_branch(&mixed, &obs, 42).unwrap();
        for _ in 0..5 {
            assert_eq!(sample_branch(&mixed, &obs, 42).unwrap(), a);
        }
    }

    #[test]
    fn von_neumann_cases() {
        let obs = fig2_obs();
        let (p, m) = (obs.projector(Branch::Plus), obs.projector(Branch::Minus));
        assert!(von_neumann_update(&p, &p).unwrap().distance(&p) < 1e-15);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let rho = bloch_to_density(&random_bloch(&mut rng, false)).unwrap();
            assert!(von_neumann_update(&rho, &p).unwrap().distance(&p) < 1e-12);
        }
        assert!(matches!(
            von_neumann_update(&m, &p),
            Err(Error::ZeroProbabilityBranch(_))
        ));
    }

    #[test]
    fn kraus_state_cases() {
        let obs = fig2_obs();
        let rho0 = bloch_to_density(&fig2_n0()).unwrap();
        let id = Propagator::identity();
        assert!(kraus_state(&id, &rho0).unwrap().distance(&rho0) < 1e-15);

        let p = obs.projector(Branch::Plus);
        let kp = Propagator::from_matrix(p, 1.0);
        let vn = von_neumann_update(&rho0, &p).unwrap();
        assert!(kraus_state(&kp, &rho0).unwrap().distance(&vn) < 1e-14);

        let m = obs.projector(Branch::Minus);
        assert!(matches!(
            kraus_state(&kp, &m),
            Err(Error::BranchExtinction { .. })
        ));
    }

    #[test]
    fn kraus_state_valid_and_scale_free() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let k = Propagator::from_matrix(random_op(&mut rng), 0.0);
            let pure = rng.random_bool(0.5);
            let rho = bloch_to_density(&random_bloch(&mut rng, pure)).unwrap();
            let out = kraus_state(&k, &rho).unwrap();
            assert!((out.trace().re - 1.0).abs() < 1e-12);
            assert!(out.eigenvalues_2x2()[0] >= -1e-12);
            let c: f64 = rng.random_range(1e-3..1e3);
            let scaled = Propagator::from_matrix(k.matrix * c, 0.0);
            assert!(kraus_state(&scaled, &rho).unwrap().distance(&out) < 1e-13);
        }
    }

    #[test]
    fn epsilon_trivial_cases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = bloch_to_density(&random_bloch(&mut rng, false)).unwrap();
        let b = bloch_to_density(&random_bloch(&mut rng, false)).unwrap();
        let mix = a * 0.3 + b * 0.7;
        let eps = epsilon_of_t(&Propagator::identity(), &a, &mix, 0.3).unwrap();
        assert!((eps - 0.3).abs() < 1e-15);
        let k = Propagator::from_matrix(random_op(&mut rng), 1.0);
        assert!((epsilon_of_t(&k, &a, &a, 0.3).unwrap() - 0.3).abs() < 1e-14);
        let e = epsilon_of_t(&k, &a, &mix, 0.3).unwrap();
        assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn eigen_decomposition_reconstructs() {
        let n0 = fig2_n0();
        let (a, b, e) = eigen_decomposition(&n0, [0.0, 0.0, 1.0]);
        let rho = bloch_to_density(&n0).unwrap();
        assert!((a * e + b * (1.0 - e)).distance(&rho) < 1e-15);
        let (a, b, e) = eigen_decomposition(&BlochState::MAXIMALLY_MIXED, [0.0, 0.0, 1.0]);
        assert_eq!(e, 0.5);
        assert!((a * e + b * (1.0 - e)).distance(&(Operator2::identity() * 0.5)) < 1e-15);
    }

    #[test]
    fn conditioning_on_impossible_branch_fails() {
        let obs = fig2_obs();
        let scenario = Scenario::new(
            obs,
            Direction::new(PI / 6.0, -PI / 3.0).unwrap(),
            DrivingProfile::inverted_morse(1e9, 1e5).unwrap(),
            InitialState::Bloch(obs.eigenstate(Branch::Minus)),
        );
        assert!(matches!(
            run_measurement(&scenario, Mode::Conditioned(Branch::Plus)),
            Err(Error::ZeroProbabilityBranch(_))
        ));
    }
}
