//! Local measurement on one half of a two-qubit state.
//!
//! The propagator acts as `K(t) ⊗ I`. The A marginal then follows the
//! single-qubit Kraus map of `ρ_A0`, while the B marginal picks up the
//! correlation tensor through
//!
//! ```text
//! n_Bj(t) = [n_Bj Tr(KK†) + T_ij Tr(Kσ_iK†)] / (2 Tr(Kρ_A0K†))
//! ```

use nalgebra::Vector3;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::dynamics::{Propagator, Trajectory};
use crate::error::{Error, Result};
use crate::generators::{generator_matrix, observable_matrix, DrivingGenerator};
use crate::linalg::{
    partial_trace_unchecked, tensor, two_qubit_assemble, BlochState, Operator2, Operator4,
    Subsystem, TwoQubitState, PAULI,
};
use crate::measurement::{
    kraus_state, kraus_weight, measure, InitialState, MeasurementRecord, Mode, Scenario,
    ZERO_PROBABILITY,
};

/// `(K⊗I)ρ₀(K†⊗I)` normalized to unit trace.
pub fn local_evolve(state: &TwoQubitState, k: &Propagator) -> Result<Operator4> {
    let rho = two_qubit_assemble(state)?;
    // Tr((K⊗I)ρ(K⊗I)†) = Tr(Kρ_AK†); reuse the single-qubit extinction guard.
    let (_, tr) = kraus_weight(k, &state.density_a())?;
    let kk = tensor(&k.matrix, &Operator2::identity());
    Ok(kk.sandwich(&rho) * (1.0 / tr))
}

/// A marginal: the single-qubit Kraus map of `ρ_A0`.
pub fn reduced_a(state: &TwoQubitState, k: &Propagator) -> Result<Operator2> {
    kraus_state(k, &state.density_a())
}

/// B marginal from the closed form in the module docs.
pub fn reduced_b(state: &TwoQubitState, k: &Propagator) -> Result<Operator2> {
    Ok(crate::linalg::bloch_to_density_unchecked(b_vector(
        state, &k.matrix, k.t,
    )?))
}

fn b_vector(state: &TwoQubitState, k: &Operator2, t: f64) -> Result<[f64; 3]> {
    let w = LocalTraces::new(state, k);
    let den = 2.0 * w.norm;
    let ratio = w.norm / k.frobenius_norm().powi(2);
    if !(ratio > crate::measurement::EXTINCTION_RATIO) {
        return Err(Error::BranchExtinction { t, ratio });
    }
    Ok(std::array::from_fn(|j| w.numerator(state, j) / den))
}

/// `Tr(KK†)`, `Tr(Kσ_iK†)` and `Tr(Kρ_A0K†)` for one `K`.
struct LocalTraces {
    id: f64,
    sigma: [f64; 3],
    norm: f64,
}

impl LocalTraces {
    fn new(state: &TwoQubitState, k: &Operator2) -> Self {
        Self::with(state, |x| k.sandwich(x).trace().re)
    }

    fn with(state: &TwoQubitState, f: impl Fn(&Operator2) -> f64) -> Self {
        let id = f(&Operator2::identity());
        let sigma = [f(&PAULI[0]), f(&PAULI[1]), f(&PAULI[2])];
        let norm = 0.5 * (id + (0..3).map(|i| state.n_a[i] * sigma[i]).sum::<f64>());
        Self { id, sigma, norm }
    }

    fn numerator(&self, state: &TwoQubitState, j: usize) -> f64 {
        state.n_b[j] * self.id + (0..3).map(|i| state.t[i][j] * self.sigma[i]).sum::<f64>()
    }
}

/// `|dn_B/dt|` using `d/dt Tr(KXK†) = 2 Re Tr(M KXK†)` with `M = -iΩ + G(t)`.
fn b_rate(
    state: &TwoQubitState,
    k: &Operator2,
    omega_op: &Operator2,
    gen: &DrivingGenerator,
    t: f64,
) -> Result<f64> {
    let m = *omega_op * C64::new(0.0, -1.0) + generator_matrix(gen, t)?;
    let w = LocalTraces::new(state, k);
    let dw = LocalTraces::with(state, |x| 2.0 * (m * k.sandwich(x)).trace().re);
    let d = (0..3)
        .map(|j| {
            let c = w.numerator(state, j) / (2.0 * w.norm);
            (dw.numerator(state, j) / (2.0 * w.norm)) - c * dw.norm / w.norm
        })
        .collect::<Vec<_>>();
    Ok(Vector3::new(d[0], d[1], d[2]).norm())
}

/// Projective local update and its marginals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalProjection {
    pub joint: Operator4,
    pub reduced_a: Operator2,
    pub reduced_b: Operator2,
}

/// `(Π⊗I)ρ₀(Π⊗I) / Tr(...)` and both partial traces.
pub fn local_von_neumann(state: &TwoQubitState, projector: &Operator2) -> Result<LocalProjection> {
    let rho = two_qubit_assemble(state)?;
    let pp = tensor(projector, &Operator2::identity());
    let num = pp.sandwich(&rho);
    let p = num.trace().re;
    if !(p > ZERO_PROBABILITY) {
        return Err(Error::ZeroProbabilityBranch(p));
    }
    let joint = num * (1.0 / p);
    Ok(LocalProjection {
        joint,
        reduced_a: partial_trace_unchecked(&joint, Subsystem::A),
        reduced_b: partial_trace_unchecked(&joint, Subsystem::B),
    })
}

/// Both marginals of a local measurement plus joint-state diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntangledRecord {
    pub a: MeasurementRecord,
    /// B marginal; `vn_reference` is the B marginal of the projected joint state.
    pub b: MeasurementRecord,
    /// `T_ij(t)` on the output grid.
    pub correlations: Vec<[[f64; 3]; 3]>,
    pub projective: TwoQubitState,
    pub min_joint_eigenvalue: f64,
    /// Largest gap between the closed-form marginals and partial traces of the joint state.
    pub formula_discrepancy: f64,
}

/// Measures subsystem A of `state`. The scenario's own initial state is
/// replaced by the A marginal.
pub fn run_entangled_measurement(
    state: &TwoQubitState,
    scenario: &Scenario,
    mode: Mode,
) -> Result<EntangledRecord> {
    let rho0 = two_qubit_assemble(state)?;
    let rho_a0 = partial_trace_unchecked(&rho0, Subsystem::A);
    let scenario = scenario
        .clone()
        .with_initial(InitialState::Bloch(BlochState::from_raw(
            rho_a0.pauli_components(),
        )));
    let (a, props) = measure(&scenario, mode)?;
    let gen = scenario.generator(a.branch);
    let omega_op = observable_matrix(&scenario.observable);

    let mut bloch_b = Vec::with_capacity(props.len());
    let mut rate_b = Vec::with_capacity(props.len());
    let mut correlations = Vec::with_capacity(props.len());
    let mut min_eig = f64::INFINITY;
    let mut discrepancy = 0.0f64;
    for k in &props {
        let joint = local_evolve(state, k)?;
        let ra = reduced_a(state, k)?;
        let rb = reduced_b(state, k)?;
        discrepancy = discrepancy
            .max(ra.distance(&partial_trace_unchecked(&joint, Subsystem::A)))
            .max(rb.distance(&partial_trace_unchecked(&joint, Subsystem::B)));
        min_eig = min_eig.min(joint.min_eigenvalue());
        correlations.push(TwoQubitState::from_density(&joint).t);
        bloch_b.push(BlochState::from_raw(rb.pauli_components()));
        rate_b.push(b_rate(state, &k.matrix, &omega_op, &gen, k.t)?);
    }

    let projective = local_von_neumann(state, &scenario.observable.projector(a.branch))?;
    let vn_b = BlochState::from_raw(projective.reduced_b.pauli_components());
    let final_b = *bloch_b.last().expect("non-empty grid");
    let final_error = final_b.distance(&vn_b);
    let b = MeasurementRecord {
        branch: a.branch,
        probability: a.probability,
        trajectory: Trajectory {
            branch: a.branch,
            times: a.trajectory.times.clone(),
            norm: bloch_b.iter().map(BlochState::norm).collect(),
            bloch: bloch_b,
            rate: rate_b,
            epsilon: None,
            crossings: a.trajectory.crossings.clone(),
            stats: a.trajectory.stats,
        },
        final_bloch: final_b,
        vn_reference: vn_b,
        final_error,
        converged: final_error < scenario.convergence_tol,
        theta: a.theta,
        near_critical: a.near_critical,
        route_discrepancy: None,
    };
    Ok(EntangledRecord {
        a,
        b,
        correlations,
        projective: TwoQubitState::from_density(&projective.joint),
        min_joint_eigenvalue: min_eig,
        formula_discrepancy: discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{bloch_to_density, partial_trace};
    use crate::presets;
    use crate::testutil::{random_bloch, random_op};
    use crate::Branch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_two_qubit(rng: &mut ChaCha8Rng) -> TwoQubitState {
        let psi: [C64; 4] = std::array::from_fn(|_| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let pure = Operator4::from_fn(|i, j| psi[i] * psi[j].conj());
        let p = rng.random_range(0.0..1.0);
        let rho = pure * (p / pure.trace().re) + Operator4::identity() * (0.25 * (1.0 - p));
        TwoQubitState::from_density(&rho)
    }

    #[test]
    fn identity_propagator_leaves_state() {
        let s = presets::fig5_state();
        let id = Propagator::identity();
        let rho = two_qubit_assemble(&s).unwrap();
        assert!(local_evolve(&s, &id).unwrap().distance(&rho) < 1e-15);
        assert!(reduced_a(&s, &id).unwrap().distance(&s.density_a()) < 1e-15);
        assert!(reduced_b(&s, &id).unwrap().distance(&s.density_b()) < 1e-15);
    }

    #[test]
    fn closed_form_matches_partial_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let s = random_two_qubit(&mut rng);
            let k = Propagator::from_matrix(random_op(&mut rng), 0.0);
            let joint = local_evolve(&s, &k).unwrap();
            assert!((joint.trace().re - 1.0).abs() < 1e-12);
            assert!(joint.min_eigenvalue() > -1e-10);
            let pa = partial_trace(&joint, Subsystem::A).unwrap();
            let pb = partial_trace(&joint, Subsystem::B).unwrap();
            assert!(reduced_a(&s, &k).unwrap().distance(&pa) < 1e-10);
            assert!(reduced_b(&s, &k).unwrap().distance(&pb) < 1e-10);
        }
    }

    #[test]
    fn product_state_does_not_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..200 {
            let (a, b) = (random_bloch(&mut rng, false), random_bloch(&mut rng, false));
            let s = TwoQubitState::product(&a, &b);
            let k = Propagator::from_matrix(random_op(&mut rng), 0.0);
            let rb = reduced_b(&s, &k).unwrap();
            assert!(rb.distance(&bloch_to_density(&b).unwrap()) < 1e-10);
            // The joint state stays a product of its marginals.
            let joint = local_evolve(&s, &k).unwrap();
            let ra = reduced_a(&s, &k).unwrap();
            assert!(joint.distance(&tensor(&ra, &rb)) < 1e-10);
        }
    }

    #[test]
    fn projector_substitution_is_von_neumann() {
        let s = presets::fig5_state();
        let obs = presets::observable();
        for branch in Branch::BOTH {
            let p = obs.projector(branch);
            let vn = local_von_neumann(&s, &p).unwrap();
            let k = Propagator::from_matrix(p, 1.0);
            assert!(local_evolve(&s, &k).unwrap().distance(&vn.joint) < 1e-14);
            assert!(reduced_b(&s, &k).unwrap().distance(&vn.reduced_b) < 1e-14);
            assert!(vn.reduced_a.distance(&p) < 1e-14);
        }
    }

    #[test]
    fn maximally_mixed_projection_leaves_b_mixed() {
        let s = TwoQubitState::new([0.0; 3], [0.0; 3], [[0.0; 3]; 3]).unwrap();
        let p = presets::observable().projector(Branch::Minus);
        let vn = local_von_neumann(&s, &p).unwrap();
        assert!(vn.reduced_b.distance(&(Operator2::identity() * 0.5)) < 1e-15);
    }

    #[test]
    fn orthogonal_projection_has_zero_probability() {
        let obs = presets::observable();
        let up = obs.eigenstate(Branch::Plus);
        let s = TwoQubitState::product(&up, &BlochState::MAXIMALLY_MIXED);
        assert!(matches!(
            local_von_neumann(&s, &obs.projector(Branch::Minus)),
            Err(Error::ZeroProbabilityBranch(_))
        ));
    }

    #[test]
    fn b_rate_matches_finite_difference() {
        let obs = presets::observable();
        let gen = presets::fig2().generator(Branch::Plus);
        let s = presets::fig5_state();
        let omega_op = observable_matrix(&obs);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let k0 = random_op(&mut rng);
            let t = rng.random_range(1e-6..2e-5);
            let m = omega_op * C64::new(0.0, -1.0) + generator_matrix(&gen, t).unwrap();
            // Second-order step of dK/dt = MK.
            let h = 1e-15;
            let kp = k0 + (m * k0) * h + (m * (m * k0)) * (0.5 * h * h);
            let km = k0 - (m * k0) * h + (m * (m * k0)) * (0.5 * h * h);
            let fd = (Vector3::from(b_vector(&s, &kp, t).unwrap())
                - Vector3::from(b_vector(&s, &km, t).unwrap()))
                / (2.0 * h);
            let exact = b_rate(&s, &k0, &omega_op, &gen, t).unwrap();
            assert!(
                (fd.norm() - exact).abs() < 1e-5 * exact.max(1.0),
                "{} {}",
                fd.norm(),
                exact
            );
        }
    }
}
