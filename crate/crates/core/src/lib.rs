//! Simulation of selective quantum measurement as a continuous, nonlinear
//! but convex-quasilinear evolution of qubit states.
//!
//! A branch λ = ±1 is chosen by the Born rule; the state then follows
//!
//! ```text
//! dρ/dt = -i[Ω, ρ] + {G_λ(t), ρ} - 2ρ Tr(G_λ(t) ρ)
//! ```
//!
//! which is solved three ways (density matrix, Bloch vector, and the linear
//! propagator `K(t)` with `ρ(t) = Kρ₀K† / Tr(Kρ₀K†)`). Once the driving
//! `g(t)` has died out, the state sits on the eigenstate `λω̂` of Ω, the same
//! state the von Neumann projection produces.

pub mod dynamics;
pub mod entangled;
pub mod error;
pub mod generators;
pub mod linalg;
pub mod measurement;
pub mod ode;
pub mod presets;
pub mod verify;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use generators::{Branch, Direction, DrivingGenerator, DrivingProfile, Observable, ThetaAngle};
pub use linalg::{BlochState, Operator2, Operator4, Subsystem, TwoQubitState};
pub use measurement::{MeasurementRecord, Mode, Scenario};
