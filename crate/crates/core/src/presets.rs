//! Parameter sets of the reference figures, in code form.
//!
//! The CLI ships the same numbers as TOML presets; a test there checks the
//! two stay in sync.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::generators::{Direction, DrivingProfile, Observable};
use crate::linalg::{BlochState, TwoQubitState};
use crate::measurement::{InitialState, Scenario};

pub const OMEGA: f64 = 1e9;
pub const FIG2_KAPPA: f64 = 1e5;
pub const FIG2_G0: f64 = 1e9;
pub const FIG4_G0: f64 = 1e8;
/// Window timing used for the constant-over-an-interval drive.
pub const WINDOW_T_ON: f64 = 1e-6;
pub const WINDOW_T_OFF: f64 = 1e-4;
pub const WINDOW_RAMP: f64 = 1e-5;

/// ω = 10⁹ along (α, β) = (π/3, π/6), i.e. ω̂ = [3/4, √3/4, 1/2].
pub fn observable() -> Observable {
    Observable::from_polar(OMEGA, PI / 3.0, PI / 6.0).expect("valid preset")
}

/// ĝ at (θ, φ) = (π/6, -π/3), i.e. [1/4, -√3/4, √3/2].
pub fn fig2_direction() -> Direction {
    Direction::new(PI / 6.0, -PI / 3.0).expect("valid preset")
}

/// ĝ = [1/2, √3/2, 0].
pub fn fig4_direction() -> Direction {
    Direction::new(PI / 2.0, PI / 3.0).expect("valid preset")
}

pub fn fig2_profile() -> DrivingProfile {
    DrivingProfile::inverted_morse(FIG2_G0, FIG2_KAPPA).expect("valid preset")
}

pub fn fig4_profile() -> DrivingProfile {
    DrivingProfile::window(FIG4_G0, WINDOW_T_ON, WINDOW_T_OFF, WINDOW_RAMP).expect("valid preset")
}

/// n₀ = (1/√2)[-1/√2, 0, -1/√2].
pub fn fig2_initial() -> BlochState {
    let h = FRAC_1_SQRT_2 * FRAC_1_SQRT_2;
    BlochState::new([-h, 0.0, -h]).expect("valid preset")
}

/// n₀ = [3/4, -√3/4, -1/2].
pub fn fig3_pure_initial() -> BlochState {
    BlochState::new([0.75, -(3f64.sqrt()) / 4.0, -0.5]).expect("valid preset")
}

/// n₀ = (1/√2)[3/4, -√3/4, -1/2].
pub fn fig4_initial() -> BlochState {
    let v = fig3_pure_initial().components();
    BlochState::new(v.map(|x| x * FRAC_1_SQRT_2)).expect("valid preset")
}

pub fn fig2() -> Scenario {
    Scenario::new(
        observable(),
        fig2_direction(),
        fig2_profile(),
        InitialState::Bloch(fig2_initial()),
    )
}

pub fn fig3_pure() -> Scenario {
    fig2().with_initial(InitialState::Bloch(fig3_pure_initial()))
}

pub fn fig3_mixed() -> Scenario {
    fig2().with_initial(InitialState::Bloch(BlochState::MAXIMALLY_MIXED))
}

pub fn fig4() -> Scenario {
    Scenario::new(
        observable(),
        fig4_direction(),
        fig4_profile(),
        InitialState::Bloch(fig4_initial()),
    )
}

/// n_A = n_B = [0, 0, 1/√6], T = diag[1/√6, -1/√6, 1/√3].
pub fn fig5_state() -> TwoQubitState {
    let s6 = 1.0 / 6f64.sqrt();
    let s3 = 1.0 / 3f64.sqrt();
    TwoQubitState::new(
        [0.0, 0.0, s6],
        [0.0, 0.0, s6],
        [[s6, 0.0, 0.0], [0.0, -s6, 0.0], [0.0, 0.0, s3]],
    )
    .expect("valid preset")
}

/// Drive and observable of the entangled run; the initial state is the A marginal.
pub fn fig5() -> Scenario {
    let state = fig5_state();
    fig2().with_initial(InitialState::Bloch(state.marginal_a()))
}
