use nalgebra::Vector3;
use rand::Rng;

use crate::linalg::{BlochState, Operator2, C64};

/// Uniform-in-ball Bloch vector, optionally projected to the sphere.
pub fn random_bloch(rng: &mut impl Rng, pure: bool) -> BlochState {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let r = v.norm();
        if r <= 1.0 && r > 1e-3 {
            return BlochState::from(if pure { v / r } else { v });
        }
    }
}

pub fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    random_bloch(rng, true).components()
}

pub fn random_op(rng: &mut impl Rng) -> Operator2 {
    Operator2::from_fn(|_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}
