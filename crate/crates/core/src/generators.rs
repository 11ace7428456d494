//! Observable Ω(ω), its spectral projectors, and the branch-conditioned
//! driving generator G_λ(t) = (λ/2) g(t) ĝ·σ.
//!
//! Units: ħ = 1, so magnitudes are angular rates in 1/s.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BlochState, Operator2};

/// Default half-width of the warning band around Θ = π/2.
pub const NEAR_CRITICAL_THRESHOLD: f64 = 0.05;

/// Selected measurement outcome λ = ±1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Plus, Branch::Minus];

    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Plus => "plus",
            Branch::Minus => "minus",
        })
    }
}

/// Unit direction given by polar angles, `(sin θ cos φ, sin θ sin φ, cos θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub theta: f64,
    pub phi: f64,
}

impl Direction {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::param("direction", "angles must be finite"));
        }
        Ok(Self { theta, phi })
    }

    pub fn from_vector(v: [f64; 3]) -> Result<Self> {
        let v = Vector3::from(v);
        let r = v.norm();
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::param(
                "direction",
                "vector must be finite and non-zero",
            ));
        }
        let u = v / r;
        Ok(Self {
            theta: u.z.clamp(-1.0, 1.0).acos(),
            phi: u.y.atan2(u.x),
        })
    }

    pub fn unit(&self) -> Vector3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vector3::new(st * cp, st * sp, ct)
    }
}

/// The measured observable Ω = ½ ω·σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    omega_vec: [f64; 3],
}

impl Observable {
    pub fn new(omega_vec: [f64; 3]) -> Result<Self> {
        if omega_vec.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("omega", "components must be finite"));
        }
        if Vector3::from(omega_vec).norm() == 0.0 {
            return Err(Error::DegenerateObservable);
        }
        Ok(Self { omega_vec })
    }

    /// `ω (sin α cos β, sin α sin β, cos α)`.
    pub fn from_polar(magnitude: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(magnitude > 0.0) || !magnitude.is_finite() {
            return Err(if magnitude == 0.0 {
                Error::DegenerateObservable
            } else {
                Error::param("omega_magnitude", "must be positive and finite")
            });
        }
        let dir = Direction::new(alpha, beta)?.unit() * magnitude;
        Self::new([dir.x, dir.y, dir.z])
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::from(self.omega_vec)
    }

    pub fn magnitude(&self) -> f64 {
        self.vector().norm()
    }

    pub fn unit(&self) -> Vector3<f64> {
        self.vector() / self.magnitude()
    }

    /// Polar angles (α, β) of ω̂.
    pub fn polar_angles(&self) -> (f64, f64) {
        let d = Direction::from_vector(self.omega_vec).expect("omega is non-zero");
        (d.theta, d.phi)
    }

    /// Bloch vector of Π_λ, i.e. λω̂.
    pub fn eigenstate(&self, branch: Branch) -> BlochState {
        BlochState::from(self.unit() * branch.sign())
    }

    pub fn projector(&self, branch: Branch) -> Operator2 {
        let u = self.unit() * branch.sign();
        (Operator2::identity() + Operator2::dot_sigma([u.x, u.y, u.z])) * 0.5
    }
}

/// `½ ω·σ`.
pub fn observable_matrix(obs: &Observable) -> Operator2 {
    Operator2::dot_sigma(obs.omega_vec) * 0.5
}

/// `(Π_+, Π_-)` with `Π_λ = ½(I + λ ω̂·σ)`.
pub fn spectral_projectors(obs: &Observable) -> (Operator2, Operator2) {
    (obs.projector(Branch::Plus), obs.projector(Branch::Minus))
}

/// Time profile of the driving magnitude g(t) ≥ 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum DrivingProfile {
    /// `g0 (1 - (1 - 2 e^{-κt})²)`: rises from zero, peaks at `ln 2 / κ`, decays.
    InvertedMorse {
        g0: f64,
        kappa: f64,
    },
    /// `g0 · S(t)` with cubic smoothstep ramps of width `ramp` inside `[t_on, t_off]`.
    Window {
        g0: f64,
        t_on: f64,
        t_off: f64,
        ramp: f64,
    },
    Tabulated {
        samples: TabulatedProfile,
    },
}

impl DrivingProfile {
    pub fn inverted_morse(g0: f64, kappa: f64) -> Result<Self> {
        positive("g0", g0)?;
        positive("kappa", kappa)?;
        Ok(Self::InvertedMorse { g0, kappa })
    }

    pub fn window(g0: f64, t_on: f64, t_off: f64, ramp: f64) -> Result<Self> {
        positive("g0", g0)?;
        if !(t_on >= 0.0) || !t_on.is_finite() {
            return Err(Error::param("t_on", "must be a finite non-negative time"));
        }
        if !(t_off > t_on) || !t_off.is_finite() {
            return Err(Error::param("t_off", "must be finite and exceed t_on"));
        }
        positive("ramp", ramp)?;
        if 2.0 * ramp > t_off - t_on {
            return Err(Error::param(
                "ramp",
                "two ramps must fit inside [t_on, t_off]",
            ));
        }
        Ok(Self::Window {
            g0,
            t_on,
            t_off,
            ramp,
        })
    }

    pub fn tabulated(samples: Vec<(f64, f64)>) -> Result<Self> {
        TabulatedProfile::new(samples).map(|samples| Self::Tabulated { samples })
    }

    /// Re-checks the invariants; useful after deserialization.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::InvertedMorse { g0, kappa } => Self::inverted_morse(*g0, *kappa).map(drop),
            Self::Window {
                g0,
                t_on,
                t_off,
                ramp,
            } => Self::window(*g0, *t_on, *t_off, *ramp).map(drop),
            Self::Tabulated { samples } => TabulatedProfile::new(samples.samples()).map(drop),
        }
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("profile evaluated at t = {t}")));
        }
        Ok(self.eval(t))
    }

    /// Unchecked evaluation for `t >= 0`.
    #[inline]
    pub(crate) fn eval(&self, t: f64) -> f64 {
        match *self {
            Self::InvertedMorse { g0, kappa } => {
                // 1 - (1 - 2x)² = 4x(1 - x), stable for small x.
                let x = (-kappa * t).exp();
                g0 * 4.0 * x * (1.0 - x)
            }
            Self::Window {
                g0,
                t_on,
                t_off,
                ramp,
            } => {
                if t <= t_on || t >= t_off {
                    0.0
                } else if t < t_on + ramp {
                    g0 * smoothstep((t - t_on) / ramp)
                } else if t > t_off - ramp {
                    g0 * smoothstep((t_off - t) / ramp)
                } else {
                    g0
                }
            }
            Self::Tabulated { samples: ref tab } => tab.eval(t),
        }
    }

    /// Location and height of the global maximum.
    pub fn peak(&self) -> (f64, f64) {
        match *self {
            Self::InvertedMorse { g0, kappa } => (std::f64::consts::LN_2 / kappa, g0),
            Self::Window { g0, t_on, ramp, .. } => (t_on + ramp, g0),
            Self::Tabulated { samples: ref tab } => tab.peak(),
        }
    }

    /// Default integration horizon: twice the time after which g is negligible.
    pub fn default_t_end(&self) -> f64 {
        match *self {
            Self::InvertedMorse { kappa, .. } => {
                // Smallest x = e^{-κt} with 4x(1 - x) = 1e-9.
                let x = 0.5 * (1.0 - (1.0 - 1e-9f64).sqrt());
                2.0 * (-x.ln()) / kappa
            }
            Self::Window { t_off, .. } => 2.0 * t_off,
            Self::Tabulated { samples: ref tab } => 2.0 * tab.times.last().copied().unwrap_or(0.0),
        }
    }

    pub fn g0(&self) -> f64 {
        self.peak().1
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(
            field,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

/// `3x² - 2x³` on `[0, 1]`.
#[inline]
fn smoothstep(x: f64) -> f64 {
    x * x * (3.0 - 2.0 * x)
}

/// Piecewise-cubic monotone (Fritsch–Carlson) interpolant through
/// `(time, rate)` samples; zero outside the sampled span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct TabulatedProfile {
    times: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl TryFrom<Vec<(f64, f64)>> for TabulatedProfile {
    type Error = Error;
    fn try_from(samples: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(samples)
    }
}

impl From<TabulatedProfile> for Vec<(f64, f64)> {
    fn from(tab: TabulatedProfile) -> Self {
        tab.samples()
    }
}

impl TabulatedProfile {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::param("samples", "need at least two samples"));
        }
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::param("samples", "times must be strictly increasing"));
            }
        }
        for &(t, g) in &samples {
            if !(t >= 0.0) || !t.is_finite() || !(g >= 0.0) || !g.is_finite() {
                return Err(Error::param(
                    "samples",
                    "times and rates must be finite and non-negative",
                ));
            }
        }
        let (times, values): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
        let slopes = monotone_slopes(&times, &values);
        Ok(Self {
            times,
            values,
            slopes,
        })
    }

    pub fn samples(&self) -> Vec<(f64, f64)> {
        self.times
            .iter()
            .copied()
            .zip(self.values.iter().copied())
            .collect()
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t < self.times[0] || t > self.times[n - 1] {
            return 0.0;
        }
        let k = match self.times.partition_point(|&x| x <= t) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let h = self.times[k + 1] - self.times[k];
        let s = (t - self.times[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let v = h00 * self.values[k]
            + h10 * h * self.slopes[k]
            + h01 * self.values[k + 1]
            + h11 * h * self.slopes[k + 1];
        v.max(0.0)
    }

    fn peak(&self) -> (f64, f64) {
        self.times.iter().zip(&self.values).fold(
            (self.times[0], self.values[0]),
            |best, (&t, &g)| {
                if g > best.1 {
                    (t, g)
                } else {
                    best
                }
            },
        )
    }
}

fn monotone_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let delta: Vec<f64> = (0..n - 1)
        .map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k]))
        .collect();
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for k in 1..n - 1 {
        m[k] = if delta[k - 1] * delta[k] <= 0.0 {
            0.0
        } else {
            0.5 * (delta[k - 1] + delta[k])
        };
    }
    for k in 0..n - 1 {
        if delta[k] == 0.0 {
            m[k] = 0.0;
            m[k + 1] = 0.0;
            continue;
        }
        let a = m[k] / delta[k];
        let b = m[k + 1] / delta[k];
        let r = a * a + b * b;
        if r > 9.0 {
            let tau = 3.0 / r.sqrt();
            m[k] = tau * a * delta[k];
            m[k + 1] = tau * b * delta[k];
        }
    }
    m
}

/// Branch-conditioned driving generator with a fixed direction ĝ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingGenerator {
    pub branch: Branch,
    pub direction: Direction,
    pub profile: DrivingProfile,
}

impl DrivingGenerator {
    pub fn new(branch: Branch, direction: Direction, profile: DrivingProfile) -> Self {
        Self {
            branch,
            direction,
            profile,
        }
    }

    #[inline]
    pub fn lambda(&self) -> f64 {
        self.branch.sign()
    }
}

/// `(λ/2) g(t) ĝ·σ`.
pub fn generator_matrix(gen: &DrivingGenerator, t: f64) -> Result<Operator2> {
    let g = gen.profile.value(t)?;
    let u = gen.direction.unit() * (0.5 * gen.lambda() * g);
    Ok(Operator2::dot_sigma([u.x, u.y, u.z]))
}

/// Angle Θ between ω̂ and ĝ, with a flag for proximity to π/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaAngle {
    pub theta: f64,
    pub near_critical: bool,
}

pub fn theta_angle(obs: &Observable, direction: &Direction, threshold: f64) -> ThetaAngle {
    let c = obs.unit().dot(&direction.unit()).clamp(-1.0, 1.0);
    let theta = c.acos();
    ThetaAngle {
        theta,
        near_critical: (theta - FRAC_PI_2).abs() < threshold,
    }
}
