//! Dormand–Prince 5(4) integrator with PI step control and the classic
//! fourth-order continuous extension, over fixed-size real state vectors.
//!
//! The driver owns the loop: call [`Dopri5::step`] until [`Dopri5::finished`],
//! sample inside the last step with [`Dopri5::interpolate`], and optionally
//! rescale the state between steps (only meaningful for linear systems).

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
/// Inverse of the largest shrink factor (0.2).
const FACC1: f64 = 5.0;
/// Inverse of the largest growth factor (10).
const FACC2: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: u64,
    /// Upper bound on the step size; `f64::INFINITY` for none.
    pub max_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepFailure {
    MaxSteps,
    StepUnderflow(f64),
    NonFinite,
}

impl std::fmt::Display for StepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepFailure::MaxSteps => f.write_str("maximum number of steps exceeded"),
            StepFailure::StepUnderflow(h) => write!(f, "step size underflow (h = {h:e})"),
            StepFailure::NonFinite => f.write_str("non-finite state"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    pub evaluations: u64,
}

pub struct Dopri5<F, const N: usize> {
    rhs: F,
    opts: StepOptions,
    t: f64,
    t_end: f64,
    y: [f64; N],
    k1: [f64; N],
    h: f64,
    facold: f64,
    last_rejected: bool,
    stats: StepStats,
    t_old: f64,
    h_old: f64,
    cont: [[f64; N]; 5],
}

#[inline]
fn combine<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for &(c, k) in terms {
        let hc = h * c;
        for i in 0..N {
            out[i] += hc * k[i];
        }
    }
    out
}

impl<F, const N: usize> Dopri5<F, N>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    pub fn new(rhs: F, t0: f64, y0: [f64; N], t_end: f64, opts: StepOptions) -> Self {
        let k1 = rhs(t0, &y0);
        let mut s = Self {
            rhs,
            opts,
            t: t0,
            t_end,
            y: y0,
            k1,
            h: 0.0,
            facold: 1e-4,
            last_rejected: false,
            stats: StepStats {
                evaluations: 1,
                ..StepStats::default()
            },
            t_old: t0,
            h_old: 0.0,
            cont: [[0.0; N]; 5],
        };
        s.h = s.initial_step();
        s
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.opts.atol + self.opts.rtol * a.abs().max(b.abs())
    }

    // Hairer–Nørsett–Wanner starting step heuristic.
    fn initial_step(&mut self) -> f64 {
        let span = self.t_end - self.t;
        let (mut dnf, mut dny) = (0.0, 0.0);
        for i in 0..N {
            let sk = self.scale(self.y[i], 0.0);
            dnf += (self.k1[i] / sk).powi(2);
            dny += (self.y[i] / sk).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
            span * 1e-6
        } else {
            (dny / dnf).sqrt() * 0.01
        };
        h = h.min(span);
        let y1 = combine(&self.y, h, &[(1.0, &self.k1)]);
        let f1 = (self.rhs)(self.t + h, &y1);
        self.stats.evaluations += 1;
        let mut der2 = 0.0;
        for i in 0..N {
            let sk = self.scale(self.y[i], 0.0);
            der2 += ((f1[i] - self.k1[i]) / sk).powi(2);
        }
        let der2 = der2.sqrt() / h;
        let der12 = der2.max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 {
            (span * 1e-6).max(h * 1e-3)
        } else {
            (0.01 / der12).powf(0.2)
        };
        (100.0 * h).min(h1).min(span).min(self.opts.max_step)
    }

    #[inline]
    pub fn t(&self) -> f64 {
        self.t
    }

    #[inline]
    pub fn y(&self) -> &[f64; N] {
        &self.y
    }

    pub fn stats(&self) -> StepStats {
        self.stats
    }

    pub fn finished(&self) -> bool {
        self.t >= self.t_end
    }

    /// Start of the most recent accepted step.
    pub fn step_start(&self) -> f64 {
        self.t_old
    }

    /// Advances by one accepted step, never past `t_end`.
    pub fn step(&mut self) -> Result<(), StepFailure> {
        loop {
            if self.stats.accepted + self.stats.rejected >= self.opts.max_steps {
                return Err(StepFailure::MaxSteps);
            }
            if 0.1 * self.h.abs() <= self.t.abs() * f64::EPSILON {
                return Err(StepFailure::StepUnderflow(self.h));
            }
            let mut h = self.h;
            let last = self.t + 1.01 * h >= self.t_end;
            if last {
                h = self.t_end - self.t;
            }
            let t = self.t;
            let y = &self.y;
            let k1 = &self.k1;
            let f = &self.rhs;

            let y2 = combine(y, h, &[(A21, k1)]);
            let k2 = f(t + C2 * h, &y2);
            let y3 = combine(y, h, &[(A31, k1), (A32, &k2)]);
            let k3 = f(t + C3 * h, &y3);
            let y4 = combine(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]);
            let k4 = f(t + C4 * h, &y4);
            let y5 = combine(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
            let k5 = f(t + C5 * h, &y5);
            let y6 = combine(
                y,
                h,
                &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            );
            let t_new = if last { self.t_end } else { t + h };
            let k6 = f(t_new, &y6);
            let y_new = combine(
                y,
                h,
                &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
            );
            let k7 = f(t_new, &y_new);
            self.stats.evaluations += 6;

            let mut err = 0.0;
            for i in 0..N {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sk = self.scale(y[i], y_new[i]);
                err += (e / sk).powi(2);
            }
            let err = (err / N as f64).sqrt();
            if !err.is_finite() {
                if !y.iter().all(|v| v.is_finite()) {
                    return Err(StepFailure::NonFinite);
                }
                self.h = h * 0.1;
                self.stats.rejected += 1;
                self.last_rejected = true;
                continue;
            }

            let fac11 = err.powf(EXPO1);
            if err <= 1.0 {
                let fac = (fac11 / self.facold.powf(BETA) / SAFETY).clamp(FACC2, FACC1);
                let mut h_new = (h / fac).min(self.opts.max_step);
                self.facold = err.max(1e-4);
                if self.last_rejected {
                    h_new = h_new.min(h);
                }
                // Continuous extension coefficients for this step.
                for i in 0..N {
                    let ydiff = y_new[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    self.cont[0][i] = y[i];
                    self.cont[1][i] = ydiff;
                    self.cont[2][i] = bspl;
                    self.cont[3][i] = ydiff - h * k7[i] - bspl;
                    self.cont[4][i] = h
                        * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i]);
                }
                self.t_old = t;
                self.h_old = h;
                self.t = t_new;
                self.y = y_new;
                self.k1 = k7;
                self.h = h_new;
                self.last_rejected = false;
                self.stats.accepted += 1;
                return Ok(());
            }
            self.h = h / (fac11 / SAFETY).min(FACC1);
            self.stats.rejected += 1;
            self.last_rejected = true;
        }
    }

    /// Dense output inside the last accepted step `[step_start, t]`.
    pub fn interpolate(&self, t: f64) -> [f64; N] {
        if t >= self.t {
            return self.y;
        }
        let s = (t - self.t_old) / self.h_old;
        let s1 = 1.0 - s;
        let c = &self.cont;
        std::array::from_fn(|i| {
            c[0][i] + s * (c[1][i] + s1 * (c[2][i] + s * (c[3][i] + s1 * c[4][i])))
        })
    }

    /// Multiplies the current state (and its cached derivative) by `factor`.
    /// Valid only when the right-hand side is linear in the state.
    pub fn rescale(&mut self, factor: f64) {
        for i in 0..N {
            self.y[i] *= factor;
            self.k1[i] *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(tol: f64) -> StepOptions {
        StepOptions {
            rtol: tol,
            atol: tol,
            max_steps: 1_000_000,
            max_step: f64::INFINITY,
        }
    }

    #[test]
    fn max_step_is_respected() {
        let mut s = Dopri5::new(
            |_, y: &[f64; 1]| [-y[0]],
            0.0,
            [1.0],
            10.0,
            StepOptions {
                max_step: 0.25,
                ..opts(1e-6)
            },
        );
        while !s.finished() {
            s.step().unwrap();
            assert!(s.t() - s.step_start() <= 0.25);
        }
        assert!(s.stats().accepted >= 40);
    }

    #[test]
    fn exponential_decay() {
        let mut s = Dopri5::new(|_, y: &[f64; 1]| [-y[0]], 0.0, [1.0], 5.0, opts(1e-10));
        while !s.finished() {
            s.step().unwrap();
        }
        assert_eq!(s.t(), 5.0);
        assert!((s.y()[0] - (-5.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let mut s = Dopri5::new(
            |_, y: &[f64; 2]| [y[1], -y[0]],
            0.0,
            [1.0, 0.0],
            20.0,
            opts(1e-11),
        );
        let mut worst: f64 = 0.0;
        while !s.finished() {
            s.step().unwrap();
            let (a, b) = (s.step_start(), s.t());
            for k in 0..=4 {
                let t = a + (b - a) * k as f64 / 4.0;
                let y = s.interpolate(t);
                worst = worst
                    .max((y[0] - t.cos()).abs())
                    .max((y[1] + t.sin()).abs());
            }
        }
        assert!(worst < 1e-8, "dense output error {worst:e}");
    }

    #[test]
    fn global_error_tracks_tolerance() {
        let run = |tol: f64| {
            let mut s = Dopri5::new(
                |_, y: &[f64; 2]| [y[1], -y[0]],
                0.0,
                [1.0, 0.0],
                30.0,
                opts(tol),
            );
            while !s.finished() {
                s.step().unwrap();
            }
            ((s.y()[0] - 30f64.cos()).powi(2) + (s.y()[1] + 30f64.sin()).powi(2)).sqrt()
        };
        let coarse = run(1e-7);
        let fine = run(1e-10);
        assert!(fine < coarse / 50.0, "{coarse:e} -> {fine:e}");
    }

    #[test]
    fn max_steps_is_reported() {
        let mut s = Dopri5::new(
            |_, y: &[f64; 2]| [y[1], -y[0]],
            0.0,
            [1.0, 0.0],
            1e4,
            StepOptions {
                max_steps: 10,
                ..opts(1e-10)
            },
        );
        let err = loop {
            if let Err(e) = s.step() {
                break e;
            }
        };
        assert_eq!(err, StepFailure::MaxSteps);
    }

    #[test]
    fn rescale_linear_system() {
        let f = |_, y: &[f64; 1]| [0.5 * y[0]];
        let mut a = Dopri5::new(f, 0.0, [1.0], 4.0, opts(1e-12));
        let mut b = Dopri5::new(f, 0.0, [1.0], 4.0, opts(1e-12));
        let mut log_scale = 0.0;
        while !a.finished() {
            a.step().unwrap();
        }
        while !b.finished() {
            b.step().unwrap();
            let v = b.y()[0];
            if v > 1.5 {
                b.rescale(1.0 / v);
                log_scale += v.ln();
            }
        }
        assert!(((b.y()[0].ln() + log_scale) - a.y()[0].ln()).abs() < 1e-10);
    }
}
