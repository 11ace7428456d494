//! Scenario files. The format is TOML; unknown keys are rejected and every
//! semantic error names the offending key and, where it can be found, its line.

use std::fmt;
use std::path::Path;

use quasimeas::dynamics::{IntegrationControls, OutputSpacing};
use quasimeas::measurement::InitialState;
use quasimeas::{
    BlochState, Branch, Direction, DrivingProfile, Mode, Observable, Scenario, TwoQubitState,
};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub branch: BranchChoice,
    pub observable: ObservableSpec,
    pub driving: DrivingSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub integration: IntegrationSpec,
    #[serde(default)]
    pub checks: ChecksSpec,
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchChoice {
    Plus,
    Minus,
    #[default]
    Sampled,
}

impl BranchChoice {
    pub fn mode(self) -> Mode {
        match self {
            BranchChoice::Plus => Mode::Conditioned(Branch::Plus),
            BranchChoice::Minus => Mode::Conditioned(Branch::Minus),
            BranchChoice::Sampled => Mode::Sampled,
        }
    }
}

/// Either polar angles `(alpha, beta)` or an `axis` vector; `axis` need not be unit.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    pub omega_magnitude: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub axis: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Im,
    Window,
    Tabulated,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Im => "im",
            Shape::Window => "window",
            Shape::Tabulated => "tabulated",
        })
    }
}

/// Profile parameters plus the direction ĝ, as `(theta, phi)` or `axis`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivingSpec {
    pub shape: Shape,
    pub g0: Option<f64>,
    pub kappa: Option<f64>,
    pub t_on: Option<f64>,
    pub t_off: Option<f64>,
    pub ramp: Option<f64>,
    /// `[t, g(t)]` pairs for the tabulated shape.
    pub samples: Option<Vec<[f64; 2]>>,
    pub theta: Option<f64>,
    pub phi: Option<f64>,
    pub axis: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub bloch: Option<[f64; 3]>,
    pub two_qubit: Option<TwoQubitSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoQubitSpec {
    pub n_a: [f64; 3],
    pub n_b: [f64; 3],
    pub t: [[f64; 3]; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSpec {
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub t_end: Option<f64>,
    pub output_points: Option<usize>,
    pub spacing: Option<OutputSpacing>,
    pub t_first_output: Option<f64>,
    pub max_step_phase: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksSpec {
    #[serde(default)]
    pub quasilinearity: bool,
    #[serde(default)]
    pub cross_validate: bool,
    pub convergence_tol: Option<f64>,
    pub near_critical_threshold: Option<f64>,
}

/// Grid axes of a sweep. Each axis is a list of values or `{ start, stop, count }`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "both_branches")]
    pub branches: Vec<Branch>,
    /// Θ, the angle between ω̂ and ĝ. ĝ turns in the plane of ω̂ and the base direction.
    pub theta_angle: Option<Range>,
    pub theta: Option<Range>,
    pub phi: Option<Range>,
    pub g0: Option<Range>,
    pub kappa: Option<Range>,
    pub shape: Option<Vec<Shape>>,
    /// Cells with `|Θ - π/2|` at or below this are exempt from the convergence assertion.
    #[serde(default = "default_band")]
    pub near_critical_band: f64,
}

fn both_branches() -> Vec<Branch> {
    Branch::BOTH.to_vec()
}

fn default_band() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Range {
    Values(Vec<f64>),
    Linear { start: f64, stop: f64, count: usize },
}

impl Range {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            Range::Values(ref v) => v.clone(),
            Range::Linear { count: 0, .. } => Vec::new(),
            Range::Linear {
                start, count: 1, ..
            } => vec![start],
            Range::Linear { start, stop, count } => (0..count)
                .map(|k| start + (stop - start) * k as f64 / (count - 1) as f64)
                .collect(),
        }
    }
}

/// Command-line overrides applied on top of a file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Read {
        path: String,
        reason: String,
    },
    /// TOML syntax or schema error; the message already carries line and column.
    Parse {
        path: String,
        message: String,
    },
    Invalid {
        path: String,
        line: Option<usize>,
        field: String,
        reason: String,
    },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Read { path, reason } => write!(f, "{path}: cannot read: {reason}"),
            ConfigError::Parse { path, message } => write!(f, "{path}: {}", message.trim_end()),
            ConfigError::Invalid {
                path,
                line,
                field,
                reason,
            } => match line {
                Some(l) => write!(f, "{path}:{l}: invalid `{field}`: {reason}"),
                None => write!(f, "{path}: invalid `{field}`: {reason}"),
            },
        }
    }
}

impl std::error::Error for ConfigError {}

/// A parsed file together with its text, kept for line lookups.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: String,
    pub source: String,
    pub config: RunConfig,
}

/// Everything one run needs, validated.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    /// For two-qubit runs the initial state is the A marginal.
    pub scenario: Scenario,
    pub two_qubit: Option<TwoQubitState>,
    pub mode: Mode,
    pub checks: ChecksSpec,
}

impl LoadedConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: name.clone(),
            reason: e.to_string(),
        })?;
        Self::from_str(&name, &source)
    }

    pub fn from_str(name: &str, source: &str) -> Result<Self, ConfigError> {
        let config = toml::from_str(source).map_err(|e: toml::de::Error| ConfigError::Parse {
            path: name.to_string(),
            message: e.to_string(),
        })?;
        Ok(Self {
            path: name.to_string(),
            source: source.to_string(),
            config,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        let c = &mut self.config;
        if let Some(seed) = o.seed {
            c.seed = seed;
        }
        let i = &mut c.integration;
        i.rtol = o.rtol.or(i.rtol);
        i.atol = o.atol.or(i.atol);
        i.t_end = o.t_end.or(i.t_end);
    }

    pub fn invalid(&self, table: &str, field: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            path: self.path.clone(),
            line: locate(&self.source, table, field),
            field: if table.is_empty() {
                field.to_string()
            } else {
                format!("{table}.{field}")
            },
            reason: reason.into(),
        }
    }

    /// Maps a core validation error to the key that caused it.
    fn core(&self, table: &str, fallback: &str, e: quasimeas::Error) -> ConfigError {
        match e {
            quasimeas::Error::InvalidParameter { field, reason } => {
                self.invalid(table, field, reason)
            }
            other => self.invalid(table, fallback, other.to_string()),
        }
    }

    pub fn job(&self) -> Result<Job, ConfigError> {
        self.job_with(&self.config.driving)
    }

    /// Builds a job with `driving` in place of the file's own section.
    pub fn job_with(&self, driving: &DrivingSpec) -> Result<Job, ConfigError> {
        let c = &self.config;
        let observable = self.observable(&c.observable)?;
        let direction = self.direction(driving)?;
        let profile = self.profile(driving)?;
        let (initial, two_qubit) = self.initial(&c.initial)?;
        let controls = self.controls(&c.integration)?;

        let mut scenario =
            Scenario::new(observable, direction, profile, initial).with_controls(controls);
        scenario.seed = c.seed;
        if let Some(tol) = c.checks.convergence_tol {
            scenario.convergence_tol = tol;
        }
        if let Some(th) = c.checks.near_critical_threshold {
            if !(th >= 0.0) {
                return Err(self.invalid(
                    "checks",
                    "near_critical_threshold",
                    "must be non-negative",
                ));
            }
            scenario.near_critical_threshold = th;
        }
        scenario
            .validate()
            .map_err(|e| self.core("checks", "convergence_tol", e))?;
        Ok(Job {
            scenario,
            two_qubit,
            mode: c.branch.mode(),
            checks: c.checks.clone(),
        })
    }

    fn observable(&self, o: &ObservableSpec) -> Result<Observable, ConfigError> {
        let t = "observable";
        if !(o.omega_magnitude > 0.0 && o.omega_magnitude.is_finite()) {
            return Err(self.invalid(t, "omega_magnitude", "must be positive and finite"));
        }
        match (o.alpha, o.beta, o.axis) {
            (Some(alpha), Some(beta), None) => {
                Observable::from_polar(o.omega_magnitude, alpha, beta)
                    .map_err(|e| self.core(t, "alpha", e))
            }
            (None, None, Some(axis)) => {
                let unit = unit_vector(axis)
                    .ok_or_else(|| self.invalid(t, "axis", "must be a nonzero finite vector"))?;
                Observable::new(unit.map(|x| x * o.omega_magnitude))
                    .map_err(|e| self.core(t, "axis", e))
            }
            _ => Err(self.invalid(t, "axis", "give either alpha and beta, or axis")),
        }
    }

    fn direction(&self, d: &DrivingSpec) -> Result<Direction, ConfigError> {
        let t = "driving";
        match (d.theta, d.phi, d.axis) {
            (Some(theta), Some(phi), None) => {
                Direction::new(theta, phi).map_err(|e| self.core(t, "theta", e))
            }
            (None, None, Some(axis)) => {
                Direction::from_vector(axis).map_err(|e| self.core(t, "axis", e))
            }
            _ => Err(self.invalid(t, "axis", "give either theta and phi, or axis")),
        }
    }

    fn profile(&self, d: &DrivingSpec) -> Result<DrivingProfile, ConfigError> {
        let t = "driving";
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| self.invalid(t, key, format!("required for shape \"{}\"", d.shape)))
        };
        let forbid = |present: bool, key: &str| {
            if present {
                Err(self.invalid(t, key, format!("not used by shape \"{}\"", d.shape)))
            } else {
                Ok(())
            }
        };
        let profile = match d.shape {
            Shape::Im => {
                forbid(d.t_on.is_some(), "t_on")?;
                forbid(d.t_off.is_some(), "t_off")?;
                forbid(d.ramp.is_some(), "ramp")?;
                forbid(d.samples.is_some(), "samples")?;
                DrivingProfile::inverted_morse(need(d.g0, "g0")?, need(d.kappa, "kappa")?)
            }
            Shape::Window => {
                forbid(d.kappa.is_some(), "kappa")?;
                forbid(d.samples.is_some(), "samples")?;
                DrivingProfile::window(
                    need(d.g0, "g0")?,
                    need(d.t_on, "t_on")?,
                    need(d.t_off, "t_off")?,
                    need(d.ramp, "ramp")?,
                )
            }
            Shape::Tabulated => {
                forbid(d.g0.is_some(), "g0")?;
                forbid(d.kappa.is_some(), "kappa")?;
                forbid(
                    d.t_on.is_some() || d.t_off.is_some() || d.ramp.is_some(),
                    "t_on",
                )?;
                let samples = d.samples.as_ref().ok_or_else(|| {
                    self.invalid(t, "samples", "required for shape \"tabulated\"")
                })?;
                DrivingProfile::tabulated(samples.iter().map(|&[t, g]| (t, g)).collect())
            }
        };
        profile.map_err(|e| self.core(t, "samples", e))
    }

    fn initial(
        &self,
        i: &InitialSpec,
    ) -> Result<(InitialState, Option<TwoQubitState>), ConfigError> {
        match (i.bloch, &i.two_qubit) {
            (Some(n), None) => {
                let n = BlochState::new(n)
                    .map_err(|e| self.invalid("initial", "bloch", e.to_string()))?;
                Ok((InitialState::Bloch(n), None))
            }
            (None, Some(s)) => {
                let state = TwoQubitState::new(s.n_a, s.n_b, s.t)
                    .map_err(|e| self.invalid("initial.two_qubit", "t", e.to_string()))?;
                Ok((InitialState::Bloch(state.marginal_a()), Some(state)))
            }
            _ => Err(self.invalid("initial", "bloch", "give exactly one of bloch or two_qubit")),
        }
    }

    fn controls(&self, i: &IntegrationSpec) -> Result<IntegrationControls, ConfigError> {
        let d = IntegrationControls::default();
        let c = IntegrationControls {
            rtol: i.rtol.unwrap_or(d.rtol),
            atol: i.atol.unwrap_or(d.atol),
            t_end: i.t_end,
            output_points: i.output_points.unwrap_or(d.output_points),
            output_spacing: i.spacing.unwrap_or(d.output_spacing),
            t_first_output: i.t_first_output.unwrap_or(d.t_first_output),
            max_steps: d.max_steps,
            max_step_phase: i.max_step_phase.unwrap_or(d.max_step_phase),
        };
        c.validate()
            .map_err(|e| self.core("integration", "rtol", e))?;
        Ok(c)
    }
}

fn unit_vector(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.map(|x| x / n))
}

/// 1-based line of `key = ...` inside `[table]` ("" for the top level).
pub fn locate(source: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line
                .trim_start_matches('[')
                .split(']')
                .next()
                .unwrap_or("")
                .trim()
                .to_string();
            continue;
        }
        if current != table {
            continue;
        }
        if let Some(rest) = line.strip_prefix(key) {
            if rest.trim_start().starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    None
}
