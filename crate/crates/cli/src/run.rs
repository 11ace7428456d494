//! Single runs: simulate, check, write `trajectory.csv` and `summary.json`.

use std::path::Path;

use quasimeas::entangled::{run_entangled_measurement, EntangledRecord};
use quasimeas::measurement::run_measurement;
use quasimeas::verify::{
    check_quasilinearity, cross_validate, BranchEvolver, Decomposition, Outcome,
};
use quasimeas::{BlochState, Branch, MeasurementRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Job, LoadedConfig, Overrides};
use crate::error::CliError;
use crate::output::{
    trajectory_csv, write_file, write_json, Checks, CrossValidationSummary, QuasilinearitySummary,
    Summary,
};

/// Random mixtures drawn for the quasilinearity check.
const QUASILINEARITY_INSTANCES: usize = 4;

pub struct RunOutput {
    pub record: MeasurementRecord,
    pub entangled: Option<EntangledRecord>,
    pub summary: Summary,
}

impl RunOutput {
    pub fn write(&self, csv: &Path, json: &Path) -> Result<(), CliError> {
        write_file(csv, &trajectory_csv(&self.record, self.entangled.as_ref()))?;
        write_json(json, &self.summary)
    }
}

pub fn simulate(job: &Job) -> Result<RunOutput, CliError> {
    let (record, entangled) = match &job.two_qubit {
        Some(state) => {
            let e = run_entangled_measurement(state, &job.scenario, job.mode)?;
            (e.a.clone(), Some(e))
        }
        None => (run_measurement(&job.scenario, job.mode)?, None),
    };
    let checks = run_checks(job, record.branch)?;
    let summary = Summary::new(&record, entangled.as_ref(), checks);
    Ok(RunOutput {
        record,
        entangled,
        summary,
    })
}

fn random_ball(rng: &mut ChaCha8Rng) -> BlochState {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if let Ok(n) = BlochState::new(v) {
            return n;
        }
    }
}

fn run_checks(job: &Job, branch: Branch) -> Result<Checks, CliError> {
    let s = &job.scenario;
    let mut checks = Checks::default();
    if job.checks.quasilinearity {
        let evolver = BranchEvolver::new(s, branch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let (mut reports, mut extinct) = (Vec::new(), 0);
        for _ in 0..QUASILINEARITY_INSTANCES {
            let n0 = random_ball(&mut rng);
            let d = Decomposition::random_split(&n0, &mut rng)?;
            match check_quasilinearity(&d, &evolver)? {
                Outcome::Completed(r) => reports.push(r),
                Outcome::BranchExtinct { .. } => extinct += 1,
            }
        }
        checks.quasilinearity = Some(QuasilinearitySummary::from_reports(&reports, extinct));
    }
    if job.checks.cross_validate {
        let r = cross_validate(s, branch)?;
        checks.cross_validation = Some(CrossValidationSummary::from_report(&r, s.controls.rtol));
    }
    Ok(checks)
}

pub fn cmd_run(config: &Path, out: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let mut cfg = LoadedConfig::from_file(config)?;
    if cfg.config.sweep.is_some() {
        return Err(CliError::Usage(format!(
            "{}: has a [sweep] table; use the sweep command",
            cfg.path
        )));
    }
    cfg.apply(overrides);
    let job = cfg.job()?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let result = simulate(&job)?;
    let summary = out.join("summary.json");
    result.write(&out.join("trajectory.csv"), &summary)?;

    let s = &result.summary;
    println!(
        "branch {} (p = {}), final [{:.8}, {:.8}, {:.8}], |final - reference| = {:.3e}, converged: {}",
        s.branch,
        s.probability,
        s.final_state[0],
        s.final_state[1],
        s.final_state[2],
        s.final_error,
        s.converged
    );
    if s.near_critical {
        println!(
            "warning: Θ = {:.4} is near π/2; convergence is not guaranteed",
            s.theta
        );
    }
    if !s.passed {
        return Err(CliError::Physics(format!(
            "see {} for the failing check",
            summary.display()
        )));
    }
    Ok(())
}
