//! Figure presets: run both branches, write per-branch files and a comparison block.

use std::path::Path;

use clap::ValueEnum;
use quasimeas::{BlochState, Branch, Mode};

use crate::config::{Job, LoadedConfig, Overrides};
use crate::error::CliError;
use crate::output::{write_json, Comparison, ComparisonBlock};
use crate::run::{simulate, RunOutput};

/// Endpoint distance to ±ω̂ accepted as convergence.
const ENDPOINT_TOL: f64 = 1e-5;
/// Agreement required between finals of runs that should share an endpoint.
const AGREEMENT_TOL: f64 = 2e-6;
const MIN_EIGENVALUE: f64 = -1e-9;

pub const PRESETS: [(&str, &str); 5] = [
    ("fig2", include_str!("../presets/fig2.toml")),
    ("fig3-pure", include_str!("../presets/fig3-pure.toml")),
    ("fig3-mixed", include_str!("../presets/fig3-mixed.toml")),
    ("fig4", include_str!("../presets/fig4.toml")),
    ("fig5", include_str!("../presets/fig5.toml")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

impl Figure {
    fn name(self) -> &'static str {
        match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
        }
    }
}

pub fn preset(name: &str, overrides: &Overrides) -> Result<LoadedConfig, CliError> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| CliError::Usage(format!("no preset named {name}")))?;
    let mut cfg = LoadedConfig::from_str(&format!("presets/{name}.toml"), text)?;
    cfg.apply(overrides);
    Ok(cfg)
}

fn conditioned(cfg: &LoadedConfig, branch: Branch) -> Result<Job, CliError> {
    let mut job = cfg.job()?;
    job.mode = Mode::Conditioned(branch);
    Ok(job)
}

/// Runs both branches of a preset and writes `<name>_<branch>.{csv,json}`.
fn run_preset(name: &str, overrides: &Overrides, out: &Path) -> Result<Vec<RunOutput>, CliError> {
    let cfg = preset(name, overrides)?;
    Branch::BOTH
        .iter()
        .map(|&branch| {
            let r = simulate(&conditioned(&cfg, branch)?)?;
            let stem = format!("{name}_{branch}");
            r.write(
                &out.join(format!("{stem}.csv")),
                &out.join(format!("{stem}.json")),
            )?;
            Ok(r)
        })
        .collect()
}

fn endpoint_checks(name: &str, runs: &[RunOutput]) -> Vec<Comparison> {
    runs.iter()
        .map(|r| {
            Comparison::below(
                format!("{name} {} |final - λω̂|", r.record.branch),
                r.record.final_error,
                ENDPOINT_TOL,
            )
        })
        .collect()
}

/// Finals of the figure-2 runs, computed without writing files.
fn reference_finals(overrides: &Overrides) -> Result<Vec<BlochState>, CliError> {
    let cfg = preset("fig2", overrides)?;
    Branch::BOTH
        .iter()
        .map(|&b| Ok(simulate(&conditioned(&cfg, b)?)?.record.final_bloch))
        .collect()
}

pub fn comparison(
    figure: Figure,
    overrides: &Overrides,
    out: &Path,
) -> Result<ComparisonBlock, CliError> {
    let checks = match figure {
        Figure::Fig2 => endpoint_checks("fig2", &run_preset("fig2", overrides, out)?),
        Figure::Fig4 => endpoint_checks("fig4", &run_preset("fig4", overrides, out)?),
        Figure::Fig3 => {
            let reference = reference_finals(overrides)?;
            let mut checks = Vec::new();
            for name in ["fig3-pure", "fig3-mixed"] {
                for (r, fig2) in run_preset(name, overrides, out)?.iter().zip(&reference) {
                    checks.push(Comparison::below(
                        format!("{name} {} |final - fig2 final|", r.record.branch),
                        r.record.final_bloch.distance(fig2),
                        AGREEMENT_TOL,
                    ));
                }
            }
            checks
        }
        Figure::Fig5 => {
            let runs = run_preset("fig5", overrides, out)?;
            let mut checks = Vec::new();
            for r in &runs {
                let e = r.entangled.as_ref().expect("fig5 is a two-qubit preset");
                let b = r.record.branch;
                checks.push(Comparison::below(
                    format!("fig5 {b} A |final - λω̂|"),
                    e.a.final_error,
                    ENDPOINT_TOL,
                ));
                checks.push(Comparison::below(
                    format!("fig5 {b} B |final - projective|"),
                    e.b.final_error,
                    AGREEMENT_TOL,
                ));
                checks.push(Comparison::at_least(
                    format!("fig5 {b} min joint eigenvalue"),
                    e.min_joint_eigenvalue,
                    MIN_EIGENVALUE,
                ));
            }
            checks
        }
    };
    Ok(ComparisonBlock::new(figure.name(), checks))
}

pub fn cmd_reproduce(figure: Figure, out: &Path, overrides: &Overrides) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let block = comparison(figure, overrides, out)?;
    write_json(&out.join("comparison.json"), &block)?;
    print!("{}", block.render());
    if !block.passed {
        let failed = block.checks.iter().filter(|c| !c.passed).count();
        return Err(CliError::Physics(format!(
            "{failed} of {} {} comparisons failed",
            block.checks.len(),
            figure.name()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use quasimeas::measurement::InitialState;
    use quasimeas::{presets, Scenario};

    fn same(a: &Scenario, b: &Scenario) {
        assert!((a.observable.vector() - b.observable.vector()).norm() < 1e-15 * 1e9);
        assert!((a.direction.unit() - b.direction.unit()).norm() < 1e-15);
        assert!(a.initial.bloch().distance(&b.initial.bloch()) < 1e-15);
        assert_eq!(a.profile, b.profile);
        assert_eq!(a.controls, b.controls);
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.convergence_tol, b.convergence_tol);
        assert_eq!(a.near_critical_threshold, b.near_critical_threshold);
    }

    #[test]
    fn preset_files_match_library_presets() {
        let expect = [
            presets::fig2(),
            presets::fig3_pure(),
            presets::fig3_mixed(),
            presets::fig4(),
            presets::fig5(),
        ];
        for ((name, _), s) in PRESETS.iter().zip(&expect) {
            let job = preset(name, &Overrides::default()).unwrap().job().unwrap();
            same(&job.scenario, s);
        }
    }

    #[test]
    fn fig5_preset_carries_the_pair() {
        let job = preset("fig5", &Overrides::default())
            .unwrap()
            .job()
            .unwrap();
        let state = job.two_qubit.unwrap();
        let expect = presets::fig5_state();
        for i in 0..3 {
            assert!((state.n_a[i] - expect.n_a[i]).abs() < 1e-16);
            assert!((state.n_b[i] - expect.n_b[i]).abs() < 1e-16);
            for j in 0..3 {
                assert!((state.t[i][j] - expect.t[i][j]).abs() < 1e-16);
            }
        }
        assert_eq!(
            job.scenario.initial,
            InitialState::Bloch(state.marginal_a())
        );
    }
}
