use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("presets")
        .join(format!("{name}.toml"))
}

fn quasimeas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quasimeas"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn vec3(v: &Value) -> [f64; 3] {
    let a = v.as_array().unwrap();
    [0, 1, 2].map(|i| a[i].as_f64().unwrap())
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

/// Writes a preset with some lines replaced and extra text appended.
fn variant(dir: &Path, name: &str, replace: &[(&str, &str)], append: &str) -> PathBuf {
    let mut text = std::fs::read_to_string(preset(name)).unwrap();
    for (from, to) in replace {
        assert!(text.contains(from), "{from}");
        text = text.replace(from, to);
    }
    text.push_str(append);
    let p = dir.join(format!("{name}-variant-{}.toml", text.len()));
    std::fs::write(&p, text).unwrap();
    p
}

/// Parses a CSV with a schema line; returns (schema, header, rows).
fn read_csv(p: &Path) -> (String, Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    let schema = lines.next().unwrap().to_string();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    (schema, header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

const SUMMARY_KEYS: [&str; 13] = [
    "schema",
    "branch",
    "probability",
    "final_state",
    "vn_reference",
    "final_error",
    "converged",
    "theta",
    "near_critical",
    "crossing_times",
    "two_qubit",
    "checks",
    "passed",
];

#[test]
fn fig2_run_reaches_the_plus_eigenvector() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let o = quasimeas(&["run", path(&preset("fig2")), "-o", path(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let s = json(&out.join("summary.json"));
    let keys: Vec<&str> = s.as_object().unwrap().keys().map(String::as_str).collect();
    let mut expect = SUMMARY_KEYS.to_vec();
    expect.sort();
    let mut keys_sorted = keys.clone();
    keys_sorted.sort();
    assert_eq!(keys_sorted, expect);
    assert_eq!(s["schema"], "quasimeas-summary/1");
    assert_eq!(s["branch"], "plus");
    assert_eq!(s["converged"], true);
    assert!(dist(vec3(&s["final_state"]), [0.75, 0.43301270, 0.5]) < 1e-6);
    assert!((s["probability"].as_f64().unwrap() - 3.0 / 16.0).abs() < 1e-15);

    let (schema, header, rows) = read_csv(&out.join("trajectory.csv"));
    assert_eq!(schema, "# schema: quasimeas-trajectory/1");
    assert_eq!(
        header,
        ["t", "n_x", "n_y", "n_z", "norm_n", "rate_n", "epsilon"]
    );
    // The last row is the summary's final state, exactly.
    let last = rows.last().unwrap();
    let final_csv = [1, 2, 3].map(|i| last[i].parse::<f64>().unwrap());
    assert_eq!(final_csv, vec3(&s["final_state"]));
}

#[test]
fn negative_g0_is_a_usage_error_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = variant(dir.path(), "fig2", &[("g0 = 1e9", "g0 = -1e9")], "");
    let o = quasimeas(&["run", path(&cfg), "-o", path(&dir.path().join("x"))]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("driving.g0"), "{err}");
    assert!(err.contains(":14:"), "{err}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = variant(
        dir.path(),
        "fig2",
        &[("kappa = 1e5", "kappa = 1e5\nkapa = 3")],
        "",
    );
    let o = quasimeas(&["run", path(&cfg), "-o", path(&dir.path().join("x"))]);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("unknown field `kapa`"),
        "{}",
        stderr(&o)
    );
    assert!(stderr(&o).contains("line 16"), "{}", stderr(&o));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = TempDir::new().unwrap();
    let cfg = variant(
        dir.path(),
        "fig2",
        &[("branch = \"plus\"", "branch = \"sampled\"")],
        "",
    );
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let o = quasimeas(&[
            "run",
            path(&cfg),
            "-o",
            path(&out),
            "--seed",
            "11",
            "--t-end",
            "2e-5",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (
            std::fs::read(out.join("trajectory.csv")).unwrap(),
            std::fs::read(out.join("summary.json")).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn enabled_checks_are_reported() {
    let dir = TempDir::new().unwrap();
    let cfg = variant(
        dir.path(),
        "fig3-pure",
        &[],
        "\n[checks]\nquasilinearity = true\ncross_validate = true\n",
    );
    let out = dir.path().join("ok");
    let o = quasimeas(&["run", path(&cfg), "-o", path(&out), "--t-end", "2e-5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = json(&out.join("summary.json"));
    let q = &s["checks"]["quasilinearity"];
    assert_eq!(q["passed"], true);
    assert!(q["max_residual"].as_f64().unwrap() < 1e-8);
    let c = &s["checks"]["cross_validation"];
    assert_eq!(c["passed"], true);
    assert!(c["max_purity_drift"].as_f64().unwrap() < 1e-8);
}

#[test]
fn failed_check_exits_with_two() {
    // A loose tolerance leaves the routes further apart than the check allows.
    let dir = TempDir::new().unwrap();
    let cfg = variant(
        dir.path(),
        "fig2",
        &[],
        "\n[checks]\ncross_validate = true\n",
    );
    let out = dir.path().join("loose");
    let o = quasimeas(&[
        "run",
        path(&cfg),
        "-o",
        path(&out),
        "--t-end",
        "2e-5",
        "--rtol",
        "1e-4",
        "--atol",
        "1e-6",
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let s = json(&out.join("summary.json"));
    assert_eq!(s["passed"], false);
    assert!(
        s["checks"]["cross_validation"]["max_bloch_density"]
            .as_f64()
            .unwrap()
            >= 1e-7
    );
}

#[test]
fn two_qubit_run_adds_b_and_correlation_columns() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("pair");
    let o = quasimeas(&[
        "run",
        path(&preset("fig5")),
        "-o",
        path(&out),
        "--t-end",
        "1e-4",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, header, rows) = read_csv(&out.join("trajectory.csv"));
    assert_eq!(&header[7..10], ["nB_x", "nB_y", "nB_z"]);
    assert_eq!(header[10], "T_11");
    assert_eq!(header[18], "T_33");
    assert!(rows.iter().all(|r| r.len() == header.len()));
    let s = json(&out.join("summary.json"));
    assert!(s["two_qubit"]["min_joint_eigenvalue"].as_f64().unwrap() >= -1e-9);
}

#[test]
fn sweep_config_is_refused_by_run() {
    let dir = TempDir::new().unwrap();
    let cfg = variant(dir.path(), "fig2", &[], "\n[sweep]\ng0 = [1e8]\n");
    let o = quasimeas(&["run", path(&cfg), "-o", path(&dir.path().join("x"))]);
    assert_eq!(code(&o), 1);
}

fn reproduce(fig: &str, dir: &Path) -> (Output, Value) {
    let o = quasimeas(&["reproduce", fig, "-o", path(dir)]);
    let block = json(&dir.join("comparison.json"));
    (o, block)
}

#[test]
fn reproduce_fig2_converges_on_both_branches() {
    let dir = TempDir::new().unwrap();
    let (o, block) = reproduce("fig2", dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(block["passed"], true);
    for (branch, sign) in [("plus", 1.0), ("minus", -1.0)] {
        let s = json(&dir.path().join(format!("fig2_{branch}.json")));
        assert_eq!(s["converged"], true);
        let w = [0.75, 3f64.sqrt() / 4.0, 0.5].map(|x| sign * x);
        assert!(dist(vec3(&s["final_state"]), w) < 1e-5);
        assert!(dir.path().join(format!("fig2_{branch}.csv")).exists());
    }
}

#[test]
fn reproduce_fig3_matches_fig2_finals() {
    let dir = TempDir::new().unwrap();
    let (o, block) = reproduce("fig3", dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let checks = block["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 4);
    for c in checks {
        assert_eq!(c["passed"], true, "{c}");
        assert!(c["measured"].as_f64().unwrap() < 2e-6);
    }
}

#[test]
fn reproduce_fig4_converges() {
    let dir = TempDir::new().unwrap();
    let (o, block) = reproduce("fig4", dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(block["passed"], true);
}

#[test]
fn reproduce_fig5_reports_each_marginal() {
    let dir = TempDir::new().unwrap();
    let (o, block) = reproduce("fig5", dir.path());
    let checks = block["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 6);
    // The exit status follows the comparison block.
    let all = checks.iter().all(|c| c["passed"] == true);
    assert_eq!(block["passed"], all);
    assert_eq!(code(&o), if all { 0 } else { 2 }, "{}", stderr(&o));
    for c in checks {
        let name = c["name"].as_str().unwrap();
        if name.contains(" A ") || name.contains("eigenvalue") {
            assert_eq!(c["passed"], true, "{c}");
        }
    }
    let (_, header, _) = read_csv(&dir.path().join("fig5_minus.csv"));
    assert!(header.contains(&"nB_z".to_string()));
}

fn sweep(cfg: &Path, out: &Path, jobs: &str, extra: &[&str]) -> Output {
    let mut args = vec!["sweep", path(cfg), "-o", path(out), "--jobs", jobs];
    args.extend_from_slice(extra);
    quasimeas(&args)
}

#[test]
fn theta_sweep_converges_outside_the_critical_band() {
    let dir = TempDir::new().unwrap();
    let cfg = variant(
        dir.path(),
        "fig2",
        &[],
        "\n[sweep]\nbranches = [\"plus\"]\ntheta_angle = { start = 0.2, stop = 1.3, count = 23 }\n",
    );
    let out = dir.path().join("theta");
    let o = sweep(&cfg, &out, "2", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (schema, header, rows) = read_csv(&out.join("sweep.csv"));
    assert_eq!(schema, "# schema: quasimeas-sweep/1");
    assert_eq!(rows.len(), 23);
    let (th, err, conv) = (
        column(&header, "theta_angle"),
        column(&header, "error"),
        column(&header, "converged"),
    );
    for (k, r) in rows.iter().enumerate() {
        let theta: f64 = r[th].parse().unwrap();
        assert!((theta - (0.2 + 0.05 * k as f64)).abs() < 1e-9);
        if (theta - FRAC_PI_2).abs() > 0.1 {
            assert_eq!(r[conv], "true");
            assert!(r[err].parse::<f64>().unwrap() < 1e-5);
        }
    }
}

#[test]
fn g0_sweep_finals_do_not_depend_on_g0() {
    let dir = TempDir::new().unwrap();
    let cfg = variant(
        dir.path(),
        "fig4",
        &[],
        "\n[sweep]\ng0 = [1e7, 1e8, 1e9, 1e10]\n",
    );
    let out = dir.path().join("g0");
    let o = sweep(&cfg, &out, "1", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, header, rows) = read_csv(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 8);
    let (b, x) = (column(&header, "branch"), column(&header, "n_x"));
    for branch in ["plus", "minus"] {
        let finals: Vec<[f64; 3]> = rows
            .iter()
            .filter(|r| r[b] == branch)
            .map(|r| [0, 1, 2].map(|i| r[x + i].parse().unwrap()))
            .collect();
        assert_eq!(finals.len(), 4);
        for p in &finals {
            for q in &finals {
                assert!(dist(*p, *q) < 1e-5);
            }
        }
    }
}

#[test]
fn sweep_rows_do_not_depend_on_worker_count() {
    let dir = TempDir::new().unwrap();
    let cfg = variant(
        dir.path(),
        "fig2",
        &[],
        "\n[sweep]\ntheta_angle = [0.3, 0.9, 1.5]\nkappa = [1e5, 3e5]\n",
    );
    let run = |jobs: &str| {
        let out = dir.path().join(format!("j{jobs}"));
        let o = sweep(&cfg, &out, jobs, &["--t-end", "5e-6"]);
        // Too short to converge: exit 2, but the rows are still written.
        assert_eq!(code(&o), 2, "{}", stderr(&o));
        std::fs::read(out.join("sweep.csv")).unwrap()
    };
    let one = run("1");
    assert_eq!(one, run("3"));
    let text = String::from_utf8(one).unwrap();
    assert_eq!(text.lines().count(), 2 + 12);
}

#[test]
fn near_critical_cells_are_exempt_from_convergence() {
    let dir = TempDir::new().unwrap();
    let inside = variant(
        dir.path(),
        "fig2",
        &[],
        "\n[sweep]\ntheta_angle = [1.5, 1.6]\n",
    );
    let o = sweep(&inside, &dir.path().join("in"), "1", &["--t-end", "2e-6"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, header, rows) = read_csv(&dir.path().join("in").join("sweep.csv"));
    let nc = column(&header, "near_critical");
    assert!(rows.iter().all(|r| r[nc] == "true"));

    let outside = variant(dir.path(), "fig2", &[], "\n[sweep]\ntheta_angle = [1.0]\n");
    let o = sweep(&outside, &dir.path().join("out"), "1", &["--t-end", "2e-6"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn empty_range_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    for spec in [
        "g0 = []",
        "theta_angle = { start = 0.2, stop = 1.3, count = 0 }",
        "branches = []",
    ] {
        let cfg = variant(dir.path(), "fig2", &[], &format!("\n[sweep]\n{spec}\n"));
        let o = sweep(&cfg, &dir.path().join("e"), "1", &[]);
        assert_eq!(code(&o), 1, "{spec}");
        assert!(stderr(&o).contains("empty"), "{}", stderr(&o));
    }
}

#[test]
fn cell_failures_are_recorded_in_row() {
    // Starting on +ω̂ makes the minus branch impossible.
    let dir = TempDir::new().unwrap();
    let cfg = variant(
        dir.path(),
        "fig2",
        &[(
            "bloch = [-0.5, 0.0, -0.5]",
            "bloch = [0.75, 0.4330127018922193, 0.5]",
        )],
        "\n[sweep]\ntheta_angle = [0.5]\n",
    );
    let out = dir.path().join("fail");
    let o = sweep(&cfg, &out, "2", &["--t-end", "2e-6"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let (_, header, rows) = read_csv(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 2);
    let st = column(&header, "status");
    let b = column(&header, "branch");
    for r in &rows {
        match r[b].as_str() {
            "plus" => assert_eq!(r[st], "ok"),
            _ => assert!(r[st].starts_with("error: zero-probability"), "{r:?}"),
        }
    }
}
