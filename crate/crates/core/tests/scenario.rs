use std::fs;
use std::path::{Path, PathBuf};

use adiabat_core::scenario::{
    execute, parse_scenario, run_scenario, run_suite, ConfigError, Experiment, Initial, RunOptions, SuiteStatus,
};
use adiabat_core::spectra::SpectrumFamily;
use adiabat_core::Exec;
use serde_json::Value;

const MINIMAL: &str = r#"
experiment = "continuum_advect"

[spectrum]
family = "power_law"
C = 1.0
kappa = 1.0
eta = 2.0

[initial]
kind = "canonical"
T0 = 1.0

[sweep]
a_start = 1.0
a_end = 2.0
"#;

const NO_CROSSING: &str = r#"
name = "parallel_lines"
experiment = "discrete_sweep"

[spectrum]
family = "linear_ensemble"
intercepts = [0.0, 1.0, 2.0]
slopes = [0.5, 0.5, 0.5]
degeneracies = [1, 2, 1]

[initial]
kind = "canonical"
T0 = 1.0

[sweep]
a_start = 0.0
a_end = 3.0
checkpoints = [0.0, 1.5, 3.0]
"#;

const POWER_COMPARE: &str = r#"
name = "power_compare"
experiment = "compare"

[spectrum]
family = "power_law"
C = 2.0
kappa = 1.5
eta = 1.0

[initial]
kind = "canonical"
T0 = 0.7

[sweep]
a_start = 1.0
a_end = 3.0
checkpoints = [1.0, 2.0, 3.0]

[numerics]
ode_rel_tol = 1e-12
ode_abs_tol = 1e-14
grid_nodes = 1024
"#;

fn with(base: &str, from: &str, to: &str) -> String {
    assert!(base.contains(from), "{from}");
    base.replacen(from, to, 1)
}

fn summary(files: &[adiabat_core::scenario::OutputFile]) -> Value {
    let f = files.iter().find(|f| f.name == "summary.json").unwrap();
    serde_json::from_str(&f.contents).unwrap()
}

#[test]
fn minimal_config_gets_defaults() {
    let s = parse_scenario(MINIMAL).unwrap();
    assert_eq!(s.experiment, Experiment::ContinuumAdvect);
    assert_eq!(s.name, "continuum_advect");
    assert_eq!(s.output, "continuum_advect");
    assert_eq!(s.sweep.checkpoints, vec![1.0, 2.0]);
    assert!(!s.sweep.round_trip);
    assert_eq!(s.numerics.ode_rel_tol, 1e-10);
    assert_eq!(s.numerics.ode_abs_tol, 1e-12);
    assert_eq!(s.numerics.grid_nodes, 2048);
    assert_eq!(s.numerics.detection_tol, 1e-9);
    assert_eq!(s.initial, Initial::Canonical { t0: 1.0 });
    assert!(matches!(s.spectrum, SpectrumFamily::PowerLaw { size: None, .. }));
}

#[test]
fn equal_sweep_ends_are_rejected() {
    let err = parse_scenario(&with(MINIMAL, "a_end = 2.0", "a_end = 1.0")).unwrap_err();
    assert_eq!(err.code(), "constraint");
    match err {
        ConfigError::Constraint { key, constraint, .. } => {
            assert_eq!(key, "sweep.a_end");
            assert_eq!(constraint, "a_start != a_end");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn custom_table_must_normalize() {
    let text = with(
        NO_CROSSING,
        "kind = \"canonical\"\nT0 = 1.0",
        "kind = \"custom_table\"\nw = [0.2, 0.2, 0.2]",
    );
    match parse_scenario(&text).unwrap_err() {
        ConfigError::Constraint { key, constraint, .. } => {
            assert_eq!(key, "initial.w");
            assert!(constraint.starts_with("normalization"), "{constraint}");
        }
        other => panic!("{other:?}"),
    }
    let ok = with(
        NO_CROSSING,
        "kind = \"canonical\"\nT0 = 1.0",
        "kind = \"custom_table\"\nw = [0.25, 0.25, 0.25]",
    );
    assert!(parse_scenario(&ok).is_ok());

    let continuum = with(
        MINIMAL,
        "kind = \"canonical\"\nT0 = 1.0",
        "kind = \"custom_table\"\nepsilon = [0.1, 1.0, 2.0]\nw = [1.0, 1.0, 1.0]",
    );
    match parse_scenario(&continuum).unwrap_err() {
        ConfigError::Constraint { constraint, .. } => assert!(constraint.starts_with("normalization")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn error_kinds_have_distinct_codes() {
    let cases = [
        ("experiment = [", "syntax"),
        (&*with(MINIMAL, "continuum_advect", "teleport"), "unknown_experiment"),
        (&*with(MINIMAL, "T0 = 1.0", ""), "missing_key"),
        (&*with(MINIMAL, "eta = 2.0", "eta = 2.0\nzeta = 1.0"), "unknown_key"),
        (&*with(MINIMAL, "C = 1.0", "C = \"one\""), "type"),
        (&*with(MINIMAL, "a_end = 2.0", "a_end = 2.0\ncheckpoints = [3.0]"), "constraint"),
    ];
    for (text, code) in cases {
        assert_eq!(parse_scenario(text).unwrap_err().code(), code, "{text}");
    }
    match parse_scenario(&with(MINIMAL, "T0 = 1.0", "")).unwrap_err() {
        ConfigError::MissingKey(k) => assert_eq!(k, "initial.T0"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn experiment_family_mismatch_is_a_constraint() {
    let text = with(MINIMAL, "continuum_advect", "discrete_sweep");
    assert_eq!(parse_scenario(&text).unwrap_err().code(), "constraint");
    let text = with(MINIMAL, "[sweep]", "[study]\nlevels = [10]\n\n[sweep]").replace("continuum_advect", "refine_entropy");
    assert_eq!(parse_scenario(&text).unwrap_err().code(), "constraint");
}

#[test]
fn no_crossing_sweep_produces_no_entropy() {
    let s = parse_scenario(NO_CROSSING).unwrap();
    let files = execute(&s, &RunOptions::default()).unwrap();
    let v = summary(&files);
    assert_eq!(v["total_delta_s"], 0.0);
    assert_eq!(v["crossings"], 0);
    let names: Vec<&str> = files.iter().map(|f| f.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "trajectory.csv",
            "ledger.csv",
            "distribution_0.csv",
            "distribution_1.5.csv",
            "distribution_3.csv",
            "summary.json"
        ]
    );
    let traj = &files[0].contents;
    assert!(traj.starts_with("a,S,E_mean,E_var\n"));
    let s_values: Vec<&str> = traj.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert!(s_values.windows(2).all(|w| w[0] == w[1]), "{traj}");
    assert_eq!(files[1].contents, "a_star,level_ids,w_before,w_after,delta_s\n");
    assert!(files[2].contents.starts_with("id,energy,degeneracy,w\n"));
}

#[test]
fn power_law_compare_keeps_processes_together() {
    let s = parse_scenario(POWER_COMPARE).unwrap();
    let files = execute(&s, &RunOptions::default()).unwrap();
    let v = summary(&files);
    let gap = v["max_relative_energy_gap"].as_f64().unwrap();
    assert!(gap < 1e-8, "{gap}");
    let cmp = files.iter().find(|f| f.name == "comparison.csv").unwrap();
    assert!(cmp.contents.starts_with(
        "a,T,E_zp,E_ad,dE_zp_measured,dE_zp_predicted,dE_ad_measured,dE_ad_predicted,S_ad,S_zp\n"
    ));
    assert_eq!(cmp.contents.lines().count(), 4);
    let snap = files.iter().find(|f| f.name == "distribution_2.csv").unwrap();
    assert!(snap.contents.starts_with("epsilon,G,w,w_zp\n"));
    for line in snap.contents.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((cols[2] - cols[3]).abs() <= 1e-6 * cols[3], "{line}");
    }
}

#[test]
fn numbers_round_trip_through_csv() {
    let s = parse_scenario(NO_CROSSING).unwrap();
    let files = execute(&s, &RunOptions::default()).unwrap();
    for f in files.iter().filter(|f| f.name.ends_with(".csv")) {
        assert!(!f.contents.contains('\r'));
        for line in f.contents.lines().skip(1) {
            for field in line.split(',').flat_map(|x| x.split(';')) {
                if field.contains('e') {
                    let x: f64 = field.parse().unwrap();
                    assert_eq!(format!("{x:.16e}"), field);
                }
            }
        }
    }
}

#[test]
fn rerun_gives_identical_digests() {
    let s = parse_scenario(POWER_COMPARE).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let first = run_scenario(&s, dir.path(), &RunOptions::default()).unwrap();
    let second = run_scenario(&s, &dir.path().join("again"), &RunOptions { exec: Exec::Sequential }).unwrap();
    assert_eq!(first.files, second.files);
    let out = dir.path().join("power_compare");
    let mut on_disk: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let mut listed: Vec<String> = first.files.iter().map(|f| f.name.clone()).collect();
    listed.sort();
    assert_eq!(on_disk, listed);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenario"]["name"], "power_compare");
    assert_eq!(manifest["files"].as_array().unwrap().len(), listed.len());
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn suite_isolates_failures() {
    let cfg = tempfile::tempdir().unwrap();
    let paths = vec![
        write(cfg.path(), "a.toml", NO_CROSSING),
        write(cfg.path(), "b.toml", &with(MINIMAL, "T0 = 1.0", "T0 = 1e-300")),
        write(cfg.path(), "c.toml", POWER_COMPARE),
    ];
    let out = tempfile::tempdir().unwrap();
    let report = run_suite(&paths, 2, out.path(), &RunOptions::default()).unwrap();
    let status: Vec<SuiteStatus> = report.scenarios.iter().map(|e| e.status).collect();
    assert_eq!(status, [SuiteStatus::Ok, SuiteStatus::Failed, SuiteStatus::Ok]);
    assert_eq!(report.manifests().count(), 2);
    assert_eq!(report.exit_code(), 3);
    assert!(out.path().join("index.json").exists());
    assert!(out.path().join("parallel_lines/manifest.json").exists());
    assert!(out.path().join("power_compare/manifest.json").exists());

    let bad = write(cfg.path(), "d.toml", "experiment = \"nope\"");
    let report = run_suite(&[paths[0].clone(), bad], 1, out.path(), &RunOptions::default()).unwrap();
    assert_eq!(report.scenarios[1].status, SuiteStatus::ConfigError);
    assert_eq!(report.exit_code(), 2);
}

#[test]
fn suite_rejects_shared_output_directories() {
    let cfg = tempfile::tempdir().unwrap();
    let paths = vec![
        write(cfg.path(), "a.toml", NO_CROSSING),
        write(cfg.path(), "b.toml", NO_CROSSING),
    ];
    let out = tempfile::tempdir().unwrap();
    let report = run_suite(&paths, 2, out.path(), &RunOptions::default()).unwrap();
    assert_eq!(report.scenarios[0].status, SuiteStatus::Ok);
    assert_eq!(report.scenarios[1].status, SuiteStatus::ConfigError);
}

#[test]
fn suite_digests_do_not_depend_on_jobs() {
    let cfg = tempfile::tempdir().unwrap();
    let paths = vec![
        write(cfg.path(), "a.toml", NO_CROSSING),
        write(cfg.path(), "b.toml", POWER_COMPARE),
        write(cfg.path(), "c.toml", MINIMAL),
    ];
    let one = tempfile::tempdir().unwrap();
    let four = tempfile::tempdir().unwrap();
    let r1 = run_suite(&paths, 1, one.path(), &RunOptions::default()).unwrap();
    let r4 = run_suite(&paths, 4, four.path(), &RunOptions::default()).unwrap();
    let d = |r: &adiabat_core::scenario::SuiteReport| -> Vec<_> { r.scenarios.iter().map(|e| e.files.clone()).collect() };
    assert_eq!(d(&r1), d(&r4));
    assert_eq!(
        fs::read(one.path().join("index.json")).unwrap(),
        fs::read(four.path().join("index.json")).unwrap()
    );
}

#[test]
fn round_trips_report_irreversibility() {
    let text = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/ladder_round_trip.toml")).unwrap();
    let s = parse_scenario(&text).unwrap();
    let files = execute(&s, &RunOptions::default()).unwrap();
    let v = summary(&files);
    assert!(v["round_trip"]["l1_to_initial"].as_f64().unwrap() > 0.0);
    assert!(v["total_delta_s"].as_f64().unwrap() > 0.0);
    assert!(files.iter().any(|f| f.name == "distribution_1_return.csv"));

    let text = with(MINIMAL, "a_end = 2.0", "a_end = 2.0\nround_trip = true");
    let files = execute(&parse_scenario(&text).unwrap(), &RunOptions::default()).unwrap();
    let linf = summary(&files)["round_trip"]["linf_relative"].as_f64().unwrap();
    assert!(linf < 1e-6, "{linf}");
}
