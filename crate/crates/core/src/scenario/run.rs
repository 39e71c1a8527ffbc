//! Experiment dispatch and suite execution.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};

use super::config::{parse_scenario, ConfigError, Experiment, Initial, Scenario};
use super::report::{distribution_name, to_json, write_files, FileDigest, OutputFile, RunManifest};
use crate::continuum::{
    advect_with, continuum_entropy, continuum_moments, fitted_temperature, AdvectOptions,
    ContinuumDistribution,
};
use crate::crossing::{
    find_crossings_with, ledger_csv, refine_csv, refine_study, sweep_adiabatic, trajectory_csv,
    LadderRefinement, RefineOptions, ScanOptions, TrajectorySample,
};
use crate::error::{Error, Result};
use crate::microstate::{canonical_init, entropy, ProbabilityState};
use crate::numerics::fit_line;
use crate::par::Exec;
use crate::spectra::{DiscreteSpectrum, SpectrumFamily};
use crate::thermo::{
    compare_processes, isentropic_temperature, predict_fluctuations, size_scaling_study,
    CanonicalEnsemble, CompareOptions, Source,
};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub exec: Exec,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Config {
        path: String,
        #[source]
        source: ConfigError,
    },
    #[error("scenario `{scenario}`: {source}")]
    Model {
        scenario: String,
        #[source]
        source: Error,
    },
    #[error("scenario `{scenario}`: {path}: {source}")]
    Io {
        scenario: String,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit status: 2 for configuration errors, 3 for run failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config { .. } => 2,
            RunError::Model { .. } | RunError::Io { .. } => 3,
        }
    }
}

/// Runs `scenario` and writes its reports to `out_root/<output>`.
pub fn run_scenario(scenario: &Scenario, out_root: &Path, opts: &RunOptions) -> std::result::Result<RunManifest, RunError> {
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();
    let files = execute(scenario, opts).map_err(|source| RunError::Model {
        scenario: scenario.name.clone(),
        source,
    })?;
    let dir = out_root.join(&scenario.output);
    let io_err = |path: PathBuf| {
        let scenario = scenario.name.clone();
        move |source| RunError::Io { scenario, path, source }
    };
    let digests = write_files(&dir, &files).map_err(io_err(dir.clone()))?;
    let manifest = RunManifest {
        scenario: scenario.clone(),
        tool: "adiabat",
        version: env!("CARGO_PKG_VERSION"),
        started_unix,
        duration_s: clock.elapsed().as_secs_f64(),
        files: digests,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, to_json(&manifest)).map_err(io_err(path.clone()))?;
    Ok(manifest)
}

/// Computes every data file of a run without touching the filesystem.
pub fn execute(s: &Scenario, opts: &RunOptions) -> Result<Vec<OutputFile>> {
    match s.experiment {
        Experiment::DiscreteSweep => discrete_sweep(s, opts),
        Experiment::ContinuumAdvect => continuum_advect(s, opts),
        Experiment::Compare => compare(s, opts),
        Experiment::RefineEntropy => refine(s, opts),
        Experiment::SizeScaling => scaling(s, opts),
    }
}

fn summary(s: &Scenario, body: Value) -> OutputFile {
    let mut v = json!({ "name": s.name, "experiment": s.experiment.name(), "family": s.spectrum.name() });
    if let (Value::Object(head), Value::Object(rest)) = (&mut v, body) {
        head.extend(rest);
    }
    OutputFile::new("summary.json", to_json(&v))
}

fn discrete_initial(s: &Scenario, spectrum: &DiscreteSpectrum) -> Result<ProbabilityState> {
    match &s.initial {
        Initial::Canonical { t0 } => canonical_init(spectrum, s.sweep.a_start, *t0),
        Initial::Uniform { .. } => {
            let w = vec![1.0 / spectrum.total_states(); spectrum.len()];
            ProbabilityState::for_spectrum(spectrum, w)
        }
        Initial::CustomTable { w, .. } => ProbabilityState::for_spectrum(spectrum, w.clone()),
    }
}

fn discrete_sweep(s: &Scenario, opts: &RunOptions) -> Result<Vec<OutputFile>> {
    let spectrum = s.spectrum.discrete(s.sweep.range())?;
    let initial = discrete_initial(s, &spectrum)?;
    let scan = ScanOptions {
        exec: opts.exec,
        ..ScanOptions::default()
    };
    let schedule = find_crossings_with(&spectrum, s.numerics.detection_tol, &scan)?;
    let out = sweep_adiabatic(&spectrum, &initial, &schedule, &s.sweep.checkpoints)?;

    let mut files = Vec::new();
    let mut samples: Vec<TrajectorySample> = out.trajectory_samples.clone();
    let mut ledger = out.ledger.clone();
    for (smp, state) in out.trajectory_samples.iter().zip(&out.snapshots) {
        files.push(OutputFile::new(distribution_name(smp.a, ""), state.to_csv(&spectrum, smp.a)?));
    }
    let s0 = entropy(&initial);
    let mut body = json!({
        "levels": spectrum.len(),
        "total_states": spectrum.total_states(),
        "crossings": schedule.len(),
        "grouped_crossings": schedule.grouped_count(),
        "entropy_initial": s0,
        "total_delta_s": out.total_delta_s,
        "entropy_final": entropy(&out.final_state),
    });
    if s.sweep.round_trip {
        let back_spec = spectrum.reversed();
        let back = sweep_adiabatic(&back_spec, &out.final_state, &schedule, &s.sweep.checkpoints)?;
        for (smp, state) in back.trajectory_samples.iter().zip(&back.snapshots) {
            files.push(OutputFile::new(distribution_name(smp.a, "_return"), state.to_csv(&spectrum, smp.a)?));
        }
        let offset = out.total_delta_s;
        samples.extend(back.trajectory_samples.iter().map(|t| TrajectorySample {
            entropy: t.entropy + offset,
            ..*t
        }));
        ledger.extend(back.ledger.iter().cloned());
        let total = out.total_delta_s + back.total_delta_s;
        body["round_trip"] = json!({
            "delta_s_out": out.total_delta_s,
            "delta_s_back": back.total_delta_s,
            "l1_to_initial": back.final_state.l1_distance(&initial)?,
        });
        body["total_delta_s"] = json!(total);
        body["entropy_final"] = json!(entropy(&back.final_state));
    }
    files.insert(0, OutputFile::new("ledger.csv", ledger_csv(&ledger)));
    files.insert(0, OutputFile::new("trajectory.csv", trajectory_csv(&samples)));
    files.push(summary(s, body));
    Ok(files)
}

fn continuum_initial(s: &Scenario) -> Result<ContinuumDistribution> {
    let dos = s.spectrum.analytic_dos()?;
    let a0 = s.sweep.a_start;
    let grid = s.numerics.grid();
    match &s.initial {
        Initial::Canonical { t0 } => ContinuumDistribution::canonical(dos, a0, *t0, &grid),
        Initial::Uniform { e_max } => {
            let e_max = e_max.ok_or_else(|| Error::domain("uniform continuum state needs e_max"))?;
            ContinuumDistribution::uniform(dos, a0, e_max, &grid)
        }
        Initial::CustomTable { epsilon, w } => {
            let eps = epsilon
                .clone()
                .ok_or_else(|| Error::domain("continuum custom table needs epsilon"))?;
            ContinuumDistribution::from_values(dos, a0, eps, w)
        }
    }
}

fn advect_options(s: &Scenario, exec: Exec) -> AdvectOptions {
    AdvectOptions {
        tol: s.numerics.tolerance(),
        exec,
        target_grid: None,
    }
}

fn sample_of(dist: &ContinuumDistribution) -> TrajectorySample {
    let (mean, variance) = continuum_moments(dist);
    TrajectorySample {
        a: dist.a(),
        entropy: continuum_entropy(dist),
        mean,
        variance,
    }
}

fn continuum_advect(s: &Scenario, opts: &RunOptions) -> Result<Vec<OutputFile>> {
    let initial = continuum_initial(s)?;
    let adv = advect_options(s, opts.exec);
    let source = Source::Continuum(initial.dos().clone());
    let s0 = continuum_entropy(&initial);

    let mut files = Vec::new();
    let mut samples = Vec::new();
    let mut checkpoints = Vec::new();
    for &a in &s.sweep.checkpoints {
        let dist = advect_with(&initial, a, &adv)?;
        let smp = sample_of(&dist);
        let fit = fitted_temperature(&dist);
        let t_isentropic = match s.initial {
            Initial::Canonical { t0 } => Some(isentropic_temperature(&source, s.sweep.a_start, t0, a)?),
            _ => None,
        };
        checkpoints.push(json!({
            "a": a,
            "entropy": smp.entropy,
            "mean": smp.mean,
            "variance": smp.variance,
            "normalization": dist.normalization(),
            "fitted_temperature": fit.map(|f| f.0),
            "log_linear_residual": fit.map(|f| f.1),
            "isentropic_temperature": t_isentropic,
        }));
        files.push(OutputFile::new(distribution_name(a, ""), dist.to_csv()));
        samples.push(smp);
    }
    let drift = samples
        .iter()
        .map(|x| ((x.entropy - s0) / s0).abs())
        .fold(0.0, f64::max);
    let mut body = json!({
        "entropy_initial": s0,
        "max_relative_entropy_drift": drift,
        "total_delta_s": 0.0,
        "checkpoints": checkpoints,
    });
    if s.sweep.round_trip {
        let there = advect_with(&initial, s.sweep.a_end, &adv)?;
        let back_opts = AdvectOptions {
            target_grid: Some(initial.grid().to_vec()),
            ..adv
        };
        let back = advect_with(&there, s.sweep.a_start, &back_opts)?;
        let (w0, w1) = (initial.w(), back.w());
        let peak = w0.iter().copied().fold(0.0, f64::max);
        let linf = w0.iter().zip(&w1).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / peak;
        samples.push(sample_of(&back));
        files.push(OutputFile::new(distribution_name(s.sweep.a_start, "_return"), back.to_csv()));
        body["round_trip"] = json!({
            "linf_relative": linf,
            "entropy_final": continuum_entropy(&back),
        });
    }
    files.insert(0, OutputFile::new("trajectory.csv", trajectory_csv(&samples)));
    files.push(summary(s, body));
    Ok(files)
}

fn t0_of(s: &Scenario) -> Result<f64> {
    match s.initial {
        Initial::Canonical { t0 } => Ok(t0),
        _ => Err(Error::domain("this experiment starts from a canonical state")),
    }
}

fn compare_options(s: &Scenario, exec: Exec) -> CompareOptions {
    CompareOptions {
        grid: s.numerics.grid(),
        advect: advect_options(s, Exec::Sequential),
        detection_tol: s.numerics.detection_tol,
        exec,
    }
}

/// `epsilon,G,w,w_zp`: the transported state beside the canonical state of
/// the zero-polytropic process at the same `a`.
fn snapshot_pair_csv(ad: &ContinuumDistribution, t: f64) -> Result<String> {
    let ln_z = CanonicalEnsemble::continuum(ad.dos().clone(), ad.a(), t)?.ln_partition_function()?;
    let mut out = String::from("epsilon,G,w,w_zp\n");
    for (e, w) in ad.grid().iter().zip(ad.w()) {
        let g = ad.dos().g(*e, ad.a());
        let w_zp = (-e / t - ln_z).exp();
        let _ = writeln!(out, "{e:.16e},{g:.16e},{w:.16e},{w_zp:.16e}");
    }
    Ok(out)
}

fn compare(s: &Scenario, opts: &RunOptions) -> Result<Vec<OutputFile>> {
    let t0 = t0_of(s)?;
    let a0 = s.sweep.a_start;
    let copts = compare_options(s, opts.exec);
    let cmp = compare_processes(&s.spectrum, a0, t0, &s.sweep.checkpoints, &copts)?;

    let mut files = vec![OutputFile::new("comparison.csv", cmp.to_csv())];
    let samples: Vec<TrajectorySample> = cmp
        .rows
        .iter()
        .map(|r| TrajectorySample {
            a: r.a,
            entropy: r.s_ad,
            mean: r.e_ad,
            variance: r.de_ad_measured * r.de_ad_measured,
        })
        .collect();
    files.insert(0, OutputFile::new("trajectory.csv", trajectory_csv(&samples)));
    if !s.spectrum.is_discrete() {
        let initial = ContinuumDistribution::canonical(s.spectrum.analytic_dos()?, a0, t0, &copts.grid)?;
        let adv = advect_options(s, opts.exec);
        for r in &cmp.rows {
            let ad = advect_with(&initial, r.a, &adv)?;
            files.push(OutputFile::new(distribution_name(r.a, ""), snapshot_pair_csv(&ad, r.t)?));
        }
    }
    let last = cmp.rows.last().expect("at least one checkpoint");
    let source = Source::of_family(&s.spectrum, s.sweep.range())?;
    let pred = predict_fluctuations(&source, a0, t0, last.a)?;
    let to_ad = (last.de_ad_measured - pred.de_adiabatic).abs();
    let to_zp = (last.de_ad_measured - pred.de_zero_polytropic).abs();
    let zp_identity = cmp
        .rows
        .iter()
        .zip(&cmp.c_a)
        .map(|(r, c)| ((r.de_zp_measured.powi(2) - c * r.t * r.t) / (c * r.t * r.t)).abs())
        .fold(0.0, f64::max);
    let body = json!({
        "max_relative_energy_gap": cmp.max_relative_energy_gap(),
        "total_delta_s": cmp.delta_s_total,
        "c_a0": cmp.c_a0,
        "zero_polytropic_identity_max_rel_error": zp_identity,
        "final": {
            "a": last.a,
            "T": last.t,
            "c_a": pred.c_a1,
            "c_ratio": pred.c_a1 / pred.c_a0,
            "dE_ad_measured": last.de_ad_measured,
            "dE_ad_predicted": pred.de_adiabatic,
            "dE_zp_predicted": pred.de_zero_polytropic,
            "closer_to_adiabatic_prediction": to_ad < to_zp,
            "relative_error_adiabatic_prediction": to_ad / pred.de_adiabatic,
        },
    });
    files.push(summary(s, body));
    Ok(files)
}

fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    fit_line(&xs, &ys).map(|f| f.slope)
}

fn strictly_decreasing(xs: impl IntoIterator<Item = f64>) -> bool {
    let v: Vec<f64> = xs.into_iter().collect();
    v.windows(2).all(|w| w[1] < w[0])
}

fn refine(s: &Scenario, opts: &RunOptions) -> Result<Vec<OutputFile>> {
    let t0 = t0_of(s)?;
    let SpectrumFamily::TwoLadder { delta_a, delta_b, m_a, .. } = s.spectrum else {
        return Err(Error::UnsupportedFamily(format!(
            "refine_entropy needs two_ladder, got {}",
            s.spectrum.name()
        )));
    };
    let family = LadderRefinement {
        span: delta_a * f64::from(m_a),
        ratio: delta_b / delta_a,
    };
    let mut levels = s.study.as_ref().map(|st| st.levels.clone()).unwrap_or_default();
    levels.sort_unstable();
    let ropts = RefineOptions {
        grid: s.numerics.grid(),
        advect: advect_options(s, Exec::Sequential),
        detection_tol: s.numerics.detection_tol,
        exec: opts.exec,
    };
    let rows = refine_study(&family, &levels, s.sweep.range(), t0, &ropts)?;
    let ds: Vec<(f64, f64)> = rows.iter().map(|r| (r.spacing, r.total_delta_s)).collect();
    let l1: Vec<(f64, f64)> = rows.iter().map(|r| (r.spacing, r.distance_to_continuum)).collect();
    let body = json!({
        "span": family.span,
        "ratio": family.ratio,
        "rows": rows,
        "slope_delta_s_vs_spacing": log_log_slope(&ds),
        "slope_distance_vs_spacing": log_log_slope(&l1),
        "delta_s_strictly_decreasing": strictly_decreasing(rows.iter().map(|r| r.total_delta_s)),
        "distance_strictly_decreasing": strictly_decreasing(rows.iter().map(|r| r.distance_to_continuum)),
    });
    Ok(vec![OutputFile::new("scaling.csv", refine_csv(&rows)), summary(s, body)])
}

fn scaling(s: &Scenario, opts: &RunOptions) -> Result<Vec<OutputFile>> {
    let t0 = t0_of(s)?;
    let sizes = s.study.as_ref().map(|st| st.sizes.clone()).unwrap_or_default();
    let copts = compare_options(s, opts.exec);
    let study = size_scaling_study(&s.spectrum, &sizes, s.sweep.a_start, t0, s.sweep.a_end, &copts)?;
    let body = json!({
        "rows": study.rows,
        "slope_gap_vs_N": study.slope,
        "max_gap": study.rows.iter().map(|r| r.gap).fold(0.0, f64::max),
    });
    Ok(vec![OutputFile::new("scaling.csv", study.to_csv()), summary(s, body)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteStatus {
    Ok,
    ConfigError,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub config: String,
    pub name: Option<String>,
    pub output: Option<String>,
    pub status: SuiteStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub files: Vec<FileDigest>,
    #[serde(skip)]
    pub manifest: Option<RunManifest>,
    #[serde(skip)]
    pub exit_code: i32,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub scenarios: Vec<SuiteEntry>,
    pub failed: usize,
}

impl SuiteReport {
    /// Worst exit status over the suite: 0, 2 or 3.
    pub fn exit_code(&self) -> i32 {
        self.scenarios.iter().map(|e| e.exit_code).max().unwrap_or(0)
    }

    pub fn manifests(&self) -> impl Iterator<Item = &RunManifest> {
        self.scenarios.iter().filter_map(|e| e.manifest.as_ref())
    }
}

fn load(path: &Path) -> std::result::Result<Scenario, RunError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Config {
        path: display.clone(),
        source: ConfigError::Syntax(e.to_string()),
    })?;
    parse_scenario(&text).map_err(|source| RunError::Config { path: display, source })
}

fn entry(config: &Path, scenario: Option<&Scenario>, result: std::result::Result<RunManifest, RunError>) -> SuiteEntry {
    let (status, error, exit_code, manifest) = match result {
        Ok(m) => (SuiteStatus::Ok, None, 0, Some(m)),
        Err(e) => {
            let status = if e.exit_code() == 2 {
                SuiteStatus::ConfigError
            } else {
                SuiteStatus::Failed
            };
            (status, Some(e.to_string()), e.exit_code(), None)
        }
    };
    SuiteEntry {
        config: config.display().to_string(),
        name: scenario.map(|s| s.name.clone()),
        output: scenario.map(|s| s.output.clone()),
        status,
        error,
        files: manifest.as_ref().map(|m| m.files.clone()).unwrap_or_default(),
        manifest,
        exit_code,
    }
}

/// Runs every config with at most `jobs` scenarios in flight and writes
/// `index.json` under `out_root`. Failures are recorded per scenario.
pub fn run_suite(
    paths: &[PathBuf],
    jobs: usize,
    out_root: &Path,
    opts: &RunOptions,
) -> std::result::Result<SuiteReport, RunError> {
    let parsed: Vec<std::result::Result<Scenario, RunError>> = paths.iter().map(|p| load(p)).collect();
    let mut owner: HashMap<String, usize> = HashMap::new();
    let mut clash = vec![None; paths.len()];
    for (i, s) in parsed.iter().enumerate() {
        if let Ok(s) = s {
            if let Some(&j) = owner.get(&s.output) {
                clash[i] = Some(format!(
                    "output directory `{}` is already used by {}",
                    s.output,
                    paths[j].display()
                ));
            } else {
                owner.insert(s.output.clone(), i);
            }
        }
    }
    let run_one = |i: usize| -> SuiteEntry {
        match &parsed[i] {
            Err(e) => SuiteEntry {
                config: paths[i].display().to_string(),
                name: None,
                output: None,
                status: SuiteStatus::ConfigError,
                error: Some(e.to_string()),
                files: Vec::new(),
                manifest: None,
                exit_code: e.exit_code(),
            },
            Ok(s) => {
                let result = match &clash[i] {
                    Some(msg) => Err(RunError::Config {
                        path: paths[i].display().to_string(),
                        source: ConfigError::Constraint {
                            key: "output.dir".into(),
                            constraint: "disjoint output directories",
                            detail: msg.clone(),
                        },
                    }),
                    None => run_scenario(s, out_root, opts),
                };
                entry(&paths[i], Some(s), result)
            }
        }
    };
    let idx: Vec<usize> = (0..paths.len()).collect();
    let scenarios = run_pool(jobs.max(1), &idx, run_one);
    let failed = scenarios.iter().filter(|e| e.status != SuiteStatus::Ok).count();
    let report = SuiteReport { scenarios, failed };
    std::fs::create_dir_all(out_root)
        .and_then(|_| std::fs::write(out_root.join("index.json"), to_json(&report)))
        .map_err(|source| RunError::Io {
            scenario: "suite".into(),
            path: out_root.join("index.json"),
            source,
        })?;
    Ok(report)
}

#[cfg(feature = "parallel")]
fn run_pool<F>(jobs: usize, idx: &[usize], f: F) -> Vec<SuiteEntry>
where
    F: Fn(usize) -> SuiteEntry + Sync + Send,
{
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| idx.par_iter().map(|&i| f(i)).collect()),
        Err(_) => idx.iter().map(|&i| f(i)).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_pool<F>(_jobs: usize, idx: &[usize], f: F) -> Vec<SuiteEntry>
where
    F: Fn(usize) -> SuiteEntry + Sync + Send,
{
    idx.iter().map(|&i| f(i)).collect()
}
