//! Scenario documents: TOML with a few top-level keys and one level of
//! section tables. Every key is checked; unknown keys are rejected.

use std::collections::BTreeSet;

use serde::Serialize;
use toml::{Table, Value};

use crate::continuum::{ContinuumDistribution, GridOptions};
use crate::crossing::DEFAULT_DETECTION_TOL;
use crate::microstate::{ProbabilityState, NORM_TOL as DISCRETE_NORM_TOL};
use crate::numerics::ode::Tolerance;
use crate::spectra::{SpectrumFamily, SweepRange};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown experiment kind `{0}`")]
    UnknownExperiment(String),
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}` must be {expected}")]
    Type { key: String, expected: &'static str },
    #[error("key `{key}` violates constraint `{constraint}`: {detail}")]
    Constraint {
        key: String,
        constraint: &'static str,
        detail: String,
    },
}

impl ConfigError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Syntax(_) => "syntax",
            ConfigError::UnknownExperiment(_) => "unknown_experiment",
            ConfigError::MissingKey(_) => "missing_key",
            ConfigError::UnknownKey(_) => "unknown_key",
            ConfigError::Type { .. } => "type",
            ConfigError::Constraint { .. } => "constraint",
        }
    }

    fn constraint(key: impl Into<String>, constraint: &'static str, detail: impl Into<String>) -> Self {
        ConfigError::Constraint {
            key: key.into(),
            constraint,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    DiscreteSweep,
    ContinuumAdvect,
    Compare,
    RefineEntropy,
    SizeScaling,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::DiscreteSweep,
        Experiment::ContinuumAdvect,
        Experiment::Compare,
        Experiment::RefineEntropy,
        Experiment::SizeScaling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::DiscreteSweep => "discrete_sweep",
            Experiment::ContinuumAdvect => "continuum_advect",
            Experiment::Compare => "compare",
            Experiment::RefineEntropy => "refine_entropy",
            Experiment::SizeScaling => "size_scaling",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Initial {
    Canonical {
        #[serde(rename = "T0")]
        t0: f64,
    },
    /// Equal per-state probability; continuum runs need the energy cutoff.
    Uniform {
        #[serde(skip_serializing_if = "Option::is_none")]
        e_max: Option<f64>,
    },
    /// Discrete: `w` per level in id order. Continuum: `w` on `epsilon`.
    CustomTable {
        #[serde(skip_serializing_if = "Option::is_none")]
        epsilon: Option<Vec<f64>>,
        w: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub a_start: f64,
    pub a_end: f64,
    pub checkpoints: Vec<f64>,
    pub round_trip: bool,
}

impl SweepConfig {
    pub fn range(&self) -> SweepRange {
        SweepRange {
            start: self.a_start,
            end: self.a_end,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Numerics {
    pub ode_rel_tol: f64,
    pub ode_abs_tol: f64,
    pub grid_nodes: usize,
    pub detection_tol: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        let tol = Tolerance::default();
        Numerics {
            ode_rel_tol: tol.rel,
            ode_abs_tol: tol.abs,
            grid_nodes: GridOptions::default().nodes,
            detection_tol: DEFAULT_DETECTION_TOL,
        }
    }
}

impl Numerics {
    pub fn tolerance(&self) -> Tolerance {
        Tolerance {
            rel: self.ode_rel_tol,
            abs: self.ode_abs_tol,
        }
    }

    pub fn grid(&self) -> GridOptions {
        GridOptions {
            nodes: self.grid_nodes,
            ..GridOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Study {
    /// Size parameters N for `size_scaling`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sizes: Vec<u32>,
    /// Levels per ladder M for `refine_entropy`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub experiment: Experiment,
    pub spectrum: SpectrumFamily,
    pub initial: Initial,
    pub sweep: SweepConfig,
    pub numerics: Numerics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub study: Option<Study>,
    /// Output directory, relative to the output root.
    pub output: String,
}

/// Section reader that remembers which keys were consumed.
struct Section<'a> {
    prefix: &'static str,
    table: &'a Table,
    seen: BTreeSet<&'a str>,
}

impl<'a> Section<'a> {
    fn new(prefix: &'static str, table: &'a Table) -> Self {
        Section {
            prefix,
            table,
            seen: BTreeSet::new(),
        }
    }

    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn get(&mut self, key: &'a str) -> Option<&'a Value> {
        let v = self.table.get(key)?;
        self.seen.insert(key);
        Some(v)
    }

    fn type_err(&self, key: &str, expected: &'static str) -> ConfigError {
        ConfigError::Type {
            key: self.path(key),
            expected,
        }
    }

    fn missing(&self, key: &str) -> ConfigError {
        ConfigError::MissingKey(self.path(key))
    }

    fn opt_f64(&mut self, key: &'a str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(self.type_err(key, "a number")),
        }
    }

    fn f64(&mut self, key: &'a str) -> Result<f64, ConfigError> {
        self.opt_f64(key)?.ok_or_else(|| self.missing(key))
    }

    fn opt_u32(&mut self, key: &'a str) -> Result<Option<u32>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) => u32::try_from(*i)
                .map(Some)
                .map_err(|_| self.type_err(key, "a non-negative 32-bit integer")),
            Some(_) => Err(self.type_err(key, "an integer")),
        }
    }

    fn u32(&mut self, key: &'a str) -> Result<u32, ConfigError> {
        self.opt_u32(key)?.ok_or_else(|| self.missing(key))
    }

    fn opt_str(&mut self, key: &'a str) -> Result<Option<&'a str>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(_) => Err(self.type_err(key, "a string")),
        }
    }

    fn str(&mut self, key: &'a str) -> Result<&'a str, ConfigError> {
        self.opt_str(key)?.ok_or_else(|| self.missing(key))
    }

    fn opt_bool(&mut self, key: &'a str) -> Result<Option<bool>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(self.type_err(key, "a boolean")),
        }
    }

    fn opt_array(&mut self, key: &'a str) -> Result<Option<&'a [Value]>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(a)) => Ok(Some(a.as_slice())),
            Some(_) => Err(self.type_err(key, "an array")),
        }
    }

    fn opt_f64s(&mut self, key: &'a str) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(arr) = self.opt_array(key)? else {
            return Ok(None);
        };
        arr.iter()
            .map(|v| match v {
                Value::Float(x) => Ok(*x),
                Value::Integer(i) => Ok(*i as f64),
                _ => Err(self.type_err(key, "an array of numbers")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn f64s(&mut self, key: &'a str) -> Result<Vec<f64>, ConfigError> {
        self.opt_f64s(key)?.ok_or_else(|| self.missing(key))
    }

    fn opt_u64s(&mut self, key: &'a str) -> Result<Option<Vec<u64>>, ConfigError> {
        let Some(arr) = self.opt_array(key)? else {
            return Ok(None);
        };
        arr.iter()
            .map(|v| match v {
                Value::Integer(i) => u64::try_from(*i).map_err(|_| self.type_err(key, "an array of non-negative integers")),
                _ => Err(self.type_err(key, "an array of integers")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn opt_u32s(&mut self, key: &'a str) -> Result<Option<Vec<u32>>, ConfigError> {
        let Some(v) = self.opt_u64s(key)? else {
            return Ok(None);
        };
        v.into_iter()
            .map(|x| u32::try_from(x).map_err(|_| self.type_err(key, "an array of 32-bit integers")))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// Fails on the first key (in sorted order) that was never read.
    fn finish(self) -> Result<(), ConfigError> {
        let mut keys: Vec<&String> = self.table.keys().collect();
        keys.sort();
        match keys.into_iter().find(|k| !self.seen.contains(k.as_str())) {
            Some(k) => Err(ConfigError::UnknownKey(self.path(k))),
            None => Ok(()),
        }
    }
}

fn section<'a>(root: &mut Section<'a>, key: &'a str) -> Result<Option<&'a Table>, ConfigError> {
    match root.get(key) {
        None => Ok(None),
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(root.type_err(key, "a table")),
    }
}

fn positive(key: &str, x: f64) -> Result<f64, ConfigError> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(ConfigError::constraint(key, "positive", format!("got {x}")))
    }
}

fn finite(key: &str, x: f64) -> Result<f64, ConfigError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(ConfigError::constraint(key, "finite", format!("got {x}")))
    }
}

fn parse_spectrum(t: &Table) -> Result<SpectrumFamily, ConfigError> {
    let mut s = Section::new("spectrum", t);
    let family = s.str("family")?;
    let fam = match family {
        "power_law" => SpectrumFamily::PowerLaw {
            c: s.f64("C")?,
            kappa: s.f64("kappa")?,
            eta: s.f64("eta")?,
            size: s.opt_u32("size")?,
        },
        "two_term" => SpectrumFamily::TwoTerm {
            c1: s.f64("C1")?,
            kappa1: s.f64("kappa1")?,
            eta1: s.f64("eta1")?,
            c2: s.f64("C2")?,
            kappa2: s.f64("kappa2")?,
            eta2: s.f64("eta2")?,
            size: s.opt_u32("size")?,
        },
        "two_ladder" => SpectrumFamily::TwoLadder {
            delta_a: s.f64("delta_A")?,
            delta_b: s.f64("delta_B")?,
            m_a: s.u32("M_A")?,
            m_b: s.u32("M_B")?,
        },
        "linear_ensemble" => SpectrumFamily::LinearEnsemble {
            intercepts: s.f64s("intercepts")?,
            slopes: s.f64s("slopes")?,
            degeneracies: s.opt_u64s("degeneracies")?.unwrap_or_default(),
        },
        "oscillator_ladder" => SpectrumFamily::OscillatorLadder {
            levels: s.u32("M")?,
            modes: s.u32("N")?,
        },
        other => {
            return Err(ConfigError::constraint(
                "spectrum.family",
                "known family",
                format!(
                    "`{other}` is not one of power_law, two_term, two_ladder, linear_ensemble, oscillator_ladder"
                ),
            ))
        }
    };
    s.finish()?;
    Ok(fam)
}

fn parse_initial(t: &Table) -> Result<Initial, ConfigError> {
    let mut s = Section::new("initial", t);
    let init = match s.str("kind")? {
        "canonical" => Initial::Canonical {
            t0: positive("initial.T0", s.f64("T0")?)?,
        },
        "uniform" => Initial::Uniform {
            e_max: s.opt_f64("e_max")?.map(|x| positive("initial.e_max", x)).transpose()?,
        },
        "custom_table" => Initial::CustomTable {
            epsilon: s.opt_f64s("epsilon")?,
            w: s.f64s("w")?,
        },
        other => {
            return Err(ConfigError::constraint(
                "initial.kind",
                "known initial kind",
                format!("`{other}` is not one of canonical, uniform, custom_table"),
            ))
        }
    };
    s.finish()?;
    Ok(init)
}

fn parse_sweep(t: &Table) -> Result<SweepConfig, ConfigError> {
    let mut s = Section::new("sweep", t);
    let a_start = finite("sweep.a_start", s.f64("a_start")?)?;
    let a_end = finite("sweep.a_end", s.f64("a_end")?)?;
    if a_start == a_end {
        return Err(ConfigError::constraint(
            "sweep.a_end",
            "a_start != a_end",
            format!("both are {a_start}"),
        ));
    }
    let checkpoints = s.opt_f64s("checkpoints")?.unwrap_or_else(|| vec![a_start, a_end]);
    let (lo, hi) = (a_start.min(a_end), a_start.max(a_end));
    if let Some(c) = checkpoints.iter().find(|c| !(**c >= lo && **c <= hi)) {
        return Err(ConfigError::constraint(
            "sweep.checkpoints",
            "checkpoints within sweep",
            format!("{c} is outside [{lo}, {hi}]"),
        ));
    }
    let round_trip = s.opt_bool("round_trip")?.unwrap_or(false);
    s.finish()?;
    Ok(SweepConfig {
        a_start,
        a_end,
        checkpoints,
        round_trip,
    })
}

fn parse_numerics(t: Option<&Table>) -> Result<Numerics, ConfigError> {
    let mut n = Numerics::default();
    let Some(t) = t else { return Ok(n) };
    let mut s = Section::new("numerics", t);
    if let Some(x) = s.opt_f64("ode_rel_tol")? {
        n.ode_rel_tol = positive("numerics.ode_rel_tol", x)?;
    }
    if let Some(x) = s.opt_f64("ode_abs_tol")? {
        n.ode_abs_tol = positive("numerics.ode_abs_tol", x)?;
    }
    if let Some(x) = s.opt_f64("detection_tol")? {
        n.detection_tol = positive("numerics.detection_tol", x)?;
    }
    if let Some(x) = s.opt_u32("grid_nodes")? {
        if x < 16 {
            return Err(ConfigError::constraint(
                "numerics.grid_nodes",
                "grid_nodes >= 16",
                format!("got {x}"),
            ));
        }
        n.grid_nodes = x as usize;
    }
    s.finish()?;
    Ok(n)
}

fn parse_study(t: &Table) -> Result<Study, ConfigError> {
    let mut s = Section::new("study", t);
    let study = Study {
        sizes: s.opt_u32s("sizes")?.unwrap_or_default(),
        levels: s.opt_u32s("levels")?.unwrap_or_default(),
    };
    s.finish()?;
    Ok(study)
}

fn parse_output(t: Option<&Table>, name: &str) -> Result<String, ConfigError> {
    let Some(t) = t else { return Ok(name.to_string()) };
    let mut s = Section::new("output", t);
    let dir = s.opt_str("dir")?.unwrap_or(name).to_string();
    s.finish()?;
    Ok(dir)
}

fn check_dir_name(key: &str, dir: &str) -> Result<(), ConfigError> {
    let ok = !dir.is_empty()
        && !dir.starts_with('/')
        && dir.split(['/', '\\']).all(|c| !c.is_empty() && c != "..");
    if ok {
        Ok(())
    } else {
        Err(ConfigError::constraint(
            key,
            "relative path without `..`",
            format!("`{dir}`"),
        ))
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    let mut root = Section::new("", &doc);
    let kind = root.str("experiment")?;
    let experiment = Experiment::ALL
        .into_iter()
        .find(|e| e.name() == kind)
        .ok_or_else(|| ConfigError::UnknownExperiment(kind.to_string()))?;
    let name = root.opt_str("name")?.unwrap_or(experiment.name()).to_string();

    let spectrum_t = section(&mut root, "spectrum")?.ok_or_else(|| ConfigError::MissingKey("spectrum".into()))?;
    let initial_t = section(&mut root, "initial")?.ok_or_else(|| ConfigError::MissingKey("initial".into()))?;
    let sweep_t = section(&mut root, "sweep")?.ok_or_else(|| ConfigError::MissingKey("sweep".into()))?;
    let numerics_t = section(&mut root, "numerics")?;
    let study_t = section(&mut root, "study")?;
    let output_t = section(&mut root, "output")?;
    root.finish()?;

    let scenario = Scenario {
        experiment,
        spectrum: parse_spectrum(spectrum_t)?,
        initial: parse_initial(initial_t)?,
        sweep: parse_sweep(sweep_t)?,
        numerics: parse_numerics(numerics_t)?,
        study: study_t.map(parse_study).transpose()?,
        output: parse_output(output_t, &name)?,
        name,
    };
    check_dir_name("output.dir", &scenario.output)?;
    validate(&scenario)?;
    Ok(scenario)
}

fn model_error(key: &str, e: crate::Error) -> ConfigError {
    ConfigError::constraint(key, "valid model", e.to_string())
}

/// Cross-section checks: family/experiment compatibility, study lists and
/// normalization of custom tables.
fn validate(s: &Scenario) -> Result<(), ConfigError> {
    let discrete = s.spectrum.is_discrete();
    let range = s.sweep.range();
    let need_t0 = |what: &str| -> Result<f64, ConfigError> {
        match s.initial {
            Initial::Canonical { t0 } => Ok(t0),
            _ => Err(ConfigError::constraint(
                "initial.kind",
                "canonical initial state",
                format!("{what} starts from a canonical state"),
            )),
        }
    };
    match s.experiment {
        Experiment::DiscreteSweep => {
            if !discrete {
                return Err(ConfigError::constraint(
                    "spectrum.family",
                    "discrete family",
                    format!("discrete_sweep needs level tracks; {} is a continuum family", s.spectrum.name()),
                ));
            }
        }
        Experiment::ContinuumAdvect => {
            s.spectrum.analytic_dos().map_err(|e| model_error("spectrum.family", e))?;
        }
        Experiment::Compare => {
            need_t0("compare")?;
        }
        Experiment::RefineEntropy => {
            need_t0("refine_entropy")?;
            match s.spectrum {
                SpectrumFamily::TwoLadder { m_a, m_b, .. } if m_a == m_b => {}
                _ => {
                    return Err(ConfigError::constraint(
                        "spectrum.family",
                        "two_ladder with M_A == M_B",
                        "refine_entropy rescales a two-ladder spectrum",
                    ))
                }
            }
            let levels = s.study.as_ref().map(|st| st.levels.as_slice()).unwrap_or(&[]);
            if levels.len() < 2 || levels.contains(&0) {
                return Err(ConfigError::constraint(
                    "study.levels",
                    "at least two positive level counts",
                    format!("got {levels:?}"),
                ));
            }
        }
        Experiment::SizeScaling => {
            need_t0("size_scaling")?;
            if !matches!(s.spectrum, SpectrumFamily::PowerLaw { .. } | SpectrumFamily::TwoTerm { .. }) {
                return Err(ConfigError::constraint(
                    "spectrum.family",
                    "power_law or two_term",
                    "size_scaling rescales a power-law family",
                ));
            }
            let sizes = s.study.as_ref().map(|st| st.sizes.as_slice()).unwrap_or(&[]);
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(ConfigError::constraint(
                    "study.sizes",
                    "non-empty positive sizes",
                    format!("got {sizes:?}"),
                ));
            }
        }
    }
    if discrete {
        let spectrum = s.spectrum.discrete(range).map_err(|e| model_error("spectrum", e))?;
        if let Initial::CustomTable { epsilon, w } = &s.initial {
            if epsilon.is_some() {
                return Err(ConfigError::UnknownKey("initial.epsilon".into()));
            }
            if w.len() != spectrum.len() {
                return Err(ConfigError::constraint(
                    "initial.w",
                    "one entry per level",
                    format!("{} entries for {} levels", w.len(), spectrum.len()),
                ));
            }
            let total: f64 = w.iter().zip(spectrum.degeneracies()).map(|(w, g)| w * g as f64).sum();
            if (total - 1.0).abs() > DISCRETE_NORM_TOL {
                return Err(ConfigError::constraint(
                    "initial.w",
                    "normalization: sum of g*w = 1",
                    format!("sum is {total}"),
                ));
            }
            ProbabilityState::for_spectrum(&spectrum, w.clone()).map_err(|e| model_error("initial.w", e))?;
        }
    } else {
        let dos = s.spectrum.analytic_dos().map_err(|e| model_error("spectrum", e))?;
        match &s.initial {
            Initial::Uniform { e_max: None } if s.experiment == Experiment::ContinuumAdvect => {
                return Err(ConfigError::MissingKey("initial.e_max".into()));
            }
            Initial::CustomTable { epsilon, w } => {
                let eps = epsilon.clone().ok_or_else(|| ConfigError::MissingKey("initial.epsilon".into()))?;
                if eps.len() != w.len() {
                    return Err(ConfigError::constraint(
                        "initial.w",
                        "same length as initial.epsilon",
                        format!("{} values for {} energies", w.len(), eps.len()),
                    ));
                }
                ContinuumDistribution::from_values(dos, s.sweep.a_start, eps, w).map_err(|e| {
                    ConfigError::constraint("initial.w", "normalization: integral of G*w = 1", e.to_string())
                })?;
            }
            _ => {}
        }
    }
    Ok(())
}
