//! Parametrized spectra: discrete level tracks ε_j(a) with degeneracies, and
//! continuum densities of states G(ε, a) with their cumulative counts Φ(ε, a).
//!
//! Units throughout: k_B = 1, energies and temperatures share one
//! dimensionless unit, and continuum supports start at ε = 0.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numerics::log_sum_exp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TrackId(pub u32);

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A user-supplied energy curve `a ↦ ε(a)`.
#[derive(Clone)]
pub struct CustomEnergy(Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl CustomEnergy {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        CustomEnergy(Arc::new(f))
    }
}

impl fmt::Debug for CustomEnergy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomEnergy(..)")
    }
}

#[derive(Debug, Clone)]
pub enum TrackEnergy {
    /// ε = intercept + slope·a
    Linear { intercept: f64, slope: f64 },
    /// ε = coef·a^exponent, defined for a > 0
    Power { coef: f64, exponent: f64 },
    Custom(CustomEnergy),
}

impl TrackEnergy {
    pub fn eval(&self, a: f64) -> f64 {
        match self {
            TrackEnergy::Linear { intercept, slope } => intercept + slope * a,
            TrackEnergy::Power { coef, exponent } => coef * a.powf(*exponent),
            TrackEnergy::Custom(f) => (f.0)(a),
        }
    }

    /// dε/da; custom curves fall back to a central difference.
    pub fn derivative(&self, a: f64) -> f64 {
        match self {
            TrackEnergy::Linear { slope, .. } => *slope,
            TrackEnergy::Power { coef, exponent } => coef * exponent * a.powf(exponent - 1.0),
            TrackEnergy::Custom(f) => {
                let h = 1e-6 * a.abs().max(1.0);
                ((f.0)(a + h) - (f.0)(a - h)) / (2.0 * h)
            }
        }
    }

    fn is_monotone(&self) -> bool {
        !matches!(self, TrackEnergy::Custom(_))
    }
}

#[derive(Debug, Clone)]
pub struct LevelTrack {
    pub id: TrackId,
    pub label: String,
    pub energy: TrackEnergy,
    pub degeneracy: u64,
}

/// Parameter interval swept from `start` to `end` (either orientation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRange {
    pub start: f64,
    pub end: f64,
}

impl SweepRange {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || start == end {
            return Err(Error::domain(format!(
                "sweep range needs finite, distinct endpoints (got {start}, {end})"
            )));
        }
        Ok(SweepRange { start, end })
    }

    pub fn lo(&self) -> f64 {
        self.start.min(self.end)
    }

    pub fn hi(&self) -> f64 {
        self.start.max(self.end)
    }

    pub fn contains(&self, a: f64) -> bool {
        let slack = 1e-12 * (self.hi() - self.lo());
        a >= self.lo() - slack && a <= self.hi() + slack
    }

    pub fn reversed(&self) -> Self {
        SweepRange {
            start: self.end,
            end: self.start,
        }
    }

    pub fn is_ascending(&self) -> bool {
        self.end > self.start
    }
}

/// Level tracks over a sweep interval, ordered by energy at `a_start`.
#[derive(Debug, Clone)]
pub struct DiscreteSpectrum {
    tracks: Vec<LevelTrack>,
    sweep: SweepRange,
}

impl DiscreteSpectrum {
    pub fn new(tracks: Vec<LevelTrack>, sweep: SweepRange) -> Result<Self> {
        if tracks.is_empty() {
            return Err(Error::domain("spectrum has no tracks"));
        }
        let mut ids: Vec<TrackId> = tracks.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::domain("track ids must be unique"));
        }
        for t in &tracks {
            if t.degeneracy == 0 {
                return Err(Error::domain(format!("track {} has zero degeneracy", t.label)));
            }
            if matches!(t.energy, TrackEnergy::Power { .. }) && sweep.lo() <= 0.0 {
                return Err(Error::domain(format!(
                    "track {} is a power of a and needs a > 0 on the sweep",
                    t.label
                )));
            }
            let probes: Vec<f64> = if t.energy.is_monotone() {
                vec![sweep.lo(), sweep.hi()]
            } else {
                (0..=256)
                    .map(|i| sweep.lo() + (sweep.hi() - sweep.lo()) * i as f64 / 256.0)
                    .collect()
            };
            for a in probes {
                let e = t.energy.eval(a);
                if !e.is_finite() || e < 0.0 {
                    return Err(Error::domain(format!(
                        "track {} has energy {e} at a = {a}; energies must stay finite and >= 0",
                        t.label
                    )));
                }
            }
        }
        let at_start: Vec<f64> = tracks.iter().map(|t| t.energy.eval(sweep.start)).collect();
        if at_start.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::domain("tracks must be sorted by energy at a_start"));
        }
        Ok(DiscreteSpectrum { tracks, sweep })
    }

    /// Sorts `tracks` by energy at `sweep.start` (ties by label) and numbers them 0, 1, ….
    pub fn from_unordered(mut tracks: Vec<LevelTrack>, sweep: SweepRange) -> Result<Self> {
        tracks.sort_by(|x, y| {
            x.energy
                .eval(sweep.start)
                .total_cmp(&y.energy.eval(sweep.start))
                .then_with(|| x.label.cmp(&y.label))
        });
        for (i, t) in tracks.iter_mut().enumerate() {
            t.id = TrackId(i as u32);
        }
        Self::new(tracks, sweep)
    }

    pub fn tracks(&self) -> &[LevelTrack] {
        &self.tracks
    }

    pub fn sweep(&self) -> SweepRange {
        self.sweep
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn index_of(&self, id: TrackId) -> Option<usize> {
        self.tracks.iter().position(|t| t.id == id)
    }

    pub fn ids(&self) -> Vec<TrackId> {
        self.tracks.iter().map(|t| t.id).collect()
    }

    pub fn degeneracies(&self) -> Vec<u64> {
        self.tracks.iter().map(|t| t.degeneracy).collect()
    }

    pub fn total_states(&self) -> f64 {
        self.tracks.iter().map(|t| t.degeneracy as f64).sum()
    }

    /// Same tracks swept in the opposite direction.
    pub fn reversed(&self) -> Self {
        DiscreteSpectrum {
            tracks: self.tracks.clone(),
            sweep: self.sweep.reversed(),
        }
    }

    pub fn energies(&self, a: f64) -> Result<Vec<f64>> {
        self.check_parameter(a)?;
        Ok(self.tracks.iter().map(|t| t.energy.eval(a)).collect())
    }

    fn check_parameter(&self, a: f64) -> Result<()> {
        if !self.sweep.contains(a) {
            return Err(Error::domain(format!(
                "a = {a} lies outside the sweep range [{}, {}]",
                self.sweep.lo(),
                self.sweep.hi()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelValue {
    pub id: TrackId,
    pub label: String,
    pub energy: f64,
    pub degeneracy: u64,
}

pub fn eval_levels(spectrum: &DiscreteSpectrum, a: f64) -> Result<Vec<LevelValue>> {
    spectrum.check_parameter(a)?;
    Ok(spectrum
        .tracks
        .iter()
        .map(|t| LevelValue {
            id: t.id,
            label: t.label.clone(),
            energy: t.energy.eval(a),
            degeneracy: t.degeneracy,
        })
        .collect())
}

/// Energy support of a density of states at a given `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Bounded(f64),
    Unbounded,
}

impl Support {
    pub fn contains(&self, e: f64) -> bool {
        match self {
            Support::Bounded(max) => (0.0..=*max).contains(&e),
            Support::Unbounded => e >= 0.0 && e.is_finite(),
        }
    }
}

/// One power-law term `C·a^(−κ)·ε^η`, with `C` held as `ln C` so that very
/// large exponents stay representable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerTerm {
    pub ln_coef: f64,
    pub kappa: f64,
    pub eta: f64,
}

impl PowerTerm {
    pub fn new(coef: f64, kappa: f64, eta: f64) -> Result<Self> {
        if !(coef > 0.0 && coef.is_finite()) {
            return Err(Error::domain(format!("power-law coefficient must be positive (got {coef})")));
        }
        Self::from_ln(coef.ln(), kappa, eta)
    }

    pub fn from_ln(ln_coef: f64, kappa: f64, eta: f64) -> Result<Self> {
        if !(eta > -1.0) || !eta.is_finite() {
            return Err(Error::domain(format!(
                "power-law exponent must satisfy eta > -1 (got {eta})"
            )));
        }
        if !ln_coef.is_finite() || !kappa.is_finite() {
            return Err(Error::domain("power-law parameters must be finite"));
        }
        Ok(PowerTerm { ln_coef, kappa, eta })
    }

    fn ln_prefactor(&self, a: f64) -> f64 {
        self.ln_coef - self.kappa * a.ln()
    }

    fn ln_g(&self, e: f64, a: f64) -> f64 {
        if e == 0.0 {
            return match self.eta {
                x if x > 0.0 => f64::NEG_INFINITY,
                x if x == 0.0 => self.ln_prefactor(a),
                _ => f64::INFINITY,
            };
        }
        self.ln_prefactor(a) + self.eta * e.ln()
    }

    fn ln_phi(&self, e: f64, a: f64) -> f64 {
        if e == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.ln_prefactor(a) + (self.eta + 1.0) * e.ln() - (self.eta + 1.0).ln()
    }
}

/// Kernel-smoothed density of a discrete spectrum, reflected at ε = 0 so the
/// total mass is exactly the number of states.
#[derive(Debug, Clone)]
pub struct KernelDos {
    spectrum: Arc<DiscreteSpectrum>,
    bandwidth: f64,
}

impl KernelDos {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    fn kernel(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        (1.0 - x.abs() / h).max(0.0) / h
    }

    fn kernel_slope(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        if x.abs() >= h || x == 0.0 {
            0.0
        } else {
            -x.signum() / (h * h)
        }
    }

    fn kernel_cdf(&self, x: f64) -> f64 {
        let u = x / self.bandwidth;
        if u <= -1.0 {
            0.0
        } else if u <= 0.0 {
            0.5 * (1.0 + u) * (1.0 + u)
        } else if u < 1.0 {
            1.0 - 0.5 * (1.0 - u) * (1.0 - u)
        } else {
            1.0
        }
    }

    fn sum<F: Fn(f64, f64, f64) -> f64>(&self, a: f64, f: F) -> f64 {
        self.spectrum
            .tracks
            .iter()
            .map(|t| {
                let g = t.degeneracy as f64;
                g * f(t.energy.eval(a), t.energy.derivative(a), g)
            })
            .sum()
    }

    fn g(&self, e: f64, a: f64) -> f64 {
        self.sum(a, |ej, _, _| self.kernel(e - ej) + self.kernel(e + ej))
    }

    fn g_da(&self, e: f64, a: f64) -> f64 {
        self.sum(a, |ej, dej, _| {
            dej * (-self.kernel_slope(e - ej) + self.kernel_slope(e + ej))
        })
    }

    fn phi(&self, e: f64, a: f64) -> f64 {
        self.sum(a, |ej, _, _| {
            self.kernel_cdf(e - ej) + self.kernel_cdf(e + ej) - 1.0
        })
    }

    fn phi_da(&self, e: f64, a: f64) -> f64 {
        self.sum(a, |ej, dej, _| dej * (-self.kernel(e - ej) + self.kernel(e + ej)))
    }

    fn support_max(&self, a: f64) -> f64 {
        self.spectrum
            .tracks
            .iter()
            .map(|t| t.energy.eval(a))
            .fold(0.0, f64::max)
            + self.bandwidth
    }

    /// Energies where the smoothed density has kinks at this `a`.
    pub fn breakpoints(&self, a: f64) -> Vec<f64> {
        let h = self.bandwidth;
        let mut pts = vec![0.0];
        for t in &self.spectrum.tracks {
            let e = t.energy.eval(a);
            for p in [e - h, e, e + h, h - e] {
                if p > 0.0 {
                    pts.push(p);
                }
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

/// Density of states G(ε, a) together with ∂G/∂a and Φ(ε, a) = ∫₀^ε G.
#[derive(Debug, Clone)]
pub enum ContinuumDos {
    /// Σ_i C_i·a^(−κ_i)·ε^(η_i), unbounded support.
    PowerSum(Vec<PowerTerm>),
    Kernel(KernelDos),
}

impl ContinuumDos {
    pub fn power_law(coef: f64, kappa: f64, eta: f64) -> Result<Self> {
        Ok(ContinuumDos::PowerSum(vec![PowerTerm::new(coef, kappa, eta)?]))
    }

    pub fn power_sum(terms: Vec<PowerTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::domain("power sum needs at least one term"));
        }
        Ok(ContinuumDos::PowerSum(terms))
    }

    fn check_a(&self, a: f64) -> Result<()> {
        match self {
            ContinuumDos::PowerSum(_) if !(a > 0.0 && a.is_finite()) => Err(Error::domain(format!(
                "power-law densities need a > 0 (got {a})"
            ))),
            ContinuumDos::Kernel(k) if !k.spectrum.sweep.contains(a) => Err(Error::domain(format!(
                "a = {a} lies outside the sweep range of the smoothed spectrum"
            ))),
            _ => Ok(()),
        }
    }

    pub fn ln_g(&self, e: f64, a: f64) -> f64 {
        match self {
            ContinuumDos::PowerSum(terms) => log_sum_exp(terms.iter().map(|t| t.ln_g(e, a))),
            ContinuumDos::Kernel(k) => k.g(e, a).ln(),
        }
    }

    pub fn g(&self, e: f64, a: f64) -> f64 {
        match self {
            ContinuumDos::PowerSum(_) => self.ln_g(e, a).exp(),
            ContinuumDos::Kernel(k) => k.g(e, a),
        }
    }

    pub fn g_da(&self, e: f64, a: f64) -> f64 {
        match self {
            ContinuumDos::PowerSum(terms) => terms
                .iter()
                .map(|t| -t.kappa / a * t.ln_g(e, a).exp())
                .sum(),
            ContinuumDos::Kernel(k) => k.g_da(e, a),
        }
    }

    pub fn ln_phi(&self, e: f64, a: f64) -> f64 {
        match self {
            ContinuumDos::PowerSum(terms) => log_sum_exp(terms.iter().map(|t| t.ln_phi(e, a))),
            ContinuumDos::Kernel(k) => k.phi(e, a).ln(),
        }
    }

    pub fn phi(&self, e: f64, a: f64) -> f64 {
        match self {
            ContinuumDos::PowerSum(_) => self.ln_phi(e, a).exp(),
            ContinuumDos::Kernel(k) => k.phi(e, a),
        }
    }

    /// ∂Φ/∂a = ∫₀^ε ∂G/∂a dε′ in closed form.
    pub fn phi_da(&self, e: f64, a: f64) -> f64 {
        match self {
            ContinuumDos::PowerSum(terms) => terms
                .iter()
                .map(|t| -t.kappa / a * t.ln_phi(e, a).exp())
                .sum(),
            ContinuumDos::Kernel(k) => k.phi_da(e, a),
        }
    }

    /// `(∂Φ/∂a) / G` evaluated without forming either factor, so it stays finite
    /// when G and Φ individually overflow. `None` where G vanishes.
    pub fn phi_da_over_g(&self, e: f64, a: f64) -> Option<f64> {
        match self {
            ContinuumDos::PowerSum(terms) => {
                let ln_g = self.ln_g(e, a);
                if !ln_g.is_finite() {
                    return None;
                }
                Some(
                    terms
                        .iter()
                        .map(|t| -t.kappa / a * (t.ln_phi(e, a) - ln_g).exp())
                        .sum(),
                )
            }
            ContinuumDos::Kernel(k) => {
                let g = k.g(e, a);
                (g > 0.0).then(|| k.phi_da(e, a) / g)
            }
        }
    }

    pub fn support(&self, a: f64) -> Support {
        match self {
            ContinuumDos::PowerSum(_) => Support::Unbounded,
            ContinuumDos::Kernel(k) => Support::Bounded(k.support_max(a)),
        }
    }

    /// Validates the parameter and energy against the support.
    pub fn check_point(&self, e: f64, a: f64) -> Result<()> {
        self.check_a(a)?;
        if !self.support(a).contains(e) {
            return Err(Error::domain(format!("energy {e} lies outside the support at a = {a}")));
        }
        Ok(())
    }

    /// Checks G ≥ 0, Φ(0) = 0, monotone Φ and the consistency of ∂G/∂a with a
    /// central difference of G (relative 1e-5) at the given `(ε, a)` probes.
    pub fn check_invariants(&self, probes: &[(f64, f64)]) -> Result<()> {
        for &(e, a) in probes {
            self.check_point(e, a)?;
            let g = self.g(e, a);
            if !(g >= 0.0) {
                return Err(Error::domain(format!("G({e}, {a}) = {g} is negative")));
            }
            if self.phi(0.0, a) != 0.0 {
                return Err(Error::domain(format!("Φ(0, {a}) is not zero")));
            }
            if g > 0.0 && !(self.phi(e * (1.0 + 1e-6), a) > self.phi(e, a)) {
                return Err(Error::domain(format!("Φ is not increasing at ({e}, {a})")));
            }
            let h = 1e-5 * a.abs();
            let fd = (self.g(e, a + h) - self.g(e, a - h)) / (2.0 * h);
            let exact = self.g_da(e, a);
            let scale = exact.abs().max(1e-12 * g.abs());
            if (fd - exact).abs() > 1e-5 * scale {
                return Err(Error::domain(format!(
                    "dG/da = {exact} disagrees with finite difference {fd} at ({e}, {a})"
                )));
            }
        }
        Ok(())
    }
}

/// Kernel-smoothed density of states of a discrete spectrum (triangular kernel).
pub fn dos_of_discrete(spectrum: &DiscreteSpectrum, a: f64, bandwidth: f64) -> Result<ContinuumDos> {
    if spectrum.is_empty() {
        return Err(Error::domain("cannot smooth an empty spectrum"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::domain(format!("bandwidth must be positive (got {bandwidth})")));
    }
    spectrum.check_parameter(a)?;
    Ok(ContinuumDos::Kernel(KernelDos {
        spectrum: Arc::new(spectrum.clone()),
        bandwidth,
    }))
}

/// Three times the median spacing between distinct level energies at `a`.
pub fn default_bandwidth(spectrum: &DiscreteSpectrum, a: f64) -> Result<f64> {
    let mut e = spectrum.energies(a)?;
    e.sort_by(f64::total_cmp);
    let mut gaps: Vec<f64> = e.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 0.0).collect();
    if gaps.is_empty() {
        return Ok(e.last().copied().unwrap_or(1.0).max(1.0));
    }
    gaps.sort_by(f64::total_cmp);
    let mid = gaps.len() / 2;
    let median = if gaps.len().is_multiple_of(2) {
        0.5 * (gaps[mid - 1] + gaps[mid])
    } else {
        gaps[mid]
    };
    Ok(3.0 * median)
}

/// Built-in spectrum families, named and keyed as in scenario configs.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SpectrumFamily {
    /// G = C·a^(−κ)·ε^η. With `size = N` the exponents become κN, ηN and C
    /// becomes C/Γ(ηN + 1).
    PowerLaw {
        #[serde(rename = "C")]
        c: f64,
        kappa: f64,
        eta: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        size: Option<u32>,
    },
    /// Sum of two power laws, scaled by `size` term by term like `PowerLaw`.
    TwoTerm {
        #[serde(rename = "C1")]
        c1: f64,
        kappa1: f64,
        eta1: f64,
        #[serde(rename = "C2")]
        c2: f64,
        kappa2: f64,
        eta2: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        size: Option<u32>,
    },
    /// Tracks ε = n·δ_A·a (n = 1..M_A) and ε = m·δ_B/a (m = 1..M_B).
    TwoLadder {
        #[serde(rename = "delta_A")]
        delta_a: f64,
        #[serde(rename = "delta_B")]
        delta_b: f64,
        #[serde(rename = "M_A")]
        m_a: u32,
        #[serde(rename = "M_B")]
        m_b: u32,
    },
    /// ε_j = b_j + m_j·a with degeneracies g_j.
    LinearEnsemble {
        intercepts: Vec<f64>,
        slopes: Vec<f64>,
        degeneracies: Vec<u64>,
    },
    /// ħω = a: ε_n = a·(n + N/2), n = 0..M−1, degeneracy C(n+N−1, N−1).
    OscillatorLadder {
        #[serde(rename = "M")]
        levels: u32,
        #[serde(rename = "N")]
        modes: u32,
    },
}

fn scaled_term(coef: f64, kappa: f64, eta: f64, size: Option<u32>) -> Result<PowerTerm> {
    if !(coef > 0.0 && coef.is_finite()) {
        return Err(Error::domain(format!("coefficient C must be positive (got {coef})")));
    }
    match size {
        None => PowerTerm::new(coef, kappa, eta),
        Some(0) => Err(Error::domain("size must be at least 1")),
        Some(n) => {
            let n = f64::from(n);
            let eta_n = eta * n;
            if !(eta_n > -1.0) {
                return Err(Error::domain(format!("scaled exponent eta·N = {eta_n} must exceed -1")));
            }
            PowerTerm::from_ln(coef.ln() - ln_gamma(eta_n + 1.0), kappa * n, eta_n)
        }
    }
}

pub fn binomial(n: u64, k: u64) -> Option<u64> {
    let k = k.min(n.checked_sub(k)?);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return None;
        }
    }
    u64::try_from(acc).ok()
}

impl SpectrumFamily {
    pub fn name(&self) -> &'static str {
        match self {
            SpectrumFamily::PowerLaw { .. } => "power_law",
            SpectrumFamily::TwoTerm { .. } => "two_term",
            SpectrumFamily::TwoLadder { .. } => "two_ladder",
            SpectrumFamily::LinearEnsemble { .. } => "linear_ensemble",
            SpectrumFamily::OscillatorLadder { .. } => "oscillator_ladder",
        }
    }

    /// Families realised as level tracks (as opposed to a density of states).
    pub fn is_discrete(&self) -> bool {
        matches!(
            self,
            SpectrumFamily::TwoLadder { .. }
                | SpectrumFamily::LinearEnsemble { .. }
                | SpectrumFamily::OscillatorLadder { .. }
        )
    }

    /// Returns the same continuum family at exponent scale `n`.
    pub fn with_size(&self, n: u32) -> Result<Self> {
        match self {
            SpectrumFamily::PowerLaw { c, kappa, eta, .. } => Ok(SpectrumFamily::PowerLaw {
                c: *c,
                kappa: *kappa,
                eta: *eta,
                size: Some(n),
            }),
            SpectrumFamily::TwoTerm {
                c1,
                kappa1,
                eta1,
                c2,
                kappa2,
                eta2,
                ..
            } => Ok(SpectrumFamily::TwoTerm {
                c1: *c1,
                kappa1: *kappa1,
                eta1: *eta1,
                c2: *c2,
                kappa2: *kappa2,
                eta2: *eta2,
                size: Some(n),
            }),
            other => Err(Error::UnsupportedFamily(format!(
                "{} has no exponent scale",
                other.name()
            ))),
        }
    }

    /// Builds the level tracks of a discrete family over `sweep`.
    pub fn discrete(&self, sweep: SweepRange) -> Result<DiscreteSpectrum> {
        let tracks = match self {
            SpectrumFamily::TwoLadder {
                delta_a,
                delta_b,
                m_a,
                m_b,
            } => {
                if !(*delta_a > 0.0 && *delta_b > 0.0) {
                    return Err(Error::domain("ladder spacings delta_A, delta_B must be positive"));
                }
                if *m_a == 0 && *m_b == 0 {
                    return Err(Error::domain("two_ladder needs at least one level"));
                }
                let a_side = (1..=*m_a).map(|n| LevelTrack {
                    id: TrackId(0),
                    label: format!("A{n}"),
                    energy: TrackEnergy::Power {
                        coef: f64::from(n) * delta_a,
                        exponent: 1.0,
                    },
                    degeneracy: 1,
                });
                let b_side = (1..=*m_b).map(|m| LevelTrack {
                    id: TrackId(0),
                    label: format!("B{m}"),
                    energy: TrackEnergy::Power {
                        coef: f64::from(m) * delta_b,
                        exponent: -1.0,
                    },
                    degeneracy: 1,
                });
                a_side.chain(b_side).collect()
            }
            SpectrumFamily::LinearEnsemble {
                intercepts,
                slopes,
                degeneracies,
            } => {
                if intercepts.len() != slopes.len() {
                    return Err(Error::domain("intercepts and slopes must have equal length"));
                }
                if !degeneracies.is_empty() && degeneracies.len() != slopes.len() {
                    return Err(Error::domain("degeneracies must match the number of tracks"));
                }
                intercepts
                    .iter()
                    .zip(slopes)
                    .enumerate()
                    .map(|(j, (b, m))| LevelTrack {
                        id: TrackId(0),
                        label: format!("L{j}"),
                        energy: TrackEnergy::Linear {
                            intercept: *b,
                            slope: *m,
                        },
                        degeneracy: degeneracies.get(j).copied().unwrap_or(1),
                    })
                    .collect()
            }
            SpectrumFamily::OscillatorLadder { levels, modes } => {
                if *modes == 0 || *levels == 0 {
                    return Err(Error::domain("oscillator_ladder needs M >= 1 and N >= 1"));
                }
                let n_modes = u64::from(*modes);
                (0..u64::from(*levels))
                    .map(|n| {
                        let degeneracy = binomial(n + n_modes - 1, n_modes - 1).ok_or_else(|| {
                            Error::domain(format!("degeneracy of level {n} overflows"))
                        })?;
                        Ok(LevelTrack {
                            id: TrackId(0),
                            label: format!("n{n}"),
                            energy: TrackEnergy::Power {
                                coef: n as f64 + 0.5 * n_modes as f64,
                                exponent: 1.0,
                            },
                            degeneracy,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            other => {
                return Err(Error::UnsupportedFamily(format!(
                    "{} is a continuum family without level tracks",
                    other.name()
                )))
            }
        };
        DiscreteSpectrum::from_unordered(tracks, sweep)
    }

    /// Closed-form continuum density of the family.
    pub fn analytic_dos(&self) -> Result<ContinuumDos> {
        analytic_dos(self)
    }
}

/// Exact densities: power laws directly, ladders through their coarse
/// densities 1/(δ_A·a) and a/δ_B.
pub fn analytic_dos(family: &SpectrumFamily) -> Result<ContinuumDos> {
    match family {
        SpectrumFamily::PowerLaw { c, kappa, eta, size } => {
            ContinuumDos::power_sum(vec![scaled_term(*c, *kappa, *eta, *size)?])
        }
        SpectrumFamily::TwoTerm {
            c1,
            kappa1,
            eta1,
            c2,
            kappa2,
            eta2,
            size,
        } => ContinuumDos::power_sum(vec![
            scaled_term(*c1, *kappa1, *eta1, *size)?,
            scaled_term(*c2, *kappa2, *eta2, *size)?,
        ]),
        SpectrumFamily::TwoLadder {
            delta_a,
            delta_b,
            m_a,
            m_b,
        } => {
            if !(*delta_a > 0.0 && *delta_b > 0.0) {
                return Err(Error::domain("ladder spacings delta_A, delta_B must be positive"));
            }
            let mut terms = Vec::new();
            if *m_a > 0 {
                terms.push(PowerTerm::new(1.0 / delta_a, 1.0, 0.0)?);
            }
            if *m_b > 0 {
                terms.push(PowerTerm::new(1.0 / delta_b, -1.0, 0.0)?);
            }
            ContinuumDos::power_sum(terms)
        }
        other => Err(Error::UnsupportedFamily(format!(
            "{} has no closed-form density of states",
            other.name()
        ))),
    }
}
