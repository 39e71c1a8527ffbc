//! Canonical ensembles, heat capacity at constant `a`, the isentropic
//! temperature path and the fluctuation predictions for both processes.

use std::fmt::Write as _;

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::continuum::{
    advect_with, continuum_entropy, continuum_moments, AdvectOptions, ContinuumDistribution,
    GridOptions,
};
use crate::crossing::{find_crossings_with, sweep_adiabatic, ScanOptions, DEFAULT_DETECTION_TOL};
use crate::error::{Error, Result};
use crate::microstate::canonical_init;
use crate::numerics::diff::ridders;
use crate::numerics::roots::brent;
use crate::numerics::{fit_line, log_sum_exp, quad};
use crate::par::{self, Exec};
use crate::spectra::{analytic_dos, ContinuumDos, DiscreteSpectrum, SpectrumFamily, Support, SweepRange};

/// What the ensemble sums over.
#[derive(Debug, Clone)]
pub enum Source {
    Continuum(ContinuumDos),
    Discrete(DiscreteSpectrum),
}

impl Source {
    /// Continuum density for continuum families, level tracks for discrete ones.
    pub fn of_family(family: &SpectrumFamily, sweep: SweepRange) -> Result<Self> {
        if family.is_discrete() {
            Ok(Source::Discrete(family.discrete(sweep)?))
        } else {
            Ok(Source::Continuum(analytic_dos(family)?))
        }
    }
}

#[derive(Debug, Clone)]
pub struct CanonicalEnsemble {
    source: Source,
    a: f64,
    t: f64,
}

/// Heat capacity at constant `a` by both routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatCapacity {
    /// ∂⟨E⟩/∂T by an extrapolated central difference.
    pub value: f64,
    /// Var(E)/T².
    pub from_variance: f64,
    /// Error estimate of the difference quotient.
    pub derivative_error: f64,
}

impl HeatCapacity {
    pub fn relative_disagreement(&self) -> f64 {
        (self.value - self.from_variance).abs() / self.from_variance.abs().max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Sums {
    ln_z: f64,
    mean: f64,
    var: f64,
}

impl CanonicalEnsemble {
    pub fn new(source: Source, a: f64, t: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::domain(format!("temperature must be positive (got {t})")));
        }
        match &source {
            Source::Continuum(dos) => dos.check_point(0.0, a)?,
            Source::Discrete(disc) => {
                disc.energies(a)?;
            }
        }
        Ok(CanonicalEnsemble { source, a, t })
    }

    pub fn continuum(dos: ContinuumDos, a: f64, t: f64) -> Result<Self> {
        Self::new(Source::Continuum(dos), a, t)
    }

    pub fn discrete(spectrum: DiscreteSpectrum, a: f64, t: f64) -> Result<Self> {
        Self::new(Source::Discrete(spectrum), a, t)
    }

    /// Same source at another `(a, T)`.
    pub fn at(&self, a: f64, t: f64) -> Result<Self> {
        Self::new(self.source.clone(), a, t)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn temperature(&self) -> f64 {
        self.t
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    fn sums(&self) -> Result<Sums> {
        let (a, t) = (self.a, self.t);
        let s = match &self.source {
            Source::Continuum(ContinuumDos::PowerSum(terms)) => {
                // Mixture of gamma distributions with shapes k_i = η_i + 1.
                let lw: Vec<f64> = terms
                    .iter()
                    .map(|p| p.ln_coef - p.kappa * a.ln() + ln_gamma(p.eta + 1.0) + (p.eta + 1.0) * t.ln())
                    .collect();
                let ln_z = log_sum_exp(lw.iter().copied());
                let ps: Vec<f64> = lw.iter().map(|l| (l - ln_z).exp()).collect();
                let k_mean: f64 = ps.iter().zip(terms).map(|(p, q)| p * (q.eta + 1.0)).sum();
                let k_var: f64 = ps
                    .iter()
                    .zip(terms)
                    .map(|(p, q)| p * (q.eta + 1.0 - k_mean).powi(2))
                    .sum();
                Sums {
                    ln_z,
                    mean: t * k_mean,
                    var: t * t * (k_mean + k_var),
                }
            }
            Source::Continuum(dos @ ContinuumDos::Kernel(k)) => {
                let Support::Bounded(top) = dos.support(a) else {
                    unreachable!("kernel densities are bounded")
                };
                let mut pts = k.breakpoints(a);
                pts.retain(|p| *p < top);
                pts.push(top);
                let moment = |f: &dyn Fn(f64) -> f64| -> Result<f64> {
                    Ok(quad::integrate_piecewise(|e| dos.g(e, a) * (-e / t).exp() * f(e), &pts, 1e-12, 0.0)?
                        .value)
                };
                let z = moment(&|_| 1.0)?;
                if !(z > 0.0 && z.is_finite()) {
                    return Err(Error::DegenerateTemperature(t));
                }
                let mean = moment(&|e| e)? / z;
                let var = moment(&|e| (e - mean) * (e - mean))? / z;
                Sums {
                    ln_z: z.ln(),
                    mean,
                    var,
                }
            }
            Source::Discrete(disc) => {
                let energies = disc.energies(a)?;
                let lw: Vec<f64> = disc
                    .tracks()
                    .iter()
                    .zip(&energies)
                    .map(|(tr, e)| (tr.degeneracy as f64).ln() - e / t)
                    .collect();
                let ln_z = log_sum_exp(lw.iter().copied());
                let ps: Vec<f64> = lw.iter().map(|l| (l - ln_z).exp()).collect();
                let mean: f64 = ps.iter().zip(&energies).map(|(p, e)| p * e).sum();
                let var: f64 = ps.iter().zip(&energies).map(|(p, e)| p * (e - mean).powi(2)).sum();
                Sums { ln_z, mean, var }
            }
        };
        if !s.ln_z.is_finite() {
            return Err(Error::Divergence(format!(
                "ln Z = {} at a = {a}, T = {t}",
                s.ln_z
            )));
        }
        Ok(s)
    }

    pub fn ln_partition_function(&self) -> Result<f64> {
        Ok(self.sums()?.ln_z)
    }

    pub fn partition_function(&self) -> Result<f64> {
        let z = self.ln_partition_function()?.exp();
        if !z.is_finite() {
            return Err(Error::Divergence(format!(
                "Z overflows at a = {}, T = {}; use ln_partition_function",
                self.a, self.t
            )));
        }
        Ok(z)
    }

    /// Mean energy and variance.
    pub fn moments(&self) -> Result<(f64, f64)> {
        let s = self.sums()?;
        Ok((s.mean, s.var.max(0.0)))
    }

    /// `S = ln Z + ⟨E⟩/T`.
    pub fn entropy(&self) -> Result<f64> {
        let s = self.sums()?;
        Ok(s.ln_z + s.mean / self.t)
    }

    pub fn heat_capacity(&self) -> Result<HeatCapacity> {
        let s = self.sums()?;
        let from_variance = s.var / (self.t * self.t);
        let mut failure = None;
        let mut mean_at = |t: f64| match self.at(self.a, t).and_then(|e| e.sums()) {
            Ok(x) => x.mean,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        };
        // A sharp crossover between terms can defeat the first step size.
        let (mut value, mut derivative_error) = ridders(&mut mean_at, self.t, 0.1 * self.t);
        for frac in [1e-2, 1e-3] {
            if derivative_error <= 1e-10 * value.abs() {
                break;
            }
            let (v, e) = ridders(&mut mean_at, self.t, frac * self.t);
            if e < derivative_error {
                (value, derivative_error) = (v, e);
            }
        }
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(HeatCapacity {
            value,
            from_variance,
            derivative_error,
        })
    }
}

/// `ln Z` of a power-law density by adaptive quadrature, independent of the
/// gamma-function closed form.
pub fn ln_partition_function_quadrature(dos: &ContinuumDos, a: f64, t: f64) -> Result<f64> {
    let ContinuumDos::PowerSum(terms) = dos else {
        return CanonicalEnsemble::continuum(dos.clone(), a, t)?.ln_partition_function();
    };
    let k_max = terms.iter().map(|p| p.eta + 1.0).fold(1.0, f64::max);
    let peak = t * k_max;
    let shift = dos.ln_g(peak, a) - k_max;
    let f = |e: f64| (dos.ln_g(e, a) - e / t - shift).exp();
    let cut = peak + 60.0 * t * k_max.sqrt() + 60.0 * t;
    let mut pts = vec![0.0, 0.5 * t, t, peak, 2.0 * peak, cut];
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let est = quad::integrate_piecewise(f, &pts, 1e-13, 0.0)?;
    Ok(shift + est.value.ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsentropicOptions {
    /// Search `T` in `[T₀/factor, T₀·factor]`.
    pub bracket_factor: f64,
}

impl Default for IsentropicOptions {
    fn default() -> Self {
        IsentropicOptions { bracket_factor: 1e6 }
    }
}

/// Temperature at `a1` with the same canonical entropy as `(a0, T0)`.
pub fn isentropic_temperature(source: &Source, a0: f64, t0: f64, a1: f64) -> Result<f64> {
    isentropic_temperature_with(source, a0, t0, a1, &IsentropicOptions::default())
}

pub fn isentropic_temperature_with(
    source: &Source,
    a0: f64,
    t0: f64,
    a1: f64,
    opts: &IsentropicOptions,
) -> Result<f64> {
    let start = CanonicalEnsemble::new(source.clone(), a0, t0)?;
    if a1 == a0 {
        return Ok(t0);
    }
    let target = start.entropy()?;
    let probe = start.at(a1, t0)?;
    let f = |lt: f64| match probe.at(a1, lt.exp()).and_then(|e| e.entropy()) {
        Ok(s) => s - target,
        Err(_) => f64::NAN,
    };
    let (lo, hi) = (t0 / opts.bracket_factor, t0 * opts.bracket_factor);
    let (flo, fhi) = (f(lo.ln()), f(hi.ln()));
    if !(flo < 0.0 && fhi > 0.0) {
        return Err(Error::Range { lo, hi });
    }
    let lt = brent(f, lo.ln(), hi.ln(), 1e-13)?;
    Ok(lt.exp())
}

/// Fluctuation magnitudes expected for both processes at `a1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluctuationPrediction {
    pub t1: f64,
    pub c_a0: f64,
    pub c_a1: f64,
    /// √c_a(a₁, T₁)·T₁
    pub de_zero_polytropic: f64,
    /// √c_a(a₀, T₀)·T₁
    pub de_adiabatic: f64,
}

pub fn predict_fluctuations(source: &Source, a0: f64, t0: f64, a1: f64) -> Result<FluctuationPrediction> {
    let t1 = isentropic_temperature(source, a0, t0, a1)?;
    let c_a0 = CanonicalEnsemble::new(source.clone(), a0, t0)?.heat_capacity()?.value;
    let c_a1 = CanonicalEnsemble::new(source.clone(), a1, t1)?.heat_capacity()?.value;
    Ok(FluctuationPrediction {
        t1,
        c_a0,
        c_a1,
        de_zero_polytropic: c_a1.sqrt() * t1,
        de_adiabatic: c_a0.sqrt() * t1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    pub grid: GridOptions,
    pub advect: AdvectOptions,
    pub detection_tol: f64,
    pub exec: Exec,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            grid: GridOptions::default(),
            advect: AdvectOptions::default(),
            detection_tol: DEFAULT_DETECTION_TOL,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub a: f64,
    pub t: f64,
    pub e_zp: f64,
    pub e_ad: f64,
    pub de_zp_measured: f64,
    pub de_zp_predicted: f64,
    pub de_ad_measured: f64,
    pub de_ad_predicted: f64,
    pub s_ad: f64,
    pub s_zp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcessComparison {
    pub rows: Vec<ComparisonRow>,
    /// Entropy produced by the adiabatic side (zero for continuum transport).
    pub delta_s_total: f64,
    /// Heat capacity at the initial point.
    pub c_a0: f64,
    /// Heat capacity along the zero-polytropic path, per row.
    pub c_a: Vec<f64>,
}

impl ProcessComparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "a,T,E_zp,E_ad,dE_zp_measured,dE_zp_predicted,dE_ad_measured,dE_ad_predicted,S_ad,S_zp\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.a,
                r.t,
                r.e_zp,
                r.e_ad,
                r.de_zp_measured,
                r.de_zp_predicted,
                r.de_ad_measured,
                r.de_ad_predicted,
                r.s_ad,
                r.s_zp
            );
        }
        out
    }

    /// Largest `|E_ad − E_zp| / E_zp` over the rows.
    pub fn max_relative_energy_gap(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.e_ad - r.e_zp).abs() / r.e_zp.abs())
            .fold(0.0, f64::max)
    }
}

/// Runs both processes from a canonical state at `(a0, T0)` and records
/// them at every parameter in `a_path`.
pub fn compare_processes(
    family: &SpectrumFamily,
    a0: f64,
    t0: f64,
    a_path: &[f64],
    opts: &CompareOptions,
) -> Result<ProcessComparison> {
    if a_path.is_empty() {
        return Err(Error::domain("compare needs at least one checkpoint"));
    }
    if family.is_discrete() {
        compare_discrete(family, a0, t0, a_path, opts)
    } else {
        compare_continuum(family, a0, t0, a_path, opts)
    }
}

fn compare_continuum(
    family: &SpectrumFamily,
    a0: f64,
    t0: f64,
    a_path: &[f64],
    opts: &CompareOptions,
) -> Result<ProcessComparison> {
    let dos = analytic_dos(family)?;
    let source = Source::Continuum(dos.clone());
    let start = CanonicalEnsemble::new(source.clone(), a0, t0)?;
    let c_a0 = start.heat_capacity()?.value;
    let initial = ContinuumDistribution::canonical(dos.clone(), a0, t0, &opts.grid)?;
    let advect_opts = AdvectOptions {
        exec: Exec::Sequential,
        ..opts.advect.clone()
    };
    let rows = par::try_map(opts.exec, a_path, |&a| {
        let t = isentropic_temperature(&source, a0, t0, a)?;
        let ens = start.at(a, t)?;
        let c_a = ens.heat_capacity()?.value;
        let zp = if a == a0 {
            initial.clone()
        } else {
            ContinuumDistribution::canonical(dos.clone(), a, t, &opts.grid)?
        };
        let ad = advect_with(&initial, a, &advect_opts)?;
        let (e_zp, v_zp) = continuum_moments(&zp);
        let (e_ad, v_ad) = continuum_moments(&ad);
        Ok((
            ComparisonRow {
                a,
                t,
                e_zp,
                e_ad,
                de_zp_measured: v_zp.sqrt(),
                de_zp_predicted: c_a.sqrt() * t,
                de_ad_measured: v_ad.sqrt(),
                de_ad_predicted: c_a0.sqrt() * t,
                s_ad: continuum_entropy(&ad),
                s_zp: continuum_entropy(&zp),
            },
            c_a,
        ))
    })?;
    let (rows, c_a) = rows.into_iter().unzip();
    Ok(ProcessComparison {
        rows,
        delta_s_total: 0.0,
        c_a0,
        c_a,
    })
}

fn compare_discrete(
    family: &SpectrumFamily,
    a0: f64,
    t0: f64,
    a_path: &[f64],
    opts: &CompareOptions,
) -> Result<ProcessComparison> {
    let far = a_path
        .iter()
        .copied()
        .fold(a0, |acc, a| if (a - a0).abs() > (acc - a0).abs() { a } else { acc });
    if a_path.iter().any(|a| (a - a0) * (far - a0) < 0.0) {
        return Err(Error::domain(
            "for discrete families all checkpoints must lie on one side of a_start",
        ));
    }
    let sweep = if far == a0 {
        SweepRange::new(a0, a0 + 1.0)?
    } else {
        SweepRange::new(a0, far)?
    };
    let spectrum = family.discrete(sweep)?;
    let source = Source::Discrete(spectrum.clone());
    let start = CanonicalEnsemble::new(source.clone(), a0, t0)?;
    let c_a0 = start.heat_capacity()?.value;
    let initial = canonical_init(&spectrum, a0, t0)?;
    let (samples, delta_s_total) = if far == a0 {
        (Vec::new(), 0.0)
    } else {
        let scan = ScanOptions {
            exec: opts.exec,
            ..ScanOptions::default()
        };
        let schedule = find_crossings_with(&spectrum, opts.detection_tol, &scan)?;
        let r = sweep_adiabatic(&spectrum, &initial, &schedule, a_path)?;
        (r.trajectory_samples, r.total_delta_s)
    };
    let s0 = crate::microstate::entropy(&initial);
    let e0 = crate::microstate::moments(&initial, &spectrum, a0)?;
    let rows = par::try_map(opts.exec, a_path, |&a| {
        let t = isentropic_temperature(&source, a0, t0, a)?;
        let ens = start.at(a, t)?;
        let c_a = ens.heat_capacity()?.value;
        let (e_zp, v_zp) = ens.moments()?;
        let s_zp = ens.entropy()?;
        let (e_ad, v_ad, s_ad) = if a == a0 {
            (e0.0, e0.1, s0)
        } else {
            let smp = samples
                .iter()
                .find(|s| s.a == a)
                .ok_or_else(|| Error::numerical(format!("missing sweep sample at a = {a}")))?;
            (smp.mean, smp.variance, smp.entropy)
        };
        Ok((
            ComparisonRow {
                a,
                t,
                e_zp,
                e_ad,
                de_zp_measured: v_zp.sqrt(),
                de_zp_predicted: c_a.sqrt() * t,
                de_ad_measured: v_ad.sqrt(),
                de_ad_predicted: c_a0.sqrt() * t,
                s_ad,
                s_zp,
            },
            c_a,
        ))
    })?;
    let (rows, c_a) = rows.into_iter().unzip();
    Ok(ProcessComparison {
        rows,
        delta_s_total,
        c_a0,
        c_a,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n: u32,
    /// |E_ad − E_zp| / E_zp at `a1`.
    pub gap: f64,
    /// Measured adiabatic ΔE over its prediction √c_a(a₀,T₀)·T₁.
    pub de_ratio: f64,
    /// c_a(a₁, T₁) / c_a(a₀, T₀).
    pub c_ratio: f64,
    pub t1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingStudy {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of ln gap against ln N; `None` when a gap is
    /// below 1e-12.
    pub slope: Option<f64>,
}

impl ScalingStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,gap,dE_ratio,c_ratio,T1\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.n, r.gap, r.de_ratio, r.c_ratio, r.t1
            );
        }
        out
    }
}

/// Relative mean-energy gap between the processes at `a1` for the family
/// rescaled to each size in `sizes`.
pub fn size_scaling_study(
    family: &SpectrumFamily,
    sizes: &[u32],
    a0: f64,
    t0: f64,
    a1: f64,
    opts: &CompareOptions,
) -> Result<ScalingStudy> {
    if sizes.is_empty() {
        return Err(Error::domain("size scaling needs at least one size"));
    }
    let inner = CompareOptions {
        exec: Exec::Sequential,
        advect: AdvectOptions {
            exec: Exec::Sequential,
            ..opts.advect.clone()
        },
        ..opts.clone()
    };
    let rows = par::try_map(opts.exec, sizes, |&n| {
        let fam = family.with_size(n)?;
        let cmp = compare_processes(&fam, a0, t0, &[a1], &inner)?;
        let r = cmp.rows[0];
        Ok(ScalingRow {
            n,
            gap: (r.e_ad - r.e_zp).abs() / r.e_zp,
            de_ratio: r.de_ad_measured / r.de_ad_predicted,
            c_ratio: cmp.c_a[0] / cmp.c_a0,
            t1: r.t,
        })
    })?;
    let slope = if rows.len() >= 2 && rows.iter().all(|r| r.gap >= 1e-12) {
        let xs: Vec<f64> = rows.iter().map(|r| f64::from(r.n).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.gap.ln()).collect();
        fit_line(&xs, &ys).map(|f| f.slope)
    } else {
        None
    };
    Ok(ScalingStudy { rows, slope })
}
