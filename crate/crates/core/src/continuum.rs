//! Quasicontinuum transport: the wave velocity u(ε, a), characteristics
//! dε/da = −u along which Φ(ε, a) is conserved, and semi-Lagrangian
//! advection of w(ε, a) on a geometric energy grid.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::grid::{geometric, simpson};
use crate::numerics::interp::Pchip;
use crate::numerics::ode::{self, Solution, Tolerance};
use crate::numerics::quad;
use crate::numerics::roots::brent;
use crate::numerics::{fit_line, log_sum_exp, LineFit};
use crate::par::{self, Exec};
use crate::spectra::{ContinuumDos, Support};

/// Relative normalization slack accepted for a distribution.
pub const NORM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    pub nodes: usize,
    /// Nats below the peak of G·w at which the grid is truncated.
    pub log_drop: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            nodes: 2048,
            log_drop: 40.0,
        }
    }
}

impl GridOptions {
    fn check(&self) -> Result<()> {
        if self.nodes < 3 {
            return Err(Error::domain("an energy grid needs at least 3 nodes"));
        }
        if !(self.log_drop > 0.0) {
            return Err(Error::domain("log_drop must be positive"));
        }
        Ok(())
    }
}

/// Per-pure-state probability `w(ε)` on a positive energy grid, stored as
/// `ln w`. Below the first node `w` is taken as constant.
#[derive(Debug, Clone)]
pub struct ContinuumDistribution {
    grid: Vec<f64>,
    ln_w: Vec<f64>,
    ln_g: Vec<f64>,
    dos: ContinuumDos,
    a: f64,
}

fn ln_canonical_z(dos: &ContinuumDos, a: f64, t: f64, grid: &[f64]) -> f64 {
    if let ContinuumDos::PowerSum(terms) = dos {
        return log_sum_exp(terms.iter().map(|p| {
            p.ln_coef - p.kappa * a.ln() + statrs::function::gamma::ln_gamma(p.eta + 1.0)
                + (p.eta + 1.0) * t.ln()
        }));
    }
    let lo = grid[0];
    let vals: Vec<f64> = grid.iter().map(|&e| dos.ln_g(e, a) - e / t).collect();
    let shift = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let fs: Vec<f64> = vals.iter().map(|v| (v - shift).exp()).collect();
    let body = simpson_log_grid(grid, &fs);
    let head = dos.phi(lo, a) * (-lo / t - shift).exp();
    shift + (body + head).ln()
}

fn simpson_log_grid(grid: &[f64], fs: &[f64]) -> f64 {
    let ts: Vec<f64> = grid.iter().map(|e| e.ln()).collect();
    let gs: Vec<f64> = grid.iter().zip(fs).map(|(e, f)| e * f).collect();
    simpson(&ts, &gs)
}

/// Energy window holding everything within `log_drop` nats of the peak of
/// `ln G(ε) + ln_w(ε)`, scanned on a log grid around `scale`.
fn energy_window(
    dos: &ContinuumDos,
    a: f64,
    scale: f64,
    ln_w: impl Fn(f64) -> f64,
    log_drop: f64,
) -> Result<(f64, f64)> {
    const SCAN: usize = 4096;
    let top = match dos.support(a) {
        Support::Bounded(max) => max,
        Support::Unbounded => f64::INFINITY,
    };
    let (t_lo, t_hi) = (scale.ln() - 30.0, (scale.ln() + 12.0).min(top.ln()));
    if !(t_hi > t_lo) {
        return Err(Error::domain("energy support is too narrow for the grid window"));
    }
    let step = (t_hi - t_lo) / (SCAN - 1) as f64;
    let pts: Vec<(f64, f64)> = (0..SCAN)
        .map(|k| {
            let e = if k == SCAN - 1 { t_hi.exp() } else { (t_lo + step * k as f64).exp() };
            (e, dos.ln_g(e, a) + ln_w(e))
        })
        .collect();
    let peak = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::numerical("distribution has no finite mass on the scan window"));
    }
    let first = pts.iter().position(|p| p.1 >= peak - log_drop).unwrap();
    let last = pts.iter().rposition(|p| p.1 >= peak - log_drop).unwrap();
    let lo = pts[first.saturating_sub(1)].0;
    let hi = pts[(last + 1).min(SCAN - 1)].0;
    Ok((lo.max(hi * 1e-10), hi))
}

impl ContinuumDistribution {
    fn build(dos: ContinuumDos, a: f64, grid: Vec<f64>, ln_w: Vec<f64>) -> Result<Self> {
        if grid.len() != ln_w.len() || grid.len() < 3 {
            return Err(Error::domain("grid and w need at least 3 matching nodes"));
        }
        if !(grid[0] > 0.0) || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("energy grid must be positive and strictly increasing"));
        }
        if ln_w.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::domain("w must be finite and nonnegative"));
        }
        for &e in [grid[0], grid[grid.len() - 1]].iter() {
            dos.check_point(e, a)?;
        }
        let ln_g = grid.iter().map(|&e| dos.ln_g(e, a)).collect();
        let d = ContinuumDistribution {
            grid,
            ln_w,
            ln_g,
            dos,
            a,
        };
        let norm = d.normalization();
        if !((norm - 1.0).abs() <= NORM_TOL) {
            return Err(Error::domain(format!(
                "normalization integral of G·w is {norm:.12}, not 1 within {NORM_TOL:e}"
            )));
        }
        Ok(d)
    }

    /// Canonical distribution `w = exp(−ε/T)/Z` on a grid fitted to its mass.
    pub fn canonical(dos: ContinuumDos, a: f64, t: f64, opts: &GridOptions) -> Result<Self> {
        opts.check()?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::domain(format!("temperature must be positive (got {t})")));
        }
        dos.check_point(0.0, a)?;
        let (lo, hi) = energy_window(&dos, a, t, |e| -e / t, opts.log_drop)?;
        let grid = geometric(lo, hi, opts.nodes);
        let ln_z = ln_canonical_z(&dos, a, t, &grid);
        if !ln_z.is_finite() {
            return Err(Error::DegenerateTemperature(t));
        }
        let ln_w = grid.iter().map(|e| -e / t - ln_z).collect();
        Self::build(dos, a, grid, ln_w)
    }

    /// Uniform `w = 1/Φ(ε_max)` on `(0, ε_max]`.
    pub fn uniform(dos: ContinuumDos, a: f64, e_max: f64, opts: &GridOptions) -> Result<Self> {
        opts.check()?;
        dos.check_point(e_max, a)?;
        if !(e_max > 0.0) {
            return Err(Error::domain("uniform distribution needs e_max > 0"));
        }
        let grid = geometric(e_max * 1e-12, e_max, opts.nodes);
        let ln_w = vec![-dos.ln_phi(e_max, a); grid.len()];
        Self::build(dos, a, grid, ln_w)
    }

    /// Tabulated values `w` on an explicit grid.
    pub fn from_values(dos: ContinuumDos, a: f64, grid: Vec<f64>, w: &[f64]) -> Result<Self> {
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::domain("w must be nonnegative"));
        }
        let ln_w = w.iter().map(|x| x.ln()).collect();
        Self::build(dos, a, grid, ln_w)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn ln_w(&self) -> &[f64] {
        &self.ln_w
    }

    pub fn w(&self) -> Vec<f64> {
        self.ln_w.iter().map(|x| x.exp()).collect()
    }

    pub fn dos(&self) -> &ContinuumDos {
        &self.dos
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// `∫ f(ε, G, w) dε` over the grid (Simpson in `ln ε`), head excluded.
    pub fn quadrature(&self, f: impl Fn(f64, f64, f64) -> f64) -> f64 {
        let fs: Vec<f64> = (0..self.grid.len())
            .map(|i| f(self.grid[i], self.ln_g[i].exp(), self.ln_w[i].exp()))
            .collect();
        simpson_log_grid(&self.grid, &fs)
    }

    /// `∫ G·w·f(ε, ln w) dε` including the head below the first node.
    fn weighted(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let fs: Vec<f64> = (0..self.grid.len())
            .map(|i| {
                let m = (self.ln_g[i] + self.ln_w[i]).exp();
                if m == 0.0 {
                    0.0
                } else {
                    m * f(self.grid[i], self.ln_w[i])
                }
            })
            .collect();
        let lo = self.grid[0];
        let head_mass = (self.dos.ln_phi(lo, self.a) + self.ln_w[0]).exp();
        let head = if head_mass == 0.0 { 0.0 } else { head_mass * f(0.5 * lo, self.ln_w[0]) };
        simpson_log_grid(&self.grid, &fs) + head
    }

    pub fn normalization(&self) -> f64 {
        self.weighted(|_, _| 1.0)
    }

    /// Interpolated `ln w` at `e` inside the grid.
    pub fn ln_w_at(&self, e: f64) -> Option<f64> {
        let k = self.grid.partition_point(|x| *x < e);
        if k < self.grid.len() && self.grid[k] == e {
            return Some(self.ln_w[k]);
        }
        interpolant(&self.grid, &self.ln_w).ok()?.eval(e)
    }

    /// Rows `epsilon,G,w`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,G,w\n");
        for i in 0..self.grid.len() {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e}",
                self.grid[i],
                self.ln_g[i].exp(),
                self.ln_w[i].exp()
            );
        }
        out
    }
}

/// `S = −∫ G w ln w dε`.
pub fn continuum_entropy(dist: &ContinuumDistribution) -> f64 {
    dist.weighted(|_, ln_w| if ln_w == f64::NEG_INFINITY { 0.0 } else { -ln_w })
}

/// Mean energy and variance of `G·w`.
pub fn continuum_moments(dist: &ContinuumDistribution) -> (f64, f64) {
    let mean = dist.weighted(|e, _| e);
    let var = dist.weighted(|e, _| (e - mean) * (e - mean));
    (mean, var.max(0.0))
}

/// Least-squares line through `(ε, ln w)`; a canonical distribution has zero
/// residual and slope `−1/T`.
pub fn log_linear_fit(dist: &ContinuumDistribution) -> Option<LineFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = dist
        .grid
        .iter()
        .zip(&dist.ln_w)
        .filter(|(_, y)| y.is_finite())
        .map(|(x, y)| (*x, *y))
        .unzip();
    fit_line(&xs, &ys)
}

/// `u = (1/G)·∫₀^ε ∂G/∂a dε′` from the closed form of the density.
pub fn wave_velocity(dos: &ContinuumDos, e: f64, a: f64) -> Result<f64> {
    dos.check_point(e, a)?;
    dos.phi_da_over_g(e, a)
        .ok_or(Error::SingularVelocity { energy: e, a })
}

/// Same velocity with the integral done by adaptive quadrature.
pub fn wave_velocity_quadrature(dos: &ContinuumDos, e: f64, a: f64) -> Result<f64> {
    dos.check_point(e, a)?;
    let g = dos.g(e, a);
    if !(g > 0.0) {
        return Err(Error::SingularVelocity { energy: e, a });
    }
    if e == 0.0 {
        return Ok(0.0);
    }
    let integral = match dos {
        ContinuumDos::Kernel(k) => {
            let mut pts: Vec<f64> = k.breakpoints(a).into_iter().filter(|p| *p < e).collect();
            pts.push(e);
            quad::integrate_piecewise(|x| dos.g_da(x, a), &pts, 1e-10, 0.0)?
        }
        ContinuumDos::PowerSum(_) => quad::integrate(|x| dos.g_da(x, a), 0.0, e, 1e-10, 0.0)?,
    };
    Ok(integral.value / g)
}

/// A characteristic traced from `(ε₀, a₀)` to `a₁`.
#[derive(Debug, Clone)]
pub struct Characteristic {
    pub a0: f64,
    pub e0: f64,
    pub a1: f64,
    /// Accepted ODE nodes in `(a, ln ε)`.
    path: Solution,
}

impl Characteristic {
    pub fn end(&self) -> f64 {
        let y = self.path.end().y;
        if y == self.path.nodes[0].y {
            self.e0
        } else {
            y.exp()
        }
    }

    /// `ε(a)` along the path, for `a` between `a0` and `a1`.
    pub fn energy_at(&self, a: f64) -> Option<f64> {
        self.path.eval(a).map(f64::exp)
    }

    pub fn steps(&self) -> usize {
        self.path.nodes.len() - 1
    }
}

/// Integrates `dε/da = −u(ε, a)` in `y = ln ε`. The local error is held to
/// `rel + abs/ε`, divided by the elasticity `εG/Φ` so that the bound
/// applies to the conserved count Φ.
pub fn trace_characteristic(
    dos: &ContinuumDos,
    e0: f64,
    a0: f64,
    a1: f64,
    tol: Tolerance,
) -> Result<Characteristic> {
    dos.check_point(e0, a0)?;
    dos.check_point(0.0, a1)?;
    if !(e0 > 0.0) {
        return Err(Error::domain("characteristics start at a positive energy"));
    }
    let rhs = |a: f64, y: f64| -> Result<f64> {
        let e = y.exp();
        if let Support::Bounded(max) = dos.support(a) {
            if e > max {
                return Err(Error::DomainExit { a });
            }
        }
        if !e.is_finite() || e <= 0.0 {
            return Err(Error::DomainExit { a });
        }
        let u = dos
            .phi_da_over_g(e, a)
            .ok_or(Error::SingularVelocity { energy: e, a })?;
        Ok(-u / e)
    };
    let elasticity_at = |a: f64, y: f64| {
        let e = y.exp();
        let v = (y + dos.ln_g(e, a) - dos.ln_phi(e, a)).exp();
        if v.is_finite() { v.max(1.0) } else { 1.0 }
    };
    let el = elasticity_at(a0, e0.ln()).max(elasticity_at(a1, e0.ln()));
    let scale = |y: f64| (tol.rel + tol.abs / y.exp()) / el;
    let path = ode::integrate(rhs, a0, e0.ln(), a1, scale)?;
    Ok(Characteristic { a0, e0, a1, path })
}

/// Foot of the characteristic at `a1` found by solving `Φ(ε, a1) = Φ(ε₀, a₀)`.
pub fn trace_by_phi_inversion(dos: &ContinuumDos, e0: f64, a0: f64, a1: f64) -> Result<f64> {
    dos.check_point(e0, a0)?;
    let target = dos.ln_phi(e0, a0);
    if !target.is_finite() {
        return Err(Error::domain("Φ vanishes at the starting point"));
    }
    let f = |y: f64| dos.ln_phi(y.exp(), a1) - target;
    let y0 = e0.ln();
    let (mut lo, mut hi) = (y0 - 1.0, y0 + 1.0);
    let top = match dos.support(a1) {
        Support::Bounded(max) => max.ln(),
        Support::Unbounded => f64::INFINITY,
    };
    hi = hi.min(top);
    let mut tries = 0;
    while !(f(lo) < 0.0) {
        lo -= 2.0 * (tries as f64 + 1.0);
        tries += 1;
        if tries > 60 {
            return Err(Error::DomainExit { a: a1 });
        }
    }
    tries = 0;
    while !(f(hi) > 0.0) {
        if hi >= top {
            return Err(Error::DomainExit { a: a1 });
        }
        hi = (hi + 2.0 * (tries as f64 + 1.0)).min(top);
        tries += 1;
        if tries > 60 {
            return Err(Error::DomainExit { a: a1 });
        }
    }
    Ok(brent(f, lo, hi, 1e-15)?.exp())
}

#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct AdvectOptions {
    pub tol: Tolerance,
    pub exec: Exec,
    /// Target grid at `a1`; by default the geometric grid between the images
    /// of the initial endpoints, with the same node count.
    pub target_grid: Option<Vec<f64>>,
}


fn interpolant(grid: &[f64], ln_w: &[f64]) -> Result<Pchip> {
    Pchip::new(grid.to_vec(), ln_w.to_vec())
}

/// Transports `initial` to parameter `a1`: `w(ε, a1) = w₀(foot)`, with the
/// foot found by tracing the characteristic through `ε` back to `a₀`.
pub fn advect(initial: &ContinuumDistribution, a1: f64) -> Result<ContinuumDistribution> {
    advect_with(initial, a1, &AdvectOptions::default())
}

pub fn advect_with(
    initial: &ContinuumDistribution,
    a1: f64,
    opts: &AdvectOptions,
) -> Result<ContinuumDistribution> {
    let a0 = initial.a;
    let dos = &initial.dos;
    if a1 == a0 {
        return Ok(initial.clone());
    }
    let n = initial.grid.len();
    let (lo0, hi0) = (initial.grid[0], initial.grid[n - 1]);
    let (grid, ends_known) = match &opts.target_grid {
        Some(g) => (g.clone(), false),
        None => {
            let lo1 = trace_characteristic(dos, lo0, a0, a1, opts.tol)?.end();
            let hi1 = trace_characteristic(dos, hi0, a0, a1, opts.tol)?.end();
            if lo1 == lo0 && hi1 == hi0 {
                (initial.grid.clone(), true)
            } else {
                (geometric(lo1, hi1, n), true)
            }
        }
    };
    let has_zero = initial.ln_w.contains(&f64::NEG_INFINITY);
    let interp = if has_zero {
        Pchip::new(initial.grid.clone(), initial.w())?
    } else {
        interpolant(&initial.grid, &initial.ln_w)?
    };
    let last = grid.len() - 1;
    let idx: Vec<usize> = (0..grid.len()).collect();
    let ln_w = par::try_map(opts.exec, &idx, |&k| {
        let (foot, exact) = if ends_known && k == 0 {
            (lo0, Some(initial.ln_w[0]))
        } else if ends_known && k == last {
            (hi0, Some(initial.ln_w[n - 1]))
        } else {
            (trace_characteristic(dos, grid[k], a1, a0, opts.tol)?.end(), None)
        };
        if let Some(v) = exact {
            return Ok(v);
        }
        let slack = 1e-9;
        let f = if foot < lo0 && foot >= lo0 * (1.0 - slack) {
            lo0
        } else if foot > hi0 && foot <= hi0 * (1.0 + slack) {
            hi0
        } else {
            foot
        };
        let v = interp.eval(f).ok_or(Error::Extrapolation {
            foot,
            lo: lo0,
            hi: hi0,
        })?;
        Ok(if has_zero { v.max(0.0).ln() } else { v })
    })?;
    ContinuumDistribution::build(dos.clone(), a1, grid, ln_w)
}

/// Canonical-equivalent check: `max |ln w − fit|` and the fitted temperature.
pub fn fitted_temperature(dist: &ContinuumDistribution) -> Option<(f64, f64)> {
    log_linear_fit(dist).map(|f| (-1.0 / f.slope, f.max_residual))
}

/// `w` of `dist` evaluated on another grid; `None` outside its range.
pub fn resample(dist: &ContinuumDistribution, energies: &[f64]) -> Result<Vec<Option<f64>>> {
    let p = interpolant(&dist.grid, &dist.ln_w)?;
    Ok(energies.iter().map(|e| p.eval(*e).map(f64::exp)).collect())
}
