//! Level-crossing detection along a sweep and the discrete adiabatic process:
//! probabilities ride along their tracks and equalize where tracks meet.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::continuum::{advect_with, AdvectOptions, ContinuumDistribution, GridOptions};
use crate::error::{Error, Result};
use crate::microstate::{canonical_init, entropy, moments_of, EqualizationEvent, ProbabilityState};
use crate::numerics::roots::brent;
use crate::par::{self, Exec};
use crate::spectra::{
    analytic_dos, default_bandwidth, ContinuumDos, DiscreteSpectrum, LevelTrack, SpectrumFamily,
    SweepRange, TrackEnergy, TrackId,
};

pub const DEFAULT_DETECTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    /// Samples per track pair on the first pass of the sign-change scan.
    pub initial_samples: usize,
    /// Largest sample count tried before giving up.
    pub max_samples: usize,
    pub exec: Exec,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            initial_samples: 4096,
            max_samples: 1 << 20,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingEvent {
    pub a_star: f64,
    /// Ascending ids of every level taking part.
    pub level_ids: Vec<TrackId>,
    /// More than one pair crossing was merged into this event.
    pub grouped: bool,
}

/// Crossing events in ascending order of `a_star`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingSchedule {
    pub events: Vec<CrossingEvent>,
    pub detection_tol: f64,
}

impl CrossingSchedule {
    pub fn empty(detection_tol: f64) -> Self {
        CrossingSchedule {
            events: Vec::new(),
            detection_tol,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn grouped_count(&self) -> usize {
        self.events.iter().filter(|e| e.grouped).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PairCrossing {
    a: f64,
    i: usize,
    j: usize,
}

pub fn find_crossings(spectrum: &DiscreteSpectrum, detection_tol: f64) -> Result<CrossingSchedule> {
    find_crossings_with(spectrum, detection_tol, &ScanOptions::default())
}

pub fn find_crossings_with(
    spectrum: &DiscreteSpectrum,
    detection_tol: f64,
    opts: &ScanOptions,
) -> Result<CrossingSchedule> {
    if !(detection_tol > 0.0 && detection_tol.is_finite()) {
        return Err(Error::domain(format!(
            "detection tolerance must be positive (got {detection_tol})"
        )));
    }
    if opts.initial_samples < 2 || opts.max_samples < opts.initial_samples {
        return Err(Error::domain("scan needs at least two samples and max >= initial"));
    }
    let tracks = spectrum.tracks();
    let rows: Vec<usize> = (0..tracks.len()).collect();
    let found = par::try_map(opts.exec, &rows, |&i| {
        let mut out = Vec::new();
        for j in i + 1..tracks.len() {
            for a in pair_crossings(&tracks[i], &tracks[j], spectrum, detection_tol, opts)? {
                out.push(PairCrossing { a, i, j });
            }
        }
        Ok(out)
    })?;
    let pairs: Vec<PairCrossing> = found.into_iter().flatten().collect();
    Ok(CrossingSchedule {
        events: group(pairs, tracks, detection_tol),
        detection_tol,
    })
}

/// Crossing locations of two tracks on the sweep interval.
fn pair_crossings(
    x: &LevelTrack,
    y: &LevelTrack,
    spectrum: &DiscreteSpectrum,
    tol: f64,
    opts: &ScanOptions,
) -> Result<Vec<f64>> {
    let sweep = spectrum.sweep();
    let (lo, hi) = (sweep.lo(), sweep.hi());
    let inside = |a: f64| sweep.contains(a);
    match (&x.energy, &y.energy) {
        (
            TrackEnergy::Linear {
                intercept: b1,
                slope: m1,
            },
            TrackEnergy::Linear {
                intercept: b2,
                slope: m2,
            },
        ) => {
            if m1 == m2 {
                return Ok(if b1 == b2 { vec![sweep.start] } else { vec![] });
            }
            let a = (b2 - b1) / (m1 - m2);
            Ok(if inside(a) { vec![a.clamp(lo, hi)] } else { vec![] })
        }
        (
            TrackEnergy::Power {
                coef: c1,
                exponent: p1,
            },
            TrackEnergy::Power {
                coef: c2,
                exponent: p2,
            },
        ) if *c1 > 0.0 && *c2 > 0.0 => {
            if p1 == p2 {
                return Ok(if c1 == c2 { vec![sweep.start] } else { vec![] });
            }
            let a = (c2 / c1).powf(1.0 / (p1 - p2));
            Ok(if inside(a) { vec![a.clamp(lo, hi)] } else { vec![] })
        }
        _ => scan_pair(x, y, lo, hi, tol, opts),
    }
}

fn scan_pair(
    x: &LevelTrack,
    y: &LevelTrack,
    lo: f64,
    hi: f64,
    tol: f64,
    opts: &ScanOptions,
) -> Result<Vec<f64>> {
    let d = |a: f64| x.energy.eval(a) - y.energy.eval(a);
    let mut n = opts.initial_samples;
    let mut prev = scan_brackets(&d, lo, hi, n);
    loop {
        if n * 2 > opts.max_samples {
            return Err(Error::Resolution {
                max_samples: opts.max_samples,
            });
        }
        n *= 2;
        let next = scan_brackets(&d, lo, hi, n);
        let stable = next.len() == prev.len();
        prev = next;
        if stable {
            break;
        }
    }
    let mut roots = Vec::with_capacity(prev.len());
    for b in prev {
        let a = match b {
            Bracket::Exact(a) => a,
            Bracket::Sign(l, r) => brent(d, l, r, 0.1 * tol)?,
            Bracket::Touch(l, r) => match touch_point(&d, l, r, tol) {
                Some(a) => {
                    let scale = x.energy.derivative(a).abs().max(y.energy.derivative(a).abs());
                    let e_tol = scale * tol + 1e-12 * x.energy.eval(a).abs().max(1.0);
                    if d(a).abs() > e_tol {
                        continue;
                    }
                    a
                }
                None => continue,
            },
        };
        roots.push(a.clamp(lo, hi));
    }
    Ok(roots)
}

#[derive(Debug, Clone, Copy)]
enum Bracket {
    Exact(f64),
    Sign(f64, f64),
    /// Local minimum of |d| without a sign change: a candidate contact.
    Touch(f64, f64),
}

fn scan_brackets(d: &impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Vec<Bracket> {
    let step = (hi - lo) / (n - 1) as f64;
    let a_at = |k: usize| if k == n - 1 { hi } else { lo + step * k as f64 };
    let vals: Vec<f64> = (0..n).map(|k| d(a_at(k))).collect();
    let mut out = Vec::new();
    let mut k = 0;
    while k < n {
        if vals[k] == 0.0 {
            let start = k;
            while k + 1 < n && vals[k + 1] == 0.0 {
                k += 1;
            }
            out.push(Bracket::Exact(a_at(start)));
            k += 1;
            continue;
        }
        if k + 1 < n && vals[k + 1] != 0.0 && vals[k].signum() != vals[k + 1].signum() {
            out.push(Bracket::Sign(a_at(k), a_at(k + 1)));
        } else if k > 0
            && k + 1 < n
            && vals[k - 1] != 0.0
            && vals[k + 1] != 0.0
            && vals[k - 1].signum() == vals[k].signum()
            && vals[k + 1].signum() == vals[k].signum()
            && vals[k].abs() < vals[k - 1].abs()
            && vals[k].abs() <= vals[k + 1].abs()
        {
            out.push(Bracket::Touch(a_at(k - 1), a_at(k + 1)));
        }
        k += 1;
    }
    out
}

/// Golden-section minimisation of |d| on a touch bracket.
fn touch_point(d: &impl Fn(f64) -> f64, mut l: f64, mut r: f64, tol: f64) -> Option<f64> {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = r - phi * (r - l);
    let mut x2 = l + phi * (r - l);
    let (mut f1, mut f2) = (d(x1).abs(), d(x2).abs());
    for _ in 0..200 {
        if r - l < tol {
            break;
        }
        if f1 < f2 {
            r = x2;
            x2 = x1;
            f2 = f1;
            x1 = r - phi * (r - l);
            f1 = d(x1).abs();
        } else {
            l = x1;
            x1 = x2;
            f1 = f2;
            x2 = l + phi * (r - l);
            f2 = d(x2).abs();
        }
    }
    let a = 0.5 * (l + r);
    a.is_finite().then_some(a)
}

fn find(parent: &mut [usize], mut k: usize) -> usize {
    while parent[k] != k {
        parent[k] = parent[parent[k]];
        k = parent[k];
    }
    k
}

/// Merges pair crossings that share a level and lie within `tol` of each other.
fn group(mut pairs: Vec<PairCrossing>, tracks: &[LevelTrack], tol: f64) -> Vec<CrossingEvent> {
    pairs.sort_by(|p, q| p.a.total_cmp(&q.a).then(p.i.cmp(&q.i)).then(p.j.cmp(&q.j)));
    let n = pairs.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut start = 0;
    for k in 0..n {
        while pairs[k].a - pairs[start].a > tol {
            start += 1;
        }
        for m in start..k {
            let (p, q) = (pairs[m], pairs[k]);
            if p.i == q.i || p.i == q.j || p.j == q.i || p.j == q.j {
                let (rp, rq) = (find(&mut parent, m), find(&mut parent, k));
                if rp != rq {
                    parent[rp.max(rq)] = rp.min(rq);
                }
            }
        }
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for k in 0..n {
        let r = find(&mut parent, k);
        members[r].push(k);
    }
    let mut events: Vec<CrossingEvent> = members
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|m| {
            let a_star = m.iter().map(|&k| pairs[k].a).sum::<f64>() / m.len() as f64;
            let mut ids: Vec<TrackId> = m
                .iter()
                .flat_map(|&k| [tracks[pairs[k].i].id, tracks[pairs[k].j].id])
                .collect();
            ids.sort_unstable();
            ids.dedup();
            CrossingEvent {
                a_star,
                level_ids: ids,
                grouped: m.len() > 1,
            }
        })
        .collect();
    events.sort_by(|x, y| x.a_star.total_cmp(&y.a_star).then_with(|| x.level_ids.cmp(&y.level_ids)));
    events
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub a: f64,
    pub entropy: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub final_state: ProbabilityState,
    /// Equalizations in the order they were applied.
    pub ledger: Vec<EqualizationEvent>,
    pub total_delta_s: f64,
    /// Samples at the requested checkpoints, in sweep order.
    pub trajectory_samples: Vec<TrajectorySample>,
    /// States at the checkpoints, aligned with `trajectory_samples`.
    pub snapshots: Vec<ProbabilityState>,
}

/// Carries `initial` from `a_start` to `a_end` of the spectrum's sweep,
/// equalizing at each scheduled event. Checkpoints see the state just after
/// any event at the same `a`. Trajectory entropies are the initial entropy
/// plus the ledger total so far.
pub fn sweep_adiabatic(
    spectrum: &DiscreteSpectrum,
    initial: &ProbabilityState,
    schedule: &CrossingSchedule,
    checkpoints: &[f64],
) -> Result<SweepResult> {
    if initial.ids() != spectrum.ids().as_slice() {
        return Err(Error::domain("initial state does not match the spectrum's tracks"));
    }
    if schedule
        .events
        .windows(2)
        .any(|w| !(w[0].a_star <= w[1].a_star))
    {
        return Err(Error::domain("crossing schedule is not sorted by a_star"));
    }
    let sweep = spectrum.sweep();
    if let Some(ev) = schedule.events.iter().find(|e| !sweep.contains(e.a_star)) {
        return Err(Error::domain(format!(
            "crossing at a = {} lies outside the sweep",
            ev.a_star
        )));
    }
    if let Some(c) = checkpoints.iter().find(|c| !sweep.contains(**c)) {
        return Err(Error::domain(format!("checkpoint a = {c} lies outside the sweep")));
    }
    let ascending = sweep.is_ascending();
    let ahead = |x: f64, y: f64| if ascending { x <= y } else { x >= y };

    let mut order: Vec<&CrossingEvent> = schedule.events.iter().collect();
    if !ascending {
        order.sort_by(|x, y| y.a_star.total_cmp(&x.a_star).then_with(|| x.level_ids.cmp(&y.level_ids)));
    }
    let mut cps = checkpoints.to_vec();
    cps.sort_by(|x, y| if ascending { x.total_cmp(y) } else { y.total_cmp(x) });

    let index: HashMap<TrackId, usize> =
        initial.ids().iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut state = initial.clone();
    let s0 = entropy(initial);
    let mut ledger = Vec::with_capacity(order.len());
    let mut total = 0.0;
    let mut samples = Vec::with_capacity(cps.len());
    let mut snapshots = Vec::with_capacity(cps.len());
    let mut next = 0;
    let mut apply = |ev: &CrossingEvent, state: &mut ProbabilityState| -> Result<f64> {
        let idx = ev
            .level_ids
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::domain(format!("unknown level id {id} in schedule")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rec = state.equalize_indices(&idx, ev.a_star);
        rec.grouped = ev.grouped;
        let ds = rec.delta_s;
        ledger.push(rec);
        Ok(ds)
    };
    for c in cps {
        while next < order.len() && ahead(order[next].a_star, c) {
            total += apply(order[next], &mut state)?;
            next += 1;
        }
        let energies = spectrum.energies(c)?;
        let (mean, variance) = moments_of(&state, &energies);
        samples.push(TrajectorySample {
            a: c,
            entropy: s0 + total,
            mean,
            variance,
        });
        snapshots.push(state.clone());
    }
    while next < order.len() {
        total += apply(order[next], &mut state)?;
        next += 1;
    }
    Ok(SweepResult {
        final_state: state,
        ledger,
        total_delta_s: total,
        trajectory_samples: samples,
        snapshots,
    })
}

fn join<T: std::fmt::Display>(xs: impl IntoIterator<Item = T>, fmt: impl Fn(T) -> String) -> String {
    xs.into_iter().map(fmt).collect::<Vec<_>>().join(";")
}

/// `a_star,level_ids,w_before,w_after,delta_s`, list fields joined by `;`.
pub fn ledger_csv(ledger: &[EqualizationEvent]) -> String {
    let mut out = String::from("a_star,level_ids,w_before,w_after,delta_s\n");
    for ev in ledger {
        let _ = writeln!(
            out,
            "{:.16e},{},{},{:.16e},{:.16e}",
            ev.a_star,
            join(&ev.level_ids, |id| id.to_string()),
            join(&ev.w_before, |w| format!("{w:.16e}")),
            ev.w_after,
            ev.delta_s
        );
    }
    out
}

/// `a,S,E_mean,E_var`
pub fn trajectory_csv(samples: &[TrajectorySample]) -> String {
    let mut out = String::from("a,S,E_mean,E_var\n");
    for s in samples {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            s.a, s.entropy, s.mean, s.variance
        );
    }
    out
}

/// A spectrum family refined by level count `M`, paired with its continuum limit.
pub trait RefinementFamily: Sync {
    fn spectrum(&self, m: u32, sweep: SweepRange) -> Result<DiscreteSpectrum>;
    fn continuum_dos(&self, m: u32) -> Result<ContinuumDos>;
    /// Characteristic level spacing at refinement `m`.
    fn spacing(&self, m: u32) -> f64;
}

/// Two ladders of `M` levels each over a fixed energy span: δ_A = span/M,
/// δ_B = ratio·span/M.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LadderRefinement {
    pub span: f64,
    pub ratio: f64,
}

impl LadderRefinement {
    pub fn family(&self, m: u32) -> SpectrumFamily {
        let delta = self.spacing(m);
        SpectrumFamily::TwoLadder {
            delta_a: delta,
            delta_b: self.ratio * delta,
            m_a: m,
            m_b: m,
        }
    }
}

impl RefinementFamily for LadderRefinement {
    fn spectrum(&self, m: u32, sweep: SweepRange) -> Result<DiscreteSpectrum> {
        self.family(m).discrete(sweep)
    }

    fn continuum_dos(&self, m: u32) -> Result<ContinuumDos> {
        analytic_dos(&self.family(m))
    }

    fn spacing(&self, m: u32) -> f64 {
        self.span / f64::from(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOptions {
    pub grid: GridOptions,
    pub advect: AdvectOptions,
    pub detection_tol: f64,
    pub exec: Exec,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            grid: GridOptions::default(),
            advect: AdvectOptions::default(),
            detection_tol: DEFAULT_DETECTION_TOL,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefineRow {
    pub m: u32,
    pub spacing: f64,
    pub crossings: usize,
    pub total_delta_s: f64,
    pub distance_to_continuum: f64,
}

/// Sweeps a canonical state at `t0` through each refinement and measures the
/// entropy produced and the L1 distance `∫ G |w̃ − w| dε` between the
/// kernel-smoothed discrete result and the transported continuum state.
pub fn refine_study(
    family: &dyn RefinementFamily,
    levels: &[u32],
    sweep: SweepRange,
    t0: f64,
    opts: &RefineOptions,
) -> Result<Vec<RefineRow>> {
    let inner = AdvectOptions {
        exec: Exec::Sequential,
        ..opts.advect.clone()
    };
    let scan = ScanOptions {
        exec: Exec::Sequential,
        ..ScanOptions::default()
    };
    par::try_map(opts.exec, levels, |&m| {
        let spectrum = family.spectrum(m, sweep)?;
        let initial = canonical_init(&spectrum, sweep.start, t0)?;
        let schedule = find_crossings_with(&spectrum, opts.detection_tol, &scan)?;
        let result = sweep_adiabatic(&spectrum, &initial, &schedule, &[])?;

        let dos = family.continuum_dos(m)?;
        let start = ContinuumDistribution::canonical(dos, sweep.start, t0, &opts.grid)?;
        let end = advect_with(&start, sweep.end, &inner)?;
        let h = default_bandwidth(&spectrum, sweep.end)?;
        let smooth = SmoothedState::new(&spectrum, &result.final_state, sweep.end, h)?;
        let distance = end.quadrature(|e, g, w| g * (smooth.eval(e) - w).abs());
        Ok(RefineRow {
            m,
            spacing: family.spacing(m),
            crossings: schedule.len(),
            total_delta_s: result.total_delta_s,
            distance_to_continuum: distance,
        })
    })
}

/// Per-state probability smoothed with the same reflected triangular kernel
/// as the smoothed density: `Σ g K w / Σ g K`.
struct SmoothedState {
    /// (energy, degeneracy, w) sorted by energy.
    levels: Vec<(f64, f64, f64)>,
    h: f64,
}

impl SmoothedState {
    fn new(spectrum: &DiscreteSpectrum, state: &ProbabilityState, a: f64, h: f64) -> Result<Self> {
        let energies = spectrum.energies(a)?;
        let mut levels: Vec<(f64, f64, f64)> = energies
            .iter()
            .zip(state.degeneracies())
            .zip(state.w())
            .map(|((e, g), w)| (*e, *g as f64, *w))
            .collect();
        levels.sort_by(|x, y| x.0.total_cmp(&y.0));
        Ok(SmoothedState { levels, h })
    }

    fn eval(&self, e: f64) -> f64 {
        let h = self.h;
        let k = |x: f64| (1.0 - x.abs() / h).max(0.0);
        let from = self.levels.partition_point(|l| l.0 <= e - h);
        let (mut num, mut den) = (0.0, 0.0);
        for &(ej, g, w) in self.levels[from..].iter().take_while(|l| l.0 < e + h) {
            let kk = g * k(e - ej);
            num += kk * w;
            den += kk;
        }
        for &(ej, g, w) in self.levels.iter().take_while(|l| l.0 < h - e) {
            let kk = g * k(e + ej);
            num += kk * w;
            den += kk;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

/// `M,spacing,crossings,total_delta_s,distance_to_continuum`
pub fn refine_csv(rows: &[RefineRow]) -> String {
    let mut out = String::from("M,spacing,crossings,total_delta_s,distance_to_continuum\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.16e},{},{:.16e},{:.16e}",
            r.m, r.spacing, r.crossings, r.total_delta_s, r.distance_to_continuum
        );
    }
    out
}
