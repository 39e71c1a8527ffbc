//! Per-pure-state probabilities over a discrete spectrum, equalization of
//! crossing levels and the Gibbs entropy.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectra::{DiscreteSpectrum, TrackId};

/// Normalization slack accepted when a state is constructed.
pub const NORM_TOL: f64 = 1e-12;

/// Probabilities `w_j` shared by each of the `g_j` pure states of level `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityState {
    ids: Vec<TrackId>,
    g: Vec<u64>,
    w: Vec<f64>,
}

impl ProbabilityState {
    pub fn new(ids: Vec<TrackId>, degeneracies: Vec<u64>, w: Vec<f64>) -> Result<Self> {
        if ids.len() != w.len() || degeneracies.len() != w.len() {
            return Err(Error::domain("ids, degeneracies and w must have equal length"));
        }
        if w.is_empty() {
            return Err(Error::domain("a probability state needs at least one level"));
        }
        if let Some(j) = w.iter().position(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::domain(format!("w[{j}] = {} is not a probability", w[j])));
        }
        if degeneracies.contains(&0) {
            return Err(Error::domain("degeneracies must be at least 1"));
        }
        let s = ProbabilityState {
            ids,
            g: degeneracies,
            w,
        };
        let total = s.total();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::domain(format!(
                "normalization sum g_j w_j = {total:.17} differs from 1"
            )));
        }
        Ok(s)
    }

    /// State over the tracks of `spectrum` with the given per-level probabilities.
    pub fn for_spectrum(spectrum: &DiscreteSpectrum, w: Vec<f64>) -> Result<Self> {
        Self::new(spectrum.ids(), spectrum.degeneracies(), w)
    }

    pub fn ids(&self) -> &[TrackId] {
        &self.ids
    }

    pub fn degeneracies(&self) -> &[u64] {
        &self.g
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Σ g_j w_j
    pub fn total(&self) -> f64 {
        self.g.iter().zip(&self.w).map(|(g, w)| *g as f64 * w).sum()
    }

    pub fn index_of(&self, id: TrackId) -> Option<usize> {
        self.ids.iter().position(|x| *x == id)
    }

    pub fn prob_of(&self, id: TrackId) -> Option<f64> {
        self.index_of(id).map(|i| self.w[i])
    }

    /// Σ g_j |w_j − w'_j| over matching ids.
    pub fn l1_distance(&self, other: &ProbabilityState) -> Result<f64> {
        if self.ids != other.ids {
            return Err(Error::domain("states are defined over different levels"));
        }
        Ok(self
            .g
            .iter()
            .zip(self.w.iter().zip(&other.w))
            .map(|(g, (x, y))| *g as f64 * (x - y).abs())
            .sum())
    }

    /// Rows `id,energy,degeneracy,w` at parameter `a`.
    pub fn to_csv(&self, spectrum: &DiscreteSpectrum, a: f64) -> Result<String> {
        let energies = spectrum.energies(a)?;
        if energies.len() != self.len() {
            return Err(Error::domain("state and spectrum have different track counts"));
        }
        let mut out = String::from("id,energy,degeneracy,w\n");
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{:.16e},{},{:.16e}",
                self.ids[i], energies[i], self.g[i], self.w[i]
            );
        }
        Ok(out)
    }
}

/// One equalization of the levels that meet at `a_star`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqualizationEvent {
    pub a_star: f64,
    pub level_ids: Vec<TrackId>,
    pub w_before: Vec<f64>,
    pub w_after: f64,
    pub delta_s: f64,
    /// Set when the event was assembled from several nearby pair crossings.
    pub grouped: bool,
}

/// Boltzmann weights `w_j = exp(−ε_j/T)/Z` at parameter `a`.
pub fn canonical_init(spectrum: &DiscreteSpectrum, a: f64, t: f64) -> Result<ProbabilityState> {
    let energies = spectrum.energies(a)?;
    canonical_weights(spectrum.ids(), spectrum.degeneracies(), &energies, t)
}

/// Boltzmann weights for explicit level energies.
pub fn canonical_weights(
    ids: Vec<TrackId>,
    degeneracies: Vec<u64>,
    energies: &[f64],
    t: f64,
) -> Result<ProbabilityState> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("temperature must be positive (got {t})")));
    }
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let boltz: Vec<f64> = energies.iter().map(|e| (-(e - e_min) / t).exp()).collect();
    let z: f64 = boltz
        .iter()
        .zip(&degeneracies)
        .map(|(b, g)| *g as f64 * b)
        .sum();
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::DegenerateTemperature(t));
    }
    let mut w: Vec<f64> = boltz.iter().map(|b| b / z).collect();
    renormalize(&degeneracies, &mut w);
    ProbabilityState::new(ids, degeneracies, w)
}

/// Removes rounding drift from Σ g w by rescaling.
fn renormalize(g: &[u64], w: &mut [f64]) {
    let total: f64 = g.iter().zip(w.iter()).map(|(g, w)| *g as f64 * w).sum();
    if total > 0.0 && total != 1.0 {
        for x in w.iter_mut() {
            *x /= total;
        }
    }
}

/// `x ln(x) − x + 1` style kernel: `(1+r)·ln(1+r) − r`, accurate for small `r`.
fn pooled_excess(r: f64) -> f64 {
    if r.abs() < 1e-3 {
        let r2 = r * r;
        r2 / 2.0 - r2 * r / 6.0 + r2 * r2 / 12.0 - r2 * r2 * r / 20.0
    } else if r <= -1.0 {
        1.0
    } else {
        (1.0 + r) * (1.0 + r).ln() - r
    }
}

/// Entropy gained when the listed levels pool to `p`. Each term is
/// nonnegative, so the result never falls below zero through cancellation.
fn pooling_entropy(g: &[u64], w: &[f64], idx: &[usize], p: f64) -> f64 {
    if p == 0.0 {
        return 0.0;
    }
    idx.iter()
        .map(|&i| g[i] as f64 * p * pooled_excess(w[i] / p - 1.0))
        .sum()
}

fn pooled_value(g: &[u64], w: &[f64], idx: &[usize]) -> f64 {
    // Already-equal levels are a fixed point; the weighted mean could move them by an ulp.
    let first = w[idx[0]];
    if idx.iter().all(|&i| w[i] == first) {
        return first;
    }
    let num: f64 = idx.iter().map(|&i| g[i] as f64 * w[i]).sum();
    let den: f64 = idx.iter().map(|&i| g[i] as f64).sum();
    num / den
}

impl ProbabilityState {
    /// Equalizes the levels at positions `idx` in place and returns the event.
    pub(crate) fn equalize_indices(&mut self, idx: &[usize], a_star: f64) -> EqualizationEvent {
        let p = pooled_value(&self.g, &self.w, idx);
        let delta_s = pooling_entropy(&self.g, &self.w, idx, p);
        let w_before: Vec<f64> = idx.iter().map(|&i| self.w[i]).collect();
        for &i in idx {
            self.w[i] = p;
        }
        EqualizationEvent {
            a_star,
            level_ids: idx.iter().map(|&i| self.ids[i]).collect(),
            w_before,
            w_after: p,
            delta_s,
            grouped: false,
        }
    }
}

/// Replaces the probabilities of `level_ids` by their degeneracy-weighted mean.
pub fn equalize(
    state: &ProbabilityState,
    level_ids: &[TrackId],
    a_star: f64,
) -> Result<(ProbabilityState, EqualizationEvent)> {
    if level_ids.len() < 2 {
        return Err(Error::domain("equalization needs at least two levels"));
    }
    let mut idx = Vec::with_capacity(level_ids.len());
    for id in level_ids {
        let i = state
            .index_of(*id)
            .ok_or_else(|| Error::domain(format!("unknown level id {id}")))?;
        if idx.contains(&i) {
            return Err(Error::domain(format!("level id {id} listed twice")));
        }
        idx.push(i);
    }
    let mut next = state.clone();
    let event = next.equalize_indices(&idx, a_star);
    Ok((next, event))
}

/// Gibbs entropy `−Σ g_j w_j ln w_j` with `0·ln 0 = 0`.
pub fn entropy(state: &ProbabilityState) -> f64 {
    let s: f64 = state
        .g
        .iter()
        .zip(&state.w)
        .filter(|(_, w)| **w > 0.0)
        .map(|(g, w)| -(*g as f64) * w * w.ln())
        .sum();
    s.max(0.0)
}

/// Mean energy and variance of the state at parameter `a`.
pub fn moments(state: &ProbabilityState, spectrum: &DiscreteSpectrum, a: f64) -> Result<(f64, f64)> {
    if state.len() != spectrum.len() {
        return Err(Error::domain(format!(
            "state has {} levels but the spectrum has {}",
            state.len(),
            spectrum.len()
        )));
    }
    let energies = spectrum.energies(a)?;
    Ok(moments_of(state, &energies))
}

pub(crate) fn moments_of(state: &ProbabilityState, energies: &[f64]) -> (f64, f64) {
    let mean: f64 = state
        .g
        .iter()
        .zip(&state.w)
        .zip(energies)
        .map(|((g, w), e)| *g as f64 * w * e)
        .sum();
    let var: f64 = state
        .g
        .iter()
        .zip(&state.w)
        .zip(energies)
        .map(|((g, w), e)| *g as f64 * w * (e - mean) * (e - mean))
        .sum();
    (mean, var.max(0.0))
}
