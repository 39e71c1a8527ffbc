use adiabat_core::crossing::{find_crossings, sweep_adiabatic};
use adiabat_core::microstate::{canonical_init, entropy, equalize, ProbabilityState};
use adiabat_core::spectra::{dos_of_discrete, ContinuumDos, PowerTerm, SpectrumFamily, SweepRange, TrackId};
use proptest::prelude::*;

/// Normalized state with `n` levels and small integer degeneracies.
fn state_strategy(max_levels: usize) -> impl Strategy<Value = ProbabilityState> {
    (2..=max_levels)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(1u64..5, n),
                prop::collection::vec(1e-6f64..1.0, n),
            )
        })
        .prop_map(|(g, raw)| {
            let total: f64 = g.iter().zip(&raw).map(|(g, w)| *g as f64 * w).sum();
            let w = raw.iter().map(|w| w / total).collect();
            let ids = (0..g.len() as u32).map(TrackId).collect();
            ProbabilityState::new(ids, g, w).unwrap()
        })
}

fn subset(state: &ProbabilityState, mask: u32) -> Vec<TrackId> {
    let ids: Vec<TrackId> = state
        .ids()
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, id)| *id)
        .collect();
    if ids.len() >= 2 {
        ids
    } else {
        state.ids()[..2].to_vec()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn equalization_never_lowers_entropy(state in state_strategy(8), mask in any::<u32>()) {
        let ids = subset(&state, mask);
        let (next, ev) = equalize(&state, &ids, 0.0).unwrap();
        prop_assert!(ev.delta_s >= 0.0, "delta_s = {}", ev.delta_s);
        let direct = entropy(&next) - entropy(&state);
        prop_assert!((ev.delta_s - direct).abs() <= 1e-12, "{} vs {}", ev.delta_s, direct);
        prop_assert!((next.total() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn equalization_is_idempotent(state in state_strategy(8), mask in any::<u32>()) {
        let ids = subset(&state, mask);
        let (once, _) = equalize(&state, &ids, 0.0).unwrap();
        let (twice, ev) = equalize(&once, &ids, 0.0).unwrap();
        prop_assert_eq!(ev.delta_s, 0.0);
        prop_assert_eq!(once.w(), twice.w());
    }

    #[test]
    fn disjoint_equalizations_commute(state in state_strategy(8).prop_filter("four levels", |s| s.len() >= 4)) {
        let ids = state.ids().to_vec();
        let (p, q) = (&ids[0..2], &ids[2..4]);
        let (x, ex1) = equalize(&state, p, 0.0).unwrap();
        let (x, ex2) = equalize(&x, q, 0.0).unwrap();
        let (y, ey1) = equalize(&state, q, 0.0).unwrap();
        let (y, ey2) = equalize(&y, p, 0.0).unwrap();
        prop_assert_eq!(x.w(), y.w());
        prop_assert!((ex1.delta_s + ex2.delta_s - ey1.delta_s - ey2.delta_s).abs() < 1e-15);
    }

    /// Straight tracks cross once per pair whose order is swapped between
    /// the ends of the sweep.
    #[test]
    fn crossings_count_inversions(
        lines in prop::collection::vec((3.0f64..13.0, -3.0f64..3.0), 2..12),
    ) {
        let (intercepts, slopes): (Vec<f64>, Vec<f64>) = lines.into_iter().unzip();
        let fam = SpectrumFamily::LinearEnsemble { intercepts, slopes, degeneracies: vec![] };
        let sweep = SweepRange::new(0.0, 1.0).unwrap();
        let disc = fam.discrete(sweep).unwrap();
        let (e0, e1) = (disc.energies(0.0).unwrap(), disc.energies(1.0).unwrap());
        // Skip near-ties at the ends, where counting is ambiguous.
        let n = e0.len();
        let mut inversions = 0;
        for i in 0..n {
            for j in i + 1..n {
                let (d0, d1) = (e0[j] - e0[i], e1[j] - e1[i]);
                prop_assume!(d0.abs() > 1e-6 && d1.abs() > 1e-6);
                if d0 * d1 < 0.0 {
                    inversions += 1;
                }
            }
        }
        let schedule = find_crossings(&disc, 1e-9).unwrap();
        let pairs: usize = schedule.events.iter().map(|e| e.level_ids.len() * (e.level_ids.len() - 1) / 2).sum();
        prop_assume!(schedule.grouped_count() == 0);
        prop_assert_eq!(pairs, inversions);

        let init = canonical_init(&disc, 0.0, 1.0).unwrap();
        let out = sweep_adiabatic(&disc, &init, &schedule, &[]).unwrap();
        prop_assert!(out.total_delta_s >= 0.0);
        prop_assert!((out.final_state.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cumulative_count_differentiates_to_density(
        ln_c in -3.0f64..3.0, kappa in -2.0f64..2.0, eta in -0.5f64..4.0,
        ln_c2 in -6.0f64..0.0, eta2 in 0.0f64..3.0,
        e in 0.05f64..20.0, a in 0.3f64..3.0,
    ) {
        let dos = ContinuumDos::power_sum(vec![
            PowerTerm::from_ln(ln_c, kappa, eta).unwrap(),
            PowerTerm::from_ln(ln_c2, -kappa, eta2).unwrap(),
        ]).unwrap();
        let h = 1e-5 * e;
        let d = (dos.phi(e + h, a) - dos.phi(e - h, a)) / (2.0 * h);
        let g = dos.g(e, a);
        prop_assert!((d - g).abs() <= 1e-6 * g, "{d} vs {g}");
    }

    /// The smoothed density keeps every state: Φ above the top level equals
    /// the total state count.
    #[test]
    fn kernel_density_conserves_states(
        lines in prop::collection::vec((0.5f64..10.0, -0.3f64..0.3, 1u64..4), 3..15),
        a in 0.0f64..1.0,
        bw in 0.05f64..2.0,
    ) {
        let intercepts = lines.iter().map(|l| l.0).collect();
        let slopes = lines.iter().map(|l| l.1).collect();
        let degeneracies: Vec<u64> = lines.iter().map(|l| l.2).collect();
        let total: u64 = degeneracies.iter().sum();
        let fam = SpectrumFamily::LinearEnsemble { intercepts, slopes, degeneracies };
        let disc = fam.discrete(SweepRange::new(0.0, 1.0).unwrap()).unwrap();
        let dos = dos_of_discrete(&disc, a, bw).unwrap();
        let top = disc.energies(a).unwrap().into_iter().fold(0.0, f64::max) + 2.0 * bw;
        let mass = dos.phi(top, a);
        prop_assert!((mass - total as f64).abs() < 1e-9 * total as f64, "{mass} vs {total}");
    }
}
