use std::hint::black_box;

use adiabat_core::continuum::{advect_with, AdvectOptions, ContinuumDistribution, GridOptions};
use adiabat_core::crossing::{find_crossings_with, refine_study, LadderRefinement, RefineOptions, ScanOptions};
use adiabat_core::spectra::{analytic_dos, SpectrumFamily, SweepRange};
use adiabat_core::thermo::{size_scaling_study, CompareOptions};
use adiabat_core::Exec;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn two_term(size: Option<u32>) -> SpectrumFamily {
    SpectrumFamily::TwoTerm {
        c1: 1.0,
        kappa1: 0.0,
        eta1: 1.0,
        c2: 1e-3,
        kappa2: 3.0,
        eta2: 1.5,
        size,
    }
}

fn advect(c: &mut Criterion) {
    let dos = analytic_dos(&two_term(Some(16))).unwrap();
    let start = ContinuumDistribution::canonical(dos, 1.0, 1.0, &GridOptions::default()).unwrap();
    let mut g = c.benchmark_group("advect_2048");
    for (name, exec) in POLICIES {
        let opts = AdvectOptions {
            exec,
            ..AdvectOptions::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| advect_with(black_box(&start), 0.5, &opts).unwrap())
        });
    }
    g.finish();
}

fn crossings(c: &mut Criterion) {
    let fam = SpectrumFamily::TwoLadder {
        delta_a: 0.1,
        delta_b: 0.1 * std::f64::consts::SQRT_2,
        m_a: 400,
        m_b: 400,
    };
    let disc = fam.discrete(SweepRange::new(1.0, 2.0).unwrap()).unwrap();
    let mut g = c.benchmark_group("find_crossings_800_levels");
    for (name, exec) in POLICIES {
        let opts = ScanOptions {
            exec,
            ..ScanOptions::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| find_crossings_with(black_box(&disc), 1e-9, &opts).unwrap())
        });
    }
    g.finish();
}

fn studies(c: &mut Criterion) {
    let mut g = c.benchmark_group("studies");
    g.sample_size(10);
    let fam = two_term(None);
    let ladder = LadderRefinement {
        span: 40.0,
        ratio: std::f64::consts::SQRT_2,
    };
    let sweep = SweepRange::new(1.0, 2.0).unwrap();
    for (name, exec) in POLICIES {
        let opts = CompareOptions {
            exec,
            ..CompareOptions::default()
        };
        g.bench_function(BenchmarkId::new("size_scaling", name), |b| {
            b.iter(|| size_scaling_study(&fam, &[4, 8, 16, 32, 64, 128], 1.0, 1.0, 0.5, &opts).unwrap())
        });
        let ropts = RefineOptions {
            exec,
            ..RefineOptions::default()
        };
        g.bench_function(BenchmarkId::new("refine", name), |b| {
            b.iter(|| refine_study(&ladder, &[50, 100, 200, 400], sweep, 1.0, &ropts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, advect, crossings, studies);
criterion_main!(benches);
