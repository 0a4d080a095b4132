use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lowdose_core::diag_model::{exact_mode_ratio, optimal_resolution, Estimator};
use lowdose_core::experiments::{CtSetup, ExperimentConfig};
use lowdose_core::solvers::{reference_tau, solve, SolveConfig, SolverSettings};
use lowdose_core::tomo::{fbp, shepp_logan, Projector, ScanGeometry};
use lowdose_core::{ObjectiveSpec, SeriesTolerance};

fn projector(c: &mut Criterion) {
    let geom = ScanGeometry::new(64, 60).unwrap();
    c.bench_function("joseph build 64x60", |b| b.iter(|| Projector::joseph(black_box(&geom))));
    let op = Projector::joseph(&geom);
    let x = shepp_logan(64).into_pixels();
    let y = op.forward(&x);
    c.bench_function("forward 64x60", |b| b.iter(|| op.forward(black_box(&x))));
    c.bench_function("adjoint 64x60", |b| b.iter(|| op.adjoint(black_box(&y))));
}

fn series(c: &mut Criterion) {
    let tol = SeriesTolerance::default();
    c.bench_function("exact ratio poisson-map mu=1", |b| {
        b.iter(|| exact_mode_ratio(Estimator::PoissonMap { tau: 1.0 }, 1.0, 1.0, black_box(1.0), tol))
    });
    c.bench_function("exact ratio hg mu=1e3", |b| {
        b.iter(|| exact_mode_ratio(Estimator::HeteroscedasticHg { epsilon: 0.5 }, 1.0, 1.0, black_box(1e3), tol))
    });
    c.bench_function("optimal resolution m=2048 s=1e4", |b| {
        b.iter(|| optimal_resolution(Estimator::PoissonMle, 1.0, 1.0, 2048, black_box(1e4), tol))
    });
}

fn solvers(c: &mut Criterion) {
    let cfg = ExperimentConfig {
        n_side: 32,
        num_angles: 30,
        ..ExperimentConfig::default()
    };
    let setup = CtSetup::from_config(&cfg).unwrap();
    let inst = setup.instance(10.0, 0, 0).unwrap();
    let settings = SolverSettings {
        em: SolveConfig { max_iters: 200, ..SolveConfig::em() },
        gradient: SolveConfig { max_iters: 200, ..SolveConfig::gradient() },
    };
    let mut group = c.benchmark_group("solve 32x30 c=10");
    group.sample_size(10);
    for name in ["poisson-map", "hg", "pwls-plugin", "homoscedastic"] {
        let obj = ObjectiveSpec::from_name(name, 0.5).unwrap();
        let tau = reference_tau(&obj, &inst).unwrap();
        group.bench_function(name, |b| b.iter(|| solve(&obj, black_box(&inst), tau, &settings).unwrap()));
    }
    group.finish();
    let counts = lowdose_core::Sinogram::new(
        setup.geometry.num_angles,
        setup.geometry.num_bins,
        inst.counts.clone(),
        lowdose_core::SinogramKind::Counts,
    )
    .unwrap();
    c.bench_function("fbp 32x30", |b| b.iter(|| fbp(&setup.geometry, black_box(&counts), inst.s)));
}

criterion_group!(benches, projector, series, solvers);
criterion_main!(benches);
